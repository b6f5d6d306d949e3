//! Subcommand implementations. Each returns `Err(CliError)` carrying the exit
//! code the binary should use.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use coopfuse::channel::{write_trace_jsonl, TraceEvent};
use coopfuse::metrics::{compare_levels_traced, noise_sweep, EvalReport, EvalRow, LevelChoice};
use coopfuse::scenario::{generate_scene, Scene};
use coopfuse::wire::{
    accounted_payload_bytes, bandwidth_kbps_exact, decode, encode, CoopMessage, FusionLevel, Payload, ShapeConfig,
};
use serde::Serialize;
use thiserror::Error;

use crate::config::{parse_levels, ConfigError, RunConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn report_csv(report: &EvalReport) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EvalRow::CSV_COLUMNS)?;
    for row in &report.rows {
        w.write_record(row.csv_record())?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("csv flush: {e}"))
}

pub fn report_json(report: &EvalReport) -> anyhow::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(report)?;
    out.push(b'\n');
    Ok(out)
}

/// Overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub levels: Option<Vec<String>>,
    pub seed: Option<u64>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(levels) = &overrides.levels {
        parse_levels(levels)?;
        cfg.levels = levels.clone();
    }
    if let Some(out) = &overrides.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn scenes(cfg: &RunConfig) -> Result<Vec<Scene>, CliError> {
    (0..cfg.scenes)
        .map(|i| generate_scene(cfg.scene_seed(i), &cfg.scene).map_err(runtime))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub report: EvalReport,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub trace_path: PathBuf,
}

/// Evaluates the configured levels and writes `report.csv`, `report.json` and
/// `trace.jsonl` into the output directory.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateOutput, CliError> {
    let choices = cfg.level_choices()?;
    let batch = scenes(cfg)?;
    let eval = cfg.eval_config();
    let mut trace: Vec<TraceEvent> = Vec::new();
    let report = compare_levels_traced(&batch, &eval, &choices, Some(&mut trace)).map_err(runtime)?;

    let dir = &cfg.output.dir;
    let csv_path = dir.join("report.csv");
    let json_path = dir.join("report.json");
    let trace_path = dir.join("trace.jsonl");
    write_atomic(&csv_path, &report_csv(&report).map_err(runtime)?).map_err(runtime)?;
    write_atomic(&json_path, &report_json(&report).map_err(runtime)?).map_err(runtime)?;
    let mut jsonl = Vec::new();
    write_trace_jsonl(&trace, &mut jsonl).map_err(runtime)?;
    write_atomic(&trace_path, &jsonl).map_err(runtime)?;
    log::info!("wrote {} rows to {}", report.rows.len(), dir.display());
    Ok(SimulateOutput {
        report,
        csv_path,
        json_path,
        trace_path,
    })
}

/// Runs the four-row noise sweep and writes `noise_sweep.csv` and
/// `noise_sweep.json`.
pub fn noise_sweep_cmd(cfg: &RunConfig, level: Option<FusionLevel>) -> Result<EvalReport, CliError> {
    let batch = scenes(cfg)?;
    let eval = cfg.eval_config();
    let level = level.unwrap_or(cfg.sweep.level);
    let report = noise_sweep(&batch, &eval, &cfg.noise_config(), LevelChoice::Fixed(level)).map_err(runtime)?;
    let dir = &cfg.output.dir;
    write_atomic(&dir.join("noise_sweep.csv"), &report_csv(&report).map_err(runtime)?).map_err(runtime)?;
    write_atomic(&dir.join("noise_sweep.json"), &report_json(&report).map_err(runtime)?).map_err(runtime)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthRow {
    pub level: FusionLevel,
    pub kbps: f64,
    pub log2_kbps: f64,
}

pub fn bandwidth_table(shape: &ShapeConfig) -> Result<Vec<BandwidthRow>, CliError> {
    shape.validate().map_err(ConfigError::Invalid)?;
    Ok(FusionLevel::ALL
        .iter()
        .map(|&level| {
            let kbps = bandwidth_kbps_exact(level, shape);
            BandwidthRow {
                level,
                kbps,
                log2_kbps: kbps.log2(),
            }
        })
        .collect())
}

/// Plain-text table: level, KB/s rounded, exact KB/s, log2.
pub fn format_bandwidth(rows: &[BandwidthRow]) -> String {
    let mut out = String::from("level  kbps     kbps_exact    log2_kbps\n");
    for r in rows {
        out.push_str(&format!(
            "{:<6} {:<8} {:<13.3} {:.4}\n",
            r.level.to_string(),
            r.kbps.round() as u64,
            r.kbps,
            r.log2_kbps
        ));
    }
    out
}

/// Reads a JSON message and writes its binary encoding.
pub fn wire_encode(input: &Path, output: &Path) -> Result<usize, CliError> {
    let text = fs::read_to_string(input).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", input.display())))?;
    let msg: CoopMessage = serde_json::from_str(&text)
        .map_err(|e| ConfigError::Parse {
            path: input.to_path_buf(),
            message: e.to_string(),
        })?;
    msg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let bytes = encode(&msg);
    write_atomic(output, &bytes).map_err(runtime)?;
    Ok(bytes.len())
}

/// Decodes a binary message; optionally writes it back out as JSON.
pub fn wire_decode(input: &Path, json_out: Option<&Path>) -> Result<(CoopMessage, String), CliError> {
    let bytes = fs::read(input).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", input.display())))?;
    let msg = decode(&bytes).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", input.display())))?;
    if let Some(path) = json_out {
        let mut json = serde_json::to_vec_pretty(&msg).map_err(runtime)?;
        json.push(b'\n');
        write_atomic(path, &json).map_err(runtime)?;
    }
    let summary = summarize(&msg, bytes.len());
    Ok((msg, summary))
}

/// Stable one-field-per-line description of a message.
pub fn summarize(msg: &CoopMessage, wire_len: usize) -> String {
    let p = &msg.sender_pose;
    let q = &p.rotation;
    let mut s = format!(
        "level: {}\nsender_id: {}\nframe_timestamp_ns: {}\npose_translation: [{}, {}, {}]\npose_quaternion_wxyz: [{}, {}, {}, {}]\n",
        msg.level(),
        msg.sender_id,
        msg.frame_timestamp,
        p.translation.x,
        p.translation.y,
        p.translation.z,
        q.w,
        q.i,
        q.j,
        q.k
    );
    match &msg.payload {
        Payload::RefPoints { points, slots } => {
            s.push_str(&format!("points: {}\nslots: {}\n", points.len(), slots));
        }
        Payload::Queries { dim, queries, slots } => {
            s.push_str(&format!("queries: {}\nembed_dim: {}\nslots: {}\n", queries.len(), dim, slots));
        }
        Payload::Bev(grid) => {
            let spec = grid.spec();
            let valid = grid.validity().iter().filter(|v| **v).count();
            s.push_str(&format!(
                "grid: {}x{}x{}\nextent_m: {}\nvalid_cells: {}\n",
                spec.height, spec.width, spec.channels, spec.extent_m, valid
            ));
        }
    }
    s.push_str(&format!(
        "wire_bytes: {}\npayload_bytes: {}\n",
        wire_len,
        accounted_payload_bytes(msg)
    ));
    s
}
