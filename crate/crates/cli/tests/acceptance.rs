//! Acceptance gate: one PASS/FAIL line per criterion, each with its time budget.
//!
//! Run with `cargo test -p coopfuse-cli --test acceptance -- --nocapture` to
//! see the lines on success.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use coopfuse::bev_fusion::{BevGrid, GridSpec, DEFAULT_BEV_EXTENT_M};
use coopfuse::channel::{Admission, ChannelConfig, ChannelState, DropReason};
use coopfuse::geometry::{
    apply_point, compose, invert, pose_to_transform, sample_calibration_noise, sample_localization_noise, NoiseConfig,
    Pose,
};
use coopfuse::metrics::{compare_levels, noise_sweep, sender_only_objects, EvalConfig, LevelChoice};
use coopfuse::query_fusion::{fuse_queries, match_queries, BoxParams, MlpWeights, TrackQuery};
use coopfuse::refpoint_fusion::{dedup, fuse_refpoints, RefPointSet, DEFAULT_DEDUP_EPS_M};
use coopfuse::scenario::{generate_scene, SceneConfig};
use coopfuse::selector::{select_level, SelectorConfig};
use coopfuse::wire::{decode, encode, example_message, CoopMessage, FusionLevel, Payload, ShapeConfig};
use coopfuse::{derive_seed, fuse, FusionOperator};
use coopfuse_cli::commands::{bandwidth_table, wire_decode, wire_encode};
use nalgebra::{Matrix4, Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

struct Outcome {
    pass: bool,
    line: String,
}

fn run(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let (pass, detail) = match result {
        Ok(d) if in_time => (true, d),
        Ok(d) => (false, format!("{d}; over time budget")),
        Err(e) => (false, e),
    };
    let line = format!(
        "{} {id} {name} ({:.2} s of {} s): {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    println!("{line}");
    Outcome { pass, line }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_coopfuse")
}

// 1

fn bandwidth_reproduction() -> Check {
    let rows = bandwidth_table(&ShapeConfig::default()).map_err(|e| e.to_string())?;
    let get = |l: FusionLevel| rows.iter().find(|r| r.level == l).unwrap().kbps;
    let (rpf, qff, bff) = (get(FusionLevel::Rpf), get(FusionLevel::Qff), get(FusionLevel::Bff));
    ensure(bff == 200_000.0, || format!("BFF {bff} != 200000"))?;
    ensure(rpf.round() == 53.0, || format!("RPF {rpf} does not round to 53"))?;
    let rel = (qff - 9063.0).abs() / 9063.0;
    ensure(rel <= 0.005, || format!("QFF {qff} is {:.3}% from 9063", rel * 100.0))?;

    let out = Command::new(bin()).args(["bandwidth", "--json"]).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || "bandwidth command failed".into())?;
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let cli_bff = json[2]["kbps"].as_f64().unwrap_or_default();
    ensure(cli_bff == 200_000.0, || format!("CLI BFF {cli_bff}"))?;
    Ok(format!("RPF {rpf:.3} -> 53, QFF {qff:.1} ({:.2}% off 9063), BFF {bff}", rel * 100.0))
}

// 2

fn f32v(rng: &mut ChaCha8Rng, span: f32) -> f64 {
    f64::from(rng.random_range(-span..span))
}

fn v3(rng: &mut ChaCha8Rng, span: f32) -> Vector3<f64> {
    Vector3::new(f32v(rng, span), f32v(rng, span), f32v(rng, span))
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    loop {
        let q = Quaternion::new(f32v(rng, 1.0), f32v(rng, 1.0), f32v(rng, 1.0), f32v(rng, 1.0));
        if q.norm() < 1e-2 {
            continue;
        }
        let q = q / q.norm();
        let q = Quaternion::new(
            f64::from(q.w as f32),
            f64::from(q.i as f32),
            f64::from(q.j as f32),
            f64::from(q.k as f32),
        );
        if let Ok(p) = Pose::new(v3(rng, 1000.0), q) {
            return p;
        }
    }
}

fn random_message(rng: &mut ChaCha8Rng, level: FusionLevel) -> CoopMessage {
    let payload = match level {
        FusionLevel::Rpf => {
            let n = rng.random_range(0..60);
            Payload::RefPoints {
                points: RefPointSet::from_points_unchecked((0..n).map(|_| v3(rng, 150.0)).collect(), DEFAULT_DEDUP_EPS_M),
                slots: n as u32 + rng.random_range(0..8),
            }
        }
        FusionLevel::Qff => {
            let dim = rng.random_range(1..32);
            let n = rng.random_range(0..16);
            let queries = (0..n)
                .map(|_| TrackQuery {
                    embedding: (0..dim).map(|_| rng.random_range(-10.0f32..10.0)).collect(),
                    ref_point: v3(rng, 150.0),
                    score: rng.random_range(0.0f32..1.0),
                    bbox: BoxParams {
                        center: v3(rng, 150.0),
                        extent: v3(rng, 6.0).abs(),
                        yaw: f32v(rng, std::f32::consts::PI),
                    },
                    track_id: rng.random(),
                })
                .collect();
            Payload::Queries {
                dim,
                queries,
                slots: n as u32 + rng.random_range(0..4),
            }
        }
        FusionLevel::Bff => {
            let side = rng.random_range(1..32);
            let spec = GridSpec::new(side, side, rng.random_range(1..8), DEFAULT_BEV_EXTENT_M).unwrap();
            let data = (0..spec.len()).map(|_| rng.random_range(-50.0f32..50.0)).collect();
            let validity = (0..spec.cells()).map(|_| rng.random_bool(0.6)).collect();
            Payload::Bev(BevGrid::new(spec, data, validity).unwrap())
        }
    };
    CoopMessage::new(rng.random(), rng.random(), random_pose(rng), payload).unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

fn wire_round_trip() -> Check {
    for level in FusionLevel::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(2, u64::from(level.code())));
        for i in 0..1000 {
            let m = random_message(&mut rng, level);
            let bytes = encode(&m);
            let back = decode(&bytes).map_err(|e| format!("{level} #{i}: {e}"))?;
            ensure(back == m, || format!("{level} #{i} decoded differently"))?;
            ensure(encode(&back) == bytes, || format!("{level} #{i} re-encoded differently"))?;
        }
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for level in FusionLevel::ALL {
        let path = golden_dir().join(format!("example_{}.cfcm", level.name()));
        let golden = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(encode(&example_message(level)) == golden, || format!("{level} golden drifted"))?;
        let json = tmp.path().join("m.json");
        let again = tmp.path().join("m.cfcm");
        wire_decode(&path, Some(&json)).map_err(|e| e.to_string())?;
        wire_encode(&json, &again).map_err(|e| e.to_string())?;
        let rebuilt = std::fs::read(&again).map_err(|e| e.to_string())?;
        ensure(rebuilt == golden, || format!("{level} golden changed through JSON"))?;
    }
    Ok("3000 random messages bit-identical; 3 golden files stable through binary and JSON".into())
}

// 3

fn geometry_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let (ta, tb) = (pose_to_transform(&a).unwrap(), pose_to_transform(&b).unwrap());
        let x = v3(&mut rng, 200.0);
        worst = worst.max((apply_point(&invert(&ta), &apply_point(&ta, &x)) - x).amax());
        worst = worst.max((compose(&ta, &invert(&ta)).matrix() - Matrix4::identity()).amax());
        let hom = pose_to_transform(&a.compose(&b)).unwrap();
        worst = worst.max((hom.matrix() - compose(&ta, &tb).matrix()).amax());
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:e}"))?;

    let cfg = NoiseConfig::default();
    let n = 100_000;
    let mut loc_rng = ChaCha8Rng::seed_from_u64(31);
    let mut cal_rng = ChaCha8Rng::seed_from_u64(32);
    let loc: Vec<_> = (0..n).map(|_| sample_localization_noise(&cfg, &mut loc_rng)).collect();
    let cal: Vec<_> = (0..n).map(|_| sample_calibration_noise(&cfg, &mut cal_rng)).collect();
    let sd = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let checks = [
        ("loc x", sd(loc.iter().map(|d| d.translation.x).collect()), 0.1),
        ("loc y", sd(loc.iter().map(|d| d.translation.y).collect()), 0.08),
        ("loc z", sd(loc.iter().map(|d| d.translation.z).collect()), 0.02),
        ("loc roll", sd(loc.iter().map(|d| d.roll.to_degrees()).collect()), 0.2),
        ("loc yaw", sd(loc.iter().map(|d| d.yaw.to_degrees()).collect()), 1.0),
        ("loc pitch", sd(loc.iter().map(|d| d.pitch.to_degrees()).collect()), 0.2),
        ("cal roll", sd(cal.iter().map(|d| d.extrinsic.roll.to_degrees()).collect()), 0.1),
        ("cal pitch", sd(cal.iter().map(|d| d.extrinsic.pitch.to_degrees()).collect()), 0.1),
        ("cal yaw", sd(cal.iter().map(|d| d.extrinsic.yaw.to_degrees()).collect()), 0.2),
        ("cal x", sd(cal.iter().map(|d| d.extrinsic.translation.x).collect()), 0.01),
        ("cal y", sd(cal.iter().map(|d| d.extrinsic.translation.y).collect()), 0.01),
        ("cal z", sd(cal.iter().map(|d| d.extrinsic.translation.z).collect()), 0.02),
    ];
    let mut max_rel: f64 = 0.0;
    for (name, got, want) in checks {
        let rel = (got - want).abs() / want;
        ensure(rel <= 0.03, || format!("{name}: sigma {got:.5} vs {want} ({:.2}%)", rel * 100.0))?;
        max_rel = max_rel.max(rel);
    }
    Ok(format!(
        "max transform deviation {worst:.1e}; 12 sigmas within {:.2}% at N = 1e5",
        max_rel * 100.0
    ))
}

// 4

fn random_grid(rng: &mut ChaCha8Rng, spec: GridSpec) -> BevGrid {
    let data = (0..spec.len()).map(|_| rng.random_range(-3.0f32..3.0)).collect();
    let validity = (0..spec.cells()).map(|_| rng.random_bool(0.6)).collect();
    BevGrid::new(spec, data, validity).unwrap()
}

fn query_at(p: Vector3<f64>, id: u64, embedding: Vec<f32>) -> TrackQuery {
    TrackQuery {
        embedding,
        ref_point: p,
        score: 0.8,
        bbox: BoxParams {
            center: p,
            extent: Vector3::new(4.0, 2.0, 1.5),
            yaw: 0.0,
        },
        track_id: id,
    }
}

fn brute_force(ego: &[Vector3<f64>], sender: &[Vector3<f64>], r: f64) -> (usize, f64) {
    fn rec(i: usize, e: &[Vector3<f64>], s: &[Vector3<f64>], used: &mut [bool], r: f64, acc: (usize, f64), best: &mut (usize, f64)) {
        if i == e.len() {
            if acc.0 > best.0 || (acc.0 == best.0 && acc.1 < best.1) {
                *best = acc;
            }
            return;
        }
        rec(i + 1, e, s, used, r, acc, best);
        for j in 0..s.len() {
            let d = (e[i] - s[j]).norm();
            if !used[j] && d <= r {
                used[j] = true;
                rec(i + 1, e, s, used, r, (acc.0 + 1, acc.1 + d), best);
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    rec(0, ego, sender, &mut vec![false; sender.len()], r, (0, 0.0), &mut best);
    best
}

fn fusion_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = GridSpec::new(16, 16, 4, 16.0).unwrap();
    for _ in 0..200 {
        let (e, w) = (random_grid(&mut rng, spec), random_grid(&mut rng, spec));
        let out = fuse(&e, &w, &FusionOperator::ElementwiseMax).map_err(|x| x.to_string())?;
        for idx in 0..spec.cells() {
            ensure(out.validity()[idx] == (e.validity()[idx] || w.validity()[idx]), || "validity is not the union".into())?;
            if !w.validity()[idx] {
                ensure(out.cell(idx) == e.cell(idx), || "invalid sender cell changed the ego".into())?;
            } else if !e.validity()[idx] {
                ensure(out.cell(idx) == w.cell(idx), || "ego-invalid cell did not take the sender".into())?;
            }
        }
        let same = fuse(&e, &e, &FusionOperator::ElementwiseMax).map_err(|x| x.to_string())?;
        ensure(same == e, || "max fusion is not idempotent".into())?;
    }

    let dim = 6;
    let bias: Vec<f32> = (0..dim).map(|i| i as f32 * 0.5 - 1.0).collect();
    let zero = MlpWeights::zeros_with_bias(dim, bias.clone()).map_err(|e| e.to_string())?;
    let mut w1 = vec![0.0f32; 2 * dim * dim];
    let mut w2 = vec![0.0f32; dim * dim];
    for i in 0..dim {
        w1[i * 2 * dim + i] = 1.0;
        w2[i * dim + i] = 1.0;
    }
    let ident = MlpWeights::new(dim, w1, vec![0.0; dim], w2, vec![0.0; dim]).map_err(|e| e.to_string())?;
    let ego = query_at(Vector3::zeros(), 1, vec![0.5, 1.0, 0.0, 2.5, 3.0, 0.25]);
    let sender = query_at(Vector3::zeros(), 2, vec![-1.0, 4.0, 2.0, -3.0, 0.0, 1.0]);
    ensure(fuse_queries(&ego, &sender, &zero).unwrap().embedding == bias, || "zero weights did not give the bias".into())?;
    ensure(
        fuse_queries(&ego, &sender, &ident).unwrap().embedding == ego.embedding,
        || "identity projection did not return the ego embedding".into(),
    )?;

    for _ in 0..1000 {
        let (a, b) = (rng.random_range(0..30), rng.random_range(0..30));
        let mut pts = |n: usize| -> Vec<Vector3<f64>> {
            (0..n).map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0)).collect()
        };
        let ego = dedup(&pts(a), 0.5).unwrap();
        let snd = dedup(&pts(b), 0.5).unwrap();
        let fused = fuse_refpoints(&ego, &snd).unwrap();
        let new = snd.points().iter().filter(|p| !ego.contains(p)).count();
        ensure(fused.len() == ego.len() + new, || "RPF cardinality identity broken".into())?;
    }

    let mut instances = 0;
    for n in 0..=7 {
        for m in 0..=7 {
            for _ in 0..40 {
                let mut pts = |c: usize| -> Vec<Vector3<f64>> {
                    (0..c).map(|_| Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), 0.0)).collect()
                };
                let (e, s) = (pts(n), pts(m));
                let eq: Vec<_> = e.iter().enumerate().map(|(i, p)| query_at(*p, i as u64, vec![0.0])).collect();
                let sq: Vec<_> = s.iter().enumerate().map(|(i, p)| query_at(*p, i as u64, vec![0.0])).collect();
                let got = match_queries(&eq, &sq, 2.0);
                let (count, cost) = brute_force(&e, &s, 2.0);
                ensure(
                    got.pairs.len() == count && (got.total_distance() - cost).abs() < 1e-9,
                    || format!("matching differs from brute force at {n}x{m}"),
                )?;
                instances += 1;
            }
        }
    }
    Ok(format!("masking/idempotence on 200 grid pairs; MLP examples; 1000 RPF pairs; {instances} matching instances"))
}

// 5

fn cooperation_benefit() -> Check {
    let cfg = EvalConfig::default();
    let scene_cfg = SceneConfig {
        num_vehicles: 4,
        ..Default::default()
    };
    let mut scenes = Vec::new();
    let mut seed = 0;
    while scenes.len() < 100 {
        let scene = generate_scene(derive_seed(5, seed), &scene_cfg).map_err(|e| e.to_string())?;
        seed += 1;
        if !sender_only_objects(&scene, &cfg).map_err(|e| e.to_string())?.is_empty() {
            scenes.push(scene);
        }
    }
    let report = compare_levels(&scenes, &cfg, &LevelChoice::all_fixed()).map_err(|e| e.to_string())?;
    let none = report.row("none").unwrap();
    let mut summary = vec![format!("none {:.3}", none.recall)];
    for row in &report.rows[1..] {
        let better = row
            .per_scene_recall
            .iter()
            .zip(&none.per_scene_recall)
            .filter(|(f, n)| f > n)
            .count();
        ensure(better >= 95, || format!("{}: better in only {better}/100 scenes", row.label))?;
        ensure(row.recall > none.recall, || format!("{} mean recall {} <= none {}", row.label, row.recall, none.recall))?;
        summary.push(format!("{} {:.3} ({better}/100 better)", row.label, row.recall));
    }
    Ok(format!("recall {}", summary.join(", ")))
}

// 6

fn noise_trend() -> Check {
    let cfg = EvalConfig::default();
    let scenes: Vec<_> = (0..50)
        .map(|i| generate_scene(derive_seed(6, i), &SceneConfig::default()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let noise = NoiseConfig {
        seed: 606,
        ..Default::default()
    };
    let report = noise_sweep(&scenes, &cfg, &noise, LevelChoice::Fixed(FusionLevel::Qff)).map_err(|e| e.to_string())?;
    let rmse = |label: &str| report.row(label).unwrap().mean_scene_rmse_m;
    let (base, t1, t2, both) = (rmse("baseline"), rmse("type1"), rmse("type2"), rmse("type1+2"));
    ensure(base <= t1 && base <= t2, || format!("baseline {base} above a noisy row ({t1}, {t2})"))?;
    ensure(both >= t1.max(t2), || format!("type1+2 {both} below max(type1 {t1}, type2 {t2})"))?;
    Ok(format!("mean RMSE m: baseline {base:.4}, type1 {t1:.4}, type2 {t2:.4}, type1+2 {both:.4} over 50 seeds"))
}

// 7

fn rpf_message(sender: u32, slots: u32) -> CoopMessage {
    CoopMessage::new(
        sender,
        0,
        Pose::identity(),
        Payload::RefPoints {
            points: RefPointSet::empty(DEFAULT_DEDUP_EPS_M),
            slots,
        },
    )
    .unwrap()
}

fn channel_run(seed: u64) -> Result<ChannelState, String> {
    let cfg = ChannelConfig {
        capacity_kbps: 250.0,
        latency_ms: 40.0,
        drop_prob: 0.15,
        seed: 77,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut link = ChannelState::new(cfg).map_err(|e| e.to_string())?;
    let mut now = 0u64;
    for _ in 0..10_000 {
        now += rng.random_range(0..50_000_000);
        let msg = rpf_message(rng.random_range(0..16), rng.random_range(0..1500));
        let d: f64 = rng.random_range(0.0..300.0);
        let a = link
            .admit(msg, &Vector3::new(d, 0.0, 0.0), &Vector3::zeros(), now)
            .map_err(|e| e.to_string())?;
        if d > 200.0 && a != Admission::Dropped(DropReason::OutOfRange) {
            return Err(format!("message at {d:.1} m passed the range gate"));
        }
        if rng.random_bool(0.25) {
            link.step(now).map_err(|e| e.to_string())?;
        }
    }
    link.step(now + 1_000_000_000).map_err(|e| e.to_string())?;
    Ok(link)
}

fn channel_contracts() -> Check {
    let link = channel_run(7)?;
    let budget = link.config().frame_budget_bytes();
    let worst = link.window_usage().values().copied().max().unwrap_or(0);
    ensure(worst as f64 <= budget, || format!("window used {worst} of {budget}"))?;
    let c = link.counters();
    ensure(c.over_capacity > 0 && c.out_of_range > 0 && c.random_loss > 0, || "fuzz did not exercise every gate".into())?;
    let again = channel_run(7)?;
    ensure(link.trace() == again.trace(), || "trace differs between identical runs".into())?;
    Ok(format!(
        "peak window {worst} of {budget:.0} bytes; {} out of range, {} over capacity, {} lost; trace identical",
        c.out_of_range, c.over_capacity, c.random_loss
    ))
}

// 8

fn selector_contracts() -> Check {
    let cfg = SelectorConfig::default();
    let mut prev = FusionLevel::Rpf;
    for i in 0..10_000 {
        let available = 300_000.0 * i as f64 / 9_999.0;
        let l = select_level(available, &cfg, None).level;
        ensure(l >= prev, || format!("level fell to {l} at {available} KB/s"))?;
        prev = l;
    }
    let req = coopfuse::wire::bandwidth_kbps_exact(FusionLevel::Qff, &cfg.shape);
    let mut level = FusionLevel::Rpf;
    for i in 0..1000 {
        let available = if i % 2 == 0 { req * 1.02 } else { req * 1.08 };
        let next = select_level(available, &cfg, Some(level)).level;
        ensure(next <= level, || format!("upgraded to {next} at step {i}"))?;
        level = next;
    }
    Ok("monotone over 10000 points; 1000-step oscillation inside the margin never upgrades".into())
}

// 9

fn end_to_end_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "version = 1\nseed = 99\nscenes = 3\nlevels = [\"rpf\", \"qff\", \"bff\", \"adaptive\"]\n\
         [scene]\nnum_vehicles = 4\n[channel]\ncapacity_kbps = 450000.0\ndrop_prob = 0.2\nlatency_ms = 20.0\n[noise]\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = Command::new(bin())
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        let files: Vec<Vec<u8>> = ["report.csv", "report.json", "trace.jsonl"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap_or_default())
            .collect();
        outputs.push(files);
    }
    for (i, name) in ["report.csv", "report.json", "trace.jsonl"].iter().enumerate() {
        ensure(!outputs[0][i].is_empty(), || format!("{name} missing"))?;
        ensure(outputs[0][i] == outputs[1][i], || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "report.csv ({} B), report.json ({} B), trace.jsonl ({} B) byte-identical",
        outputs[0][0].len(),
        outputs[0][1].len(),
        outputs[0][2].len()
    ))
}

#[test]
fn acceptance() {
    let s = Duration::from_secs;
    let outcomes = [
        run(1, "bandwidth reproduction", s(1), bandwidth_reproduction),
        run(2, "wire round-trip", s(10), wire_round_trip),
        run(3, "geometry suite", s(30), geometry_suite),
        run(4, "fusion algebra", s(60), fusion_algebra),
        run(5, "cooperation benefit", s(120), cooperation_benefit),
        run(6, "noise trend", s(180), noise_trend),
        run(7, "channel contracts", s(30), channel_contracts),
        run(8, "selector contracts", s(5), selector_contracts),
        run(9, "end-to-end determinism", s(60), end_to_end_determinism),
    ];
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.line.as_str()).collect();
    println!("{}/{} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
