//! Fusion-level selection from available link bandwidth.

use serde::{Deserialize, Serialize};

use crate::wire::{bandwidth_kbps_exact, FusionLevel, ShapeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    /// Extra headroom, as a fraction of the requirement, needed to upgrade.
    pub hysteresis_fraction: f64,
    pub min_level: FusionLevel,
    pub shape: ShapeConfig,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            hysteresis_fraction: 0.1,
            min_level: FusionLevel::Rpf,
            shape: ShapeConfig::default(),
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.hysteresis_fraction) {
            return Err(format!("hysteresis {} outside [0, 1)", self.hysteresis_fraction));
        }
        self.shape.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub level: FusionLevel,
    /// Set when even the chosen level does not fit the available bandwidth.
    pub best_effort: bool,
}

/// A fusion-level policy. Callers own the previous-level state.
pub trait SelectionPolicy {
    fn select(&self, available_kbps: f64, previous: Option<FusionLevel>) -> Selection;
}

/// Highest level that fits, with an upgrade margin against flapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    pub cfg: SelectorConfig,
}

impl SelectionPolicy for ThresholdPolicy {
    fn select(&self, available_kbps: f64, previous: Option<FusionLevel>) -> Selection {
        select_level(available_kbps, &self.cfg, previous)
    }
}

/// Picks the highest level whose bandwidth fits `available_kbps`.
///
/// With a previous level, moving up to a level requires `(1 + h)` times its
/// requirement, while staying put only requires the current level to fit. The
/// result never drops below `min_level`; if that does not fit it is returned
/// flagged best-effort.
pub fn select_level(available_kbps: f64, cfg: &SelectorConfig, previous: Option<FusionLevel>) -> Selection {
    let required = |l: FusionLevel| bandwidth_kbps_exact(l, &cfg.shape);
    let fits = |l: FusionLevel| required(l) <= available_kbps;
    let highest_fitting = FusionLevel::ALL.iter().rev().copied().find(|l| fits(*l));

    let chosen = match previous {
        Some(prev) if fits(prev) => {
            let margin = 1.0 + cfg.hysteresis_fraction;
            FusionLevel::ALL
                .iter()
                .rev()
                .copied()
                .find(|l| *l > prev && available_kbps >= margin * required(*l))
                .unwrap_or(prev)
        }
        _ => match highest_fitting {
            Some(l) => l,
            None => {
                return Selection {
                    level: cfg.min_level,
                    best_effort: true,
                }
            }
        },
    };
    if chosen < cfg.min_level {
        return Selection {
            level: cfg.min_level,
            best_effort: !fits(cfg.min_level),
        };
    }
    Selection {
        level: chosen,
        best_effort: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_cases() {
        let cfg = SelectorConfig::default();
        assert_eq!(select_level(300_000.0, &cfg, None).level, FusionLevel::Bff);
        assert_eq!(select_level(100.0, &cfg, None).level, FusionLevel::Rpf);
        assert_eq!(select_level(20_000.0, &cfg, None).level, FusionLevel::Qff);
        let s = select_level(0.0, &cfg, None);
        assert_eq!(s, Selection { level: FusionLevel::Rpf, best_effort: true });
    }

    #[test]
    fn hysteresis_blocks_marginal_upgrade_but_not_downgrade() {
        let cfg = SelectorConfig::default();
        let qff = bandwidth_kbps_exact(FusionLevel::Qff, &cfg.shape);
        assert_eq!(select_level(qff * 1.05, &cfg, Some(FusionLevel::Rpf)).level, FusionLevel::Rpf);
        assert_eq!(select_level(qff * 1.1, &cfg, Some(FusionLevel::Rpf)).level, FusionLevel::Qff);
        assert_eq!(select_level(qff * 0.99, &cfg, Some(FusionLevel::Qff)).level, FusionLevel::Rpf);
        assert_eq!(select_level(qff, &cfg, Some(FusionLevel::Qff)).level, FusionLevel::Qff);
    }

    #[test]
    fn min_level_floor() {
        let cfg = SelectorConfig {
            min_level: FusionLevel::Qff,
            ..Default::default()
        };
        assert_eq!(
            select_level(100.0, &cfg, None),
            Selection { level: FusionLevel::Qff, best_effort: true }
        );
        assert_eq!(
            select_level(1e9, &cfg, None),
            Selection { level: FusionLevel::Bff, best_effort: false }
        );
    }

    #[test]
    fn policy_trait_delegates() {
        let p = ThresholdPolicy { cfg: SelectorConfig::default() };
        assert_eq!(p.select(300_000.0, None).level, FusionLevel::Bff);
    }
}
