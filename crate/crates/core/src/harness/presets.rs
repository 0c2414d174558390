//! Built-in sweep configurations, one per figure variant and activation.
//!
//! Names follow `fig<N>_<activation>` with activation `linear`, `tanh` or
//! `lrelu`; the two threshold variants of the width sweep are
//! `fig13_eps025_*` and `fig13_eps03_*`.

use crate::descent::GdConfig;
use crate::error::{Error, Result};
use crate::factorization::{Activation, PriorSpec};
use crate::guess_check::GncConfig;
use crate::problem::MeasurementKind;

use super::sweep::{Axis, GdOverride, InstanceConfig, Optimizer, SweepConfig};

/// Widths of the full-scale width sweeps.
pub const FULL_WIDTHS: [usize; 7] = [5, 10, 20, 40, 80, 160, 320];
pub const DESK_WIDTHS: [usize; 4] = [5, 10, 20, 40];
pub const DESK_DEPTHS: [usize; 5] = [2, 4, 6, 8, 10];
pub const DESK_LARGE_DEPTHS: [usize; 5] = [2, 5, 10, 15, 20];
pub const DESK_SAMPLES: u64 = 1_000_000;
pub const DESK_MAX_EPOCHS: usize = 100_000;
/// Depth sweeps at desk scale cannot reach the stricter thresholds.
pub const DESK_MIN_EPS_TRAIN: f64 = 0.01;
/// Gradient descent is not run past this depth.
pub const GD_DEPTH_CAP: usize = 10;
pub const DEFAULT_MASTER_SEED: u64 = 2025;
pub const TRIALS: usize = 8;

const ACTIVATIONS: [&str; 3] = ["linear", "tanh", "lrelu"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Family {
    Width,
    WidthMomentum,
    WidthRank2,
    WidthUniform,
    WidthComplete,
    WidthEps025,
    WidthEps03,
    Depth,
    DepthMomentum,
    DepthRank2,
    DepthUniform,
    DepthComplete,
    DepthNoNorm,
    LargerDepths,
}

const FAMILIES: [(&str, Family); 14] = [
    ("fig1", Family::Width),
    ("fig2", Family::Depth),
    ("fig3", Family::WidthMomentum),
    ("fig4", Family::DepthMomentum),
    ("fig5", Family::WidthRank2),
    ("fig6", Family::DepthRank2),
    ("fig7", Family::WidthUniform),
    ("fig8", Family::DepthUniform),
    ("fig9", Family::WidthComplete),
    ("fig10", Family::DepthComplete),
    ("fig11", Family::DepthNoNorm),
    ("fig13_eps025", Family::WidthEps025),
    ("fig13_eps03", Family::WidthEps03),
    ("fig14", Family::LargerDepths),
];

impl Family {
    fn axis(self) -> Axis {
        use Family::*;
        match self {
            Width | WidthMomentum | WidthRank2 | WidthUniform | WidthComplete | WidthEps025 | WidthEps03 => Axis::Width,
            _ => Axis::Depth,
        }
    }

    fn supports(self, activation: &str) -> bool {
        !(self == Family::DepthNoNorm && activation == "lrelu")
    }
}

/// Every preset name, in figure order.
pub fn list_presets() -> Vec<String> {
    FAMILIES
        .iter()
        .flat_map(|&(fig, family)| {
            ACTIVATIONS.iter().filter(move |a| family.supports(a)).map(move |a| format!("{fig}_{a}"))
        })
        .collect()
}

fn depth_init_scale(leaky: bool, depth: usize) -> f64 {
    match (leaky, depth) {
        (_, 0..=4) => 1e-3,
        (false, 5..=8) => 0.1,
        (false, _) => 0.2,
        (true, 5) => 0.03,
        (true, 6 | 7) => 0.1,
        (true, 8 | 9) => 0.2,
        (true, _) => 0.8,
    }
}

fn depth_base_lr(leaky: bool, depth: usize) -> f64 {
    if leaky && depth >= 5 {
        0.1
    } else {
        0.01
    }
}

/// Full-scale configuration of a named preset.
pub fn load_preset(name: &str) -> Result<SweepConfig> {
    let unknown = || Error::UnknownPreset(name.to_string());
    let (fig, act_name) = name.rsplit_once('_').ok_or_else(unknown)?;
    let activation: Activation = act_name.parse().map_err(|_| unknown())?;
    let family = FAMILIES.iter().find(|(f, _)| *f == fig).map(|&(_, fam)| fam).ok_or_else(unknown)?;
    if !family.supports(act_name) {
        return Err(unknown());
    }
    let leaky = matches!(activation, Activation::LeakyRelu { .. });
    let rank2 = matches!(family, Family::WidthRank2 | Family::DepthRank2);
    let instance = InstanceConfig {
        m: 5,
        m_prime: 5,
        rank: if rank2 { 2 } else { 1 },
        norm: 1.0,
        n: if rank2 { 22 } else { 15 },
        kind: if matches!(family, Family::WidthComplete | Family::DepthComplete) {
            MeasurementKind::Indicator
        } else {
            MeasurementKind::Gaussian
        },
    };
    let uniform = matches!(family, Family::WidthUniform | Family::DepthUniform);
    // Half-width sqrt(3) gives the same per-entry variance as the Gaussian prior.
    let mut prior = if uniform { PriorSpec::uniform(3f64.sqrt()) } else { PriorSpec::gaussian(1.0) };
    let momentum = matches!(family, Family::WidthMomentum | Family::DepthMomentum);

    let mut cfg = match family.axis() {
        Axis::Width => {
            let eps = match family {
                Family::WidthEps025 => 0.025,
                Family::WidthEps03 => 0.03,
                _ => 0.02,
            };
            SweepConfig {
                name: name.to_string(),
                axis: Axis::Width,
                axis_values: FULL_WIDTHS.to_vec(),
                depth: 2,
                width: 5,
                activation,
                instance,
                optimizers: Optimizer::ALL.to_vec(),
                gnc: GncConfig::new(eps, 100_000_000, prior.clone()),
                gd: GdConfig::new(1e-4, 100_000, 1e-3),
                gd_overrides: Vec::new(),
                gd_max_axis_value: None,
                prior: prior.clone(),
                trials: TRIALS,
                master_seed: DEFAULT_MASTER_SEED,
            }
        }
        Axis::Depth => {
            if family != Family::DepthNoNorm {
                prior = prior.normalized();
            }
            let eps = match family {
                Family::DepthRank2 | Family::DepthNoNorm => 0.01,
                _ => 0.0035,
            };
            let (max_depth, samples) = match family {
                Family::LargerDepths => (20, 5_000_000_000),
                _ => (10, 1_000_000_000),
            };
            let epochs = if leaky || family == Family::DepthRank2 { 50_000 } else { 20_000 };
            let depths: Vec<usize> = (2..=max_depth).collect();
            let gd_overrides = depths
                .iter()
                .filter(|&&d| d <= GD_DEPTH_CAP)
                .map(|&d| GdOverride {
                    axis_value: d,
                    base_lr: Some(depth_base_lr(leaky, d)),
                    init_scale: Some(depth_init_scale(leaky, d)),
                    epochs: None,
                })
                .collect();
            SweepConfig {
                name: name.to_string(),
                axis: Axis::Depth,
                axis_values: depths,
                depth: 2,
                width: 5,
                activation,
                instance,
                optimizers: Optimizer::ALL.to_vec(),
                gnc: GncConfig::new(eps, samples, prior.clone()),
                gd: GdConfig::new(0.01, epochs, 1e-3),
                gd_overrides,
                gd_max_axis_value: Some(GD_DEPTH_CAP),
                prior: prior.clone(),
                trials: TRIALS,
                master_seed: DEFAULT_MASTER_SEED,
            }
        }
    };
    if momentum {
        cfg.gd.momentum = 0.9;
    }
    Ok(cfg)
}

/// Reduced grid for quick runs: widths {5, 10, 20, 40} or five depths,
/// 10^6 draws per cell, at most 10^5 epochs, and for depth sweeps a
/// training threshold of at least 0.01.
pub fn desk_scale(cfg: &SweepConfig) -> SweepConfig {
    let mut out = cfg.clone();
    out.name = format!("{}_desk", cfg.name);
    match cfg.axis {
        Axis::Width => out.axis_values = DESK_WIDTHS.to_vec(),
        Axis::Depth => {
            let max = cfg.axis_values.last().copied().unwrap_or(0);
            out.axis_values = if max > 10 { DESK_LARGE_DEPTHS.to_vec() } else { DESK_DEPTHS.to_vec() };
            out.gnc.eps_train = out.gnc.eps_train.max(DESK_MIN_EPS_TRAIN);
        }
    }
    out.gnc.num_samples = out.gnc.num_samples.min(DESK_SAMPLES);
    out.gd.epochs = out.gd.epochs.min(DESK_MAX_EPOCHS);
    for o in &mut out.gd_overrides {
        o.epochs = o.epochs.map(|e| e.min(DESK_MAX_EPOCHS));
    }
    out
}
