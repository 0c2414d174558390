//! Full-batch gradient descent on the factorized training loss.
//!
//! With `adaptive` set, the base rate is divided by the square root of an
//! exponential moving average of squared gradient norms (see [`EmaRule`]);
//! the step keeps the gradient's direction. Momentum, when enabled, accumulates raw
//! gradients into a velocity that replaces the gradient in the update.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{evaluate_with_gradient, sample_prior, FactorizationSpec, PriorSpec, WeightSetting};
use crate::problem::ProblemInstance;
use crate::rng::Seed;

/// Abort once the training loss exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaMode {
    /// One moving average of the squared norm summed over all layers.
    #[default]
    Global,
    /// A separate moving average (and step size) per layer.
    PerLayer,
}

/// How the moving average turns into a step size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaRule {
    /// The current gradient is folded in first, the average is divided by
    /// `1 - alpha^(t+1)`, and `lr = eta / (sqrt(ema) + softening)`. Early
    /// steps then have length close to `eta` whatever the gradient scale,
    /// which small initializations of deep factorizations need to escape
    /// the origin.
    #[default]
    BiasCorrected,
    /// `lr = eta / sqrt(ema + softening)` with the average from previous
    /// steps only (first step `eta / sqrt(softening)`).
    Uncorrected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub base_lr: f64,
    pub epochs: usize,
    pub init_scale: f64,
    #[serde(default)]
    pub momentum: f64,
    pub adaptive: bool,
    #[serde(default = "default_alpha")]
    pub ema_alpha: f64,
    #[serde(default = "default_softening")]
    pub ema_softening: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub ema_mode: EmaMode,
    #[serde(default)]
    pub ema_rule: EmaRule,
}

fn default_alpha() -> f64 {
    0.99
}
fn default_softening() -> f64 {
    1e-6
}
fn default_record_every() -> usize {
    1000
}

impl GdConfig {
    /// Adaptive step, no momentum, `alpha = 0.99`, softening `1e-6`.
    pub fn new(base_lr: f64, epochs: usize, init_scale: f64) -> Self {
        Self {
            base_lr,
            epochs,
            init_scale,
            momentum: 0.0,
            adaptive: true,
            ema_alpha: default_alpha(),
            ema_softening: default_softening(),
            record_every: default_record_every(),
            ema_mode: EmaMode::Global,
            ema_rule: EmaRule::BiasCorrected,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid("base_lr must be positive"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) || !(self.ema_softening > 0.0) {
            return Err(Error::invalid("ema_alpha must lie in [0, 1) and ema_softening be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub gen_loss: f64,
    pub grad_norm: f64,
    /// Step size applied at this epoch (for the per-layer mode, the mean
    /// across layers).
    pub eff_lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GdOutcome {
    Completed,
    NonFinite { epoch: usize },
    Diverged { epoch: usize },
}

#[derive(Clone, Debug)]
pub struct GdTrace {
    pub records: Vec<GdRecord>,
    pub final_weights: WeightSetting,
    pub outcome: GdOutcome,
}

impl GdTrace {
    pub fn last(&self) -> &GdRecord {
        self.records.last().expect("a trace always holds the initial record")
    }

    pub fn final_train_loss(&self) -> f64 {
        self.last().train_loss
    }

    pub fn final_gen_loss(&self) -> f64 {
        self.last().gen_loss
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "gen_loss", "grad_norm", "eff_lr"])?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.gen_loss.to_string(),
                r.grad_norm.to_string(),
                r.eff_lr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform `+-1/sqrt(m_j)` entries scaled by `init_scale`.
pub fn init_weights(spec: &FactorizationSpec, init_scale: f64, seed: Seed) -> Result<WeightSetting> {
    if !(init_scale > 0.0 && init_scale.is_finite()) {
        return Err(Error::invalid("init_scale must be positive"));
    }
    let mut ws = sample_prior(spec, &PriorSpec::uniform(1.0), seed);
    ws.layers.iter_mut().for_each(|w| *w *= init_scale);
    Ok(ws)
}

fn update_ema(ema: &mut [f64], alpha: f64, grad_sq: f64, layer_sq: &[f64]) {
    if ema.len() == 1 {
        ema[0] = alpha * ema[0] + (1.0 - alpha) * grad_sq;
    } else {
        for (e, g) in ema.iter_mut().zip(layer_sq) {
            *e = alpha * *e + (1.0 - alpha) * g;
        }
    }
}

pub fn run_gd(spec: &FactorizationSpec, inst: &ProblemInstance, cfg: &GdConfig, seed: Seed) -> Result<GdTrace> {
    cfg.validate()?;
    let init = init_weights(spec, cfg.init_scale, seed)?;
    run_gd_from(spec, inst, cfg, init)
}

/// Gradient descent from a given weight setting.
pub fn run_gd_from(spec: &FactorizationSpec, inst: &ProblemInstance, cfg: &GdConfig, init: WeightSetting) -> Result<GdTrace> {
    cfg.validate()?;
    spec.validate()?;
    spec.check_instance(inst)?;
    init.check(spec)?;
    let d = spec.depth;
    let kernel = inst.kernel64();
    let gen_of = |w: &DMatrix<f64>| kernel.gen(w.as_slice()).unwrap_or(f64::NAN);

    let mut ws = init;
    let mut velocity: Option<Vec<DMatrix<f64>>> = (cfg.momentum > 0.0).then(|| ws.layers.iter().map(|w| w * 0.0).collect());
    let mut ema = vec![0.0; if cfg.ema_mode == EmaMode::PerLayer { d } else { 1 }];
    let mut records = Vec::new();
    let mut initial_loss = None;

    for epoch in 0..=cfg.epochs {
        let (loss, w, grad) = evaluate_with_gradient(spec, &ws, inst)?;
        let layer_sq: Vec<f64> = grad.layers.iter().map(|g| g.norm_squared()).collect();
        let grad_sq: f64 = layer_sq.iter().sum();
        if cfg.adaptive && cfg.ema_rule == EmaRule::BiasCorrected {
            update_ema(&mut ema, cfg.ema_alpha, grad_sq, &layer_sq);
        }
        let step: Vec<f64> = if cfg.adaptive {
            let correction = 1.0 - cfg.ema_alpha.powi(epoch.min(i32::MAX as usize - 1) as i32 + 1);
            ema.iter()
                .map(|&e| match cfg.ema_rule {
                    EmaRule::BiasCorrected => cfg.base_lr / ((e / correction).sqrt() + cfg.ema_softening),
                    EmaRule::Uncorrected => cfg.base_lr / (e + cfg.ema_softening).sqrt(),
                })
                .collect()
        } else {
            vec![cfg.base_lr; ema.len()]
        };
        let lr_of = |j: usize| if step.len() == 1 { step[0] } else { step[j] };
        let eff_lr = step.iter().sum::<f64>() / step.len() as f64;

        let record = GdRecord { epoch, train_loss: loss, gen_loss: gen_of(&w), grad_norm: grad_sq.sqrt(), eff_lr };
        let bad = if !loss.is_finite() || !grad_sq.is_finite() {
            Some(GdOutcome::NonFinite { epoch })
        } else if loss > DIVERGENCE_FACTOR * *initial_loss.get_or_insert(loss) {
            Some(GdOutcome::Diverged { epoch })
        } else {
            None
        };
        if let Some(outcome) = bad {
            log::warn!("gradient descent stopped at epoch {epoch}: {outcome:?}");
            records.push(record);
            return Ok(GdTrace { records, final_weights: ws, outcome });
        }
        if epoch % cfg.record_every == 0 || epoch == cfg.epochs {
            records.push(record);
        }
        if epoch == cfg.epochs {
            break;
        }

        if cfg.adaptive && cfg.ema_rule == EmaRule::Uncorrected {
            update_ema(&mut ema, cfg.ema_alpha, grad_sq, &layer_sq);
        }
        match velocity.as_mut() {
            Some(v) => {
                for (j, ((w, vj), g)) in ws.layers.iter_mut().zip(v.iter_mut()).zip(&grad.layers).enumerate() {
                    *vj *= cfg.momentum;
                    *vj += g;
                    let lr = lr_of(j);
                    w.zip_apply(vj, |x, u| *x -= lr * u);
                }
            }
            None => {
                for (j, (w, g)) in ws.layers.iter_mut().zip(&grad.layers).enumerate() {
                    let lr = lr_of(j);
                    w.zip_apply(g, |x, u| *x -= lr * u);
                }
            }
        }
    }
    Ok(GdTrace { records, final_weights: ws, outcome: GdOutcome::Completed })
}
