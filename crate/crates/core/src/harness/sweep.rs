use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descent::{run_gd, GdConfig, GdOutcome};
use crate::error::{Error, Result};
use crate::factorization::{fact_train_loss, Activation, FactorizationSpec, PriorSpec};
use crate::guess_check::{replay_sample, run_gnc, run_prior_baseline, GncConfig};
use crate::problem::{MeasurementKind, ProblemInstance, ProblemParams};
use crate::rng::{self, tag, Seed};
use crate::stats::Quartiles;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Width,
    Depth,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Width => "width",
            Axis::Depth => "depth",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "width" => Ok(Axis::Width),
            "depth" => Ok(Axis::Depth),
            other => Err(Error::Malformed(format!("unknown axis `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Gnc,
    Gd,
    Prior,
}

impl Optimizer {
    pub const ALL: [Optimizer; 3] = [Optimizer::Gnc, Optimizer::Gd, Optimizer::Prior];

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Gnc => "gnc",
            Optimizer::Gd => "gd",
            Optimizer::Prior => "prior",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Optimizer::Gnc => "G&C",
            Optimizer::Gd => "gradient descent",
            Optimizer::Prior => "prior",
        }
    }

    fn seed_tag(self) -> u64 {
        match self {
            Optimizer::Gnc => tag::GNC,
            Optimizer::Gd => tag::GD,
            Optimizer::Prior => tag::PRIOR,
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Optimizer::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown optimizer `{s}`")))
    }
}

/// Instance parameters shared by every trial; the seed comes from the trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub m: usize,
    pub m_prime: usize,
    pub rank: usize,
    pub norm: f64,
    pub n: usize,
    pub kind: MeasurementKind,
}

/// Per-axis-value replacement of gradient descent hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdOverride {
    pub axis_value: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub name: String,
    pub axis: Axis,
    pub axis_values: Vec<usize>,
    /// Depth when sweeping width.
    pub depth: usize,
    /// Width when sweeping depth.
    pub width: usize,
    pub activation: Activation,
    pub instance: InstanceConfig,
    pub optimizers: Vec<Optimizer>,
    pub gnc: GncConfig,
    pub gd: GdConfig,
    #[serde(default)]
    pub gd_overrides: Vec<GdOverride>,
    /// Gradient descent is skipped beyond this axis value.
    #[serde(default)]
    pub gd_max_axis_value: Option<usize>,
    /// Prior of the prior-only baseline.
    pub prior: PriorSpec,
    pub trials: usize,
    pub master_seed: Seed,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.axis_values.is_empty() {
            return Err(Error::invalid("axis_values must not be empty"));
        }
        if self.axis_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("axis_values must be strictly increasing"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        for &v in &self.axis_values {
            self.spec_for(v)?;
        }
        self.gnc.validate()?;
        self.prior.validate()?;
        for &v in &self.axis_values {
            self.gd_for(v).validate()?;
        }
        Ok(())
    }

    pub fn spec_for(&self, axis_value: usize) -> Result<FactorizationSpec> {
        let (depth, width) = match self.axis {
            Axis::Width => (self.depth, axis_value),
            Axis::Depth => (axis_value, self.width),
        };
        FactorizationSpec::new(depth, width, self.instance.m, self.instance.m_prime, self.activation)
            .map(|s| s.with_precision(self.gnc.precision))
    }

    pub fn gd_for(&self, axis_value: usize) -> GdConfig {
        let mut cfg = self.gd.clone();
        if let Some(o) = self.gd_overrides.iter().find(|o| o.axis_value == axis_value) {
            cfg.base_lr = o.base_lr.unwrap_or(cfg.base_lr);
            cfg.init_scale = o.init_scale.unwrap_or(cfg.init_scale);
            cfg.epochs = o.epochs.unwrap_or(cfg.epochs);
        }
        cfg
    }

    pub fn instance_params(&self, trial: usize) -> ProblemParams {
        let i = &self.instance;
        ProblemParams::new(
            i.m,
            i.m_prime,
            i.rank,
            i.norm,
            i.n,
            i.kind,
            rng::derive(self.master_seed, &[tag::INSTANCE, trial as u64]),
        )
    }

    pub fn cell_seed(&self, axis_value: usize, optimizer: Optimizer, trial: usize) -> Seed {
        rng::derive(self.master_seed, &[axis_value as u64, optimizer.seed_tag(), trial as u64])
    }

    fn runs(&self, optimizer: Optimizer, axis_value: usize) -> bool {
        self.optimizers.contains(&optimizer)
            && !(optimizer == Optimizer::Gd && self.gd_max_axis_value.is_some_and(|cap| axis_value > cap))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    ZeroAcceptance,
    Diverged,
    NonFinite,
    Failed(String),
}

impl CellStatus {
    pub fn name(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::ZeroAcceptance => "zero_acceptance",
            CellStatus::Diverged => "diverged",
            CellStatus::NonFinite => "non_finite",
            CellStatus::Failed(_) => "failed",
        }
    }
}

/// Extra G&C output kept for one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GncDetail {
    pub accepted: u64,
    pub total_drawn: u64,
    pub median_gen_loss: Option<f64>,
    pub retained_all: bool,
    pub accepted_indices: Vec<u64>,
    pub accepted_gen_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub axis_value: usize,
    pub optimizer: Optimizer,
    pub trial: usize,
    /// Per-trial statistic: final loss for GD, a single draw for the
    /// prior, the mean over accepted draws for G&C.
    pub gen_loss: Option<f64>,
    pub train_loss: Option<f64>,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnc: Option<GncDetail>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub axis_value: usize,
    pub optimizer: Optimizer,
    pub quartiles: Option<Quartiles>,
    pub defined: usize,
    pub undefined: usize,
}

/// Median and quartiles per `(axis_value, optimizer)`, ignoring undefined
/// cells. Output is sorted by axis value, then optimizer.
pub fn aggregate(cells: impl IntoIterator<Item = (usize, Optimizer, Option<f64>)>) -> Vec<Aggregate>
{
    let mut groups: BTreeMap<(usize, Optimizer), (Vec<f64>, usize)> = BTreeMap::new();
    for (v, o, loss) in cells {
        let entry = groups.entry((v, o)).or_default();
        match loss.filter(|x| x.is_finite()) {
            Some(x) => entry.0.push(x),
            None => entry.1 += 1,
        }
    }
    groups
        .into_iter()
        .map(|((axis_value, optimizer), (vals, undefined))| Aggregate {
            axis_value,
            optimizer,
            quartiles: Quartiles::of(&vals),
            defined: vals.len(),
            undefined,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub config_hash: String,
    /// Ordered by axis value, optimizer, trial.
    pub cells: Vec<Cell>,
}

impl SweepResult {
    pub fn aggregates(&self) -> Vec<Aggregate> {
        aggregate(self.cells.iter().map(|c| (c.axis_value, c.optimizer, c.gen_loss)))
    }

    /// Medians of one optimizer along the axis (`None` where undefined).
    pub fn medians(&self, optimizer: Optimizer) -> Vec<(usize, Option<f64>)> {
        self.aggregates()
            .into_iter()
            .filter(|a| a.optimizer == optimizer)
            .map(|a| (a.axis_value, a.quartiles.map(|q| q.median)))
            .collect()
    }

    pub fn has_failures(&self) -> bool {
        self.cells.iter().any(|c| c.status != CellStatus::Ok)
    }
}

fn run_cell(cfg: &SweepConfig, inst: &ProblemInstance, axis_value: usize, optimizer: Optimizer, trial: usize) -> Cell {
    let mut cell = Cell { axis_value, optimizer, trial, gen_loss: None, train_loss: None, status: CellStatus::Ok, gnc: None };
    let seed = cfg.cell_seed(axis_value, optimizer, trial);
    let outcome = (|| -> Result<()> {
        let spec = cfg.spec_for(axis_value)?;
        match optimizer {
            Optimizer::Gnc => {
                let rep = run_gnc(&spec, inst, &cfg.gnc, seed)?;
                cell.gen_loss = rep.mean_gen_loss;
                cell.train_loss = rep.mean_train_loss;
                if rep.accepted_count == 0 {
                    cell.status = CellStatus::ZeroAcceptance;
                }
                cell.gnc = Some(GncDetail {
                    accepted: rep.accepted_count,
                    total_drawn: rep.total_drawn,
                    median_gen_loss: rep.median_gen_loss,
                    retained_all: rep.retained_all,
                    accepted_indices: rep.accepted_indices,
                    accepted_gen_losses: rep.accepted_gen_losses,
                });
            }
            Optimizer::Gd => {
                let trace = run_gd(&spec, inst, &cfg.gd_for(axis_value), seed)?;
                match trace.outcome {
                    GdOutcome::Completed => {
                        cell.gen_loss = Some(trace.final_gen_loss());
                        cell.train_loss = Some(trace.final_train_loss());
                    }
                    GdOutcome::Diverged { .. } => cell.status = CellStatus::Diverged,
                    GdOutcome::NonFinite { .. } => cell.status = CellStatus::NonFinite,
                }
            }
            Optimizer::Prior => {
                cell.gen_loss = run_prior_baseline(&spec, inst, &cfg.prior, 1, seed)?.first().copied();
                let ws = replay_sample(&spec, &cfg.prior, seed, 0);
                cell.train_loss = Some(fact_train_loss(&spec, &ws, inst)?);
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("cell {}={axis_value} {} trial {trial} failed: {e}", cfg.axis.name(), optimizer.name());
        cell.status = CellStatus::Failed(e.to_string());
        cell.gen_loss = None;
        cell.train_loss = None;
    }
    cell
}

/// Runs every `(axis value, optimizer, trial)` cell. Trial `t` uses one
/// problem instance for all optimizers and axis values; each cell's
/// randomness depends only on its coordinates and the master seed.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let instances: Vec<ProblemInstance> = (0..cfg.trials)
        .map(|t| ProblemInstance::generate(&cfg.instance_params(t)))
        .collect::<Result<_>>()?;
    let mut tasks = Vec::new();
    for &v in &cfg.axis_values {
        for o in Optimizer::ALL {
            if cfg.runs(o, v) {
                tasks.extend((0..cfg.trials).map(|t| (v, o, t)));
            }
        }
    }
    log::info!("sweep {}: {} cells", cfg.name, tasks.len());
    let cells: Vec<Cell> = tasks
        .into_par_iter()
        .map(|(v, o, t)| {
            let cell = run_cell(cfg, &instances[t], v, o, t);
            log::info!(
                "{}={v} {} trial {t}: gen {:?} ({})",
                cfg.axis.name(),
                o.name(),
                cell.gen_loss,
                cell.status.name()
            );
            cell
        })
        .collect();
    Ok(SweepResult { config: cfg.clone(), config_hash: cfg.hash(), cells })
}
