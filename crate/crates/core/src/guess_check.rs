//! Guess & Check: rejection sampling of weight settings from a prior.
//!
//! Sample `i` reads from stream `i` of the run seed, and sums are
//! accumulated over fixed blocks of [`ACCUMULATION_BLOCK`] indices and then
//! combined in block order. Reports are therefore bit-identical for any
//! batch size and any number of worker threads.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{self, draw_layer, forward_flat, FactorizationSpec, ForwardScratch, Precision, PriorSpec, WeightSetting};
use crate::problem::ProblemInstance;
use crate::rng::{self, tag, Seed, StreamFamily};
use crate::stats::{self, BottomK};

/// Number of consecutive sample indices reduced sequentially before
/// partial results are combined.
pub const ACCUMULATION_BLOCK: u64 = 4096;

pub const DEFAULT_RESERVOIR: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GncConfig {
    /// Acceptance threshold (strict). `f64::INFINITY` accepts every draw.
    #[serde(with = "threshold_serde")]
    pub eps_train: f64,
    /// Total number of draws, accepted or not.
    pub num_samples: u64,
    pub batch_size: usize,
    pub prior: PriorSpec,
    /// The single precision path is used if either this or the
    /// factorization spec asks for it.
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_reservoir")]
    pub reservoir_cap: usize,
}

fn default_reservoir() -> usize {
    DEFAULT_RESERVOIR
}

impl GncConfig {
    pub fn new(eps_train: f64, num_samples: u64, prior: PriorSpec) -> Self {
        Self {
            eps_train,
            num_samples,
            batch_size: 256,
            prior,
            precision: Precision::F64,
            reservoir_cap: DEFAULT_RESERVOIR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_train > 0.0) {
            return Err(Error::invalid("eps_train must be positive"));
        }
        if self.num_samples == 0 || self.batch_size == 0 || self.reservoir_cap == 0 {
            return Err(Error::invalid("num_samples, batch_size and reservoir_cap must be at least 1"));
        }
        self.prior.validate()
    }
}

/// JSON has no infinity; the accept-all threshold is written as `"inf"`.
pub(crate) mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad threshold `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GncStatus {
    Ok,
    NoAcceptance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GncReport {
    pub accepted_count: u64,
    pub total_drawn: u64,
    pub acceptance_rate: f64,
    /// Mean generalization loss over all accepted draws (exact).
    pub mean_gen_loss: Option<f64>,
    pub mean_train_loss: Option<f64>,
    /// Median over the retained accepted losses.
    pub median_gen_loss: Option<f64>,
    /// Indices of retained accepted draws, ascending.
    pub accepted_indices: Vec<u64>,
    /// Generalization losses matching `accepted_indices`.
    pub accepted_gen_losses: Vec<f64>,
    /// False when more draws were accepted than the reservoir holds; the
    /// retained losses are then a uniform subsample.
    pub retained_all: bool,
    pub status: GncStatus,
    /// Draws passing the single precision test (0 on the f64 path).
    pub f32_candidates: u64,
    /// Single precision candidates that failed the f64 re-check.
    pub f32_rejected_on_verify: u64,
}

/// Draws prior samples in batches: layer `j` is drawn for the whole batch
/// before layer `j + 1`, each sample from its own stream.
pub(crate) struct PriorSampler<'a> {
    spec: &'a FactorizationSpec,
    prior: &'a PriorSpec,
    family: StreamFamily,
}

impl<'a> PriorSampler<'a> {
    pub(crate) fn new(spec: &'a FactorizationSpec, prior: &'a PriorSpec, seed: Seed) -> Self {
        Self { spec, prior, family: StreamFamily::new(seed) }
    }

    /// Calls `visit(index, layers)` for every index in `range`, in order.
    pub(crate) fn for_each_draw(&self, range: Range<u64>, batch: usize, mut visit: impl FnMut(u64, &[Vec<f64>])) {
        let d = self.spec.depth;
        let batch = batch.max(1).min((range.end - range.start).max(1) as usize);
        let mut layers: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); d]; batch];
        let mut streams: Vec<ChaCha8Rng> = Vec::with_capacity(batch);
        let mut scratch = ForwardScratch::default();
        let mut start = range.start;
        while start < range.end {
            let count = (range.end - start).min(batch as u64) as usize;
            streams.clear();
            streams.extend((0..count as u64).map(|s| self.family.stream(start + s)));
            for j in 0..d {
                for (rng, sample) in streams.iter_mut().zip(layers.iter_mut()) {
                    draw_layer(self.spec, self.prior.base, rng, j, &mut sample[j]);
                }
            }
            for (s, sample) in layers.iter_mut().take(count).enumerate() {
                if self.prior.normalize {
                    factorization::normalize_layers(self.spec, self.prior.softening, sample, &mut scratch);
                }
                visit(start + s as u64, sample);
            }
            start += count as u64;
        }
    }
}

/// Re-draws sample `index` of a run seeded with `seed`.
pub fn replay_sample(spec: &FactorizationSpec, prior: &PriorSpec, seed: Seed, index: u64) -> WeightSetting {
    factorization::sample_prior_with(spec, prior, &mut StreamFamily::new(seed).stream(index))
}

#[derive(Default)]
struct BlockSummary {
    accepted: u64,
    sum_gen: f64,
    sum_train: f64,
    reservoir: BottomK,
    candidates32: u64,
    rejected32: u64,
}

pub(crate) fn block_ranges(total: u64) -> Vec<Range<u64>> {
    (0..total.div_ceil(ACCUMULATION_BLOCK))
        .map(|b| b * ACCUMULATION_BLOCK..((b + 1) * ACCUMULATION_BLOCK).min(total))
        .collect()
}

/// Rate-limited progress logging shared by parallel workers.
pub(crate) struct Progress {
    label: &'static str,
    total: u64,
    done: AtomicU64,
    hits: AtomicU64,
    started: Instant,
    last: Mutex<Instant>,
}

impl Progress {
    pub(crate) fn new(label: &'static str, total: u64) -> Self {
        let now = Instant::now();
        Self { label, total, done: AtomicU64::new(0), hits: AtomicU64::new(0), started: now, last: Mutex::new(now) }
    }

    pub(crate) fn record(&self, drawn: u64, hits: u64) {
        let done = self.done.fetch_add(drawn, Ordering::Relaxed) + drawn;
        let hits = self.hits.fetch_add(hits, Ordering::Relaxed) + hits;
        if !log::log_enabled!(log::Level::Info) {
            return;
        }
        let mut last = self.last.lock().unwrap();
        if last.elapsed().as_secs_f64() >= 2.0 || done == self.total {
            *last = Instant::now();
            let secs = self.started.elapsed().as_secs_f64().max(1e-9);
            log::info!(
                "{}: {done}/{} draws, {:.0} draws/s, acceptance {:.3e}",
                self.label,
                self.total,
                done as f64 / secs,
                hits as f64 / done.max(1) as f64
            );
        }
    }
}

/// Runs Guess & Check: draws `cfg.num_samples` weight settings and keeps
/// those with training loss strictly below `cfg.eps_train`.
pub fn run_gnc(spec: &FactorizationSpec, inst: &ProblemInstance, cfg: &GncConfig, seed: Seed) -> Result<GncReport> {
    spec.validate()?;
    spec.check_instance(inst)?;
    cfg.validate()?;
    if inst.complement_basis().is_empty() {
        return Err(Error::GenUndefined);
    }
    let use_f32 = cfg.precision == Precision::F32 || spec.precision == Precision::F32;
    let sampler = PriorSampler::new(spec, &cfg.prior, seed);
    let priority_key = rng::derive(seed, &[tag::RESERVOIR]);
    let progress = Progress::new("gnc", cfg.num_samples);
    let eps = cfg.eps_train;
    let eps32 = eps as f32;
    let k64 = inst.kernel64();
    let k32 = inst.kernel32();

    let blocks: Vec<BlockSummary> = block_ranges(cfg.num_samples)
        .into_par_iter()
        .map(|range| {
            let len = range.end - range.start;
            let mut out = BlockSummary { reservoir: BottomK::new(cfg.reservoir_cap), ..Default::default() };
            let mut s64 = ForwardScratch::<f64>::default();
            let mut s32 = ForwardScratch::<f32>::default();
            let mut l32: Vec<Vec<f32>> = vec![Vec::new(); spec.depth];
            sampler.for_each_draw(range, cfg.batch_size, |index, layers| {
                if use_f32 {
                    for (dst, src) in l32.iter_mut().zip(layers) {
                        dst.clear();
                        dst.extend(src.iter().map(|&x| x as f32));
                    }
                    if !(k32.train(forward_flat(spec, &l32, &mut s32)) < eps32) {
                        return;
                    }
                    out.candidates32 += 1;
                }
                let w = forward_flat(spec, layers, &mut s64);
                let train = k64.train(w);
                if train < eps {
                    let gen = k64.gen(w).expect("complement is nonempty");
                    out.accepted += 1;
                    out.sum_gen += gen;
                    out.sum_train += train;
                    out.reservoir.push(rng::splitmix64(priority_key ^ index), index, gen);
                } else if use_f32 {
                    out.rejected32 += 1;
                }
            });
            progress.record(len, out.accepted);
            out
        })
        .collect();

    let mut total = BlockSummary { reservoir: BottomK::new(cfg.reservoir_cap), ..Default::default() };
    for b in blocks {
        total.accepted += b.accepted;
        total.sum_gen += b.sum_gen;
        total.sum_train += b.sum_train;
        total.candidates32 += b.candidates32;
        total.rejected32 += b.rejected32;
        total.reservoir.merge(b.reservoir);
    }
    let retained_all = total.reservoir.is_complete();
    let (accepted_indices, accepted_gen_losses): (Vec<u64>, Vec<f64>) = total.reservoir.into_sorted_by_index().into_iter().unzip();
    let accepted = total.accepted;
    let mean = |s: f64| (accepted > 0).then(|| s / accepted as f64);
    if use_f32 && total.rejected32 > 0 {
        log::warn!("gnc: {} single precision acceptances failed f64 re-verification", total.rejected32);
    }
    Ok(GncReport {
        accepted_count: accepted,
        total_drawn: cfg.num_samples,
        acceptance_rate: accepted as f64 / cfg.num_samples as f64,
        mean_gen_loss: mean(total.sum_gen),
        mean_train_loss: mean(total.sum_train),
        median_gen_loss: stats::median(&accepted_gen_losses),
        accepted_indices,
        accepted_gen_losses,
        retained_all,
        status: if accepted > 0 { GncStatus::Ok } else { GncStatus::NoAcceptance },
        f32_candidates: if use_f32 { total.candidates32 } else { 0 },
        f32_rejected_on_verify: total.rejected32,
    })
}

/// Generalization losses of `trials` independent prior draws, ignoring the
/// training data. Draw `i` uses the same stream as G&C sample `i` under the
/// same seed.
pub fn run_prior_baseline(
    spec: &FactorizationSpec,
    inst: &ProblemInstance,
    prior: &PriorSpec,
    trials: usize,
    seed: Seed,
) -> Result<Vec<f64>> {
    spec.validate()?;
    spec.check_instance(inst)?;
    prior.validate()?;
    if inst.complement_basis().is_empty() {
        return Err(Error::GenUndefined);
    }
    let sampler = PriorSampler::new(spec, prior, seed);
    let k64 = inst.kernel64();
    let parts: Vec<Vec<f64>> = block_ranges(trials as u64)
        .into_par_iter()
        .map(|range| {
            let mut scratch = ForwardScratch::default();
            let mut out = Vec::with_capacity((range.end - range.start) as usize);
            sampler.for_each_draw(range, 256, |_, layers| {
                out.push(k64.gen(forward_flat(spec, layers, &mut scratch)).expect("complement is nonempty"));
            });
            out
        })
        .collect();
    Ok(parts.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::{fact_gen_loss, fact_train_loss, Activation};
    use crate::problem::{MeasurementKind, ProblemParams};

    fn setup(k: usize, d: usize) -> (FactorizationSpec, ProblemInstance) {
        let spec = FactorizationSpec::new(d, k, 4, 4, Activation::Linear).unwrap();
        let inst = ProblemInstance::generate(&ProblemParams::new(4, 4, 1, 1.0, 8, MeasurementKind::Gaussian, 21)).unwrap();
        (spec, inst)
    }

    #[test]
    fn accept_all_matches_prior_mean() {
        let (spec, inst) = setup(4, 2);
        let prior = PriorSpec::gaussian(1.0);
        let cfg = GncConfig::new(f64::INFINITY, 5000, prior);
        let rep = run_gnc(&spec, &inst, &cfg, 3).unwrap();
        assert_eq!(rep.accepted_count, 5000);
        assert!(rep.retained_all);
        let base = run_prior_baseline(&spec, &inst, &prior, 5000, 3).unwrap();
        let m = stats::mean(&base).unwrap();
        assert!((rep.mean_gen_loss.unwrap() - m).abs() <= 1e-12 * m);
        assert_eq!(rep.accepted_gen_losses, base);
    }

    #[test]
    fn impossible_threshold_accepts_nothing() {
        let (spec, inst) = setup(4, 2);
        let cfg = GncConfig::new(1e-300, 2000, PriorSpec::gaussian(1.0));
        let rep = run_gnc(&spec, &inst, &cfg, 3).unwrap();
        assert_eq!(rep.accepted_count, 0);
        assert_eq!(rep.mean_gen_loss, None);
        assert_eq!(rep.median_gen_loss, None);
        assert_eq!(rep.status, GncStatus::NoAcceptance);
    }

    #[test]
    fn report_independent_of_batch_size_and_threads() {
        let (spec, inst) = setup(5, 3);
        let mut cfg = GncConfig::new(0.08, 10_000, PriorSpec::gaussian(1.0).normalized());
        let mut reports = Vec::new();
        for bs in [1, 64, 4096] {
            for threads in [1, 8] {
                cfg.batch_size = bs;
                let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
                reports.push(pool.install(|| run_gnc(&spec, &inst, &cfg, 11).unwrap()));
            }
        }
        assert!(reports[0].accepted_count > 0);
        for r in &reports[1..] {
            assert_eq!(r, &reports[0]);
        }
    }

    #[test]
    fn accepted_samples_replay_below_threshold() {
        let (spec, inst) = setup(4, 2);
        let prior = PriorSpec::gaussian(1.0);
        let cfg = GncConfig::new(0.1, 20_000, prior);
        let rep = run_gnc(&spec, &inst, &cfg, 5).unwrap();
        assert!(rep.accepted_count > 0);
        for (&i, &g) in rep.accepted_indices.iter().zip(&rep.accepted_gen_losses) {
            let ws = replay_sample(&spec, &prior, 5, i);
            assert!(fact_train_loss(&spec, &ws, &inst).unwrap() < 0.1);
            assert_eq!(fact_gen_loss(&spec, &ws, &inst).unwrap(), g);
        }
    }

    #[test]
    fn monotone_in_threshold() {
        let (spec, inst) = setup(4, 2);
        let mut last = 0;
        for eps in [0.02, 0.05, 0.1, 0.2, 1.0] {
            let cfg = GncConfig::new(eps, 5000, PriorSpec::gaussian(1.0));
            let n = run_gnc(&spec, &inst, &cfg, 9).unwrap().accepted_count;
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn f32_path_verifies_in_f64() {
        let (spec, inst) = setup(4, 2);
        let mut cfg = GncConfig::new(0.1, 20_000, PriorSpec::gaussian(1.0));
        let exact = run_gnc(&spec, &inst, &cfg, 5).unwrap();
        cfg.precision = Precision::F32;
        let fast = run_gnc(&spec, &inst, &cfg, 5).unwrap();
        assert_eq!(fast.f32_candidates, fast.accepted_count + fast.f32_rejected_on_verify);
        // every f32 acceptance is a genuine f64 acceptance
        assert!(fast.accepted_indices.iter().all(|i| exact.accepted_indices.contains(i)));
        let diff = exact.accepted_count.abs_diff(fast.accepted_count);
        assert!(diff <= 2, "{} vs {}", exact.accepted_count, fast.accepted_count);
    }

    #[test]
    fn reservoir_subsamples_when_full() {
        let (spec, inst) = setup(4, 2);
        let mut cfg = GncConfig::new(f64::INFINITY, 3000, PriorSpec::gaussian(1.0));
        cfg.reservoir_cap = 100;
        let rep = run_gnc(&spec, &inst, &cfg, 1).unwrap();
        assert!(!rep.retained_all);
        assert_eq!(rep.accepted_gen_losses.len(), 100);
        assert_eq!(rep.accepted_count, 3000);
    }

    #[test]
    fn baseline_is_deterministic() {
        let (spec, inst) = setup(4, 2);
        let prior = PriorSpec::gaussian(1.0);
        let a = run_prior_baseline(&spec, &inst, &prior, 1, 7).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, run_prior_baseline(&spec, &inst, &prior, 1, 7).unwrap());
    }

    #[test]
    fn threshold_serializes_infinity() {
        let cfg = GncConfig::new(f64::INFINITY, 10, PriorSpec::gaussian(1.0));
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"inf\""));
        let back: GncConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
