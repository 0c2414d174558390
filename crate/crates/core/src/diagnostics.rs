//! Empirical probes of the width and depth mechanisms.
//!
//! The independence probe estimates how much conditioning on a small
//! training loss changes the probability of a small generalization loss.
//! The spectral probes measure how close products of random matrices are
//! to rank one, through Lyapunov exponents `log(s_i) / depth` and the
//! relative distance to the best rank-one approximation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{forward_flat, sample_prior_with, FactorizationSpec, ForwardScratch, PriorSpec};
use crate::guess_check::{block_ranges, PriorSampler, Progress};
use crate::linalg;
use crate::problem::ProblemInstance;
use crate::rng::{Seed, StreamFamily};
use crate::stats;

/// Where probe draws of the end-to-end matrix come from.
#[derive(Clone, Debug)]
pub enum ProbeSource {
    /// The factorization under a prior over weight settings.
    Prior { spec: FactorizationSpec, prior: PriorSpec },
    /// An i.i.d. Gaussian matrix with the given entry standard deviation.
    /// Its measurement and complement coordinates are exactly independent.
    IidGaussian { std: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceProbe {
    pub eps_train: f64,
    pub eps_gen: f64,
    /// `P(L_gen < eps_gen | L_train < eps_train)`; `None` with no train hits.
    pub p_gen_given_train: Option<f64>,
    pub p_gen: f64,
    pub gap: Option<f64>,
    pub standard_error: Option<f64>,
    /// Both events.
    pub joint: u64,
    pub train_only: u64,
    pub gen_only: u64,
    pub total: u64,
}

impl IndependenceProbe {
    pub fn train_hits(&self) -> u64 {
        self.joint + self.train_only
    }

    /// `gap / standard_error`, when defined.
    pub fn z_score(&self) -> Option<f64> {
        Some(self.gap? / self.standard_error?)
    }

    fn from_counts(eps_train: f64, eps_gen: f64, joint: u64, train_only: u64, gen_only: u64, total: u64) -> Self {
        let hits = joint + train_only;
        let p_gen = (joint + gen_only) as f64 / total as f64;
        let p_cond = (hits > 0).then(|| joint as f64 / hits as f64);
        let gap = p_cond.map(|p| p - p_gen);
        let standard_error = p_cond.map(|p| {
            let a = stats::binomial_se(p, hits);
            let b = stats::binomial_se(p_gen, total);
            (a * a + b * b).sqrt()
        });
        Self { eps_train, eps_gen, p_gen_given_train: p_cond, p_gen, gap, standard_error, joint, train_only, gen_only, total }
    }
}

/// Counts the four combinations of `{L_train < eps_train}` and
/// `{L_gen < eps_gen}` over `num_samples` prior draws.
pub fn probe_independence(
    spec: &FactorizationSpec,
    inst: &ProblemInstance,
    prior: &PriorSpec,
    eps_train: f64,
    eps_gen: f64,
    num_samples: u64,
    seed: Seed,
) -> Result<IndependenceProbe> {
    let source = ProbeSource::Prior { spec: spec.clone(), prior: *prior };
    probe_independence_with(&source, inst, eps_train, eps_gen, num_samples, seed)
}

pub fn probe_independence_with(
    source: &ProbeSource,
    inst: &ProblemInstance,
    eps_train: f64,
    eps_gen: f64,
    num_samples: u64,
    seed: Seed,
) -> Result<IndependenceProbe> {
    if num_samples == 0 {
        return Err(Error::invalid("num_samples must be at least 1"));
    }
    if inst.complement_basis().is_empty() {
        return Err(Error::GenUndefined);
    }
    let kernel = inst.kernel64();
    let progress = Progress::new("independence", num_samples);
    let classify = move |w: &[f64], counts: &mut [u64; 3]| {
        let t = kernel.train(w) < eps_train;
        let g = kernel.gen(w).expect("complement is nonempty") < eps_gen;
        match (t, g) {
            (true, true) => counts[0] += 1,
            (true, false) => counts[1] += 1,
            (false, true) => counts[2] += 1,
            (false, false) => {}
        }
    };

    let per_block: Vec<[u64; 3]> = match source {
        ProbeSource::Prior { spec, prior } => {
            spec.validate()?;
            spec.check_instance(inst)?;
            prior.validate()?;
            let sampler = PriorSampler::new(spec, prior, seed);
            block_ranges(num_samples)
                .into_par_iter()
                .map(|range| {
                    let len = range.end - range.start;
                    let mut counts = [0u64; 3];
                    let mut scratch = ForwardScratch::default();
                    sampler.for_each_draw(range, 256, |_, layers| classify(forward_flat(spec, layers, &mut scratch), &mut counts));
                    progress.record(len, counts[0] + counts[1]);
                    counts
                })
                .collect()
        }
        ProbeSource::IidGaussian { std } => {
            let family = StreamFamily::new(seed);
            let dim = inst.ground_truth().len();
            block_ranges(num_samples)
                .into_par_iter()
                .map(|range| {
                    let len = range.end - range.start;
                    let mut counts = [0u64; 3];
                    let mut w = vec![0.0; dim];
                    for i in range {
                        let mut rng = family.stream(i);
                        w.iter_mut().for_each(|x| *x = std * rng.sample::<f64, _>(StandardNormal));
                        classify(&w, &mut counts);
                    }
                    progress.record(len, counts[0] + counts[1]);
                    counts
                })
                .collect()
        }
    };
    let [joint, train_only, gen_only] = per_block
        .iter()
        .fold([0u64; 3], |acc, c| [acc[0] + c[0], acc[1] + c[1], acc[2] + c[2]]);
    let probe = IndependenceProbe::from_counts(eps_train, eps_gen, joint, train_only, gen_only, num_samples);
    if probe.train_hits() < 30 {
        log::warn!("independence probe: only {} draws met the training threshold", probe.train_hits());
    }
    Ok(probe)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralProbe {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `log(s_i) / depth_scale`.
    pub lyapunov: Vec<f64>,
    /// `lyapunov[0] - lyapunov[1]` (NaN for a single singular value).
    pub gap: f64,
    /// `||W - best rank one||_F / ||W||_F`.
    pub rank_one_residual: f64,
    pub effective_rank: f64,
    /// Number of factors the exponents are normalized by.
    pub depth_scale: usize,
}

impl SpectralProbe {
    /// Probe of `scale * m`, where `scale = exp(log_scale)` was factored out
    /// to keep `m` representable.
    pub fn of_matrix(m: &DMatrix<f64>, log_scale: f64, depth_scale: usize) -> Result<Self> {
        let sv = linalg::singular_values(m)?;
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let tail: f64 = sv.iter().skip(1).map(|s| s * s).sum();
        let rank_one_residual = if total > 0.0 { (tail / total).sqrt() } else { 0.0 };
        let div = depth_scale.max(1) as f64;
        let lyapunov: Vec<f64> = sv.iter().map(|s| (s.ln() + log_scale) / div).collect();
        let gap = if lyapunov.len() >= 2 { lyapunov[0] - lyapunov[1] } else { f64::NAN };
        Ok(Self {
            effective_rank: entropy_rank(&sv),
            singular_values: sv.iter().map(|s| s * log_scale.exp()).collect(),
            lyapunov,
            gap,
            rank_one_residual,
            depth_scale,
        })
    }
}

/// Probes the product `F_last ... F_1` of square factors. The running
/// product is rescaled to unit Frobenius norm after every factor and the
/// scale tracked in log space. With `normalize`, the exponents describe
/// the unit-norm product instead.
pub fn probe_product(factors: &[DMatrix<f64>], normalize: bool) -> Result<SpectralProbe> {
    let first = factors.first().ok_or_else(|| Error::invalid("need at least one factor"))?;
    let mut prod = first.clone();
    let mut log_scale = 0.0;
    for f in factors.iter().skip(1) {
        let nrm = prod.norm();
        if nrm > 0.0 && nrm.is_finite() {
            prod /= nrm;
            log_scale += nrm.ln();
        }
        prod = f * prod;
    }
    let nrm = prod.norm();
    if nrm > 0.0 && nrm.is_finite() {
        prod /= nrm;
        log_scale += nrm.ln();
    }
    if normalize {
        log_scale = 0.0;
    }
    SpectralProbe::of_matrix(&prod, log_scale, factors.len())
}

/// Spectral probes of a batch, with the number of trials whose SVD failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralRun {
    pub probes: Vec<SpectralProbe>,
    pub failed_trials: usize,
}

impl SpectralRun {
    fn collect(results: Vec<Result<SpectralProbe>>) -> Self {
        let mut probes = Vec::with_capacity(results.len());
        let mut failed_trials = 0;
        for r in results {
            match r {
                Ok(p) => probes.push(p),
                Err(e) => {
                    log::warn!("spectral probe trial skipped: {e}");
                    failed_trials += 1;
                }
            }
        }
        Self { probes, failed_trials }
    }

    pub fn median_gap(&self) -> Option<f64> {
        stats::median(&self.probes.iter().map(|p| p.gap).collect::<Vec<_>>())
    }

    pub fn median_residual(&self) -> Option<f64> {
        stats::median(&self.probes.iter().map(|p| p.rank_one_residual).collect::<Vec<_>>())
    }
}

/// Products of `depth - 2` i.i.d. Gaussian `k x k` factors with entry
/// variance `1/k`, one product per trial.
pub fn probe_spectrum(k: usize, depth: usize, normalize: bool, seed: Seed, trials: usize) -> Result<SpectralRun> {
    if depth < 3 || k < 2 {
        return Err(Error::invalid("the middle product needs depth >= 3 and k >= 2"));
    }
    let family = StreamFamily::new(seed);
    let s = 1.0 / (k as f64).sqrt();
    let results: Vec<Result<SpectralProbe>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = family.stream(t);
            let factors: Vec<DMatrix<f64>> = (0..depth - 2)
                .map(|_| DMatrix::from_fn(k, k, |_, _| s * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            probe_product(&factors, normalize)
        })
        .collect();
    Ok(SpectralRun::collect(results))
}

/// Spectral probe of the full end-to-end matrix under `prior`, exponents
/// normalized by the depth `d`.
pub fn probe_end_to_end_rank(spec: &FactorizationSpec, prior: &PriorSpec, seed: Seed, trials: usize) -> Result<SpectralRun> {
    spec.validate()?;
    prior.validate()?;
    let family = StreamFamily::new(seed);
    let results: Vec<Result<SpectralProbe>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let ws = sample_prior_with(spec, prior, &mut family.stream(t));
            let slices: Vec<&[f64]> = ws.layers.iter().map(|w| w.as_slice()).collect();
            let mut scratch = ForwardScratch::default();
            let w = DMatrix::from_column_slice(spec.out_dim, spec.in_dim, forward_flat(spec, &slices, &mut scratch));
            SpectralProbe::of_matrix(&w, 0.0, spec.depth)
        })
        .collect();
    Ok(SpectralRun::collect(results))
}

fn entropy_rank(sv: &[f64]) -> f64 {
    let total: f64 = sv.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = sv
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

/// `exp` of the entropy of the normalized singular values; 0 for the zero
/// matrix.
pub fn effective_rank(w: &DMatrix<f64>) -> Result<f64> {
    Ok(entropy_rank(&linalg::singular_values(w)?))
}
