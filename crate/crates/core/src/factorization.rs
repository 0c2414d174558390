//! Deep matrix factorization `W = W_d s(W_{d-1} s(... s(W_1)))`.
//!
//! Layer shapes are `W_1: k x m'`, `W_j: k x k` for the middle layers and
//! `W_d: m x k`. The activation is applied entrywise after every layer but
//! the last. Weight buffers used by the samplers are flat and column-major
//! so they convert to and from [`nalgebra::DMatrix`] without copying order.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, matmul_into, Real};
use crate::problem::{self, MatrixDoc, ProblemInstance};
use crate::rng::{self, Seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Tanh,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu { slope: Self::DEFAULT_LEAKY_SLOPE }
    }

    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu { slope } => x.max(T::of(slope) * x),
        }
    }

    /// Derivative; the leaky ReLU kink at 0 takes the value 1.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, Activation::Linear)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
            Activation::LeakyRelu { .. } => "lrelu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "tanh" => Ok(Activation::Tanh),
            "lrelu" | "leaky_relu" => Ok(Activation::leaky_relu()),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    /// Sampler fast path; acceptances are re-verified in `f64`.
    F32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationSpec {
    pub depth: usize,
    pub width: usize,
    /// Rows of the end-to-end matrix (`m`).
    pub out_dim: usize,
    /// Columns of the end-to-end matrix (`m'`).
    pub in_dim: usize,
    pub activation: Activation,
    #[serde(default)]
    pub precision: Precision,
}

impl FactorizationSpec {
    pub fn new(depth: usize, width: usize, out_dim: usize, in_dim: usize, activation: Activation) -> Result<Self> {
        let spec = Self { depth, width, out_dim, in_dim, activation, precision: Precision::F64 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::invalid(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.out_dim == 0 || self.in_dim == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if self.width < self.out_dim.min(self.in_dim) {
            return Err(Error::invalid(format!(
                "width {} is below min(m, m') = {}",
                self.width,
                self.out_dim.min(self.in_dim)
            )));
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !slope.is_finite() {
                return Err(Error::invalid("leaky ReLU slope must be finite"));
            }
        }
        Ok(())
    }

    /// `(rows, cols)` of layer `j` (0-based).
    pub fn layer_shape(&self, j: usize) -> (usize, usize) {
        let rows = if j + 1 == self.depth { self.out_dim } else { self.width };
        let cols = if j == 0 { self.in_dim } else { self.width };
        (rows, cols)
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.out_dim, self.in_dim)
    }

    pub fn num_params(&self) -> usize {
        (0..self.depth).map(|j| {
            let (r, c) = self.layer_shape(j);
            r * c
        }).sum()
    }

    pub fn check_instance(&self, inst: &ProblemInstance) -> Result<()> {
        if inst.shape() != self.output_shape() {
            return Err(Error::shape(inst.shape(), self.output_shape()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSetting {
    pub layers: Vec<DMatrix<f64>>,
}

impl WeightSetting {
    pub fn new(layers: Vec<DMatrix<f64>>) -> Self {
        Self { layers }
    }

    pub fn zeros(spec: &FactorizationSpec) -> Self {
        Self::new((0..spec.depth).map(|j| {
            let (r, c) = spec.layer_shape(j);
            DMatrix::zeros(r, c)
        }).collect())
    }

    pub fn check(&self, spec: &FactorizationSpec) -> Result<()> {
        if self.layers.len() != spec.depth {
            return Err(Error::invalid(format!(
                "weight setting has {} layers, spec has depth {}",
                self.layers.len(),
                spec.depth
            )));
        }
        for (j, w) in self.layers.iter().enumerate() {
            linalg::check_shape(w, spec.layer_shape(j))?;
        }
        Ok(())
    }

    /// Euclidean norm over all layers.
    pub fn norm(&self) -> f64 {
        self.layers.iter().map(|w| w.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        let docs: Vec<MatrixDoc> = self.layers.iter().map(MatrixDoc::from).collect();
        Ok(serde_json::to_string_pretty(&docs)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let docs: Vec<MatrixDoc> = serde_json::from_str(text)?;
        Ok(Self::new(docs.iter().map(MatrixDoc::to_matrix).collect::<Result<_>>()?))
    }

    fn from_flat(spec: &FactorizationSpec, flat: Vec<Vec<f64>>) -> Self {
        Self::new(flat.into_iter().enumerate().map(|(j, v)| {
            let (r, c) = spec.layer_shape(j);
            DMatrix::from_vec(r, c, v)
        }).collect())
    }
}

/// Scalar distribution the prior draws entries from before Kaiming scaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseDistribution {
    Gaussian { variance: f64 },
    Uniform { half_width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub base: BaseDistribution,
    pub normalize: bool,
    /// Added to `||W_d ... W_1||_F` before taking the `d`-th root.
    #[serde(default = "default_softening")]
    pub softening: f64,
}

fn default_softening() -> f64 {
    PriorSpec::DEFAULT_SOFTENING
}

impl PriorSpec {
    pub const DEFAULT_SOFTENING: f64 = 1e-6;

    pub fn gaussian(variance: f64) -> Self {
        Self { base: BaseDistribution::Gaussian { variance }, normalize: false, softening: Self::DEFAULT_SOFTENING }
    }

    pub fn uniform(half_width: f64) -> Self {
        Self { base: BaseDistribution::Uniform { half_width }, normalize: false, softening: Self::DEFAULT_SOFTENING }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.base {
            BaseDistribution::Gaussian { variance } => variance > 0.0 && variance.is_finite(),
            BaseDistribution::Uniform { half_width } => half_width > 0.0 && half_width.is_finite(),
        };
        if !ok {
            return Err(Error::invalid("prior base distribution needs a positive finite scale"));
        }
        if !(self.softening >= 0.0) {
            return Err(Error::invalid("normalization softening must be non-negative"));
        }
        Ok(())
    }
}

/// Fills one layer buffer (flat, column-major) with Kaiming scaled draws.
pub(crate) fn draw_layer<R: Rng>(spec: &FactorizationSpec, base: BaseDistribution, rng: &mut R, j: usize, buf: &mut Vec<f64>) {
    let (r, c) = spec.layer_shape(j);
    buf.resize(r * c, 0.0);
    let fan_in = c as f64;
    match base {
        BaseDistribution::Gaussian { variance } => {
            let s = (variance / fan_in).sqrt();
            for x in buf.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x = s * z;
            }
        }
        BaseDistribution::Uniform { half_width } => {
            let s = 1.0 / fan_in.sqrt();
            let dist = Uniform::new_inclusive(-half_width, half_width).expect("validated half width");
            for x in buf.iter_mut() {
                *x = s * rng.sample(dist);
            }
        }
    }
}

/// Draws every layer, first to last, from a single stream.
pub(crate) fn draw_layers<R: Rng>(spec: &FactorizationSpec, base: BaseDistribution, rng: &mut R, layers: &mut [Vec<f64>]) {
    for (j, buf) in layers.iter_mut().enumerate() {
        draw_layer(spec, base, rng, j, buf);
    }
}

/// Reusable buffers for [`forward_flat`].
#[derive(Clone, Debug, Default)]
pub struct ForwardScratch<T> {
    a: Vec<T>,
    b: Vec<T>,
}

/// Plain product `W_d ... W_1` of flat layers, written to `scratch` and
/// returned as a slice (`m x m'`, column-major).
pub(crate) fn linear_product<'s, T: Real, L: AsRef<[T]>>(
    spec: &FactorizationSpec,
    layers: &[L],
    scratch: &'s mut ForwardScratch<T>,
) -> &'s [T] {
    propagate(spec, layers, scratch, Activation::Linear)
}

/// End-to-end matrix of flat layers (`m x m'`, column-major).
pub(crate) fn forward_flat<'s, T: Real, L: AsRef<[T]>>(
    spec: &FactorizationSpec,
    layers: &[L],
    scratch: &'s mut ForwardScratch<T>,
) -> &'s [T] {
    propagate(spec, layers, scratch, spec.activation)
}

fn propagate<'s, T: Real, L: AsRef<[T]>>(
    spec: &FactorizationSpec,
    layers: &[L],
    scratch: &'s mut ForwardScratch<T>,
    act: Activation,
) -> &'s [T] {
    // Every intermediate activation has m' columns.
    let cols = spec.in_dim;
    let ForwardScratch { a: cur, b: next } = scratch;
    cur.clear();
    cur.extend_from_slice(layers[0].as_ref());
    for (j, layer) in layers.iter().enumerate().skip(1) {
        if !act.is_linear() {
            cur.iter_mut().for_each(|x| *x = act.apply(*x));
        }
        let (rows, inner) = spec.layer_shape(j);
        next.resize(rows * cols, T::zero());
        matmul_into(next, layer.as_ref(), cur, rows, inner, cols);
        std::mem::swap(cur, next);
    }
    &scratch.a
}

/// Divides every layer by `(||W_d ... W_1||_F + softening)^(1/d)`. Returns
/// the norm of the undivided product.
pub(crate) fn normalize_layers(spec: &FactorizationSpec, softening: f64, layers: &mut [Vec<f64>], scratch: &mut ForwardScratch<f64>) -> f64 {
    let nrm = linalg::norm_sq(linear_product(spec, layers, scratch)).sqrt();
    let c = (nrm + softening).powf(1.0 / spec.depth as f64);
    for buf in layers.iter_mut() {
        buf.iter_mut().for_each(|x| *x /= c);
    }
    nrm
}

/// Draws one weight setting from the prior using the given stream.
pub fn sample_prior_with<R: Rng>(spec: &FactorizationSpec, prior: &PriorSpec, rng: &mut R) -> WeightSetting {
    let mut flat = vec![Vec::new(); spec.depth];
    draw_layers(spec, prior.base, rng, &mut flat);
    if prior.normalize {
        normalize_layers(spec, prior.softening, &mut flat, &mut ForwardScratch::default());
    }
    WeightSetting::from_flat(spec, flat)
}

/// Draws one weight setting from the prior generated by `prior.base`,
/// with optional product normalization.
pub fn sample_prior(spec: &FactorizationSpec, prior: &PriorSpec, seed: Seed) -> WeightSetting {
    sample_prior_with(spec, prior, &mut rng::seeded(seed))
}

/// End-to-end matrix `W_d s(... s(W_1))`.
pub fn forward(spec: &FactorizationSpec, ws: &WeightSetting) -> Result<DMatrix<f64>> {
    ws.check(spec)?;
    let mut scratch = ForwardScratch::default();
    let slices: Vec<&[f64]> = ws.layers.iter().map(|w| w.as_slice()).collect();
    let out = forward_flat(spec, &slices, &mut scratch);
    Ok(DMatrix::from_column_slice(spec.out_dim, spec.in_dim, out))
}

/// Single precision forward pass (the sampler fast path).
pub fn forward_f32(spec: &FactorizationSpec, ws: &WeightSetting) -> Result<DMatrix<f32>> {
    ws.check(spec)?;
    let layers: Vec<Vec<f32>> = ws.layers.iter().map(|w| w.iter().map(|&x| x as f32).collect()).collect();
    let mut scratch = ForwardScratch::default();
    let out = forward_flat(spec, &layers, &mut scratch);
    Ok(DMatrix::from_column_slice(spec.out_dim, spec.in_dim, out))
}

pub fn fact_train_loss(spec: &FactorizationSpec, ws: &WeightSetting, inst: &ProblemInstance) -> Result<f64> {
    problem::train_loss(&forward(spec, ws)?, inst)
}

pub fn fact_gen_loss(spec: &FactorizationSpec, ws: &WeightSetting, inst: &ProblemInstance) -> Result<f64> {
    problem::gen_loss(&forward(spec, ws)?, inst)
}

/// Training loss and its gradient with respect to every layer.
pub fn loss_and_gradient(spec: &FactorizationSpec, ws: &WeightSetting, inst: &ProblemInstance) -> Result<(f64, WeightSetting)> {
    let (loss, _, grad) = evaluate_with_gradient(spec, ws, inst)?;
    Ok((loss, grad))
}

/// Training loss, end-to-end matrix and gradient in one pass.
pub(crate) fn evaluate_with_gradient(
    spec: &FactorizationSpec,
    ws: &WeightSetting,
    inst: &ProblemInstance,
) -> Result<(f64, DMatrix<f64>, WeightSetting)> {
    ws.check(spec)?;
    spec.check_instance(inst)?;
    let act = spec.activation;
    let d = spec.depth;

    // pre[j] is the pre-activation output of layer j; post[j] = s(pre[j]).
    let mut pre: Vec<DMatrix<f64>> = Vec::with_capacity(d);
    let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(d - 1);
    pre.push(ws.layers[0].clone());
    for j in 1..d {
        let activated = pre[j - 1].map(|x| act.apply(x));
        pre.push(&ws.layers[j] * &activated);
        post.push(activated);
    }
    let w = &pre[d - 1];

    let kernel = inst.kernel64();
    let mut residuals = Vec::new();
    kernel.residuals(w.as_slice(), &mut residuals);
    let n = residuals.len() as f64;
    let loss = residuals.iter().map(|r| r * r).sum::<f64>() / n;
    let coeffs: Vec<f64> = residuals.iter().map(|r| 2.0 * r / n).collect();
    let mut delta = DMatrix::zeros(spec.out_dim, spec.in_dim);
    kernel.combine_measurements(&coeffs, delta.as_mut_slice());

    let mut grads = vec![DMatrix::zeros(0, 0); d];
    for j in (1..d).rev() {
        grads[j] = &delta * post[j - 1].transpose();
        let back = ws.layers[j].transpose() * &delta;
        delta = back.zip_map(&pre[j - 1], |g, z| g * act.derivative(z));
    }
    grads[0] = delta;
    let w = pre.pop().expect("depth >= 2");
    Ok((loss, w, WeightSetting::new(grads)))
}

/// Gradient of the factorized training loss, shaped like the weights.
pub fn loss_gradient(spec: &FactorizationSpec, ws: &WeightSetting, inst: &ProblemInstance) -> Result<WeightSetting> {
    Ok(loss_and_gradient(spec, ws, inst)?.1)
}
