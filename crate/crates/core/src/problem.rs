//! Low-rank matrix sensing instances.
//!
//! An instance holds a ground truth `W*`, measurement matrices `A_i`,
//! labels `y_i = <A_i, W*>` and an orthonormal basis of the orthogonal
//! complement of `span{A_i}`. The training loss is the mean squared
//! residual on the measurements; the generalization loss is the mean
//! squared discrepancy with `W*` over the complement basis, which does not
//! depend on which orthonormal basis of the complement is used.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, Real};
use crate::rng::{self, tag, Seed, StreamFamily};

/// Residual norm (relative to the candidate's norm) below which a
/// Gram-Schmidt candidate counts as already spanned.
pub const GS_DROP_TOL: f64 = 1e-10;

const DEGENERATE_NORM: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Gaussian,
    Indicator,
}

impl std::str::FromStr for MeasurementKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "indicator" => Ok(Self::Indicator),
            other => Err(Error::invalid(format!("unknown measurement kind `{other}`"))),
        }
    }
}

/// Parameters that regenerate an instance deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub m: usize,
    pub m_prime: usize,
    pub rank: usize,
    pub norm: f64,
    pub n: usize,
    pub kind: MeasurementKind,
    pub seed: Seed,
}

impl ProblemParams {
    pub fn new(m: usize, m_prime: usize, rank: usize, norm: f64, n: usize, kind: MeasurementKind, seed: Seed) -> Self {
        Self { m, m_prime, rank, norm, n, kind, seed }
    }
}

/// Flat-buffer evaluator for both losses in a chosen precision.
#[derive(Clone, Debug)]
pub struct LossKernel<T> {
    dim: usize,
    measurement_rows: Vec<T>,
    labels: Vec<T>,
    basis_rows: Vec<T>,
    basis_targets: Vec<T>,
}

impl<T: Real> LossKernel<T> {
    fn build(measurements: &[DMatrix<f64>], labels: &[f64], basis: &[DMatrix<f64>], truth: &DMatrix<f64>) -> Self {
        let dim = truth.len();
        let flatten = |ms: &[DMatrix<f64>]| ms.iter().flat_map(|a| a.iter().map(|&x| T::of(x))).collect::<Vec<T>>();
        Self {
            dim,
            measurement_rows: flatten(measurements),
            labels: labels.iter().map(|&y| T::of(y)).collect(),
            basis_rows: flatten(basis),
            basis_targets: basis.iter().map(|b| T::of(linalg::frob_inner(b, truth))).collect(),
        }
    }

    /// Training loss of a column-major flattened matrix.
    #[inline]
    pub fn train(&self, w: &[T]) -> T {
        let mut acc = T::zero();
        for (row, &y) in self.measurement_rows.chunks_exact(self.dim).zip(&self.labels) {
            let r = dot(row, w) - y;
            acc = acc + r * r;
        }
        acc / T::of(self.labels.len() as f64)
    }

    /// Generalization loss of a column-major flattened matrix; `None` when
    /// the complement is trivial.
    #[inline]
    pub fn gen(&self, w: &[T]) -> Option<T> {
        if self.basis_targets.is_empty() {
            return None;
        }
        let mut acc = T::zero();
        for (row, &t) in self.basis_rows.chunks_exact(self.dim).zip(&self.basis_targets) {
            let r = dot(row, w) - t;
            acc = acc + r * r;
        }
        Some(acc / T::of(self.basis_targets.len() as f64))
    }

    /// Residuals `<A_i, W> - y_i`.
    pub fn residuals(&self, w: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.measurement_rows.chunks_exact(self.dim).zip(&self.labels).map(|(row, &y)| dot(row, w) - y));
    }

    /// `sum_i coeff_i * A_i`, column-major.
    pub fn combine_measurements(&self, coeffs: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|x| *x = T::zero());
        for (row, &c) in self.measurement_rows.chunks_exact(self.dim).zip(coeffs) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o = *o + c * a;
            }
        }
    }

    pub fn num_measurements(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    params: ProblemParams,
    ground_truth: DMatrix<f64>,
    measurements: Vec<DMatrix<f64>>,
    labels: Vec<f64>,
    complement_basis: Vec<DMatrix<f64>>,
    kernel64: LossKernel<f64>,
    kernel32: LossKernel<f32>,
}

impl ProblemInstance {
    /// Generates the ground truth and measurements from `params.seed` and
    /// builds the complement basis by Gram-Schmidt.
    pub fn generate(params: &ProblemParams) -> Result<Self> {
        let truth = make_ground_truth(
            params.m,
            params.m_prime,
            params.rank,
            params.norm,
            rng::derive(params.seed, &[tag::GROUND_TRUTH]),
        )?;
        let measurements = make_measurements(
            params.m,
            params.m_prime,
            params.n,
            params.kind,
            rng::derive(params.seed, &[tag::MEASUREMENTS]),
        )?;
        let basis = make_complement_basis(&measurements)?;
        Self::assemble(params.clone(), truth, measurements, basis)
    }

    /// Builds an instance from an explicit ground truth and measurement list.
    pub fn from_parts(ground_truth: DMatrix<f64>, measurements: Vec<DMatrix<f64>>) -> Result<Self> {
        let basis = make_complement_basis_checked(&measurements, ground_truth.shape())?;
        Self::from_parts_with_basis(ground_truth, measurements, basis)
    }

    /// Same as [`from_parts`](Self::from_parts) with a caller-supplied
    /// complement basis (assumed orthonormal and orthogonal to the
    /// measurements).
    pub fn from_parts_with_basis(
        ground_truth: DMatrix<f64>,
        measurements: Vec<DMatrix<f64>>,
        basis: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let (m, m_prime) = ground_truth.shape();
        let kind = if measurements.iter().all(is_one_hot) {
            MeasurementKind::Indicator
        } else {
            MeasurementKind::Gaussian
        };
        let sv = linalg::singular_values(&ground_truth)?;
        let top = sv.first().copied().unwrap_or(0.0);
        let rank = sv.iter().filter(|&&s| s > 1e-10 * top.max(f64::MIN_POSITIVE)).count();
        let params = ProblemParams {
            m,
            m_prime,
            rank,
            norm: ground_truth.norm(),
            n: measurements.len(),
            kind,
            seed: 0,
        };
        Self::assemble(params, ground_truth, measurements, basis)
    }

    fn assemble(
        params: ProblemParams,
        ground_truth: DMatrix<f64>,
        measurements: Vec<DMatrix<f64>>,
        complement_basis: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if measurements.is_empty() {
            return Err(Error::invalid("at least one measurement is required"));
        }
        let shape = ground_truth.shape();
        for a in measurements.iter().chain(&complement_basis) {
            linalg::check_shape(a, shape)?;
        }
        let labels: Vec<f64> = measurements.iter().map(|a| linalg::frob_inner(a, &ground_truth)).collect();
        let kernel64 = LossKernel::build(&measurements, &labels, &complement_basis, &ground_truth);
        let kernel32 = LossKernel::build(&measurements, &labels, &complement_basis, &ground_truth);
        Ok(Self {
            params,
            ground_truth,
            measurements,
            labels,
            complement_basis,
            kernel64,
            kernel32,
        })
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }
    pub fn shape(&self) -> (usize, usize) {
        self.ground_truth.shape()
    }
    pub fn ground_truth(&self) -> &DMatrix<f64> {
        &self.ground_truth
    }
    pub fn measurements(&self) -> &[DMatrix<f64>] {
        &self.measurements
    }
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
    pub fn complement_basis(&self) -> &[DMatrix<f64>] {
        &self.complement_basis
    }
    pub fn kernel64(&self) -> &LossKernel<f64> {
        &self.kernel64
    }
    pub fn kernel32(&self) -> &LossKernel<f32> {
        &self.kernel32
    }

    /// Serializes dims, meta and row-major matrices to JSON.
    pub fn to_json(&self) -> Result<String> {
        let doc = InstanceDoc {
            params: self.params.clone(),
            ground_truth: MatrixDoc::from(&self.ground_truth),
            measurements: self.measurements.iter().map(MatrixDoc::from).collect(),
            labels: self.labels.clone(),
            complement_basis: self.complement_basis.iter().map(MatrixDoc::from).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(text)?;
        let truth = doc.ground_truth.to_matrix()?;
        let measurements = doc.measurements.iter().map(MatrixDoc::to_matrix).collect::<Result<Vec<_>>>()?;
        let basis = doc.complement_basis.iter().map(MatrixDoc::to_matrix).collect::<Result<Vec<_>>>()?;
        let inst = Self::assemble(doc.params, truth, measurements, basis)?;
        if doc.labels.len() != inst.labels.len()
            || doc.labels.iter().zip(&inst.labels).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs()))
        {
            return Err(Error::Malformed("labels disagree with ground truth and measurements".into()));
        }
        Ok(inst)
    }
}

/// JSON form of a matrix: row-major data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixDoc {
    fn from(m: &DMatrix<f64>) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: linalg::to_row_major(m) }
    }
}

impl MatrixDoc {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        linalg::from_row_major(self.rows, self.cols, &self.data)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    params: ProblemParams,
    ground_truth: MatrixDoc,
    measurements: Vec<MatrixDoc>,
    labels: Vec<f64>,
    complement_basis: Vec<MatrixDoc>,
}

fn is_one_hot(a: &DMatrix<f64>) -> bool {
    let ones = a.iter().filter(|&&x| x == 1.0).count();
    let zeros = a.iter().filter(|&&x| x == 0.0).count();
    ones == 1 && ones + zeros == a.len()
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `W* = (b / ||UV||_F) UV` with standard Gaussian `U` (`m x r`) and `V` (`r x m'`).
pub fn make_ground_truth(m: usize, m_prime: usize, r: usize, b: f64, seed: Seed) -> Result<DMatrix<f64>> {
    if r == 0 || r > m.min(m_prime) {
        return Err(Error::invalid(format!("rank {r} must lie in 1..={}", m.min(m_prime))));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!("ground truth norm must be positive, got {b}")));
    }
    let mut rng = rng::seeded(seed);
    loop {
        let u = gaussian_matrix(&mut rng, m, r);
        let v = gaussian_matrix(&mut rng, r, m_prime);
        let uv = u * v;
        let nrm = uv.norm();
        if nrm >= DEGENERATE_NORM {
            return Ok(uv * (b / nrm));
        }
    }
}

/// `n` measurement matrices: unit-norm Gaussian, or distinct one-hot
/// indicators drawn without replacement.
pub fn make_measurements(m: usize, m_prime: usize, n: usize, kind: MeasurementKind, seed: Seed) -> Result<Vec<DMatrix<f64>>> {
    if n == 0 {
        return Err(Error::invalid("need at least one measurement"));
    }
    if m == 0 || m_prime == 0 {
        return Err(Error::invalid("matrix dimensions must be positive"));
    }
    let mut rng = rng::seeded(seed);
    match kind {
        MeasurementKind::Gaussian => Ok((0..n)
            .map(|_| loop {
                let a = gaussian_matrix(&mut rng, m, m_prime);
                let nrm = a.norm();
                if nrm >= DEGENERATE_NORM {
                    break a / nrm;
                }
            })
            .collect()),
        MeasurementKind::Indicator => {
            let cells = m * m_prime;
            if n > cells {
                return Err(Error::TooManyIndicators { requested: n, available: cells });
            }
            Ok(index::sample(&mut rng, cells, n)
                .into_iter()
                .map(|c| {
                    let mut a = DMatrix::zeros(m, m_prime);
                    a[(c / m_prime, c % m_prime)] = 1.0;
                    a
                })
                .collect())
        }
    }
}

/// Orthonormal basis of the orthogonal complement of the measurement span,
/// completing with the standard basis `E_11, E_12, ...` in row-major order.
pub fn make_complement_basis(measurements: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let shape = measurements
        .first()
        .ok_or_else(|| Error::invalid("measurement list is empty"))?
        .shape();
    make_complement_basis_checked(measurements, shape)
}

fn make_complement_basis_checked(measurements: &[DMatrix<f64>], shape: (usize, usize)) -> Result<Vec<DMatrix<f64>>> {
    let order: Vec<usize> = (0..shape.0 * shape.1).collect();
    complement_basis_with_order(measurements, shape, &order)
}

/// Complement basis where the standard-basis candidates are visited in
/// `order` (row-major cell indices). Different orders give different
/// orthonormal bases of the same subspace.
pub fn complement_basis_with_order(
    measurements: &[DMatrix<f64>],
    shape: (usize, usize),
    order: &[usize],
) -> Result<Vec<DMatrix<f64>>> {
    let (m, mp) = shape;
    let cells = m * mp;
    let mut seen = vec![false; cells];
    for &c in order {
        if c >= cells || std::mem::replace(&mut seen[c], true) {
            return Err(Error::invalid("completion order must be a permutation of the grid cells"));
        }
    }
    if order.len() != cells {
        return Err(Error::invalid("completion order must cover every grid cell"));
    }
    for a in measurements {
        linalg::check_shape(a, shape)?;
    }
    let mut candidates: Vec<Vec<f64>> = measurements.iter().map(|a| a.as_slice().to_vec()).collect();
    for &c in order {
        let mut e = DMatrix::<f64>::zeros(m, mp);
        e[(c / mp, c % mp)] = 1.0;
        candidates.push(e.as_slice().to_vec());
    }
    let ortho = linalg::gram_schmidt(&candidates, GS_DROP_TOL);
    Ok(ortho
        .into_iter()
        .skip(measurements.len())
        .flatten()
        .map(|v| DMatrix::from_vec(m, mp, v))
        .collect())
}

fn check_instance_shape(w: &DMatrix<f64>, inst: &ProblemInstance) -> Result<()> {
    linalg::check_shape(w, inst.shape())
}

/// `(1/n) sum_i (<A_i, W> - y_i)^2`.
pub fn train_loss(w: &DMatrix<f64>, inst: &ProblemInstance) -> Result<f64> {
    check_instance_shape(w, inst)?;
    Ok(inst.kernel64.train(w.as_slice()))
}

/// `(1/|B|) sum_{A in B} (<A, W> - <A, W*>)^2`.
pub fn gen_loss(w: &DMatrix<f64>, inst: &ProblemInstance) -> Result<f64> {
    check_instance_shape(w, inst)?;
    inst.kernel64.gen(w.as_slice()).ok_or(Error::GenUndefined)
}

/// Sampled lower bound on the restricted isometry constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    pub order: usize,
    pub delta_hat: f64,
    pub samples_used: usize,
    /// Always `false`: the estimate comes from sampling and only bounds
    /// the true constant from below.
    pub certified: bool,
}

/// Draws `samples` unit-norm rank-`order` matrices (normalized products of
/// Gaussian factors) and records the largest `| ||A(W)||^2 - 1 |`.
pub fn estimate_rip(measurements: &[DMatrix<f64>], order: usize, samples: usize, seed: Seed) -> Result<RipEstimate> {
    if order == 0 || samples == 0 {
        return Err(Error::invalid("order and samples must be at least 1"));
    }
    let (m, mp) = measurements
        .first()
        .ok_or_else(|| Error::invalid("measurement list is empty"))?
        .shape();
    for a in measurements {
        linalg::check_shape(a, (m, mp))?;
    }
    let family = StreamFamily::new(seed);
    let mut delta_hat: f64 = 0.0;
    for i in 0..samples {
        let mut rng = family.stream(i as u64);
        let w = loop {
            let u = gaussian_matrix(&mut rng, m, order);
            let v = gaussian_matrix(&mut rng, order, mp);
            let uv = u * v;
            let nrm = uv.norm();
            if nrm >= DEGENERATE_NORM {
                break uv / nrm;
            }
        };
        let energy: f64 = measurements.iter().map(|a| linalg::frob_inner(a, &w).powi(2)).sum();
        delta_hat = delta_hat.max((energy - 1.0).abs());
    }
    Ok(RipEstimate { order, delta_hat, samples_used: samples, certified: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(m: usize, mp: usize, i: usize, j: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(m, mp);
        a[(i, j)] = 1.0;
        a
    }

    #[test]
    fn ground_truth_rank_one_unit_norm() {
        let w = make_ground_truth(5, 5, 1, 1.0, 3).unwrap();
        assert!((w.norm() - 1.0).abs() < 1e-12);
        let s = linalg::singular_values(&w).unwrap();
        assert!(s[1] < 1e-12 * s[0]);
    }

    #[test]
    fn ground_truth_full_rank_2x2() {
        let w = make_ground_truth(2, 2, 2, 1.0, 11).unwrap();
        assert!((w.norm() - 1.0).abs() < 1e-12);
        assert!(w.determinant().abs() > 1e-8);
    }

    #[test]
    fn ground_truth_rank_two_of_three() {
        let w = make_ground_truth(3, 3, 2, 1.0, 5).unwrap();
        let s = linalg::singular_values(&w).unwrap();
        assert!(s[2] < 1e-12, "third singular value {}", s[2]);
        assert!(s[1] > 1e-6);
    }

    #[test]
    fn ground_truth_rejects_bad_rank_and_norm() {
        assert!(make_ground_truth(3, 3, 0, 1.0, 0).is_err());
        assert!(make_ground_truth(3, 2, 3, 1.0, 0).is_err());
        assert!(make_ground_truth(3, 3, 1, 0.0, 0).is_err());
    }

    #[test]
    fn gaussian_measurements_unit_norm_distinct() {
        for n in [15, 22] {
            let ms = make_measurements(5, 5, n, MeasurementKind::Gaussian, 9).unwrap();
            assert_eq!(ms.len(), n);
            for (i, a) in ms.iter().enumerate() {
                assert!((a.norm() - 1.0).abs() < 1e-12);
                for b in &ms[i + 1..] {
                    assert!((a - b).norm() > 1e-6);
                }
            }
        }
    }

    #[test]
    fn indicator_measurements_exhaust_grid() {
        let ms = make_measurements(2, 2, 4, MeasurementKind::Indicator, 1).unwrap();
        let mut cells: Vec<(usize, usize)> = ms
            .iter()
            .map(|a| {
                assert!(is_one_hot(a));
                let idx = a.iter().position(|&x| x == 1.0).unwrap();
                (idx % 2, idx / 2)
            })
            .collect();
        cells.sort();
        assert_eq!(cells, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn too_many_indicators() {
        let err = make_measurements(2, 2, 5, MeasurementKind::Indicator, 1).unwrap_err();
        assert!(err.to_string().contains("too many indicator measurements"));
    }

    #[test]
    fn complement_sizes() {
        let ms = make_measurements(5, 5, 15, MeasurementKind::Gaussian, 2).unwrap();
        assert_eq!(make_complement_basis(&ms).unwrap().len(), 10);

        let all = make_measurements(3, 2, 6, MeasurementKind::Indicator, 2).unwrap();
        assert!(make_complement_basis(&all).unwrap().is_empty());

        let a = make_measurements(2, 2, 1, MeasurementKind::Gaussian, 4).unwrap().remove(0);
        assert_eq!(make_complement_basis(&[a.clone(), a]).unwrap().len(), 3);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal_to_measurements() {
        let inst = ProblemInstance::generate(&ProblemParams::new(5, 4, 2, 1.0, 9, MeasurementKind::Gaussian, 77)).unwrap();
        let b = inst.complement_basis();
        for (i, x) in b.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((linalg::frob_inner(x, y) - want).abs() <= 1e-10);
            }
            for a in inst.measurements() {
                assert!(linalg::frob_inner(x, a).abs() <= 1e-10);
            }
        }
        for (a, y) in inst.measurements().iter().zip(inst.labels()) {
            assert!((linalg::frob_inner(a, inst.ground_truth()) - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn train_loss_hand_example() {
        let mut truth = DMatrix::zeros(2, 2);
        truth[(0, 0)] = 0.5;
        let inst = ProblemInstance::from_parts(truth, vec![e(2, 2, 0, 0)]).unwrap();
        let mut w = DMatrix::zeros(2, 2);
        w[(0, 0)] = 0.7;
        assert!((train_loss(&w, &inst).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(inst.params().kind, MeasurementKind::Indicator);
    }

    #[test]
    fn losses_at_truth_and_zero() {
        let inst = ProblemInstance::generate(&ProblemParams::new(5, 5, 1, 1.0, 15, MeasurementKind::Gaussian, 4)).unwrap();
        let truth = inst.ground_truth().clone();
        assert_eq!(train_loss(&truth, &inst).unwrap(), 0.0);
        assert_eq!(gen_loss(&truth, &inst).unwrap(), 0.0);
        let zero = DMatrix::zeros(5, 5);
        let want = inst.labels().iter().map(|y| y * y).sum::<f64>() / 15.0;
        assert!((train_loss(&zero, &inst).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn gen_loss_measurement_and_basis_directions() {
        let inst = ProblemInstance::generate(&ProblemParams::new(5, 5, 1, 1.0, 15, MeasurementKind::Gaussian, 8)).unwrap();
        let truth = inst.ground_truth();
        let along = truth + &inst.measurements()[0];
        assert!(gen_loss(&along, &inst).unwrap() < 1e-24);
        let c = 0.3;
        let off = truth + &inst.complement_basis()[0] * c;
        let want = c * c / inst.complement_basis().len() as f64;
        assert!((gen_loss(&off, &inst).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn gen_loss_undefined_when_measurements_span() {
        let truth = DMatrix::from_element(1, 2, 0.5);
        let inst = ProblemInstance::from_parts(truth.clone(), vec![e(1, 2, 0, 0), e(1, 2, 0, 1)]).unwrap();
        let err = gen_loss(&truth, &inst).unwrap_err();
        assert_eq!(err.to_string(), "generalization undefined: measurements span the space");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let inst = ProblemInstance::generate(&ProblemParams::new(3, 3, 1, 1.0, 4, MeasurementKind::Gaussian, 8)).unwrap();
        assert!(matches!(train_loss(&DMatrix::zeros(2, 3), &inst), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn rip_is_zero_on_full_indicator_grid() {
        let ms = make_measurements(3, 3, 9, MeasurementKind::Indicator, 0).unwrap();
        for order in 1..=3 {
            let est = estimate_rip(&ms, order, 200, 5).unwrap();
            assert!(est.delta_hat <= 1e-12);
            assert!(!est.certified);
        }
    }

    #[test]
    fn rip_single_measurement_finds_near_null_direction() {
        let ms = make_measurements(2, 2, 1, MeasurementKind::Gaussian, 0).unwrap();
        let est = estimate_rip(&ms, 1, 100_000, 5).unwrap();
        assert!(est.delta_hat >= 1.0 - 1e-6, "{}", est.delta_hat);
    }

    #[test]
    fn rip_nondecreasing_in_samples() {
        let ms = make_measurements(5, 5, 15, MeasurementKind::Gaussian, 3).unwrap();
        let mut last = 0.0;
        for s in [1, 10, 100, 1000] {
            let d = estimate_rip(&ms, 2, s, 17).unwrap().delta_hat;
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn json_round_trip() {
        let inst = ProblemInstance::generate(&ProblemParams::new(3, 4, 1, 2.0, 5, MeasurementKind::Gaussian, 12)).unwrap();
        let text = inst.to_json().unwrap();
        let back = ProblemInstance::from_json(&text).unwrap();
        assert_eq!(back.params(), inst.params());
        assert!((back.ground_truth() - inst.ground_truth()).norm() == 0.0);
        assert_eq!(back.complement_basis().len(), inst.complement_basis().len());
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["ground_truth"]["rows"], 3);
        assert_eq!(v["ground_truth"]["data"].as_array().unwrap().len(), 12);
    }
}
