//! Reference computations written independently of the library code.
#![allow(dead_code)]

use gnc_lab::{forward, FactorizationSpec, ProblemInstance, WeightSetting};
use nalgebra::{DMatrix, DVector};

/// Training loss straight from the definition.
pub fn train_loss_oracle(w: &DMatrix<f64>, inst: &ProblemInstance) -> f64 {
    let ms = inst.measurements();
    let truth = inst.ground_truth();
    ms.iter().map(|a| (a.dot(w) - a.dot(truth)).powi(2)).sum::<f64>() / ms.len() as f64
}

/// Generalization loss via an orthogonal projector built from a
/// pseudo-inverse instead of Gram-Schmidt: `||P_perp (W - W*)||^2 / dim`.
pub fn gen_loss_oracle(w: &DMatrix<f64>, inst: &ProblemInstance) -> f64 {
    let diff = w - inst.ground_truth();
    let ms = inst.measurements();
    let dim = diff.len();
    let a = DMatrix::from_fn(ms.len(), dim, |i, j| ms[i].as_slice()[j]);
    let svd = a.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let v_t = svd.v_t.unwrap();
    let x = DVector::from_column_slice(diff.as_slice());
    let mut in_span = DVector::zeros(dim);
    for r in 0..rank {
        let row = v_t.row(r).transpose();
        in_span += &row * row.dot(&x);
    }
    (x - in_span).norm_squared() / (dim - rank) as f64
}

/// Central differences of the factorized training loss.
pub fn fd_gradient(spec: &FactorizationSpec, ws: &WeightSetting, inst: &ProblemInstance, h: f64) -> Vec<DMatrix<f64>> {
    let loss = |ws: &WeightSetting| train_loss_oracle(&forward(spec, ws).unwrap(), inst);
    ws.layers
        .iter()
        .enumerate()
        .map(|(j, layer)| {
            DMatrix::from_fn(layer.nrows(), layer.ncols(), |r, c| {
                let mut plus = ws.clone();
                plus.layers[j][(r, c)] += h;
                let mut minus = ws.clone();
                minus.layers[j][(r, c)] -= h;
                (loss(&plus) - loss(&minus)) / (2.0 * h)
            })
        })
        .collect()
}

/// Quantile by sorting and linear interpolation between order statistics.
pub fn quantile_oracle(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Spearman correlation from counted average ranks.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
