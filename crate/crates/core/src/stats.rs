//! Order statistics, rank correlation and a mergeable bottom-k sample.

use serde::{Deserialize, Serialize};

/// Type-7 quantile (linear interpolation between order statistics) of an
/// ascending slice. Returns `None` for an empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn sorted_finite(values: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile_sorted(&sorted_finite(values), 0.5)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Quartiles {
    /// Quartiles of the finite values; `None` when there are none.
    pub fn of(values: &[f64]) -> Option<Self> {
        let s = sorted_finite(values);
        Some(Self {
            q25: quantile_sorted(&s, 0.25)?,
            median: quantile_sorted(&s, 0.5)?,
            q75: quantile_sorted(&s, 0.75)?,
        })
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` if fewer than two points or a
/// constant series.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

/// Standard error of a binomial proportion estimated from `n` trials.
pub fn binomial_se(p: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Bottom-k sample keyed by a per-item pseudo-random priority.
///
/// Keeping the `cap` smallest priorities yields a uniform subset whose
/// content does not depend on insertion or merge order.
#[derive(Clone, Debug, Default)]
pub struct BottomK {
    cap: usize,
    items: Vec<(u64, u64, f64)>,
    seen: u64,
}

impl BottomK {
    pub fn new(cap: usize) -> Self {
        Self { cap, items: Vec::new(), seen: 0 }
    }

    pub fn push(&mut self, priority: u64, index: u64, value: f64) {
        self.seen += 1;
        self.items.push((priority, index, value));
        if self.items.len() > 2 * self.cap.max(1) {
            self.compact();
        }
    }

    pub fn merge(&mut self, other: BottomK) {
        self.seen += other.seen;
        self.items.extend(other.items);
        self.compact();
    }

    fn compact(&mut self) {
        self.items.sort_unstable_by_key(|&(p, i, _)| (p, i));
        self.items.truncate(self.cap);
    }

    /// Whether every pushed item was retained.
    pub fn is_complete(&self) -> bool {
        self.seen as usize <= self.cap
    }

    /// Retained `(index, value)` pairs in index order.
    pub fn into_sorted_by_index(mut self) -> Vec<(u64, f64)> {
        self.compact();
        let mut v: Vec<(u64, f64)> = self.items.into_iter().map(|(_, i, x)| (i, x)).collect();
        v.sort_by_key(|&(i, _)| i);
        v
    }
}
