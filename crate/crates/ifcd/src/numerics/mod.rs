//! Minimal dense linear algebra, MLPs with hand-written backprop, Adam,
//! softmax, scaled dot-product attention and 2-D PCA. Everything is f64 and
//! deterministic; the models upstream are tiny, so exactness wins over speed.

mod adam;
mod mlp;
mod pca;

pub use adam::{AdamHyper, AdamState};
pub use mlp::{mlp_backward, mlp_forward, Activation, ActivationCache, MlpGrads, MlpParams};
pub use pca::{pca_2d, silhouette_1d};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate point cloud")]
    DegeneratePointCloud,
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = A x, A: [rows x cols], x: [cols].
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec shape");
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += row[c] * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// y = A^T x, x: [rows].
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_t shape");
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xr = x[r];
            for c in 0..self.cols {
                y[c] += row[c] * xr;
            }
        }
        y
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot shape");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    assert_eq!(dst.len(), src.len(), "add_scaled shape");
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Lowest index wins on ties, everywhere.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::EmptyDistribution);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

/// Attention of one query over a key/value set: softmax(q.k_i / sqrt(d)) weighted
/// sum of values. Output is a convex combination of the values.
pub fn scaled_dot_attention(
    query: &[f64],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
) -> Result<Vec<f64>, NumericsError> {
    if keys.is_empty() || keys.len() != values.len() {
        return Err(NumericsError::DimensionMismatch { expected: keys.len(), got: values.len() });
    }
    let scale = 1.0 / (query.len() as f64).sqrt();
    let scores: Vec<f64> = keys.iter().map(|k| dot(query, k) * scale).collect();
    let weights = softmax(&scores)?;
    let mut out = vec![0.0; values[0].len()];
    for (w, v) in weights.iter().zip(values) {
        add_scaled(&mut out, v, *w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[0.0, 2.0f64.ln()]).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    // Frozen from an extended-precision (50-digit) evaluation of exp/sum
    // over the inputs [2.2, 1.0, -0.2].
    #[test]
    fn softmax_matches_scalar_oracle() {
        let p = softmax(&[2.2, 1.0, -0.2]).unwrap();
        let expected = [0.7184361377107102, 0.21638880630702365, 0.06517505598226614];
        for (got, want) in p.iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_empty_is_error() {
        assert_eq!(softmax(&[]), Err(NumericsError::EmptyDistribution));
    }

    #[test]
    fn softmax_stable_for_huge_logits() {
        let p = softmax(&[1e305, 1e305 - 1.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn attention_single_pair_returns_value() {
        let out = scaled_dot_attention(&[1.0, -2.0], &[vec![3.0, 4.0]], &[vec![5.0, 6.0]]).unwrap();
        assert_eq!(out, vec![5.0, 6.0]);
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let k = vec![0.3, -0.7];
        let out = scaled_dot_attention(
            &[1.0, 1.0],
            &[k.clone(), k],
            &[vec![2.0, 0.0], vec![0.0, 4.0]],
        )
        .unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!((out[1] - 2.0).abs() < 1e-15);
    }

    // Scalar re-implementation oracle for a 3-key draw (seed 11).
    #[test]
    fn attention_matches_scalar_oracle() {
        let mut rng = crate::rng::Rng::from_seed(11);
        let dim = 4;
        let q: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let keys: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
        let values: Vec<Vec<f64>> =
            (0..3).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();

        // oracle: explicit scalar loops, independent of softmax()
        let scale = 1.0 / (dim as f64).sqrt();
        let mut scores = [0.0; 3];
        for (i, k) in keys.iter().enumerate() {
            let mut s = 0.0;
            for d in 0..dim {
                s += q[d] * k[d];
            }
            scores[i] = s * scale;
        }
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let es: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = es.iter().sum();
        let mut expected = vec![0.0; dim];
        for (i, v) in values.iter().enumerate() {
            for d in 0..dim {
                expected[d] += es[i] / z * v[d];
            }
        }

        let got = scaled_dot_attention(&q, &keys, &values).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
