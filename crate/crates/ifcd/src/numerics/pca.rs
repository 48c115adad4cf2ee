//! 2-D PCA via cyclic Jacobi eigendecomposition of the covariance matrix.
//! Dimensions stay in the tens here, so Jacobi beats pulling in a solver.

use super::{Matrix, NumericsError};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Projects mean-centered points onto their top-2 principal components.
/// Deterministic up to the sign of each axis; each eigenvector's sign is
/// fixed so its largest-magnitude entry is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>, NumericsError> {
    if points.len() < 3 {
        return Err(NumericsError::DimensionMismatch { expected: 3, got: points.len() });
    }
    let dim = points[0].len();
    if dim < 2 || points.iter().any(|p| p.len() != dim) {
        return Err(NumericsError::DimensionMismatch { expected: dim.max(2), got: dim });
    }

    let n = points.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        super::add_scaled(&mut mean, p, 1.0 / n);
    }
    let centered: Vec<Vec<f64>> =
        points.iter().map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();

    let mut cov = Matrix::zeros(dim, dim);
    for p in &centered {
        for r in 0..dim {
            for c in r..dim {
                *cov.at_mut(r, c) += p[r] * p[c] / n;
            }
        }
    }
    for r in 0..dim {
        for c in 0..r {
            *cov.at_mut(r, c) = cov.at(c, r);
        }
    }

    let (eigvals, eigvecs) = jacobi_eigen(&mut cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap().then(a.cmp(&b)));
    if eigvals[order[0]] <= 1e-18 {
        return Err(NumericsError::DegeneratePointCloud);
    }

    let axis = |idx: usize| -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|r| eigvecs.at(r, idx)).collect();
        let lead = (0..dim).max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap()).unwrap();
        if v[lead] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        v
    };
    let a0 = axis(order[0]);
    let a1 = axis(order[1]);

    Ok(centered.iter().map(|p| (super::dot(p, &a0), super::dot(p, &a1))).collect())
}

/// Cyclic Jacobi rotations; returns (eigenvalues, column eigenvectors).
fn jacobi_eigen(a: &mut Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows;
    let mut v = Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 });
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| a.at(r, c) * a.at(r, c))
            .sum();
        if off.sqrt() < JACOBI_TOL {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() < JACOBI_TOL * 1e-3 {
                    continue;
                }
                let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    *a.at_mut(k, p) = c * akp - s * akq;
                    *a.at_mut(k, q) = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    *a.at_mut(p, k) = c * apk - s * aqk;
                    *a.at_mut(q, k) = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| a.at(i, i)).collect();
    (eig, v)
}

/// Mean silhouette coefficient of a labeled 1-D projection; near 1 means the
/// two groups are well separated along the axis.
pub fn silhouette_1d(xs: &[f64], labels: &[bool]) -> f64 {
    let mut total = 0.0;
    for i in 0..xs.len() {
        let (mut same, mut same_n, mut other, mut other_n) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for j in 0..xs.len() {
            if i == j {
                continue;
            }
            let d = (xs[i] - xs[j]).abs();
            if labels[i] == labels[j] {
                same += d;
                same_n += 1.0;
            } else {
                other += d;
                other_n += 1.0;
            }
        }
        let a = same / same_n.max(1.0);
        let b = other / other_n.max(1.0);
        total += (b - a) / a.max(b);
    }
    total / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn recovers_axis_aligned_2d_data() {
        // variance 8 along x, 0.5 along y
        let points = vec![
            vec![4.0, 0.5],
            vec![-4.0, 0.5],
            vec![2.0, -0.5],
            vec![-2.0, -0.5],
        ];
        let proj = pca_2d(&points).unwrap();
        // first component is x (up to sign), second is y
        for (p, orig) in proj.iter().zip(&points) {
            assert!((p.0.abs() - orig[0].abs()).abs() < 1e-9, "{p:?} vs {orig:?}");
        }
    }

    #[test]
    fn separates_two_clusters_in_10d() {
        let mut rng = Rng::from_seed(5);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let offset = if i % 2 == 0 { 5.0 } else { -5.0 };
            let mut p: Vec<f64> = (0..10).map(|_| rng.normal() * 0.3).collect();
            p[3] += offset;
            points.push(p);
            labels.push(i % 2 == 0);
        }
        let proj = pca_2d(&points).unwrap();
        let xs: Vec<f64> = proj.iter().map(|p| p.0).collect();
        assert!(silhouette_1d(&xs, &labels) > 0.8);
    }

    #[test]
    fn projections_are_mean_centered() {
        let mut rng = Rng::from_seed(8);
        let points: Vec<Vec<f64>> =
            (0..20).map(|_| (0..5).map(|_| rng.normal() + 2.0).collect()).collect();
        let proj = pca_2d(&points).unwrap();
        let mx: f64 = proj.iter().map(|p| p.0).sum::<f64>() / proj.len() as f64;
        let my: f64 = proj.iter().map(|p| p.1).sum::<f64>() / proj.len() as f64;
        assert!(mx.abs() < 1e-9 && my.abs() < 1e-9);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let points = vec![vec![1.0, 2.0]; 5];
        assert_eq!(pca_2d(&points), Err(NumericsError::DegeneratePointCloud));
    }

    #[test]
    fn permutation_invariant_up_to_nothing() {
        let mut rng = Rng::from_seed(13);
        let points: Vec<Vec<f64>> =
            (0..15).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
        let proj = pca_2d(&points).unwrap();
        let mut perm: Vec<usize> = (0..points.len()).collect();
        perm.reverse();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
        let proj_p = pca_2d(&permuted).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert!((proj_p[i].0 - proj[src].0).abs() < 1e-9);
            assert!((proj_p[i].1 - proj[src].1).abs() < 1e-9);
        }
    }
}
