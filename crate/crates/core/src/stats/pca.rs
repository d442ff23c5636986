//! Two-component PCA via cyclic Jacobi eigendecomposition of the covariance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2d {
    /// n × 2 projected coordinates.
    pub coords: Vec<[f64; 2]>,
    /// Variance along PC1 and PC2 (the two largest covariance eigenvalues).
    pub explained_variance: [f64; 2],
    /// Trace of the covariance matrix.
    pub total_variance: f64,
    /// Unit loading vectors for PC1 and PC2.
    pub components: [Vec<f64>; 2],
}

impl Pca2d {
    pub fn explained_ratio(&self) -> [f64; 2] {
        if self.total_variance <= 0.0 {
            return [0.0, 0.0];
        }
        [
            self.explained_variance[0] / self.total_variance,
            self.explained_variance[1] / self.total_variance,
        ]
    }
}

/// Eigen-decomposition of a symmetric matrix (row-major, `d × d`).
///
/// Returns eigenvalues sorted descending and the matching eigenvectors, each
/// flipped so its largest-magnitude entry is positive.
pub fn jacobi_eigen(matrix: &[f64], d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), d * d);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|j| {
            let mut vec: Vec<f64> = (0..d).map(|i| v[i * d + j]).collect();
            let mut best = 0;
            for i in 1..d {
                if vec[i].abs() > vec[best].abs() {
                    best = i;
                }
            }
            if vec[best] < 0.0 {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
            (a[j * d + j], vec)
        })
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs.into_iter().unzip()
}

/// Project rows onto the top two principal components of their covariance.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca2d> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidInput("pca needs at least 2 rows".into()));
    }
    let d = rows[0].len();
    if d < 2 {
        return Err(Error::InvalidInput("pca needs at least 2 columns".into()));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput("pca rows have unequal length".into()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let (values, vectors) = jacobi_eigen(&cov, d);
    let pc1 = vectors[0].clone();
    let pc2 = vectors[1].clone();
    let coords = centered
        .iter()
        .map(|r| {
            [
                r.iter().zip(&pc1).map(|(x, w)| x * w).sum(),
                r.iter().zip(&pc2).map(|(x, w)| x * w).sum(),
            ]
        })
        .collect();
    Ok(Pca2d {
        coords,
        explained_variance: [values[0].max(0.0), values[1].max(0.0)],
        total_variance,
        components: [pc1, pc2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let (vals, vecs) = jacobi_eigen(&[1.0, 0.0, 0.0, 3.0], 2);
        assert_eq!(vals, vec![3.0, 1.0]);
        assert_eq!(vecs[0], vec![0.0, 1.0]);
    }

    #[test]
    fn reconstructs_symmetric_matrix() {
        let m = [4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 5.0];
        let (vals, vecs) = jacobi_eigen(&m, 3);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| vals[k] * vecs[k][i] * vecs[k][j]).sum();
                assert!((r - m[i * 3 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn collinear_rows_are_rank_one() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -1.0 * i as f64]).collect();
        let p = pca_2d(&rows).unwrap();
        assert!(p.explained_variance[1].abs() < 1e-12);
        assert!((p.explained_ratio()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_rows_give_zero() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 4];
        let p = pca_2d(&rows).unwrap();
        assert_eq!(p.explained_variance, [0.0, 0.0]);
        assert!(p.coords.iter().all(|c| c[0] == 0.0 && c[1] == 0.0));
    }

    #[test]
    fn too_small_is_error() {
        assert!(pca_2d(&[vec![1.0, 2.0]]).is_err());
        assert!(pca_2d(&[vec![1.0], vec![2.0]]).is_err());
    }
}
