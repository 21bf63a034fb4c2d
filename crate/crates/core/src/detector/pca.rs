use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};

/// Principal components of a set of rows.
#[derive(Clone, Debug)]
pub struct PcaFit {
    /// Column means removed before projecting.
    pub mean: Vec<f64>,
    /// `q × r`, orthonormal columns in descending-variance order.
    pub projection: Matrix,
    /// `n × r` scores of the centered rows.
    pub scores: Matrix,
    /// Variance along each retained direction (sample covariance eigenvalues).
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

/// Full eigen-spectrum of the sample covariance of `rows`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub mean: Vec<f64>,
    pub values: Vec<f64>,
    pub vectors: Matrix,
    pub total_variance: f64,
}

pub(crate) fn spectrum(rows: &[Vec<f64>]) -> Result<Spectrum> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::config(format!("PCA needs at least 2 rows, got {n}")));
    }
    let q = rows[0].len();
    if q == 0 || rows.iter().any(|r| r.len() != q) {
        return Err(Error::config("PCA rows must share a non-zero width"));
    }
    let mut mean = vec![0.0; q];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(q, q);
    let mut centered = vec![0.0; q];
    for r in rows {
        for ((c, v), m) in centered.iter_mut().zip(r).zip(&mean) {
            *c = v - m;
        }
        for i in 0..q {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = cov.row_mut(i);
            for j in i..q {
                row[j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..q {
        for j in i..q {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let total_variance: f64 = (0..q).map(|i| cov[(i, i)]).sum();
    if !(total_variance > 0.0) {
        return Err(Error::config("rows have zero covariance; no principal directions exist"));
    }
    let eig = symmetric_eigen(&cov);
    let mut vectors = eig.vectors;
    // Sign convention: the largest-magnitude entry of each direction is positive.
    for j in 0..q {
        let mut best = 0;
        for i in 0..q {
            if vectors[(i, j)].abs() > vectors[(best, j)].abs() {
                best = i;
            }
        }
        if vectors[(best, j)] < 0.0 {
            for i in 0..q {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
    Ok(Spectrum {
        mean,
        values: eig.values.into_iter().map(|v| v.max(0.0)).collect(),
        vectors,
        total_variance,
    })
}

impl Spectrum {
    pub(crate) fn truncate(&self, rows: &[Vec<f64>], r: usize) -> PcaFit {
        let q = self.mean.len();
        let mut projection = Matrix::zeros(q, r);
        for i in 0..q {
            for j in 0..r {
                projection[(i, j)] = self.vectors[(i, j)];
            }
        }
        let mut scores = Matrix::zeros(rows.len(), r);
        let mut centered = vec![0.0; q];
        for (k, row) in rows.iter().enumerate() {
            for ((c, v), m) in centered.iter_mut().zip(row).zip(&self.mean) {
                *c = v - m;
            }
            let s = projection.tr_matvec(&centered);
            scores.row_mut(k).copy_from_slice(&s);
        }
        PcaFit {
            mean: self.mean.clone(),
            projection,
            scores,
            explained_variance: self.values[..r].to_vec(),
            total_variance: self.total_variance,
        }
    }
}

/// Fits `r` principal directions of the sample covariance of `rows`.
pub fn pca_fit(rows: &[Vec<f64>], r: usize) -> Result<PcaFit> {
    let n = rows.len();
    let q = rows.first().map_or(0, Vec::len);
    if r == 0 || r > n.saturating_sub(1).min(q) {
        return Err(Error::config(format!(
            "cannot keep {r} components from {n} rows of width {q} (need 1 <= r <= min(n-1, q))"
        )));
    }
    let s = spectrum(rows)?;
    Ok(s.truncate(rows, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn axis_aligned_points() {
        let rows = vec![vec![-2.0, 0.0], vec![0.0, 0.0], vec![3.0, 0.0]];
        let fit = pca_fit(&rows, 1).unwrap();
        assert_eq!(fit.projection.column(0), vec![1.0, 0.0]);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 4];
        assert!(matches!(pca_fit(&rows, 1), Err(Error::Config(_))));
    }

    #[test]
    fn too_many_components_is_config_error() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(pca_fit(&rows, 3), Err(Error::Config(_))));
        assert!(matches!(pca_fit(&rows, 0), Err(Error::Config(_))));
        assert!(pca_fit(&rows, 2).is_ok());
    }

    #[test]
    fn projection_is_orthonormal_and_scores_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..8).map(|_| rng.random_range(-3.0..5.0)).collect())
            .collect();
        let fit = pca_fit(&rows, 5).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let d = dot(&fit.projection.column(a), &fit.projection.column(b));
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-8);
            }
            let col = fit.scores.column(a);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-6);
            // Score variance equals the explained variance.
            let var = col.iter().map(|v| v * v).sum::<f64>() / (col.len() - 1) as f64;
            assert!((var - fit.explained_variance[a]).abs() < 1e-9 * var.max(1.0));
        }
        assert!(fit.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }
}
