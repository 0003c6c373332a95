//! Two-component principal projection for plotting feature vectors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `(x, y)` per input row.
    pub coords: Vec<[f64; 2]>,
    /// Eigenvalues of the standardized covariance, descending.
    pub explained_variance: [f64; 2],
    /// Share of total standardized variance per component.
    pub explained_variance_ratio: [f64; 2],
    /// Input columns that survived the constant-column filter.
    pub columns_used: Vec<usize>,
    /// Unit loading vectors over `columns_used`.
    pub components: [Vec<f64>; 2],
}

/// Standardizes columns (sample variance, constant columns dropped) and
/// projects onto the two leading eigenvectors of their covariance. Each
/// component is signed so that its largest-magnitude loading is positive.
pub fn pca_project(rows: &[Vec<f64>]) -> Result<Projection> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "projection needs at least 2 rows, got {n}"
        )));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::ShapeMismatch("ragged feature rows".into()));
    }
    let columns_used: Vec<usize> = (0..width)
        .filter(|&c| rows.iter().any(|r| r[c] != rows[0][c]))
        .collect();
    if columns_used.is_empty() {
        return Err(Error::DegenerateInput("every column is constant".into()));
    }
    let d = columns_used.len();

    let mut z = DMatrix::<f64>::zeros(n, d);
    for (j, &c) in columns_used.iter().enumerate() {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        for (i, r) in rows.iter().enumerate() {
            z[(i, j)] = (r[c] - mean) / sd;
        }
    }
    let cov = z.transpose() * &z / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();

    let mut components = [vec![0.0; d], vec![0.0; d]];
    let mut explained_variance = [0.0; 2];
    let mut explained_variance_ratio = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            })
            .1;
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let lambda = eig.eigenvalues[idx].max(0.0);
        explained_variance[k] = lambda;
        explained_variance_ratio[k] = if total > 0.0 { lambda / total } else { 0.0 };
        components[k] = v;
    }

    let coords = (0..n)
        .map(|i| {
            let mut xy = [0.0; 2];
            for (k, comp) in components.iter().enumerate() {
                xy[k] = (0..d).map(|j| z[(i, j)] * comp[j]).sum();
            }
            xy
        })
        .collect();

    Ok(Projection {
        coords,
        explained_variance,
        explained_variance_ratio,
        columns_used,
        components,
    })
}
