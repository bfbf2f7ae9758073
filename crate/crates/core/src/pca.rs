//! Principal-component compression of concatenated FRF vectors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal principal directions, one row per component.
    pub components: Vec<Vec<f64>>,
    /// Fraction of total variance along each component, descending.
    pub explained_ratios: Vec<f64>,
    pub total_dim: usize,
}

/// Centers `data` (rows are observations) and keeps the leading
/// `n_components` eigenvectors of its covariance. Each component is signed
/// so its largest-magnitude entry is positive.
pub fn pca_fit(data: &[Vec<f64>], n_components: usize) -> Result<PcaModel> {
    let n = data.len();
    let d = data.first().ok_or(Error::Empty("PCA data"))?.len();
    if n_components == 0 {
        return Err(Error::invalid("PCA needs at least one component"));
    }
    if n <= n_components {
        return Err(Error::invalid(format!(
            "PCA with {n_components} components needs more than {n_components} rows, got {n}"
        )));
    }
    if d < n_components {
        return Err(Error::invalid(format!(
            "PCA with {n_components} components needs dimension >= {n_components}, got {d}"
        )));
    }
    if let Some(row) = data.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            context: "PCA rows",
            expected: d,
            actual: row.len(),
        });
    }
    let mut mean = vec![0.0; d];
    for row in data {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let trace = cov.trace();
    if !(trace > 0.0) {
        return Err(Error::ZeroVariance("PCA data"));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(n_components);
    let mut ratios = Vec::with_capacity(n_components);
    for &k in order.iter().take(n_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        ratios.push((eig.eigenvalues[k] / trace).max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_ratios: ratios,
        total_dim: d,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_ratios.iter().sum()
    }
}

/// Latent coordinates `components · (x - mean)`.
pub fn pca_transform(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.total_dim {
        return Err(Error::DimensionMismatch {
            context: "PCA transform",
            expected: model.total_dim,
            actual: x.len(),
        });
    }
    Ok(model
        .components
        .iter()
        .map(|c| c.iter().zip(x).zip(&model.mean).map(|((c, x), m)| c * (x - m)).sum())
        .collect())
}

/// Data-space point `mean + componentsᵀ · z`.
pub fn pca_inverse(model: &PcaModel, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != model.n_components() {
        return Err(Error::DimensionMismatch {
            context: "PCA inverse",
            expected: model.n_components(),
            actual: z.len(),
        });
    }
    let mut out = model.mean.clone();
    for (c, zi) in model.components.iter().zip(z) {
        out.iter_mut().zip(c).for_each(|(o, ci)| *o += zi * ci);
    }
    Ok(out)
}
