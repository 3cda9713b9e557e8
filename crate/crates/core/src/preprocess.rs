//! Fixed pre-embedding transforms: per-feature standardization and PCA.
//!
//! Both are fit on training rows only and then applied unchanged to any
//! other split.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::serde_matrix;

/// Singular values at or below this fraction of the largest are treated as
/// zero when determining rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Centers each feature and divides by its standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(with = "serde_matrix::vector")]
    pub mean: Array1<f64>,
    /// Population standard deviation per feature; constant features keep a
    /// scale of 1.
    #[serde(with = "serde_matrix::vector")]
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Data("cannot standardize an empty matrix".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 0.0 { s } else { 1.0 });
        Ok(Self { mean, scale })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(shape_err("standardizer input columns", self.input_dim(), x.ncols()));
        }
        Ok((&x - &self.mean) / &self.scale)
    }
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaMode {
    /// Smallest count whose cumulative explained-variance ratio reaches the
    /// fraction.
    RetainVariance(f64),
    FixedComponents(usize),
}

/// A fitted principal component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    #[serde(with = "serde_matrix::vector")]
    pub mean: Array1<f64>,
    /// `P x D`, orthonormal rows ordered by decreasing variance.
    #[serde(with = "serde_matrix::rows")]
    pub components: Array2<f64>,
    #[serde(with = "serde_matrix::vector")]
    pub explained_variance: Array1<f64>,
    pub variance_fraction_retained: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// Maps projected rows back to input space.
    pub fn reconstruct(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.n_components() {
            return Err(shape_err("pca reconstruction columns", self.n_components(), z.ncols()));
        }
        Ok(z.dot(&self.components) + &self.mean)
    }
}

/// Principal directions of a centered data matrix from its thin SVD.
///
/// Returns `(singular values, right singular vectors as rows)` sorted by
/// decreasing singular value.
fn centered_svd(centered: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
    let (n, d) = centered.dim();
    let m = DMatrix::from_fn(n, d, |i, j| centered[[i, j]]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rows = Array2::from_shape_fn((order.len(), d), |(r, j)| v_t[(order[r], j)]);
    (values, rows)
}

/// Flips each row so that its entry of largest magnitude is positive.
fn canonicalize_signs(components: &mut Array2<f64>) {
    for mut row in components.rows_mut() {
        let pivot = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (j, v)| if v.abs() > best.1.abs() { (j, v) } else { best });
        if pivot.1 < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
}

/// Fits PCA on the rows of `x`.
pub fn fit_pca(x: ArrayView2<f64>, mode: PcaMode) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 rows, got {n}")));
    }
    match mode {
        PcaMode::RetainVariance(f) if !(f > 0.0 && f <= 1.0) => {
            return Err(Error::Config(format!(
                "retained variance fraction must lie in (0, 1], got {f}"
            )))
        }
        PcaMode::FixedComponents(p) if p == 0 || p > (n - 1).min(d) => {
            return Err(Error::Config(format!(
                "component count {p} must lie in [1, min(n - 1, D) = {}]",
                (n - 1).min(d)
            )))
        }
        _ => {}
    }

    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let (singular, directions) = centered_svd(centered.view());
    let largest = singular.first().copied().unwrap_or(0.0);
    if !(largest > 0.0) {
        return Err(Error::Degenerate("data has zero variance".into()));
    }
    let rank = singular
        .iter()
        .take_while(|&&s| s > RANK_TOLERANCE * largest)
        .count();
    let variances: Vec<f64> = singular.iter().map(|s| s * s / (n - 1) as f64).collect();
    let total: f64 = variances.iter().sum();

    let p = match mode {
        PcaMode::FixedComponents(p) => p,
        PcaMode::RetainVariance(fraction) => {
            let mut cumulative = 0.0;
            let mut p = rank;
            for (i, v) in variances.iter().take(rank).enumerate() {
                cumulative += v;
                if cumulative / total >= fraction - 1e-12 {
                    p = i + 1;
                    break;
                }
            }
            p
        }
    };

    let mut components = directions.slice(ndarray::s![..p, ..]).to_owned();
    canonicalize_signs(&mut components);
    let explained_variance = Array1::from(variances[..p].to_vec());
    let retained = (explained_variance.sum() / total).min(1.0);
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        variance_fraction_retained: retained,
    })
}

/// Projects rows onto the principal components: `z = components (x - mean)`.
pub fn apply_pca(model: &PcaModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.input_dim() {
        return Err(shape_err("pca input columns", model.input_dim(), x.ncols()));
    }
    Ok((&x - &model.mean).dot(&model.components.t()))
}

/// Options for the preprocessing pipeline fit before metric learning.
///
/// Standardization is on by default: the objective's softmax saturates when
/// feature scales differ by orders of magnitude, which stalls training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub standardize: bool,
    pub pca: Option<PcaMode>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            standardize: true,
            pca: None,
        }
    }
}

/// Standardization followed by PCA, either stage optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Preprocessor {
    pub standardizer: Option<Standardizer>,
    pub pca: Option<PcaModel>,
}

impl Preprocessor {
    pub fn fit(x: ArrayView2<f64>, cfg: &PreprocessConfig) -> Result<Self> {
        let standardizer = if cfg.standardize {
            Some(Standardizer::fit(x)?)
        } else {
            None
        };
        let pca = match cfg.pca {
            Some(mode) => {
                let scaled = match &standardizer {
                    Some(s) => s.apply(x)?,
                    None => x.to_owned(),
                };
                Some(fit_pca(scaled.view(), mode)?)
            }
            None => None,
        };
        Ok(Self { standardizer, pca })
    }

    pub fn is_identity(&self) -> bool {
        self.standardizer.is_none() && self.pca.is_none()
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.pca.as_ref().map_or(input_dim, PcaModel::n_components)
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = match &self.standardizer {
            Some(s) => s.apply(x)?,
            None => x.to_owned(),
        };
        if let Some(pca) = &self.pca {
            out = apply_pca(pca, out.view())?;
        }
        Ok(out)
    }
}
