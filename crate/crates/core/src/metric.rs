//! The learnable linear embedding `z = A x` and its induced squared
//! distance `(x - y)^T A^T A (x - y)`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::preprocess::PcaModel;
use crate::serde_matrix;

/// A map from input space into the space where neighbours are searched.
///
/// Trainers and decision rules only need `embed`; the linear map is the one
/// shipped implementation.
pub trait Embedding {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// Projection matrix `A` of shape `P x D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMetric {
    #[serde(with = "serde_matrix::rows")]
    a: Array2<f64>,
}

impl LinearMetric {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::Shape(format!(
                "projection must be at least 1 x 1, got {} x {}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("projection has non-finite entries".into()));
        }
        Ok(Self { a })
    }

    /// The `D x D` identity, i.e. plain Euclidean distance.
    pub fn identity(dim: usize) -> Self {
        Self {
            a: Array2::eye(dim),
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.a
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.a
    }

    /// `||A x - A y||^2`.
    pub fn sq_distance(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(shape_err("first vector length", self.input_dim(), x.len()));
        }
        if y.len() != self.input_dim() {
            return Err(shape_err("second vector length", self.input_dim(), y.len()));
        }
        let diff = &x - &y;
        let z = self.a.dot(&diff);
        Ok(z.dot(&z))
    }
}

impl Embedding for LinearMetric {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Rows of the result are `A x_i`.
    fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(shape_err("embedding input columns", self.input_dim(), x.ncols()));
        }
        Ok(x.dot(&self.a.t()))
    }
}

/// Convenience wrapper over [`Embedding::embed`].
pub fn embed(m: &LinearMetric, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    m.embed(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitKind {
    /// First `P` rows of the `D x D` identity.
    IdentityTruncated,
    /// I.i.d. `N(0, sd^2)` entries; `sd = None` means `1 / sqrt(D)`.
    ScaledGaussian { sd: Option<f64> },
    /// Top-`P` principal directions of a supplied PCA model.
    PcaSeeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub kind: InitKind,
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            kind: InitKind::ScaledGaussian { sd: None },
            seed: 0,
        }
    }
}

/// Builds the starting projection for a trainer.
pub fn init_metric(
    input_dim: usize,
    output_dim: usize,
    spec: &InitSpec,
    pca: Option<&PcaModel>,
) -> Result<LinearMetric> {
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::Config("metric dimensions must be positive".into()));
    }
    match (&spec.kind, pca) {
        (InitKind::PcaSeeded, None) => {
            return Err(Error::Config("pca_seeded initialization needs a PCA model".into()))
        }
        (InitKind::IdentityTruncated | InitKind::ScaledGaussian { .. }, Some(_)) => {
            return Err(Error::Config(
                "a PCA model is only used by pca_seeded initialization".into(),
            ))
        }
        _ => {}
    }
    let a = match spec.kind {
        InitKind::IdentityTruncated => {
            if output_dim > input_dim {
                return Err(Error::Config(format!(
                    "identity_truncated cannot produce {output_dim} rows from {input_dim} inputs"
                )));
            }
            Array2::from_shape_fn((output_dim, input_dim), |(i, j)| f64::from(u8::from(i == j)))
        }
        InitKind::ScaledGaussian { sd } => {
            let sd = sd.unwrap_or(1.0 / (input_dim as f64).sqrt());
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(Error::Config(format!("gaussian sd must be positive, got {sd}")));
            }
            let normal = Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            Array2::from_shape_simple_fn((output_dim, input_dim), || normal.sample(&mut rng))
        }
        InitKind::PcaSeeded => {
            let pca = pca.expect("checked above");
            if pca.input_dim() != input_dim {
                return Err(shape_err("pca input dimension", input_dim, pca.input_dim()));
            }
            if pca.n_components() < output_dim {
                return Err(Error::Config(format!(
                    "pca model has {} components, {output_dim} requested",
                    pca.n_components()
                )));
            }
            pca.components.slice(ndarray::s![..output_dim, ..]).to_owned()
        }
    };
    LinearMetric::new(a)
}
