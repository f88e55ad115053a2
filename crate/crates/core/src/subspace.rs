//! Text-induced subspace and orthogonal projection.
//!
//! The description embeddings are stacked as rows of a `(K·M) × d` matrix.
//! Its top-`C` right singular vectors (equivalently, the left singular
//! vectors of the `d × (K·M)` column layout) span the subspace; they are
//! obtained from a Jacobi eigendecomposition of the `d × d` Gram matrix.

use std::fs;
use std::path::Path;

use crate::linalg::{self, Matrix};
use crate::{Error, Result};

/// Default number of retained components.
pub const DEFAULT_COMPONENTS: usize = 256;

/// Tolerance on `basisᵀ basis = I` accepted by [`SubspaceProjector::from_axes`].
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceProjector {
    /// `C × d`; row `c` is basis column `c`.
    axes: Matrix,
    singular_values: Vec<f64>,
}

/// `delta = parallel + orthogonal`, with `parallel` in the subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSplit {
    pub parallel: Vec<f64>,
    pub orthogonal: Vec<f64>,
}

/// Builds the projector from the raw (uncentered) text matrix.
pub fn build_projector(text_features: &Matrix, components: usize) -> Result<SubspaceProjector> {
    build_projector_with(text_features, components, false)
}

/// Like [`build_projector`]; with `center` the column means of the text
/// matrix are removed first (classical PCA).
pub fn build_projector_with(
    text_features: &Matrix,
    components: usize,
    center: bool,
) -> Result<SubspaceProjector> {
    let rows = text_features.rows();
    let d = text_features.cols();
    let limit = d.min(rows);
    if components == 0 || components > limit {
        return Err(Error::InvalidArgument(format!(
            "components must be in 1..={limit} (min of dim {d} and {rows} text rows), got {components}"
        )));
    }
    if let Some(i) = text_features.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite text feature at row {}, column {}",
            i / d,
            i % d
        )));
    }

    let gram = if center {
        let mut mean = vec![0.0; d];
        for r in text_features.iter_rows() {
            linalg::axpy(1.0 / rows as f64, r, &mut mean);
        }
        let mut centered = text_features.clone();
        for i in 0..rows {
            for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        centered.gram_of_columns()
    } else {
        text_features.gram_of_columns()
    };

    let eig = linalg::symmetric_eigen(&gram)?;
    let singular: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    // Inputs usually come from f32 files, so rank is judged at f32 precision.
    let tol = singular[0] * rows.max(d) as f64 * f64::from(f32::EPSILON);
    let rank = singular.iter().take_while(|&&s| s > tol && s > 0.0).count();
    if rank < components {
        return Err(Error::RankDeficient { requested: components, rank });
    }

    let mut axes = Matrix::zeros(components, d);
    for c in 0..components {
        let v = eig.vectors.row(c);
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
            .0;
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (dst, src) in axes.row_mut(c).iter_mut().zip(v) {
            *dst = sign * src;
        }
    }
    Ok(SubspaceProjector { axes, singular_values: singular[..components].to_vec() })
}

impl SubspaceProjector {
    /// Wraps an explicit orthonormal basis given as rows of `axes` (`C × d`).
    pub fn from_axes(axes: Matrix, singular_values: Vec<f64>) -> Result<Self> {
        if singular_values.len() != axes.rows() {
            return Err(Error::DimensionMismatch {
                context: "singular values vs components",
                expected: axes.rows(),
                got: singular_values.len(),
            });
        }
        if axes.rows() == 0 || axes.rows() > axes.cols() {
            return Err(Error::InvalidArgument(format!(
                "need 1..={} basis vectors, got {}",
                axes.cols(),
                axes.rows()
            )));
        }
        let p = Self { axes, singular_values };
        let err = p.orthonormality_error();
        if err > ORTHONORMAL_TOLERANCE {
            return Err(Error::InvalidArgument(format!("basis is not orthonormal (error {err:e})")));
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.axes.cols()
    }

    pub fn components(&self) -> usize {
        self.axes.rows()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Basis column `c` of `U_C`.
    pub fn axis(&self, c: usize) -> &[f64] {
        self.axes.row(c)
    }

    /// `U_C` as a `d × C` matrix.
    pub fn basis(&self) -> Matrix {
        self.axes.transpose()
    }

    /// Largest entrywise deviation of `U_Cᵀ U_C` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let c = self.components();
        let mut worst = 0.0f64;
        for i in 0..c {
            for j in i..c {
                let g = linalg::dot(self.axis(i), self.axis(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "projector dimension",
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Coordinates `U_Cᵀ x`.
    pub fn coordinates(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self.axes.iter_rows().map(|a| linalg::dot(a, x)).collect())
    }

    /// `U_C U_Cᵀ x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let coords = self.coordinates(x)?;
        let mut out = vec![0.0; self.dim()];
        for (c, a) in coords.iter().zip(self.axes.iter_rows()) {
            linalg::axpy(*c, a, &mut out);
        }
        Ok(out)
    }

    /// Projects every row of `features`.
    pub fn project_rows(&self, features: &Matrix) -> Result<Matrix> {
        self.check_dim(features.cols())?;
        let mut out = Matrix::zeros(features.rows(), features.cols());
        for (i, r) in features.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.project(r)?);
        }
        Ok(out)
    }

    pub fn split_perturbation(&self, delta: &[f64]) -> Result<PerturbationSplit> {
        let parallel = self.project(delta)?;
        let orthogonal = linalg::sub(delta, &parallel);
        Ok(PerturbationSplit { parallel, orthogonal })
    }

    /// Coordinates of each row on the first two basis columns, for plotting.
    pub fn pca_coords(&self, features: &Matrix) -> Result<Matrix> {
        if self.components() < 2 {
            return Err(Error::InvalidArgument(format!(
                "pca coordinates need at least 2 components, projector has {}",
                self.components()
            )));
        }
        self.check_dim(features.cols())?;
        let mut out = Matrix::zeros(features.rows(), 2);
        for (i, r) in features.iter_rows().enumerate() {
            out[(i, 0)] = linalg::dot(r, self.axis(0));
            out[(i, 1)] = linalg::dot(r, self.axis(1));
        }
        Ok(out)
    }

    /// Serializes as `proj.bin`: `d` and `C` as `u32` little-endian, the
    /// basis column-major as `f32`, then the singular values as `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * (self.dim() * self.components() + self.components()));
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.components() as u32).to_le_bytes());
        for v in self.axes.as_slice() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in &self.singular_values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const FILE: &str = "proj.bin";
        if bytes.len() < 8 {
            return Err(Error::ByteCount { file: FILE, expected: 8, found: bytes.len() as u64 });
        }
        let d = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let expected = 8 + 4 * (d as u64 * c as u64 + c as u64);
        if bytes.len() as u64 != expected {
            return Err(Error::ByteCount { file: FILE, expected, found: bytes.len() as u64 });
        }
        let mut values = Vec::with_capacity(d * c + c);
        for (i, chunk) in bytes[8..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite { file: FILE, offset: 8 + 4 * i as u64, value: v });
            }
            values.push(f64::from(v));
        }
        let singular = values.split_off(d * c);
        Self::from_axes(Matrix::new(c, d, values)?, singular)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
