//! Embedding bundles: the on-disk exchange format between encoders and the
//! classifier.
//!
//! A bundle is a directory holding
//!
//! * `manifest.json`: shapes, class names, dtype tag and normalization flag,
//! * `text.bin`: `K·M·d` little-endian `f32`, class-major then description-major,
//! * `images.bin`: `S·N·d` little-endian `f32`, sample-major then view-major,
//! * `labels.bin`: `S` little-endian `u32` class indices.
//!
//! There is no header or padding in the binary blobs; their sizes are fully
//! determined by the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::linalg::{self, Matrix};
use crate::rng;
use crate::{Error, Result};

pub const DTYPE_F32LE: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TEXT_FILE: &str = "text.bin";
pub const IMAGES_FILE: &str = "images.bin";
pub const LABELS_FILE: &str = "labels.bin";

/// Maximum deviation of a row norm from 1 for bundles declared `unit`.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// Relative scale of the in-subspace jitter applied to synthetic class
/// descriptions.
pub const SYNTHETIC_DESCRIPTION_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Unit,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub num_classes: usize,
    pub descriptions_per_class: usize,
    pub views_per_sample: usize,
    pub num_samples: usize,
    pub class_names: Vec<String>,
    pub dtype: String,
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Map<String, Value>>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("num_classes", self.num_classes),
            ("descriptions_per_class", self.descriptions_per_class),
            ("views_per_sample", self.views_per_sample),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Manifest(format!("{name} must be at least 1")));
            }
        }
        if self.dtype != DTYPE_F32LE {
            return Err(Error::Manifest(format!(
                "unsupported dtype {:?}, expected {DTYPE_F32LE:?}",
                self.dtype
            )));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::Manifest(format!(
                "class_names has {} entries, num_classes is {}",
                self.class_names.len(),
                self.num_classes
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, name) in self.class_names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Manifest(format!("class_names[{i}] is empty")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Manifest(format!("duplicate class name {name:?}")));
            }
        }
        Ok(())
    }

    pub fn text_len(&self) -> usize {
        self.num_classes * self.descriptions_per_class * self.dim
    }

    pub fn images_len(&self) -> usize {
        self.num_samples * self.views_per_sample * self.dim
    }

    /// Inserts (or replaces) a key in the metadata object.
    pub fn set_metadata(&mut self, key: &str, value: Value) {
        self.metadata.get_or_insert_with(Map::new).insert(key.to_owned(), value);
    }
}

/// Text bank, image views and labels of one dataset. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    manifest: Manifest,
    text_features: Vec<f32>,
    image_views: Vec<f32>,
    labels: Vec<u32>,
}

impl EmbeddingBundle {
    pub fn new(
        manifest: Manifest,
        text_features: Vec<f32>,
        image_views: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let bundle = Self { manifest, text_features, image_views, labels };
        bundle.validate()?;
        Ok(bundle)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        m.validate()?;
        check_len(TEXT_FILE, m.text_len(), self.text_features.len())?;
        check_len(IMAGES_FILE, m.images_len(), self.image_views.len())?;
        check_len(LABELS_FILE, m.num_samples, self.labels.len())?;
        check_finite(TEXT_FILE, &self.text_features)?;
        check_finite(IMAGES_FILE, &self.image_views)?;
        for (index, &label) in self.labels.iter().enumerate() {
            if label as usize >= m.num_classes {
                return Err(Error::LabelOutOfRange { index, label, num_classes: m.num_classes });
            }
        }
        if m.normalization == Normalization::Unit {
            check_unit_rows(TEXT_FILE, &self.text_features, m.dim)?;
            check_unit_rows(IMAGES_FILE, &self.image_views, m.dim)?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn descriptions_per_class(&self) -> usize {
        self.manifest.descriptions_per_class
    }

    pub fn views_per_sample(&self) -> usize {
        self.manifest.views_per_sample
    }

    pub fn num_samples(&self) -> usize {
        self.manifest.num_samples
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn text_features(&self) -> &[f32] {
        &self.text_features
    }

    pub fn image_views(&self) -> &[f32] {
        &self.image_views
    }

    pub fn text_row(&self, class: usize, description: usize) -> &[f32] {
        let d = self.dim();
        let start = (class * self.descriptions_per_class() + description) * d;
        &self.text_features[start..start + d]
    }

    pub fn view(&self, sample: usize, view: usize) -> &[f32] {
        let d = self.dim();
        let start = (sample * self.views_per_sample() + view) * d;
        &self.image_views[start..start + d]
    }

    /// All descriptions stacked as a `(K·M) × d` matrix.
    pub fn text_matrix(&self) -> Matrix {
        let m = &self.manifest;
        Matrix::from_f32(m.num_classes * m.descriptions_per_class, m.dim, &self.text_features)
            .expect("validated shape")
    }

    /// The `M × d` description matrix of one class.
    pub fn class_text(&self, class: usize) -> Matrix {
        let m = &self.manifest;
        let len = m.descriptions_per_class * m.dim;
        let start = class * len;
        Matrix::from_f32(m.descriptions_per_class, m.dim, &self.text_features[start..start + len])
            .expect("validated shape")
    }

    /// The `N × d` view matrix of one sample.
    pub fn sample_views(&self, sample: usize) -> Matrix {
        let m = &self.manifest;
        let len = m.views_per_sample * m.dim;
        let start = sample * len;
        Matrix::from_f32(m.views_per_sample, m.dim, &self.image_views[start..start + len])
            .expect("validated shape")
    }

    /// Same text and labels, new image views.
    pub fn with_image_views(&self, image_views: Vec<f32>, manifest: Manifest) -> Result<Self> {
        Self::new(manifest, self.text_features.clone(), image_views, self.labels.clone())
    }

    /// Same text and views, new labels.
    pub fn with_labels(&self, labels: Vec<u32>) -> Result<Self> {
        let mut manifest = self.manifest.clone();
        manifest.num_samples = labels.len();
        Self::new(manifest, self.text_features.clone(), self.image_views.clone(), labels)
    }
}

fn check_len(file: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { context: file, expected, got });
    }
    Ok(())
}

fn check_finite(file: &'static str, values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite { file, offset: i as u64 * 4, value: values[i] }),
        None => Ok(()),
    }
}

fn check_unit_rows(file: &'static str, values: &[f32], dim: usize) -> Result<()> {
    for (row, chunk) in values.chunks_exact(dim).enumerate() {
        let norm = chunk.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm { file, row, norm });
        }
    }
    Ok(())
}

fn read_file(dir: &Path, name: &'static str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    match fs::read(&path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path)),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn decode_f32(file: &'static str, bytes: &[u8], expected_values: usize) -> Result<Vec<f32>> {
    let expected = expected_values as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::ByteCount { file, expected, found: bytes.len() as u64 });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    check_finite(file, &values)?;
    Ok(values)
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    let dir = dir.as_ref();
    let manifest_bytes = read_file(dir, MANIFEST_FILE)?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| Error::Manifest(e.to_string()))?;
    manifest.validate()?;

    let text = decode_f32(TEXT_FILE, &read_file(dir, TEXT_FILE)?, manifest.text_len())?;
    let images = decode_f32(IMAGES_FILE, &read_file(dir, IMAGES_FILE)?, manifest.images_len())?;
    let label_bytes = read_file(dir, LABELS_FILE)?;
    let expected = manifest.num_samples as u64 * 4;
    if label_bytes.len() as u64 != expected {
        return Err(Error::ByteCount { file: LABELS_FILE, expected, found: label_bytes.len() as u64 });
    }
    let labels = label_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingBundle::new(manifest, text, images, labels)
}

fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes a bundle directory, creating it if needed.
pub fn write_bundle(bundle: &EmbeddingBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = serde_json::to_vec_pretty(&bundle.manifest)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    let labels: Vec<u8> = bundle.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    let files: [(&str, Vec<u8>); 4] = [
        (MANIFEST_FILE, manifest),
        (TEXT_FILE, encode_f32(&bundle.text_features)),
        (IMAGES_FILE, encode_f32(&bundle.image_views)),
        (LABELS_FILE, labels),
    ];
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Arguments of [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub seed: u64,
    pub dim: usize,
    pub num_classes: usize,
    pub descriptions_per_class: usize,
    pub views_per_sample: usize,
    pub num_samples: usize,
    pub noise_scale: f64,
    pub subspace_dim: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            seed: 42,
            dim: 64,
            num_classes: 10,
            descriptions_per_class: 8,
            views_per_sample: 5,
            num_samples: 500,
            noise_scale: 0.1,
            subspace_dim: 16,
        }
    }
}

/// Generates a bundle whose text and images all live in one random
/// `subspace_dim`-dimensional subspace.
///
/// Class prototypes are random unit vectors in the subspace. Each description
/// is its prototype plus isotropic in-subspace noise of expected norm
/// [`SYNTHETIC_DESCRIPTION_NOISE`]; each image view is its prototype plus
/// in-subspace noise of expected norm `noise_scale`. Every row is then
/// normalized. Sample `s` has label `s mod K`.
pub fn generate_synthetic(p: &SyntheticParams) -> Result<EmbeddingBundle> {
    let counts = [
        ("dim", p.dim),
        ("num_classes", p.num_classes),
        ("descriptions_per_class", p.descriptions_per_class),
        ("views_per_sample", p.views_per_sample),
        ("num_samples", p.num_samples),
        ("subspace_dim", p.subspace_dim),
    ];
    for (name, v) in counts {
        if v == 0 {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
    }
    if p.subspace_dim > p.dim {
        return Err(Error::InvalidArgument(format!(
            "subspace_dim {} exceeds dim {}",
            p.subspace_dim, p.dim
        )));
    }
    if !(p.noise_scale >= 0.0 && p.noise_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise_scale must be >= 0, got {}", p.noise_scale)));
    }

    let basis = random_orthonormal(&mut rng::stream(p.seed, 0), p.dim, p.subspace_dim);
    let embed = |coeffs: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; p.dim];
        for (c, b) in coeffs.iter().zip(&basis) {
            linalg::axpy(*c, b, &mut v);
        }
        v
    };
    let coeff_scale = |scale: f64| scale / (p.subspace_dim as f64).sqrt();

    let mut proto_rng = rng::stream(p.seed, 1);
    let prototypes: Vec<Vec<f64>> =
        (0..p.num_classes).map(|_| rng::unit_vec(&mut proto_rng, p.subspace_dim)).collect();

    let mut text = Vec::with_capacity(p.num_classes * p.descriptions_per_class * p.dim);
    let mut desc_rng = rng::stream(p.seed, 2);
    let desc_scale = coeff_scale(SYNTHETIC_DESCRIPTION_NOISE);
    for proto in &prototypes {
        for _ in 0..p.descriptions_per_class {
            let noise = rng::gaussian_vec(&mut desc_rng, p.subspace_dim);
            let coeffs: Vec<f64> = proto.iter().zip(&noise).map(|(c, n)| c + desc_scale * n).collect();
            push_unit(&mut text, &embed(&coeffs));
        }
    }

    let view_scale = coeff_scale(p.noise_scale);
    let mut images = Vec::with_capacity(p.num_samples * p.views_per_sample * p.dim);
    let mut labels = Vec::with_capacity(p.num_samples);
    for s in 0..p.num_samples {
        let label = s % p.num_classes;
        labels.push(label as u32);
        let mut view_rng = rng::stream(p.seed, 3 + s as u64);
        for _ in 0..p.views_per_sample {
            let noise = rng::gaussian_vec(&mut view_rng, p.subspace_dim);
            let coeffs: Vec<f64> =
                prototypes[label].iter().zip(&noise).map(|(c, n)| c + view_scale * n).collect();
            push_unit(&mut images, &embed(&coeffs));
        }
    }

    let mut metadata = Map::new();
    metadata.insert("generator".into(), json!(rng::GENERATOR_ID));
    metadata.insert("synthetic".into(), serde_json::to_value(p).expect("plain struct"));
    metadata.insert("description_noise".into(), json!(SYNTHETIC_DESCRIPTION_NOISE));

    let manifest = Manifest {
        dim: p.dim,
        num_classes: p.num_classes,
        descriptions_per_class: p.descriptions_per_class,
        views_per_sample: p.views_per_sample,
        num_samples: p.num_samples,
        class_names: (0..p.num_classes).map(|k| format!("class_{k}")).collect(),
        dtype: DTYPE_F32LE.to_owned(),
        normalization: Normalization::Unit,
        metadata: Some(metadata),
    };
    EmbeddingBundle::new(manifest, text, images, labels)
}

fn push_unit(out: &mut Vec<f32>, v: &[f64]) {
    let u = linalg::normalized(v).unwrap_or_else(|| v.to_vec());
    out.extend(u.iter().map(|&x| x as f32));
}

/// `k` orthonormal vectors in `R^n` by modified Gram-Schmidt on Gaussian draws.
pub(crate) fn random_orthonormal(rng: &mut rng::Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = rng::gaussian_vec(rng, n);
        for _ in 0..2 {
            for b in &basis {
                let c = linalg::dot(&v, b);
                linalg::axpy(-c, b, &mut v);
            }
        }
        if let Some(u) = linalg::normalized(&v) {
            if linalg::norm(&v) > 1e-6 {
                basis.push(u);
            }
        }
    }
    basis
}
