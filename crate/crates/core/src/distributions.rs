//! Images and classes as weighted point clouds.
//!
//! An image is the set of its `N` view embeddings, a class is the set of its
//! `M` description embeddings. Each point is weighted by the Shannon entropy of
//! its class posterior: a softmax over temperature-scaled cosine similarities
//! to the class-mean text embeddings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle::EmbeddingBundle;
use crate::linalg::{self, Matrix};
use crate::subspace::SubspaceProjector;
use crate::{Error, Result};

/// Which sign of the entropy enters the weight softmax.
///
/// `Semantic` weights by `exp(-h)`, so confident points count more;
/// `Positive` weights by `exp(+h)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    Positive,
    #[default]
    Semantic,
}

impl EntropySign {
    fn factor(self) -> f64 {
        match self {
            EntropySign::Positive => 1.0,
            EntropySign::Semantic => -1.0,
        }
    }
}

impl fmt::Display for EntropySign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropySign::Positive => "positive",
            EntropySign::Semantic => "semantic",
        })
    }
}

impl FromStr for EntropySign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(EntropySign::Positive),
            "semantic" => Ok(EntropySign::Semantic),
            other => Err(Error::InvalidArgument(format!(
                "unknown entropy sign {other:?} (expected semantic or positive)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightingConfig {
    /// Scale applied to cosine similarities inside the class posterior.
    pub temperature_logit: f64,
    pub entropy_sign: EntropySign,
    /// Divides the signed entropies inside the weight softmax.
    pub temperature_weight: f64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self { temperature_logit: 100.0, entropy_sign: EntropySign::Semantic, temperature_weight: 1.0 }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("temperature_logit", self.temperature_logit), ("temperature_weight", self.temperature_weight)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `softmax_y(temperature · cos(x, mean_y))`.
pub fn class_posterior(x: &[f64], means: &Matrix, temperature_logit: f64) -> Result<Vec<f64>> {
    if x.len() != means.cols() {
        return Err(Error::DimensionMismatch {
            context: "class_posterior feature width",
            expected: means.cols(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("class_posterior: non-finite feature".into()));
    }
    let logits = means
        .iter_rows()
        .enumerate()
        .map(|(y, m)| {
            linalg::cosine(x, m)
                .map(|c| temperature_logit * c)
                .ok_or_else(|| Error::ZeroNorm(format!("feature or class mean {y} has zero norm")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(softmax(&logits))
}

/// Natural-log Shannon entropy with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    let mut h = 0.0;
    for (i, &v) in p.iter().enumerate() {
        if v < 0.0 || !v.is_finite() {
            return Err(Error::InvalidArgument(format!("probability entry {i} is {v}")));
        }
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    Ok(h.max(0.0))
}

/// Weights from per-point entropies: `softmax(sign · h / temperature_weight)`.
pub fn weights_from_entropies(entropies: &[f64], cfg: &WeightingConfig) -> Vec<f64> {
    let s = cfg.entropy_sign.factor();
    let logits: Vec<f64> = entropies.iter().map(|h| s * h / cfg.temperature_weight).collect();
    softmax(&logits)
}

/// Importance weights of a set of points (views or descriptions).
pub fn view_weights(views: &Matrix, means: &Matrix, cfg: &WeightingConfig) -> Result<Vec<f64>> {
    if views.rows() == 0 {
        return Err(Error::InvalidArgument("need at least one view".into()));
    }
    cfg.validate()?;
    let entropies = views
        .iter_rows()
        .map(|v| entropy(&class_posterior(v, means, cfg.temperature_logit)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(weights_from_entropies(&entropies, cfg))
}

/// Row `y` holds the weights of class `y`'s descriptions, with posteriors
/// taken over all `K` class means.
pub fn text_weights(bank_features: &[Matrix], means: &Matrix, cfg: &WeightingConfig) -> Result<Matrix> {
    let m = bank_features.first().map_or(0, Matrix::rows);
    let mut out = Matrix::zeros(bank_features.len(), m);
    for (y, feats) in bank_features.iter().enumerate() {
        if feats.rows() != m {
            return Err(Error::DimensionMismatch {
                context: "descriptions per class",
                expected: m,
                got: feats.rows(),
            });
        }
        let w = view_weights(feats, means, cfg).map_err(|e| e.in_class(y))?;
        out.row_mut(y).copy_from_slice(&w);
    }
    Ok(out)
}

/// Class descriptions, their means and importance weights.
#[derive(Clone, Debug)]
pub struct TextBank {
    features: Vec<Matrix>,
    unit_features: Vec<Matrix>,
    means: Matrix,
    weights: Matrix,
}

impl TextBank {
    /// `features[y]` is the `M × d` description matrix of class `y`.
    pub fn new(features: Vec<Matrix>, cfg: &WeightingConfig) -> Result<Self> {
        let k = features.len();
        if k == 0 {
            return Err(Error::InvalidArgument("text bank needs at least one class".into()));
        }
        let m = features[0].rows();
        let d = features[0].cols();
        if m == 0 || d == 0 {
            return Err(Error::InvalidArgument("text bank needs M >= 1 and d >= 1".into()));
        }
        let mut means = Matrix::zeros(k, d);
        let mut unit_features = Vec::with_capacity(k);
        for (y, f) in features.iter().enumerate() {
            if f.rows() != m || f.cols() != d {
                return Err(Error::DimensionMismatch {
                    context: "text bank class shape",
                    expected: m * d,
                    got: f.rows() * f.cols(),
                });
            }
            for r in f.iter_rows() {
                linalg::axpy(1.0 / m as f64, r, means.row_mut(y));
            }
            let mut unit = Matrix::zeros(m, d);
            for (i, r) in f.iter_rows().enumerate() {
                let u = linalg::normalized(r).ok_or_else(|| {
                    Error::ZeroNorm(format!("description {i} of class {y}"))
                })?;
                unit.row_mut(i).copy_from_slice(&u);
            }
            unit_features.push(unit);
        }
        let weights = text_weights(&features, &means, cfg)?;
        Ok(Self { features, unit_features, means, weights })
    }

    pub fn from_bundle(bundle: &EmbeddingBundle, cfg: &WeightingConfig) -> Result<Self> {
        Self::new((0..bundle.num_classes()).map(|y| bundle.class_text(y)).collect(), cfg)
    }

    pub fn num_classes(&self) -> usize {
        self.features.len()
    }

    pub fn descriptions_per_class(&self) -> usize {
        self.features[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn class_features(&self, y: usize) -> &Matrix {
        &self.features[y]
    }

    /// Unit-normalized descriptions of class `y`.
    pub fn class_unit_features(&self, y: usize) -> &Matrix {
        &self.unit_features[y]
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn class_weights(&self, y: usize) -> &[f64] {
        self.weights.row(y)
    }
}

/// The views of one image with their importance weights.
#[derive(Clone, Debug)]
pub struct ViewSet {
    pub features: Matrix,
    pub weights: Vec<f64>,
}

impl ViewSet {
    pub fn new(features: Matrix, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                context: "view weights",
                expected: features.rows(),
                got: weights.len(),
            });
        }
        Ok(Self { features, weights })
    }

    pub fn uniform(features: Matrix) -> Self {
        let n = features.rows();
        Self { features, weights: vec![1.0 / n as f64; n] }
    }

    /// Entropy-weighted views. With a projector the weights are computed on
    /// the projected features, matching the order projection → weighting.
    pub fn weighted(
        features: Matrix,
        means: &Matrix,
        cfg: &WeightingConfig,
        projector: Option<&SubspaceProjector>,
    ) -> Result<Self> {
        let weights = match projector {
            Some(p) => view_weights(&p.project_rows(&features)?, means, cfg)?,
            None => view_weights(&features, means, cfg)?,
        };
        Ok(Self { features, weights })
    }
}
