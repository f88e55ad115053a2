//! Cost matrices, the four classifiers and bundle-level evaluation.
//!
//! Every method produces per-class scores where lower is better (similarities
//! are negated), so one argmin with a lowest-index tie-break serves all of them.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::EmbeddingBundle;
use crate::distributions::{TextBank, ViewSet, WeightingConfig};
use crate::linalg::{self, Matrix};
use crate::ot::{sinkhorn, SinkhornParams, TransportProblem};
use crate::subspace::{SubspaceProjector, DEFAULT_COMPONENTS};
use crate::{Error, Result};

/// Projected views with a smaller norm than this are rejected.
pub const MIN_PROJECTED_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cosine against class-mean text, first view only.
    Cosine,
    /// Cosine between the mean of all views and class-mean text.
    MeanText,
    /// Entropy-weighted OT on raw features.
    OtRaw,
    /// Entropy-weighted OT on features projected onto the text subspace.
    OtProjected,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cosine, Method::MeanText, Method::OtRaw, Method::OtProjected];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cosine => "cosine",
            Method::MeanText => "mean_text",
            Method::OtRaw => "ot_raw",
            Method::OtProjected => "ot_projected",
        }
    }

    pub fn needs_projector(self) -> bool {
        self == Method::OtProjected
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub method: Method,
    pub components: usize,
    pub weighting: WeightingConfig,
    pub ot: SinkhornParams,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            method: Method::OtProjected,
            components: DEFAULT_COMPONENTS,
            weighting: WeightingConfig::default(),
            ot: SinkhornParams::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn with_method(self, method: Method) -> Self {
        Self { method, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.needs_projector() && self.components == 0 {
            return Err(Error::InvalidArgument("ot_projected needs at least one component".into()));
        }
        self.weighting.validate()?;
        self.ot.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    /// Lower is better.
    pub per_class_scores: Vec<f64>,
    /// Runner-up score minus best score; 0 with a single class.
    pub margin: f64,
}

impl Prediction {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut best = 0;
        for (y, &s) in scores.iter().enumerate() {
            if s < scores[best] {
                best = y;
            }
        }
        let runner_up = scores
            .iter()
            .enumerate()
            .filter(|&(y, _)| y != best)
            .map(|(_, &s)| s)
            .fold(f64::INFINITY, f64::min);
        let margin = if runner_up.is_finite() { runner_up - scores[best] } else { 0.0 };
        Self { label: best, per_class_scores: scores, margin }
    }
}

/// Scores are `−cos(x, z̄_y)`. With one description per class the mean is
/// that description.
pub fn cosine_classify(x: &[f64], bank: &TextBank) -> Result<Prediction> {
    if x.len() != bank.dim() {
        return Err(Error::DimensionMismatch { context: "feature vs text bank", expected: bank.dim(), got: x.len() });
    }
    let unit = linalg::normalized(x).ok_or_else(|| Error::ZeroNorm("input feature".into()))?;
    let scores = bank
        .means()
        .iter_rows()
        .enumerate()
        .map(|(y, mean)| {
            let n = linalg::norm(mean);
            if n == 0.0 {
                return Err(Error::ZeroNorm(format!("mean text feature of class {y}")));
            }
            Ok(-linalg::dot(&unit, mean) / n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prediction::from_scores(scores))
}

/// Unit-normalized (optionally projected) views.
fn unit_views(views: &Matrix, projector: Option<&SubspaceProjector>) -> Result<Matrix> {
    let mut out = Matrix::zeros(views.rows(), views.cols());
    for (n, v) in views.iter_rows().enumerate() {
        let u = match projector {
            Some(p) => {
                let pv = p.project(v)?;
                if linalg::norm(&pv) < MIN_PROJECTED_NORM {
                    return Err(Error::ZeroNorm(format!("view {n} has (near) zero norm after projection")));
                }
                linalg::normalized(&pv)
            }
            None => linalg::normalized(v),
        };
        let u = u.ok_or_else(|| Error::ZeroNorm(format!("view {n}")))?;
        out.row_mut(n).copy_from_slice(&u);
    }
    Ok(out)
}

fn cost_from_units(unit_views: &Matrix, unit_desc: &Matrix) -> Matrix {
    let mut cost = Matrix::zeros(unit_views.rows(), unit_desc.rows());
    for (n, v) in unit_views.iter_rows().enumerate() {
        for (m, z) in unit_desc.iter_rows().enumerate() {
            cost[(n, m)] = (1.0 - linalg::dot(v, z)).clamp(0.0, 2.0);
        }
    }
    cost
}

/// `C(n, m) = 1 − cos(x̂ⁿ, z^m)`, or `1 − cos(Π x̂ⁿ, z^m)` with a projector.
pub fn build_cost(views: &Matrix, class_features: &Matrix, projector: Option<&SubspaceProjector>) -> Result<Matrix> {
    if views.cols() != class_features.cols() {
        return Err(Error::DimensionMismatch {
            context: "views vs descriptions",
            expected: class_features.cols(),
            got: views.cols(),
        });
    }
    let mut unit_desc = Matrix::zeros(class_features.rows(), class_features.cols());
    for (m, z) in class_features.iter_rows().enumerate() {
        let u = linalg::normalized(z).ok_or_else(|| Error::ZeroNorm(format!("description {m}")))?;
        unit_desc.row_mut(m).copy_from_slice(&u);
    }
    Ok(cost_from_units(&unit_views(views, projector)?, &unit_desc))
}

/// Sinkhorn distance from the views to every class; label is the argmin.
pub fn ot_classify(
    views: &ViewSet,
    bank: &TextBank,
    projector: Option<&SubspaceProjector>,
    cfg: &ClassifierConfig,
) -> Result<Prediction> {
    if views.features.cols() != bank.dim() {
        return Err(Error::DimensionMismatch {
            context: "views vs text bank",
            expected: bank.dim(),
            got: views.features.cols(),
        });
    }
    let units = unit_views(&views.features, projector)?;
    let scores = (0..bank.num_classes())
        .map(|y| {
            let cost = cost_from_units(&units, bank.class_unit_features(y));
            TransportProblem::new(cost, views.weights.clone(), bank.class_weights(y).to_vec())
                .and_then(|p| sinkhorn(&p, &cfg.ot))
                .map(|s| s.distance)
                .map_err(|e| e.in_class(y))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prediction::from_scores(scores))
}

/// Classifies one sample's views with the configured method.
pub fn classify_views(
    views: Matrix,
    bank: &TextBank,
    projector: Option<&SubspaceProjector>,
    cfg: &ClassifierConfig,
) -> Result<Prediction> {
    match cfg.method {
        Method::Cosine => cosine_classify(views.row(0), bank),
        Method::MeanText => {
            let mut mean = vec![0.0; views.cols()];
            for v in views.iter_rows() {
                linalg::axpy(1.0 / views.rows() as f64, v, &mut mean);
            }
            cosine_classify(&mean, bank)
        }
        Method::OtRaw => {
            let set = ViewSet::weighted(views, bank.means(), &cfg.weighting, None)?;
            ot_classify(&set, bank, None, cfg)
        }
        Method::OtProjected => {
            let p = projector.ok_or_else(|| Error::InvalidArgument("ot_projected needs a projector".into()))?;
            let set = ViewSet::weighted(views, bank.means(), &cfg.weighting, Some(p))?;
            ot_classify(&set, bank, Some(p), cfg)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: Method,
    pub accuracy: f64,
    pub mean_margin: f64,
    /// Mean over samples of the mean per-class score.
    pub mean_distance: f64,
    pub samples: usize,
    pub seconds: f64,
    pub config: ClassifierConfig,
}

/// Predictions for every sample, in sample order.
pub fn predict_bundle(
    bundle: &EmbeddingBundle,
    bank: &TextBank,
    cfg: &ClassifierConfig,
    projector: Option<&SubspaceProjector>,
) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    if cfg.method.needs_projector() && projector.is_none() {
        return Err(Error::InvalidArgument(format!("method {} needs a projector", cfg.method)));
    }
    if let Some(p) = projector {
        if p.dim() != bundle.dim() {
            return Err(Error::DimensionMismatch { context: "projector vs bundle", expected: bundle.dim(), got: p.dim() });
        }
    }
    (0..bundle.num_samples())
        .into_par_iter()
        .map(|s| classify_views(bundle.sample_views(s), bank, projector, cfg).map_err(|e| e.in_sample(s)))
        .collect()
}

/// Evaluates against a text bank built from the bundle with `cfg.weighting`.
pub fn evaluate(
    bundle: &EmbeddingBundle,
    cfg: &ClassifierConfig,
    projector: Option<&SubspaceProjector>,
) -> Result<EvaluationReport> {
    let bank = TextBank::from_bundle(bundle, &cfg.weighting)?;
    evaluate_with_bank(bundle, &bank, cfg, projector)
}

pub fn evaluate_with_bank(
    bundle: &EmbeddingBundle,
    bank: &TextBank,
    cfg: &ClassifierConfig,
    projector: Option<&SubspaceProjector>,
) -> Result<EvaluationReport> {
    let start = Instant::now();
    let preds = predict_bundle(bundle, bank, cfg, projector)?;
    let seconds = start.elapsed().as_secs_f64();
    let samples = preds.len();
    let (mut correct, mut margin, mut distance) = (0usize, 0.0, 0.0);
    for (p, &label) in preds.iter().zip(bundle.labels()) {
        correct += usize::from(p.label == label as usize);
        margin += p.margin;
        distance += p.per_class_scores.iter().sum::<f64>() / p.per_class_scores.len() as f64;
    }
    let denom = samples.max(1) as f64;
    Ok(EvaluationReport {
        method: cfg.method,
        accuracy: correct as f64 / denom,
        mean_margin: margin / denom,
        mean_distance: distance / denom,
        samples,
        seconds,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthogonal_bank() -> TextBank {
        let f = |v: [f64; 3]| Matrix::from_rows(&[v]).unwrap();
        TextBank::new(vec![f([1.0, 0.0, 0.0]), f([0.0, 1.0, 0.0]), f([0.0, 0.0, 1.0])], &WeightingConfig::default())
            .unwrap()
    }

    #[test]
    fn cosine_on_a_class_mean() {
        let p = cosine_classify(&[0.0, 2.0, 0.0], &orthogonal_bank()).unwrap();
        assert_eq!(p.label, 1);
        assert!((p.margin - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let p = cosine_classify(&[0.0, 1.0, 1.0], &orthogonal_bank()).unwrap();
        assert_eq!(p.label, 1);
        assert_eq!(p.margin, 0.0);
        assert_eq!(Prediction::from_scores(vec![0.5, 0.5]).label, 0);
        assert_eq!(Prediction::from_scores(vec![0.3]).margin, 0.0);
    }

    #[test]
    fn zero_input_rejected() {
        assert!(matches!(cosine_classify(&[0.0; 3], &orthogonal_bank()), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn cost_extremes() {
        let views = Matrix::from_rows(&[[2.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]).unwrap();
        let desc = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let c = build_cost(&views, &desc, None).unwrap();
        assert_eq!(c.column(0), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn projected_cost_names_the_collapsed_view() {
        let p = SubspaceProjector::from_axes(Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap(), vec![1.0]).unwrap();
        let views = Matrix::from_rows(&[[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let desc = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let err = build_cost(&views, &desc, Some(&p)).unwrap_err();
        assert!(err.to_string().contains("view 1"), "{err}");
    }

    #[test]
    fn single_view_single_description_is_cosine() {
        let bank = orthogonal_bank();
        let x = [0.3, 0.9, -0.2];
        let views = ViewSet::uniform(Matrix::from_rows(&[x]).unwrap());
        let p = ot_classify(&views, &bank, None, &ClassifierConfig::default()).unwrap();
        let c = cosine_classify(&x, &bank).unwrap();
        assert_eq!(p.label, c.label);
        for (a, b) in p.per_class_scores.iter().zip(&c.per_class_scores) {
            assert!((a - (1.0 + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_class_has_zero_distance() {
        let z = [0.6, 0.8, 0.0];
        let other = Matrix::from_rows(&[[0.0, 0.0, 1.0], [0.0, 0.6, 0.8]]).unwrap();
        let bank = TextBank::new(vec![other, Matrix::from_rows(&[z, z]).unwrap()], &WeightingConfig::default()).unwrap();
        let views = ViewSet::uniform(Matrix::from_rows(&[z, z, z]).unwrap());
        let p = ot_classify(&views, &bank, None, &ClassifierConfig::default()).unwrap();
        assert_eq!(p.label, 1);
        assert!(p.per_class_scores[1].abs() < 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("clip".parse::<Method>().is_err());
    }
}
