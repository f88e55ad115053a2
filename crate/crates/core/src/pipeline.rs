//! End-to-end benchmark: projector → optional attack → evaluation of every
//! method on the clean and the attacked bundle.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::{attack_bundle, AttackConfig, AttackMode, StructuredNoiseSpec};
use crate::bundle::EmbeddingBundle;
use crate::classifier::{evaluate_with_bank, ClassifierConfig, EvaluationReport, Method};
use crate::distributions::TextBank;
use crate::subspace::{build_projector_with, SubspaceProjector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    /// `method` is ignored; every entry of `methods` is evaluated.
    pub classifier: ClassifierConfig,
    pub methods: Vec<Method>,
    pub center: bool,
    pub attack: Option<AttackConfig>,
    pub structured: Option<StructuredNoiseSpec>,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            methods: Method::ALL.to_vec(),
            center: false,
            attack: None,
            structured: None,
            seed: 0,
        }
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub clean_accuracy: f64,
    /// Empty when no attack was run.
    pub robust_accuracy: Option<f64>,
    /// On the attacked bundle when there is one, else on the clean bundle.
    pub mean_margin: f64,
    pub samples: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub clean: Vec<EvaluationReport>,
    pub attacked: Option<Vec<EvaluationReport>>,
    pub singular_values: Vec<f64>,
    pub attack_seconds: f64,
    pub total_seconds: f64,
    pub config: BenchmarkConfig,
}

impl BenchmarkReport {
    pub fn row(&self, method: Method) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Runs the whole chain on `bundle`. A projector is built from the bundle's
/// text features whenever `ot_projected` is requested or the attack is
/// structured.
pub fn run_benchmark(bundle: &EmbeddingBundle, cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let start = Instant::now();
    if cfg.methods.is_empty() {
        return Err(Error::InvalidArgument("benchmark needs at least one method".into()));
    }
    cfg.classifier.validate()?;
    let structured = cfg.attack.is_some_and(|a| a.mode == AttackMode::Structured);
    let projector: Option<SubspaceProjector> =
        if cfg.methods.iter().any(|m| m.needs_projector()) || structured {
            Some(build_projector_with(&bundle.text_matrix(), cfg.classifier.components, cfg.center)?)
        } else {
            None
        };
    let bank = TextBank::from_bundle(bundle, &cfg.classifier.weighting)?;

    let attack_start = Instant::now();
    let attacked = match &cfg.attack {
        Some(a) => Some(attack_bundle(bundle, a, &bank, projector.as_ref(), cfg.structured.as_ref(), cfg.seed)?),
        None => None,
    };
    let attack_seconds = attack_start.elapsed().as_secs_f64();

    let run = |b: &EmbeddingBundle| -> Result<Vec<EvaluationReport>> {
        cfg.methods
            .iter()
            .map(|&m| evaluate_with_bank(b, &bank, &cfg.classifier.with_method(m), projector.as_ref()))
            .collect()
    };
    let clean = run(bundle)?;
    let robust = attacked.as_ref().map(run).transpose()?;

    let rows = clean
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = robust.as_ref().map(|v| &v[i]);
            BenchmarkRow {
                method: c.method,
                clean_accuracy: c.accuracy,
                robust_accuracy: r.map(|r| r.accuracy),
                mean_margin: r.map_or(c.mean_margin, |r| r.mean_margin),
                samples: c.samples,
                seconds: c.seconds + r.map_or(0.0, |r| r.seconds),
            }
        })
        .collect();
    Ok(BenchmarkReport {
        rows,
        clean,
        attacked: robust,
        singular_values: projector.map(|p| p.singular_values().to_vec()).unwrap_or_default(),
        attack_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{generate_synthetic, SyntheticParams};

    fn small() -> EmbeddingBundle {
        generate_synthetic(&SyntheticParams {
            dim: 16,
            num_classes: 3,
            descriptions_per_class: 4,
            views_per_sample: 2,
            num_samples: 12,
            subspace_dim: 6,
            noise_scale: 0.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn noise_free_bundle_is_classified_perfectly() {
        let cfg = BenchmarkConfig {
            classifier: ClassifierConfig { components: 6, ..Default::default() },
            attack: Some(AttackConfig::pgd(1e-12, 10)),
            ..Default::default()
        };
        let r = run_benchmark(&small(), &cfg).unwrap();
        assert_eq!(r.rows.len(), 4);
        for row in &r.rows {
            assert_eq!(row.clean_accuracy, 1.0, "{row:?}");
            assert_eq!(row.robust_accuracy, Some(1.0), "{row:?}");
        }
        assert_eq!(r.singular_values.len(), 6);
    }

    #[test]
    fn too_many_components_is_an_error() {
        let cfg = BenchmarkConfig { classifier: ClassifierConfig { components: 64, ..Default::default() }, ..Default::default() };
        assert!(run_benchmark(&small(), &cfg).is_err());
    }

    #[test]
    fn structured_attack_without_scales_is_rejected() {
        let cfg = BenchmarkConfig {
            classifier: ClassifierConfig { components: 6, ..Default::default() },
            attack: Some(AttackConfig { mode: AttackMode::Structured, ..Default::default() }),
            ..Default::default()
        };
        assert!(matches!(run_benchmark(&small(), &cfg), Err(Error::InvalidArgument(_))));
    }
}
