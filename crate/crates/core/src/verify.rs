//! Monte-Carlo checks of the projection and margin properties.
//!
//! Each suite draws `trials` independent instances from per-trial RNG streams
//! and reports, per check, how many passed and the worst observed value.
//! Assertions are made only where the underlying hypotheses hold; everything
//! else is measured and reported.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::random_orthonormal;
use crate::classifier::build_cost;
use crate::distributions::{entropy, class_posterior, view_weights, EntropySign, WeightingConfig};
use crate::linalg::{self, Matrix};
use crate::ot::{exact_ot, sinkhorn, SinkhornParams, TransportProblem};
use crate::rng::{self, Rng};
use crate::subspace::SubspaceProjector;
use crate::{Error, Result};

/// Largest perturbation norm accepted by the distortion suite.
pub const MAX_DISTORTION_SCALE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: usize,
    pub total: usize,
    /// Worst value of the checked quantity (direction depends on the check).
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn all(name: &str, flags: impl IntoIterator<Item = (bool, f64)>, tolerance: f64, higher_is_worse: bool) -> Self {
        let (mut passed, mut total) = (0, 0);
        let mut worst = if higher_is_worse { f64::NEG_INFINITY } else { f64::INFINITY };
        for (ok, v) in flags {
            total += 1;
            passed += usize::from(ok);
            worst = if higher_is_worse { worst.max(v) } else { worst.min(v) };
        }
        if total == 0 {
            worst = 0.0;
        }
        Self { name: name.into(), passed, total, worst, tolerance, pass: passed == total }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    /// Measured statistics that are reported but not asserted.
    pub stats: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub pass: bool,
    pub seconds: f64,
}

impl SuiteReport {
    fn new(suite: &str, trials: usize, seed: u64, start: Instant, checks: Vec<CheckResult>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self {
            suite: suite.into(),
            trials,
            seed,
            checks,
            stats: BTreeMap::new(),
            notes: Vec::new(),
            pass,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// A uniformly random `components`-dimensional subspace of `R^dim`.
pub fn random_projector(rng: &mut Rng, dim: usize, components: usize) -> Result<SubspaceProjector> {
    if components == 0 || components > dim {
        return Err(Error::InvalidArgument(format!("need 1 <= components <= {dim}, got {components}")));
    }
    let axes = random_orthonormal(rng, dim, components);
    SubspaceProjector::from_axes(Matrix::from_rows(&axes)?, vec![1.0; components])
}

/// A random unit vector inside the projector's span.
fn unit_in_span(rng: &mut Rng, p: &SubspaceProjector) -> Vec<f64> {
    let coeffs = rng::unit_vec(rng, p.components());
    let mut v = vec![0.0; p.dim()];
    for (c, k) in coeffs.iter().zip(0..) {
        linalg::axpy(*c, p.axis(k), &mut v);
    }
    v
}

fn check_subspace_args(dim: usize, components: usize) -> Result<()> {
    if components == 0 || components >= dim {
        return Err(Error::InvalidArgument(format!(
            "suite needs 1 <= components < dim, got components {components}, dim {dim}"
        )));
    }
    Ok(())
}

struct ProjectionTrial {
    orthonormality: f64,
    idempotency: f64,
    pythagoras: f64,
    norm_excess: f64,
    dot: f64,
}

/// Orthonormality, idempotency, Pythagoras, norm monotonicity and dot-product
/// preservation on fresh random subspaces.
pub fn check_projection_identities(trials: usize, seed: u64, dim: usize, components: usize) -> Result<SuiteReport> {
    check_subspace_args(dim, components)?;
    let start = Instant::now();
    let rows: Vec<ProjectionTrial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            let p = random_projector(&mut rng, dim, components)?;
            let x = rng::gaussian_vec(&mut rng, dim);
            let z = unit_in_span(&mut rng, &p);
            let px = p.project(&x)?;
            let ppx = p.project(&px)?;
            let rest = linalg::sub(&x, &px);
            let nx = linalg::norm(&x);
            let idem = px.iter().zip(&ppx).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let pyth = (nx * nx - linalg::dot(&px, &px) - linalg::dot(&rest, &rest)).abs();
            Ok(ProjectionTrial {
                orthonormality: p.orthonormality_error(),
                idempotency: idem / nx.max(1.0),
                pythagoras: pyth / (nx * nx).max(1.0),
                norm_excess: linalg::norm(&px) - nx,
                dot: (linalg::dot(&x, &z) - linalg::dot(&px, &z)).abs() / (nx * linalg::norm(&z)),
            })
        })
        .collect::<Result<_>>()?;
    let tol = 1e-6;
    let checks = vec![
        CheckResult::all("orthonormality", rows.iter().map(|r| (r.orthonormality <= tol, r.orthonormality)), tol, true),
        CheckResult::all("idempotency", rows.iter().map(|r| (r.idempotency <= tol, r.idempotency)), tol, true),
        CheckResult::all("pythagoras", rows.iter().map(|r| (r.pythagoras <= tol, r.pythagoras)), tol, true),
        CheckResult::all("norm_monotone", rows.iter().map(|r| (r.norm_excess <= 1e-9, r.norm_excess)), 1e-9, true),
        CheckResult::all("dot_preservation", rows.iter().map(|r| (r.dot <= tol, r.dot)), tol, true),
    ];
    Ok(SuiteReport::new("projection", trials, seed, start, checks))
}

/// `|⟨x̂, z⟩ − ⟨Π x̂, z⟩| ≤ 1e-6 ‖x̂‖‖z‖` for random `x̂` and in-span `z`.
pub fn check_dot_preservation(trials: usize, seed: u64, dim: usize, components: usize) -> Result<SuiteReport> {
    check_subspace_args(dim, components)?;
    let start = Instant::now();
    let p = random_projector(&mut rng::stream(seed, u64::MAX), dim, components)?;
    let rel: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            let x = rng::gaussian_vec(&mut rng, dim);
            let scale = rng.random_range(0.1..10.0);
            let z: Vec<f64> = unit_in_span(&mut rng, &p).into_iter().map(|v| v * scale).collect();
            let px = p.project(&x)?;
            Ok((linalg::dot(&x, &z) - linalg::dot(&px, &z)).abs() / (linalg::norm(&x) * linalg::norm(&z)))
        })
        .collect::<Result<_>>()?;
    let checks = vec![CheckResult::all("dot_preservation", rel.iter().map(|&r| (r <= 1e-6, r)), 1e-6, true)];
    Ok(SuiteReport::new("dot", trials, seed, start, checks))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionRecord {
    /// `|cos(x̂₁, x̂₂) − cos(x₁, x₂)|`
    pub delta_raw: f64,
    /// `|cos(Π x̂₁, Π x̂₂) − cos(x₁, x₂)|`
    pub delta_proj: f64,
    pub parallel_norm: f64,
    pub orthogonal_norm: f64,
    pub hypotheses_met: bool,
}

/// Cosine distortion of two clean features under a shared perturbation,
/// before and after projection.
pub fn distortion_record(x1: &[f64], x2: &[f64], delta: &[f64], p: &SubspaceProjector) -> Result<DistortionRecord> {
    let cos = |a: &[f64], b: &[f64]| linalg::cosine(a, b).ok_or_else(|| Error::ZeroNorm("distortion feature".into()));
    let h1: Vec<f64> = x1.iter().zip(delta).map(|(a, b)| a + b).collect();
    let h2: Vec<f64> = x2.iter().zip(delta).map(|(a, b)| a + b).collect();
    let clean = cos(x1, x2)?;
    let split = p.split_perturbation(delta)?;
    let in_span = |x: &[f64]| -> Result<bool> {
        let px = p.project(x)?;
        Ok(linalg::norm(&linalg::sub(x, &px)) <= 1e-9 * linalg::norm(x).max(1.0))
    };
    let orthogonal_norm = linalg::norm(&split.orthogonal);
    Ok(DistortionRecord {
        delta_raw: (cos(&h1, &h2)? - clean).abs(),
        delta_proj: (cos(&p.project(&h1)?, &p.project(&h2)?)? - clean).abs(),
        parallel_norm: linalg::norm(&split.parallel),
        orthogonal_norm,
        hypotheses_met: in_span(x1)? && in_span(x2)? && orthogonal_norm > 0.0 && linalg::norm(delta) <= MAX_DISTORTION_SCALE,
    })
}

/// Shared random perturbation of norm `epsilon_scale` applied to two unit
/// features drawn inside a random `components`-dimensional subspace. Passes
/// when `Δ_Π ≤ Δ + 1e-9` in at least 99% of trials and the mean of `Δ_Π/Δ`
/// is below 1.
pub fn check_distortion(trials: usize, seed: u64, dim: usize, components: usize, epsilon_scale: f64) -> Result<SuiteReport> {
    check_subspace_args(dim, components)?;
    if !(epsilon_scale > 0.0 && epsilon_scale <= MAX_DISTORTION_SCALE) {
        return Err(Error::InvalidArgument(format!(
            "epsilon_scale must lie in (0, {MAX_DISTORTION_SCALE}], got {epsilon_scale}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("distortion suite needs at least one trial".into()));
    }
    let start = Instant::now();
    let records: Vec<DistortionRecord> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            let p = random_projector(&mut rng, dim, components)?;
            let x1 = unit_in_span(&mut rng, &p);
            let x2 = unit_in_span(&mut rng, &p);
            let delta: Vec<f64> = rng::unit_vec(&mut rng, dim).into_iter().map(|v| v * epsilon_scale).collect();
            distortion_record(&x1, &x2, &delta, &p)
        })
        .collect::<Result<_>>()?;

    let ok: Vec<bool> = records.iter().map(|r| r.delta_proj <= r.delta_raw + 1e-9).collect();
    let pass_fraction = ok.iter().filter(|&&b| b).count() as f64 / trials as f64;
    let ratios: Vec<f64> = records.iter().filter(|r| r.delta_raw > 0.0).map(|r| r.delta_proj / r.delta_raw).collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    let mean_bound = records
        .iter()
        .map(|r| r.parallel_norm / (r.parallel_norm.powi(2) + r.orthogonal_norm.powi(2)).sqrt())
        .sum::<f64>()
        / trials as f64;
    let met = records.iter().filter(|r| r.hypotheses_met).count();

    let checks = vec![
        CheckResult {
            name: "pass_fraction".into(),
            passed: ok.iter().filter(|&&b| b).count(),
            total: trials,
            worst: pass_fraction,
            tolerance: 0.99,
            pass: pass_fraction >= 0.99,
        },
        CheckResult {
            name: "mean_ratio".into(),
            passed: usize::from(mean_ratio < 1.0),
            total: 1,
            worst: mean_ratio,
            tolerance: 1.0,
            pass: mean_ratio < 1.0,
        },
        CheckResult {
            name: "hypotheses_met".into(),
            passed: met,
            total: trials,
            worst: met as f64 / trials as f64,
            tolerance: 1.0,
            pass: met == trials,
        },
    ];
    let mut report = SuiteReport::new("distortion", trials, seed, start, checks);
    report.stats.insert("pass_fraction".into(), pass_fraction);
    report.stats.insert("mean_ratio".into(), mean_ratio);
    report.stats.insert("mean_parallel_fraction_bound".into(), mean_bound);
    report.stats.insert(
        "median_ratio".into(),
        {
            let mut r = ratios.clone();
            r.sort_by(f64::total_cmp);
            r.get(r.len() / 2).copied().unwrap_or(0.0)
        },
    );
    report.notes.push(
        "pointwise reduction is a first-order statement; the suite asserts a 99% pass rate and a mean ratio below 1".into(),
    );
    Ok(report)
}

/// Instance sizes for the margin suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginShape {
    pub dim: usize,
    pub components: usize,
    pub classes: usize,
    pub views: usize,
    pub descriptions: usize,
    /// Norm of the in-subspace jitter on views and descriptions.
    pub jitter: f64,
    /// Norm of the out-of-subspace noise on each view.
    pub orthogonal_scale: f64,
}

impl Default for MarginShape {
    fn default() -> Self {
        Self { dim: 32, components: 8, classes: 5, views: 5, descriptions: 8, jitter: 0.15, orthogonal_scale: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginRecord {
    pub gamma_raw: f64,
    pub gamma_proj: f64,
    /// Every view is at least as similar to every true-class description as
    /// to any competitor description, and all cosines are non-negative.
    pub condition_met: bool,
}

/// Whether `views` satisfy the dominance condition for class `truth`.
pub fn margin_condition(views: &Matrix, classes: &[Matrix], truth: usize) -> Result<bool> {
    for (n, v) in views.iter_rows().enumerate() {
        let cosines = |y: usize| -> Result<Vec<f64>> {
            classes[y]
                .iter_rows()
                .map(|z| linalg::cosine(v, z).ok_or_else(|| Error::ZeroNorm(format!("view {n} or description"))))
                .collect()
        };
        let own = cosines(truth)?;
        let own_min = own.iter().copied().fold(f64::INFINITY, f64::min);
        if own_min < 0.0 {
            return Ok(false);
        }
        for y in (0..classes.len()).filter(|&y| y != truth) {
            let other = cosines(y)?;
            if other.iter().any(|&c| c < 0.0 || c > own_min) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `γ = min_{y ≠ truth} d(y) − d(truth)` with exact OT and uniform marginals.
pub fn exact_margin(
    views: &Matrix,
    classes: &[Matrix],
    truth: usize,
    projector: Option<&SubspaceProjector>,
) -> Result<f64> {
    let mut dist = Vec::with_capacity(classes.len());
    for (y, z) in classes.iter().enumerate() {
        let cost = build_cost(views, z, projector).map_err(|e| e.in_class(y))?;
        dist.push(exact_ot(&TransportProblem::uniform(cost)?).map_err(|e| e.in_class(y))?.distance);
    }
    let rival = dist
        .iter()
        .enumerate()
        .filter(|&(y, _)| y != truth)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    Ok(rival - dist[truth])
}

struct MarginInstance {
    projector: SubspaceProjector,
    classes: Vec<Matrix>,
    clean_views: Matrix,
    views: Matrix,
}

fn margin_instance(rng: &mut Rng, s: &MarginShape) -> Result<MarginInstance> {
    let projector = random_projector(rng, s.dim, s.components)?;
    // a shared direction keeps every cosine positive
    let common = unit_in_span(rng, &projector);
    let jitter = |rng: &mut Rng, base: &[f64], scale: f64| -> Vec<f64> {
        let mut v = base.to_vec();
        linalg::axpy(scale, &unit_in_span(rng, &projector), &mut v);
        v
    };
    let prototypes: Vec<Vec<f64>> = (0..s.classes)
        .map(|_| {
            let mut p = common.clone();
            linalg::axpy(1.0, &unit_in_span(rng, &projector), &mut p);
            linalg::normalized(&p).unwrap_or_else(|| common.clone())
        })
        .collect();
    let classes = prototypes
        .iter()
        .map(|p| {
            let rows: Vec<Vec<f64>> = (0..s.descriptions).map(|_| jitter(rng, p, s.jitter)).collect();
            Matrix::from_rows(&rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let clean: Vec<Vec<f64>> = (0..s.views).map(|_| jitter(rng, &prototypes[0], s.jitter)).collect();
    let noisy: Vec<Vec<f64>> = clean
        .iter()
        .map(|v| {
            let g = rng::gaussian_vec(rng, s.dim);
            let o = linalg::sub(&g, &projector.project(&g)?);
            let o = linalg::normalized(&o).ok_or_else(|| Error::ZeroNorm("orthogonal noise".into()))?;
            let mut out = v.clone();
            linalg::axpy(s.orthogonal_scale, &o, &mut out);
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(MarginInstance {
        projector,
        classes,
        clean_views: Matrix::from_rows(&clean)?,
        views: Matrix::from_rows(&noisy)?,
    })
}

/// Draws instances (true class 0) until `trials` of them satisfy the
/// dominance condition, and checks `γ(C^Π) ≥ γ(C) − 1e-9` on those, plus
/// `γ(C^Π) = γ(C)` within 1e-9 with the orthogonal noise removed. Instances
/// that miss the condition are counted and summarized, never asserted.
pub fn check_margin(trials: usize, seed: u64, shape: &MarginShape) -> Result<SuiteReport> {
    check_subspace_args(shape.dim, shape.components)?;
    if shape.classes < 2 || shape.views == 0 || shape.descriptions == 0 {
        return Err(Error::InvalidArgument("margin suite needs >= 2 classes and >= 1 view and description".into()));
    }
    let start = Instant::now();
    let max_attempts = trials.saturating_mul(20).max(100);
    let mut met: Vec<(MarginRecord, f64)> = Vec::with_capacity(trials);
    let mut missed: Vec<MarginRecord> = Vec::new();
    let mut next = 0usize;
    const BATCH: usize = 256;
    while met.len() < trials && next < max_attempts {
        let batch: Vec<(MarginRecord, f64)> = (next..(next + BATCH).min(max_attempts))
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::stream(seed, t as u64);
                let inst = margin_instance(&mut rng, shape)?;
                let p = Some(&inst.projector);
                let record = MarginRecord {
                    gamma_raw: exact_margin(&inst.views, &inst.classes, 0, None)?,
                    gamma_proj: exact_margin(&inst.views, &inst.classes, 0, p)?,
                    condition_met: margin_condition(&inst.views, &inst.classes, 0)?,
                };
                let eq_raw = exact_margin(&inst.clean_views, &inst.classes, 0, None)?;
                let eq_proj = exact_margin(&inst.clean_views, &inst.classes, 0, p)?;
                Ok((record, (eq_proj - eq_raw).abs()))
            })
            .collect::<Result<_>>()?;
        next = (next + BATCH).min(max_attempts);
        for (r, eq) in batch {
            if r.condition_met {
                if met.len() < trials {
                    met.push((r, eq));
                }
            } else {
                missed.push(r);
            }
        }
    }
    let checks = vec![
        CheckResult::all(
            "margin_dominance",
            met.iter().map(|(r, _)| {
                let gain = r.gamma_proj - r.gamma_raw;
                (gain >= -1e-9, gain)
            }),
            -1e-9,
            false,
        ),
        CheckResult::all("equality_without_orthogonal", met.iter().map(|(_, eq)| (*eq <= 1e-9, *eq)), 1e-9, true),
        CheckResult {
            name: "condition_met_trials".into(),
            passed: met.len(),
            total: trials,
            worst: met.len() as f64,
            tolerance: trials as f64,
            pass: met.len() == trials,
        },
    ];
    let mut report = SuiteReport::new("margin", trials, seed, start, checks);
    let mean = |v: &mut dyn Iterator<Item = f64>, n: usize| v.sum::<f64>() / n.max(1) as f64;
    report.stats.insert("attempts".into(), next as f64);
    report.stats.insert("condition_missed".into(), missed.len() as f64);
    report.stats.insert("mean_gamma_raw".into(), mean(&mut met.iter().map(|(r, _)| r.gamma_raw), met.len()));
    report.stats.insert("mean_gamma_proj".into(), mean(&mut met.iter().map(|(r, _)| r.gamma_proj), met.len()));
    report.stats.insert(
        "missed_fraction_with_gain".into(),
        mean(&mut missed.iter().map(|r| f64::from(u8::from(r.gamma_proj >= r.gamma_raw - 1e-9))), missed.len()),
    );
    Ok(report)
}

/// Entrywise `C^Π ≤ C + 1e-9` on (view, description) pairs with non-negative
/// cosine, and equality within 1e-9 when the view has no orthogonal part.
pub fn check_cost_dominance(pairs: usize, seed: u64, dim: usize, components: usize) -> Result<SuiteReport> {
    check_subspace_args(dim, components)?;
    let start = Instant::now();
    let rows: Vec<(Option<f64>, f64)> = (0..pairs)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            let p = random_projector(&mut rng, dim, components)?;
            let z = Matrix::from_rows(&[unit_in_span(&mut rng, &p)])?;
            let clean = unit_in_span(&mut rng, &p);
            let scale = rng.random_range(0.0..1.0);
            let mut view = clean.clone();
            let g = rng::gaussian_vec(&mut rng, dim);
            let o = linalg::normalized(&linalg::sub(&g, &p.project(&g)?)).unwrap_or_else(|| vec![0.0; dim]);
            linalg::axpy(scale, &o, &mut view);
            let v = Matrix::from_rows(&[view])?;
            let dominance = if linalg::dot(v.row(0), z.row(0)) >= 0.0 {
                Some(build_cost(&v, &z, Some(&p))?[(0, 0)] - build_cost(&v, &z, None)?[(0, 0)])
            } else {
                None
            };
            let c = Matrix::from_rows(&[clean])?;
            let eq = (build_cost(&c, &z, Some(&p))?[(0, 0)] - build_cost(&c, &z, None)?[(0, 0)]).abs();
            Ok((dominance, eq))
        })
        .collect::<Result<_>>()?;
    let eligible = rows.iter().filter(|r| r.0.is_some()).count();
    let checks = vec![
        CheckResult::all("cost_dominance", rows.iter().filter_map(|r| r.0).map(|d| (d <= 1e-9, d)), 1e-9, true),
        CheckResult::all("equality_without_orthogonal", rows.iter().map(|r| (r.1 <= 1e-9, r.1)), 1e-9, true),
    ];
    let mut report = SuiteReport::new("dominance", pairs, seed, start, checks);
    report.stats.insert("eligible_pairs".into(), eligible as f64);
    Ok(report)
}

/// Sinkhorn against the exact solver on random problems with `N, M ≤ max_size`,
/// costs uniform on `[0, 2]` and random marginals.
pub fn check_ot_oracle(trials: usize, seed: u64, max_size: usize, max_iters: usize) -> Result<SuiteReport> {
    if max_size == 0 || max_size * max_size > crate::ot::EXACT_CELL_LIMIT {
        return Err(Error::InvalidArgument(format!("max_size must be in 1..=100, got {max_size}")));
    }
    let start = Instant::now();
    let grid = [(1e-2, 5e-2), (1e-3, 1e-2)];
    type Row = (Vec<f64>, Vec<Option<f64>>, f64);
    let rows: Vec<Row> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            let n = rng.random_range(1..=max_size);
            let m = rng.random_range(1..=max_size);
            let cost: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.0..2.0)).collect();
            let marginal = |rng: &mut Rng, k: usize| {
                let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect::<Vec<_>>()
            };
            let a = marginal(&mut rng, n);
            let b = marginal(&mut rng, m);
            let problem = TransportProblem::new(Matrix::new(n, m, cost)?, a, b)?;
            let exact = exact_ot(&problem)?;
            let mut gaps = Vec::new();
            let mut violations = Vec::new();
            let mut below = 0.0f64;
            for (eps, _) in grid {
                let s = sinkhorn(&problem, &SinkhornParams { epsilon: eps, max_iters, tolerance: 1e-6 })?;
                gaps.push((s.distance - exact.distance).abs());
                violations.push(s.converged.then_some(s.marginal_violation));
                below = below.max(exact.distance - s.distance);
            }
            Ok((gaps, violations, below.max(exact.marginal_violation - 1e-9)))
        })
        .collect::<Result<_>>()?;
    let mut checks = Vec::new();
    for (k, (eps, tol)) in grid.iter().enumerate() {
        checks.push(CheckResult::all(
            &format!("gap_eps_{eps:e}"),
            rows.iter().map(|r| (r.0[k] <= *tol, r.0[k])),
            *tol,
            true,
        ));
        checks.push(CheckResult::all(
            &format!("violation_eps_{eps:e}"),
            rows.iter().filter_map(|r| r.1[k]).map(|v| (v <= 1e-6, v)),
            1e-6,
            true,
        ));
    }
    checks.push(CheckResult::all("exact_below_sinkhorn", rows.iter().map(|r| (r.2 <= 1e-9, r.2)), 1e-9, true));
    let mut report = SuiteReport::new("ot-oracle", trials, seed, start, checks);
    for (k, (eps, _)) in grid.iter().enumerate() {
        let conv = rows.iter().filter(|r| r.1[k].is_some()).count();
        report.stats.insert(format!("converged_eps_{eps:e}"), conv as f64);
    }
    Ok(report)
}

/// Weight vectors are distributions, permutation-equivariant, ordered by
/// entropy in semantic mode and reversed in positive mode.
pub fn check_weights(trials: usize, seed: u64, dim: usize, classes: usize, views: usize) -> Result<SuiteReport> {
    if dim == 0 || classes < 2 || views < 2 {
        return Err(Error::InvalidArgument("weights suite needs dim >= 1, classes >= 2, views >= 2".into()));
    }
    let start = Instant::now();
    struct Row {
        sum_err: f64,
        min_weight: f64,
        perm_err: f64,
        order_ok: bool,
        reverse_err: f64,
        entropy_ok: bool,
    }
    let rows: Vec<Row> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            let means = Matrix::from_rows(&(0..classes).map(|_| rng::unit_vec(&mut rng, dim)).collect::<Vec<_>>())?;
            let feats = Matrix::from_rows(&(0..views).map(|_| rng::unit_vec(&mut rng, dim)).collect::<Vec<_>>())?;
            let cfg = WeightingConfig { temperature_logit: rng.random_range(1.0..100.0), ..Default::default() };
            let positive = WeightingConfig { entropy_sign: EntropySign::Positive, ..cfg };
            let w = view_weights(&feats, &means, &cfg)?;
            let h = (0..views)
                .map(|n| class_posterior(feats.row(n), &means, cfg.temperature_logit).and_then(|p| entropy(&p)))
                .collect::<Result<Vec<_>>>()?;

            let shift = rng.random_range(1..views);
            let perm: Vec<usize> = (0..views).map(|n| (n + shift) % views).collect();
            let permuted = Matrix::from_rows(&perm.iter().map(|&n| feats.row(n)).collect::<Vec<_>>())?;
            let wp = view_weights(&permuted, &means, &cfg)?;
            let perm_err = perm.iter().enumerate().fold(0.0f64, |m, (i, &n)| m.max((wp[i] - w[n]).abs()));

            let mut order_ok = true;
            for i in 0..views {
                for j in 0..views {
                    if h[i] + 1e-9 < h[j] && w[i] <= w[j] {
                        order_ok = false;
                    }
                }
            }
            let pair = Matrix::from_rows(&[feats.row(0), feats.row(1)])?;
            let (ws, wl) = (view_weights(&pair, &means, &cfg)?, view_weights(&pair, &means, &positive)?);
            Ok(Row {
                sum_err: (w.iter().sum::<f64>() - 1.0).abs(),
                min_weight: w.iter().copied().fold(f64::INFINITY, f64::min),
                perm_err,
                order_ok,
                reverse_err: (ws[0] - wl[1]).abs().max((ws[1] - wl[0]).abs()),
                entropy_ok: h.iter().all(|&v| v >= 0.0 && v <= (classes as f64).ln() + 1e-12),
            })
        })
        .collect::<Result<_>>()?;
    let checks = vec![
        CheckResult::all("sums_to_one", rows.iter().map(|r| (r.sum_err <= 1e-6, r.sum_err)), 1e-6, true),
        CheckResult::all("non_negative", rows.iter().map(|r| (r.min_weight >= 0.0, r.min_weight)), 0.0, false),
        CheckResult::all("permutation_equivariant", rows.iter().map(|r| (r.perm_err <= 1e-12, r.perm_err)), 1e-12, true),
        CheckResult::all("entropy_order", rows.iter().map(|r| (r.order_ok, f64::from(u8::from(!r.order_ok)))), 0.0, true),
        CheckResult::all("positive_reverses_semantic", rows.iter().map(|r| (r.reverse_err <= 1e-12, r.reverse_err)), 1e-12, true),
        CheckResult::all(
            "entropy_bounds",
            rows.iter().map(|r| (r.entropy_ok, f64::from(u8::from(!r.entropy_ok)))),
            0.0,
            true,
        ),
    ];
    Ok(SuiteReport::new("weights", trials, seed, start, checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1_e2() -> SubspaceProjector {
        SubspaceProjector::from_axes(Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap(), vec![1.0; 2])
            .unwrap()
    }

    #[test]
    fn in_span_perturbation_gives_equal_distortion() {
        let p = e1_e2();
        let r = distortion_record(&[1.0, 0.0, 0.0], &[0.6, 0.8, 0.0], &[0.01, -0.02, 0.0], &p).unwrap();
        assert!((r.delta_raw - r.delta_proj).abs() < 1e-15);
        assert!(r.delta_raw > 0.0);
        assert!(!r.hypotheses_met);
    }

    #[test]
    fn zero_perturbation_has_zero_distortion() {
        let r = distortion_record(&[1.0, 0.0, 0.0], &[0.6, 0.8, 0.0], &[0.0; 3], &e1_e2()).unwrap();
        assert_eq!((r.delta_raw, r.delta_proj), (0.0, 0.0));
    }

    #[test]
    fn single_view_margin_grows_by_the_norm_ratio() {
        // orthogonal prototypes e1, e2; the view e1 + 0.1 e2 + 0.5 e3 has its
        // e3 part removed by the projection
        let p = e1_e2();
        let classes = vec![
            Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap(),
            Matrix::from_rows(&[[0.0, 1.0, 0.0]]).unwrap(),
        ];
        let v = [1.0, 0.1, 0.5];
        let views = Matrix::from_rows(&[v]).unwrap();
        let raw = exact_margin(&views, &classes, 0, None).unwrap();
        let proj = exact_margin(&views, &classes, 0, Some(&p)).unwrap();
        let n = linalg::norm(&v);
        let pn = (1.0f64 + 0.01).sqrt();
        assert!((raw - 0.9 / n).abs() < 1e-12);
        assert!((proj - raw * n / pn).abs() < 1e-12);
        assert!(proj > raw);
        assert!(margin_condition(&views, &classes, 0).unwrap());
    }

    #[test]
    fn condition_rejects_negative_cosines() {
        let classes = vec![
            Matrix::from_rows(&[[1.0, 0.0]]).unwrap(),
            Matrix::from_rows(&[[-1.0, 0.1]]).unwrap(),
        ];
        let views = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(!margin_condition(&views, &classes, 0).unwrap());
    }

    #[test]
    fn suites_are_deterministic() {
        let a = check_dot_preservation(50, 3, 12, 4).unwrap();
        let b = check_dot_preservation(50, 3, 12, 4).unwrap();
        assert_eq!(a.checks, b.checks);
        assert!(a.pass);
    }

    #[test]
    fn bad_suite_arguments() {
        assert!(check_distortion(10, 0, 8, 8, 0.01).is_err());
        assert!(check_distortion(10, 0, 8, 2, 0.2).is_err());
        assert!(check_dot_preservation(10, 0, 4, 0).is_err());
    }

    #[test]
    fn small_suites_pass() {
        assert!(check_projection_identities(100, 1, 16, 4).unwrap().pass);
        assert!(check_weights(100, 1, 8, 4, 5).unwrap().pass);
        assert!(check_cost_dominance(200, 1, 16, 4).unwrap().pass);
        let m = check_margin(50, 1, &MarginShape::default()).unwrap();
        assert!(m.pass, "{m:?}");
        let o = check_ot_oracle(30, 1, 6, 1000).unwrap();
        assert!(o.check("exact_below_sinkhorn").unwrap().pass, "{o:?}");
    }
}
