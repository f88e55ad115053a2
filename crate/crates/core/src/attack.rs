//! Embedding-space attacks: PGD against the temperature-scaled cosine
//! classifier, and random perturbations with prescribed in-subspace and
//! out-of-subspace norms.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bundle::{EmbeddingBundle, Normalization};
use crate::distributions::TextBank;
use crate::linalg::{self, Matrix};
use crate::rng::{self, Rng, GENERATOR_ID};
use crate::subspace::SubspaceProjector;
use crate::{Error, Result};

/// Feature-space budget used when none is given. Chosen so the cosine
/// classifier loses at least 30 accuracy points on the default synthetic
/// bundle (noise 0.1).
pub const DEFAULT_BUDGET: f64 = 0.08;
pub const DEFAULT_STEPS: usize = 10;
pub const DEFAULT_TEMPERATURE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackNorm {
    #[serde(rename = "l_inf")]
    LInf,
    #[serde(rename = "l2")]
    L2,
}

impl AttackNorm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            AttackNorm::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            AttackNorm::L2 => linalg::norm(v),
        }
    }
}

impl fmt::Display for AttackNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackNorm::LInf => "l_inf",
            AttackNorm::L2 => "l2",
        })
    }
}

impl FromStr for AttackNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l_inf" | "linf" => Ok(AttackNorm::LInf),
            "l2" => Ok(AttackNorm::L2),
            _ => Err(Error::InvalidArgument(format!("unknown norm {s:?} (expected l_inf or l2)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    PgdCosine,
    Structured,
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMode::PgdCosine => "pgd_cosine",
            AttackMode::Structured => "structured",
        })
    }
}

impl FromStr for AttackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgd" | "pgd_cosine" => Ok(AttackMode::PgdCosine),
            "structured" => Ok(AttackMode::Structured),
            _ => Err(Error::InvalidArgument(format!("unknown attack mode {s:?} (expected pgd or structured)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub budget: f64,
    pub steps: usize,
    pub step_size: f64,
    pub norm: AttackNorm,
    pub mode: AttackMode,
    /// Logit scale of the attacked softmax.
    pub temperature: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::pgd(DEFAULT_BUDGET, DEFAULT_STEPS)
    }
}

impl AttackConfig {
    /// ℓ∞ PGD with step size `2.5 · budget / steps`.
    pub fn pgd(budget: f64, steps: usize) -> Self {
        Self {
            budget,
            steps,
            step_size: 2.5 * budget / steps.max(1) as f64,
            norm: AttackNorm::LInf,
            mode: AttackMode::PgdCosine,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("attack needs at least one step".into()));
        }
        for (name, v) in [("budget", self.budget), ("step size", self.step_size), ("temperature", self.temperature)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("attack {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuredNoiseSpec {
    pub parallel_scale: f64,
    pub orthogonal_scale: f64,
}

impl StructuredNoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("parallel", self.parallel_scale), ("orthogonal", self.orthogonal_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} scale must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Row-normalized class means, the prototypes the cosine classifier uses.
pub fn unit_means(bank: &TextBank) -> Result<Matrix> {
    let means = bank.means();
    let mut out = Matrix::zeros(means.rows(), means.cols());
    for (y, m) in means.iter_rows().enumerate() {
        let u = linalg::normalized(m).ok_or_else(|| Error::ZeroNorm(format!("mean text feature of class {y}")))?;
        out.row_mut(y).copy_from_slice(&u);
    }
    Ok(out)
}

/// Cross-entropy of `softmax(T · cos(v, μ̂_y))` at `label` and its gradient
/// with respect to `v`.
pub fn cross_entropy_and_grad(
    v: &[f64],
    label: usize,
    unit_means: &Matrix,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let k = unit_means.rows();
    if label >= k {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {k} classes")));
    }
    let norm = linalg::norm(v);
    if norm == 0.0 {
        return Err(Error::ZeroNorm("attacked feature".into()));
    }
    let cos: Vec<f64> = unit_means.iter_rows().map(|m| linalg::dot(v, m) / norm).collect();
    let logits: Vec<f64> = cos.iter().map(|c| temperature * c).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let loss = max + z.ln() - logits[label];
    let p: Vec<f64> = logits.iter().map(|l| (l - max).exp() / z).collect();

    // dcos_y/dv = μ̂_y/‖v‖ − cos_y · v/‖v‖²
    let mut coef = p;
    coef[label] = -coef.iter().enumerate().filter(|&(y, _)| y != label).map(|(_, q)| q).sum::<f64>();
    let mut grad = vec![0.0; v.len()];
    let mut radial = 0.0;
    for (y, m) in unit_means.iter_rows().enumerate() {
        linalg::axpy(temperature * coef[y] / norm, m, &mut grad);
        radial += coef[y] * cos[y];
    }
    linalg::axpy(-temperature * radial / (norm * norm), v, &mut grad);
    Ok((loss, grad))
}

fn clip(delta: &mut [f64], norm: AttackNorm, budget: f64) {
    match norm {
        AttackNorm::LInf => delta.iter_mut().for_each(|d| *d = d.clamp(-budget, budget)),
        AttackNorm::L2 => {
            let n = linalg::norm(delta);
            if n > budget {
                delta.iter_mut().for_each(|d| *d *= budget / n);
            }
        }
    }
}

/// PGD ascent on the cosine classifier's cross-entropy from `δ = 0`.
///
/// Returns the iterate with the highest loss seen, so the result is never
/// less harmful than the clean input.
pub fn pgd_embedding(x: &[f64], label: usize, unit_means: &Matrix, cfg: &AttackConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x.len() != unit_means.cols() {
        return Err(Error::DimensionMismatch { context: "attacked feature", expected: unit_means.cols(), got: x.len() });
    }
    let (mut best_loss, mut grad) = cross_entropy_and_grad(x, label, unit_means, cfg.temperature)?;
    let mut best = x.to_vec();
    let mut delta = vec![0.0; x.len()];
    let mut current = x.to_vec();
    for _ in 0..cfg.steps {
        match cfg.norm {
            AttackNorm::LInf => {
                for (d, g) in delta.iter_mut().zip(&grad) {
                    // sign(0) = 0
                    if *g != 0.0 {
                        *d += cfg.step_size * g.signum();
                    }
                }
            }
            AttackNorm::L2 => {
                let n = linalg::norm(&grad);
                if n > 0.0 {
                    linalg::axpy(cfg.step_size / n, &grad, &mut delta);
                }
            }
        }
        clip(&mut delta, cfg.norm, cfg.budget);
        for ((c, xi), d) in current.iter_mut().zip(x).zip(&delta) {
            *c = xi + d;
        }
        let (loss, g) = cross_entropy_and_grad(&current, label, unit_means, cfg.temperature)?;
        if loss > best_loss {
            best_loss = loss;
            best.copy_from_slice(&current);
        }
        grad = g;
    }
    Ok(best)
}

fn random_parallel(rng: &mut Rng, projector: &SubspaceProjector, scale: f64) -> Result<Vec<f64>> {
    let d = projector.dim();
    if scale == 0.0 {
        return Ok(vec![0.0; d]);
    }
    loop {
        let p = projector.project(&rng::gaussian_vec(rng, d))?;
        if let Some(u) = linalg::normalized(&p) {
            return Ok(u.into_iter().map(|v| v * scale).collect());
        }
    }
}

fn random_orthogonal(rng: &mut Rng, projector: &SubspaceProjector, scale: f64) -> Result<Vec<f64>> {
    let d = projector.dim();
    if scale == 0.0 {
        return Ok(vec![0.0; d]);
    }
    loop {
        let g = rng::gaussian_vec(rng, d);
        let mut o = linalg::sub(&g, &projector.project(&g)?);
        // second pass removes the residue left by cancellation
        let back = projector.project(&o)?;
        o = linalg::sub(&o, &back);
        if let Some(u) = linalg::normalized(&o) {
            return Ok(u.into_iter().map(|v| v * scale).collect());
        }
    }
}

fn structured_delta(projector: &SubspaceProjector, spec: &StructuredNoiseSpec, rng: &mut Rng) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.orthogonal_scale > 0.0 && projector.components() == projector.dim() {
        return Err(Error::InvalidArgument(
            "orthogonal noise needs a proper subspace (components < dim)".into(),
        ));
    }
    let mut delta = random_parallel(rng, projector, spec.parallel_scale)?;
    let orth = random_orthogonal(rng, projector, spec.orthogonal_scale)?;
    linalg::axpy(1.0, &orth, &mut delta);
    Ok(delta)
}

/// `x + δ_∥ + δ_⊥` with `‖δ_∥‖ = parallel_scale`, `‖δ_⊥‖ = orthogonal_scale`
/// and Gaussian directions drawn from `seed`.
pub fn structured_perturb(
    x: &[f64],
    projector: &SubspaceProjector,
    spec: &StructuredNoiseSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    if x.len() != projector.dim() {
        return Err(Error::DimensionMismatch { context: "perturbed feature", expected: projector.dim(), got: x.len() });
    }
    let delta = structured_delta(projector, spec, &mut rng::stream(seed, 0))?;
    Ok(x.iter().zip(&delta).map(|(a, b)| a + b).collect())
}

/// Rounds `x + δ` to f32 without leaving the budget ball of the clean f32
/// input.
fn round_within_budget(clean: &[f32], attacked: &[f64], norm: AttackNorm, budget: f64) -> Vec<f32> {
    let mut out: Vec<f32> = attacked.iter().map(|&v| v as f32).collect();
    match norm {
        AttackNorm::LInf => {
            for (o, &c) in out.iter_mut().zip(clean) {
                while (f64::from(*o) - f64::from(c)).abs() > budget {
                    *o = step_toward(*o, c);
                }
            }
        }
        AttackNorm::L2 => {
            let mut shrink = 1.0;
            loop {
                let diff: Vec<f64> = out.iter().zip(clean).map(|(o, c)| f64::from(*o) - f64::from(*c)).collect();
                if linalg::norm(&diff) <= budget {
                    break;
                }
                shrink *= 1.0 - 1e-6;
                for ((o, &c), &a) in out.iter_mut().zip(clean).zip(attacked) {
                    *o = (f64::from(c) + shrink * (a - f64::from(c))) as f32;
                }
            }
        }
    }
    out
}

/// Next f32 from `v` in the direction of `target`.
fn step_toward(v: f32, target: f32) -> f32 {
    if v == target {
        return v;
    }
    let bits = v.to_bits();
    let up = (v < target) == (v >= 0.0);
    if v == 0.0 {
        f32::from_bits(1).copysign(target)
    } else if up {
        f32::from_bits(bits + 1)
    } else {
        f32::from_bits(bits - 1)
    }
}

/// Perturbs every view of every sample. PGD uses each sample's label against
/// the cosine classifier on `bank`; structured noise draws an independent RNG
/// stream per `(sample, view)`. The result is marked as raw-normalized and its
/// manifest metadata records the attack.
pub fn attack_bundle(
    bundle: &EmbeddingBundle,
    cfg: &AttackConfig,
    bank: &TextBank,
    projector: Option<&SubspaceProjector>,
    spec: Option<&StructuredNoiseSpec>,
    seed: u64,
) -> Result<EmbeddingBundle> {
    let d = bundle.dim();
    let n = bundle.views_per_sample();
    if bank.dim() != d {
        return Err(Error::DimensionMismatch { context: "text bank vs bundle", expected: d, got: bank.dim() });
    }
    let structured = match cfg.mode {
        AttackMode::PgdCosine => {
            cfg.validate()?;
            None
        }
        AttackMode::Structured => {
            let p = projector.ok_or_else(|| Error::InvalidArgument("structured attack needs a projector".into()))?;
            let s = spec.ok_or_else(|| Error::InvalidArgument("structured attack needs noise scales".into()))?;
            s.validate()?;
            if p.dim() != d {
                return Err(Error::DimensionMismatch { context: "projector vs bundle", expected: d, got: p.dim() });
            }
            Some((p, s))
        }
    };
    let means = unit_means(bank)?;

    let per_sample: Vec<Vec<f32>> = (0..bundle.num_samples())
        .into_par_iter()
        .map(|s| {
            let mut out = Vec::with_capacity(n * d);
            for v in 0..n {
                let clean32 = bundle.view(s, v);
                let clean: Vec<f64> = clean32.iter().map(|&x| f64::from(x)).collect();
                let attacked = match structured {
                    None => {
                        let a = pgd_embedding(&clean, bundle.labels()[s] as usize, &means, cfg)?;
                        round_within_budget(clean32, &a, cfg.norm, cfg.budget)
                    }
                    Some((p, spec)) => {
                        let mut rng = rng::stream(seed, (s * n + v) as u64);
                        let delta = structured_delta(p, spec, &mut rng)?;
                        clean.iter().zip(&delta).map(|(a, b)| (a + b) as f32).collect()
                    }
                };
                out.extend(attacked);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = bundle.manifest().clone();
    manifest.normalization = Normalization::Raw;
    let mut record = json!({
        "mode": cfg.mode.to_string(),
        "seed": seed,
    });
    match cfg.mode {
        AttackMode::PgdCosine => {
            record["budget"] = json!(cfg.budget);
            record["steps"] = json!(cfg.steps);
            record["step_size"] = json!(cfg.step_size);
            record["norm"] = json!(cfg.norm.to_string());
            record["temperature"] = json!(cfg.temperature);
        }
        AttackMode::Structured => {
            let s = spec.copied().unwrap_or_default();
            record["parallel_scale"] = json!(s.parallel_scale);
            record["orthogonal_scale"] = json!(s.orthogonal_scale);
            record["generator"] = json!(GENERATOR_ID);
        }
    }
    manifest.set_metadata("attack", record);
    bundle.with_image_views(per_sample.concat(), manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_means() -> Matrix {
        Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap()
    }

    fn fd_grad(v: &[f64], label: usize, means: &Matrix, t: f64, h: f64) -> Vec<f64> {
        (0..v.len())
            .map(|i| {
                let mut a = v.to_vec();
                let mut b = v.to_vec();
                a[i] += h;
                b[i] -= h;
                let la = cross_entropy_and_grad(&a, label, means, t).unwrap().0;
                let lb = cross_entropy_and_grad(&b, label, means, t).unwrap().0;
                (la - lb) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let means = Matrix::from_rows(&[[0.6, 0.8, 0.0], [0.0, 0.6, 0.8], [0.8, 0.0, -0.6]]).unwrap();
        let v = [0.3, -0.5, 0.9];
        for label in 0..3 {
            let (_, g) = cross_entropy_and_grad(&v, label, &means, 5.0).unwrap();
            let fd = fd_grad(&v, label, &means, 5.0, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn one_linf_step_moves_by_step_size() {
        let means = two_class_means();
        let x = [1.0, 0.0, 0.0];
        let cfg = AttackConfig { steps: 1, temperature: 1.0, ..AttackConfig::pgd(0.05, 1) };
        let out = pgd_embedding(&x, 0, &means, &cfg).unwrap();
        let (_, g) = cross_entropy_and_grad(&x, 0, &means, 1.0).unwrap();
        let fd = fd_grad(&x, 0, &means, 1.0, 1e-5);
        for i in 0..3 {
            let moved = out[i] - x[i];
            if fd[i].abs() > 1e-8 {
                assert_eq!(g[i].signum(), fd[i].signum());
                assert!((moved - cfg.budget.min(cfg.step_size) * fd[i].signum()).abs() < 1e-15);
            } else {
                assert_eq!(moved, 0.0);
            }
        }
    }

    #[test]
    fn tiny_budget_is_a_no_op() {
        let means = two_class_means();
        let x = [0.7, 0.7, 0.1];
        let out = pgd_embedding(&x, 1, &means, &AttackConfig::pgd(1e-12, 10)).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pgd_never_lowers_the_loss() {
        let means = two_class_means();
        let x = [0.9, 0.3, 0.3];
        for norm in [AttackNorm::LInf, AttackNorm::L2] {
            let cfg = AttackConfig { norm, ..AttackConfig::pgd(0.2, 10) };
            let out = pgd_embedding(&x, 0, &means, &cfg).unwrap();
            let before = cross_entropy_and_grad(&x, 0, &means, 100.0).unwrap().0;
            let after = cross_entropy_and_grad(&out, 0, &means, 100.0).unwrap().0;
            assert!(after >= before);
            assert!(norm.of(&linalg::sub(&out, &x)) <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn bad_label_rejected() {
        let err = pgd_embedding(&[1.0, 0.0, 0.0], 2, &two_class_means(), &AttackConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    fn e1_e2_projector() -> SubspaceProjector {
        SubspaceProjector::from_axes(two_class_means(), vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn structured_noise_norms() {
        let p = e1_e2_projector();
        let x = [0.6, 0.8, 0.0];
        let zero = structured_perturb(&x, &p, &StructuredNoiseSpec::default(), 3).unwrap();
        assert_eq!(zero, x.to_vec());

        let spec = StructuredNoiseSpec { parallel_scale: 0.1, orthogonal_scale: 0.3 };
        let out = structured_perturb(&x, &p, &spec, 3).unwrap();
        let split = p.split_perturbation(&linalg::sub(&out, &x)).unwrap();
        assert!((linalg::norm(&split.parallel) - 0.1).abs() < 1e-6);
        assert!((linalg::norm(&split.orthogonal) - 0.3).abs() < 1e-6);

        let orth = StructuredNoiseSpec { parallel_scale: 0.0, orthogonal_scale: 0.3 };
        let out = structured_perturb(&x, &p, &orth, 9).unwrap();
        let (a, b) = (p.project(&out).unwrap(), p.project(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-6));
    }

    #[test]
    fn full_rank_projector_has_no_orthogonal_room() {
        let p = SubspaceProjector::from_axes(Matrix::identity(2), vec![1.0, 1.0]).unwrap();
        let spec = StructuredNoiseSpec { parallel_scale: 0.0, orthogonal_scale: 0.1 };
        assert!(structured_perturb(&[1.0, 0.0], &p, &spec, 0).is_err());
    }

    #[test]
    fn rounding_respects_the_budget() {
        let clean = [0.3f32, -0.7, 0.1];
        let b = 0.05;
        let attacked: Vec<f64> = clean.iter().map(|&c| f64::from(c) + b).collect();
        let out = round_within_budget(&clean, &attacked, AttackNorm::LInf, b);
        for (o, c) in out.iter().zip(&clean) {
            assert!((f64::from(*o) - f64::from(*c)).abs() <= b);
        }
        let attacked: Vec<f64> = clean.iter().map(|&c| f64::from(c) + b / 3f64.sqrt()).collect();
        let out = round_within_budget(&clean, &attacked, AttackNorm::L2, b);
        let diff: Vec<f64> = out.iter().zip(&clean).map(|(o, c)| f64::from(*o) - f64::from(*c)).collect();
        assert!(linalg::norm(&diff) <= b);
    }

    #[test]
    fn step_toward_walks_one_ulp() {
        assert_eq!(step_toward(1.0, 0.0), f32::from_bits(1.0f32.to_bits() - 1));
        assert_eq!(step_toward(-1.0, 0.0), f32::from_bits((-1.0f32).to_bits() - 1));
        assert_eq!(step_toward(1.0, 2.0), f32::from_bits(1.0f32.to_bits() + 1));
        assert_eq!(step_toward(0.5, 0.5), 0.5);
    }
}
