mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use projot_core::attack::{attack_bundle, DEFAULT_BUDGET, DEFAULT_STEPS, DEFAULT_TEMPERATURE};
use projot_core::bundle::{generate_synthetic, load_bundle, write_bundle};
use projot_core::classifier::{evaluate_with_bank, predict_bundle};
use projot_core::pipeline::{run_benchmark, BenchmarkConfig, BenchmarkRow};
use projot_core::subspace::{build_projector_with, DEFAULT_COMPONENTS};
use projot_core::verify::{self, MarginShape, SuiteReport};
use projot_core::{
    AttackConfig, AttackMode, AttackNorm, ClassifierConfig, EmbeddingBundle, EntropySign, Error, Method,
    SinkhornParams, StructuredNoiseSpec, SubspaceProjector, SyntheticParams, TextBank, WeightingConfig,
};

use output::{CliError, Outputs};

#[derive(Parser, Debug)]
#[command(name = "projot", version, about = "Robust zero-shot classification over precomputed embeddings")]
struct Cli {
    /// Worker threads for per-sample parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic bundle whose text and images share a random subspace.
    GenSynthetic(GenArgs),
    /// Build the text subspace projector and save it as proj.bin.
    BuildSubspace(BuildArgs),
    /// Evaluate one classifier on a bundle.
    Classify(ClassifyArgs),
    /// Write an attacked copy of a bundle.
    SimulateAttack(AttackArgs),
    /// Run a property suite.
    Verify(VerifyArgs),
    /// Evaluate every method on a bundle and on its attacked copy.
    Benchmark(BenchmarkArgs),
    /// Export coordinates on the first two subspace axes as CSV.
    PcaExport(PcaArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    descriptions: usize,
    #[arg(long, default_value_t = 5)]
    views: usize,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_scale: f64,
    #[arg(long, default_value_t = 16)]
    subspace_dim: usize,
}

#[derive(Args, Debug, Clone)]
struct ProjectorArgs {
    /// Load the projector from a proj.bin file instead of building it.
    #[arg(long)]
    projector: Option<PathBuf>,
    /// Number of subspace components when building the projector.
    #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
    components: usize,
    /// Remove the column means of the text matrix before the SVD.
    #[arg(long)]
    center: bool,
}

impl ProjectorArgs {
    fn resolve(&self, bundle: &EmbeddingBundle) -> Result<SubspaceProjector, Error> {
        match &self.projector {
            Some(path) => SubspaceProjector::load(path),
            None => build_projector_with(&bundle.text_matrix(), self.components, self.center),
        }
    }
}

#[derive(Args, Debug, Clone)]
struct WeightingArgs {
    #[arg(long, default_value_t = 100.0)]
    temperature_logit: f64,
    #[arg(long, default_value_t = EntropySign::Semantic)]
    entropy_sign: EntropySign,
    #[arg(long, default_value_t = 1.0)]
    temperature_weight: f64,
}

impl WeightingArgs {
    fn config(&self) -> WeightingConfig {
        WeightingConfig {
            temperature_logit: self.temperature_logit,
            entropy_sign: self.entropy_sign,
            temperature_weight: self.temperature_weight,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct OtArgs {
    #[arg(long, default_value_t = 0.01)]
    ot_epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    ot_max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    ot_tolerance: f64,
}

impl OtArgs {
    fn params(&self) -> SinkhornParams {
        SinkhornParams { epsilon: self.ot_epsilon, max_iters: self.ot_max_iters, tolerance: self.ot_tolerance }
    }
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
    components: usize,
    #[arg(long)]
    center: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = Method::OtProjected)]
    method: Method,
    #[command(flatten)]
    projector: ProjectorArgs,
    #[command(flatten)]
    weighting: WeightingArgs,
    #[command(flatten)]
    ot: OtArgs,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-sample predictions as CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Pgd,
    Structured,
}

impl From<ModeArg> for AttackMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pgd => AttackMode::PgdCosine,
            ModeArg::Structured => AttackMode::Structured,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct AttackParams {
    #[arg(long, value_enum, default_value_t = ModeArg::Pgd)]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: f64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Defaults to 2.5 · budget / steps.
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = AttackNorm::LInf)]
    norm: AttackNorm,
    /// Logit scale of the attacked cosine softmax.
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    attack_temperature: f64,
    #[arg(long, default_value_t = 0.0)]
    parallel_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    orthogonal_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl AttackParams {
    fn config(&self) -> AttackConfig {
        let base = AttackConfig::pgd(self.budget, self.steps);
        AttackConfig {
            step_size: self.step_size.unwrap_or(base.step_size),
            norm: self.norm,
            mode: self.mode.into(),
            temperature: self.attack_temperature,
            ..base
        }
    }

    fn spec(&self) -> StructuredNoiseSpec {
        StructuredNoiseSpec { parallel_scale: self.parallel_scale, orthogonal_scale: self.orthogonal_scale }
    }
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    attack: AttackParams,
    #[command(flatten)]
    projector: ProjectorArgs,
    #[command(flatten)]
    weighting: WeightingArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Suite {
    Projection,
    Distortion,
    Margin,
    Dot,
    Dominance,
    OtOracle,
    Weights,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Defaults depend on the suite.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    epsilon_scale: f64,
    /// Largest N and M in the solver oracle suite.
    #[arg(long, default_value_t = 10)]
    max_size: usize,
    #[arg(long, default_value_t = 1000)]
    ot_max_iters: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttackChoice {
    None,
    Pgd,
    Structured,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
    components: usize,
    #[arg(long)]
    center: bool,
    /// Comma-separated subset of methods.
    #[arg(long, value_delimiter = ',', default_values_t = Method::ALL.to_vec())]
    methods: Vec<Method>,
    #[arg(long, value_enum, default_value_t = AttackChoice::Pgd)]
    attack: AttackChoice,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: f64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = AttackNorm::LInf)]
    norm: AttackNorm,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    attack_temperature: f64,
    #[arg(long, default_value_t = 0.0)]
    parallel_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    orthogonal_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    weighting: WeightingArgs,
    #[command(flatten)]
    ot: OtArgs,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PcaArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[command(flatten)]
    projector: ProjectorArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return output::report_error(&CliError::Usage(e.to_string()));
        }
    };
    let mut outputs = Outputs::default();
    match run(cli, &mut outputs) {
        Ok(code) => code,
        Err(e) => {
            outputs.remove_all();
            output::report_error(&e)
        }
    }
}

fn run(cli: Cli, outputs: &mut Outputs) -> Result<ExitCode, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, outputs),
        Command::BuildSubspace(a) => build_subspace(a, outputs),
        Command::Classify(a) => classify(a, outputs),
        Command::SimulateAttack(a) => simulate_attack(a, outputs),
        Command::Verify(a) => verify_suite(a, outputs),
        Command::Benchmark(a) => benchmark(a, outputs),
        Command::PcaExport(a) => pca_export(a, outputs),
    }
}

fn gen_synthetic(a: GenArgs, outputs: &mut Outputs) -> Result<ExitCode, CliError> {
    let params = SyntheticParams {
        seed: a.seed,
        dim: a.dim,
        num_classes: a.classes,
        descriptions_per_class: a.descriptions,
        views_per_sample: a.views,
        num_samples: a.samples,
        noise_scale: a.noise_scale,
        subspace_dim: a.subspace_dim,
    };
    let bundle = generate_synthetic(&params)?;
    outputs.register(&a.out);
    write_bundle(&bundle, &a.out)?;
    println!(
        "wrote {}: d={} K={} M={} N={} S={}",
        a.out.display(),
        params.dim,
        params.num_classes,
        params.descriptions_per_class,
        params.views_per_sample,
        params.num_samples
    );
    Ok(ExitCode::SUCCESS)
}

fn build_subspace(a: BuildArgs, outputs: &mut Outputs) -> Result<ExitCode, CliError> {
    let bundle = load_bundle(&a.bundle)?;
    let p = build_projector_with(&bundle.text_matrix(), a.components, a.center)?;
    outputs.register(&a.out);
    p.save(&a.out)?;
    let shown: Vec<String> = p.singular_values().iter().take(8).map(|s| format!("{s:.4}")).collect();
    println!("wrote {}: d={} C={} top singular values {}", a.out.display(), p.dim(), p.components(), shown.join(" "));
    Ok(ExitCode::SUCCESS)
}

fn classify(a: ClassifyArgs, outputs: &mut Outputs) -> Result<ExitCode, CliError> {
    let bundle = load_bundle(&a.bundle)?;
    let cfg = ClassifierConfig {
        method: a.method,
        components: a.projector.components,
        weighting: a.weighting.config(),
        ot: a.ot.params(),
    };
    cfg.validate()?;
    let projector = if a.method.needs_projector() { Some(a.projector.resolve(&bundle)?) } else { None };
    let bank = TextBank::from_bundle(&bundle, &cfg.weighting)?;
    let report = evaluate_with_bank(&bundle, &bank, &cfg, projector.as_ref())?;
    let row = BenchmarkRow {
        method: report.method,
        clean_accuracy: report.accuracy,
        robust_accuracy: None,
        mean_margin: report.mean_margin,
        samples: report.samples,
        seconds: report.seconds,
    };
    output::print_rows(std::slice::from_ref(&row));
    if let Some(path) = &a.out {
        let doc = json!({
            "command": "classify",
            "bundle": a.bundle,
            "projector": a.projector.projector,
            "center": a.projector.center,
            "report": report,
        });
        outputs.write_json(path, &doc)?;
    }
    if let Some(path) = &a.predictions {
        let preds = predict_bundle(&bundle, &bank, &cfg, projector.as_ref())?;
        #[derive(Serialize)]
        struct PredRow {
            sample: usize,
            label: u32,
            predicted: usize,
            margin: f64,
        }
        let rows: Vec<PredRow> = preds
            .iter()
            .zip(bundle.labels())
            .enumerate()
            .map(|(sample, (p, &label))| PredRow { sample, label, predicted: p.label, margin: p.margin })
            .collect();
        outputs.write_csv(path, &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate_attack(a: AttackArgs, outputs: &mut Outputs) -> Result<ExitCode, CliError> {
    let bundle = load_bundle(&a.bundle)?;
    let cfg = a.attack.config();
    let spec = a.attack.spec();
    let projector = match cfg.mode {
        AttackMode::Structured => Some(a.projector.resolve(&bundle)?),
        AttackMode::PgdCosine => None,
    };
    let bank = TextBank::from_bundle(&bundle, &a.weighting.config())?;
    let attacked = attack_bundle(&bundle, &cfg, &bank, projector.as_ref(), Some(&spec), a.attack.seed)?;
    outputs.register(&a.out);
    write_bundle(&attacked, &a.out)?;
    println!("wrote {} ({} attack, {} samples)", a.out.display(), cfg.mode, attacked.num_samples());
    Ok(ExitCode::SUCCESS)
}

fn verify_suite(a: VerifyArgs, outputs: &mut Outputs) -> Result<ExitCode, CliError> {
    let (default_trials, default_dim, default_c) = match a.suite {
        Suite::Projection | Suite::Dot | Suite::Dominance => (10_000, 64, 16),
        Suite::Distortion => (10_000, 32, 8),
        Suite::Margin => (1_000, 32, 8),
        Suite::OtOracle => (200, 0, 0),
        Suite::Weights => (1_000, 16, 0),
    };
    let trials = a.trials.unwrap_or(default_trials);
    let dim = a.dim.unwrap_or(default_dim);
    let components = a.components.unwrap_or(default_c);
    let report: SuiteReport = match a.suite {
        Suite::Projection => verify::check_projection_identities(trials, a.seed, dim, components)?,
        Suite::Distortion => verify::check_distortion(trials, a.seed, dim, components, a.epsilon_scale)?,
        Suite::Margin => {
            let shape = MarginShape { dim, components, ..MarginShape::default() };
            verify::check_margin(trials, a.seed, &shape)?
        }
        Suite::Dot => verify::check_dot_preservation(trials, a.seed, dim, components)?,
        Suite::Dominance => verify::check_cost_dominance(trials, a.seed, dim, components)?,
        Suite::OtOracle => verify::check_ot_oracle(trials, a.seed, a.max_size, a.ot_max_iters)?,
        Suite::Weights => verify::check_weights(trials, a.seed, dim, 10, 5)?,
    };
    output::print_suite(&report, a.out.is_none());
    let doc = json!({
        "command": "verify",
        "suite": a.suite,
        "trials": trials,
        "seed": a.seed,
        "dim": dim,
        "components": components,
        "epsilon_scale": a.epsilon_scale,
        "max_size": a.max_size,
        "ot_max_iters": a.ot_max_iters,
        "pass": report.pass,
        "report": report,
    });
    match &a.out {
        Some(path) => outputs.write_json(path, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc).expect("serializable report")),
    }
    if report.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        outputs.keep();
        Err(CliError::SuiteFailed(format!("suite {} failed checks: {}", report.suite, failed.join(", "))))
    }
}

fn benchmark(a: BenchmarkArgs, outputs: &mut Outputs) -> Result<ExitCode, CliError> {
    let bundle = load_bundle(&a.bundle)?;
    let attack = match a.attack {
        AttackChoice::None => None,
        AttackChoice::Pgd | AttackChoice::Structured => {
            let base = AttackConfig::pgd(a.budget, a.steps);
            Some(AttackConfig {
                step_size: a.step_size.unwrap_or(base.step_size),
                norm: a.norm,
                temperature: a.attack_temperature,
                mode: if matches!(a.attack, AttackChoice::Pgd) { AttackMode::PgdCosine } else { AttackMode::Structured },
                ..base
            })
        }
    };
    let structured = matches!(a.attack, AttackChoice::Structured)
        .then_some(StructuredNoiseSpec { parallel_scale: a.parallel_scale, orthogonal_scale: a.orthogonal_scale });
    let cfg = BenchmarkConfig {
        classifier: ClassifierConfig {
            method: Method::OtProjected,
            components: a.components,
            weighting: a.weighting.config(),
            ot: a.ot.params(),
        },
        methods: a.methods,
        center: a.center,
        attack,
        structured,
        seed: a.seed,
    };
    let report = run_benchmark(&bundle, &cfg)?;
    output::print_rows(&report.rows);
    if let Some(path) = &a.out_json {
        let doc = json!({ "command": "benchmark", "bundle": a.bundle, "report": report });
        outputs.write_json(path, &doc)?;
    }
    if let Some(path) = &a.out_csv {
        outputs.write_csv(path, &report.rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn pca_export(a: PcaArgs, outputs: &mut Outputs) -> Result<ExitCode, CliError> {
    let bundle = load_bundle(&a.bundle)?;
    let p = a.projector.resolve(&bundle)?;
    #[derive(Serialize)]
    struct PcaRow {
        kind: &'static str,
        class: usize,
        index: usize,
        view: Option<usize>,
        pc1: f64,
        pc2: f64,
    }
    let mut rows = Vec::new();
    for y in 0..bundle.num_classes() {
        let coords = p.pca_coords(&bundle.class_text(y))?;
        for m in 0..coords.rows() {
            rows.push(PcaRow { kind: "text", class: y, index: m, view: None, pc1: coords[(m, 0)], pc2: coords[(m, 1)] });
        }
    }
    for s in 0..bundle.num_samples() {
        let coords = p.pca_coords(&bundle.sample_views(s))?;
        let class = bundle.labels()[s] as usize;
        for n in 0..coords.rows() {
            rows.push(PcaRow { kind: "image", class, index: s, view: Some(n), pc1: coords[(n, 0)], pc2: coords[(n, 1)] });
        }
    }
    outputs.write_csv(&a.out, &rows)?;
    println!("wrote {} ({} rows)", a.out.display(), rows.len());
    Ok(ExitCode::SUCCESS)
}
