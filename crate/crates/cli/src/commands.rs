use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use polfuse_core::envs::{read_trajectories_jsonl, write_trajectories_jsonl};
use polfuse_core::experiment::run_experiment;
use polfuse_core::feedback::{IntentSpec, Mode, ScoredSet};
use polfuse_core::harness::{
    emit_report, evaluate, sweep_eta, sweep_tmax, train_morl, Artifacts, EvalPlan, MethodVariant, ReportRow,
};
use polfuse_core::intent::{train_intent, InputEncoding, IntentModel, IntentTrainConfig};
use polfuse_core::learner::{sample_feedback_corpus, train_task, LearnerConfig, QFunction, TrajectorySet};
use polfuse_core::seed::{derive_seed, stream};
use polfuse_core::theory::{
    verify_bound, verify_gradients, verify_product_non_invariance, verify_sqrt_invariance, Bound, VerificationReport,
};
use polfuse_core::{EnvConfig, Error, ExperimentConfig, FusionParams, Result};
use serde::de::DeserializeOwned;

use crate::manifest::{RunManifest, StageSeeds};
use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "polfuse", version, about = "Train, personalise and evaluate fused policies")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the task policy and save it with its training trajectories.
    TrainTask(TrainTaskArgs),
    /// Score a trajectory corpus with a simulated user.
    Label(LabelArgs),
    /// Fit the intent model to a scored corpus.
    TrainIntent(TrainIntentArgs),
    /// Evaluate method variants and parameter sweeps.
    Eval(EvalArgs),
    /// Run the numerical checks of the fusion rules and the gradient code.
    Verify(VerifyArgs),
    /// Run a whole experiment from one JSON config.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct TrainTaskArgs {
    /// Environment config (JSON, tagged by `kind`).
    #[arg(long)]
    env: PathBuf,
    /// Learner config (JSON). Defaults depend on the environment.
    #[arg(long)]
    learner: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Number of training trajectories sampled into the feedback corpus.
    #[arg(long, default_value_t = 2000)]
    corpus_size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct LabelArgs {
    /// Manifest written by `train-task`; updated with the scored corpus.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Environment config, if no manifest is given.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Trajectory corpus (JSONL); defaults to the manifest's corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Intent spec (JSON).
    #[arg(long, conflicts_with = "mode")]
    intent_spec: Option<PathBuf>,
    /// Use the environment's own regions under this mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainIntentArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    env: Option<PathBuf>,
    /// Scored corpus (JSONL); defaults to the manifest's.
    #[arg(long)]
    scored: Option<PathBuf>,
    /// Intent training config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Model output path; a `.loss.csv` curve is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Dqn,
    Rudder,
    Static,
    Dynamic,
    Morl,
    All,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Intent model; defaults to the manifest's.
    #[arg(long)]
    intent: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: VariantArg,
    /// Mode label for the report; defaults to the manifest's intent spec.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Fusion parameters; defaults T_phi=0.4, T_min=1, T_max=10, eta=0, m=1.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    t_phi: Option<f64>,
    #[arg(long)]
    t_min: Option<f64>,
    /// Fixed intent temperature of the static variant (default T_min).
    #[arg(long)]
    t_psi: Option<f64>,
    /// One value sets eta; several run a sweep of the dynamic variant.
    #[arg(long, value_delimiter = ',')]
    eta: Vec<f64>,
    /// One value sets T_max; several run a sweep of the dynamic variant.
    #[arg(long, value_delimiter = ',')]
    tmax: Vec<f64>,
    /// Environment-reward weight of the scalarised baseline
    /// (`alpha * r_env + (1 - alpha) * r_human`); several values give one row each.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// Passes over the corpus when training the scalarised baseline.
    #[arg(long, default_value_t = 30)]
    morl_passes: usize,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    /// Fusing a policy with itself returns it.
    SqrtInvariance,
    /// The stated KL bound of geometric-mean fusion.
    SqrtFusion,
    /// The same bound with Q* taken as max |Q|.
    SqrtFusionAbs,
    /// The stated KL bound of product fusion.
    ProductFusion,
    /// Product-fusion bound with the entropy term restored.
    ProductFusionEntropy,
    /// Product fusion changes the task policy unless the intent is uniform.
    ProductDivergence,
    /// Backpropagation against finite differences.
    Gradcheck,
    All,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    which: Check,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Instances for the gradient check.
    #[arg(long, default_value_t = 20)]
    gradcheck_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb the analytic gradient so the gradient check must fail.
    #[arg(long)]
    corrupt_gradient: bool,
    /// Directory for `verify.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON); missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::TrainTask(a) => cmd_train_task(a)?,
        Command::Label(a) => cmd_label(a)?,
        Command::TrainIntent(a) => cmd_train_intent(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Verify(a) => return cmd_verify(a),
        Command::Run(a) => cmd_run(a)?,
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        let field = serde_json::from_str(&text).ok().and_then(|v| offending_field::<T>(&v));
        let at = field.map(|f| format!(" (field `{f}`)")).unwrap_or_default();
        Error::Config(format!("{what} {}{at}: {e}", path.display()))
    })
}

/// Configs default every missing field, so the first key that fails to
/// deserialize on its own (next to the `kind` tag, if any) is the culprit.
fn offending_field<T: DeserializeOwned>(value: &serde_json::Value) -> Option<String> {
    let obj = value.as_object()?;
    obj.iter().filter(|(k, _)| k.as_str() != "kind").find_map(|(k, v)| {
        let mut single = serde_json::Map::new();
        if let Some(kind) = obj.get("kind") {
            single.insert("kind".into(), kind.clone());
        }
        single.insert(k.clone(), v.clone());
        serde_json::from_value::<T>(serde_json::Value::Object(single)).is_err().then(|| k.clone())
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_env(path: &Path) -> Result<EnvConfig> {
    let env: EnvConfig = read_json(path, "environment config")?;
    env.validate()?;
    Ok(env)
}

fn read_corpus(path: &Path) -> Result<Vec<polfuse_core::Trajectory>> {
    read_trajectories_jsonl(BufReader::new(File::open(path)?))
}

fn cmd_train_task(a: TrainTaskArgs) -> Result<()> {
    let env = load_env(&a.env)?;
    let mut learner = match &a.learner {
        Some(p) => read_json::<LearnerConfig>(p, "learner config")?,
        None => LearnerConfig::for_env(env.kind()),
    };
    if let Some(n) = a.episodes {
        learner.episodes = n;
    }
    learner.validate()?;
    std::fs::create_dir_all(&a.out)?;
    let seeds = StageSeeds {
        task_training: derive_seed(a.seed, stream::TASK_TRAINING, 0),
        corpus_sample: derive_seed(a.seed, stream::CORPUS_SAMPLE, 0),
        intent_training: None,
    };
    let outcome = train_task(&env, &learner, seeds.task_training)?;
    if outcome.greedy_success < 0.95 {
        eprintln!("warning: greedy policy reaches the target in only {:.1}% of evaluation episodes", 100.0 * outcome.greedy_success);
    }
    let n = a.corpus_size.min(outcome.trajectories.len());
    let corpus = sample_feedback_corpus(&outcome.trajectories, n, seeds.corpus_sample)?;

    outcome.q.save(&a.out.join("q_function.json"))?;
    write_trajectories_jsonl(BufWriter::new(File::create(a.out.join("trajectories.jsonl"))?), &outcome.trajectories.trajectories)?;
    write_trajectories_jsonl(BufWriter::new(File::create(a.out.join("corpus.jsonl"))?), &corpus.trajectories)?;
    let manifest = RunManifest::new(
        &a.out,
        a.seed,
        seeds,
        a.env.clone(),
        a.learner.clone(),
        "q_function.json".into(),
        "trajectories.jsonl".into(),
        "corpus.jsonl".into(),
        outcome.trajectories.provenance.clone(),
    );
    let path = manifest.save()?;
    println!("greedy success {:.3}", outcome.greedy_success);
    println!("{}", path.display());
    Ok(())
}

/// The environment config, from the flag or the manifest.
fn resolve_env(flag: &Option<PathBuf>, manifest: &Option<RunManifest>) -> Result<EnvConfig> {
    match (flag, manifest) {
        (Some(p), _) => load_env(p),
        (None, Some(m)) => load_env(&m.env_config()?),
        (None, None) => Err(Error::Config("either --manifest or --env is required".into())),
    }
}

fn resolve_path(flag: &Option<PathBuf>, manifest: &Option<RunManifest>, pick: impl Fn(&RunManifest) -> Result<PathBuf>, what: &str) -> Result<PathBuf> {
    match (flag, manifest) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(m)) => pick(m),
        (None, None) => Err(Error::Config(format!("either --manifest or --{what} is required"))),
    }
}

fn cmd_label(a: LabelArgs) -> Result<()> {
    let mut manifest = a.manifest.as_deref().map(RunManifest::load).transpose()?;
    let env = resolve_env(&a.env, &manifest)?;
    let corpus_path = resolve_path(&a.corpus, &manifest, |m| m.artifact(&m.corpus), "corpus")?;
    let (spec, spec_path) = match (&a.intent_spec, a.mode) {
        (Some(p), _) => {
            let spec: IntentSpec = read_json(p, "intent spec")?;
            spec.validate()?;
            (spec, p.clone())
        }
        (None, Some(mode)) => {
            let spec = IntentSpec::from_env(&env, mode)?;
            let dir = manifest.as_ref().map(|m| m.dir().to_path_buf()).unwrap_or_else(|| PathBuf::from("."));
            let p = dir.join(format!("intent_spec_{}.json", mode.name()));
            write_json(&p, &spec)?;
            (spec, p)
        }
        (None, None) => return Err(Error::Config("either --intent-spec or --mode is required".into())),
    };
    let oracle = spec.bind(&env)?;
    let trajectories = read_corpus(&corpus_path)?;
    let scored = oracle.label(&trajectories)?;
    if scored.score_variance() == 0.0 {
        eprintln!("warning: every trajectory received the same score; the intent model cannot be trained on this corpus");
    }
    let out = match (&a.out, &manifest) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => m.dir().join(format!("scored_{}.jsonl", spec.mode.name())),
        (None, None) => return Err(Error::Config("--out is required without --manifest".into())),
    };
    scored.write_jsonl(BufWriter::new(File::create(&out)?))?;
    if let Some(m) = manifest.as_mut() {
        m.intent_spec = Some(spec_path);
        m.scored_corpus = Some(m.relative(&out));
        m.save()?;
    }
    println!("{}", out.display());
    Ok(())
}

fn cmd_train_intent(a: TrainIntentArgs) -> Result<()> {
    let mut manifest = a.manifest.as_deref().map(RunManifest::load).transpose()?;
    let env = resolve_env(&a.env, &manifest)?;
    let scored_path = resolve_path(&a.scored, &manifest, |m| m.optional_artifact(&m.scored_corpus, "scored corpus"), "scored")?;
    let mut config = match &a.config {
        Some(p) => read_json::<IntentTrainConfig>(p, "intent config")?,
        None => IntentTrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        config.max_epochs = v;
    }
    if let Some(v) = a.lr {
        config.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.hidden {
        config.hidden = v;
    }
    let scored = ScoredSet::read_jsonl(BufReader::new(File::open(&scored_path)?))?;
    let seed = derive_seed(a.seed, stream::INTENT_TRAINING, 0);
    let (model, curve) = train_intent(&scored, InputEncoding::for_env(&env), &config, seed)?;
    let out = match (&a.out, &manifest) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => m.dir().join("intent_model.json"),
        (None, None) => return Err(Error::Config("--out is required without --manifest".into())),
    };
    model.save(&out)?;
    let curve_path = out.with_extension("loss.csv");
    curve.write_csv(File::create(&curve_path)?)?;
    if let Some(m) = manifest.as_mut() {
        m.intent_config = a.config.clone();
        m.intent_model = Some(m.relative(&out));
        m.stage_seeds.intent_training = Some(seed);
        m.save()?;
    }
    if let Some(last) = curve.last() {
        println!("epochs {} final loss {:.6}", curve.0.len(), last.total);
    }
    println!("{}", out.display());
    println!("{}", curve_path.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    let env = load_env(&manifest.env_config()?)?;
    let q = QFunction::load(&manifest.artifact(&manifest.q_function)?)?;
    let intent_path = match &a.intent {
        Some(p) => p.clone(),
        None => manifest.optional_artifact(&manifest.intent_model, "intent model")?,
    };
    let intent = IntentModel::load(&intent_path)?;
    let mode = match (a.mode, &manifest.intent_spec) {
        (Some(m), _) => m,
        (None, Some(p)) => read_json::<IntentSpec>(p, "intent spec")?.mode,
        (None, None) => return Err(Error::Config("--mode is required when the manifest has no intent spec".into())),
    };

    let mut params = match &a.params {
        Some(p) => read_json::<FusionParams>(p, "fusion parameters")?,
        None => FusionParams::default(),
    };
    if let Some(v) = a.t_phi {
        params.t_phi = v;
    }
    if let Some(v) = a.t_min {
        params.t_min = v;
    }
    if let [v] = a.eta[..] {
        params.eta = v;
    }
    if let [v] = a.tmax[..] {
        params.t_max = v;
    }
    params.validate()?;
    let plan = EvalPlan { n_seeds: a.seeds, episodes_per_seed: a.episodes, seed: a.seed };
    let alphas = if a.alpha.is_empty() { vec![0.5] } else { a.alpha.clone() };

    let needs_morl = matches!(a.variant, VariantArg::Morl | VariantArg::All);
    let corpus = if needs_morl {
        let trajectories = read_corpus(&manifest.artifact(&manifest.corpus)?)?;
        Some(TrajectorySet { provenance: manifest.provenance.clone(), trajectories })
    } else {
        None
    };
    let morl_config = LearnerConfig { learning_rate: 0.1, gamma: 0.99, episodes: a.morl_passes, ..Default::default() };

    let arts = Artifacts { task: Some(&q), intent: Some(&intent), morl: None };
    let mut rows = Vec::new();
    let fixed = |v: VariantArg| -> Option<MethodVariant> {
        match v {
            VariantArg::Dqn => Some(MethodVariant::Dqn),
            VariantArg::Rudder => Some(MethodVariant::Rudder),
            VariantArg::Static => Some(MethodVariant::Static { t_phi: params.t_phi, t_psi: a.t_psi.unwrap_or(params.t_min) }),
            VariantArg::Dynamic => Some(MethodVariant::Dynamic { params }),
            VariantArg::Morl | VariantArg::All => None,
        }
    };
    let selected: Vec<VariantArg> = match a.variant {
        VariantArg::All => vec![VariantArg::Dqn, VariantArg::Rudder, VariantArg::Static, VariantArg::Dynamic, VariantArg::Morl],
        v => vec![v],
    };
    for v in selected {
        if let Some(variant) = fixed(v) {
            let m = evaluate(&variant, &env, &arts, &plan)?;
            rows.push(ReportRow::for_variant(&env, mode, &variant, &m));
            continue;
        }
        let corpus = corpus.as_ref().expect("loaded for morl");
        for (i, &alpha) in alphas.iter().enumerate() {
            let seed = derive_seed(a.seed, stream::MORL_TRAINING, i as u64);
            let morl = train_morl(&env, corpus, &intent, alpha, &morl_config, seed)?;
            let variant = MethodVariant::Morl { alpha };
            let m = evaluate(&variant, &env, &Artifacts { morl: Some(&morl), ..arts }, &plan)?;
            rows.push(ReportRow::for_variant(&env, mode, &variant, &m));
        }
    }
    if a.eta.len() > 1 {
        rows.extend(sweep_eta(&a.eta, &params, &env, &arts, &plan)?.iter().map(|r| ReportRow::for_sweep(&env, mode, r)));
    }
    if a.tmax.len() > 1 {
        rows.extend(sweep_tmax(&a.tmax, &params, &env, &arts, &plan)?.iter().map(|r| ReportRow::for_sweep(&env, mode, r)));
    }
    let (csv, json) = emit_report(&rows, &a.out, "eval")?;
    print_rows(&rows);
    println!("{}", csv.display());
    println!("{}", json.display());
    Ok(())
}

fn print_rows(rows: &[ReportRow]) {
    println!("{:<11} {:<8} {:<44} {:>15} {:>15} {:>15}", "mode", "variant", "params", "desired", "undesired", "score");
    for r in rows {
        println!(
            "{:<11} {:<8} {:<44} {:>7.3}±{:<7.3} {:>7.3}±{:<7.3} {:>7.3}±{:<7.3}",
            r.mode, r.variant, r.params, r.desired_mean, r.desired_stderr, r.undesired_mean, r.undesired_stderr, r.score_mean, r.score_stderr
        );
    }
}

fn run_check(check: Check, a: &VerifyArgs) -> Result<VerificationReport> {
    match check {
        Check::SqrtInvariance => verify_sqrt_invariance(a.n, a.seed),
        Check::SqrtFusion => verify_bound(Bound::SqrtFusion, a.n, a.seed),
        Check::SqrtFusionAbs => verify_bound(Bound::SqrtFusionAbs, a.n, a.seed),
        Check::ProductFusion => verify_bound(Bound::ProductFusion, a.n, a.seed),
        Check::ProductFusionEntropy => verify_bound(Bound::ProductFusionEntropy, a.n, a.seed),
        Check::ProductDivergence => verify_product_non_invariance(a.n, 1e-3, a.seed),
        Check::Gradcheck => verify_gradients(a.gradcheck_n, a.seed, a.corrupt_gradient),
        Check::All => unreachable!("expanded by the caller"),
    }
}

fn cmd_verify(a: VerifyArgs) -> std::result::Result<(), Failure> {
    let checks = match a.which {
        Check::All => vec![
            Check::SqrtInvariance,
            Check::SqrtFusion,
            Check::SqrtFusionAbs,
            Check::ProductFusion,
            Check::ProductFusionEntropy,
            Check::ProductDivergence,
            Check::Gradcheck,
        ],
        c => vec![c],
    };
    let reports = checks.iter().map(|&c| run_check(c, &a)).collect::<Result<Vec<_>>>()?;
    for r in &reports {
        println!("{}", r.summary());
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        let path = dir.join("verify.json");
        write_json(&path, &reports)?;
        println!("{}", path.display());
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.theorem.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join(", ")))
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => read_json::<ExperimentConfig>(p, "experiment config")?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    std::fs::create_dir_all(&a.out)?;
    config.save(&a.out.join("experiment.json"))?;
    let (outcome, files) = run_experiment(&config, &a.out)?;
    println!("task greedy success {:.3}", outcome.task_success);
    let mut rows = outcome.main_rows(&config);
    rows.extend(outcome.sweep_rows(&config));
    print_rows(&rows);
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
