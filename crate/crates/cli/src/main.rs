use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use dynexec_core::harness::{
    load_config, parse_theta, resolve_seed, run, run_batch, ExperimentConfig, PlotKind, PlotRequest, RunReport,
    TechniqueParams, SEED_ENV,
};
use dynexec_core::model::{Activation, FeatureModel, ModelSpec, TableModel};
use dynexec_core::router::gen_workload;
use dynexec_core::stepsaver::default_workload;
use dynexec_core::{Error, Result, Rng};

/// Dynamic-execution inference experiments on toy models.
#[derive(Parser)]
#[command(name = "dynexec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Speculative sampling with a draft model.
    Specdec(SpecdecArgs),
    /// Speculative sampling with feature-level drafts.
    Eagle(EagleArgs),
    /// Lookahead decoding against greedy.
    Lookahead(LookaheadArgs),
    /// Entropy-gated early-exit sweep.
    EarlyExit(EarlyExitArgs),
    /// Adaptive diffusion step budgets.
    Stepsaver(StepSaverArgs),
    /// Difficulty-threshold routing sweep.
    Route(RouteArgs),
    /// Run an experiment config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several config files; reports print as a JSON array.
    Batch {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a random model file.
    GenModel(GenModelArgs),
    /// Write a random workload file.
    GenWorkload(GenWorkloadArgs),
}

#[derive(Args)]
struct Common {
    /// Overrides the config seed and DYNEXEC_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Two-column plot data file.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long, requires = "plot")]
    plot_kind: Option<String>,
}

#[derive(Args)]
struct SpecdecArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    draft: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    prompt: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    k_sweep: Option<Vec<usize>>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EagleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    fit_seqs: Option<usize>,
    #[arg(long)]
    fit_len: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    cost_ratio: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    prompt: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    k_sweep: Option<Vec<usize>>,
    /// Load this extrapolator instead of fitting one.
    #[arg(long)]
    extrapolator: Option<PathBuf>,
    #[arg(long)]
    save_extrapolator: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct LookaheadArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    ngram: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    prompt: Option<Vec<u32>>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EarlyExitArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    hard_fraction: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct StepSaverArgs {
    /// JSON array of {id, components}; generated if absent.
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long)]
    specs: Option<usize>,
    #[arg(long)]
    hard_fraction: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    train_frac: Option<f64>,
    /// Samples per spec and budget.
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long)]
    small: PathBuf,
    #[arg(long)]
    large: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    /// Comma-separated; `inf` and `-inf` are accepted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    thetas: Option<Vec<String>>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Table,
    Feature,
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long, value_enum)]
    kind: ModelKind,
    #[arg(long, default_value_t = 8)]
    vocab: usize,
    /// Table context length.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Table row sharpness, or feature head scale.
    #[arg(long, default_value_t = 1.5)]
    sharpness: f64,
    #[arg(long, default_value_t = 0.0)]
    zero_prob: f64,
    #[arg(long, default_value_t = 0.9)]
    state_gain: f64,
    #[arg(long)]
    identity: bool,
    #[arg(long, default_value_t = 1.0)]
    cost: f64,
    /// Derive a table model by mixing this table model's rows with noise.
    #[arg(long)]
    perturb: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    mix: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum WorkloadKind {
    Stepsaver,
    Route,
}

#[derive(Args)]
struct GenWorkloadArgs {
    #[arg(long, value_enum)]
    kind: WorkloadKind,
    /// Number of specs or items.
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0.2)]
    hard_fraction: f64,
    /// Model that generates route continuations.
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    prompt_min: usize,
    #[arg(long, default_value_t = 6)]
    prompt_max: usize,
    #[arg(long, default_value_t = 8)]
    continuation: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Specdec(a) => {
            let mut p = obj(&[("target", json!(a.target)), ("draft", json!(a.draft))]);
            put(&mut p, "k", a.k);
            put(&mut p, "n", a.n);
            put(&mut p, "prompt", a.prompt);
            put(&mut p, "k_sweep", a.k_sweep);
            technique("specdec", p, a.common, Some(PlotKind::KVsSpeedup))
        }
        Command::Eagle(a) => {
            let mut p = obj(&[("model", json!(a.model))]);
            put(&mut p, "fit_seqs", a.fit_seqs);
            put(&mut p, "fit_len", a.fit_len);
            put(&mut p, "ridge", a.ridge);
            put(&mut p, "cost_ratio", a.cost_ratio);
            put(&mut p, "k", a.k);
            put(&mut p, "n", a.n);
            put(&mut p, "prompt", a.prompt);
            put(&mut p, "k_sweep", a.k_sweep);
            put(&mut p, "extrapolator", a.extrapolator);
            put(&mut p, "save_extrapolator", a.save_extrapolator);
            technique("eagle", p, a.common, Some(PlotKind::KVsSpeedup))
        }
        Command::Lookahead(a) => {
            let mut p = obj(&[("model", json!(a.model))]);
            put(&mut p, "n", a.n);
            put(&mut p, "ngram", a.ngram);
            put(&mut p, "window", a.window);
            put(&mut p, "prompt", a.prompt);
            technique("lookahead", p, a.common, None)
        }
        Command::EarlyExit(a) => {
            let mut p = Map::new();
            put(&mut p, "count", a.count);
            put(&mut p, "hard_fraction", a.hard_fraction);
            put(&mut p, "taus", a.taus);
            technique("early-exit", p, a.common, Some(PlotKind::TauVsAccuracy))
        }
        Command::Stepsaver(a) => {
            let mut p = Map::new();
            put(&mut p, "workload", a.workload);
            put(&mut p, "specs", a.specs);
            put(&mut p, "hard_fraction", a.hard_fraction);
            put(&mut p, "epsilon", a.epsilon);
            put(&mut p, "train_frac", a.train_frac);
            put(&mut p, "samples", a.samples);
            technique("stepsaver", p, a.common, Some(PlotKind::DifficultyVsSteps))
        }
        Command::Route(a) => {
            let mut p = obj(&[
                ("small", json!(a.small)),
                ("large", json!(a.large)),
                ("workload", json!(a.workload)),
            ]);
            if let Some(list) = a.thetas {
                let thetas = list
                    .iter()
                    .map(|s| parse_theta(s).map_err(Error::InvalidParameter))
                    .collect::<Result<Vec<f64>>>()?;
                // Strings keep infinities representable in JSON.
                let values: Vec<Value> = thetas
                    .iter()
                    .map(|t| if t.is_finite() { json!(t) } else { json!(if *t > 0.0 { "inf" } else { "-inf" }) })
                    .collect();
                p.insert("thetas".into(), Value::Array(values));
            }
            technique("route", p, a.common, None)
        }
        Command::Run { config, seed } => {
            let mut c = load_config(&config)?;
            c.master_seed = seed.or(c.master_seed);
            print_report(&run(&c)?);
            Ok(())
        }
        Command::Batch { configs, parallel, seed } => {
            let configs = configs
                .iter()
                .map(|path| {
                    let mut c = load_config(path)?;
                    c.master_seed = seed.or(c.master_seed);
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()?;
            let reports = run_batch(&configs, parallel).into_iter().collect::<Result<Vec<_>>>()?;
            println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
            Ok(())
        }
        Command::GenModel(a) => gen_model(a),
        Command::GenWorkload(a) => gen_workload_file(a),
    }
}

fn obj(pairs: &[(&str, Value)]) -> Map<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn put<T: serde::Serialize>(map: &mut Map<String, Value>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        map.insert(key.into(), serde_json::to_value(v).expect("flag serializes"));
    }
}

fn technique(name: &str, params: Map<String, Value>, common: Common, default_plot: Option<PlotKind>) -> Result<()> {
    let mut config = ExperimentConfig::new(TechniqueParams::from_value(name, Value::Object(params))?);
    config.master_seed = common.seed;
    config.report = common.report;
    if let Some(path) = common.plot {
        let kind = match common.plot_kind {
            Some(k) => k.parse()?,
            None => default_plot
                .ok_or_else(|| Error::InvalidParameter(format!("{name} has no default plot; pass --plot-kind")))?,
        };
        config.plot = Some(PlotRequest { kind, path });
    }
    print_report(&run(&config)?);
    Ok(())
}

fn print_report(report: &RunReport) {
    print!("{}", report.to_json());
}

fn seed_of(flag: Option<u64>) -> Result<u64> {
    resolve_seed(flag, None, std::env::var(SEED_ENV).ok().as_deref())
}

fn gen_model(a: GenModelArgs) -> Result<()> {
    let mut rng = Rng::new(seed_of(a.seed)?);
    let spec = match (a.kind, &a.perturb) {
        (ModelKind::Table, Some(base)) => match ModelSpec::load(base)? {
            ModelSpec::Table(t) => ModelSpec::Table(t.perturbed(a.mix, a.cost, &mut rng)?),
            ModelSpec::Feature(_) => {
                return Err(Error::InvalidParameter("--perturb needs a table model".into()));
            }
        },
        (ModelKind::Table, None) => {
            ModelSpec::Table(TableModel::random(a.vocab, a.order, a.sharpness, a.zero_prob, a.cost, &mut rng)?)
        }
        (ModelKind::Feature, None) => {
            let activation = if a.identity { Activation::Identity } else { Activation::Tanh };
            ModelSpec::Feature(FeatureModel::random(
                a.vocab,
                a.dim,
                a.sharpness,
                a.state_gain,
                activation,
                a.cost,
                &mut rng,
            )?)
        }
        (ModelKind::Feature, Some(_)) => {
            return Err(Error::InvalidParameter("--perturb needs --kind table".into()));
        }
    };
    spec.save(&a.out)
}

fn gen_workload_file(a: GenWorkloadArgs) -> Result<()> {
    let rng = Rng::new(seed_of(a.seed)?);
    let value = match a.kind {
        WorkloadKind::Stepsaver => {
            serde_json::to_value(default_workload(a.count, a.hard_fraction, &mut rng.child(0)))
        }
        WorkloadKind::Route => {
            let source = a
                .source
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("--source is required for route workloads".into()))?;
            let model = ModelSpec::load(source)?;
            serde_json::to_value(gen_workload(&model, a.count, (a.prompt_min, a.prompt_max), a.continuation, &rng)?)
        }
    }
    .expect("workload serializes");
    let text = serde_json::to_string_pretty(&value).expect("workload serializes") + "\n";
    dynexec_core::harness::write_atomic(&a.out, text.as_bytes())
}
