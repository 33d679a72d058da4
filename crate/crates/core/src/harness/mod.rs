//! Experiment configs, dispatch, reports and plot data.

mod config;
mod plot;

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{
    load_config, parse_theta, save_config, EagleParams, EarlyExitParams, ExperimentConfig, LookaheadParams,
    PlotRequest, RouteParams, SpecdecParams, StepSaverParams, TechniqueParams, Theta, TECHNIQUES,
};
pub use plot::{emit_plot_data, PlotKind};

use crate::eagle::{eagle_decode, fit_extrapolator, fit_residual, sample_corpus, Extrapolator};
use crate::early_exit::{gen_dataset, stage_accuracy, sweep as exit_sweep, train_stages};
use crate::error::{Error, Result};
use crate::lookahead::{greedy_decode, lookahead_decode};
use crate::model::{ModelSpec, SequenceModel};
use crate::rng::Rng;
use crate::router::{evaluate_forced, sweep as route_sweep, Choice, WorkloadItem};
use crate::specdec::speculative_decode;
use crate::stepsaver::{default_workload, run_workload, NoiseSchedule, WorkloadParams, WorkloadSpec};

pub const TOOL_VERSION: &str = concat!("dynexec ", env!("CARGO_PKG_VERSION"));
pub const SEED_ENV: &str = "DYNEXEC_SEED";

static WRITE_LOCK: Mutex<()> = Mutex::new(());

/// Writes through a temporary file in the destination directory, then
/// renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let _guard = WRITE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// `cli`, then `config`, then `DYNEXEC_SEED`, then 0.
pub fn resolve_seed(cli: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = cli.or(config) {
        return Ok(s);
    }
    match env {
        None => Ok(0),
        Some(text) => text
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("{SEED_ENV}={text:?} is not an unsigned 64-bit integer"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub technique: String,
    /// Canonical config with the effective seed filled in.
    pub config: Value,
    pub metrics: Value,
    /// Informational only; excluded from determinism checks.
    pub wall_clock_ms: u64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string(&self.metrics).expect("metrics serialize")
    }
}

struct Outcome {
    metrics: Value,
    csv: Option<Vec<u8>>,
}

/// Runs one experiment and writes its report and plot files. Technique
/// work draws from child streams of the effective master seed.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(None, config.master_seed, env.as_deref())?;
    let mut config = config.clone();
    config.master_seed = Some(seed);
    let master = Rng::new(seed);

    let start = Instant::now();
    let outcome = match &config.params {
        TechniqueParams::Specdec(p) => run_specdec(p, &config, &master),
        TechniqueParams::Eagle(p) => run_eagle(p, &config, &master),
        TechniqueParams::Lookahead(p) => run_lookahead(p, &config),
        TechniqueParams::EarlyExit(p) => run_early_exit(p, &master),
        TechniqueParams::StepSaver(p) => run_stepsaver(p, &config, &master),
        TechniqueParams::Route(p) => run_route(p, &config),
    }
    .map_err(|e| e.context(format!("{} run", config.technique())))?;
    let report = RunReport {
        tool_version: TOOL_VERSION.into(),
        technique: config.technique().into(),
        config: serde_json::from_str(&config.to_json()).expect("canonical config is JSON"),
        metrics: outcome.metrics,
        wall_clock_ms: start.elapsed().as_millis() as u64,
    };

    if let Some(path) = &config.report {
        let path = config.resolve(path);
        match &outcome.csv {
            Some(csv) => write_atomic(&path, csv)?,
            None => write_atomic(&path, report.to_json().as_bytes())?,
        }
    }
    if let Some(plot) = &config.plot {
        let text = emit_plot_data(&report, plot.kind)?;
        write_atomic(&config.resolve(&plot.path), text.as_bytes())?;
    }
    Ok(report)
}

/// Runs every config, concurrently if `parallel`. Results keep input order.
pub fn run_batch(configs: &[ExperimentConfig], parallel: bool) -> Vec<Result<RunReport>> {
    if !parallel {
        return configs.iter().map(run).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::ContractViolation("run panicked".into()))))
            .collect()
    })
}

pub fn write_plot_data(report: &RunReport, kind: PlotKind, path: &Path) -> Result<()> {
    write_atomic(path, emit_plot_data(report, kind)?.as_bytes())
}

/// CSV with a header row taken from the row type's field names.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::InvalidParameter(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidParameter(format!("csv: {e}")))
}

fn load_model(config: &ExperimentConfig, path: &Path) -> Result<ModelSpec> {
    ModelSpec::load(&config.resolve(path))
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).context(format!("{}", path.display())))
}

fn with_fields(base: impl Serialize, extra: Value) -> Value {
    let mut v = serde_json::to_value(base).expect("metrics serialize");
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    v
}

fn run_specdec(p: &SpecdecParams, config: &ExperimentConfig, master: &Rng) -> Result<Outcome> {
    let target = load_model(config, &p.target)?;
    let draft = load_model(config, &p.draft)?;
    let c_t = target.cost_units();
    let (tokens, stats) = speculative_decode(&target, &draft, &p.prompt, p.n, p.k, &mut master.child(0))?;
    let k_sweep = p
        .k_sweep
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (_, s) = speculative_decode(&target, &draft, &p.prompt, p.n, k, &mut master.child(1 + i as u64))?;
            Ok(json!({
                "k": k,
                "acceptance_rate": s.acceptance_rate,
                "tokens_per_target_call": s.tokens_per_target_call,
                "simulated_speedup": s.simulated_speedup(c_t),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics = with_fields(
        &stats,
        json!({
            "simulated_speedup": stats.simulated_speedup(c_t),
            "mean_tokens_per_cycle": stats.mean_tokens_per_cycle(),
            "tokens": tokens,
            "k_sweep": k_sweep,
        }),
    );
    Ok(Outcome { metrics, csv: None })
}

fn run_eagle(p: &EagleParams, config: &ExperimentConfig, master: &Rng) -> Result<Outcome> {
    let ModelSpec::Feature(model) = load_model(config, &p.model)? else {
        return Err(Error::InvalidParameter("eagle needs a feature model".into()));
    };
    let corpus = sample_corpus(&model, p.fit_seqs, p.fit_len, &mut master.child(0))?;
    let ex = match &p.extrapolator {
        Some(path) => Extrapolator::load(&config.resolve(path))?,
        None => fit_extrapolator(&model, &corpus, p.ridge)?,
    };
    ex.validate_for(&model)?;
    if let Some(path) = &p.save_extrapolator {
        ex.save(&config.resolve(path))?;
    }
    let residual = fit_residual(&model, &ex, &corpus)?;
    let c_t = model.cost_units();
    let (tokens, stats) = eagle_decode(&model, &ex, &p.prompt, p.n, p.k, p.cost_ratio, &mut master.child(1))?;
    let k_sweep = p
        .k_sweep
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (_, s) = eagle_decode(&model, &ex, &p.prompt, p.n, k, p.cost_ratio, &mut master.child(2 + i as u64))?;
            Ok(json!({
                "k": k,
                "acceptance_rate": s.acceptance_rate,
                "tokens_per_target_call": s.tokens_per_target_call,
                "simulated_speedup": s.simulated_speedup(c_t),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics = with_fields(
        &stats,
        json!({
            "simulated_speedup": stats.simulated_speedup(c_t),
            "mean_tokens_per_cycle": stats.mean_tokens_per_cycle(),
            "fit_residual_rms": residual,
            "tokens": tokens,
            "k_sweep": k_sweep,
        }),
    );
    Ok(Outcome { metrics, csv: None })
}

fn run_lookahead(p: &LookaheadParams, config: &ExperimentConfig) -> Result<Outcome> {
    let model = load_model(config, &p.model)?;
    let (tokens, stats) = lookahead_decode(&model, &p.prompt, p.n, p.ngram, p.window)?;
    let greedy = greedy_decode(&model, &p.prompt, p.n)?;
    let metrics = with_fields(
        &stats,
        json!({
            "matches_greedy": tokens == greedy,
            "greedy_target_calls": p.n,
            "call_reduction": p.n as f64 / stats.target_calls as f64,
            "tokens": tokens,
        }),
    );
    Ok(Outcome { metrics, csv: None })
}

/// A sweep row plus accuracy relative to the full network.
#[derive(Serialize)]
struct ExitRow {
    tau: f64,
    accuracy: f64,
    accuracy_ratio: f64,
    mean_cost: f64,
    early_exit_fraction: f64,
    speedup: f64,
}

fn run_early_exit(p: &EarlyExitParams, master: &Rng) -> Result<Outcome> {
    let train = gen_dataset(p.count, p.hard_fraction, &mut master.child(0))?;
    let test = gen_dataset(p.count, p.hard_fraction, &mut master.child(1))?;
    let net = train_stages(&train)?;
    let full_accuracy = stage_accuracy(&net, net.stages.len() - 1, &test);
    let rows: Vec<ExitRow> = exit_sweep(&net, &test, &p.taus)?
        .into_iter()
        .map(|r| ExitRow {
            tau: r.tau,
            accuracy: r.accuracy,
            accuracy_ratio: r.accuracy / full_accuracy,
            mean_cost: r.mean_cost,
            early_exit_fraction: r.early_exit_fraction,
            speedup: r.speedup,
        })
        .collect();
    let metrics = json!({
        "rows": rows,
        "stage_accuracy": [stage_accuracy(&net, 0, &test), stage_accuracy(&net, 1, &test)],
        "full_accuracy": full_accuracy,
        "full_cost": net.full_cost(),
    });
    Ok(Outcome { metrics, csv: Some(to_csv(&rows)?) })
}

fn run_stepsaver(p: &StepSaverParams, config: &ExperimentConfig, master: &Rng) -> Result<Outcome> {
    let workload: Vec<WorkloadSpec> = match &p.workload {
        Some(path) => load_json(&config.resolve(path))?,
        None => default_workload(p.specs, p.hard_fraction, &mut master.child(0)),
    };
    let schedule = NoiseSchedule::default();
    let params = WorkloadParams {
        epsilon: p.epsilon,
        train_frac: p.train_frac,
        count: p.samples,
    };
    let report = run_workload(&workload, &schedule, params, &master.child(1))?;
    let csv = to_csv(&report.rows)?;
    Ok(Outcome {
        metrics: serde_json::to_value(&report).expect("metrics serialize"),
        csv: Some(csv),
    })
}

fn run_route(p: &RouteParams, config: &ExperimentConfig) -> Result<Outcome> {
    let small = load_model(config, &p.small)?;
    let large = load_model(config, &p.large)?;
    let items: Vec<WorkloadItem> = load_json(&config.resolve(&p.workload))?;
    let thetas: Vec<f64> = p.thetas.iter().map(|t| t.0).collect();
    let rows = route_sweep(&thetas, &items, &small, &large)?;
    let json_rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "theta": Theta(r.theta),
                "fraction_large": r.fraction_large,
                "total_cost": r.total_cost,
                "mean_quality": r.mean_quality,
            })
        })
        .collect();
    let metrics = json!({
        "items": items.len(),
        "rows": json_rows,
        "all_small": evaluate_forced(Choice::Small, &items, &small, &large)?,
        "all_large": evaluate_forced(Choice::Large, &items, &small, &large)?,
    });
    Ok(Outcome { metrics, csv: Some(to_csv(&rows)?) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some(2), Some("3")).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(2), Some("3")).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some("3")).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), 0);
        assert!(resolve_seed(None, None, Some("x")).unwrap_err().is_validation());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/out.txt"), b"x").is_err());
    }

    #[test]
    fn csv_header_follows_fields() {
        #[derive(Serialize)]
        struct Row {
            theta: f64,
            fraction_large: f64,
        }
        let bytes = to_csv(&[Row { theta: f64::INFINITY, fraction_large: 0.5 }]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "theta,fraction_large\ninf,0.5\n");
    }
}
