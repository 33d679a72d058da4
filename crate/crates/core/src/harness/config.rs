use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::TokenId;

use super::plot::PlotKind;

fn default_k() -> usize {
    4
}
fn default_n() -> usize {
    64
}
fn default_prompt() -> Vec<TokenId> {
    vec![TokenId(0)]
}
fn default_k_sweep() -> Vec<usize> {
    vec![1, 2, 3, 4, 6, 8]
}
fn default_fit_seqs() -> usize {
    crate::eagle::DEFAULT_FIT_SEQS
}
fn default_fit_len() -> usize {
    crate::eagle::DEFAULT_FIT_LEN
}
fn default_ridge() -> f64 {
    crate::eagle::DEFAULT_RIDGE
}
fn default_cost_ratio() -> f64 {
    crate::eagle::DEFAULT_COST_RATIO
}
fn default_ngram() -> usize {
    crate::lookahead::DEFAULT_NGRAM
}
fn default_window() -> usize {
    crate::lookahead::DEFAULT_WINDOW
}
fn default_count() -> usize {
    5000
}
fn default_hard_fraction() -> f64 {
    0.2
}
fn default_taus() -> Vec<f64> {
    crate::early_exit::default_taus()
}
fn default_epsilon() -> f64 {
    crate::stepsaver::DEFAULT_EPSILON
}
fn default_train_frac() -> f64 {
    crate::stepsaver::DEFAULT_TRAIN_FRAC
}
fn default_samples() -> usize {
    crate::stepsaver::DEFAULT_COUNT
}
fn default_specs() -> usize {
    20
}
fn default_thetas() -> Vec<Theta> {
    crate::router::default_thetas().into_iter().map(Theta).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecdecParams {
    pub target: PathBuf,
    pub draft: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_prompt")]
    pub prompt: Vec<TokenId>,
    #[serde(default = "default_k_sweep")]
    pub k_sweep: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EagleParams {
    pub model: PathBuf,
    #[serde(default = "default_fit_seqs")]
    pub fit_seqs: usize,
    #[serde(default = "default_fit_len")]
    pub fit_len: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_cost_ratio")]
    pub cost_ratio: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_prompt")]
    pub prompt: Vec<TokenId>,
    #[serde(default = "default_k_sweep")]
    pub k_sweep: Vec<usize>,
    /// Use this extrapolator instead of fitting one.
    #[serde(default)]
    pub extrapolator: Option<PathBuf>,
    /// Write the fitted extrapolator here.
    #[serde(default)]
    pub save_extrapolator: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookaheadParams {
    pub model: PathBuf,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_ngram")]
    pub ngram: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_prompt")]
    pub prompt: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyExitParams {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_hard_fraction")]
    pub hard_fraction: f64,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSaverParams {
    /// JSON array of `{id, components}`; a generated workload if absent.
    #[serde(default)]
    pub workload: Option<PathBuf>,
    #[serde(default = "default_specs")]
    pub specs: usize,
    #[serde(default = "default_hard_fraction")]
    pub hard_fraction: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

/// A threshold that serializes `±inf` as the strings `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta(pub f64);

impl Serialize for Theta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str(if self.0 > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Theta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Theta(x)),
            Raw::Str(s) => parse_theta(&s).map(Theta).map_err(serde::de::Error::custom),
        }
    }
}

pub fn parse_theta(s: &str) -> std::result::Result<f64, String> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        other => match other.parse::<f64>() {
            Ok(x) if !x.is_nan() => Ok(x),
            _ => Err(format!("invalid theta {other:?}")),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteParams {
    pub small: PathBuf,
    pub large: PathBuf,
    pub workload: PathBuf,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<Theta>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TechniqueParams {
    Specdec(SpecdecParams),
    Eagle(EagleParams),
    Lookahead(LookaheadParams),
    EarlyExit(EarlyExitParams),
    StepSaver(StepSaverParams),
    Route(RouteParams),
}

pub const TECHNIQUES: [&str; 6] = ["specdec", "eagle", "lookahead", "early-exit", "stepsaver", "route"];

impl TechniqueParams {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Specdec(_) => "specdec",
            Self::Eagle(_) => "eagle",
            Self::Lookahead(_) => "lookahead",
            Self::EarlyExit(_) => "early-exit",
            Self::StepSaver(_) => "stepsaver",
            Self::Route(_) => "route",
        }
    }

    /// Parses a params object for `technique`, filling defaults.
    pub fn from_value(technique: &str, params: Value) -> Result<Self> {
        Ok(match technique {
            "specdec" => Self::Specdec(typed(params)?),
            "eagle" => Self::Eagle(typed(params)?),
            "lookahead" => Self::Lookahead(typed(params)?),
            "early-exit" => Self::EarlyExit(typed(params)?),
            "stepsaver" => Self::StepSaver(typed(params)?),
            "route" => Self::Route(typed(params)?),
            other => {
                return Err(Error::Schema {
                    key: "technique".into(),
                    message: format!("unknown technique {other:?}; expected one of {}", TECHNIQUES.join(", ")),
                })
            }
        })
    }

    pub fn to_value(&self) -> Value {
        let v = match self {
            Self::Specdec(p) => serde_json::to_value(p),
            Self::Eagle(p) => serde_json::to_value(p),
            Self::Lookahead(p) => serde_json::to_value(p),
            Self::EarlyExit(p) => serde_json::to_value(p),
            Self::StepSaver(p) => serde_json::to_value(p),
            Self::Route(p) => serde_json::to_value(p),
        };
        v.expect("params serialize to JSON")
    }

    /// Output format of the technique's report file.
    pub fn writes_csv(&self) -> bool {
        matches!(self, Self::EarlyExit(_) | Self::StepSaver(_) | Self::Route(_))
    }
}

/// Maps a serde error to a schema error naming the offending key when the
/// message carries one.
fn typed<T: DeserializeOwned>(params: Value) -> Result<T> {
    serde_json::from_value(params).map_err(|e| {
        let message = e.to_string();
        let key = message
            .split('`')
            .nth(1)
            .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"))
            .unwrap_or("params")
            .to_string();
        Error::Schema { key, message }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotRequest {
    pub kind: PlotKind,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: TechniqueParams,
    pub master_seed: Option<u64>,
    pub report: Option<PathBuf>,
    pub plot: Option<PlotRequest>,
    /// Relative paths resolve against this directory. Not serialized.
    pub base_dir: PathBuf,
}

const TOP_LEVEL_KEYS: [&str; 5] = ["technique", "params", "master_seed", "report", "plot"];

impl ExperimentConfig {
    pub fn new(params: TechniqueParams) -> Self {
        Self {
            params,
            master_seed: None,
            report: None,
            plot: None,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn technique(&self) -> &'static str {
        self.params.name()
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(mut map) = value else {
            return Err(Error::Schema {
                key: "<root>".into(),
                message: "config must be a JSON object".into(),
            });
        };
        if let Some(key) = map.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(Error::Schema {
                key: key.clone(),
                message: format!("unknown key; expected one of {}", TOP_LEVEL_KEYS.join(", ")),
            });
        }
        let technique = match map.remove("technique") {
            Some(Value::String(s)) => s,
            Some(_) => {
                return Err(Error::Schema {
                    key: "technique".into(),
                    message: "must be a string".into(),
                })
            }
            None => {
                return Err(Error::Schema {
                    key: "technique".into(),
                    message: "missing".into(),
                })
            }
        };
        let params = map.remove("params").unwrap_or_else(|| Value::Object(Default::default()));
        let params = TechniqueParams::from_value(&technique, params)?;
        let field = |map: &mut serde_json::Map<String, Value>, key: &str| map.remove(key).filter(|v| !v.is_null());
        let master_seed = field(&mut map, "master_seed")
            .map(|v| {
                v.as_u64().ok_or_else(|| Error::Schema {
                    key: "master_seed".into(),
                    message: "must be an unsigned 64-bit integer".into(),
                })
            })
            .transpose()?;
        let report = field(&mut map, "report").map(typed::<PathBuf>).transpose().map_err(|e| rename(e, "report"))?;
        let plot = field(&mut map, "plot").map(typed::<PlotRequest>).transpose()?;
        Ok(Self {
            params,
            master_seed,
            report,
            plot,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Canonical JSON: fixed key order, defaults filled in, pretty-printed.
    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert("technique".into(), Value::String(self.technique().into()));
        map.insert("params".into(), self.params.to_value());
        map.insert("master_seed".into(), self.master_seed.map_or(Value::Null, Value::from));
        map.insert(
            "report".into(),
            serde_json::to_value(&self.report).expect("path serializes"),
        );
        map.insert(
            "plot".into(),
            serde_json::to_value(&self.plot).expect("plot serializes"),
        );
        let mut text = serde_json::to_string_pretty(&Value::Object(map)).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

fn rename(e: Error, key: &str) -> Error {
    match e {
        Error::Schema { message, .. } => Error::Schema {
            key: key.into(),
            message,
        },
        other => other,
    }
}

/// Reads and validates a config. Relative paths inside it resolve against
/// the config file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    ExperimentConfig::from_json(&text, &base)
        .map_err(|e| e.context(format!("config {}", path.display())))
}

pub fn save_config(config: &ExperimentConfig, path: &Path) -> Result<()> {
    super::write_atomic(path, config.to_json().as_bytes())
}
