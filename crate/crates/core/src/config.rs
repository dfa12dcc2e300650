//! Experiment configuration files.
//!
//! A config is TOML with a top-level `seed` and the tables `[scenario]`
//! (plus `[scenario.physics]`), `[model]`, `[train]`, `[eval]` and `[io]`.
//! Only `scenario.scenario_id` is required. Every other key falls back to a
//! default that depends on the scenario (for `[scenario]`) or on the training
//! profile (for `[train]`). Unknown keys and ill-typed values are rejected with
//! the offending key and its line.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::de::{DeTable, DeValue};
use toml::{Table, Value};

use crate::envs::{ScenarioId, ScenarioSpec};
use crate::training::{ModelConfig, Profile, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}: {msg}")]
    Syntax { origin: String, msg: String },
    #[error("{origin}:{line}: `{key}`: {msg}")]
    Key { origin: String, line: usize, key: String, msg: String },
    #[error("{origin}: {msg}")]
    Invalid { origin: String, msg: String },
}

/// Evaluation, sweep and vector-field settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub runs: usize,
    /// Observation noise for `evaluate` and `rollout`.
    pub noise: f64,
    pub noise_levels: Vec<f64>,
    /// Sweep normaliser; 0 picks the best noise-free mean among the compared checkpoints.
    pub normalization_anchor: f64,
    pub sample_actions: bool,
    pub vf_min: f64,
    pub vf_max: f64,
    pub vf_resolution: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            noise: 0.0,
            noise_levels: linspace(0.0, 2.0, 50),
            normalization_anchor: 0.0,
            sample_actions: false,
            vf_min: -1.0,
            vf_max: 1.0,
            vf_resolution: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub output_dir: PathBuf,
    /// Iterations between checkpoints; 0 keeps only the first and last.
    pub checkpoint_every: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { output_dir: PathBuf::from("runs/latest"), checkpoint_every: 10 }
    }
}

/// Where a resolved value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Default(String),
    File { line: usize },
    Flag(&'static str),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default(ctx) if ctx.is_empty() => write!(f, "default"),
            Source::Default(ctx) => write!(f, "default ({ctx})"),
            Source::File { line } => write!(f, "line {line}"),
            Source::Flag(flag) => write!(f, "{flag}"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: ScenarioSpec,
    pub model: ModelConfig,
    /// `train.seed` always equals `seed`.
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub io: IoConfig,
    /// Dotted key path to the origin of its value.
    pub provenance: BTreeMap<String, Source>,
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Parse the `a:b:n` range syntax.
pub fn parse_levels(text: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err(format!("expected a:b:n, got `{text}`"));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
    let (a, b) = (num(a)?, num(b)?);
    let n: usize = n.trim().parse().map_err(|e| format!("`{n}`: {e}"))?;
    if n == 0 {
        return Err("level count must be positive".into());
    }
    if n > 1 && !(b > a) {
        return Err(format!("range end {b} must exceed start {a}"));
    }
    Ok(linspace(a, b, n))
}

pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    ExperimentConfig::parse_str(&text, &path.display().to_string(), overrides)
}

const SECTIONS: [&str; 5] = ["scenario", "model", "train", "eval", "io"];

struct Ctx<'a> {
    origin: &'a str,
    lines: BTreeMap<String, usize>,
    provenance: BTreeMap<String, Source>,
}

impl Ctx<'_> {
    fn line(&self, key: &str) -> usize {
        self.lines.get(key).copied().unwrap_or(0)
    }

    fn key_err(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Key { origin: self.origin.to_string(), line: self.line(key), key: key.to_string(), msg: msg.into() }
    }

    fn invalid(&self, msg: impl fmt::Display) -> ConfigError {
        ConfigError::Invalid { origin: self.origin.to_string(), msg: msg.to_string() }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn collect_lines(text: &str, table: &DeTable<'_>, prefix: &str, out: &mut BTreeMap<String, usize>) {
    for (k, v) in table.iter() {
        let key = if prefix.is_empty() { k.get_ref().to_string() } else { format!("{prefix}.{}", k.get_ref()) };
        out.insert(key.clone(), line_of(text, k.span().start));
        if let DeValue::Table(t) = v.get_ref() {
            collect_lines(text, t, &key, out);
        }
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Check `user` against the type of `default`, widening integers to floats.
fn coerce(default: &Value, user: &Value) -> Option<Value> {
    match (default, user) {
        (Value::Float(_), Value::Integer(i)) => Some(Value::Float(*i as f64)),
        (Value::Array(d), Value::Array(u)) => match d.first() {
            Some(proto) => u.iter().map(|x| coerce(proto, x)).collect::<Option<Vec<_>>>().map(Value::Array),
            None => Some(user.clone()),
        },
        (Value::Table(_), _) | (_, Value::Table(_)) => None,
        _ if std::mem::discriminant(default) == std::mem::discriminant(user) => Some(user.clone()),
        _ => None,
    }
}

fn to_table<T: Serialize>(value: &T) -> Table {
    Table::try_from(value).expect("configuration structs serialise to tables")
}

/// Overlay `user` onto `defaults`, recording provenance under `path`.
fn merge(
    ctx: &mut Ctx<'_>,
    path: &str,
    defaults: &Table,
    user: Option<&Table>,
    default_src: &Source,
) -> Result<Table, ConfigError> {
    let mut out = defaults.clone();
    for (k, v) in defaults {
        if !v.is_table() {
            ctx.provenance.insert(format!("{path}.{k}"), default_src.clone());
        }
    }
    for (k, uv) in user.into_iter().flatten() {
        let key = format!("{path}.{k}");
        let Some(dv) = defaults.get(k) else {
            return Err(ctx.key_err(&key, format!("unknown key in [{path}]")));
        };
        let merged = match (dv, uv) {
            (Value::Table(dt), Value::Table(ut)) => Value::Table(merge(ctx, &key, dt, Some(ut), default_src)?),
            _ => {
                let v = coerce(dv, uv).ok_or_else(|| {
                    ctx.key_err(&key, format!("expected {}, found {}", type_name(dv), type_name(uv)))
                })?;
                let line = ctx.line(&key);
                ctx.provenance.insert(key, Source::File { line });
                v
            }
        };
        out.insert(k.clone(), merged);
    }
    Ok(out)
}

fn set_path(table: &mut Table, path: &[&str], value: Value) {
    match path {
        [] => {}
        [k] => {
            table.insert(k.to_string(), value);
        }
        [k, rest @ ..] => {
            if let Some(Value::Table(t)) = table.get_mut(*k) {
                set_path(t, rest, value);
            }
        }
    }
}

fn get_path<'a>(table: &'a Table, path: &[&str]) -> Option<&'a Value> {
    match path {
        [] => None,
        [k] => table.get(*k),
        [k, rest @ ..] => match table.get(*k) {
            Some(Value::Table(t)) => get_path(t, rest),
            _ => None,
        },
    }
}

/// Deserialize a merged section. On failure, blame the first file-provided key
/// that fails on its own.
fn decode<T: DeserializeOwned>(ctx: &Ctx<'_>, section: &str, defaults: &Table, merged: Table) -> Result<T, ConfigError> {
    let err = match Value::Table(merged.clone()).try_into::<T>() {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    let prefix = format!("{section}.");
    for (key, src) in &ctx.provenance {
        let (Some(rel), Source::File { .. }) = (key.strip_prefix(&prefix), src) else { continue };
        let rel: Vec<&str> = rel.split('.').collect();
        let Some(v) = get_path(&merged, &rel) else { continue };
        let mut probe = defaults.clone();
        set_path(&mut probe, &rel, v.clone());
        if let Err(e) = Value::Table(probe).try_into::<T>() {
            return Err(ctx.key_err(key, e.to_string().trim().to_string()));
        }
    }
    Err(ctx.invalid(format!("[{section}]: {}", err.to_string().trim())))
}

fn section<'a>(ctx: &Ctx<'_>, user: &'a Table, name: &str) -> Result<Option<&'a Table>, ConfigError> {
    match user.get(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(v) => Err(ctx.key_err(name, format!("expected table, found {}", type_name(v)))),
    }
}

impl ExperimentConfig {
    /// Parse config text. `origin` names the source in error messages.
    pub fn parse_str(text: &str, origin: &str, overrides: &Overrides) -> Result<Self, ConfigError> {
        let syntax = |e: toml::de::Error| ConfigError::Syntax { origin: origin.to_string(), msg: e.to_string() };
        let doc = DeTable::parse(text).map_err(syntax)?;
        let user: Table = toml::from_str(text).map_err(syntax)?;
        let mut ctx = Ctx { origin, lines: BTreeMap::new(), provenance: BTreeMap::new() };
        collect_lines(text, doc.get_ref(), "", &mut ctx.lines);

        for key in user.keys() {
            if key != "seed" && !SECTIONS.contains(&key.as_str()) {
                return Err(ctx.key_err(key, "unknown top-level key"));
            }
        }

        let seed = match (overrides.seed, user.get("seed")) {
            (Some(s), _) => {
                ctx.provenance.insert("seed".into(), Source::Flag("--seed"));
                s
            }
            (None, Some(Value::Integer(s))) if *s >= 0 => {
                ctx.provenance.insert("seed".into(), Source::File { line: ctx.line("seed") });
                *s as u64
            }
            (None, Some(v)) => return Err(ctx.key_err("seed", format!("expected non-negative integer, found {v}"))),
            (None, None) => {
                ctx.provenance.insert("seed".into(), Source::Default(String::new()));
                0
            }
        };

        let user_scenario = section(&ctx, &user, "scenario")?;
        let id_value = user_scenario
            .and_then(|t| t.get("scenario_id"))
            .ok_or_else(|| ctx.invalid("missing required key `scenario.scenario_id`"))?;
        let scenario_id: ScenarioId = id_value
            .clone()
            .try_into()
            .map_err(|_| ctx.key_err("scenario.scenario_id", format!("unknown scenario {id_value}")))?;
        let defaults = to_table(&ScenarioSpec::default_for(scenario_id));
        let src = Source::Default(format!("scenario {}", scenario_id.label()));
        let merged = merge(&mut ctx, "scenario", &defaults, user_scenario, &src)?;
        let scenario: ScenarioSpec = decode(&ctx, "scenario", &defaults, merged)?;
        scenario.validate().map_err(|e| ctx.invalid(format!("[scenario]: {e}")))?;

        let defaults = to_table(&ModelConfig::default());
        let user_model = section(&ctx, &user, "model")?;
        let merged = merge(&mut ctx, "model", &defaults, user_model, &Source::Default(String::new()))?;
        let model: ModelConfig = decode(&ctx, "model", &defaults, merged)?;
        if model.width == 0 || model.encoder_depth == 0 {
            return Err(ctx.invalid("[model]: width and encoder_depth must be positive"));
        }

        let mut user_train = section(&ctx, &user, "train")?.cloned();
        if let Some(t) = &user_train {
            if t.contains_key("seed") {
                return Err(ctx.key_err("train.seed", "set the top-level `seed` instead"));
            }
        }
        let profile = match overrides.profile {
            Some(p) => {
                if let Some(t) = user_train.as_mut() {
                    t.remove("profile");
                }
                p
            }
            None => match user_train.as_ref().and_then(|t| t.get("profile")) {
                Some(v) => v
                    .clone()
                    .try_into()
                    .map_err(|_| ctx.key_err("train.profile", format!("expected \"desk\" or \"paper\", found {v}")))?,
                None => Profile::Desk,
            },
        };
        let profile_name = match profile {
            Profile::Desk => "desk profile",
            Profile::Paper => "paper profile",
        };
        let mut defaults = to_table(&TrainConfig::for_profile(profile));
        defaults.remove("seed");
        let mut merged = merge(&mut ctx, "train", &defaults, user_train.as_ref(), &Source::Default(profile_name.into()))?;
        if overrides.profile.is_some() {
            ctx.provenance.insert("train.profile".into(), Source::Flag("--profile"));
        }
        merged.insert("seed".into(), Value::Integer(seed as i64));
        defaults.insert("seed".into(), Value::Integer(seed as i64));
        let train: TrainConfig = decode(&ctx, "train", &defaults, merged)?;
        train.validate().map_err(|e| ctx.invalid(format!("[train]: {e}")))?;

        let defaults = to_table(&EvalConfig::default());
        let user_eval = section(&ctx, &user, "eval")?;
        let merged = merge(&mut ctx, "eval", &defaults, user_eval, &Source::Default(String::new()))?;
        let eval: EvalConfig = decode(&ctx, "eval", &defaults, merged)?;
        if !eval.noise_levels.windows(2).all(|w| w[0] < w[1]) || eval.noise_levels.iter().any(|x| !(*x >= 0.0)) {
            return Err(ctx.invalid("[eval]: noise_levels must be non-negative and strictly increasing"));
        }
        if !(eval.noise >= 0.0) || !(eval.normalization_anchor >= 0.0) {
            return Err(ctx.invalid("[eval]: noise and normalization_anchor must be non-negative"));
        }
        if !(eval.vf_max > eval.vf_min) || eval.vf_resolution == 0 {
            return Err(ctx.invalid("[eval]: need vf_max > vf_min and a positive vf_resolution"));
        }

        let defaults = to_table(&IoConfig::default());
        let user_io = section(&ctx, &user, "io")?;
        let merged = merge(&mut ctx, "io", &defaults, user_io, &Source::Default(String::new()))?;
        let mut io: IoConfig = decode(&ctx, "io", &defaults, merged)?;
        if let Some(dir) = &overrides.output_dir {
            io.output_dir = dir.clone();
            ctx.provenance.insert("io.output_dir".into(), Source::Flag("--out"));
        }

        Ok(Self { seed, scenario, model, train, eval, io, provenance: ctx.provenance })
    }

    /// Defaults for everything, for commands run without `--config`.
    pub fn defaults_for(scenario_id: ScenarioId) -> Self {
        let text = format!("[scenario]\nscenario_id = {}\n", Value::try_from(scenario_id).expect("enum serialises"));
        Self::parse_str(&text, "<defaults>", &Overrides::default()).expect("defaults are valid")
    }

    /// Fully resolved config as TOML, each value annotated with its origin.
    /// Parsing the result yields the same configuration.
    pub fn to_toml(&self) -> String {
        let mut out = String::from("# resolved experiment configuration\n");
        let src = |k: &str| self.provenance.get(k).map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(out, "seed = {}  # {}", self.seed, src("seed"));
        let mut train = to_table(&self.train);
        train.remove("seed");
        let sections = [
            ("scenario", to_table(&self.scenario)),
            ("model", to_table(&self.model)),
            ("train", train),
            ("eval", to_table(&self.eval)),
            ("io", to_table(&self.io)),
        ];
        for (name, table) in &sections {
            emit(&mut out, name, table, &src);
        }
        out
    }

    /// Write the annotated snapshot to `path`, creating parent directories.
    pub fn write_snapshot(&self, path: &Path) -> Result<(), ConfigError> {
        let io = |source| ConfigError::Io { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        fs::write(path, self.to_toml()).map_err(io)
    }
}

fn emit(out: &mut String, path: &str, table: &Table, src: &dyn Fn(&str) -> String) {
    let _ = writeln!(out, "\n[{path}]");
    for (k, v) in table {
        if !v.is_table() {
            let _ = writeln!(out, "{k} = {v}  # {}", src(&format!("{path}.{k}")));
        }
    }
    for (k, v) in table {
        if let Value::Table(t) = v {
            emit(out, &format!("{path}.{k}"), t, src);
        }
    }
}

#[cfg(test)]
mod tests;
