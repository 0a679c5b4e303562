//! Experiment configuration files.
//!
//! The format is line oriented: `[section]` headers, `key = value` pairs and
//! `#` comments. Every key belongs to a section, unknown keys are errors, and
//! omitted keys take the documented defaults.
//!
//! ```text
//! [experiment]
//! seeds = 0, 1, 2
//! output_dir = runs/blobs
//!
//! [trainer]
//! method = fedeba_plus
//! rounds = 200
//! fair_angle = 45        # degrees
//! batch_size = full
//!
//! [data]
//! kind = blobs
//! classes = 10
//!
//! [partition]
//! mode = dirichlet
//! alpha = 0.1
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedeba_core::aggregation::{EbaConfig, PriorKind, QfflConfig, Schedule};
use fedeba_core::data::{PartitionMode, PartitionSpec};
use fedeba_core::objective::{Activation, Architecture, MAX_HIDDEN_WIDTH};
use fedeba_core::trainer::{BatchSpec, Method};
use fedeba_core::TrainerConfig;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    /// 1-based line, when the problem can be tied to one.
    pub line: Option<usize>,
    /// `section.key`, or the section name alone.
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

fn err(line: Option<usize>, field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        field: field.into(),
        message: message.into(),
    }
}

const SECTIONS: [&str; 6] = ["experiment", "trainer", "eba", "qffl", "data", "partition"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    SoftmaxRegression,
    Mlp {
        hidden: usize,
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Gaussian blobs on a class lattice, partitioned across clients.
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
        model: ModelSpec,
        partition: PartitionSpec,
    },
    /// Orthogonal-design linear regression with per-client true parameters.
    Glr {
        clients: usize,
        samples_per_client: usize,
        dim: usize,
        design_scale: f64,
        noise_std: f64,
        param_spread: f64,
        seed: u64,
    },
    /// Diagonal quadratic clients.
    Quadratic {
        clients: usize,
        dim: usize,
        shared_minimizer: bool,
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn clients(&self) -> usize {
        match self {
            DatasetSpec::Blobs { partition, .. } => partition.clients,
            DatasetSpec::Glr { clients, .. } | DatasetSpec::Quadratic { clients, .. } => *clients,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DatasetSpec::Blobs { .. } => "blobs",
            DatasetSpec::Glr { .. } => "glr",
            DatasetSpec::Quadratic { .. } => "quadratic",
        }
    }

    /// Classifier architecture for blob datasets.
    pub fn architecture(&self) -> Option<Architecture> {
        let DatasetSpec::Blobs {
            classes,
            dim,
            model,
            ..
        } = self
        else {
            return None;
        };
        let arch = match *model {
            ModelSpec::SoftmaxRegression => Architecture::softmax_regression(*dim, *classes),
            ModelSpec::Mlp { hidden, activation } => {
                Architecture::mlp(*dim, hidden, *classes, activation)
            }
        };
        arch.ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub trainer: TrainerConfig,
    pub dataset: DatasetSpec,
    /// Percent used for worst/best tails; mirrors `trainer.tail_percent`.
    pub k_percent: f64,
    /// Distinct, ascending.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
    taken: bool,
}

struct Raw {
    entries: Vec<Entry>,
    sections: Vec<(String, usize)>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut sections = Vec::new();
        let mut current: Option<String> = None;
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(Some(line), content, "malformed section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(
                        Some(line),
                        name,
                        format!("unknown section; expected one of {}", SECTIONS.join(", ")),
                    ));
                }
                if sections.iter().any(|(s, _)| s == name) {
                    return Err(err(Some(line), name, "section appears twice"));
                }
                sections.push((name.to_string(), line));
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(Some(line), content, "expected `key = value`"))?;
            let key = key.trim();
            let section = current
                .clone()
                .ok_or_else(|| err(Some(line), key, "key appears before any section header"))?;
            if key.is_empty() {
                return Err(err(Some(line), section, "empty key"));
            }
            if let Some(prev) = entries
                .iter()
                .find(|e| e.section == section && e.key == key)
            {
                return Err(err(
                    Some(line),
                    format!("{section}.{key}"),
                    format!("duplicate key (first set on line {})", prev.line),
                ));
            }
            entries.push(Entry {
                section,
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
                taken: false,
            });
        }
        Ok(Self { entries, sections })
    }

    fn section_line(&self, section: &str) -> Option<usize> {
        self.sections
            .iter()
            .find(|(s, _)| s == section)
            .map(|(_, l)| *l)
    }

    fn take_raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.section == section && e.key == key)?;
        e.taken = true;
        Some((e.value.clone(), e.line))
    }

    fn get<T: FromStr>(
        &mut self,
        section: &str,
        key: &str,
        default: T,
    ) -> Result<Field<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.take_raw(section, key) {
            None => Ok(Field {
                value: default,
                line: None,
                name: format!("{section}.{key}"),
            }),
            Some((raw, line)) => raw
                .parse::<T>()
                .map(|value| Field {
                    value,
                    line: Some(line),
                    name: format!("{section}.{key}"),
                })
                .map_err(|e| {
                    err(
                        Some(line),
                        format!("{section}.{key}"),
                        format!("cannot parse {raw:?}: {e}"),
                    )
                }),
        }
    }

    fn get_with<T>(
        &mut self,
        section: &str,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Field<T>, ConfigError> {
        let name = format!("{section}.{key}");
        match self.take_raw(section, key) {
            None => Ok(Field {
                value: default,
                line: None,
                name,
            }),
            Some((raw, line)) => match parse(&raw) {
                Ok(value) => Ok(Field {
                    value,
                    line: Some(line),
                    name,
                }),
                Err(msg) => Err(err(Some(line), name, msg)),
            },
        }
    }

    fn finish(&self) -> Result<(), ConfigError> {
        match self.entries.iter().find(|e| !e.taken) {
            Some(e) => Err(err(
                Some(e.line),
                format!("{}.{}", e.section, e.key),
                "unknown key, or a key that does not apply to this configuration",
            )),
            None => Ok(()),
        }
    }
}

struct Field<T> {
    value: T,
    line: Option<usize>,
    name: String,
}

impl<T: Copy> Field<T> {
    fn check(&self, ok: impl Fn(T) -> bool, requirement: &str) -> Result<T, ConfigError> {
        if ok(self.value) {
            Ok(self.value)
        } else {
            Err(err(self.line, self.name.clone(), requirement))
        }
    }
}

fn positive_count(f: &Field<usize>) -> Result<usize, ConfigError> {
    f.check(|v| v >= 1, "must be at least 1")
}

fn positive_real(f: &Field<f64>) -> Result<f64, ConfigError> {
    f.check(
        |v| v.is_finite() && v > 0.0,
        "must be a positive finite number",
    )
}

fn nonnegative_real(f: &Field<f64>) -> Result<f64, ConfigError> {
    f.check(
        |v| v.is_finite() && v >= 0.0,
        "must be a nonnegative finite number",
    )
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "fedavg" => Ok(Method::FedAvg),
        "qffl" => Ok(Method::Qffl),
        "fedeba_plus" => Ok(Method::FedEbaPlus),
        _ => Err(format!(
            "unknown method {s:?}; expected fedavg, qffl or fedeba_plus"
        )),
    }
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    match s {
        "constant" => Ok(Schedule::Constant),
        "linear" => Ok(Schedule::Linear),
        "concave" => Ok(Schedule::Concave),
        "convex" => Ok(Schedule::Convex),
        _ => Err(format!(
            "unknown schedule {s:?}; expected constant, linear, concave or convex"
        )),
    }
}

fn parse_prior(s: &str) -> Result<PriorKind, String> {
    match s {
        "uniform" => Ok(PriorKind::Uniform),
        "data_ratio" => Ok(PriorKind::DataRatio),
        _ => Err(format!(
            "unknown prior {s:?}; expected uniform or data_ratio"
        )),
    }
}

fn parse_batch(s: &str) -> Result<BatchSpec, String> {
    if s == "full" {
        return Ok(BatchSpec::Full);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("batch size must be at least 1 (or `full`)".into()),
        Ok(b) => Ok(BatchSpec::MiniBatch(b)),
        Err(_) => Err(format!("expected a positive integer or `full`, got {s:?}")),
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let mut seeds = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| format!("bad seed {:?}", t.trim()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err("seeds must be distinct".into());
    }
    Ok(seeds)
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        _ => Err(format!("unknown activation {s:?}; expected tanh or relu")),
    }
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Raw::parse(text)?;

        let seeds = raw
            .get_with("experiment", "seeds", vec![0], parse_seeds)?
            .value;
        let output_dir = raw
            .get_with("experiment", "output_dir", PathBuf::from("output"), |s| {
                if s.is_empty() {
                    Err("must not be empty".into())
                } else {
                    Ok(PathBuf::from(s))
                }
            })?
            .value;
        let k_percent = raw
            .get("experiment", "k_percent", 5.0)?
            .check(|k: f64| k > 0.0 && k <= 100.0, "must lie in (0, 100]")?;

        let t = "trainer";
        let method = raw
            .get_with(t, "method", Method::FedEbaPlus, parse_method)?
            .value;
        let rounds = positive_count(&raw.get(t, "rounds", 100)?)?;
        let local_steps = positive_count(&raw.get(t, "local_steps", 5)?)?;
        let clients_field = raw.get(t, "clients_per_round", 10)?;
        let clients_per_round = positive_count(&clients_field)?;
        let global_lr = positive_real(&raw.get(t, "global_lr", 1.0)?)?;
        let local_lr = positive_real(&raw.get(t, "local_lr", 0.05)?)?;
        let alpha = raw.get(t, "alpha", 0.5)?.check(
            |a: f64| (0.0..=1.0).contains(&a),
            "alpha must lie in [0, 1]",
        )?;
        let fair_angle_deg = raw.get(t, "fair_angle", 45.0)?.check(
            |a: f64| (0.0..=180.0).contains(&a),
            "must lie in [0, 180] degrees",
        )?;
        let batch = raw
            .get_with(t, "batch_size", BatchSpec::Full, parse_batch)?
            .value;

        let tau0 = positive_real(&raw.get("eba", "tau0", 0.1)?)?;
        let schedule = raw
            .get_with("eba", "schedule", Schedule::Constant, parse_schedule)?
            .value;
        let decay = nonnegative_real(&raw.get("eba", "decay", 0.0)?)?;
        let prior = raw
            .get_with("eba", "prior", PriorKind::Uniform, parse_prior)?
            .value;

        let q = nonnegative_real(&raw.get("qffl", "q", 1.0)?)?;
        let lipschitz = positive_real(&raw.get("qffl", "lipschitz", 1.0 / local_lr)?)?;

        let d = "data";
        let kind = raw.get_with(d, "kind", "blobs".to_string(), |s| Ok(s.to_string()))?;
        let data_seed = raw.get(d, "seed", 0u64)?.value;
        let dataset = match kind.value.as_str() {
            "blobs" => {
                let classes = raw
                    .get(d, "classes", 10usize)?
                    .check(|c| c >= 2, "must be at least 2")?;
                let per_class = positive_count(&raw.get(d, "per_class", 100)?)?;
                let dim = positive_count(&raw.get(d, "dim", 10)?)?;
                let spread = nonnegative_real(&raw.get(d, "spread", 0.3)?)?;
                let model = match raw
                    .get_with(d, "model", "softmax".to_string(), |s| Ok(s.to_string()))?
                    .value
                    .as_str()
                {
                    "softmax" => ModelSpec::SoftmaxRegression,
                    "mlp" => {
                        let hidden = raw.get(d, "hidden", 16usize)?.check(
                            |h| (1..=MAX_HIDDEN_WIDTH).contains(&h),
                            "must lie in [1, 64]",
                        )?;
                        let activation = raw
                            .get_with(d, "activation", Activation::Tanh, parse_activation)?
                            .value;
                        ModelSpec::Mlp { hidden, activation }
                    }
                    other => {
                        return Err(err(
                            raw.entries
                                .iter()
                                .find(|e| e.key == "model" && e.section == d)
                                .map(|e| e.line),
                            "data.model",
                            format!("unknown model {other:?}; expected softmax or mlp"),
                        ))
                    }
                };
                let p = "partition";
                let mode_name =
                    raw.get_with(p, "mode", "dirichlet".to_string(), |s| Ok(s.to_string()))?;
                let mode = match mode_name.value.as_str() {
                    "dirichlet" => PartitionMode::Dirichlet {
                        alpha: positive_real(&raw.get(p, "alpha", 0.5)?)?,
                    },
                    "shards" => PartitionMode::Shards {
                        shards_per_client: positive_count(&raw.get(p, "shards_per_client", 2)?)?,
                    },
                    other => {
                        return Err(err(
                            mode_name.line,
                            "partition.mode",
                            format!("unknown mode {other:?}; expected dirichlet or shards"),
                        ))
                    }
                };
                let partition = PartitionSpec {
                    mode,
                    clients: positive_count(&raw.get(p, "clients", 10)?)?,
                    min_samples_per_client: raw.get(p, "min_samples", 1usize)?.value,
                    seed: raw.get(p, "seed", 0u64)?.value,
                };
                DatasetSpec::Blobs {
                    classes,
                    per_class,
                    dim,
                    spread,
                    seed: data_seed,
                    model,
                    partition,
                }
            }
            "glr" => {
                let dim_field = raw.get(d, "dim", 5usize)?;
                let dim = positive_count(&dim_field)?;
                let samples = positive_count(&raw.get(d, "samples_per_client", 50)?)?;
                if dim > samples {
                    return Err(err(
                        dim_field.line,
                        "data.dim",
                        format!("must not exceed data.samples_per_client ({samples})"),
                    ));
                }
                DatasetSpec::Glr {
                    clients: positive_count(&raw.get(d, "clients", 10)?)?,
                    samples_per_client: samples,
                    dim,
                    design_scale: positive_real(&raw.get(d, "design_scale", 1.0)?)?,
                    noise_std: nonnegative_real(&raw.get(d, "noise_std", 0.1)?)?,
                    param_spread: nonnegative_real(&raw.get(d, "param_spread", 1.0)?)?,
                    seed: data_seed,
                }
            }
            "quadratic" => DatasetSpec::Quadratic {
                clients: positive_count(&raw.get(d, "clients", 10)?)?,
                dim: positive_count(&raw.get(d, "dim", 5)?)?,
                shared_minimizer: raw.get(d, "shared_minimizer", false)?.value,
                seed: data_seed,
            },
            other => {
                return Err(err(
                    kind.line,
                    "data.kind",
                    format!("unknown kind {other:?}; expected blobs, glr or quadratic"),
                ))
            }
        };
        raw.finish()?;

        if clients_per_round > dataset.clients() {
            return Err(err(
                clients_field.line,
                clients_field.name,
                format!("exceeds the number of clients ({})", dataset.clients()),
            ));
        }

        let trainer = TrainerConfig {
            rounds,
            local_steps,
            clients_per_round,
            global_lr,
            local_lr,
            alpha,
            fair_angle: fair_angle_deg.to_radians(),
            eba: EbaConfig {
                tau0,
                schedule,
                decay,
                prior,
            },
            qffl: QfflConfig { q, lipschitz },
            batch,
            method,
            seed: seeds[0],
            tail_percent: k_percent,
        };
        trainer
            .validate()
            .map_err(|e| err(raw.section_line("trainer"), "trainer", e.to_string()))?;
        Ok(Self {
            trainer,
            dataset,
            k_percent,
            seeds,
            output_dir,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            err(
                None,
                path.display().to_string(),
                format!("cannot read config: {e}"),
            )
        })?;
        Self::parse_str(&text)
    }
}
