//! Sweep configuration: a TOML file of dotted keys, flattened and checked
//! against a registry of known keys, then converted into a typed
//! [`SweepConfig`].
//!
//! Keys may be written flat (`sweep.trials = 200`) or inside tables
//! (`[sweep]` then `trials = 200`). Any key can be overridden from the
//! environment as `AMPI__SECTION__KEY=value`, for example
//! `AMPI__SWEEP__TRIALS=20` or `AMPI__COSTS__PREDICTOR__CHEAP=0.02`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ampi_core::datagen::SyntheticParams;
use ampi_core::optimizer::{BisectionConfig, CalibrationOptions, FixedPointConfig};
use ampi_core::uncertainty::{BoostParams, CvGrid, UncertaintySpec};
use ampi_core::RoutingMode;
use toml::Value;

use crate::csv_io::CsvSchema;
use crate::error::{HarnessError, Result};

pub const ENV_PREFIX: &str = "AMPI__";

/// One entry of the key registry. Keys ending in `.*` are families keyed by
/// predictor id.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    /// Default as a TOML literal; empty for wildcard families.
    pub default: &'static str,
    pub doc: &'static str,
}

const fn k(key: &'static str, default: &'static str, doc: &'static str) -> KeySpec {
    KeySpec { key, default, doc }
}

pub const KEYS: &[KeySpec] = &[
    k("sweep.budgets", "[60.0, 100.0, 150.0, 200.0]", "total budgets B, strictly ascending"),
    k("sweep.trials", "50", "independent trials per budget"),
    k("sweep.methods", r#"["ampi", "asi:cheap", "asi:expensive"]"#, "ampi | asi:<id> | ampi-random | asi-mixture"),
    k("sweep.alpha", "0.1", "miscoverage level of the intervals"),
    k("sweep.seed", "0", "root seed"),
    k("sweep.n_min", "7", "minimum gold labels a method must fund to be reported"),
    k("sweep.burn_in", "500", "burn-in rows drawn from the calibration split"),
    k("sweep.family", r#""singletons""#, "AM-PPI subset family: singletons | all"),
    k("splits.train", "0.6", "training fraction (predictor fitting)"),
    k("splits.calibration", "0.2", "calibration fraction (burn-in pool)"),
    k("splits.test", "0.2", "test fraction (deployment stream)"),
    k("costs.label", "1.0", "cost of one gold label"),
    k("costs.predictor.*", "", "query cost of each predictor; the keys define the predictor ids"),
    k("calibration.pi_floor", "0.01", "lower clip on labeling probabilities"),
    k("calibration.max_outer_iters", "10", "fixed-point iterations"),
    k("calibration.mu_rel_tol", "1e-4", "relative multiplier tolerance"),
    k("calibration.lambda_rel_tol", "1e-4", "relative weight tolerance"),
    k("calibration.ridge", "0.0", "ridge added to the weight systems"),
    k("calibration.bisection_rel_tol", "1e-9", "bracket tolerance of the multiplier search"),
    k("calibration.unit_lambda", "false", "fix weights to 1/|I| instead of fitting them"),
    k("uncertainty.kind", r#""cv""#, "cv | fixed | constant | oracle"),
    k("uncertainty.n_trees", "50", "trees (kind = fixed)"),
    k("uncertainty.depth", "2", "tree depth (kind = fixed)"),
    k("uncertainty.learning_rate", "0.1", "shrinkage (kind = fixed)"),
    k("uncertainty.min_samples_leaf", "2", "smallest leaf of the boosted trees"),
    k("uncertainty.value", "1.0", "constant uncertainty (kind = constant)"),
    k("uncertainty.grid.n_trees", "[25, 50, 100]", "cross-validation grid"),
    k("uncertainty.grid.depth", "[2, 6, 8]", "cross-validation grid"),
    k("uncertainty.grid.learning_rate", "[0.05, 0.1]", "cross-validation grid"),
    k("uncertainty.grid.folds", "3", "cross-validation folds"),
    k("uncertainty.reselect_each_refit", "false", "re-run cross-validation at every refit"),
    k("uncertainty.features", "[]", "covariate columns fed to the uncertainty models; empty = all"),
    k("data.source", r#""synthetic""#, "synthetic | noisy | specialized | twopop | csv"),
    k("data.n", "20000", "rows generated per trial"),
    k("data.d", "5", "covariate dimension of the regression generator"),
    k("data.easy_frac", "0.7", "probability that a row is easy"),
    k("data.easy_noise_sd", "0.1", "label noise sd on easy rows"),
    k("data.hard_noise_sd", "2.0", "label noise sd on hard rows"),
    k("data.tree_depth.*", "", "depth of each tree predictor (source = synthetic)"),
    k("data.sigma.*", "", "noise sd of each noisy-oracle predictor (source = noisy)"),
    k("data.sigma_good", "0.5", "specialized predictors: noise sd on their own half"),
    k("data.sigma_bad", "2.5", "specialized predictors: noise sd on the other half"),
    k("data.split_column", "0", "specialized predictors: covariate that splits the halves"),
    k("data.split_threshold", "0.0", "specialized predictors: split point"),
    k("data.p", "0.5", "two-population: fraction of easy rows"),
    k("data.r_e", "1e-4", "two-population: easy residual variance"),
    k("data.r_h", "1.0", "two-population: hard residual variance of the cheap predictor"),
    k("data.delta", "0.75", "two-population: hard-residual reduction of the expensive predictor"),
    k("data.var_y", "1.0", "two-population: label variance"),
    k("data.path", r#""""#, "csv: input file, relative to the config file"),
    k("data.label", r#""y""#, "csv: label column"),
    k("data.covariates", "[]", "csv: covariate columns; empty = every column that is not a label or predictor"),
    k("data.balance", "false", "csv: undersample the majority class of a binary label"),
];

/// Defaults of the wildcard families.
const WILDCARD_DEFAULTS: &[(&str, &str)] = &[
    ("costs.predictor.cheap", "0.01"),
    ("costs.predictor.expensive", "0.04"),
    ("data.tree_depth.cheap", "2"),
    ("data.tree_depth.expensive", "6"),
    ("data.sigma.cheap", "2.5"),
    ("data.sigma.expensive", "0.75"),
];

fn spec_for(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| match s.key.strip_suffix(".*") {
        Some(prefix) => key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')).is_some_and(|id| !id.is_empty() && !id.contains('.')),
        None => s.key == key,
    })
}

fn parse_literal(text: &str) -> Option<Value> {
    let table: toml::Table = format!("v = {text}").parse().ok()?;
    table.get("v").cloned()
}

/// Defaults in the flat file format, one documented key per line.
pub fn defaults_text() -> String {
    let mut out = String::new();
    let mut section = "";
    for spec in KEYS {
        let head = spec.key.split('.').next().unwrap_or("");
        if head != section {
            if !section.is_empty() {
                out.push('\n');
            }
            section = head;
        }
        match spec.key.strip_suffix(".*") {
            Some(prefix) => {
                out.push_str(&format!("# {}.<id>: {}\n", prefix, spec.doc));
                for (key, value) in WILDCARD_DEFAULTS.iter().filter(|(key, _)| key.starts_with(prefix)) {
                    out.push_str(&format!("{key} = {value}\n"));
                }
            }
            None => out.push_str(&format!("{} = {}  # {}\n", spec.key, spec.default, spec.doc)),
        }
    }
    out
}

/// One line per key, for command-line help.
pub fn key_help() -> String {
    let width = KEYS.iter().map(|s| s.key.len()).max().unwrap_or(0);
    KEYS.iter()
        .map(|s| {
            let default = match s.key.strip_suffix(".*") {
                Some(prefix) => WILDCARD_DEFAULTS
                    .iter()
                    .filter_map(|(key, v)| key.strip_prefix(prefix).map(|id| format!("{}={v}", &id[1..])))
                    .collect::<Vec<_>>()
                    .join(", "),
                None => s.default.to_string(),
            };
            format!("  {:width$}  {} [default: {}]", s.key.replace(".*", ".<id>"), s.doc, default)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Flattened key/value view of a configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) -> Result<()> {
    for (key, value) in table {
        let full = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match value {
            Value::Table(inner) => flatten(&full, inner, out)?,
            other => {
                if spec_for(&full).is_none() {
                    return Err(HarnessError::config(full, "unknown key"));
                }
                out.insert(full, other.clone());
            }
        }
    }
    Ok(())
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let key = e.span().map(|s| text[s].trim().to_string()).unwrap_or_default();
            HarnessError::config(key, e.message().to_string())
        })?;
        let mut values = BTreeMap::new();
        flatten("", &table, &mut values)?;
        Ok(RawConfig { values })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    /// Sets `key` from a TOML literal; bare words are taken as strings.
    /// Setting one key of a predictor family keeps the family's other
    /// entries (including defaults).
    pub fn set(&mut self, key: &str, literal: &str) -> Result<()> {
        let spec = spec_for(key).ok_or_else(|| HarnessError::config(key, "unknown key"))?;
        if let Some(prefix) = spec.key.strip_suffix(".*") {
            for (id, v) in self.family(prefix) {
                self.values.entry(format!("{prefix}.{id}")).or_insert(v);
            }
        }
        let value = parse_literal(literal).unwrap_or_else(|| Value::String(literal.to_string()));
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    /// Applies `AMPI__SECTION__KEY=value` overrides from `vars`.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        for (name, value) in vars {
            if let Some(rest) = name.strip_prefix(ENV_PREFIX) {
                let key = rest.split("__").collect::<Vec<_>>().join(".").to_lowercase();
                self.set(&key, &value)?;
            }
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    fn get(&self, key: &str) -> Value {
        if let Some(v) = self.values.get(key) {
            return v.clone();
        }
        let spec = spec_for(key).expect("registered key");
        parse_literal(spec.default).expect("valid default literal")
    }

    fn family(&self, prefix: &str) -> BTreeMap<String, Value> {
        let given: BTreeMap<String, Value> = self
            .values
            .iter()
            .filter_map(|(key, v)| key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')).map(|id| (id.to_string(), v.clone())))
            .collect();
        if !given.is_empty() {
            return given;
        }
        WILDCARD_DEFAULTS
            .iter()
            .filter_map(|(key, v)| key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')).map(|id| (id.to_string(), parse_literal(v).expect("valid default"))))
            .collect()
    }

    fn f64(&self, key: &str) -> Result<f64> {
        as_f64(key, &self.get(key))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        as_usize(key, &self.get(key))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        self.get(key).as_bool().ok_or_else(|| HarnessError::config(key, "expected true or false"))
    }

    fn string(&self, key: &str) -> Result<String> {
        self.get(key).as_str().map(str::to_string).ok_or_else(|| HarnessError::config(key, "expected a string"))
    }

    fn list<T>(&self, key: &str, item: impl Fn(&str, &Value) -> Result<T>) -> Result<Vec<T>> {
        match self.get(key) {
            Value::Array(items) => items.iter().map(|v| item(key, v)).collect(),
            _ => Err(HarnessError::config(key, "expected an array")),
        }
    }

    /// Converts and validates the whole configuration.
    pub fn build(&self) -> Result<SweepConfig> {
        let cfg = SweepConfig {
            budgets: self.list("sweep.budgets", as_f64)?,
            n_trials: self.usize("sweep.trials")?,
            methods: self.list("sweep.methods", |key, v| {
                let s = v.as_str().ok_or_else(|| HarnessError::config(key, "expected strings"))?;
                s.parse().map_err(|e: String| HarnessError::config(key, e))
            })?,
            alpha: self.f64("sweep.alpha")?,
            seed: as_u64("sweep.seed", &self.get("sweep.seed"))?,
            n_min: self.usize("sweep.n_min")?,
            burn_in: self.usize("sweep.burn_in")?,
            family: self.string("sweep.family")?.parse().map_err(|e: String| HarnessError::config("sweep.family", e))?,
            splits: Splits {
                train: self.f64("splits.train")?,
                calibration: self.f64("splits.calibration")?,
                test: self.f64("splits.test")?,
            },
            label_cost: self.f64("costs.label")?,
            predictor_costs: self
                .family("costs.predictor")
                .iter()
                .map(|(id, v)| Ok((id.clone(), as_f64(&format!("costs.predictor.{id}"), v)?)))
                .collect::<Result<_>>()?,
            calibration: self.calibration()?,
            data: self.data()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn calibration(&self) -> Result<CalibrationOptions> {
        let uncertainty = match self.string("uncertainty.kind")?.as_str() {
            "cv" => UncertaintySpec::CrossValidated {
                grid: CvGrid {
                    n_trees_options: self.list("uncertainty.grid.n_trees", as_usize)?,
                    depth_options: self.list("uncertainty.grid.depth", as_usize)?,
                    learning_rate_options: self.list("uncertainty.grid.learning_rate", as_f64)?,
                    folds: self.usize("uncertainty.grid.folds")?,
                    min_samples_leaf: self.usize("uncertainty.min_samples_leaf")?,
                },
                reselect_each_refit: self.bool("uncertainty.reselect_each_refit")?,
            },
            "fixed" => UncertaintySpec::Fixed(BoostParams {
                n_trees: self.usize("uncertainty.n_trees")?,
                max_depth: self.usize("uncertainty.depth")?,
                learning_rate: self.f64("uncertainty.learning_rate")?,
                min_samples_leaf: self.usize("uncertainty.min_samples_leaf")?,
            }),
            "constant" => UncertaintySpec::Constant(self.f64("uncertainty.value")?),
            "oracle" => UncertaintySpec::Oracle,
            other => return Err(HarnessError::config("uncertainty.kind", format!("unknown kind '{other}'"))),
        };
        let features = self.list("uncertainty.features", as_usize)?;
        Ok(CalibrationOptions {
            fixed_point: FixedPointConfig {
                max_outer_iters: self.usize("calibration.max_outer_iters")?,
                mu_rel_tol: self.f64("calibration.mu_rel_tol")?,
                lambda_rel_tol: self.f64("calibration.lambda_rel_tol")?,
                ridge: self.f64("calibration.ridge")?,
            },
            bisection: BisectionConfig { rel_tol: self.f64("calibration.bisection_rel_tol")?, ..Default::default() },
            uncertainty,
            uncertainty_features: (!features.is_empty()).then_some(features),
            pi_floor: self.f64("calibration.pi_floor")?,
            routing: RoutingMode::Optimal,
            unit_lambda: self.bool("calibration.unit_lambda")?,
            seed: 0,
        })
    }

    fn synthetic_params(&self) -> Result<SyntheticParams> {
        Ok(SyntheticParams {
            n: self.usize("data.n")?,
            d: self.usize("data.d")?,
            easy_frac: self.f64("data.easy_frac")?,
            easy_noise_sd: self.f64("data.easy_noise_sd")?,
            hard_noise_sd: self.f64("data.hard_noise_sd")?,
        })
    }

    fn data(&self) -> Result<DataSource> {
        Ok(match self.string("data.source")?.as_str() {
            "synthetic" => DataSource::Synthetic {
                params: self.synthetic_params()?,
                tree_depths: self
                    .family("data.tree_depth")
                    .iter()
                    .map(|(id, v)| Ok((id.clone(), as_usize(&format!("data.tree_depth.{id}"), v)?)))
                    .collect::<Result<_>>()?,
            },
            "noisy" => DataSource::Noisy {
                params: self.synthetic_params()?,
                sigmas: self
                    .family("data.sigma")
                    .iter()
                    .map(|(id, v)| Ok((id.clone(), as_f64(&format!("data.sigma.{id}"), v)?)))
                    .collect::<Result<_>>()?,
            },
            "specialized" => DataSource::Specialized {
                params: self.synthetic_params()?,
                sigma_good: self.f64("data.sigma_good")?,
                sigma_bad: self.f64("data.sigma_bad")?,
                column: self.usize("data.split_column")?,
                threshold: self.f64("data.split_threshold")?,
            },
            "twopop" => DataSource::TwoPop {
                n: self.usize("data.n")?,
                p: self.f64("data.p")?,
                r_e: self.f64("data.r_e")?,
                r_h: self.f64("data.r_h")?,
                delta: self.f64("data.delta")?,
                var_y: self.f64("data.var_y")?,
            },
            "csv" => {
                let path = self.string("data.path")?;
                if path.is_empty() {
                    return Err(HarnessError::config("data.path", "required when data.source = \"csv\""));
                }
                DataSource::Csv {
                    path: PathBuf::from(path),
                    schema: CsvSchema {
                        covariates: self.list("data.covariates", as_string)?,
                        label: self.string("data.label")?,
                        predictors: self.family("costs.predictor").into_keys().collect(),
                    },
                    balance: self.bool("data.balance")?,
                }
            }
            other => return Err(HarnessError::config("data.source", format!("unknown source '{other}'"))),
        })
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(HarnessError::config(key, format!("expected a number, got {v}"))),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(HarnessError::config(key, format!("expected a non-negative integer, got {v}"))),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    as_u64(key, v).map(|u| u as usize)
}

fn as_string(key: &str, v: &Value) -> Result<String> {
    v.as_str().map(str::to_string).ok_or_else(|| HarnessError::config(key, "expected strings"))
}

/// A method compared in a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Optimal routing over the configured subset family.
    Ampi,
    /// Single-predictor baseline.
    Asi(String),
    /// The AM-PPI family with each instance routed uniformly at random.
    AmpiRandom,
    /// Separately calibrated single-predictor baselines, one per predictor,
    /// with each instance handled by the baseline that the routing coin of
    /// [`Method::AmpiRandom`] picks.
    AsiMixture,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Ampi => f.write_str("ampi"),
            Method::Asi(id) => write!(f, "asi:{id}"),
            Method::AmpiRandom => f.write_str("ampi-random"),
            Method::AsiMixture => f.write_str("asi-mixture"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ampi" => Ok(Method::Ampi),
            "ampi-random" => Ok(Method::AmpiRandom),
            "asi-mixture" => Ok(Method::AsiMixture),
            _ => match s.strip_prefix("asi:") {
                Some(id) if !id.is_empty() => Ok(Method::Asi(id.to_string())),
                _ => Err(format!("unknown method '{s}'")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Singletons,
    All,
}

impl FromStr for FamilyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "singletons" => Ok(FamilyKind::Singletons),
            "all" => Ok(FamilyKind::All),
            _ => Err(format!("unknown family '{s}' (expected singletons or all)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splits {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Regression generator with tree predictors fitted on the train split.
    Synthetic { params: SyntheticParams, tree_depths: BTreeMap<String, usize> },
    /// Regression generator with noisy-oracle predictors.
    Noisy { params: SyntheticParams, sigmas: BTreeMap<String, f64> },
    /// Regression generator with two predictors specialized on opposite
    /// sides of `threshold` in covariate `column`.
    Specialized { params: SyntheticParams, sigma_good: f64, sigma_bad: f64, column: usize, threshold: f64 },
    /// Two-population model; predictors are `cheap` and `expensive`.
    TwoPop { n: usize, p: f64, r_e: f64, r_h: f64, delta: f64, var_y: f64 },
    Csv { path: PathBuf, schema: CsvSchema, balance: bool },
}

/// A validated sweep configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub budgets: Vec<f64>,
    pub n_trials: usize,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub seed: u64,
    pub n_min: usize,
    pub burn_in: usize,
    pub family: FamilyKind,
    pub splits: Splits,
    pub label_cost: f64,
    pub predictor_costs: BTreeMap<String, f64>,
    /// Calibration settings shared by every method; routing and seed are
    /// set per method and trial.
    pub calibration: CalibrationOptions,
    pub data: DataSource,
}

impl SweepConfig {
    /// Reads `path`, applies environment overrides and validates.
    /// Reads a config file and applies environment overrides. A relative
    /// `data.path` is taken relative to the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = RawConfig::from_file(path)?;
        raw.apply_env(std::env::vars())?;
        let mut cfg = raw.build()?;
        cfg.resolve_paths(path);
        Ok(cfg)
    }

    /// Makes a relative `data.path` relative to the directory of the config
    /// file at `config_path`.
    pub fn resolve_paths(&mut self, config_path: &Path) {
        if let DataSource::Csv { path, .. } = &mut self.data {
            if path.is_relative() {
                if let Some(dir) = config_path.parent() {
                    *path = dir.join(&*path);
                }
            }
        }
    }

    pub fn predictor_ids(&self) -> Vec<String> {
        self.predictor_costs.keys().cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(HarnessError::config(key, msg));
        if self.budgets.is_empty() {
            return bad("sweep.budgets", "must not be empty");
        }
        if self.budgets.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad("sweep.budgets", "budgets must be positive and finite");
        }
        if self.budgets.windows(2).any(|w| w[1] <= w[0]) {
            return bad("sweep.budgets", "budgets must be strictly ascending");
        }
        if self.n_trials == 0 {
            return bad("sweep.trials", "must be >= 1");
        }
        if self.methods.is_empty() {
            return bad("sweep.methods", "must not be empty");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("sweep.alpha", "must lie in (0, 1)");
        }
        if self.n_min == 0 {
            return bad("sweep.n_min", "must be >= 1");
        }
        if self.burn_in < 2 {
            return bad("sweep.burn_in", "must be >= 2");
        }
        let Splits { train, calibration, test } = self.splits;
        for (key, v) in [("splits.train", train), ("splits.calibration", calibration), ("splits.test", test)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(key, "fractions must lie in [0, 1]");
            }
        }
        if calibration == 0.0 || test == 0.0 {
            return bad("splits.test", "calibration and test fractions must be positive");
        }
        if ((train + calibration + test) - 1.0).abs() > 1e-9 {
            return bad("splits.test", "fractions must sum to 1");
        }
        if !(self.label_cost.is_finite() && self.label_cost > 0.0) {
            return bad("costs.label", "must be positive");
        }
        if self.predictor_costs.is_empty() {
            return bad("costs.predictor", "at least one predictor is required");
        }
        for (id, c) in &self.predictor_costs {
            if !(c.is_finite() && *c >= 0.0) {
                return bad(&format!("costs.predictor.{id}"), "must be finite and >= 0");
            }
        }
        for m in &self.methods {
            if let Method::Asi(id) = m {
                if !self.predictor_costs.contains_key(id) {
                    return bad("sweep.methods", &format!("asi:{id} names a predictor without a cost"));
                }
            }
        }
        self.calibration.validate().map_err(|e| HarnessError::config("calibration", e.to_string()))?;
        if let UncertaintySpec::CrossValidated { grid, .. } = &self.calibration.uncertainty {
            grid.validate().map_err(|e| HarnessError::config("uncertainty.grid", e.to_string()))?;
        }
        let ids = self.predictor_ids();
        match &self.data {
            DataSource::Synthetic { params, tree_depths } => {
                params.validate().map_err(|e| HarnessError::config("data", e.to_string()))?;
                for id in &ids {
                    if !tree_depths.contains_key(id) {
                        return bad(&format!("data.tree_depth.{id}"), "missing for a costed predictor");
                    }
                }
            }
            DataSource::Noisy { params, sigmas } => {
                params.validate().map_err(|e| HarnessError::config("data", e.to_string()))?;
                for id in &ids {
                    match sigmas.get(id) {
                        Some(s) if s.is_finite() && *s >= 0.0 => {}
                        _ => return bad(&format!("data.sigma.{id}"), "missing or negative for a costed predictor"),
                    }
                }
            }
            DataSource::Specialized { params, sigma_good, sigma_bad, column, .. } => {
                params.validate().map_err(|e| HarnessError::config("data", e.to_string()))?;
                if ids.len() != 2 {
                    return bad("costs.predictor", "the specialized source needs exactly two predictors");
                }
                if *column >= params.d {
                    return bad("data.split_column", "out of range");
                }
                if !(*sigma_good >= 0.0 && *sigma_bad >= 0.0) {
                    return bad("data.sigma_good", "noise levels must be >= 0");
                }
            }
            DataSource::TwoPop { n, p, r_e, r_h, delta, var_y } => {
                if *n == 0 {
                    return bad("data.n", "must be positive");
                }
                if ids != [ampi_core::datagen::CHEAP, ampi_core::datagen::EXPENSIVE] {
                    return bad("costs.predictor", "the twopop source needs predictors 'cheap' and 'expensive'");
                }
                if !(*p > 0.0 && *p <= 1.0) {
                    return bad("data.p", "must lie in (0, 1]");
                }
                if !(*r_e >= 0.0 && *r_h >= 0.0 && *var_y > 0.0) {
                    return bad("data.r_h", "variances must be >= 0 (var_y > 0)");
                }
                if !(0.0..=1.0).contains(delta) {
                    return bad("data.delta", "must lie in [0, 1]");
                }
            }
            DataSource::Csv { .. } => {}
        }
        Ok(())
    }

    /// Calibration options for one method and trial.
    pub fn calibration_options(&self, method: &Method, seed: u64) -> CalibrationOptions {
        let mut opts = self.calibration.clone();
        opts.routing = if *method == Method::AmpiRandom { RoutingMode::Uniform } else { RoutingMode::Optimal };
        opts.seed = seed;
        opts
    }
}
