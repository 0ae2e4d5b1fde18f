//! Experiment configuration.
//!
//! The TOML file is read into [`ConfigFile`], where every key is optional,
//! and then resolved into a fully defaulted [`ExperimentConfig`]. Keys that
//! contradict the chosen variant are rejected during resolution, before any
//! training starts.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dal;
use crate::data::{BatchSizes, ShiftSpec};
use crate::error::{Error, Result};
use crate::net::{DaOptions, Schedule, SgdConfig};

pub const DEFAULT_LAMBDA: f64 = 0.1;

/// The four ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Source loss only, no DA-layers.
    Source,
    /// Source loss plus target entropy, no DA-layers.
    Entropy,
    /// DA-layers with alpha pinned at 1.
    AutodialFixed,
    /// DA-layers with learned alpha.
    Autodial,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Source,
        Variant::Entropy,
        Variant::AutodialFixed,
        Variant::Autodial,
    ];

    pub fn has_da_layers(self) -> bool {
        matches!(self, Variant::AutodialFixed | Variant::Autodial)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Source => "SOURCE",
            Variant::Entropy => "ENTROPY",
            Variant::AutodialFixed => "AUTODIAL_FIXED",
            Variant::Autodial => "AUTODIAL",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "source" => Ok(Variant::Source),
            "entropy" => Ok(Variant::Entropy),
            "autodial_fixed" => Ok(Variant::AutodialFixed),
            "autodial" => Ok(Variant::Autodial),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Option<Vec<usize>>,
    pub da_layers: Option<bool>,
    pub alpha_init: Option<f64>,
    pub eps: Option<f64>,
    pub momentum_ma: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub schedule: Option<Schedule>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSection {
    pub n_source: Option<usize>,
    pub n_target: Option<usize>,
    /// Proportional mode: total batch size split by dataset sizes.
    pub total: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub synthetic: Option<ShiftSpec>,
    /// Labeled source CSV.
    pub source: Option<PathBuf>,
    /// Target CSV with a label column; labels are used for evaluation only.
    pub target: Option<PathBuf>,
}

/// The configuration file as written, before defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub variant: Option<Variant>,
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub batch: BatchSection,
    #[serde(default)]
    pub data: DataSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub da_layers: bool,
    pub alpha_init: f64,
    pub alpha_trainable: bool,
    pub eps: f64,
    pub momentum_ma: f64,
}

impl NetworkConfig {
    pub fn da_options(&self) -> Option<DaOptions> {
        self.da_layers.then_some(DaOptions {
            alpha_init: self.alpha_init,
            alpha_trainable: self.alpha_trainable,
            eps: self.eps,
            momentum: self.momentum_ma,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BatchMode {
    Fixed { n_source: usize, n_target: usize },
    Proportional { total: usize },
}

impl BatchMode {
    pub fn sizes(&self, source_len: usize, target_len: usize) -> Result<BatchSizes> {
        match *self {
            BatchMode::Fixed { n_source, n_target } => BatchSizes::fixed(n_source, n_target),
            BatchMode::Proportional { total } => BatchSizes::proportional(total, source_len, target_len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(ShiftSpec),
    Files { source: PathBuf, target: PathBuf },
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub output_dir: Option<PathBuf>,
    pub network: NetworkConfig,
    pub lambda: f64,
    pub optimizer: SgdConfig,
    pub batch: BatchMode,
    pub data: DataSource,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    /// Reads a config file and applies `key.path=value` overrides on top.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| cfg_err(e.to_string()))
    }

    /// Applies defaults and checks every variant invariant.
    pub fn resolve(self) -> Result<ExperimentConfig> {
        let variant = self.variant.unwrap_or(Variant::Autodial);
        let net = self.network;

        let da_layers = variant.has_da_layers();
        if let Some(flag) = net.da_layers.filter(|&f| f != da_layers) {
            return Err(cfg_err(format!(
                "variant {variant} {} DA-layers but network.da_layers = {flag}",
                if da_layers { "requires" } else { "forbids" }
            )));
        }
        let lambda = match (variant, self.loss.lambda) {
            (_, Some(l)) if !(l >= 0.0 && l.is_finite()) => {
                return Err(cfg_err(format!("loss.lambda must be a finite value >= 0, got {l}")));
            }
            (Variant::Source, Some(l)) if l != 0.0 => {
                return Err(cfg_err(format!("variant SOURCE requires loss.lambda = 0, got {l}")));
            }
            (Variant::Source, _) => 0.0,
            (Variant::Entropy, Some(0.0)) => {
                return Err(cfg_err("variant ENTROPY requires loss.lambda > 0"));
            }
            (_, Some(l)) => l,
            (_, None) => DEFAULT_LAMBDA,
        };
        let alpha_init = match (variant, net.alpha_init) {
            (Variant::AutodialFixed, Some(a)) if a != 1.0 => {
                return Err(cfg_err(format!("variant AUTODIAL_FIXED pins alpha at 1.0, got alpha_init = {a}")));
            }
            (Variant::AutodialFixed, _) => 1.0,
            (_, Some(a)) if !(dal::ALPHA_MIN..=dal::ALPHA_MAX).contains(&a) => {
                return Err(cfg_err(format!("network.alpha_init = {a} outside [0.5, 1]")));
            }
            (_, Some(a)) => a,
            (_, None) => dal::DEFAULT_ALPHA,
        };
        let hidden = net.hidden.unwrap_or_else(|| vec![32, 32]);
        if hidden.contains(&0) {
            return Err(cfg_err("hidden layer widths must be positive"));
        }
        let eps = net.eps.unwrap_or(dal::DEFAULT_EPS);
        if eps.is_nan() || eps <= 0.0 {
            return Err(cfg_err(format!("network.eps must be > 0, got {eps}")));
        }
        let momentum_ma = net.momentum_ma.unwrap_or(dal::DEFAULT_MOMENTUM);
        if !(momentum_ma > 0.0 && momentum_ma <= 1.0) {
            return Err(cfg_err(format!("network.momentum_ma must be in (0, 1], got {momentum_ma}")));
        }

        let defaults = SgdConfig {
            learning_rate: 0.01,
            schedule: Schedule::INV_DEFAULT,
            ..SgdConfig::default()
        };
        let opt = self.optimizer;
        let optimizer = SgdConfig {
            learning_rate: opt.learning_rate.unwrap_or(defaults.learning_rate),
            momentum: opt.momentum.unwrap_or(defaults.momentum),
            weight_decay: opt.weight_decay.unwrap_or(defaults.weight_decay),
            schedule: opt.schedule.unwrap_or(defaults.schedule),
        };
        if optimizer.learning_rate.is_nan()
            || optimizer.learning_rate <= 0.0
            || !(0.0..1.0).contains(&optimizer.momentum) || optimizer.weight_decay < 0.0
        {
            return Err(cfg_err("optimizer needs learning_rate > 0, momentum in [0, 1), weight_decay >= 0"));
        }

        let batch = match (self.batch.total, self.batch.n_source, self.batch.n_target) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(cfg_err("batch: give either total or n_source/n_target, not both"));
            }
            (Some(total), None, None) if total >= 2 => BatchMode::Proportional { total },
            (Some(total), None, None) => return Err(cfg_err(format!("batch.total = {total} must be >= 2"))),
            (None, ns, nt) => {
                let (n_source, n_target) = (ns.unwrap_or(32), nt.unwrap_or(32));
                if n_source == 0 || n_target == 0 {
                    return Err(cfg_err("batch.n_source and batch.n_target must be >= 1"));
                }
                BatchMode::Fixed { n_source, n_target }
            }
        };

        let data = match (self.data.synthetic, self.data.source, self.data.target) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(cfg_err("data: give either synthetic or source/target files"));
            }
            (Some(spec), None, None) => {
                spec.validate().map_err(|e| cfg_err(e.to_string()))?;
                DataSource::Synthetic(spec)
            }
            (None, Some(source), Some(target)) => DataSource::Files { source, target },
            (None, None, None) => DataSource::Synthetic(ShiftSpec::default()),
            _ => return Err(cfg_err("data: source and target files must be given together")),
        };

        let seeds = self.seeds.unwrap_or_else(|| (0..5).collect());
        if seeds.is_empty() {
            return Err(cfg_err("seeds must not be empty"));
        }

        Ok(ExperimentConfig {
            variant,
            seeds,
            epochs: self.epochs.unwrap_or(30),
            output_dir: self.output_dir,
            network: NetworkConfig {
                hidden,
                da_layers,
                alpha_init,
                alpha_trainable: variant == Variant::Autodial,
                eps,
                momentum_ma,
            },
            lambda,
            optimizer,
            batch,
            data,
        })
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal when it parses
/// as one, otherwise as a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| cfg_err(format!("override '{assignment}' is not key=value")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| cfg_err(format!("override '{key}': '{p}' is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        ConfigFile::from_toml(text)?.resolve()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        ConfigFile::load(path, overrides)?.resolve()
    }

    /// The resolved settings, every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The shifted-blob benchmark used for the ablation comparison.
    pub fn reference(variant: Variant) -> Self {
        let text = include_str!("../../../../configs/reference.toml");
        let mut file = ConfigFile::from_toml(text).expect("reference config parses");
        file.variant = Some(variant);
        if variant == Variant::Source {
            file.loss.lambda = None;
        }
        if variant == Variant::AutodialFixed {
            file.network.alpha_init = None;
        }
        file.resolve().expect("reference config resolves")
    }

    /// Same run settings for a different variant, with variant-specific
    /// values reset to what that variant requires.
    pub fn with_variant(&self, variant: Variant) -> Result<Self> {
        let mut c = self.clone();
        c.variant = variant;
        c.network.da_layers = variant.has_da_layers();
        c.network.alpha_trainable = variant == Variant::Autodial;
        match variant {
            Variant::Source => c.lambda = 0.0,
            Variant::AutodialFixed => c.network.alpha_init = 1.0,
            _ => {}
        }
        if variant != Variant::Source && c.lambda == 0.0 {
            c.lambda = DEFAULT_LAMBDA;
        }
        c.check()?;
        Ok(c)
    }

    /// Re-checks the variant invariants on an already resolved config.
    pub fn check(&self) -> Result<()> {
        let v = self.variant;
        let n = &self.network;
        let ok = match v {
            Variant::Source => self.lambda == 0.0 && !n.da_layers,
            Variant::Entropy => self.lambda > 0.0 && !n.da_layers,
            Variant::AutodialFixed => n.da_layers && n.alpha_init == 1.0 && !n.alpha_trainable,
            Variant::Autodial => {
                n.da_layers && n.alpha_trainable && (dal::ALPHA_MIN..=dal::ALPHA_MAX).contains(&n.alpha_init)
            }
        };
        if !ok || self.lambda < 0.0 {
            return Err(cfg_err(format!("configuration is inconsistent with variant {v}")));
        }
        Ok(())
    }
}
