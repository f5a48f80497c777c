//! Flat `key=value` experiment configuration.
//!
//! Resolution order is defaults, then a config file, then overrides; later
//! sources win. [`ExperimentConfig::to_kv_text`] writes every key with its
//! resolved value, so the output fed back through
//! [`ExperimentConfig::from_kv_text`] reproduces the same run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::{Activation, ModelSpec};
use crate::noise::{format_pair_map, parse_pair_map, NoiseKind, NoiseSpec};
use crate::optim::{Mode, OptimConfig};

/// Every accepted key, in the order they are written out.
pub const KEYS: &[&str] = &[
    "layers",
    "activation",
    "mode",
    "eta",
    "rho",
    "alpha",
    "k",
    "momentum",
    "weight_decay",
    "ratio_includes_decay",
    "epochs",
    "batch_size",
    "lr_milestones",
    "lr_decay",
    "seed",
    "diagnostics",
    "probe_size",
    "train_path",
    "test_path",
    "data_n",
    "data_n_test",
    "data_classes",
    "data_dim",
    "data_separation",
    "data_seed",
    "noise_kind",
    "noise_rate",
    "noise_seed",
    "noise_pairs",
    "output_dir",
];

/// Where the training (and test) data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Gaussian blobs; the first `n` samples train, the next `n_test` test.
    /// Noise touches the training part only.
    Synthetic {
        n: usize,
        n_test: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        seed: u64,
        noise: NoiseSpec,
    },
    Files {
        train: PathBuf,
        test: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub optim: OptimConfig,
    pub data: DataSource,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub seed: u64,
    pub diagnostics_enabled: bool,
    pub probe_size: usize,
    pub output_dir: Option<PathBuf>,
}

/// Raw key/value pairs prior to resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap(BTreeMap<String, String>);

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            map.set(key.trim(), value.trim())?;
        }
        Ok(map)
    }

    /// Sets a key, rejecting unknown names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.0.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` strings on top of the current values.
    pub fn apply_overrides<'a>(&mut self, overrides: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::resolve(self)
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn resolve(map: &ConfigMap) -> Result<Self> {
        let get = |key: &str| map.get(key).filter(|v| !v.is_empty());
        fn or<T: std::str::FromStr>(map_value: Option<&str>, key: &str, default: T) -> Result<T> {
            map_value.map_or(Ok(default), |v| parse_value(key, v))
        }

        let layers = match get("layers") {
            Some(v) => parse_list("layers", v)?,
            None => vec![32, 64, 10],
        };
        let activation: Activation = or(get("activation"), "activation", Activation::Relu)?;
        let model = ModelSpec::new(layers, activation)?;

        let epochs: usize = or(get("epochs"), "epochs", 200)?;
        let optim = OptimConfig {
            eta: or(get("eta"), "eta", 0.1)?,
            rho: or(get("rho"), "rho", 0.1)?,
            alpha_target: or(get("alpha"), "alpha", 0.5)?,
            k: or(get("k"), "k", epochs / 4)?,
            momentum: or(get("momentum"), "momentum", 0.9)?,
            weight_decay: or(get("weight_decay"), "weight_decay", 5e-4)?,
            mode: or(get("mode"), "mode", Mode::Saner)?,
            ratio_includes_decay: get("ratio_includes_decay")
                .map_or(Ok(false), |v| parse_bool("ratio_includes_decay", v))?,
        };
        let lr_milestones = match map.get("lr_milestones") {
            Some(v) => parse_list("lr_milestones", v)?,
            None => default_milestones(epochs),
        };

        let data = match get("train_path") {
            Some(train) => DataSource::Files {
                train: PathBuf::from(train),
                test: get("test_path").map(PathBuf::from),
            },
            None => {
                let kind: NoiseKind = or(get("noise_kind"), "noise_kind", NoiseKind::Symmetric)?;
                let noise = NoiseSpec {
                    kind,
                    rate: or(get("noise_rate"), "noise_rate", 0.4)?,
                    seed: or(get("noise_seed"), "noise_seed", 0)?,
                    pair_map: get("noise_pairs").map(parse_pair_map).transpose()?,
                };
                DataSource::Synthetic {
                    n: or(get("data_n"), "data_n", 5000)?,
                    n_test: or(get("data_n_test"), "data_n_test", 2000)?,
                    classes: or(get("data_classes"), "data_classes", model.num_classes())?,
                    dim: or(get("data_dim"), "data_dim", model.input_dim())?,
                    separation: or(get("data_separation"), "data_separation", DEFAULT_SEPARATION)?,
                    seed: or(get("data_seed"), "data_seed", 0)?,
                    noise,
                }
            }
        };

        let config = Self {
            model,
            optim,
            data,
            epochs,
            batch_size: or(get("batch_size"), "batch_size", 128)?,
            lr_milestones,
            lr_decay: or(get("lr_decay"), "lr_decay", 0.1)?,
            seed: or(get("seed"), "seed", 0)?,
            diagnostics_enabled: get("diagnostics").map_or(Ok(true), |v| parse_bool("diagnostics", v))?,
            probe_size: or(get("probe_size"), "probe_size", 512)?,
            output_dir: get("output_dir").map(PathBuf::from),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        ConfigMap::parse(text)?.resolve()
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.probe_size == 0 {
            return Err(Error::Config("probe_size must be at least 1".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("lr_milestones must be strictly increasing".into()));
        }
        if self.lr_milestones.last().is_some_and(|&m| m >= self.epochs) {
            return Err(Error::Config("lr_milestones must be below epochs".into()));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::Config(format!("lr_decay must be positive, got {}", self.lr_decay)));
        }
        self.optim.validate()?;
        if let DataSource::Synthetic {
            classes, dim, noise, ..
        } = &self.data
        {
            noise.validate()?;
            if *classes != self.model.num_classes() || *dim != self.model.input_dim() {
                return Err(Error::Config(format!(
                    "synthetic data ({dim} features, {classes} classes) does not fit layers {:?}",
                    self.model.layer_sizes()
                )));
            }
        }
        Ok(())
    }

    /// Every key with its resolved value.
    pub fn to_map(&self) -> ConfigMap {
        let o = &self.optim;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("layers", join(self.model.layer_sizes()));
        put("activation", self.model.activation().to_string());
        put("mode", o.mode.to_string());
        put("eta", o.eta.to_string());
        put("rho", o.rho.to_string());
        put("alpha", o.alpha_target.to_string());
        put("k", o.k.to_string());
        put("momentum", o.momentum.to_string());
        put("weight_decay", o.weight_decay.to_string());
        put("ratio_includes_decay", o.ratio_includes_decay.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr_milestones", join(&self.lr_milestones));
        put("lr_decay", self.lr_decay.to_string());
        put("seed", self.seed.to_string());
        put("diagnostics", self.diagnostics_enabled.to_string());
        put("probe_size", self.probe_size.to_string());
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match &self.data {
            DataSource::Files { train, test } => {
                put("train_path", train.display().to_string());
                put("test_path", path(test));
            }
            DataSource::Synthetic {
                n,
                n_test,
                classes,
                dim,
                separation,
                seed,
                noise,
            } => {
                put("train_path", String::new());
                put("test_path", String::new());
                put("data_n", n.to_string());
                put("data_n_test", n_test.to_string());
                put("data_classes", classes.to_string());
                put("data_dim", dim.to_string());
                put("data_separation", separation.to_string());
                put("data_seed", seed.to_string());
                put("noise_kind", noise.kind.to_string());
                put("noise_rate", noise.rate.to_string());
                put("noise_seed", noise.seed.to_string());
                put("noise_pairs", noise.pair_map.as_ref().map(format_pair_map).unwrap_or_default());
            }
        }
        put("output_dir", path(&self.output_dir));
        ConfigMap(m)
    }

    pub fn to_kv_text(&self) -> String {
        let map = self.to_map();
        let mut out = String::new();
        for key in KEYS {
            if let Some(v) = map.get(key) {
                writeln!(out, "{key}={v}").unwrap();
            }
        }
        out
    }
}

/// Blob separation used when none is configured. Clusters overlap enough
/// that a 32-64-10 network keeps fitting flipped labels for the whole of a
/// 150-epoch run at 40% symmetric noise.
pub const DEFAULT_SEPARATION: f64 = 3.0;

/// Learning-rate drops at one half and three quarters of training.
pub fn default_milestones(epochs: usize) -> Vec<usize> {
    let mut m = vec![epochs / 2, epochs * 3 / 4];
    m.retain(|&e| e > 0 && e < epochs);
    m.dedup();
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = ConfigMap::default().resolve().unwrap();
        assert_eq!(c.epochs, 200);
        assert_eq!(c.optim.k, 50);
        assert_eq!(c.optim.rho, 0.1);
        assert_eq!(c.optim.alpha_target, 0.5);
        assert_eq!(c.optim.momentum, 0.9);
        assert_eq!(c.optim.weight_decay, 5e-4);
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.lr_milestones, vec![100, 150]);
    }

    #[test]
    fn k_defaults_to_a_quarter_of_the_epochs() {
        let mut m = ConfigMap::default();
        m.apply_overrides(["epochs=150"]).unwrap();
        assert_eq!(m.resolve().unwrap().optim.k, 37);
        m.apply_overrides(["k=30"]).unwrap();
        assert_eq!(m.resolve().unwrap().optim.k, 30);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigMap::parse("learning_rate=0.1").is_err());
        assert!(ConfigMap::default().apply_overrides(["foo=1"]).is_err());
        assert!(ConfigMap::default().apply_overrides(["eta"]).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for bad in ["epochs=0", "batch_size=0", "lr_milestones=150,100", "lr_milestones=250", "eta=-1", "mode=adam", "noise_rate=1.5", "momentum=1"] {
            let mut m = ConfigMap::default();
            m.apply_overrides([bad]).unwrap();
            assert!(m.resolve().is_err(), "{bad} accepted");
        }
    }

    #[test]
    fn resolved_text_reproduces_the_config() {
        let mut m = ConfigMap::parse("# comment\nmode=sgd_gr_b\nepochs=12\nnoise_kind=asymmetric_pairmap\nnoise_pairs=9:1,3:5\n").unwrap();
        m.apply_overrides(["eta=0.05", "output_dir=/tmp/x"]).unwrap();
        let c = m.resolve().unwrap();
        let again = ExperimentConfig::from_kv_text(&c.to_kv_text()).unwrap();
        assert_eq!(again, c);

        let files = ExperimentConfig::from_kv_text("train_path=a.ds\nlayers=4,3\n").unwrap();
        assert_eq!(ExperimentConfig::from_kv_text(&files.to_kv_text()).unwrap(), files);
    }

    #[test]
    fn empty_milestones_mean_constant_rate() {
        let c = ExperimentConfig::from_kv_text("lr_milestones=\n").unwrap();
        assert!(c.lr_milestones.is_empty());
    }
}
