//! Training hyperparameters and their flat `key = value` file format.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            warmup_epochs: 50,
            total_epochs: 200,
            batch_size: 8,
            weight_decay: 1e-2,
            grad_clip_norm: 1.0,
            weights: LossWeights::default(),
            seed: 7,
            checkpoint_every: 0,
        }
    }
}

const KEYS: [&str; 12] = [
    "lr",
    "warmup_epochs",
    "total_epochs",
    "batch_size",
    "weight_decay",
    "grad_clip_norm",
    "alpha",
    "beta",
    "gamma",
    "lambda",
    "seed",
    "checkpoint_every",
];

impl TrainConfig {
    /// The long run used to check that the toy set can be overfit: 500
    /// epochs of one full batch each.
    pub fn overfit() -> Self {
        TrainConfig {
            total_epochs: 500,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let checks = [
            (self.lr > 0.0 && self.lr.is_finite(), "lr must be positive"),
            (self.warmup_epochs < self.total_epochs, "warmup_epochs must be below total_epochs"),
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.weight_decay >= 0.0, "weight_decay must be non-negative"),
            (self.grad_clip_norm > 0.0, "grad_clip_norm must be positive"),
            (
                w.alpha > 0.0 && w.beta > 0.0 && w.gamma > 0.0 && w.lambda > 0.0,
                "loss weights must be positive",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).to_string())),
            None => Ok(()),
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. Every key is
    /// required and unknown keys are rejected.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(err(i + 1, format!("unknown key `{key}`")));
            }
            if values.insert(key, (i + 1, value.trim())).is_some() {
                return Err(err(i + 1, format!("duplicate key `{key}`")));
            }
        }
        if let Some(missing) = KEYS.iter().find(|k| !values.contains_key(*k)) {
            return Err(Error::MissingKey((*missing).to_string()));
        }
        fn get<X: std::str::FromStr>(values: &BTreeMap<&str, (usize, &str)>, key: &str, origin: &Path) -> Result<X> {
            let (line, v) = values[key];
            v.parse().map_err(|_| Error::Parse {
                path: origin.to_path_buf(),
                line,
                msg: format!("invalid value `{v}` for `{key}`"),
            })
        }
        let cfg = TrainConfig {
            lr: get(&values, "lr", origin)?,
            warmup_epochs: get(&values, "warmup_epochs", origin)?,
            total_epochs: get(&values, "total_epochs", origin)?,
            batch_size: get(&values, "batch_size", origin)?,
            weight_decay: get(&values, "weight_decay", origin)?,
            grad_clip_norm: get(&values, "grad_clip_norm", origin)?,
            weights: LossWeights {
                alpha: get(&values, "alpha", origin)?,
                beta: get(&values, "beta", origin)?,
                gamma: get(&values, "gamma", origin)?,
                lambda: get(&values, "lambda", origin)?,
            },
            seed: get(&values, "seed", origin)?,
            checkpoint_every: get(&values, "checkpoint_every", origin)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path: PathBuf = path.as_ref().to_path_buf();
        Self::parse(&std::fs::read_to_string(&path)?, &path)
    }

    pub fn to_text(&self) -> String {
        let w = &self.weights;
        format!(
            "lr = {}\nwarmup_epochs = {}\ntotal_epochs = {}\nbatch_size = {}\nweight_decay = {}\ngrad_clip_norm = {}\n\
             alpha = {}\nbeta = {}\ngamma = {}\nlambda = {}\nseed = {}\ncheckpoint_every = {}\n",
            self.lr,
            self.warmup_epochs,
            self.total_epochs,
            self.batch_size,
            self.weight_decay,
            self.grad_clip_norm,
            w.alpha,
            w.beta,
            w.gamma,
            w.lambda,
            self.seed,
            self.checkpoint_every
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = TrainConfig::overfit();
        assert_eq!(TrainConfig::parse(&cfg.to_text(), Path::new("t.cfg")).unwrap(), cfg);
    }

    #[test]
    fn missing_key_is_named() {
        let text = TrainConfig::default().to_text().replace("gamma = 2\n", "");
        match TrainConfig::parse(&text, Path::new("t.cfg")) {
            Err(Error::MissingKey(k)) => assert_eq!(k, "gamma"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_has_line_number() {
        let text = TrainConfig::default().to_text().replace("batch_size = 8", "batch_size = eight");
        assert!(matches!(
            TrainConfig::parse(&text, Path::new("t.cfg")),
            Err(Error::Parse { line: 4, .. })
        ));
        let text = format!("# comment\n{}bogus = 1\n", TrainConfig::default().to_text());
        assert!(matches!(
            TrainConfig::parse(&text, Path::new("t.cfg")),
            Err(Error::Parse { line: 14, .. })
        ));
    }

    #[test]
    fn warmup_must_precede_end() {
        let cfg = TrainConfig {
            warmup_epochs: 200,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        assert_eq!(TrainConfig::load(dir.join("desk.cfg")).unwrap(), TrainConfig::default());
        let overfit = TrainConfig::load(dir.join("overfit.cfg")).unwrap();
        assert_eq!(
            TrainConfig {
                checkpoint_every: 0,
                ..overfit
            },
            TrainConfig::overfit()
        );
    }
}
