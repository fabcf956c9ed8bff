//! Model and training configuration, and the `key = value` config file.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer placed between the encoder and the output softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Interaction {
    Base,
    Pool,
    AttPool,
    PoolSelfAtt,
    SelfAtt,
    Grid,
}

impl Interaction {
    pub const ALL: [Interaction; 6] = [
        Self::Base,
        Self::Pool,
        Self::AttPool,
        Self::PoolSelfAtt,
        Self::SelfAtt,
        Self::Grid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::Pool => "pool",
            Self::AttPool => "att-pool",
            Self::PoolSelfAtt => "pool-selfatt",
            Self::SelfAtt => "selfatt",
            Self::Grid => "grid",
        }
    }

    pub fn has_attention(self) -> bool {
        matches!(self, Self::AttPool | Self::PoolSelfAtt | Self::SelfAtt)
    }
}

/// An interaction layer plus the multi-predicate input flag, written
/// `pool`, `mp-pool-selfatt`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub interaction: Interaction,
    pub mp: bool,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.mp {
            f.write_str("mp-")?;
        }
        f.write_str(self.interaction.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('_', "-");
        let (mp, rest) = match lower.strip_prefix("mp-") {
            Some(rest) => (true, rest),
            None => (false, lower.as_str()),
        };
        let interaction = Interaction::ALL
            .into_iter()
            .find(|i| i.as_str() == rest)
            .ok_or_else(|| {
                Error::usage(format!(
                    "unknown variant {s:?}; expected [mp-]base|pool|att-pool|pool-selfatt|selfatt|grid"
                ))
            })?;
        Ok(Variant { interaction, mp })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperConfig {
    pub d_w: usize,
    pub d_r: usize,
    pub layers: usize,
    pub dropout_rate: f64,
    pub d_f: usize,
    pub mp_enabled: bool,
    pub interaction: Interaction,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            d_w: 256,
            d_r: 256,
            layers: 10,
            dropout_rate: 0.1,
            d_f: 1024,
            mp_enabled: false,
            interaction: Interaction::Base,
        }
    }
}

impl HyperConfig {
    pub fn variant(&self) -> Variant {
        Variant {
            interaction: self.interaction,
            mp: self.mp_enabled,
        }
    }

    pub fn set_variant(&mut self, v: Variant) {
        self.interaction = v.interaction;
        self.mp_enabled = v.mp;
    }

    /// Width of the first recurrent layer's input: embedding plus flags.
    pub fn input_width(&self) -> usize {
        self.d_w + if self.mp_enabled { 2 } else { 1 }
    }

    /// Width of the vectors fed to the output softmax.
    pub fn output_width(&self) -> usize {
        match self.interaction {
            Interaction::Base | Interaction::Grid => self.d_r,
            _ => self.d_f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::usage("layer count must be at least 1"));
        }
        if self.d_w == 0 || self.d_r == 0 || self.d_f == 0 {
            return Err(Error::usage("layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::usage("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Which split the decoding thresholds are tuned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdSplit {
    Train,
    Dev,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs without a new best dev score before the rate is halved.
    pub patience: usize,
    /// Training stops once the rate would fall below this fraction of the
    /// initial rate.
    pub lr_floor_factor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub threshold_split: ThresholdSplit,
    pub freeze_thresholds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 4,
            lr_floor_factor: 1.0 / 16.0,
            max_epochs: 100,
            seed: 1,
            clip_norm: None,
            threshold_split: ThresholdSplit::Train,
            freeze_thresholds: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::usage("patience must be at least 1"));
        }
        if !(self.lr_floor_factor > 0.0 && self.lr_floor_factor < 1.0) {
            return Err(Error::usage("lr floor factor must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::usage("Adam betas must lie in [0, 1) and epsilon must be positive"));
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(Error::usage("clip norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Config {
    pub hyper: HyperConfig,
    pub train: TrainConfig,
}

pub(crate) fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid value {v:?} for {key}"),
    })
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse {
            line,
            message: format!("invalid boolean {v:?} for {key}"),
        }),
    }
}

impl Config {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut mp_explicit = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, v) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: "expected `key = value`".into(),
            })?;
            let (key, v) = (key.trim(), v.trim());
            let h = &mut cfg.hyper;
            let t = &mut cfg.train;
            match key {
                "d_w" => h.d_w = value(line, key, v)?,
                "d_r" => h.d_r = value(line, key, v)?,
                "layers" | "K" => h.layers = value(line, key, v)?,
                "dropout_rate" => h.dropout_rate = value(line, key, v)?,
                "d_f" => h.d_f = value(line, key, v)?,
                "mp_enabled" => mp_explicit = Some(boolean(line, key, v)?),
                "variant" => {
                    let var: Variant = v.parse().map_err(|e: Error| Error::Parse {
                        line,
                        message: e.to_string(),
                    })?;
                    h.interaction = var.interaction;
                    if var.mp {
                        h.mp_enabled = true;
                    }
                }
                "learning_rate" => t.learning_rate = value(line, key, v)?,
                "beta1" => t.beta1 = value(line, key, v)?,
                "beta2" => t.beta2 = value(line, key, v)?,
                "epsilon" => t.epsilon = value(line, key, v)?,
                "patience" => t.patience = value(line, key, v)?,
                "lr_floor_factor" => t.lr_floor_factor = value(line, key, v)?,
                "max_epochs" => t.max_epochs = value(line, key, v)?,
                "seed" => t.seed = value(line, key, v)?,
                "clip_norm" => {
                    t.clip_norm = match v {
                        "none" | "off" => None,
                        _ => Some(value(line, key, v)?),
                    }
                }
                "threshold_split" => {
                    t.threshold_split = match v {
                        "train" => ThresholdSplit::Train,
                        "dev" => ThresholdSplit::Dev,
                        _ => {
                            return Err(Error::Parse {
                                line,
                                message: format!("threshold_split must be train or dev, got {v:?}"),
                            })
                        }
                    }
                }
                "freeze_thresholds" => t.freeze_thresholds = boolean(line, key, v)?,
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        if let Some(mp) = mp_explicit {
            cfg.hyper.mp_enabled = mp;
        }
        cfg.hyper.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let h = &self.hyper;
        let t = &self.train;
        let clip = t.clip_norm.map_or("none".to_string(), |c| c.to_string());
        let split = match t.threshold_split {
            ThresholdSplit::Train => "train",
            ThresholdSplit::Dev => "dev",
        };
        format!(
            "d_w = {}\nd_r = {}\nlayers = {}\ndropout_rate = {}\nd_f = {}\nmp_enabled = {}\nvariant = {}\n\
             learning_rate = {}\nbeta1 = {}\nbeta2 = {}\nepsilon = {}\npatience = {}\nlr_floor_factor = {}\n\
             max_epochs = {}\nseed = {}\nclip_norm = {}\nthreshold_split = {}\nfreeze_thresholds = {}\n",
            h.d_w,
            h.d_r,
            h.layers,
            h.dropout_rate,
            h.d_f,
            h.mp_enabled,
            h.interaction.as_str(),
            t.learning_rate,
            t.beta1,
            t.beta2,
            t.epsilon,
            t.patience,
            t.lr_floor_factor,
            t.max_epochs,
            t.seed,
            clip,
            split,
            t.freeze_thresholds,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for i in Interaction::ALL {
            for mp in [false, true] {
                let v = Variant { interaction: i, mp };
                assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
            }
        }
        assert_eq!(
            "mp-pool-selfatt".parse::<Variant>().unwrap(),
            Variant {
                interaction: Interaction::PoolSelfAtt,
                mp: true
            }
        );
        assert!("mp-transformer".parse::<Variant>().is_err());
    }

    #[test]
    fn text_round_trip_and_defaults() {
        let mut cfg = Config::default();
        cfg.hyper.d_r = 64;
        cfg.hyper.set_variant("mp-att-pool".parse().unwrap());
        cfg.train.clip_norm = Some(5.0);
        cfg.train.threshold_split = ThresholdSplit::Dev;
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);

        let d = Config::parse("# empty\n").unwrap();
        assert_eq!((d.hyper.d_w, d.hyper.layers, d.hyper.d_f), (256, 10, 1024));
        assert_eq!(d.train.learning_rate, 2e-4);
    }

    #[test]
    fn bad_lines_name_their_line() {
        assert!(matches!(Config::parse("d_w = 8\nbogus = 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Config::parse("d_r = x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("layers = 0\n"), Err(Error::Usage(_))));
    }
}
