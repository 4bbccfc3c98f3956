//! Run configuration: defaults, validation, and the flat key=value file format.

use crate::corpus::SequenceLimits;
use crate::error::{Error, Result};
use crate::objectives::{Hyperparams, SpecialCase, WordCoefficient};
use crate::sampling::SamplingStrategy;

/// Which discriminator judges the generator's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscLevel {
    Word,
    Utterance,
}

impl DiscLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscLevel::Word => "word",
            DiscLevel::Utterance => "utterance",
        }
    }
}

/// Everything a training run needs. Defaults mirror the full-scale recipe;
/// every field can be overridden for desk-scale runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub h_dim: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub top_k: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub clip: f64,
    pub epochs: u64,
    /// Global step cap; 0 means run all epochs.
    pub max_steps: u64,
    pub seed: u64,
    pub strategy: SamplingStrategy,
    pub level: DiscLevel,
    pub bootstrap: bool,
    pub special_case: Option<SpecialCase>,
    pub word_coefficient: WordCoefficient,
    pub max_turn_tokens: usize,
    pub max_context_turns: usize,
    pub max_decode_len: usize,
    /// Validation cadence in steps; 0 validates only at the end of the run.
    pub validate_every: u64,
    /// Checkpoint cadence in steps; 0 checkpoints only at the end.
    pub checkpoint_every: u64,
    /// When false the whole corpus is used as train, validation, and test;
    /// useful for tiny corpora below the split minimum.
    pub split: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            h_dim: 512,
            layers: 3,
            vocab_size: 50_000,
            alpha: 1.0,
            beta: 1.0,
            tau: 1.0,
            top_k: 10,
            batch_size: 64,
            lr: 0.5,
            lr_decay: 0.99,
            clip: 5.0,
            epochs: 1,
            max_steps: 0,
            seed: 0,
            strategy: SamplingStrategy::CategoricalTopK,
            level: DiscLevel::Word,
            bootstrap: true,
            special_case: None,
            word_coefficient: WordCoefficient::Consistent,
            max_turn_tokens: 30,
            max_context_turns: 3,
            max_decode_len: 30,
            validate_every: 0,
            checkpoint_every: 0,
            split: true,
        }
    }
}

impl TrainingConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
        }
    }

    pub fn limits(&self) -> SequenceLimits {
        SequenceLimits {
            max_turn_tokens: self.max_turn_tokens,
            max_context_turns: self.max_context_turns,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams().validate()?;
        let positive = [
            ("h_dim", self.h_dim),
            ("layers", self.layers),
            ("top_k", self.top_k),
            ("batch_size", self.batch_size),
            ("max_context_turns", self.max_context_turns),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 5 {
            return Err(Error::Config(
                "vocab_size must leave room beyond the reserved ids".into(),
            ));
        }
        if self.max_turn_tokens < 2 {
            return Err(Error::Config("max_turn_tokens must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive and finite".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1)".into()));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::Config("clip must be positive and finite".into()));
        }
        if self.epochs == 0 && self.max_steps == 0 {
            return Err(Error::Config(
                "set epochs or max_steps to a positive value".into(),
            ));
        }
        Ok(())
    }

    /// Parses the flat `key = value` format. `#` starts a comment; blank
    /// lines are skipped; unknown or repeated keys are rejected with the
    /// offending line.
    pub fn parse(text: &str) -> Result<TrainingConfig> {
        let mut cfg = TrainingConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {lineno}: expected key=value, got `{raw}`"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {lineno}: repeated key `{key}`")));
            }
            seen.push(key.to_string());
            cfg.apply(key, value)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value `{value}` for `{key}`"))
        }
        match key {
            "h_dim" => self.h_dim = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "top_k" => self.top_k = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "strategy" => {
                self.strategy = match value {
                    "categorical" => SamplingStrategy::CategoricalTopK,
                    "uniform" => SamplingStrategy::UniformTopK,
                    "gaussian" => SamplingStrategy::Gaussian,
                    _ => return Err(format!("unknown strategy `{value}`")),
                }
            }
            "level" => {
                self.level = match value {
                    "word" => DiscLevel::Word,
                    "utterance" => DiscLevel::Utterance,
                    _ => return Err(format!("unknown level `{value}`")),
                }
            }
            "bootstrap" => self.bootstrap = parse_bool(key, value)?,
            "special_case" => {
                self.special_case = match value {
                    "none" => None,
                    "mle" => Some(SpecialCase::Mle),
                    "hard" => Some(SpecialCase::HardBootstrap),
                    _ => return Err(format!("unknown special_case `{value}`")),
                }
            }
            "word_coefficient" => {
                self.word_coefficient = match value {
                    "literal" => WordCoefficient::Literal,
                    "consistent" => WordCoefficient::Consistent,
                    _ => return Err(format!("unknown word_coefficient `{value}`")),
                }
            }
            "max_turn_tokens" => self.max_turn_tokens = num(key, value)?,
            "max_context_turns" => self.max_context_turns = num(key, value)?,
            "max_decode_len" => self.max_decode_len = num(key, value)?,
            "validate_every" => self.validate_every = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "split" => self.split = parse_bool(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Serializes back to the file format; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let special = match self.special_case {
            None => "none",
            Some(SpecialCase::Mle) => "mle",
            Some(SpecialCase::HardBootstrap) => "hard",
        };
        let strategy = match self.strategy {
            SamplingStrategy::CategoricalTopK => "categorical",
            SamplingStrategy::UniformTopK => "uniform",
            SamplingStrategy::Gaussian => "gaussian",
        };
        let coefficient = match self.word_coefficient {
            WordCoefficient::Literal => "literal",
            WordCoefficient::Consistent => "consistent",
        };
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("h_dim", self.h_dim.to_string());
        push("layers", self.layers.to_string());
        push("vocab_size", self.vocab_size.to_string());
        push("alpha", format!("{:?}", self.alpha));
        push("beta", format!("{:?}", self.beta));
        push("tau", format!("{:?}", self.tau));
        push("top_k", self.top_k.to_string());
        push("batch_size", self.batch_size.to_string());
        push("lr", format!("{:?}", self.lr));
        push("lr_decay", format!("{:?}", self.lr_decay));
        push("clip", format!("{:?}", self.clip));
        push("epochs", self.epochs.to_string());
        push("max_steps", self.max_steps.to_string());
        push("seed", self.seed.to_string());
        push("strategy", strategy.to_string());
        push("level", self.level.as_str().to_string());
        push("bootstrap", self.bootstrap.to_string());
        push("special_case", special.to_string());
        push("word_coefficient", coefficient.to_string());
        push("max_turn_tokens", self.max_turn_tokens.to_string());
        push("max_context_turns", self.max_context_turns.to_string());
        push("max_decode_len", self.max_decode_len.to_string());
        push("validate_every", self.validate_every.to_string());
        push("checkpoint_every", self.checkpoint_every.to_string());
        push("split", self.split.to_string());
        out
    }
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false for `{key}`, got `{value}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_recipe() {
        let c = TrainingConfig::default();
        assert_eq!(c.h_dim, 512);
        assert_eq!(c.layers, 3);
        assert_eq!(c.vocab_size, 50_000);
        assert_eq!(c.top_k, 10);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.lr, 0.5);
        assert_eq!(c.lr_decay, 0.99);
        assert_eq!(c.clip, 5.0);
        assert_eq!((c.alpha, c.beta, c.tau), (1.0, 1.0, 1.0));
        c.validate().unwrap();
    }

    #[test]
    fn parse_applies_overrides_and_comments() {
        let text = "# toy run\nh_dim = 8\nlayers=1\nbootstrap = false\nstrategy = gaussian\n\nspecial_case = hard # trailing note\n";
        let c = TrainingConfig::parse(text).unwrap();
        assert_eq!(c.h_dim, 8);
        assert_eq!(c.layers, 1);
        assert!(!c.bootstrap);
        assert_eq!(c.strategy, SamplingStrategy::Gaussian);
        assert_eq!(c.special_case, Some(SpecialCase::HardBootstrap));
        assert_eq!(c.batch_size, 64);
    }

    #[test]
    fn parse_rejects_unknown_key_with_line() {
        let err = TrainingConfig::parse("h_dim = 8\nhiden = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("hiden"), "{msg}");
    }

    #[test]
    fn parse_rejects_repeats_and_bad_values() {
        assert!(TrainingConfig::parse("h_dim = 8\nh_dim = 9\n").is_err());
        assert!(TrainingConfig::parse("lr = fast\n").is_err());
        assert!(TrainingConfig::parse("nonsense\n").is_err());
        assert!(TrainingConfig::parse("lr_decay = 1.5\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainingConfig::default();
        c.h_dim = 32;
        c.layers = 1;
        c.special_case = Some(SpecialCase::Mle);
        c.strategy = SamplingStrategy::UniformTopK;
        c.level = DiscLevel::Utterance;
        c.split = false;
        c.lr = 0.1;
        let back = TrainingConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }
}
