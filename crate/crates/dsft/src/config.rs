//! Flat `key=value` run configuration.
//!
//! One setting per line, dotted keys named after the module that owns the setting,
//! `#` starts a comment line. Unknown and duplicate keys are errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use dsft_core::eval::EvalSettings;
use dsft_core::masking::{BaseRatio, CurriculumSchedule};
use dsft_core::sampler::DecodeConfig;
use dsft_core::trainer::LossNorm;
use dsft_core::{Mode, Seed, TrainConfig};

use crate::error::{Error, Result};

/// Every key, in the order they are written out.
pub const KEYS: &[&str] = &[
    "seed",
    "trainer.mode",
    "trainer.lr",
    "trainer.batch_size",
    "trainer.steps",
    "trainer.w_num",
    "trainer.loss_norm",
    "trainer.pad_completion",
    "trainer.checkpoint_every",
    "trainer.divergence_factor",
    "trainer.divergence_patience",
    "masking.epsilon",
    "masking.number_fraction",
    "masking.span_prob",
    "masking.span_len",
    "masking.base",
    "masking.curriculum.r_min",
    "masking.curriculum.r_max",
    "masking.curriculum.total_steps",
    "masking.enable.number_first",
    "masking.enable.span",
    "masking.enable.curriculum",
    "masking.enable.weighted_loss",
    "model.layers",
    "model.heads",
    "model.dim",
    "model.ff_dim",
    "model.max_len",
    "tokenizer.min_freq",
    "eval.ratio",
    "eval.seed",
    "sampler.steps",
    "sampler.completion_len",
    "sampler.temperature",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Trainer settings. `mask.schedule` and `seed` are filled in by [`RunConfig::train_config`].
    pub train: TrainConfig,
    pub r_min: f64,
    pub r_max: f64,
    pub curriculum_steps: u64,
    pub min_freq: usize,
    pub eval: EvalSettings,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let schedule = train.mask.schedule;
        RunConfig {
            seed: 0,
            train,
            r_min: schedule.r_min(),
            r_max: schedule.r_max(),
            curriculum_steps: schedule.total_steps(),
            min_freq: 2,
            eval: EvalSettings::default(),
            decode: DecodeConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

impl RunConfig {
    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "trainer.mode" => {
                t.mode = match v {
                    "sft" => Mode::Sft,
                    "dsft" => Mode::Dsft,
                    _ => return Err(format!("{key}: expected sft or dsft, got {v:?}")),
                }
            }
            "trainer.lr" => t.lr = parse(key, v)?,
            "trainer.batch_size" => t.batch_size = parse(key, v)?,
            "trainer.steps" => t.steps = parse(key, v)?,
            "trainer.w_num" => t.w_num = parse(key, v)?,
            "trainer.loss_norm" => {
                t.loss_norm = match v {
                    "mean" => LossNorm::Mean,
                    "sum" => LossNorm::Sum,
                    _ => return Err(format!("{key}: expected mean or sum, got {v:?}")),
                }
            }
            "trainer.pad_completion" => t.pad_completion = parse(key, v)?,
            "trainer.checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            "trainer.divergence_factor" => t.divergence_factor = parse(key, v)?,
            "trainer.divergence_patience" => t.divergence_patience = parse(key, v)?,
            "masking.epsilon" => t.mask.epsilon = parse(key, v)?,
            "masking.number_fraction" => t.mask.number_fraction = parse(key, v)?,
            "masking.span_prob" => t.mask.span_prob = parse(key, v)?,
            "masking.span_len" => t.mask.span_len = parse(key, v)?,
            "masking.base" => {
                t.mask.base = match v {
                    "curriculum_floor" => BaseRatio::CurriculumFloor,
                    "sampled_t" => BaseRatio::SampledT,
                    _ => return Err(format!("{key}: expected curriculum_floor or sampled_t, got {v:?}")),
                }
            }
            "masking.curriculum.r_min" => self.r_min = parse(key, v)?,
            "masking.curriculum.r_max" => self.r_max = parse(key, v)?,
            "masking.curriculum.total_steps" => self.curriculum_steps = parse(key, v)?,
            "masking.enable.number_first" => t.mask.enable.number_first = parse(key, v)?,
            "masking.enable.span" => t.mask.enable.span = parse(key, v)?,
            "masking.enable.curriculum" => t.mask.enable.curriculum = parse(key, v)?,
            "masking.enable.weighted_loss" => t.mask.enable.weighted_loss = parse(key, v)?,
            "model.layers" => t.model.layers = parse(key, v)?,
            "model.heads" => t.model.heads = parse(key, v)?,
            "model.dim" => t.model.dim = parse(key, v)?,
            "model.ff_dim" => t.model.ff_dim = parse(key, v)?,
            "model.max_len" => t.model.max_len = parse(key, v)?,
            "tokenizer.min_freq" => self.min_freq = parse(key, v)?,
            "eval.ratio" => self.eval.ratio = parse(key, v)?,
            "eval.seed" => self.eval.seed = Seed(parse(key, v)?),
            "sampler.steps" => self.decode.steps = parse(key, v)?,
            "sampler.completion_len" => self.decode.completion_len = parse(key, v)?,
            "sampler.temperature" => self.decode.temperature = parse(key, v)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Text form of one key.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let s = match key {
            "seed" => self.seed.to_string(),
            "trainer.mode" => match t.mode {
                Mode::Sft => "sft".into(),
                Mode::Dsft => "dsft".into(),
            },
            "trainer.lr" => t.lr.to_string(),
            "trainer.batch_size" => t.batch_size.to_string(),
            "trainer.steps" => t.steps.to_string(),
            "trainer.w_num" => t.w_num.to_string(),
            "trainer.loss_norm" => match t.loss_norm {
                LossNorm::Mean => "mean".into(),
                LossNorm::Sum => "sum".into(),
            },
            "trainer.pad_completion" => t.pad_completion.to_string(),
            "trainer.checkpoint_every" => t.checkpoint_every.to_string(),
            "trainer.divergence_factor" => t.divergence_factor.to_string(),
            "trainer.divergence_patience" => t.divergence_patience.to_string(),
            "masking.epsilon" => t.mask.epsilon.to_string(),
            "masking.number_fraction" => t.mask.number_fraction.to_string(),
            "masking.span_prob" => t.mask.span_prob.to_string(),
            "masking.span_len" => t.mask.span_len.to_string(),
            "masking.base" => match t.mask.base {
                BaseRatio::CurriculumFloor => "curriculum_floor".into(),
                BaseRatio::SampledT => "sampled_t".into(),
            },
            "masking.curriculum.r_min" => self.r_min.to_string(),
            "masking.curriculum.r_max" => self.r_max.to_string(),
            "masking.curriculum.total_steps" => self.curriculum_steps.to_string(),
            "masking.enable.number_first" => t.mask.enable.number_first.to_string(),
            "masking.enable.span" => t.mask.enable.span.to_string(),
            "masking.enable.curriculum" => t.mask.enable.curriculum.to_string(),
            "masking.enable.weighted_loss" => t.mask.enable.weighted_loss.to_string(),
            "model.layers" => t.model.layers.to_string(),
            "model.heads" => t.model.heads.to_string(),
            "model.dim" => t.model.dim.to_string(),
            "model.ff_dim" => t.model.ff_dim.to_string(),
            "model.max_len" => t.model.max_len.to_string(),
            "tokenizer.min_freq" => self.min_freq.to_string(),
            "eval.ratio" => self.eval.ratio.to_string(),
            "eval.seed" => self.eval.seed.0.to_string(),
            "sampler.steps" => self.decode.steps.to_string(),
            "sampler.completion_len" => self.decode.completion_len.to_string(),
            "sampler.temperature" => self.decode.temperature.to_string(),
            _ => return None,
        };
        Some(s)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|k| (k.to_string(), self.get(k).expect("every listed key has a value"))).collect()
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, String> {
        let mut c = RunConfig::default();
        for (k, v) in map {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("every listed key has a value"))).collect()
    }

    /// Apply a config file's settings on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |message: String| Error::Parse { path: origin.to_path_buf(), line: i + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| perr(format!("expected key=value, got {line:?}")))?;
            let key = key.trim();
            if let Some(first) = seen.insert(key.to_string(), i + 1) {
                return Err(perr(format!("duplicate key {key:?} (first set on line {first})")));
            }
            self.set(key, value).map_err(perr)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut c = RunConfig::default();
        c.apply_text(&text, path)?;
        Ok(c)
    }

    /// Apply `key=value` overrides from the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Usage(format!("--set expects key=value, got {o:?}")))?;
            self.set(k.trim(), v).map_err(Error::Usage)?;
        }
        Ok(())
    }

    /// The trainer config for a vocabulary of `vocab_size` tokens.
    pub fn train_config(&self, vocab_size: usize) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        t.seed = Seed(self.seed);
        t.model.vocab_size = vocab_size;
        t.mask.schedule = CurriculumSchedule::new(self.r_min, self.r_max, self.curriculum_steps)?;
        t.validate()?;
        t.model.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_map(&c.to_map()).unwrap(), c);
        for k in KEYS {
            let v = c.get(k).unwrap();
            let mut d = RunConfig::default();
            d.set(k, &v).unwrap();
            assert_eq!(d, c, "{k}");
        }
        assert_eq!(c.to_map().len(), KEYS.len());
    }

    #[test]
    fn text_parsing() {
        let mut c = RunConfig::default();
        let text = "# comment\n\ntrainer.mode = sft\nmodel.dim=64\nsampler.temperature = 0.5\n";
        c.apply_text(text, Path::new("c")).unwrap();
        assert_eq!(c.train.mode, Mode::Sft);
        assert_eq!(c.train.model.dim, 64);
        assert_eq!(c.decode.temperature, 0.5);

        let mut again = RunConfig::default();
        again.apply_text(&c.to_text(), Path::new("c")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn text_errors_carry_line_numbers() {
        let mut c = RunConfig::default();
        let err = c.apply_text("seed=1\nbogus.key=3\n", Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = c.apply_text("seed=1\nseed=2\n", Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = c.apply_text("model.dim=abc\n", Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        assert!(c.apply_text("no equals sign\n", Path::new("c")).is_err());
    }

    #[test]
    fn overrides_and_train_config() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["seed=9", "masking.curriculum.r_max=0.3", "masking.curriculum.total_steps=10"]).unwrap();
        let t = c.train_config(50).unwrap();
        assert_eq!(t.seed, Seed(9));
        assert_eq!(t.model.vocab_size, 50);
        assert_eq!(t.mask.schedule.ratio(10), 0.3);
        assert!(c.apply_overrides(&["seed"]).is_err());
        c.set("masking.curriculum.r_min", "0.5").unwrap();
        assert!(c.train_config(50).is_err());
    }
}
