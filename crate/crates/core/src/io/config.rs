//! Run configuration as flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may
//! appear at most once; unknown keys are an error. Unset optional keys fall
//! back to the model's own settings.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::adversarial::{AttackConfig, AttackMethod};
use crate::attribution::Upsample;
use crate::error::{Error, Result};
use crate::pnr::{Direction, DEFAULT_EPSILON};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: Option<String>,
    pub layer_window: Option<usize>,
    pub temperature: Option<f64>,
    pub class: Option<usize>,
    pub upsample: Upsample,
    pub attack: AttackMethod,
    pub epsilon: f64,
    pub step_size: f64,
    pub num_steps: usize,
    pub momentum_decay: f64,
    pub random_start: bool,
    pub pnr_epsilon: f64,
    pub direction: Direction,
    /// Random-order control runs per image in faithfulness evaluation.
    pub random_seeds: usize,
    pub seed: u64,
    pub out_dir: Option<String>,
    pub skip_errors: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pgd = AttackConfig::pgd();
        RunConfig {
            model: None,
            layer_window: None,
            temperature: None,
            class: None,
            upsample: Upsample::default(),
            attack: AttackMethod::Pgd,
            epsilon: pgd.epsilon,
            step_size: pgd.step_size,
            num_steps: pgd.num_steps,
            momentum_decay: AttackConfig::mifgsm().momentum_decay,
            random_start: pgd.random_start,
            pnr_epsilon: DEFAULT_EPSILON,
            direction: Direction::default(),
            random_seeds: 5,
            seed: 0,
            out_dir: None,
            skip_errors: false,
        }
    }
}

/// Every key, in serialization order.
pub const KEYS: [&str; 17] = [
    "model",
    "layer_window",
    "temperature",
    "class",
    "upsample",
    "attack",
    "epsilon",
    "step_size",
    "num_steps",
    "momentum_decay",
    "random_start",
    "pnr_epsilon",
    "direction",
    "random_seeds",
    "seed",
    "out_dir",
    "skip_errors",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::format(format!("config key {key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Attack parameters, seeded with `seed`.
    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            method: self.attack,
            epsilon: self.epsilon,
            step_size: self.step_size,
            num_steps: self.num_steps,
            momentum_decay: match self.attack {
                AttackMethod::Pgd => 0.0,
                AttackMethod::MiFgsm => self.momentum_decay,
            },
            random_start: self.random_start,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_window == Some(0) {
            return Err(Error::param("layer_window must be at least 1"));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::param(format!(
                    "temperature must be positive, got {t}"
                )));
            }
        }
        if !(self.pnr_epsilon > 0.0 && self.pnr_epsilon.is_finite()) {
            return Err(Error::param(format!(
                "pnr_epsilon must be positive, got {}",
                self.pnr_epsilon
            )));
        }
        let mut attack = self.attack_config(0);
        attack.momentum_decay = self.momentum_decay;
        attack.validate()
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt = |v: &str| (!v.is_empty()).then(|| v.to_string());
        match key {
            "model" => self.model = opt(value),
            "layer_window" => self.layer_window = Some(parse_value(key, value)?),
            "temperature" => self.temperature = Some(parse_value(key, value)?),
            "class" => self.class = Some(parse_value(key, value)?),
            "upsample" => self.upsample = parse_value(key, value)?,
            "attack" => self.attack = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "step_size" => self.step_size = parse_value(key, value)?,
            "num_steps" => self.num_steps = parse_value(key, value)?,
            "momentum_decay" => self.momentum_decay = parse_value(key, value)?,
            "random_start" => self.random_start = parse_value(key, value)?,
            "pnr_epsilon" => self.pnr_epsilon = parse_value(key, value)?,
            "direction" => self.direction = parse_value(key, value)?,
            "random_seeds" => self.random_seeds = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "out_dir" => self.out_dir = opt(value),
            "skip_errors" => self.skip_errors = parse_value(key, value)?,
            other => return Err(Error::format(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(format!("config line {}: expected key = value", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(Error::format(format!(
                    "config line {}: duplicate key {key:?}",
                    n + 1
                )));
            }
            seen.push(key);
            cfg.set(key, value).map_err(|e| match e {
                Error::Format(m) => Error::format(format!("config line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// One line per set key, in [`KEYS`] order; unset options are omitted.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("string write");
        if let Some(m) = &self.model {
            put("model", m.clone());
        }
        if let Some(v) = self.layer_window {
            put("layer_window", v.to_string());
        }
        if let Some(v) = self.temperature {
            put("temperature", format!("{v:?}"));
        }
        if let Some(v) = self.class {
            put("class", v.to_string());
        }
        put("upsample", self.upsample.to_string());
        put("attack", self.attack.to_string());
        put("epsilon", format!("{:?}", self.epsilon));
        put("step_size", format!("{:?}", self.step_size));
        put("num_steps", self.num_steps.to_string());
        put("momentum_decay", format!("{:?}", self.momentum_decay));
        put("random_start", self.random_start.to_string());
        put("pnr_epsilon", format!("{:?}", self.pnr_epsilon));
        put("direction", self.direction.to_string());
        put("random_seeds", self.random_seeds.to_string());
        put("seed", self.seed.to_string());
        if let Some(d) = &self.out_dir {
            put("out_dir", d.clone());
        }
        put("skip_errors", self.skip_errors.to_string());
        out
    }
}
