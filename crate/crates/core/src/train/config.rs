use std::fmt;

use super::{Result, TrainError};

/// Optimisation hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Iterations at which the learning rate is multiplied by `lr_gamma`.
    pub milestones: Vec<u64>,
    pub lr_gamma: f64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    /// Elementwise gradient cap.
    pub grad_clip: f64,
    pub l2_lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub val_fraction: f64,
    pub seed: u64,
    /// Start the prediction-head bias at the mean training label instead of 0.
    pub init_bias_from_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 5,
            lr: 1e-4,
            milestones: vec![400_000, 700_000],
            lr_gamma: 0.1,
            epochs: 200,
            iters_per_epoch: 5000,
            grad_clip: 1000.0,
            l2_lambda: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            val_fraction: 0.10,
            seed: 0,
            init_bias_from_labels: false,
        }
    }
}

fn invalid(msg: impl Into<String>) -> TrainError {
    TrainError::InvalidConfig(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| invalid(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.iters_per_epoch == 0 {
            return Err(invalid("batch_size, epochs and iters_per_epoch must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(invalid("val_fraction must lie in (0, 1)"));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("milestones must be strictly increasing"));
        }
        if !(self.grad_clip > 0.0) || !(self.epsilon > 0.0) || !(self.lr_gamma > 0.0) {
            return Err(invalid("grad_clip, epsilon and lr_gamma must be positive"));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(invalid("l2_lambda must be non-negative"));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Returns `false` for keys that are
    /// not training parameters.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "milestones" => {
                self.milestones = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "lr_gamma" => self.lr_gamma = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "iters_per_epoch" => self.iters_per_epoch = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "l2_lambda" => self.l2_lambda = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "init_bias_from_labels" => self.init_bias_from_labels = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl fmt::Display for TrainConfig {
    /// The `key = value` form accepted by [`TrainConfig::set`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let milestones: Vec<String> = self.milestones.iter().map(u64::to_string).collect();
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "lr = {:e}", self.lr)?;
        writeln!(f, "milestones = {}", milestones.join(","))?;
        writeln!(f, "lr_gamma = {}", self.lr_gamma)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "iters_per_epoch = {}", self.iters_per_epoch)?;
        writeln!(f, "grad_clip = {}", self.grad_clip)?;
        writeln!(f, "l2_lambda = {}", self.l2_lambda)?;
        writeln!(f, "beta1 = {}", self.beta1)?;
        writeln!(f, "beta2 = {}", self.beta2)?;
        writeln!(f, "epsilon = {:e}", self.epsilon)?;
        writeln!(f, "val_fraction = {}", self.val_fraction)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "init_bias_from_labels = {}", self.init_bias_from_labels)
    }
}

/// Parses a flat `key = value` file. `#` starts a comment; blank lines are
/// ignored. Keys keep their order of appearance.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(invalid(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
