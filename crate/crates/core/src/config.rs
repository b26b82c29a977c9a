//! Experiment hyperparameters.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub seg: f64,
    pub cpl: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { seg: 1.0, cpl: 1.0, adv: 1.0 }
    }
}

/// Every tunable of a run. The JSON form uses exactly these field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Consensus gate: a pseudo-label is accepted when agreement mIoU > alpha.
    pub alpha: f64,
    /// Threshold of the naive pseudo-labeling baseline.
    pub pl_threshold: f64,
    pub predict_threshold: f64,
    /// Style images drawn per target domain.
    pub n_style_images: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grl_lambda: f64,
    pub wct_epsilon: f64,
    pub loss_weights: LossWeights,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            pl_threshold: 0.4,
            predict_threshold: 0.5,
            n_style_images: 10,
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            grl_lambda: 0.1,
            wct_epsilon: 1e-5,
            loss_weights: LossWeights::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha must lie in (0,1], got {}", self.alpha));
        }
        if !(self.pl_threshold > 0.0 && self.pl_threshold < 1.0) {
            return fail(format!("pl_threshold must lie in (0,1), got {}", self.pl_threshold));
        }
        if !(self.predict_threshold > 0.0 && self.predict_threshold < 1.0) {
            return fail(format!("predict_threshold must lie in (0,1), got {}", self.predict_threshold));
        }
        if self.n_style_images < 1 {
            return fail("n_style_images must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.grl_lambda >= 0.0 && self.grl_lambda.is_finite()) {
            return fail(format!("grl_lambda must be >= 0, got {}", self.grl_lambda));
        }
        if !(self.wct_epsilon > 0.0) {
            return fail(format!("wct_epsilon must be > 0, got {}", self.wct_epsilon));
        }
        let w = &self.loss_weights;
        if [w.seg, w.cpl, w.adv].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return fail("loss weights must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Applies a `key=value` override. Nested fields use dots
    /// (`loss_weights.cpl=0.5`). Unknown keys are rejected.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot.get_mut(part).ok_or_else(|| Error::Unknown { kind: "config field", name: key.to_string() })?;
        }
        if slot.is_object() {
            return Err(Error::Config(format!("`{key}` is a group, set one of its fields")));
        }
        *slot = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let updated: Self =
            serde_json::from_value(root).map_err(|e| Error::Config(format!("bad value for `{key}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.alpha, 0.8);
        assert_eq!(c.pl_threshold, 0.4);
        assert_eq!(c.n_style_images, 10);
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig {
            seed: 1234,
            learning_rate: 3.3e-4,
            loss_weights: LossWeights { adv: 0.25, ..LossWeights::default() },
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        v["gamma"] = 1.into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_override("alpha=0.9").unwrap();
        c.apply_override("loss_weights.cpl = 0.5").unwrap();
        c.apply_override("epochs=3").unwrap();
        assert_eq!(c.alpha, 0.9);
        assert_eq!(c.loss_weights.cpl, 0.5);
        assert_eq!(c.epochs, 3);
        assert!(c.apply_override("beta=1").is_err());
        assert!(c.apply_override("alpha=1.5").is_err());
        assert!(c.apply_override("epochs=abc").is_err());
        assert!(c.apply_override("loss_weights=1").is_err());
        assert_eq!(c.alpha, 0.9);
    }

    #[test]
    fn invalid_values() {
        let mut c = ExperimentConfig { alpha: 0.0, ..ExperimentConfig::default() };
        assert!(c.validate().is_err());
        c.alpha = 1.0;
        c.validate().unwrap();
        c.n_style_images = 0;
        assert!(c.validate().is_err());
    }
}
