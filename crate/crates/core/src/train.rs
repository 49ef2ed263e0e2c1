//! Bookkeeping shared by the training loops.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-component loss trajectories, one value per step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: usize,
    pub losses: BTreeMap<String, Vec<f64>>,
}

impl TrainLog {
    /// Records `value` for `component`, failing on NaN or infinity.
    pub fn record(&mut self, component: &str, step: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            log::error!("{component} loss is {value} at step {step}");
            return Err(Error::Divergence { component: component.to_string(), step });
        }
        self.losses.entry(component.to_string()).or_default().push(value);
        Ok(())
    }

    pub fn series(&self, component: &str) -> &[f64] {
        self.losses.get(component).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Mean of the first / last `window` values of a component.
    pub fn head_mean(&self, component: &str, window: usize) -> f64 {
        let s = self.series(component);
        mean(&s[..window.min(s.len())])
    }

    pub fn tail_mean(&self, component: &str, window: usize) -> f64 {
        let s = self.series(component);
        mean(&s[s.len().saturating_sub(window)..])
    }

    /// Non-overlapping window means, in order.
    pub fn window_means(&self, component: &str, window: usize) -> Vec<f64> {
        self.series(component).chunks(window.max(1)).map(mean).collect()
    }

    pub fn summary(&self) -> serde_json::Value {
        let last: BTreeMap<&str, f64> =
            self.losses.iter().filter_map(|(k, v)| v.last().map(|&x| (k.as_str(), x))).collect();
        serde_json::json!({ "steps": self.steps, "final_losses": last })
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Gradient-norm guard shared by the loops: aborts on a non-finite gradient.
pub(crate) fn check_grads<T: avatarkit_tensor::Scalar>(
    grads: &avatarkit_tensor::ParamGrads<T>,
    component: &str,
    step: usize,
) -> Result<()> {
    if grads.all_finite() {
        Ok(())
    } else {
        log::error!("non-finite gradient in {component} at step {step}");
        Err(Error::Divergence { component: component.to_string(), step })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_is_divergence_naming_component() {
        let mut log = TrainLog::default();
        log.record("rec", 0, 1.0).unwrap();
        match log.record("adv", 3, f64::NAN) {
            Err(Error::Divergence { component, step }) => assert_eq!((component.as_str(), step), ("adv", 3)),
            other => panic!("{other:?}"),
        }
        assert_eq!(log.window_means("rec", 2), vec![1.0]);
    }
}
