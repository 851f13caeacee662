//! Discrete sample sequences as continuous hold waveforms, and point sampling
//! of continuous trajectories at epoch boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Default DAC rise time as a fraction of the hold time.
pub const DEFAULT_RISE_FRACTION: f64 = 0.005;

/// A sample sequence held for `delta_s` seconds each, with a linear ramp of
/// `rise_fraction * delta_s` at the start of every interval after the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSignal {
    samples: Vec<f64>,
    delta_s: f64,
    rise_fraction: f64,
}

/// Build a [`StepSignal`] from `samples`.
pub fn render(samples: &[f64], delta_s: f64, rise_fraction: f64) -> Result<StepSignal> {
    StepSignal::new(samples.to_vec(), delta_s, rise_fraction)
}

impl StepSignal {
    pub fn new(samples: Vec<f64>, delta_s: f64, rise_fraction: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty sample sequence".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            ensure_finite(*s, &format!("sample {i}"))?;
        }
        validate_timing(delta_s, rise_fraction)?;
        Ok(Self {
            samples,
            delta_s,
            rise_fraction,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn delta_s(&self) -> f64 {
        self.delta_s
    }

    pub fn rise_fraction(&self) -> f64 {
        self.rise_fraction
    }

    /// End of the last hold interval.
    pub fn horizon(&self) -> f64 {
        self.samples.len() as f64 * self.delta_s
    }

    /// Value at time `t`. Before 0 the first sample is held; past the horizon
    /// the last one is.
    pub fn eval(&self, t: f64) -> f64 {
        let last = self.samples.len() - 1;
        if t <= 0.0 {
            return self.samples[0];
        }
        let n = ((t / self.delta_s).floor() as usize).min(last);
        let local = t - n as f64 * self.delta_s;
        ramp_value(
            if n == 0 { None } else { Some(self.samples[n - 1]) },
            self.samples[n],
            local,
            self.rise_fraction * self.delta_s,
        )
    }

    /// Sum of absolute jumps between consecutive samples.
    pub fn total_variation(&self) -> f64 {
        self.samples.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// Value inside one hold interval, `local` seconds after its start.
pub(crate) fn ramp_value(prev: Option<f64>, current: f64, local: f64, rise_time: f64) -> f64 {
    match prev {
        Some(p) if rise_time > 0.0 && local < rise_time => p + (current - p) * (local.max(0.0) / rise_time),
        _ => current,
    }
}

pub(crate) fn validate_timing(delta_s: f64, rise_fraction: f64) -> Result<()> {
    if !(delta_s > 0.0) || !delta_s.is_finite() {
        return Err(Error::InvalidInput(format!(
            "hold time must be positive, got {delta_s}"
        )));
    }
    if !(0.0..1.0).contains(&rise_fraction) {
        return Err(Error::InvalidInput(format!(
            "rise fraction must lie in [0, 1), got {rise_fraction}"
        )));
    }
    Ok(())
}

/// Point-sample `trajectory` at the end of each epoch: `t = e * m * delta_s`
/// for `e = 1..=epochs`.
pub fn sample_epochs<F>(trajectory: F, m: usize, delta_s: f64, epochs: usize, horizon: f64) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<f64>,
{
    if m == 0 || epochs == 0 {
        return Err(Error::InvalidInput(
            "samples per epoch and epoch count must be at least 1".into(),
        ));
    }
    validate_timing(delta_s, 0.0)?;
    (1..=epochs)
        .map(|e| {
            let t = (e * m) as f64 * delta_s;
            if t > horizon * (1.0 + 1e-12) {
                return Err(Error::OutOfRange { t, horizon });
            }
            trajectory(t)
        })
        .collect()
}
