//! Discrete-time SGD with L2 regularisation: the reference every other tier
//! is measured against.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::harness::trace::{Tier, TrainTrace};

/// Default magnitude beyond which a weight counts as diverged.
pub const DEFAULT_DIVERGENCE_GUARD: f64 = 1e6;

/// Algorithm-level knobs shared by all tiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub lambda: f64,
    /// Hold time per sample in seconds. The discrete iteration ignores it.
    pub delta_s: f64,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Hyperparams {
    /// The operating point of the single-neuron and Boston experiments.
    pub fn nominal() -> Self {
        Self {
            alpha: 1e-3,
            lambda: 0.1,
            delta_s: 1e-5,
            epochs: 200,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.delta_s > 0.0 && self.delta_s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "delta_s must be > 0, got {}",
                self.delta_s
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// `alpha / delta_s`, the continuous-time gain in 1/s.
    pub fn rate(&self) -> f64 {
        self.alpha / self.delta_s
    }
}

/// Weights of a linear regressor; `bias` is present only when the bias term
/// is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: Option<f64>,
}

impl LinearModel {
    pub fn zeros(features: usize, with_bias: bool) -> Self {
        Self {
            weights: vec![0.0; features],
            bias: with_bias.then_some(0.0),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias.unwrap_or(0.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// One SGDr update: `w - alpha * delta * x - alpha * lambda * w`.
pub fn sgdr_step(w: f64, x: f64, delta: f64, hp: &Hyperparams) -> Result<f64> {
    let next = w - hp.alpha * delta * x - hp.alpha * hp.lambda * w;
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::NumericalOverflow(format!(
            "sgdr step from w={w}, x={x}, delta={delta} is not finite"
        )))
    }
}

/// Mean squared residual of `model` over one split.
pub fn mse(model: &LinearModel, dataset: &Dataset, split: Split) -> Result<f64> {
    let idx = dataset.indices(split);
    if idx.is_empty() {
        return Err(Error::InvalidInput(format!("{split:?} split is empty")));
    }
    if model.weights.len() != dataset.features() {
        return Err(Error::DimensionMismatch {
            expected: dataset.features(),
            got: model.weights.len(),
        });
    }
    let sse: f64 = idx
        .iter()
        .map(|&i| {
            let r = model.predict(dataset.row(i)) - dataset.target(i);
            r * r
        })
        .sum();
    Ok(sse / idx.len() as f64)
}

/// Per-sample SGDr over the training split in its fixed order, recording the
/// model and losses after every epoch.
pub fn train(dataset: &Dataset, hp: &Hyperparams, model0: &LinearModel) -> Result<TrainTrace> {
    train_with_guard(dataset, hp, model0, DEFAULT_DIVERGENCE_GUARD)
}

pub fn train_with_guard(dataset: &Dataset, hp: &Hyperparams, model0: &LinearModel, guard: f64) -> Result<TrainTrace> {
    hp.validate()?;
    if dataset.train_indices().is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    if model0.weights.len() != dataset.features() {
        return Err(Error::DimensionMismatch {
            expected: dataset.features(),
            got: model0.weights.len(),
        });
    }
    let started = Instant::now();
    let mut model = model0.clone();
    let mut trace = TrainTrace::new(Tier::Ideal, dataset, *hp);
    for epoch in 1..=hp.epochs {
        for (x, y) in dataset.train_samples() {
            let delta = model.predict(x) - y;
            for (w, xi) in model.weights.iter_mut().zip(x) {
                *w = sgdr_step(*w, *xi, delta, hp)?;
            }
            if let Some(b) = model.bias.as_mut() {
                // Bias: gradient term only, no decay.
                *b -= hp.alpha * delta;
            }
        }
        check_divergence(&model, epoch, guard)?;
        trace.record_epoch(&model, dataset)?;
    }
    trace.wall_time = started.elapsed().as_secs_f64();
    Ok(trace)
}

pub(crate) fn check_divergence(model: &LinearModel, epoch: usize, guard: f64) -> Result<()> {
    let magnitude = model.weights.iter().chain(model.bias.iter()).fold(0.0f64, |a, w| {
        if w.is_nan() {
            f64::INFINITY
        } else {
            a.max(w.abs())
        }
    });
    if magnitude > guard {
        Err(Error::Divergence {
            epoch,
            magnitude,
            guard,
        })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_univariate;
    use proptest::prelude::*;

    fn hp(alpha: f64, lambda: f64, epochs: usize) -> Hyperparams {
        Hyperparams {
            alpha,
            lambda,
            delta_s: 1e-5,
            epochs,
            seed: 0,
        }
    }

    #[test]
    fn pure_decay_step() {
        let w = sgdr_step(1.0, 0.0, 0.0, &hp(1e-3, 0.1, 1)).unwrap();
        assert!((w - 0.9999).abs() < 1e-15);
    }

    #[test]
    fn pure_gradient_step() {
        for lambda in [0.0, 0.1, 7.0] {
            let w = sgdr_step(0.0, 1.0, 1.0, &hp(1e-3, lambda, 1)).unwrap();
            assert!((w + 0.001).abs() < 1e-15);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let r = sgdr_step(f64::MAX, 1.0, -f64::MAX, &hp(1.0, 0.0, 1));
        assert!(matches!(r, Err(Error::NumericalOverflow(_))));
    }

    #[test]
    fn zero_problem_gives_zero_trace() {
        let ds = Dataset::train_only("zero", vec![vec![0.0, 0.0]; 4], vec![0.0; 4]).unwrap();
        let tr = train(&ds, &hp(1e-2, 0.1, 5), &LinearModel::zeros(2, false)).unwrap();
        assert_eq!(tr.epochs, 5);
        assert!(tr.weights_per_epoch.iter().flatten().all(|w| *w == 0.0));
        assert!(tr.mse_train.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn single_sample_fixed_point() {
        let ds = Dataset::train_only("one", vec![vec![1.0]], vec![1.0]).unwrap();
        let tr = train(&ds, &hp(0.1, 0.0, 400), &LinearModel::zeros(1, false)).unwrap();
        assert!((tr.final_weights()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_cases() {
        let ds = Dataset::train_only("m", vec![vec![1.0], vec![2.0]], vec![2.0, 4.0]).unwrap();
        let perfect = LinearModel {
            weights: vec![2.0],
            bias: None,
        };
        assert_eq!(mse(&perfect, &ds, Split::Train).unwrap(), 0.0);
        let zero = LinearModel::zeros(1, false);
        assert_eq!(mse(&zero, &ds, Split::Train).unwrap(), (4.0 + 16.0) / 2.0);
        assert!(mse(&zero, &ds, Split::Test).is_err());
    }

    #[test]
    fn divergence_names_epoch() {
        let ds = Dataset::train_only("d", vec![vec![10.0]], vec![1.0]).unwrap();
        let r = train(&ds, &hp(1.0, 0.0, 50), &LinearModel::zeros(1, false));
        match r {
            Err(Error::Divergence { epoch, .. }) => assert!((1..50).contains(&epoch)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn feature_count_checked() {
        let ds = gen_univariate(1, 5).unwrap();
        assert!(train(&ds, &hp(1e-3, 0.1, 1), &LinearModel::zeros(2, false)).is_err());
    }

    #[test]
    fn bias_learns_offset() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
        let y = rows.iter().map(|r| r[0] + 0.5).collect();
        let ds = Dataset::train_only("b", rows, y).unwrap();
        let tr = train(&ds, &hp(0.05, 0.0, 3000), &LinearModel::zeros(1, true)).unwrap();
        assert!((tr.final_weights()[0] - 1.0).abs() < 1e-3);
        assert!((tr.bias_per_epoch.as_ref().unwrap().last().unwrap() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn deterministic() {
        let ds = gen_univariate(2, 30).unwrap();
        let a = train(&ds, &hp(1e-3, 0.1, 10), &LinearModel::zeros(1, false)).unwrap();
        let b = train(&ds, &hp(1e-3, 0.1, 10), &LinearModel::zeros(1, false)).unwrap();
        assert_eq!(a.weights_per_epoch, b.weights_per_epoch);
        assert_eq!(a.mse_train, b.mse_train);
    }

    proptest! {
        #[test]
        fn decay_only_is_geometric(w0 in -5.0f64..5.0, lambda in 0.001f64..1.0, n in 1usize..200) {
            let h = hp(1e-3, lambda, 1);
            let mut w = w0;
            for _ in 0..n {
                w = sgdr_step(w, 0.0, 0.0, &h).unwrap();
            }
            let expected = w0 * (1.0 - 1e-3 * lambda).powi(n as i32);
            prop_assert!((w - expected).abs() <= 1e-12 * (1.0 + w0.abs()));
        }

        #[test]
        fn repeated_sample_contracts(x in 0.1f64..3.0, y in -2.0f64..2.0, frac in 0.05f64..0.95) {
            // alpha * x^2 in (0, 2): the error w - y/x shrinks every step.
            let alpha = frac * 2.0 / (x * x);
            let h = hp(alpha, 0.0, 1);
            let target = y / x;
            let mut w = 0.0;
            let mut err = (w - target).abs();
            for _ in 0..50 {
                w = sgdr_step(w, x, w * x - y, &h).unwrap();
                let e = (w - target).abs();
                // Once converged the error is rounding noise on the scale of the target.
                prop_assert!(e <= err * (1.0 + 1e-12) + 4.0 * f64::EPSILON * target.abs().max(1.0));
                err = e;
            }
        }
    }
}
