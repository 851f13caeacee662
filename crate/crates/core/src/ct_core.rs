//! Continuous-time SGDr: the ODE `w' = -(alpha/ds) (lambda w + delta(t) x(t))`
//! driven by held samples, its exact per-interval solution, an independent
//! RK4 oracle, and the positive/negative split used by the analog datapath.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure_finite, Error, Result};
use crate::harness::trace::{Tier, TrainTrace};
use crate::ideal::{check_divergence, dot, Hyperparams, LinearModel, DEFAULT_DIVERGENCE_GUARD};
use crate::ode::{relaxation_weight, rk4_integrate, rk4_step, Rk4Workspace};
use crate::signals::{ramp_value, sample_epochs, validate_timing, StepSignal, DEFAULT_RISE_FRACTION};

/// How the error signal feeds the weight update within a hold interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaMode {
    /// `delta(t)` tracks the weights continuously.
    #[default]
    Continuous,
    /// `delta` is frozen at the start of each interval from the new sample.
    Latched,
}

/// Integration settings shared by the continuous-time tiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub rise_fraction: f64,
    pub delta_mode: DeltaMode,
    /// RK4 steps across each input ramp.
    pub ramp_substeps: usize,
    /// RK4 steps across the flat part of an interval where no closed form applies.
    pub flat_substeps: usize,
    /// RK4 steps per hold interval for the device tier.
    pub device_substeps: usize,
    pub divergence_guard: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rise_fraction: DEFAULT_RISE_FRACTION,
            delta_mode: DeltaMode::Continuous,
            ramp_substeps: 16,
            flat_substeps: 4,
            device_substeps: 256,
            divergence_guard: DEFAULT_DIVERGENCE_GUARD,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        validate_timing(1.0, self.rise_fraction)?;
        if self.ramp_substeps == 0 || self.flat_substeps == 0 || self.device_substeps == 0 {
            return Err(Error::InvalidInput("substep counts must be >= 1".into()));
        }
        if !(self.divergence_guard > 0.0) {
            return Err(Error::InvalidInput("divergence guard must be positive".into()));
        }
        Ok(())
    }
}

/// Bidirectional weights (and optional bias) at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CTState {
    pub w: Vec<f64>,
    pub bias: Option<f64>,
    pub t: f64,
}

impl CTState {
    pub fn zeros(features: usize, with_bias: bool) -> Self {
        Self {
            w: vec![0.0; features],
            bias: with_bias.then_some(0.0),
            t: 0.0,
        }
    }

    pub fn from_model(model: &LinearModel) -> Self {
        Self {
            w: model.weights.clone(),
            bias: model.bias,
            t: 0.0,
        }
    }

    pub fn model(&self) -> LinearModel {
        LinearModel {
            weights: self.w.clone(),
            bias: self.bias,
        }
    }

    fn error(&self, x: &[f64], y: f64) -> f64 {
        dot(&self.w, x) + self.bias.unwrap_or(0.0) - y
    }

    fn pack(&self) -> Vec<f64> {
        let mut v = self.w.clone();
        v.extend(self.bias);
        v
    }

    fn unpack(&mut self, v: &[f64]) {
        let d = self.w.len();
        self.w.copy_from_slice(&v[..d]);
        if let Some(b) = self.bias.as_mut() {
            *b = v[d];
        }
    }
}

/// Time derivative of a [`CTState`].
#[derive(Debug, Clone, PartialEq)]
pub struct CtDerivative {
    pub dw: Vec<f64>,
    pub dbias: Option<f64>,
}

/// A signal carried as the difference of two non-negative parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferentialValue {
    pub plus: f64,
    pub minus: f64,
}

impl DifferentialValue {
    pub fn new(plus: f64, minus: f64) -> Self {
        Self { plus, minus }
    }

    pub fn value(&self) -> f64 {
        self.plus - self.minus
    }

    /// Split `value` into two strictly positive parts with difference `value`
    /// and product `gm^2`.
    pub fn geometric_split(value: f64, gm: f64) -> Self {
        let big = 0.5 * (value.abs() + (value * value + 4.0 * gm * gm).sqrt());
        // The small root via the product constraint avoids cancellation.
        let small = gm * gm / big;
        if value >= 0.0 {
            Self::new(big, small)
        } else {
            Self::new(small, big)
        }
    }
}

/// Right-hand side of the SGDr-CT ODE at one instant.
pub fn ct_rhs(state: &CTState, x: &[f64], y: f64, hp: &Hyperparams) -> Result<CtDerivative> {
    check_features(state, x)?;
    let k = hp.rate();
    let delta = state.error(x, y);
    Ok(CtDerivative {
        dw: state
            .w
            .iter()
            .zip(x)
            .map(|(w, xi)| -k * (hp.lambda * w + delta * xi))
            .collect(),
        dbias: state.bias.map(|_| -k * delta),
    })
}

fn check_features(state: &CTState, x: &[f64]) -> Result<()> {
    if state.w.len() == x.len() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: state.w.len(),
            got: x.len(),
        })
    }
}

/// Exact solution over `dt` seconds with `x`, `y` held constant.
///
/// The interval system is affine, `z' = -k (M z - y x~)` with
/// `M = diag(lambda, .., lambda[, 0]) + x~ x~^T` and `x~ = [x; 1]` when the bias
/// is trained. `M` acts as `lambda` on the complement of `x` in feature space
/// and as a symmetric 2x2 (1x1 without bias) block on `span{x, e_bias}`, so
/// `z(dt) = z - sum_v k * phi(mu_v) (v . g) v` with `g = M z - y x~` costs O(d).
pub fn integrate_interval_exact(state: &CTState, x: &[f64], y: f64, dt: f64, hp: &Hyperparams) -> Result<CTState> {
    check_features(state, x)?;
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("interval length must be >= 0, got {dt}")));
    }
    let mut next = state.clone();
    next.t += dt;
    if dt == 0.0 {
        return Ok(next);
    }
    let k = hp.rate();
    let lambda = hp.lambda;
    let weight = |mu: f64| k * relaxation_weight(k * mu, dt);

    let delta = state.error(x, y);
    let g: Vec<f64> = state.w.iter().zip(x).map(|(w, xi)| lambda * w + delta * xi).collect();
    let norm = dot(x, x).sqrt();
    let complement = weight(lambda);

    if norm == 0.0 {
        for (w, gi) in next.w.iter_mut().zip(&g) {
            *w -= complement * gi;
        }
        if let Some(b) = next.bias.as_mut() {
            *b -= weight(1.0) * delta;
        }
        return Ok(next);
    }

    let u: Vec<f64> = x.iter().map(|xi| xi / norm).collect();
    let along = dot(&u, &g);
    // Step along u (feature direction) and along the bias axis.
    let (step_u, step_b) = match state.bias {
        None => (weight(lambda + norm * norm) * along, 0.0),
        Some(_) => {
            let a = lambda + norm * norm;
            let c = 1.0;
            let theta = 0.5 * (2.0 * norm).atan2(a - c);
            let (s, co) = theta.sin_cos();
            let mu1 = a * co * co + 2.0 * norm * s * co + c * s * s;
            let mu2 = a * s * s - 2.0 * norm * s * co + c * co * co;
            let r1 = weight(mu1) * (co * along + s * delta);
            let r2 = weight(mu2) * (-s * along + co * delta);
            (co * r1 - s * r2, s * r1 + co * r2)
        }
    };
    for ((w, gi), ui) in next.w.iter_mut().zip(&g).zip(&u) {
        *w -= complement * (gi - along * ui) + step_u * ui;
    }
    if let Some(b) = next.bias.as_mut() {
        *b -= step_b;
    }
    if next.w.iter().chain(next.bias.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow("exact interval update is not finite".into()));
    }
    Ok(next)
}

/// Per-feature input waveforms plus the target waveform.
#[derive(Debug, Clone)]
pub struct Drive {
    pub features: Vec<StepSignal>,
    pub target: StepSignal,
}

impl Drive {
    pub fn eval_into(&self, t: f64, x: &mut [f64]) -> f64 {
        for (xi, s) in x.iter_mut().zip(&self.features) {
            *xi = s.eval(t);
        }
        self.target.eval(t)
    }
}

/// Classical RK4 over `[t0, t1]` with `substeps` equal steps, evaluating the
/// rendered signals (ramps included) at every stage.
pub fn rk4_oracle(
    state: &CTState,
    drive: &Drive,
    t0: f64,
    t1: f64,
    substeps: usize,
    hp: &Hyperparams,
) -> Result<CTState> {
    if substeps == 0 {
        return Err(Error::InvalidInput("substeps must be >= 1".into()));
    }
    if drive.features.len() != state.w.len() {
        return Err(Error::DimensionMismatch {
            expected: state.w.len(),
            got: drive.features.len(),
        });
    }
    let d = state.w.len();
    let k = hp.rate();
    let lambda = hp.lambda;
    let mut x = vec![0.0; d];
    let mut z = state.pack();
    rk4_integrate(&mut z, t0, t1, substeps, &mut |t, z: &[f64], dz: &mut [f64]| {
        let y = drive.eval_into(t, &mut x);
        let delta = dot(&z[..d], &x) + z.get(d).copied().unwrap_or(0.0) - y;
        for i in 0..d {
            dz[i] = -k * (lambda * z[i] + delta * x[i]);
        }
        if z.len() > d {
            dz[d] = -k * delta;
        }
        Ok(())
    })?;
    if let Some(t) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("rk4 oracle state reached {t} before t={t1}")));
    }
    let mut out = state.clone();
    out.unpack(&z);
    out.t = t1;
    Ok(out)
}

/// Positive and negative learning equations for one weight:
/// `w+' = -k lambda w+ + k delta- x`, `w-' = -k lambda w- + k delta+ x`.
/// Inputs must be non-negative.
pub fn split_learning_equations(
    delta: &DifferentialValue,
    x: f64,
    w: &DifferentialValue,
    hp: &Hyperparams,
) -> Result<(f64, f64)> {
    ensure_finite(x, "input")?;
    if x < 0.0 {
        return Err(Error::InvalidInput(format!(
            "split learning equations need a non-negative input, got {x}"
        )));
    }
    let k = hp.rate();
    Ok((
        -k * hp.lambda * w.plus + k * delta.minus * x,
        -k * hp.lambda * w.minus + k * delta.plus * x,
    ))
}

/// Normalised positive/negative weight pairs of a single-layer model.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub t: f64,
}

impl SplitState {
    pub fn balanced(features: usize, level: f64) -> Self {
        Self {
            plus: vec![level; features],
            minus: vec![level; features],
            t: 0.0,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.plus.iter().zip(&self.minus).map(|(p, m)| p - m).collect()
    }
}

/// RK4 over a constant-input interval of the split system. The error is
/// recomputed from `plus - minus` at every stage and split with geometric
/// mean `gm`.
pub fn integrate_split_interval(
    state: &SplitState,
    x: &[f64],
    y: f64,
    dt: f64,
    substeps: usize,
    gm: f64,
    hp: &Hyperparams,
) -> Result<SplitState> {
    let d = state.plus.len();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if substeps == 0 {
        return Err(Error::InvalidInput("substeps must be >= 1".into()));
    }
    let mut z: Vec<f64> = state.plus.iter().chain(&state.minus).copied().collect();
    rk4_integrate(&mut z, 0.0, dt, substeps, &mut |_, z: &[f64], dz: &mut [f64]| {
        let delta: f64 = (0..d).map(|i| (z[i] - z[d + i]) * x[i]).sum::<f64>() - y;
        let split = DifferentialValue::geometric_split(delta, gm);
        for i in 0..d {
            let (p, m) = split_learning_equations(&split, x[i], &DifferentialValue::new(z[i], z[d + i]), hp)?;
            dz[i] = p;
            dz[d + i] = m;
        }
        Ok(())
    })?;
    Ok(SplitState {
        plus: z[..d].to_vec(),
        minus: z[d..].to_vec(),
        t: state.t + dt,
    })
}

/// Weights recorded at every hold-interval boundary of a CT simulation.
#[derive(Debug, Clone)]
pub struct CtTrajectory {
    delta_s: f64,
    boundaries: Vec<Vec<f64>>,
}

impl CtTrajectory {
    pub fn horizon(&self) -> f64 {
        (self.boundaries.len() - 1) as f64 * self.delta_s
    }

    pub fn intervals(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Packed state (weights, then bias) after `k` intervals.
    pub fn at_boundary(&self, k: usize) -> &[f64] {
        &self.boundaries[k]
    }

    /// Component `index` of the packed state at time `t`: exact on interval
    /// boundaries, linear between them.
    pub fn eval(&self, index: usize, t: f64) -> Result<f64> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange { t, horizon });
        }
        let pos = t / self.delta_s;
        let nearest = pos.round();
        let last = self.intervals();
        if (pos - nearest).abs() < 1e-9 {
            return Ok(self.boundaries[(nearest as usize).min(last)][index]);
        }
        let k = (pos.floor() as usize).min(last - 1);
        let frac = pos - k as f64;
        let (a, b) = (self.boundaries[k][index], self.boundaries[k + 1][index]);
        Ok(a + (b - a) * frac)
    }
}

/// One hold interval of the training schedule.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Interval {
    pub epoch: usize,
    /// Training-order position within the epoch.
    pub position: usize,
    pub sample: usize,
    /// Sample held in the previous interval; `None` only for the very first.
    pub previous: Option<usize>,
}

/// Walk the training schedule: the training split repeated `epochs` times.
pub(crate) fn schedule(dataset: &Dataset, epochs: usize) -> impl Iterator<Item = Interval> + '_ {
    let order = dataset.train_indices();
    let m = order.len();
    (0..epochs * m).map(move |k| Interval {
        epoch: k / m + 1,
        position: k % m,
        sample: order[k % m],
        previous: (k > 0).then(|| order[(k - 1) % m]),
    })
}

/// Simulate the SGDr-CT ODE over the training schedule and sample it at
/// epoch boundaries.
pub fn train_ct(
    dataset: &Dataset,
    hp: &Hyperparams,
    model0: &LinearModel,
    opts: &SolverOptions,
) -> Result<(TrainTrace, CtTrajectory)> {
    hp.validate()?;
    opts.validate()?;
    let d = dataset.features();
    if model0.weights.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: model0.weights.len(),
        });
    }
    let m = dataset.train_indices().len();
    if m == 0 {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let started = Instant::now();
    let k = hp.rate();
    let lambda = hp.lambda;
    let rise = opts.rise_fraction * hp.delta_s;
    let flat = hp.delta_s - rise;

    let mut state = CTState::from_model(model0);
    let mut boundaries = Vec::with_capacity(hp.epochs * m + 1);
    boundaries.push(state.pack());
    let mut ws = Rk4Workspace::new(d + 1);
    let mut xbuf = vec![0.0; d];

    for iv in schedule(dataset, hp.epochs) {
        let x = dataset.row(iv.sample);
        let y = dataset.target(iv.sample);
        let t_start = state.t;
        let latched = match opts.delta_mode {
            DeltaMode::Continuous => None,
            DeltaMode::Latched => Some(state.error(x, y)),
        };
        let ramp_prev = iv.previous.filter(|_| rise > 0.0);
        if let Some(p) = ramp_prev {
            let (xp, yp) = (dataset.row(p), dataset.target(p));
            let mut z = state.pack();
            let h = rise / opts.ramp_substeps as f64;
            let mut f = |tau: f64, z: &[f64], dz: &mut [f64]| {
                for i in 0..d {
                    xbuf[i] = ramp_value(Some(xp[i]), x[i], tau, rise);
                }
                let yt = ramp_value(Some(yp), y, tau, rise);
                let delta = latched.unwrap_or_else(|| dot(&z[..d], &xbuf) + z.get(d).copied().unwrap_or(0.0) - yt);
                for i in 0..d {
                    dz[i] = -k * (lambda * z[i] + delta * xbuf[i]);
                }
                if z.len() > d {
                    dz[d] = -k * delta;
                }
                Ok(())
            };
            for s in 0..opts.ramp_substeps {
                rk4_step(&mut z, s as f64 * h, h, &mut ws, &mut f)?;
            }
            state.unpack(&z);
        }
        let hold = if ramp_prev.is_some() { flat } else { hp.delta_s };
        state = match latched {
            None => integrate_interval_exact(&state, x, y, hold, hp)?,
            Some(delta) => latched_hold(&state, x, delta, hold, hp),
        };
        state.t = t_start + hp.delta_s;
        boundaries.push(state.pack());
        if iv.position + 1 == m {
            check_divergence(&state.model(), iv.epoch, opts.divergence_guard)?;
        }
    }

    let trajectory = CtTrajectory {
        delta_s: hp.delta_s,
        boundaries,
    };
    let horizon = trajectory.horizon();
    let columns: Vec<Vec<f64>> = (0..d + usize::from(model0.bias.is_some()))
        .map(|i| sample_epochs(|t| trajectory.eval(i, t), m, hp.delta_s, hp.epochs, horizon))
        .collect::<Result<_>>()?;
    let mut trace = TrainTrace::new(Tier::Ct, dataset, *hp);
    trace.solver = Some(*opts);
    for e in 0..hp.epochs {
        let model = LinearModel {
            weights: (0..d).map(|i| columns[i][e]).collect(),
            bias: model0.bias.map(|_| columns[d][e]),
        };
        trace.record_epoch(&model, dataset)?;
    }
    trace.wall_time = started.elapsed().as_secs_f64();
    Ok((trace, trajectory))
}

/// Flat part of an interval with `delta` frozen: each weight relaxes
/// independently toward `-delta x / lambda`.
fn latched_hold(state: &CTState, x: &[f64], delta: f64, dt: f64, hp: &Hyperparams) -> CTState {
    let k = hp.rate();
    let weight = k * relaxation_weight(k * hp.lambda, dt);
    let mut next = state.clone();
    for (w, xi) in next.w.iter_mut().zip(x) {
        *w -= weight * (hp.lambda * *w + delta * xi);
    }
    if let Some(b) = next.bias.as_mut() {
        *b -= k * delta * dt;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::render;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hp(alpha: f64, lambda: f64, delta_s: f64) -> Hyperparams {
        Hyperparams {
            alpha,
            lambda,
            delta_s,
            epochs: 1,
            seed: 0,
        }
    }

    fn constant_drive(x: &[f64], y: f64, horizon: f64) -> Drive {
        Drive {
            features: x.iter().map(|v| render(&[*v], horizon, 0.0).unwrap()).collect(),
            target: render(&[y], horizon, 0.0).unwrap(),
        }
    }

    #[test]
    fn rhs_zero_at_rest() {
        let s = CTState::zeros(1, false);
        let d = ct_rhs(&s, &[0.0], 0.0, &hp(1e-3, 0.1, 1e-5)).unwrap();
        assert_eq!(d.dw, vec![0.0]);
    }

    #[test]
    fn rhs_decay_only() {
        let s = CTState {
            w: vec![1.0],
            bias: None,
            t: 0.0,
        };
        let d = ct_rhs(&s, &[0.0], 0.0, &hp(1e-3, 0.1, 1e-5)).unwrap();
        assert!((d.dw[0] + 10.0).abs() < 1e-9);
    }

    #[test]
    fn rhs_vanishes_at_algebraic_fixed_point() {
        let (x, y, lambda) = (0.7, -0.4, 0.1);
        let w_star = x * y / (lambda + x * x);
        let s = CTState {
            w: vec![w_star],
            bias: None,
            t: 0.0,
        };
        let d = ct_rhs(&s, &[x], y, &hp(1e-3, lambda, 1e-5)).unwrap();
        assert!(d.dw[0].abs() < 1e-12);
        // Long horizon: hundreds of time constants.
        let end = integrate_interval_exact(&CTState::zeros(1, false), &[x], y, 5.0, &hp(1e-3, lambda, 1e-5)).unwrap();
        assert!((end.w[0] - w_star).abs() < 1e-12);
        let rk = rk4_oracle(
            &CTState::zeros(1, false),
            &constant_drive(&[x], y, 5.0),
            0.0,
            5.0,
            20_000,
            &hp(1e-3, lambda, 1e-5),
        )
        .unwrap();
        assert!((rk.w[0] - w_star).abs() < 1e-9);
    }

    #[test]
    fn exact_zero_dt_is_identity() {
        let s = CTState {
            w: vec![0.3, -0.2],
            bias: Some(0.1),
            t: 1.0,
        };
        let out = integrate_interval_exact(&s, &[1.0, 2.0], 0.5, 0.0, &hp(1e-3, 0.1, 1e-5)).unwrap();
        assert_eq!(out, s);
        assert!(integrate_interval_exact(&s, &[1.0, 2.0], 0.5, -1.0, &hp(1e-3, 0.1, 1e-5)).is_err());
    }

    #[test]
    fn exact_decay_only() {
        let s = CTState {
            w: vec![0.8],
            bias: None,
            t: 0.0,
        };
        let h = hp(1e-3, 0.1, 1e-5);
        let out = integrate_interval_exact(&s, &[0.0], 0.0, 3e-3, &h).unwrap();
        assert!((out.w[0] - 0.8 * (-(100.0 * 0.1 * 3e-3f64)).exp()).abs() < 1e-15);
    }

    #[test]
    fn exact_matches_rk4_on_random_intervals() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let d = rng.random_range(1..6);
            let bias = rng.random_bool(0.5);
            let h = hp(rng.random_range(1e-3..0.5), rng.random_range(0.0..0.5), 1e-5);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(-1.0..1.0);
            let s = CTState {
                w: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bias: bias.then(|| rng.random_range(-1.0..1.0)),
                t: 0.0,
            };
            let exact = integrate_interval_exact(&s, &x, y, h.delta_s, &h).unwrap();
            let rk = rk4_oracle(&s, &constant_drive(&x, y, h.delta_s), 0.0, h.delta_s, 1000, &h).unwrap();
            for (a, b) in exact.w.iter().chain(&exact.bias).zip(rk.w.iter().chain(&rk.bias)) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rk4_zero_rhs_is_identity() {
        let s = CTState::zeros(2, true);
        let out = rk4_oracle(
            &s,
            &constant_drive(&[0.0, 0.0], 0.0, 1.0),
            0.0,
            1.0,
            7,
            &hp(1e-2, 0.3, 1e-5),
        )
        .unwrap();
        assert_eq!(out.w, s.w);
        assert_eq!(out.bias, s.bias);
        assert_eq!(out.t, 1.0);
    }

    #[test]
    fn rk4_fourth_order() {
        let h = hp(1e-3, 0.1, 1e-5);
        let (x, y) = (1.3, 0.6);
        let s = CTState {
            w: vec![1.0],
            bias: None,
            t: 0.0,
        };
        let horizon = 0.05;
        let drive = constant_drive(&[x], y, horizon);
        let exact = integrate_interval_exact(&s, &[x], y, horizon, &h).unwrap().w[0];
        let errs: Vec<f64> = [4, 8, 16]
            .iter()
            .map(|n| (rk4_oracle(&s, &drive, 0.0, horizon, *n, &h).unwrap().w[0] - exact).abs())
            .collect();
        assert!(errs[0] / errs[1] > 15.0 && errs[1] / errs[2] > 15.0, "{errs:?}");
    }

    #[test]
    fn geometric_split_identities() {
        let s = DifferentialValue::geometric_split(0.0, 2.0);
        assert_eq!((s.plus, s.minus), (2.0, 2.0));
        let s = DifferentialValue::geometric_split(1.5, 1.0);
        assert!((s.plus - 2.0).abs() < 1e-15 && (s.minus - 0.5).abs() < 1e-15);
    }

    #[test]
    fn split_cancellation_and_recovery() {
        let h = hp(1e-3, 0.1, 1e-5);
        let w = DifferentialValue::new(3.0, 1.0);
        let same = DifferentialValue::new(2.0, 2.0);
        let (p, m) = split_learning_equations(&same, 0.7, &w, &h).unwrap();
        assert!(((p - m) + h.rate() * h.lambda * w.value()).abs() < 1e-9);
        let delta = DifferentialValue::new(1.7, 0.4);
        let (p, m) = split_learning_equations(&delta, 0.7, &w, &h).unwrap();
        let s = CTState {
            w: vec![w.value()],
            bias: None,
            t: 0.0,
        };
        // y chosen so that delta(t) = w x - y = 1.3
        let y = w.value() * 0.7 - delta.value();
        let full = ct_rhs(&s, &[0.7], y, &h).unwrap();
        assert!(((p - m) - full.dw[0]).abs() < 1e-9);
        assert!(split_learning_equations(&delta, -0.1, &w, &h).is_err());
    }

    #[test]
    fn split_pair_tracks_bidirectional_solution() {
        let h = hp(1e-3, 0.1, 1e-5);
        let x = [0.4, 0.9, 0.2];
        let y = 0.35;
        let mut split = SplitState::balanced(3, 0.01);
        let mut full = CTState::zeros(3, false);
        for _ in 0..300 {
            split = integrate_split_interval(&split, &x, y, h.delta_s, 2, 1.0, &h).unwrap();
            full = integrate_interval_exact(&full, &x, y, h.delta_s, &h).unwrap();
        }
        for (a, b) in split.weights().iter().zip(&full.w) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn split_steady_state_positive_and_bounded() {
        // Constant inputs, long horizon: both halves settle to finite
        // positive values no larger than max(delta-/+ x) / lambda.
        let h = hp(1e-3, 0.1, 1e-5);
        let x = [0.6];
        let y = -0.5;
        let mut s = SplitState::balanced(1, 0.01);
        let mut floor_plus = 0.01f64;
        let mut floor_minus = 0.01f64;
        let decay = (-h.rate() * h.lambda * 1e-3f64).exp();
        // Common mode decays at k lambda = 10/s; 3 s leaves e^-30.
        for _ in 0..3000 {
            s = integrate_split_interval(&s, &x, y, 1e-3, 8, 1.0, &h).unwrap();
            floor_plus *= decay;
            floor_minus *= decay;
            assert!(s.plus[0] >= floor_plus && s.minus[0] >= floor_minus);
        }
        let w = s.weights()[0];
        let delta = w * x[0] - y;
        let split = DifferentialValue::geometric_split(delta, 1.0);
        let plus_star = split.minus * x[0] / h.lambda;
        let minus_star = split.plus * x[0] / h.lambda;
        assert!((s.plus[0] - plus_star).abs() < 1e-6 * plus_star);
        assert!((s.minus[0] - minus_star).abs() < 1e-6 * minus_star);
        let bound = split.plus.max(split.minus) * x[0] / h.lambda;
        assert!(s.plus[0] <= bound && s.minus[0] <= bound);
        // The difference converges to the bidirectional fixed point.
        assert!((w - x[0] * y / (h.lambda + x[0] * x[0])).abs() < 1e-6);
    }

    #[test]
    fn trajectory_out_of_range() {
        let ds = Dataset::train_only("t", vec![vec![0.5], vec![0.2]], vec![0.1, 0.3]).unwrap();
        let mut h = hp(1e-3, 0.1, 1e-5);
        h.epochs = 2;
        let (_, traj) = train_ct(&ds, &h, &LinearModel::zeros(1, false), &SolverOptions::default()).unwrap();
        assert_eq!(traj.intervals(), 4);
        assert!(traj.eval(0, 4e-5).is_ok());
        assert!(matches!(traj.eval(0, 5e-5), Err(Error::OutOfRange { .. })));
        assert!(traj.eval(0, -1e-6).is_err());
    }

    #[test]
    fn ct_without_ramp_matches_exact_chain() {
        let ds = Dataset::train_only("c", vec![vec![0.5, 0.1], vec![-0.3, 0.8]], vec![0.2, -0.4]).unwrap();
        let mut h = hp(1e-2, 0.1, 1e-5);
        h.epochs = 3;
        let opts = SolverOptions {
            rise_fraction: 0.0,
            ..Default::default()
        };
        let (trace, _) = train_ct(&ds, &h, &LinearModel::zeros(2, false), &opts).unwrap();
        let mut s = CTState::zeros(2, false);
        for _ in 0..3 {
            for (x, y) in ds.train_samples() {
                s = integrate_interval_exact(&s, x, y, h.delta_s, &h).unwrap();
            }
        }
        assert_eq!(trace.final_weights(), s.w.as_slice());
    }

    #[test]
    fn ct_with_ramp_matches_rk4_oracle() {
        let ds = Dataset::train_only("r", vec![vec![0.5], vec![-0.3], vec![0.9]], vec![0.2, -0.4, 0.6]).unwrap();
        let mut h = hp(5e-2, 0.1, 1e-5);
        h.epochs = 2;
        let opts = SolverOptions::default();
        let (trace, _) = train_ct(&ds, &h, &LinearModel::zeros(1, true), &opts).unwrap();
        let pairs: Vec<(f64, f64)> = ds.train_samples().map(|(x, y)| (x[0], y)).collect();
        let samples: Vec<f64> = pairs.iter().cycle().take(6).map(|p| p.0).collect();
        let targets: Vec<f64> = pairs.iter().cycle().take(6).map(|p| p.1).collect();
        let drive = Drive {
            features: vec![render(&samples, h.delta_s, opts.rise_fraction).unwrap()],
            target: render(&targets, h.delta_s, opts.rise_fraction).unwrap(),
        };
        // Step boundaries aligned with ramp edges keep RK4 at full order.
        let mut s = CTState::zeros(1, true);
        let rise = opts.rise_fraction * h.delta_s;
        for n in 0..6 {
            let t0 = n as f64 * h.delta_s;
            let t_flat = if n == 0 { t0 } else { t0 + rise };
            if n > 0 {
                s = rk4_oracle(&s, &drive, t0, t_flat, 200, &h).unwrap();
            }
            s = rk4_oracle(&s, &drive, t_flat, t0 + h.delta_s, 2000, &h).unwrap();
        }
        assert!((trace.final_weights()[0] - s.w[0]).abs() < 1e-12);
        assert!((trace.final_bias().unwrap() - s.bias.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn latched_mode_is_close_to_continuous() {
        let ds = crate::data::gen_univariate(3, 20).unwrap();
        let mut h = Hyperparams::nominal();
        h.epochs = 20;
        let cont = train_ct(&ds, &h, &LinearModel::zeros(1, false), &SolverOptions::default())
            .unwrap()
            .0;
        let lat = train_ct(
            &ds,
            &h,
            &LinearModel::zeros(1, false),
            &SolverOptions {
                delta_mode: DeltaMode::Latched,
                ..Default::default()
            },
        )
        .unwrap()
        .0;
        let (a, b) = (cont.final_weights()[0], lat.final_weights()[0]);
        assert!(a != b && (a - b).abs() < 1e-3 * a.abs().max(1e-3));
    }

    proptest! {
        #[test]
        fn geometric_split_positive_with_exact_product(v in -1e6f64..1e6, gm in 1e-3f64..1e3) {
            let s = DifferentialValue::geometric_split(v, gm);
            prop_assert!(s.plus > 0.0 && s.minus > 0.0);
            prop_assert!((s.value() - v).abs() <= 4.0 * f64::EPSILON * (v.abs() + gm));
            prop_assert!((s.plus * s.minus - gm * gm).abs() <= 4.0 * f64::EPSILON * gm * gm);
        }
    }
}
