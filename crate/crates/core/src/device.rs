//! Device-level Bernoulli cell: a capacitor discharged by a subthreshold
//! transistor whose gate carries the log of the input product.
//!
//! The state is the capacitor voltage. With
//! `V_G = nVt ln(Idelta / I_S) + nVt ln(Ix / I_S)` and
//! `I_D = I_D0 exp((V_G - V_C) / nVt)`, the capacitor obeys
//! `C dV_C/dt = I_D - u`, and the translinear loop reads the cell current as
//! `Iw = S Ix Idelta Iq / (I_D Iu)`. That output depends on `V_C` alone.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::circuit::{map_hyperparams, CircuitParams, NodeOptions, SubthresholdMonitor};
use crate::ct_core::{schedule, DeltaMode, DifferentialValue, SolverOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::trace::{CircuitSnapshot, Tier, TrainTrace};
use crate::ideal::{check_divergence, Hyperparams, LinearModel};
use crate::ode::{rk4_step, Rk4Workspace};
use crate::signals::ramp_value;

/// Transistor constants. The output current does not depend on them once the
/// initial current is fixed; the defaults are placeholders, not a process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceParams {
    pub i_d0: f64,
    pub i_s: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self { i_d0: 1e-9, i_s: 1e-9 }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        if self.i_d0 > 0.0 && self.i_s > 0.0 && self.i_d0.is_finite() && self.i_s.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "device constants must be positive: {self:?}"
            )))
        }
    }
}

/// Snapshot of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliCellState {
    pub v_c: f64,
    pub v_g: f64,
    pub i_d: f64,
    pub t: f64,
}

fn require_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} must be positive, got {v}")))
    }
}

/// Gate voltage set by the two input currents.
pub fn gate_voltage(i_delta_opp: f64, ix: f64, dp: &DeviceParams, cp: &CircuitParams) -> Result<f64> {
    require_positive("Idelta", i_delta_opp)?;
    require_positive("Ix", ix)?;
    Ok(cp.n_vt * (i_delta_opp / dp.i_s).ln() + cp.n_vt * (ix / dp.i_s).ln())
}

/// Exponential subthreshold law.
pub fn drain_current(v_g: f64, v_c: f64, dp: &DeviceParams, cp: &CircuitParams) -> f64 {
    dp.i_d0 * ((v_g - v_c) / cp.n_vt).exp()
}

/// Build the full cell state at capacitor voltage `v_c`.
pub fn cell_state(
    v_c: f64,
    t: f64,
    i_delta_opp: f64,
    ix: f64,
    dp: &DeviceParams,
    cp: &CircuitParams,
) -> Result<BernoulliCellState> {
    let v_g = gate_voltage(i_delta_opp, ix, dp, cp)?;
    Ok(BernoulliCellState {
        v_c,
        v_g,
        i_d: drain_current(v_g, v_c, dp, cp),
        t,
    })
}

/// `dV_C/dt` for the given inputs.
pub fn device_rhs(
    state: &BernoulliCellState,
    i_delta_opp: f64,
    ix: f64,
    dp: &DeviceParams,
    cp: &CircuitParams,
) -> Result<f64> {
    let v_g = gate_voltage(i_delta_opp, ix, dp, cp)?;
    let i_d = drain_current(v_g, state.v_c, dp, cp);
    Ok((i_d - cp.u) / cp.c)
}

/// Output current of the translinear loop, `S Ix Idelta Iq / (I_D Iu)`.
pub fn translinear_output(state: &BernoulliCellState, i_delta_opp: f64, ix: f64, cp: &CircuitParams) -> f64 {
    cp.stack_ratio() * ix * i_delta_opp * cp.i_q / (state.i_d * cp.i_u)
}

/// The same output expressed through `V_C` alone.
pub fn cell_current_from_vc(v_c: f64, dp: &DeviceParams, cp: &CircuitParams) -> f64 {
    output_scale(dp, cp) * (v_c / cp.n_vt).exp()
}

fn output_scale(dp: &DeviceParams, cp: &CircuitParams) -> f64 {
    cp.stack_ratio() * cp.i_q * dp.i_s * dp.i_s / (dp.i_d0 * cp.i_u)
}

/// Capacitor voltage at which the cell outputs `iw`.
pub fn initial_vc(iw: f64, dp: &DeviceParams, cp: &CircuitParams) -> Result<f64> {
    require_positive("initial cell current", iw)?;
    Ok(cp.n_vt * (iw / output_scale(dp, cp)).ln())
}

/// Point of a constant-input run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevicePoint {
    pub t: f64,
    pub v_c: f64,
    pub i_d: f64,
    pub i_w: f64,
}

/// One cell driven by constant inputs, integrated with RK4 in `V_C`.
#[derive(Debug, Clone)]
pub struct ConstantInputCell {
    pub i_delta_opp: f64,
    pub ix: f64,
    pub dp: DeviceParams,
    pub cp: CircuitParams,
    v_g: f64,
    v_c: f64,
    t: f64,
}

impl ConstantInputCell {
    pub fn new(iw0: f64, i_delta_opp: f64, ix: f64, dp: DeviceParams, cp: CircuitParams) -> Result<Self> {
        dp.validate()?;
        cp.validate()?;
        let v_g = gate_voltage(i_delta_opp, ix, &dp, &cp)?;
        let v_c = initial_vc(iw0, &dp, &cp)?;
        Ok(Self {
            i_delta_opp,
            ix,
            dp,
            cp,
            v_g,
            v_c,
            t: 0.0,
        })
    }

    pub fn point(&self) -> DevicePoint {
        DevicePoint {
            t: self.t,
            v_c: self.v_c,
            i_d: drain_current(self.v_g, self.v_c, &self.dp, &self.cp),
            i_w: cell_current_from_vc(self.v_c, &self.dp, &self.cp),
        }
    }

    /// Advance `steps` RK4 steps of size `dt`, returning every point including
    /// the starting one.
    pub fn run(&mut self, dt: f64, steps: usize) -> Result<Vec<DevicePoint>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("step must be positive, got {dt}")));
        }
        let (v_g, dp, cp) = (self.v_g, self.dp, self.cp.clone());
        let mut out = Vec::with_capacity(steps + 1);
        out.push(self.point());
        let mut ws = Rk4Workspace::new(1);
        let mut y = [self.v_c];
        let mut f = |_: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = (drain_current(v_g, y[0], &dp, &cp) - cp.u) / cp.c;
            Ok(())
        };
        for k in 0..steps {
            rk4_step(&mut y, self.t + k as f64 * dt, dt, &mut ws, &mut f)?;
            if !y[0].is_finite() {
                return Err(Error::NonFinite(format!("capacitor voltage at t={}", self.t)));
            }
            self.v_c = y[0];
            let t = self.t + (k + 1) as f64 * dt;
            let mut p = self.point();
            p.t = t;
            out.push(p);
        }
        self.t += steps as f64 * dt;
        Ok(out)
    }
}

/// Largest normalised residuals of the Bernoulli equation for `I_D`, its
/// linearised form in `T = 1/I_D`, and the `omega = T Idelta Ix` equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliResiduals {
    pub bernoulli: f64,
    pub linearised: f64,
    pub omega: f64,
}

/// Residuals along a uniformly spaced constant-input trajectory (so
/// `dV_G/dt = 0`). Derivatives come from five-point central differences;
/// each residual is divided by the largest magnitude among its terms.
pub fn bernoulli_residuals(
    points: &[DevicePoint],
    i_delta_opp: f64,
    ix: f64,
    cp: &CircuitParams,
) -> Result<BernoulliResiduals> {
    if points.len() < 5 {
        return Err(Error::InvalidInput("need at least five points".into()));
    }
    let h = points[1].t - points[0].t;
    let ncv = cp.n_vt * cp.c;
    let u = cp.u;
    let drive = i_delta_opp * ix;
    let fd = |f: &dyn Fn(&DevicePoint) -> f64, k: usize| {
        (f(&points[k - 2]) - 8.0 * f(&points[k - 1]) + 8.0 * f(&points[k + 1]) - f(&points[k + 2])) / (12.0 * h)
    };
    let norm = |terms: &[f64]| {
        let scale = terms.iter().fold(0.0f64, |a, t| a.max(t.abs()));
        terms.iter().sum::<f64>().abs() / scale
    };
    let mut r = BernoulliResiduals {
        bernoulli: 0.0,
        linearised: 0.0,
        omega: 0.0,
    };
    for k in 2..points.len() - 2 {
        let p = &points[k];
        let did = fd(&|q| q.i_d, k);
        // nCVt I_D' - u I_D + I_D^2 = 0
        r.bernoulli = r.bernoulli.max(norm(&[ncv * did, -u * p.i_d, p.i_d * p.i_d]));
        let tt = 1.0 / p.i_d;
        let dtt = fd(&|q| 1.0 / q.i_d, k);
        // nCVt T' + u T - 1 = 0
        r.linearised = r.linearised.max(norm(&[ncv * dtt, u * tt, -1.0]));
        let omega = tt * drive;
        let domega = fd(&|q| drive / q.i_d, k);
        // nCVt omega' + u omega - Idelta Ix = 0
        r.omega = r.omega.max(norm(&[ncv * domega, u * omega, -drive]));
    }
    Ok(r)
}

/// Train a single-layer model with every weight held by two Bernoulli cells.
/// Inputs are steered as in the circuit tier. No bias integrator exists at
/// this level.
#[allow(clippy::too_many_arguments)]
pub fn train_device(
    dataset: &Dataset,
    hp: &Hyperparams,
    cp: &CircuitParams,
    dp: &DeviceParams,
    model0: &LinearModel,
    solver: &SolverOptions,
    node: &NodeOptions,
) -> Result<TrainTrace> {
    hp.validate()?;
    solver.validate()?;
    node.validate()?;
    dp.validate()?;
    let (alpha, lambda) = map_hyperparams(hp.delta_s, cp)?;
    if model0.bias.is_some() {
        return Err(Error::InvalidInput("the device tier has no bias integrator".into()));
    }
    if solver.delta_mode == DeltaMode::Latched {
        return Err(Error::InvalidInput(
            "the device tier supports continuous delta only".into(),
        ));
    }
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
    let init = node.init_fraction * cp.i_u;
    let i_gm = node.gm(cp);
    let mut z = Vec::with_capacity(2 * d);
    for w in &model0.weights {
        z.push(initial_vc(init + w.max(0.0) * cp.i_u, dp, cp)?);
    }
    for w in &model0.weights {
        z.push(initial_vc(init + (-w).max(0.0) * cp.i_u, dp, cp)?);
    }
    let scale = output_scale(dp, cp);
    let n_vt = cp.n_vt;
    let iw = move |v: f64| scale * (v / n_vt).exp();
    // I_D = I_D0 (Idelta / I_S)(Ix / I_S) exp(-V_C / nVt): the product form of
    // the gate-voltage law, finite when an input ramps through zero.
    let k_d = dp.i_d0 / (dp.i_s * dp.i_s);
    let weights = |z: &[f64]| -> Vec<f64> { (0..d).map(|i| (iw(z[i]) - iw(z[d + i])) / cp.i_u).collect() };

    let mut monitor = SubthresholdMonitor::new(node.window, node.strict_window)?;
    let mut ws = Rk4Workspace::new(2 * d);
    let rise = solver.rise_fraction * hp.delta_s;
    let mut trace = TrainTrace::new(Tier::Device, dataset, *hp);
    let mut xbuf = vec![0.0; d];
    let mut t = 0.0;
    for iv in schedule(dataset, hp.epochs) {
        let x = dataset.row(iv.sample);
        let y = dataset.target(iv.sample);
        let prev = iv.previous.map(|p| (dataset.row(p), dataset.target(p)));
        let mut f = |tau: f64, z: &[f64], dz: &mut [f64]| {
            let yt = match prev {
                Some((xp, yp)) => {
                    for i in 0..d {
                        xbuf[i] = ramp_value(Some(xp[i]), x[i], tau, rise);
                    }
                    ramp_value(Some(yp), y, tau, rise)
                }
                None => {
                    xbuf.copy_from_slice(x);
                    y
                }
            };
            let mut delta = -yt;
            for i in 0..d {
                delta += (iw(z[i]) - iw(z[d + i])) / cp.i_u * xbuf[i];
            }
            let split = DifferentialValue::geometric_split(delta * cp.i_u, i_gm);
            for i in 0..d {
                let ix = xbuf[i].abs() * cp.i_u;
                let (op, om) = if xbuf[i] >= 0.0 {
                    (split.minus, split.plus)
                } else {
                    (split.plus, split.minus)
                };
                let i_dp = k_d * op * ix * (-z[i] / n_vt).exp();
                let i_dm = k_d * om * ix * (-z[d + i] / n_vt).exp();
                dz[i] = (i_dp - cp.u) / cp.c;
                dz[d + i] = (i_dm - cp.u) / cp.c;
            }
            Ok(())
        };
        // Step edges on the ramp corner keep RK4 at full order.
        let t_flat = if prev.is_some() && rise > 0.0 {
            let hr = rise / solver.ramp_substeps as f64;
            for s in 0..solver.ramp_substeps {
                rk4_step(&mut z, s as f64 * hr, hr, &mut ws, &mut f)?;
            }
            rise
        } else {
            0.0
        };
        let h = (hp.delta_s - t_flat) / solver.device_substeps as f64;
        for s in 0..solver.device_substeps {
            rk4_step(&mut z, t_flat + s as f64 * h, h, &mut ws, &mut f)?;
        }
        t += hp.delta_s;
        for i in 0..d {
            monitor.observe("Iw+", iw(z[i]), t)?;
            monitor.observe("Iw-", iw(z[d + i]), t)?;
        }
        if iv.position + 1 == m {
            let model = LinearModel {
                weights: weights(&z),
                bias: None,
            };
            check_divergence(&model, iv.epoch, solver.divergence_guard)?;
            trace.record_epoch(&model, dataset)?;
        }
    }
    trace.circuit = Some(CircuitSnapshot {
        params: cp.clone(),
        delta_s: hp.delta_s,
        alpha,
        lambda,
    });
    trace.solver = Some(*solver);
    trace.monitor = Some(monitor.into_summary());
    trace.wall_time = started.elapsed().as_secs_f64();
    Ok(trace)
}
