use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::monitor::{SubthresholdMonitor, DEFAULT_WINDOW};
use super::node::{step_node, NodeDrive, WeightNodeState};
use super::{map_hyperparams, CircuitParams};
use crate::ct_core::{schedule, DeltaMode, DifferentialValue, SolverOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::trace::{CircuitSnapshot, Tier, TrainTrace};
use crate::ideal::{check_divergence, Hyperparams, LinearModel};
use crate::ode::{rk4_step, Rk4Workspace};
use crate::signals::ramp_value;

/// Node-level settings of the circuit and device tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeOptions {
    /// GMS geometric mean; `None` uses `Iu`.
    pub i_gm: Option<f64>,
    /// Initial cell current as a fraction of `Iu`.
    pub init_fraction: f64,
    pub window: (f64, f64),
    /// Treat window excursions as errors instead of counting them.
    pub strict_window: bool,
}

impl Default for NodeOptions {
    fn default() -> Self {
        Self {
            i_gm: None,
            init_fraction: 0.01,
            window: DEFAULT_WINDOW,
            strict_window: false,
        }
    }
}

impl NodeOptions {
    pub fn gm(&self, cp: &CircuitParams) -> f64 {
        self.i_gm.unwrap_or(cp.i_u)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.init_fraction > 0.0 && self.init_fraction.is_finite()) {
            return Err(Error::InvalidInput("initial current fraction must be positive".into()));
        }
        if let Some(g) = self.i_gm {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidInput(format!("GMS current must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// Constants of the packed right-hand side.
struct Cell {
    d: usize,
    decay: f64,
    gain: f64,
    i_u: f64,
    i_gm: f64,
    bias: bool,
}

impl Cell {
    /// Error signal read from the packed currents.
    fn delta(&self, z: &[f64], x: &[f64], y: f64) -> f64 {
        let d = self.d;
        let mut acc = 0.0;
        for i in 0..d {
            acc += (z[i] - z[d + i]) * x[i];
        }
        if self.bias {
            acc += z[2 * d] - z[2 * d + 1];
        }
        acc / self.i_u - y
    }

    /// Packed derivatives for inputs `x` and error `delta`. Negative inputs are
    /// steered: magnitude current `|x| Iu`, error currents swapped.
    fn rhs(&self, z: &[f64], x: &[f64], delta: f64, dz: &mut [f64]) {
        let d = self.d;
        let split = DifferentialValue::geometric_split(delta * self.i_u, self.i_gm);
        for i in 0..d {
            let ix = x[i].abs();
            let (op, om) = if x[i] >= 0.0 {
                (split.minus, split.plus)
            } else {
                (split.plus, split.minus)
            };
            // gain * Iopp * (|x| Iu) / Iu
            dz[i] = -self.decay * z[i] + self.gain * op * ix;
            dz[d + i] = -self.decay * z[d + i] + self.gain * om * ix;
        }
        if self.bias {
            dz[2 * d] = self.gain * split.minus;
            dz[2 * d + 1] = self.gain * split.plus;
        }
    }
}

/// Train with the behavioural circuit model. `hp.delta_s` is the hold time;
/// the learning rate and decay are those realised by `cp`, not `hp.alpha` and
/// `hp.lambda`.
pub fn train_circuit(
    dataset: &Dataset,
    hp: &Hyperparams,
    cp: &CircuitParams,
    model0: &LinearModel,
    solver: &SolverOptions,
    node: &NodeOptions,
) -> Result<TrainTrace> {
    hp.validate()?;
    solver.validate()?;
    node.validate()?;
    let (alpha, lambda) = map_hyperparams(hp.delta_s, cp)?;
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
    let cell = Cell {
        d,
        decay: cp.decay_rate(),
        gain: cp.drive_gain(),
        i_u: cp.i_u,
        i_gm: node.gm(cp),
        bias: model0.bias.is_some(),
    };
    let init = node.init_fraction * cp.i_u;
    let mut z = Vec::with_capacity(2 * d + 2);
    let nodes: Vec<WeightNodeState> = model0
        .weights
        .iter()
        .map(|w| WeightNodeState::with_weight(*w, init, cp))
        .collect();
    z.extend(nodes.iter().map(|n| n.iw_plus));
    z.extend(nodes.iter().map(|n| n.iw_minus));
    if let Some(b) = model0.bias {
        z.push(init + b.max(0.0) * cp.i_u);
        z.push(init + (-b).max(0.0) * cp.i_u);
    }
    let read_model = |z: &[f64]| LinearModel {
        weights: (0..d).map(|i| (z[i] - z[d + i]) / cp.i_u).collect(),
        bias: cell.bias.then(|| (z[2 * d] - z[2 * d + 1]) / cp.i_u),
    };

    let mut monitor = SubthresholdMonitor::new(node.window, node.strict_window)?;
    let mut ws = Rk4Workspace::new(z.len());
    let mut xbuf = vec![0.0; d];
    let rise = solver.rise_fraction * hp.delta_s;
    let mut trace = TrainTrace::new(Tier::Circuit, dataset, *hp);
    let mut t = 0.0;

    for iv in schedule(dataset, hp.epochs) {
        let x = dataset.row(iv.sample);
        let y = dataset.target(iv.sample);
        let latched = match solver.delta_mode {
            DeltaMode::Continuous => None,
            DeltaMode::Latched => Some(cell.delta(&z, x, y)),
        };
        let ramp_prev = iv.previous.filter(|_| rise > 0.0);
        if let Some(p) = ramp_prev {
            let (xp, yp) = (dataset.row(p), dataset.target(p));
            let h = rise / solver.ramp_substeps as f64;
            let mut f = |tau: f64, z: &[f64], dz: &mut [f64]| {
                for i in 0..d {
                    xbuf[i] = ramp_value(Some(xp[i]), x[i], tau, rise);
                }
                let yt = ramp_value(Some(yp), y, tau, rise);
                let delta = latched.unwrap_or_else(|| cell.delta(z, &xbuf, yt));
                cell.rhs(z, &xbuf, delta, dz);
                Ok(())
            };
            for s in 0..solver.ramp_substeps {
                rk4_step(&mut z, s as f64 * h, h, &mut ws, &mut f)?;
            }
        }
        let hold = if ramp_prev.is_some() {
            hp.delta_s - rise
        } else {
            hp.delta_s
        };
        match latched {
            None => {
                let h = hold / solver.flat_substeps as f64;
                let mut f = |_: f64, z: &[f64], dz: &mut [f64]| {
                    cell.rhs(z, x, cell.delta(z, x, y), dz);
                    Ok(())
                };
                for s in 0..solver.flat_substeps {
                    rk4_step(&mut z, s as f64 * h, h, &mut ws, &mut f)?;
                }
            }
            Some(delta) => {
                let split = DifferentialValue::geometric_split(delta * cp.i_u, cell.i_gm);
                for i in 0..d {
                    let state = WeightNodeState {
                        iw_plus: z[i],
                        iw_minus: z[d + i],
                        bias: None,
                    };
                    let drive = NodeDrive {
                        ix: x[i].abs() * cp.i_u,
                        delta: split,
                        inverted: x[i] < 0.0,
                    };
                    let next = step_node(&state, &drive, hold, cp).map_err(|e| at_time(e, t))?;
                    z[i] = next.iw_plus;
                    z[d + i] = next.iw_minus;
                }
                if cell.bias {
                    z[2 * d] += cell.gain * split.minus * hold;
                    z[2 * d + 1] += cell.gain * split.plus * hold;
                }
            }
        }
        t += hp.delta_s;
        observe(&mut monitor, &cell, &z, x, y, t)?;
        if iv.position + 1 == m {
            let model = read_model(&z);
            check_divergence(&model, iv.epoch, solver.divergence_guard)?;
            // Epoch ends coincide with interval ends, so this is the sampled value.
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

fn at_time(e: Error, t: f64) -> Error {
    match e {
        Error::SubthresholdViolation { what, current, t: dt } => Error::SubthresholdViolation {
            what,
            current,
            t: t + dt,
        },
        other => other,
    }
}

/// Check state and splitter currents at an interval boundary.
fn observe(mon: &mut SubthresholdMonitor, cell: &Cell, z: &[f64], x: &[f64], y: f64, t: f64) -> Result<()> {
    let d = cell.d;
    for i in 0..d {
        mon.observe("Iw+", z[i], t)?;
        mon.observe("Iw-", z[d + i], t)?;
    }
    if cell.bias {
        mon.observe("Ib+", z[2 * d], t)?;
        mon.observe("Ib-", z[2 * d + 1], t)?;
    }
    let split = DifferentialValue::geometric_split(cell.delta(z, x, y) * cell.i_u, cell.i_gm);
    mon.observe("Idelta+", split.plus, t)?;
    mon.observe("Idelta-", split.minus, t)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct_core::{integrate_split_interval, train_ct, SplitState};
    use crate::data::gen_univariate;
    use crate::ideal::train;

    fn nominal_hp(epochs: usize) -> Hyperparams {
        Hyperparams {
            epochs,
            ..Hyperparams::nominal()
        }
    }

    #[test]
    fn reproduces_split_equations() {
        // Non-negative inputs, no ramp: normalised currents follow the split
        // equations with alpha and lambda from the map.
        let rows = vec![vec![0.2, 0.7], vec![0.9, 0.1], vec![0.4, 0.4]];
        let ds = Dataset::train_only("pos", rows, vec![0.3, -0.2, 0.5]).unwrap();
        let cp = CircuitParams::nominal();
        let hp = nominal_hp(30);
        let solver = SolverOptions {
            rise_fraction: 0.0,
            flat_substeps: 8,
            ..Default::default()
        };
        let tr = train_circuit(
            &ds,
            &hp,
            &cp,
            &LinearModel::zeros(2, false),
            &solver,
            &NodeOptions::default(),
        )
        .unwrap();
        let (alpha, lambda) = map_hyperparams(hp.delta_s, &cp).unwrap();
        let mapped = Hyperparams { alpha, lambda, ..hp };
        let mut s = SplitState::balanced(2, 0.01);
        for _ in 0..hp.epochs {
            for (x, y) in ds.train_samples() {
                s = integrate_split_interval(&s, x, y, hp.delta_s, 8, 1.0, &mapped).unwrap();
            }
        }
        for (a, b) in tr.final_weights().iter().zip(s.weights()) {
            assert!((a - b).abs() <= 1e-6 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn close_to_ideal_and_ct() {
        let ds = gen_univariate(4, 50).unwrap();
        let hp = nominal_hp(200);
        let model0 = LinearModel::zeros(1, false);
        let ideal = train(&ds, &hp, &model0).unwrap();
        let circuit = train_circuit(
            &ds,
            &hp,
            &CircuitParams::nominal(),
            &model0,
            &SolverOptions::default(),
            &NodeOptions::default(),
        )
        .unwrap();
        let (wi, wc) = (ideal.final_weights()[0], circuit.final_weights()[0]);
        assert!((wc - wi).abs() / wi.abs() < 7.1e-3);
        assert!(circuit.monitor.as_ref().unwrap().silent());
        // The CT tier at the realised alpha is the same ODE.
        let (alpha, lambda) = map_hyperparams(hp.delta_s, &CircuitParams::nominal()).unwrap();
        let (ct, _) = train_ct(
            &ds,
            &Hyperparams { alpha, lambda, ..hp },
            &model0,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((ct.final_weights()[0] - wc).abs() < 1e-9 * wc.abs());
    }

    #[test]
    fn latched_mode_runs() {
        let ds = gen_univariate(1, 20).unwrap();
        let solver = SolverOptions {
            delta_mode: DeltaMode::Latched,
            ..Default::default()
        };
        let tr = train_circuit(
            &ds,
            &nominal_hp(10),
            &CircuitParams::nominal(),
            &LinearModel::zeros(1, false),
            &solver,
            &NodeOptions::default(),
        )
        .unwrap();
        assert_eq!(tr.epochs, 10);
    }

    #[test]
    fn bias_matches_ideal_with_bias() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] + 0.5).collect();
        let ds = Dataset::train_only("b", rows, y).unwrap();
        let cp = CircuitParams::nominal();
        let hp = Hyperparams {
            alpha: 0.05,
            lambda: 1e-6,
            delta_s: 1e-5,
            epochs: 3000,
            seed: 0,
        };
        // Circuit with matching alpha and (near) zero decay: u tiny.
        let cp = CircuitParams {
            u: hp.lambda * cp.i_q,
            c: cp.i_q * hp.delta_s / (cp.n_vt * hp.alpha),
            ..cp
        };
        let model0 = LinearModel::zeros(1, true);
        let tr = train_circuit(
            &ds,
            &hp,
            &cp,
            &model0,
            &SolverOptions {
                rise_fraction: 0.0,
                ..Default::default()
            },
            &NodeOptions::default(),
        )
        .unwrap();
        let ideal = train(&ds, &hp, &model0).unwrap();
        assert!((tr.final_weights()[0] - 1.0).abs() < 0.02);
        assert!((tr.final_bias().unwrap() - 0.5).abs() < 0.02);
        assert!((tr.final_weights()[0] - ideal.final_weights()[0]).abs() < 0.02);
        assert!((tr.final_bias().unwrap() - ideal.final_bias().unwrap()).abs() < 0.02);
    }
}
