//! Behavioural current-mode model of the weight-learning node.
//!
//! Each weight is the normalised difference of two capacitor-backed currents,
//! `w = (Iw+ - Iw-) / Iu`. Every cell obeys
//! `Iw' = -(u / nVT C) Iw + S (Iq / nVT C) Iopp Ix / Iu`, where `S` is the
//! ratio of the left and right translinear stack currents (1 without stacks).

mod monitor;
mod node;
mod trainer;

pub use monitor::{Excursion, MonitorSummary, SubthresholdMonitor, DEFAULT_WINDOW};
pub use node::{bias_rhs, cell_rhs, gms_split, step_node, translinear_multiply, BiasState, NodeDrive, WeightNodeState};
pub use trainer::{train_circuit, NodeOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical parameters of a learning cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    /// Integration capacitance, F.
    pub c: f64,
    /// Subthreshold slope times thermal voltage, V.
    pub n_vt: f64,
    /// Normalising current, A.
    pub i_u: f64,
    /// Unit leak current, A.
    pub u: f64,
    /// Reference current, A.
    pub i_q: f64,
    #[serde(default)]
    pub stack_left: Vec<f64>,
    #[serde(default)]
    pub stack_right: Vec<f64>,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self::nominal()
    }
}

impl CircuitParams {
    /// C = 39 nF, nVT = 25.6 mV, Iu = u = 10 nA, Iq = 100 nA, no stacks.
    pub fn nominal() -> Self {
        Self {
            c: 39e-9,
            n_vt: 25.6e-3,
            i_u: 10e-9,
            u: 10e-9,
            i_q: 100e-9,
            stack_left: Vec::new(),
            stack_right: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("C", self.c),
            ("nVT", self.n_vt),
            ("Iu", self.i_u),
            ("u", self.u),
            ("Iq", self.i_q),
        ];
        for (name, v) in named
            .into_iter()
            .chain(self.stack_left.iter().map(|v| ("stack_left", *v)))
            .chain(self.stack_right.iter().map(|v| ("stack_right", *v)))
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if self.stack_left.len() != self.stack_right.len() {
            return Err(Error::InvalidInput(format!(
                "stack lengths differ: {} left vs {} right",
                self.stack_left.len(),
                self.stack_right.len()
            )));
        }
        Ok(())
    }

    /// `prod(I_l) / prod(I_r)`.
    pub fn stack_ratio(&self) -> f64 {
        self.stack_left.iter().product::<f64>() / self.stack_right.iter().product::<f64>()
    }

    /// `u / (nVT C)`, the decay rate of a cell in 1/s.
    pub fn decay_rate(&self) -> f64 {
        self.u / (self.n_vt * self.c)
    }

    /// `S Iq / (nVT C)`, the drive gain of a cell in 1/s. Equals `alpha / ds`.
    pub fn drive_gain(&self) -> f64 {
        self.stack_ratio() * self.i_q / (self.n_vt * self.c)
    }

    /// Time constant `nVT C / u`.
    pub fn tau(&self) -> f64 {
        1.0 / self.decay_rate()
    }
}

/// `(alpha, lambda)` realised by `cp` at hold time `delta_s`.
pub fn map_hyperparams(delta_s: f64, cp: &CircuitParams) -> Result<(f64, f64)> {
    cp.validate()?;
    if !(delta_s > 0.0 && delta_s.is_finite()) {
        return Err(Error::InvalidInput(format!("delta_s must be positive, got {delta_s}")));
    }
    let s = cp.stack_ratio();
    let alpha = s * cp.i_q / (cp.n_vt * cp.c) * delta_s;
    let lambda = cp.u / (s * cp.i_q);
    Ok((alpha, lambda))
}

/// Limits for [`solve_circuit_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircuitBounds {
    pub c_min: f64,
    pub c_max: f64,
    pub delta_s_min: f64,
    pub delta_s_max: f64,
    /// Currents must stay inside this window for weak-inversion validity.
    pub current_min: f64,
    pub current_max: f64,
    pub max_stack_depth: usize,
    /// Per-level `I_l / I_r` when a stack is needed.
    pub stack_ratio: f64,
    /// Template for `nVT`, `Iu` and `u`, which the solver keeps fixed.
    pub base: CircuitParams,
}

impl Default for CircuitBounds {
    fn default() -> Self {
        Self {
            c_min: 39e-9,
            c_max: 39e-9,
            delta_s_min: 1e-8,
            delta_s_max: 1e-2,
            current_min: DEFAULT_WINDOW.0,
            current_max: DEFAULT_WINDOW.1,
            max_stack_depth: 4,
            stack_ratio: 10.0,
            base: CircuitParams::nominal(),
        }
    }
}

/// A solved operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedCircuit {
    pub params: CircuitParams,
    pub delta_s: f64,
}

/// Find parameters realising `(alpha, lambda)`.
///
/// `nVT`, `Iu` and `u` come from `bounds.base`. The shallowest stack that puts
/// `Iq = u / (S lambda)` inside the current window is used, then the smallest
/// `C` whose hold time `ds = alpha nVT C / (S Iq)` is inside the allowed range.
pub fn solve_circuit_params(alpha: f64, lambda: f64, bounds: &CircuitBounds) -> Result<SolvedCircuit> {
    if !(alpha > 0.0 && alpha.is_finite() && lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "targets must be positive, got alpha={alpha}, lambda={lambda}"
        )));
    }
    bounds.base.validate()?;
    if !(bounds.stack_ratio > 1.0) {
        return Err(Error::InvalidInput("stack ratio must exceed 1".into()));
    }
    let base = &bounds.base;
    let in_window = |i: f64| i >= bounds.current_min && i <= bounds.current_max;
    let depth = (0..=bounds.max_stack_depth)
        .flat_map(|k| [k as i32, -(k as i32)])
        .find(|&k| in_window(base.u / (bounds.stack_ratio.powi(k) * lambda)))
        .ok_or_else(|| {
            let iq = base.u / lambda;
            let needed = (iq / bounds.current_max).log(bounds.stack_ratio).ceil();
            Error::Infeasible(format!(
                "lambda={lambda} needs Iq={iq:e} A outside [{:e}, {:e}] A; a translinear stack of \
                 depth {needed} with per-level ratio {} would be required (max depth {})",
                bounds.current_min, bounds.current_max, bounds.stack_ratio, bounds.max_stack_depth
            ))
        })?;
    let s = bounds.stack_ratio.powi(depth);
    let i_q = base.u / (s * lambda);
    // Stack levels: I_l = ratio * Iu, I_r = Iu for positive depth, mirrored
    // for negative depth.
    let levels = depth.unsigned_abs() as usize;
    let (hi, lo) = (bounds.stack_ratio * base.i_u, base.i_u);
    let (stack_left, stack_right) = if depth >= 0 {
        (vec![hi; levels], vec![lo; levels])
    } else {
        (vec![lo; levels], vec![hi; levels])
    };
    if levels > 0 && !(in_window(hi) && in_window(lo)) {
        return Err(Error::Infeasible(format!(
            "stack currents {lo:e}/{hi:e} A fall outside the current window"
        )));
    }
    let gain_per_farad = s * i_q / base.n_vt;
    let mut c = bounds.c_min;
    let mut delta_s = alpha * c / gain_per_farad;
    if delta_s < bounds.delta_s_min {
        c = bounds.delta_s_min * gain_per_farad / alpha;
        delta_s = bounds.delta_s_min;
    }
    if c > bounds.c_max || delta_s > bounds.delta_s_max {
        return Err(Error::Infeasible(format!(
            "alpha={alpha} needs C={c:e} F and ds={delta_s:e} s, outside C in [{:e}, {:e}] F, \
             ds in [{:e}, {:e}] s",
            bounds.c_min, bounds.c_max, bounds.delta_s_min, bounds.delta_s_max
        )));
    }
    Ok(SolvedCircuit {
        params: CircuitParams {
            c,
            i_q,
            stack_left,
            stack_right,
            ..base.clone()
        },
        delta_s,
    })
}
