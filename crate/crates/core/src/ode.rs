//! Fixed-step classical Runge-Kutta used by every tier for ramp regions,
//! nonlinear flat regions and oracle checks.

use crate::error::Result;

/// Scratch buffers for allocation-free RK4 steps.
#[derive(Debug, Clone, Default)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        let mut ws = Self::default();
        ws.resize(n);
        ws
    }

    fn resize(&mut self, n: usize) {
        for buf in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            buf.resize(n, 0.0);
        }
    }
}

/// Advance `y` by one RK4 step of size `h` starting at `t`.
///
/// `f(t, y, dy)` writes the derivative into `dy` and may fail, e.g. when a
/// current leaves the subthreshold domain mid-step.
pub fn rk4_step<F>(y: &mut [f64], t: f64, h: f64, ws: &mut Rk4Workspace, f: &mut F) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    ws.resize(n);
    let Rk4Workspace { k1, k2, k3, k4, tmp } = ws;

    f(t, y, k1)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(t + h, tmp, k4)?;
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

/// Integrate over `[t0, t1]` with `substeps` equal RK4 steps.
pub fn rk4_integrate<F>(y: &mut [f64], t0: f64, t1: f64, substeps: usize, f: &mut F) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut ws = Rk4Workspace::new(y.len());
    let h = (t1 - t0) / substeps as f64;
    for s in 0..substeps {
        rk4_step(y, t0 + s as f64 * h, h, &mut ws, f)?;
    }
    Ok(())
}

/// `(1 - exp(-rate * dt)) / rate`, the exact affine-ODE propagation weight,
/// with the `rate -> 0` limit `dt`.
pub fn relaxation_weight(rate: f64, dt: f64) -> f64 {
    let z = rate * dt;
    if z.abs() < 1e-300 {
        dt
    } else {
        -(-z).exp_m1() / rate
    }
}
