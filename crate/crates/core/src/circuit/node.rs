use serde::{Deserialize, Serialize};

use super::CircuitParams;
use crate::ct_core::DifferentialValue;
use crate::error::{Error, Result};

/// Pair of lossless integrator currents holding the bias, `w0 = (plus - minus) / Iu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasState {
    pub plus: f64,
    pub minus: f64,
}

/// The two learning-cell currents of one weight, plus an optional bias pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightNodeState {
    pub iw_plus: f64,
    pub iw_minus: f64,
    pub bias: Option<BiasState>,
}

impl WeightNodeState {
    /// Both cells at `level` amperes on top of the part encoding `w`.
    pub fn with_weight(w: f64, level: f64, cp: &CircuitParams) -> Self {
        Self {
            iw_plus: level + w.max(0.0) * cp.i_u,
            iw_minus: level + (-w).max(0.0) * cp.i_u,
            bias: None,
        }
    }

    pub fn weight(&self, cp: &CircuitParams) -> f64 {
        (self.iw_plus - self.iw_minus) / cp.i_u
    }
}

/// Inputs held across one [`step_node`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeDrive {
    /// Input magnitude current `|x| Iu`.
    pub ix: f64,
    /// Split error currents.
    pub delta: DifferentialValue,
    /// Set for a negative input: the positive cell then takes `Idelta+`
    /// instead of `Idelta-`, which flips the sign of the update.
    pub inverted: bool,
}

impl NodeDrive {
    /// Error currents feeding the (positive, negative) cells.
    pub fn routed(&self) -> (f64, f64) {
        if self.inverted {
            (self.delta.plus, self.delta.minus)
        } else {
            (self.delta.minus, self.delta.plus)
        }
    }
}

fn require_positive(what: &str, current: f64) -> Result<()> {
    if current > 0.0 && current.is_finite() {
        Ok(())
    } else {
        Err(Error::SubthresholdViolation {
            what: what.to_string(),
            current,
            t: f64::NAN,
        })
    }
}

/// `dIw/dt` of one learning cell.
pub fn cell_rhs(iw: f64, i_delta_opp: f64, ix: f64, cp: &CircuitParams) -> Result<f64> {
    require_positive("Iw", iw)?;
    require_positive("Idelta", i_delta_opp)?;
    require_positive("Ix", ix)?;
    Ok(-cp.decay_rate() * iw + cp.drive_gain() * i_delta_opp * ix / cp.i_u)
}

/// Geometric-mean split of `delta` into currents with difference `delta Iu`
/// and product `i_gm^2`.
pub fn gms_split(delta: f64, i_gm: f64, cp: &CircuitParams) -> Result<DifferentialValue> {
    if !(i_gm > 0.0 && i_gm.is_finite()) {
        return Err(Error::InvalidInput(format!("GMS current must be positive, got {i_gm}")));
    }
    if !delta.is_finite() {
        return Err(Error::InvalidInput(format!("error signal must be finite, got {delta}")));
    }
    Ok(DifferentialValue::geometric_split(delta * cp.i_u, i_gm))
}

/// Ideal translinear product `ia ib / iref`.
pub fn translinear_multiply(ia: f64, ib: f64, iref: f64) -> Result<f64> {
    require_positive("Ia", ia)?;
    require_positive("Ib", ib)?;
    require_positive("Iref", iref)?;
    Ok(ia * ib / iref)
}

/// Derivatives of the bias integrator pair. The integrators share the cell's
/// `S Iq / (nVT C)` gain with a unit (`Iu`) input, so the bias learns at alpha.
pub fn bias_rhs(state: &BiasState, i_delta: &DifferentialValue, cp: &CircuitParams) -> Result<(f64, f64)> {
    require_positive("Ib+", state.plus)?;
    require_positive("Ib-", state.minus)?;
    require_positive("Idelta+", i_delta.plus)?;
    require_positive("Idelta-", i_delta.minus)?;
    let g = cp.drive_gain();
    Ok((g * i_delta.minus, g * i_delta.plus))
}

/// Advance a node by `dt` with inputs held: each cell relaxes exponentially
/// toward its steady state `S (Iq/u) Iopp Ix / Iu`.
pub fn step_node(state: &WeightNodeState, drive: &NodeDrive, dt: f64, cp: &CircuitParams) -> Result<WeightNodeState> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("step must be >= 0, got {dt}")));
    }
    if !(drive.ix >= 0.0 && drive.ix.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "input current must be >= 0, got {}",
            drive.ix
        )));
    }
    require_positive("Iw+", state.iw_plus)?;
    require_positive("Iw-", state.iw_minus)?;
    require_positive("Idelta+", drive.delta.plus)?;
    require_positive("Idelta-", drive.delta.minus)?;
    let relax = -(-cp.decay_rate() * dt).exp_m1();
    let steady = cp.drive_gain() / cp.decay_rate() * drive.ix / cp.i_u;
    let (opp_plus, opp_minus) = drive.routed();
    let advance = |iw: f64, opp: f64| iw + (steady * opp - iw) * relax;
    let next = WeightNodeState {
        iw_plus: advance(state.iw_plus, opp_plus),
        iw_minus: advance(state.iw_minus, opp_minus),
        bias: match state.bias {
            None => None,
            Some(b) => {
                let (dp, dm) = bias_rhs(&b, &drive.delta, cp)?;
                Some(BiasState {
                    plus: b.plus + dp * dt,
                    minus: b.minus + dm * dt,
                })
            }
        },
    };
    for (what, v) in [("Iw+", next.iw_plus), ("Iw-", next.iw_minus)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::SubthresholdViolation {
                what: what.into(),
                current: v,
                t: dt,
            });
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::rk4_integrate;
    use proptest::prelude::*;

    fn cp() -> CircuitParams {
        CircuitParams::nominal()
    }

    #[test]
    fn cell_steady_state() {
        let p = cp();
        let (opp, ix) = (7e-9, 4e-9);
        let star = p.i_q / p.u * opp * ix / p.i_u;
        assert!(cell_rhs(star, opp, ix, &p).unwrap().abs() < 1e-20);
    }

    #[test]
    fn cell_near_pure_decay() {
        let p = cp();
        let r = cell_rhs(1e-8, 1e-15, 1e-15, &p).unwrap();
        assert!((r / -1e-8 - 10.016).abs() < 1e-3);
    }

    #[test]
    fn cell_rejects_non_positive() {
        assert!(matches!(
            cell_rhs(1e-9, 0.0, 1e-9, &cp()),
            Err(Error::SubthresholdViolation { .. })
        ));
    }

    #[test]
    fn gms_examples() {
        let p = cp();
        let s = gms_split(0.0, p.i_u, &p).unwrap();
        assert_eq!((s.plus, s.minus), (p.i_u, p.i_u));
        // delta Iu = 1.5 Igm gives (2 Igm, Igm/2).
        let s = gms_split(1.5, p.i_u, &p).unwrap();
        assert!((s.plus - 2.0 * p.i_u).abs() < 1e-22 && (s.minus - 0.5 * p.i_u).abs() < 1e-22);
        assert!(gms_split(1.0, 0.0, &p).is_err());
    }

    #[test]
    fn gms_ignores_capacitor_and_reference() {
        let a = cp();
        let b = CircuitParams {
            c: 1e-6,
            i_q: 3e-9,
            ..cp()
        };
        assert_eq!(gms_split(-0.3, 1e-8, &a).unwrap(), gms_split(-0.3, 1e-8, &b).unwrap());
    }

    #[test]
    fn translinear_identities() {
        assert_eq!(translinear_multiply(1e-8, 3e-9, 1e-8).unwrap(), 3e-9);
        assert!((translinear_multiply(1e-8, 1e-8, 1e-8).unwrap() - 1e-8).abs() < 1e-24);
        assert!(translinear_multiply(-1e-8, 1e-8, 1e-8).is_err());
    }

    #[test]
    fn four_quadrant_product() {
        // (a+ - a-)(b+ - b-) from four one-quadrant multiplies.
        let iu = 1e-8;
        for (a, b) in [(0.3, -0.7), (-1.2, -0.4), (0.9, 0.5), (-0.1, 2.0)] {
            let p = cp();
            let sa = gms_split(a, iu, &p).unwrap();
            let sb = gms_split(b, iu, &p).unwrap();
            let m = |x, y| translinear_multiply(x, y, iu).unwrap();
            let prod = (m(sa.plus, sb.plus) + m(sa.minus, sb.minus) - m(sa.plus, sb.minus) - m(sa.minus, sb.plus)) / iu;
            assert!((prod - a * b).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_pair() {
        let p = cp();
        let b = BiasState {
            plus: 1e-9,
            minus: 1e-9,
        };
        let zero = gms_split(0.0, p.i_u, &p).unwrap();
        let (dp, dm) = bias_rhs(&b, &zero, &p).unwrap();
        assert_eq!(dp - dm, 0.0);
        // Constant delta = 1 for T seconds moves w0 by -(alpha/ds) T.
        let one = gms_split(1.0, p.i_u, &p).unwrap();
        let (dp, dm) = bias_rhs(&b, &one, &p).unwrap();
        let t = 0.01;
        let w0 = (dp - dm) * t / p.i_u;
        let (alpha, _) = super::super::map_hyperparams(1e-5, &p).unwrap();
        assert!((w0 + alpha / 1e-5 * t).abs() < 1e-12);
    }

    #[test]
    fn step_node_limits() {
        let p = cp();
        let s = WeightNodeState::with_weight(0.0, 0.01 * p.i_u, &p);
        let drive = NodeDrive {
            ix: 0.6 * p.i_u,
            delta: gms_split(-0.4, p.i_u, &p).unwrap(),
            inverted: false,
        };
        assert_eq!(step_node(&s, &drive, 0.0, &p).unwrap(), s);
        let long = step_node(&s, &drive, 100.0 * p.tau(), &p).unwrap();
        let star = |opp: f64| p.i_q / p.u * opp * drive.ix / p.i_u;
        assert!((long.iw_plus / star(drive.delta.minus) - 1.0).abs() < 1e-12);
        assert!((long.iw_minus / star(drive.delta.plus) - 1.0).abs() < 1e-12);
        assert!(step_node(&s, &drive, -1.0, &p).is_err());
    }

    #[test]
    fn step_node_matches_rk4_on_piecewise_inputs() {
        let p = cp();
        let mut s = WeightNodeState::with_weight(0.2, 0.01 * p.i_u, &p);
        let mut z = [s.iw_plus, s.iw_minus];
        let drives: Vec<NodeDrive> = [(0.3, 0.5, false), (0.9, -1.1, true), (0.1, 0.2, false)]
            .iter()
            .map(|&(x, d, inv)| NodeDrive {
                ix: x * p.i_u,
                delta: gms_split(d, p.i_u, &p).unwrap(),
                inverted: inv,
            })
            .collect();
        for d in &drives {
            s = step_node(&s, d, 0.02, &p).unwrap();
            let (op, om) = d.routed();
            rk4_integrate(&mut z, 0.0, 0.02, 1000, &mut |_, z: &[f64], dz: &mut [f64]| {
                dz[0] = cell_rhs(z[0], op, d.ix, &p)?;
                dz[1] = cell_rhs(z[1], om, d.ix, &p)?;
                Ok(())
            })
            .unwrap();
        }
        assert!((s.iw_plus / z[0] - 1.0).abs() < 1e-6);
        assert!((s.iw_minus / z[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inverted_routing_flips_update_sign() {
        let p = cp();
        let s = WeightNodeState::with_weight(0.0, 0.05 * p.i_u, &p);
        let delta = gms_split(0.7, p.i_u, &p).unwrap();
        let up = step_node(
            &s,
            &NodeDrive {
                ix: 0.5 * p.i_u,
                delta,
                inverted: false,
            },
            1e-3,
            &p,
        )
        .unwrap();
        let down = step_node(
            &s,
            &NodeDrive {
                ix: 0.5 * p.i_u,
                delta,
                inverted: true,
            },
            1e-3,
            &p,
        )
        .unwrap();
        assert!((up.weight(&p) + down.weight(&p)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn gms_positive_difference_product(delta in -50.0f64..50.0, gm_scale in 0.01f64..10.0) {
            let p = cp();
            let gm = gm_scale * p.i_u;
            let s = gms_split(delta, gm, &p).unwrap();
            prop_assert!(s.plus > 0.0 && s.minus > 0.0);
            let scale = delta.abs() * p.i_u + gm;
            prop_assert!((s.value() - delta * p.i_u).abs() <= 8.0 * f64::EPSILON * scale);
            prop_assert!((s.plus * s.minus / (gm * gm) - 1.0).abs() <= 8.0 * f64::EPSILON);
        }

        #[test]
        fn common_mode_bounded(xs in prop::collection::vec((0.0f64..1.0, -2.0f64..2.0), 1..30)) {
            // Both cells stay below S (Iq/u) max(Iopp Ix)/Iu plus the initial level.
            let p = cp();
            let init = 0.01 * p.i_u;
            let mut s = WeightNodeState::with_weight(0.0, init, &p);
            let mut bound: f64 = 0.0;
            for (x, d) in xs {
                let drive = NodeDrive { ix: x * p.i_u, delta: gms_split(d, p.i_u, &p).unwrap(), inverted: false };
                bound = bound.max(p.i_q / p.u * drive.delta.plus.max(drive.delta.minus) * drive.ix / p.i_u);
                s = step_node(&s, &drive, 0.05, &p).unwrap();
                prop_assert!(s.iw_plus <= bound.max(init) * (1.0 + 1e-12));
                prop_assert!(s.iw_minus <= bound.max(init) * (1.0 + 1e-12));
            }
        }
    }
}
