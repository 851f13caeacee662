use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Currents between 10 pA and 1 uA keep the devices in weak inversion.
pub const DEFAULT_WINDOW: (f64, f64) = (10e-12, 1e-6);

/// First current seen outside the validity window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub what: String,
    pub current: f64,
    pub t: f64,
}

/// What a [`SubthresholdMonitor`] saw over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub window: (f64, f64),
    pub observations: u64,
    pub excursions: u64,
    pub min_current: f64,
    pub max_current: f64,
    pub first_excursion: Option<Excursion>,
}

impl MonitorSummary {
    pub fn silent(&self) -> bool {
        self.excursions == 0
    }
}

/// Watches node currents. A non-positive current is always an error; leaving
/// the window is counted, and is an error only in strict mode.
#[derive(Debug, Clone)]
pub struct SubthresholdMonitor {
    strict: bool,
    summary: MonitorSummary,
}

impl SubthresholdMonitor {
    pub fn new(window: (f64, f64), strict: bool) -> Result<Self> {
        if !(window.0 > 0.0 && window.0 < window.1) {
            return Err(Error::InvalidInput(format!("bad current window {window:?}")));
        }
        Ok(Self {
            strict,
            summary: MonitorSummary {
                window,
                observations: 0,
                excursions: 0,
                min_current: f64::INFINITY,
                max_current: 0.0,
                first_excursion: None,
            },
        })
    }

    pub fn observe(&mut self, what: &str, current: f64, t: f64) -> Result<()> {
        let s = &mut self.summary;
        s.observations += 1;
        if !(current > 0.0) || !current.is_finite() {
            return Err(Error::SubthresholdViolation {
                what: what.to_string(),
                current,
                t,
            });
        }
        s.min_current = s.min_current.min(current);
        s.max_current = s.max_current.max(current);
        if current < s.window.0 || current > s.window.1 {
            s.excursions += 1;
            if s.first_excursion.is_none() {
                s.first_excursion = Some(Excursion {
                    what: what.to_string(),
                    current,
                    t,
                });
                log::warn!("{what} = {current:e} A left the subthreshold window at t = {t:e} s");
            }
            if self.strict {
                return Err(Error::SubthresholdViolation {
                    what: what.to_string(),
                    current,
                    t,
                });
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> &MonitorSummary {
        &self.summary
    }

    pub fn into_summary(self) -> MonitorSummary {
        self.summary
    }
}
