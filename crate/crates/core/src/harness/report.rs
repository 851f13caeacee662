use serde::{Deserialize, Serialize};

use super::trace::{Tier, TrainTrace, FORMAT_VERSION};
use crate::error::{Error, Result};

/// Weight range used for bit resolution: `[-1, 1]`.
pub const FULL_SCALE: f64 = 2.0;

/// Resolution of a comparison in bits. Identical results have no finite
/// resolution and are reported as `Exact`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Bits(u32),
    Exact,
}

impl Precision {
    /// True when at least `bits` bits are resolved.
    pub fn at_least(self, bits: u32) -> bool {
        match self {
            Precision::Exact => true,
            Precision::Bits(b) => b >= bits,
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Bits(b) => write!(f, "{b} bits"),
            Precision::Exact => f.write_str("exact"),
        }
    }
}

/// `floor(-log2(max_error / full_scale))` for `0 < max_error <= full_scale`.
pub fn bits_of_precision(max_error: f64, full_scale: f64) -> Result<u32> {
    if !(full_scale > 0.0 && full_scale.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "full scale must be positive, got {full_scale}"
        )));
    }
    if !(max_error > 0.0) || !max_error.is_finite() {
        return Err(Error::InvalidInput(format!(
            "max error must be positive, got {max_error}"
        )));
    }
    if max_error > full_scale {
        return Err(Error::InvalidInput(format!(
            "max error {max_error} exceeds full scale {full_scale}"
        )));
    }
    Ok((-(max_error / full_scale).log2()).floor() as u32)
}

/// Total version of [`bits_of_precision`]: zero error is `Exact` and errors
/// above full scale resolve zero bits.
pub fn precision(max_error: f64, full_scale: f64) -> Result<Precision> {
    if max_error == 0.0 {
        Ok(Precision::Exact)
    } else if max_error > full_scale && max_error.is_finite() {
        Ok(Precision::Bits(0))
    } else {
        bits_of_precision(max_error, full_scale).map(Precision::Bits)
    }
}

/// `100 |candidate - reference| / |reference|`; `None` when the reference is
/// zero and the values differ.
fn rel_percent(reference: f64, candidate: f64) -> Option<f64> {
    let diff = (candidate - reference).abs();
    if diff == 0.0 {
        Some(0.0)
    } else if reference == 0.0 {
        None
    } else {
        Some(100.0 * diff / reference.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub name: String,
    pub reference: f64,
    pub candidate: f64,
    pub abs_diff: f64,
    /// Absolute difference as a percentage of unit scale.
    pub abs_percent: f64,
    /// Difference relative to the reference value, in percent.
    pub rel_percent: Option<f64>,
}

impl WeightRow {
    fn new(name: String, reference: f64, candidate: f64) -> Self {
        let abs_diff = (candidate - reference).abs();
        Self {
            name,
            reference,
            candidate,
            abs_diff,
            abs_percent: 100.0 * abs_diff,
            rel_percent: rel_percent(reference, candidate),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub reference: f64,
    pub candidate: f64,
    pub rel_percent: Option<f64>,
}

impl LossRow {
    fn new(reference: f64, candidate: f64) -> Self {
        Self {
            reference,
            candidate,
            rel_percent: rel_percent(reference, candidate),
        }
    }
}

/// Largest per-epoch gaps between two traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveDistance {
    /// Max over epochs and weights of `|w_a - w_b|`.
    pub weights_max_abs: f64,
    /// Max over epochs of `|mse_a - mse_b|`.
    pub mse_train_max_abs: f64,
    pub mse_test_max_abs: Option<f64>,
}

/// Final-epoch and per-epoch agreement of a candidate tier with a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub dataset: String,
    pub reference: Tier,
    pub candidate: Tier,
    pub weights: Vec<WeightRow>,
    pub mse_train: LossRow,
    pub mse_test: Option<LossRow>,
    /// Max of `abs_diff` over the weight rows.
    pub max_abs_error: f64,
    pub max_rel_percent: Option<f64>,
    pub full_scale: f64,
    pub precision: Precision,
    pub curves: CurveDistance,
}

fn max_opt(mut values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.try_fold(0.0f64, |a, v| v.map(|b| a.max(b)))
}

/// Compare the last epochs of two traces of the same run.
pub fn compare(reference: &TrainTrace, candidate: &TrainTrace) -> Result<ComparisonReport> {
    if reference.features() != candidate.features() {
        return Err(Error::DimensionMismatch {
            expected: reference.features(),
            got: candidate.features(),
        });
    }
    if reference.epochs != candidate.epochs || reference.epochs == 0 {
        return Err(Error::InvalidInput(format!(
            "traces cover {} and {} epochs",
            reference.epochs, candidate.epochs
        )));
    }
    if reference.bias_per_epoch.is_some() != candidate.bias_per_epoch.is_some() {
        return Err(Error::InvalidInput("only one trace has a bias".into()));
    }
    let mut weights: Vec<WeightRow> = reference
        .final_weights()
        .iter()
        .zip(candidate.final_weights())
        .enumerate()
        .map(|(i, (r, c))| WeightRow::new(format!("w_{}", i + 1), *r, *c))
        .collect();
    if let (Some(r), Some(c)) = (reference.final_bias(), candidate.final_bias()) {
        weights.push(WeightRow::new("bias".into(), r, c));
    }
    let max_abs_error = weights.iter().fold(0.0f64, |a, r| a.max(r.abs_diff));
    let max_rel_percent = max_opt(weights.iter().map(|r| r.rel_percent));
    let final_train = |t: &TrainTrace| t.final_mse_train().unwrap_or(f64::NAN);
    let mse_test = match (reference.final_mse_test(), candidate.final_mse_test()) {
        (Some(r), Some(c)) => Some(LossRow::new(r, c)),
        _ => None,
    };

    let mut weights_max_abs = 0.0f64;
    for (a, b) in reference.weights_per_epoch.iter().zip(&candidate.weights_per_epoch) {
        for (p, q) in a.iter().zip(b) {
            weights_max_abs = weights_max_abs.max((p - q).abs());
        }
    }
    if let (Some(a), Some(b)) = (&reference.bias_per_epoch, &candidate.bias_per_epoch) {
        for (p, q) in a.iter().zip(b) {
            weights_max_abs = weights_max_abs.max((p - q).abs());
        }
    }
    let curve_gap = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    let curves = CurveDistance {
        weights_max_abs,
        mse_train_max_abs: curve_gap(&reference.mse_train, &candidate.mse_train),
        mse_test_max_abs: match (&reference.mse_test, &candidate.mse_test) {
            (Some(a), Some(b)) => Some(curve_gap(a, b)),
            _ => None,
        },
    };
    Ok(ComparisonReport {
        format_version: FORMAT_VERSION,
        dataset: reference.dataset.clone(),
        reference: reference.tier,
        candidate: candidate.tier,
        weights,
        mse_train: LossRow::new(final_train(reference), final_train(candidate)),
        mse_test,
        max_abs_error,
        max_rel_percent,
        full_scale: FULL_SCALE,
        precision: precision(max_abs_error, FULL_SCALE)?,
        curves,
    })
}

impl ComparisonReport {
    /// Plain-text table in the style of a results table.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{} vs {} on {}\n{:<8} {:>12} {:>12} {:>10} {:>10}\n",
            self.candidate,
            self.reference,
            self.dataset,
            "weight",
            self.reference.name(),
            self.candidate.name(),
            "abs %",
            "rel %"
        );
        for r in &self.weights {
            s.push_str(&format!(
                "{:<8} {:>12.6} {:>12.6} {:>10.4} {:>10}\n",
                r.name,
                r.reference,
                r.candidate,
                r.abs_percent,
                r.rel_percent.map_or("n/a".into(), |v| format!("{v:.4}"))
            ));
        }
        let loss = |name: &str, l: &LossRow| {
            format!(
                "{:<8} {:>12.6} {:>12.6} {:>10} {:>10}\n",
                name,
                l.reference,
                l.candidate,
                "",
                l.rel_percent.map_or("n/a".into(), |v| format!("{v:.4}"))
            )
        };
        s.push_str(&loss("mse_trn", &self.mse_train));
        if let Some(t) = &self.mse_test {
            s.push_str(&loss("mse_tst", t));
        }
        s.push_str(&format!(
            "max abs error {:.3e} ({:.4}% of unit scale), resolution {}\n",
            self.max_abs_error,
            100.0 * self.max_abs_error,
            self.precision
        ));
        s
    }
}
