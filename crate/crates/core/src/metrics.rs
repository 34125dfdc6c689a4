//! Enhancement and localization metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::circular_diff_deg;
use crate::scalar::Real;

/// SI-SDR values are capped here so a perfect estimate stays finite.
pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Localization tolerance in degrees (inclusive).
pub const ACC_TOLERANCE_DEG: f64 = 15.0;

/// Scale-invariant signal-to-distortion ratio of `estimate` against
/// `reference`, in dB, capped at [`SI_SDR_CAP_DB`].
pub fn si_sdr<T: Real>(estimate: &[T], reference: &[T]) -> Result<T> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: T = reference.iter().map(|&s| s * s).sum();
    if !(ref_energy > T::zero()) {
        return Err(Error::Silent("SI-SDR reference"));
    }
    let dot: T = estimate.iter().zip(reference).map(|(&e, &s)| e * s).sum();
    let beta = dot / ref_energy;
    let (target, distortion) = estimate
        .iter()
        .zip(reference)
        .fold((T::zero(), T::zero()), |(tgt, dist), (&e, &s)| {
            let t = beta * s;
            (tgt + t * t, dist + (t - e) * (t - e))
        });
    let cap = T::lit(SI_SDR_CAP_DB);
    if distortion == T::zero() {
        return Ok(if target > T::zero() { cap } else { -cap });
    }
    if target == T::zero() {
        return Ok(-cap);
    }
    let db = T::lit(10.0) * (target / distortion).log10();
    Ok(db.min(cap).max(-cap))
}

/// Fraction of estimates within ±15° (circular, inclusive) of the truth.
pub fn acc15(estimates_deg: &[f64], truths_deg: &[f64]) -> Result<f64> {
    accuracy_within(estimates_deg, truths_deg, ACC_TOLERANCE_DEG)
}

pub fn accuracy_within(estimates_deg: &[f64], truths_deg: &[f64], tolerance_deg: f64) -> Result<f64> {
    if estimates_deg.is_empty() {
        return Err(Error::Empty("azimuth list"));
    }
    if estimates_deg.len() != truths_deg.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} truths",
            estimates_deg.len(),
            truths_deg.len()
        )));
    }
    // absorb rounding in the wrap so that an exact 15° error stays a hit
    let slack = 1e-9;
    let hits = estimates_deg
        .iter()
        .zip(truths_deg)
        .filter(|(&e, &t)| circular_diff_deg(e, t).abs() <= tolerance_deg + slack)
        .count();
    Ok(hits as f64 / estimates_deg.len() as f64)
}

/// `Σ wᵢ xᵢ / Σ wᵢ` with strictly positive weights.
pub fn weighted_average(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("rows"));
    }
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values vs {} weights",
            values.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights);
    }
    let total: f64 = weights.iter().sum();
    Ok(values.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total)
}

/// One evaluated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    /// Localization result and ground truth, when localization ran.
    pub doa_estimate_deg: Option<f64>,
    pub doa_truth_deg: Option<f64>,
    /// Aggregation weight, normally the signal duration in seconds.
    pub weight: f64,
}

/// Weighted means over a set of rows plus localization accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    /// `None` when no row carries a localization result.
    pub acc15: Option<f64>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        let weights: Vec<f64> = rows.iter().map(|r| r.weight).collect();
        let si_in: Vec<f64> = rows.iter().map(|r| r.si_sdr_in).collect();
        let si_out: Vec<f64> = rows.iter().map(|r| r.si_sdr_out).collect();
        let (est, truth): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter_map(|r| Some((r.doa_estimate_deg?, r.doa_truth_deg?)))
            .unzip();
        Ok(Self {
            si_sdr_in: weighted_average(&si_in, &weights)?,
            si_sdr_out: weighted_average(&si_out, &weights)?,
            acc15: if est.is_empty() { None } else { Some(acc15(&est, &truth)?) },
            rows,
        })
    }
}
