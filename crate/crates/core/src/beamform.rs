//! Mask-based MVDR beamforming with batch covariance accumulation.

use ndarray::{Array2, Array3};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::loaded_inverse_product;
use crate::masking::TfMask;
use crate::scalar::Real;
use crate::ssl::ScmPair;
use crate::stft::MultichannelSpectrogram;

/// Bins whose `|Tr(Φ_BB⁻¹ Φ_XX)|` is at or below this pass the reference through.
pub const DEGENERATE_TRACE: f64 = 1e-12;

/// Reference channel used when none is given (1-based).
pub const DEFAULT_REFERENCE: usize = 16;

/// Per-bin filter `w(f)`, stored `[bin][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerWeights<T> {
    weights: Array2<Complex<T>>,
    degenerate_bins: usize,
}

impl<T: Real> BeamformerWeights<T> {
    pub fn new(weights: Array2<Complex<T>>) -> Self {
        Self {
            weights,
            degenerate_bins: 0,
        }
    }

    pub fn weights(&self) -> &Array2<Complex<T>> {
        &self.weights
    }

    pub fn num_bins(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.weights.ncols()
    }

    /// Bins that fell back to the pass-through filter.
    pub fn degenerate_bins(&self) -> usize {
        self.degenerate_bins
    }

    pub fn bin(&self, f: usize) -> Vec<Complex<T>> {
        self.weights.row(f).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceSelector {
    /// 1-based channel index.
    Fixed(usize),
    /// Try every channel and keep the best-scoring one.
    Sweep,
}

impl Default for ReferenceSelector {
    fn default() -> Self {
        Self::Fixed(DEFAULT_REFERENCE)
    }
}

/// `Φ_XX(f) = Σ_t X̂ X̂ᴴ`, `Φ_BB(f) = Σ_t B̂ B̂ᴴ` with `X̂_k = Y_k M_k` and
/// `B̂_k = Y_k (1 - M_k)` using each channel's own mask.
pub fn batch_scm<T: Real>(spec: &MultichannelSpectrogram<T>, mask: &TfMask<T>) -> Result<ScmPair<T>> {
    mask.check_matches(spec)?;
    let (k, frames, bins) = spec.data().dim();
    let y = spec.data();
    let m = mask.values();
    let mut scm = ScmPair::zeros(k, bins);
    let mut xs = vec![Complex::new(T::zero(), T::zero()); k];
    let mut bs = xs.clone();
    for f in 0..bins {
        for t in 0..frames {
            for c in 0..k {
                let v = y[[c, t, f]];
                let w = m[[c, t, f]];
                xs[c] = v * w;
                bs[c] = v * (T::one() - w);
            }
            scm.phi_xx[f].add_outer(&xs, T::one());
            scm.phi_bb[f].add_outer(&bs, T::one());
        }
    }
    Ok(scm)
}

/// `w(f) = Φ_BB⁻¹ Φ_XX u / Tr(Φ_BB⁻¹ Φ_XX)` with `u` selecting `reference`
/// (1-based). Degenerate bins use `w = u`; more than half degenerate is an error.
pub fn mvdr_weights<T: Real>(scm: &ScmPair<T>, reference: usize) -> Result<BeamformerWeights<T>> {
    let k = scm.num_channels();
    if reference == 0 || reference > k {
        return Err(Error::InvalidChannel {
            channel: reference,
            channels: k,
        });
    }
    let r = reference - 1;
    let bins = scm.num_bins();
    let mut weights = Array2::zeros((bins, k));
    let mut degenerate = 0;
    for f in 0..bins {
        let product = match loaded_inverse_product(&scm.phi_bb[f], &scm.phi_xx[f]) {
            Ok(p) => Some(p),
            Err(Error::Singular) => None,
            Err(e) => return Err(e),
        };
        let mut row = weights.row_mut(f);
        match product {
            Some(p) if p.trace().norm() > T::lit(DEGENERATE_TRACE) && p.is_finite() => {
                let tr = p.trace();
                for c in 0..k {
                    row[c] = p[(c, r)] / tr;
                }
            }
            _ => {
                degenerate += 1;
                row[r] = Complex::new(T::one(), T::zero());
            }
        }
    }
    if 2 * degenerate > bins {
        return Err(Error::DegenerateMasks {
            degenerate,
            total: bins,
        });
    }
    Ok(BeamformerWeights {
        weights,
        degenerate_bins: degenerate,
    })
}

/// Single-channel output `w(f)ᴴ Y(t, f)`.
pub fn apply_beamformer<T: Real>(
    spec: &MultichannelSpectrogram<T>,
    w: &BeamformerWeights<T>,
) -> Result<MultichannelSpectrogram<T>> {
    let (k, frames, bins) = spec.data().dim();
    if w.num_bins() != bins || w.num_channels() != k {
        return Err(Error::DimensionMismatch(format!(
            "weights {}x{} vs spectrogram with {} channels and {} bins",
            w.num_bins(),
            w.num_channels(),
            k,
            bins
        )));
    }
    let y = spec.data();
    let mut out = Array3::zeros((1, frames, bins));
    for t in 0..frames {
        for f in 0..bins {
            let mut acc = Complex::new(T::zero(), T::zero());
            for c in 0..k {
                acc = acc + w.weights[[f, c]].conj() * y[[c, t, f]];
            }
            out[[0, t, f]] = acc;
        }
    }
    spec.with_data(out)
}

/// MVDR with a given mask and reference in one call.
pub fn enhance<T: Real>(
    spec: &MultichannelSpectrogram<T>,
    mask: &TfMask<T>,
    reference: usize,
) -> Result<MultichannelSpectrogram<T>> {
    let scm = batch_scm(spec, mask)?;
    apply_beamformer(spec, &mvdr_weights(&scm, reference)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult<T> {
    /// Score with channel `k + 1` as reference.
    pub scores: Vec<T>,
    /// Best 1-based channel; ties go to the lowest index.
    pub best: usize,
}

/// Runs MVDR once per reference channel and scores each output with
/// `score(reference, output)`.
pub fn reference_sweep<T: Real>(
    spec: &MultichannelSpectrogram<T>,
    mask: &TfMask<T>,
    mut score: impl FnMut(usize, &MultichannelSpectrogram<T>) -> Result<T>,
) -> Result<SweepResult<T>> {
    let scm = batch_scm(spec, mask)?;
    let mut scores = Vec::with_capacity(spec.num_channels());
    for reference in 1..=spec.num_channels() {
        let out = apply_beamformer(spec, &mvdr_weights(&scm, reference)?)?;
        scores.push(score(reference, &out)?);
    }
    let best = scores
        .iter()
        .enumerate()
        .fold((0usize, T::neg_infinity()), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc })
        .0
        + 1;
    Ok(SweepResult { scores, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use crate::linalg::CMatrix;
    use ndarray::Axis;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn spec(k: usize, f: impl Fn(usize, usize, usize) -> Complex<f64>) -> MultichannelSpectrogram<f64> {
        let cfg = StftConfig::default();
        let len = 1024;
        let data = Array3::from_shape_fn((k, cfg.num_frames(len), cfg.num_bins()), |(a, b, d)| f(a, b, d));
        MultichannelSpectrogram::from_data(data, cfg, 16_000.0, len).unwrap()
    }

    fn rough(a: usize, t: usize, f: usize) -> Complex<f64> {
        let s = (a * 7 + t * 13 + f * 3) as f64;
        c((s * 0.37).sin(), (s * 0.91).cos())
    }

    #[test]
    fn unit_mask_puts_everything_in_speech() {
        let y = spec(3, rough);
        let scm = batch_scm(&y, &TfMask::constant(&y, 1.0).unwrap()).unwrap();
        for f in [0, 10, 256] {
            let mut expected = CMatrix::zeros(3);
            for t in 0..y.num_frames() {
                let v: Vec<_> = (0..3).map(|a| y.data()[[a, t, f]]).collect();
                expected.add_outer(&v, 1.0);
            }
            assert!(scm.phi_xx[f].sub(&expected).max_abs() < 1e-12);
            assert_eq!(scm.phi_bb[f].max_abs(), 0.0);
        }
    }

    #[test]
    fn half_mask_splits_evenly() {
        let y = spec(2, rough);
        let full = batch_scm(&y, &TfMask::constant(&y, 1.0).unwrap()).unwrap();
        let half = batch_scm(&y, &TfMask::constant(&y, 0.5).unwrap()).unwrap();
        for f in 0..y.num_bins() {
            let quarter = full.phi_xx[f].scaled(0.25);
            assert!(half.phi_xx[f].sub(&quarter).max_abs() < 1e-12);
            assert!(half.phi_bb[f].sub(&quarter).max_abs() < 1e-12);
        }
    }

    #[test]
    fn identity_covariances_give_uniform_weights() {
        let scm = ScmPair {
            phi_xx: vec![CMatrix::<f64>::identity(4); 3],
            phi_bb: vec![CMatrix::identity(4); 3],
        };
        let w = mvdr_weights(&scm, 2).unwrap();
        for f in 0..3 {
            for ch in 0..4 {
                let expected = if ch == 1 { 0.25 } else { 0.0 };
                assert!((w.weights()[[f, ch]] - c(expected, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn pass_through_and_zero_weights() {
        let y = spec(16, rough);
        let mut one_hot = Array2::zeros((y.num_bins(), 16));
        one_hot.column_mut(15).fill(c(1.0, 0.0));
        let out = apply_beamformer(&y, &BeamformerWeights::new(one_hot)).unwrap();
        assert_eq!(out.data().index_axis(Axis(0), 0), y.data().index_axis(Axis(0), 15));
        let zero = apply_beamformer(&y, &BeamformerWeights::new(Array2::zeros((y.num_bins(), 16)))).unwrap();
        assert!(zero.data().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn silent_input_is_degenerate() {
        let y = spec(2, |_, _, _| c(0.0, 0.0));
        let scm = batch_scm(&y, &TfMask::constant(&y, 0.5).unwrap()).unwrap();
        assert!(matches!(mvdr_weights(&scm, 1), Err(Error::DegenerateMasks { .. })));
    }

    #[test]
    fn invalid_reference() {
        let scm = ScmPair::<f64>::zeros(2, 1);
        assert!(matches!(mvdr_weights(&scm, 0), Err(Error::InvalidChannel { .. })));
        assert!(matches!(mvdr_weights(&scm, 3), Err(Error::InvalidChannel { .. })));
    }

    #[test]
    fn sweep_over_identical_channels_ties_to_first() {
        let y = spec(3, |_, t, f| rough(0, t, f));
        let mask = TfMask::new(Array3::from_shape_fn(y.data().dim(), |(_, t, f)| ((t + f) % 5) as f64 / 4.0)).unwrap();
        let result = reference_sweep(&y, &mask, |_, out| {
            Ok(out.data().iter().map(|v| v.norm_sqr()).sum::<f64>())
        })
        .unwrap();
        assert_eq!(result.best, 1);
        let first = result.scores[0];
        assert!(result.scores.iter().all(|s| (s - first).abs() <= 1e-9 * first.abs()));
    }

    #[test]
    fn single_channel_sweep() {
        let y = spec(1, rough);
        let mask = TfMask::constant(&y, 0.7).unwrap();
        let result = reference_sweep(&y, &mask, |_, _| Ok(1.0)).unwrap();
        assert_eq!(result.scores.len(), 1);
        assert_eq!(result.best, 1);
    }
}
