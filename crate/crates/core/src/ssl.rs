//! Direction-of-arrival estimation with a noise-whitened steered response
//! power driven by mask-weighted online spatial covariance matrices.
//!
//! Each frame updates speech and noise covariances recursively, whitens the
//! speech covariance by the (diagonally loaded) inverse noise covariance,
//! applies the phase transform to the result and searches a direction grid
//! for the largest steered power. Without the phase transform the energy-
//! weighted sum is pulled away from a strong directional noise source.
//!
//! Phase convention: the forward STFT uses `e^{-jωn}`, so a plane wave from
//! unit direction `θ` gives `φ_uv ∝ e^{+jω (r_u - r_v)·θ / c}`. The steering
//! weight `W_uv` carries the same sign, and the power therefore pairs `W_uv`
//! with `φ_vu`: `E(θ) = Re Σ_u Σ_v Σ_f W_uv(f, θ) φ_vu(f)`, which equals
//! `Re Σ_f a(θ)ᴴ P a(θ)` for the plane-wave steering vector `a`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{circular_diff_deg, wrap_degrees, Vec3};
use crate::linalg::{loaded_inverse_product, CMatrix};
use crate::masking::TfMask;
use crate::scalar::Real;
use crate::stft::MultichannelSpectrogram;
use crate::SPEED_OF_SOUND;

/// Initial noise covariance is this multiple of the identity.
pub const INITIAL_NOISE_LOADING: f64 = 1e-6;

/// Speech and noise spatial covariance matrices, one `K × K` pair per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmPair<T> {
    pub phi_xx: Vec<CMatrix<T>>,
    pub phi_bb: Vec<CMatrix<T>>,
}

impl<T: Real> ScmPair<T> {
    pub fn zeros(channels: usize, bins: usize) -> Self {
        Self {
            phi_xx: vec![CMatrix::zeros(channels); bins],
            phi_bb: vec![CMatrix::zeros(channels); bins],
        }
    }

    pub fn num_bins(&self) -> usize {
        self.phi_xx.len()
    }

    pub fn num_channels(&self) -> usize {
        self.phi_xx.first().map_or(0, CMatrix::dim)
    }
}

/// Exponentially recursive covariance estimate with adaptation rate `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineScm<T> {
    scm: ScmPair<T>,
    alpha: T,
}

impl<T: Real> OnlineScm<T> {
    /// Starts from `Φ_XX = 0` and `Φ_BB = ε·I`.
    pub fn new(channels: usize, bins: usize, alpha: T) -> Result<Self> {
        let mut scm = ScmPair::zeros(channels, bins);
        for m in &mut scm.phi_bb {
            *m = CMatrix::scaled_identity(channels, T::lit(INITIAL_NOISE_LOADING));
        }
        Self::from_state(scm, alpha)
    }

    pub fn from_state(scm: ScmPair<T>, alpha: T) -> Result<Self> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::InvalidScenario(format!("adaptation rate {alpha} outside [0, 1]")));
        }
        Ok(Self { scm, alpha })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn state(&self) -> &ScmPair<T> {
        &self.scm
    }

    pub fn into_state(self) -> ScmPair<T> {
        self.scm
    }

    /// One recursion step. `frame` is `[channel][bin]`, `mask` holds the
    /// pooled mask for the same bins.
    pub fn update(&mut self, frame: ArrayView2<'_, Complex<T>>, mask: ArrayView1<'_, T>) -> Result<()> {
        let (k, bins) = frame.dim();
        if k != self.scm.num_channels() || bins != self.scm.num_bins() || mask.len() != bins {
            return Err(Error::DimensionMismatch(format!(
                "frame {:?} with {} mask bins vs state {} channels x {} bins",
                frame.dim(),
                mask.len(),
                self.scm.num_channels(),
                self.scm.num_bins()
            )));
        }
        let keep = T::one() - self.alpha;
        let mut y = vec![Complex::new(T::zero(), T::zero()); k];
        for f in 0..bins {
            for (u, slot) in y.iter_mut().enumerate() {
                *slot = frame[[u, f]];
            }
            let m = mask[f];
            let xx = &mut self.scm.phi_xx[f];
            xx.scale_mut(keep);
            xx.add_outer(&y, self.alpha * m);
            let bb = &mut self.scm.phi_bb[f];
            bb.scale_mut(keep);
            bb.add_outer(&y, self.alpha * (T::one() - m));
        }
        Ok(())
    }
}

/// `P(f) = loaded(Φ_BB(f))⁻¹ Φ_XX(f)` for every bin.
pub fn whiten<T: Real>(scm: &ScmPair<T>) -> Result<Vec<CMatrix<T>>> {
    scm.phi_bb
        .iter()
        .zip(&scm.phi_xx)
        .map(|(bb, xx)| loaded_inverse_product(bb, xx))
        .collect()
}

/// Phase transform: scales every entry to unit modulus (zeros stay zero),
/// so each bin and pair contributes by phase alone.
pub fn phase_transform<T: Real>(p: &mut [CMatrix<T>]) {
    for m in p {
        let k = m.dim();
        for u in 0..k {
            for v in 0..k {
                let z = m[(u, v)];
                let n = z.norm();
                m[(u, v)] = if n > T::zero() { z / n } else { Complex::new(T::zero(), T::zero()) };
            }
        }
    }
}

/// `exp(j (2π f / N) (fs / c) (r_u - r_v)·θ)`.
pub fn steering_weight<T: Real>(
    bin: usize,
    theta: Vec3<T>,
    r_u: Vec3<T>,
    r_v: Vec3<T>,
    sample_rate: f64,
    n_fft: usize,
) -> Complex<T> {
    let tdoa_samples = T::lit(sample_rate / SPEED_OF_SOUND) * (r_u - r_v).dot(theta);
    let phase = T::TAU() * T::from_usize_lossy(bin) / T::from_usize_lossy(n_fft) * tdoa_samples;
    Complex::from_polar(T::one(), phase)
}

/// Steered power of whitened matrices `p` (one per entry of `bins`) toward
/// `theta`, real part of the pair/bin sum.
pub fn srp_power<T: Real>(
    p: &[CMatrix<T>],
    bins: &[usize],
    theta: Vec3<T>,
    mic_positions: &[Vec3<T>],
    sample_rate: f64,
    n_fft: usize,
) -> T {
    srp_power_complex(p, bins, theta, mic_positions, sample_rate, n_fft).re
}

/// The raw (complex) triple sum behind [`srp_power`].
pub fn srp_power_complex<T: Real>(
    p: &[CMatrix<T>],
    bins: &[usize],
    theta: Vec3<T>,
    mic_positions: &[Vec3<T>],
    sample_rate: f64,
    n_fft: usize,
) -> Complex<T> {
    let k = mic_positions.len();
    let mut acc = Complex::new(T::zero(), T::zero());
    for (m, &f) in p.iter().zip(bins) {
        for u in 0..k {
            for v in 0..k {
                let w = steering_weight(f, theta, mic_positions[u], mic_positions[v], sample_rate, n_fft);
                acc = acc + w * m[(v, u)];
            }
        }
    }
    acc
}

/// Candidate directions for the DoA search.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaGrid<T> {
    directions: Vec<Vec3<T>>,
    azimuths_deg: Vec<T>,
    resolution_deg: T,
}

impl<T: Real> DoaGrid<T> {
    /// Horizontal-plane azimuths `0, res, 2·res, …` below 360°.
    pub fn horizontal(resolution_deg: T) -> Result<Self> {
        if !(resolution_deg > T::zero()) || resolution_deg > T::lit(360.0) {
            return Err(Error::InvalidScenario(format!(
                "grid resolution {resolution_deg} deg outside (0, 360]"
            )));
        }
        let count = (T::lit(360.0) / resolution_deg)
            .ceil()
            .to_usize()
            .unwrap_or(1)
            .max(1);
        let azimuths_deg: Vec<T> = (0..count)
            .map(|i| T::from_usize_lossy(i) * resolution_deg)
            .filter(|&a| a < T::lit(360.0))
            .collect();
        let directions = azimuths_deg.iter().map(|&a| Vec3::from_azimuth_deg(a)).collect();
        Ok(Self {
            directions,
            azimuths_deg,
            resolution_deg,
        })
    }

    pub fn directions(&self) -> &[Vec3<T>] {
        &self.directions
    }

    pub fn azimuths_deg(&self) -> &[T] {
        &self.azimuths_deg
    }

    pub fn resolution_deg(&self) -> T {
        self.resolution_deg
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    /// Azimuth of the power maximum in each frame, degrees in `[0, 360)`.
    pub per_frame_deg: Vec<f64>,
    /// Circular median of `per_frame_deg`.
    pub median_deg: f64,
    /// Maximum steered power in each frame.
    pub power_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub alpha: f64,
    pub grid_resolution_deg: f64,
    /// 1-based channels used for localization.
    pub subset: Vec<usize>,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Apply [`phase_transform`] to the whitened matrices before steering.
    pub phase_transform: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            grid_resolution_deg: 1.0,
            subset: (1..=8).collect(),
            f_min_hz: 100.0,
            f_max_hz: 7600.0,
            phase_transform: true,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidScenario(format!("forgetting factor {} outside [0, 1]", self.alpha)));
        }
        if !(self.grid_resolution_deg > 0.0 && self.grid_resolution_deg <= 360.0) {
            return Err(Error::InvalidScenario(format!(
                "grid resolution {} must be in (0, 360]",
                self.grid_resolution_deg
            )));
        }
        if self.subset.len() < 2 {
            return Err(Error::SubsetTooSmall(self.subset.len()));
        }
        if self.subset.contains(&0) {
            return Err(Error::InvalidChannel {
                channel: 0,
                channels: self.subset.len(),
            });
        }
        if !(self.f_min_hz >= 0.0 && self.f_min_hz < self.f_max_hz) {
            return Err(Error::InvalidScenario(format!(
                "localization band {}..{} Hz is empty",
                self.f_min_hz, self.f_max_hz
            )));
        }
        Ok(())
    }

    fn band_bins(&self, n_fft: usize, sample_rate: f64) -> Vec<usize> {
        (0..=n_fft / 2)
            .filter(|&f| {
                let hz = f as f64 * sample_rate / n_fft as f64;
                hz >= self.f_min_hz && hz <= self.f_max_hz
            })
            .collect()
    }
}

/// Precomputed `[Re W, -Im W]` rows per grid direction for every mic pair
/// `u < v` and band bin, so a frame's powers are one matrix product.
struct SteeringTable<T> {
    weights: Array2<T>,
}

impl<T: Real> SteeringTable<T> {
    fn new(grid: &DoaGrid<T>, mics: &[Vec3<T>], bins: &[usize], sample_rate: f64, n_fft: usize) -> Self {
        let pairs = pairs(mics.len());
        let cols = 2 * pairs.len() * bins.len();
        let mut weights = Array2::zeros((grid.len(), cols));
        for (g, &theta) in grid.directions().iter().enumerate() {
            let mut row = weights.row_mut(g);
            let mut c = 0;
            for &(u, v) in &pairs {
                for &f in bins {
                    let w = steering_weight(f, theta, mics[u], mics[v], sample_rate, n_fft);
                    row[c] = w.re;
                    row[c + 1] = -w.im;
                    c += 2;
                }
            }
        }
        Self { weights }
    }
}

fn pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|u| ((u + 1)..k).map(move |v| (u, v))).collect()
}

/// Fills `out` with `[Re Q, Im Q]` for `Q_uv = φ_vu + conj(φ_uv)`, matching
/// [`SteeringTable`]; returns the direction-independent diagonal term.
fn pair_features<T: Real>(p: &[CMatrix<T>], k: usize, out: &mut [T]) -> T {
    let mut c = 0;
    for (u, v) in pairs(k) {
        for m in p {
            let q = m[(v, u)] + m[(u, v)].conj();
            out[c] = q.re;
            out[c + 1] = q.im;
            c += 2;
        }
    }
    p.iter()
        .map(|m| (0..k).map(|u| m[(u, u)].re).sum::<T>())
        .sum()
}

/// Localizes the dominant source in `spec`.
///
/// `mic_positions` covers every channel of `spec`; `config.subset` selects the
/// channels that enter the covariances. The mask is pooled over all of its
/// channels before use.
pub fn estimate_doa<T: Real>(
    spec: &MultichannelSpectrogram<T>,
    mask: &TfMask<T>,
    grid: &DoaGrid<T>,
    mic_positions: &[Vec3<T>],
    config: &SslConfig,
) -> Result<DoaEstimate> {
    if config.subset.len() < 2 {
        return Err(Error::SubsetTooSmall(config.subset.len()));
    }
    let k_all = spec.num_channels();
    if mic_positions.len() != k_all {
        return Err(Error::DimensionMismatch(format!(
            "{} microphone positions for {} channels",
            mic_positions.len(),
            k_all
        )));
    }
    if mask.dim().1 != spec.num_frames() || mask.dim().2 != spec.num_bins() {
        return Err(Error::DimensionMismatch(format!(
            "mask {:?} vs spectrogram {:?}",
            mask.dim(),
            spec.data().dim()
        )));
    }
    let subset: Vec<usize> = config
        .subset
        .iter()
        .map(|&ch| {
            if ch == 0 || ch > k_all {
                Err(Error::InvalidChannel { channel: ch, channels: k_all })
            } else {
                Ok(ch - 1)
            }
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::Empty("direction grid"));
    }

    let bins = config.band_bins(spec.n_fft(), spec.sample_rate());
    if bins.is_empty() {
        return Err(Error::InvalidScenario("localization band contains no bins".into()));
    }
    let mics: Vec<Vec3<T>> = subset.iter().map(|&k| mic_positions[k]).collect();
    let k = mics.len();
    let table = SteeringTable::new(grid, &mics, &bins, spec.sample_rate(), spec.n_fft());
    let global = mask.global();
    let mut scm = OnlineScm::new(k, bins.len(), T::lit(config.alpha))?;

    let frames = spec.num_frames();
    let feature_len = table.weights.ncols();
    const CHUNK: usize = 64;
    let mut per_frame_deg = Vec::with_capacity(frames);
    let mut power_trace = Vec::with_capacity(frames);
    let mut frame_buf = Array2::<Complex<T>>::zeros((k, bins.len()));
    let mut mask_buf = ndarray::Array1::<T>::zeros(bins.len());

    let mut start = 0;
    while start < frames {
        let end = (start + CHUNK).min(frames);
        let mut features = Array2::<T>::zeros((feature_len, end - start));
        let mut diagonal = vec![T::zero(); end - start];
        let mut col = vec![T::zero(); feature_len];
        for t in start..end {
            let frame = spec.frame(t);
            for (i, &ch) in subset.iter().enumerate() {
                for (j, &f) in bins.iter().enumerate() {
                    frame_buf[[i, j]] = frame[[ch, f]];
                }
            }
            for (j, &f) in bins.iter().enumerate() {
                mask_buf[j] = global[[t, f]];
            }
            scm.update(frame_buf.view(), mask_buf.view())?;
            let mut p = whiten(scm.state())?;
            if config.phase_transform {
                phase_transform(&mut p);
            }
            diagonal[t - start] = pair_features(&p, k, &mut col);
            features.column_mut(t - start).assign(&ArrayView1::from(&col[..]));
        }
        let powers = table.weights.dot(&features);
        for (j, column) in powers.columns().into_iter().enumerate() {
            let (best, best_power) = column
                .iter()
                .enumerate()
                .fold((0usize, T::neg_infinity()), |acc, (g, &e)| if e > acc.1 { (g, e) } else { acc });
            per_frame_deg.push(grid.azimuths_deg()[best].as_f64());
            power_trace.push((best_power + diagonal[j]).as_f64());
        }
        start = end;
    }

    Ok(DoaEstimate {
        median_deg: circular_median_deg(&per_frame_deg),
        per_frame_deg,
        power_trace,
    })
}

/// Median of azimuths unwrapped around their circular mean; with an even
/// count the lower of the two middle values. Returns one of the inputs.
pub fn circular_median_deg(azimuths: &[f64]) -> f64 {
    if azimuths.is_empty() {
        return 0.0;
    }
    let (s, c) = azimuths.iter().fold((0.0, 0.0), |(s, c), a: &f64| {
        let r = a.to_radians();
        (s + r.sin(), c + r.cos())
    });
    let mean = if s.hypot(c) > 1e-12 * azimuths.len() as f64 {
        s.atan2(c).to_degrees()
    } else {
        0.0
    };
    let mut order: Vec<(f64, f64)> = azimuths
        .iter()
        .map(|&a| (circular_diff_deg(a, mean), a))
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0));
    wrap_degrees(order[(order.len() - 1) / 2].1)
}
