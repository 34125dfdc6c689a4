//! Multichannel STFT analysis and overlap-add synthesis.
//!
//! Frames are laid out so that every input sample is covered by the full
//! overlap of the window: the signal is zero-padded by `n_fft - hop` samples at
//! both ends before framing, and [`istft`] trims the padding again. Bins run
//! over `0..=n_fft/2` of the forward transform `Σ x[n] e^{-j2πfn/N}`.

use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_SAMPLE_RATE: f64 = 16_000.0;
pub const DEFAULT_N_FFT: usize = 512;
pub const DEFAULT_HOP: usize = 256;

/// Time-domain multichannel signal, `channels × samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal<T> {
    samples: Array2<T>,
    sample_rate: f64,
}

impl<T: Real> TimeSignal<T> {
    pub fn new(samples: Array2<T>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::InvalidSignal(format!("sample rate {sample_rate} must be positive")));
        }
        if samples.nrows() == 0 {
            return Err(Error::InvalidSignal("signal has no channels".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn from_channels(channels: Vec<Vec<T>>, sample_rate: f64) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidSignal("channels differ in length".into()));
        }
        let k = channels.len();
        let flat: Vec<T> = channels.into_iter().flatten().collect();
        let samples = Array2::from_shape_vec((k, len), flat)
            .map_err(|e| Error::InvalidSignal(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn mono(samples: Vec<T>, sample_rate: f64) -> Result<Self> {
        Self::from_channels(vec![samples], sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: f64) -> Result<Self> {
        Self::new(Array2::zeros((channels, len)), sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn samples(&self) -> ArrayView2<'_, T> {
        self.samples.view()
    }

    pub fn samples_mut(&mut self) -> &mut Array2<T> {
        &mut self.samples
    }

    pub fn into_samples(self) -> Array2<T> {
        self.samples
    }

    pub fn channel(&self, k: usize) -> ArrayView1<'_, T> {
        self.samples.row(k)
    }

    /// Copies out the given (0-based) channels.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        for &k in channels {
            if k >= self.num_channels() {
                return Err(Error::InvalidChannel {
                    channel: k + 1,
                    channels: self.num_channels(),
                });
            }
        }
        Self::new(self.samples.select(Axis(0), channels), self.sample_rate)
    }

    /// Mean power over the given (0-based) channels.
    pub fn mean_power(&self, channels: &[usize]) -> T {
        if channels.is_empty() || self.is_empty() {
            return T::zero();
        }
        let total: T = channels
            .iter()
            .map(|&k| self.samples.row(k).iter().map(|&x| x * x).sum::<T>())
            .sum();
        total / T::from_usize_lossy(channels.len() * self.len())
    }

    pub fn scaled(&self, gain: T) -> Self {
        Self {
            samples: &self.samples * gain,
            sample_rate: self.sample_rate,
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        if self.samples.dim() != other.samples.dim() {
            return Err(Error::DimensionMismatch(format!(
                "signals are {:?} and {:?}",
                self.samples.dim(),
                other.samples.dim()
            )));
        }
        Ok(Self {
            samples: &self.samples + &other.samples,
            sample_rate: self.sample_rate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    #[default]
    SqrtHann,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients<T: Real>(self, n: usize) -> Vec<T> {
        let nf = T::from_usize_lossy(n);
        (0..n)
            .map(|i| {
                let phase = T::TAU() * T::from_usize_lossy(i) / nf;
                let hann = T::lit(0.5) * (T::one() - phase.cos());
                match self {
                    WindowKind::Hann => hann,
                    WindowKind::SqrtHann => hann.max(T::zero()).sqrt(),
                    WindowKind::Rectangular => T::one(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub analysis_window: WindowKind,
    pub synthesis_window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: DEFAULT_N_FFT,
            hop: DEFAULT_HOP,
            analysis_window: WindowKind::SqrtHann,
            synthesis_window: WindowKind::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        Self {
            n_fft,
            hop,
            ..Self::default()
        }
    }

    pub fn with_windows(mut self, analysis: WindowKind, synthesis: WindowKind) -> Self {
        self.analysis_window = analysis;
        self.synthesis_window = synthesis;
        self
    }

    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || !self.n_fft.is_power_of_two() {
            return Err(Error::InvalidStft(format!("n_fft {} is not a power of two", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidStft(format!(
                "hop {} must be in 1..={}",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    fn pad(&self) -> usize {
        self.n_fft - self.hop
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        // the last frame must end at or after pad + len + pad
        let covered = len + 2 * self.pad();
        if covered <= self.n_fft {
            1
        } else {
            (covered - self.n_fft).div_ceil(self.hop) + 1
        }
    }

    /// Overlap-add normalizer `Σ_m w_a w_s` at each phase modulo hop, if constant.
    fn cola_gain<T: Real>(&self) -> Result<T> {
        let wa: Vec<T> = self.analysis_window.coefficients(self.n_fft);
        let ws: Vec<T> = self.synthesis_window.coefficients(self.n_fft);
        let sums: Vec<T> = (0..self.hop)
            .map(|phase| {
                (phase..self.n_fft)
                    .step_by(self.hop)
                    .map(|i| wa[i] * ws[i])
                    .sum()
            })
            .collect();
        let first = sums[0];
        let tol = T::lit(1e-6) * first.abs();
        if !(first > T::zero()) || sums.iter().any(|&s| (s - first).abs() > tol) {
            return Err(Error::NotCola { hop: self.hop });
        }
        Ok(first)
    }
}

/// Complex STFT tensor indexed `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSpectrogram<T> {
    data: Array3<Complex<T>>,
    config: StftConfig,
    sample_rate: f64,
    signal_len: usize,
}

impl<T: Real> MultichannelSpectrogram<T> {
    /// Wraps raw data; the frame/bin counts must match what [`stft`] would produce.
    pub fn from_data(
        data: Array3<Complex<T>>,
        config: StftConfig,
        sample_rate: f64,
        signal_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        let (_, frames, bins) = data.dim();
        if bins != config.num_bins() || frames != config.num_frames(signal_len) || data.dim().0 == 0 {
            return Err(Error::DimensionMismatch(format!(
                "spectrogram {:?} does not match n_fft {} / hop {} for {} samples",
                data.dim(),
                config.n_fft,
                config.hop,
                signal_len
            )));
        }
        Ok(Self {
            data,
            config,
            sample_rate,
            signal_len,
        })
    }

    /// Same framing as `self` with different data (e.g. a beamformer output).
    pub fn with_data(&self, data: Array3<Complex<T>>) -> Result<Self> {
        Self::from_data(data, self.config, self.sample_rate, self.signal_len)
    }

    pub fn data(&self) -> &Array3<Complex<T>> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<Complex<T>> {
        &mut self.data
    }

    pub fn num_channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_bins(&self) -> usize {
        self.data.dim().2
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn n_fft(&self) -> usize {
        self.config.n_fft
    }

    pub fn hop(&self) -> usize {
        self.config.hop
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    /// Frequency in Hz of bin `f`.
    pub fn bin_frequency(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate / self.config.n_fft as f64
    }

    /// One frame as `[channel][bin]`.
    pub fn frame(&self, t: usize) -> ArrayView2<'_, Complex<T>> {
        self.data.index_axis(Axis(1), t)
    }

    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        for &k in channels {
            if k >= self.num_channels() {
                return Err(Error::InvalidChannel {
                    channel: k + 1,
                    channels: self.num_channels(),
                });
            }
        }
        self.with_data(self.data.select(Axis(0), channels))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.data.dim() == other.data.dim()
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.data.mapv_inplace(|x| x * s);
        out
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "spectrograms are {:?} and {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        self.with_data(&self.data + &other.data)
    }
}

/// Reusable analysis/synthesis engine with cached windows and FFT plans.
pub struct Stft<T: Real> {
    config: StftConfig,
    analysis: Vec<T>,
    synthesis: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> Stft<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            analysis: config.analysis_window.coefficients(config.n_fft),
            synthesis: config.synthesis_window.coefficients(config.n_fft),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn analyze(&self, signal: &TimeSignal<T>) -> Result<MultichannelSpectrogram<T>> {
        let cfg = &self.config;
        let len = signal.len();
        if len == 0 {
            return Err(Error::EmptySignal);
        }
        if len < cfg.n_fft {
            return Err(Error::SignalTooShort { len, n_fft: cfg.n_fft });
        }
        let frames = cfg.num_frames(len);
        let bins = cfg.num_bins();
        let pad = cfg.pad();
        let mut data = Array3::zeros((signal.num_channels(), frames, bins));
        let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.n_fft];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.forward.get_inplace_scratch_len()];
        for (k, channel) in signal.samples().outer_iter().enumerate() {
            for t in 0..frames {
                let start = (t * cfg.hop) as isize - pad as isize;
                for (i, slot) in buf.iter_mut().enumerate() {
                    let n = start + i as isize;
                    let x = if n >= 0 && (n as usize) < len {
                        channel[n as usize]
                    } else {
                        T::zero()
                    };
                    *slot = Complex::new(x * self.analysis[i], T::zero());
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                for (f, &v) in buf[..bins].iter().enumerate() {
                    data[[k, t, f]] = v;
                }
            }
        }
        MultichannelSpectrogram::from_data(data, *cfg, signal.sample_rate(), len)
    }

    pub fn synthesize(&self, spec: &MultichannelSpectrogram<T>) -> Result<TimeSignal<T>> {
        let cfg = &self.config;
        if spec.config.n_fft != cfg.n_fft || spec.config.hop != cfg.hop {
            return Err(Error::DimensionMismatch(format!(
                "spectrogram framing {}/{} differs from engine {}/{}",
                spec.config.n_fft, spec.config.hop, cfg.n_fft, cfg.hop
            )));
        }
        let gain: T = cfg.cola_gain()?;
        let n = cfg.n_fft;
        let pad = cfg.pad();
        let frames = spec.num_frames();
        let len = spec.signal_len;
        let padded = (frames - 1) * cfg.hop + n;
        let scale = T::one() / (T::from_usize_lossy(n) * gain);
        let mut out = Array2::<T>::zeros((spec.num_channels(), len));
        let mut acc = vec![T::zero(); padded];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.inverse.get_inplace_scratch_len()];
        for (k, channel) in spec.data.outer_iter().enumerate() {
            acc.iter_mut().for_each(|x| *x = T::zero());
            for (t, frame) in channel.outer_iter().enumerate() {
                for f in 0..=n / 2 {
                    buf[f] = frame[f];
                }
                for f in 1..n / 2 {
                    buf[n - f] = frame[f].conj();
                }
                self.inverse.process_with_scratch(&mut buf, &mut scratch);
                let start = t * cfg.hop;
                for i in 0..n {
                    acc[start + i] = acc[start + i] + buf[i].re * self.synthesis[i] * scale;
                }
            }
            for (dst, &src) in out.row_mut(k).iter_mut().zip(&acc[pad..pad + len]) {
                *dst = src;
            }
        }
        TimeSignal::new(out, spec.sample_rate)
    }
}

/// STFT of every channel of `signal`.
pub fn stft<T: Real>(signal: &TimeSignal<T>, config: &StftConfig) -> Result<MultichannelSpectrogram<T>> {
    Stft::new(*config)?.analyze(signal)
}

/// Overlap-add inverse of [`stft`].
pub fn istft<T: Real>(spec: &MultichannelSpectrogram<T>) -> Result<TimeSignal<T>> {
    Stft::new(spec.config)?.synthesize(spec)
}
