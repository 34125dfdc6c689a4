//! Free-field scene simulation: point-source propagation to arbitrary
//! microphone positions, global-gain SNR mixing and bundled test signals.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::kinematics::IkConfig;
use crate::scalar::Real;
use crate::ssl::SslConfig;
use crate::stft::{StftConfig, TimeSignal, DEFAULT_SAMPLE_RATE};
use crate::SPEED_OF_SOUND;

/// Channels (0-based) on which the mixing gain is normalized: the first
/// sub-array, which sits on the arm base and does not move with the pose.
pub const REFERENCE_CHANNELS: [usize; 4] = [0, 1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Speech,
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSource<T> {
    pub position: Vec3<T>,
    pub signal: TimeSignal<T>,
    pub kind: SourceKind,
}

impl<T: Real> PointSource<T> {
    pub fn new(position: Vec3<T>, signal: TimeSignal<T>, kind: SourceKind) -> Result<Self> {
        if signal.num_channels() != 1 {
            return Err(Error::InvalidSignal(format!(
                "point source signal must be mono, got {} channels",
                signal.num_channels()
            )));
        }
        Ok(Self { position, signal, kind })
    }
}

/// Renders `source` at each microphone: a fractional delay of `‖r_k − p‖ / c`
/// applied as a phase ramp on a zero-padded FFT, and `1 / ‖r_k − p‖` gain.
/// Output has the same length as the source signal.
pub fn propagate<T: Real>(source: &PointSource<T>, mic_positions: &[Vec3<T>]) -> Result<TimeSignal<T>> {
    let fs = source.signal.sample_rate();
    let len = source.signal.len();
    if len == 0 {
        return Err(Error::EmptySignal);
    }
    let mut distances = Vec::with_capacity(mic_positions.len());
    for (k, &mic) in mic_positions.iter().enumerate() {
        let d = mic.distance(source.position);
        if !(d > T::zero()) {
            return Err(Error::ZeroDistance { mic: k + 1 });
        }
        distances.push(d);
    }
    let max_delay = distances.iter().fold(0.0f64, |m, d| m.max(d.as_f64() / SPEED_OF_SOUND * fs));
    // room for the longest delay plus a tail so the circular shift never wraps
    let n = (len + max_delay.ceil() as usize + 64).next_power_of_two();

    let mut planner = FftPlanner::<T>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse: Arc<dyn Fft<T>> = planner.plan_fft_inverse(n);
    let zero = Complex::new(T::zero(), T::zero());
    let mut spectrum = vec![zero; n];
    for (slot, &x) in spectrum.iter_mut().zip(source.signal.channel(0).iter()) {
        *slot = Complex::new(x, T::zero());
    }
    forward.process(&mut spectrum);

    let half = n / 2;
    let scale = T::one() / T::from_usize_lossy(n);
    let mut out = Array2::zeros((mic_positions.len(), len));
    let mut buf = vec![zero; n];
    let mut scratch = vec![zero; inverse.get_inplace_scratch_len()];
    for (k, &d) in distances.iter().enumerate() {
        let delay = d / T::lit(SPEED_OF_SOUND) * T::lit(fs);
        let gain = scale / d;
        let step = -T::TAU() * delay / T::from_usize_lossy(n);
        buf[0] = spectrum[0] * gain;
        for f in 1..half {
            let phase = step * T::from_usize_lossy(f);
            let v = spectrum[f] * Complex::from_polar(gain, phase);
            buf[f] = v;
            buf[n - f] = v.conj();
        }
        // the Nyquist bin must stay real for a real output
        buf[half] = spectrum[half] * (gain * (step * T::from_usize_lossy(half)).cos());
        inverse.process_with_scratch(&mut buf, &mut scratch);
        for (dst, src) in out.row_mut(k).iter_mut().zip(&buf[..len]) {
            *dst = src.re;
        }
    }
    TimeSignal::new(out, fs)
}

/// Global noise gain `g` such that speech power over noise power, both
/// averaged over `reference_channels` (0-based), is `snr_db` after scaling
/// the noise by `g`.
pub fn noise_gain<T: Real>(
    speech: &TimeSignal<T>,
    noise: &TimeSignal<T>,
    snr_db: T,
    reference_channels: &[usize],
) -> Result<T> {
    check_pair(speech, noise)?;
    if reference_channels.is_empty() {
        return Err(Error::Empty("reference channel set"));
    }
    if let Some(&bad) = reference_channels.iter().find(|&&c| c >= speech.num_channels()) {
        return Err(Error::InvalidChannel {
            channel: bad + 1,
            channels: speech.num_channels(),
        });
    }
    let ps = speech.mean_power(reference_channels);
    let pn = noise.mean_power(reference_channels);
    if !(ps > T::zero()) {
        return Err(Error::Silent("speech on the reference channels"));
    }
    if !(pn > T::zero()) {
        return Err(Error::Silent("noise on the reference channels"));
    }
    Ok((ps / pn).sqrt() * T::lit(10.0).powf(-snr_db / T::lit(20.0)))
}

fn check_pair<T: Real>(speech: &TimeSignal<T>, noise: &TimeSignal<T>) -> Result<()> {
    if speech.num_channels() != noise.num_channels() || speech.len() != noise.len() {
        return Err(Error::DimensionMismatch(format!(
            "speech is {}x{}, noise is {}x{}",
            speech.num_channels(),
            speech.len(),
            noise.num_channels(),
            noise.len()
        )));
    }
    if speech.sample_rate() != noise.sample_rate() {
        return Err(Error::DimensionMismatch(format!(
            "speech at {} Hz, noise at {} Hz",
            speech.sample_rate(),
            noise.sample_rate()
        )));
    }
    Ok(())
}

/// Speech image, scaled noise image and their sum, kept apart so oracle
/// masks and SI-SDR references are available.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture<T> {
    pub speech: TimeSignal<T>,
    pub noise: TimeSignal<T>,
    pub mixture: TimeSignal<T>,
    pub gain: T,
}

impl<T: Real> Mixture<T> {
    /// Mixes with an externally fixed noise gain (matched-gain comparisons).
    pub fn with_gain(speech: TimeSignal<T>, noise: TimeSignal<T>, gain: T) -> Result<Self> {
        check_pair(&speech, &noise)?;
        if !(gain >= T::zero()) || !gain.is_finite() {
            return Err(Error::InvalidSignal(format!("noise gain {gain} must be finite and >= 0")));
        }
        let noise = noise.scaled(gain);
        let mixture = speech.try_add(&noise)?;
        Ok(Self {
            speech,
            noise,
            mixture,
            gain,
        })
    }
}

/// Scales the noise by one global gain so that the SNR over
/// `reference_channels` equals `snr_db`, then adds it to the speech.
pub fn mix_at_snr<T: Real>(
    speech: TimeSignal<T>,
    noise: TimeSignal<T>,
    snr_db: T,
    reference_channels: &[usize],
) -> Result<Mixture<T>> {
    let gain = noise_gain(&speech, &noise, snr_db, reference_channels)?;
    Mixture::with_gain(speech, noise, gain)
}

/// SNR in dB over the given channels (0-based).
pub fn measured_snr_db<T: Real>(speech: &TimeSignal<T>, noise: &TimeSignal<T>, channels: &[usize]) -> T {
    T::lit(10.0) * (speech.mean_power(channels) / noise.mean_power(channels)).log10()
}

// ---- synthetic material ------------------------------------------------------

/// Noise textures loosely modelled on industrial noise recordings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    VacuumPump,
    Drill,
    Engine,
    Electric,
    CompressedAir,
    Mine,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::VacuumPump,
        NoiseKind::Drill,
        NoiseKind::Engine,
        NoiseKind::Electric,
        NoiseKind::CompressedAir,
        NoiseKind::Mine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::VacuumPump => "vacuum-pump",
            NoiseKind::Drill => "drill",
            NoiseKind::Engine => "engine",
            NoiseKind::Electric => "electric",
            NoiseKind::CompressedAir => "compressed-air",
            NoiseKind::Mine => "mine",
        }
    }

    fn salt(self) -> u64 {
        self as u64 + 1
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidScenario(format!("unknown noise kind {s:?}")))
    }
}

/// splitmix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Default microphone self-noise level; see [`NoiseSection::sensor_noise_db`].
pub const DEFAULT_SENSOR_NOISE_DB: f64 = -30.0;

/// Independent white Gaussian noise per channel with standard deviation
/// `sigma`. Channel `k` always draws the same stream for a given seed, so
/// geometries sharing a channel index share its self-noise.
pub fn sensor_noise(channels: usize, len: usize, sigma: f64, fs: f64, seed: u64) -> Result<TimeSignal<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidSignal(format!("sensor noise level {sigma} must be finite and >= 0")));
    }
    let rows = (0..channels)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5E_4500 + k as u64));
            (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
                .collect()
        })
        .collect();
    TimeSignal::from_channels(rows, fs)
}

/// White Gaussian noise shaped by a magnitude response `shape(freq_hz)`.
fn shaped_noise(rng: &mut ChaCha8Rng, len: usize, fs: f64, shape: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for f in 0..=n / 2 {
        let g = shape(f as f64 * fs / n as f64);
        buf[f] *= g;
        if f > 0 && f < n / 2 {
            buf[n - f] = buf[f].conj();
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf[..len].iter().map(|c| c.re).collect();
    normalize_rms(&mut out, 0.1);
    out
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

/// Speech-shaped noise with a syllabic (3–6 Hz) envelope and short pauses.
pub fn synthetic_speech(len: usize, fs: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EEC));
    // long-term speech spectrum: rise to ~500 Hz, then about -6 dB/octave,
    // with gentle formant-like bumps
    let carrier = shaped_noise(&mut rng, len, fs, |f| {
        let low = (f / 150.0).min(1.0).powi(2);
        let tilt = 1.0 / (1.0 + f / 500.0);
        let formants = 1.0 + 0.6 * (-((f - 700.0) / 250.0).powi(2)).exp() + 0.4 * (-((f - 1800.0) / 400.0).powi(2)).exp();
        low * tilt * formants
    });
    let mut out = Vec::with_capacity(len);
    let mut t = 0usize;
    while t < len {
        // one "syllable": raised-cosine burst, sometimes followed by a pause
        let dur = (fs * (0.12 + 0.18 * rand::RngExt::random::<f64>(&mut rng))) as usize;
        let level = 0.4 + 0.6 * rand::RngExt::random::<f64>(&mut rng);
        for i in 0..dur.min(len - t) {
            let env = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / dur as f64).cos();
            out.push(carrier[t + i] * env * level);
        }
        t += dur.min(len - t);
        if rand::RngExt::random::<f64>(&mut rng) < 0.2 && t < len {
            let pause = ((fs * 0.08) as usize).min(len - t);
            out.extend(std::iter::repeat_n(0.0, pause));
            t += pause;
        }
    }
    normalize_rms(&mut out, 0.1);
    out
}

/// One of the bundled noise textures.
pub fn synthetic_noise(kind: NoiseKind, len: usize, fs: f64, seed: u64) -> Vec<f64> {
    use std::f64::consts::TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, kind.salt()));
    let tone = |f0: f64, harmonics: usize, amp: f64, phase0: f64| {
        move |n: usize| {
            let t = n as f64 / fs;
            (1..=harmonics)
                .map(|h| amp / h as f64 * (TAU * f0 * h as f64 * t + phase0 * h as f64).sin())
                .sum::<f64>()
        }
    };
    let phase: f64 = rand::RngExt::random::<f64>(&mut rng) * TAU;
    let mut out: Vec<f64> = match kind {
        NoiseKind::VacuumPump => {
            let bed = shaped_noise(&mut rng, len, fs, |f| 1.0 / (1.0 + f / 300.0));
            let hum = tone(48.0, 12, 0.08, phase);
            bed.iter().enumerate().map(|(n, b)| b + hum(n)).collect()
        }
        NoiseKind::Drill => {
            let bed = shaped_noise(&mut rng, len, fs, |f| (-((f - 2500.0) / 2000.0).powi(2)).exp() + 0.2);
            let whine = tone(1150.0, 5, 0.05, phase);
            bed.iter()
                .enumerate()
                .map(|(n, b)| (b + whine(n)) * (1.0 + 0.3 * (TAU * 18.0 * n as f64 / fs).sin()))
                .collect()
        }
        NoiseKind::Engine => {
            let bed = shaped_noise(&mut rng, len, fs, |f| 1.0 / (1.0 + (f / 120.0).powi(2)).sqrt() + 0.02);
            let firing = tone(31.0, 20, 0.06, phase);
            bed.iter().enumerate().map(|(n, b)| b + firing(n)).collect()
        }
        NoiseKind::Electric => {
            let bed = shaped_noise(&mut rng, len, fs, |_| 1.0);
            let hum = tone(60.0, 30, 0.2, phase);
            bed.iter().enumerate().map(|(n, b)| 0.4 * b + hum(n)).collect()
        }
        NoiseKind::CompressedAir => shaped_noise(&mut rng, len, fs, |f| (f / 3000.0).min(1.0) + 0.05),
        NoiseKind::Mine => {
            let mut bed = shaped_noise(&mut rng, len, fs, |f| 1.0 / (1.0 + f / 100.0).sqrt());
            // sporadic metallic impacts
            let impacts = (len as f64 / fs * 2.0).ceil() as usize;
            for _ in 0..impacts {
                let at = rand::RngExt::random_range(&mut rng, 0..len);
                let f0 = 800.0 + 2000.0 * rand::RngExt::random::<f64>(&mut rng);
                for (i, slot) in bed[at..].iter_mut().take((fs * 0.15) as usize).enumerate() {
                    let t = i as f64 / fs;
                    *slot += 0.4 * (-t / 0.03).exp() * (TAU * f0 * t).sin();
                }
            }
            bed
        }
    };
    normalize_rms(&mut out, 0.1);
    out
}

// ---- scenario files ------------------------------------------------------------

/// Array geometry used for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    /// Chain posed by localization + IK.
    Optimized,
    Static1,
    Static2,
    Static3,
    /// Free-standing 4-microphone square.
    Static4,
}

impl Geometry {
    pub const ALL: [Geometry; 5] = [
        Geometry::Optimized,
        Geometry::Static1,
        Geometry::Static2,
        Geometry::Static3,
        Geometry::Static4,
    ];
    pub const STATIC: [Geometry; 4] = [Geometry::Static1, Geometry::Static2, Geometry::Static3, Geometry::Static4];

    pub fn name(self) -> &'static str {
        match self {
            Geometry::Optimized => "optimized",
            Geometry::Static1 => "static1",
            Geometry::Static2 => "static2",
            Geometry::Static3 => "static3",
            Geometry::Static4 => "static4",
        }
    }
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Geometry::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidScenario(format!("unknown geometry {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeechSection {
    pub azimuth_deg: f64,
    /// Horizontal distance from the arm base.
    pub distance_m: f64,
    pub height_m: f64,
    /// Mono WAV; synthetic speech is used when absent.
    pub wav: Option<PathBuf>,
}

impl Default for SpeechSection {
    fn default() -> Self {
        Self {
            azimuth_deg: 30.0,
            distance_m: 1.5,
            height_m: 0.15,
            wav: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub azimuth_deg: f64,
    pub distance_m: f64,
    pub height_m: f64,
    pub kind: NoiseKind,
    /// Mono WAV; overrides `kind` when given.
    pub wav: Option<PathBuf>,
    /// Set to false for noiseless runs.
    pub enabled: bool,
    /// Uncorrelated microphone self-noise, in dB relative to the noise
    /// source's level at 1 m. Counted as part of the noise image.
    /// `-inf` disables it.
    pub sensor_noise_db: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            azimuth_deg: 270.0,
            distance_m: 1.5,
            height_m: 0.15,
            kind: NoiseKind::Drill,
            wav: None,
            enabled: true,
            sensor_noise_db: DEFAULT_SENSOR_NOISE_DB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub geometry: Geometry,
    /// Chain description; the bundled arm when absent.
    pub chain: Option<PathBuf>,
    /// MVDR reference channel (1-based) for chain geometries.
    pub reference: usize,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            geometry: Geometry::Optimized,
            chain: None,
            reference: crate::beamform::DEFAULT_REFERENCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicsSection {
    /// Distance kept between the end effector and the speaker.
    pub standoff_m: f64,
    /// Per-axis standard deviation of the simulated face localization.
    pub target_error_m: f64,
    /// Localization errors above this (degrees) are treated as misses.
    pub camera_half_fov_deg: f64,
    pub ik: IkConfig,
}

impl Default for KinematicsSection {
    fn default() -> Self {
        Self {
            standoff_m: 0.3,
            target_error_m: 0.02,
            camera_half_fov_deg: 20.0,
            ik: IkConfig::default(),
        }
    }
}

/// Declarative description of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub snr_db: f64,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub speech: SpeechSection,
    pub noise: NoiseSection,
    pub array: ArraySection,
    pub ssl: SslConfig,
    pub kinematics: KinematicsSection,
    pub stft: StftConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            snr_db: 0.0,
            duration_s: 3.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            speech: SpeechSection::default(),
            noise: NoiseSection::default(),
            array: ArraySection::default(),
            ssl: SslConfig::default(),
            kinematics: KinematicsSection::default(),
            stft: StftConfig::default(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let scenario: Self = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Loads a scenario file; relative WAV and chain paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut scenario = Self::parse(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut scenario.speech.wav, &mut scenario.noise.wav, &mut scenario.array.chain]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(scenario)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidScenario(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if !self.snr_db.is_finite() {
            return bad(format!("snr_db {} is not finite", self.snr_db));
        }
        if !(self.sample_rate > 0.0) {
            return bad(format!("sample_rate {} must be positive", self.sample_rate));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad(format!("duration_s {} must be positive", self.duration_s));
        }
        if self.num_samples() < self.stft.n_fft {
            return bad(format!("duration {} s is shorter than one STFT frame", self.duration_s));
        }
        for (name, az, d) in [
            ("speech", self.speech.azimuth_deg, self.speech.distance_m),
            ("noise", self.noise.azimuth_deg, self.noise.distance_m),
        ] {
            if !(0.0..360.0).contains(&az) {
                return bad(format!("{name} azimuth {az} outside [0, 360)"));
            }
            if !(d > 0.0) || !d.is_finite() {
                return bad(format!("{name} distance {d} must be positive"));
            }
        }
        if self.noise.sensor_noise_db.is_nan() || self.noise.sensor_noise_db == f64::INFINITY {
            return bad(format!("sensor noise level {} dB is not usable", self.noise.sensor_noise_db));
        }
        if !(self.kinematics.standoff_m >= 0.0) {
            return bad(format!("standoff {} must be >= 0", self.kinematics.standoff_m));
        }
        if !(self.kinematics.target_error_m >= 0.0) {
            return bad(format!("target error {} must be >= 0", self.kinematics.target_error_m));
        }
        if self.array.reference == 0 {
            return bad("reference channel is 1-based".into());
        }
        self.stft.validate()?;
        self.ssl.validate()?;
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate).round() as usize
    }

    pub fn speech_position<T: Real>(&self) -> Vec3<T> {
        source_position(self.speech.azimuth_deg, self.speech.distance_m, self.speech.height_m)
    }

    pub fn noise_position<T: Real>(&self) -> Vec3<T> {
        source_position(self.noise.azimuth_deg, self.noise.distance_m, self.noise.height_m)
    }

    pub fn speech_signal<T: Real>(&self) -> Result<TimeSignal<T>> {
        let len = self.num_samples();
        let samples = match &self.speech.wav {
            Some(path) => load_mono(path, self.sample_rate, len)?,
            None => synthetic_speech(len, self.sample_rate, self.seed),
        };
        to_signal(samples, self.sample_rate)
    }

    pub fn noise_signal<T: Real>(&self) -> Result<TimeSignal<T>> {
        let len = self.num_samples();
        let samples = match (&self.noise.wav, self.noise.enabled) {
            (_, false) => vec![0.0; len],
            (Some(path), true) => load_mono(path, self.sample_rate, len)?,
            (None, true) => synthetic_noise(self.noise.kind, len, self.sample_rate, self.seed),
        };
        to_signal(samples, self.sample_rate)
    }
}

fn source_position<T: Real>(azimuth_deg: f64, distance: f64, height: f64) -> Vec3<T> {
    Vec3::from_azimuth_deg(T::lit(azimuth_deg)) * T::lit(distance) + Vec3::new(T::zero(), T::zero(), T::lit(height))
}

fn to_signal<T: Real>(samples: Vec<f64>, fs: f64) -> Result<TimeSignal<T>> {
    TimeSignal::mono(samples.into_iter().map(T::lit).collect(), fs)
}

/// First channel of a WAV file, looped or truncated to `len` samples.
fn load_mono(path: &Path, fs: f64, len: usize) -> Result<Vec<f64>> {
    let wav = crate::wav::read_wav::<f64>(path)?;
    if wav.sample_rate() != fs {
        return Err(Error::InvalidScenario(format!(
            "{} is sampled at {} Hz, scenario expects {} Hz",
            path.display(),
            wav.sample_rate(),
            fs
        )));
    }
    if wav.is_empty() {
        return Err(Error::EmptySignal);
    }
    let ch = wav.channel(0);
    Ok((0..len).map(|n| ch[n % ch.len()]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse_source(position: Vec3<f64>, len: usize, at: usize) -> PointSource<f64> {
        let mut x = vec![0.0; len];
        x[at] = 1.0;
        PointSource::new(position, TimeSignal::mono(x, 16_000.0).unwrap(), SourceKind::Speech).unwrap()
    }

    fn noise_source(position: Vec3<f64>) -> PointSource<f64> {
        let x = synthetic_noise(NoiseKind::CompressedAir, 4096, 16_000.0, 3);
        PointSource::new(position, TimeSignal::mono(x, 16_000.0).unwrap(), SourceKind::Noise).unwrap()
    }

    fn argmax(x: ndarray::ArrayView1<f64>) -> usize {
        x.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0
    }

    #[test]
    fn equidistant_mics_receive_identical_signals() {
        let src = noise_source(Vec3::new(0.0, 1.0, 0.3));
        let mics = [Vec3::new(0.4, 0.0, 0.0), Vec3::new(-0.4, 0.0, 0.0)];
        let out = propagate(&src, &mics).unwrap();
        for (a, b) in out.channel(0).iter().zip(out.channel(1).iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn axis_spacing_of_343_mm_is_sixteen_samples() {
        let src = impulse_source(Vec3::new(-1.0, 0.0, 0.0), 2048, 100);
        let mics = [Vec3::zeros(), Vec3::new(0.343, 0.0, 0.0)];
        let out = propagate(&src, &mics).unwrap();
        let lag = argmax(out.channel(1)) as isize - argmax(out.channel(0)) as isize;
        assert_eq!(lag, 16);
        // 1 m at 343 m/s is 46.65 samples: peak lands on the nearest sample
        assert_eq!(argmax(out.channel(0)), 100 + 47);
    }

    #[test]
    fn doubling_distance_halves_amplitude() {
        let src = noise_source(Vec3::zeros());
        let near = propagate(&src, &[Vec3::new(0.5, 0.0, 0.0)]).unwrap();
        let far = propagate(&src, &[Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let rms = |s: &TimeSignal<f64>| s.mean_power(&[0]).sqrt();
        // compare away from the onset, where both have the full signal
        assert!((rms(&near) / rms(&far) - 2.0).abs() < 0.01);
    }

    #[test]
    fn coincident_mic_is_an_error() {
        let src = noise_source(Vec3::new(1.0, 0.0, 0.0));
        let err = propagate(&src, &[Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::ZeroDistance { mic: 2 }));
    }

    #[test]
    fn gain_for_equal_powers() {
        let s = TimeSignal::from_channels(vec![vec![1.0f64, -1.0, 1.0, -1.0]; 4], 16_000.0).unwrap();
        assert!((noise_gain(&s, &s, 0.0, &REFERENCE_CHANNELS).unwrap() - 1.0).abs() < 1e-15);
        let g = noise_gain(&s, &s, 10.0, &REFERENCE_CHANNELS).unwrap();
        assert!((g - 10f64.powf(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn mixing_hits_the_requested_snr_on_the_reference_set() {
        let speech = propagate(&noise_source(Vec3::new(1.0, 0.5, 0.0)), &mics6()).unwrap();
        let noise = propagate(&impulse_like_noise(), &mics6()).unwrap();
        for snr in [-5.0, 0.0, 5.0, 10.0] {
            let mix = mix_at_snr(speech.clone(), noise.clone(), snr, &REFERENCE_CHANNELS).unwrap();
            assert!((measured_snr_db(&mix.speech, &mix.noise, &REFERENCE_CHANNELS) - snr).abs() < 0.01);
            // channels outside the reference set are not normalized
            let off = measured_snr_db(&mix.speech, &mix.noise, &[4, 5]);
            assert!((off - snr).abs() > 0.01);
        }
    }

    fn mics6() -> Vec<Vec3<f64>> {
        let mut mics: Vec<_> = (0..4).map(|i| Vec3::new(0.05 * i as f64, 0.0, 0.0)).collect();
        mics.push(Vec3::new(0.9, 0.4, 0.0));
        mics.push(Vec3::new(0.8, 0.6, 0.0));
        mics
    }

    fn impulse_like_noise() -> PointSource<f64> {
        let x = synthetic_noise(NoiseKind::Engine, 4096, 16_000.0, 9);
        PointSource::new(Vec3::new(-1.0, -1.0, 0.2), TimeSignal::mono(x, 16_000.0).unwrap(), SourceKind::Noise).unwrap()
    }

    #[test]
    fn silent_inputs_are_rejected() {
        let s = TimeSignal::from_channels(vec![vec![1.0, 2.0]; 4], 16_000.0).unwrap();
        let z = TimeSignal::zeros(4, 2, 16_000.0).unwrap();
        assert!(matches!(noise_gain(&s, &z, 0.0, &REFERENCE_CHANNELS), Err(Error::Silent(_))));
        assert!(matches!(noise_gain(&z, &s, 0.0, &REFERENCE_CHANNELS), Err(Error::Silent(_))));
        assert!(noise_gain(&s, &s, 0.0, &[7]).is_err());
    }

    #[test]
    fn synthetic_material_is_seeded() {
        assert_eq!(synthetic_speech(8000, 16_000.0, 4), synthetic_speech(8000, 16_000.0, 4));
        assert_ne!(synthetic_speech(8000, 16_000.0, 4), synthetic_speech(8000, 16_000.0, 5));
        for kind in NoiseKind::ALL {
            let a = synthetic_noise(kind, 8000, 16_000.0, 1);
            assert_eq!(a, synthetic_noise(kind, 8000, 16_000.0, 1));
            assert!(a.iter().all(|v| v.is_finite()));
            assert_eq!(kind.name().parse::<NoiseKind>().unwrap(), kind);
        }
    }

    #[test]
    fn scenario_round_trips_through_toml() {
        let s = Scenario {
            seed: 9,
            snr_db: -5.0,
            ..Scenario::default()
        };
        assert_eq!(Scenario::parse(&s.to_toml().unwrap()).unwrap(), s);
        let partial = Scenario::parse("snr_db = 5.0\n[speech]\nazimuth_deg = 120.0\n").unwrap();
        assert_eq!(partial.speech.azimuth_deg, 120.0);
        assert_eq!(partial.noise, NoiseSection::default());
        assert!(Scenario::parse("[speech]\nazimuth_deg = 400.0\n").is_err());
        assert!(Scenario::parse("bogus = 1\n").is_err());
        assert!(Scenario::parse("duration_s = 0.01\n").is_err());
    }
}
