//! RIFF/WAVE reading and writing (16-bit PCM and 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stft::TimeSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

pub fn read_wav<T: Real>(path: impl AsRef<Path>) -> Result<TimeSignal<T>> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>()?,
        (SampleFormat::Int, bits @ 1..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::InvalidSignal(format!(
                "unsupported WAV sample format {fmt:?}/{bits} bits"
            )))
        }
    };
    let len = interleaved.len() / channels.max(1);
    let data = Array2::from_shape_fn((channels, len), |(k, n)| T::lit(interleaved[n * channels + k] as f64));
    TimeSignal::new(data, spec.sample_rate as f64)
}

/// Writes `signal`; 16-bit output is clipped to `[-1, 1)`.
pub fn write_wav<T: Real>(path: impl AsRef<Path>, signal: &TimeSignal<T>, format: WavFormat) -> Result<()> {
    let rate = signal.sample_rate();
    if rate.fract() != 0.0 || rate > u32::MAX as f64 {
        return Err(Error::InvalidSignal(format!("sample rate {rate} is not a WAV integer rate")));
    }
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, SampleFormat::Int),
        WavFormat::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: u16::try_from(signal.num_channels())
            .map_err(|_| Error::InvalidSignal("too many channels for WAV".into()))?,
        sample_rate: rate as u32,
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = WavWriter::create(path, spec)?;
    let data = signal.samples();
    for n in 0..signal.len() {
        for k in 0..signal.num_channels() {
            let x = data[[k, n]].as_f64();
            match format {
                WavFormat::Pcm16 => {
                    let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(v)?;
                }
                WavFormat::Float32 => writer.write_sample(x as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
