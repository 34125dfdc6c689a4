//! Time-frequency masks: the oracle ideal ratio mask, the pooled global mask
//! used for localization, mask providers, and the binary mask file format.
//!
//! Mask files are little-endian: the 8-byte magic `BKMASK01`, then `K`, `T`,
//! `F` as `u32`, a dtype byte (`0` = f32, `1` = f64), three zero bytes, and
//! `K·T·F` values in `[channel][frame][bin]` order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Axis, Zip};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stft::MultichannelSpectrogram;

const MAGIC: &[u8; 8] = b"BKMASK01";

/// Per-channel mask with values in `[0, 1]`, indexed `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMask<T> {
    values: Array3<T>,
}

impl<T: Real> TfMask<T> {
    pub fn new(values: Array3<T>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::InvalidMask(format!("value {bad} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    /// Constant mask with the shape of `spec`.
    pub fn constant(spec: &MultichannelSpectrogram<T>, value: T) -> Result<Self> {
        Self::new(Array3::from_elem(spec.data().dim(), value))
    }

    pub fn values(&self) -> &Array3<T> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn num_channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn matches(&self, spec: &MultichannelSpectrogram<T>) -> bool {
        self.values.dim() == spec.data().dim()
    }

    pub fn check_matches(&self, spec: &MultichannelSpectrogram<T>) -> Result<()> {
        if self.matches(spec) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "mask {:?} vs spectrogram {:?}",
                self.values.dim(),
                spec.data().dim()
            )))
        }
    }

    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        if let Some(&k) = channels.iter().find(|&&k| k >= self.num_channels()) {
            return Err(Error::InvalidChannel {
                channel: k + 1,
                channels: self.num_channels(),
            });
        }
        Ok(Self {
            values: self.values.select(Axis(0), channels),
        })
    }

    /// Per-(frame, bin) maximum over channels.
    pub fn global(&self) -> Array2<T> {
        global_mask(self)
    }
}

/// `min(max(|X| / (|X| + |B|), 0), 1)` per channel, frame and bin; `0/0 → 0`.
pub fn oracle_irm<T: Real>(
    clean: &MultichannelSpectrogram<T>,
    noise: &MultichannelSpectrogram<T>,
) -> Result<TfMask<T>> {
    if !clean.same_shape(noise) {
        return Err(Error::DimensionMismatch(format!(
            "clean {:?} vs noise {:?}",
            clean.data().dim(),
            noise.data().dim()
        )));
    }
    let mut values = Array3::zeros(clean.data().dim());
    Zip::from(&mut values)
        .and(clean.data())
        .and(noise.data())
        .for_each(|m, x, b| {
            let (xm, bm) = (x.norm(), b.norm());
            let denom = xm + bm;
            *m = if denom > T::zero() {
                (xm / denom).max(T::zero()).min(T::one())
            } else {
                T::zero()
            };
        });
    Ok(TfMask { values })
}

/// Pools a per-channel mask into one `[frame][bin]` mask by taking the maximum.
pub fn global_mask<T: Real>(mask: &TfMask<T>) -> Array2<T> {
    mask.values
        .map_axis(Axis(0), |col| col.iter().fold(T::zero(), |m, &v| m.max(v)))
}

/// Strategy that yields a per-channel mask for a noisy observation.
pub trait MaskProvider<T: Real> {
    fn estimate(
        &self,
        noisy: &MultichannelSpectrogram<T>,
        clean: Option<&MultichannelSpectrogram<T>>,
        noise: Option<&MultichannelSpectrogram<T>>,
    ) -> Result<TfMask<T>>;
}

/// Ideal ratio mask from the true speech and noise images.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleIrm;

impl<T: Real> MaskProvider<T> for OracleIrm {
    fn estimate(
        &self,
        noisy: &MultichannelSpectrogram<T>,
        clean: Option<&MultichannelSpectrogram<T>>,
        noise: Option<&MultichannelSpectrogram<T>>,
    ) -> Result<TfMask<T>> {
        let (Some(clean), Some(noise)) = (clean, noise) else {
            return Err(Error::InvalidMask("oracle mask needs the clean and noise images".into()));
        };
        let mask = oracle_irm(clean, noise)?;
        mask.check_matches(noisy)?;
        Ok(mask)
    }
}

/// Externally estimated mask, e.g. loaded from a mask file.
#[derive(Debug, Clone)]
pub struct PrecomputedMask<T>(pub TfMask<T>);

impl<T: Real> MaskProvider<T> for PrecomputedMask<T> {
    fn estimate(
        &self,
        noisy: &MultichannelSpectrogram<T>,
        _clean: Option<&MultichannelSpectrogram<T>>,
        _noise: Option<&MultichannelSpectrogram<T>>,
    ) -> Result<TfMask<T>> {
        self.0.check_matches(noisy)?;
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskDtype {
    F32,
    F64,
}

pub fn write_mask<T: Real>(mut w: impl Write, mask: &TfMask<T>, dtype: MaskDtype) -> Result<()> {
    let (k, t, f) = mask.dim();
    w.write_all(MAGIC)?;
    for d in [k, t, f] {
        let d = u32::try_from(d).map_err(|_| Error::InvalidMask("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&[matches!(dtype, MaskDtype::F64) as u8, 0, 0, 0])?;
    for &v in mask.values.iter() {
        match dtype {
            MaskDtype::F32 => w.write_all(&(v.as_f64() as f32).to_le_bytes())?,
            MaskDtype::F64 => w.write_all(&v.as_f64().to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn read_mask<T: Real>(mut r: impl Read) -> Result<TfMask<T>> {
    let mut header = [0u8; 24];
    r.read_exact(&mut header)?;
    if &header[..8] != MAGIC {
        return Err(Error::InvalidMask("bad magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (k, t, f) = (dim(0), dim(1), dim(2));
    let width = match header[20] {
        0 => 4,
        1 => 8,
        d => return Err(Error::InvalidMask(format!("unknown dtype code {d}"))),
    };
    let count = k
        .checked_mul(t)
        .and_then(|n| n.checked_mul(f))
        .ok_or_else(|| Error::InvalidMask("dimensions overflow".into()))?;
    let mut raw = vec![0u8; count * width];
    r.read_exact(&mut raw)?;
    let values: Vec<T> = raw
        .chunks_exact(width)
        .map(|b| match width {
            4 => T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64),
            _ => T::lit(f64::from_le_bytes(b.try_into().unwrap())),
        })
        .collect();
    let values = Array3::from_shape_vec((k, t, f), values).map_err(|e| Error::InvalidMask(e.to_string()))?;
    TfMask::new(values)
}

pub fn save_mask<T: Real>(path: impl AsRef<Path>, mask: &TfMask<T>, dtype: MaskDtype) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_mask(&mut file, mask, dtype)?;
    file.flush()?;
    Ok(())
}

pub fn load_mask<T: Real>(path: impl AsRef<Path>) -> Result<TfMask<T>> {
    read_mask(std::io::BufReader::new(std::fs::File::open(path)?))
}
