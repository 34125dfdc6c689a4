use num_complex::Complex64 as C;
use proptest::prelude::*;

use beamkin::geometry::{circular_diff_deg, Rot3, Vec3};
use beamkin::linalg::CMatrix;
use beamkin::masking::TfMask;
use beamkin::scene::{propagate, synthetic_speech, PointSource, SourceKind};
use beamkin::ssl::{estimate_doa, srp_power, steering_weight, DoaGrid, SslConfig};
use beamkin::stft::{stft, StftConfig, TimeSignal};
use beamkin::SPEED_OF_SOUND;

const FS: f64 = 16_000.0;
const N_FFT: usize = 512;

fn ring(n: usize, radius: f64, z: f64) -> Vec<Vec3<f64>> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            Vec3::new(radius * a.cos(), radius * a.sin(), z)
        })
        .collect()
}

/// Plane-wave covariance `a aᴴ` for a wave arriving from `theta`.
fn plane_wave(bin: usize, theta: Vec3<f64>, mics: &[Vec3<f64>]) -> CMatrix<f64> {
    let omega = std::f64::consts::TAU * bin as f64 / N_FFT as f64 * FS / SPEED_OF_SOUND;
    let a: Vec<C> = mics.iter().map(|m| C::from_polar(1.0, omega * m.dot(theta))).collect();
    CMatrix::outer(&a)
}

#[test]
fn steering_weight_conjugate_symmetry() {
    let (u, v) = (Vec3::new(0.1, 0.02, 0.0), Vec3::new(-0.05, 0.07, 0.3));
    for bin in [0, 17, 256] {
        for az in [0.0, 33.0, 271.0] {
            let theta = Vec3::from_azimuth_deg(az);
            let w_uv: C = steering_weight(bin, theta, u, v, FS, N_FFT);
            let w_vu = steering_weight(bin, theta, v, u, FS, N_FFT);
            assert!((w_uv - w_vu.conj()).norm() < 1e-12);
            assert!((w_uv.norm() - 1.0).abs() < 1e-12);
        }
    }
    assert_eq!(steering_weight(0, Vec3::from_azimuth_deg(10.0), u, v, FS, N_FFT), C::new(1.0, 0.0));
}

/// With identity noise the whitened power is the conventional steered
/// response: a plane-wave covariance peaks exactly at its direction with
/// value `K² · F`.
#[test]
fn conventional_srp_peaks_at_plane_wave() {
    let mics = ring(8, 0.07, 0.0);
    let bins: Vec<usize> = (4..=240).collect();
    let grid = DoaGrid::horizontal(1.0).unwrap();
    for truth in [0.0, 40.0, 125.0, 200.0, 333.0] {
        let theta = Vec3::from_azimuth_deg(truth);
        let p: Vec<CMatrix<f64>> = bins.iter().map(|&f| plane_wave(f, theta, &mics)).collect();
        let powers: Vec<f64> = grid
            .directions()
            .iter()
            .map(|&d| srp_power(&p, &bins, d, &mics, FS, N_FFT))
            .collect();
        let best = powers.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(grid.azimuths_deg()[best], truth);
        let peak = srp_power(&p, &bins, theta, &mics, FS, N_FFT);
        let expected = (mics.len() * mics.len() * bins.len()) as f64;
        assert!((peak - expected).abs() < 1e-8 * expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Rotating the array and the look direction together about the vertical
    /// axis leaves the steered power unchanged.
    #[test]
    fn steered_power_is_rotation_equivariant(source in 0.0f64..360.0, look in 0.0f64..360.0, turn in 0.0f64..360.0) {
        let mics = ring(6, 0.09, 0.05);
        let bins = [8usize, 40, 97, 180];
        let p: Vec<CMatrix<f64>> = bins.iter().map(|&f| plane_wave(f, Vec3::from_azimuth_deg(source), &mics)).collect();
        let rot = Rot3::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), turn.to_radians());
        let turned: Vec<Vec3<f64>> = mics.iter().map(|&m| rot.apply(m)).collect();
        let e = srp_power(&p, &bins, Vec3::from_azimuth_deg(look), &mics, FS, N_FFT);
        let e_rot = srp_power(&p, &bins, Vec3::from_azimuth_deg(look + turn), &turned, FS, N_FFT);
        prop_assert!((e - e_rot).abs() < 1e-9 * e.abs().max(1.0));
    }
}

fn noiseless_estimate(source: Vec3<f64>, mics: &[Vec3<f64>], seed: u64) -> f64 {
    let speech = synthetic_speech(32_000, FS, seed);
    let src = PointSource::new(source, TimeSignal::mono(speech, FS).unwrap(), SourceKind::Speech).unwrap();
    let images = propagate(&src, mics).unwrap();
    let spec = stft(&images, &StftConfig::default()).unwrap();
    let mask = TfMask::constant(&spec, 1.0).unwrap();
    let config = SslConfig {
        subset: (1..=mics.len()).collect(),
        ..SslConfig::default()
    };
    estimate_doa(&spec, &mask, &DoaGrid::horizontal(1.0).unwrap(), mics, &config)
        .unwrap()
        .median_deg
}

/// A distant source is a plane wave; the estimate lands on its azimuth.
#[test]
fn far_source_plane_wave_limit() {
    let mics = ring(8, 0.08, 0.1);
    for (i, az) in [15.0, 100.0, 250.0].into_iter().enumerate() {
        let far = Vec3::from_azimuth_deg(az) * 40.0 + Vec3::new(0.0, 0.0, 0.1);
        let est = noiseless_estimate(far, &mics, i as u64);
        assert!(circular_diff_deg(est, az).abs() <= 1.0, "{az}: {est}");
    }
}

/// Rotating the scene (array and talker) by a whole number of grid steps
/// rotates the estimate by the same amount.
#[test]
fn scene_rotation_shifts_estimate() {
    let mics = ring(8, 0.08, 0.1);
    let source = Vec3::new(1.5 * 0.8f64.cos(), 1.5 * 0.8f64.sin(), 0.2);
    let base = noiseless_estimate(source, &mics, 5);
    for turn in [30.0, 145.0, 270.0] {
        let rot = Rot3::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), f64::to_radians(turn));
        let turned: Vec<Vec3<f64>> = mics.iter().map(|&m| rot.apply(m)).collect();
        let est = noiseless_estimate(rot.apply(source), &turned, 5);
        assert!(circular_diff_deg(est, base + turn).abs() <= 1.0, "turn {turn}: {base} -> {est}");
    }
}
