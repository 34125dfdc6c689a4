//! End-to-end simulation: localize the talker from a resting pose, move the
//! arm to a listening pose, then enhance with mask-based MVDR and score the
//! result. Also hosts the experiment grid used for geometry comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::enhance;
use crate::error::{Error, Result};
use crate::geometry::{circular_diff_deg, Vec3};
use crate::kinematics::{listening_config, JointConfig, KinematicChain, TargetOracle};
use crate::masking::oracle_irm;
use crate::metrics::{si_sdr, EvalReport, EvalRow, ACC_TOLERANCE_DEG};
use crate::scene::{mix_seed, noise_gain, propagate, sensor_noise, Geometry, Mixture, NoiseKind, PointSource, Scenario, SourceKind, REFERENCE_CHANNELS};
use crate::ssl::{estimate_doa, DoaGrid};
use crate::stft::{istft, Stft, TimeSignal};

/// Stored chain pose used while localizing.
pub const LOCALIZATION_POSE: &str = "static1";

/// Centre and side length of the free-standing square array.
pub const SQUARE_ARRAY_CENTER: [f64; 3] = [0.3, 0.0, 0.15];
pub const SQUARE_ARRAY_SIDE_M: f64 = 0.1;
/// Its MVDR reference channel (1-based).
pub const SQUARE_ARRAY_REFERENCE: usize = 4;

const TARGET_ORACLE_SALT: u64 = 0x007A_26E7;

/// Microphones of the free-standing square, counter-clockwise from +x/+y.
pub fn square_array() -> Vec<Vec3<f64>> {
    let c = Vec3::from_f64(SQUARE_ARRAY_CENTER);
    let h = SQUARE_ARRAY_SIDE_M / 2.0;
    [(h, h), (-h, h), (-h, -h), (h, -h)]
        .into_iter()
        .map(|(x, y)| c + Vec3::new(x, y, 0.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageTag {
    Simulation,
    Localization,
    Target,
    Kinematics,
    Enhancement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: StageTag,
    pub message: String,
}

/// Records of the stages that ran, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum StageRecord {
    Localization {
        estimate_deg: f64,
        truth_deg: f64,
        error_deg: f64,
    },
    Target {
        position: [f64; 3],
        /// False when the localization miss put the talker out of view and
        /// the target was placed along the estimated azimuth instead.
        in_view: bool,
    },
    Kinematics {
        angles: Vec<f64>,
        iterations: usize,
        position_error_m: f64,
        angle_error_deg: f64,
    },
    Enhancement {
        geometry: Geometry,
        reference: usize,
        noise_gain: f64,
        si_sdr_in: f64,
        si_sdr_out: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub scenario: Scenario,
    pub stages: Vec<StageRecord>,
    pub failures: Vec<StageFailure>,
}

impl PipelineRun {
    pub fn enhancement(&self) -> Option<(f64, f64)> {
        self.stages.iter().find_map(|s| match s {
            StageRecord::Enhancement {
                si_sdr_in, si_sdr_out, ..
            } => Some((*si_sdr_in, *si_sdr_out)),
            _ => None,
        })
    }

    pub fn localization(&self) -> Option<(f64, f64)> {
        self.stages.iter().find_map(|s| match s {
            StageRecord::Localization {
                estimate_deg, truth_deg, ..
            } => Some((*estimate_deg, *truth_deg)),
            _ => None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Speech and (unscaled) noise images at one set of microphones.
#[derive(Debug, Clone)]
pub struct Images {
    pub speech: TimeSignal<f64>,
    pub noise: TimeSignal<f64>,
}

#[derive(Debug, Clone)]
pub struct Enhancement {
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub output: TimeSignal<f64>,
}

/// Where the listening pose came from.
#[derive(Debug, Clone)]
pub struct Repositioning {
    pub pose: JointConfig<f64>,
    pub stages: Vec<StageRecord>,
    pub failures: Vec<StageFailure>,
}

/// A scenario with its sources and chain resolved, ready to simulate any
/// geometry.
pub struct Pipeline {
    scenario: Scenario,
    chain: KinematicChain<f64>,
    speech: PointSource<f64>,
    noise: PointSource<f64>,
    stft: Stft<f64>,
}

impl Pipeline {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let chain = match &scenario.array.chain {
            Some(path) => KinematicChain::load(path)?,
            None => KinematicChain::bundled(),
        };
        chain.pose_named(LOCALIZATION_POSE)?;
        let speech = PointSource::new(scenario.speech_position(), scenario.speech_signal()?, SourceKind::Speech)?;
        let noise = PointSource::new(scenario.noise_position(), scenario.noise_signal()?, SourceKind::Noise)?;
        Ok(Self {
            scenario: scenario.clone(),
            chain,
            speech,
            noise,
            stft: Stft::new(scenario.stft)?,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn chain(&self) -> &KinematicChain<f64> {
        &self.chain
    }

    /// Microphone positions for a stored geometry; `Optimized` needs `pose`.
    pub fn microphones(&self, geometry: Geometry, pose: Option<&JointConfig<f64>>) -> Result<Vec<Vec3<f64>>> {
        let q = match (geometry, pose) {
            (Geometry::Static4, _) => return Ok(square_array()),
            (Geometry::Optimized, Some(q)) => q,
            (Geometry::Optimized, None) => {
                return Err(Error::InvalidScenario("optimized geometry needs a joint configuration".into()))
            }
            (g, _) => self.chain.pose_named(g.name())?,
        };
        Ok(self.chain.forward_kinematics(q)?.mics)
    }

    pub fn reference_for(&self, geometry: Geometry) -> usize {
        match geometry {
            Geometry::Static4 => SQUARE_ARRAY_REFERENCE,
            _ => self.scenario.array.reference,
        }
    }

    /// Speech and noise images at `mics`. The noise image includes the
    /// microphones' self-noise.
    pub fn images(&self, mics: &[Vec3<f64>]) -> Result<Images> {
        let mut noise = propagate(&self.noise, mics)?;
        let level = self.scenario.noise.sensor_noise_db;
        if level > f64::NEG_INFINITY {
            let sigma = 10f64.powf(level / 20.0) * self.noise.signal.mean_power(&[0]).sqrt();
            let hiss = sensor_noise(mics.len(), noise.len(), sigma, noise.sample_rate(), self.scenario.seed)?;
            noise = noise.try_add(&hiss)?;
        }
        Ok(Images {
            speech: propagate(&self.speech, mics)?,
            noise,
        })
    }

    /// Images at the localization pose.
    pub fn initial_images(&self) -> Result<Images> {
        let q = self.chain.pose_named(LOCALIZATION_POSE)?;
        self.images(&self.chain.forward_kinematics(q)?.mics)
    }

    /// Noise gain on the base-mounted reference sub-array. Those
    /// microphones do not move with the arm, so the value is the same for
    /// every chain pose; it is applied unchanged to all geometries.
    pub fn matched_gain(&self, initial: &Images, snr_db: f64) -> Result<f64> {
        if !self.scenario.noise.enabled {
            return Ok(0.0);
        }
        noise_gain(&initial.speech, &initial.noise, snr_db, &REFERENCE_CHANNELS)
    }

    /// Localization, target estimation and IK from the initial-pose mixture.
    /// Failures fall back to the best available pose and are recorded.
    pub fn reposition(&self, initial: &Images, gain: f64) -> Result<Repositioning> {
        let sc = &self.scenario;
        let mut stages = Vec::new();
        let mut failures = Vec::new();
        let truth_deg = sc.speech.azimuth_deg;

        let estimate = self.localize(initial, gain);
        let estimate_deg = match estimate {
            Ok(est) => {
                let error_deg = circular_diff_deg(est, truth_deg);
                stages.push(StageRecord::Localization {
                    estimate_deg: est,
                    truth_deg,
                    error_deg,
                });
                Some(est)
            }
            Err(e) => {
                failures.push(StageFailure {
                    stage: StageTag::Localization,
                    message: e.to_string(),
                });
                None
            }
        };
        let Some(estimate_deg) = estimate_deg else {
            return Ok(Repositioning {
                pose: self.chain.pose_named(LOCALIZATION_POSE)?.clone(),
                stages,
                failures,
            });
        };

        // the camera turns toward the estimate; it sees the talker only when
        // the localization error is inside its half field of view
        let in_view = circular_diff_deg(estimate_deg, truth_deg).abs() <= sc.kinematics.camera_half_fov_deg;
        let position = if in_view {
            let mut oracle = TargetOracle::new(sc.kinematics.target_error_m, mix_seed(sc.seed, TARGET_ORACLE_SALT))?;
            oracle.locate(self.speech.position)
        } else {
            failures.push(StageFailure {
                stage: StageTag::Target,
                message: format!("talker outside the camera view (estimate {estimate_deg:.1} deg); aiming along the estimate"),
            });
            Vec3::from_azimuth_deg(estimate_deg) * sc.speech.distance_m + Vec3::new(0.0, 0.0, sc.speech.height_m)
        };
        stages.push(StageRecord::Target {
            position: position.to_f64(),
            in_view,
        });

        let azimuth = if in_view { position.azimuth_deg() } else { estimate_deg };
        let pose = match listening_config(&self.chain, azimuth, position, sc.kinematics.standoff_m, &sc.kinematics.ik) {
            Ok(sol) => {
                stages.push(StageRecord::Kinematics {
                    angles: sol.config.to_f64(),
                    iterations: sol.iterations,
                    position_error_m: sol.position_error_m,
                    angle_error_deg: sol.angle_error_deg,
                });
                sol.config
            }
            Err(Error::Unreachable(report)) => {
                failures.push(StageFailure {
                    stage: StageTag::Kinematics,
                    message: format!(
                        "target unreachable (residual {:.3} m, {:.1} deg); using the closest pose",
                        report.position_error_m, report.angle_error_deg
                    ),
                });
                JointConfig::from_f64(&report.best_angles)
            }
            Err(e) => return Err(e),
        };
        Ok(Repositioning { pose, stages, failures })
    }

    /// Median azimuth from the localization sub-arrays at the initial pose.
    pub fn localize(&self, initial: &Images, gain: f64) -> Result<f64> {
        let sc = &self.scenario;
        let mix = Mixture::with_gain(initial.speech.clone(), initial.noise.clone(), gain)?;
        let clean = self.stft.analyze(&mix.speech)?;
        let noise = self.stft.analyze(&mix.noise)?;
        let noisy = self.stft.analyze(&mix.mixture)?;
        let subset0: Vec<usize> = sc.ssl.subset.iter().map(|&c| c.saturating_sub(1)).collect();
        let mask = oracle_irm(&clean, &noise)?.select_channels(&subset0)?;
        let q = self.chain.pose_named(LOCALIZATION_POSE)?;
        let mics = self.chain.forward_kinematics(q)?.mics;
        let grid = DoaGrid::horizontal(sc.ssl.grid_resolution_deg)?;
        Ok(estimate_doa(&noisy, &mask, &grid, &mics, &sc.ssl)?.median_deg)
    }

    /// Oracle-mask MVDR on one geometry's images with a fixed noise gain.
    pub fn enhance(&self, images: &Images, gain: f64, reference: usize) -> Result<Enhancement> {
        let k = images.speech.num_channels();
        if reference == 0 || reference > k {
            return Err(Error::InvalidChannel { channel: reference, channels: k });
        }
        let mix = Mixture::with_gain(images.speech.clone(), images.noise.clone(), gain)?;
        let clean = self.stft.analyze(&mix.speech)?;
        let noise = self.stft.analyze(&mix.noise)?;
        let noisy = self.stft.analyze(&mix.mixture)?;
        let mask = oracle_irm(&clean, &noise)?;
        let output = istft(&enhance(&noisy, &mask, reference)?)?;
        let r = reference - 1;
        let target = mix.speech.channel(r).to_vec();
        Ok(Enhancement {
            si_sdr_in: si_sdr(&mix.mixture.channel(r).to_vec(), &target)?,
            si_sdr_out: si_sdr(&output.channel(0).to_vec(), &target)?,
            output,
        })
    }

    fn enhancement_stage(
        &self,
        geometry: Geometry,
        images: &Images,
        gain: f64,
        run: &mut PipelineRun,
    ) -> Option<TimeSignal<f64>> {
        let reference = self.reference_for(geometry);
        match self.enhance(images, gain, reference) {
            Ok(e) => {
                run.stages.push(StageRecord::Enhancement {
                    geometry,
                    reference,
                    noise_gain: gain,
                    si_sdr_in: e.si_sdr_in,
                    si_sdr_out: e.si_sdr_out,
                });
                Some(e.output)
            }
            Err(err) => {
                run.failures.push(StageFailure {
                    stage: StageTag::Enhancement,
                    message: err.to_string(),
                });
                None
            }
        }
    }

    /// Runs the scenario's configured geometry. Static geometries skip
    /// localization and repositioning but use the same matched gain.
    pub fn run(&self) -> Result<(PipelineRun, Option<TimeSignal<f64>>)> {
        let mut run = PipelineRun {
            scenario: self.scenario.clone(),
            stages: Vec::new(),
            failures: Vec::new(),
        };
        let initial = self.initial_images()?;
        let gain = match self.matched_gain(&initial, self.scenario.snr_db) {
            Ok(g) => g,
            Err(e) => {
                run.failures.push(StageFailure {
                    stage: StageTag::Simulation,
                    message: e.to_string(),
                });
                return Ok((run, None));
            }
        };
        let geometry = self.scenario.array.geometry;
        let images = if geometry == Geometry::Optimized {
            let repo = self.reposition(&initial, gain)?;
            run.stages.extend(repo.stages);
            run.failures.extend(repo.failures);
            self.images(&self.microphones(geometry, Some(&repo.pose))?)?
        } else {
            self.images(&self.microphones(geometry, None)?)?
        };
        let output = self.enhancement_stage(geometry, &images, gain, &mut run);
        Ok((run, output))
    }
}

/// Runs one scenario end to end.
pub fn run_pipeline(scenario: &Scenario) -> Result<PipelineRun> {
    Ok(Pipeline::new(scenario)?.run()?.0)
}

// ---- experiment grid ---------------------------------------------------------

/// Cross product of talker directions, noise directions, noise kinds, SNRs
/// and geometries; `repeats` independent seeds per combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    pub speech_azimuths_deg: Vec<f64>,
    pub noise_azimuths_deg: Vec<f64>,
    pub noise_kinds: Vec<NoiseKind>,
    pub snr_db: Vec<f64>,
    pub geometries: Vec<Geometry>,
    pub repeats: usize,
    pub seed: u64,
    /// Skip combinations whose talker and noise directions coincide.
    pub skip_colocated: bool,
    /// Settings shared by every cell; its azimuths, kind, SNR, geometry and
    /// seed are overridden per cell.
    pub base: Scenario,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            speech_azimuths_deg: vec![0.0, 90.0, 180.0, 270.0],
            noise_azimuths_deg: vec![45.0, 225.0],
            noise_kinds: vec![NoiseKind::Drill],
            snr_db: vec![-5.0, 0.0, 5.0, 10.0],
            geometries: Geometry::ALL.to_vec(),
            repeats: 1,
            seed: 0,
            skip_colocated: true,
            base: Scenario::default(),
        }
    }
}

/// One talker/noise combination; every SNR and geometry of a scene shares
/// its source signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneKey {
    pub speech_azimuth_deg: f64,
    pub noise_azimuth_deg: f64,
    pub noise_kind: NoiseKind,
    pub repeat: usize,
}

impl SceneKey {
    fn cmp_key(&self, o: &Self) -> std::cmp::Ordering {
        self.speech_azimuth_deg
            .total_cmp(&o.speech_azimuth_deg)
            .then(self.noise_azimuth_deg.total_cmp(&o.noise_azimuth_deg))
            .then(self.noise_kind.cmp(&o.noise_kind))
            .then(self.repeat.cmp(&o.repeat))
    }

    /// Seed depending only on the key and the grid seed.
    pub fn seed(&self, grid_seed: u64) -> u64 {
        let mut s = mix_seed(grid_seed, self.speech_azimuth_deg.to_bits());
        s = mix_seed(s, self.noise_azimuth_deg.to_bits());
        s = mix_seed(s, self.noise_kind as u64);
        mix_seed(s, self.repeat as u64)
    }
}

impl ExperimentGrid {
    pub fn parse(text: &str) -> Result<Self> {
        let grid: Self = toml::from_str(text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |axis: &str| Err(Error::InvalidScenario(format!("grid axis {axis} is empty")));
        if self.speech_azimuths_deg.is_empty() {
            return empty("speech_azimuths_deg");
        }
        if self.noise_azimuths_deg.is_empty() {
            return empty("noise_azimuths_deg");
        }
        if self.noise_kinds.is_empty() {
            return empty("noise_kinds");
        }
        if self.snr_db.is_empty() {
            return empty("snr_db");
        }
        if self.geometries.is_empty() {
            return empty("geometries");
        }
        if self.repeats == 0 {
            return empty("repeats");
        }
        if self.scenes().is_empty() {
            return Err(Error::InvalidScenario("every grid combination is colocated".into()));
        }
        for key in self.scenes() {
            self.scenario_for(&key, self.snr_db[0], self.geometries[0]).validate()?;
        }
        Ok(())
    }

    pub fn scenes(&self) -> Vec<SceneKey> {
        let mut keys = Vec::new();
        for &s in &self.speech_azimuths_deg {
            for &n in &self.noise_azimuths_deg {
                if self.skip_colocated && circular_diff_deg(s, n).abs() < 1e-9 {
                    continue;
                }
                for &kind in &self.noise_kinds {
                    for repeat in 0..self.repeats {
                        keys.push(SceneKey {
                            speech_azimuth_deg: s,
                            noise_azimuth_deg: n,
                            noise_kind: kind,
                            repeat,
                        });
                    }
                }
            }
        }
        keys
    }

    pub fn scenario_for(&self, key: &SceneKey, snr_db: f64, geometry: Geometry) -> Scenario {
        let mut sc = self.base.clone();
        sc.seed = key.seed(self.seed);
        sc.snr_db = snr_db;
        sc.speech.azimuth_deg = key.speech_azimuth_deg;
        sc.noise.azimuth_deg = key.noise_azimuth_deg;
        sc.noise.kind = key.noise_kind;
        sc.array.geometry = geometry;
        sc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub speech_azimuth_deg: f64,
    pub noise_azimuth_deg: f64,
    pub noise_kind: NoiseKind,
    pub repeat: usize,
    pub seed: u64,
    pub snr_db: f64,
    pub geometry: Geometry,
    pub reference: usize,
    pub noise_gain: f64,
    pub si_sdr_in: Option<f64>,
    pub si_sdr_out: Option<f64>,
    pub doa_estimate_deg: Option<f64>,
    pub doa_truth_deg: Option<f64>,
    pub duration_s: f64,
    /// Stage failures joined with "; ".
    pub failures: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub geometry: Geometry,
    pub snr_db: f64,
    pub cells: usize,
    pub failed_cells: usize,
    pub si_sdr_in: Option<f64>,
    pub si_sdr_out: Option<f64>,
    pub acc15: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub grid: ExperimentGrid,
    pub summary: Vec<GroupSummary>,
    pub rows: Vec<GridRow>,
}

fn scene_rows(grid: &ExperimentGrid, key: &SceneKey) -> Vec<GridRow> {
    let make_row = |snr: f64, geometry: Geometry, seed: u64| GridRow {
        speech_azimuth_deg: key.speech_azimuth_deg,
        noise_azimuth_deg: key.noise_azimuth_deg,
        noise_kind: key.noise_kind,
        repeat: key.repeat,
        seed,
        snr_db: snr,
        geometry,
        reference: 0,
        noise_gain: f64::NAN,
        si_sdr_in: None,
        si_sdr_out: None,
        doa_estimate_deg: None,
        doa_truth_deg: None,
        duration_s: grid.base.duration_s,
        failures: String::new(),
    };
    let scenario = grid.scenario_for(key, grid.snr_db[0], Geometry::Optimized);
    let fail_all = |msg: String| -> Vec<GridRow> {
        grid.snr_db
            .iter()
            .flat_map(|&snr| grid.geometries.iter().map(move |&g| (snr, g)))
            .map(|(snr, g)| GridRow {
                failures: msg.clone(),
                ..make_row(snr, g, scenario.seed)
            })
            .collect()
    };
    let pipeline = match Pipeline::new(&scenario) {
        Ok(p) => p,
        Err(e) => return fail_all(format!("simulation: {e}")),
    };
    let initial = match pipeline.initial_images() {
        Ok(i) => i,
        Err(e) => return fail_all(format!("simulation: {e}")),
    };
    // static images do not depend on the SNR; simulate them once per scene
    let mut static_images = BTreeMap::new();
    for &g in grid.geometries.iter().filter(|g| **g != Geometry::Optimized) {
        let images = if g.name() == LOCALIZATION_POSE {
            Ok(initial.clone())
        } else {
            pipeline.microphones(g, None).and_then(|m| pipeline.images(&m))
        };
        static_images.insert(g, images.map_err(|e| format!("simulation: {e}")));
    }

    let mut rows = Vec::new();
    for &snr in &grid.snr_db {
        let gain = match pipeline.matched_gain(&initial, snr) {
            Ok(g) => g,
            Err(e) => {
                for &g in &grid.geometries {
                    rows.push(GridRow {
                        failures: format!("simulation: {e}"),
                        ..make_row(snr, g, scenario.seed)
                    });
                }
                continue;
            }
        };
        for &geometry in &grid.geometries {
            let mut row = make_row(snr, geometry, scenario.seed);
            row.noise_gain = gain;
            row.reference = pipeline.reference_for(geometry);
            let mut failures: Vec<String> = Vec::new();
            let images = if geometry == Geometry::Optimized {
                match pipeline.reposition(&initial, gain) {
                    Ok(repo) => {
                        for stage in &repo.stages {
                            if let StageRecord::Localization {
                                estimate_deg, truth_deg, ..
                            } = stage
                            {
                                row.doa_estimate_deg = Some(*estimate_deg);
                                row.doa_truth_deg = Some(*truth_deg);
                            }
                        }
                        failures.extend(repo.failures.iter().map(|f| format!("{:?}: {}", f.stage, f.message)));
                        pipeline
                            .microphones(geometry, Some(&repo.pose))
                            .and_then(|m| pipeline.images(&m))
                    }
                    Err(e) => Err(e),
                }
                .map_err(|e| format!("kinematics: {e}"))
            } else {
                static_images[&geometry].clone()
            };
            match images.map(|im| pipeline.enhance(&im, gain, row.reference)) {
                Ok(Ok(e)) => {
                    row.si_sdr_in = Some(e.si_sdr_in);
                    row.si_sdr_out = Some(e.si_sdr_out);
                }
                Ok(Err(e)) => failures.push(format!("enhancement: {e}")),
                Err(msg) => failures.push(msg),
            }
            row.failures = failures.join("; ");
            rows.push(row);
        }
    }
    rows
}

fn row_order(a: &GridRow, b: &GridRow) -> std::cmp::Ordering {
    let key = |r: &GridRow| SceneKey {
        speech_azimuth_deg: r.speech_azimuth_deg,
        noise_azimuth_deg: r.noise_azimuth_deg,
        noise_kind: r.noise_kind,
        repeat: r.repeat,
    };
    key(a)
        .cmp_key(&key(b))
        .then(a.snr_db.total_cmp(&b.snr_db))
        .then(a.geometry.cmp(&b.geometry))
}

/// Runs every cell (in parallel) and aggregates per geometry and SNR. The
/// result does not depend on evaluation order.
pub fn run_grid(grid: &ExperimentGrid) -> Result<GridReport> {
    grid.validate()?;
    let scenes = grid.scenes();
    let mut rows: Vec<GridRow> = scenes.par_iter().flat_map_iter(|key| scene_rows(grid, key)).collect();
    rows.sort_by(row_order);
    let summary = summarize(grid, &rows)?;
    Ok(GridReport {
        grid: grid.clone(),
        summary,
        rows,
    })
}

/// Per-(geometry, SNR) weighted means over rows that completed.
pub fn summarize(grid: &ExperimentGrid, rows: &[GridRow]) -> Result<Vec<GroupSummary>> {
    let mut snrs = grid.snr_db.clone();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let mut geometries = grid.geometries.clone();
    geometries.sort();
    geometries.dedup();
    let mut out = Vec::new();
    for &geometry in &geometries {
        for &snr in &snrs {
            let group: Vec<&GridRow> = rows.iter().filter(|r| r.geometry == geometry && r.snr_db == snr).collect();
            let eval: Vec<EvalRow> = group
                .iter()
                .filter_map(|r| {
                    Some(EvalRow {
                        label: String::new(),
                        si_sdr_in: r.si_sdr_in?,
                        si_sdr_out: r.si_sdr_out?,
                        doa_estimate_deg: r.doa_estimate_deg,
                        doa_truth_deg: r.doa_truth_deg,
                        weight: r.duration_s,
                    })
                })
                .collect();
            let failed = group.len() - eval.len();
            let report = if eval.is_empty() {
                None
            } else {
                Some(EvalReport::from_rows(eval)?)
            };
            out.push(GroupSummary {
                geometry,
                snr_db: snr,
                cells: group.len(),
                failed_cells: failed,
                si_sdr_in: report.as_ref().map(|r| r.si_sdr_in),
                si_sdr_out: report.as_ref().map(|r| r.si_sdr_out),
                acc15: report.and_then(|r| r.acc15),
            });
        }
    }
    Ok(out)
}

impl GridReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_rows_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        for row in &self.rows {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_rows_csv(r: impl std::io::Read) -> Result<Vec<GridRow>> {
        csv::Reader::from_reader(r)
            .deserialize()
            .map(|row| row.map_err(Error::from))
            .collect()
    }

    /// Mean SI-SDR out against mean SI-SDR in, one line per geometry and SNR,
    /// as a CSV suitable for plotting.
    pub fn write_curve_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["geometry", "snr_db", "si_sdr_in", "si_sdr_out", "acc15", "cells", "failed_cells"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        for s in &self.summary {
            csv.write_record([
                s.geometry.name().to_string(),
                format!("{}", s.snr_db),
                opt(s.si_sdr_in),
                opt(s.si_sdr_out),
                opt(s.acc15),
                s.cells.to_string(),
                s.failed_cells.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Text table of mean SI-SDR out (dB): geometries by row, SNRs by column.
    pub fn table(&self) -> String {
        table_from_summary(&self.summary)
    }
}

pub fn table_from_summary(summary: &[GroupSummary]) -> String {
    let mut snrs: Vec<f64> = summary.iter().map(|s| s.snr_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let mut geometries: Vec<Geometry> = summary.iter().map(|s| s.geometry).collect();
    geometries.sort();
    geometries.dedup();
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "SI-SDR out");
    for snr in &snrs {
        let _ = write!(out, "{:>10}", format!("{snr} dB"));
    }
    out.push('\n');
    for g in &geometries {
        let _ = write!(out, "{:<12}", g.name());
        for snr in &snrs {
            let cell = summary
                .iter()
                .find(|s| s.geometry == *g && s.snr_db == *snr)
                .and_then(|s| s.si_sdr_out)
                .map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = write!(out, "{cell:>10}");
        }
        out.push('\n');
    }
    if summary.iter().any(|s| s.acc15.is_some()) {
        let _ = write!(out, "{:<12}", format!("ACC{ACC_TOLERANCE_DEG:.0}"));
        for snr in &snrs {
            let cell = summary
                .iter()
                .find(|s| s.snr_db == *snr && s.acc15.is_some())
                .and_then(|s| s.acc15)
                .map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = write!(out, "{cell:>10}");
        }
        out.push('\n');
    }
    out
}
