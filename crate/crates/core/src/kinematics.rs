//! Serial-chain forward kinematics for the microphone-carrying arm and a
//! damped least-squares inverse-kinematics solver for listening poses.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IkFailure, Result};
use crate::geometry::{circular_diff_deg, Rot3, Transform, Vec3};
use crate::linalg::solve_real;
use crate::scalar::Real;

pub const DEFAULT_CHAIN_TOML: &str = include_str!("../data/default_chain.toml");

/// Total number of microphones a chain must carry.
pub const MICROPHONES: usize = 16;

// ---- description file -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub translation: [f64; 3],
    #[serde(default = "default_axis")]
    pub rotation_axis: [f64; 3],
    #[serde(default)]
    pub rotation_deg: f64,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl FrameSpec {
    fn to_transform<T: Real>(&self) -> Transform<T> {
        Transform::new(
            Rot3::from_axis_angle(Vec3::from_f64(self.rotation_axis), T::lit(self.rotation_deg.to_radians())),
            Vec3::from_f64(self.translation),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub origin: FrameSpec,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountSpec {
    pub name: String,
    pub link: usize,
    pub frame: FrameSpec,
    pub mics: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub azimuth_deg: f64,
    pub angles: Vec<f64>,
}

/// On-disk chain description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub name: String,
    pub pointing_axis: [f64; 3],
    pub tool: FrameSpec,
    pub joint: Vec<JointSpec>,
    pub mount: Vec<MountSpec>,
    #[serde(default)]
    pub seed: Vec<SeedSpec>,
    #[serde(default)]
    pub poses: BTreeMap<String, Vec<f64>>,
}

impl ChainFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

// ---- chain ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Joint<T> {
    pub name: String,
    pub origin: Transform<T>,
    pub axis: Vec3<T>,
    pub lower: T,
    pub upper: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mount<T> {
    pub name: String,
    pub link: usize,
    pub frame: Transform<T>,
    pub mics: Vec<Vec3<T>>,
}

/// Joint angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig<T>(pub Vec<T>);

impl<T: Real> JointConfig<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn from_f64(angles: &[f64]) -> Self {
        Self(angles.iter().map(|&a| T::lit(a)).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|a| a.as_f64()).collect()
    }

    pub fn angles(&self) -> &[T] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seed<T> {
    pub azimuth_deg: T,
    pub config: JointConfig<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain<T> {
    pub name: String,
    pub joints: Vec<Joint<T>>,
    pub tool: Transform<T>,
    /// End-effector axis (tool frame) that should face the speaker.
    pub pointing_axis: Vec3<T>,
    pub mounts: Vec<Mount<T>>,
    pub seeds: Vec<Seed<T>>,
    pub poses: BTreeMap<String, JointConfig<T>>,
}

/// Result of forward kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose<T> {
    /// Microphone positions, mount order.
    pub mics: Vec<Vec3<T>>,
    pub end_effector: Transform<T>,
    /// Link frames, base first.
    pub link_frames: Vec<Transform<T>>,
}

impl<T: Real> Pose<T> {
    pub fn pointing(&self, chain: &KinematicChain<T>) -> Vec3<T> {
        self.end_effector.apply_vector(chain.pointing_axis)
    }
}

impl<T: Real> KinematicChain<T> {
    pub fn from_file(file: &ChainFile) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidChain(msg));
        if file.joint.is_empty() {
            return invalid("chain has no joints".into());
        }
        let mut joints = Vec::with_capacity(file.joint.len());
        for (i, j) in file.joint.iter().enumerate() {
            let axis = Vec3::<T>::from_f64(j.axis);
            if axis.norm() == T::zero() {
                return invalid(format!("joint {} ({}) has a zero axis", i + 1, j.name));
            }
            if !(j.limits[0] < j.limits[1]) {
                return invalid(format!("joint {} ({}) limits are not ordered", i + 1, j.name));
            }
            joints.push(Joint {
                name: j.name.clone(),
                origin: j.origin.to_transform(),
                axis: axis.normalized(),
                lower: T::lit(j.limits[0]),
                upper: T::lit(j.limits[1]),
            });
        }
        let pointing = Vec3::<T>::from_f64(file.pointing_axis);
        if pointing.norm() == T::zero() {
            return invalid("pointing axis is zero".into());
        }
        let mut mounts = Vec::with_capacity(file.mount.len());
        for m in &file.mount {
            if m.link > joints.len() {
                return invalid(format!("mount {} on link {} of a {}-joint chain", m.name, m.link, joints.len()));
            }
            mounts.push(Mount {
                name: m.name.clone(),
                link: m.link,
                frame: m.frame.to_transform(),
                mics: m.mics.iter().map(|&p| Vec3::from_f64(p)).collect(),
            });
        }
        let total: usize = mounts.iter().map(|m| m.mics.len()).sum();
        if total != MICROPHONES {
            return invalid(format!("chain carries {total} microphones, expected {MICROPHONES}"));
        }
        let mut chain = Self {
            name: file.name.clone(),
            joints,
            tool: file.tool.to_transform(),
            pointing_axis: pointing.normalized(),
            mounts,
            seeds: Vec::new(),
            poses: BTreeMap::new(),
        };
        for s in &file.seed {
            let config = JointConfig::from_f64(&s.angles);
            chain.check_config(&config)?;
            chain.seeds.push(Seed {
                azimuth_deg: T::lit(s.azimuth_deg),
                config,
            });
        }
        for (name, angles) in &file.poses {
            let config = JointConfig::from_f64(angles);
            chain.check_config(&config)?;
            chain.poses.insert(name.clone(), config);
        }
        Ok(chain)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(&ChainFile::parse(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The bundled approximate arm.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_CHAIN_TOML).expect("bundled chain description is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn pose_named(&self, name: &str) -> Result<&JointConfig<T>> {
        self.poses
            .get(name)
            .ok_or_else(|| Error::InvalidChain(format!("no stored pose named {name:?}")))
    }

    pub fn check_config(&self, q: &JointConfig<T>) -> Result<()> {
        if q.0.len() != self.joints.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} joint angles for a {}-joint chain",
                q.0.len(),
                self.joints.len()
            )));
        }
        for (i, (j, &a)) in self.joints.iter().zip(&q.0).enumerate() {
            if !(a >= j.lower && a <= j.upper) {
                return Err(Error::JointLimit {
                    joint: i + 1,
                    angle: a.as_f64(),
                    lower: j.lower.as_f64(),
                    upper: j.upper.as_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &mut JointConfig<T>) {
        for (a, j) in q.0.iter_mut().zip(&self.joints) {
            *a = a.max(j.lower).min(j.upper);
        }
    }

    fn link_frames(&self, q: &JointConfig<T>) -> Vec<Transform<T>> {
        let mut frames = Vec::with_capacity(self.joints.len() + 1);
        let mut current = Transform::identity();
        frames.push(current);
        for (j, &angle) in self.joints.iter().zip(&q.0) {
            current = current
                .compose(&j.origin)
                .compose(&Transform::rotation(Rot3::from_axis_angle(j.axis, angle)));
            frames.push(current);
        }
        frames
    }

    /// Microphone positions and end-effector frame for joint angles `q`.
    pub fn forward_kinematics(&self, q: &JointConfig<T>) -> Result<Pose<T>> {
        self.check_config(q)?;
        Ok(self.forward_unchecked(q))
    }

    fn forward_unchecked(&self, q: &JointConfig<T>) -> Pose<T> {
        let link_frames = self.link_frames(q);
        let end_effector = link_frames[self.joints.len()].compose(&self.tool);
        let mics = self
            .mounts
            .iter()
            .flat_map(|m| {
                let frame = link_frames[m.link].compose(&m.frame);
                m.mics.iter().map(move |&p| frame.apply_point(p))
            })
            .collect();
        Pose {
            mics,
            end_effector,
            link_frames,
        }
    }
}

// ---- inverse kinematics -------------------------------------------------------

/// Where the end effector should go: `standoff` back from `position` along
/// `approach`, with the pointing axis aligned to `approach`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPose<T> {
    pub position: Vec3<T>,
    pub standoff: T,
    pub approach: Vec3<T>,
}

impl<T: Real> TargetPose<T> {
    pub fn new(position: Vec3<T>, standoff: T, approach: Vec3<T>) -> Self {
        Self {
            position,
            standoff,
            approach: approach.normalized(),
        }
    }

    pub fn goal_position(&self) -> Vec3<T> {
        self.position - self.approach * self.standoff
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkConfig {
    pub damping: f64,
    pub max_step_rad: f64,
    pub max_iterations: usize,
    /// Acceptance tolerances.
    pub position_tolerance_m: f64,
    pub angle_tolerance_deg: f64,
    /// Iteration stops early once both errors fall below these.
    pub converged_position_m: f64,
    pub converged_angle_deg: f64,
    /// Metres per radian of pointing error in the residual.
    pub orientation_weight_m: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 0.05,
            max_step_rad: 0.2,
            max_iterations: 200,
            position_tolerance_m: 5e-3,
            angle_tolerance_deg: 2.0,
            converged_position_m: 1e-5,
            converged_angle_deg: 1e-3,
            orientation_weight_m: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution<T> {
    pub config: JointConfig<T>,
    pub iterations: usize,
    pub position_error_m: T,
    pub angle_error_deg: T,
    /// Weighted residual before the first and after every accepted step.
    pub residual_trace: Vec<T>,
}

struct PoseError<T> {
    position: Vec3<T>,
    /// Rotation vector taking the current pointing axis onto the approach.
    rotation: Vec3<T>,
    angle: T,
    residual: T,
}

fn pose_error<T: Real>(chain: &KinematicChain<T>, pose: &Pose<T>, target: &TargetPose<T>, w: T) -> PoseError<T> {
    let position = target.goal_position() - pose.end_effector.translation;
    let a = pose.pointing(chain);
    let d = target.approach;
    let cross = a.cross(d);
    let sin = cross.norm();
    let angle = sin.atan2(a.dot(d));
    let axis = if sin > T::epsilon() {
        cross * (T::one() / sin)
    } else if angle > T::zero() {
        // antiparallel: any axis perpendicular to a
        let trial = if a.x.abs() < T::lit(0.9) {
            Vec3::new(T::one(), T::zero(), T::zero())
        } else {
            Vec3::new(T::zero(), T::one(), T::zero())
        };
        a.cross(trial).normalized()
    } else {
        Vec3::zeros()
    };
    let residual = (position.dot(position) + (w * angle) * (w * angle)).sqrt();
    PoseError {
        position,
        rotation: axis * angle,
        angle,
        residual,
    }
}

/// Damped least-squares IK on position plus pointing direction, with per-step
/// clamping and projection onto the joint limits. Steps that do not lower the
/// residual are retried with heavier damping, so the residual trace never
/// increases.
pub fn solve_ik<T: Real>(
    chain: &KinematicChain<T>,
    target: &TargetPose<T>,
    q0: &JointConfig<T>,
    config: &IkConfig,
) -> Result<IkSolution<T>> {
    chain.check_config(q0)?;
    let n = chain.num_joints();
    let w = T::lit(config.orientation_weight_m);
    let max_step = T::lit(config.max_step_rad);
    let mut q = q0.clone();
    let mut pose = chain.forward_unchecked(&q);
    let mut err = pose_error(chain, &pose, target, w);
    let mut trace = vec![err.residual];
    let mut iterations = 0;
    let conv_pos = T::lit(config.converged_position_m);
    let conv_ang = T::lit(config.converged_angle_deg.to_radians());

    while iterations < config.max_iterations {
        if err.position.norm() <= conv_pos && err.angle <= conv_ang {
            break;
        }
        // 6 × n Jacobian, row-major
        let ee = pose.end_effector.translation;
        let a = pose.pointing(chain);
        let mut jac = vec![T::zero(); 6 * n];
        for (i, joint) in chain.joints.iter().enumerate() {
            let frame = &pose.link_frames[i + 1];
            let omega = frame.apply_vector(joint.axis);
            let lin = omega.cross(ee - frame.translation);
            let ang = (omega - a * a.dot(omega)) * w;
            for (r, v) in [lin.x, lin.y, lin.z, ang.x, ang.y, ang.z].into_iter().enumerate() {
                jac[r * n + i] = v;
            }
        }
        let e = [
            err.position.x,
            err.position.y,
            err.position.z,
            err.rotation.x * w,
            err.rotation.y * w,
            err.rotation.z * w,
        ];
        let mut damping = T::lit(config.damping);
        let mut accepted = None;
        for _ in 0..8 {
            let Some(dq) = dls_step(&jac, &e, n, damping) else {
                damping = damping * T::lit(4.0);
                continue;
            };
            let largest = dq.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            let scale = if largest > max_step { max_step / largest } else { T::one() };
            let mut candidate = JointConfig(q.0.iter().zip(&dq).map(|(&a, &d)| a + d * scale).collect());
            chain.clamp(&mut candidate);
            let cand_pose = chain.forward_unchecked(&candidate);
            let cand_err = pose_error(chain, &cand_pose, target, w);
            if cand_err.residual < err.residual {
                accepted = Some((candidate, cand_pose, cand_err));
                break;
            }
            damping = damping * T::lit(4.0);
        }
        let Some((next_q, next_pose, next_err)) = accepted else {
            break;
        };
        q = next_q;
        pose = next_pose;
        err = next_err;
        trace.push(err.residual);
        iterations += 1;
    }

    let position_error = err.position.norm();
    let angle_error_deg = err.angle.to_degrees();
    if position_error.as_f64() <= config.position_tolerance_m && angle_error_deg.as_f64() < config.angle_tolerance_deg {
        Ok(IkSolution {
            config: q,
            iterations,
            position_error_m: position_error,
            angle_error_deg,
            residual_trace: trace,
        })
    } else {
        Err(Error::Unreachable(Box::new(IkFailure {
            best_angles: q.to_f64(),
            position_error_m: position_error.as_f64(),
            angle_error_deg: angle_error_deg.as_f64(),
            iterations,
            residual_trace: trace.iter().map(|r| r.as_f64()).collect(),
        })))
    }
}

/// `Jᵀ (J Jᵀ + λ² I)⁻¹ e` for a 6-row Jacobian.
fn dls_step<T: Real>(jac: &[T], e: &[T; 6], n: usize, damping: T) -> Option<Vec<T>> {
    let mut jjt = vec![T::zero(); 36];
    for r in 0..6 {
        for c in 0..6 {
            jjt[r * 6 + c] = (0..n).fold(T::zero(), |acc, i| acc + jac[r * n + i] * jac[c * n + i]);
        }
        jjt[r * 6 + r] = jjt[r * 6 + r] + damping * damping;
    }
    let y = solve_real(&jjt, e)?;
    Some((0..n).map(|i| (0..6).fold(T::zero(), |acc, r| acc + jac[r * n + i] * y[r])).collect())
}

/// Solves for a pose that puts the tool `standoff` in front of the speaker,
/// facing it, starting from the stored seed nearest in azimuth. Further seeds
/// are tried in order of azimuth distance if the nearest one fails.
pub fn listening_config<T: Real>(
    chain: &KinematicChain<T>,
    speaker_azimuth_deg: T,
    speaker_position: Vec3<T>,
    standoff: T,
    config: &IkConfig,
) -> Result<IkSolution<T>> {
    let horizontal = Vec3::new(speaker_position.x, speaker_position.y, T::zero());
    let approach = if horizontal.norm() > T::lit(1e-9) {
        horizontal.normalized()
    } else {
        Vec3::from_azimuth_deg(speaker_azimuth_deg)
    };
    let target = TargetPose::new(speaker_position, standoff, approach);

    let mut order: Vec<usize> = (0..chain.seeds.len()).collect();
    order.sort_by(|&a, &b| {
        let da = circular_diff_deg(chain.seeds[a].azimuth_deg, speaker_azimuth_deg).abs();
        let db = circular_diff_deg(chain.seeds[b].azimuth_deg, speaker_azimuth_deg).abs();
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    if order.is_empty() {
        return solve_ik(chain, &target, &JointConfig::zeros(chain.num_joints()), config);
    }
    let mut first_err = None;
    for idx in order {
        match solve_ik(chain, &target, &chain.seeds[idx].config, config) {
            Ok(sol) => return Ok(sol),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.expect("at least one seed was tried"))
}

/// Stand-in for camera-based face localization: the true position plus
/// zero-mean Gaussian error on each axis.
#[derive(Debug, Clone)]
pub struct TargetOracle {
    sigma_m: f64,
    rng: ChaCha8Rng,
}

impl TargetOracle {
    pub fn new(sigma_m: f64, seed: u64) -> Result<Self> {
        if !(sigma_m >= 0.0) || !sigma_m.is_finite() {
            return Err(Error::InvalidScenario(format!("target error sigma {sigma_m} must be >= 0")));
        }
        Ok(Self {
            sigma_m,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn locate<T: Real>(&mut self, truth: Vec3<T>) -> Vec3<T> {
        if self.sigma_m == 0.0 {
            return truth;
        }
        let normal = Normal::new(0.0, self.sigma_m).expect("validated sigma");
        let mut draw = || T::lit(normal.sample(&mut self.rng));
        truth + Vec3::new(draw(), draw(), draw())
    }
}
