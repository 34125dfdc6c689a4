use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use beamkin::beamform::{apply_beamformer, batch_scm, mvdr_weights, reference_sweep};
use beamkin::kinematics::{listening_config, KinematicChain};
use beamkin::masking::{load_mask, oracle_irm};
use beamkin::metrics::si_sdr;
use beamkin::pipeline::{
    run_grid, summarize, table_from_summary, ExperimentGrid, GridReport, Pipeline, LOCALIZATION_POSE,
};
use beamkin::scene::{Geometry, Mixture, Scenario};
use beamkin::ssl::{estimate_doa, DoaGrid};
use beamkin::stft::{istft, Stft};
use beamkin::wav::{write_wav, WavFormat};
use beamkin::Point;

/// Environment variable naming the directory searched for relative
/// scenario and grid files.
const CONFIG_DIR_ENV: &str = "BEAMKIN_CONFIG_DIR";

#[derive(Parser)]
#[command(name = "beamkin", version, about = "Kinematics-aware microphone array simulation")]
struct Cli {
    /// Directory searched for relative configuration paths.
    #[arg(long, global = true, env = CONFIG_DIR_ENV)]
    config_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario end to end: localize, reposition, enhance.
    Run {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Directory for run.json and the enhanced WAV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid and write rows, summary and curve tables.
    Grid {
        /// Grid description (TOML).
        #[arg(long, default_value = "grid.toml")]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize the talker from the localization pose.
    Ssl {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Forgetting factor of the online covariances.
        #[arg(long)]
        alpha: Option<f64>,
        /// Azimuth grid resolution in degrees.
        #[arg(long)]
        grid_res: Option<f64>,
        /// Comma-separated 1-based channels used for localization.
        #[arg(long, value_delimiter = ',')]
        subset: Option<Vec<usize>>,
        /// `oracle`, or a mask file matching the simulated mixture.
        #[arg(long, default_value = "oracle")]
        mask: String,
    },
    /// MVDR enhancement on one geometry with a chosen reference channel.
    Enhance {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// optimized, static1, static2, static3 or static4.
        #[arg(long)]
        geometry: Option<Geometry>,
        /// 1-based reference channel.
        #[arg(long, conflicts_with = "ref_sweep")]
        r#ref: Option<usize>,
        /// Try every reference and keep the best SI-SDR.
        #[arg(long)]
        ref_sweep: bool,
        /// `oracle`, or a mask file matching the simulated mixture.
        #[arg(long, default_value = "oracle")]
        mask: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for a listening pose facing a talker.
    Pose(PoseArgs),
    /// Re-aggregate a rows CSV written by `grid`.
    Report {
        /// rows.csv from a grid run.
        #[arg(long)]
        rows: PathBuf,
        /// Also write the aggregated curve CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario description (TOML).
    #[arg(long, default_value = "scenario.toml")]
    scenario: PathBuf,
}

#[derive(Args)]
struct PoseArgs {
    /// Talker azimuth in degrees.
    #[arg(long)]
    azimuth: f64,
    #[arg(long, default_value_t = 1.5)]
    distance: f64,
    #[arg(long, default_value_t = 0.15)]
    height: f64,
    #[arg(long, default_value_t = 0.3)]
    standoff: f64,
    /// Chain description; the bundled arm when absent.
    #[arg(long)]
    chain: Option<PathBuf>,
}

/// Resolves a relative path against the working directory first, then the
/// configuration directory.
fn resolve(path: &Path, config_dir: Option<&Path>) -> Result<PathBuf> {
    if path.is_absolute() || path.exists() {
        return Ok(path.to_path_buf());
    }
    if let Some(dir) = config_dir {
        let candidate = dir.join(path);
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    bail!("{} not found", path.display())
}

fn load_scenario(arg: &ScenarioArg, config_dir: Option<&Path>) -> Result<Scenario> {
    let path = resolve(&arg.scenario, config_dir)?;
    Scenario::load(&path).with_context(|| format!("loading scenario {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let dir = cli.config_dir.as_deref();
    match cli.command {
        Command::Run { scenario, out } => {
            let sc = load_scenario(&scenario, dir)?;
            let (run, output) = Pipeline::new(&sc)?.run()?;
            let report = run.to_json()?;
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                write_text(&out.join("run.json"), &report)?;
                if let Some(signal) = &output {
                    write_wav(out.join("enhanced.wav"), signal, WavFormat::Float32)?;
                }
            }
            println!("{report}");
            if !run.failures.is_empty() {
                eprintln!("{} stage failure(s) recorded", run.failures.len());
            }
        }
        Command::Grid { config, out } => {
            let path = resolve(&config, dir)?;
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let grid = ExperimentGrid::parse(&text)?;
            let report = run_grid(&grid)?;
            fs::create_dir_all(&out)?;
            write_text(&out.join("grid.json"), &report.to_json()?)?;
            report.write_rows_csv(BufWriter::new(File::create(out.join("rows.csv"))?))?;
            report.write_curve_csv(BufWriter::new(File::create(out.join("curve.csv"))?))?;
            print!("{}", report.table());
        }
        Command::Ssl {
            scenario,
            alpha,
            grid_res,
            subset,
            mask,
        } => {
            let mut sc = load_scenario(&scenario, dir)?;
            if let Some(a) = alpha {
                sc.ssl.alpha = a;
            }
            if let Some(r) = grid_res {
                sc.ssl.grid_resolution_deg = r;
            }
            if let Some(s) = subset {
                sc.ssl.subset = s;
            }
            sc.ssl.validate()?;
            let p = Pipeline::new(&sc)?;
            let initial = p.initial_images()?;
            let gain = p.matched_gain(&initial, sc.snr_db)?;
            let mix = Mixture::with_gain(initial.speech, initial.noise, gain)?;
            let stft = Stft::new(sc.stft)?;
            let noisy = stft.analyze(&mix.mixture)?;
            let tf_mask = if mask == "oracle" {
                oracle_irm(&stft.analyze(&mix.speech)?, &stft.analyze(&mix.noise)?)?
            } else {
                load_mask(resolve(Path::new(&mask), dir)?)?
            };
            let q = p.chain().pose_named(LOCALIZATION_POSE)?;
            let mics: Vec<Point> = p.chain().forward_kinematics(q)?.mics;
            let grid = DoaGrid::horizontal(sc.ssl.grid_resolution_deg)?;
            let est = estimate_doa(&noisy, &tf_mask, &grid, &mics, &sc.ssl)?;
            let error = beamkin::geometry::circular_diff_deg(est.median_deg, sc.speech.azimuth_deg);
            let report = json!({
                "estimate_deg": est.median_deg,
                "truth_deg": sc.speech.azimuth_deg,
                "error_deg": error,
                "frames": est.per_frame_deg.len(),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Enhance {
            scenario,
            geometry,
            r#ref,
            ref_sweep,
            mask,
            out,
        } => {
            let mut sc = load_scenario(&scenario, dir)?;
            if let Some(g) = geometry {
                sc.array.geometry = g;
            }
            let p = Pipeline::new(&sc)?;
            let initial = p.initial_images()?;
            let gain = p.matched_gain(&initial, sc.snr_db)?;
            let pose = if sc.array.geometry == Geometry::Optimized {
                Some(p.reposition(&initial, gain)?.pose)
            } else {
                None
            };
            let images = p.images(&p.microphones(sc.array.geometry, pose.as_ref())?)?;
            let mix = Mixture::with_gain(images.speech, images.noise, gain)?;
            let stft = Stft::new(sc.stft)?;
            let clean = stft.analyze(&mix.speech)?;
            let noisy = stft.analyze(&mix.mixture)?;
            let tf_mask = if mask == "oracle" {
                oracle_irm(&clean, &stft.analyze(&mix.noise)?)?
            } else {
                load_mask(resolve(Path::new(&mask), dir)?)?
            };
            let score = |reference: usize, signal: &[f64]| si_sdr(signal, &mix.speech.channel(reference - 1).to_vec());
            let (reference, scores) = if ref_sweep {
                let sweep = reference_sweep(&noisy, &tf_mask, |r, spec| score(r, &istft(spec)?.channel(0).to_vec()))?;
                (sweep.best, Some(sweep.scores))
            } else {
                (r#ref.unwrap_or_else(|| p.reference_for(sc.array.geometry)), None)
            };
            let weights = mvdr_weights(&batch_scm(&noisy, &tf_mask)?, reference)?;
            let output = istft(&apply_beamformer(&noisy, &weights)?)?;
            let report = json!({
                "geometry": sc.array.geometry.name(),
                "reference": reference,
                "noise_gain": gain,
                "si_sdr_in": score(reference, &mix.mixture.channel(reference - 1).to_vec())?,
                "si_sdr_out": score(reference, &output.channel(0).to_vec())?,
                "degenerate_bins": weights.degenerate_bins(),
                "sweep_scores": scores,
            });
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                write_wav(out.join("enhanced.wav"), &output, WavFormat::Float32)?;
                write_wav(out.join("mixture.wav"), &mix.mixture, WavFormat::Float32)?;
                write_text(&out.join("enhance.json"), &serde_json::to_string_pretty(&report)?)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Pose(args) => {
            let chain = match &args.chain {
                Some(path) => KinematicChain::load(resolve(path, dir)?)?,
                None => KinematicChain::bundled(),
            };
            let mut speaker = Point::from_azimuth_deg(args.azimuth) * args.distance;
            speaker.z = args.height;
            let solution = listening_config(&chain, args.azimuth, speaker, args.standoff, &Default::default())?;
            let pose = chain.forward_kinematics(&solution.config)?;
            let report = json!({
                "angles_rad": solution.config.to_f64(),
                "iterations": solution.iterations,
                "position_error_m": solution.position_error_m,
                "angle_error_deg": solution.angle_error_deg,
                "end_effector": pose.end_effector.translation.to_f64(),
                "microphones": pose.mics.iter().map(|m| m.to_f64()).collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Report { rows, out } => {
            let rows = GridReport::read_rows_csv(File::open(&rows).with_context(|| format!("opening {}", rows.display()))?)?;
            if rows.is_empty() {
                bail!("no rows to report");
            }
            let grid = ExperimentGrid {
                snr_db: rows.iter().map(|r| r.snr_db).collect(),
                geometries: rows.iter().map(|r| r.geometry).collect(),
                ..ExperimentGrid::default()
            };
            let summary = summarize(&grid, &rows)?;
            let report = GridReport { grid, summary, rows };
            if let Some(out) = out {
                report.write_curve_csv(BufWriter::new(File::create(&out)?))?;
            }
            print!("{}", table_from_summary(&report.summary));
        }
    }
    Ok(())
}
