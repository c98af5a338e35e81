//! `lumen-eit` command-line interface.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lumen_eit::experiments::{run_experiment, ExperimentConfig};
use lumen_eit::fem::{ForwardConfig, ForwardModel, DEFAULT_CONTACT_IMPEDANCE};
use lumen_eit::geometry::io::{load_mesh, save_mesh};
use lumen_eit::geometry::{phantom_mesh, CatheterSpec, LumenProfile, MeshResolution};
use lumen_eit::inverse::{
    reconstruct_absolute, reconstruct_difference, AbsoluteConfig, DifferenceMode, ReconConfig, ReconMesh, ReconMode,
};
use lumen_eit::noise::detectability::{sweep_detectability, DetectabilityConfig};
use lumen_eit::noise::spacing::{sweep_spacing, SpacingConfig};
use lumen_eit::noise::{add_noise, NoiseModel, NoiseReference};
use lumen_eit::protocol::{Frame, Protocol};

#[derive(Parser)]
#[command(name = "lumen-eit", version, about = "Balloon-catheter EIT simulation and reconstruction")]
struct Cli {
    /// Noise seed (also overrides an experiment config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Phantom mesh preset: coarse, desk, fine or recon.
    #[arg(long, global = true)]
    resolution: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Circle,
    Ellipse,
    Crescent,
    Indented,
}

#[derive(clap::Args)]
struct PhantomArgs {
    #[arg(long, value_enum, default_value = "circle")]
    shape: Shape,
    /// Lumen (major) diameter, mm.
    #[arg(long, default_value_t = 25.0)]
    diameter: f64,
    #[arg(long, default_value_t = 1.0)]
    aspect_ratio: f64,
    /// Major axis or feature azimuth, degrees from electrode 1.
    #[arg(long)]
    rotation: Option<f64>,
    /// Indenter depth for the indented shape, mm.
    #[arg(long, default_value_t = 4.0)]
    indent_depth: f64,
    /// Clamp the boundary to a partially inflated balloon of this radius, mm.
    #[arg(long)]
    balloon_radius: Option<f64>,
    /// Centre-to-centre ring spacing, mm.
    #[arg(long, default_value_t = 10.0)]
    ring_spacing: f64,
}

impl PhantomArgs {
    fn profile(&self) -> LumenProfile {
        let mut p = match self.shape {
            Shape::Circle => LumenProfile::circle(self.diameter),
            Shape::Ellipse => LumenProfile::ellipse(self.diameter, self.aspect_ratio),
            Shape::Crescent => LumenProfile::crescent(self.diameter),
            Shape::Indented => LumenProfile::indented(self.diameter, self.indent_depth),
        };
        if let Some(r) = self.rotation {
            p = p.with_rotation(r);
        }
        if let Some(r) = self.balloon_radius {
            p = p.with_balloon_radius(r);
        }
        p
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Absolute,
    Td,
    Ptd,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom mesh and write it as VTK plus an electrode map.
    Mesh {
        #[command(flatten)]
        phantom: PhantomArgs,
    },
    /// Simulate one frame for a phantom (or a stored mesh) and protocol.
    Forward {
        /// Mesh written by `mesh`; the phantom options are ignored when given.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[command(flatten)]
        phantom: PhantomArgs,
        /// `radial`, `full`, or a protocol CSV file.
        #[arg(long, default_value = "radial")]
        protocol: String,
        /// Add noise at this SNR.
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long, default_value = "per-measurement")]
        noise_reference: String,
        #[arg(long, default_value_t = DEFAULT_CONTACT_IMPEDANCE)]
        contact_impedance: f64,
    },
    /// Ring-spacing sweep of current spread and wall sensitivity.
    SweepSpacing {
        /// Ring spacings, mm.
        #[arg(long, value_delimiter = ',')]
        spacings: Option<Vec<f64>>,
    },
    /// Size and ellipticity detectability sweep.
    SweepDetect {
        #[arg(long, value_delimiter = ',')]
        diameters: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        aspect_ratios: Option<Vec<f64>>,
        #[arg(long, default_value_t = 60.0)]
        snr_db: f64,
        /// Noisy repetitions per case for the detection-rate cross-check.
        #[arg(long, default_value_t = 0)]
        monte_carlo: usize,
    },
    /// Reconstruct an image from stored frames.
    Reconstruct {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Frame CSV to image.
        #[arg(long)]
        frame: PathBuf,
        /// Reference frame CSV (required for td and ptd).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Regularisation weight; cross-validated for difference modes when
        /// omitted.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 4)]
        max_iterations: usize,
        /// Diameter of the circular reconstruction model, mm.
        #[arg(long, default_value_t = 30.0)]
        diameter: f64,
    },
    /// Run a scenario from a config file.
    Experiment {
        config: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let resolution = || -> Result<MeshResolution> { Ok(MeshResolution::named(cli.resolution.as_deref().unwrap_or("desk"))?) };
    match &cli.command {
        Command::Mesh { phantom } => {
            let profile = phantom.profile();
            let catheter = CatheterSpec::with_spacing(phantom.ring_spacing);
            let mesh = phantom_mesh(&profile, &catheter, &resolution()?)?;
            fs::create_dir_all(&out)?;
            let path = out.join("mesh.vtk");
            save_mesh(&mesh, &path)?;
            println!("{} ({} nodes, {} elements)", path.display(), mesh.node_count(), mesh.element_count());
        }
        Command::Forward {
            mesh,
            phantom,
            protocol,
            snr_db,
            noise_reference,
            contact_impedance,
        } => {
            let protocol = load_protocol(protocol)?;
            let mesh = match mesh {
                Some(p) => load_mesh(p).with_context(|| format!("loading mesh {}", p.display()))?,
                None => phantom_mesh(
                    &phantom.profile(),
                    &CatheterSpec::with_spacing(phantom.ring_spacing),
                    &resolution()?,
                )?,
            };
            let model = ForwardModel::new(
                mesh,
                ForwardConfig {
                    contact_impedance: *contact_impedance,
                    ..ForwardConfig::default()
                },
            )?;
            let mut frame = model.frame(&model.homogeneous(), &protocol)?;
            if let Some(snr_db) = snr_db {
                let noise = NoiseModel {
                    snr_db: *snr_db,
                    seed: cli.seed.unwrap_or(0),
                    reference: noise_reference.parse::<NoiseReference>()?,
                };
                frame = add_noise(&frame, &noise, 0)?;
            }
            fs::create_dir_all(&out)?;
            let path = out.join("frame.csv");
            frame.write_csv(BufWriter::new(fs::File::create(&path)?))?;
            println!("{}", path.display());
        }
        Command::SweepSpacing { spacings } => {
            let defaults = SpacingConfig::default();
            let config = SpacingConfig {
                spacings: spacings.clone().unwrap_or(defaults.spacings),
                resolution: resolution()?,
                ..SpacingConfig::default()
            };
            let result = sweep_spacing(&config)?;
            fs::create_dir_all(&out)?;
            let path = out.join("spacing.csv");
            result.write_csv(&path)?;
            println!("{}", path.display());
        }
        Command::SweepDetect {
            diameters,
            aspect_ratios,
            snr_db,
            monte_carlo,
        } => {
            let defaults = DetectabilityConfig::default();
            let config = DetectabilityConfig {
                diameters: diameters.clone().unwrap_or(defaults.diameters),
                aspect_ratios: aspect_ratios.clone().unwrap_or(defaults.aspect_ratios),
                resolution: resolution()?,
                noise: NoiseModel {
                    snr_db: *snr_db,
                    seed: cli.seed.unwrap_or(0),
                    ..NoiseModel::default()
                },
                monte_carlo_trials: *monte_carlo,
                ..DetectabilityConfig::default()
            };
            let result = sweep_detectability(&config)?;
            fs::create_dir_all(&out)?;
            result.write_cases_csv(&out.join("detectability_cases.csv"))?;
            result.write_summary_csv(&out.join("detectability_summary.csv"))?;
            result.write_failures_csv(&out.join("detectability_failures.csv"))?;
            let show = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
            for (d, f) in result.diameters.iter().zip(&result.f_max) {
                println!("D = {d} mm: f_max = {}", show(*f));
            }
            println!("size limit: {} mm", show(result.size_limit));
        }
        Command::Reconstruct {
            mode,
            frame,
            reference,
            lambda,
            max_iterations,
            diameter,
        } => {
            let frame = read_frame(frame)?;
            let reference = reference.as_deref().map(read_frame).transpose()?;
            let rm = ReconMesh::new(&ReconConfig {
                diameter: *diameter,
                protocol: frame.protocol.clone(),
                ..ReconConfig::default()
            })?;
            let image = match (mode, reference) {
                (Mode::Absolute, _) => {
                    let config = AbsoluteConfig {
                        lambda: lambda.unwrap_or(AbsoluteConfig::default().lambda),
                        max_iterations: *max_iterations,
                        ..AbsoluteConfig::default()
                    };
                    reconstruct_absolute(&frame, &rm, &config)?
                }
                (Mode::Td | Mode::Ptd, None) => bail!("difference reconstruction needs --reference"),
                (Mode::Td, Some(r)) => reconstruct_difference(&frame, &r, &rm, *lambda, DifferenceMode::TimeDifference)?,
                (Mode::Ptd, Some(r)) => {
                    reconstruct_difference(&frame, &r, &rm, *lambda, DifferenceMode::PseudoTimeDifference)?
                }
            };
            fs::create_dir_all(&out)?;
            let stem = match image.mode {
                ReconMode::Absolute => "absolute",
                ReconMode::TimeDifference => "td",
                ReconMode::PseudoTimeDifference => "ptd",
            };
            image.write_vtk(&rm, &out.join(format!("{stem}.vtk")))?;
            image.write_csv(&out.join(format!("{stem}.csv")))?;
            println!(
                "{stem}: lambda {}, {} iteration(s), misfit {:.3e} V",
                image.lambda,
                image.iterations,
                image.residual_history.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Experiment { config } => {
            let mut cfg = ExperimentConfig::from_path(config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(r) = &cli.resolution {
                cfg.resolution = r.clone();
            }
            if let Some(o) = &cli.out {
                cfg.output = o.clone();
            }
            let manifest = run_experiment(&cfg)?;
            println!(
                "{} ({} artifacts)",
                manifest.path().display(),
                manifest.artifacts.len()
            );
        }
    }
    Ok(())
}

fn load_protocol(name: &str) -> Result<Protocol> {
    if matches!(name, "radial" | "full") {
        return Ok(Protocol::named(name)?);
    }
    let path = Path::new(name);
    let file = fs::File::open(path).with_context(|| format!("protocol `{name}` is neither built in nor a file"))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
    Ok(Protocol::read_csv(stem, file)?)
}

fn read_frame(path: &Path) -> Result<Frame> {
    let file = fs::File::open(path).with_context(|| format!("opening frame {}", path.display()))?;
    Frame::read_csv(file).with_context(|| format!("reading frame {}", path.display()))
}
