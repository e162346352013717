//! `canopyfuse` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error or unknown
//! subcommand, 3 invalid configuration or inputs.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use canopyfuse::eval::EvalError;
use canopyfuse::fusion::FusionError;
use canopyfuse::geo::GeoError;
use canopyfuse::lidar::LidarError;
use canopyfuse::net::NetError;
use canopyfuse::synth::SynthError;
use canopyfuse::train::TrainError;

use config::PipelineConfig;

/// A configuration or input that fails validation.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "canopyfuse", version, about = "Canopy height mapping from sparse LiDAR footprints and multispectral rasters")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

macro_rules! overrides {
    ($(#[$doc:meta])* $name:ident { $($field:ident => $key:literal),* $(,)? }) => {
        $(#[$doc])*
        #[derive(Args, Debug, Default)]
        struct $name {
            $(
                #[arg(long, value_name = "VALUE", help = concat!("Overrides `", $key, "`"))]
                $field: Option<String>,
            )*
        }

        impl $name {
            fn pairs(&self) -> Vec<(&'static str, Option<&String>)> {
                vec![$(($key, self.$field.as_ref())),*]
            }
        }
    };
}

overrides!(SynthArgs {
    width => "width", height => "height", n_bands => "n_bands", height_field => "height_field",
    band_model => "band_model", pattern => "pattern", height_noise => "height_noise", dropout => "dropout",
});
overrides!(DenoiseArgs { photons => "photons", eps => "eps", min_pts => "min_pts" });
overrides!(StepsArgs { photons => "photons", step_m => "step_m" });
overrides!(WaveformArgs { points => "points", centers => "centers", diameter => "diameter", sigma_bins => "sigma_bins" });
overrides!(FuseArgs { bands => "bands", footprints => "footprints", harmonize => "harmonize" });
overrides!(TrainArgs {
    bands => "bands", labels => "labels", band_subset => "band_subset", branches => "branches",
    patch => "patch", step => "step", epochs => "epochs", iters_per_epoch => "iters_per_epoch",
});
overrides!(PredictArgs { checkpoint => "checkpoint", bands => "bands", patch => "patch", predict_step => "predict_step" });
overrides!(EvaluateArgs {
    prediction => "prediction", reference => "reference", checkpoint => "checkpoint", bands => "bands",
    tolerance => "tolerance",
});
overrides!(CvRandomArgs { bands => "bands", labels => "labels", k => "k" });
overrides!(CvGeoArgs {
    bands => "bands", labels => "labels", region_map => "region_map", mode => "mode",
    train_regions => "train_regions", test_regions => "test_regions",
});
overrides!(PotentialArgs { prediction => "prediction", accuracy => "accuracy", threshold => "threshold", tolerance => "tolerance" });

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic scene, footprints and a photon track.
    Synth(SynthArgs),
    /// Label photons as signal or noise with DBSCAN.
    Denoise(DenoiseArgs),
    /// Canopy top, ground and height per along-track step.
    Steps(StepsArgs),
    /// Simulate waveforms from a normalised point cloud and extract RH metrics.
    WaveformRh(WaveformArgs),
    /// Harmonise footprints and rasterise them onto the band grid.
    Fuse(FuseArgs),
    /// Train the regressor on a label raster.
    Train(TrainArgs),
    /// Predict a canopy height map with a checkpoint.
    Predict(PredictArgs),
    /// Score a height map against a reference raster.
    Evaluate(EvaluateArgs),
    /// Random k-fold cross-validation.
    CvRandom(CvRandomArgs),
    /// Region-blocked cross-validation.
    CvGeo(CvGeoArgs),
    /// Giant-tree potential map from a height map and interval accuracies.
    Potential(PotentialArgs),
}

impl Cmd {
    fn pairs(&self) -> Vec<(&'static str, Option<&String>)> {
        match self {
            Cmd::Synth(a) => a.pairs(),
            Cmd::Denoise(a) => a.pairs(),
            Cmd::Steps(a) => a.pairs(),
            Cmd::WaveformRh(a) => a.pairs(),
            Cmd::Fuse(a) => a.pairs(),
            Cmd::Train(a) => a.pairs(),
            Cmd::Predict(a) => a.pairs(),
            Cmd::Evaluate(a) => a.pairs(),
            Cmd::CvRandom(a) => a.pairs(),
            Cmd::CvGeo(a) => a.pairs(),
            Cmd::Potential(a) => a.pairs(),
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
            PipelineConfig::from_text(&text)?
        }
        None => PipelineConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        c.set(k.trim(), v.trim())?;
    }
    for (k, v) in cli.cmd.pairs() {
        if let Some(v) = v {
            c.set(k, v)?;
        }
    }
    if let Some(seed) = cli.seed {
        c.set("seed", &seed.to_string())?;
    }
    Ok(c)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let c = load_config(cli)?;
    let out = cli.out.as_path();
    match &cli.cmd {
        Cmd::Synth(_) => commands::synth(&c, out),
        Cmd::Denoise(_) => commands::denoise(&c, out),
        Cmd::Steps(_) => commands::steps(&c, out),
        Cmd::WaveformRh(_) => commands::waveform_rh(&c, out),
        Cmd::Fuse(_) => commands::fuse(&c, out),
        Cmd::Train(_) => commands::train(&c, out),
        Cmd::Predict(_) => commands::predict(&c, out),
        Cmd::Evaluate(_) => commands::evaluate(&c, out),
        Cmd::CvRandom(_) => commands::cv_random(&c, out),
        Cmd::CvGeo(_) => commands::cv_geo(&c, out),
        Cmd::Potential(_) => commands::potential(&c, out),
    }
}

/// Input-contract errors from the library map to exit code 3.
fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Invalid>()
            || matches!(
                c.downcast_ref::<EvalError>(),
                Some(
                    EvalError::ChannelMismatch { .. }
                        | EvalError::Regions(_)
                        | EvalError::Leakage(_)
                        | EvalError::TooFewSamples { .. }
                        | EvalError::MissingBin(_)
                        | EvalError::Invalid(_)
                )
            )
            || matches!(c.downcast_ref::<TrainError>(), Some(TrainError::InvalidConfig(_) | TrainError::TooFewSamples { .. }))
            || matches!(
                c.downcast_ref::<GeoError>(),
                Some(
                    GeoError::BandMismatch { .. }
                        | GeoError::BandIndex { .. }
                        | GeoError::PatchTooLarge { .. }
                        | GeoError::InvalidTiling { .. }
                        | GeoError::BadMagic(_)
                        | GeoError::VersionMismatch(_)
                        | GeoError::TruncatedPayload { .. }
                )
            )
            || matches!(
                c.downcast_ref::<NetError>(),
                Some(NetError::ChannelMismatch { .. } | NetError::Spec(_) | NetError::BadMagic(_) | NetError::Version(_) | NetError::Truncated { .. })
            )
            || matches!(c.downcast_ref::<FusionError>(), Some(FusionError::GridMismatch | FusionError::Harmonize(_)))
            || matches!(c.downcast_ref::<SynthError>(), Some(SynthError::InvalidConfig(_)))
            || matches!(
                c.downcast_ref::<LidarError>(),
                Some(LidarError::InvalidParameter(_) | LidarError::InvalidCoordinate { .. } | LidarError::InvalidHeight(_))
            )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CANOPYFUSE_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            if is_validation(&e) {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
