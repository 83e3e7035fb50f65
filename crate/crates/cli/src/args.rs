use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsc_core::Norm;

#[derive(Debug, Parser)]
#[command(name = "gsc", version, about = "Group sparse coding image restoration")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for masks and sensing matrices.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// key=value file; every key mirrors a flag, command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub stop: Option<Stop>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stop {
    /// Stop when PSNR against `--oracle` drops.
    Oracle,
    /// Stop when the relative change of Z falls below 1e-4.
    Relchange,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise a degraded observation from a clean image.
    #[command(subcommand)]
    Degrade(Degrade),
    /// Restore an image from a degraded observation.
    #[command(subcommand)]
    Restore(Restore),
    /// Compare shrunk singular values of groups against the clean image.
    Analyze(AnalyzeArgs),
    /// Run the norm x image PSNR grid for one preset.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum Degrade {
    /// Random pixel mask; writes the masked image and the mask.
    Mask {
        #[arg(long = "in")]
        input: PathBuf,
        /// Fraction of pixels removed, in [0, 1).
        #[arg(long)]
        missing: f64,
    },
    /// Block compressive sensing; writes a measurement file.
    Cs {
        #[arg(long = "in")]
        input: PathBuf,
        /// Measurements per pixel, in (0, 1].
        #[arg(long)]
        ratio: f64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, value_parser = parse_norm)]
    pub norm: Norm,
    #[arg(long)]
    pub preset: String,
    /// Ground truth, used for the PSNR trace and `--stop oracle`.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Output image (default: derived from the input name in --out-dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Restore {
    Inpaint {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    Cs {
        #[arg(long)]
        meas: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub clean: PathBuf,
    /// Degraded or initial image the groups are built on.
    #[arg(long)]
    pub degraded: PathBuf,
    /// Mask of `--degraded`; killed pixels are filled with the observed mean.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value = "miss80")]
    pub preset: String,
    /// Reference patch origin `row,col`; repeatable. Default: image center.
    #[arg(long = "at", value_parser = parse_coord)]
    pub at: Vec<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory of .png/.pgm test images.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub preset: String,
    /// Comma-separated norms.
    #[arg(long, value_delimiter = ',', value_parser = parse_norm, default_value = "l1,lp,wl1,wlp")]
    pub norms: Vec<Norm>,
}

fn parse_norm(s: &str) -> Result<Norm, String> {
    s.parse()
}

fn parse_coord(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| format!("expected row,col, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((n(r)?, n(c)?))
}
