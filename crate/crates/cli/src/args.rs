//! Command-line surface: subcommands, flags, and the layered
//! configuration (TOML file values overridden by flags, both overriding
//! built-in defaults).

use clap::{Args, Parser, Subcommand};
use dctnn_core::conformal::ConformalConfig;
use dctnn_core::decomp::Structure;
use dctnn_core::network::Link;
use dctnn_core::pipeline::FitOptions;
use dctnn_core::selector::SelectorConfig;
use dctnn_core::simgen::SimConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Parser)]
#[command(
    name = "dctnn",
    version,
    about = "Dual-channel tensor network pipeline: simulate, fit, quantify uncertainty, select structure"
)]
pub struct Cli {
    /// Cap on worker threads for data-parallel sections (0 = default).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Verbose logging.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Simulate(SimulateArgs),
    /// Two-stage fit (decomposition + network) on a dataset.
    Fit(FitArgs),
    /// Conformal ROC bands and AUC intervals for a fitted model.
    Uq(UqArgs),
    /// Two-direction conformal structure selection between two fits.
    Select(SelectArgs),
    /// Monte Carlo coverage and selection-frequency experiment.
    Coverage(CoverageArgs),
    /// Print the manifest and metrics of an artifact directory.
    Inspect(InspectArgs),
}

/// TOML configuration file: every section optional, every field
/// optional; flags win over file values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub simulate: Option<SimulateSection>,
    pub fit: Option<FitSection>,
    pub conformal: Option<ConformalSection>,
    pub selector: Option<SelectorSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub regime: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub dims: Option<Vec<usize>>,
    pub tucker_ranks: Option<Vec<usize>>,
    pub cp_rank: Option<usize>,
    pub support_size: Option<usize>,
    pub refinement_shape: Option<Vec<usize>>,
    pub noise_sigma: Option<f64>,
    pub labeler_depth: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub structure: Option<String>,
    pub tucker_ranks: Option<Vec<usize>>,
    pub cp_rank: Option<usize>,
    pub hooi_iters: Option<usize>,
    pub als_iters: Option<usize>,
    pub decomp_tol: Option<f64>,
    pub ref_shape: Option<Vec<usize>>,
    pub depth: Option<usize>,
    pub widths: Option<String>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub link: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalSection {
    pub k_tr: Option<usize>,
    pub k_ca: Option<usize>,
    pub omega: Option<f64>,
    pub alpha: Option<f64>,
    pub grid: Option<usize>,
    pub inflate: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorSection {
    pub k: Option<usize>,
    pub omega: Option<f64>,
    pub alpha: Option<f64>,
    pub grid: Option<usize>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn parse_structure(s: &str) -> Result<Structure, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "tucker" => Ok(Structure::Tucker),
        "cp" => Ok(Structure::Cp),
        other => Err(CliError::Config(format!(
            "unknown structure '{other}' (expected tucker or cp)"
        ))),
    }
}

fn parse_link(s: &str) -> Result<Link, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "sigmoid" => Ok(Link::Sigmoid),
        "identity" => Ok(Link::Identity),
        other => Err(CliError::Config(format!(
            "unknown link '{other}' (expected sigmoid or identity)"
        ))),
    }
}

/// Hidden widths as "R1,R2,..:K1,K2,.." (core shape, refinement shape).
fn parse_widths(s: &str) -> Result<(Vec<usize>, Vec<usize>), CliError> {
    let (core, refinement) = s
        .split_once(':')
        .ok_or_else(|| CliError::Config("widths want CORE:REFINEMENT, e.g. 4,4,4:3,3,3".into()))?;
    let parse = |part: &str| -> Result<Vec<usize>, CliError> {
        part.split(',')
            .map(|x| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Config(format!("bad width entry '{x}'")))
            })
            .collect()
    };
    Ok((parse(core)?, parse(refinement)?))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SimulateArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional TOML config file ([simulate] section).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Signal regime: tucker or cp.
    #[arg(long)]
    pub regime: Option<String>,
    /// Total sample count (class-balanced).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Fold a `[simulate]` section's optional fields into a base config.
pub fn apply_sim_section(cfg: &mut SimConfig, section: &SimulateSection) {
    if let Some(n) = section.n {
        cfg.n = n;
    }
    if let Some(dims) = &section.dims {
        cfg.dims = dims.clone();
    }
    if let Some(r) = &section.tucker_ranks {
        cfg.tucker_ranks = r.clone();
    }
    if let Some(r) = section.cp_rank {
        cfg.cp_rank = r;
    }
    if let Some(s) = section.support_size {
        cfg.support_size = s;
    }
    if let Some(s) = &section.refinement_shape {
        cfg.refinement_shape = s.clone();
    }
    if let Some(s) = section.noise_sigma {
        cfg.noise_sigma = s;
    }
    if let Some(d) = section.labeler_depth {
        cfg.labeler_depth = d;
    }
}

/// Fold a `[fit]` section's decomposition and optimizer fields into base
/// options (structure, widths, and link are handled by the caller).
pub fn apply_fit_section(opts: &mut FitOptions, section: &FitSection) {
    if let Some(r) = &section.tucker_ranks {
        opts.tucker_ranks = r.clone();
    }
    if let Some(r) = section.cp_rank {
        opts.cp_rank = r;
    }
    if let Some(v) = section.hooi_iters {
        opts.hooi_iters = v;
    }
    if let Some(v) = section.als_iters {
        opts.als_iters = v;
    }
    if let Some(v) = section.decomp_tol {
        opts.decomp_tol = v;
    }
    if let Some(v) = &section.ref_shape {
        opts.ref_shape = v.clone();
    }
    if let Some(v) = section.depth {
        opts.depth = v;
    }
    if let Some(v) = section.lambda {
        opts.train.lambda = v;
    }
    if let Some(v) = section.tau {
        opts.train.tau = v;
    }
    if let Some(v) = section.lr {
        opts.train.learning_rate = v;
    }
    if let Some(v) = section.weight_decay {
        opts.train.weight_decay = v;
    }
    if let Some(v) = section.batch_size {
        opts.train.batch_size = v;
    }
    if let Some(v) = section.epochs {
        opts.train.epochs = v;
    }
    if let Some(v) = section.seed {
        opts.train.seed = v;
    }
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<SimConfig, CliError> {
        let file = load_file_config(self.config.as_deref())?;
        let section = file.simulate.unwrap_or_default();
        let regime_str = self
            .regime
            .clone()
            .or(section.regime.clone())
            .unwrap_or_else(|| "tucker".into());
        let regime = parse_structure(&regime_str)?;
        let seed = self.seed.or(section.seed).unwrap_or(1);
        let mut cfg = match regime {
            Structure::Tucker => SimConfig::tucker(seed),
            Structure::Cp => SimConfig::cp(seed),
        };
        apply_sim_section(&mut cfg, &section);
        if let Some(n) = self.n {
            cfg.n = n;
        }
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct FitArgs {
    /// Dataset directory produced by `simulate`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for the fit artifacts.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional TOML config file ([fit] section).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Decomposition structure: tucker or cp.
    #[arg(long)]
    pub structure: Option<String>,
    /// Network depth (hidden layer pairs).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Hidden widths as CORE:REFINEMENT, e.g. 4,4,4:3,3,3.
    #[arg(long)]
    pub widths: Option<String>,
    /// Clipped-L1 penalty level.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Clipped-L1 threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output link: sigmoid or identity.
    #[arg(long)]
    pub link: Option<String>,
}

/// Fit options plus the optional hidden-width override (the width of the
/// core channel cannot be resolved until the decomposition structure's
/// core shape is known).
pub struct ResolvedFit {
    pub options: FitOptions,
    pub hidden_override: Option<(Vec<usize>, Vec<usize>)>,
    pub link: Link,
}

impl FitArgs {
    pub fn resolve(&self) -> Result<ResolvedFit, CliError> {
        let file = load_file_config(self.config.as_deref())?;
        let section = file.fit.unwrap_or_default();
        let structure_str = self
            .structure
            .clone()
            .or(section.structure.clone())
            .unwrap_or_else(|| "tucker".into());
        let mut opts = FitOptions::new(parse_structure(&structure_str)?);
        apply_fit_section(&mut opts, &section);
        if let Some(v) = self.depth {
            opts.depth = v;
        }
        if let Some(v) = self.lambda {
            opts.train.lambda = v;
        }
        if let Some(v) = self.tau {
            opts.train.tau = v;
        }
        if let Some(v) = self.lr {
            opts.train.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            opts.train.epochs = v;
        }
        if let Some(v) = self.seed {
            opts.train.seed = v;
        }
        let link_str = self
            .link
            .clone()
            .or(section.link.clone())
            .unwrap_or_else(|| "sigmoid".into());
        let link = parse_link(&link_str)?;
        let hidden_override = match self.widths.clone().or(section.widths.clone()) {
            Some(w) => Some(parse_widths(&w)?),
            None => None,
        };
        Ok(ResolvedFit {
            options: opts,
            hidden_override,
            link,
        })
    }
}

// ---------------------------------------------------------------------------
// uq / select / coverage / inspect
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct UqArgs {
    /// Fit directory produced by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Dataset directory the fit was trained on.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k_tr: Option<usize>,
    #[arg(long)]
    pub k_ca: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Inflated split-conformal quantile indexing.
    #[arg(long)]
    pub inflate: bool,
    /// Replace the KNN smoother output by the predicted probability
    /// itself (zero conformity scores; degenerate-band diagnostics).
    #[arg(long)]
    pub self_smoother: bool,
}

impl UqArgs {
    pub fn resolve(&self) -> Result<ConformalConfig, CliError> {
        let file = load_file_config(self.config.as_deref())?;
        let section = file.conformal.unwrap_or_default();
        let mut cfg = ConformalConfig::default();
        if let Some(v) = self.k_tr.or(section.k_tr) {
            cfg.k_tr = v;
        }
        if let Some(v) = self.k_ca.or(section.k_ca) {
            cfg.k_ca = v;
        }
        if let Some(v) = self.omega.or(section.omega) {
            cfg.omega = v;
        }
        if let Some(v) = self.alpha.or(section.alpha) {
            cfg.alpha = v;
        }
        if let Some(v) = self.grid.or(section.grid) {
            cfg.grid = v;
        }
        cfg.inflate = self.inflate || section.inflate.unwrap_or(false);
        validate_alpha(cfg.alpha)?;
        Ok(cfg)
    }
}

#[derive(Args)]
pub struct SelectArgs {
    /// Fit directory for the Tucker-structure model.
    #[arg(long)]
    pub fit_a: PathBuf,
    /// Fit directory for the CP-structure model.
    #[arg(long)]
    pub fit_b: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Local calibration neighborhood size.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
}

impl SelectArgs {
    pub fn resolve(&self) -> Result<SelectorConfig, CliError> {
        let file = load_file_config(self.config.as_deref())?;
        let section = file.selector.unwrap_or_default();
        let mut cfg = SelectorConfig::default();
        if let Some(v) = self.k.or(section.k) {
            cfg.k = v;
        }
        if let Some(v) = self.omega.or(section.omega) {
            cfg.omega = v;
        }
        if let Some(v) = self.alpha.or(section.alpha) {
            cfg.alpha = v;
        }
        if let Some(v) = self.grid.or(section.grid) {
            cfg.grid = v;
        }
        validate_alpha(cfg.alpha)?;
        Ok(cfg)
    }
}

#[derive(Args)]
pub struct CoverageArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Signal regime to replicate: tucker or cp.
    #[arg(long)]
    pub regime: Option<String>,
    /// Replications.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Per-replication sample count.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Skip the selection-frequency half of the experiment.
    #[arg(long)]
    pub skip_selector: bool,
}

#[derive(Args)]
pub struct InspectArgs {
    /// Artifact directory (dataset, fit, uq, select, or coverage).
    pub path: PathBuf,
}

pub fn validate_alpha(alpha: f64) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(CliError::Config(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    Ok(())
}
