use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qsq_core::codec::BitWidth;
use qsq_core::metrics::ScalarPolicy;
use qsq_core::pipeline::QuantizeOptions;
use qsq_core::quantizer::{AssignMode, GammaScale, Phi, QuantConfig, SearchGrid};
use qsq_core::tensor::GroupingMode;

#[derive(Debug, Parser)]
#[command(
    name = "qsq",
    version,
    about = "Power-of-two weight quantization toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a model manifest into a .qsq container.
    Quantize(QuantizeCmd),
    /// Print container metadata.
    Inspect(InspectCmd),
    /// Decode a container back to a manifest of approximate weights.
    Decode(DecodeCmd),
    /// Compare accuracy of the original and quantized model.
    Evaluate(EvaluateCmd),
    /// Sweep vector length and code width; write a design-space CSV.
    Sweep(SweepCmd),
    /// Histogram of CSD non-zero digit counts of the model weights.
    CsdAnalyze(CsdAnalyzeCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sigma,
    Nearest,
}

impl From<ModeArg> for AssignMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sigma => AssignMode::SigmaThreshold,
            ModeArg::Nearest => AssignMode::NearestLevel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    Channel,
    Filter,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// One scalar per kernel position (H·W·C per layer).
    Position,
    /// One scalar per quantization vector.
    Vector,
}

impl From<PolicyArg> for ScalarPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Position => ScalarPolicy::PerPosition,
            PolicyArg::Vector => ScalarPolicy::PerVector,
        }
    }
}

/// Level assignment and threshold selection.
#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Sigma)]
    pub mode: ModeArg,
    /// Upper band edge, as a multiple of the side RMS.
    #[arg(long, default_value_t = 1.5)]
    pub delta: f64,
    /// Zero-band half width, relative to the side RMS unless --gamma-absolute.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Treat --gamma as an absolute weight magnitude.
    #[arg(long)]
    pub gamma_absolute: bool,
    /// Pick (delta, gamma) per layer by exhaustive search.
    #[arg(long, conflicts_with_all = ["delta", "gamma"])]
    pub search: bool,
    /// Search grid for delta (comma separated).
    #[arg(long, value_delimiter = ',', requires = "search")]
    pub deltas: Option<Vec<f64>>,
    /// Search grid for gamma (comma separated).
    #[arg(long, value_delimiter = ',', requires = "search")]
    pub gammas: Option<Vec<f64>>,
}

impl ThresholdArgs {
    fn apply(&self, cfg: &mut QuantConfig) -> Result<Option<SearchGrid>> {
        cfg.mode = self.mode.into();
        cfg.delta = self.delta;
        cfg.gamma = self.gamma;
        cfg.gamma_scale = if self.gamma_absolute {
            GammaScale::Absolute
        } else {
            GammaScale::Relative
        };
        if !self.search {
            return Ok(None);
        }
        if self.mode == ModeArg::Nearest {
            bail!("--search only applies to --mode sigma");
        }
        let default = SearchGrid::default();
        let grid = SearchGrid {
            deltas: self.deltas.clone().unwrap_or(default.deltas),
            gammas: self.gammas.clone().unwrap_or(default.gammas),
        };
        if grid.deltas.is_empty() || grid.gammas.is_empty() {
            bail!("search grids must not be empty");
        }
        Ok(Some(grid))
    }
}

fn parse_phi(s: &str) -> Result<Phi, String> {
    let v: u32 = s.parse().map_err(|_| format!("`{s}` is not an integer"))?;
    Phi::try_from(v).map_err(|e| e.to_string())
}

fn parse_width(s: &str) -> Result<BitWidth, String> {
    let v: u8 = s.parse().map_err(|_| format!("`{s}` is not an integer"))?;
    BitWidth::try_from(v).map_err(|e| e.to_string())
}

/// Full quantizer configuration for one model.
#[derive(Debug, Clone, Args)]
pub struct QuantArgs {
    /// Largest level magnitude: 1, 2 or 4.
    #[arg(long, default_value = "4", value_parser = parse_phi)]
    pub phi: Phi,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long, value_enum, default_value_t = GroupingArg::Channel)]
    pub grouping: GroupingArg,
    /// Vector length for --grouping flat.
    #[arg(long)]
    pub n: Option<usize>,
    /// Code width in bits (2 or 3); must match phi unless --force widens it.
    #[arg(long, value_parser = parse_width)]
    pub be: Option<BitWidth>,
    /// Allow --be wider than phi requires.
    #[arg(long, requires = "be")]
    pub force: bool,
    /// Quantize dense layers too.
    #[arg(long)]
    pub include_dense: bool,
}

impl QuantArgs {
    pub fn options(&self) -> Result<QuantizeOptions> {
        let grouping = match (self.grouping, self.n) {
            (GroupingArg::Flat, Some(n)) => GroupingMode::Flat(n),
            (GroupingArg::Flat, None) => bail!("--grouping flat requires --n"),
            (_, Some(_)) => bail!("--n only applies to --grouping flat"),
            (GroupingArg::Channel, None) => GroupingMode::ChannelWise,
            (GroupingArg::Filter, None) => GroupingMode::FilterWise,
        };
        let mut config = QuantConfig {
            phi: self.phi,
            grouping,
            ..QuantConfig::default()
        };
        let search = self.thresholds.apply(&mut config)?;
        let opts = QuantizeOptions {
            config,
            bit_width: self.be,
            force: self.force,
            search,
            include_dense: self.include_dense,
        };
        opts.config.validate()?;
        opts.resolve_bit_width()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// MNIST IDX image file.
    #[arg(long, requires = "labels", conflicts_with = "cifar")]
    pub images: Option<PathBuf>,
    /// MNIST IDX label file.
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    /// CIFAR-10 binary batch files (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    pub cifar: Vec<PathBuf>,
    /// Evaluate only the first LIMIT samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

impl DatasetArgs {
    pub fn is_given(&self) -> bool {
        self.images.is_some() || !self.cifar.is_empty()
    }
}

#[derive(Debug, Args)]
pub struct QuantizeCmd {
    /// Model manifest (JSON).
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub quant: QuantArgs,
    /// Output container path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectCmd {
    /// Container to inspect.
    pub container: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeCmd {
    /// Container to decode.
    pub container: PathBuf,
    /// Output directory for the manifest and its blobs.
    #[arg(long)]
    pub out: PathBuf,
    /// File name of the manifest inside the output directory.
    #[arg(long, default_value = "model.json")]
    pub manifest_name: String,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    /// Model manifest (JSON) with a network section.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    /// Model manifest (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Vector lengths (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
    pub n: Vec<usize>,
    /// Code widths (comma separated, each 2 or 3).
    #[arg(long, value_delimiter = ',', default_value = "2,3", value_parser = parse_width)]
    pub be: Vec<BitWidth>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long, value_enum, default_value_t = PolicyArg::Vector)]
    pub scalar_policy: PolicyArg,
    /// Quantize and count dense layers too.
    #[arg(long)]
    pub include_dense: bool,
    /// Dataset for the accuracy column (left empty when absent).
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SweepCmd {
    pub fn options(&self, n: usize, be: BitWidth, phi: Phi) -> Result<QuantizeOptions> {
        let mut config = QuantConfig {
            phi,
            grouping: GroupingMode::Flat(n),
            ..QuantConfig::default()
        };
        let search = self.thresholds.apply(&mut config)?;
        config.validate()?;
        Ok(QuantizeOptions {
            config,
            bit_width: Some(be),
            force: false,
            search,
            include_dense: self.include_dense,
        })
    }
}

#[derive(Debug, Args)]
pub struct CsdAnalyzeCmd {
    /// Model manifest (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Fractional bits of the fixed-point format.
    #[arg(long, default_value_t = 12)]
    pub frac_bits: u32,
    /// Total width of the fixed-point format.
    #[arg(long, default_value_t = 16)]
    pub width: u32,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
