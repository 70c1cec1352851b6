//! Experiment configuration: command-line flags layered over an optional
//! TOML file layered over built-in defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use krigreg::{RegularizerConfig, TestFunction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_COUNTS: [usize; 4] = [16, 36, 64, 121];
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_GRID: usize = 101;
pub const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Uniform random draws in the domain.
    Random,
    /// Square lattice including the domain corners; counts must be squares.
    Lattice,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Random => "random",
            Layout::Lattice => "lattice",
        }
    }
}

/// Flags shared by the experiment and fitting commands. Every field is
/// optional so that unset flags fall through to the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Key-value TOML file with the same keys as the long flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Test function name, comma list, or `all`.
    #[arg(long)]
    pub function: Option<String>,
    /// Training-set sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Seed for point sampling and for the regularizer's seeding scan.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Points per side of the evaluation lattice.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Baseline and starting theta: one value or one per dimension.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub theta0: Option<Vec<f64>>,
    /// Box for every theta component, as `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_negative_numbers = true)]
    pub theta_bounds: Option<Vec<f64>>,
    /// Number of random seeding candidates.
    #[arg(long)]
    pub seeds_n: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub step_tol: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub layout: Option<Layout>,
    /// Replace the sampled values with this constant.
    #[arg(long, allow_negative_numbers = true)]
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    function: Option<String>,
    counts: Option<Vec<usize>>,
    seed: Option<u64>,
    grid: Option<usize>,
    theta0: Option<OneOrMany>,
    #[serde(alias = "theta_bounds")]
    theta_bounds: Option<Vec<f64>>,
    #[serde(alias = "seeds_n")]
    seeds_n: Option<usize>,
    #[serde(alias = "max_iters")]
    max_iters: Option<usize>,
    #[serde(alias = "step_tol")]
    step_tol: Option<f64>,
    #[serde(alias = "out_dir")]
    out_dir: Option<PathBuf>,
    layout: Option<Layout>,
    constant: Option<f64>,
}

fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Fully resolved settings. Serialized form feeds the config hash, so the
/// output directory is kept out of it.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub functions: Vec<TestFunction>,
    pub counts: Vec<usize>,
    pub rng_seed: u64,
    pub grid: usize,
    pub layout: Layout,
    pub constant: Option<f64>,
    pub regularizer: RegularizerConfig,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn parse_functions(spec: &str) -> Result<Vec<TestFunction>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(TestFunction::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in spec.split(',') {
        let f = TestFunction::from_str(name.trim()).map_err(|e| anyhow::anyhow!("{e}"))?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        bail!("no test function given");
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => read_file_config(path)?,
            None => FileConfig::default(),
        };
        let function = args.function.clone().or(file.function).unwrap_or_else(|| "griewank".into());
        let counts = args.counts.clone().or(file.counts).unwrap_or_else(|| DEFAULT_COUNTS.to_vec());
        let rng_seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        let grid = args.grid.or(file.grid).unwrap_or(DEFAULT_GRID);
        let layout = args.layout.or(file.layout).unwrap_or(Layout::Random);
        let constant = args.constant.or(file.constant);
        let out_dir = args.out_dir.clone().or(file.out_dir).unwrap_or_else(|| DEFAULT_OUT_DIR.into());

        let mut regularizer = RegularizerConfig { rng_seed, ..RegularizerConfig::default() };
        if let Some(t) = args.theta0.clone().or(file.theta0.map(OneOrMany::into_vec)) {
            regularizer.theta0 = t;
        }
        if let Some(b) = args.theta_bounds.clone().or(file.theta_bounds) {
            let [lo, hi] = b[..] else {
                bail!("theta bounds need exactly two values lo,hi, got {}", b.len());
            };
            regularizer.theta_bounds = (lo, hi);
        }
        if let Some(n) = args.seeds_n.or(file.seeds_n) {
            regularizer.n_seeds = n;
        }
        if let Some(n) = args.max_iters.or(file.max_iters) {
            regularizer.max_iters = n;
        }
        if let Some(t) = args.step_tol.or(file.step_tol) {
            regularizer.step_tol = t;
        }

        let config = Self {
            functions: parse_functions(&function)?,
            counts,
            rng_seed,
            grid,
            layout,
            constant,
            regularizer,
            out_dir,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            bail!("no sample counts given");
        }
        if let Some(c) = self.counts.iter().find(|&&c| c < 2) {
            bail!("sample count {c} is below 2");
        }
        if self.grid < 2 {
            bail!("grid resolution {} is below 2", self.grid);
        }
        if let Some(c) = self.constant {
            if !c.is_finite() {
                bail!("constant value must be finite");
            }
        }
        self.regularizer.resolve_theta0(2).map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the resolved settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
