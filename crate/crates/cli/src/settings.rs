//! Command-line surface and layered configuration.
//!
//! Every run is described by a flat set of key=value settings. Values are
//! resolved in three layers: built-in defaults, then an optional config
//! file, then command-line flags. The fully resolved set is echoed into
//! the output directory so any artifact can be traced back to the exact
//! configuration that produced it.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Top-level command line.
#[derive(Debug, Parser)]
#[command(
    name = "cebnm",
    version,
    about = "Goal-driven digit classification with contrastive attention and \
             an ACh/NE goal-inference loop"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the two-head classifier and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate goal-driven prediction accuracy on generated test pairs.
    Eval(EvalArgs),
    /// Run the scheduled goal-inference experiments.
    Neuromod(NeuromodArgs),
    /// Export attention and masked-input grids for one digit pair.
    Saliency(SaliencyArgs),
    /// Run the built-in property suites.
    Selftest(SelftestArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to a key=value config file applied before other flags.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; all randomness derives from it.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Directory holding the MNIST files.
    #[arg(long, value_name = "PATH")]
    pub data_dir: Option<PathBuf>,
    /// Output directory for checkpoints, CSVs and the config echo.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of optimization steps.
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    /// Pairs per training batch.
    #[arg(long, value_name = "N")]
    pub batch: Option<usize>,
    /// Where to write the checkpoint (default: <out>/checkpoint.bin).
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint to evaluate (default: <out>/checkpoint.bin).
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Number of generated test pairs.
    #[arg(long, value_name = "N")]
    pub pairs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NeuromodArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint to drive predictions (default: <out>/checkpoint.bin).
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Independent runs per validity setting.
    #[arg(long, value_name = "N")]
    pub runs: Option<usize>,
    /// Goal switches (blocks) per run.
    #[arg(long, value_name = "N")]
    pub switches: Option<usize>,
    /// Validity setting: 0.99, 0.85, 0.70, random, or all.
    #[arg(long, value_name = "V")]
    pub validity: Option<String>,
    /// Softmax inverse temperature for goal selection.
    #[arg(long, value_name = "F")]
    pub beta: Option<f64>,
    /// Upper cap on ACh levels.
    #[arg(long, value_name = "F")]
    pub max_ach: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint to visualize (default: <out>/checkpoint.bin).
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Left and right digit of the pair, e.g. 4,5.
    #[arg(long, value_name = "L,R", default_value = "4,5")]
    pub digits: String,
    /// Goal to attend to: even, odd, low, high, or all.
    #[arg(long, value_name = "GOAL", default_value = "all")]
    pub goal: String,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Failures surfaced to the user, each mapped to a process exit code:
/// usage errors exit 1, data/runtime errors exit 2, and a failed
/// self-test exits 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(cebnm::Error),
    SelfTestFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::SelfTestFailed => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Data(err) => write!(f, "{err}"),
            CliError::SelfTestFailed => write!(f, "one or more self-test checks failed"),
        }
    }
}

impl From<cebnm::Error> for CliError {
    fn from(err: cebnm::Error) -> Self {
        CliError::Data(err)
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Data(cebnm::Error::Io(err))
    }
}

/// Which validity settings a neuromod invocation covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValiditySelection {
    All,
    Random,
    Fixed(f64),
}

impl ValiditySelection {
    fn parse(text: &str) -> Result<Self, CliError> {
        match text {
            "all" => Ok(ValiditySelection::All),
            "random" => Ok(ValiditySelection::Random),
            other => {
                let v: f64 = other.parse().map_err(|_| {
                    CliError::Usage(format!(
                        "invalid validity '{other}': expected a number in (0.5, 1], 'random', or 'all'"
                    ))
                })?;
                if v > 0.5 && v <= 1.0 {
                    Ok(ValiditySelection::Fixed(v))
                } else {
                    Err(CliError::Usage(format!(
                        "validity {v} outside (0.5, 1]"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for ValiditySelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValiditySelection::All => write!(f, "all"),
            ValiditySelection::Random => write!(f, "random"),
            ValiditySelection::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Empty means `<out>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
    pub steps: usize,
    pub batch: usize,
    pub eval_interval: usize,
    pub eval_pairs: usize,
    pub learning_rate: f64,
    pub pairs: usize,
    pub runs: usize,
    pub switches: usize,
    pub trial_interval: usize,
    pub trial_range: usize,
    pub validity: ValiditySelection,
    pub beta: f64,
    pub max_ach: f64,
    pub ne_reset: f64,
    pub ach_correct: f64,
    pub ach_incorrect: f64,
    pub ne_correct: f64,
    pub ne_incorrect: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 1,
            data_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            steps: 4400,
            batch: 256,
            eval_interval: 200,
            eval_pairs: 2000,
            learning_rate: 0.001,
            pairs: 10_000,
            runs: 10,
            switches: 10,
            trial_interval: 400,
            trial_range: 30,
            validity: ValiditySelection::All,
            beta: 4.0,
            max_ach: 2.5,
            ne_reset: 0.25,
            ach_correct: 1.04,
            ach_incorrect: 0.99,
            ne_correct: 0.97,
            ne_incorrect: 1.02,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError> {
    value.parse().map_err(|_| {
        CliError::Usage(format!(
            "config line {line}: invalid value '{value}' for key '{key}'"
        ))
    })
}

impl Settings {
    /// Apply one config-file line (already split into key and value).
    fn apply_key(&mut self, key: &str, value: &str, line: usize) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse_value(key, value, line)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "steps" => self.steps = parse_value(key, value, line)?,
            "batch" => self.batch = parse_value(key, value, line)?,
            "eval_interval" => self.eval_interval = parse_value(key, value, line)?,
            "eval_pairs" => self.eval_pairs = parse_value(key, value, line)?,
            "learning_rate" => self.learning_rate = parse_value(key, value, line)?,
            "pairs" => self.pairs = parse_value(key, value, line)?,
            "runs" => self.runs = parse_value(key, value, line)?,
            "switches" => self.switches = parse_value(key, value, line)?,
            "trial_interval" => self.trial_interval = parse_value(key, value, line)?,
            "trial_range" => self.trial_range = parse_value(key, value, line)?,
            "validity" => self.validity = ValiditySelection::parse(value)?,
            "beta" => self.beta = parse_value(key, value, line)?,
            "max_ach" => self.max_ach = parse_value(key, value, line)?,
            "ne_reset" => self.ne_reset = parse_value(key, value, line)?,
            "ach_correct" => self.ach_correct = parse_value(key, value, line)?,
            "ach_incorrect" => self.ach_incorrect = parse_value(key, value, line)?,
            "ne_correct" => self.ne_correct = parse_value(key, value, line)?,
            "ne_incorrect" => self.ne_incorrect = parse_value(key, value, line)?,
            other => {
                return Err(CliError::Usage(format!(
                    "config line {line}: unknown key '{other}'"
                )))
            }
        }
        Ok(())
    }

    fn apply_file(&mut self, path: &PathBuf) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|err| {
            CliError::Usage(format!("cannot read config file {}: {err}", path.display()))
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {}: expected key=value, got '{line}'",
                    i + 1
                ))
            })?;
            self.apply_key(key.trim(), value.trim(), i + 1)?;
        }
        Ok(())
    }

    /// Defaults, then the config file, then the shared flags.
    pub fn resolve(common: &CommonArgs) -> Result<Settings, CliError> {
        let mut s = Settings::default();
        if let Some(path) = &common.config {
            s.apply_file(path)?;
        }
        if let Some(seed) = common.seed {
            s.seed = seed;
        }
        if let Some(dir) = &common.data_dir {
            s.data_dir = dir.clone();
        }
        if let Some(out) = &common.out {
            s.out_dir = out.clone();
        }
        Ok(s)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.bin"))
    }

    pub fn set_validity(&mut self, text: &str) -> Result<(), CliError> {
        self.validity = ValiditySelection::parse(text)?;
        Ok(())
    }

    /// The frozen key=value echo written next to every command's outputs.
    pub fn render(&self, command: &str) -> String {
        let mut out = String::from("# cebnm effective-config v1\n");
        out.push_str(&format!("command={command}\n"));
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("data_dir={}\n", self.data_dir.display()));
        out.push_str(&format!("out_dir={}\n", self.out_dir.display()));
        out.push_str(&format!(
            "checkpoint={}\n",
            self.checkpoint_path().display()
        ));
        out.push_str(&format!("steps={}\n", self.steps));
        out.push_str(&format!("batch={}\n", self.batch));
        out.push_str(&format!("eval_interval={}\n", self.eval_interval));
        out.push_str(&format!("eval_pairs={}\n", self.eval_pairs));
        out.push_str(&format!("learning_rate={}\n", self.learning_rate));
        out.push_str(&format!("pairs={}\n", self.pairs));
        out.push_str(&format!("runs={}\n", self.runs));
        out.push_str(&format!("switches={}\n", self.switches));
        out.push_str(&format!("trial_interval={}\n", self.trial_interval));
        out.push_str(&format!("trial_range={}\n", self.trial_range));
        out.push_str(&format!("validity={}\n", self.validity));
        out.push_str(&format!("beta={}\n", self.beta));
        out.push_str(&format!("max_ach={}\n", self.max_ach));
        out.push_str(&format!("ne_reset={}\n", self.ne_reset));
        out.push_str(&format!("ach_correct={}\n", self.ach_correct));
        out.push_str(&format!("ach_incorrect={}\n", self.ach_incorrect));
        out.push_str(&format!("ne_correct={}\n", self.ne_correct));
        out.push_str(&format!("ne_incorrect={}\n", self.ne_incorrect));
        out
    }
}
