//! Run configuration: a JSON file, overridden field by field from the command line.

use std::path::{Path, PathBuf};

use collective::demand::{ControlSpouse, ModelSpec};
use collective::panel::Good;
use collective::psychometrics::{ImputationMode, RatioBands, DEFAULT_CUTOFF};
use collective::sim::SimScenario;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_HOUSEHOLDS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Panel CSV.
    pub panel: PathBuf,
    /// JSON column map, for sources whose headers differ from the logical names.
    #[serde(default)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_households")]
    pub households: usize,
    /// Data seed; derived from the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scenario: SimScenario,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            households: DEFAULT_HOUSEHOLDS,
            seed: None,
            scenario: SimScenario::default(),
        }
    }
}

fn default_households() -> usize {
    DEFAULT_HOUSEHOLDS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Text,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            formats: default_formats(),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Text, ReportFormat::Csv]
}

fn default_anchor() -> Good {
    Good::Cm
}

fn default_cutoff() -> f64 {
    DEFAULT_CUTOFF
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub input: Option<InputConfig>,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    /// Master seed of every bootstrap.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Bootstrap replications.
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub imputation: ImputationMode,
    /// Control spouse, conditioning good, inverted factor, share denominator and solver.
    #[serde(default)]
    pub model: ModelSpec,
    /// Reference equation of the proportionality restrictions.
    #[serde(default = "default_anchor")]
    pub anchor: Good,
    #[serde(default)]
    pub ratio_bands: RatioBands,
    /// Fraction of the largest loading that marks a trait in the cut-off report.
    #[serde(default = "default_cutoff")]
    pub pca_cutoff: f64,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            simulation: None,
            seed: None,
            replications: None,
            imputation: ImputationMode::default(),
            model: ModelSpec::default(),
            anchor: default_anchor(),
            ratio_bands: RatioBands::default(),
            pca_cutoff: default_cutoff(),
            output: OutputConfig::default(),
        }
    }
}

/// Command-line values that replace config fields when given.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Panel CSV to analyze.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// JSON column map for the panel CSV.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Analyze simulated data instead of an input file.
    #[arg(long, global = true)]
    pub simulate: bool,
    /// JSON simulation scenario; implies --simulate.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Number of simulated couples; implies --simulate.
    #[arg(long, global = true)]
    pub households: Option<usize>,
    /// Seed of the simulated data; implies --simulate.
    #[arg(long, global = true)]
    pub data_seed: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Bootstrap replications.
    #[arg(long, short = 'B', global = true)]
    pub replications: Option<usize>,
    #[arg(long, global = true, value_parser = parse_imputation)]
    pub imputation: Option<ImputationMode>,
    /// Good whose share replaces a factor in the conditional system (cm, cf, lm, lf, C).
    #[arg(long, global = true, value_parser = parse_good)]
    pub conditioning_good: Option<Good>,
    /// Reference equation of the proportionality test (cm, cf, lm, lf, C).
    #[arg(long, global = true, value_parser = parse_good)]
    pub anchor: Option<Good>,
    /// Spouse whose age and education enter as controls (husband, wife).
    #[arg(long, global = true, value_parser = parse_controls)]
    pub controls: Option<ControlSpouse>,
    #[arg(long, global = true)]
    pub pca_cutoff: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Report formats; repeat or comma-separate.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    pub format: Vec<ReportFormat>,
}

fn parse_good(s: &str) -> Result<Good, String> {
    Good::from_label(s).ok_or_else(|| format!("unknown good {s:?}; expected cm, cf, lm, lf or C"))
}

fn parse_imputation(s: &str) -> Result<ImputationMode, String> {
    match s {
        "mean" => Ok(ImputationMode::Mean),
        "median" => Ok(ImputationMode::Median),
        _ => Err(format!("unknown imputation mode {s:?}; expected mean or median")),
    }
}

fn parse_controls(s: &str) -> Result<ControlSpouse, String> {
    match s {
        "husband" => Ok(ControlSpouse::Husband),
        "wife" => Ok(ControlSpouse::Wife),
        _ => Err(format!("unknown control spouse {s:?}; expected husband or wife")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{what} {}: {e}", path.display())))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        read_json(path, "config")
    }

    /// Config file (or defaults) with the flags applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut c = match &o.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &o.input {
            c.input = Some(InputConfig {
                panel: p.clone(),
                schema: c.input.as_ref().and_then(|i| i.schema.clone()),
            });
            c.simulation = None;
        }
        if let Some(s) = &o.schema {
            match c.input.as_mut() {
                Some(i) => i.schema = Some(s.clone()),
                None => return Err(CliError::Config("--schema needs an input panel".into())),
            }
        }
        if o.simulate || o.scenario.is_some() || o.households.is_some() || o.data_seed.is_some() {
            if o.input.is_some() {
                return Err(CliError::Config("--input and simulation flags are mutually exclusive".into()));
            }
            c.input = None;
            let sim = c.simulation.get_or_insert_with(SimulationConfig::default);
            if let Some(p) = &o.scenario {
                sim.scenario = read_json(p, "scenario")?;
            }
            if let Some(n) = o.households {
                sim.households = n;
            }
            if let Some(s) = o.data_seed {
                sim.seed = Some(s);
            }
        }
        if let Some(v) = o.seed {
            c.seed = Some(v);
        }
        if let Some(v) = o.replications {
            c.replications = Some(v);
        }
        if let Some(v) = o.imputation {
            c.imputation = v;
        }
        if let Some(v) = o.conditioning_good {
            c.model.conditioning_good = v;
        }
        if let Some(v) = o.anchor {
            c.anchor = v;
        }
        if let Some(v) = o.controls {
            c.model.controls = v;
        }
        if let Some(v) = o.pca_cutoff {
            c.pca_cutoff = v;
        }
        if let Some(v) = &o.out {
            c.output.dir = v.clone();
        }
        if !o.format.is_empty() {
            c.output.formats = o.format.clone();
        }
        c.output.formats.sort_unstable();
        c.output.formats.dedup();
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.input.is_some() && self.simulation.is_some() {
            return Err(CliError::Config("give either an input panel or a simulation, not both".into()));
        }
        if let Some(s) = &self.simulation {
            if s.households == 0 {
                return Err(CliError::Config("simulation needs at least one household".into()));
            }
            s.scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.pca_cutoff > 0.0 && self.pca_cutoff <= 1.0) {
            return Err(CliError::Config("pca_cutoff must lie in (0, 1]".into()));
        }
        if self.output.formats.is_empty() {
            return Err(CliError::Config("at least one report format is required".into()));
        }
        Ok(())
    }

    /// Seed and replication count, both required by bootstrap commands.
    pub fn bootstrap(&self) -> Result<(u64, usize), CliError> {
        match (self.seed, self.replications) {
            (Some(s), Some(b)) => Ok((s, b)),
            (None, _) => Err(CliError::Config("this command needs a seed (--seed or \"seed\")".into())),
            (_, None) => Err(CliError::Config(
                "this command needs a replication count (-B or \"replications\")".into(),
            )),
        }
    }

    pub fn wants(&self, f: ReportFormat) -> bool {
        self.output.formats.contains(&f)
    }
}
