//! One function per subcommand. Each loads its data, runs the library and
//! writes its artifacts into the output directory.

use std::fs::File;
use std::path::{Path, PathBuf};

use collective::demand::{factor_name, DemandData};
use collective::estimation::{fit_system, substream, BootstrapConfig, SystemSummary};
use collective::inequality::{analyze_inequality, riceb_sample, InequalityReport};
use collective::panel::{load_panel, write_panel, write_rejects, ColumnMap, HouseholdObservation, PooledSample, Reject, Wave};
use collective::psychometrics::{construct_factors, impute_sample, FactorConstruction};
use collective::restrictions::{check_monotonicity, run_collective_tests, test_exclusion, test_proportionality};
use collective::sim::{generate, write_truth, SimOutput};
use collective::summary::{describe_sample, stability_by_age, write_stability_csv, write_summary_csv};
use rand::RngCore;
use serde::Serialize;

use crate::config::{ReportFormat, RunConfig, SimulationConfig};
use crate::report::{self, write_file, write_json};
use crate::CliError;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for collective::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Module { stage, source })
    }
}

/// Where the records came from and what happened to them on the way in.
#[derive(Debug, Clone, Serialize)]
pub struct SampleInfo {
    pub source: String,
    pub records: usize,
    pub households: usize,
    pub waves: Vec<Wave>,
    pub rejected_records: usize,
    pub dropped_households: Vec<String>,
    pub imputed_cells: usize,
}

struct Raw {
    accepted: Vec<HouseholdObservation>,
    rejects: Vec<Reject>,
    source: String,
}

struct Dataset {
    sample: PooledSample,
    rejects: Vec<Reject>,
    info: SampleInfo,
}

fn simulation_seed(config: &RunConfig, sim: &SimulationConfig) -> Result<u64, CliError> {
    match (sim.seed, config.seed) {
        (Some(s), _) => Ok(s),
        (None, Some(s)) => Ok(substream(s, u64::MAX - 1).next_u64()),
        (None, None) => Err(CliError::Config("simulated data needs a seed (--seed or --data-seed)".into())),
    }
}

fn simulate_data(config: &RunConfig, sim: &SimulationConfig) -> Result<SimOutput, CliError> {
    let seed = simulation_seed(config, sim)?;
    generate(&sim.scenario, sim.households, seed).stage("simulation")
}

fn load_raw(config: &RunConfig) -> Result<Raw, CliError> {
    if let Some(input) = &config.input {
        let file = File::open(&input.panel)
            .map_err(|e| CliError::Input(format!("cannot open {}: {e}", input.panel.display())))?;
        let schema = match &input.schema {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?;
                ColumnMap::from_json(&text).stage("ingest")?
            }
            None => ColumnMap::default(),
        };
        let loaded = load_panel(file, &schema).stage("ingest")?;
        return Ok(Raw {
            accepted: loaded.accepted,
            rejects: loaded.rejects,
            source: input.panel.display().to_string(),
        });
    }
    let Some(sim) = &config.simulation else {
        return Err(CliError::Config("no data: give an input panel or a simulation".into()));
    };
    let out = simulate_data(config, sim)?;
    Ok(Raw {
        accepted: out.observations(),
        rejects: Vec::new(),
        source: "simulation".into(),
    })
}

fn prepare(config: &RunConfig, raw: Raw) -> Result<Dataset, CliError> {
    let records = raw.accepted.len() + raw.rejects.len();
    let imputed = impute_sample(raw.accepted, config.imputation);
    if imputed.observations.is_empty() {
        return Err(CliError::Module {
            stage: "ingest",
            source: collective::Error::Input("no usable records".into()),
        });
    }
    let sample = PooledSample::from_observations(imputed.observations).stage("ingest")?;
    let mut households: Vec<&str> = sample.observations.iter().map(|o| o.household_id.as_str()).collect();
    households.sort_unstable();
    households.dedup();
    let info = SampleInfo {
        source: raw.source,
        records,
        households: households.len(),
        waves: sample.waves.clone(),
        rejected_records: raw.rejects.len(),
        dropped_households: imputed.dropped_households,
        imputed_cells: imputed.imputed_cells,
    };
    Ok(Dataset {
        sample,
        rejects: raw.rejects,
        info,
    })
}

fn load(config: &RunConfig) -> Result<Dataset, CliError> {
    let raw = load_raw(config)?;
    prepare(config, raw)
}

fn factors(config: &RunConfig, d: &Dataset) -> Result<FactorConstruction, CliError> {
    construct_factors(&d.sample.observations, 2, config.ratio_bands).stage("psychometrics")
}

fn demand_data(config: &RunConfig, d: &Dataset, f: &FactorConstruction) -> Result<DemandData, CliError> {
    DemandData::new(&d.sample, &f.factors, config.model).stage("demand_systems")
}

fn bootstrap_config(config: &RunConfig) -> Result<BootstrapConfig, CliError> {
    let (seed, b) = config.bootstrap()?;
    BootstrapConfig::new(b, seed).map_err(|e| CliError::Config(e.to_string()))
}

fn out(config: &RunConfig, name: &str) -> PathBuf {
    config.output.dir.join(name)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> collective::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Output(e.to_string()))?;
    Ok(buf)
}

fn write_text(config: &RunConfig, name: &str, command: &str, body: &str) -> Result<(), CliError> {
    if config.wants(ReportFormat::Text) {
        let mut s = report::text_header(command, config);
        s.push_str(body);
        write_file(&out(config, name), s.as_bytes())?;
    }
    Ok(())
}

fn write_rejects_csv(config: &RunConfig, rejects: &[Reject]) -> Result<(), CliError> {
    let bytes = csv_bytes(|b| write_rejects(b, rejects))?;
    write_file(&out(config, "rejects.csv"), &bytes)
}

#[derive(Serialize)]
struct IngestBody<'a> {
    sample: &'a SampleInfo,
    summary: &'a [collective::summary::VariableSummary],
    rejects: &'a [Reject],
}

/// Variable summary of the accepted records and the reject log.
pub fn ingest(config: &RunConfig) -> Result<(), CliError> {
    let raw = load_raw(config)?;
    let summary = describe_sample(&raw.accepted).stage("ingest")?;
    let rejects = raw.rejects.clone();
    let d = prepare(config, raw)?;
    let bytes = csv_bytes(|b| write_summary_csv(b, &summary))?;
    write_file(&out(config, "summary.csv"), &bytes)?;
    write_rejects_csv(config, &rejects)?;
    if config.wants(ReportFormat::Json) {
        let body = IngestBody {
            sample: &d.info,
            summary: &summary,
            rejects: &rejects,
        };
        write_json(&out(config, "summary.json"), "ingest", config, body)?;
    }
    write_text(config, "summary.txt", "ingest", &report::summary_text(&summary))?;
    log::info!("ingest: {} records accepted, {} rejected", d.sample.len(), rejects.len());
    Ok(())
}

#[derive(Serialize)]
struct SimulateBody {
    households: usize,
    records: usize,
    data_seed: u64,
    attempts: usize,
    rejected_draws: usize,
    truncated_noise_draws: usize,
}

/// Simulated panel CSV plus the noiseless allocations.
pub fn simulate(config: &RunConfig) -> Result<(), CliError> {
    if config.input.is_some() {
        return Err(CliError::Config("simulate takes a simulation config, not an input panel".into()));
    }
    let sim = config.simulation.clone().unwrap_or_default();
    let seed = simulation_seed(config, &sim)?;
    let o = generate(&sim.scenario, sim.households, seed).stage("simulation")?;
    let panel = csv_bytes(|b| write_panel(b, &o.observations()))?;
    write_file(&out(config, "panel.csv"), &panel)?;
    let truth = csv_bytes(|b| write_truth(b, &o.households))?;
    write_file(&out(config, "truth.csv"), &truth)?;
    let body = SimulateBody {
        households: sim.households,
        records: o.households.len(),
        data_seed: seed,
        attempts: o.attempts,
        rejected_draws: o.rejected,
        truncated_noise_draws: o.truncated,
    };
    if config.wants(ReportFormat::Json) {
        write_json(&out(config, "simulation.json"), "simulate", config, &body)?;
    }
    let text = format!(
        "Simulated sample\nrecords {}, households {}, data seed {}\ncovariate draws {}, rejected at corners {}, noise redraws {}\n",
        body.records, body.households, seed, body.attempts, body.rejected_draws, body.truncated_noise_draws
    );
    write_text(config, "simulation.txt", "simulate", &text)
}

#[derive(Serialize)]
struct PcaBody<'a> {
    sample: &'a SampleInfo,
    pca: &'a collective::psychometrics::PcaModel,
    cutoff: f64,
    cutoff_report: &'a [collective::psychometrics::CutoffEntry],
}

fn write_pca(config: &RunConfig, d: &Dataset, f: &FactorConstruction) -> Result<String, CliError> {
    let cutoffs = f.pca.cutoff_report(config.pca_cutoff);
    if config.wants(ReportFormat::Json) {
        let body = PcaBody {
            sample: &d.info,
            pca: &f.pca,
            cutoff: config.pca_cutoff,
            cutoff_report: &cutoffs,
        };
        write_json(&out(config, "pca.json"), "pca", config, body)?;
    }
    if config.wants(ReportFormat::Csv) {
        write_file(&out(config, "cutoffs.csv"), &report::cutoffs_csv(&cutoffs)?)?;
        write_file(&out(config, "factors.csv"), &report::factors_csv(&d.sample.observations, &f.factors)?)?;
    }
    Ok(report::pca_text(&f.pca, config.pca_cutoff, &cutoffs))
}

/// Principal components, cut-off report and per-couple factors.
pub fn pca(config: &RunConfig) -> Result<(), CliError> {
    let d = load(config)?;
    let f = factors(config, &d)?;
    let text = write_pca(config, &d, &f)?;
    write_text(config, "pca.txt", "pca", &text)
}

#[derive(Serialize)]
struct EstimateBody<'a> {
    sample: &'a SampleInfo,
    unconditional: SystemSummary,
    income_first_stage: &'a [collective::estimation::FirstStage],
    conditional: SystemSummary,
    conditioning_first_stage: &'a collective::estimation::FirstStage,
    monotonicity: &'a collective::restrictions::MonotonicityReport,
}

fn income_stage_rows(stages: &[collective::estimation::FirstStage]) -> Vec<(&str, &collective::estimation::FirstStage)> {
    ["y", "y_sq"].into_iter().zip(stages).collect()
}

/// Both demand systems and the polynomial specification, without tests.
pub fn estimate(config: &RunConfig) -> Result<(), CliError> {
    let d = load(config)?;
    let f = factors(config, &d)?;
    let data = demand_data(config, &d, &f)?;
    let u = data.build_unconditional(true).stage("demand_systems")?;
    let ufit = fit_system(&u.system.y, &u.system.x, &u.system.equations, config.model.fit).stage("demand_systems")?;
    let c = data.build_conditional(&u).stage("demand_systems")?;
    let cfit = fit_system(&c.system.y, &c.system.x, &c.system.equations, config.model.fit).stage("demand_systems")?;
    let mono = check_monotonicity(&data).stage("collective_tests")?;
    let (us, cs) = (ufit.summary(), cfit.summary());
    if config.wants(ReportFormat::Csv) {
        let bytes = report::coefficients_csv(&[("unconditional", &us), ("conditional", &cs), ("polynomial", &mono.system)])?;
        write_file(&out(config, "coefficients.csv"), &bytes)?;
    }
    let cond_dep = config.model.conditioning_good.share_name();
    let mut text = report::system_text("Unconditional demand system", &us, &report::default_rows);
    text.push('\n');
    text.push_str(&report::first_stage_text("Income first stage", &income_stage_rows(&u.income_first_stage)));
    text.push('\n');
    text.push_str(&report::system_text("Conditional demand system", &cs, &report::default_rows));
    text.push('\n');
    text.push_str(&report::first_stage_text("Conditioning share first stage", &[(&cond_dep, &c.first_stage)]));
    text.push('\n');
    text.push_str(&report::monotonicity_text(&mono));
    if config.wants(ReportFormat::Json) {
        let body = EstimateBody {
            sample: &d.info,
            unconditional: us,
            income_first_stage: &u.income_first_stage,
            conditional: cs,
            conditioning_first_stage: &c.first_stage,
            monotonicity: &mono,
        };
        write_json(&out(config, "estimate.json"), "estimate", config, body)?;
    }
    write_text(config, "estimate.txt", "estimate", &text)
}

#[derive(Serialize)]
struct PropBody<'a> {
    sample: &'a SampleInfo,
    unconditional: SystemSummary,
    proportionality: &'a collective::restrictions::ProportionalityTest,
}

/// Proportionality test with its bootstrap distribution.
pub fn test_prop(config: &RunConfig) -> Result<(), CliError> {
    let boot = bootstrap_config(config)?;
    let d = load(config)?;
    let f = factors(config, &d)?;
    let data = demand_data(config, &d, &f)?;
    let u = data.build_unconditional(true).stage("demand_systems")?;
    let fit = fit_system(&u.system.y, &u.system.x, &u.system.equations, config.model.fit).stage("demand_systems")?;
    let test = test_proportionality(&data, &fit, config.anchor, Some(boot)).stage("collective_tests")?;
    let us = fit.summary();
    if config.wants(ReportFormat::Csv) {
        write_file(&out(config, "bootstrap_prop.csv"), &report::draws_csv(&[("proportionality", &test.wald.draws)])?)?;
    }
    let mut text = report::system_text("Unconditional demand system", &us, &report::default_rows);
    text.push('\n');
    text.push_str(&report::proportionality_text(&test));
    if config.wants(ReportFormat::Json) {
        let body = PropBody {
            sample: &d.info,
            unconditional: us,
            proportionality: &test,
        };
        write_json(&out(config, "test_prop.json"), "test-prop", config, body)?;
    }
    write_text(config, "test_prop.txt", "test-prop", &text)
}

#[derive(Serialize)]
struct CondBody<'a> {
    sample: &'a SampleInfo,
    conditional: SystemSummary,
    conditioning_first_stage: &'a collective::estimation::FirstStage,
    exclusion: &'a collective::restrictions::ExclusionTest,
}

/// Exclusion test in the conditional system with its bootstrap distribution.
pub fn test_cond(config: &RunConfig) -> Result<(), CliError> {
    let boot = bootstrap_config(config)?;
    let d = load(config)?;
    let f = factors(config, &d)?;
    let data = demand_data(config, &d, &f)?;
    let u = data.build_unconditional(false).stage("demand_systems")?;
    let c = data.build_conditional(&u).stage("demand_systems")?;
    let fit = fit_system(&c.system.y, &c.system.x, &c.system.equations, config.model.fit).stage("demand_systems")?;
    let test = test_exclusion(&data, &fit, &c.first_stage, Some(boot)).stage("collective_tests")?;
    let cs = fit.summary();
    if config.wants(ReportFormat::Csv) {
        write_file(&out(config, "bootstrap_cond.csv"), &report::draws_csv(&[("exclusion", &test.wald.draws)])?)?;
    }
    let cond_dep = config.model.conditioning_good.share_name();
    let mut text = report::system_text("Conditional demand system", &cs, &report::default_rows);
    text.push('\n');
    text.push_str(&report::first_stage_text("Conditioning share first stage", &[(&cond_dep, &c.first_stage)]));
    text.push('\n');
    text.push_str(&report::exclusion_text(&test));
    if config.wants(ReportFormat::Json) {
        let body = CondBody {
            sample: &d.info,
            conditional: cs,
            conditioning_first_stage: &c.first_stage,
            exclusion: &test,
        };
        write_json(&out(config, "test_cond.json"), "test-cond", config, body)?;
    }
    write_text(config, "test_cond.txt", "test-cond", &text)
}

fn write_kde(dir: &Path, r: &InequalityReport) -> Result<(), CliError> {
    for t in &r.traits {
        let groups = [("high", &t.densities.high), ("mid", &t.densities.mid), ("low", &t.densities.low)];
        for (g, d) in groups {
            if let Some(d) = d {
                let bytes = csv_bytes(|b| d.write_csv(b))?;
                write_file(&dir.join(format!("{}_{g}.csv", t.trait_.name())), &bytes)?;
            }
        }
    }
    Ok(())
}

fn riceb_csv(obs: &[HouseholdObservation]) -> Result<Vec<u8>, CliError> {
    let pairs = riceb_sample(obs).stage("inequality")?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(["household_id", "wave", "riceb_f", "riceb_m", "inequality"]).map_err(err)?;
    for (o, p) in obs.iter().zip(&pairs) {
        w.write_record([
            o.household_id.clone(),
            o.wave.to_string(),
            p.riceb_f.to_string(),
            p.riceb_m.to_string(),
            p.inequality().to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Output(e.to_string()))
}

fn run_inequality(config: &RunConfig, d: &Dataset, f: &FactorConstruction) -> Result<InequalityReport, CliError> {
    let (seed, b) = config.bootstrap()?;
    let fractions: Vec<[f64; 7]> = f.factors.iter().map(|x| x.fractions).collect();
    let r = analyze_inequality(&d.sample.observations, &fractions, b, seed).stage("inequality")?;
    write_kde(&out(config, "kde"), &r)?;
    if config.wants(ReportFormat::Csv) {
        write_file(&out(config, "riceb.csv"), &riceb_csv(&d.sample.observations)?)?;
    }
    Ok(r)
}

#[derive(Serialize)]
struct InequalityBody<'a> {
    sample: &'a SampleInfo,
    inequality: &'a InequalityReport,
}

/// RICEBs, fraction groups, densities and equal-means tests.
pub fn inequality(config: &RunConfig) -> Result<(), CliError> {
    config.bootstrap()?;
    let d = load(config)?;
    let f = factors(config, &d)?;
    let r = run_inequality(config, &d, &f)?;
    if config.wants(ReportFormat::Json) {
        let body = InequalityBody {
            sample: &d.info,
            inequality: &r,
        };
        write_json(&out(config, "inequality.json"), "inequality", config, body)?;
    }
    write_text(config, "inequality.txt", "inequality", &report::inequality_text(&r))
}

/// Mean trait score by sex and age.
pub fn stability(config: &RunConfig) -> Result<(), CliError> {
    let raw = load_raw(config)?;
    let rows = stability_by_age(&raw.accepted);
    let bytes = csv_bytes(|b| write_stability_csv(b, &rows))?;
    write_file(&out(config, "stability.csv"), &bytes)
}

#[derive(Serialize)]
struct Verdict {
    statistic: f64,
    df: usize,
    p_value: f64,
    p_asymptotic: f64,
    reject_at_5pct: bool,
    line: String,
}

impl Verdict {
    fn of(w: &collective::estimation::WaldResult) -> Self {
        let p = w.p_bootstrap.unwrap_or(w.p_asymptotic);
        Verdict {
            statistic: w.statistic,
            df: w.df,
            p_value: p,
            p_asymptotic: w.p_asymptotic,
            reject_at_5pct: p < 0.05,
            line: report::chi2_line(w),
        }
    }
}

#[derive(Serialize)]
struct PipelineBody<'a> {
    sample: &'a SampleInfo,
    summary: &'a [collective::summary::VariableSummary],
    pca: &'a collective::psychometrics::PcaModel,
    cutoff_report: &'a [collective::psychometrics::CutoffEntry],
    unconditional: SystemSummary,
    income_first_stage: &'a [collective::estimation::FirstStage],
    conditional: SystemSummary,
    conditioning_first_stage: &'a collective::estimation::FirstStage,
    proportionality: &'a collective::restrictions::ProportionalityTest,
    exclusion: &'a collective::restrictions::ExclusionTest,
    verdicts: [(&'a str, Verdict); 2],
    monotonicity: &'a collective::restrictions::MonotonicityReport,
    inequality: &'a InequalityReport,
}

/// Every stage in order, sharing one sample and one set of factors.
pub fn pipeline(config: &RunConfig) -> Result<(), CliError> {
    let boot = bootstrap_config(config)?;
    let raw = load_raw(config)?;
    let summary = describe_sample(&raw.accepted).stage("ingest")?;
    let stab = stability_by_age(&raw.accepted);
    let d = prepare(config, raw)?;
    let f = factors(config, &d)?;
    let data = demand_data(config, &d, &f)?;
    let tests = run_collective_tests(&data, config.anchor, Some(boot)).stage("collective_tests")?;
    let mono = check_monotonicity(&data).stage("collective_tests")?;
    let ineq = run_inequality(config, &d, &f)?;
    let cutoffs = f.pca.cutoff_report(config.pca_cutoff);
    let (us, cs) = (tests.unconditional.summary(), tests.conditional.summary());

    write_rejects_csv(config, &d.rejects)?;
    write_file(&out(config, "stability.csv"), &csv_bytes(|b| write_stability_csv(b, &stab))?)?;
    let pca_text = write_pca(config, &d, &f)?;
    if config.wants(ReportFormat::Csv) {
        write_file(&out(config, "summary.csv"), &csv_bytes(|b| write_summary_csv(b, &summary))?)?;
        let coefs = report::coefficients_csv(&[("unconditional", &us), ("conditional", &cs), ("polynomial", &mono.system)])?;
        write_file(&out(config, "coefficients.csv"), &coefs)?;
        let draws = report::draws_csv(&[
            ("proportionality", &tests.proportionality.wald.draws),
            ("exclusion", &tests.exclusion.wald.draws),
        ])?;
        write_file(&out(config, "bootstrap_draws.csv"), &draws)?;
    }

    let retained = factor_name(config.model.retained_factor());
    let cond_dep = config.model.conditioning_good.share_name();
    let sections = [
        report::summary_text(&summary),
        pca_text,
        report::system_text("Unconditional demand system", &us, &report::default_rows),
        report::first_stage_text("Income first stage", &income_stage_rows(&tests.income_first_stage)),
        report::proportionality_text(&tests.proportionality),
        report::system_text("Conditional demand system", &cs, &report::default_rows),
        report::first_stage_text("Conditioning share first stage", &[(&cond_dep, &tests.first_stage)]),
        report::exclusion_text(&tests.exclusion),
        report::monotonicity_text(&mono),
        report::inequality_text(&ineq),
    ];
    write_text(config, "report.txt", "pipeline", &sections.join("\n"))?;
    if config.wants(ReportFormat::Json) {
        let body = PipelineBody {
            sample: &d.info,
            summary: &summary,
            pca: &f.pca,
            cutoff_report: &cutoffs,
            unconditional: us,
            income_first_stage: &tests.income_first_stage,
            conditional: cs,
            conditioning_first_stage: &tests.first_stage,
            proportionality: &tests.proportionality,
            exclusion: &tests.exclusion,
            verdicts: [
                ("proportionality", Verdict::of(&tests.proportionality.wald)),
                ("exclusion", Verdict::of(&tests.exclusion.wald)),
            ],
            monotonicity: &mono,
            inequality: &ineq,
        };
        write_json(&out(config, "report.json"), "pipeline", config, body)?;
    }
    log::info!(
        "pipeline: proportionality {}, exclusion of {retained} {}",
        report::chi2_line(&tests.proportionality.wald),
        report::chi2_line(&tests.exclusion.wald)
    );
    Ok(())
}
