//! Text tables, CSV dumps and the JSON envelope shared by every command.

use std::fmt::Write as _;
use std::path::Path;

use collective::estimation::{FirstStage, SystemSummary, WaldResult};
use collective::inequality::InequalityReport;
use collective::panel::{HouseholdObservation, Trait};
use collective::psychometrics::{CutoffEntry, FactorSet, PcaModel};
use collective::restrictions::{normal_two_sided, ExclusionTest, MonotonicityReport, ProportionalityTest, SIGNIFICANCE_LEVEL};
use collective::stats::Summary;
use collective::summary::VariableSummary;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Package version with the git description of the build tree, when known.
pub fn version() -> String {
    match option_env!("COLLECTIVE_GIT_DESCRIBE") {
        Some(d) => format!("{} ({d})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub version: String,
    pub command: &'a str,
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, command: &str, config: &RunConfig, body: T) -> Result<(), CliError> {
    let env = Envelope {
        version: version(),
        command,
        config,
        body,
    };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| CliError::Output(e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// Header of every text report.
pub fn text_header(command: &str, config: &RunConfig) -> String {
    let cfg = serde_json::to_string(config).unwrap_or_default();
    format!("collective {} | {command}\nconfig: {cfg}\n\n", version())
}

/// Columns padded to a common width; the first left-aligned, the rest right-aligned.
pub struct TextTable {
    rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        TextTable {
            rows: vec![header.into_iter().map(Into::into).collect()],
        }
    }

    pub fn row<S: Into<String>>(&mut self, cells: impl IntoIterator<Item = S>) {
        self.rows.push(cells.into_iter().map(Into::into).collect());
    }

    pub fn render(&self) -> String {
        let cols = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        let width: Vec<usize> = (0..cols)
            .map(|c| self.rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
            .collect();
        let rule: String = "-".repeat(width.iter().sum::<usize>() + 2 * cols.saturating_sub(1));
        let mut out = String::new();
        for (i, r) in self.rows.iter().enumerate() {
            let mut line = String::new();
            for (c, w) in width.iter().enumerate() {
                let cell = r.get(c).map(String::as_str).unwrap_or("");
                if c == 0 {
                    let _ = write!(line, "{cell:<w$}");
                } else {
                    let _ = write!(line, "  {cell:>w$}");
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&rule);
                out.push('\n');
            }
        }
        out
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < SIGNIFICANCE_LEVEL {
        "*"
    } else {
        ""
    }
}

pub fn num(v: f64) -> String {
    format!("{v:.4}")
}

/// `chi2(df) = <W> (p = <p>)`, with the bootstrap p-value when there is one.
pub fn chi2_line(w: &WaldResult) -> String {
    format!(
        "chi2({}) = {:.3} (p = {:.3})",
        w.df,
        w.statistic,
        w.p_bootstrap.unwrap_or(w.p_asymptotic)
    )
}

fn p_note(w: &WaldResult) -> String {
    match (w.p_bootstrap, w.replications) {
        (Some(_), Some(b)) => format!(
            "p from {b} cluster-bootstrap replications ({} redraws); asymptotic p = {:.3}\n",
            w.redraws, w.p_asymptotic
        ),
        _ => "asymptotic p-value (no bootstrap)\n".to_string(),
    }
}

/// Rows of the printed coefficient tables; the CSV dump has every regressor.
pub fn default_rows(regressor: &str) -> bool {
    !(regressor.starts_with("ratio_") || regressor.starts_with("wave_") || regressor == "const")
}

/// Coefficients by equation with clustered standard errors in parentheses.
pub fn system_text(title: &str, s: &SystemSummary, keep: &dyn Fn(&str) -> bool) -> String {
    let mut header = vec![String::new()];
    header.extend(s.equations.iter().map(|e| e.equation.clone()));
    let mut t = TextTable::new(header);
    let Some(first) = s.equations.first() else {
        return String::new();
    };
    let mut hidden = false;
    for (k, c) in first.coefficients.iter().enumerate() {
        if !keep(&c.regressor) {
            hidden = true;
            continue;
        }
        let mut est = vec![c.regressor.clone()];
        let mut se = vec![String::new()];
        for e in &s.equations {
            let x = &e.coefficients[k];
            est.push(format!("{}{}", num(x.estimate), stars(normal_two_sided(x.estimate / x.se))));
            se.push(format!("({})", num(x.se)));
        }
        t.row(est);
        t.row(se);
    }
    let mut out = format!("{title}\n{}", t.render());
    let _ = writeln!(out, "observations {}, households {}", s.n_obs, s.n_clusters);
    let _ = writeln!(
        out,
        "clustered standard errors in parentheses; * p < {SIGNIFICANCE_LEVEL:.2}"
    );
    if hidden {
        out.push_str("intercept, marriage-market ratios and wave dummies included, not shown\n");
    }
    out
}

pub fn first_stage_text(title: &str, stages: &[(&str, &FirstStage)]) -> String {
    let mut t = TextTable::new(["dependent", "excluded", "F", "df", "p", "weak"]);
    for (dep, s) in stages {
        t.row([
            dep.to_string(),
            s.excluded.join(" "),
            format!("{:.3}", s.f_statistic),
            format!("({}, {})", s.f_df.0, s.f_df.1),
            format!("{:.3}", s.f_p_value),
            if s.weak() { "yes".into() } else { "no".into() },
        ]);
    }
    format!("{title}\n{}", t.render())
}

pub fn proportionality_text(test: &ProportionalityTest) -> String {
    let mut t = TextTable::new(["equation", "beta_z1", "beta_z2", "se_z2", "ratio", "near zero"]);
    for r in &test.ratios {
        t.row([
            r.equation.clone(),
            num(r.beta_1),
            num(r.beta_2),
            num(r.se_2),
            num(r.ratio),
            if r.near_zero { "yes".into() } else { "no".into() },
        ]);
    }
    let mut out = format!("Proportionality of factor effects (anchor {})\n{}", test.anchor, t.render());
    if test.near_zero_warning {
        out.push_str("warning: some z2 effects are close to zero; ratios are unstable\n");
    }
    out.push_str(&chi2_line(&test.wald));
    out.push('\n');
    out.push_str(&p_note(&test.wald));
    out
}

pub fn exclusion_text(test: &ExclusionTest) -> String {
    let mut t = TextTable::new(["equation", "estimate", "se", "t", "p"]);
    for e in &test.equations {
        t.row([
            e.equation.clone(),
            format!("{}{}", num(e.estimate), stars(e.p)),
            format!("({})", num(e.se)),
            format!("{:.3}", e.t),
            format!("{:.3}", e.p),
        ]);
    }
    let mut out = format!("Exclusion of {} from the conditional system\n{}", test.factor, t.render());
    let _ = writeln!(
        out,
        "first-stage F = {:.3}{}",
        test.first_stage_f,
        if test.weak_instrument { " (weak instrument)" } else { "" }
    );
    out.push_str(&chi2_line(&test.wald));
    out.push('\n');
    out.push_str(&p_note(&test.wald));
    out
}

pub fn monotonicity_text(m: &MonotonicityReport) -> String {
    let terms = m.terms.clone();
    let mut out = system_text(
        &format!("Polynomial (degree {}) specification in the log factors", m.degree),
        &m.system,
        &|r| terms.iter().any(|t| t == r),
    );
    let mut t = TextTable::new(["equation", "slope at median", "increasing", "z2 terms"]);
    for s in &m.shapes {
        t.row([
            s.equation.clone(),
            num(s.slope_z2_at_median),
            if s.increasing_in_z2 { "yes".into() } else { "no".into() },
            chi2_line(&s.z2_terms),
        ]);
    }
    let _ = write!(out, "\nShape in ln z2 (median {:.4})\n{}", m.median_ln_z2, t.render());
    let _ = writeln!(out, "joint ln z2 terms: {}", chi2_line(&m.z2_joint));
    out
}

pub fn pca_text(model: &PcaModel, cutoff: f64, entries: &[CutoffEntry]) -> String {
    let k = model.n_components();
    let mut header = vec!["measure".to_string()];
    header.extend((1..=k).map(|c| format!("PC{c}")));
    let mut t = TextTable::new(header);
    for (i, tr) in model.traits.iter().enumerate() {
        let mut row = vec![tr.label().to_string()];
        for c in 0..k {
            let marked = entries.iter().any(|e| e.component == c && e.trait_ == *tr);
            row.push(format!("{}{}", num(model.loadings[i][c]), if marked { "+" } else { "" }));
        }
        t.row(row);
    }
    let mut ev = vec!["eigenvalue".to_string()];
    ev.extend(model.eigenvalues.iter().map(|v| num(*v)));
    t.row(ev);
    let mut sd = vec!["component sd".to_string()];
    sd.extend(model.eigenvalues.iter().map(|v| num(v.sqrt())));
    t.row(sd);
    let mut share = vec!["variance share".to_string()];
    share.extend(model.variance_shares.iter().map(|v| num(*v)));
    t.row(share);
    let mut out = format!("Principal components of the personality measures\n{}", t.render());
    let _ = writeln!(
        out,
        "loadings are measure-component correlations; + marks |loading| >= {cutoff} x the largest of its component"
    );
    let _ = writeln!(
        out,
        "observations {}; explained share {:.4}; full spectrum sum {:.6}",
        model.n_obs,
        model.explained_share(),
        model.spectrum.iter().sum::<f64>()
    );
    out
}

pub fn summary_text(rows: &[VariableSummary]) -> String {
    let mut out = String::from("Summary statistics\n");
    let mut panel = None;
    let mut t: Option<TextTable> = None;
    for r in rows {
        if panel != Some(r.panel) {
            if let Some(t) = t.take() {
                out.push_str(&t.render());
                out.push('\n');
            }
            panel = Some(r.panel);
            out.push_str(r.panel.title());
            out.push('\n');
            t = Some(TextTable::new(["variable", "n", "mean", "sd", "min", "max"]));
        }
        if let Some(t) = t.as_mut() {
            t.row([
                r.variable.clone(),
                r.n.to_string(),
                num(r.mean),
                r.sd.map(num).unwrap_or_else(|| "-".into()),
                num(r.min),
                num(r.max),
            ]);
        }
    }
    if let Some(t) = t {
        out.push_str(&t.render());
    }
    out
}

fn summary_cells(name: &str, s: &Summary) -> Vec<String> {
    vec![
        name.to_string(),
        num(s.mean),
        s.sd.map(num).unwrap_or_else(|| "-".into()),
        num(s.min),
        num(s.p25),
        num(s.median),
        num(s.p75),
        num(s.max),
    ]
}

pub fn inequality_text(r: &InequalityReport) -> String {
    let mut t = TextTable::new(["trait", "n high", "n low", "t", "p", "difference (%)"]);
    for tr in &r.traits {
        match &tr.test {
            Some(m) => t.row([
                tr.trait_.label().to_string(),
                tr.n_high.to_string(),
                tr.n_low.to_string(),
                format!("{:.3}", m.t),
                format!("{:.3}", m.p),
                format!("{:.3}", m.difference_pct),
            ]),
            None => t.row([
                tr.trait_.label().to_string(),
                tr.n_high.to_string(),
                tr.n_low.to_string(),
                "-".into(),
                "-".into(),
                "-".into(),
            ]),
        }
    }
    let mut out = format!(
        "Intrahousehold inequality: high (> p80) against low (< p20) female fraction\n{}",
        t.render()
    );
    if let Some(m) = r.traits.iter().find_map(|t| t.test.as_ref()) {
        let _ = writeln!(
            out,
            "Welch t; p from {} bootstrap replications, {}; {} couples",
            m.replications, m.method, r.n
        );
    }
    for w in r.traits.iter().flat_map(|t| &t.warnings) {
        let _ = writeln!(out, "warning: {w}");
    }
    let header = ["", "mean", "sd", "min", "p25", "median", "p75", "max"];
    let mut c = TextTable::new(header);
    for (tr, s) in &r.fractions {
        c.row(summary_cells(&format!("r_{}", tr.name()), s));
    }
    c.row(summary_cells("riceb_f", &r.riceb_f));
    c.row(summary_cells("riceb_m", &r.riceb_m));
    c.row(summary_cells("inequality", &r.inequality));
    let _ = write!(out, "\nFemale fractions and RICEB\n{}", c.render());
    out
}

pub fn coefficients_csv(systems: &[(&str, &SystemSummary)]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(["system", "equation", "regressor", "estimate", "se"]).map_err(err)?;
    for (name, s) in systems {
        for e in &s.equations {
            for c in &e.coefficients {
                w.write_record([
                    name.to_string(),
                    e.equation.clone(),
                    c.regressor.clone(),
                    c.estimate.to_string(),
                    c.se.to_string(),
                ])
                .map_err(err)?;
            }
        }
    }
    w.into_inner().map_err(|e| CliError::Output(e.to_string()))
}

pub fn cutoffs_csv(entries: &[CutoffEntry]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(["component", "trait", "loading", "largest"]).map_err(err)?;
    for e in entries {
        w.write_record([
            (e.component + 1).to_string(),
            e.trait_.name().to_string(),
            e.loading.to_string(),
            e.largest.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Output(e.to_string()))
}

pub fn factors_csv(observations: &[HouseholdObservation], factors: &[FactorSet]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Output(e.to_string());
    let mut header: Vec<String> = ["household_id", "wave", "ln_z1", "ln_z2", "pc1_m", "pc2_m", "pc1_f", "pc2_f"]
        .map(String::from)
        .to_vec();
    header.extend(Trait::ALL.iter().map(|t| format!("r_{}", t.name())));
    w.write_record(&header).map_err(err)?;
    for (o, f) in observations.iter().zip(factors) {
        let mut rec = vec![
            o.household_id.clone(),
            o.wave.to_string(),
            f.log_ratio[0].to_string(),
            f.log_ratio[1].to_string(),
            f.pc_m[0].to_string(),
            f.pc_m[1].to_string(),
            f.pc_f[0].to_string(),
            f.pc_f[1].to_string(),
        ];
        rec.extend(f.fractions.iter().map(|r| r.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Output(e.to_string()))
}

/// One row per replication with one column per statistic.
pub fn draws_csv(columns: &[(&str, &[f64])]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Output(e.to_string());
    let mut header = vec!["replication".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).map_err(err)?;
    let reps = columns.iter().map(|(_, d)| d.len()).max().unwrap_or(0);
    for r in 0..reps {
        let mut rec = vec![r.to_string()];
        rec.extend(columns.iter().map(|(_, d)| d.get(r).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Output(e.to_string()))
}
