//! Descriptive statistics of a pooled sample: the grouped variable summary
//! and mean trait scores by age.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{derive_vars, Education, HouseholdObservation, Sex, Trait, MAX_AGE, MIN_AGE};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Panel {
    Economic,
    Demographic,
    Personality,
}

impl Panel {
    pub fn title(self) -> &'static str {
        match self {
            Panel::Economic => "A. Economic variables",
            Panel::Demographic => "B. Demographic variables",
            Panel::Personality => "C. Personality measures",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub panel: Panel,
    pub variable: String,
    pub n: usize,
    pub mean: f64,
    /// Absent for a single observation.
    pub sd: Option<f64>,
    pub min: f64,
    pub max: f64,
}

fn row(panel: Panel, variable: impl Into<String>, values: &[f64]) -> Option<VariableSummary> {
    let s = stats::Summary::of(values)?;
    Some(VariableSummary {
        panel,
        variable: variable.into(),
        n: s.n,
        mean: s.mean,
        sd: s.sd,
        min: s.min,
        max: s.max,
    })
}

/// Mean, sd, min and max of every analysis variable, grouped into economic,
/// demographic and personality panels. Records with nonpositive full income
/// are skipped for the derived variables.
pub fn describe_sample(observations: &[HouseholdObservation]) -> Result<Vec<VariableSummary>> {
    if observations.is_empty() {
        return Err(Error::Input("empty sample".into()));
    }
    let col = |f: &dyn Fn(&HouseholdObservation) -> f64| -> Vec<f64> { observations.iter().map(f).collect() };
    let derived: Vec<_> = observations.iter().filter_map(|o| derive_vars(o).ok()).collect();
    let dcol = |f: &dyn Fn(&crate::panel::DerivedVars) -> f64| -> Vec<f64> { derived.iter().map(f).collect() };
    let mut rows = Vec::new();
    let economic: Vec<(&str, Vec<f64>)> = vec![
        ("wage_m", col(&|o| o.wage_m)),
        ("wage_f", col(&|o| o.wage_f)),
        ("hours_m", col(&|o| o.hours_m)),
        ("hours_f", col(&|o| o.hours_f)),
        ("leisure_m", dcol(&|d| d.leisure_m)),
        ("leisure_f", dcol(&|d| d.leisure_f)),
        ("cons_private_m", col(&|o| o.cons_private_m)),
        ("cons_private_f", col(&|o| o.cons_private_f)),
        ("cons_public", col(&|o| o.cons_public)),
        ("nonlabor_income", col(&|o| o.nonlabor_income)),
        ("full_income", dcol(&|d| d.full_income)),
    ];
    let educ = |e: Education| {
        move |s: Sex| col(&|o: &HouseholdObservation| if o.educ(s) == e { 1.0 } else { 0.0 })
    };
    let mut demographic: Vec<(String, Vec<f64>)> = vec![
        ("age_m".into(), col(&|o| o.age_m as f64)),
        ("age_f".into(), col(&|o| o.age_f as f64)),
    ];
    for e in [Education::Low, Education::Middle, Education::High] {
        for s in [Sex::Male, Sex::Female] {
            demographic.push((format!("educ_{}_{}", e.as_str(), s.suffix()), educ(e)(s)));
        }
    }
    demographic.push(("n_children".into(), col(&|o| o.n_children as f64)));
    demographic.push(("married".into(), col(&|o| if o.married { 1.0 } else { 0.0 })));
    for (name, v) in economic {
        rows.extend(row(Panel::Economic, name, &v));
    }
    for (name, v) in demographic {
        rows.extend(row(Panel::Demographic, name, &v));
    }
    for t in Trait::ALL {
        for s in [Sex::Male, Sex::Female] {
            let v: Vec<f64> = observations.iter().filter_map(|o| o.traits(s).get(t)).collect();
            rows.extend(row(Panel::Personality, format!("{}_{}", t.name(), s.suffix()), &v));
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV with an empty `sd` cell when it is undefined.
pub fn write_summary_csv<W: Write>(sink: W, rows: &[VariableSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["panel", "variable", "n", "mean", "sd", "min", "max"])?;
    for r in rows {
        w.write_record([
            r.panel.title().to_string(),
            r.variable.clone(),
            r.n.to_string(),
            format!("{:.6}", r.mean),
            fmt_opt(r.sd),
            format!("{:.6}", r.min),
            format!("{:.6}", r.max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub sex: Sex,
    pub trait_: Trait,
    pub age: u32,
    pub mean_score: f64,
    pub n: usize,
}

/// Mean score per sex, trait and age over every person-wave with an
/// observed score. Ages outside the sample window are left out.
pub fn stability_by_age(observations: &[HouseholdObservation]) -> Vec<StabilityRow> {
    let mut cells: BTreeMap<(Sex, Trait, u32), (f64, usize)> = BTreeMap::new();
    for o in observations {
        for s in [Sex::Male, Sex::Female] {
            let age = o.age(s);
            if !(MIN_AGE..=MAX_AGE).contains(&age) {
                continue;
            }
            for t in Trait::ALL {
                if let Some(v) = o.traits(s).get(t) {
                    let c = cells.entry((s, t, age)).or_insert((0.0, 0));
                    c.0 += v;
                    c.1 += 1;
                }
            }
        }
    }
    cells
        .into_iter()
        .map(|((sex, trait_, age), (sum, n))| StabilityRow {
            sex,
            trait_,
            age,
            mean_score: sum / n as f64,
            n,
        })
        .collect()
}

pub fn write_stability_csv<W: Write>(sink: W, rows: &[StabilityRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["sex", "trait", "age", "mean_score", "n"])?;
    for r in rows {
        w.write_record([
            r.sex.suffix().to_string(),
            r.trait_.name().to_string(),
            r.age.to_string(),
            format!("{:.6}", r.mean_score),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::tests::sample_obs;

    #[test]
    fn single_record_has_no_sd() {
        let rows = describe_sample(&[sample_obs("a", 2009)]).unwrap();
        assert!(rows.iter().all(|r| r.sd.is_none() && r.n == 1));
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let wage = text.lines().find(|l| l.contains(",wage_m,")).unwrap();
        assert_eq!(wage.split(',').nth(4), Some(""));
    }

    #[test]
    fn panels_are_grouped_in_order() {
        let obs = vec![sample_obs("a", 2009), sample_obs("b", 2009)];
        let rows = describe_sample(&obs).unwrap();
        assert!(rows.windows(2).all(|w| w[0].panel <= w[1].panel));
        assert_eq!(rows.iter().filter(|r| r.panel == Panel::Personality).count(), 14);
        assert!(rows.iter().any(|r| r.variable == "full_income"));
        assert!(describe_sample(&[]).is_err());
    }

    #[test]
    fn one_age_gives_one_row_per_trait_and_sex() {
        let mut a = sample_obs("a", 2009);
        a.age_m = 40;
        a.age_f = 40;
        let mut b = a.clone();
        b.household_id = "b".into();
        let rows = stability_by_age(&[a.clone(), b]);
        assert_eq!(rows.len(), 14);
        assert!(rows.iter().all(|r| r.age == 40 && r.n == 2));
        let t = Trait::ALL[0];
        let m = rows.iter().find(|r| r.sex == Sex::Male && r.trait_ == t).unwrap();
        assert_eq!(m.mean_score, a.traits_m.get(t).unwrap());
    }

    #[test]
    fn ages_outside_window_are_dropped() {
        let mut a = sample_obs("a", 2009);
        a.age_m = 70;
        a.age_f = 24;
        assert!(stability_by_age(&[a]).is_empty());
    }
}
