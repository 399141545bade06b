//! Couple-level panel records: ingestion, validation and the derived economic
//! variables (full income, leisure, budget shares) everything downstream uses.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weekly time endowment per spouse, in hours.
pub const TIME_ENDOWMENT: f64 = 112.0;
pub const MIN_HOURS: f64 = 10.0;
pub const MIN_AGE: u32 = 25;
pub const MAX_AGE: u32 = 65;

pub type Wave = i32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Education {
    Low,
    Middle,
    High,
}

impl Education {
    pub fn parse(s: &str) -> Option<Education> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" | "0" => Some(Education::Low),
            "middle" | "1" => Some(Education::Middle),
            "high" | "2" => Some(Education::High),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Education::Low => "low",
            Education::Middle => "middle",
            Education::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn suffix(self) -> &'static str {
        match self {
            Sex::Male => "m",
            Sex::Female => "f",
        }
    }
}

/// The seven personality measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trait {
    Openness,
    Extraversion,
    Agreeableness,
    Neuroticism,
    Conscientiousness,
    SelfEsteem,
    CognitiveEngagement,
}

impl Trait {
    pub const ALL: [Trait; 7] = [
        Trait::Openness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
        Trait::Conscientiousness,
        Trait::SelfEsteem,
        Trait::CognitiveEngagement,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::Openness => "openness",
            Trait::Extraversion => "extraversion",
            Trait::Agreeableness => "agreeableness",
            Trait::Neuroticism => "neuroticism",
            Trait::Conscientiousness => "conscientiousness",
            Trait::SelfEsteem => "self_esteem",
            Trait::CognitiveEngagement => "cognitive_engagement",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Trait::Openness => "Openness",
            Trait::Extraversion => "Extraversion",
            Trait::Agreeableness => "Agreeableness",
            Trait::Neuroticism => "Neuroticism",
            Trait::Conscientiousness => "Conscientiousness",
            Trait::SelfEsteem => "Self-esteem",
            Trait::CognitiveEngagement => "Cognitive engagement",
        }
    }

    /// Response scale of the instrument: Big Five items are 1-5, the
    /// self-esteem and need-for-cognition scales are 1-7.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Trait::SelfEsteem | Trait::CognitiveEngagement => (1.0, 7.0),
            _ => (1.0, 5.0),
        }
    }

    pub fn from_name(s: &str) -> Option<Trait> {
        Trait::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One score per trait; `None` marks a wave where the scale was not answered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TraitScores(pub [Option<f64>; 7]);

impl TraitScores {
    pub fn complete(values: [f64; 7]) -> Self {
        TraitScores(values.map(Some))
    }

    pub fn get(&self, t: Trait) -> Option<f64> {
        self.0[t.index()]
    }

    pub fn set(&mut self, t: Trait, v: Option<f64>) {
        self.0[t.index()] = v;
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(Option::is_some)
    }

    /// All seven values; panics if any is missing.
    pub fn values(&self) -> [f64; 7] {
        self.0.map(|v| v.expect("trait score missing"))
    }
}

/// One couple observed in one wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdObservation {
    pub household_id: String,
    pub wave: Wave,
    pub wage_m: f64,
    pub wage_f: f64,
    pub hours_m: f64,
    pub hours_f: f64,
    pub nonlabor_income: f64,
    pub cons_private_m: f64,
    pub cons_private_f: f64,
    pub cons_public: f64,
    /// Total household private consumption, when the source provides it.
    pub household_private_consumption: Option<f64>,
    pub age_m: u32,
    pub age_f: u32,
    pub educ_m: Education,
    pub educ_f: Education,
    pub n_children: u32,
    pub married: bool,
    pub traits_m: TraitScores,
    pub traits_f: TraitScores,
}

impl HouseholdObservation {
    pub fn traits(&self, sex: Sex) -> &TraitScores {
        match sex {
            Sex::Male => &self.traits_m,
            Sex::Female => &self.traits_f,
        }
    }

    pub fn traits_mut(&mut self, sex: Sex) -> &mut TraitScores {
        match sex {
            Sex::Male => &mut self.traits_m,
            Sex::Female => &mut self.traits_f,
        }
    }

    pub fn age(&self, sex: Sex) -> u32 {
        match sex {
            Sex::Male => self.age_m,
            Sex::Female => self.age_f,
        }
    }

    pub fn educ(&self, sex: Sex) -> Education {
        match sex {
            Sex::Male => self.educ_m,
            Sex::Female => self.educ_f,
        }
    }

    /// Reasons this record violates the sample rules; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (who, w) in [("wage_m", self.wage_m), ("wage_f", self.wage_f)] {
            if !(w > 0.0 && w.is_finite()) {
                out.push(format!("{who}: nonpositive wage"));
            }
        }
        for (who, h) in [("hours_m", self.hours_m), ("hours_f", self.hours_f)] {
            if !h.is_finite() || h < MIN_HOURS {
                out.push(format!("{who}: hours below 10"));
            } else if h > TIME_ENDOWMENT {
                out.push(format!("{who}: hours above 112"));
            }
        }
        for (who, a) in [("age_m", self.age_m), ("age_f", self.age_f)] {
            if !(MIN_AGE..=MAX_AGE).contains(&a) {
                out.push(format!("{who}: age outside 25-65"));
            }
        }
        for (who, c) in [
            ("cons_private_m", self.cons_private_m),
            ("cons_private_f", self.cons_private_f),
            ("cons_public", self.cons_public),
        ] {
            if !c.is_finite() || c < 0.0 {
                out.push(format!("{who}: negative consumption"));
            }
        }
        if !self.nonlabor_income.is_finite() {
            out.push("nonlabor_income: not finite".to_string());
        }
        for sex in [Sex::Male, Sex::Female] {
            for t in Trait::ALL {
                if let Some(v) = self.traits(sex).get(t) {
                    let (lo, hi) = t.bounds();
                    if !(lo..=hi).contains(&v) {
                        out.push(format!("{}_{}: score outside {lo}-{hi}", t.name(), sex.suffix()));
                    }
                }
            }
        }
        out
    }
}

/// The five goods of the demand system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Good {
    /// Husband's assignable private consumption.
    Cm,
    /// Wife's assignable private consumption.
    Cf,
    /// Husband's leisure.
    Lm,
    /// Wife's leisure.
    Lf,
    /// Public consumption.
    Public,
}

impl Good {
    pub const ALL: [Good; 5] = [Good::Cm, Good::Cf, Good::Lm, Good::Lf, Good::Public];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Good::Cm => "cm",
            Good::Cf => "cf",
            Good::Lm => "lm",
            Good::Lf => "lf",
            Good::Public => "C",
        }
    }

    pub fn share_name(self) -> String {
        format!("omega_{}", self.label())
    }

    pub fn from_label(s: &str) -> Option<Good> {
        Good::ALL.into_iter().find(|g| g.label().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Good {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Denominator used for budget shares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareDenominator {
    #[default]
    FullIncome,
    /// Sum of the five modeled expenditures.
    TotalExpenditure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedVars {
    pub full_income: f64,
    pub leisure_m: f64,
    pub leisure_f: f64,
    /// Weekly expenditure on each good, indexed by [`Good::index`].
    pub expenditures: [f64; 5],
    pub shares: [f64; 5],
    /// Full income not accounted for by the five goods.
    pub unassigned: f64,
}

impl DerivedVars {
    pub fn share(&self, g: Good) -> f64 {
        self.shares[g.index()]
    }

    pub fn expenditure(&self, g: Good) -> f64 {
        self.expenditures[g.index()]
    }
}

pub fn full_income(wage_m: f64, wage_f: f64, nonlabor_income: f64) -> f64 {
    (wage_m + wage_f) * TIME_ENDOWMENT + nonlabor_income
}

pub fn derive_vars(obs: &HouseholdObservation) -> Result<DerivedVars> {
    derive_vars_with(obs, ShareDenominator::FullIncome)
}

pub fn derive_vars_with(obs: &HouseholdObservation, denominator: ShareDenominator) -> Result<DerivedVars> {
    let y = full_income(obs.wage_m, obs.wage_f, obs.nonlabor_income);
    if !(y > 0.0) {
        return Err(Error::NonpositiveIncome);
    }
    let leisure_m = TIME_ENDOWMENT - obs.hours_m;
    let leisure_f = TIME_ENDOWMENT - obs.hours_f;
    let expenditures = [
        obs.cons_private_m,
        obs.cons_private_f,
        obs.wage_m * leisure_m,
        obs.wage_f * leisure_f,
        obs.cons_public,
    ];
    let total: f64 = expenditures.iter().sum();
    let denom = match denominator {
        ShareDenominator::FullIncome => y,
        ShareDenominator::TotalExpenditure => total,
    };
    let unassigned = y - total;
    if unassigned < 0.0 {
        log::debug!(
            "household {} wave {}: modeled expenditures exceed full income by {:.2}",
            obs.household_id,
            obs.wave,
            -unassigned
        );
    }
    Ok(DerivedVars {
        full_income: y,
        leisure_m,
        leisure_f,
        expenditures,
        shares: expenditures.map(|e| e / denom),
        unassigned,
    })
}

/// A pooled cross-section with its sorted wave labels; the first wave is the
/// base category for the wave dummies.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSample {
    pub observations: Vec<HouseholdObservation>,
    pub waves: Vec<Wave>,
}

impl PooledSample {
    /// Group records by their `wave` field and pool them.
    pub fn from_observations(observations: Vec<HouseholdObservation>) -> Result<Self> {
        let mut panels: BTreeMap<Wave, Vec<HouseholdObservation>> = BTreeMap::new();
        for obs in observations {
            panels.entry(obs.wave).or_default().push(obs);
        }
        pool_waves(panels)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dummy_names(&self) -> Vec<String> {
        self.waves.iter().skip(1).map(|w| format!("wave_{w}")).collect()
    }

    /// Wave indicators for one record, excluding the base wave.
    pub fn wave_dummies(&self, obs: &HouseholdObservation) -> Vec<f64> {
        self.waves.iter().skip(1).map(|&w| if w == obs.wave { 1.0 } else { 0.0 }).collect()
    }
}

/// Concatenate per-wave panels, tagging each record with its wave.
pub fn pool_waves(panels: BTreeMap<Wave, Vec<HouseholdObservation>>) -> Result<PooledSample> {
    if panels.is_empty() {
        return Err(Error::invalid("no waves to pool"));
    }
    let mut seen = BTreeSet::new();
    let mut observations = Vec::new();
    let waves: Vec<Wave> = panels.keys().copied().collect();
    for (wave, list) in panels {
        for mut obs in list {
            obs.wave = wave;
            if !seen.insert((obs.household_id.clone(), wave)) {
                return Err(Error::DuplicateObservation {
                    household: obs.household_id,
                    wave,
                });
            }
            observations.push(obs);
        }
    }
    Ok(PooledSample { observations, waves })
}

/// Mapping from logical field names to CSV header names. Fields not listed
/// map to a header of the same name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
}

impl ColumnMap {
    pub fn header_for<'a>(&'a self, logical: &'a str) -> &'a str {
        self.columns.get(logical).map(String::as_str).unwrap_or(logical)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

const REQUIRED: [&str; 16] = [
    "household_id",
    "wave",
    "wage_m",
    "wage_f",
    "hours_m",
    "hours_f",
    "nonlabor_income",
    "cons_private_m",
    "cons_private_f",
    "cons_public",
    "age_m",
    "age_f",
    "educ_m",
    "educ_f",
    "n_children",
    "married",
];
const OPTIONAL_HH_PRIVATE: &str = "household_private_consumption";

fn trait_column(t: Trait, sex: Sex) -> String {
    format!("{}_{}", t.name(), sex.suffix())
}

/// Logical column names of the panel CSV, in canonical order.
pub fn logical_columns() -> Vec<String> {
    let mut cols: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    cols.push(OPTIONAL_HH_PRIVATE.to_string());
    for sex in [Sex::Male, Sex::Female] {
        for t in Trait::ALL {
            cols.push(trait_column(t, sex));
        }
    }
    cols
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the source, counting the header as line 1.
    pub line: usize,
    pub household_id: String,
    pub wave: Option<Wave>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPanel {
    pub accepted: Vec<HouseholdObservation>,
    pub rejects: Vec<Reject>,
}

fn parse_f64(field: &str, col: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Input(format!("line {line}: column {col}: cannot parse {field:?} as a number")))
}

fn parse_u32(field: &str, col: &str, line: usize) -> Result<u32> {
    let v = parse_f64(field, col, line)?;
    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(Error::Input(format!("line {line}: column {col}: {field:?} is not a count")));
    }
    Ok(v as u32)
}

fn parse_bool(field: &str, col: &str, line: usize) -> Result<bool> {
    match field.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(Error::Input(format!("line {line}: column {col}: {field:?} is not a boolean"))),
    }
}

/// Read a panel CSV. Malformed content is a hard error; records that parse but
/// break the sample rules are returned as rejects.
pub fn load_panel<R: Read>(source: R, schema: &ColumnMap) -> Result<LoadedPanel> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let locate = |logical: &str| position.get(schema.header_for(logical)).copied();

    let mut required = HashMap::new();
    let mut missing = Vec::new();
    for col in REQUIRED {
        match locate(col) {
            Some(i) => {
                required.insert(col, i);
            }
            None => missing.push(schema.header_for(col).to_string()),
        }
    }
    let mut trait_cols = Vec::new();
    for sex in [Sex::Male, Sex::Female] {
        for t in Trait::ALL {
            let logical = trait_column(t, sex);
            match locate(&logical) {
                Some(i) => trait_cols.push((sex, t, i)),
                None => missing.push(schema.header_for(&logical).to_string()),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Input(format!("missing required columns: {}", missing.join(", "))));
    }
    let hh_private = locate(OPTIONAL_HH_PRIVATE);

    let mut accepted = Vec::new();
    let mut rejects = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let get = |col: &str| record.get(required[col]).unwrap_or("");
        let num = |col: &str| parse_f64(get(col), col, line);
        let household_id = get("household_id").to_string();
        if household_id.is_empty() {
            return Err(Error::Input(format!("line {line}: empty household_id")));
        }
        let wave_f = num("wave")?;
        if wave_f.fract() != 0.0 {
            return Err(Error::Input(format!("line {line}: wave must be an integer year")));
        }
        let educ = |col: &str| {
            Education::parse(get(col))
                .ok_or_else(|| Error::Input(format!("line {line}: column {col}: unknown education level {:?}", get(col))))
        };
        let mut traits_m = TraitScores::default();
        let mut traits_f = TraitScores::default();
        for &(sex, t, i) in &trait_cols {
            let field = record.get(i).unwrap_or("").trim();
            let value = if field.is_empty() || field.eq_ignore_ascii_case("na") {
                None
            } else {
                Some(parse_f64(field, &trait_column(t, sex), line)?)
            };
            match sex {
                Sex::Male => traits_m.set(t, value),
                Sex::Female => traits_f.set(t, value),
            }
        }
        let household_private_consumption = match hh_private.and_then(|i| record.get(i)) {
            Some(f) if !f.trim().is_empty() => Some(parse_f64(f, OPTIONAL_HH_PRIVATE, line)?),
            _ => None,
        };
        let obs = HouseholdObservation {
            household_id,
            wave: wave_f as Wave,
            wage_m: num("wage_m")?,
            wage_f: num("wage_f")?,
            hours_m: num("hours_m")?,
            hours_f: num("hours_f")?,
            nonlabor_income: num("nonlabor_income")?,
            cons_private_m: num("cons_private_m")?,
            cons_private_f: num("cons_private_f")?,
            cons_public: num("cons_public")?,
            household_private_consumption,
            age_m: parse_u32(get("age_m"), "age_m", line)?,
            age_f: parse_u32(get("age_f"), "age_f", line)?,
            educ_m: educ("educ_m")?,
            educ_f: educ("educ_f")?,
            n_children: parse_u32(get("n_children"), "n_children", line)?,
            married: parse_bool(get("married"), "married", line)?,
            traits_m,
            traits_f,
        };
        let mut reasons = obs.violations();
        if reasons.is_empty() && full_income(obs.wage_m, obs.wage_f, obs.nonlabor_income) <= 0.0 {
            reasons.push("nonpositive full income".to_string());
        }
        if reasons.is_empty() {
            accepted.push(obs);
        } else {
            rejects.push(Reject {
                line,
                household_id: obs.household_id,
                wave: Some(obs.wave),
                reason: reasons.join("; "),
            });
        }
    }
    Ok(LoadedPanel { accepted, rejects })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write records in the canonical schema (identity column map).
pub fn write_panel<W: Write>(sink: W, observations: &[HouseholdObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(logical_columns())?;
    for o in observations {
        let mut row = vec![
            o.household_id.clone(),
            o.wave.to_string(),
            o.wage_m.to_string(),
            o.wage_f.to_string(),
            o.hours_m.to_string(),
            o.hours_f.to_string(),
            o.nonlabor_income.to_string(),
            o.cons_private_m.to_string(),
            o.cons_private_f.to_string(),
            o.cons_public.to_string(),
            o.age_m.to_string(),
            o.age_f.to_string(),
            o.educ_m.as_str().to_string(),
            o.educ_f.as_str().to_string(),
            o.n_children.to_string(),
            (o.married as u8).to_string(),
            opt(o.household_private_consumption),
        ];
        for sex in [Sex::Male, Sex::Female] {
            for t in Trait::ALL {
                row.push(opt(o.traits(sex).get(t)));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rejects<W: Write>(sink: W, rejects: &[Reject]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["line", "household_id", "wave", "reason"])?;
    for r in rejects {
        w.write_record([
            r.line.to_string(),
            r.household_id.clone(),
            r.wave.map(|w| w.to_string()).unwrap_or_default(),
            r.reason.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample_obs(id: &str, wave: Wave) -> HouseholdObservation {
        HouseholdObservation {
            household_id: id.to_string(),
            wave,
            wage_m: 13.63,
            wage_f: 12.05,
            hours_m: 37.43,
            hours_f: 25.98,
            nonlabor_income: -55.47,
            cons_private_m: 89.97,
            cons_private_f: 95.25,
            cons_public: 579.10,
            household_private_consumption: None,
            age_m: 47,
            age_f: 45,
            educ_m: Education::High,
            educ_f: Education::Low,
            n_children: 1,
            married: true,
            traits_m: TraitScores::complete([3.07, 3.18, 3.07, 2.29, 2.78, 5.98, 4.78]),
            traits_f: TraitScores::complete([3.07, 3.12, 3.16, 2.59, 2.85, 5.85, 4.39]),
        }
    }

    fn to_csv(obs: &[HouseholdObservation]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_panel(&mut buf, obs).unwrap();
        buf
    }

    #[test]
    fn clean_file_loads_without_rejects() {
        let obs: Vec<_> = (0..3).map(|i| sample_obs(&format!("h{i}"), 2009)).collect();
        let loaded = load_panel(&to_csv(&obs)[..], &ColumnMap::default()).unwrap();
        assert_eq!(loaded.accepted, obs);
        assert!(loaded.rejects.is_empty());
    }

    #[test]
    fn short_hours_rejected_with_reason() {
        let mut o = sample_obs("h1", 2009);
        o.hours_m = 8.0;
        let loaded = load_panel(&to_csv(&[o])[..], &ColumnMap::default()).unwrap();
        assert!(loaded.accepted.is_empty());
        assert_eq!(loaded.rejects.len(), 1);
        assert!(loaded.rejects[0].reason.contains("hours below 10"));
        assert_eq!(loaded.rejects[0].line, 2);
    }

    #[test]
    fn low_female_wage_within_observed_range_is_accepted() {
        let mut o = sample_obs("h1", 2009);
        o.wage_f = 4.03;
        let loaded = load_panel(&to_csv(&[o])[..], &ColumnMap::default()).unwrap();
        assert_eq!(loaded.accepted.len(), 1);
    }

    #[test]
    fn malformed_number_is_hard_error() {
        let mut text = String::from_utf8(to_csv(&[sample_obs("h1", 2009)])).unwrap();
        text = text.replace("13.63", "abc");
        assert!(matches!(load_panel(text.as_bytes(), &ColumnMap::default()), Err(Error::Input(_))));
    }

    #[test]
    fn missing_column_is_hard_error() {
        let text = "household_id,wave\nh1,2009\n";
        let err = load_panel(text.as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(err.to_string().contains("wage_m"));
    }

    #[test]
    fn schema_renames_columns_and_empty_traits_are_missing() {
        let mut o = sample_obs("h1", 2009);
        o.traits_f.set(Trait::Openness, None);
        let text = String::from_utf8(to_csv(&[o.clone()])).unwrap().replacen("wage_m", "MaleWage", 1);
        let schema = ColumnMap::from_json(r#"{"columns": {"wage_m": "MaleWage"}}"#).unwrap();
        let loaded = load_panel(text.as_bytes(), &schema).unwrap();
        assert_eq!(loaded.accepted, vec![o]);
    }

    #[test]
    fn derived_full_income_and_leisure() {
        let mut o = sample_obs("h", 2009);
        o.wage_m = 10.0;
        o.wage_f = 10.0;
        o.nonlabor_income = 0.0;
        o.hours_m = 40.0;
        let d = derive_vars(&o).unwrap();
        assert_eq!(d.full_income, 2240.0);
        assert_eq!(d.leisure_m, 72.0);
        assert!((d.share(Good::Lm) - 720.0 / 2240.0).abs() < 1e-15);
    }

    #[test]
    fn table_means_leisure_consistency() {
        let d = derive_vars(&sample_obs("h", 2009)).unwrap();
        assert!((d.leisure_m - 74.57).abs() < 1e-9);
        assert!((d.leisure_m - 74.56).abs() < 0.011);
    }

    #[test]
    fn nonpositive_income_errors() {
        let mut o = sample_obs("h", 2009);
        o.nonlabor_income = -1e6;
        assert!(matches!(derive_vars(&o), Err(Error::NonpositiveIncome)));
    }

    #[test]
    fn total_expenditure_denominator_sums_to_one() {
        let d = derive_vars_with(&sample_obs("h", 2009), ShareDenominator::TotalExpenditure).unwrap();
        assert!((d.shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pooling_tags_waves_and_counts_dummies() {
        let mut panels = BTreeMap::new();
        for (i, w) in [2009, 2010, 2012, 2015, 2017].into_iter().enumerate() {
            panels.insert(w, vec![sample_obs(&format!("h{i}"), 0)]);
        }
        let pooled = pool_waves(panels).unwrap();
        assert_eq!(pooled.dummy_names().len(), 4);
        assert_eq!(pooled.observations[1].wave, 2010);
        assert_eq!(pooled.wave_dummies(&pooled.observations[1]), vec![1.0, 0.0, 0.0, 0.0]);

        let single = PooledSample::from_observations(vec![sample_obs("a", 2009)]).unwrap();
        assert!(single.dummy_names().is_empty());
    }

    #[test]
    fn duplicate_household_wave_rejected() {
        let err = PooledSample::from_observations(vec![sample_obs("a", 2009), sample_obs("a", 2009)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateObservation { .. }));
    }

    #[test]
    fn derive_is_deterministic_and_leisure_interior() {
        let o = sample_obs("h", 2009);
        let a = derive_vars(&o).unwrap();
        let b = derive_vars(&o).unwrap();
        assert_eq!(a, b);
        assert!(a.leisure_m > 0.0 && a.leisure_m < TIME_ENDOWMENT);
    }
}
