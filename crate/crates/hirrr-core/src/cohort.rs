//! Synthetic-EHR cohort pipeline: encounter records in, matched case-control
//! cohort out, with code-derived features, surrogate outcomes, and marginal
//! screening.
//!
//! Patients split into multi-record and single-record groups. A multi-record
//! case has a non-attempt first encounter and a later attempt; the encounter
//! sequence is cut at the first attempt so nothing after it is used, the last
//! kept encounter provides the outcome, and the earlier ones provide features.
//! A multi-record patient whose first encounter already is an attempt has no
//! usable history and is set aside. Single-record patients contribute outcome
//! rows only.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HirrrError, Result};
use crate::expfam::{ln_factorial, Family};
use crate::seeding::{stream_rng, StreamTag};
use crate::types::Dataset;

/// One inpatient encounter row.
#[derive(Debug, Clone, PartialEq)]
pub struct EncounterRecord {
    pub patient_id: String,
    pub date: NaiveDate,
    pub age: u32,
    pub sex: String,
    pub race: String,
    pub codes: Vec<String>,
    pub is_attempt: bool,
}

/// One surrogate outcome: a disorder name and its code patterns.
///
/// A pattern is either a code prefix ("296.2" covers "296.2x") or an
/// inclusive final-digit range ("291.0-5", "303.0-303.9").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateDef {
    pub name: String,
    pub patterns: Vec<String>,
}

impl SurrogateDef {
    fn new(name: &str, patterns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            patterns: patterns.iter().map(|p| p.to_string()).collect(),
        }
    }
}

/// Cohort construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    /// Controls matched per case.
    pub control_ratio: usize,
    /// Maximum |age difference| between a case and its controls, in years.
    pub age_window: u32,
    /// Code indicators kept only when cohort prevalence exceeds this.
    pub code_prevalence_floor: f64,
    /// Characters of the pre-decimal code part kept as the feature name.
    pub truncate_digits: usize,
    /// Surrogate outcomes in column order.
    pub surrogate_map: Vec<SurrogateDef>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            control_ratio: 5,
            age_window: 2,
            code_prevalence_floor: 0.005,
            truncate_digits: 3,
            surrogate_map: default_surrogate_map(),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.control_ratio < 1 {
            return Err(HirrrError::Config("control_ratio must be >= 1".into()));
        }
        if !(self.code_prevalence_floor > 0.0 && self.code_prevalence_floor < 1.0) {
            return Err(HirrrError::Config(format!(
                "code_prevalence_floor must lie in (0, 1), got {}",
                self.code_prevalence_floor
            )));
        }
        if self.truncate_digits < 1 {
            return Err(HirrrError::Config("truncate_digits must be >= 1".into()));
        }
        for def in &self.surrogate_map {
            for pattern in &def.patterns {
                expand_pattern(pattern)?;
            }
        }
        Ok(())
    }
}

/// The standard seven-disorder surrogate map (ICD-9 code patterns).
pub fn default_surrogate_map() -> Vec<SurrogateDef> {
    vec![
        SurrogateDef::new(
            "major_depressive_disorder",
            &["293.83", "296.2", "296.3", "296.9", "298.0", "300.4", "301.12", "309.0"],
        ),
        SurrogateDef::new(
            "alcohol_use_disorder",
            &[
                "291.0-5", "291.8-9", "303.0-303.9", "305.0", "357.5", "425.5", "571.0-3",
                "535.3", "V11.3",
            ],
        ),
        SurrogateDef::new("drug_use_disorder", &["292.0-1", "304.0-304.9", "305.2-305.8"]),
        SurrogateDef::new("anxiety_disorder", &["300.0", "300.1", "300.2", "799.2"]),
        SurrogateDef::new("posttraumatic_stress_disorder", &["309.81"]),
        SurrogateDef::new("schizophrenia", &["295.0-295.9", "V11.0"]),
        SurrogateDef::new(
            "bipolar_disorder",
            &[
                "296.0", "296.1", "296.4-7", "296.80", "296.81", "296.82", "296.89", "296.90",
                "296.99", "V11.1",
            ],
        ),
    ]
}

/// Expands a code pattern into its list of prefix strings.
///
/// "296.2" stays a single prefix. "291.0-5" and "303.0-303.9" expand the
/// final digit inclusively; a long-form right end must share the left stem.
pub fn expand_pattern(pattern: &str) -> Result<Vec<String>> {
    let malformed = |why: &str| {
        HirrrError::Config(format!("malformed code pattern '{pattern}': {why}"))
    };
    if pattern.is_empty() {
        return Err(malformed("empty"));
    }
    let Some((left, right)) = pattern.split_once('-') else {
        return Ok(vec![pattern.to_string()]);
    };
    let start = left
        .chars()
        .last()
        .filter(char::is_ascii_digit)
        .ok_or_else(|| malformed("range start must end in a digit"))?;
    let stem = &left[..left.len() - 1];
    let end = right
        .chars()
        .last()
        .filter(char::is_ascii_digit)
        .ok_or_else(|| malformed("range end must end in a digit"))?;
    if right.len() > 1 && &right[..right.len() - 1] != stem {
        return Err(malformed("range ends disagree on the code stem"));
    }
    if end < start {
        return Err(malformed("range runs backwards"));
    }
    Ok((start as u8..=end as u8)
        .map(|d| format!("{stem}{}", d as char))
        .collect())
}

/// True when the code starts with any of the prefixes.
fn code_matches(code: &str, prefixes: &[String]) -> bool {
    prefixes.iter().any(|p| code.starts_with(p.as_str()))
}

/// A patient's usable encounters in date order; the last one is the outcome
/// encounter, the earlier ones (if any) are history.
#[derive(Debug, Clone)]
pub struct Patient {
    pub id: String,
    pub encounters: Vec<EncounterRecord>,
    pub is_case: bool,
}

impl Patient {
    /// The encounter providing the outcome row.
    pub fn outcome(&self) -> &EncounterRecord {
        self.encounters.last().expect("patients have encounters")
    }

    /// Encounters before the outcome one.
    pub fn history(&self) -> &[EncounterRecord] {
        &self.encounters[..self.encounters.len() - 1]
    }
}

/// Patients split by record count, plus the unusable remainder.
#[derive(Debug, Clone)]
pub struct CohortSplit {
    pub multi: Vec<Patient>,
    pub single: Vec<Patient>,
    /// Multi-encounter patients whose first encounter was an attempt: they
    /// carry no pre-attempt history, so neither branch can use them.
    pub excluded: Vec<String>,
}

/// Groups records by patient and classifies each patient.
///
/// Encounters sort by date (ties keep input order). A single-encounter
/// patient lands in `single`, a case when that encounter is an attempt. A
/// multi-encounter patient whose first encounter is clean becomes a multi
/// case when an attempt follows (encounters after the first attempt are
/// dropped) and a multi control when none does.
pub fn split_multi_single(records: &[EncounterRecord]) -> CohortSplit {
    let mut order = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<&EncounterRecord>> = BTreeMap::new();
    for rec in records {
        let entry = grouped.entry(&rec.patient_id).or_default();
        if entry.is_empty() {
            order.push(rec.patient_id.as_str());
        }
        entry.push(rec);
    }
    let mut split = CohortSplit {
        multi: Vec::new(),
        single: Vec::new(),
        excluded: Vec::new(),
    };
    for id in order {
        let mut encounters: Vec<EncounterRecord> =
            grouped[id].iter().map(|r| (*r).clone()).collect();
        encounters.sort_by_key(|r| r.date);
        if encounters.len() == 1 {
            let is_case = encounters[0].is_attempt;
            split.single.push(Patient {
                id: id.to_string(),
                encounters,
                is_case,
            });
            continue;
        }
        if encounters[0].is_attempt {
            split.excluded.push(id.to_string());
            continue;
        }
        match encounters.iter().position(|r| r.is_attempt) {
            Some(first_attempt) => {
                encounters.truncate(first_attempt + 1);
                split.multi.push(Patient {
                    id: id.to_string(),
                    encounters,
                    is_case: true,
                });
            }
            None => split.multi.push(Patient {
                id: id.to_string(),
                encounters,
                is_case: false,
            }),
        }
    }
    split
}

/// A matched case-control cohort: each case followed by its controls.
#[derive(Debug, Clone)]
pub struct MatchedCohort {
    pub members: Vec<Patient>,
    /// Controls matched to each case, in case order.
    pub match_counts: Vec<usize>,
    /// Cases that got fewer controls than the configured ratio.
    pub flagged: Vec<String>,
}

impl MatchedCohort {
    pub fn n_cases(&self) -> usize {
        self.match_counts.len()
    }
}

/// Matches each case with up to `control_ratio` controls sharing sex and
/// race, with outcome-encounter ages within the window, without replacement.
///
/// Cases are processed greedily in input order; when more controls are
/// eligible than needed, the kept ones are sampled under `rng`.
pub fn match_case_control<R: Rng>(
    cases: &[Patient],
    controls: &[Patient],
    cfg: &CohortConfig,
    rng: &mut R,
) -> MatchedCohort {
    let mut used = vec![false; controls.len()];
    let mut cohort = MatchedCohort {
        members: Vec::new(),
        match_counts: Vec::new(),
        flagged: Vec::new(),
    };
    for case in cases {
        let out = case.outcome();
        let eligible: Vec<usize> = controls
            .iter()
            .enumerate()
            .filter(|(i, ctl)| {
                let c = ctl.outcome();
                !used[*i]
                    && c.sex == out.sex
                    && c.race == out.race
                    && c.age.abs_diff(out.age) <= cfg.age_window
            })
            .map(|(i, _)| i)
            .collect();
        let picked: Vec<usize> = if eligible.len() > cfg.control_ratio {
            let mut idx = sample(rng, eligible.len(), cfg.control_ratio).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| eligible[k]).collect()
        } else {
            eligible
        };
        if picked.len() < cfg.control_ratio {
            cohort.flagged.push(case.id.clone());
        }
        cohort.members.push(case.clone());
        cohort.match_counts.push(picked.len());
        for i in picked {
            used[i] = true;
            cohort.members.push(controls[i].clone());
        }
    }
    cohort
}

/// The feature name for a raw code: the pre-decimal part truncated.
fn truncate_code(code: &str, digits: usize) -> String {
    let pre = code.split('.').next().unwrap_or(code);
    pre.chars().take(digits).collect()
}

/// Sorted category levels minus the first (the reference level).
fn one_hot_levels<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let levels: BTreeSet<&str> = values.collect();
    levels.into_iter().skip(1).map(str::to_string).collect()
}

/// Builds the feature block for a matched multi-record cohort.
///
/// Columns: outcome-encounter age, sex and race one-hot indicators (sorted
/// levels, first level as reference), truncated-code indicators over the
/// history encounters with cohort prevalence above the floor, then one prior
/// indicator per surrogate disorder matched over the full historical codes.
pub fn build_features(
    cohort: &[Patient],
    cfg: &CohortConfig,
) -> Result<(Array2<f64>, Vec<String>)> {
    cfg.validate()?;
    if cohort.is_empty() {
        return Err(HirrrError::InvalidArgument(
            "cannot build features for an empty cohort".into(),
        ));
    }
    let n = cohort.len();
    let sex_levels = one_hot_levels(cohort.iter().map(|p| p.outcome().sex.as_str()));
    let race_levels = one_hot_levels(cohort.iter().map(|p| p.outcome().race.as_str()));

    // Truncated-history codes per patient, then the prevalence floor.
    let patient_codes: Vec<BTreeSet<String>> = cohort
        .iter()
        .map(|p| {
            p.history()
                .iter()
                .flat_map(|e| e.codes.iter())
                .map(|c| truncate_code(c, cfg.truncate_digits))
                .collect()
        })
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for codes in &patient_codes {
        for code in codes {
            *counts.entry(code).or_insert(0) += 1;
        }
    }
    let kept: Vec<String> = counts
        .iter()
        .filter(|(_, c)| **c as f64 / n as f64 > cfg.code_prevalence_floor)
        .map(|(code, _)| code.to_string())
        .collect();

    let compiled: Vec<(String, Vec<String>)> = cfg
        .surrogate_map
        .iter()
        .map(|def| {
            let mut prefixes = Vec::new();
            for pattern in &def.patterns {
                prefixes.extend(expand_pattern(pattern)?);
            }
            Ok((def.name.clone(), prefixes))
        })
        .collect::<Result<_>>()?;

    let mut names = vec!["age".to_string()];
    names.extend(sex_levels.iter().map(|l| format!("sex_{l}")));
    names.extend(race_levels.iter().map(|l| format!("race_{l}")));
    names.extend(kept.iter().cloned());
    names.extend(compiled.iter().map(|(name, _)| format!("prior_{name}")));

    let mut x = Array2::<f64>::zeros((n, names.len()));
    for (i, patient) in cohort.iter().enumerate() {
        let out = patient.outcome();
        let mut j = 0;
        x[[i, j]] = f64::from(out.age);
        j += 1;
        for level in &sex_levels {
            x[[i, j]] = f64::from(out.sex == *level);
            j += 1;
        }
        for level in &race_levels {
            x[[i, j]] = f64::from(out.race == *level);
            j += 1;
        }
        for code in &kept {
            x[[i, j]] = f64::from(patient_codes[i].contains(code));
            j += 1;
        }
        for (_, prefixes) in &compiled {
            let hit = patient
                .history()
                .iter()
                .flat_map(|e| e.codes.iter())
                .any(|c| code_matches(c, prefixes));
            x[[i, j]] = f64::from(hit);
            j += 1;
        }
    }
    Ok((x, names))
}

/// Builds the outcome block: the attempt indicator at the outcome encounter,
/// then one concurrent-disorder indicator per surrogate map entry.
pub fn build_outcomes(
    cohort: &[Patient],
    cfg: &CohortConfig,
) -> Result<(Array2<f64>, Vec<String>)> {
    let compiled: Vec<(String, Vec<String>)> = cfg
        .surrogate_map
        .iter()
        .map(|def| {
            let mut prefixes = Vec::new();
            for pattern in &def.patterns {
                prefixes.extend(expand_pattern(pattern)?);
            }
            Ok((def.name.clone(), prefixes))
        })
        .collect::<Result<_>>()?;
    let mut names = vec!["attempt".to_string()];
    names.extend(compiled.iter().map(|(name, _)| name.clone()));
    let mut y = Array2::<f64>::zeros((cohort.len(), names.len()));
    for (i, patient) in cohort.iter().enumerate() {
        let out = patient.outcome();
        y[[i, 0]] = f64::from(out.is_attempt);
        for (k, (_, prefixes)) in compiled.iter().enumerate() {
            y[[i, k + 1]] = f64::from(out.codes.iter().any(|c| code_matches(c, prefixes)));
        }
    }
    Ok((y, names))
}

/// Two-sided Fisher exact p for the 2x2 table [[a, b], [c, d]].
///
/// Sums hypergeometric probabilities no larger than the observed table's
/// (within a 1e-7 relative slack). A degenerate margin gives p = 1.
pub fn fisher_exact(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (row1, row2) = (a + b, c + d);
    let col1 = a + c;
    let n = row1 + row2;
    if row1 == 0 || row2 == 0 || col1 == 0 || col1 == n {
        return 1.0;
    }
    let ln_choose = |n: u64, k: u64| ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
    let ln_p = |k: u64| {
        ln_choose(row1, k) + ln_choose(row2, col1 - k) - ln_choose(n, col1)
    };
    let lo = col1.saturating_sub(row2);
    let hi = col1.min(row1);
    let observed = ln_p(a);
    let mut total = 0.0;
    for k in lo..=hi {
        let lp = ln_p(k);
        if lp <= observed + 1e-7 {
            total += lp.exp();
        }
    }
    total.min(1.0)
}

/// Ranks binary features by Fisher exact p against the binary outcome and
/// returns the first `top_k` indices.
///
/// Ties order by larger |log odds ratio| (cells shifted by 0.5), then index.
pub fn fisher_screen(x: ArrayView2<f64>, y: ArrayView1<f64>, top_k: usize) -> Vec<usize> {
    let n = x.nrows();
    let mut ranked: Vec<(f64, f64, usize)> = (0..x.ncols())
        .map(|j| {
            let mut table = [0u64; 4];
            for i in 0..n {
                let exposed = x[[i, j]] == 1.0;
                let positive = y[i] == 1.0;
                table[usize::from(exposed) * 2 + usize::from(positive)] += 1;
            }
            let (d, c, b, a) = (table[0], table[1], table[2], table[3]);
            let p = fisher_exact(a, b, c, d);
            let log_or = ((a as f64 + 0.5) * (d as f64 + 0.5)
                / ((b as f64 + 0.5) * (c as f64 + 0.5)))
                .ln();
            (p, -log_or.abs(), j)
        })
        .collect();
    ranked.sort_by(|lhs, rhs| {
        lhs.0
            .partial_cmp(&rhs.0)
            .unwrap()
            .then(lhs.1.partial_cmp(&rhs.1).unwrap())
            .then(lhs.2.cmp(&rhs.2))
    });
    ranked.into_iter().take(top_k).map(|(_, _, j)| j).collect()
}

/// A fully assembled cohort dataset with its matching byproducts.
#[derive(Debug, Clone)]
pub struct CohortBuild {
    pub dataset: Dataset,
    pub multi: MatchedCohort,
    pub single: MatchedCohort,
    pub excluded: Vec<String>,
}

/// Runs the whole pipeline: split, match each branch, build X and Y from the
/// matched multi-record cohort and the single-record outcome block from the
/// matched single-record cohort.
pub fn build_cohort_dataset(
    records: &[EncounterRecord],
    cfg: &CohortConfig,
    seed: u64,
) -> Result<CohortBuild> {
    cfg.validate()?;
    let split = split_multi_single(records);
    let (multi_cases, multi_controls): (Vec<Patient>, Vec<Patient>) =
        split.multi.into_iter().partition(|p| p.is_case);
    let (single_cases, single_controls): (Vec<Patient>, Vec<Patient>) =
        split.single.into_iter().partition(|p| p.is_case);
    let mut rng = stream_rng(seed, StreamTag::Match, 0);
    let multi = match_case_control(&multi_cases, &multi_controls, cfg, &mut rng);
    let mut rng = stream_rng(seed, StreamTag::Match, 1);
    let single = match_case_control(&single_cases, &single_controls, cfg, &mut rng);

    let (x, feature_names) = build_features(&multi.members, cfg)?;
    let (y, outcome_names) = build_outcomes(&multi.members, cfg)?;
    let ytilde = if single.members.is_empty() {
        Array2::zeros((0, outcome_names.len()))
    } else {
        build_outcomes(&single.members, cfg)?.0
    };
    let families = vec![Family::Bernoulli; outcome_names.len()];
    let dataset =
        Dataset::new(x, y, ytilde, 1, families)?.with_names(feature_names, outcome_names);
    Ok(CohortBuild {
        dataset,
        multi,
        single,
        excluded: split.excluded,
    })
}

/// Reads encounter records from a CSV file with the header
/// `patient_id,date,age,sex,race,codes,is_attempt` (codes split on ';').
pub fn read_encounters(path: &Path) -> Result<Vec<EncounterRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let expected = ["patient_id", "date", "age", "sex", "race", "codes", "is_attempt"];
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(HirrrError::InvalidArgument(format!(
            "expected header {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (row, entry) in reader.records().enumerate() {
        let entry = entry?;
        let field = |i: usize| entry.get(i).unwrap_or("").trim();
        let bad = |what: &str, value: &str| {
            HirrrError::InvalidArgument(format!("row {}: bad {what} '{value}'", row + 2))
        };
        let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
            .map_err(|_| bad("date", field(1)))?;
        let age: u32 = field(2).parse().map_err(|_| bad("age", field(2)))?;
        let is_attempt = match field(6).to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(bad("is_attempt", other)),
        };
        let codes = field(5)
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        records.push(EncounterRecord {
            patient_id: field(0).to_string(),
            date,
            age,
            sex: field(3).to_string(),
            race: field(4).to_string(),
            codes,
            is_attempt,
        });
    }
    Ok(records)
}

/// Writes encounter records as CSV in the same layout `read_encounters`
/// accepts.
pub fn write_encounters(path: &Path, records: &[EncounterRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["patient_id", "date", "age", "sex", "race", "codes", "is_attempt"])?;
    for rec in records {
        writer.write_record([
            rec.patient_id.as_str(),
            &rec.date.format("%Y-%m-%d").to_string(),
            &rec.age.to_string(),
            rec.sex.as_str(),
            rec.race.as_str(),
            &rec.codes.join(";"),
            if rec.is_attempt { "true" } else { "false" },
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Deterministic synthetic encounter registry for demos and tests.
///
/// Patients get one to four encounters with mixed mental-health and general
/// codes, so every cohort class (single/multi, case/control) is populated at
/// moderate sizes.
pub fn synthetic_registry(patients: usize, seed: u64) -> Vec<EncounterRecord> {
    const SEXES: [&str; 2] = ["F", "M"];
    const RACES: [&str; 4] = ["asian", "black", "hispanic", "white"];
    const CODES: [&str; 28] = [
        "296.22", "296.33", "296.90", "300.01", "300.21", "300.4", "303.00", "304.01",
        "305.0", "305.20", "309.0", "309.81", "295.30", "292.0", "291.81", "V11.0",
        "V11.3", "250.00", "401.9", "493.90", "780.6", "786.50", "845.00", "873.63",
        "995.2", "079.99", "486", "558.9",
    ];
    let mut rng = stream_rng(seed, StreamTag::Registry, 0);
    let origin = NaiveDate::from_ymd_opt(2012, 10, 1).expect("valid date");
    let mut records = Vec::new();
    for pid in 0..patients {
        let id = format!("p{pid:05}");
        let sex = SEXES[rng.random_range(0..SEXES.len())].to_string();
        let race = RACES[rng.random_range(0..RACES.len())].to_string();
        let base_age: u32 = rng.random_range(10..=22);
        let u: f64 = rng.random();
        let n_enc = if u < 0.55 {
            1
        } else if u < 0.80 {
            2
        } else if u < 0.92 {
            3
        } else {
            4
        };
        let mut offset = rng.random_range(0..1200u64);
        for enc in 0..n_enc {
            let date = origin + chrono::Days::new(offset);
            let n_codes = rng.random_range(1..=4usize);
            let picked = sample(&mut rng, CODES.len(), n_codes);
            let codes: Vec<String> = picked.iter().map(|k| CODES[k].to_string()).collect();
            let attempt_prob = if enc == 0 { 0.06 } else { 0.12 };
            let is_attempt = rng.random::<f64>() < attempt_prob;
            records.push(EncounterRecord {
                patient_id: id.clone(),
                date,
                age: base_age + (offset / 365) as u32,
                sex: sex.clone(),
                race: race.clone(),
                codes,
                is_attempt,
            });
            offset += rng.random_range(30..300u64);
        }
    }
    records
}
