//! Visit-level data model, eligibility filtering, 30-day return labeling,
//! synthetic cohort generation, and cohort statistics.

mod generate;
mod io;

pub use generate::{generate_cohort, CohortSpec, GeneratedCohort, GoldCategories};
pub use io::{read_cohort, write_cohort, COHORT_CSV_HEADER};

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tables;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("duplicate visit id {0}")]
    DuplicateVisitId(String),
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("label calibration failed: {0}")]
    Calibration(String),
    #[error("invalid record {visit_id}: {reason}")]
    InvalidRecord { visit_id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One raw vital-sign reading taken during a visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalReading {
    pub kind: String,
    pub value: f64,
    pub timestamp: DateTime<Utc>,
}

/// One emergency-department encounter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub patient_id: String,
    pub visit_id: String,
    /// Arrival time, minute resolution.
    pub arrival: DateTime<Utc>,
    pub age_years: u32,
    pub gender: String,
    pub marital_status: String,
    pub race: String,
    pub ethnic_group: String,
    pub language: String,
    pub insurance: String,
    pub esi_level: u8,
    pub icd_code: String,
    pub chief_complaint_text: String,
    /// SDoH kind -> free-text note; all seven kinds present on synthetic data.
    pub sdoh_texts: BTreeMap<String, String>,
    pub vitals_raw: Vec<VitalReading>,
    pub visits_past_2_months: u32,
}

impl VisitRecord {
    /// Check the record invariants: ESI in 1..=5 and every demographic value
    /// a member of its closed set (or the `Unknown` sentinel).
    pub fn validate(&self) -> Result<(), CohortError> {
        let invalid = |reason: String| CohortError::InvalidRecord {
            visit_id: self.visit_id.clone(),
            reason,
        };
        if !(1..=5).contains(&self.esi_level) {
            return Err(invalid(format!("esi_level {} out of range", self.esi_level)));
        }
        let marginals = tables::default_marginals();
        for (feature, value) in [
            ("gender", &self.gender),
            ("marital_status", &self.marital_status),
            ("race", &self.race),
            ("ethnic_group", &self.ethnic_group),
            ("language", &self.language),
            ("insurance", &self.insurance),
        ] {
            let m = &marginals[feature];
            if !m.contains(value) && value != tables::UNKNOWN {
                return Err(invalid(format!("{feature} value {value:?} not in closed set")));
            }
        }
        Ok(())
    }

    /// Kind -> arithmetic-mean vital value for this visit.
    pub fn vital_means(&self) -> BTreeMap<String, f64> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &self.vitals_raw {
            let e = sums.entry(r.kind.clone()).or_insert((0.0, 0));
            e.0 += r.value;
            e.1 += 1;
        }
        sums.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect()
    }
}

/// Predicted risk group used across attribution, explanation and assessment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskGroup {
    Low,
    High,
}

impl RiskGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            RiskGroup::Low => "low",
            RiskGroup::High => "high",
        }
    }
}

impl std::fmt::Display for RiskGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Keep only adult visits whose discharge diagnosis is a mental/behavioral
/// code (ICD-10 letter `F`), preserving input order.
pub fn filter_eligible(visits: &[VisitRecord]) -> Vec<VisitRecord> {
    visits
        .iter()
        .filter(|v| v.age_years >= 18)
        .filter(|v| {
            v.icd_code
                .chars()
                .next()
                .map(|c| c.eq_ignore_ascii_case(&'F'))
                .unwrap_or(false)
        })
        .cloned()
        .collect()
}

/// Window for a return visit: strictly after the index arrival and at most
/// thirty 24-hour days later.
pub const RETURN_WINDOW_HOURS: i64 = 30 * 24;

/// Label each visit: `true` when the same patient has another visit with an
/// arrival strictly after this one and within the 30-day window.
pub fn label_returns(visits: &[VisitRecord]) -> Result<BTreeMap<String, bool>, CohortError> {
    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(visits.len());
    for v in visits {
        if seen.insert(&v.visit_id, ()).is_some() {
            return Err(CohortError::DuplicateVisitId(v.visit_id.clone()));
        }
    }
    let mut by_patient: HashMap<&str, Vec<(DateTime<Utc>, &str)>> = HashMap::new();
    for v in visits {
        by_patient
            .entry(&v.patient_id)
            .or_default()
            .push((v.arrival, &v.visit_id));
    }
    let window = chrono::Duration::hours(RETURN_WINDOW_HOURS);
    let mut labels = BTreeMap::new();
    for arrivals in by_patient.values_mut() {
        arrivals.sort();
        for i in 0..arrivals.len() {
            let (t, id) = arrivals[i];
            let returned = arrivals[i + 1..]
                .iter()
                .take_while(|(u, _)| *u - t <= window)
                .any(|(u, _)| *u > t);
            labels.insert(id.to_string(), returned);
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation; zero for a single observation.
    pub std: f64,
}

/// Per-risk-group summary used by the explanation context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupStats {
    pub size: usize,
    pub numeric: BTreeMap<String, MeanStd>,
    /// feature -> category -> prevalence within the group.
    pub categorical: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortStatistics {
    pub total: usize,
    /// `None` when the group is empty: unavailable, not zero.
    pub low: Option<GroupStats>,
    pub high: Option<GroupStats>,
    /// feature -> category -> observed 30-day return rate.
    pub category_return_rate: BTreeMap<String, BTreeMap<String, f64>>,
}

impl CohortStatistics {
    pub fn group(&self, g: RiskGroup) -> Option<&GroupStats> {
        match g {
            RiskGroup::Low => self.low.as_ref(),
            RiskGroup::High => self.high.as_ref(),
        }
    }
}

/// Numeric feature profile of a visit, as used by cohort statistics and the
/// explanation context. Vital means appear only when readings exist.
pub fn numeric_profile(v: &VisitRecord) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    out.insert("age_years".into(), v.age_years as f64);
    out.insert("visits_past_2_months".into(), v.visits_past_2_months as f64);
    out.insert("esi_level".into(), v.esi_level as f64);
    out.insert("hour_of_day".into(), v.arrival.hour() as f64);
    out.insert("day_of_month".into(), v.arrival.day() as f64);
    out.insert("month".into(), v.arrival.month() as f64);
    for (kind, mean) in v.vital_means() {
        out.insert(kind, mean);
    }
    out
}

fn categorical_profile(v: &VisitRecord) -> Vec<(&'static str, String)> {
    vec![
        ("gender", v.gender.clone()),
        ("marital_status", v.marital_status.clone()),
        ("race", v.race.clone()),
        ("ethnic_group", v.ethnic_group.clone()),
        ("language", v.language.clone()),
        ("insurance", v.insurance.clone()),
        ("esi_level", v.esi_level.to_string()),
    ]
}

fn group_stats(visits: &[&VisitRecord]) -> Option<GroupStats> {
    if visits.is_empty() {
        return None;
    }
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    let mut cats: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for v in visits {
        for (name, x) in numeric_profile(v) {
            let e = sums.entry(name).or_insert((0.0, 0.0, 0));
            e.0 += x;
            e.1 += x * x;
            e.2 += 1;
        }
        for (feature, value) in categorical_profile(v) {
            *cats
                .entry(feature.to_string())
                .or_default()
                .entry(value)
                .or_insert(0) += 1;
        }
    }
    let numeric = sums
        .into_iter()
        .map(|(name, (s, s2, n))| {
            let mean = s / n as f64;
            let var = (s2 / n as f64 - mean * mean).max(0.0);
            (name, MeanStd { mean, std: var.sqrt() })
        })
        .collect();
    let categorical = cats
        .into_iter()
        .map(|(feature, counts)| {
            let total: usize = counts.values().sum();
            (
                feature,
                counts
                    .into_iter()
                    .map(|(c, k)| (c, k as f64 / total as f64))
                    .collect(),
            )
        })
        .collect();
    Some(GroupStats {
        size: visits.len(),
        numeric,
        categorical,
    })
}

/// Summarize the cohort per predicted-risk group, plus per-category observed
/// return rates used for "association with risk" statements.
///
/// Every visit must appear in `risk_partition`.
pub fn cohort_statistics(
    visits: &[VisitRecord],
    labels: &BTreeMap<String, bool>,
    risk_partition: &BTreeMap<String, RiskGroup>,
) -> Result<CohortStatistics, CohortError> {
    let mut low = Vec::new();
    let mut high = Vec::new();
    for v in visits {
        match risk_partition.get(&v.visit_id) {
            Some(RiskGroup::Low) => low.push(v),
            Some(RiskGroup::High) => high.push(v),
            None => {
                return Err(CohortError::InvalidRecord {
                    visit_id: v.visit_id.clone(),
                    reason: "missing risk-group assignment".into(),
                })
            }
        }
    }

    let mut rate_counts: BTreeMap<String, BTreeMap<String, (usize, usize)>> = BTreeMap::new();
    for v in visits {
        let returned = labels.get(&v.visit_id).copied().unwrap_or(false);
        for (feature, value) in categorical_profile(v) {
            let e = rate_counts
                .entry(feature.to_string())
                .or_default()
                .entry(value)
                .or_insert((0, 0));
            e.0 += usize::from(returned);
            e.1 += 1;
        }
    }
    let category_return_rate = rate_counts
        .into_iter()
        .map(|(feature, by_cat)| {
            (
                feature,
                by_cat
                    .into_iter()
                    .map(|(c, (pos, n))| (c, pos as f64 / n as f64))
                    .collect(),
            )
        })
        .collect();

    Ok(CohortStatistics {
        total: visits.len(),
        low: group_stats(&low),
        high: group_stats(&high),
        category_return_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn minimal_visit(patient: &str, visit: &str, day: i64) -> VisitRecord {
        VisitRecord {
            patient_id: patient.into(),
            visit_id: visit.into(),
            arrival: Utc.with_ymd_and_hms(2021, 1, 1, 12, 0, 0).unwrap()
                + chrono::Duration::days(day),
            age_years: 30,
            gender: "M".into(),
            marital_status: "Single".into(),
            race: "White".into(),
            ethnic_group: "Non-Hispanic/Latino".into(),
            language: "English".into(),
            insurance: "Self-Pay".into(),
            esi_level: 3,
            icd_code: "F32.9".into(),
            chief_complaint_text: "requests evaluation".into(),
            sdoh_texts: BTreeMap::new(),
            vitals_raw: vec![],
            visits_past_2_months: 0,
        }
    }

    #[test]
    fn eligibility_excludes_minors_and_non_f_codes() {
        let mut minor = minimal_visit("p1", "v1", 0);
        minor.age_years = 17;
        let mut adult = minimal_visit("p2", "v2", 0);
        adult.icd_code = "F10.2".into();
        adult.age_years = 30;
        let mut wrong_code = minimal_visit("p3", "v3", 0);
        wrong_code.icd_code = "I10".into();

        let kept = filter_eligible(&[minor, adult.clone(), wrong_code]);
        assert_eq!(kept, vec![adult]);
    }

    #[test]
    fn eligibility_keeps_order_and_is_idempotent() {
        let mut visits = Vec::new();
        for i in 0..10 {
            let mut v = minimal_visit("p", &format!("v{i}"), i);
            // Four eligible records: even indices below 8.
            if i % 2 == 1 {
                v.icd_code = "I10".into();
            }
            if i >= 8 {
                v.age_years = 16;
            }
            visits.push(v);
        }
        let kept = filter_eligible(&visits);
        let ids: Vec<_> = kept.iter().map(|v| v.visit_id.clone()).collect();
        assert_eq!(ids, vec!["v0", "v2", "v4", "v6"]);
        assert_eq!(filter_eligible(&kept), kept);
    }

    #[test]
    fn lowercase_f_code_is_eligible() {
        let mut v = minimal_visit("p", "v", 0);
        v.icd_code = "f41.9".into();
        assert_eq!(filter_eligible(&[v]).len(), 1);
    }

    #[test]
    fn labels_follow_the_thirty_day_window() {
        let visits = vec![minimal_visit("p", "a", 0), minimal_visit("p", "b", 14)];
        let labels = label_returns(&visits).unwrap();
        assert!(labels["a"]);
        assert!(!labels["b"]);

        let visits = vec![minimal_visit("p", "a", 0), minimal_visit("p", "b", 31)];
        let labels = label_returns(&visits).unwrap();
        assert!(!labels["a"]);
        assert!(!labels["b"]);
    }

    #[test]
    fn window_boundary_is_inclusive() {
        let mut b = minimal_visit("p", "b", 0);
        b.arrival = minimal_visit("p", "a", 0).arrival + chrono::Duration::hours(720);
        let visits = vec![minimal_visit("p", "a", 0), b];
        let labels = label_returns(&visits).unwrap();
        assert!(labels["a"], "exactly 30x24h later counts as a return");
    }

    #[test]
    fn five_visit_pattern_matches_hand_labels() {
        let days = [0, 10, 45, 50, 100];
        let visits: Vec<_> = days
            .iter()
            .enumerate()
            .map(|(i, d)| minimal_visit("p", &format!("v{i}"), *d))
            .collect();
        let labels = label_returns(&visits).unwrap();
        let got: Vec<bool> = (0..5).map(|i| labels[&format!("v{i}")]).collect();
        assert_eq!(got, vec![true, false, true, false, false]);
    }

    #[test]
    fn duplicate_visit_ids_are_rejected() {
        let visits = vec![minimal_visit("p", "a", 0), minimal_visit("q", "a", 1)];
        assert!(matches!(
            label_returns(&visits),
            Err(CohortError::DuplicateVisitId(_))
        ));
    }

    #[test]
    fn labels_match_brute_force_on_small_cohorts() {
        // O(n^2) oracle: compare every ordered pair directly.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut visits = Vec::new();
        for i in 0..400 {
            let p = format!("p{}", rng.random_range(0..60));
            let mut v = minimal_visit(&p, &format!("v{i}"), 0);
            v.arrival += chrono::Duration::minutes(rng.random_range(0..200_000));
            visits.push(v);
        }
        let labels = label_returns(&visits).unwrap();
        for a in &visits {
            let expect = visits.iter().any(|b| {
                b.patient_id == a.patient_id
                    && b.arrival > a.arrival
                    && b.arrival - a.arrival <= chrono::Duration::hours(RETURN_WINDOW_HOURS)
            });
            assert_eq!(labels[&a.visit_id], expect, "visit {}", a.visit_id);
        }
    }

    #[test]
    fn statistics_means_match_hand_computation() {
        // Six visits, two risk groups; hour-of-day means worked out by hand.
        let mut visits = Vec::new();
        let mut partition = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let hours = [8, 10, 12, 14, 20, 22];
        for (i, h) in hours.iter().enumerate() {
            let mut v = minimal_visit("p", &format!("v{i}"), i as i64 * 40);
            v.arrival = Utc
                .with_ymd_and_hms(2021, 3, 1 + i as u32, *h, 0, 0)
                .unwrap();
            v.visits_past_2_months = i as u32;
            partition.insert(
                v.visit_id.clone(),
                if i < 3 { RiskGroup::Low } else { RiskGroup::High },
            );
            labels.insert(v.visit_id.clone(), i % 2 == 0);
            visits.push(v);
        }
        let stats = cohort_statistics(&visits, &labels, &partition).unwrap();
        let low = stats.low.as_ref().unwrap();
        let high = stats.high.as_ref().unwrap();
        assert_eq!(low.size + high.size, stats.total);
        assert!((low.numeric["hour_of_day"].mean - 10.0).abs() < 1e-12);
        assert!((high.numeric["hour_of_day"].mean - (14.0 + 20.0 + 22.0) / 3.0).abs() < 1e-12);
        // Population std of [8, 10, 12] is sqrt(8/3).
        assert!((low.numeric["hour_of_day"].std - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((low.numeric["visits_past_2_months"].mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_member_group_has_zero_std() {
        let visits = vec![minimal_visit("p", "v0", 0), minimal_visit("p", "v1", 60)];
        let mut partition = BTreeMap::new();
        partition.insert("v0".to_string(), RiskGroup::Low);
        partition.insert("v1".to_string(), RiskGroup::High);
        let labels = label_returns(&visits).unwrap();
        let stats = cohort_statistics(&visits, &labels, &partition).unwrap();
        assert_eq!(stats.high.as_ref().unwrap().numeric["hour_of_day"].std, 0.0);
    }

    #[test]
    fn empty_group_is_unavailable_not_zero() {
        let visits = vec![minimal_visit("p", "v0", 0)];
        let mut partition = BTreeMap::new();
        partition.insert("v0".to_string(), RiskGroup::Low);
        let labels = label_returns(&visits).unwrap();
        let stats = cohort_statistics(&visits, &labels, &partition).unwrap();
        assert!(stats.high.is_none());
        assert!(stats.low.is_some());
    }
}
