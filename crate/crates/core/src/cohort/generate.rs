//! Calibrated synthetic cohort generator.
//!
//! Each synthetic patient contributes an index visit and, with probability
//! given by a logistic label model over the index visit's features, one
//! follow-up visit inside the 30-day window. The logistic bias is calibrated
//! so the realized fraction of returned visits lands on the requested rate.
//! Generation is a single deterministic stream per seed.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CohortError, VisitRecord, VitalReading};
use crate::tables::{self, Marginal};
use crate::text;

/// Zero-inflated geometric parameters for `visits_past_2_months`, moment-
/// matched to mean 1.03 and standard deviation 2.75 with the tail capped at
/// 52: mean_g = (2*m2/m + m - 1)/2 with m=1.03, m2=std^2+m^2, then
/// inflation = 1 - m/mean_g and success = 1/(mean_g + 1).
const VISITS_ZERO_INFLATION: f64 = 0.720_567;
const VISITS_GEOMETRIC_SUCCESS: f64 = 0.213_385;
const VISITS_CAP: u32 = 52;

/// Generation window matching the study period.
const WINDOW_START: (i32, u32, u32) = (2018, 1, 1);
const WINDOW_END: (i32, u32, u32) = (2022, 12, 31);

/// Probability that a vital kind was measured during a visit.
const VITAL_PRESENT_PROB: f64 = 0.96;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortSpec {
    /// Total number of visit records to emit (index visits plus follow-ups).
    pub n_visits: usize,
    /// Per-feature categorical probability tables; defaults to the published
    /// population mix. Entries replace the default for that feature.
    #[serde(default)]
    pub marginals: BTreeMap<String, Vec<(String, f64)>>,
    /// Logistic label model over index-visit features. Keys are numeric
    /// feature ids (`visits_past_2_months`, `esi_level`, `hour_of_day`,
    /// `day_of_month`, `month`, `age_years`) or `feature=Category`
    /// indicators over sampled categoricals.
    #[serde(default = "default_label_coefficients")]
    pub label_coefficients: BTreeMap<String, f64>,
    /// Target fraction of visits labeled as 30-day returns.
    #[serde(default = "default_return_rate")]
    pub target_return_rate: f64,
    pub seed: u64,
}

fn default_return_rate() -> f64 {
    0.266
}

/// Signal injected into the synthetic labels. Prior-visit count dominates,
/// acuity (lower ESI) and later presentation raise risk, and a slice of the
/// signal lives only in the free-text categories so that text extraction has
/// measurable predictive value.
pub fn default_label_coefficients() -> BTreeMap<String, f64> {
    let mut c = BTreeMap::new();
    c.insert("visits_past_2_months".into(), 0.45);
    c.insert("esi_level".into(), -0.55);
    c.insert("hour_of_day".into(), 0.045);
    c.insert("day_of_month".into(), 0.016);
    c.insert("chief_complaint=Psychiatric".into(), 0.85);
    c.insert("substance_abuse=Current Use".into(), 0.75);
    c.insert("home_environment=Homeless".into(), 0.95);
    c.insert("alcohol_use=Current Alcohol Use".into(), 0.45);
    c.insert("tobacco_use=Current Use".into(), 0.32);
    c
}

impl CohortSpec {
    pub fn new(n_visits: usize, seed: u64) -> Self {
        CohortSpec {
            n_visits,
            marginals: BTreeMap::new(),
            label_coefficients: default_label_coefficients(),
            target_return_rate: default_return_rate(),
            seed,
        }
    }

    /// Effective marginal table: defaults overlaid with any overrides.
    pub fn resolved_marginals(&self) -> Result<BTreeMap<String, Marginal>, CohortError> {
        let mut resolved = tables::default_marginals();
        for (feature, raw) in &self.marginals {
            if !resolved.contains_key(feature) {
                return Err(CohortError::InvalidSpec(format!(
                    "unknown marginal feature {feature}"
                )));
            }
            let total: f64 = raw.iter().map(|(_, w)| w).sum();
            if raw.is_empty() || raw.iter().any(|(_, w)| *w < 0.0) || total <= 0.0 {
                return Err(CohortError::InvalidSpec(format!(
                    "invalid marginal override for {feature}"
                )));
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(CohortError::InvalidSpec(format!(
                    "marginal for {feature} sums to {total}, expected 1"
                )));
            }
            let pairs: Vec<(&str, f64)> = raw.iter().map(|(n, w)| (n.as_str(), *w)).collect();
            resolved.insert(feature.clone(), Marginal::new(feature, &pairs));
        }
        Ok(resolved)
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        if self.n_visits == 0 {
            return Err(CohortError::InvalidSpec("n_visits must be positive".into()));
        }
        if !(self.target_return_rate > 0.0 && self.target_return_rate < 1.0) {
            return Err(CohortError::InvalidSpec(format!(
                "target_return_rate {} outside (0,1)",
                self.target_return_rate
            )));
        }
        self.resolved_marginals().map(|_| ())
    }
}

/// Gold categories behind a visit's generated free text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldCategories {
    pub chief_complaint: String,
    pub sdoh: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub visits: Vec<VisitRecord>,
    /// visit id -> gold text categories, for scoring extraction.
    pub gold: BTreeMap<String, GoldCategories>,
    /// Fraction of emitted visits whose 30-day return label is true.
    pub realized_return_rate: f64,
    /// Calibrated logistic bias.
    pub bias: f64,
}

fn draw<'a>(m: &'a Marginal, rng: &mut ChaCha8Rng) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (name, p) in &m.categories {
        acc += p;
        if u < acc {
            return name;
        }
    }
    // Rounding residue lands on the last category.
    &m.categories.last().expect("nonempty marginal").0
}

fn sample_visits_past_2_months(rng: &mut ChaCha8Rng) -> u32 {
    if rng.random::<f64>() < VISITS_ZERO_INFLATION {
        return 0;
    }
    let u: f64 = rng.random();
    let k = ((1.0 - u).ln() / (1.0 - VISITS_GEOMETRIC_SUCCESS).ln()).floor() as u32;
    k.min(VISITS_CAP)
}

/// Calendar days in the window, split by weekend-ness so the weekend share
/// can be sampled as a marginal of its own.
fn window_days() -> (Vec<NaiveDate>, Vec<NaiveDate>) {
    let start = NaiveDate::from_ymd_opt(WINDOW_START.0, WINDOW_START.1, WINDOW_START.2).unwrap();
    let end = NaiveDate::from_ymd_opt(WINDOW_END.0, WINDOW_END.1, WINDOW_END.2).unwrap();
    let mut weekdays = Vec::new();
    let mut weekends = Vec::new();
    let mut d = start;
    while d <= end {
        match d.weekday() {
            chrono::Weekday::Sat | chrono::Weekday::Sun => weekends.push(d),
            _ => weekdays.push(d),
        }
        d += Duration::days(1);
    }
    (weekdays, weekends)
}

struct VisitDraw {
    arrival: DateTime<Utc>,
    esi_level: u8,
    visits_past_2_months: u32,
    cc_gold: String,
    cc_text: String,
    sdoh_gold: BTreeMap<String, String>,
    sdoh_texts: BTreeMap<String, String>,
    vitals: Vec<VitalReading>,
}

struct Sampler<'a> {
    marginals: &'a BTreeMap<String, Marginal>,
    weekdays: Vec<NaiveDate>,
    weekends: Vec<NaiveDate>,
    cc_bank: text::TemplateBank,
    sdoh_banks: Vec<(String, text::TemplateBank)>,
}

impl<'a> Sampler<'a> {
    fn new(marginals: &'a BTreeMap<String, Marginal>) -> Self {
        let (weekdays, weekends) = window_days();
        Sampler {
            marginals,
            weekdays,
            weekends,
            cc_bank: text::chief_complaint_bank(),
            sdoh_banks: tables::SDOH_KINDS
                .iter()
                .map(|k| (k.to_string(), text::sdoh_bank(k)))
                .collect(),
        }
    }

    fn arrival(&self, rng: &mut ChaCha8Rng) -> DateTime<Utc> {
        let weekend = draw(&self.marginals["is_weekend"], rng) == "true";
        let pool = if weekend { &self.weekends } else { &self.weekdays };
        let date = pool[rng.random_range(0..pool.len())];
        let minute = rng.random_range(0..24 * 60);
        Utc.from_utc_datetime(
            &date
                .and_hms_opt(minute / 60, minute % 60, 0)
                .expect("valid time"),
        )
    }

    fn vitals(&self, rng: &mut ChaCha8Rng, arrival: DateTime<Utc>) -> Vec<VitalReading> {
        let mut out = Vec::new();
        for kind in tables::VITAL_KINDS {
            if rng.random::<f64>() >= VITAL_PRESENT_PROB {
                continue;
            }
            let feature = tables::vital_category_feature(kind);
            let bin = draw(&self.marginals[&feature], rng).to_string();
            let (lo, hi) = tables::vital_bin_range(kind, &bin);
            let margin = (0.15 * (hi - lo)).min(0.5);
            let base = lo + margin + rng.random::<f64>() * (hi - lo - 2.0 * margin);
            let n_readings = rng.random_range(1..=3);
            for i in 0..n_readings {
                let jitter = (rng.random::<f64>() * 2.0 - 1.0) * margin;
                out.push(VitalReading {
                    kind: kind.to_string(),
                    value: base + jitter,
                    timestamp: arrival + Duration::minutes(5 + 30 * i as i64),
                });
            }
        }
        out
    }

    fn texts(
        &self,
        rng: &mut ChaCha8Rng,
    ) -> (String, String, BTreeMap<String, String>, BTreeMap<String, String>) {
        let cc_gold = draw(&self.marginals["chief_complaint"], rng).to_string();
        let cc_templates = self.cc_bank.templates_for(&cc_gold);
        let cc_text = cc_templates[rng.random_range(0..cc_templates.len())].to_string();
        let mut sdoh_gold = BTreeMap::new();
        let mut sdoh_texts = BTreeMap::new();
        for (kind, bank) in &self.sdoh_banks {
            let gold = draw(&self.marginals[kind], rng).to_string();
            let templates = bank.templates_for(&gold);
            let t = templates[rng.random_range(0..templates.len())];
            sdoh_gold.insert(kind.clone(), gold);
            sdoh_texts.insert(kind.clone(), t.to_string());
        }
        (cc_gold, cc_text, sdoh_gold, sdoh_texts)
    }

    fn visit(&self, rng: &mut ChaCha8Rng) -> VisitDraw {
        let arrival = self.arrival(rng);
        let esi_level: u8 = draw(&self.marginals["esi_level"], rng).parse().unwrap();
        let visits_past = sample_visits_past_2_months(rng);
        let (cc_gold, cc_text, sdoh_gold, sdoh_texts) = self.texts(rng);
        let vitals = self.vitals(rng, arrival);
        VisitDraw {
            arrival,
            esi_level,
            visits_past_2_months: visits_past,
            cc_gold,
            cc_text,
            sdoh_gold,
            sdoh_texts,
            vitals,
        }
    }
}

/// Evaluate one label-model term against a drawn visit.
fn term_value(key: &str, draw: &VisitDraw, age_years: u32) -> Result<f64, CohortError> {
    if let Some((feature, category)) = key.split_once('=') {
        let actual = match feature {
            "chief_complaint" => Some(draw.cc_gold.as_str()),
            k if draw.sdoh_gold.contains_key(k) => Some(draw.sdoh_gold[k].as_str()),
            _ => None,
        };
        return match actual {
            Some(a) => Ok(f64::from(a == category)),
            None => Err(CohortError::InvalidSpec(format!(
                "label coefficient on unknown categorical {feature}"
            ))),
        };
    }
    match key {
        "visits_past_2_months" => Ok(draw.visits_past_2_months as f64),
        "esi_level" => Ok(draw.esi_level as f64),
        "hour_of_day" => Ok(chrono::Timelike::hour(&draw.arrival) as f64),
        "day_of_month" => Ok(draw.arrival.day() as f64),
        "month" => Ok(draw.arrival.month() as f64),
        "age_years" => Ok(age_years as f64),
        other => Err(CohortError::InvalidSpec(format!(
            "label coefficient on unknown feature {other}"
        ))),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Find the bias making the mean follow-up probability hit `target_mean`.
fn calibrate_bias(margins: &[f64], target_mean: f64) -> Result<f64, CohortError> {
    if !margins.iter().all(|m| m.is_finite()) {
        return Err(CohortError::Calibration("non-finite label margin".into()));
    }
    if target_mean <= 0.0 || target_mean >= 1.0 {
        return Err(CohortError::Calibration(format!(
            "required mean follow-up probability {target_mean:.4} is unreachable; \
             the target return rate must lie in (0, 0.5)"
        )));
    }
    let mean_p = |b: f64| margins.iter().map(|m| sigmoid(b + m)).sum::<f64>() / margins.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    if mean_p(lo) > target_mean || mean_p(hi) < target_mean {
        return Err(CohortError::Calibration(
            "bias search cannot bracket the target rate".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generate a deterministic synthetic cohort.
pub fn generate_cohort(spec: &CohortSpec) -> Result<GeneratedCohort, CohortError> {
    spec.validate()?;
    let marginals = spec.resolved_marginals()?;
    let sampler = Sampler::new(&marginals);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Draw every candidate patient up front: demographics plus index visit.
    // The label bias is then calibrated on the full margin sample before any
    // Bernoulli draw, so emission order never feeds back into calibration.
    struct Candidate {
        age_years: u32,
        demographics: [String; 6],
        index: VisitDraw,
        margin: f64,
    }
    let mut candidates = Vec::with_capacity(spec.n_visits);
    for _ in 0..spec.n_visits {
        let demographics = [
            draw(&marginals["gender"], &mut rng).to_string(),
            draw(&marginals["marital_status"], &mut rng).to_string(),
            draw(&marginals["race"], &mut rng).to_string(),
            draw(&marginals["ethnic_group"], &mut rng).to_string(),
            draw(&marginals["language"], &mut rng).to_string(),
            draw(&marginals["insurance"], &mut rng).to_string(),
        ];
        let band = draw(&marginals["age_band"], &mut rng);
        let (lo, hi) = tables::age_band_range(band);
        let age_years = rng.random_range(lo..=hi);
        let index = sampler.visit(&mut rng);
        let mut margin = 0.0;
        for (key, w) in &spec.label_coefficients {
            margin += w * term_value(key, &index, age_years)?;
        }
        candidates.push(Candidate {
            age_years,
            demographics,
            index,
            margin,
        });
    }

    // A returned index visit adds one follow-up row, so a realized visit
    // fraction r needs mean follow-up probability r/(1-r).
    let target_mean = spec.target_return_rate / (1.0 - spec.target_return_rate);
    let margins: Vec<f64> = candidates.iter().map(|c| c.margin).collect();
    let bias = calibrate_bias(&margins, target_mean)?;

    let mut visits = Vec::with_capacity(spec.n_visits);
    let mut gold = BTreeMap::new();
    let mut returns = 0usize;
    let mut icd_pool = tables::ICD_F_CODES;
    icd_pool.sort_unstable();

    let emit = |patient_id: &str,
                    visit_seq: usize,
                    age: u32,
                    demo: &[String; 6],
                    d: VisitDraw,
                    rng: &mut ChaCha8Rng,
                    visits: &mut Vec<VisitRecord>,
                    gold: &mut BTreeMap<String, GoldCategories>| {
        let visit_id = format!("{patient_id}-{visit_seq}");
        let icd = icd_pool[rng.random_range(0..icd_pool.len())];
        gold.insert(
            visit_id.clone(),
            GoldCategories {
                chief_complaint: d.cc_gold,
                sdoh: d.sdoh_gold,
            },
        );
        visits.push(VisitRecord {
            patient_id: patient_id.to_string(),
            visit_id,
            arrival: d.arrival,
            age_years: age,
            gender: demo[0].clone(),
            marital_status: demo[1].clone(),
            race: demo[2].clone(),
            ethnic_group: demo[3].clone(),
            language: demo[4].clone(),
            insurance: demo[5].clone(),
            esi_level: d.esi_level,
            icd_code: icd.to_string(),
            chief_complaint_text: d.cc_text,
            sdoh_texts: d.sdoh_texts,
            vitals_raw: d.vitals,
            visits_past_2_months: d.visits_past_2_months,
        });
    };

    for (i, c) in candidates.into_iter().enumerate() {
        if visits.len() >= spec.n_visits {
            break;
        }
        let patient_id = format!("P{i:06}");
        let p = sigmoid(bias + c.margin);
        let returning = rng.random::<f64>() < p;
        let index_arrival = c.index.arrival;
        emit(
            &patient_id,
            0,
            c.age_years,
            &c.demographics,
            c.index,
            &mut rng,
            &mut visits,
            &mut gold,
        );
        if returning && visits.len() < spec.n_visits {
            // Follow-up inside the window; visit-level fields are drawn
            // fresh so marginals stay calibrated over all emitted rows.
            let mut follow = sampler.visit(&mut rng);
            let offset_minutes = rng.random_range(60..=29 * 24 * 60);
            follow.arrival = index_arrival + Duration::minutes(offset_minutes);
            returns += 1;
            emit(
                &patient_id,
                1,
                c.age_years,
                &c.demographics,
                follow,
                &mut rng,
                &mut visits,
                &mut gold,
            );
        }
    }

    let realized = returns as f64 / visits.len() as f64;
    if spec.n_visits >= 20_000 && (realized - spec.target_return_rate).abs() > 0.01 {
        return Err(CohortError::Calibration(format!(
            "realized return rate {realized:.4} misses target {:.4}",
            spec.target_return_rate
        )));
    }
    Ok(GeneratedCohort {
        visits,
        gold,
        realized_return_rate: realized,
        bias,
    })
}
