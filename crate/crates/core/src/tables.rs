//! Closed category sets and population calibration targets.
//!
//! Every categorical feature in the pipeline draws its legal values from
//! here, and the synthetic generator draws its marginal distributions from
//! the same place so that generated cohorts match the published population
//! mix. Percentages are stored as written and normalized on construction
//! (a few rows carry a ±0.01pp rounding residue).

use std::collections::BTreeMap;

/// A categorical probability table over a closed set of category names.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub feature: String,
    /// (category, probability) pairs, normalized to sum to 1.
    pub categories: Vec<(String, f64)>,
}

impl Marginal {
    /// Build from (category, weight) pairs, normalizing the weights.
    ///
    /// Weights must be non-negative with a positive sum.
    pub fn new(feature: &str, raw: &[(&str, f64)]) -> Self {
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        assert!(
            total > 0.0 && raw.iter().all(|(_, w)| *w >= 0.0),
            "invalid marginal for {feature}"
        );
        Marginal {
            feature: feature.to_string(),
            categories: raw
                .iter()
                .map(|(name, w)| (name.to_string(), w / total))
                .collect(),
        }
    }

    pub fn category_names(&self) -> Vec<&str> {
        self.categories.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn contains(&self, category: &str) -> bool {
        self.categories.iter().any(|(n, _)| n == category)
    }

    /// Probability of a category, zero when absent.
    pub fn probability(&self, category: &str) -> f64 {
        self.categories
            .iter()
            .find(|(n, _)| n == category)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    /// Sum of probabilities; 1 ± 1e-9 by construction.
    pub fn total(&self) -> f64 {
        self.categories.iter().map(|(_, p)| p).sum()
    }
}

/// Sentinel category used for unanswered or unmapped values.
pub const UNKNOWN: &str = "Unknown";

/// Patient-level categorical features (stable across visits of a patient).
pub const DEMOGRAPHIC_FEATURES: [&str; 6] = [
    "gender",
    "marital_status",
    "race",
    "ethnic_group",
    "language",
    "insurance",
];

/// The seven social-determinant note kinds carried on each visit.
pub const SDOH_KINDS: [&str; 7] = [
    "alcohol_use",
    "exercise",
    "home_environment",
    "nutrition_health",
    "sexual_orientation",
    "substance_abuse",
    "tobacco_use",
];

/// Display titles for SDoH kinds, used in classification reports.
pub fn sdoh_title(kind: &str) -> &'static str {
    match kind {
        "alcohol_use" => "Alcohol",
        "exercise" => "Exercise",
        "home_environment" => "Home Environment",
        "nutrition_health" => "Nutrition",
        "sexual_orientation" => "Sexual Orientation",
        "substance_abuse" => "Substance Abuse",
        "tobacco_use" => "Tobacco",
        other => panic!("unknown sdoh kind {other}"),
    }
}

/// The five chief-complaint classes.
pub const CHIEF_COMPLAINT_CLASSES: [&str; 5] =
    ["Infection", "Injury", "Pain", "Psychiatric", "Unclear"];

/// Vital-sign kinds carried as raw readings on a visit.
pub const VITAL_KINDS: [&str; 5] = [
    "systolic_bp",
    "diastolic_bp",
    "heart_rate",
    "temperature",
    "bmi",
];

/// Binned-category feature id for a vital kind.
pub fn vital_category_feature(kind: &str) -> String {
    format!("{kind}_category")
}

/// Default marginal distributions for every categorical feature the
/// generator samples, keyed by feature id.
pub fn default_marginals() -> BTreeMap<String, Marginal> {
    let specs: Vec<Marginal> = vec![
        Marginal::new("gender", &[("M", 55.06), ("F", 44.94)]),
        Marginal::new(
            "marital_status",
            &[
                ("Single", 63.07),
                ("Married", 17.79),
                ("Divorced", 9.78),
                ("Widowed", 3.89),
                ("Unknown", 3.17),
                ("Separated", 2.09),
                ("Life Partner", 0.21),
            ],
        ),
        Marginal::new(
            "race",
            &[
                ("White", 50.32),
                ("Black or African American", 45.57),
                ("Other", 2.38),
                ("Decline/Refuse", 1.25),
                ("Unknown", 0.48),
            ],
        ),
        Marginal::new(
            "ethnic_group",
            &[
                ("Non-Hispanic/Latino", 95.20),
                ("Unknown", 1.98),
                ("Not Reported", 1.69),
                ("Hispanic/Latino", 1.07),
                ("Multiple", 0.06),
            ],
        ),
        Marginal::new(
            "language",
            &[("English", 96.66), ("Other", 3.33), ("Sign Language", 0.01)],
        ),
        Marginal::new(
            "insurance",
            &[
                ("Government Insurance", 34.47),
                ("Self-Pay", 33.74),
                ("Private Insurance", 22.71),
                ("Other", 9.08),
            ],
        ),
        Marginal::new(
            "esi_level",
            &[
                ("3", 48.13),
                ("2", 27.68),
                ("4", 20.46),
                ("5", 2.93),
                ("1", 0.80),
            ],
        ),
        Marginal::new("is_weekend", &[("false", 73.30), ("true", 26.70)]),
        Marginal::new(
            "systolic_bp_category",
            &[
                ("Elevated", 37.92),
                ("Hypertension", 33.51),
                ("Normal", 28.14),
                ("Low", 0.44),
            ],
        ),
        Marginal::new(
            "diastolic_bp_category",
            &[
                ("Normal", 41.98),
                ("Elevated", 29.27),
                ("Hypertension", 24.36),
                ("Low", 4.40),
            ],
        ),
        Marginal::new(
            "temperature_category",
            &[
                ("Normal", 95.64),
                ("Fever", 2.98),
                ("Below Normal", 1.27),
                ("Hypothermia", 0.12),
            ],
        ),
        Marginal::new(
            "heart_rate_category",
            &[
                ("Normal", 83.10),
                ("Tachycardia", 14.62),
                ("Bradycardia", 2.28),
            ],
        ),
        Marginal::new(
            "age_band",
            &[
                ("31_45", 38.17),
                ("18_30", 26.46),
                ("46_60", 22.76),
                ("Over_60", 12.61),
            ],
        ),
        Marginal::new(
            "bmi_category",
            &[
                ("Normal Weight", 38.39),
                ("Overweight", 29.00),
                ("Obese", 28.86),
                ("Underweight", 3.75),
            ],
        ),
        Marginal::new(
            "chief_complaint",
            &[
                ("Pain", 45.82),
                ("Psychiatric", 36.25),
                ("Injury", 9.32),
                ("Infection", 8.15),
                ("Unclear", 0.46),
            ],
        ),
        Marginal::new(
            "tobacco_use",
            &[
                ("Current Use", 35.52),
                ("Unclear/Other", 34.07),
                ("No Use", 21.39),
                ("Former Use", 8.05),
                ("Occasional Use", 0.89),
                ("Prescribed Use", 0.08),
            ],
        ),
        Marginal::new(
            "nutrition_health",
            &[
                ("Unclear/Other", 79.64),
                ("Moderate Nutrition", 10.75),
                ("Good Nutrition", 4.51),
                ("Poor Nutrition", 2.73),
                ("Special Diet", 1.30),
                ("Assistance Required", 1.06),
            ],
        ),
        Marginal::new(
            "home_environment",
            &[
                ("Unclear/Other", 69.02),
                ("Independent", 16.12),
                ("Family Support", 8.83),
                ("Homeless", 3.21),
                ("Living with Friends", 1.66),
                ("Assisted Living", 0.75),
                ("Unstable Housing", 0.40),
            ],
        ),
        Marginal::new(
            "alcohol_use",
            &[
                ("Unclear/Other", 35.40),
                ("No Alcohol Use", 31.27),
                ("Current Alcohol Use", 17.39),
                ("Past Alcohol Use", 8.19),
                ("Occasional Use", 7.58),
                ("Recovering", 0.16),
            ],
        ),
        Marginal::new(
            "exercise",
            &[
                ("Unclear/Other", 60.35),
                ("No Exercise", 30.89),
                ("Light Exercise", 5.50),
                ("Moderate Exercise", 2.80),
                ("Vigorous Exercise", 0.39),
                ("Physical Therapy", 0.08),
            ],
        ),
        Marginal::new(
            "sexual_orientation",
            &[
                ("Unclear/Other", 91.89),
                ("Heterosexual", 5.57),
                ("Gender Non-Binary", 1.75),
                ("Homosexual", 0.43),
                ("Transgender", 0.17),
                ("Bisexual", 0.16),
                ("Asexual", 0.01),
                ("Queer/Other", 0.01),
            ],
        ),
        Marginal::new(
            "substance_abuse",
            &[
                ("No Use", 38.88),
                ("Unclear/Other", 33.48),
                ("Recreational Use", 10.59),
                ("Current Use", 10.23),
                ("Former Use", 5.74),
                ("Prescribed Use", 1.07),
            ],
        ),
    ];
    specs
        .into_iter()
        .map(|m| (m.feature.clone(), m))
        .collect()
}

/// Label set for an extraction task feature (chief complaint or SDoH kind).
pub fn label_set(feature: &str) -> Vec<String> {
    if feature == "chief_complaint" {
        return CHIEF_COMPLAINT_CLASSES.iter().map(|s| s.to_string()).collect();
    }
    default_marginals()
        .get(feature)
        .map(|m| m.categories.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_else(|| panic!("no label set for feature {feature}"))
}

/// Value range each vital-sign bin is synthesized from. The generator draws
/// a bin from the marginal and then a value inside these bounds, so binning
/// the generated value recovers the drawn bin.
pub fn vital_bin_range(kind: &str, category: &str) -> (f64, f64) {
    match (kind, category) {
        ("systolic_bp", "Low") => (75.0, 89.0),
        ("systolic_bp", "Normal") => (91.0, 119.0),
        ("systolic_bp", "Elevated") => (120.5, 129.5),
        ("systolic_bp", "Hypertension") => (131.0, 185.0),
        ("diastolic_bp", "Low") => (40.0, 59.0),
        ("diastolic_bp", "Normal") => (61.0, 79.0),
        ("diastolic_bp", "Elevated") => (80.5, 89.5),
        ("diastolic_bp", "Hypertension") => (90.5, 118.0),
        ("heart_rate", "Bradycardia") => (38.0, 59.0),
        ("heart_rate", "Normal") => (61.0, 99.0),
        ("heart_rate", "Tachycardia") => (101.0, 155.0),
        ("temperature", "Hypothermia") => (32.5, 34.8),
        ("temperature", "Below Normal") => (35.1, 36.0),
        ("temperature", "Normal") => (36.2, 37.9),
        ("temperature", "Fever") => (38.2, 40.5),
        ("bmi", "Underweight") => (14.5, 18.3),
        ("bmi", "Normal Weight") => (18.7, 24.8),
        ("bmi", "Overweight") => (25.2, 29.8),
        ("bmi", "Obese") => (30.2, 52.0),
        _ => panic!("no synthesis range for {kind}/{category}"),
    }
}

/// Age range (inclusive) each age band is synthesized from.
pub fn age_band_range(band: &str) -> (u32, u32) {
    match band {
        "18_30" => (18, 30),
        "31_45" => (31, 45),
        "46_60" => (46, 60),
        "Over_60" => (61, 90),
        other => panic!("unknown age band {other}"),
    }
}

/// Mental/behavioral ICD-10 codes the generator samples from.
pub const ICD_F_CODES: [&str; 10] = [
    "F32.9", "F41.9", "F10.20", "F20.9", "F31.9", "F43.10", "F11.20", "F60.3", "F33.1", "F29",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_normalized() {
        for (name, m) in default_marginals() {
            assert!(
                (m.total() - 1.0).abs() < 1e-9,
                "{name} sums to {}",
                m.total()
            );
        }
    }

    #[test]
    fn sdoh_kinds_have_marginals_and_titles() {
        let marginals = default_marginals();
        for kind in SDOH_KINDS {
            assert!(marginals.contains_key(kind), "missing marginal for {kind}");
            assert!(!sdoh_title(kind).is_empty());
        }
    }

    #[test]
    fn vital_ranges_stay_inside_their_bins() {
        // Spot checks against the binning cutoffs used in harmonize.
        let (lo, hi) = vital_bin_range("bmi", "Obese");
        assert!(lo >= 30.0 && hi > lo);
        let (lo, hi) = vital_bin_range("heart_rate", "Normal");
        assert!(lo >= 60.0 && hi <= 100.0);
        let (lo, hi) = vital_bin_range("temperature", "Normal");
        assert!(lo > 36.1 && hi <= 38.0);
    }
}
