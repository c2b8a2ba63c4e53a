//! Deterministic keyword fallback classifier.
//!
//! Tiers are checked in priority order; the first tier with a keyword
//! contained in the lowercased text wins. Texts matching nothing land in
//! the task's unclear category.

use super::Task;

type Tier = (&'static str, &'static [&'static str]);

const CHIEF_COMPLAINT_TIERS: &[Tier] = &[
    (
        "Psychiatric",
        &[
            "suicid", "psych", "anxiety", "depress", "hallucinat", "voices", "overdose",
            "self-harm", "bipolar", "manic", "panic", "ptsd", "paranoi", "hopeless",
        ],
    ),
    (
        "Injury",
        &[
            "fracture", "laceration", "fell", "fall", "injury", "mvc", "collision", "wound",
            "sprain", "stab", "gunshot", "burn", "deformity", "assault", "bite", "crush",
        ],
    ),
    (
        "Infection",
        &[
            "fever", "infection", "infected", "cough", "uti", "cellulitis", "abscess",
            "pneumonia", "flu", "chills", "sepsis", "sore throat", "purulent",
        ],
    ),
    (
        "Pain",
        &[
            "pain", "ache", "achy", "headache", "cramp", "migraine", "sore", "burning",
            "tender", "hurts",
        ],
    ),
];

const ALCOHOL_TIERS: &[Tier] = &[
    ("Recovering", &["recovery", "recovering", "sober", "aa meetings"]),
    (
        "Past Alcohol Use",
        &["quit drinking", "past alcohol", "stopped drinking", "former drinker"],
    ),
    (
        "No Alcohol Use",
        &["denies alcohol", "denies etoh", "no alcohol", "does not drink", "nondrinker"],
    ),
    (
        "Occasional Use",
        &["occasional drink", "social drinker", "drinks socially", "wine with dinner"],
    ),
    (
        "Current Alcohol Use",
        &["drinks daily", "etoh", "alcohol use", "beer", "vodka", "drinks heavily", "intoxicated"],
    ),
];

const TOBACCO_TIERS: &[Tier] = &[
    (
        "Former Use",
        &["quit smoking", "former smoker", "ex-smoker", "quit tobacco"],
    ),
    (
        "Prescribed Use",
        &["nicotine patch", "varenicline", "nicotine replacement", "prescribed"],
    ),
    (
        "Occasional Use",
        &["social smoker", "occasional cigarette", "smokes socially"],
    ),
    (
        "No Use",
        &["denies tobacco", "never smoked", "nonsmoker", "no tobacco"],
    ),
    (
        "Current Use",
        &["smokes", "smoker", "cigarette", "vapes", "chewing tobacco", "pack per day"],
    ),
];

const SUBSTANCE_TIERS: &[Tier] = &[
    (
        "Former Use",
        &["former use", "quit using", "clean since", "in remission", "no longer uses"],
    ),
    (
        "Prescribed Use",
        &["prescribed", "suboxone", "methadone", "medical marijuana"],
    ),
    (
        "Recreational Use",
        &["recreational", "party use", "occasional marijuana"],
    ),
    (
        "No Use",
        &["denies drug", "denies substance", "no illicit", "no drug use", "never used"],
    ),
    (
        "Current Use",
        &["daily marijuana", "methamphetamine", "cocaine", "heroin", "iv drug", "fentanyl", "uses daily"],
    ),
];

const EXERCISE_TIERS: &[Tier] = &[
    ("Physical Therapy", &["physical therapy", "pt sessions"]),
    ("Vigorous Exercise", &["runs daily", "marathon", "crossfit", "vigorous"]),
    (
        "Moderate Exercise",
        &["jogs", "gym twice", "moderate exercise", "bikes to work", "swims"],
    ),
    ("Light Exercise", &["walks", "light exercise", "stretching", "yoga"]),
    (
        "No Exercise",
        &["no exercise", "sedentary", "does not exercise", "mostly in bed"],
    ),
];

const HOME_TIERS: &[Tier] = &[
    ("Homeless", &["homeless", "shelter", "sleeping outside", "on the street"]),
    (
        "Unstable Housing",
        &["unstable housing", "couch surfing", "eviction", "about to lose"],
    ),
    (
        "Assisted Living",
        &["assisted living", "group home", "nursing facility"],
    ),
    (
        "Living with Friends",
        &["with friends", "friend's place", "with a friend"],
    ),
    (
        "Family Support",
        &["with family", "lives with spouse", "with parents", "family support"],
    ),
    (
        "Independent",
        &["lives alone", "independent", "own apartment", "owns home"],
    ),
];

const NUTRITION_TIERS: &[Tier] = &[
    (
        "Assistance Required",
        &["meal assistance", "feeding assistance", "meals on wheels", "needs help with meals"],
    ),
    ("Special Diet", &["special diet", "renal diet", "diabetic diet", "gluten"]),
    (
        "Poor Nutrition",
        &["poor nutrition", "skips meals", "food insecurity", "malnourish", "one meal a day"],
    ),
    (
        "Good Nutrition",
        &["good nutrition", "balanced diet", "eats well", "three meals"],
    ),
    (
        "Moderate Nutrition",
        &["moderate nutrition", "fair diet", "could eat better", "fast food a few"],
    ),
];

const ORIENTATION_TIERS: &[Tier] = &[
    ("Gender Non-Binary", &["non-binary", "nonbinary", "genderqueer"]),
    ("Transgender", &["transgender", "trans man", "trans woman"]),
    ("Bisexual", &["bisexual"]),
    ("Asexual", &["asexual"]),
    ("Homosexual", &["homosexual", "gay", "lesbian"]),
    ("Queer/Other", &["queer"]),
    ("Heterosexual", &["heterosexual", "straight"]),
];

fn tiers_for(task: &Task) -> (&'static [Tier], &'static str) {
    match task {
        Task::ChiefComplaint => (CHIEF_COMPLAINT_TIERS, "Unclear"),
        Task::Sdoh(kind) => match kind.as_str() {
            "alcohol_use" => (ALCOHOL_TIERS, "Unclear/Other"),
            "tobacco_use" => (TOBACCO_TIERS, "Unclear/Other"),
            "substance_abuse" => (SUBSTANCE_TIERS, "Unclear/Other"),
            "exercise" => (EXERCISE_TIERS, "Unclear/Other"),
            "home_environment" => (HOME_TIERS, "Unclear/Other"),
            "nutrition_health" => (NUTRITION_TIERS, "Unclear/Other"),
            "sexual_orientation" => (ORIENTATION_TIERS, "Unclear/Other"),
            other => panic!("no rule table for sdoh kind {other}"),
        },
    }
}

/// Classify without any model: first matching priority tier wins.
pub fn rule_fallback_classify(task: &Task, text: &str) -> String {
    let lower = text.to_lowercase();
    let (tiers, default) = tiers_for(task);
    for (label, keywords) in tiers {
        if keywords.iter().any(|k| lower.contains(k)) {
            return label.to_string();
        }
    }
    default.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_keywords_route_to_their_class() {
        let cc = Task::ChiefComplaint;
        assert_eq!(rule_fallback_classify(&cc, "suicidal ideation"), "Psychiatric");
        assert_eq!(
            rule_fallback_classify(&cc, "fever and productive cough"),
            "Infection"
        );
        assert_eq!(
            rule_fallback_classify(&cc, "fell off ladder, wrist deformity"),
            "Injury"
        );
        assert_eq!(rule_fallback_classify(&cc, "dull flank pain"), "Pain");
        assert_eq!(rule_fallback_classify(&cc, "here for paperwork"), "Unclear");
    }

    #[test]
    fn psychiatric_outranks_pain() {
        // Matches both the Pain tier ("pain") and the Psychiatric tier
        // ("anxiety"); the higher-priority tier must win.
        assert_eq!(
            rule_fallback_classify(&Task::ChiefComplaint, "chest pain with severe anxiety"),
            "Psychiatric"
        );
    }

    #[test]
    fn infection_phrases_beat_pain_substrings() {
        assert_eq!(
            rule_fallback_classify(&Task::ChiefComplaint, "sore throat and swollen glands"),
            "Infection"
        );
    }

    #[test]
    fn sdoh_examples() {
        let alcohol = Task::Sdoh("alcohol_use".into());
        assert_eq!(rule_fallback_classify(&alcohol, "denies etoh"), "No Alcohol Use");
        assert_eq!(
            rule_fallback_classify(&alcohol, "admits heavy etoh use most evenings"),
            "Current Alcohol Use"
        );
        let home = Task::Sdoh("home_environment".into());
        assert_eq!(
            rule_fallback_classify(&home, "staying at the downtown shelter"),
            "Homeless"
        );
        assert_eq!(
            rule_fallback_classify(&home, "no mention of housing"),
            "Unclear/Other"
        );
    }

    #[test]
    fn case_insensitive() {
        assert_eq!(
            rule_fallback_classify(&Task::ChiefComplaint, "FEVER AND CHILLS"),
            "Infection"
        );
    }
}
