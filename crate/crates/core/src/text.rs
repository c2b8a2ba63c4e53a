//! Category-tagged free-text template banks.
//!
//! The synthetic generator draws visit free text from these banks, and the
//! extraction fixtures reuse them so every text carries a known gold label.
//! A handful of templates per category are deliberately worded so that the
//! keyword fallback classifier misroutes them; that keeps fixture accuracy
//! realistically below 1.0.

#[derive(Debug, Clone, Copy)]
pub struct CategoryTemplates {
    pub label: &'static str,
    pub templates: &'static [&'static str],
}

#[derive(Debug, Clone)]
pub struct TemplateBank {
    /// Feature id: `chief_complaint` or an SDoH kind.
    pub feature: &'static str,
    pub categories: Vec<CategoryTemplates>,
}

impl TemplateBank {
    pub fn labels(&self) -> Vec<&'static str> {
        self.categories.iter().map(|c| c.label).collect()
    }

    pub fn templates_for(&self, label: &str) -> &'static [&'static str] {
        self.categories
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.templates)
            .unwrap_or_else(|| panic!("no templates for {}/{label}", self.feature))
    }
}

pub fn chief_complaint_bank() -> TemplateBank {
    TemplateBank {
        feature: "chief_complaint",
        categories: vec![
            CategoryTemplates {
                label: "Pain",
                templates: &[
                    "severe lower back pain for three days",
                    "chest pain radiating to the left arm",
                    "throbbing headache since yesterday",
                    "abdominal cramping and nausea",
                    "migraine not relieved by home medication",
                    "sharp flank pain, worse with movement",
                    "toothache with facial swelling",
                    "generalized body aches and fatigue",
                    "chronic knee pain flaring overnight",
                    "neck pain after sleeping wrong",
                    "epigastric pain after meals",
                    "stomach upset and fever overnight",
                ],
            },
            CategoryTemplates {
                label: "Psychiatric",
                templates: &[
                    "suicidal ideation with plan",
                    "hearing voices, command type",
                    "worsening depression, unable to cope",
                    "panic attack, heart racing",
                    "acute anxiety with hyperventilation",
                    "manic episode, no sleep for four days",
                    "intentional overdose of sleeping pills",
                    "psychotic break, paranoid behavior",
                    "self-harm with superficial cuts to forearm",
                    "ptsd flashbacks after recent trauma",
                    "feeling hopeless and withdrawn",
                    "brought in by family, not acting right",
                ],
            },
            CategoryTemplates {
                label: "Injury",
                templates: &[
                    "fell off ladder, wrist deformity",
                    "laceration to forehead from a fall",
                    "ankle sprain playing basketball",
                    "mvc, restrained driver, neck strain",
                    "crush injury to finger from car door",
                    "burn to hand from hot grease",
                    "assault with facial bruising",
                    "suspected fracture of the left arm",
                    "dog bite to lower leg",
                    "twisted knee, now swollen and sore",
                ],
            },
            CategoryTemplates {
                label: "Infection",
                templates: &[
                    "fever and productive cough",
                    "uti symptoms with burning urination",
                    "red swollen leg, suspect cellulitis",
                    "sore throat and swollen glands",
                    "draining abscess on the back",
                    "flu-like symptoms with chills",
                    "possible pneumonia, short of breath with fever",
                    "surgical site infection with purulent drainage",
                    "earache with fever since evening",
                    "run down and achy after travel",
                ],
            },
            CategoryTemplates {
                label: "Unclear",
                templates: &[
                    "requests evaluation",
                    "feeling unwell today",
                    "multiple vague complaints",
                    "follow-up of recent visit",
                    "medication refill request",
                    "states everything hurts",
                ],
            },
        ],
    }
}

pub fn sdoh_bank(kind: &str) -> TemplateBank {
    let categories = match kind {
        "alcohol_use" => vec![
            CategoryTemplates {
                label: "Unclear/Other",
                templates: &[
                    "alcohol history not obtained",
                    "unable to assess intake today",
                    "chart silent on drinking habits",
                    "patient declined the substance interview",
                    "documentation incomplete for this domain",
                ],
            },
            CategoryTemplates {
                label: "No Alcohol Use",
                templates: &[
                    "denies etoh",
                    "denies alcohol use entirely",
                    "does not drink, never has",
                    "no alcohol consumption reported",
                    "abstains completely, says bars are not for them",
                ],
            },
            CategoryTemplates {
                label: "Current Alcohol Use",
                templates: &[
                    "drinks daily, roughly a six pack of beer",
                    "admits heavy etoh use most evenings",
                    "intoxicated on arrival, strong odor",
                    "ongoing alcohol use, about a pint of vodka per day",
                    "drinks heavily on most weekends",
                ],
            },
            CategoryTemplates {
                label: "Past Alcohol Use",
                templates: &[
                    "quit drinking two years ago",
                    "former drinker, stopped after rehab",
                    "past alcohol use, none since the divorce",
                    "stopped drinking when the ulcer was found",
                ],
            },
            CategoryTemplates {
                label: "Occasional Use",
                templates: &[
                    "social drinker, a glass of wine with dinner",
                    "occasional drink at family events",
                    "drinks socially once or twice a month",
                    "a rare nightcap now and then",
                ],
            },
            CategoryTemplates {
                label: "Recovering",
                templates: &[
                    "in recovery, attends aa meetings weekly",
                    "recovering, eight months sober",
                    "sober for a year and counting",
                    "active in a recovery program",
                ],
            },
        ],
        "tobacco_use" => vec![
            CategoryTemplates {
                label: "Current Use",
                templates: &[
                    "smokes one pack per day",
                    "current smoker for the last ten years",
                    "about ten cigarettes daily per triage note",
                    "vapes daily, recently more",
                    "daily use of chew and dip since high school",
                ],
            },
            CategoryTemplates {
                label: "Former Use",
                templates: &[
                    "quit smoking five years ago",
                    "former smoker, stopped after pneumonia",
                    "ex-smoker since last spring",
                    "quit tobacco for good last year",
                ],
            },
            CategoryTemplates {
                label: "No Use",
                templates: &[
                    "denies tobacco use",
                    "never smoked",
                    "nonsmoker per intake form",
                    "no tobacco products at all",
                ],
            },
            CategoryTemplates {
                label: "Occasional Use",
                templates: &[
                    "social smoker on nights out",
                    "occasional cigarette with coffee",
                    "smokes socially, a few per month",
                    "lights up only at the casino",
                ],
            },
            CategoryTemplates {
                label: "Prescribed Use",
                templates: &[
                    "nicotine patch prescribed for cessation",
                    "on varenicline from primary care",
                    "using nicotine replacement gum",
                ],
            },
            CategoryTemplates {
                label: "Unclear/Other",
                templates: &[
                    "tobacco history not documented",
                    "status unknown at intake",
                    "unable to assess exposure",
                    "deferred, patient nonverbal",
                ],
            },
        ],
        "substance_abuse" => vec![
            CategoryTemplates {
                label: "No Use",
                templates: &[
                    "denies drug use",
                    "no illicit substance use",
                    "denies substance use of any kind",
                    "never used street drugs",
                    "no drug use per patient and family",
                ],
            },
            CategoryTemplates {
                label: "Unclear/Other",
                templates: &[
                    "substance history deferred",
                    "screening not completed",
                    "patient too sedated to ask",
                    "no reliable history available",
                    "conflicting reports from family",
                ],
            },
            CategoryTemplates {
                label: "Recreational Use",
                templates: &[
                    "recreational marijuana on weekends",
                    "party use of stimulants, rare",
                    "occasional marijuana at concerts",
                    "smokes a joint now and then with friends",
                ],
            },
            CategoryTemplates {
                label: "Current Use",
                templates: &[
                    "daily marijuana use, heavy",
                    "active methamphetamine use",
                    "iv drug use, last used yesterday",
                    "uses whatever is around, per roommate",
                ],
            },
            CategoryTemplates {
                label: "Former Use",
                templates: &[
                    "former use of opioids, clean since 2019",
                    "quit using meth three years ago",
                    "heroin use in remission",
                    "no longer uses, per counselor",
                ],
            },
            CategoryTemplates {
                label: "Prescribed Use",
                templates: &[
                    "prescribed suboxone, compliant",
                    "in a methadone program",
                    "medical marijuana card on file",
                ],
            },
        ],
        "exercise" => vec![
            CategoryTemplates {
                label: "Unclear/Other",
                templates: &[
                    "activity level not discussed",
                    "exercise habits unknown",
                    "no information on activity",
                    "intake form left blank",
                ],
            },
            CategoryTemplates {
                label: "No Exercise",
                templates: &[
                    "sedentary lifestyle",
                    "does not exercise at all",
                    "no exercise, watches tv most days",
                    "mostly in bed lately",
                    "spends the day on the couch, winded on one flight of stairs",
                ],
            },
            CategoryTemplates {
                label: "Light Exercise",
                templates: &[
                    "walks the dog most mornings",
                    "light exercise, some stretching",
                    "does yoga once a week",
                    "putters in the garden when weather allows",
                ],
            },
            CategoryTemplates {
                label: "Moderate Exercise",
                templates: &[
                    "jogs a few times a week",
                    "goes to the gym twice weekly",
                    "bikes to work in summer",
                    "chases two toddlers around all day",
                ],
            },
            CategoryTemplates {
                label: "Vigorous Exercise",
                templates: &[
                    "runs daily, training for a marathon",
                    "crossfit four times a week",
                    "vigorous workouts most days",
                    "plays pickup basketball hard, five days a week",
                ],
            },
            CategoryTemplates {
                label: "Physical Therapy",
                templates: &[
                    "physical therapy after knee surgery",
                    "attends pt sessions twice a week",
                    "home physical therapy program",
                ],
            },
        ],
        "home_environment" => vec![
            CategoryTemplates {
                label: "Unclear/Other",
                templates: &[
                    "housing situation not assessed",
                    "no housing information in chart",
                    "declined to discuss living situation",
                    "unknown living arrangement",
                ],
            },
            CategoryTemplates {
                label: "Independent",
                templates: &[
                    "lives alone in own apartment",
                    "independent living, no services",
                    "owns home, manages well",
                    "keeps a small place downtown, no help needed",
                    "rents a studio by the hospital",
                ],
            },
            CategoryTemplates {
                label: "Family Support",
                templates: &[
                    "lives with family nearby",
                    "stays with parents for now",
                    "family support at home, lives with spouse",
                    "a relative checks in every day",
                ],
            },
            CategoryTemplates {
                label: "Homeless",
                templates: &[
                    "homeless, sleeping outside",
                    "staying at the downtown shelter",
                    "on the street since march",
                    "homeless after the fire",
                ],
            },
            CategoryTemplates {
                label: "Living with Friends",
                templates: &[
                    "staying with a friend this month",
                    "at a friend's place temporarily",
                    "living with friends across town",
                ],
            },
            CategoryTemplates {
                label: "Assisted Living",
                templates: &[
                    "resides in assisted living",
                    "group home resident",
                    "transferred from a nursing facility",
                ],
            },
            CategoryTemplates {
                label: "Unstable Housing",
                templates: &[
                    "unstable housing, couch surfing",
                    "facing eviction this month",
                    "about to lose the lease",
                ],
            },
        ],
        "nutrition_health" => vec![
            CategoryTemplates {
                label: "Unclear/Other",
                templates: &[
                    "diet not reviewed",
                    "nutrition status unknown",
                    "no dietary history taken",
                    "intake interview skipped",
                ],
            },
            CategoryTemplates {
                label: "Moderate Nutrition",
                templates: &[
                    "fair diet, fast food a few times weekly",
                    "moderate nutrition overall",
                    "could eat better, admits to snacking",
                    "regular meals but heavy on takeout",
                ],
            },
            CategoryTemplates {
                label: "Good Nutrition",
                templates: &[
                    "eats well, balanced diet",
                    "good nutrition, cooks at home",
                    "three meals daily with vegetables",
                    "no concerns raised about food",
                ],
            },
            CategoryTemplates {
                label: "Poor Nutrition",
                templates: &[
                    "poor nutrition, skips meals often",
                    "food insecurity reported",
                    "appears malnourished",
                    "eats one meal a day at most",
                ],
            },
            CategoryTemplates {
                label: "Special Diet",
                templates: &[
                    "renal diet prescribed",
                    "gluten free for celiac disease",
                    "on a diabetic diet",
                ],
            },
            CategoryTemplates {
                label: "Assistance Required",
                templates: &[
                    "receives meals on wheels",
                    "needs help with meals daily",
                    "feeding assistance required",
                ],
            },
        ],
        "sexual_orientation" => vec![
            CategoryTemplates {
                label: "Unclear/Other",
                templates: &[
                    "orientation not documented",
                    "declined to answer",
                    "not discussed during intake",
                    "field left blank",
                ],
            },
            CategoryTemplates {
                label: "Heterosexual",
                templates: &[
                    "identifies as heterosexual",
                    "straight, married ten years",
                    "heterosexual per intake form",
                ],
            },
            CategoryTemplates {
                label: "Gender Non-Binary",
                templates: &[
                    "identifies as non-binary",
                    "nonbinary, uses they/them",
                    "genderqueer identity noted",
                ],
            },
            CategoryTemplates {
                label: "Homosexual",
                templates: &[
                    "identifies as gay",
                    "lesbian, partnered",
                    "homosexual per self-report",
                ],
            },
            CategoryTemplates {
                label: "Transgender",
                templates: &[
                    "transgender man",
                    "trans woman, on hormone therapy",
                    "identifies as transgender",
                ],
            },
            CategoryTemplates {
                label: "Bisexual",
                templates: &["identifies as bisexual", "bisexual orientation reported"],
            },
            CategoryTemplates {
                label: "Asexual",
                templates: &["identifies as asexual", "asexual per self-report"],
            },
            CategoryTemplates {
                label: "Queer/Other",
                templates: &["prefers not to label it", "identifies as queer"],
            },
        ],
        other => panic!("unknown sdoh kind {other}"),
    };
    // Template labels must stay in lockstep with the closed category sets.
    TemplateBank {
        feature: match kind {
            "alcohol_use" => "alcohol_use",
            "tobacco_use" => "tobacco_use",
            "substance_abuse" => "substance_abuse",
            "exercise" => "exercise",
            "home_environment" => "home_environment",
            "nutrition_health" => "nutrition_health",
            "sexual_orientation" => "sexual_orientation",
            _ => unreachable!(),
        },
        categories,
    }
}

/// Bank lookup by feature id.
pub fn bank_for(feature: &str) -> TemplateBank {
    if feature == "chief_complaint" {
        chief_complaint_bank()
    } else {
        sdoh_bank(feature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables;

    #[test]
    fn banks_cover_exactly_the_closed_sets() {
        for feature in std::iter::once("chief_complaint").chain(tables::SDOH_KINDS) {
            let bank = bank_for(feature);
            let mut bank_labels = bank.labels();
            bank_labels.sort_unstable();
            let mut expected = tables::label_set(feature);
            expected.sort_unstable();
            assert_eq!(
                bank_labels,
                expected.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
                "label mismatch for {feature}"
            );
        }
    }

    #[test]
    fn every_category_has_templates() {
        for feature in std::iter::once("chief_complaint").chain(tables::SDOH_KINDS) {
            for cat in bank_for(feature).categories {
                assert!(!cat.templates.is_empty(), "{feature}/{}", cat.label);
            }
        }
    }
}
