//! Domain content shared by the corpus synthesizer and the dialog
//! environment: intents, keyword patterns, utterance templates and the slot
//! lexicon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder replaced by the slot value when a template is rendered.
pub const SLOT_PLACEHOLDER: &str = "{slot}";

/// An intent and the keyword sets that identify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSpec {
    pub name: String,
    /// Each inner list is one pattern; the intent matches when every keyword
    /// of any one pattern occurs in the text.
    pub patterns: Vec<Vec<String>>,
    /// Templates containing [`SLOT_PLACEHOLDER`] once.
    pub templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub intents: Vec<IntentSpec>,
    /// Slot values; multi-word values are space-separated.
    pub slots: Vec<String>,
    /// Utterances that no intent pattern should match.
    #[serde(default)]
    pub out_of_domain: Vec<String>,
}

impl Catalog {
    pub fn validate(&self) -> Result<()> {
        if self.intents.is_empty() || self.slots.is_empty() {
            return Err(Error::Config("catalog needs at least one intent and one slot".into()));
        }
        for intent in &self.intents {
            if intent.templates.is_empty() {
                return Err(Error::Config(format!("intent {} has no templates", intent.name)));
            }
            if intent.patterns.is_empty() || intent.patterns.iter().any(Vec::is_empty) {
                return Err(Error::Config(format!("intent {} has an empty pattern", intent.name)));
            }
            for t in &intent.templates {
                if t.matches(SLOT_PLACEHOLDER).count() != 1 {
                    return Err(Error::Config(format!("template {t:?} must contain {SLOT_PLACEHOLDER} exactly once")));
                }
            }
        }
        Ok(())
    }

    pub fn intent_names(&self) -> impl Iterator<Item = &str> {
        self.intents.iter().map(|i| i.name.as_str())
    }

    pub fn intent_index(&self, name: &str) -> Option<usize> {
        self.intents.iter().position(|i| i.name == name)
    }

    pub fn slot_index(&self, slot: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == slot)
    }

    /// Renders `template` with `slot`, returning lowercase tokens.
    pub fn render(template: &str, slot: &str) -> Vec<String> {
        template
            .replace(SLOT_PLACEHOLDER, slot)
            .split_whitespace()
            .map(str::to_lowercase)
            .collect()
    }

    /// Movie-domain catalog: 5 intents, 20 titles, 2-3 templates per intent.
    pub fn movies() -> Self {
        let intent = |name: &str, patterns: &[&[&str]], templates: &[&str]| IntentSpec {
            name: name.to_owned(),
            patterns: patterns
                .iter()
                .map(|p| p.iter().map(|s| (*s).to_owned()).collect())
                .collect(),
            templates: templates.iter().map(|s| (*s).to_owned()).collect(),
        };
        Catalog {
            intents: vec![
                intent(
                    "get_plot",
                    &[&["plot"], &["about"]],
                    &["tell me the plot of {slot}", "what is {slot} about", "give me the plot of {slot}"],
                ),
                intent(
                    "get_cast",
                    &[&["who", "stars"], &["cast"], &["actors"]],
                    &["who stars in {slot}", "show me the cast of {slot}", "which actors are in {slot}"],
                ),
                intent(
                    "get_rating",
                    &[&["rating"], &["rated"], &["good"]],
                    &["what is the rating of {slot}", "how is {slot} rated", "is {slot} any good"],
                ),
                intent(
                    "get_director",
                    &[&["directed"], &["director"]],
                    &["who directed {slot}", "who is the director of {slot}"],
                ),
                intent(
                    "get_showtimes",
                    &[&["playing"], &["showtimes"]],
                    &["when is {slot} playing", "find showtimes for {slot}", "where is {slot} playing tonight"],
                ),
            ],
            slots: [
                "inception",
                "avatar",
                "titanic",
                "frozen",
                "jaws",
                "alien",
                "gladiator",
                "casablanca",
                "vertigo",
                "psycho",
                "rocky",
                "up",
                "coco",
                "the matrix",
                "star wars",
                "toy story",
                "the godfather",
                "black panther",
                "finding nemo",
                "the dark knight",
            ]
            .iter()
            .map(|s| (*s).to_owned())
            .collect(),
            out_of_domain: ["how are you today", "play some music", "what time is it", "turn off the lights"]
                .iter()
                .map(|s| (*s).to_owned())
                .collect(),
        }
    }
}

/// Output of [`toy_nlu`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interpretation {
    pub intent: Option<String>,
    pub slot: Option<String>,
    pub ood: bool,
}

impl Interpretation {
    /// Exact intent and slot agreement.
    pub fn same_semantics(&self, other: &Interpretation) -> bool {
        self.intent == other.intent && self.slot == other.slot
    }
}

/// Keyword NLU: the intent of the first pattern whose keywords all occur in
/// `tokens`, the slot value with the most tokens occurring as a contiguous
/// span (earlier catalog entries win ties), out-of-domain when no pattern
/// matches.
pub fn toy_nlu<S: AsRef<str>>(tokens: &[S], catalog: &Catalog) -> Interpretation {
    let words: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let intent = catalog
        .intents
        .iter()
        .find(|i| i.patterns.iter().any(|p| p.iter().all(|k| words.contains(&k.as_str()))))
        .map(|i| i.name.clone());
    let mut slot: Option<(&str, usize)> = None;
    for value in &catalog.slots {
        let parts: Vec<&str> = value.split_whitespace().collect();
        if parts.is_empty() || parts.len() > words.len() {
            continue;
        }
        if words.windows(parts.len()).any(|w| w == parts.as_slice()) && slot.is_none_or(|(_, n)| parts.len() > n) {
            slot = Some((value, parts.len()));
        }
    }
    Interpretation {
        ood: intent.is_none(),
        intent,
        slot: slot.map(|(s, _)| s.to_owned()),
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Self::movies()
    }
}
