//! Maps free-form subgoal names onto the canonical subgoals.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::keyroom::{PICKUP_SUBGOAL, UNLOCK_SUBGOAL};

/// A name matches when it contains `anchor` together with any of `with_any`,
/// or contains any of `phrases`. Matching is on the lowercased name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconRule {
    pub canonical: String,
    pub anchor: String,
    pub with_any: Vec<String>,
    pub phrases: Vec<String>,
}

impl LexiconRule {
    pub fn matches(&self, name: &str) -> bool {
        let name = name.to_lowercase();
        (name.contains(&self.anchor) && self.with_any.iter().any(|w| name.contains(w.as_str())))
            || self.phrases.iter().any(|p| name.contains(p.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalLexicon {
    pub rules: Vec<LexiconRule>,
}

fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl Default for CanonicalLexicon {
    fn default() -> Self {
        Self {
            rules: vec![
                LexiconRule {
                    canonical: PICKUP_SUBGOAL.into(),
                    anchor: "key".into(),
                    with_any: strings(&["pick", "collect", "get", "grab"]),
                    phrases: strings(&["key pickup"]),
                },
                LexiconRule {
                    canonical: UNLOCK_SUBGOAL.into(),
                    anchor: "door".into(),
                    with_any: strings(&["unlock", "open"]),
                    phrases: strings(&["unlock"]),
                },
            ],
        }
    }
}

impl CanonicalLexicon {
    /// Canonical names the lexicon maps a single reported name onto.
    pub fn classify<'a>(&'a self, name: &str) -> impl Iterator<Item = &'a str> + 'a {
        let name = name.to_owned();
        self.rules.iter().filter(move |r| r.matches(&name)).map(|r| r.canonical.as_str())
    }
}

/// Every canonical key is present; it is true iff some matching reported
/// subgoal is true.
pub fn match_canonical(flags: &IndexMap<String, bool>, lexicon: &CanonicalLexicon) -> IndexMap<String, bool> {
    lexicon
        .rules
        .iter()
        .map(|rule| {
            let hit = flags.iter().any(|(name, &v)| v && rule.matches(name));
            (rule.canonical.clone(), hit)
        })
        .collect()
}
