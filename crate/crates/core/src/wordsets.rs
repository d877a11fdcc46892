//! Word-list schema for social categories and its resolution against a vocabulary.
//!
//! A category file is a JSON object:
//!
//! ```json
//! {
//!   "name": "gender",
//!   "defining_sets": [["he", "she"], ["man", "woman"]],
//!   "equality_sets": [["he", "she"]],
//!   "target_words": [["he"], ["she"]],
//!   "attribute_sets": [["nurse", "homemaker"], ["engineer", "captain"]]
//! }
//! ```
//!
//! Only `name` and `defining_sets` are required.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    pub defining_sets: Vec<Vec<String>>,
    #[serde(default)]
    pub equality_sets: Vec<Vec<String>>,
    #[serde(default)]
    pub target_words: Vec<Vec<String>>,
    #[serde(default)]
    pub attribute_sets: Vec<Vec<String>>,
}

impl CategorySpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: CategorySpec =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    /// Structural checks that do not need a vocabulary.
    pub fn check(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Schema("'name' must be nonempty".into()));
        }
        if self.name.chars().any(char::is_whitespace) {
            return Err(Error::Schema(format!(
                "category name '{}' may not contain whitespace",
                self.name
            )));
        }
        if self.defining_sets.is_empty() {
            return Err(Error::Schema(format!(
                "'{}': 'defining_sets' must contain at least one set",
                self.name
            )));
        }
        for (i, set) in self.defining_sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::EmptySet(format!(
                    "'{}': defining set {i} is empty",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Every word in a defining or equality set.
    pub fn gendered_words(&self) -> impl Iterator<Item = &String> {
        self.defining_sets
            .iter()
            .chain(&self.equality_sets)
            .flatten()
    }
}

pub fn load_category_spec(path: impl AsRef<Path>) -> Result<CategorySpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CategorySpec::from_json(&text).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Names of the lexicons compiled into the library.
pub const BUNDLED: &[&str] = &["gender", "race", "religion", "race_gender_intersectional"];

pub fn bundled(name: &str) -> Option<CategorySpec> {
    let text = match name {
        "gender" => include_str!("../data/gender.json"),
        "race" => include_str!("../data/race.json"),
        "religion" => include_str!("../data/religion.json"),
        "race_gender_intersectional" => include_str!("../data/race_gender_intersectional.json"),
        _ => return None,
    };
    Some(CategorySpec::from_json(text).expect("bundled lexicon is valid"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Defining,
    Equality,
    Target,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetResolution {
    pub kind: SetKind,
    pub index: usize,
    pub requested: usize,
    pub resolved: usize,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub category: String,
    pub sets: Vec<SetResolution>,
    /// True iff some defining set resolved to no words.
    pub fatal: bool,
}

impl ValidationReport {
    pub fn missing_total(&self) -> usize {
        self.sets.iter().map(|s| s.missing.len()).sum()
    }

    pub fn empty_defining_sets(&self) -> Vec<usize> {
        self.sets
            .iter()
            .filter(|s| s.kind == SetKind::Defining && s.resolved == 0)
            .map(|s| s.index)
            .collect()
    }
}

/// A category with every word replaced by its row index in one embedding set.
///
/// Indices inside each list are in spec order with duplicates removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedCategory {
    pub name: String,
    pub defining_sets: Vec<Vec<usize>>,
    pub equality_sets: Vec<Vec<usize>>,
    pub target_words: Vec<usize>,
    pub attribute_sets: Vec<Vec<usize>>,
}

impl ResolvedCategory {
    /// Rows that hard-debiasing must not neutralize.
    pub fn protected_rows(&self) -> BTreeSet<usize> {
        self.defining_sets
            .iter()
            .chain(&self.equality_sets)
            .flatten()
            .copied()
            .collect()
    }
}

fn resolve_list(
    words: &[String],
    set: &EmbeddingSet,
    lowercase_fallback: bool,
) -> (Vec<usize>, Vec<String>) {
    let mut rows = Vec::with_capacity(words.len());
    let mut missing = Vec::new();
    for w in words {
        match set.resolve(w, lowercase_fallback) {
            Some(i) => {
                if !rows.contains(&i) {
                    rows.push(i);
                }
            }
            None => missing.push(w.clone()),
        }
    }
    (rows, missing)
}

fn resolve_all(
    spec: &CategorySpec,
    set: &EmbeddingSet,
    lowercase_fallback: bool,
) -> (ResolvedCategory, ValidationReport) {
    let mut sets = Vec::new();
    let mut resolve_kind = |kind: SetKind, lists: &[Vec<String>]| -> Vec<Vec<usize>> {
        lists
            .iter()
            .enumerate()
            .map(|(index, words)| {
                let (rows, missing) = resolve_list(words, set, lowercase_fallback);
                sets.push(SetResolution {
                    kind,
                    index,
                    requested: words.len(),
                    resolved: words.len() - missing.len(),
                    missing,
                });
                rows
            })
            .collect()
    };
    let defining_sets = resolve_kind(SetKind::Defining, &spec.defining_sets);
    let equality_sets = resolve_kind(SetKind::Equality, &spec.equality_sets);
    let targets = resolve_kind(SetKind::Target, &spec.target_words);
    let attribute_sets = resolve_kind(SetKind::Attribute, &spec.attribute_sets);

    let mut target_words = Vec::new();
    for i in targets.into_iter().flatten() {
        if !target_words.contains(&i) {
            target_words.push(i);
        }
    }
    let fatal = defining_sets.iter().any(Vec::is_empty);
    (
        ResolvedCategory {
            name: spec.name.clone(),
            defining_sets,
            equality_sets,
            target_words,
            attribute_sets,
        },
        ValidationReport {
            category: spec.name.clone(),
            sets,
            fatal,
        },
    )
}

/// Resolve every word by exact match, then (if enabled) by its lowercase form.
pub fn validate_against_vocab(
    spec: &CategorySpec,
    set: &EmbeddingSet,
    lowercase_fallback: bool,
) -> ValidationReport {
    resolve_all(spec, set, lowercase_fallback).1
}

/// Resolve a category, failing if a defining set has no words in the vocabulary.
pub fn resolve_category(
    spec: &CategorySpec,
    set: &EmbeddingSet,
    lowercase_fallback: bool,
) -> Result<(ResolvedCategory, ValidationReport)> {
    let (resolved, report) = resolve_all(spec, set, lowercase_fallback);
    if report.fatal {
        return Err(Error::FatalValidation {
            category: spec.name.clone(),
            sets: report.empty_defining_sets(),
        });
    }
    let missing = report.missing_total();
    if missing > 0 {
        tracing::warn!(category = %spec.name, missing, "dropped words missing from the vocabulary");
    }
    Ok((resolved, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> EmbeddingSet {
        let rows = (0..words.len())
            .map(|i| {
                let mut r = vec![0.0; words.len()];
                r[i] = 1.0;
                r
            })
            .collect();
        EmbeddingSet::from_rows(words.to_vec(), rows).unwrap()
    }

    #[test]
    fn parses_minimal_gender_spec() {
        let spec = CategorySpec::from_json(
            r#"{"name":"gender","defining_sets":[["he","she"],["man","woman"]]}"#,
        )
        .unwrap();
        assert_eq!(spec.defining_sets.len(), 2);
        assert!(spec.equality_sets.is_empty());
        assert!(spec.attribute_sets.is_empty());
    }

    #[test]
    fn schema_errors() {
        let no_sets = CategorySpec::from_json(r#"{"name":"x","defining_sets":[]}"#);
        assert!(matches!(no_sets, Err(Error::Schema(_))));
        let missing = CategorySpec::from_json(r#"{"name":"x"}"#);
        assert!(matches!(missing, Err(Error::Schema(_))));
        let shape = CategorySpec::from_json(r#"{"name":"x","defining_sets":["he","she"]}"#);
        assert!(matches!(shape, Err(Error::Schema(_))));
        let unknown = CategorySpec::from_json(r#"{"name":"x","defining_sets":[["a"]],"extra":1}"#);
        assert!(matches!(unknown, Err(Error::Schema(_))));
        let empty = CategorySpec::from_json(r#"{"name":"x","defining_sets":[["a"],[]]}"#);
        assert!(matches!(empty, Err(Error::EmptySet(_))));
        let unnamed = CategorySpec::from_json(r#"{"name":"","defining_sets":[["a"]]}"#);
        assert!(matches!(unnamed, Err(Error::Schema(_))));
    }

    #[test]
    fn bundled_intersectional_lexicon() {
        let spec = bundled("race_gender_intersectional").unwrap();
        assert_eq!(spec.defining_sets.len(), 6);
        assert!(spec.defining_sets[0].iter().any(|w| w == "Aisha"));
        assert_eq!(spec.attribute_sets.len(), 6);
        for name in BUNDLED {
            assert_eq!(bundled(name).unwrap().name, *name);
        }
        assert!(bundled("nope").is_none());
    }

    #[test]
    fn bundled_files_match_data_tree() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        for name in BUNDLED {
            let from_disk = load_category_spec(dir.join(format!("{name}.json"))).unwrap();
            assert_eq!(from_disk, bundled(name).unwrap());
        }
    }

    #[test]
    fn validation_reports_missing_words() {
        let set = vocab(&["he", "she", "man", "woman"]);
        let all = CategorySpec::from_json(
            r#"{"name":"g","defining_sets":[["he","she"],["man","woman"]]}"#,
        )
        .unwrap();
        let report = validate_against_vocab(&all, &set, false);
        assert!(!report.fatal);
        assert_eq!(report.missing_total(), 0);

        let partial =
            CategorySpec::from_json(r#"{"name":"g","defining_sets":[["he","xqzt"]]}"#).unwrap();
        let report = validate_against_vocab(&partial, &set, false);
        assert!(!report.fatal);
        assert_eq!(report.sets[0].missing, vec!["xqzt".to_string()]);
        assert_eq!(report.sets[0].resolved, 1);

        let oov =
            CategorySpec::from_json(r#"{"name":"g","defining_sets":[["he"],["qq","zz"]]}"#).unwrap();
        let report = validate_against_vocab(&oov, &set, false);
        assert!(report.fatal);
        assert_eq!(report.empty_defining_sets(), vec![1]);
        assert!(matches!(
            resolve_category(&oov, &set, false),
            Err(Error::FatalValidation { sets, .. }) if sets == vec![1]
        ));
    }

    #[test]
    fn lowercase_fallback_and_determinism() {
        let set = vocab(&["he", "she"]);
        let spec =
            CategorySpec::from_json(r#"{"name":"g","defining_sets":[["He","she"]]}"#).unwrap();
        assert_eq!(validate_against_vocab(&spec, &set, false).sets[0].resolved, 1);
        let a = validate_against_vocab(&spec, &set, true);
        let b = validate_against_vocab(&spec, &set, true);
        assert_eq!(a.sets[0].resolved, 2);
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let (resolved, _) = resolve_category(&spec, &set, true).unwrap();
        assert_eq!(resolved.defining_sets, vec![vec![0, 1]]);
    }
}
