use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize;
use crate::error::{Error, Result};
use crate::ingest::csv_err;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub surface_form: String,
    pub cui: String,
    pub canonical_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Abbreviation {
    pub short_form: String,
    pub long_form: String,
}

/// Surface forms and abbreviations, indexed by their token sequences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConceptLexicon {
    entries: Vec<LexiconEntry>,
    abbreviations: Vec<Abbreviation>,
    /// Joined surface tokens → smallest CUI with that surface form.
    surfaces: HashMap<String, String>,
    expansions: HashMap<String, Vec<String>>,
    max_len: usize,
}

impl ConceptLexicon {
    pub fn new(entries: Vec<LexiconEntry>, abbreviations: Vec<Abbreviation>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut by_surface: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut max_len = 0;
        for e in &entries {
            if e.surface_form != e.surface_form.to_lowercase() {
                return Err(Error::InvalidInput(format!("surface form {:?} is not lowercase", e.surface_form)));
            }
            if e.cui.trim().is_empty() {
                return Err(Error::InvalidInput(format!("surface form {:?} has no cui", e.surface_form)));
            }
            if !seen.insert((e.surface_form.clone(), e.cui.clone())) {
                return Err(Error::InvalidInput(format!(
                    "duplicate lexicon row ({}, {})",
                    e.surface_form, e.cui
                )));
            }
            let toks = tokenize(&e.surface_form);
            if toks.is_empty() {
                return Err(Error::InvalidInput(format!("surface form {:?} has no tokens", e.surface_form)));
            }
            max_len = max_len.max(toks.len());
            by_surface.entry(toks.join(" ")).or_default().insert(e.cui.clone());
        }
        let surfaces = by_surface
            .into_iter()
            .map(|(s, cuis)| (s, cuis.into_iter().next().expect("non-empty set")))
            .collect();
        let mut expansions = HashMap::new();
        for a in &abbreviations {
            let short = tokenize(&a.short_form);
            if short.len() != 1 {
                return Err(Error::InvalidInput(format!(
                    "abbreviation {:?} must be a single token",
                    a.short_form
                )));
            }
            let long = tokenize(&a.long_form);
            if long.is_empty() {
                return Err(Error::InvalidInput(format!("abbreviation {:?} has empty expansion", a.short_form)));
            }
            if expansions.insert(short[0].clone(), long).is_some() {
                return Err(Error::InvalidInput(format!("duplicate abbreviation {:?}", a.short_form)));
            }
        }
        Ok(ConceptLexicon {
            entries,
            abbreviations,
            surfaces,
            expansions,
            max_len,
        })
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn abbreviations(&self) -> &[Abbreviation] {
        &self.abbreviations
    }

    pub(crate) fn lookup(&self, tokens: &[String]) -> Option<&str> {
        self.surfaces.get(&tokens.join(" ")).map(String::as_str)
    }

    pub(crate) fn expansion(&self, token: &str) -> Option<&[String]> {
        self.expansions.get(token).map(Vec::as_slice)
    }

    pub(crate) fn max_len(&self) -> usize {
        self.max_len
    }

    /// cui → canonical name (first row seen).
    pub fn canonical_names(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.cui.clone()).or_insert_with(|| e.canonical_name.clone());
        }
        out
    }

    /// Lexicon CSV `surface_form,cui,canonical_name`; abbreviation CSV
    /// `short_form,long_form`.
    pub fn read_csv(lexicon: &Path, abbreviations: &Path) -> Result<Self> {
        Self::new(read_rows(lexicon)?, read_rows(abbreviations)?)
    }

    pub fn write_csv(&self, lexicon: &Path, abbreviations: &Path) -> Result<()> {
        write_rows(lexicon, &self.entries)?;
        write_rows(abbreviations, &self.abbreviations)
    }
}

pub(crate) fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Pre,
    Post,
    Terminator,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TriggerRow {
    pub phrase: String,
    pub kind: TriggerKind,
}

/// Negation triggers and scope terminators, stored as token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct NegationRules {
    pub pre: Vec<Vec<String>>,
    pub post: Vec<Vec<String>>,
    pub terminators: Vec<String>,
    /// Maximum distance, in tokens, from trigger to mention.
    pub window: usize,
}

pub const DEFAULT_PRE_TRIGGERS: [&str; 9] = [
    "no",
    "no evidence of",
    "no signs of",
    "without",
    "negative for",
    "absence of",
    "not",
    "free of",
    "rule out",
];
pub const DEFAULT_POST_TRIGGERS: [&str; 6] = ["ruled out", "is not present", "not seen", "absent", "unlikely", "resolved"];
pub const DEFAULT_TERMINATORS: [&str; 5] = ["but", "however", "although", ";", "."];

impl Default for NegationRules {
    fn default() -> Self {
        let rows: Vec<TriggerRow> = DEFAULT_PRE_TRIGGERS
            .iter()
            .map(|p| (p, TriggerKind::Pre))
            .chain(DEFAULT_POST_TRIGGERS.iter().map(|p| (p, TriggerKind::Post)))
            .chain(DEFAULT_TERMINATORS.iter().map(|p| (p, TriggerKind::Terminator)))
            .map(|(p, kind)| TriggerRow {
                phrase: p.to_string(),
                kind,
            })
            .collect();
        NegationRules::from_rows(&rows, 5).expect("default triggers are valid")
    }
}

impl NegationRules {
    pub fn from_rows(rows: &[TriggerRow], window: usize) -> Result<Self> {
        let mut rules = NegationRules {
            pre: Vec::new(),
            post: Vec::new(),
            terminators: Vec::new(),
            window,
        };
        for r in rows {
            let toks = tokenize(&r.phrase);
            if toks.is_empty() {
                return Err(Error::InvalidInput(format!("empty trigger phrase {:?}", r.phrase)));
            }
            match r.kind {
                TriggerKind::Pre => rules.pre.push(toks),
                TriggerKind::Post => rules.post.push(toks),
                TriggerKind::Terminator => {
                    if toks.len() != 1 {
                        return Err(Error::InvalidInput(format!("terminator {:?} must be one token", r.phrase)));
                    }
                    rules.terminators.push(toks[0].clone());
                }
            }
        }
        // longest phrases first so "no evidence of" wins over "no"
        rules.pre.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        rules.post.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        Ok(rules)
    }

    pub fn to_rows(&self) -> Vec<TriggerRow> {
        let mut rows = Vec::new();
        for (list, kind) in [(&self.pre, TriggerKind::Pre), (&self.post, TriggerKind::Post)] {
            rows.extend(list.iter().map(|t| TriggerRow {
                phrase: t.join(" "),
                kind,
            }));
        }
        rows.extend(self.terminators.iter().map(|t| TriggerRow {
            phrase: t.clone(),
            kind: TriggerKind::Terminator,
        }));
        rows
    }

    /// Trigger CSV `phrase,kind` with kind one of pre, post, terminator.
    pub fn read_csv(path: &Path, window: usize) -> Result<Self> {
        Self::from_rows(&read_rows::<TriggerRow>(path)?, window)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.to_rows())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AllowlistRow {
    pub cui: String,
}

/// Reviewed CUI allowlist, CSV with a single `cui` column.
pub fn read_allowlist(path: &Path) -> Result<BTreeSet<String>> {
    Ok(read_rows::<AllowlistRow>(path)?.into_iter().map(|r| r.cui).collect())
}

pub fn write_allowlist(path: &Path, cuis: &BTreeSet<String>) -> Result<()> {
    let rows: Vec<AllowlistRow> = cuis.iter().map(|c| AllowlistRow { cui: c.clone() }).collect();
    write_rows(path, &rows)
}
