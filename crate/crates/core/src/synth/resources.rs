//! Mapping, lexicon and allowlist files matching a cohort spec.

use std::collections::{BTreeMap, BTreeSet};

use super::CohortSpec;
use crate::concept::{Abbreviation, ConceptLexicon, LexiconEntry};
use crate::error::Result;
use crate::ingest::{MappingEntry, PhecodeMapping};

/// Both ICD versions of every class, subtype and null phenotype code.
pub fn phecode_mapping(spec: &CohortSpec) -> Result<PhecodeMapping> {
    let mut entries = Vec::new();
    let mut push = |icd9: &str, icd10: &str, phecode: &str, description: &str| {
        for (code, version) in [(icd9, 9u8), (icd10, 10u8)] {
            entries.push(MappingEntry {
                icd_code: code.to_string(),
                icd_version: version,
                phecode: phecode.to_string(),
                description: description.to_string(),
            });
        }
    };
    for c in &spec.classes {
        push(&c.icd.icd9, &c.icd.icd10, &c.icd.phecode, &c.icd.description);
        for s in &c.subtypes {
            for i in &s.outcomes {
                push(&i.icd9, &i.icd10, &i.phecode, &i.description);
            }
        }
    }
    for n in &spec.null_phenotypes {
        push(&n.icd9, &n.icd10, &n.phecode, &n.description);
    }
    entries.sort();
    PhecodeMapping::new(entries)
}

/// phecode → category.
pub fn phecode_categories(spec: &CohortSpec) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for c in &spec.classes {
        out.insert(c.icd.phecode.clone(), c.icd.category.clone());
        for s in &c.subtypes {
            for i in &s.outcomes {
                out.insert(i.phecode.clone(), i.category.clone());
            }
        }
    }
    for n in &spec.null_phenotypes {
        out.insert(n.phecode.clone(), n.category.clone());
    }
    out
}

/// Class terms, incidental terms and a few distractor entries (single
/// words that only match when no longer phrase does).
pub fn lexicon(spec: &CohortSpec) -> Result<ConceptLexicon> {
    let mut entries = Vec::new();
    let mut abbreviations = Vec::new();
    for c in &spec.classes {
        entries.push(LexiconEntry {
            surface_form: c.report.term.clone(),
            cui: c.report.cui.clone(),
            canonical_name: c.report.term.clone(),
        });
        if let Some(a) = &c.report.abbreviation {
            abbreviations.push(Abbreviation {
                short_form: a.clone(),
                long_form: c.report.term.clone(),
            });
        }
    }
    for inc in &spec.incidental_concepts {
        entries.push(LexiconEntry {
            surface_form: inc.term.clone(),
            cui: inc.cui.clone(),
            canonical_name: inc.term.clone(),
        });
    }
    for (word, cui) in [("fibrillation", "CUI-FIBRILLATION"), ("block", "CUI-BLOCK"), ("hypertrophy", "CUI-HYPERTROPHY")] {
        entries.push(LexiconEntry {
            surface_form: word.into(),
            cui: cui.into(),
            canonical_name: word.into(),
        });
    }
    entries.sort();
    entries.dedup_by(|a, b| a.surface_form == b.surface_form && a.cui == b.cui);
    abbreviations.sort();
    ConceptLexicon::new(entries, abbreviations)
}

/// Class CUIs plus incidental CUIs marked as reviewed.
pub fn allowlist(spec: &CohortSpec) -> BTreeSet<String> {
    spec.classes
        .iter()
        .map(|c| c.report.cui.clone())
        .chain(spec.incidental_concepts.iter().filter(|i| i.allowlisted).map(|i| i.cui.clone()))
        .collect()
}
