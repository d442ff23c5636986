//! Rule-based concept extraction from report text: tokenisation,
//! abbreviation expansion, longest-match lexicon lookup, NegEx-style
//! negation, corpus frequency filtering and the binary concept matrix.

mod lexicon;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::{FeatureColumn, FeatureMatrix, Granularity};

pub use lexicon::{
    read_allowlist, write_allowlist, Abbreviation, AllowlistRow, ConceptLexicon, LexiconEntry, NegationRules,
    TriggerKind, TriggerRow, DEFAULT_POST_TRIGGERS, DEFAULT_PRE_TRIGGERS, DEFAULT_TERMINATORS,
};

const PUNCT_TOKENS: [char; 4] = [';', ',', '.', ':'];

/// Lowercase; alphanumeric runs are tokens, `; , . :` are single-character
/// tokens, everything else separates.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if PUNCT_TOKENS.contains(&ch) {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptMention {
    pub cui: String,
    /// Token span `[start, end)` in the expanded token sequence.
    pub start: usize,
    pub end: usize,
    pub negated: bool,
}

/// Tokenise and expand abbreviations.
pub fn expanded_tokens(report: &str, lexicon: &ConceptLexicon) -> Vec<String> {
    let mut out = Vec::new();
    for t in tokenize(report) {
        match lexicon.expansion(&t) {
            Some(long) => out.extend(long.iter().cloned()),
            None => out.push(t),
        }
    }
    out
}

/// Greedy longest match, left to right, over already expanded tokens.
pub fn match_tokens(tokens: &[String], lexicon: &ConceptLexicon) -> Vec<ConceptMention> {
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = lexicon.max_len().min(tokens.len() - i);
        let hit = (1..=longest)
            .rev()
            .find_map(|n| lexicon.lookup(&tokens[i..i + n]).map(|cui| (n, cui)));
        match hit {
            Some((n, cui)) => {
                mentions.push(ConceptMention {
                    cui: cui.to_string(),
                    start: i,
                    end: i + n,
                    negated: false,
                });
                i += n;
            }
            None => i += 1,
        }
    }
    mentions
}

/// Mentions in `report`, not yet negation-tagged, plus the expanded tokens.
pub fn match_concepts(report: &str, lexicon: &ConceptLexicon) -> (Vec<String>, Vec<ConceptMention>) {
    let tokens = expanded_tokens(report, lexicon);
    let mentions = match_tokens(&tokens, lexicon);
    (tokens, mentions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Trigger {
    start: usize,
    end: usize,
    pre: bool,
}

fn find_triggers(tokens: &[String], covered: &[bool], rules: &NegationRules) -> Vec<Trigger> {
    let mut found = Vec::new();
    let mut i = 0;
    'outer: while i < tokens.len() {
        if !covered[i] {
            // pre and post lists are each sorted longest first; try the
            // longer phrase across both lists before shorter ones
            let mut best: Option<Trigger> = None;
            for (list, pre) in [(&rules.pre, true), (&rules.post, false)] {
                for phrase in list {
                    let end = i + phrase.len();
                    if end <= tokens.len()
                        && !covered[i..end].iter().any(|&c| c)
                        && tokens[i..end] == phrase[..]
                        && best.is_none_or(|b| phrase.len() > b.end - b.start)
                    {
                        best = Some(Trigger { start: i, end, pre });
                    }
                }
            }
            if let Some(t) = best {
                found.push(t);
                i = t.end;
                continue 'outer;
            }
        }
        i += 1;
    }
    found
}

/// Set `negated` on each mention: a pre-trigger ending at most `window`
/// tokens before the mention starts, or a post-trigger starting at most
/// `window` tokens after it ends, with no terminator in between.
pub fn detect_negation(mentions: &[ConceptMention], tokens: &[String], rules: &NegationRules) -> Vec<ConceptMention> {
    let mut covered = vec![false; tokens.len()];
    for m in mentions {
        covered[m.start..m.end].iter_mut().for_each(|c| *c = true);
    }
    let triggers = find_triggers(tokens, &covered, rules);
    let blocked = |lo: usize, hi: usize| tokens[lo..hi].iter().any(|t| rules.terminators.contains(t));
    mentions
        .iter()
        .map(|m| {
            let negated = triggers.iter().any(|t| {
                if t.pre {
                    t.end <= m.start && m.start - (t.end - 1) <= rules.window && !blocked(t.end, m.start)
                } else {
                    t.start >= m.end && t.start - (m.end - 1) <= rules.window && !blocked(m.end, t.start)
                }
            });
            ConceptMention { negated, ..m.clone() }
        })
        .collect()
}

/// Full per-report extraction.
pub fn extract(report: &str, lexicon: &ConceptLexicon, rules: &NegationRules) -> Vec<ConceptMention> {
    let (tokens, mentions) = match_concepts(report, lexicon);
    detect_negation(&mentions, &tokens, rules)
}

pub fn extract_corpus(reports: &[&str], lexicon: &ConceptLexicon, rules: &NegationRules) -> Vec<Vec<ConceptMention>> {
    reports.par_iter().map(|r| extract(r, lexicon, rules)).collect()
}

/// Non-negated mention count per CUI over the corpus.
pub fn mention_counts(corpus: &[Vec<ConceptMention>]) -> BTreeMap<String, usize> {
    corpus
        .par_iter()
        .map(|ms| {
            let mut m = BTreeMap::new();
            for x in ms.iter().filter(|x| !x.negated) {
                *m.entry(x.cui.clone()).or_insert(0usize) += 1;
            }
            m
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        })
}

/// CUIs with at least `min_count` non-negated mentions, intersected with
/// `allowlist` unless it is empty.
pub fn frequency_filter(
    corpus: &[Vec<ConceptMention>],
    min_count: usize,
    allowlist: &BTreeSet<String>,
) -> BTreeSet<String> {
    if allowlist.is_empty() {
        log::warn!("empty concept allowlist: filtering by frequency only");
    }
    mention_counts(corpus)
        .into_iter()
        .filter(|(cui, n)| *n >= min_count && (allowlist.is_empty() || allowlist.contains(cui)))
        .map(|(cui, _)| cui)
        .collect()
}

/// One `cui` column per retained CUI: 1 iff the record has at least one
/// non-negated mention of it.
pub fn concept_matrix(
    record_ids: &[u64],
    corpus: &[Vec<ConceptMention>],
    retained: &BTreeSet<String>,
) -> crate::Result<FeatureMatrix> {
    if record_ids.len() != corpus.len() {
        return Err(crate::Error::InvalidInput("record ids and mention lists differ in length".into()));
    }
    let columns = retained
        .iter()
        .map(|cui| FeatureColumn {
            name: cui.clone(),
            granularity: Granularity::Cui,
            values: corpus
                .iter()
                .map(|ms| ms.iter().any(|m| !m.negated && &m.cui == cui))
                .collect(),
        })
        .collect();
    FeatureMatrix::new(record_ids.to_vec(), columns)
}
