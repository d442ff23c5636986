//! Negation scope against the hand-labelled fixture, and properties of
//! the matcher on generated sentences.

mod common;

use common::{negation_cases, negation_disagreements};
use proptest::prelude::*;
use protophen::concept::{extract, NegationRules};
use protophen::synth::{lexicon, CohortSpec};

#[test]
fn fixture_agrees_with_hand_labels() {
    let cases = negation_cases();
    assert_eq!(cases.len(), 30);
    for kind in ["affirmed", "pre-trigger", "post-trigger", "terminator"] {
        assert!(cases.iter().any(|c| c.case == kind), "no {kind} cases");
    }
    assert_eq!(negation_disagreements(&cases), vec![]);
}

const TERMS: [(&str, &str); 6] = [
    ("atrial fibrillation", "CUI-AFIB"),
    ("afib", "CUI-AFIB"),
    ("left bundle branch block", "CUI-LBBB"),
    ("st depression", "CUI-STD"),
    ("lvh", "CUI-LVH"),
    ("premature ventricular complexes", "CUI-PVC"),
];

fn target(sentence: &str, cui: &str) -> Vec<bool> {
    let lex = lexicon(&CohortSpec::desk_default(1, 1)).unwrap();
    extract(sentence, &lex, &NegationRules::default())
        .into_iter()
        .filter(|m| m.cui == cui)
        .map(|m| m.negated)
        .collect()
}

proptest! {
    #[test]
    fn pre_trigger_scope_ends_at_the_window(term in 0usize..6, gap in 0usize..9) {
        let (t, cui) = TERMS[term];
        let filler = vec!["xq"; gap].join(" ");
        let got = target(&format!("no {filler} {t} seen"), cui);
        // default window 5: the mention may start at most 5 tokens after the trigger
        prop_assert_eq!(got, vec![gap < 5]);
    }

    #[test]
    fn post_trigger_scope_ends_at_the_window(term in 0usize..6, gap in 0usize..9) {
        let (t, cui) = TERMS[term];
        let filler = vec!["xq"; gap].join(" ");
        prop_assert_eq!(target(&format!("{t} {filler} ruled out"), cui), vec![gap < 5]);
    }

    #[test]
    fn terminator_blocks_scope(term in 0usize..6, stop in prop::sample::select(vec!["but", "however", "although", ";", "."])) {
        let (t, cui) = TERMS[term];
        prop_assert_eq!(target(&format!("no {stop} {t}"), cui), vec![false]);
        prop_assert_eq!(target(&format!("{t} {stop} unlikely"), cui), vec![false]);
        prop_assert_eq!(target(&format!("no {t} {stop} xq"), cui), vec![true]);
    }

    #[test]
    fn mentions_are_ordered_and_disjoint(words in prop::collection::vec(prop::sample::select(vec![
        "no", "atrial", "fibrillation", "afib", "block", "left", "bundle", "branch", "lvh", "st", "depression",
        "ruled", "out", "but", ";", "xq", "echocardiogram", "pacemaker", "hypertrophy",
    ]), 0..25)) {
        let lex = lexicon(&CohortSpec::desk_default(1, 1)).unwrap();
        let ms = extract(&words.join(" "), &lex, &NegationRules::default());
        for m in &ms {
            prop_assert!(m.start < m.end);
        }
        for w in ms.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
    }
}

#[test]
fn abbreviation_and_long_form_agree() {
    for (short, long, cui) in [("afib", "atrial fibrillation", "CUI-AFIB"), ("lbbb", "left bundle branch block", "CUI-LBBB")] {
        for frame in ["{} present", "no {}", "{} resolved", "no xq but {}"] {
            assert_eq!(target(&frame.replace("{}", short), cui), target(&frame.replace("{}", long), cui), "{frame}");
        }
    }
}

#[test]
fn longer_phrase_wins_over_single_word() {
    let lex = lexicon(&CohortSpec::desk_default(1, 1)).unwrap();
    let cuis: Vec<String> = extract("atrial fibrillation and fibrillation", &lex, &NegationRules::default())
        .into_iter()
        .map(|m| m.cui)
        .collect();
    assert_eq!(cuis, ["CUI-AFIB", "CUI-FIBRILLATION"]);
}
