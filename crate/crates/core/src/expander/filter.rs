use std::collections::HashMap;

use crate::abbrev::{abbreviate, normalize_phrase, Abbreviation};
use crate::noise::KeyboardLayout;

use super::{ExpansionOption, ExpansionQuery, ExpansionResult};

/// Extracts the phrase from a raw model continuation.
///
/// Accepts `{phrase}` as well as a bare `phrase}...` continuation of a
/// prompt ending in `Full: {`. Only the first line is kept.
pub fn clean_completion(raw: &str) -> &str {
    let mut s = raw.trim_start();
    if let Some(rest) = s.strip_prefix('{') {
        s = rest;
    }
    if let Some(end) = s.find('}') {
        s = &s[..end];
    }
    s.lines().next().unwrap_or("").trim()
}

/// The active match predicate: exact abbreviation equality, or equal-length
/// nearby-key matching when the query is noisy.
pub fn matches_query(
    layout: &KeyboardLayout,
    query: &ExpansionQuery,
    candidate: &Abbreviation,
) -> bool {
    if query.noisy {
        layout.abbreviations_match_nearby(query.abbreviation.as_str(), candidate.as_str())
    } else {
        &query.abbreviation == candidate
    }
}

/// Normalizes samples, groups duplicates with counts, drops phrases that do
/// not match the query abbreviation, and returns the top `k` by count.
/// Equal counts keep first-occurrence order.
pub fn filter_and_rank<S: AsRef<str>>(
    samples: &[S],
    query: &ExpansionQuery,
    layout: &KeyboardLayout,
) -> ExpansionResult {
    let mut order: Vec<ExpansionOption> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut verdict: HashMap<String, bool> = HashMap::new();
    for sample in samples {
        let phrase = normalize_phrase(clean_completion(sample.as_ref()));
        if phrase.is_empty() {
            continue;
        }
        let keep = *verdict
            .entry(phrase.normalized.clone())
            .or_insert_with(|| matches_query(layout, query, &abbreviate(&phrase)));
        if !keep {
            continue;
        }
        match index.get(&phrase.normalized) {
            Some(&i) => order[i].count += 1,
            None => {
                index.insert(phrase.normalized.clone(), order.len());
                let normalized = phrase.normalized.clone();
                order.push(ExpansionOption {
                    phrase: crate::abbrev::Phrase {
                        raw: normalized.clone(),
                        normalized,
                    },
                    count: 1,
                    score: None,
                });
            }
        }
    }
    // Stable sort keeps first occurrence among equal counts.
    order.sort_by(|a, b| b.count.cmp(&a.count));
    order.truncate(query.k);
    ExpansionResult {
        options: order,
        raw_sample_count: samples.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abbrev::Abbreviation;

    fn query(abbrev: &str, noisy: bool) -> ExpansionQuery {
        ExpansionQuery::with_options(vec![], Abbreviation::parse(abbrev), noisy, 5).unwrap()
    }

    #[test]
    fn cleans_completions() {
        assert_eq!(clean_completion("No, I'm fine}. More text"), "No, I'm fine");
        assert_eq!(clean_completion(" {hello there} trailing"), "hello there");
        assert_eq!(clean_completion("first line\nsecond"), "first line");
        assert_eq!(clean_completion(""), "");
    }

    #[test]
    fn comma_sensitive_grouping() {
        let layout = KeyboardLayout::default();
        let samples = [
            "No, I'm fine standing up!",
            "no, i'm fine standing up",
            "no i'm feeling super upbeat",
        ];
        let r = filter_and_rank(&samples, &query("n,imfsu", false), &layout);
        assert_eq!(r.options.len(), 1);
        assert_eq!(r.options[0].phrase.as_str(), "no, i'm fine standing up");
        assert_eq!(r.options[0].count, 2);
        assert_eq!(r.raw_sample_count, 3);
    }

    #[test]
    fn empty_samples() {
        let layout = KeyboardLayout::default();
        let r = filter_and_rank::<&str>(&[], &query("abc", false), &layout);
        assert!(r.options.is_empty());
    }

    #[test]
    fn noisy_match_uses_layout() {
        let layout = KeyboardLayout::default();
        let samples = ["would you like to sit down"];
        // 'l' (row 1, col 8) and '!' (row 2, col 9) touch diagonally.
        let r = filter_and_rank(&samples, &query("wy!tsd", true), &layout);
        assert_eq!(r.options.len(), 1);
        let r = filter_and_rank(&samples, &query("wy!tsd", false), &layout);
        assert!(r.options.is_empty());
    }

    #[test]
    fn ties_keep_first_occurrence_and_truncate() {
        let layout = KeyboardLayout::default();
        let samples = [
            "a b", "a bit", "all by", "a bit", "and but", "as be", "at by", "an ba",
        ];
        let r = filter_and_rank(&samples, &query("ab", false), &layout);
        let got: Vec<_> = r.phrases().collect();
        assert_eq!(got, vec!["a bit", "a b", "all by", "and but", "as be"]);
    }
}
