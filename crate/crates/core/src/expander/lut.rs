use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::abbrev::{abbreviate, normalize_phrase, Abbreviation, Phrase};
use crate::dialogdata::{AEExample, DataError};
use crate::noise::KeyboardLayout;

use super::{ExpandError, Expander, ExpansionOption, ExpansionQuery, ExpansionResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LutEntry {
    pub phrase: String,
    pub frequency: u64,
}

/// Sentence-level dictionary from abbreviation to phrase frequencies.
#[derive(Debug, Clone, Default)]
pub struct LookUpTable {
    // Inner maps are ordered so that expansion is reproducible for a given seed.
    map: HashMap<Abbreviation, BTreeMap<String, u64>>,
    layout: KeyboardLayout,
}

/// Counts the normalized target phrase of every example.
pub fn build_lut(examples: &[AEExample]) -> LookUpTable {
    let mut lut = LookUpTable::default();
    for ex in examples {
        lut.insert(&ex.full, 1);
    }
    lut
}

impl LookUpTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_phrases<S: AsRef<str>>(phrases: impl IntoIterator<Item = S>) -> Self {
        let mut lut = Self::default();
        for p in phrases {
            lut.insert(&normalize_phrase(p.as_ref()), 1);
        }
        lut
    }

    /// Adds `count` occurrences of a phrase. Empty phrases are ignored.
    pub fn insert(&mut self, phrase: &Phrase, count: u64) {
        let abbrev = abbreviate(phrase);
        if abbrev.is_empty() || count == 0 {
            return;
        }
        *self
            .map
            .entry(abbrev)
            .or_default()
            .entry(phrase.normalized.clone())
            .or_default() += count;
    }

    /// Number of distinct abbreviations.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Number of distinct (abbreviation, phrase) pairs.
    pub fn total_pairs(&self) -> usize {
        self.map.values().map(BTreeMap::len).sum()
    }

    /// Stored phrases for one abbreviation, most frequent first.
    pub fn entries(&self, abbrev: &Abbreviation) -> Vec<LutEntry> {
        let mut out: Vec<LutEntry> = self
            .map
            .get(abbrev)
            .into_iter()
            .flatten()
            .map(|(p, &f)| LutEntry {
                phrase: p.clone(),
                frequency: f,
            })
            .collect();
        out.sort_by(|a, b| b.frequency.cmp(&a.frequency));
        out
    }

    /// Every stored (abbreviation, phrase, frequency) triple.
    pub fn iter(&self) -> impl Iterator<Item = (&Abbreviation, &str, u64)> {
        self.map
            .iter()
            .flat_map(|(a, m)| m.iter().map(move |(p, &f)| (a, p.as_str(), f)))
    }

    fn candidates(&self, query: &ExpansionQuery) -> Vec<(&str, u64)> {
        if !query.noisy {
            return self
                .map
                .get(&query.abbreviation)
                .into_iter()
                .flatten()
                .map(|(p, &f)| (p.as_str(), f))
                .collect();
        }
        let typed = query.abbreviation.as_str();
        let mut keys: Vec<&Abbreviation> = self
            .map
            .keys()
            .filter(|k| self.layout.abbreviations_match_nearby(typed, k.as_str()))
            .collect();
        keys.sort();
        keys.into_iter()
            .flat_map(|k| self.map[k].iter().map(|(p, &f)| (p.as_str(), f)))
            .collect()
    }

    /// Top `k` phrases by frequency; equal frequencies are ordered by a
    /// uniform random permutation drawn from `rng`.
    pub fn lut_expand(&self, query: &ExpansionQuery, rng: &mut dyn RngCore) -> ExpansionResult {
        let mut cands = self.candidates(query);
        let raw_sample_count = cands.len();
        cands.shuffle(rng);
        cands.sort_by(|a, b| b.1.cmp(&a.1));
        cands.truncate(query.k);
        ExpansionResult {
            options: cands
                .into_iter()
                .map(|(p, f)| ExpansionOption {
                    phrase: Phrase {
                        raw: p.to_string(),
                        normalized: p.to_string(),
                    },
                    count: f,
                    score: None,
                })
                .collect(),
            raw_sample_count,
        }
    }

    /// Writes `abbrev<TAB>phrase<TAB>count` lines sorted by abbreviation,
    /// then descending count, then phrase.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut rows: Vec<_> = self.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0).then(b.2.cmp(&a.2)).then(a.1.cmp(b.1)));
        for (a, p, f) in rows {
            writeln!(w, "{a}\t{p}\t{f}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`write_tsv`](Self::write_tsv). The
    /// abbreviation column is recomputed from the phrase, so a stale or
    /// hand-edited first column cannot break the table invariant.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self, DataError> {
        let mut lut = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (_abbrev, phrase, count) = match (cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(p), Some(c)) => (a, p, c),
                _ => {
                    return Err(DataError::Canonical(format!(
                        "line {}: expected abbrev<TAB>phrase<TAB>count",
                        i + 1
                    )))
                }
            };
            let count: u64 = count.trim().parse().map_err(|_| {
                DataError::Canonical(format!("line {}: bad count {count:?}", i + 1))
            })?;
            lut.insert(&normalize_phrase(phrase), count);
        }
        Ok(lut)
    }
}

impl Expander for LookUpTable {
    fn name(&self) -> &str {
        "lut"
    }

    fn expand(
        &self,
        query: &ExpansionQuery,
        rng: &mut dyn RngCore,
    ) -> Result<ExpansionResult, ExpandError> {
        Ok(self.lut_expand(query, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(a: &str) -> ExpansionQuery {
        ExpansionQuery::new(vec![], Abbreviation::parse(a)).unwrap()
    }

    #[test]
    fn counts_and_ranks() {
        let phrases = std::iter::repeat("hello")
            .take(5)
            .chain(std::iter::repeat("Hi!").take(3));
        let lut = LookUpTable::from_phrases(phrases);
        assert_eq!(
            lut.entries(&Abbreviation::parse("h")),
            vec![
                LutEntry {
                    phrase: "hello".into(),
                    frequency: 5
                },
                LutEntry {
                    phrase: "hi".into(),
                    frequency: 3
                },
            ]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = lut.lut_expand(&q("h"), &mut rng);
        assert_eq!(r.phrases().collect::<Vec<_>>(), vec!["hello", "hi"]);
        assert!(lut.lut_expand(&q("zz"), &mut rng).options.is_empty());
        assert_eq!(lut.total_pairs(), 2);
    }

    #[test]
    fn empty_table() {
        let lut = build_lut(&[]);
        assert!(lut.is_empty());
        assert_eq!(lut.total_pairs(), 0);
    }

    #[test]
    fn tsv_round_trip() {
        let lut = LookUpTable::from_phrases(["a b", "a b", "all by", "no, thanks"]);
        let mut buf = Vec::new();
        lut.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "ab\ta b\t2\nab\tall by\t1\nn,t\tno, thanks\t1\n");
        let back = LookUpTable::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back.iter().count(), 3);
        assert!(LookUpTable::read_tsv("ab\tonly two".as_bytes()).is_err());
    }

    #[test]
    fn noisy_lookup_merges_neighbour_keys() {
        let lut = LookUpTable::from_phrases(["would you like to sit down", "we'll"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let query =
            ExpansionQuery::with_options(vec![], Abbreviation::parse("wy!tsd"), true, 5).unwrap();
        let r = lut.lut_expand(&query, &mut rng);
        assert_eq!(
            r.phrases().collect::<Vec<_>>(),
            vec!["would you like to sit down"]
        );
    }
}
