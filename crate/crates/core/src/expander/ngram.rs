//! Word n-gram model with abbreviation-constrained beam decoding.
//!
//! Replies are modelled as `h... <turn> w1 .. wn </s>` where `h...` are the
//! final words of the most recent context turn (or `<s>` when there is no
//! context). Probabilities are Witten-Bell interpolated down to an add-alpha
//! unigram, so every history yields a proper distribution over the word
//! vocabulary plus `</s>`.

use std::collections::HashMap;

use rand::RngCore;

use crate::abbrev::{normalize_phrase, word_abbreviation, Phrase};
use crate::noise::KeyboardLayout;

use super::{ExpandError, Expander, ExpansionOption, ExpansionQuery, ExpansionResult};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const TURN: &str = "<turn>";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const TURN_ID: u32 = 2;
const FIRST_WORD_ID: u32 = 3;
/// Stands in for context words never seen in training.
const UNK_ID: u32 = u32::MAX;

const UNIGRAM_ALPHA: f64 = 0.1;
pub const DEFAULT_BEAM_WIDTH: usize = 64;

#[derive(Debug, Clone, Default)]
struct Followers {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone)]
struct VocabWord {
    id: u32,
    abbrev: Vec<char>,
}

#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    /// History (length 1..order) to follower counts. Unigrams live under the empty history.
    counts: HashMap<Vec<u32>, Followers>,
    /// Vocabulary words grouped by the first character of their abbreviation.
    by_initial: HashMap<char, Vec<VocabWord>>,
    layout: KeyboardLayout,
    beam_width: usize,
}

impl NgramModel {
    /// Trains on (most recent context turn, reply) pairs.
    pub fn train<'a, I>(order: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (Option<&'a str>, &'a str)>,
    {
        assert!(order >= 1, "n-gram order must be at least 1");
        let mut model = NgramModel {
            order,
            tokens: vec![BOS.into(), EOS.into(), TURN.into()],
            ids: HashMap::new(),
            counts: HashMap::new(),
            by_initial: HashMap::new(),
            layout: KeyboardLayout::default(),
            beam_width: DEFAULT_BEAM_WIDTH,
        };
        for (i, t) in model.tokens.iter().enumerate() {
            model.ids.insert(t.clone(), i as u32);
        }
        for (context, reply) in pairs {
            model.add_pair(context, reply);
        }
        model
    }

    pub fn with_beam_width(mut self, beam_width: usize) -> Self {
        self.beam_width = beam_width.max(1);
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn beam_width(&self) -> usize {
        self.beam_width
    }

    /// Number of predictable word types, `</s>` excluded.
    pub fn vocab_size(&self) -> usize {
        self.tokens.len() - FIRST_WORD_ID as usize
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens[FIRST_WORD_ID as usize..]
            .iter()
            .map(String::as_str)
    }

    fn add_pair(&mut self, context: Option<&str>, reply: &str) {
        let reply = normalize_phrase(reply);
        if reply.is_empty() {
            return;
        }
        // context words join the vocabulary so later queries can condition on them
        if let Some(ctx) = context {
            for w in normalize_phrase(ctx).normalized.split_whitespace() {
                self.intern(w);
            }
        }
        let mut seq = self.history_prefix(context);
        let start = seq.len();
        for w in reply.normalized.split_whitespace() {
            let id = self.intern(w);
            seq.push(id);
        }
        seq.push(EOS_ID);
        for pos in start..seq.len() {
            let next = seq[pos];
            for n in 0..self.order {
                if n > pos {
                    break;
                }
                let hist = seq[pos - n..pos].to_vec();
                let f = self.counts.entry(hist).or_default();
                f.total += 1;
                *f.next.entry(next).or_default() += 1;
            }
        }
    }

    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        let abbrev: Vec<char> = word_abbreviation(word).chars().collect();
        if let Some(&first) = abbrev.first() {
            self.by_initial
                .entry(first)
                .or_default()
                .push(VocabWord { id, abbrev });
        }
        id
    }

    /// Tokens preceding the first reply word: the last `order - 2` words of
    /// the context turn (or `<s>`), then `<turn>`.
    fn history_prefix(&self, context: Option<&str>) -> Vec<u32> {
        let mut seq = Vec::new();
        match context.map(normalize_phrase).filter(|p| !p.is_empty()) {
            Some(ctx) => {
                for w in ctx.normalized.split_whitespace() {
                    seq.push(self.ids.get(w).copied().unwrap_or(UNK_ID));
                }
            }
            None => seq.push(BOS_ID),
        }
        seq.push(TURN_ID);
        let keep = self.order.saturating_sub(1);
        seq.split_off(seq.len().saturating_sub(keep))
    }

    /// `P(next | history)`; only the last `order - 1` history tokens matter.
    pub fn prob_id(&self, history: &[u32], next: u32) -> f64 {
        let predictable = (self.tokens.len() - FIRST_WORD_ID as usize + 1) as f64;
        let uni = self.counts.get(&Vec::new());
        let (total, c) = uni
            .map(|f| (f.total, f.next.get(&next).copied().unwrap_or(0)))
            .unwrap_or((0, 0));
        let mut p = (c as f64 + UNIGRAM_ALPHA) / (total as f64 + UNIGRAM_ALPHA * predictable);
        let max_hist = self.order.saturating_sub(1).min(history.len());
        for n in 1..=max_hist {
            let hist = &history[history.len() - n..];
            if let Some(f) = self.counts.get(hist) {
                let distinct = f.next.len() as f64;
                let total = f.total as f64;
                let lambda = total / (total + distinct);
                let c = f.next.get(&next).copied().unwrap_or(0) as f64;
                p = lambda * (c / total) + (1.0 - lambda) * p;
            }
        }
        p
    }

    /// `P(word | history)` by surface form; `word` may be [`EOS`].
    pub fn prob(&self, history: &[&str], word: &str) -> f64 {
        let hist: Vec<u32> = history
            .iter()
            .map(|w| self.ids.get(*w).copied().unwrap_or(UNK_ID))
            .collect();
        let id = self.ids.get(word).copied().unwrap_or(UNK_ID);
        self.prob_id(&hist, id)
    }

    /// The distribution over all predictable tokens (words then `</s>`) given a history.
    pub fn next_distribution(&self, history: &[&str]) -> Vec<(String, f64)> {
        let hist: Vec<u32> = history
            .iter()
            .map(|w| self.ids.get(*w).copied().unwrap_or(UNK_ID))
            .collect();
        (FIRST_WORD_ID..self.tokens.len() as u32)
            .chain(std::iter::once(EOS_ID))
            .map(|id| (self.tokens[id as usize].clone(), self.prob_id(&hist, id)))
            .collect()
    }

    /// Log-probability of a complete reply (including `</s>`) after `context`.
    pub fn score_reply(&self, context: Option<&str>, words: &[&str]) -> f64 {
        let mut hist = self.history_prefix(context);
        let mut lp = 0.0;
        for w in words {
            let id = self.ids.get(*w).copied().unwrap_or(UNK_ID);
            lp += self.prob_id(&hist, id).ln();
            hist.push(id);
        }
        lp + self.prob_id(&hist, EOS_ID).ln()
    }

    /// Beam search over word sequences whose concatenated word abbreviations
    /// spell the query abbreviation (or match it key-by-key when noisy).
    ///
    /// Hypotheses that reach the same position with the same n-gram state
    /// have identical futures, so only the best `k` of them are kept before
    /// the beam is cut to `beam_width`.
    pub fn constrained_expand(&self, query: &ExpansionQuery, beam_width: usize) -> ExpansionResult {
        let target: Vec<char> = query.abbreviation.as_str().chars().collect();
        if target.is_empty() {
            return ExpansionResult::default();
        }
        let keep = self.order.saturating_sub(1);
        let context = query.context.last().map(String::as_str);
        let start = Hyp {
            words: Vec::new(),
            state: self.history_prefix(context),
            pos: 0,
            log_prob: 0.0,
        };
        let mut live = vec![start];
        let mut finished: Vec<Hyp> = Vec::new();
        while !live.is_empty() {
            let mut next: Vec<Hyp> = Vec::new();
            for h in &live {
                for w in self.words_at(&target, h.pos, query.noisy) {
                    let lp = h.log_prob + self.prob_id(&h.state, w.id).ln();
                    let mut state = h.state.clone();
                    state.push(w.id);
                    if state.len() > keep {
                        state.drain(..state.len() - keep);
                    }
                    let mut words = h.words.clone();
                    words.push(w.id);
                    let pos = h.pos + w.abbrev.len();
                    if pos == target.len() {
                        let lp = lp + self.prob_id(&state, EOS_ID).ln();
                        finished.push(Hyp {
                            words,
                            state,
                            pos,
                            log_prob: lp,
                        });
                    } else {
                        next.push(Hyp {
                            words,
                            state,
                            pos,
                            log_prob: lp,
                        });
                    }
                }
            }
            next.sort_by(|a, b| {
                b.log_prob
                    .total_cmp(&a.log_prob)
                    .then_with(|| a.words.cmp(&b.words))
            });
            let mut per_state: HashMap<(usize, Vec<u32>), usize> = HashMap::new();
            next.retain(|h| {
                let n = per_state.entry((h.pos, h.state.clone())).or_default();
                *n += 1;
                *n <= query.k
            });
            next.truncate(beam_width.max(1));
            live = next;
        }
        let raw = finished.len();
        let mut scored: Vec<(String, f64)> = finished
            .into_iter()
            .map(|h| (self.join(&h.words), h.log_prob))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(query.k);
        ExpansionResult {
            options: scored
                .into_iter()
                .map(|(p, lp)| ExpansionOption {
                    phrase: Phrase {
                        raw: p.clone(),
                        normalized: p,
                    },
                    count: 1,
                    score: Some(lp),
                })
                .collect(),
            raw_sample_count: raw,
        }
    }

    fn join(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.tokens[id as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn words_at<'a>(
        &'a self,
        target: &'a [char],
        pos: usize,
        noisy: bool,
    ) -> impl Iterator<Item = &'a VocabWord> + 'a {
        let typed = target[pos];
        let initials: Vec<char> = if noisy {
            let mut v: Vec<char> = self
                .by_initial
                .keys()
                .copied()
                .filter(|&c| self.layout.char_matches(typed, c))
                .collect();
            v.sort_unstable();
            v
        } else {
            vec![typed]
        };
        let rest = &target[pos..];
        initials
            .into_iter()
            .filter_map(move |c| self.by_initial.get(&c))
            .flatten()
            .filter(move |w| {
                w.abbrev.len() <= rest.len()
                    && w.abbrev.iter().zip(rest).all(|(&a, &t)| {
                        if noisy {
                            self.layout.char_matches(t, a)
                        } else {
                            a == t
                        }
                    })
            })
    }
}

#[derive(Debug, Clone)]
struct Hyp {
    words: Vec<u32>,
    state: Vec<u32>,
    pos: usize,
    log_prob: f64,
}

impl Expander for NgramModel {
    fn name(&self) -> &str {
        "ngram"
    }

    fn expand(
        &self,
        query: &ExpansionQuery,
        _rng: &mut dyn RngCore,
    ) -> Result<ExpansionResult, ExpandError> {
        Ok(self.constrained_expand(query, self.beam_width))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abbrev::Abbreviation;

    fn toy() -> NgramModel {
        NgramModel::train(
            3,
            [
                (Some("are you coming"), "i go"),
                (None, "i am"),
                (None, "can't go"),
                (Some("what now"), "i can't"),
            ],
        )
    }

    #[test]
    fn distribution_sums_to_one() {
        let m = toy();
        for hist in [
            vec![],
            vec![TURN],
            vec!["i", "can't"],
            vec!["unseen", "words"],
            vec![BOS, TURN],
        ] {
            let total: f64 = m.next_distribution(&hist).iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-9, "{hist:?}: {total}");
        }
    }

    #[test]
    fn prefix_constraint() {
        let m = toy();
        let q = ExpansionQuery::new(vec![], Abbreviation::parse("ig")).unwrap();
        let r = m.constrained_expand(&q, 64);
        assert_eq!(r.options[0].phrase.as_str(), "i go");
        assert!(r
            .phrases()
            .all(|p| crate::abbrev::abbreviate_text(p).as_str() == "ig"));
    }

    #[test]
    fn contraction_consumes_two_chars() {
        let m = toy();
        let q = ExpansionQuery::new(vec![], Abbreviation::parse("ct")).unwrap();
        let r = m.constrained_expand(&q, 64);
        assert_eq!(r.phrases().collect::<Vec<_>>(), vec!["can't"]);
    }

    #[test]
    fn no_completion() {
        let m = toy();
        let q = ExpansionQuery::new(vec![], Abbreviation::parse("q")).unwrap();
        assert!(m.constrained_expand(&q, 64).options.is_empty());
    }

    #[test]
    fn unigram_model_ignores_history() {
        let m = NgramModel::train(1, [(Some("x y"), "a b"), (None, "a c")]);
        assert_eq!(m.prob(&["a"], "b"), m.prob(&[], "b"));
        let total: f64 = m.next_distribution(&[]).iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
