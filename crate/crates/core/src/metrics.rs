//! Accuracy@k, BLEU@k and keystroke saving rates over expansion results.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::abbrev::Phrase;
use crate::expander::{ExpansionQuery, ExpansionResult};

/// Identifies the scoring conventions recorded in reports.
pub const METRICS_CONVENTION: &str =
    "bleu: whitespace tokens, n<=4, floor smoothing eps=0.1, effective order; ksr: chars incl. spaces";

pub const BLEU_MAX_ORDER: usize = 4;
pub const BLEU_SMOOTHING: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records to score")]
    Empty,
    #[error("reference phrase is empty")]
    EmptyReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query: ExpansionQuery,
    pub ground_truth: Phrase,
    pub options: ExpansionResult,
    /// 1-based dialog turn of the target, when known.
    #[serde(default)]
    pub turn_index: usize,
}

impl EvalRecord {
    pub fn is_hit(&self) -> bool {
        self.options.contains(self.ground_truth.as_str())
    }
}

/// How BLEU@k reduces the option list of one record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuReduction {
    /// Best BLEU among the options.
    #[default]
    MaxOverOptions,
    /// BLEU of the first-ranked option only.
    TopOption,
}

pub fn accuracy_at_k(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = records.iter().filter(|r| r.is_hit()).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

/// Sentence BLEU over whitespace tokens of the normalized phrases.
///
/// Modified n-gram precisions for n = 1..=4 combined by geometric mean,
/// with a brevity penalty when the candidate is shorter than the reference.
/// A precision with zero matches is floored at `0.1 / total`. Orders for
/// which the candidate has no n-grams are left out of the mean, so short
/// identical sentences still score 1.
pub fn sentence_bleu(candidate: &Phrase, reference: &Phrase) -> Result<f64, MetricsError> {
    let r: Vec<&str> = reference.as_str().split_whitespace().collect();
    if r.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let c: Vec<&str> = candidate.as_str().split_whitespace().collect();
    if c.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=BLEU_MAX_ORDER {
        if c.len() < n {
            break;
        }
        let total = c.len() + 1 - n;
        let mut ref_counts: HashMap<&[&str], usize> = HashMap::new();
        for g in r.windows(n) {
            *ref_counts.entry(g).or_default() += 1;
        }
        let mut cand_counts: HashMap<&[&str], usize> = HashMap::new();
        for g in c.windows(n) {
            *cand_counts.entry(g).or_default() += 1;
        }
        let matches: usize = cand_counts
            .iter()
            .map(|(g, &k)| k.min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matches == 0 {
            BLEU_SMOOTHING / total as f64
        } else {
            matches as f64 / total as f64
        };
        log_sum += p.ln();
        orders += 1;
    }
    let bp = if c.len() < r.len() {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / orders as f64).exp())
}

fn record_bleu(r: &EvalRecord, reduction: BleuReduction) -> Result<f64, MetricsError> {
    let mut best: f64 = 0.0;
    for (i, opt) in r.options.options.iter().enumerate() {
        if reduction == BleuReduction::TopOption && i > 0 {
            break;
        }
        best = best.max(sentence_bleu(&opt.phrase, &r.ground_truth)?);
    }
    Ok(best)
}

/// Mean over records of the best option BLEU (0 for records without options), in percent.
pub fn bleu_at_k(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    bleu_at_k_with(records, BleuReduction::MaxOverOptions)
}

pub fn bleu_at_k_with(
    records: &[EvalRecord],
    reduction: BleuReduction,
) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum = 0.0;
    for r in records {
        sum += record_bleu(r, reduction)?;
    }
    Ok(100.0 * sum / records.len() as f64)
}

/// Keystroke saving rate of one record, in percent.
///
/// A hit saves `1 - L_abbrev / L_full`; a miss additionally pays `L_full`
/// for retyping the phrase, which makes the rate negative.
pub fn ksr_single(abbrev_len: usize, full_len: usize, matched: bool) -> Option<f64> {
    if full_len == 0 {
        return None;
    }
    let la = abbrev_len as f64;
    let lf = full_len as f64;
    if matched {
        Some((1.0 - la / lf) * 100.0)
    } else {
        let v = (1.0 - (la + lf) / lf) * 100.0;
        debug_assert!((v - (-(la / lf) * 100.0)).abs() < 1e-9);
        Some(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ksr {
    pub ksr_all: f64,
    /// `None` when no record matched.
    pub ksr_success: Option<f64>,
    /// Records skipped because the ground truth is empty.
    pub excluded: usize,
}

pub fn ksr(records: &[EvalRecord]) -> Result<Ksr, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut all = Vec::new();
    let mut success = Vec::new();
    let mut excluded = 0;
    for r in records {
        let hit = r.is_hit();
        match ksr_single(
            r.query.abbreviation.char_len(),
            r.ground_truth.char_len(),
            hit,
        ) {
            Some(v) => {
                all.push(v);
                if hit {
                    success.push(v);
                }
            }
            None => excluded += 1,
        }
    }
    if all.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(Ksr {
        ksr_all: mean(&all),
        ksr_success: (!success.is_empty()).then(|| mean(&success)),
        excluded,
    })
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn one_decimal<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 10.0).round() / 10.0)
}

fn one_decimal_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => one_decimal(v, s),
        None => s.serialize_none(),
    }
}

/// The four headline numbers for one slice of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    #[serde(serialize_with = "one_decimal")]
    pub acc_at_k: f64,
    #[serde(serialize_with = "one_decimal")]
    pub bleu_at_k: f64,
    #[serde(serialize_with = "one_decimal")]
    pub ksr_all: f64,
    #[serde(serialize_with = "one_decimal_opt")]
    pub ksr_success: Option<f64>,
    pub n: usize,
    #[serde(default)]
    pub excluded: usize,
}

pub fn compute_values(
    records: &[EvalRecord],
    reduction: BleuReduction,
) -> Result<MetricValues, MetricsError> {
    let k = ksr(records)?;
    Ok(MetricValues {
        acc_at_k: accuracy_at_k(records)?,
        bleu_at_k: bleu_at_k_with(records, reduction)?,
        ksr_all: k.ksr_all,
        ksr_success: k.ksr_success,
        n: records.len(),
        excluded: k.excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    #[serde(serialize_with = "one_decimal")]
    pub mean: f64,
    #[serde(serialize_with = "one_decimal")]
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        MeanSd {
            mean: mean(xs),
            sd: sample_sd(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub runs: usize,
    pub acc_at_k: MeanSd,
    pub bleu_at_k: MeanSd,
    pub ksr_all: MeanSd,
    pub ksr_success: Option<MeanSd>,
}

/// Overall, per-length-bin and per-turn metrics.
///
/// With several runs, the values are means over runs and `run_stats`
/// carries mean and standard deviation of the overall numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: MetricValues,
    pub per_bin: BTreeMap<String, MetricValues>,
    pub per_turn: BTreeMap<usize, MetricValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_stats: Option<RunStats>,
}

/// An inclusive abbreviation-length range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBin {
    pub lo: usize,
    pub hi: usize,
}

impl LengthBin {
    pub fn contains(&self, len: usize) -> bool {
        (self.lo..=self.hi).contains(&len)
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }
}

/// 1-2, 3-4, 5-6, 7-8, 9-10.
pub fn default_bins() -> Vec<LengthBin> {
    (0..5)
        .map(|i| LengthBin {
            lo: 2 * i + 1,
            hi: 2 * i + 2,
        })
        .collect()
}

/// Scores one run. `lengths[i]` is the abbreviation length used for binning
/// record `i` (the noise-free length, so noisy and clean runs bin alike).
pub fn evaluate(
    records: &[EvalRecord],
    lengths: &[usize],
    bins: &[LengthBin],
    max_turn: usize,
    reduction: BleuReduction,
) -> Result<MetricsReport, MetricsError> {
    let overall = compute_values(records, reduction)?;
    let mut per_bin = BTreeMap::new();
    for bin in bins {
        let slice: Vec<EvalRecord> = records
            .iter()
            .zip(lengths)
            .filter(|(_, &l)| bin.contains(l))
            .map(|(r, _)| r.clone())
            .collect();
        if let Ok(v) = compute_values(&slice, reduction) {
            per_bin.insert(bin.label(), v);
        }
    }
    let mut per_turn = BTreeMap::new();
    for turn in 1..=max_turn {
        let slice: Vec<EvalRecord> = records
            .iter()
            .filter(|r| r.turn_index == turn)
            .cloned()
            .collect();
        if let Ok(v) = compute_values(&slice, reduction) {
            per_turn.insert(turn, v);
        }
    }
    Ok(MetricsReport {
        overall,
        per_bin,
        per_turn,
        run_stats: None,
    })
}

fn average_values(vals: &[&MetricValues]) -> MetricValues {
    let f = |g: &dyn Fn(&MetricValues) -> f64| mean(&vals.iter().map(|v| g(v)).collect::<Vec<_>>());
    let succ: Vec<f64> = vals.iter().filter_map(|v| v.ksr_success).collect();
    MetricValues {
        acc_at_k: f(&|v| v.acc_at_k),
        bleu_at_k: f(&|v| v.bleu_at_k),
        ksr_all: f(&|v| v.ksr_all),
        ksr_success: (!succ.is_empty()).then(|| mean(&succ)),
        n: vals[0].n,
        excluded: vals[0].excluded,
    }
}

/// Averages per-run reports and attaches mean/SD of the overall values.
pub fn aggregate_runs(runs: &[MetricsReport]) -> Result<MetricsReport, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let overall: Vec<&MetricValues> = runs.iter().map(|r| &r.overall).collect();
    let mut per_bin = BTreeMap::new();
    for key in runs[0].per_bin.keys() {
        let vals: Vec<&MetricValues> = runs.iter().filter_map(|r| r.per_bin.get(key)).collect();
        per_bin.insert(key.clone(), average_values(&vals));
    }
    let mut per_turn = BTreeMap::new();
    for key in runs[0].per_turn.keys() {
        let vals: Vec<&MetricValues> = runs.iter().filter_map(|r| r.per_turn.get(key)).collect();
        per_turn.insert(*key, average_values(&vals));
    }
    let col = |g: fn(&MetricValues) -> f64| overall.iter().map(|v| g(v)).collect::<Vec<_>>();
    let succ: Vec<f64> = overall.iter().filter_map(|v| v.ksr_success).collect();
    Ok(MetricsReport {
        overall: average_values(&overall),
        per_bin,
        per_turn,
        run_stats: Some(RunStats {
            runs: runs.len(),
            acc_at_k: MeanSd::of(&col(|v| v.acc_at_k)),
            bleu_at_k: MeanSd::of(&col(|v| v.bleu_at_k)),
            ksr_all: MeanSd::of(&col(|v| v.ksr_all)),
            ksr_success: (!succ.is_empty()).then(|| MeanSd::of(&succ)),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abbrev::{normalize_phrase, Abbreviation};
    use crate::expander::ExpansionOption;

    fn record(truth: &str, options: &[&str]) -> EvalRecord {
        let gt = normalize_phrase(truth);
        EvalRecord {
            query: ExpansionQuery::new(vec![], gt.abbreviate()).unwrap(),
            options: ExpansionResult {
                options: options
                    .iter()
                    .map(|o| ExpansionOption {
                        phrase: normalize_phrase(o),
                        count: 1,
                        score: None,
                    })
                    .collect(),
                raw_sample_count: options.len(),
            },
            ground_truth: gt,
            turn_index: 1,
        }
    }

    #[test]
    fn accuracy_counts_hits() {
        let mut recs: Vec<EvalRecord> = (0..7).map(|_| record("a b", &["x y", "a b"])).collect();
        recs.extend((0..3).map(|_| record("a b", &["a bee"])));
        assert_eq!(accuracy_at_k(&recs).unwrap(), 70.0);
        assert_eq!(accuracy_at_k(&[record("a", &[])]).unwrap(), 0.0);
        assert_eq!(accuracy_at_k(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn bleu_examples() {
        let p = normalize_phrase;
        assert_eq!(
            sentence_bleu(&p("it is a small cat"), &p("it is a small cat")).unwrap(),
            1.0
        );
        assert_eq!(sentence_bleu(&p("yes"), &p("yes")).unwrap(), 1.0);
        // Hand count: p1 = 4/5, p2 = 2/4, p3 = 1/3, p4 = 0 -> 0.1/2, BP = 1.
        let v = sentence_bleu(&p("it is a small cat"), &p("it is a tiny cat")).unwrap();
        approx::assert_abs_diff_eq!(v, 0.285_744_042_969_88, epsilon = 1e-12);
        let none = sentence_bleu(&p("we go now"), &p("it is late")).unwrap();
        assert!(none <= BLEU_SMOOTHING, "{none}");
        assert!(sentence_bleu(&p("x"), &p("")).is_err());
        assert_eq!(sentence_bleu(&p(""), &p("x")).unwrap(), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let p = normalize_phrase;
        let v = sentence_bleu(&p("it is"), &p("it is a cat")).unwrap();
        approx::assert_abs_diff_eq!(v, (1.0f64 - 2.0).exp(), epsilon = 1e-12);
    }

    #[test]
    fn bleu_at_k_examples() {
        assert_eq!(
            bleu_at_k(&[record("a b c", &["x", "a b c"])]).unwrap(),
            100.0
        );
        assert_eq!(bleu_at_k(&[record("a b c", &[])]).unwrap(), 0.0);
        let r = record("it is a tiny cat", &["we go", "it is a small cat"]);
        let max = bleu_at_k(&[r.clone()]).unwrap();
        let top = bleu_at_k_with(&[r], BleuReduction::TopOption).unwrap();
        assert!(max > top);
    }

    #[test]
    fn ksr_arithmetic() {
        let hit = ksr_single(6, 26, true).unwrap();
        let miss = ksr_single(6, 26, false).unwrap();
        assert_eq!(format!("{hit:.2}"), "76.92");
        assert_eq!(format!("{miss:.2}"), "-23.08");
        assert_eq!(ksr_single(5, 5, true), Some(0.0));
        assert_eq!(ksr_single(1, 0, true), None);
    }

    #[test]
    fn ksr_over_records() {
        let hit = record(
            "would you like to sit down",
            &["would you like to sit down"],
        );
        let miss = record(
            "would you like to sit down",
            &["would you like to stay down"],
        );
        let k = ksr(&[hit.clone(), miss]).unwrap();
        approx::assert_abs_diff_eq!(k.ksr_success.unwrap(), 100.0 * 20.0 / 26.0, epsilon = 1e-9);
        approx::assert_abs_diff_eq!(
            k.ksr_all,
            (100.0 * 20.0 / 26.0 - 100.0 * 6.0 / 26.0) / 2.0,
            epsilon = 1e-9
        );
        let only_miss = record("a b", &[]);
        assert_eq!(ksr(&[only_miss]).unwrap().ksr_success, None);
        let mut empty = hit;
        empty.ground_truth = normalize_phrase("");
        empty.query.abbreviation = Abbreviation::parse("x");
        assert_eq!(ksr(&[empty]), Err(MetricsError::Empty));
    }

    #[test]
    fn aggregate_two_runs() {
        let a = evaluate(
            &[record("a b", &["a b"])],
            &[2],
            &default_bins(),
            6,
            BleuReduction::MaxOverOptions,
        )
        .unwrap();
        let b = evaluate(
            &[record("a b", &[])],
            &[2],
            &default_bins(),
            6,
            BleuReduction::MaxOverOptions,
        )
        .unwrap();
        let agg = aggregate_runs(&[a, b]).unwrap();
        let stats = agg.run_stats.unwrap();
        assert_eq!(stats.acc_at_k.mean, 50.0);
        approx::assert_abs_diff_eq!(stats.acc_at_k.sd, 70.710_678_118_654_76, epsilon = 1e-9);
        assert_eq!(agg.per_bin["1-2"].acc_at_k, 50.0);
    }
}
