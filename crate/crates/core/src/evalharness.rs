//! Experiment orchestration: length filtering, noise injection, repeated
//! runs, context and prompt sweeps, and report output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogdata::{
    convert_dialogs, dialog_to_examples, read_dialogs, AEExample, ContextMode, CorpusFormat,
    DataError, Dialog,
};
use crate::expander::{
    build_lut, ExpandError, Expander, ExpansionQuery, NgramModel, PromptMode, PromptSpec,
    SamplingConfig,
};
use crate::metrics::{
    accuracy_at_k, aggregate_runs, default_bins, evaluate, sample_sd, BleuReduction, EvalRecord,
    LengthBin, MetricValues, MetricsError, MetricsReport, METRICS_CONVENTION,
};
use crate::noise::{KeyboardLayout, NoiseError, NoiseModel};

const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0001;
const TIE_STREAM: u64 = 0x7469_6562_7200_0002;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no examples left after filtering to abbreviation length <= {0}")]
    EmptyDataset(usize),
    #[error("need at least 4 dialogs for 4-shot windows, got {0}")]
    TooFewDialogs(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Data {
        path: PathBuf,
        #[source]
        source: DataError,
    },
    #[error(transparent)]
    Expand(#[from] ExpandError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Lut,
    Ngram,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSettings {
    pub url: String,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_prompt_mode")]
    pub prompt_mode: PromptMode,
}

fn default_prompt_mode() -> PromptMode {
    PromptMode::NoInstr
}

/// A full experiment description, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training dialog corpora (used to build the LUT or n-gram model).
    #[serde(default)]
    pub train: Vec<PathBuf>,
    pub test: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    pub backend: BackendKind,
    #[serde(default = "default_context")]
    pub context_mode: ContextMode,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_max_len")]
    pub max_abbrev_len: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_turn_cap")]
    pub turn_cap: usize,
    /// Only evaluate targets at these 1-based turns (all turns when empty).
    #[serde(default)]
    pub turns: Vec<usize>,
    #[serde(default)]
    pub bleu_reduction: BleuReduction,
    #[serde(default = "default_order")]
    pub ngram_order: usize,
    #[serde(default = "default_beam")]
    pub beam_width: usize,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub remote: Option<RemoteSettings>,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}
fn default_context() -> ContextMode {
    ContextMode::Full
}
fn default_k() -> usize {
    5
}
fn default_max_len() -> usize {
    10
}
fn default_runs() -> usize {
    3
}
fn default_turn_cap() -> usize {
    6
}
fn default_order() -> usize {
    3
}
fn default_beam() -> usize {
    64
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| EvalError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves relative data paths against `base` (normally the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.test);
        self.train.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.runs == 0 {
            return Err(EvalError::Config("runs must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(EvalError::Config("k must be at least 1".into()));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(EvalError::Config(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.backend != BackendKind::Remote && self.train.is_empty() {
            return Err(EvalError::Config(
                "lut and ngram backends need train data".into(),
            ));
        }
        if self.backend == BackendKind::Remote && self.remote.is_none() {
            return Err(EvalError::Config(
                "remote backend needs a [remote] section".into(),
            ));
        }
        Ok(())
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            context_mode: self.context_mode,
            sigma: self.sigma,
            k: self.k,
            max_abbrev_len: self.max_abbrev_len,
            runs: self.runs,
            seed: self.seed,
            bins: default_bins(),
            turn_cap: self.turn_cap,
            turns: self.turns.clone(),
            bleu_reduction: self.bleu_reduction,
            noisy_matching: None,
        }
    }
}

pub fn load_dialogs(path: &Path, format: CorpusFormat) -> Result<Vec<Dialog>, EvalError> {
    let file = File::open(path).map_err(|e| EvalError::Data {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    read_dialogs(BufReader::new(file), format).map_err(|source| EvalError::Data {
        path: path.to_path_buf(),
        source,
    })
}

/// Full-context examples of all train corpora in the config.
pub fn load_train_examples(config: &ExperimentConfig) -> Result<Vec<AEExample>, EvalError> {
    let mut out = Vec::new();
    for p in &config.train {
        let dialogs = load_dialogs(p, config.format)?;
        out.extend(convert_dialogs(&dialogs, ContextMode::Full).0);
    }
    Ok(out)
}

/// Builds the n-gram model from (last context turn, target) pairs.
pub fn train_ngram(examples: &[AEExample], order: usize, beam_width: usize) -> NgramModel {
    NgramModel::train(
        order,
        examples
            .iter()
            .map(|e| (e.context.last().map(String::as_str), e.full.raw.as_str())),
    )
    .with_beam_width(beam_width)
}

/// Builds a local backend (LUT or n-gram) from the config's train data.
pub fn build_local_backend(config: &ExperimentConfig) -> Result<Box<dyn Expander>, EvalError> {
    let train = load_train_examples(config)?;
    match config.backend {
        BackendKind::Lut => Ok(Box::new(build_lut(&train))),
        BackendKind::Ngram => Ok(Box::new(train_ngram(
            &train,
            config.ngram_order,
            config.beam_width,
        ))),
        BackendKind::Remote => Err(EvalError::Config(
            "the remote backend needs a transport; construct it with RemoteExpander".into(),
        )),
    }
}

/// Knobs for [`run_experiment`] that do not involve I/O.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub context_mode: ContextMode,
    pub sigma: f64,
    pub k: usize,
    pub max_abbrev_len: usize,
    pub runs: usize,
    pub seed: u64,
    pub bins: Vec<LengthBin>,
    pub turn_cap: usize,
    pub turns: Vec<usize>,
    pub bleu_reduction: BleuReduction,
    /// Nearby-key filtering; defaults to on exactly when `sigma > 0`.
    pub noisy_matching: Option<bool>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            context_mode: ContextMode::Full,
            sigma: 0.0,
            k: 5,
            max_abbrev_len: 10,
            runs: 3,
            seed: 0,
            bins: default_bins(),
            turn_cap: 6,
            turns: Vec::new(),
            bleu_reduction: BleuReduction::MaxOverOptions,
            noisy_matching: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub backend: String,
    pub settings: RunSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    pub convention: String,
    pub examples_total: usize,
    pub examples_evaluated: usize,
    pub bin_populations: BTreeMap<String, usize>,
    pub metrics: MetricsReport,
    pub runs: Vec<MetricsReport>,
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Examples kept for evaluation: abbreviation length within the limit and,
/// if requested, target turn in the allowed set.
pub fn select_examples<'a>(
    examples: &'a [AEExample],
    settings: &RunSettings,
) -> Vec<&'a AEExample> {
    examples
        .iter()
        .filter(|e| e.abbrev_len >= 1 && e.abbrev_len <= settings.max_abbrev_len)
        .filter(|e| settings.turns.is_empty() || settings.turns.contains(&e.turn_index))
        .collect()
}

/// Runs the evaluation loop `settings.runs` times over full-context
/// examples. Run `r` uses base seed `seed + r`; noise and tie-breaking draw
/// from separate streams derived from it.
pub fn run_experiment(
    examples: &[AEExample],
    backend: &dyn Expander,
    settings: &RunSettings,
) -> Result<ExperimentReport, EvalError> {
    if settings.runs == 0 {
        return Err(EvalError::Config("runs must be at least 1".into()));
    }
    let selected = select_examples(examples, settings);
    if selected.is_empty() {
        return Err(EvalError::EmptyDataset(settings.max_abbrev_len));
    }
    let layout = KeyboardLayout::default();
    let noisy = settings.noisy_matching.unwrap_or(settings.sigma > 0.0);
    let lengths: Vec<usize> = selected.iter().map(|e| e.abbrev_len).collect();
    let mut runs = Vec::with_capacity(settings.runs);
    for r in 0..settings.runs {
        let base = settings.seed.wrapping_add(r as u64);
        let mut noise = NoiseModel::new(settings.sigma, mix_seed(base, NOISE_STREAM))?;
        let tie_base = mix_seed(base, TIE_STREAM);
        let mut records = Vec::with_capacity(selected.len());
        for (i, ex) in selected.iter().enumerate() {
            let typed = noise.simulate_typed_abbreviation(&layout, &ex.shorthand);
            let context = settings.context_mode.select(&ex.context).to_vec();
            let query = ExpansionQuery::with_options(context, typed, noisy, settings.k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(tie_base, i as u64));
            let options = backend.expand(&query, &mut rng)?;
            records.push(EvalRecord {
                query,
                ground_truth: ex.full.clone(),
                options,
                turn_index: ex.turn_index,
            });
        }
        runs.push(evaluate(
            &records,
            &lengths,
            &settings.bins,
            settings.turn_cap,
            settings.bleu_reduction,
        )?);
    }
    let metrics = aggregate_runs(&runs)?;
    let bin_populations = settings
        .bins
        .iter()
        .map(|b| {
            (
                b.label(),
                lengths.iter().filter(|&&l| b.contains(l)).count(),
            )
        })
        .collect();
    Ok(ExperimentReport {
        backend: backend.name().to_string(),
        settings: settings.clone(),
        config: None,
        convention: METRICS_CONVENTION.to_string(),
        examples_total: examples.len(),
        examples_evaluated: selected.len(),
        bin_populations,
        metrics,
        runs,
    })
}

/// One report per context mode, same seeds for all.
pub fn context_sweep(
    examples: &[AEExample],
    backend: &dyn Expander,
    settings: &RunSettings,
    modes: &[ContextMode],
) -> Result<Vec<(ContextMode, ExperimentReport)>, EvalError> {
    modes
        .iter()
        .map(|&mode| {
            let s = RunSettings {
                context_mode: mode,
                ..settings.clone()
            };
            run_experiment(examples, backend, &s).map(|r| (mode, r))
        })
        .collect()
}

/// Which example of a dialog serves as its shot.
pub const DEFAULT_SHOT_TURN: usize = 2;

/// All windows of four consecutive dialogs, each rendered as a 4-shot
/// prompt using the turn-`shot_turn` example of each dialog (its last
/// example when the dialog is shorter).
pub fn few_shot_windows(train: &[Dialog], shot_turn: usize) -> Result<Vec<PromptSpec>, EvalError> {
    if train.len() < 4 {
        return Err(EvalError::TooFewDialogs(train.len()));
    }
    let shots: Vec<AEExample> = train
        .iter()
        .map(|d| {
            let ex = dialog_to_examples(d, ContextMode::Full);
            let idx = ex
                .iter()
                .position(|e| e.turn_index == shot_turn)
                .unwrap_or(ex.len().saturating_sub(1));
            ex.get(idx)
                .cloned()
                .ok_or_else(|| EvalError::Config(format!("dialog {} yields no examples", d.id)))
        })
        .collect::<Result<_, _>>()?;
    Ok(shots
        .windows(4)
        .map(|w| PromptSpec::few_shot(w.to_vec()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSweepReport {
    /// Accuracy@k per window, in window order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    /// Highest accuracy, lowest index on ties.
    pub best_index: usize,
    pub best_accuracy: f64,
}

/// Evaluates Accuracy@k for each prompt window. `make_backend` turns a
/// prompt spec into an expander (typically `RemoteExpander::with_spec`).
pub fn prompt_variance_sweep<F, E>(
    windows: &[PromptSpec],
    eval_set: &[AEExample],
    settings: &RunSettings,
    mut make_backend: F,
) -> Result<PromptSweepReport, EvalError>
where
    F: FnMut(&PromptSpec) -> E,
    E: Expander,
{
    if windows.is_empty() {
        return Err(EvalError::Config("no prompt windows".into()));
    }
    let selected = select_examples(eval_set, settings);
    if selected.is_empty() {
        return Err(EvalError::EmptyDataset(settings.max_abbrev_len));
    }
    let mut accuracies = Vec::with_capacity(windows.len());
    for spec in windows {
        let backend = make_backend(spec);
        let mut records = Vec::with_capacity(selected.len());
        for (i, ex) in selected.iter().enumerate() {
            let context = settings.context_mode.select(&ex.context).to_vec();
            let query =
                ExpansionQuery::with_options(context, ex.shorthand.clone(), false, settings.k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(settings.seed, i as u64));
            records.push(EvalRecord {
                options: backend.expand(&query, &mut rng)?,
                query,
                ground_truth: ex.full.clone(),
                turn_index: ex.turn_index,
            });
        }
        accuracies.push(accuracy_at_k(&records)?);
    }
    let mut best_index = 0;
    for (i, &a) in accuracies.iter().enumerate() {
        if a > accuracies[best_index] {
            best_index = i;
        }
    }
    Ok(PromptSweepReport {
        mean: crate::metrics::mean(&accuracies),
        sd: sample_sd(&accuracies),
        best_accuracy: accuracies[best_index],
        best_index,
        accuracies,
    })
}

fn write_rows<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    rows: impl IntoIterator<Item = (String, MetricValues)>,
) -> Result<(), EvalError> {
    w.write_record([
        "slice",
        "n",
        "acc_at_k",
        "bleu_at_k",
        "ksr_all",
        "ksr_success",
    ])?;
    for (label, v) in rows {
        w.write_record([
            label,
            v.n.to_string(),
            format!("{:.1}", v.acc_at_k),
            format!("{:.1}", v.bleu_at_k),
            format!("{:.1}", v.ksr_all),
            v.ksr_success.map(|s| format!("{s:.1}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `overall.csv`, `by_length.csv` and `by_turn.csv`
/// into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(std::io::Error::from)?;
    std::fs::write(dir.join("report.json"), json + "\n")?;

    let mut overall = csv::Writer::from_path(dir.join("overall.csv"))?;
    write_rows(
        &mut overall,
        [("all".to_string(), report.metrics.overall.clone())],
    )?;

    let mut by_len = csv::Writer::from_path(dir.join("by_length.csv"))?;
    write_rows(
        &mut by_len,
        report
            .metrics
            .per_bin
            .iter()
            .map(|(k, v)| (k.clone(), v.clone())),
    )?;

    let mut by_turn = csv::Writer::from_path(dir.join("by_turn.csv"))?;
    write_rows(
        &mut by_turn,
        report
            .metrics
            .per_turn
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone())),
    )?;

    let mut runs = csv::Writer::from_path(dir.join("runs.csv"))?;
    write_rows(
        &mut runs,
        report
            .runs
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("run{i}"), r.overall.clone())),
    )?;
    Ok(())
}

/// A dataset summary in the shape of a length-sliced table: one row per bin
/// plus the total of examples with abbreviation length up to `max_len`.
pub fn length_table(
    examples: &[AEExample],
    bins: &[LengthBin],
    max_len: usize,
) -> Vec<(String, usize)> {
    let mut rows: Vec<(String, usize)> = bins
        .iter()
        .map(|b| {
            (
                b.label(),
                examples.iter().filter(|e| b.contains(e.abbrev_len)).count(),
            )
        })
        .collect();
    rows.push((
        format!("1-{max_len}"),
        examples
            .iter()
            .filter(|e| (1..=max_len).contains(&e.abbrev_len))
            .count(),
    ));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expander::LookUpTable;

    fn corpus() -> Vec<Dialog> {
        vec![
            Dialog::from_texts(
                "1",
                &["Would you like to sit down?", "No, I'm fine standing up."],
            )
            .unwrap(),
            Dialog::from_texts("2", &["How are you?", "Good thanks.", "Great to hear."]).unwrap(),
        ]
    }

    #[test]
    fn memorizing_lut_is_perfect() {
        let (ex, _) = convert_dialogs(&corpus(), ContextMode::Full);
        let lut = build_lut(&ex);
        let rep = run_experiment(&ex, &lut, &RunSettings::default()).unwrap();
        assert_eq!(rep.metrics.overall.acc_at_k, 100.0);
        assert_eq!(rep.runs.len(), 3);
        assert_eq!(rep.metrics.run_stats.as_ref().unwrap().acc_at_k.sd, 0.0);
    }

    #[test]
    fn empty_after_filter() {
        let (ex, _) = convert_dialogs(&corpus(), ContextMode::Full);
        let s = RunSettings {
            max_abbrev_len: 0,
            ..RunSettings::default()
        };
        assert!(matches!(
            run_experiment(&ex, &LookUpTable::new(), &s),
            Err(EvalError::EmptyDataset(0))
        ));
    }

    #[test]
    fn windows() {
        let dialogs: Vec<Dialog> = (0..10)
            .map(|i| {
                Dialog::from_texts(
                    format!("{i}"),
                    &[format!("hello {i}"), format!("reply {i}")],
                )
                .unwrap()
            })
            .collect();
        let w = few_shot_windows(&dialogs, 2).unwrap();
        assert_eq!(w.len(), 7);
        for (i, spec) in w.iter().enumerate() {
            assert_eq!(spec.shots[0].dialog_id, format!("{i}"));
            assert_eq!(spec.shots.len(), 4);
        }
        assert_eq!(few_shot_windows(&dialogs[..4], 2).unwrap().len(), 1);
        assert!(matches!(
            few_shot_windows(&dialogs[..3], 2),
            Err(EvalError::TooFewDialogs(3))
        ));
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            train = ["train.jsonl"]
            test = "test.jsonl"
            backend = "lut"
            context_mode = "previous_1"
            sigma = 0.3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.runs, 3);
        assert_eq!(cfg.max_abbrev_len, 10);
        assert_eq!(cfg.context_mode, ContextMode::Previous1);
        assert_eq!(cfg.sampling, SamplingConfig::default());
        assert!(ExperimentConfig::from_toml("test = \"t\"\nbackend = \"lut\"").is_err());
        assert!(ExperimentConfig::from_toml("test = \"t\"\nbackend = \"remote\"").is_err());
        assert!(ExperimentConfig::from_toml(
            "test = \"t\"\nbackend = \"lut\"\ntrain=[\"x\"]\nruns = 0"
        )
        .is_err());
    }

    #[test]
    fn seeds_are_mixed() {
        assert_ne!(mix_seed(1, NOISE_STREAM), mix_seed(1, TIE_STREAM));
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
    }
}
