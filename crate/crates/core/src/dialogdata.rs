//! Dialog corpora to canonical abbreviation-expansion examples.
//!
//! Every turn of a dialog becomes one example: the first sentence of the
//! turn is the expansion target, and (depending on [`ContextMode`]) earlier
//! turns, with all of their sentences, form the context.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abbrev::{abbreviate, normalize_phrase, Abbreviation, Phrase};

pub const INSTRUCTION_NO_CONTEXT: &str = "Given acronym, write the full phrase.";
pub const INSTRUCTION_WITH_CONTEXT: &str =
    "Given previous turn(s) of conversation and acronym of reply, write the full phrase.";

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: dialog has no turns")]
    EmptyDialog { line: usize },
    #[error("unknown {what} {value:?}")]
    UnknownVariant { what: &'static str, value: String },
    #[error("cannot parse canonical example: {0}")]
    Canonical(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: usize,
    pub text: String,
    pub sentences: Vec<String>,
}

impl Turn {
    pub fn new(speaker: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let sentences = split_sentences(&text);
        Turn {
            speaker,
            text,
            sentences,
        }
    }

    /// The turn as it appears when used as context.
    pub fn context_text(&self) -> String {
        self.text.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialog {
    /// Builds a dialog with alternating speakers. Returns `None` for zero turns.
    pub fn from_texts<S: AsRef<str>>(id: impl Into<String>, texts: &[S]) -> Option<Self> {
        if texts.is_empty() {
            return None;
        }
        let turns = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Turn::new(i % 2, t.as_ref()))
            .collect();
        Some(Dialog {
            id: id.into(),
            turns,
        })
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// How much of the preceding conversation an example carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// All previous turns.
    Full,
    /// Only the immediately preceding turn.
    #[serde(rename = "previous_1")]
    Previous1,
    None,
}

impl ContextMode {
    pub const ALL: [ContextMode; 3] =
        [ContextMode::None, ContextMode::Previous1, ContextMode::Full];

    pub fn as_str(&self) -> &'static str {
        match self {
            ContextMode::Full => "full",
            ContextMode::Previous1 => "previous_1",
            ContextMode::None => "none",
        }
    }

    /// Restricts a full context (all previous turns, oldest first) to this mode.
    pub fn select<'a, T>(&self, full: &'a [T]) -> &'a [T] {
        match self {
            ContextMode::Full => full,
            ContextMode::Previous1 => &full[full.len().saturating_sub(1)..],
            ContextMode::None => &full[..0],
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextMode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(ContextMode::Full),
            "previous_1" | "previous1" => Ok(ContextMode::Previous1),
            "none" => Ok(ContextMode::None),
            other => Err(DataError::UnknownVariant {
                what: "context mode",
                value: other.to_string(),
            }),
        }
    }
}

/// One (context, shorthand, full) record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AEExample {
    #[serde(default)]
    pub dialog_id: String,
    pub context: Vec<String>,
    pub shorthand: Abbreviation,
    pub full: Phrase,
    /// 1-based position of the target turn in its dialog.
    pub turn_index: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Length of the noise-free abbreviation, used for length slicing.
    pub abbrev_len: usize,
}

impl AEExample {
    pub fn new(context: Vec<String>, full: Phrase, turn_index: usize) -> Self {
        let shorthand = abbreviate(&full);
        AEExample {
            dialog_id: String::new(),
            context,
            abbrev_len: shorthand.char_len(),
            shorthand,
            full,
            turn_index,
            noise_sigma: 0.0,
        }
    }
}

/// Splits at runs of `.`, `!`, `?` that are followed by whitespace or the
/// end of the text. Delimiters stay with their sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut end = i + 1;
            while end < chars.len() && matches!(chars[end], '.' | '!' | '?') {
                end += 1;
            }
            if end == chars.len() || chars[end].is_whitespace() {
                push_trimmed(&chars[start..end], &mut out);
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    push_trimmed(&chars[start..], &mut out);
    out
}

fn push_trimmed(chars: &[char], out: &mut Vec<String>) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Counters from a conversion pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionStats {
    pub dialogs: usize,
    pub examples: usize,
    /// Targets whose first sentence abbreviates to nothing (pure punctuation or empty).
    pub dropped_empty: usize,
}

/// One example per turn; see [`convert_dialogs`] for the dropped-target counter.
pub fn dialog_to_examples(dialog: &Dialog, mode: ContextMode) -> Vec<AEExample> {
    let mut stats = ConversionStats::default();
    examples_into(dialog, mode, &mut stats)
}

pub fn convert_dialogs(dialogs: &[Dialog], mode: ContextMode) -> (Vec<AEExample>, ConversionStats) {
    let mut stats = ConversionStats::default();
    let mut all = Vec::new();
    for d in dialogs {
        all.extend(examples_into(d, mode, &mut stats));
    }
    (all, stats)
}

fn examples_into(
    dialog: &Dialog,
    mode: ContextMode,
    stats: &mut ConversionStats,
) -> Vec<AEExample> {
    stats.dialogs += 1;
    let context_texts: Vec<String> = dialog.turns.iter().map(Turn::context_text).collect();
    let mut out = Vec::with_capacity(dialog.turns.len());
    for (i, turn) in dialog.turns.iter().enumerate() {
        let first = turn.sentences.first().map(String::as_str).unwrap_or("");
        let full = normalize_phrase(first);
        let context = mode.select(&context_texts[..i]).to_vec();
        let mut ex = AEExample::new(context, full, i + 1);
        if ex.shorthand.is_empty() {
            stats.dropped_empty += 1;
            continue;
        }
        ex.dialog_id = dialog.id.clone();
        out.push(ex);
    }
    stats.examples += out.len();
    out
}

/// Which duplicate criterion matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicateKind {
    /// Same length, every turn identical (case-insensitive).
    AllTurns,
    /// Same length, at least three turn positions identical (case-insensitive).
    ThreeOrMoreTurns,
}

pub fn duplicate_kind(a: &Dialog, b: &Dialog) -> Option<DuplicateKind> {
    if a.turns.len() != b.turns.len() {
        return None;
    }
    let equal = a
        .turns
        .iter()
        .zip(&b.turns)
        .filter(|(x, y)| same_text(&x.text, &y.text))
        .count();
    if equal == a.turns.len() {
        Some(DuplicateKind::AllTurns)
    } else if equal >= 3 {
        Some(DuplicateKind::ThreeOrMoreTurns)
    } else {
        None
    }
}

pub fn is_duplicate_dialog(a: &Dialog, b: &Dialog) -> bool {
    duplicate_kind(a, b).is_some()
}

fn same_text(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedDialog {
    pub test_id: String,
    pub train_id: String,
    pub criterion: DuplicateKind,
}

/// Test dialogs that do not duplicate any train dialog, in their original
/// order, plus one report row per removed dialog (first matching train dialog).
pub fn dedup_split_report(test: &[Dialog], train: &[Dialog]) -> (Vec<Dialog>, Vec<RemovedDialog>) {
    let mut by_len: HashMap<usize, Vec<&Dialog>> = HashMap::new();
    for d in train {
        by_len.entry(d.turns.len()).or_default().push(d);
    }
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for t in test {
        let hit = by_len
            .get(&t.turns.len())
            .into_iter()
            .flatten()
            .find_map(|tr| duplicate_kind(t, tr).map(|k| (tr, k)));
        match hit {
            Some((tr, criterion)) => removed.push(RemovedDialog {
                test_id: t.id.clone(),
                train_id: tr.id.clone(),
                criterion,
            }),
            None => kept.push(t.clone()),
        }
    }
    (kept, removed)
}

pub fn dedup_split(test: &[Dialog], train: &[Dialog]) -> Vec<Dialog> {
    dedup_split_report(test, train).0
}

/// Optional instruction prefix of a rendered example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instruction {
    None,
    ZeroShot,
}

pub fn instruction_for(context: &[String]) -> &'static str {
    if context.is_empty() {
        INSTRUCTION_NO_CONTEXT
    } else {
        INSTRUCTION_WITH_CONTEXT
    }
}

/// Renders `Context: {..} {..}. Shorthand: {..}. Full: {..}`.
///
/// `char_spaced` separates abbreviation characters with spaces, which is
/// how abbreviations are shown to models.
pub fn render_canonical(
    example: &AEExample,
    instruction: Instruction,
    char_spaced: bool,
) -> String {
    let body = render_block(
        &example.context,
        &example.shorthand,
        Some(&example.full.raw),
        char_spaced,
    );
    match instruction {
        Instruction::None => body,
        Instruction::ZeroShot => format!("{}\n{}", instruction_for(&example.context), body),
    }
}

/// Renders one block. With `full == None` the block stops right after
/// `Full: {`, ready for a model to continue.
pub fn render_block(
    context: &[String],
    shorthand: &Abbreviation,
    full: Option<&str>,
    char_spaced: bool,
) -> String {
    let mut out = String::new();
    if !context.is_empty() {
        out.push_str("Context:");
        for turn in context {
            out.push_str(" {");
            out.push_str(turn);
            out.push('}');
        }
        out.push_str(". ");
    }
    out.push_str("Shorthand: {");
    if char_spaced {
        out.push_str(&shorthand.char_spaced());
    } else {
        out.push_str(shorthand.as_str());
    }
    out.push_str("}. Full: {");
    if let Some(full) = full {
        out.push_str(full);
        out.push('}');
    }
    out
}

/// A parsed canonical block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCanonical {
    pub context: Vec<String>,
    pub shorthand: Abbreviation,
    pub full: Option<String>,
}

/// Inverse of [`render_block`] (instruction lines, if any, are skipped).
pub fn parse_canonical(text: &str) -> Result<ParsedCanonical, DataError> {
    let start = text
        .find("Context: {")
        .or_else(|| text.find("Shorthand: {"))
        .ok_or_else(|| DataError::Canonical("no Context or Shorthand clause".into()))?;
    let mut rest = &text[start..];
    let mut context = Vec::new();
    if let Some(after) = rest.strip_prefix("Context:") {
        rest = after;
        while let Some(after) = rest.strip_prefix(" {") {
            let close = after
                .find('}')
                .ok_or_else(|| DataError::Canonical("unterminated context turn".into()))?;
            context.push(after[..close].to_string());
            rest = &after[close + 1..];
        }
        rest = rest
            .strip_prefix(". ")
            .ok_or_else(|| DataError::Canonical("expected '. ' after context".into()))?;
    }
    let after = rest
        .strip_prefix("Shorthand: {")
        .ok_or_else(|| DataError::Canonical("expected Shorthand clause".into()))?;
    let close = after
        .find('}')
        .ok_or_else(|| DataError::Canonical("unterminated shorthand".into()))?;
    let shorthand = Abbreviation::parse(&after[..close]);
    let rest = after[close + 1..]
        .strip_prefix(". Full: {")
        .ok_or_else(|| DataError::Canonical("expected Full clause".into()))?;
    let full = rest.find('}').map(|c| rest[..c].to_string());
    Ok(ParsedCanonical {
        context,
        shorthand,
        full,
    })
}

/// Input corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// `{"id": .., "turns": [{"speaker": .., "text": ..}]}` per line.
    Jsonl,
    /// One dialog per line, turns separated by tabs.
    TdcTxt,
}

impl FromStr for CorpusFormat {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tdc-txt" | "tdc" => Ok(CorpusFormat::TdcTxt),
            other => Err(DataError::UnknownVariant {
                what: "corpus format",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Deserialize)]
struct RawTurn {
    #[serde(default)]
    speaker: Option<usize>,
    text: String,
}

#[derive(Deserialize)]
struct RawDialog {
    #[serde(default)]
    id: Option<String>,
    turns: Vec<RawTurn>,
}

pub fn read_dialogs<R: BufRead>(reader: R, format: CorpusFormat) -> Result<Vec<Dialog>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let dialog = match format {
            CorpusFormat::Jsonl => {
                let raw: RawDialog =
                    serde_json::from_str(&line).map_err(|source| DataError::Json {
                        line: lineno,
                        source,
                    })?;
                if raw.turns.is_empty() {
                    return Err(DataError::EmptyDialog { line: lineno });
                }
                Dialog {
                    id: raw.id.unwrap_or_else(|| format!("{lineno}")),
                    turns: raw
                        .turns
                        .into_iter()
                        .enumerate()
                        .map(|(j, t)| Turn::new(t.speaker.unwrap_or(j % 2), t.text))
                        .collect(),
                }
            }
            CorpusFormat::TdcTxt => {
                let texts: Vec<&str> = line.split('\t').filter(|t| !t.trim().is_empty()).collect();
                Dialog::from_texts(format!("{lineno}"), &texts)
                    .ok_or(DataError::EmptyDialog { line: lineno })?
            }
        };
        out.push(dialog);
    }
    Ok(out)
}

pub fn write_dialogs_jsonl<W: Write>(mut w: W, dialogs: &[Dialog]) -> Result<(), DataError> {
    #[derive(Serialize)]
    struct OutTurn<'a> {
        speaker: usize,
        text: &'a str,
    }
    #[derive(Serialize)]
    struct OutDialog<'a> {
        id: &'a str,
        turns: Vec<OutTurn<'a>>,
    }
    for d in dialogs {
        let rec = OutDialog {
            id: &d.id,
            turns: d
                .turns
                .iter()
                .map(|t| OutTurn {
                    speaker: t.speaker,
                    text: &t.text,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(reader: R) -> Result<Vec<AEExample>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| DataError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn write_examples<W: Write>(mut w: W, examples: &[AEExample]) -> Result<(), DataError> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            split_sentences("Been sitting all day. Work was just one meeting after another."),
            vec![
                "Been sitting all day.",
                "Work was just one meeting after another."
            ]
        );
        assert_eq!(split_sentences("hello"), vec!["hello"]);
        assert_eq!(split_sentences("ok... fine"), vec!["ok...", "fine"]);
        assert_eq!(split_sentences("3.5 is fine"), vec!["3.5 is fine"]);
        assert_eq!(split_sentences("Really?! Yes."), vec!["Really?!", "Yes."]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn context_modes() {
        let d = Dialog::from_texts("d", &["one", "two", "three"]).unwrap();
        let prev = dialog_to_examples(&d, ContextMode::Previous1);
        assert_eq!(prev[2].context, vec!["two"]);
        assert!(prev[0].context.is_empty());
        let none = dialog_to_examples(&d, ContextMode::None);
        assert!(none.iter().all(|e| e.context.is_empty()));
        let full = dialog_to_examples(&d, ContextMode::Full);
        assert_eq!(full[2].context, vec!["one", "two"]);
        assert_eq!(full[2].context.last(), prev[2].context.last());
    }

    #[test]
    fn single_turn_dialog() {
        let d = Dialog::from_texts("d", &["Hi there."]).unwrap();
        for mode in ContextMode::ALL {
            let ex = dialog_to_examples(&d, mode);
            assert_eq!(ex.len(), 1);
            assert!(ex[0].context.is_empty());
            assert_eq!(ex[0].turn_index, 1);
        }
        assert!(Dialog::from_texts::<&str>("e", &[]).is_none());
    }

    #[test]
    fn punctuation_targets_are_dropped() {
        let d = Dialog::from_texts("d", &["Hi.", "...", "Bye."]).unwrap();
        let (ex, stats) = convert_dialogs(&[d], ContextMode::Full);
        assert_eq!(ex.len(), 2);
        assert_eq!(stats.dropped_empty, 1);
        assert_eq!(ex[1].turn_index, 3);
        assert_eq!(ex[1].context, vec!["Hi.", "..."]);
    }

    #[test]
    fn zero_shot_instruction() {
        let ex = AEExample::new(vec![], normalize_phrase("Would you like to sit down?"), 1);
        let r = render_canonical(&ex, Instruction::ZeroShot, false);
        assert!(r.starts_with("Given acronym, write the full phrase."));
        let ex2 = AEExample::new(vec!["Hi".into()], normalize_phrase("Hello"), 2);
        let r2 = render_canonical(&ex2, Instruction::ZeroShot, false);
        assert!(r2.starts_with(INSTRUCTION_WITH_CONTEXT));
    }

    #[test]
    fn parse_errors() {
        assert!(parse_canonical("nothing here").is_err());
        assert!(parse_canonical("Context: {a} Shorthand: {x}. Full: {").is_err());
        assert!(parse_canonical("Shorthand: {abc").is_err());
    }

    #[test]
    fn reads_both_formats() {
        let jsonl =
            "{\"id\":\"a\",\"turns\":[{\"speaker\":0,\"text\":\"Hi.\"},{\"text\":\"Hello!\"}]}\n\n";
        let d = read_dialogs(jsonl.as_bytes(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].turns[1].speaker, 1);
        let tdc = "Hi.\tHello!\tBye.\nA\tB\n";
        let d = read_dialogs(tdc.as_bytes(), CorpusFormat::TdcTxt).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].turns.len(), 3);
        assert_eq!(d[1].id, "2");
        let bad = "{\"id\":\"a\",\"turns\":[]}\n";
        assert!(matches!(
            read_dialogs(bad.as_bytes(), CorpusFormat::Jsonl),
            Err(DataError::EmptyDialog { line: 1 })
        ));
    }

    #[test]
    fn example_jsonl_round_trip() {
        let d = Dialog::from_texts(
            "x",
            &["Would you like to sit down?", "No, I'm fine standing up."],
        )
        .unwrap();
        let ex = dialog_to_examples(&d, ContextMode::Full);
        let mut buf = Vec::new();
        write_examples(&mut buf, &ex).unwrap();
        assert_eq!(read_examples(buf.as_slice()).unwrap(), ex);
    }
}
