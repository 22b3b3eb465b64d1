//! Phrase normalization and the word-initial abbreviation scheme.
//!
//! Each word contributes its initial letter. Contractions are split at the
//! apostrophe and contribute one initial per part (`can't` -> `ct`), Arabic
//! numerals are kept whole, and punctuation attached to a word keeps its
//! position relative to the emitted initial (`no,` -> `n,`). Sentence-final
//! punctuation is removed during normalization, so it never reaches the
//! abbreviation.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Characters removed from the end of a phrase.
pub const SENTENCE_FINAL: [char; 3] = ['.', '!', '?'];

/// A phrase together with its normalized form.
///
/// The normalized form is lowercased, single-spaced and has no trailing
/// sentence-final punctuation. Two phrases are considered the same expansion
/// iff their normalized forms are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Phrase {
    pub raw: String,
    pub normalized: String,
}

impl Phrase {
    pub fn new(raw: impl Into<String>) -> Self {
        normalize_phrase(&raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.normalized
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    /// Length in characters of the normalized form, spaces included.
    pub fn char_len(&self) -> usize {
        self.normalized.chars().count()
    }

    pub fn abbreviate(&self) -> Abbreviation {
        abbreviate(self)
    }
}

impl fmt::Display for Phrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.normalized)
    }
}

/// An abbreviation string: lowercase, no whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Abbreviation(String);

impl Abbreviation {
    /// Builds an abbreviation from typed input.
    ///
    /// Whitespace is dropped (so character-spaced prompts such as
    /// `w y l t s d` are accepted) and letters are lowercased.
    pub fn parse(typed: &str) -> Self {
        let mut out = String::with_capacity(typed.len());
        for c in typed.chars().filter(|c| !c.is_whitespace()) {
            out.extend(c.to_lowercase());
        }
        Abbreviation(out)
    }

    /// Wraps a string already known to satisfy the invariants.
    pub(crate) fn from_normalized(s: String) -> Self {
        debug_assert!(!s.chars().any(|c| c.is_whitespace() || c.is_uppercase()));
        Abbreviation(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of characters, which is the number of keypresses needed to type it.
    pub fn char_len(&self) -> usize {
        self.0.chars().count()
    }

    /// Characters separated by single spaces, the form used in model prompts.
    pub fn char_spaced(&self) -> String {
        let mut out = String::with_capacity(self.0.len() * 2);
        for (i, c) in self.0.chars().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push(c);
        }
        out
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for Abbreviation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Abbreviation {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Lowercases, collapses whitespace runs to one space, trims, and strips
/// sentence-final punctuation from the end.
pub fn normalize_phrase(raw: &str) -> Phrase {
    let mut normalized = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !normalized.is_empty() {
            normalized.push(' ');
        }
        normalized.extend(word.chars().flat_map(char::to_lowercase));
    }
    // Stripping "b ." leaves "b " behind, so trim whitespace in the same loop.
    loop {
        let trimmed = normalized.trim_end_matches(SENTENCE_FINAL).trim_end();
        if trimmed.len() == normalized.len() {
            break;
        }
        normalized.truncate(trimmed.len());
    }
    Phrase {
        raw: raw.to_string(),
        normalized,
    }
}

/// Abbreviates a normalized phrase.
pub fn abbreviate(phrase: &Phrase) -> Abbreviation {
    let mut out = String::new();
    for token in phrase.normalized.split_whitespace() {
        push_word_abbreviation(token, &mut out);
    }
    Abbreviation::from_normalized(out)
}

/// Normalizes `text` and abbreviates it.
pub fn abbreviate_text(text: &str) -> Abbreviation {
    abbreviate(&normalize_phrase(text))
}

/// The contribution of a single whitespace-delimited token to the phrase
/// abbreviation.
pub fn word_abbreviation(token: &str) -> String {
    let mut out = String::new();
    push_word_abbreviation(token, &mut out);
    out
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '\u{02bc}')
}

fn is_word_char(c: char) -> bool {
    c.is_alphabetic() || c.is_ascii_digit()
}

fn push_lower(c: char, out: &mut String) {
    out.extend(c.to_lowercase());
}

fn push_word_abbreviation(token: &str, out: &mut String) {
    let chars: Vec<char> = token.chars().filter(|c| !c.is_whitespace()).collect();
    let first = chars.iter().position(|&c| is_word_char(c));
    let Some(first) = first else {
        // No letters or digits: the token is punctuation, keep it (minus apostrophes).
        out.extend(chars.iter().filter(|&&c| !is_apostrophe(c)));
        return;
    };
    let last = chars
        .iter()
        .rposition(|&c| is_word_char(c))
        .unwrap_or(first);

    out.extend(chars[..first].iter().filter(|&&c| !is_apostrophe(c)));
    for part in chars[first..=last].split(|&c| is_apostrophe(c)) {
        push_part(part, out);
    }
    out.extend(chars[last + 1..].iter().filter(|&&c| !is_apostrophe(c)));
}

/// One apostrophe-delimited part of a word.
///
/// Numerals (no letters) are kept whole including internal separators
/// (`3.5`, `10:30`). Otherwise the leading digit run, if any, is followed
/// by the first letter (`2nd` -> `2n`), and a part made only of punctuation
/// contributes nothing.
fn push_part(part: &[char], out: &mut String) {
    if part.is_empty() {
        return;
    }
    if !part.iter().any(|c| c.is_alphabetic()) {
        if part.iter().any(|c| c.is_ascii_digit()) {
            out.extend(part.iter());
        }
        return;
    }
    let digits = part
        .iter()
        .skip_while(|c| !c.is_ascii_digit() && !c.is_alphabetic())
        .take_while(|c| c.is_ascii_digit());
    out.extend(digits);
    if let Some(&letter) = part.iter().find(|c| c.is_alphabetic()) {
        push_lower(letter, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab(s: &str) -> String {
        abbreviate_text(s).into_string()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_phrase("No, I'm fine standing up!").normalized,
            "no, i'm fine standing up"
        );
        assert_eq!(normalize_phrase("hello").normalized, "hello");
        assert_eq!(normalize_phrase("  A   B. ").normalized, "a b");
        assert_eq!(normalize_phrase("").normalized, "");
        assert_eq!(normalize_phrase("really?!...").normalized, "really");
        assert_eq!(normalize_phrase("wait . ! ?").normalized, "wait");
        assert_eq!(normalize_phrase("?!").normalized, "");
    }

    #[test]
    fn golden_abbreviations() {
        assert_eq!(ab("would you like to sit down"), "wyltsd");
        assert_eq!(ab("no, i'm fine standing up"), "n,imfsu");
        assert_eq!(ab("it feels good to stretch my legs a bit"), "ifgtsmlab");
        assert_eq!(ab("can't"), "ct");
        assert_eq!(ab("see you at 10 o'clock"), "sya10oc");
        assert_eq!(ab("ok, but be quick"), "o,bbq");
        assert_eq!(ab("OK, but be quick."), "o,bbq");
        assert_eq!(ab(""), "");
    }

    #[test]
    fn word_level() {
        assert_eq!(word_abbreviation("i'm"), "im");
        assert_eq!(word_abbreviation("10"), "10");
        assert_eq!(word_abbreviation("x"), "x");
        assert_eq!(word_abbreviation("no,"), "n,");
        assert_eq!(word_abbreviation("well-known"), "w");
        assert_eq!(word_abbreviation("2nd"), "2n");
        assert_eq!(word_abbreviation("rock'n'roll"), "rnr");
        assert_eq!(word_abbreviation("y'all'd've"), "yadv");
        assert_eq!(word_abbreviation("$5"), "$5");
        assert_eq!(word_abbreviation("#1"), "#1");
        assert_eq!(word_abbreviation("3.5"), "3.5");
        assert_eq!(word_abbreviation("10:30"), "10:30");
        assert_eq!(word_abbreviation("\"hi\","), "\"h\",");
        assert_eq!(word_abbreviation("dogs'"), "d");
        assert_eq!(word_abbreviation("-"), "-");
        assert_eq!(word_abbreviation("&"), "&");
        assert_eq!(word_abbreviation("Élan"), "é");
        assert_eq!(word_abbreviation("can\u{2019}t"), "ct");
    }

    #[test]
    fn abbreviation_parse_strips_spaces() {
        assert_eq!(Abbreviation::parse("w y l T s d").as_str(), "wyltsd");
        assert_eq!(Abbreviation::parse("wyltsd").char_spaced(), "w y l t s d");
    }
}
