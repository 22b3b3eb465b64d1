//! Keyboard typing-noise channel.
//!
//! The keyboard is a 3 x 10 grid of unit squares with no gaps. A keypress
//! aimed at a key lands at a point drawn from an isotropic 2D Gaussian
//! centred on that key; the key under the landing point is what gets typed.
//! Points that fall off the board are clamped onto the nearest edge key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::abbrev::Abbreviation;

pub const ROWS: usize = 3;
pub const COLS: usize = 10;

const DEFAULT_ROWS: [&str; ROWS] = ["qwertyuiop", "asdfghjkl'", "zxcvbnm,.!"];

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("layout needs exactly {expected} keys, got {got}")]
    KeyCount { expected: usize, got: usize },
    #[error("duplicate key label {0:?}")]
    DuplicateKey(char),
    #[error("sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("cannot estimate a character error rate from an empty corpus")]
    EmptyCorpus,
    #[error("draws must be at least 1")]
    NoDraws,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Key {
    pub label: char,
    pub row: usize,
    pub col: usize,
}

impl Key {
    pub fn center(&self) -> (f64, f64) {
        (self.col as f64 + 0.5, self.row as f64 + 0.5)
    }

    /// Chebyshev distance on the (row, col) grid.
    pub fn grid_distance(&self, other: &Key) -> usize {
        self.row
            .abs_diff(other.row)
            .max(self.col.abs_diff(other.col))
    }
}

/// A 30-key grid keyboard.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyboardLayout {
    keys: Vec<Key>,
}

impl Default for KeyboardLayout {
    /// qwerty letters with `'` ending the home row and `, . !` ending the bottom row.
    fn default() -> Self {
        KeyboardLayout::from_rows(DEFAULT_ROWS).expect("default layout is valid")
    }
}

impl KeyboardLayout {
    pub fn from_rows(rows: [&str; ROWS]) -> Result<Self, NoiseError> {
        let mut keys = Vec::with_capacity(ROWS * COLS);
        for (row, labels) in rows.iter().enumerate() {
            for (col, label) in labels.chars().enumerate() {
                if keys.iter().any(|k: &Key| k.label == label) {
                    return Err(NoiseError::DuplicateKey(label));
                }
                keys.push(Key { label, row, col });
            }
            if labels.chars().count() != COLS {
                return Err(NoiseError::KeyCount {
                    expected: ROWS * COLS,
                    got: rows.iter().map(|r| r.chars().count()).sum(),
                });
            }
        }
        Ok(KeyboardLayout { keys })
    }

    /// Keys in row-major order.
    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn key(&self, label: char) -> Option<&Key> {
        self.keys.iter().find(|k| k.label == label)
    }

    pub fn key_at(&self, row: usize, col: usize) -> &Key {
        &self.keys[row * COLS + col]
    }

    /// Label of the key square containing `(x, y)`.
    ///
    /// `x` grows to the right and `y` grows downward from the top-left corner
    /// of the board. Off-board points are clamped to the nearest key, and a
    /// point on a shared edge belongs to the lower-index (row-major) key.
    pub fn key_at_point(&self, x: f64, y: f64) -> char {
        let col = cell_index(x, COLS);
        let row = cell_index(y, ROWS);
        self.key_at(row, col).label
    }

    /// True iff both characters are on the board and their keys are the same
    /// or touch (8-neighbourhood).
    pub fn chars_match_nearby(&self, typed: char, candidate: char) -> bool {
        match (self.key(typed), self.key(candidate)) {
            (Some(a), Some(b)) => a.grid_distance(b) <= 1,
            _ => false,
        }
    }

    /// Character-level match used for noisy abbreviation filtering:
    /// identical characters always match, keyboard characters also match
    /// their neighbours.
    pub fn char_matches(&self, typed: char, candidate: char) -> bool {
        typed == candidate || self.chars_match_nearby(typed, candidate)
    }

    /// Equal-length, position-wise [`char_matches`](Self::char_matches).
    pub fn abbreviations_match_nearby(&self, typed: &str, candidate: &str) -> bool {
        let mut t = typed.chars();
        let mut c = candidate.chars();
        loop {
            match (t.next(), c.next()) {
                (None, None) => return true,
                (Some(a), Some(b)) if self.char_matches(a, b) => continue,
                _ => return false,
            }
        }
    }
}

fn cell_index(v: f64, cells: usize) -> usize {
    // ceil(v) - 1 sends integer boundaries to the lower cell.
    let idx = v.ceil() - 1.0;
    if idx.is_nan() || idx < 0.0 {
        0
    } else if idx >= cells as f64 {
        cells - 1
    } else {
        idx as usize
    }
}

/// A seeded keypress sampler.
///
/// Each instance owns its random stream; share the layout, not the model.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    sigma: f64,
    rng: ChaCha8Rng,
    passthrough: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self, NoiseError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(NoiseError::BadSigma(sigma));
        }
        Ok(NoiseModel {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
            passthrough: 0,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Characters that had no key and were passed through unchanged.
    pub fn passthrough_count(&self) -> u64 {
        self.passthrough
    }

    pub fn simulate_keypress(&mut self, layout: &KeyboardLayout, intended: char) -> char {
        let Some(key) = layout.key(intended) else {
            self.passthrough += 1;
            return intended;
        };
        if self.sigma == 0.0 {
            return intended;
        }
        let (cx, cy) = key.center();
        let dx: f64 = StandardNormal.sample(&mut self.rng);
        let dy: f64 = StandardNormal.sample(&mut self.rng);
        layout.key_at_point(cx + self.sigma * dx, cy + self.sigma * dy)
    }

    /// Applies [`simulate_keypress`](Self::simulate_keypress) to every character.
    pub fn simulate_typed_abbreviation(
        &mut self,
        layout: &KeyboardLayout,
        abbrev: &Abbreviation,
    ) -> Abbreviation {
        let typed: String = abbrev
            .as_str()
            .chars()
            .map(|c| self.simulate_keypress(layout, c))
            .collect();
        Abbreviation::from_normalized(typed)
    }
}

/// Monte-Carlo character error rate: simulates `draws` keypresses cycling
/// through the characters of `corpus` and returns the fraction altered.
pub fn estimate_cer(
    layout: &KeyboardLayout,
    sigma: f64,
    corpus: &[Abbreviation],
    draws: u64,
    seed: u64,
) -> Result<f64, NoiseError> {
    if draws == 0 {
        return Err(NoiseError::NoDraws);
    }
    let chars: Vec<char> = corpus.iter().flat_map(|a| a.as_str().chars()).collect();
    if chars.is_empty() {
        return Err(NoiseError::EmptyCorpus);
    }
    let mut model = NoiseModel::new(sigma, seed)?;
    let mut altered = 0u64;
    for &c in chars.iter().cycle().take(draws as usize) {
        if model.simulate_keypress(layout, c) != c {
            altered += 1;
        }
    }
    Ok(altered as f64 / draws as f64)
}

/// Empirical landing distribution over the 30 keys (row-major) for `draws`
/// presses of `intended`.
pub fn hit_frequencies(
    layout: &KeyboardLayout,
    sigma: f64,
    intended: char,
    draws: u64,
    seed: u64,
) -> Result<Vec<f64>, NoiseError> {
    if draws == 0 {
        return Err(NoiseError::NoDraws);
    }
    let mut model = NoiseModel::new(sigma, seed)?;
    let mut counts = vec![0u64; ROWS * COLS];
    for _ in 0..draws {
        let typed = model.simulate_keypress(layout, intended);
        if let Some(k) = layout.key(typed) {
            counts[k.row * COLS + k.col] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / draws as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_shape() {
        let layout = KeyboardLayout::default();
        assert_eq!(layout.keys().len(), 30);
        for c in 'a'..='z' {
            assert!(layout.key(c).is_some(), "{c} missing");
        }
        assert!(KeyboardLayout::from_rows(["qwertyuiop", "asdfghjkl", "zxcvbnm,.!"]).is_err());
        assert_eq!(
            KeyboardLayout::from_rows(["qwertyuiop", "asdfghjklq", "zxcvbnm,.!"]),
            Err(NoiseError::DuplicateKey('q'))
        );
    }

    #[test]
    fn key_at_point_examples() {
        let layout = KeyboardLayout::default();
        let (fx, fy) = layout.key('f').unwrap().center();
        assert_eq!(layout.key_at_point(fx, fy), 'f');
        assert_eq!(layout.key_at_point(-1.0, 0.5), 'q');
        assert_eq!(layout.key_at_point(3.5, 1.7), 'f');
        assert_eq!(layout.key_at_point(42.0, 9.0), '!');
        assert_eq!(layout.key_at_point(f64::NAN, 0.5), 'q');
        // Shared edges go to the lower-index key.
        assert_eq!(layout.key_at_point(1.0, 0.5), 'q');
        assert_eq!(layout.key_at_point(0.5, 1.0), 'q');
        assert_eq!(layout.key_at_point(1.0, 1.0), 'q');
    }

    #[test]
    fn zero_sigma_is_identity() {
        let layout = KeyboardLayout::default();
        let mut m = NoiseModel::new(0.0, 1).unwrap();
        assert_eq!(m.simulate_keypress(&layout, 'l'), 'l');
        let a = Abbreviation::parse("wyltsd");
        assert_eq!(m.simulate_typed_abbreviation(&layout, &a), a);
    }

    #[test]
    fn unmapped_chars_pass_through() {
        let layout = KeyboardLayout::default();
        let mut m = NoiseModel::new(0.5, 3).unwrap();
        assert_eq!(m.simulate_keypress(&layout, '7'), '7');
        assert_eq!(m.simulate_keypress(&layout, '#'), '#');
        assert_eq!(m.passthrough_count(), 2);
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(NoiseModel::new(-0.1, 0).is_err());
        assert!(NoiseModel::new(f64::INFINITY, 0).is_err());
    }

    #[test]
    fn nearby_examples() {
        let layout = KeyboardLayout::default();
        assert!(layout.chars_match_nearby('l', 'o'));
        assert!(layout.chars_match_nearby('q', 'q'));
        assert!(!layout.chars_match_nearby('q', 'p'));
        assert!(layout.chars_match_nearby('m', 'n'));
        assert!(layout.chars_match_nearby('l', '!'));
        assert!(!layout.chars_match_nearby('1', '1'));
        assert!(layout.char_matches('1', '1'));
        assert!(layout.abbreviations_match_nearby("wy!tsd", "wyltsd"));
        assert!(!layout.abbreviations_match_nearby("wy!tsd", "wyltsdx"));
    }

    #[test]
    fn cer_errors() {
        let layout = KeyboardLayout::default();
        assert_eq!(
            estimate_cer(&layout, 0.3, &[], 10, 0),
            Err(NoiseError::EmptyCorpus)
        );
        let corpus = [Abbreviation::parse("abc")];
        assert_eq!(
            estimate_cer(&layout, 0.3, &corpus, 0, 0),
            Err(NoiseError::NoDraws)
        );
        assert_eq!(estimate_cer(&layout, 0.0, &corpus, 1000, 0), Ok(0.0));
    }
}
