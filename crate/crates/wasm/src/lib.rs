//! Browser bindings for the static demo page in `www/`.
//!
//! Results cross the boundary as JSON strings so the page needs no generated
//! type glue beyond `wasm-bindgen`'s.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use shorthand::dialogdata::{convert_dialogs, read_dialogs, ContextMode, CorpusFormat};
use shorthand::evalharness::train_ngram;
use shorthand::expander::{build_lut, Expander, ExpansionQuery, LookUpTable, NgramModel};
use shorthand::metrics::ksr_single;
use shorthand::noise::{hit_frequencies, KeyboardLayout, NoiseModel, COLS, ROWS};
use shorthand::{normalize_phrase, Abbreviation};

const MINI_CORPUS: &str = include_str!("../data/mini_dialogs.tdc.txt");

#[derive(Debug, Serialize, PartialEq)]
pub struct AbbrevView {
    pub normalized: String,
    pub abbreviation: String,
    pub full_len: usize,
    pub abbrev_len: usize,
    /// Saving when the first offered expansion is right.
    pub ksr_hit: Option<f64>,
    /// Saving when it is wrong and the phrase has to be typed out.
    pub ksr_miss: Option<f64>,
}

pub fn abbreviation_view(text: &str) -> AbbrevView {
    let phrase = normalize_phrase(text);
    let abbrev = phrase.abbreviate();
    let (la, lf) = (abbrev.char_len(), phrase.char_len());
    AbbrevView {
        abbreviation: abbrev.into_string(),
        full_len: lf,
        abbrev_len: la,
        ksr_hit: ksr_single(la, lf, true),
        ksr_miss: ksr_single(la, lf, false),
        normalized: phrase.normalized,
    }
}

#[derive(Debug, Serialize, PartialEq)]
pub struct TypedView {
    pub intended: String,
    pub typed: String,
    pub changed: usize,
}

pub fn simulate(text: &str, sigma: f64, seed: u64) -> Result<TypedView, String> {
    let layout = KeyboardLayout::default();
    let mut model = NoiseModel::new(sigma, seed).map_err(|e| e.to_string())?;
    let intended = Abbreviation::parse(text);
    let typed = model.simulate_typed_abbreviation(&layout, &intended);
    let changed = intended
        .as_str()
        .chars()
        .zip(typed.as_str().chars())
        .filter(|(a, b)| a != b)
        .count();
    Ok(TypedView {
        intended: intended.into_string(),
        typed: typed.into_string(),
        changed,
    })
}

#[derive(Debug, Serialize)]
pub struct Heatmap {
    pub rows: Vec<String>,
    /// Landing frequency per key, row-major.
    pub freq: Vec<f64>,
}

pub fn heatmap(key: char, sigma: f64, draws: u64, seed: u64) -> Result<Heatmap, String> {
    let layout = KeyboardLayout::default();
    if layout.key(key).is_none() {
        return Err(format!("{key:?} is not on the keyboard"));
    }
    let freq = hit_frequencies(&layout, sigma, key, draws, seed).map_err(|e| e.to_string())?;
    let rows = (0..ROWS)
        .map(|r| (0..COLS).map(|c| layout.key_at(r, c).label).collect())
        .collect();
    Ok(Heatmap { rows, freq })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct OptionView {
    pub phrase: String,
    pub count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Expanders trained on the bundled dialogs.
#[wasm_bindgen]
pub struct Demo {
    lut: LookUpTable,
    ngram: NgramModel,
    dialogs: usize,
}

impl Demo {
    pub fn build() -> Demo {
        let dialogs = read_dialogs(MINI_CORPUS.as_bytes(), CorpusFormat::TdcTxt).expect("bundled corpus parses");
        let (examples, _) = convert_dialogs(&dialogs, ContextMode::Full);
        Demo {
            lut: build_lut(&examples),
            ngram: train_ngram(&examples, 3, 64),
            dialogs: dialogs.len(),
        }
    }

    /// `context` holds previous turns, one per line, oldest first.
    pub fn expand_options(
        &self,
        backend: &str,
        context: &str,
        abbreviation: &str,
        noisy: bool,
        k: usize,
    ) -> Result<Vec<OptionView>, String> {
        let context: Vec<String> = context
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let query = ExpansionQuery::with_options(context, Abbreviation::parse(abbreviation), noisy, k.max(1))
            .map_err(|e| e.to_string())?;
        let expander: &dyn Expander = match backend {
            "lut" => &self.lut,
            "ngram" => &self.ngram,
            other => return Err(format!("unknown backend {other}")),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let result = expander.expand(&query, &mut rng).map_err(|e| e.to_string())?;
        Ok(result
            .options
            .into_iter()
            .map(|o| OptionView {
                phrase: o.phrase.normalized,
                count: o.count,
                score: o.score,
            })
            .collect())
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo::build()
    }

    #[wasm_bindgen(js_name = dialogCount)]
    pub fn dialog_count(&self) -> usize {
        self.dialogs
    }

    /// JSON array of `{phrase, count, score?}`.
    pub fn expand(
        &self,
        backend: &str,
        context: &str,
        abbreviation: &str,
        noisy: bool,
        k: usize,
    ) -> Result<String, JsError> {
        self.expand_options(backend, context, abbreviation, noisy, k)
            .map(|o| to_json(&o))
            .map_err(|e| JsError::new(&e))
    }
}

impl Default for Demo {
    fn default() -> Self {
        Demo::build()
    }
}

#[wasm_bindgen(js_name = abbreviate)]
pub fn abbreviate_js(text: &str) -> String {
    to_json(&abbreviation_view(text))
}

#[wasm_bindgen(js_name = simulateTyping)]
pub fn simulate_js(text: &str, sigma: f64, seed: u32) -> Result<String, JsError> {
    simulate(text, sigma, seed.into())
        .map(|v| to_json(&v))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = keyHeatmap)]
pub fn heatmap_js(key: &str, sigma: f64, draws: u32, seed: u32) -> Result<String, JsError> {
    let mut chars = key.chars();
    let (Some(c), None) = (chars.next(), chars.next()) else {
        return Err(JsError::new("expected a single key"));
    };
    heatmap(c, sigma, draws.into(), seed.into())
        .map(|h| to_json(&h))
        .map_err(|e| JsError::new(&e))
}
