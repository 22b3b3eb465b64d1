use serde::{Deserialize, Serialize};

use crate::dialogdata::{instruction_for, render_block, AEExample};

use super::{ExpandError, ExpansionQuery};

/// Decoding parameters sent to a completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k_logits: u32,
    pub num_samples: usize,
    pub max_tokens: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 1.0,
            top_k_logits: 40,
            num_samples: 128,
            max_tokens: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Query block only.
    NoInstr,
    /// Instruction line, then the query block.
    ZeroShot,
    /// Four rendered examples, then the query block.
    FewShot,
}

pub const FEW_SHOT_COUNT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    #[serde(default)]
    pub shots: Vec<AEExample>,
    #[serde(default = "yes")]
    pub char_spaced: bool,
}

fn yes() -> bool {
    true
}

impl PromptSpec {
    pub fn no_instr() -> Self {
        PromptSpec {
            mode: PromptMode::NoInstr,
            shots: Vec::new(),
            char_spaced: true,
        }
    }

    pub fn zero_shot() -> Self {
        PromptSpec {
            mode: PromptMode::ZeroShot,
            ..Self::no_instr()
        }
    }

    pub fn few_shot(shots: Vec<AEExample>) -> Self {
        PromptSpec {
            mode: PromptMode::FewShot,
            shots,
            char_spaced: true,
        }
    }
}

/// Builds the model input for a query: optional instruction, shots, and
/// the query block left open at `Full: {`. Parts are joined by newlines.
pub fn build_prompt(spec: &PromptSpec, query: &ExpansionQuery) -> Result<String, ExpandError> {
    let mut parts: Vec<String> = Vec::new();
    match spec.mode {
        PromptMode::NoInstr => {}
        PromptMode::ZeroShot => parts.push(instruction_for(&query.context).to_string()),
        PromptMode::FewShot => {
            if spec.shots.len() != FEW_SHOT_COUNT {
                return Err(ExpandError::InvalidPrompt(format!(
                    "few-shot prompts need {FEW_SHOT_COUNT} shots, got {}",
                    spec.shots.len()
                )));
            }
            for shot in &spec.shots {
                parts.push(render_block(
                    &shot.context,
                    &shot.shorthand,
                    Some(&shot.full.raw),
                    spec.char_spaced,
                ));
            }
        }
    }
    parts.push(render_block(
        &query.context,
        &query.abbreviation,
        None,
        spec.char_spaced,
    ));
    Ok(parts.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abbrev::{normalize_phrase, Abbreviation};

    #[test]
    fn defaults() {
        let s = SamplingConfig::default();
        assert_eq!(
            (s.temperature, s.top_k_logits, s.num_samples, s.max_tokens),
            (1.0, 40, 128, 16)
        );
    }

    #[test]
    fn no_instr_prompt() {
        let q = ExpansionQuery::new(vec![], Abbreviation::parse("w y l t s d")).unwrap();
        assert_eq!(
            build_prompt(&PromptSpec::no_instr(), &q).unwrap(),
            "Shorthand: {w y l t s d}. Full: {"
        );
    }

    #[test]
    fn zero_shot_with_context() {
        let q = ExpansionQuery::new(
            vec!["Would you like to sit down?".into()],
            Abbreviation::parse("n,imfsu"),
        )
        .unwrap();
        let p = build_prompt(&PromptSpec::zero_shot(), &q).unwrap();
        assert!(p.starts_with(
            "Given previous turn(s) of conversation and acronym of reply, write the full phrase."
        ));
        assert!(p.ends_with(
            "Context: {Would you like to sit down?}. Shorthand: {n , i m f s u}. Full: {"
        ));
    }

    #[test]
    fn few_shot_needs_four() {
        let shot = AEExample::new(vec!["Hi".into()], normalize_phrase("Hello there"), 2);
        let q = ExpansionQuery::new(vec![], Abbreviation::parse("ht")).unwrap();
        assert!(build_prompt(&PromptSpec::few_shot(vec![shot.clone(); 3]), &q).is_err());
        let p = build_prompt(&PromptSpec::few_shot(vec![shot; 4]), &q).unwrap();
        let blocks: Vec<&str> = p.lines().collect();
        assert_eq!(blocks.len(), 5);
        assert_eq!(
            blocks[0],
            "Context: {Hi}. Shorthand: {h t}. Full: {Hello there}"
        );
        assert_eq!(blocks[4], "Shorthand: {h t}. Full: {");
    }
}
