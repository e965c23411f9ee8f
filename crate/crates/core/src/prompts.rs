//! Three-layer prompt assembly.
//!
//! Every generation call is built from a meta layer (the collaborative
//! framing plus the persona's identity and parameter layers), a context layer
//! (sparkle, compressed history, the beat at hand) and a constraint layer (the
//! required output shape). Wording lives in editable template files with
//! `{{name}}` placeholders; see [`PromptTemplates`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    serialize_beat, Persona, SessionStatus, StoryBeat, StorySession, DIALOGUE_RATIO_TARGET,
    LEXICAL_DIVERSITY_TARGET,
};
use crate::gateway::{
    compress_history, BackendProfile, GenerationParams, OutputFormat, PromptBundle, Purpose,
    HISTORY_TOKEN_BUDGET,
};

/// Beat-generation and expansion stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InitialBeat,
    NextBeat,
    Expansion,
}

impl Stage {
    /// The beat stage for a session's next round.
    pub fn for_next_beat(session: &StorySession) -> Stage {
        if session.beats.is_empty() {
            Stage::InitialBeat
        } else {
            Stage::NextBeat
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Stage::InitialBeat => "initial_beat",
            Stage::NextBeat => "next_beat",
            Stage::Expansion => "expansion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("stage {stage:?} is not available while the session is {status:?}: {reason}")]
    IllegalStage {
        stage: Stage,
        status: SessionStatus,
        reason: String,
    },
    #[error("template `{template}` uses unknown placeholder `{name}`")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template `{0}` has an unclosed placeholder")]
    Unclosed(String),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

/// Inclusive bounds on the number of key events for one beat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRange {
    pub min: usize,
    pub max: usize,
}

impl EventRange {
    pub fn contains(&self, n: usize) -> bool {
        (self.min..=self.max).contains(&n)
    }
}

/// Event-count band for beat `beat_index` of `total_beats`.
///
/// The opening `ceil(N/2)` beats take 3–4 events, the closing `floor(N/3)`
/// take 4–5, and any beats between take 3–5. Where the bands would overlap
/// the closing band wins, and a one-beat story is treated as all climax.
///
/// ```
/// use loom_core::prompts::expected_event_range;
/// let r = expected_event_range(5, 6);
/// assert_eq!((r.min, r.max), (4, 5));
/// ```
pub fn expected_event_range(beat_index: usize, total_beats: usize) -> EventRange {
    let total = total_beats.max(1);
    let climax_from = total - total / 3;
    if total == 1 || beat_index >= climax_from {
        EventRange { min: 4, max: 5 }
    } else if beat_index < total.div_ceil(2) {
        EventRange { min: 3, max: 4 }
    } else {
        EventRange { min: 3, max: 5 }
    }
}

const TEMPLATE_NAMES: [&str; 19] = [
    "persona",
    "initial_beat/meta",
    "initial_beat/context",
    "initial_beat/constraint",
    "next_beat/meta",
    "next_beat/context",
    "next_beat/constraint",
    "expansion/meta",
    "expansion/context",
    "expansion/constraint",
    "refine/meta",
    "refine/context",
    "refine/constraint",
    "verify/meta",
    "verify/context",
    "verify/constraint",
    "brainstorm/meta",
    "brainstorm/context",
    "brainstorm/constraint",
];

fn builtin_template(name: &str) -> &'static str {
    match name {
        "persona" => include_str!("../assets/prompts/persona.txt"),
        "initial_beat/meta" => include_str!("../assets/prompts/initial_beat/meta.txt"),
        "initial_beat/context" => include_str!("../assets/prompts/initial_beat/context.txt"),
        "initial_beat/constraint" => include_str!("../assets/prompts/initial_beat/constraint.txt"),
        "next_beat/meta" => include_str!("../assets/prompts/next_beat/meta.txt"),
        "next_beat/context" => include_str!("../assets/prompts/next_beat/context.txt"),
        "next_beat/constraint" => include_str!("../assets/prompts/next_beat/constraint.txt"),
        "expansion/meta" => include_str!("../assets/prompts/expansion/meta.txt"),
        "expansion/context" => include_str!("../assets/prompts/expansion/context.txt"),
        "expansion/constraint" => include_str!("../assets/prompts/expansion/constraint.txt"),
        "refine/meta" => include_str!("../assets/prompts/refine/meta.txt"),
        "refine/context" => include_str!("../assets/prompts/refine/context.txt"),
        "refine/constraint" => include_str!("../assets/prompts/refine/constraint.txt"),
        "verify/meta" => include_str!("../assets/prompts/verify/meta.txt"),
        "verify/context" => include_str!("../assets/prompts/verify/context.txt"),
        "verify/constraint" => include_str!("../assets/prompts/verify/constraint.txt"),
        "brainstorm/meta" => include_str!("../assets/prompts/brainstorm/meta.txt"),
        "brainstorm/context" => include_str!("../assets/prompts/brainstorm/context.txt"),
        "brainstorm/constraint" => include_str!("../assets/prompts/brainstorm/constraint.txt"),
        _ => unreachable!("unknown template {name}"),
    }
}

/// Placeholders each template may use. Anything else is rejected at load time.
fn allowed_placeholders(name: &str) -> &'static [&'static str] {
    match name {
        "persona" => &["display_name", "specialization", "identity_prompt", "parameters"],
        "initial_beat/meta" | "next_beat/meta" | "expansion/meta" | "refine/meta" => &["persona_block"],
        "initial_beat/context" => &["sparkle", "language", "total_beats", "beat_number"],
        "next_beat/context" => &["sparkle", "history", "previous_beat", "beat_number", "total_beats", "language"],
        "initial_beat/constraint" | "next_beat/constraint" => {
            &["beat_number", "total_beats", "min_events", "max_events", "language"]
        }
        "expansion/context" => &["sparkle", "history", "beat", "beat_number", "total_beats", "language"],
        "expansion/constraint" => &[
            "min_words",
            "max_words",
            "dialogue_percent",
            "lexical_diversity",
            "language",
        ],
        "refine/context" => &["beat", "segment"],
        "refine/constraint" => &["instruction", "min_words", "max_words", "language"],
        "verify/meta" | "brainstorm/meta" => &[],
        "verify/context" => &["retrieved"],
        "verify/constraint" => &["beat"],
        "brainstorm/context" => &["sparkle", "outline", "transcript"],
        "brainstorm/constraint" => &["message"],
        _ => &[],
    }
}

/// Split a template into literal text and placeholder names.
fn placeholders(template: &str) -> Result<Vec<&str>, ()> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(())?;
        names.push(after[..end].trim());
        rest = &after[end + 2..];
    }
    Ok(names)
}

/// Substitute `{{name}}` placeholders. Unknown names render as empty text;
/// templates are checked against their allowed names when loaded.
pub fn render(template: &str, values: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = after[..end].trim();
                if let Some(v) = values.get(name) {
                    out.push_str(v);
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out.trim_end().to_owned()
}

/// The prompt template set: built in, or loaded from a directory laid out as
/// `persona.txt` plus `<stage>/{meta,context,constraint}.txt`. Files missing
/// from the directory fall back to the built-in text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    templates: BTreeMap<&'static str, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            templates: TEMPLATE_NAMES
                .iter()
                .map(|name| (*name, builtin_template(name).to_owned()))
                .collect(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => set.set(name, text)?,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => {
                    return Err(PromptError::Io {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(set)
    }

    /// Replace one template after checking its placeholders.
    pub fn set(&mut self, name: &str, text: String) -> Result<(), PromptError> {
        let key = TEMPLATE_NAMES
            .iter()
            .find(|n| **n == name)
            .ok_or_else(|| PromptError::Io {
                path: name.to_owned(),
                message: "not a template name".into(),
            })?;
        let allowed = allowed_placeholders(name);
        for used in placeholders(&text).map_err(|_| PromptError::Unclosed(name.to_owned()))? {
            if !allowed.contains(&used) {
                return Err(PromptError::UnknownPlaceholder {
                    template: name.to_owned(),
                    name: used.to_owned(),
                });
            }
        }
        self.templates.insert(key, text);
        Ok(())
    }

    pub fn get(&self, name: &str) -> &str {
        &self.templates[name]
    }

    fn layers(&self, dir: &str, values: &BTreeMap<&str, String>) -> [String; 3] {
        ["meta", "context", "constraint"].map(|layer| render(self.get(&format!("{dir}/{layer}")), values))
    }

    /// The persona's identity and parameter layers as one block of text.
    pub fn persona_block(&self, persona: &Persona) -> String {
        let parameters = persona
            .parameters
            .iter()
            .map(|(name, p)| {
                let gloss = match name.as_str() {
                    DIALOGUE_RATIO_TARGET => format!(
                        "about {:.0}% of the words in your prose sit inside quoted dialogue; the rest is narration, action and description",
                        p.value * 100.0
                    ),
                    LEXICAL_DIVERSITY_TARGET => "distinct words divided by total words across a passage; vary nouns and verbs instead of repeating them, without reaching for obscure vocabulary".to_owned(),
                    _ => "a persona-specific target".to_owned(),
                };
                format!("- {name} = {:.2} (allowed {:.2} to {:.2}): {gloss}.", p.value, p.min, p.max)
            })
            .collect::<Vec<_>>()
            .join("\n");
        let values = BTreeMap::from([
            ("display_name", persona.display_name.clone()),
            ("specialization", persona.specialization.clone()),
            ("identity_prompt", persona.identity_prompt.trim().to_owned()),
            ("parameters", parameters),
        ]);
        render(self.get("persona"), &values)
    }
}

fn illegal(stage: Stage, session: &StorySession, reason: &str) -> PromptError {
    PromptError::IllegalStage {
        stage,
        status: session.status,
        reason: reason.to_owned(),
    }
}

fn history(session: &StorySession) -> String {
    let h = compress_history(&session.segments, &session.beats, HISTORY_TOKEN_BUDGET);
    if h.text.is_empty() {
        "(nothing yet)".to_owned()
    } else {
        h.text
    }
}

/// Build the bundle for `persona` at `stage`.
///
/// For [`Stage::Expansion`] the beat is the session's most recently selected
/// beat.
pub fn assemble_prompt(
    templates: &PromptTemplates,
    profile: &BackendProfile,
    persona: &Persona,
    session: &StorySession,
    stage: Stage,
) -> Result<PromptBundle, PromptError> {
    let total = usize::from(session.sparkle.target_beat_count);
    let beats = session.beats.len();
    let segments = session.segments.len();
    match stage {
        Stage::InitialBeat => {
            if beats != 0 {
                return Err(illegal(stage, session, "the first beat is already chosen"));
            }
            if !matches!(session.status, SessionStatus::Ideation | SessionStatus::AwaitingSelection) {
                return Err(illegal(stage, session, "no beat is being proposed"));
            }
        }
        Stage::NextBeat => {
            if beats == 0 {
                return Err(illegal(stage, session, "no beat has been chosen yet"));
            }
            if session.status != SessionStatus::AwaitingSelection || segments != beats {
                return Err(illegal(stage, session, "the last chosen beat is not expanded"));
            }
            if beats >= total {
                return Err(illegal(stage, session, "all beats are chosen"));
            }
        }
        Stage::Expansion => {
            if session.status != SessionStatus::Expanding || beats != segments + 1 {
                return Err(illegal(stage, session, "no selected beat awaits expansion"));
            }
        }
    }

    let index = if stage == Stage::Expansion { beats - 1 } else { beats };
    let range = expected_event_range(index, total);
    let words = session.sparkle.target_segment_words;
    let mut values = BTreeMap::from([
        ("persona_block", templates.persona_block(persona)),
        ("sparkle", session.sparkle.text.trim().to_owned()),
        ("language", session.sparkle.language.clone()),
        ("total_beats", total.to_string()),
        ("beat_number", (index + 1).to_string()),
        ("min_events", range.min.to_string()),
        ("max_events", range.max.to_string()),
        ("min_words", words.lower.to_string()),
        ("max_words", words.upper.to_string()),
        ("dialogue_percent", format!("{:.0}", persona.dialogue_ratio_target() * 100.0)),
        ("lexical_diversity", format!("{:.2}", persona.lexical_diversity_target())),
    ]);
    if stage != Stage::InitialBeat {
        values.insert("history", history(session));
    }
    if stage == Stage::NextBeat {
        values.insert("previous_beat", serialize_beat(&session.beats[beats - 1]));
    }
    if stage == Stage::Expansion {
        values.insert("beat", serialize_beat(&session.beats[index]));
    }

    let [meta_layer, context_layer, constraint_layer] = templates.layers(stage.dir(), &values);
    let (format, purpose, params) = match stage {
        Stage::Expansion => (
            OutputFormat::Prose {
                min_words: words.lower,
                max_words: words.upper,
                dialogue_ratio: persona.dialogue_ratio_target(),
                instruction: None,
            },
            Purpose::Expansion,
            generation(profile, profile.temperatures.expansion, prose_tokens(words.upper)),
        ),
        _ => (
            OutputFormat::Beat {
                beat_index: index,
                min_events: range.min,
                max_events: range.max,
            },
            if stage == Stage::InitialBeat { Purpose::InitialBeat } else { Purpose::NextBeat },
            generation(profile, profile.temperatures.variation, 800),
        ),
    };
    Ok(PromptBundle {
        meta_layer,
        context_layer,
        constraint_layer,
        params,
        format,
        purpose,
        persona_id: Some(persona.id.clone()),
    })
}

fn generation(profile: &BackendProfile, temperature: f64, max_tokens: usize) -> GenerationParams {
    GenerationParams {
        temperature,
        max_tokens,
        model_id: profile.generation_model.clone(),
    }
}

/// Output allowance for prose: the upper word bound plus tolerance, at
/// roughly 1.4 tokens per word.
fn prose_tokens(max_words: usize) -> usize {
    (max_words * 5 / 4) * 7 / 5 + 64
}

/// Bundle asking the verification model whether `beat` contradicts the
/// retrieved passages. Only the beat's setting, characters and events are
/// shown, never the proposing persona's rationale.
pub fn verification_prompt(
    templates: &PromptTemplates,
    profile: &BackendProfile,
    beat: &StoryBeat,
    retrieved: &[(usize, &str)],
) -> PromptBundle {
    let retrieved = retrieved
        .iter()
        .map(|(id, text)| format!("[Segment {}]\n{}", id + 1, text.trim()))
        .collect::<Vec<_>>()
        .join("\n\n");
    let values = BTreeMap::from([("retrieved", retrieved), ("beat", serialize_beat(beat))]);
    let [meta_layer, context_layer, constraint_layer] = templates.layers("verify", &values);
    PromptBundle {
        meta_layer,
        context_layer,
        constraint_layer,
        params: GenerationParams {
            temperature: profile.temperatures.verification,
            max_tokens: 200,
            model_id: profile.verification_model.clone(),
        },
        format: OutputFormat::Verdict,
        purpose: Purpose::Verify,
        persona_id: None,
    }
}

/// Bundle for revising segment `beat_index` according to `instruction`.
pub fn refine_prompt(
    templates: &PromptTemplates,
    profile: &BackendProfile,
    persona: &Persona,
    session: &StorySession,
    beat_index: usize,
    instruction: &str,
) -> Option<PromptBundle> {
    let segment = session.segment(beat_index)?;
    let beat = session.beats.get(beat_index)?;
    let words = session.sparkle.target_segment_words;
    let values = BTreeMap::from([
        ("persona_block", templates.persona_block(persona)),
        ("beat", serialize_beat(beat)),
        ("segment", segment.prose.trim().to_owned()),
        ("instruction", instruction.trim().to_owned()),
        ("min_words", words.lower.to_string()),
        ("max_words", words.upper.to_string()),
        ("language", session.sparkle.language.clone()),
    ]);
    let [meta_layer, context_layer, constraint_layer] = templates.layers("refine", &values);
    Some(PromptBundle {
        meta_layer,
        context_layer,
        constraint_layer,
        params: generation(profile, profile.temperatures.expansion, prose_tokens(words.upper)),
        format: OutputFormat::Prose {
            min_words: words.lower,
            max_words: words.upper,
            dialogue_ratio: segment_dialogue_ratio(&segment.prose, persona),
            instruction: Some(instruction.trim().to_owned()),
        },
        purpose: Purpose::Refine,
        persona_id: Some(persona.id.clone()),
    })
}

/// The dialogue share a refine starts from: the segment's current share, so
/// successive "more dialogue" requests keep raising it.
fn segment_dialogue_ratio(prose: &str, persona: &Persona) -> f64 {
    let current = crate::analytics::dialogue_ratio(prose);
    if crate::text::word_count(prose) == 0 {
        persona.dialogue_ratio_target()
    } else {
        current
    }
}

/// Bundle for one brainstorm turn. Sees the beats chosen so far and the
/// transcript, never asked to produce draft text.
pub fn brainstorm_prompt(
    templates: &PromptTemplates,
    profile: &BackendProfile,
    session: &StorySession,
    message: &str,
) -> PromptBundle {
    let outline = if session.beats.is_empty() {
        "(none yet)".to_owned()
    } else {
        session.beats.iter().map(serialize_beat).collect::<Vec<_>>().join("\n")
    };
    let transcript = if session.brainstorm.is_empty() {
        "(new conversation)".to_owned()
    } else {
        session
            .brainstorm
            .iter()
            .map(|t| format!("{:?}: {}", t.role, t.content))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let values = BTreeMap::from([
        ("sparkle", session.sparkle.text.trim().to_owned()),
        ("outline", outline),
        ("transcript", transcript),
        ("message", message.trim().to_owned()),
    ]);
    let [meta_layer, context_layer, constraint_layer] = templates.layers("brainstorm", &values);
    PromptBundle {
        meta_layer,
        context_layer,
        constraint_layer,
        params: generation(profile, profile.temperatures.brainstorm, 600),
        format: OutputFormat::Chat,
        purpose: Purpose::Brainstorm,
        persona_id: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Roster, SessionId, Sparkle};
    use crate::gateway::count_tokens;

    fn oracle_range(i: usize, n: usize) -> (usize, usize) {
        // Climax band first so overlaps resolve toward it.
        if n == 1 || 3 * i >= 3 * n - 3 * (n / 3) {
            (4, 5)
        } else if 2 * i < n + (n % 2) {
            (3, 4)
        } else {
            (3, 5)
        }
    }

    #[test]
    fn event_bands_for_six_beats() {
        let got: Vec<_> = (0..6).map(|i| expected_event_range(i, 6)).map(|r| (r.min, r.max)).collect();
        assert_eq!(got, vec![(3, 4), (3, 4), (3, 4), (3, 5), (4, 5), (4, 5)]);
        assert_eq!(expected_event_range(0, 1), EventRange { min: 4, max: 5 });
    }

    #[test]
    fn event_bands_match_oracle_for_all_lengths() {
        for n in 1..=10 {
            for i in 0..n {
                let r = expected_event_range(i, n);
                assert_eq!((r.min, r.max), oracle_range(i, n), "beat {i} of {n}");
                assert!(r.min >= 3 && r.max <= 5);
            }
        }
    }

    fn session() -> StorySession {
        let sparkle = Sparkle::new("A lighthouse keeper finds a letter addressed to herself.").unwrap();
        StorySession::new(SessionId::new("p1").unwrap(), sparkle).unwrap()
    }

    #[test]
    fn initial_stage_has_sparkle_and_no_history() {
        let roster = Roster::builtin();
        let bundle = assemble_prompt(
            &PromptTemplates::builtin(),
            &BackendProfile::mock(1),
            &roster.personas()[2],
            &session(),
            Stage::InitialBeat,
        )
        .unwrap();
        assert!(bundle.context_layer.contains("A lighthouse keeper finds a letter"));
        assert!(!bundle.context_layer.contains("Story so far"));
        assert!(bundle.constraint_layer.contains("between 3 and 4 key events"));
        assert!(bundle.meta_layer.contains("Mystery Solver"));
        assert!(!bundle.meta_layer.contains("{{"));
        assert_eq!(bundle.params.temperature, 0.9);
    }

    #[test]
    fn expansion_is_illegal_before_selection() {
        let roster = Roster::builtin();
        let err = assemble_prompt(
            &PromptTemplates::builtin(),
            &BackendProfile::mock(1),
            &roster.personas()[0],
            &session(),
            Stage::Expansion,
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::IllegalStage { .. }));
    }

    #[test]
    fn persona_block_is_about_500_tokens() {
        let templates = PromptTemplates::builtin();
        for persona in Roster::builtin().personas() {
            let tokens = count_tokens(&templates.persona_block(persona));
            assert!((400..=600).contains(&tokens), "{} has {tokens} tokens", persona.id);
        }
    }

    #[test]
    fn verification_prompt_is_verbatim() {
        let beat = StoryBeat::new(0, "the lighthouse", "midnight", vec!["Mara".into()], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let bundle = verification_prompt(&PromptTemplates::builtin(), &BackendProfile::mock(1), &beat, &[(0, "Mara drowned.")]);
        let expected = format!(
            "The new story beat is: {}. Are there any logical errors in the events of the new story beat? \
             Answer briefly in [Yes] or [No]. If [Yes], briefly describe the errors.",
            serialize_beat(&beat)
        );
        assert_eq!(bundle.constraint_layer, expected);
        assert!(bundle.context_layer.contains("[Segment 1]\nMara drowned."));
        assert_eq!(bundle.params.model_id, "gpt-3.5-turbo");
        assert_eq!(bundle.params.temperature, 0.0);
    }

    #[test]
    fn builtin_templates_use_only_declared_placeholders() {
        let mut t = PromptTemplates::builtin();
        for name in TEMPLATE_NAMES {
            let text = t.get(name).to_owned();
            t.set(name, text).unwrap();
        }
        assert!(matches!(
            t.set("verify/context", "{{nope}}".into()),
            Err(PromptError::UnknownPlaceholder { .. })
        ));
        assert!(matches!(t.set("verify/context", "{{open".into()), Err(PromptError::Unclosed(_))));
    }

    #[test]
    fn render_substitutes() {
        let values = BTreeMap::from([("a", "x".to_owned())]);
        assert_eq!(render("<{{ a }}|{{b}}>", &values), "<x|>");
    }
}
