//! Story beats and their canonical JSON form.
//!
//! The canonical encoding is compact JSON with a fixed field order
//! (`index`, `setting`, `characters`, `key_events`), so persisted beats are
//! byte-stable. [`parse_beat`] is the tolerant reader used on model output.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{DomainError, FieldViolation};

pub const MIN_EVENTS: usize = 3;
pub const MAX_EVENTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setting {
    pub location: String,
    pub time: String,
}

/// A discrete narrative unit: where and when, who, and what happens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryBeat {
    #[serde(default)]
    pub index: usize,
    pub setting: Setting,
    pub characters: Vec<String>,
    pub key_events: Vec<String>,
}

impl StoryBeat {
    pub fn new(
        index: usize,
        location: impl Into<String>,
        time: impl Into<String>,
        characters: Vec<String>,
        key_events: Vec<String>,
    ) -> Result<Self, DomainError> {
        let beat = Self {
            index,
            setting: Setting {
                location: location.into(),
                time: time.into(),
            },
            characters,
            key_events,
        };
        beat.validate()?;
        Ok(beat)
    }

    /// Every invariant violation, not just the first.
    pub fn violations(&self) -> Vec<FieldViolation> {
        let mut out = Vec::new();
        if self.setting.location.trim().is_empty() {
            out.push(FieldViolation::new("setting.location", "must not be empty"));
        }
        if self.characters.is_empty() {
            out.push(FieldViolation::new("characters", "at least one character is required"));
        }
        for (i, name) in self.characters.iter().enumerate() {
            if name.trim().is_empty() {
                out.push(FieldViolation::new(format!("characters[{i}]"), "must not be empty"));
            }
        }
        let n = self.key_events.len();
        if !(MIN_EVENTS..=MAX_EVENTS).contains(&n) {
            out.push(FieldViolation::new(
                "key_events",
                format!("{n} events; a beat needs {MIN_EVENTS} to {MAX_EVENTS}"),
            ));
        }
        for (i, event) in self.key_events.iter().enumerate() {
            if event.trim().is_empty() {
                out.push(FieldViolation::new(format!("key_events[{i}]"), "must not be empty"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(DomainError::InvalidBeat(violations))
        }
    }
}

/// Canonical compact JSON for a beat.
pub fn serialize_beat(beat: &StoryBeat) -> String {
    serde_json::to_string(beat).expect("beat serialization is infallible")
}

/// A deviation that [`parse_beat`] accepted and fixed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Repair {
    /// Unknown keys were present and ignored.
    ExtraFields { fields: Vec<String> },
    /// `key_events` arrived as one delimited string and was split.
    EventsFromDelimitedString,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedBeat {
    pub beat: StoryBeat,
    pub rationale: Option<String>,
    pub repairs: Vec<Repair>,
}

impl ParsedBeat {
    pub fn repaired(&self) -> bool {
        !self.repairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BeatParseError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    MalformedJson {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}` {reason}")]
    InvalidField { field: String, reason: String },
    #[error("{0} key events; expected between {1} and {2}")]
    EventCountOutOfRange(usize, usize, usize),
}

impl BeatParseError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Self::InvalidField {
            field: field.to_owned(),
            reason: reason.into(),
        }
    }
}

const KNOWN_TOP: [&str; 5] = ["index", "setting", "characters", "key_events", "rationale"];
const KNOWN_SETTING: [&str; 2] = ["location", "time"];

/// Parse a beat from model output, enforcing the global 3..=5 event bound.
pub fn parse_beat(json_text: &str) -> Result<ParsedBeat, BeatParseError> {
    parse_beat_with_range(json_text, MIN_EVENTS, MAX_EVENTS)
}

/// Parse a beat and require its event count to fall in `min..=max`.
///
/// Two deviations are repaired and flagged: unknown extra keys, and
/// `key_events` delivered as a single `;`- or newline-delimited string.
/// Anything else is an error naming the first violated constraint.
pub fn parse_beat_with_range(
    json_text: &str,
    min_events: usize,
    max_events: usize,
) -> Result<ParsedBeat, BeatParseError> {
    let value: Value =
        serde_json::from_str(json_text).map_err(|e| BeatParseError::MalformedJson {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    let Value::Object(obj) = value else {
        return Err(BeatParseError::invalid("$", "beat must be a JSON object"));
    };

    let mut repairs = Vec::new();
    let mut extra: Vec<String> = obj
        .keys()
        .filter(|k| !KNOWN_TOP.contains(&k.as_str()))
        .cloned()
        .collect();

    let setting = match obj.get("setting") {
        None | Some(Value::Null) => return Err(BeatParseError::MissingField("setting".into())),
        Some(Value::Object(s)) => s,
        Some(_) => return Err(BeatParseError::invalid("setting", "must be an object")),
    };
    extra.extend(
        setting
            .keys()
            .filter(|k| !KNOWN_SETTING.contains(&k.as_str()))
            .map(|k| format!("setting.{k}")),
    );
    let location = required_string(setting, "location", "setting.location")?;
    if location.trim().is_empty() {
        return Err(BeatParseError::invalid("setting.location", "must not be empty"));
    }
    let time = required_string(setting, "time", "setting.time")?;

    let characters = match obj.get("characters") {
        None | Some(Value::Null) => return Err(BeatParseError::MissingField("characters".into())),
        Some(Value::Array(items)) => string_list(items, "characters")?,
        Some(_) => return Err(BeatParseError::invalid("characters", "must be an array of strings")),
    };
    if characters.is_empty() {
        return Err(BeatParseError::invalid("characters", "must name at least one character"));
    }

    let key_events = match obj.get("key_events") {
        None | Some(Value::Null) => return Err(BeatParseError::MissingField("key_events".into())),
        Some(Value::Array(items)) => string_list(items, "key_events")?,
        Some(Value::String(joined)) => {
            repairs.push(Repair::EventsFromDelimitedString);
            split_events(joined)
        }
        Some(_) => return Err(BeatParseError::invalid("key_events", "must be an array of strings")),
    };
    let n = key_events.len();
    if n < min_events.max(MIN_EVENTS) || n > max_events.min(MAX_EVENTS) {
        return Err(BeatParseError::EventCountOutOfRange(
            n,
            min_events.max(MIN_EVENTS),
            max_events.min(MAX_EVENTS),
        ));
    }

    let index = match obj.get("index") {
        None | Some(Value::Null) => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| BeatParseError::invalid("index", "must be a non-negative integer"))?
            as usize,
    };
    let rationale = match obj.get("rationale") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(Value::String(s)) => Some(s.trim().to_owned()),
        Some(_) => return Err(BeatParseError::invalid("rationale", "must be a string")),
    };

    if !extra.is_empty() {
        extra.sort();
        repairs.insert(0, Repair::ExtraFields { fields: extra });
    }

    Ok(ParsedBeat {
        beat: StoryBeat {
            index,
            setting: Setting {
                location: location.trim().to_owned(),
                time: time.trim().to_owned(),
            },
            characters,
            key_events,
        },
        rationale,
        repairs,
    })
}

fn required_string<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    path: &str,
) -> Result<&'a str, BeatParseError> {
    match obj.get(key) {
        None | Some(Value::Null) => Err(BeatParseError::MissingField(path.to_owned())),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(BeatParseError::invalid(path, "must be a string")),
    }
}

fn string_list(items: &[Value], path: &str) -> Result<Vec<String>, BeatParseError> {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| match item {
            Value::String(s) if !s.trim().is_empty() => Ok(s.trim().to_owned()),
            Value::String(_) => Err(BeatParseError::invalid(
                &format!("{path}[{i}]"),
                "must not be empty",
            )),
            _ => Err(BeatParseError::invalid(&format!("{path}[{i}]"), "must be a string")),
        })
        .collect()
}

fn split_events(joined: &str) -> Vec<String> {
    joined
        .split([';', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}
