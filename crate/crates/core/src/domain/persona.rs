use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DomainError;

pub const DIALOGUE_RATIO_TARGET: &str = "dialogue_ratio_target";
pub const LEXICAL_DIVERSITY_TARGET: &str = "lexical_diversity_target";

const DEFAULT_ROSTER_JSON: &str = include_str!("../../assets/personas.json");

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonaId(String);

impl PersonaId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PersonaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PersonaId {
    fn from(id: &str) -> Self {
        Self::new(id)
    }
}

/// One quantitative constraint from a persona's parameter layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonaParameter {
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

/// A genre-specialized generator profile.
///
/// The identity prompt carries the persona's writing philosophy; the
/// parameter layer carries numeric targets the generator is asked to honor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: PersonaId,
    pub display_name: String,
    pub specialization: String,
    pub identity_prompt: String,
    pub parameters: BTreeMap<String, PersonaParameter>,
}

impl Persona {
    pub fn parameter(&self, name: &str) -> Option<f64> {
        self.parameters.get(name).map(|p| p.value)
    }

    pub fn dialogue_ratio_target(&self) -> f64 {
        self.parameter(DIALOGUE_RATIO_TARGET).unwrap_or(0.2)
    }

    pub fn lexical_diversity_target(&self) -> f64 {
        self.parameter(LEXICAL_DIVERSITY_TARGET).unwrap_or(0.45)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let field = |name: &str| format!("personas.{}.{name}", self.id);
        if self.id.as_str().is_empty() {
            return Err(DomainError::invalid("personas.id", "must not be empty"));
        }
        if self.identity_prompt.trim().is_empty() {
            return Err(DomainError::invalid(field("identity_prompt"), "must not be empty"));
        }
        for required in [DIALOGUE_RATIO_TARGET, LEXICAL_DIVERSITY_TARGET] {
            if !self.parameters.contains_key(required) {
                return Err(DomainError::invalid(
                    field(&format!("parameters.{required}")),
                    "required parameter missing",
                ));
            }
        }
        for (name, p) in &self.parameters {
            let path = field(&format!("parameters.{name}"));
            if !(p.min <= p.value && p.value <= p.max) {
                return Err(DomainError::invalid(
                    path,
                    format!("{} outside declared bounds [{}, {}]", p.value, p.min, p.max),
                ));
            }
            let canonical_ok = match name.as_str() {
                DIALOGUE_RATIO_TARGET => (0.0..=1.0).contains(&p.value),
                LEXICAL_DIVERSITY_TARGET => p.value > 0.0 && p.value <= 1.0,
                _ => true,
            };
            if !canonical_ok {
                return Err(DomainError::invalid(path, format!("{} is not a valid fraction", p.value)));
            }
        }
        Ok(())
    }
}

/// Versioned list of personas. Order is significant: it is the roster order
/// used for fan-out and for stable ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    pub version: String,
    personas: Vec<Persona>,
}

impl Roster {
    pub fn new(version: impl Into<String>, personas: Vec<Persona>) -> Result<Self, DomainError> {
        let roster = Self {
            version: version.into(),
            personas,
        };
        roster.validate()?;
        Ok(roster)
    }

    /// The ten-persona genre roster shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_ROSTER_JSON).expect("bundled roster is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, DomainError> {
        let roster: Roster = serde_json::from_str(json)
            .map_err(|e| DomainError::invalid("roster", e.to_string()))?;
        roster.validate()?;
        Ok(roster)
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| DomainError::invalid("roster", format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }

    fn validate(&self) -> Result<(), DomainError> {
        if self.personas.is_empty() {
            return Err(DomainError::invalid("personas", "roster is empty"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for persona in &self.personas {
            persona.validate()?;
            if !seen.insert(persona.id.clone()) {
                return Err(DomainError::invalid(
                    "personas.id",
                    format!("duplicate persona id `{}`", persona.id),
                ));
            }
        }
        Ok(())
    }

    /// A roster restricted to the first `n` personas.
    pub fn truncated(&self, n: usize) -> Result<Self, DomainError> {
        Self::new(self.version.clone(), self.personas.iter().take(n).cloned().collect())
    }

    pub fn personas(&self) -> &[Persona] {
        &self.personas
    }

    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }

    pub fn get(&self, id: &PersonaId) -> Option<&Persona> {
        self.personas.iter().find(|p| &p.id == id)
    }

    pub fn position(&self, id: &PersonaId) -> Option<usize> {
        self.personas.iter().position(|p| &p.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &PersonaId> {
        self.personas.iter().map(|p| &p.id)
    }
}
