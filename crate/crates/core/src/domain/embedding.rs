use serde::{Deserialize, Deserializer, Serialize};

use super::DomainError;

pub const EMBEDDING_DIM: usize = 1536;

/// A fixed-dimension embedding with its Euclidean norm cached.
///
/// Only `values` is serialized; the norm is recomputed on load so a
/// persisted vector cannot carry a stale norm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    #[serde(skip)]
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DomainError> {
        if values.len() != EMBEDDING_DIM {
            return Err(DomainError::DimensionMismatch {
                expected: EMBEDDING_DIM,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::invalid("embedding", "contains a non-finite value"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            values: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        EmbeddingVector::new(raw.values).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_is_enforced() {
        assert!(matches!(
            EmbeddingVector::new(vec![1.0; 3]),
            Err(DomainError::DimensionMismatch { expected: 1536, found: 3 })
        ));
    }

    #[test]
    fn norm_is_cached() {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[0] = 3.0;
        v[1] = 4.0;
        assert_eq!(EmbeddingVector::new(v).unwrap().norm(), 5.0);
    }

    #[test]
    fn deserialization_recomputes_norm() {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[7] = 2.0;
        let e = EmbeddingVector::new(v).unwrap();
        let json = serde_json::to_string(&e).unwrap();
        let back: EmbeddingVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.norm(), 2.0);
        assert!(serde_json::from_str::<EmbeddingVector>(r#"{"values":[1.0]}"#).is_err());
    }
}
