use serde::{Deserialize, Serialize};

use super::{student_t_two_sided, AnalyticsError};
use crate::domain::{PersonaId, Roster};

/// Counts of consecutive persona selections across sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    /// Row and column labels, in roster order.
    pub personas: Vec<PersonaId>,
    /// `counts[i][j]`: selections of persona `j` directly after persona `i`.
    pub counts: Vec<Vec<u64>>,
    /// How often each persona supplied a session's first beat.
    pub opening_counts: Vec<u64>,
    pub sessions: u64,
}

impl TransitionMatrix {
    pub fn new(roster: &Roster) -> Self {
        let n = roster.len();
        Self {
            personas: roster.ids().cloned().collect(),
            counts: vec![vec![0; n]; n],
            opening_counts: vec![0; n],
            sessions: 0,
        }
    }

    fn position(&self, id: &PersonaId) -> Result<usize, AnalyticsError> {
        self.personas
            .iter()
            .position(|p| p == id)
            .ok_or_else(|| AnalyticsError::UnknownPersona(id.clone()))
    }

    /// Add one session's selection log. The matrix is unchanged on error.
    pub fn record(&mut self, log: &[PersonaId]) -> Result<(), AnalyticsError> {
        let positions = log.iter().map(|id| self.position(id)).collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = positions.first() {
            self.opening_counts[*first] += 1;
            self.sessions += 1;
        }
        for pair in positions.windows(2) {
            self.counts[pair[0]][pair[1]] += 1;
        }
        Ok(())
    }

    pub fn count(&self, from: &PersonaId, to: &PersonaId) -> Option<u64> {
        let i = self.personas.iter().position(|p| p == from)?;
        let j = self.personas.iter().position(|p| p == to)?;
        Some(self.counts[i][j])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Aggregate selection logs into a matrix over `roster`.
pub fn build_transition_matrix(roster: &Roster, logs: &[Vec<PersonaId>]) -> Result<TransitionMatrix, AnalyticsError> {
    let mut matrix = TransitionMatrix::new(roster);
    for log in logs {
        matrix.record(log)?;
    }
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAsymmetry {
    pub a: PersonaId,
    pub b: PersonaId,
    /// a → b
    pub forward: u64,
    /// b → a
    pub reverse: u64,
    pub difference: u64,
}

/// One-sample t-test of |forward − reverse| against zero over active pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryStats {
    pub pairs: Vec<PairAsymmetry>,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single pair.
    pub sd: Option<f64>,
    /// Absent when undefined: one pair, or zero spread around a nonzero mean.
    pub t: Option<f64>,
    pub df: Option<usize>,
    pub p: Option<f64>,
}

/// Forward/reverse imbalance over every unordered pair of distinct personas
/// with any traffic. Self-transitions carry no direction and are skipped.
pub fn asymmetry_stats(matrix: &TransitionMatrix) -> Result<AsymmetryStats, AnalyticsError> {
    let n = matrix.personas.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (forward, reverse) = (matrix.counts[i][j], matrix.counts[j][i]);
            if forward + reverse > 0 {
                pairs.push(PairAsymmetry {
                    a: matrix.personas[i].clone(),
                    b: matrix.personas[j].clone(),
                    forward,
                    reverse,
                    difference: forward.abs_diff(reverse),
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(AnalyticsError::NoTransitions);
    }
    let d: Vec<f64> = pairs.iter().map(|p| p.difference as f64).collect();
    let summary = super::Summary::of(&d);
    let t = summary.t_against_zero();
    Ok(AsymmetryStats {
        n: d.len(),
        mean: summary.mean,
        sd: summary.sd,
        t,
        df: (d.len() > 1).then(|| d.len() - 1),
        p: t.map(|t| student_t_two_sided(t, (d.len() - 1) as f64)),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<PersonaId> {
        names.iter().map(|n| PersonaId::from(*n)).collect()
    }

    #[test]
    fn mystery_romance_fixture() {
        let roster = Roster::builtin();
        let mut logs = vec![ids(&["mystery", "romance"]); 5];
        logs.extend(vec![ids(&["romance", "mystery"]); 2]);
        let m = build_transition_matrix(&roster, &logs).unwrap();
        assert_eq!(m.count(&"mystery".into(), &"romance".into()), Some(5));
        assert_eq!(m.count(&"romance".into(), &"mystery".into()), Some(2));
        let stats = asymmetry_stats(&m).unwrap();
        assert_eq!(stats.pairs.len(), 1);
        assert_eq!(stats.pairs[0].difference, 3);
        assert_eq!(stats.sd, None);
        assert_eq!(m.opening_counts.iter().sum::<u64>(), 7);
    }

    #[test]
    fn empty_and_single_logs() {
        let roster = Roster::builtin();
        let m = build_transition_matrix(&roster, &[vec![], ids(&["comedy"])]).unwrap();
        assert_eq!(m.total(), 0);
        assert_eq!(m.sessions, 1);
        assert_eq!(m.count(&"comedy".into(), &"comedy".into()), Some(0));
        assert_eq!(asymmetry_stats(&m), Err(AnalyticsError::NoTransitions));
    }

    #[test]
    fn unknown_persona_leaves_matrix_unchanged() {
        let roster = Roster::builtin();
        let mut m = TransitionMatrix::new(&roster);
        let before = m.clone();
        assert!(matches!(m.record(&ids(&["mystery", "western"])), Err(AnalyticsError::UnknownPersona(_))));
        assert_eq!(m, before);
    }

    #[test]
    fn palindromic_logs_are_symmetric() {
        let roster = Roster::builtin();
        let logs = vec![ids(&["fantasy", "horror", "fantasy"]), ids(&["scifi", "comedy", "scifi"])];
        let stats = asymmetry_stats(&build_transition_matrix(&roster, &logs).unwrap()).unwrap();
        assert!(stats.pairs.iter().all(|p| p.difference == 0));
        assert_eq!(stats.mean, 0.0);
        assert_eq!(stats.t, Some(0.0));
    }
}
