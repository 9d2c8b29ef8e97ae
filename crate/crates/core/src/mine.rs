//! Sequential rule mining baseline: rules of the form "pattern X (as an
//! ordered subsequence) implies failure", scored by support, confidence and
//! lift.
//!
//! * support    = P(X present and session fails)
//! * confidence = P(fails | X present)
//! * lift       = confidence / P(fails)
//!
//! Candidates are grown breadth-first by appending one event at a time.
//! Support is anti-monotone under extension (a longer pattern occurs in a
//! subset of the sessions), so branches below the support floor are pruned
//! without losing any qualifying rule. Confidence is not monotone, so it
//! only filters emission, never extension.

use rayon::prelude::*;

use crate::data::{contains_subsequence, Dataset, EventId};
use crate::{Error, Result};

/// A mined rule "pattern implies failure" with its statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialRule {
    pub pattern: Vec<EventId>,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
}

/// Mining thresholds.
#[derive(Debug, Clone, Copy)]
pub struct MineConfig {
    /// Longest pattern to consider.
    pub max_len: usize,
    /// Minimum support for a rule to be emitted or extended.
    pub min_support: f64,
    /// Minimum confidence for a rule to be emitted.
    pub min_confidence: f64,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            max_len: 3,
            min_support: 0.05,
            min_confidence: 0.25,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::InvalidArgument(
                "max pattern length must be positive".into(),
            ));
        }
        for (name, v) in [
            ("min support", self.min_support),
            ("min confidence", self.min_confidence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn counts(ds: &Dataset, pattern: &[EventId]) -> (usize, usize) {
    let mut present = 0;
    let mut present_and_fail = 0;
    for s in &ds.sessions {
        if contains_subsequence(&s.events, pattern) {
            present += 1;
            if s.label {
                present_and_fail += 1;
            }
        }
    }
    (present, present_and_fail)
}

/// Fraction of sessions containing `pattern` as an ordered subsequence.
pub fn pattern_frequency(ds: &Dataset, pattern: &[EventId]) -> Result<f64> {
    if pattern.is_empty() {
        return Err(Error::EmptyInput("empty pattern".into()));
    }
    if ds.is_empty() {
        return Err(Error::EmptyInput("empty dataset".into()));
    }
    Ok(counts(ds, pattern).0 as f64 / ds.len() as f64)
}

/// Statistics for one candidate rule, or `None` when the pattern never
/// occurs (confidence is undefined there, and mining excludes such rules).
///
/// When the dataset has no failures at all, lift is reported as 0.
pub fn rule_stats(ds: &Dataset, pattern: &[EventId]) -> Result<Option<SequentialRule>> {
    if pattern.is_empty() {
        return Err(Error::EmptyInput("empty pattern".into()));
    }
    if ds.is_empty() {
        return Err(Error::EmptyInput("empty dataset".into()));
    }
    let (present, present_and_fail) = counts(ds, pattern);
    if present == 0 {
        return Ok(None);
    }
    let n = ds.len() as f64;
    let support = present_and_fail as f64 / n;
    let confidence = present_and_fail as f64 / present as f64;
    let fail_rate = ds.positive_rate();
    let lift = if fail_rate == 0.0 {
        0.0
    } else {
        confidence / fail_rate
    };
    Ok(Some(SequentialRule {
        pattern: pattern.to_vec(),
        support,
        confidence,
        lift,
    }))
}

/// Mines every rule up to `cfg.max_len` events whose support and confidence
/// clear the thresholds. Rules are ranked by lift, then confidence, then
/// (for a stable, deterministic order) by shorter pattern first and
/// lexicographic event ids.
pub fn mine_rules(ds: &Dataset, cfg: &MineConfig) -> Result<Vec<SequentialRule>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyInput("empty dataset".into()));
    }
    let alphabet: Vec<EventId> = (1..=ds.vocab.len() as EventId).collect();
    let mut rules: Vec<SequentialRule> = Vec::new();
    let mut frontier: Vec<Vec<EventId>> = vec![vec![]];
    for _len in 1..=cfg.max_len {
        let candidates: Vec<Vec<EventId>> = frontier
            .iter()
            .flat_map(|p| {
                alphabet.iter().map(move |&e| {
                    let mut q = Vec::with_capacity(p.len() + 1);
                    q.extend_from_slice(p);
                    q.push(e);
                    q
                })
            })
            .collect();
        let scored: Vec<(Vec<EventId>, Option<SequentialRule>)> = candidates
            .into_par_iter()
            .map(|p| {
                let r = rule_stats(ds, &p)?;
                Ok((p, r))
            })
            .collect::<Result<_>>()?;
        frontier = Vec::new();
        for (pattern, stats) in scored {
            let Some(rule) = stats else { continue };
            if rule.support >= cfg.min_support {
                if rule.confidence >= cfg.min_confidence {
                    rules.push(rule.clone());
                }
                frontier.push(pattern);
            }
        }
        if frontier.is_empty() {
            break;
        }
    }
    rules.sort_by(|a, b| {
        b.lift
            .partial_cmp(&a.lift)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                b.confidence
                    .partial_cmp(&a.confidence)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.pattern.len().cmp(&b.pattern.len()))
            .then(a.pattern.cmp(&b.pattern))
    });
    Ok(rules)
}
