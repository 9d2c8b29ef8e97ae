//! Perturbation-based attribution of failures to individual events.
//!
//! Given a sequence the classifier is confident about, each position is
//! probed in order: the probe removes the current occurrence together with
//! all earlier unclaimed occurrences of the same event (either by deleting
//! them or by overwriting them with the neutral token 0) and re-scores the
//! perturbed sequence. A large drop in failure probability marks the
//! occurrence as a contributor; a large rise marks it as a blocker. Claimed
//! positions are left alone by later probes, so duplicated events are
//! attributed once, at the occurrence where their joint removal first
//! changes the outcome.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::data::{gold_attribution, label_oracle, Dataset, EventId, RuleSpec, DONT_CARE};
use crate::model::{failure_prob, ModelParams};
use crate::{Error, Result};

/// How a probe removes occurrences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    /// Delete the positions outright, shortening the sequence.
    VoidInsert,
    /// Overwrite the positions with the neutral token 0, keeping length.
    ZeroInsert,
}

/// Thresholds for [`extract`].
#[derive(Debug, Clone, Copy)]
pub struct ExtractConfig {
    pub mode: PerturbMode,
    /// Sequences with `max(p, 1-p)` at or below this are skipped.
    pub confidence_threshold: f64,
    /// Minimum absolute probability change for a probe to claim its events.
    pub diff_threshold: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            mode: PerturbMode::VoidInsert,
            confidence_threshold: 0.9,
            diff_threshold: 0.4,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.confidence_threshold) {
            return Err(Error::InvalidArgument(format!(
                "confidence threshold must be in [0.5, 1), got {}",
                self.confidence_threshold
            )));
        }
        if !(self.diff_threshold > 0.0 && self.diff_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "diff threshold must be in (0, 1], got {}",
                self.diff_threshold
            )));
        }
        Ok(())
    }
}

/// Anything that can score a sequence's failure probability. Extraction is
/// generic over this so it can run against a trained model or directly
/// against a ground-truth rule.
pub trait FailureScorer: Sync {
    fn failure_prob(&self, seq: &[EventId]) -> Result<f64>;
}

/// Scores with a trained model (dropout off).
pub struct ModelScorer<'a> {
    pub params: &'a ModelParams,
}

impl FailureScorer for ModelScorer<'_> {
    fn failure_prob(&self, seq: &[EventId]) -> Result<f64> {
        failure_prob(seq, self.params)
    }
}

/// Scores with the ground-truth rule: probability 1 for failing sequences,
/// 0 otherwise. Useful for validating the extraction procedure itself.
pub struct OracleScorer<'a> {
    pub rules: &'a RuleSpec,
}

impl FailureScorer for OracleScorer<'_> {
    fn failure_prob(&self, seq: &[EventId]) -> Result<f64> {
        Ok(if label_oracle(seq, self.rules) {
            1.0
        } else {
            0.0
        })
    }
}

/// One attributed event occurrence (`position` is 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occurrence {
    pub position: usize,
    pub event: EventId,
}

/// Attribution result for one sequence.
#[derive(Debug, Clone)]
pub struct Extraction {
    /// Failure probability of the unperturbed sequence.
    pub base_prob: f64,
    /// False when the classifier was not confident enough to probe.
    pub confident: bool,
    pub contributors: Vec<Occurrence>,
    pub blockers: Vec<Occurrence>,
    /// Per position: the probe's probability change, or `None` when the
    /// probe was skipped (not confident, or the perturbed sequence was
    /// empty).
    pub probe_diffs: Vec<Option<f64>>,
}

/// The positions a probe at `k` removes: `k` itself plus every earlier
/// unprotected occurrence of the same event.
fn removal_set(seq: &[EventId], k: usize, protected: &BTreeSet<usize>) -> Vec<usize> {
    (0..=k)
        .filter(|&j| seq[j] == seq[k] && !protected.contains(&j))
        .collect()
}

/// Applies one probe's perturbation: removes the occurrence at `k` and all
/// earlier unprotected duplicates, by deletion (void) or by overwriting
/// with the neutral token (zero). `k` is 0-based and must be in range.
pub fn perturb(
    seq: &[EventId],
    k: usize,
    protected: &BTreeSet<usize>,
    mode: PerturbMode,
) -> Result<Vec<EventId>> {
    if k >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "probe position {k} outside sequence of length {}",
            seq.len()
        )));
    }
    let removed = removal_set(seq, k, protected);
    Ok(match mode {
        PerturbMode::VoidInsert => seq
            .iter()
            .enumerate()
            .filter(|(j, _)| !removed.contains(j))
            .map(|(_, &e)| e)
            .collect(),
        PerturbMode::ZeroInsert => {
            let mut out = seq.to_vec();
            for &j in &removed {
                out[j] = DONT_CARE;
            }
            out
        }
    })
}

/// Attributes one sequence's outcome to contributor and blocker
/// occurrences by perturbing it position by position against `scorer`.
pub fn extract(
    seq: &[EventId],
    scorer: &dyn FailureScorer,
    cfg: &ExtractConfig,
) -> Result<Extraction> {
    cfg.validate()?;
    if seq.is_empty() {
        return Err(Error::EmptyInput("cannot probe an empty sequence".into()));
    }
    let base_prob = scorer.failure_prob(seq)?;
    let confident = base_prob.max(1.0 - base_prob) > cfg.confidence_threshold;
    let mut extraction = Extraction {
        base_prob,
        confident,
        contributors: Vec::new(),
        blockers: Vec::new(),
        probe_diffs: vec![None; seq.len()],
    };
    if !confident {
        return Ok(extraction);
    }
    let mut protected: BTreeSet<usize> = BTreeSet::new();
    for k in 0..seq.len() {
        let probe = perturb(seq, k, &protected, cfg.mode)?;
        if probe.is_empty() {
            // Void-inserting removed every position; there is nothing left
            // to score, so this probe makes no decision.
            continue;
        }
        let diff = scorer.failure_prob(&probe)? - base_prob;
        extraction.probe_diffs[k] = Some(diff);
        if diff.abs() > cfg.diff_threshold {
            let occurrence = Occurrence {
                position: k,
                event: seq[k],
            };
            if diff < 0.0 {
                extraction.contributors.push(occurrence);
            } else {
                extraction.blockers.push(occurrence);
            }
            protected.insert(k);
        }
    }
    Ok(extraction)
}

/// Micro-averaged precision and recall with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

impl PrecisionRecall {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        PrecisionRecall {
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }
}

/// Extraction quality over a dataset with known ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionScores {
    pub contributors: PrecisionRecall,
    pub blockers: PrecisionRecall,
    /// Sequences that were probed.
    pub sequences_scored: usize,
    /// Sequences skipped because the scorer was not confident.
    pub sequences_skipped: usize,
}

/// Scores extraction against ground-truth attribution, micro-averaged over
/// event types. The dataset must carry its generating rule. Extracted
/// occurrences are collapsed to their event types before comparison, since
/// the ground truth is defined per type (see
/// [`gold_attribution`](crate::data::gold_attribution)); sequences the
/// scorer is not confident about are skipped and counted separately.
pub fn evaluate_extraction(
    ds: &Dataset,
    scorer: &dyn FailureScorer,
    cfg: &ExtractConfig,
) -> Result<ExtractionScores> {
    let rules = ds.rules.as_ref().ok_or_else(|| {
        Error::InvalidArgument(
            "dataset carries no generating rule, so there is no ground truth to score against"
                .into(),
        )
    })?;
    let per_seq: Vec<(usize, [usize; 6])> = ds
        .sessions
        .par_iter()
        .map(|s| -> Result<(usize, [usize; 6])> {
            let ex = extract(&s.events, scorer, cfg)?;
            if !ex.confident {
                return Ok((1, [0; 6]));
            }
            let pred_c: BTreeSet<EventId> = ex.contributors.iter().map(|o| o.event).collect();
            let pred_b: BTreeSet<EventId> = ex.blockers.iter().map(|o| o.event).collect();
            let (gold_c, gold_b) = gold_attribution(&s.events, rules);
            let counts = [
                pred_c.intersection(&gold_c).count(),
                pred_c.difference(&gold_c).count(),
                gold_c.difference(&pred_c).count(),
                pred_b.intersection(&gold_b).count(),
                pred_b.difference(&gold_b).count(),
                gold_b.difference(&pred_b).count(),
            ];
            Ok((0, counts))
        })
        .collect::<Result<_>>()?;
    let mut skipped = 0;
    let mut acc = [0usize; 6];
    for (skip, counts) in per_seq {
        skipped += skip;
        for (a, c) in acc.iter_mut().zip(counts) {
            *a += c;
        }
    }
    Ok(ExtractionScores {
        contributors: PrecisionRecall::from_counts(acc[0], acc[1], acc[2]),
        blockers: PrecisionRecall::from_counts(acc[3], acc[4], acc[5]),
        sequences_scored: ds.len() - skipped,
        sequences_skipped: skipped,
    })
}
