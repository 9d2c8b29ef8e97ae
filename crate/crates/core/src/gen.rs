//! Synthetic telemetry generation.
//!
//! Sessions are uniform random event sequences relabelled by the rule
//! oracle. When a target positive rate is requested, each session first
//! flips a Bernoulli coin: positive sessions are built by redrawing until
//! the base sequence is blocker-free and then planting one contributor
//! pattern, in order, at sorted random positions; negative sessions are
//! redrawn until the oracle rejects them. Labels are always recomputed from
//! the final events, so stored labels match the oracle by construction.

use crate::data::{label_oracle, Dataset, RuleSpec, Session, Vocab};
use crate::rng::Rng;
use crate::{Error, Result};

/// Redraw budget per session before generation gives up; prevents an
/// unsatisfiable rule (for example a pattern present in every possible
/// sequence) from hanging the generator.
const MAX_REDRAWS: usize = 10_000;

/// Parameters for [`generate`].
#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Number of distinct event types; the vocabulary is `a, b, c, ...`.
    pub vocab_size: usize,
    /// Length of every generated session.
    pub seq_len: usize,
    /// Number of sessions to generate.
    pub num_sequences: usize,
    /// Ground-truth labelling rule.
    pub rules: RuleSpec,
    /// If set, the expected fraction of failure sessions; if `None`, labels
    /// fall out of the oracle at their natural rate.
    pub target_positive_rate: Option<f64>,
    pub seed: u64,
}

impl Default for GenConfig {
    /// Twenty event types, sessions of length 15, 30 000 sessions, failure
    /// rule "f then b then c, unless e occurs", one failure in four.
    fn default() -> Self {
        let vocab = Vocab::letters(20).expect("letter vocabulary");
        let pattern = ["f", "b", "c"]
            .iter()
            .map(|n| vocab.require(n).expect("pattern event"))
            .collect();
        let blockers = [vocab.require("e").expect("blocker event")]
            .into_iter()
            .collect();
        GenConfig {
            vocab_size: 20,
            seq_len: 15,
            num_sequences: 30_000,
            rules: RuleSpec::new(vec![pattern], blockers).expect("default rule"),
            target_positive_rate: Some(0.25),
            seed: 42,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::InvalidArgument("vocab_size must be positive".into()));
        }
        if self.seq_len == 0 {
            return Err(Error::InvalidArgument("seq_len must be positive".into()));
        }
        if let Some(rate) = self.target_positive_rate {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!(
                    "target positive rate must be in [0, 1], got {rate}"
                )));
            }
        }
        let max_rule_id = self
            .rules
            .patterns()
            .iter()
            .flatten()
            .chain(self.rules.blockers())
            .copied()
            .max()
            .unwrap_or(0);
        if max_rule_id as usize > self.vocab_size {
            return Err(Error::EventOutOfRange {
                id: max_rule_id,
                vocab_size: self.vocab_size,
            });
        }
        let longest = self
            .rules
            .patterns()
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        if longest > self.seq_len {
            return Err(Error::InvalidArgument(format!(
                "seq_len {} is shorter than the longest pattern ({longest})",
                self.seq_len
            )));
        }
        Ok(())
    }
}

fn draw_base(cfg: &GenConfig, rng: &mut Rng) -> Vec<u32> {
    (0..cfg.seq_len)
        .map(|_| rng.next_below(cfg.vocab_size) as u32 + 1)
        .collect()
}

/// `k` distinct positions in `0..len`, ascending.
fn draw_positions(len: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut all);
    let mut picked: Vec<usize> = all[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Generates a labelled dataset according to `cfg`.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let vocab = Vocab::letters(cfg.vocab_size)?;
    let mut rng = Rng::new(cfg.seed);
    let mut sessions = Vec::with_capacity(cfg.num_sequences);
    for _ in 0..cfg.num_sequences {
        let events = match cfg.target_positive_rate {
            None => draw_base(cfg, &mut rng),
            Some(rate) => {
                if rng.next_uniform() < rate {
                    draw_positive(cfg, &mut rng)?
                } else {
                    draw_negative(cfg, &mut rng)?
                }
            }
        };
        let label = label_oracle(&events, &cfg.rules);
        sessions.push(Session::new(events, label));
    }
    Ok(Dataset {
        vocab,
        sessions,
        rules: Some(cfg.rules.clone()),
    })
}

/// Blocker-free base sequence with one pattern planted at sorted random
/// positions; the result always fails the oracle.
fn draw_positive(cfg: &GenConfig, rng: &mut Rng) -> Result<Vec<u32>> {
    let mut base = None;
    for _ in 0..MAX_REDRAWS {
        let candidate = draw_base(cfg, rng);
        if !candidate.iter().any(|e| cfg.rules.blockers().contains(e)) {
            base = Some(candidate);
            break;
        }
    }
    let mut events = base.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "gave up after {MAX_REDRAWS} attempts to draw a blocker-free sequence"
        ))
    })?;
    let which = rng.next_below(cfg.rules.patterns().len());
    let pattern = &cfg.rules.patterns()[which];
    let positions = draw_positions(cfg.seq_len, pattern.len(), rng);
    for (&pos, &event) in positions.iter().zip(pattern) {
        events[pos] = event;
    }
    debug_assert!(label_oracle(&events, &cfg.rules));
    Ok(events)
}

/// Uniform sequence redrawn until the oracle labels it as passing.
fn draw_negative(cfg: &GenConfig, rng: &mut Rng) -> Result<Vec<u32>> {
    for _ in 0..MAX_REDRAWS {
        let candidate = draw_base(cfg, rng);
        if !label_oracle(&candidate, &cfg.rules) {
            return Ok(candidate);
        }
    }
    Err(Error::InvalidArgument(format!(
        "gave up after {MAX_REDRAWS} attempts to draw a passing sequence"
    )))
}

/// Splits a dataset into train and test parts by a seeded shuffle of the
/// session order followed by a prefix cut at `round(n * train_fraction)`.
/// The generating rule, if any, is carried into both parts.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in [0, 1], got {train_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..ds.sessions.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let cut = (ds.sessions.len() as f64 * train_fraction).round() as usize;
    let part = |ids: &[usize]| Dataset {
        vocab: ds.vocab.clone(),
        sessions: ids.iter().map(|&i| ds.sessions[i].clone()).collect(),
        rules: ds.rules.clone(),
    };
    Ok((part(&order[..cut]), part(&order[cut..])))
}
