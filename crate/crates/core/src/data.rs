//! Core data types: event vocabularies, sessions, labelled datasets, and the
//! ordered-pattern/blocker rule that defines ground-truth failure labels.

use std::collections::{BTreeSet, HashMap};

use crate::{Error, Result};

/// Dense event identifier. Id `0` is reserved as the "don't care" token used
//  by zero-inserting perturbation; real events are numbered from 1.
pub type EventId = u32;

/// Reserved id for the neutral token that carries no event information.
pub const DONT_CARE: EventId = 0;

/// Bidirectional mapping between event names and dense ids `1..=len`.
///
/// Names must be non-empty, contain no whitespace, not start with `#`
/// (all three would break the line-oriented file formats) and be unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, EventId>,
}

impl Vocab {
    /// Builds a vocabulary from event names; ids are assigned in order,
    /// starting at 1.
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::EmptyInput("vocabulary has no events".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.starts_with('#') || name.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "event name {name:?} is empty, starts with '#', or contains whitespace"
                )));
            }
            if index.insert(name.clone(), (i + 1) as EventId).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate event name {name:?}"
                )));
            }
        }
        Ok(Vocab { names, index })
    }

    /// Vocabulary of `n` single-letter names `a, b, c, ...` (n <= 26).
    pub fn letters(n: usize) -> Result<Self> {
        if n > 26 {
            return Err(Error::InvalidArgument(format!(
                "letter vocabulary supports at most 26 events, got {n}"
            )));
        }
        Vocab::new((0..n).map(|i| ((b'a' + i as u8) as char).to_string()))
    }

    /// Number of real events (excluding the reserved don't-care id 0).
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Id for `name`, if present. Ids start at 1.
    pub fn lookup(&self, name: &str) -> Option<EventId> {
        self.index.get(name).copied()
    }

    /// Like [`lookup`](Self::lookup) but returns an error naming the culprit.
    pub fn require(&self, name: &str) -> Result<EventId> {
        self.lookup(name)
            .ok_or_else(|| Error::UnknownEvent(name.to_string()))
    }

    /// Name for a real event id (`1..=len`).
    pub fn name(&self, id: EventId) -> Option<&str> {
        if id == DONT_CARE {
            return None;
        }
        self.names.get(id as usize - 1).map(String::as_str)
    }

    /// All names in id order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Renders a sequence of ids as space-separated names; id 0 prints as `_`.
    pub fn render(&self, events: &[EventId]) -> String {
        events
            .iter()
            .map(|&e| self.name(e).unwrap_or("_"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One telemetry session: an ordered event sequence plus its failure label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Session {
    pub events: Vec<EventId>,
    pub label: bool,
}

impl Session {
    pub fn new(events: Vec<EventId>, label: bool) -> Self {
        Session { events, label }
    }
}

/// Ground-truth labelling rule: a session fails iff at least one contributor
/// pattern occurs as an ordered (not necessarily contiguous) subsequence and
/// no blocker event is present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSpec {
    patterns: Vec<Vec<EventId>>,
    blockers: BTreeSet<EventId>,
}

impl RuleSpec {
    /// Builds a rule. Needs at least one non-empty pattern; pattern events
    /// and blocker events must be real (non-zero) and disjoint, otherwise a
    /// pattern occurrence could block itself.
    pub fn new(patterns: Vec<Vec<EventId>>, blockers: BTreeSet<EventId>) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::EmptyInput("rule needs at least one pattern".into()));
        }
        for p in &patterns {
            if p.is_empty() {
                return Err(Error::EmptyInput("rule pattern has no events".into()));
            }
            for &e in p {
                if e == DONT_CARE {
                    return Err(Error::InvalidArgument(
                        "rule pattern contains the reserved don't-care id 0".into(),
                    ));
                }
                if blockers.contains(&e) {
                    return Err(Error::InvalidArgument(format!(
                        "event id {e} is both a pattern event and a blocker"
                    )));
                }
            }
        }
        if blockers.contains(&DONT_CARE) {
            return Err(Error::InvalidArgument(
                "blocker set contains the reserved don't-care id 0".into(),
            ));
        }
        Ok(RuleSpec { patterns, blockers })
    }

    pub fn patterns(&self) -> &[Vec<EventId>] {
        &self.patterns
    }

    pub fn blockers(&self) -> &BTreeSet<EventId> {
        &self.blockers
    }

    /// Every event id that appears in some pattern.
    pub fn pattern_events(&self) -> BTreeSet<EventId> {
        self.patterns.iter().flatten().copied().collect()
    }
}

/// A vocabulary plus labelled sessions. `rules` carries the generating rule
/// when the dataset is synthetic, enabling ground-truth scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub sessions: Vec<Session>,
    pub rules: Option<RuleSpec>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Number of failure-labelled sessions.
    pub fn positive_count(&self) -> usize {
        self.sessions.iter().filter(|s| s.label).count()
    }

    /// Fraction of failure-labelled sessions (0 for an empty dataset).
    pub fn positive_rate(&self) -> f64 {
        if self.sessions.is_empty() {
            0.0
        } else {
            self.positive_count() as f64 / self.sessions.len() as f64
        }
    }
}

/// True iff `pattern` occurs in `seq` as an ordered, not necessarily
/// contiguous, subsequence. The empty pattern matches everything.
pub fn contains_subsequence(seq: &[EventId], pattern: &[EventId]) -> bool {
    let mut need = pattern.iter();
    let mut next = need.next();
    for &e in seq {
        match next {
            Some(&want) if want == e => next = need.next(),
            Some(_) => {}
            None => return true,
        }
    }
    next.is_none()
}

/// Ground-truth label for a sequence: fails iff some pattern is an ordered
/// subsequence and no blocker occurs.
pub fn label_oracle(seq: &[EventId], rules: &RuleSpec) -> bool {
    if seq.iter().any(|e| rules.blockers.contains(e)) {
        return false;
    }
    rules.patterns.iter().any(|p| contains_subsequence(seq, p))
}

/// Removes every occurrence of event type `t` from `seq`.
fn without_event(seq: &[EventId], t: EventId) -> Vec<EventId> {
    seq.iter().copied().filter(|&e| e != t).collect()
}

/// Ground-truth attribution at the event-type level, by brute force.
///
/// For a failing sequence, a contributor is any event type whose complete
/// removal flips the label to pass. For a passing sequence, a blocker is any
/// event type whose complete removal flips the label to fail. The other set
/// is empty: a failing sequence has nothing blocking it, and event types
/// cannot contribute to a failure that is not happening.
pub fn gold_attribution(
    seq: &[EventId],
    rules: &RuleSpec,
) -> (BTreeSet<EventId>, BTreeSet<EventId>) {
    let label = label_oracle(seq, rules);
    let types: BTreeSet<EventId> = seq.iter().copied().filter(|&e| e != DONT_CARE).collect();
    let mut contributors = BTreeSet::new();
    let mut blockers = BTreeSet::new();
    for &t in &types {
        let flipped = label_oracle(&without_event(seq, t), rules);
        if label && !flipped {
            contributors.insert(t);
        } else if !label && flipped {
            blockers.insert(t);
        }
    }
    if label {
        (contributors, BTreeSet::new())
    } else {
        (BTreeSet::new(), blockers)
    }
}

/// Drops every occurrence of the named event types from every session,
/// removing sessions that become empty. Labels and vocabulary are unchanged;
/// this models redacting known-noise instrumentation events before mining.
pub fn filter_signature_events(ds: &Dataset, blacklist: &[String]) -> Result<Dataset> {
    let mut banned = BTreeSet::new();
    for name in blacklist {
        banned.insert(ds.vocab.require(name)?);
    }
    let sessions = ds
        .sessions
        .iter()
        .filter_map(|s| {
            let events: Vec<EventId> = s
                .events
                .iter()
                .copied()
                .filter(|e| !banned.contains(e))
                .collect();
            if events.is_empty() {
                None
            } else {
                Some(Session::new(events, s.label))
            }
        })
        .collect();
    Ok(Dataset {
        vocab: ds.vocab.clone(),
        sessions,
        rules: ds.rules.clone(),
    })
}
