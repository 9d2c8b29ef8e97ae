//! Training: backpropagation through time, optimizers, evaluation and
//! k-fold cross-validation.
//!
//! The loss is binary cross-entropy on the final prediction of each
//! sequence. Per-sequence gradients inside a batch are independent, so they
//! are computed in parallel and then averaged in batch order; results are
//! bit-identical for any thread count. Dropout masks are pre-drawn in batch
//! order from a dedicated stream for the same reason.

use rayon::prelude::*;

use crate::data::{Dataset, Session};
use crate::linalg::dropout_mask;
use crate::model::init_params;
use crate::model::{
    forward_with_mask, predict_label, HyperParams, ModelParams, OptimizerKind, StepCache,
};
use crate::rng::Rng;
use crate::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the log loss so a
/// saturated sigmoid cannot produce an infinite loss.
const LOSS_EPS: f64 = 1e-12;

/// Gradients are rescaled when their global Euclidean norm exceeds this.
const CLIP_NORM: f64 = 5.0;

/// Training halts once validation F1 stays at or above this...
const EARLY_STOP_F1: f64 = 0.999;
/// ...for this many consecutive epochs.
const EARLY_STOP_PATIENCE: usize = 5;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Sub-stream labels for deriving independent generators from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_FOLDS: u64 = 4;

/// Confusion counts and the derived rates for a binary classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Derives rates from confusion counts. Ratios with a zero denominator
    /// are reported as 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Metrics {
        let total = tp + fp + tn + fn_;
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, total),
            precision,
            recall,
            f1,
        }
    }
}

/// One line of training history.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean minibatch loss over the epoch (with dropout active).
    pub train_loss: f64,
    /// Loss on the validation set with dropout off.
    pub valid_loss: f64,
    /// Validation metrics with dropout off.
    pub valid: Metrics,
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// True when validation F1 triggered the early stop.
    pub stopped_early: bool,
}

/// Mean binary cross-entropy `-(y ln p + (1-y) ln (1-p))` over paired
/// labels and probabilities. Probabilities are clamped away from 0 and 1
/// before taking logs.
pub fn cross_entropy(labels: &[bool], probs: &[f64]) -> Result<f64> {
    if labels.len() != probs.len() {
        return Err(Error::Shape(format!(
            "{} labels vs {} probabilities",
            labels.len(),
            probs.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("cross-entropy of zero items".into()));
    }
    let mut sum = 0.0;
    for (&y, &p) in labels.iter().zip(probs) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        sum -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(sum / labels.len() as f64)
}

/// Backpropagation through one sequence. Returns the parameter gradients
/// and the loss for this sequence.
fn backward_one(
    session: &Session,
    params: &ModelParams,
    mask: Option<Vec<f64>>,
) -> Result<(ModelParams, f64)> {
    let (prob, cache) = forward_with_mask(&session.events, params, mask)?;
    let y = if session.label { 1.0 } else { 0.0 };
    let loss = {
        let p = prob.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    };

    let mut g = params.zeros_like();
    let l = params.lstm_size();
    let n = params.embedding_size();

    // Dense layer: d loss / d logit = prob - y.
    let delta = prob - y;
    for (gw, h) in g.dense_w.iter_mut().zip(&cache.masked_hidden) {
        *gw = delta * h;
    }
    g.dense_b = delta;
    // Gradient reaching the concatenated final hidden state.
    let mut d_final: Vec<f64> = params.dense_w.iter().map(|w| delta * w).collect();
    if let Some(m) = &cache.dropout_mask {
        for (d, k) in d_final.iter_mut().zip(m) {
            *d *= k;
        }
    }

    for (dir, (dp, steps)) in params.directions.iter().zip(&cache.steps).enumerate() {
        let gd = &mut g.directions[dir];
        // Only the last processing step receives a hidden-state gradient
        // from the loss; earlier steps get it through recurrence.
        let mut dh: Vec<f64> = d_final[dir * l..(dir + 1) * l].to_vec();
        let mut dc = vec![0.0; l];
        for (t, step) in steps.iter().enumerate().rev() {
            let StepCache {
                joint_input,
                forget,
                input,
                candidate,
                output,
                cell_prev,
                cell_tanh,
            } = step;
            // h = o * tanh(c)
            let mut da_output = vec![0.0; l];
            for i in 0..l {
                da_output[i] = dh[i] * cell_tanh[i] * output[i] * (1.0 - output[i]);
                dc[i] += dh[i] * output[i] * (1.0 - cell_tanh[i] * cell_tanh[i]);
            }
            // c = f * c_prev + i * g
            let mut da_forget = vec![0.0; l];
            let mut da_input = vec![0.0; l];
            let mut da_candidate = vec![0.0; l];
            for i in 0..l {
                da_forget[i] = dc[i] * cell_prev[i] * forget[i] * (1.0 - forget[i]);
                da_input[i] = dc[i] * candidate[i] * input[i] * (1.0 - input[i]);
                da_candidate[i] = dc[i] * input[i] * (1.0 - candidate[i] * candidate[i]);
            }
            // Weight and bias gradients, plus the joint-input gradient
            // dz = sum_g W_g^T da_g.
            let mut dz = vec![0.0; joint_input.len()];
            for (da, w, gw, gb) in [
                (&da_forget, &dp.w_forget, &mut gd.w_forget, &mut gd.b_forget),
                (&da_input, &dp.w_input, &mut gd.w_input, &mut gd.b_input),
                (
                    &da_candidate,
                    &dp.w_candidate,
                    &mut gd.w_candidate,
                    &mut gd.b_candidate,
                ),
                (&da_output, &dp.w_output, &mut gd.w_output, &mut gd.b_output),
            ] {
                for i in 0..l {
                    let row = gw.row_mut(i);
                    for (j, z) in joint_input.iter().enumerate() {
                        row[j] += da[i] * z;
                    }
                    gb[i] += da[i];
                    let wrow = w.row(i);
                    for (j, d) in dz.iter_mut().enumerate() {
                        *d += wrow[j] * da[i];
                    }
                }
            }
            // Split dz into the recurrent part and the embedding part.
            let next_dh = dz[..l].to_vec();
            // Processing order: direction 0 walks forward, direction 1
            // walks the reversed sequence.
            let pos = if dir == 0 {
                t
            } else {
                session.events.len() - 1 - t
            };
            let event = session.events[pos] as usize;
            let erow = g.embedding.row_mut(event);
            for (j, d) in dz[l..l + n].iter().enumerate() {
                erow[j] += d;
            }
            for i in 0..l {
                dc[i] *= forget[i];
            }
            dh = next_dh;
        }
    }
    Ok((g, loss))
}

/// Gradients and mean loss for a batch, with dropout masks drawn in batch
/// order from `rng`. Gradients are averaged over the batch.
pub fn backward(
    batch: &[&Session],
    params: &ModelParams,
    hp: &HyperParams,
    rng: &mut Rng,
) -> Result<(ModelParams, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let masks: Vec<Option<Vec<f64>>> = if hp.dropout_rate == 0.0 {
        vec![None; batch.len()]
    } else {
        batch
            .iter()
            .map(|_| dropout_mask(params.hidden_width(), hp.dropout_rate, rng).map(Some))
            .collect::<Result<_>>()?
    };
    let per_seq: Vec<(ModelParams, f64)> = batch
        .par_iter()
        .zip(masks.into_par_iter())
        .map(|(s, mask)| backward_one(s, params, mask))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (g, l) in &per_seq {
        grads.add_scaled(g, scale)?;
        loss += l * scale;
    }
    Ok((grads, loss))
}

/// Plain gradient-descent update `p -= lr * g`. A learning rate of 0 leaves
/// parameters untouched.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<()> {
    params.add_scaled(grads, -lr)
}

/// Adam first/second-moment state.
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<()> {
        self.t += 1;
        let g = grads.flat();
        let mut p = params.flat();
        if g.len() != p.len() {
            return Err(Error::Shape(
                "gradient shapes differ from parameters".into(),
            ));
        }
        let bias1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..g.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mhat = self.m[i] / bias1;
            let vhat = self.v[i] / bias2;
            p[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        params.load_flat(&p)
    }
}

/// Rescales gradients in place so their global norm is at most
/// [`CLIP_NORM`]. Returns the pre-clip norm.
fn clip_gradients(grads: &mut ModelParams) -> f64 {
    let norm = grads.l2_norm();
    if norm > CLIP_NORM {
        let s = CLIP_NORM / norm;
        grads.for_each_mut(|v| *v *= s);
    }
    norm
}

/// Failure probabilities for every session, in dataset order.
pub fn predict_probs(params: &ModelParams, ds: &Dataset) -> Result<Vec<f64>> {
    ds.sessions
        .par_iter()
        .map(|s| forward_with_mask(&s.events, params, None).map(|(p, _)| p))
        .collect()
}

/// Classification metrics over a dataset (dropout off).
pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<Metrics> {
    evaluate_with_loss(params, ds).map(|(m, _)| m)
}

/// Metrics plus mean loss over a dataset (dropout off).
pub fn evaluate_with_loss(params: &ModelParams, ds: &Dataset) -> Result<(Metrics, f64)> {
    if ds.is_empty() {
        return Err(Error::EmptyInput(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let probs = predict_probs(params, ds)?;
    let labels: Vec<bool> = ds.sessions.iter().map(|s| s.label).collect();
    let loss = cross_entropy(&labels, &probs)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&y, &p) in labels.iter().zip(&probs) {
        match (y, predict_label(p)) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    Ok((Metrics::from_counts(tp, fp, tn, fn_), loss))
}

/// Trains a model from scratch on `train_ds`, reporting validation quality
/// on `valid_ds` after every epoch. See the module docs for determinism.
pub fn train(train_ds: &Dataset, valid_ds: &Dataset, hp: &HyperParams) -> Result<TrainReport> {
    train_with_progress(train_ds, valid_ds, hp, |_| {})
}

/// [`train`] with a per-epoch callback (used by the CLI for live logs).
pub fn train_with_progress(
    train_ds: &Dataset,
    valid_ds: &Dataset,
    hp: &HyperParams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    hp.validate()?;
    if train_ds.is_empty() || valid_ds.is_empty() {
        return Err(Error::EmptyInput(
            "training needs non-empty datasets".into(),
        ));
    }
    if train_ds.vocab != valid_ds.vocab {
        return Err(Error::VocabMismatch(
            "training and validation vocabularies differ".into(),
        ));
    }
    let root = Rng::new(hp.seed);
    let mut init_rng = root.derive(STREAM_INIT);
    let mut shuffle_rng = root.derive(STREAM_SHUFFLE);
    let mut dropout_rng = root.derive(STREAM_DROPOUT);

    let mut params = init_params(hp, train_ds.vocab.len(), &mut init_rng)?;
    let mut adam = match hp.optimizer {
        OptimizerKind::Adam => Some(AdamState::new(params.num_params())),
        OptimizerKind::Sgd => None,
    };
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut stopped_early = false;

    let n = train_ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=hp.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(hp.batch_size).enumerate() {
            let batch: Vec<&Session> = chunk.iter().map(|&i| &train_ds.sessions[i]).collect();
            let (mut grads, loss) = backward(&batch, &params, hp, &mut dropout_rng)?;
            if !grads.all_finite() || !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    epoch,
                    batch: batch_idx,
                });
            }
            clip_gradients(&mut grads);
            match &mut adam {
                Some(state) => state.step(&mut params, &grads, hp.learning_rate)?,
                None => sgd_step(&mut params, &grads, hp.learning_rate)?,
            }
            loss_sum += loss * batch.len() as f64;
        }
        let (valid, valid_loss) = evaluate_with_loss(&params, valid_ds)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            valid_loss,
            valid,
        };
        on_epoch(&record);
        history.push(record);
        let run = history
            .iter()
            .rev()
            .take_while(|r| r.valid.f1 >= EARLY_STOP_F1)
            .count();
        if run >= EARLY_STOP_PATIENCE {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainReport {
        params,
        history,
        stopped_early,
    })
}

/// Mean validation F1 over `k` folds.
///
/// Sessions are put into a canonical order (sorted by events, then label)
/// before the seeded shuffle that assigns folds, so the result does not
/// depend on the order sessions arrive in. Fold `i` is every session at
/// shuffled position `p` with `p % k == i`; the model for fold `i` trains
/// on the rest with seed `hp.seed + i`.
pub fn kfold_f1(ds: &Dataset, hp: &HyperParams, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs k >= 2, got {k}"
        )));
    }
    if ds.len() < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} sessions into {k} folds",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ds.sessions[a].cmp(&ds.sessions[b]));
    Rng::new(hp.seed).derive(STREAM_FOLDS).shuffle(&mut order);
    let mut f1_sum = 0.0;
    for fold in 0..k {
        let mut train_sessions = Vec::new();
        let mut valid_sessions = Vec::new();
        for (pos, &idx) in order.iter().enumerate() {
            if pos % k == fold {
                valid_sessions.push(ds.sessions[idx].clone());
            } else {
                train_sessions.push(ds.sessions[idx].clone());
            }
        }
        let train_part = Dataset {
            vocab: ds.vocab.clone(),
            sessions: train_sessions,
            rules: ds.rules.clone(),
        };
        let valid_part = Dataset {
            vocab: ds.vocab.clone(),
            sessions: valid_sessions,
            rules: ds.rules.clone(),
        };
        let fold_hp = HyperParams {
            seed: hp.seed + fold as u64,
            ..hp.clone()
        };
        let report = train(&train_part, &valid_part, &fold_hp)?;
        f1_sum += evaluate(&report.params, &valid_part)?.f1;
    }
    Ok(f1_sum / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocab;
    use crate::model::LstmType;

    fn tiny_hp() -> HyperParams {
        HyperParams {
            embedding_size: 2,
            lstm_size: 2,
            lstm_type: LstmType::Standard,
            learning_rate: 0.1,
            dropout_rate: 0.0,
            batch_size: 8,
            max_epochs: 5,
            optimizer: OptimizerKind::Adam,
            seed: 1,
        }
    }

    /// Tiny separable dataset: label is "contains event 1".
    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let vocab = Vocab::letters(4).unwrap();
        let mut rng = Rng::new(seed);
        let sessions = (0..n)
            .map(|_| {
                let events: Vec<u32> = (0..6).map(|_| rng.next_below(4) as u32 + 1).collect();
                let label = events.contains(&1);
                Session::new(events, label)
            })
            .collect();
        Dataset {
            vocab,
            sessions,
            rules: None,
        }
    }

    #[test]
    fn cross_entropy_known_values() {
        // Coin-flip prediction on one positive and one negative: ln 2.
        let ce = cross_entropy(&[true, false], &[0.5, 0.5]).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        // Perfect confident predictions cost (almost) nothing.
        let ce = cross_entropy(&[true, false], &[1.0, 0.0]).unwrap();
        assert!(ce.abs() < 1e-10);
        // Confidently wrong costs the clamped maximum, not infinity.
        let ce = cross_entropy(&[true], &[0.0]).unwrap();
        assert!(ce.is_finite() && ce > 20.0);
    }

    #[test]
    fn cross_entropy_rejects_bad_input() {
        assert!(cross_entropy(&[true], &[0.5, 0.5]).is_err());
        assert!(cross_entropy(&[], &[]).is_err());
        assert!(cross_entropy(&[true], &[1.5]).is_err());
        assert!(cross_entropy(&[true], &[-0.1]).is_err());
    }

    #[test]
    fn sgd_step_examples() {
        let hp = tiny_hp();
        let mut params = init_params(&hp, 4, &mut Rng::new(2)).unwrap();
        let before = params.flat();
        let mut grads = params.zeros_like();
        let mut gflat = grads.flat();
        gflat[0] = 0.5;
        grads.load_flat(&gflat).unwrap();
        // lr = 0 leaves everything unchanged.
        sgd_step(&mut params, &grads, 0.0).unwrap();
        assert_eq!(params.flat(), before);
        // p = 1.0, g = 0.5, lr = 0.02 -> 0.99.
        let mut pflat = params.flat();
        pflat[0] = 1.0;
        params.load_flat(&pflat).unwrap();
        sgd_step(&mut params, &grads, 0.02).unwrap();
        assert!((params.flat()[0] - 0.99).abs() < 1e-15);
        assert_eq!(params.flat()[1], before[1]);
    }

    /// Analytic gradients against central finite differences on every
    /// parameter of a small model.
    #[test]
    fn backward_matches_finite_differences() {
        for lstm_type in [LstmType::Standard, LstmType::Bidirectional] {
            let hp = HyperParams {
                lstm_type,
                ..tiny_hp()
            };
            let params = init_params(&hp, 4, &mut Rng::new(7)).unwrap();
            let session = Session::new(vec![1, 3, 2, 4], true);
            let (grads, _) = backward_one(&session, &params, None).unwrap();
            let gflat = grads.flat();
            let base = params.flat();
            let h = 1e-5;
            for j in 0..base.len() {
                let loss_at = |v: f64| {
                    let mut flat = base.clone();
                    flat[j] = v;
                    let mut p = params.clone();
                    p.load_flat(&flat).unwrap();
                    let (prob, _) = forward_with_mask(&session.events, &p, None).unwrap();
                    cross_entropy(&[session.label], &[prob]).unwrap()
                };
                let numeric = (loss_at(base[j] + h) - loss_at(base[j] - h)) / (2.0 * h);
                let analytic = gflat[j];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "param {j}: analytic {analytic} vs numeric {numeric} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn backward_averages_over_batch() {
        let hp = tiny_hp();
        let params = init_params(&hp, 4, &mut Rng::new(3)).unwrap();
        let a = Session::new(vec![1, 2], true);
        let b = Session::new(vec![3, 4, 2], false);
        let mut rng = Rng::new(0);
        let (g_ab, loss_ab) = backward(&[&a, &b], &params, &hp, &mut rng).unwrap();
        let (g_a, loss_a) = backward_one(&a, &params, None).unwrap();
        let (g_b, loss_b) = backward_one(&b, &params, None).unwrap();
        assert!((loss_ab - (loss_a + loss_b) / 2.0).abs() < 1e-15);
        let mut expect = params.zeros_like();
        expect.add_scaled(&g_a, 0.5).unwrap();
        expect.add_scaled(&g_b, 0.5).unwrap();
        for (x, y) in g_ab.flat().iter().zip(expect.flat()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_zeroes_dense_gradient_of_dropped_units() {
        let hp = HyperParams {
            dropout_rate: 0.5,
            ..tiny_hp()
        };
        let params = init_params(&hp, 4, &mut Rng::new(5)).unwrap();
        let session = Session::new(vec![1, 2, 3], true);
        // Try masks until one actually drops a unit.
        let mut rng = Rng::new(8);
        for _ in 0..20 {
            let mask = dropout_mask(params.hidden_width(), 0.5, &mut rng).unwrap();
            let (g, _) = backward_one(&session, &params, Some(mask.clone())).unwrap();
            for (i, &m) in mask.iter().enumerate() {
                if m == 0.0 {
                    assert_eq!(g.dense_w[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let ds = toy_dataset(64, 10);
        let valid = toy_dataset(32, 11);
        let hp = HyperParams {
            max_epochs: 8,
            ..tiny_hp()
        };
        let r1 = train(&ds, &valid, &hp).unwrap();
        let r2 = train(&ds, &valid, &hp).unwrap();
        assert_eq!(r1.params, r2.params);
        assert_eq!(r1.history.len(), r2.history.len());
        let first = r1.history.first().unwrap().train_loss;
        let last = r1.history.last().unwrap().train_loss;
        assert!(last < first, "loss went from {first} to {last}");
    }

    #[test]
    fn early_stopping_halts_on_sustained_high_f1() {
        // Threshold task that a tiny model nails quickly: event 1 in the
        // first position decides the label.
        let vocab = Vocab::letters(2).unwrap();
        let sessions: Vec<Session> = (0..40)
            .map(|i| {
                if i % 2 == 0 {
                    Session::new(vec![1, 2, 2], true)
                } else {
                    Session::new(vec![2, 1, 1], false)
                }
            })
            .collect();
        let ds = Dataset {
            vocab,
            sessions,
            rules: None,
        };
        let hp = HyperParams {
            max_epochs: 100,
            learning_rate: 0.05,
            ..tiny_hp()
        };
        let report = train(&ds, &ds.clone(), &hp).unwrap();
        assert!(report.stopped_early);
        assert!(report.history.len() < 100);
        let tail = &report.history[report.history.len() - 5..];
        assert!(tail.iter().all(|r| r.valid.f1 >= 0.999));
    }

    #[test]
    fn max_epochs_zero_returns_initial_params() {
        let ds = toy_dataset(16, 1);
        let hp = HyperParams {
            max_epochs: 0,
            ..tiny_hp()
        };
        let report = train(&ds, &ds.clone(), &hp).unwrap();
        assert!(report.history.is_empty());
        let fresh = init_params(&hp, 4, &mut Rng::new(hp.seed).derive(STREAM_INIT)).unwrap();
        assert_eq!(report.params, fresh);
    }

    #[test]
    fn metrics_from_counts_hand_values() {
        let m = Metrics::from_counts(8, 2, 85, 5);
        assert!((m.precision - 0.8).abs() < 1e-15);
        assert!((m.recall - 8.0 / 13.0).abs() < 1e-15);
        assert!((m.accuracy - 0.93).abs() < 1e-15);
        let f1 = 2.0 * 0.8 * (8.0 / 13.0) / (0.8 + 8.0 / 13.0);
        assert!((m.f1 - f1).abs() < 1e-15);
        let zero = Metrics::from_counts(0, 0, 10, 0);
        assert_eq!(zero.precision, 0.0);
        assert_eq!(zero.recall, 0.0);
        assert_eq!(zero.f1, 0.0);
        assert_eq!(zero.accuracy, 1.0);
    }

    #[test]
    fn evaluate_agrees_with_per_sequence_predictions() {
        let ds = toy_dataset(40, 21);
        let hp = tiny_hp();
        let params = init_params(&hp, 4, &mut Rng::new(9)).unwrap();
        let m = evaluate(&params, &ds).unwrap();
        let probs = predict_probs(&params, &ds).unwrap();
        let mut tp = 0;
        let mut fp = 0;
        let mut tn = 0;
        let mut fn_ = 0;
        for (s, &p) in ds.sessions.iter().zip(&probs) {
            match (s.label, predict_label(p)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        assert_eq!(m, Metrics::from_counts(tp, fp, tn, fn_));
        assert_eq!(tp + fp + tn + fn_, ds.len());
    }

    #[test]
    fn kfold_is_order_independent_and_deterministic() {
        let ds = toy_dataset(30, 14);
        let hp = HyperParams {
            max_epochs: 2,
            ..tiny_hp()
        };
        let f1 = kfold_f1(&ds, &hp, 3).unwrap();
        assert!((0.0..=1.0).contains(&f1));
        // Same sessions in reversed order give the same score.
        let mut reversed = ds.clone();
        reversed.sessions.reverse();
        let f1_rev = kfold_f1(&reversed, &hp, 3).unwrap();
        assert_eq!(f1, f1_rev);
        // And the call is repeatable.
        assert_eq!(f1, kfold_f1(&ds, &hp, 3).unwrap());
    }

    #[test]
    fn kfold_rejects_degenerate_folds() {
        let ds = toy_dataset(5, 2);
        let hp = tiny_hp();
        assert!(kfold_f1(&ds, &hp, 1).is_err());
        assert!(kfold_f1(&ds, &hp, 6).is_err());
    }

    #[test]
    fn train_rejects_mismatched_vocabs_and_empty_data() {
        let ds = toy_dataset(10, 3);
        let hp = tiny_hp();
        let mut other = ds.clone();
        other.vocab = Vocab::letters(5).unwrap();
        assert!(train(&ds, &other, &hp).is_err());
        let empty = Dataset {
            vocab: ds.vocab.clone(),
            sessions: vec![],
            rules: None,
        };
        assert!(train(&ds, &empty, &hp).is_err());
    }
}
