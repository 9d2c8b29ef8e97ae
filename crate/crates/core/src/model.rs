//! LSTM sequence classifier, written out gate by gate.
//!
//! Events are embedded as dense vectors; an LSTM (one direction, or two
//! independent directions whose final states are concatenated) consumes the
//! embedded sequence; a single dense unit with a logistic sigmoid turns the
//! final hidden state into a failure probability. With `h` the hidden state,
//! `c` the cell state and `z_t = [h_{t-1}, x_t]` the joint input:
//!
//! ```text
//! f_t = sigmoid(W_f z_t + b_f)          (forget gate)
//! i_t = sigmoid(W_i z_t + b_i)          (input gate)
//! g_t = tanh   (W_g z_t + b_g)          (candidate cell update)
//! c_t = f_t * c_{t-1} + i_t * g_t
//! o_t = sigmoid(W_o z_t + b_o)          (output gate)
//! h_t = o_t * tanh(c_t)
//! ```
//!
//! Dropout (inverted, so inference needs no rescaling) is applied only to
//! the final hidden state during training.

use crate::linalg::{affine, dot, dropout_mask, sigmoid, sigmoid_vec, tanh_vec, Matrix};
use crate::rng::Rng;
use crate::{Error, Result};

/// Single direction or two independent directions over the reversed input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LstmType {
    Standard,
    Bidirectional,
}

impl LstmType {
    pub fn num_directions(self) -> usize {
        match self {
            LstmType::Standard => 1,
            LstmType::Bidirectional => 2,
        }
    }
}

/// Parameter update rule used by training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain minibatch gradient descent.
    Sgd,
    /// Adam with the usual decay constants (0.9, 0.999) and epsilon 1e-8.
    Adam,
}

/// Everything that defines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Width of the event embedding vectors.
    pub embedding_size: usize,
    /// Number of LSTM units per direction.
    pub lstm_size: usize,
    pub lstm_type: LstmType,
    pub learning_rate: f64,
    /// Dropout rate on the final hidden state (training only).
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: OptimizerKind,
    /// Seed for weight initialisation, batch shuffling and dropout.
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            embedding_size: 3,
            lstm_size: 6,
            lstm_type: LstmType::Bidirectional,
            learning_rate: 0.02,
            dropout_rate: 0.4,
            batch_size: 512,
            max_epochs: 150,
            optimizer: OptimizerKind::Adam,
            seed: 42,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_size == 0 || self.lstm_size == 0 {
            return Err(Error::InvalidArgument(
                "embedding and LSTM sizes must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Gate weights and biases for one LSTM direction. Each weight matrix is
/// `lstm_size x (lstm_size + embedding_size)` and acts on `[h_prev, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionParams {
    pub w_forget: Matrix,
    pub w_input: Matrix,
    pub w_candidate: Matrix,
    pub w_output: Matrix,
    pub b_forget: Vec<f64>,
    pub b_input: Vec<f64>,
    pub b_candidate: Vec<f64>,
    pub b_output: Vec<f64>,
}

impl DirectionParams {
    fn zeros(lstm_size: usize, embedding_size: usize) -> Self {
        let joint = lstm_size + embedding_size;
        DirectionParams {
            w_forget: Matrix::zeros(lstm_size, joint),
            w_input: Matrix::zeros(lstm_size, joint),
            w_candidate: Matrix::zeros(lstm_size, joint),
            w_output: Matrix::zeros(lstm_size, joint),
            b_forget: vec![0.0; lstm_size],
            b_input: vec![0.0; lstm_size],
            b_candidate: vec![0.0; lstm_size],
            b_output: vec![0.0; lstm_size],
        }
    }

    /// Matrices in canonical order (forget, input, candidate, output).
    pub fn matrices(&self) -> [&Matrix; 4] {
        [
            &self.w_forget,
            &self.w_input,
            &self.w_candidate,
            &self.w_output,
        ]
    }

    /// Biases in canonical order (forget, input, candidate, output).
    pub fn biases(&self) -> [&Vec<f64>; 4] {
        [
            &self.b_forget,
            &self.b_input,
            &self.b_candidate,
            &self.b_output,
        ]
    }
}

/// All trainable parameters. The same struct doubles as the gradient
/// container, since gradients share every shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `(vocab_size + 1) x embedding_size`; row 0 embeds the don't-care
    /// token used by zero-inserting perturbation.
    pub embedding: Matrix,
    /// One entry for a standard LSTM; forward then backward direction for a
    /// bi-directional one.
    pub directions: Vec<DirectionParams>,
    /// Dense read-out over the concatenated final hidden state.
    pub dense_w: Vec<f64>,
    pub dense_b: f64,
}

impl ModelParams {
    pub fn vocab_size(&self) -> usize {
        self.embedding.rows() - 1
    }

    pub fn embedding_size(&self) -> usize {
        self.embedding.cols()
    }

    pub fn lstm_size(&self) -> usize {
        self.directions[0].w_forget.rows()
    }

    pub fn lstm_type(&self) -> LstmType {
        if self.directions.len() == 2 {
            LstmType::Bidirectional
        } else {
            LstmType::Standard
        }
    }

    /// Width of the concatenated final hidden state.
    pub fn hidden_width(&self) -> usize {
        self.lstm_size() * self.directions.len()
    }

    /// Zero-valued parameters with the same shapes (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            embedding: Matrix::zeros(self.embedding.rows(), self.embedding.cols()),
            directions: self
                .directions
                .iter()
                .map(|_| DirectionParams::zeros(self.lstm_size(), self.embedding_size()))
                .collect(),
            dense_w: vec![0.0; self.dense_w.len()],
            dense_b: 0.0,
        }
    }

    /// Applies `f` to every parameter in canonical order: embedding
    /// (row-major); per direction the four gate matrices (forget, input,
    /// candidate, output; row-major) then the four biases in the same
    /// order; dense weights; dense bias.
    pub fn for_each(&self, mut f: impl FnMut(f64)) {
        for &v in self.embedding.data() {
            f(v);
        }
        for d in &self.directions {
            for m in d.matrices() {
                for &v in m.data() {
                    f(v);
                }
            }
            for b in d.biases() {
                for &v in b {
                    f(v);
                }
            }
        }
        for &v in &self.dense_w {
            f(v);
        }
        f(self.dense_b);
    }

    /// Mutable visit in the same canonical order as [`for_each`](Self::for_each).
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for v in self.embedding.data_mut() {
            f(v);
        }
        for d in &mut self.directions {
            for m in [
                &mut d.w_forget,
                &mut d.w_input,
                &mut d.w_candidate,
                &mut d.w_output,
            ] {
                for v in m.data_mut() {
                    f(v);
                }
            }
            for b in [
                &mut d.b_forget,
                &mut d.b_input,
                &mut d.b_candidate,
                &mut d.b_output,
            ] {
                for v in b.iter_mut() {
                    f(v);
                }
            }
        }
        for v in &mut self.dense_w {
            f(v);
        }
        f(&mut self.dense_b);
    }

    /// All parameters flattened in canonical order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each(|v| out.push(v));
        out
    }

    /// Overwrites parameters from a flat canonical-order slice.
    pub fn load_flat(&mut self, xs: &[f64]) -> Result<()> {
        if xs.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "model has {} parameters, got {}",
                self.num_params(),
                xs.len()
            )));
        }
        let mut it = xs.iter();
        self.for_each_mut(|v| *v = *it.next().expect("length checked"));
        Ok(())
    }

    /// `self += scale * other`, parameter-wise. Shapes must match.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        if self.embedding.rows() != other.embedding.rows()
            || self.embedding.cols() != other.embedding.cols()
            || self.directions.len() != other.directions.len()
            || self.dense_w.len() != other.dense_w.len()
        {
            return Err(Error::Shape("parameter shapes differ".into()));
        }
        self.embedding.add_scaled(&other.embedding, scale)?;
        for (d, od) in self.directions.iter_mut().zip(&other.directions) {
            d.w_forget.add_scaled(&od.w_forget, scale)?;
            d.w_input.add_scaled(&od.w_input, scale)?;
            d.w_candidate.add_scaled(&od.w_candidate, scale)?;
            d.w_output.add_scaled(&od.w_output, scale)?;
            for (b, ob) in [
                (&mut d.b_forget, &od.b_forget),
                (&mut d.b_input, &od.b_input),
                (&mut d.b_candidate, &od.b_candidate),
                (&mut d.b_output, &od.b_output),
            ] {
                for (x, y) in b.iter_mut().zip(ob) {
                    *x += scale * y;
                }
            }
        }
        for (x, y) in self.dense_w.iter_mut().zip(&other.dense_w) {
            *x += scale * y;
        }
        self.dense_b += scale * other.dense_b;
        Ok(())
    }

    /// Euclidean norm over all parameters.
    pub fn l2_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.for_each(|v| sq += v * v);
        sq.sqrt()
    }

    /// True iff every parameter is finite.
    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|v| ok &= v.is_finite());
        ok
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each(|_| n += 1);
        n
    }
}

/// Number of scalar parameters a model with these hyper-parameters and
/// vocabulary size will have, without building one.
pub fn param_count(hp: &HyperParams, vocab_size: usize) -> usize {
    let n = hp.embedding_size;
    let l = hp.lstm_size;
    let dirs = hp.lstm_type.num_directions();
    let embedding = (vocab_size + 1) * n;
    let per_direction = 4 * l * (l + n) + 4 * l;
    let dense = l * dirs + 1;
    embedding + dirs * per_direction + dense
}

/// Initialises parameters with independent draws from `U(-0.08, 0.08)`,
/// except forget-gate biases, which start at 1.0 so that cells initially
/// retain their state. Draw order is the canonical parameter order
/// (see [`ModelParams::for_each`]) minus the forget biases.
pub fn init_params(hp: &HyperParams, vocab_size: usize, rng: &mut Rng) -> Result<ModelParams> {
    hp.validate()?;
    if vocab_size == 0 {
        return Err(Error::InvalidArgument("vocabulary is empty".into()));
    }
    const SCALE: f64 = 0.08;
    fn uniform_vec(len: usize, rng: &mut Rng) -> Vec<f64> {
        (0..len).map(|_| rng.next_range(-SCALE, SCALE)).collect()
    }
    let l = hp.lstm_size;
    let joint = l + hp.embedding_size;
    let embedding = Matrix::uniform(vocab_size + 1, hp.embedding_size, -SCALE, SCALE, rng);
    let mut directions = Vec::with_capacity(hp.lstm_type.num_directions());
    for _ in 0..hp.lstm_type.num_directions() {
        let w_forget = Matrix::uniform(l, joint, -SCALE, SCALE, rng);
        let w_input = Matrix::uniform(l, joint, -SCALE, SCALE, rng);
        let w_candidate = Matrix::uniform(l, joint, -SCALE, SCALE, rng);
        let w_output = Matrix::uniform(l, joint, -SCALE, SCALE, rng);
        directions.push(DirectionParams {
            w_forget,
            w_input,
            w_candidate,
            w_output,
            b_forget: vec![1.0; l],
            b_input: uniform_vec(l, rng),
            b_candidate: uniform_vec(l, rng),
            b_output: uniform_vec(l, rng),
        });
    }
    let dense_w = uniform_vec(l * hp.lstm_type.num_directions(), rng);
    let dense_b = rng.next_range(-SCALE, SCALE);
    Ok(ModelParams {
        embedding,
        directions,
        dense_w,
        dense_b,
    })
}

/// Hidden and cell state of one direction at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl CellState {
    pub fn zeros(lstm_size: usize) -> Self {
        CellState {
            hidden: vec![0.0; lstm_size],
            cell: vec![0.0; lstm_size],
        }
    }
}

/// Intermediate values of one [`lstm_step`], kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    /// `[h_prev, x]`, the joint input the gates saw.
    pub joint_input: Vec<f64>,
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
    pub cell_prev: Vec<f64>,
    pub cell_tanh: Vec<f64>,
}

/// One LSTM cell update. `x` is the embedded event for this step.
pub fn lstm_step(
    x: &[f64],
    prev: &CellState,
    p: &DirectionParams,
) -> Result<(CellState, StepCache)> {
    let l = p.w_forget.rows();
    if prev.hidden.len() != l || prev.cell.len() != l {
        return Err(Error::Shape(format!(
            "state width {} does not match LSTM size {l}",
            prev.hidden.len()
        )));
    }
    let mut joint_input = Vec::with_capacity(l + x.len());
    joint_input.extend_from_slice(&prev.hidden);
    joint_input.extend_from_slice(x);
    let forget = sigmoid_vec(&affine(&p.w_forget, &joint_input, &p.b_forget)?);
    let input = sigmoid_vec(&affine(&p.w_input, &joint_input, &p.b_input)?);
    let candidate = tanh_vec(&affine(&p.w_candidate, &joint_input, &p.b_candidate)?);
    let output = sigmoid_vec(&affine(&p.w_output, &joint_input, &p.b_output)?);
    let cell: Vec<f64> = (0..l)
        .map(|i| forget[i] * prev.cell[i] + input[i] * candidate[i])
        .collect();
    let cell_tanh = tanh_vec(&cell);
    let hidden: Vec<f64> = (0..l).map(|i| output[i] * cell_tanh[i]).collect();
    let cache = StepCache {
        joint_input,
        forget,
        input,
        candidate,
        output,
        cell_prev: prev.cell.clone(),
        cell_tanh,
    };
    Ok((CellState { hidden, cell }, cache))
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Per direction, per processing step (direction 1 sees the sequence
    /// reversed, so its step `t` is input position `T-1-t`).
    pub steps: Vec<Vec<StepCache>>,
    /// Concatenated final hidden state, before dropout.
    pub final_hidden: Vec<f64>,
    /// Dropout mask applied to `final_hidden`, if any.
    pub dropout_mask: Option<Vec<f64>>,
    /// Final hidden state after dropout (equals `final_hidden` without).
    pub masked_hidden: Vec<f64>,
    /// Predicted failure probability.
    pub prob: f64,
}

/// Whether a forward pass draws dropout or runs deterministically.
pub enum ForwardMode<'a> {
    Train { rng: &'a mut Rng, dropout_rate: f64 },
    Infer,
}

/// Full forward pass over a session, returning the failure probability and
/// the cache needed for backpropagation.
pub fn forward(
    seq: &[u32],
    params: &ModelParams,
    mode: ForwardMode,
) -> Result<(f64, ForwardCache)> {
    let mask = match mode {
        ForwardMode::Infer => None,
        ForwardMode::Train { rng, dropout_rate } => {
            if dropout_rate == 0.0 {
                None
            } else {
                Some(dropout_mask(params.hidden_width(), dropout_rate, rng)?)
            }
        }
    };
    forward_with_mask(seq, params, mask)
}

/// Forward pass with an explicit (pre-drawn) dropout mask, so batched
/// training can draw masks in a fixed order and still run sequences in
/// parallel.
pub fn forward_with_mask(
    seq: &[u32],
    params: &ModelParams,
    mask: Option<Vec<f64>>,
) -> Result<(f64, ForwardCache)> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("cannot score an empty sequence".into()));
    }
    let vocab_size = params.vocab_size();
    if let Some(&bad) = seq.iter().find(|&&e| e as usize > vocab_size) {
        return Err(Error::EventOutOfRange {
            id: bad,
            vocab_size,
        });
    }
    if let Some(m) = &mask {
        if m.len() != params.hidden_width() {
            return Err(Error::Shape(format!(
                "dropout mask length {} does not match hidden width {}",
                m.len(),
                params.hidden_width()
            )));
        }
    }
    let l = params.lstm_size();
    let mut steps = Vec::with_capacity(params.directions.len());
    let mut final_hidden = Vec::with_capacity(params.hidden_width());
    for (dir, dp) in params.directions.iter().enumerate() {
        let mut state = CellState::zeros(l);
        let mut caches = Vec::with_capacity(seq.len());
        let order: Box<dyn Iterator<Item = &u32>> = if dir == 0 {
            Box::new(seq.iter())
        } else {
            Box::new(seq.iter().rev())
        };
        for &event in order {
            let x = params.embedding.row(event as usize);
            let (next, cache) = lstm_step(x, &state, dp)?;
            caches.push(cache);
            state = next;
        }
        final_hidden.extend_from_slice(&state.hidden);
        steps.push(caches);
    }
    let masked_hidden: Vec<f64> = match &mask {
        None => final_hidden.clone(),
        Some(m) => final_hidden.iter().zip(m).map(|(h, k)| h * k).collect(),
    };
    let prob = sigmoid(dot(&params.dense_w, &masked_hidden) + params.dense_b);
    let cache = ForwardCache {
        steps,
        final_hidden,
        dropout_mask: mask,
        masked_hidden,
        prob,
    };
    Ok((prob, cache))
}

/// Failure probability under the model, without keeping the cache.
pub fn failure_prob(seq: &[u32], params: &ModelParams) -> Result<f64> {
    forward(seq, params, ForwardMode::Infer).map(|(p, _)| p)
}

/// Decision rule: predict failure iff the probability reaches one half.
pub fn predict_label(prob: f64) -> bool {
    prob >= 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_hp() -> HyperParams {
        HyperParams {
            embedding_size: 1,
            lstm_size: 1,
            lstm_type: LstmType::Standard,
            dropout_rate: 0.0,
            ..HyperParams::default()
        }
    }

    #[test]
    fn param_count_matches_hand_formula() {
        // vocab 20, embedding 3, lstm 6:
        //   standard:      21*3 + (4*6*9 + 4*6) + (6 + 1)  = 63 + 240 + 7  = 310
        //   bidirectional: 63 + 2*240 + (12 + 1)           = 63 + 480 + 13 = 556
        let mut hp = HyperParams {
            embedding_size: 3,
            lstm_size: 6,
            lstm_type: LstmType::Standard,
            ..HyperParams::default()
        };
        assert_eq!(param_count(&hp, 20), 310);
        hp.lstm_type = LstmType::Bidirectional;
        assert_eq!(param_count(&hp, 20), 556);
    }

    #[test]
    fn init_matches_param_count_and_ranges() {
        for lstm_type in [LstmType::Standard, LstmType::Bidirectional] {
            let hp = HyperParams {
                lstm_type,
                ..HyperParams::default()
            };
            let mut rng = Rng::new(1);
            let p = init_params(&hp, 20, &mut rng).unwrap();
            assert_eq!(p.num_params(), param_count(&hp, 20));
            assert_eq!(p.flat().len(), p.num_params());
            for d in &p.directions {
                assert!(d.b_forget.iter().all(|&b| b == 1.0));
                assert!(d
                    .w_forget
                    .data()
                    .iter()
                    .all(|&v| (-0.08..0.08).contains(&v)));
            }
            assert!(p.dense_w.iter().all(|&v| (-0.08..0.08).contains(&v)));
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let hp = HyperParams::default();
        let a = init_params(&hp, 20, &mut Rng::new(5)).unwrap();
        let b = init_params(&hp, 20, &mut Rng::new(5)).unwrap();
        let c = init_params(&hp, 20, &mut Rng::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    /// Scalar LSTM step checked against values computed independently with
    /// arbitrary-precision arithmetic.
    #[test]
    fn lstm_step_scalar_hand_check() {
        let p = DirectionParams {
            w_forget: Matrix::from_vec(1, 2, vec![0.5, -0.3]).unwrap(),
            w_input: Matrix::from_vec(1, 2, vec![0.2, 0.4]).unwrap(),
            w_candidate: Matrix::from_vec(1, 2, vec![-0.5, 0.6]).unwrap(),
            w_output: Matrix::from_vec(1, 2, vec![0.3, 0.3]).unwrap(),
            b_forget: vec![1.0],
            b_input: vec![0.0],
            b_candidate: vec![0.1],
            b_output: vec![-0.2],
        };
        let prev = CellState {
            hidden: vec![0.5],
            cell: vec![-0.4],
        };
        let (next, cache) = lstm_step(&[1.0], &prev, &p).unwrap();
        // z = [0.5, 1.0]
        // f = sigmoid(0.95), i = sigmoid(0.5), g = tanh(0.45), o = sigmoid(0.25)
        // c = f*(-0.4) + i*g; h = o*tanh(c)
        assert!((cache.forget[0] - 0.721_115_178_022_863_1).abs() < 1e-15);
        assert!((cache.input[0] - 0.622_459_331_201_854_6).abs() < 1e-15);
        assert!((cache.candidate[0] - 0.421_899_005_250_007_93).abs() < 1e-15);
        assert!((cache.output[0] - 0.562_176_500_885_798_1).abs() < 1e-15);
        assert!((next.cell[0] - (-0.025_831_098_566_497_575)).abs() < 1e-15);
        assert!((next.hidden[0] - (-0.014_518_407_634_986_444)).abs() < 1e-15);
        assert_eq!(cache.joint_input, vec![0.5, 1.0]);
        assert_eq!(cache.cell_prev, vec![-0.4]);
    }

    #[test]
    fn lstm_step_rejects_mismatched_state() {
        let p = DirectionParams::zeros(2, 1);
        let bad = CellState::zeros(3);
        assert!(lstm_step(&[0.0], &bad, &p).is_err());
    }

    #[test]
    fn forward_single_step_equals_cell_plus_dense() {
        let hp = tiny_hp();
        let mut rng = Rng::new(77);
        let params = init_params(&hp, 4, &mut rng).unwrap();
        let (prob, cache) = forward(&[2], &params, ForwardMode::Infer).unwrap();
        let x = params.embedding.row(2);
        let (state, _) = lstm_step(x, &CellState::zeros(1), &params.directions[0]).unwrap();
        assert_eq!(cache.final_hidden, state.hidden);
        let expected = sigmoid(params.dense_w[0] * state.hidden[0] + params.dense_b);
        assert_eq!(prob, expected);
    }

    #[test]
    fn bidirectional_concatenates_forward_and_reversed_runs() {
        let hp = HyperParams {
            embedding_size: 2,
            lstm_size: 3,
            lstm_type: LstmType::Bidirectional,
            dropout_rate: 0.0,
            ..HyperParams::default()
        };
        let mut rng = Rng::new(9);
        let params = init_params(&hp, 5, &mut rng).unwrap();
        let seq = [1u32, 4, 2, 5];
        let (_, cache) = forward(&seq, &params, ForwardMode::Infer).unwrap();

        // Recompute each direction with bare lstm_step calls.
        let run = |events: &[u32], dp: &DirectionParams| {
            let mut st = CellState::zeros(3);
            for &e in events {
                st = lstm_step(params.embedding.row(e as usize), &st, dp)
                    .unwrap()
                    .0;
            }
            st.hidden
        };
        let fwd = run(&seq, &params.directions[0]);
        let rev: Vec<u32> = seq.iter().rev().copied().collect();
        let bwd = run(&rev, &params.directions[1]);
        assert_eq!(cache.final_hidden[..3], fwd[..]);
        assert_eq!(cache.final_hidden[3..], bwd[..]);
    }

    #[test]
    fn forward_rejects_empty_and_out_of_range() {
        let hp = tiny_hp();
        let params = init_params(&hp, 4, &mut Rng::new(1)).unwrap();
        assert!(forward(&[], &params, ForwardMode::Infer).is_err());
        assert!(forward(&[5], &params, ForwardMode::Infer).is_err());
        assert!(forward(&[4], &params, ForwardMode::Infer).is_ok());
        assert!(
            forward(&[0], &params, ForwardMode::Infer).is_ok(),
            "don't-care token is scoreable"
        );
    }

    #[test]
    fn train_mode_without_dropout_matches_inference() {
        let hp = HyperParams {
            dropout_rate: 0.0,
            ..HyperParams::default()
        };
        let params = init_params(&hp, 10, &mut Rng::new(3)).unwrap();
        let seq = [1u32, 2, 3, 4];
        let (p_infer, _) = forward(&seq, &params, ForwardMode::Infer).unwrap();
        let mut rng = Rng::new(99);
        let mode = ForwardMode::Train {
            rng: &mut rng,
            dropout_rate: 0.0,
        };
        let (p_train, cache) = forward(&seq, &params, mode).unwrap();
        assert_eq!(p_infer, p_train);
        assert!(cache.dropout_mask.is_none());
    }

    #[test]
    fn dropout_masks_final_hidden_state() {
        let hp = HyperParams {
            dropout_rate: 0.5,
            ..HyperParams::default()
        };
        let params = init_params(&hp, 10, &mut Rng::new(3)).unwrap();
        let seq = [1u32, 2, 3];
        let mut rng = Rng::new(4);
        let mode = ForwardMode::Train {
            rng: &mut rng,
            dropout_rate: hp.dropout_rate,
        };
        let (_, cache) = forward(&seq, &params, mode).unwrap();
        let mask = cache.dropout_mask.as_ref().unwrap();
        assert_eq!(mask.len(), params.hidden_width());
        for ((h, k), m) in cache
            .final_hidden
            .iter()
            .zip(&cache.masked_hidden)
            .zip(mask)
        {
            assert_eq!(*k, h * m);
        }
    }

    #[test]
    fn predict_label_threshold_is_one_half_inclusive() {
        assert!(predict_label(0.5));
        assert!(predict_label(0.9));
        assert!(!predict_label(0.499_999_999));
        assert!(!predict_label(0.0));
    }

    #[test]
    fn flat_round_trips() {
        let hp = HyperParams::default();
        let p = init_params(&hp, 8, &mut Rng::new(21)).unwrap();
        let flat = p.flat();
        let mut q = p.zeros_like();
        q.load_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(q.load_flat(&flat[1..]).is_err());
    }

    #[test]
    fn add_scaled_and_norm() {
        let hp = tiny_hp();
        let p = init_params(&hp, 2, &mut Rng::new(2)).unwrap();
        let mut acc = p.zeros_like();
        acc.add_scaled(&p, 2.0).unwrap();
        let expect: Vec<f64> = p.flat().iter().map(|v| 2.0 * v).collect();
        assert_eq!(acc.flat(), expect);
        let norm = p.l2_norm();
        let byhand = p.flat().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_eq!(norm, byhand);
        assert!(p.all_finite());
    }

    #[test]
    fn hyperparams_validation() {
        let mut hp = HyperParams::default();
        assert!(hp.validate().is_ok());
        hp.learning_rate = 0.0;
        assert!(hp.validate().is_err());
        hp.learning_rate = 0.02;
        hp.dropout_rate = 1.0;
        assert!(hp.validate().is_err());
        hp.dropout_rate = 0.4;
        hp.batch_size = 0;
        assert!(hp.validate().is_err());
    }
}
