//! Hyper-parameter search with a Gaussian-process surrogate and the
//! expected-improvement acquisition function.
//!
//! The surrogate is GP regression with a squared-exponential kernel over a
//! unit hypercube encoding of the search space. Observed objective values
//! are centred on their mean, which acts as the prior mean. Proposals
//! maximise expected improvement over a fixed-size pool of uniformly drawn,
//! snapped candidates; everything is driven by the explicit seed, so a
//! search is exactly repeatable.
//!
//! The optimisation core is generic over the objective so it can be
//! validated on closed-form functions; [`tune`] instantiates it with
//! k-fold cross-validated F1 of a trained classifier.

use crate::data::Dataset;
use crate::linalg::Matrix;
use crate::model::{HyperParams, LstmType};
use crate::rng::Rng;
use crate::train::kfold_f1;
use crate::{Error, Result};

/// Squared-exponential kernel parameters (fixed during a search).
#[derive(Debug, Clone, Copy)]
pub struct KernelConfig {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            length_scale: 0.3,
            signal_variance: 0.25,
            noise_variance: 1e-4,
        }
    }
}

impl KernelConfig {
    fn validate(&self) -> Result<()> {
        if self.length_scale <= 0.0 || self.signal_variance <= 0.0 || self.noise_variance < 0.0 {
            return Err(Error::InvalidArgument(
                "kernel needs positive length scale and signal variance, non-negative noise".into(),
            ));
        }
        Ok(())
    }

    fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-sq / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix. Fails when a pivot is not positive.
pub(crate) fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Solves `L z = b` for lower-triangular `L`.
fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for (k, zk) in z[..i].iter().enumerate() {
            s -= l.get(i, k) * zk;
        }
        z[i] = s / l.get(i, i);
    }
    z
}

/// Solves `L^T x = b` for lower-triangular `L`.
fn solve_upper_t(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for (k, xk) in x.iter().enumerate().skip(i + 1) {
            s -= l.get(k, i) * xk;
        }
        x[i] = s / l.get(i, i);
    }
    x
}

/// Fitted Gaussian-process posterior.
#[derive(Debug, Clone)]
pub struct Gp {
    kernel: KernelConfig,
    points: Vec<Vec<f64>>,
    mean: f64,
    chol: Matrix,
    alpha: Vec<f64>,
}

/// Fits a GP to observations. The kernel matrix gets the configured noise
/// on its diagonal; if the Cholesky factorisation still fails (duplicated
/// points with tiny noise), escalating jitter up to 1e-4 is added before
/// giving up.
pub fn gp_fit(points: &[Vec<f64>], values: &[f64], kernel: &KernelConfig) -> Result<Gp> {
    kernel.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyInput(
            "GP needs at least one observation".into(),
        ));
    }
    if points.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} points vs {} values",
            points.len(),
            values.len()
        )));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape(
            "points must share a positive dimension".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite objective value".into()));
    }
    let n = points.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let mut base = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut v = kernel.k(&points[i], &points[j]);
            if i == j {
                v += kernel.noise_variance;
            }
            base.set(i, j, v);
        }
    }
    const MAX_JITTER: f64 = 1e-4;
    let mut jitter = 0.0;
    let chol = loop {
        let mut k = base.clone();
        if jitter > 0.0 {
            for i in 0..n {
                k.set(i, i, k.get(i, i) + jitter);
            }
        }
        if let Some(l) = cholesky(&k) {
            break l;
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_JITTER {
            return Err(Error::NotPositiveDefinite {
                max_jitter: MAX_JITTER,
            });
        }
    };
    let z = solve_lower(&chol, &centred);
    let alpha = solve_upper_t(&chol, &z);
    Ok(Gp {
        kernel: *kernel,
        points: points.to_vec(),
        mean,
        chol,
        alpha,
    })
}

impl Gp {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Posterior mean and variance of the latent function at `x`. Variance
    /// is clamped at zero against rounding.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "query dimension {} vs GP dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let kstar: Vec<f64> = self.points.iter().map(|p| self.kernel.k(x, p)).collect();
        let mean = self.mean
            + kstar
                .iter()
                .zip(&self.alpha)
                .map(|(k, a)| k * a)
                .sum::<f64>();
        let v = solve_lower(&self.chol, &kstar);
        let var = self.kernel.signal_variance - v.iter().map(|x| x * x).sum::<f64>();
        Ok((mean, var.max(0.0)))
    }
}

/// Standard normal cumulative distribution function.
fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Standard normal density.
fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement of sampling at `x` over the incumbent `best`
/// (maximisation). With posterior mean m and deviation s:
/// `EI = (m - best) * Phi((m - best)/s) + s * phi((m - best)/s)`,
/// degenerating to `max(m - best, 0)` when s is zero.
pub fn expected_improvement(gp: &Gp, x: &[f64], best: f64) -> Result<f64> {
    let (mean, var) = gp.posterior(x)?;
    let sigma = var.sqrt();
    let gain = mean - best;
    if sigma == 0.0 {
        return Ok(gain.max(0.0));
    }
    let z = gain / sigma;
    Ok(gain * normal_cdf(z) + sigma * normal_pdf(z))
}

/// Draws `pool_size` uniform candidates in the unit cube, snaps each to the
/// search grid, and returns the one with the highest expected improvement.
/// Ties keep the earliest draw, so the result is fully determined by the
/// generator state.
pub fn propose_next(
    gp: &Gp,
    best: f64,
    snap: &dyn Fn(&mut [f64]),
    rng: &mut Rng,
    pool_size: usize,
) -> Result<Vec<f64>> {
    if pool_size == 0 {
        return Err(Error::InvalidArgument(
            "candidate pool must be non-empty".into(),
        ));
    }
    let dim = gp.dim();
    let mut winner: Option<(Vec<f64>, f64)> = None;
    for _ in 0..pool_size {
        let mut x: Vec<f64> = (0..dim).map(|_| rng.next_uniform()).collect();
        snap(&mut x);
        let ei = expected_improvement(gp, &x, best)?;
        match &winner {
            Some((_, best_ei)) if ei <= *best_ei => {}
            _ => winner = Some((x, ei)),
        }
    }
    Ok(winner.expect("non-empty pool").0)
}

/// One objective evaluation in an optimisation trace.
#[derive(Debug, Clone)]
pub struct TracePoint {
    /// 1-based evaluation number.
    pub iteration: usize,
    pub point: Vec<f64>,
    pub value: f64,
}

/// Search settings.
#[derive(Debug, Clone)]
pub struct TuneConfig {
    /// Total number of objective evaluations.
    pub budget: usize,
    /// How many of those are uniform random before the surrogate starts.
    pub init_points: usize,
    /// Candidate pool size per proposal.
    pub pool_size: usize,
    /// Folds for the cross-validated objective in [`tune`].
    pub folds: usize,
    pub kernel: KernelConfig,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            budget: 20,
            init_points: 5,
            pool_size: 2048,
            folds: 5,
            kernel: KernelConfig::default(),
            seed: 42,
        }
    }
}

impl TuneConfig {
    fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.init_points == 0 {
            return Err(Error::InvalidArgument(
                "budget and init points must be positive".into(),
            ));
        }
        if self.pool_size == 0 {
            return Err(Error::InvalidArgument(
                "candidate pool must be non-empty".into(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::InvalidArgument(
                "cross-validation needs >= 2 folds".into(),
            ));
        }
        Ok(())
    }
}

/// Maximises `objective` over the `dim`-dimensional unit cube. The first
/// `init_points` evaluations are uniform random (snapped); the rest are
/// expected-improvement proposals. Returns the best point (earliest on
/// ties) and the full trace.
pub fn optimize(
    dim: usize,
    mut objective: impl FnMut(&[f64]) -> f64,
    snap: impl Fn(&mut [f64]),
    cfg: &TuneConfig,
) -> Result<(Vec<f64>, Vec<TracePoint>)> {
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "search space has no dimensions".into(),
        ));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut trace: Vec<TracePoint> = Vec::with_capacity(cfg.budget);
    let mut evaluate = |x: Vec<f64>, trace: &mut Vec<TracePoint>| {
        let value = objective(&x);
        trace.push(TracePoint {
            iteration: trace.len() + 1,
            point: x,
            value,
        });
    };
    for _ in 0..cfg.init_points.min(cfg.budget) {
        let mut x: Vec<f64> = (0..dim).map(|_| rng.next_uniform()).collect();
        snap(&mut x);
        evaluate(x, &mut trace);
    }
    while trace.len() < cfg.budget {
        let points: Vec<Vec<f64>> = trace.iter().map(|t| t.point.clone()).collect();
        let values: Vec<f64> = trace.iter().map(|t| t.value).collect();
        let gp = gp_fit(&points, &values, &cfg.kernel)?;
        let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x = propose_next(&gp, best, &snap, &mut rng, cfg.pool_size)?;
        evaluate(x, &mut trace);
    }
    let best = trace
        .iter()
        .max_by(|a, b| {
            a.value
                .partial_cmp(&b.value)
                .unwrap_or(std::cmp::Ordering::Equal)
                // Earliest wins ties: later entries must compare smaller.
                .then(b.iteration.cmp(&a.iteration))
        })
        .expect("budget >= 1");
    Ok((best.point.clone(), trace))
}

/// The concrete classifier search space, encoded in the 4-dimensional unit
/// cube:
///
/// | coordinate | meaning          | decoding                          |
/// |-----------:|------------------|-----------------------------------|
/// | 0          | learning rate    | log-uniform `10^(-3 + 2 c)`       |
/// | 1          | embedding size   | `2 + round(6 c)`, giving 2..=8    |
/// | 2          | LSTM size        | `4 + round(12 c)`, giving 4..=16  |
/// | 3          | LSTM type        | below one half standard, else bi- |
///
/// Snapping moves discrete coordinates onto their grid so the surrogate
/// sees each discrete choice as one point.
#[derive(Debug, Clone, Copy, Default)]
pub struct HpSpace;

impl HpSpace {
    pub const DIM: usize = 4;

    /// Moves a raw cube point onto the search grid (idempotent).
    pub fn snap(x: &mut [f64]) {
        debug_assert_eq!(x.len(), Self::DIM);
        x[1] = (x[1] * 6.0).round() / 6.0;
        x[2] = (x[2] * 12.0).round() / 12.0;
        x[3] = if x[3] < 0.5 { 0.0 } else { 1.0 };
    }

    /// Decodes a snapped point into hyper-parameters, inheriting everything
    /// outside the search space (batch size, epochs, dropout, optimizer,
    /// seed) from `base`.
    pub fn decode(x: &[f64], base: &HyperParams) -> Result<HyperParams> {
        if x.len() != Self::DIM {
            return Err(Error::Shape(format!(
                "expected {} coordinates, got {}",
                Self::DIM,
                x.len()
            )));
        }
        if x.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::InvalidArgument(format!(
                "coordinates outside the unit cube: {x:?}"
            )));
        }
        Ok(HyperParams {
            learning_rate: 10f64.powf(-3.0 + 2.0 * x[0]),
            embedding_size: 2 + (x[1] * 6.0).round() as usize,
            lstm_size: 4 + (x[2] * 12.0).round() as usize,
            lstm_type: if x[3] < 0.5 {
                LstmType::Standard
            } else {
                LstmType::Bidirectional
            },
            ..base.clone()
        })
    }
}

/// One hyper-parameter evaluation in a [`tune`] trace.
#[derive(Debug, Clone)]
pub struct TuneTracePoint {
    pub iteration: usize,
    pub point: Vec<f64>,
    pub hp: HyperParams,
    pub score: f64,
}

/// Outcome of a hyper-parameter search.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: HyperParams,
    pub best_score: f64,
    pub trace: Vec<TuneTracePoint>,
}

/// Searches the classifier hyper-parameter space for the best k-fold
/// cross-validated F1 on `ds`. Evaluations that fail to train (for example
/// through numeric blow-up at an extreme learning rate) score 0 rather
/// than aborting the search.
pub fn tune(ds: &Dataset, base: &HyperParams, cfg: &TuneConfig) -> Result<TuneOutcome> {
    cfg.validate()?;
    let objective = |x: &[f64]| -> f64 {
        HpSpace::decode(x, base)
            .and_then(|hp| kfold_f1(ds, &hp, cfg.folds))
            .unwrap_or(0.0)
    };
    let (best_point, trace) = optimize(HpSpace::DIM, objective, HpSpace::snap, cfg)?;
    let trace: Vec<TuneTracePoint> = trace
        .into_iter()
        .map(|t| {
            Ok(TuneTracePoint {
                iteration: t.iteration,
                hp: HpSpace::decode(&t.point, base)?,
                point: t.point,
                score: t.value,
            })
        })
        .collect::<Result<_>>()?;
    let best_score = trace
        .iter()
        .map(|t| t.score)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(TuneOutcome {
        best: HpSpace::decode(&best_point, base)?,
        best_score,
        trace,
    })
}
