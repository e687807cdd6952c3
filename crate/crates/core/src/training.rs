//! Gradients, optimizers and the training loop.
//!
//! Four gradient routes are provided:
//! * [`grad_linear_analytic`] for the exact averaged loss of a linear network,
//! * [`grad_bptt`] for the empirical batch loss of any network,
//! * [`grad_proxy_relu`] for the two-point ReLU proxy,
//! * [`grad_proxy_generic`] for the sampled proxy of any activation and any
//!   number of channels.
//!
//! The ReLU derivative at exactly zero is 0 in backpropagation through time
//! and 1/2 in the proxy gradients.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::losses::{self, check_multi, proxy_eval, ChiMatrix, ProxyDomain};
use crate::model::{self, Activation, NetworkParams, TaskSpec};
use crate::numerics::{dot, gemm, normalize, Matrix};
use crate::rng::{self, gaussian_vec};

/// ReLU derivative at zero used by the proxy gradients.
pub const PROXY_HEAVISIDE_AT_ZERO: f64 = 0.5;

/// Gradient of the averaged linear loss with respect to `W`:
/// `2 sum_{q,p} chi_qp (mu_q - s gamma^q) sum_{m<p} (W^T)^m d (W^{p-1-m} e)^T`.
pub fn grad_linear_analytic(w: &Matrix, e: &[f64], d: &[f64], s: f64, gamma: f64, chi: &ChiMatrix) -> Result<Matrix> {
    let n = w.rows();
    if !w.is_square() || e.len() != n || d.len() != n {
        return Err(shape("grad_linear_analytic", format!("{n}x{n} W and vectors"), format!("{}x{}", w.rows(), w.cols())));
    }
    let t_len = chi.t_len();
    // b_k = W^k e and a_m = (W^T)^m d for k, m < T.
    let mut b = Vec::with_capacity(t_len);
    let mut a = Vec::with_capacity(t_len);
    b.push(e.to_vec());
    a.push(d.to_vec());
    for k in 1..t_len {
        b.push(w.matvec(&b[k - 1]));
        a.push(w.tr_matvec(&a[k - 1]));
    }
    let mu_last = dot(d, &w.matvec(&b[t_len - 1]));
    let r: Vec<f64> = (1..=t_len)
        .map(|q| {
            let mu = if q < t_len { dot(d, &b[q]) } else { mu_last };
            mu - s * gamma.powi(q as i32)
        })
        .collect();
    // c_p = sum_q chi_qp r_q, indexed from 0 for lag p = 1.
    let c = chi.entries().tr_matvec(&r);
    let mut grad = Matrix::zeros(n, n);
    for (m, am) in a.iter().enumerate() {
        let mut v = vec![0.0; n];
        for (k, bk) in b.iter().enumerate().take(t_len - m) {
            crate::numerics::axpy(c[m + k], bk, &mut v);
        }
        grad.add_outer(2.0, am, &v);
    }
    Ok(grad)
}

/// Batch loss and its gradient by backpropagation through time.
pub fn loss_and_grad_bptt(p: &NetworkParams, spec: &TaskSpec, inputs: &[Matrix]) -> Result<(f64, Matrix)> {
    let xs = model::stack_by_time(inputs)?;
    loss_and_grad_bptt_stacked(p, spec, &xs)
}

fn loss_and_grad_bptt_stacked(p: &NetworkParams, spec: &TaskSpec, xs: &[Matrix]) -> Result<(f64, Matrix)> {
    if p.channels() != spec.channels() || xs[0].cols() != spec.channels() {
        return Err(shape("grad_bptt", format!("{} channels", spec.channels()), xs[0].cols()));
    }
    let fwd = model::forward_batch(p, xs)?;
    let targets = model::stacked_targets(spec, xs);
    let (bsz, n, t_len) = (xs[0].rows(), p.n(), xs.len());
    let scale = 2.0 / bsz as f64;
    let act = p.activation();
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, n);
    let mut g_u_next = Matrix::zeros(bsz, n);
    let mut g_h = Matrix::zeros(bsz, n);
    for t in (0..t_len).rev() {
        let mut dy = fwd.outputs[t].sub(&targets[t]);
        loss += dot(dy.as_slice(), dy.as_slice());
        dy.scale(scale);
        g_h.as_mut_slice().copy_from_slice(g_u_next.as_slice());
        gemm(1.0, &dy, false, p.decoders(), false, 1.0, &mut g_h);
        if act != Activation::Linear {
            let nu = fwd.currents[t].as_slice();
            let h = fwd.states[t].as_slice();
            for ((g, &x), &y) in g_h.as_mut_slice().iter_mut().zip(nu).zip(h) {
                *g *= act.derivative(x, y, 0.0);
            }
        }
        // g_h now holds dL/dnu_t.
        gemm(1.0, &g_h, true, &fwd.drives[t], false, 1.0, &mut grad);
        gemm(1.0, &g_h, false, p.w(), false, 0.0, &mut g_u_next);
    }
    Ok((loss / bsz as f64, grad))
}

/// Gradient of [`losses::batch_loss`] with respect to `W`.
pub fn grad_bptt(p: &NetworkParams, spec: &TaskSpec, inputs: &[Matrix]) -> Result<Matrix> {
    Ok(loss_and_grad_bptt(p, spec, inputs)?.1)
}

/// Gradient of [`losses::proxy_relu_loss`], with Heaviside(0) = 1/2.
///
/// For `z = +-1`, `u = zWe`, `a = R(u)`, `rho = Wa - z gamma We`:
/// the decoder term contributes `2 (d.a - z s gamma) z (d o H(u)) e^T` and
/// the state term `2 rho (a - z gamma e)^T + 2 z (H(u) o W^T rho) e^T`.
pub fn grad_proxy_relu(w: &Matrix, e: &[f64], d: &[f64], s: f64, gamma: f64) -> Result<Matrix> {
    let n = w.rows();
    if !w.is_square() || e.len() != n || d.len() != n {
        return Err(shape("grad_proxy_relu", format!("{n}x{n} W and vectors"), format!("{}x{}", w.rows(), w.cols())));
    }
    let we = w.matvec(e);
    let mut grad = Matrix::zeros(n, n);
    for z in [1.0, -1.0] {
        let u: Vec<f64> = we.iter().map(|v| z * v).collect();
        let h: Vec<f64> = u.iter().map(|&x| heaviside(x)).collect();
        let a: Vec<f64> = u.iter().map(|&x| x.max(0.0)).collect();
        let dec = dot(d, &a) - z * s * gamma;
        let wa = w.matvec(&a);
        let rho: Vec<f64> = wa.iter().zip(&we).map(|(x, y)| x - z * gamma * y).collect();
        let wt_rho = w.tr_matvec(&rho);
        let left: Vec<f64> = (0..n)
            .map(|i| 2.0 * z * (dec * d[i] * h[i] + h[i] * wt_rho[i]))
            .collect();
        grad.add_outer(1.0, &left, e);
        let shifted: Vec<f64> = a.iter().zip(e).map(|(x, y)| x - z * gamma * y).collect();
        grad.add_outer(2.0, &rho, &shifted);
    }
    Ok(grad)
}

fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        PROXY_HEAVISIDE_AT_ZERO
    }
}

/// Gradient of [`losses::proxy_multi_loss`] (and of the single-channel
/// generic proxy when `D = 1`).
pub fn grad_proxy_generic(p: &NetworkParams, spec: &TaskSpec, dom: &ProxyDomain) -> Result<Matrix> {
    Ok(loss_and_grad_proxy(p, spec, dom, 0)?.1)
}

fn loss_and_grad_proxy(p: &NetworkParams, spec: &TaskSpec, dom: &ProxyDomain, draw: u64) -> Result<(f64, Matrix)> {
    check_multi(p, spec, dom)?;
    let z = dom.points_at(draw)?;
    let ev = proxy_eval(
        p.w(),
        p.encoders(),
        p.decoders(),
        &spec.scales,
        &spec.gammas,
        p.activation(),
        &z,
        PROXY_HEAVISIDE_AT_ZERO,
        true,
    );
    Ok((ev.loss, ev.grad.expect("gradient requested")))
}

/// Central finite-difference gradient of `f` at `w`.
pub fn finite_difference_gradient(w: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = w.clone();
    Matrix::from_fn(w.rows(), w.cols(), |i, j| {
        let orig = probe[(i, j)];
        probe[(i, j)] = orig + h;
        let up = f(&probe);
        probe[(i, j)] = orig - h;
        let down = f(&probe);
        probe[(i, j)] = orig;
        (up - down) / (2.0 * h)
    })
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = match *self {
            OptimizerKind::Gd { lr } => lr,
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                for (name, b) in [("optimizer.beta1", beta1), ("optimizer.beta2", beta2)] {
                    if !(0.0..1.0).contains(&b) {
                        return Err(invalid(name, format!("must lie in [0, 1), got {b}")));
                    }
                }
                if !(eps > 0.0) {
                    return Err(invalid("optimizer.eps", format!("must be positive, got {eps}")));
                }
                lr
            }
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(invalid("optimizer.lr", format!("must be positive, got {lr}")));
        }
        Ok(())
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// Optimizer with its moment buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_count: u64,
    m: Option<Matrix>,
    v: Option<Matrix>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            step_count: 0,
            m: None,
            v: None,
        })
    }
}

/// Applies one update to `w` in place.
pub fn optimizer_step(state: &mut OptimizerState, w: &mut Matrix, grad: &Matrix) -> Result<()> {
    if (w.rows(), w.cols()) != (grad.rows(), grad.cols()) {
        return Err(shape("optimizer_step", format!("{}x{}", w.rows(), w.cols()), format!("{}x{}", grad.rows(), grad.cols())));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient",
            step: Some(state.step_count as usize),
        });
    }
    state.step_count += 1;
    match state.kind {
        OptimizerKind::Gd { lr } => w.axpy(-lr, grad),
        OptimizerKind::Adam { lr, beta1, beta2, eps } => {
            let m = state.m.get_or_insert_with(|| Matrix::zeros(w.rows(), w.cols()));
            let v = state.v.get_or_insert_with(|| Matrix::zeros(w.rows(), w.cols()));
            let t = state.step_count as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((wi, &g), mi), vi) in w
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
    }
    if !w.is_finite() {
        return Err(Error::NonFinite {
            context: "weights after update",
            step: Some(state.step_count as usize),
        });
    }
    Ok(())
}

/// Sign constraint per column of `W` (outgoing weights of a neuron).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaleMask {
    /// `+1` excitatory, `-1` inhibitory.
    pub signs: Vec<i8>,
    pub fraction_inhibitory: f64,
}

impl DaleMask {
    /// Marks `round(fraction * n)` randomly chosen columns as inhibitory.
    pub fn random(n: usize, fraction_inhibitory: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction_inhibitory) {
            return Err(invalid("constraints.dale_fraction", format!("must lie in [0, 1], got {fraction_inhibitory}")));
        }
        let k = (fraction_inhibitory * n as f64).round() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::seeded(seed, rng::stream::INIT + 100));
        let mut signs = vec![1i8; n];
        for &i in &idx[..k] {
            signs[i] = -1;
        }
        Ok(Self {
            signs,
            fraction_inhibitory,
        })
    }

    pub fn from_signs(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(invalid("dale.signs", "entries must be +1 or -1"));
        }
        let frac = signs.iter().filter(|&&s| s < 0).count() as f64 / signs.len().max(1) as f64;
        Ok(Self {
            signs,
            fraction_inhibitory: frac,
        })
    }

    pub fn is_inhibitory(&self, j: usize) -> bool {
        self.signs[j] < 0
    }

    /// Number of entries of `w` whose sign contradicts the mask.
    pub fn violations(&self, w: &Matrix) -> usize {
        (0..w.rows())
            .map(|i| (0..w.cols()).filter(|&j| f64::from(self.signs[j]) * w[(i, j)] < 0.0).count())
            .sum()
    }

    /// Replaces every entry by its magnitude with the column's sign.
    pub fn impose(&self, w: &Matrix) -> Matrix {
        Matrix::from_fn(w.rows(), w.cols(), |i, j| f64::from(self.signs[j]) * w[(i, j)].abs())
    }
}

/// Zeroes the entries of `w_after` whose sign contradicts the mask.
/// `w_before` must already be compliant.
pub fn dale_project(w_before: &Matrix, w_after: &Matrix, mask: &DaleMask) -> Result<Matrix> {
    if (w_before.rows(), w_before.cols()) != (w_after.rows(), w_after.cols()) || mask.signs.len() != w_after.cols() {
        return Err(shape("dale_project", format!("{} columns", mask.signs.len()), w_after.cols()));
    }
    if mask.violations(w_before) > 0 {
        return Err(invalid("dale_project", "starting matrix violates the sign mask"));
    }
    let mut out = w_after.clone();
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            if f64::from(mask.signs[j]) * out[(i, j)] < 0.0 {
                out[(i, j)] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Objective optimised by [`train`].
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// Exact averaged loss of a linear single-channel network.
    AveragedLinear { chi: ChiMatrix },
    /// Empirical loss on a fresh batch of `spec`-distributed inputs each step.
    Batch { batch: usize },
    /// Two-point ReLU proxy (single channel).
    ProxyRelu,
    /// Sampled proxy for any activation and channel count.
    Proxy { domain: ProxyDomain },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::AveragedLinear { .. } => "averaged_linear",
            LossKind::Batch { .. } => "batch",
            LossKind::ProxyRelu => "proxy_relu",
            LossKind::Proxy { .. } => "proxy",
        }
    }
}

/// Optional structural constraints applied after every update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraints {
    pub dale: Option<DaleMask>,
}

/// Loop settings of [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub seed: u64,
    /// Stop once the loss falls below this value.
    #[serde(default = "default_stop_loss")]
    pub stop_loss: f64,
    /// Stop once the gradient norm falls below this value.
    #[serde(default = "default_stop_grad")]
    pub stop_grad_norm: f64,
}

fn default_stop_loss() -> f64 {
    1e-12
}
fn default_stop_grad() -> f64 {
    1e-10
}

impl TrainOptions {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            seed,
            stop_loss: default_stop_loss(),
            stop_grad_norm: default_stop_grad(),
        }
    }

    pub fn with_stop_loss(mut self, stop_loss: f64) -> Self {
        self.stop_loss = stop_loss;
        self
    }

    pub fn with_stop_grad_norm(mut self, g: f64) -> Self {
        self.stop_grad_norm = g;
        self
    }
}

/// Why training ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    StepBudget,
    LossThreshold,
    GradientThreshold,
    Diverged { step: usize, message: String },
}

/// History of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Loss evaluated before each update.
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub loss_kind: String,
    pub optimizer: OptimizerKind,
    pub options: TrainOptions,
    pub stop: StopReason,
}

impl TrainRecord {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    pub fn diverged(&self) -> bool {
        matches!(self.stop, StopReason::Diverged { .. })
    }
}

fn single_channel(p: &NetworkParams, what: &str) -> Result<()> {
    if p.channels() != 1 {
        return Err(invalid("training.loss", format!("{what} needs a single channel, network has {}", p.channels())));
    }
    Ok(())
}

/// Runs gradient-based training. Deterministic in `opts.seed`.
///
/// A failing forward pass or a non-finite update stops the loop; the record
/// is still returned with [`StopReason::Diverged`], together with the last
/// finite weights.
pub fn train(
    mut p: NetworkParams,
    spec: &TaskSpec,
    loss: &LossKind,
    optimizer: OptimizerKind,
    opts: &TrainOptions,
    constraints: &Constraints,
) -> Result<(NetworkParams, TrainRecord)> {
    spec.validate()?;
    if p.channels() != spec.channels() {
        return Err(shape("train", format!("{} channels", spec.channels()), p.channels()));
    }
    match loss {
        LossKind::AveragedLinear { .. } => {
            single_channel(&p, "averaged_linear")?;
            if p.activation() != Activation::Linear {
                return Err(invalid("training.loss", "averaged_linear requires a linear activation"));
            }
        }
        LossKind::ProxyRelu => {
            single_channel(&p, "proxy_relu")?;
            if p.activation() != Activation::Relu {
                return Err(invalid("training.loss", "proxy_relu requires a ReLU activation"));
            }
        }
        LossKind::Proxy { domain } => {
            domain.validate()?;
            check_multi(&p, spec, domain)?;
        }
        LossKind::Batch { batch } => {
            if *batch == 0 {
                return Err(invalid("training.batch", "must be at least 1"));
            }
        }
    }
    if let Some(mask) = &constraints.dale {
        if mask.signs.len() != p.n() {
            return Err(shape("train", format!("Dale mask of length {}", p.n()), mask.signs.len()));
        }
        if mask.violations(p.w()) > 0 {
            return Err(invalid("constraints.dale", "initial weights violate the sign mask"));
        }
    }

    let started = Instant::now();
    let mut state = OptimizerState::new(optimizer)?;
    let mut input_rng = rng::seeded(opts.seed, rng::stream::INPUTS);
    let mut losses_seen = Vec::with_capacity(opts.steps);
    let mut grad_norms = Vec::with_capacity(opts.steps);
    let mut stop = StopReason::StepBudget;

    for step in 0..opts.steps {
        let evaluated = match loss {
            LossKind::AveragedLinear { chi } => {
                let (e, d) = (p.encoder(0), p.decoder(0));
                let (s, g) = (spec.scales[0], spec.gammas[0]);
                losses::averaged_linear_loss(p.w(), e, d, s, g, chi)
                    .and_then(|l| Ok((l, grad_linear_analytic(p.w(), e, d, s, g, chi)?)))
            }
            LossKind::Batch { batch } => {
                let inputs: Vec<Matrix> = (0..*batch).map(|_| model::sample_sequence(spec, &mut input_rng)).collect();
                loss_and_grad_bptt(&p, spec, &inputs)
            }
            LossKind::ProxyRelu => {
                let (e, d) = (p.encoder(0), p.decoder(0));
                let (s, g) = (spec.scales[0], spec.gammas[0]);
                losses::proxy_relu_loss(p.w(), e, d, s, g).and_then(|l| Ok((l, grad_proxy_relu(p.w(), e, d, s, g)?)))
            }
            LossKind::Proxy { domain } => loss_and_grad_proxy(&p, spec, domain, step as u64),
        };
        let (value, grad) = match evaluated {
            Ok(v) if v.0.is_finite() && v.1.is_finite() => v,
            Ok(_) => {
                stop = StopReason::Diverged {
                    step,
                    message: "non-finite loss or gradient".into(),
                };
                break;
            }
            Err(e @ (Error::Divergence { .. } | Error::NonFinite { .. })) => {
                stop = StopReason::Diverged {
                    step,
                    message: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let gnorm = grad.frobenius_norm();
        losses_seen.push(value);
        grad_norms.push(gnorm);
        if value < opts.stop_loss {
            stop = StopReason::LossThreshold;
            break;
        }
        if gnorm < opts.stop_grad_norm {
            stop = StopReason::GradientThreshold;
            break;
        }
        let mut w = p.w().clone();
        if let Err(e) = optimizer_step(&mut state, &mut w, &grad) {
            stop = StopReason::Diverged {
                step,
                message: e.to_string(),
            };
            break;
        }
        if let Some(mask) = &constraints.dale {
            w = dale_project(p.w(), &w, mask)?;
        }
        p.set_w(w)?;
    }

    let record = TrainRecord {
        losses: losses_seen,
        grad_norms,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: opts.seed,
        loss_kind: loss.name().to_string(),
        optimizer,
        options: opts.clone(),
        stop,
    };
    Ok((p, record))
}

/// Initial recurrent weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum InitKind {
    #[default]
    Zero,
    /// I.i.d. entries of standard deviation `gain / sqrt(n)`.
    Gaussian { gain: f64 },
}


/// Construction of encoders and decoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum EncoderKind {
    /// Independent Gaussian vectors, normalised.
    #[default]
    Gaussian,
    /// Gaussian, then `d <- o e + (1 - o) d`, renormalised.
    Overlap { overlap: f64 },
    /// Channel `c` is supported on neurons `[c n/D, (c+1) n/D)` only.
    DisjointSupport,
}


/// Support sets used by [`EncoderKind::DisjointSupport`].
pub fn disjoint_supports(n: usize, channels: usize) -> Vec<Vec<usize>> {
    (0..channels)
        .map(|c| (c * n / channels..(c + 1) * n / channels).collect())
        .collect()
}

/// Samples a network with the given construction, deterministic in `seed`.
pub fn init_network(
    n: usize,
    channels: usize,
    activation: Activation,
    init: InitKind,
    encoders: EncoderKind,
    seed: u64,
) -> Result<NetworkParams> {
    if n == 0 || channels == 0 || channels > n {
        return Err(invalid("network", format!("need 1 <= D <= n, got D={channels}, n={n}")));
    }
    let mut r = rng::seeded(seed, rng::stream::ENCODERS);
    let mut enc = Vec::with_capacity(channels);
    let mut dec = Vec::with_capacity(channels);
    let supports = disjoint_supports(n, channels);
    for c in 0..channels {
        let mut e = gaussian_vec(&mut r, n, 1.0);
        let mut d = gaussian_vec(&mut r, n, 1.0);
        match encoders {
            EncoderKind::Gaussian => {}
            EncoderKind::Overlap { overlap } => {
                if !(0.0..=1.0).contains(&overlap) {
                    return Err(invalid("network.encoders.overlap", format!("must lie in [0, 1], got {overlap}")));
                }
                normalize(&mut e);
                normalize(&mut d);
                for (di, ei) in d.iter_mut().zip(&e) {
                    *di = overlap * ei + (1.0 - overlap) * *di;
                }
            }
            EncoderKind::DisjointSupport => {
                for i in 0..n {
                    if !supports[c].contains(&i) {
                        e[i] = 0.0;
                        d[i] = 0.0;
                    }
                }
            }
        }
        normalize(&mut e);
        normalize(&mut d);
        enc.push(e);
        dec.push(d);
    }
    let w = match init {
        InitKind::Zero => Matrix::zeros(n, n),
        InitKind::Gaussian { gain } => {
            let std = gain / (n as f64).sqrt();
            Matrix::from_vec(n, n, gaussian_vec(&mut rng::seeded(seed, rng::stream::INIT), n * n, std))?
        }
    };
    NetworkParams::from_vectors(w, &enc, &dec, activation)
}
