//! Forward dynamics, integral targets and input sampling.
//!
//! A network with `n` neurons and `D` channels evolves as
//! `nu_t = W (h_{t-1} + sum_c x_{c,t} e_c)`, `h_t = f(nu_t)` and reads out
//! `y_{c,t} = d_c . h_t`, starting from `h_{-1} = 0`. The target of channel
//! `c` is the leaky integral `ybar_{c,t} = gamma_c (ybar_{c,t-1} + s_c x_{c,t})`.
//!
//! Inputs of a single sequence are stored as a `D x T` matrix (one row per
//! channel). Batched simulation stacks sequences along the rows of `B x n`
//! matrices so that each time step is a single matrix product.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::numerics::{dot, gemm, norm, Matrix};
use crate::rng::{self, Rng};

/// States above this norm are treated as a diverged simulation.
pub const DIVERGENCE_NORM: f64 = 1e12;

const UNIT_NORM_TOL: f64 = 1e-10;

/// Pointwise nonlinearity `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid { slope: f64, bias: f64 },
}

impl Activation {
    /// The sigmoid used for integrators and readouts: slope 50, bias 0.1.
    pub const STEEP_SIGMOID: Activation = Activation::Sigmoid {
        slope: 50.0,
        bias: 0.1,
    };

    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::Sigmoid { slope, bias } => {
                if !(slope > 0.0 && slope.is_finite()) {
                    return Err(invalid("activation.slope", format!("must be positive, got {slope}")));
                }
                if !bias.is_finite() {
                    return Err(invalid("activation.bias", "must be finite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid { slope, bias } => 1.0 / (1.0 + (-slope * (x - bias)).exp()),
        }
    }

    /// Derivative at pre-activation `x`, given the output `y = f(x)`.
    /// `relu_at_zero` is the value used for the ReLU kink.
    #[inline]
    pub fn derivative(&self, x: f64, y: f64, relu_at_zero: f64) -> f64 {
        match *self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    0.0
                } else {
                    relu_at_zero
                }
            }
            Activation::Sigmoid { slope, .. } => slope * y * (1.0 - y),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.eval(x)).collect()
    }

    pub fn apply_in_place(&self, v: &mut [f64]) {
        if *self != Activation::Linear {
            v.iter_mut().for_each(|x| *x = self.eval(*x));
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Sigmoid { .. } => "sigmoid",
        }
    }
}

/// Free-function form of [`Activation::apply`].
pub fn apply_activation(a: Activation, v: &[f64]) -> Vec<f64> {
    a.apply(v)
}

/// Weights, encoders and decoders of a network. Only `W` is trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    w: Matrix,
    /// `D x n`, row `c` is `e_c`.
    encoders: Matrix,
    /// `D x n`, row `c` is `d_c`.
    decoders: Matrix,
    activation: Activation,
}

impl NetworkParams {
    /// Checks shapes, `D <= n` and unit-norm encoders and decoders.
    pub fn new(w: Matrix, encoders: Matrix, decoders: Matrix, activation: Activation) -> Result<Self> {
        let n = w.rows();
        if !w.is_square() {
            return Err(shape("NetworkParams", "square W", format!("{}x{}", w.rows(), w.cols())));
        }
        let dch = encoders.rows();
        if dch == 0 || dch > n {
            return Err(invalid("network.channels", format!("need 1 <= D <= n, got D={dch}, n={n}")));
        }
        if encoders.cols() != n || decoders.cols() != n || decoders.rows() != dch {
            return Err(shape(
                "NetworkParams",
                format!("{dch}x{n} encoders and decoders"),
                format!(
                    "{}x{} / {}x{}",
                    encoders.rows(),
                    encoders.cols(),
                    decoders.rows(),
                    decoders.cols()
                ),
            ));
        }
        for (name, m) in [("encoder", &encoders), ("decoder", &decoders)] {
            for c in 0..dch {
                let len = norm(m.row(c));
                if (len - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(invalid(format!("{name}[{c}]"), format!("must have unit norm, got {len}")));
                }
            }
        }
        if !w.is_finite() || !encoders.is_finite() || !decoders.is_finite() {
            return Err(Error::NonFinite {
                context: "network parameters",
                step: None,
            });
        }
        activation.validate()?;
        Ok(Self {
            w,
            encoders,
            decoders,
            activation,
        })
    }

    /// Builds from encoder/decoder vectors.
    pub fn from_vectors(w: Matrix, encoders: &[Vec<f64>], decoders: &[Vec<f64>], activation: Activation) -> Result<Self> {
        Self::new(w, Matrix::from_rows(encoders), Matrix::from_rows(decoders), activation)
    }

    pub fn n(&self) -> usize {
        self.w.rows()
    }

    pub fn channels(&self) -> usize {
        self.encoders.rows()
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn set_w(&mut self, w: Matrix) -> Result<()> {
        if (w.rows(), w.cols()) != (self.n(), self.n()) {
            return Err(shape("set_w", format!("{0}x{0}", self.n()), format!("{}x{}", w.rows(), w.cols())));
        }
        self.w = w;
        Ok(())
    }

    pub fn encoders(&self) -> &Matrix {
        &self.encoders
    }

    pub fn decoders(&self) -> &Matrix {
        &self.decoders
    }

    pub fn encoder(&self, c: usize) -> &[f64] {
        self.encoders.row(c)
    }

    pub fn decoder(&self, c: usize) -> &[f64] {
        self.decoders.row(c)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_w(mut self, w: Matrix) -> Result<Self> {
        self.set_w(w)?;
        Ok(self)
    }
}

/// Input distribution of a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    GaussianWhite {
        std: f64,
    },
    /// Bursts of `width` steps of constant `+-magnitude`, separated by
    /// `period` silent steps. Signs alternate from burst to burst; the
    /// starting sign and phase are drawn from the seed.
    Burst {
        period: usize,
        magnitude: f64,
        #[serde(default = "one")]
        width: usize,
    },
}

fn one() -> usize {
    1
}

impl Default for InputKind {
    fn default() -> Self {
        InputKind::GaussianWhite { std: 1.0 }
    }
}

/// Decays, scales and epoch length of a `D`-channel integration task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub gammas: Vec<f64>,
    pub scales: Vec<f64>,
    #[serde(rename = "t")]
    pub t_len: usize,
    #[serde(default)]
    pub input: InputKind,
}

impl TaskSpec {
    pub fn new(gammas: Vec<f64>, scales: Vec<f64>, t_len: usize, input: InputKind) -> Result<Self> {
        let spec = Self {
            gammas,
            scales,
            t_len,
            input,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn single(gamma: f64, scale: f64, t_len: usize) -> Result<Self> {
        Self::new(vec![gamma], vec![scale], t_len, InputKind::default())
    }

    pub fn channels(&self) -> usize {
        self.gammas.len()
    }

    pub fn with_len(&self, t_len: usize) -> Self {
        Self { t_len, ..self.clone() }
    }

    pub fn with_input(&self, input: InputKind) -> Self {
        Self { input, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(invalid("task.gammas", "at least one channel is required"));
        }
        if self.scales.len() != self.gammas.len() {
            return Err(invalid(
                "task.scales",
                format!("expected {} entries, got {}", self.gammas.len(), self.scales.len()),
            ));
        }
        for (c, &g) in self.gammas.iter().enumerate() {
            if !(g > 0.0 && g < 1.0) {
                return Err(invalid(format!("task.gammas[{c}]"), format!("must lie in (0, 1), got {g}")));
            }
        }
        for (c, &s) in self.scales.iter().enumerate() {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid(format!("task.scales[{c}]"), format!("must be positive, got {s}")));
            }
        }
        if self.t_len == 0 {
            return Err(invalid("task.t", "epoch length must be at least 1"));
        }
        match self.input {
            InputKind::GaussianWhite { std } if !(std >= 0.0 && std.is_finite()) => {
                Err(invalid("task.input.std", format!("must be non-negative, got {std}")))
            }
            InputKind::Burst { period, width, magnitude } => {
                if width == 0 {
                    Err(invalid("task.input.width", "must be at least 1"))
                } else if period == 0 {
                    Err(invalid("task.input.period", "must be at least 1"))
                } else if !magnitude.is_finite() {
                    Err(invalid("task.input.magnitude", "must be finite"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// `s_c gamma_c` for every channel.
    pub fn sgammas(&self) -> Vec<f64> {
        self.gammas.iter().zip(&self.scales).map(|(g, s)| g * s).collect()
    }
}

/// One simulated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `D x T`.
    pub inputs: Matrix,
    /// `T x n`.
    pub currents: Matrix,
    /// `T x n`.
    pub states: Matrix,
    /// `D x T`.
    pub outputs: Matrix,
    /// `D x T`.
    pub targets: Matrix,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of a single update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub nu: Vec<f64>,
    pub h: Vec<f64>,
    pub y: Vec<f64>,
}

/// One update of the recurrent dynamics.
pub fn step(p: &NetworkParams, h_prev: &[f64], x: &[f64]) -> Result<StepOutput> {
    let n = p.n();
    if h_prev.len() != n || x.len() != p.channels() {
        return Err(shape(
            "step",
            format!("h of length {n}, x of length {}", p.channels()),
            format!("{} / {}", h_prev.len(), x.len()),
        ));
    }
    let mut u = h_prev.to_vec();
    for (c, &xc) in x.iter().enumerate() {
        if xc != 0.0 {
            crate::numerics::axpy(xc, p.encoder(c), &mut u);
        }
    }
    let nu = p.w.matvec(&u);
    let h = p.activation.apply(&nu);
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "network state",
            step: None,
        });
    }
    let y = (0..p.channels()).map(|c| dot(p.decoder(c), &h)).collect();
    Ok(StepOutput { nu, h, y })
}

fn check_inputs(spec: &TaskSpec, inputs: &Matrix, context: &'static str) -> Result<()> {
    if inputs.rows() != spec.channels() {
        return Err(shape(context, format!("{} input channels", spec.channels()), inputs.rows()));
    }
    Ok(())
}

/// Simulates one sequence from `h_{-1} = 0`. The epoch length is taken from
/// the input matrix, so held-out sequences may be longer than `spec.t_len`.
pub fn run(p: &NetworkParams, spec: &TaskSpec, inputs: &Matrix) -> Result<Trajectory> {
    check_inputs(spec, inputs, "run")?;
    if p.channels() != spec.channels() {
        return Err(shape("run", format!("{} network channels", spec.channels()), p.channels()));
    }
    let (n, t_len) = (p.n(), inputs.cols());
    let mut currents = Matrix::zeros(t_len, n);
    let mut states = Matrix::zeros(t_len, n);
    let mut outputs = Matrix::zeros(p.channels(), t_len);
    let mut h = vec![0.0; n];
    for t in 0..t_len {
        let x = inputs.column(t);
        let out = step(p, &h, &x).map_err(|e| match e {
            Error::NonFinite { context, .. } => Error::NonFinite { context, step: Some(t) },
            other => other,
        })?;
        let hn = norm(&out.h);
        if hn > DIVERGENCE_NORM {
            return Err(Error::Divergence { step: t, norm: hn });
        }
        currents.row_mut(t).copy_from_slice(&out.nu);
        states.row_mut(t).copy_from_slice(&out.h);
        for c in 0..p.channels() {
            outputs[(c, t)] = out.y[c];
        }
        h = out.h;
    }
    Ok(Trajectory {
        inputs: inputs.clone(),
        currents,
        states,
        outputs,
        targets: target_of(spec, inputs)?,
    })
}

/// Leaky-integral targets via the recursion
/// `ybar_t = gamma (ybar_{t-1} + s x_t)`.
pub fn target_of(spec: &TaskSpec, inputs: &Matrix) -> Result<Matrix> {
    check_inputs(spec, inputs, "target_of")?;
    let mut out = Matrix::zeros(inputs.rows(), inputs.cols());
    for c in 0..inputs.rows() {
        let (g, s) = (spec.gammas[c], spec.scales[c]);
        let mut y = 0.0;
        for t in 0..inputs.cols() {
            y = g * (y + s * inputs[(c, t)]);
            out[(c, t)] = y;
        }
    }
    Ok(out)
}

/// Same targets via the explicit sum `s sum_k gamma^{k+1} x_{t-k}`.
pub fn target_of_summed(spec: &TaskSpec, inputs: &Matrix) -> Result<Matrix> {
    check_inputs(spec, inputs, "target_of_summed")?;
    let mut out = Matrix::zeros(inputs.rows(), inputs.cols());
    for c in 0..inputs.rows() {
        let (g, s) = (spec.gammas[c], spec.scales[c]);
        for t in 0..inputs.cols() {
            let mut acc = 0.0;
            let mut gk = g;
            for k in 0..=t {
                acc += gk * inputs[(c, t - k)];
                gk *= g;
            }
            out[(c, t)] = s * acc;
        }
    }
    Ok(out)
}

/// Draws `batch` input sequences of shape `D x T`, deterministic in `seed`.
pub fn sample_inputs(spec: &TaskSpec, seed: u64, batch: usize) -> Result<Vec<Matrix>> {
    sample_inputs_stream(spec, seed, rng::stream::INPUTS, batch)
}

/// As [`sample_inputs`] but from an explicit generator stream.
pub fn sample_inputs_stream(spec: &TaskSpec, seed: u64, stream: u64, batch: usize) -> Result<Vec<Matrix>> {
    spec.validate()?;
    if batch == 0 {
        return Err(invalid("batch", "must be at least 1"));
    }
    let mut r = rng::seeded(seed, stream);
    Ok((0..batch).map(|_| sample_sequence(spec, &mut r)).collect())
}

pub(crate) fn sample_sequence(spec: &TaskSpec, r: &mut Rng) -> Matrix {
    let (dch, t_len) = (spec.channels(), spec.t_len);
    match spec.input {
        InputKind::GaussianWhite { std } => Matrix::from_fn(dch, t_len, |_, _| {
            let z: f64 = StandardNormal.sample(r);
            std * z
        }),
        InputKind::Burst {
            period,
            magnitude,
            width,
        } => {
            let cycle = period + width;
            let mut m = Matrix::zeros(dch, t_len);
            for c in 0..dch {
                let phase = r.random_range(0..cycle);
                let mut sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
                for t in 0..t_len {
                    let k = (t + phase) % cycle;
                    if k < width {
                        m[(c, t)] = sign * magnitude;
                        if k + 1 == width {
                            sign = -sign;
                        }
                    }
                }
            }
            m
        }
    }
}

/// Per-step matrices of a batched simulation; row `b` belongs to sequence `b`.
#[derive(Debug, Clone)]
pub struct BatchForward {
    /// `U_t = h_{t-1} + X_t E`, each `B x n`.
    pub drives: Vec<Matrix>,
    /// `nu_t = U_t W^T`, each `B x n`.
    pub currents: Vec<Matrix>,
    /// `h_t = f(nu_t)`, each `B x n`.
    pub states: Vec<Matrix>,
    /// `y_t = h_t D^T`, each `B x D`.
    pub outputs: Vec<Matrix>,
}

/// Converts a batch of `D x T` sequences into `T` matrices of shape `B x D`.
pub fn stack_by_time(inputs: &[Matrix]) -> Result<Vec<Matrix>> {
    let first = inputs.first().ok_or_else(|| invalid("batch", "must be nonempty"))?;
    let (dch, t_len) = (first.rows(), first.cols());
    if inputs.iter().any(|m| m.rows() != dch || m.cols() != t_len) {
        return Err(shape("batch", format!("all sequences {dch}x{t_len}"), "ragged batch"));
    }
    Ok((0..t_len)
        .map(|t| Matrix::from_fn(inputs.len(), dch, |b, c| inputs[b][(c, t)]))
        .collect())
}

/// Simulates a whole batch, keeping every intermediate matrix.
pub fn forward_batch(p: &NetworkParams, xs: &[Matrix]) -> Result<BatchForward> {
    let mut fwd = BatchForward {
        drives: Vec::with_capacity(xs.len()),
        currents: Vec::with_capacity(xs.len()),
        states: Vec::with_capacity(xs.len()),
        outputs: Vec::with_capacity(xs.len()),
    };
    simulate_batch(p, xs, |_, u, nu, h, y| {
        fwd.drives.push(u.clone());
        fwd.currents.push(nu.clone());
        fwd.states.push(h.clone());
        fwd.outputs.push(y.clone());
    })?;
    Ok(fwd)
}

/// Batched simulation that streams `(t, U_t, nu_t, h_t, y_t)` to a callback
/// instead of storing the trajectory. `xs[t]` is the `B x D` input at step t.
pub fn simulate_batch(
    p: &NetworkParams,
    xs: &[Matrix],
    mut visit: impl FnMut(usize, &Matrix, &Matrix, &Matrix, &Matrix),
) -> Result<()> {
    let Some(x0) = xs.first() else {
        return Ok(());
    };
    let (b, n, dch) = (x0.rows(), p.n(), p.channels());
    if x0.cols() != dch {
        return Err(shape("simulate_batch", format!("{dch} input channels"), x0.cols()));
    }
    let mut h = Matrix::zeros(b, n);
    let mut u = Matrix::zeros(b, n);
    let mut nu = Matrix::zeros(b, n);
    let mut y = Matrix::zeros(b, dch);
    for (t, x) in xs.iter().enumerate() {
        u.as_mut_slice().copy_from_slice(h.as_slice());
        gemm(1.0, x, false, &p.encoders, false, 1.0, &mut u);
        gemm(1.0, &u, false, &p.w, true, 0.0, &mut nu);
        h.as_mut_slice().copy_from_slice(nu.as_slice());
        p.activation.apply_in_place(h.as_mut_slice());
        for r in 0..b {
            let hn = norm(h.row(r));
            if !hn.is_finite() {
                return Err(Error::NonFinite {
                    context: "network state",
                    step: Some(t),
                });
            }
            if hn > DIVERGENCE_NORM {
                return Err(Error::Divergence { step: t, norm: hn });
            }
        }
        gemm(1.0, &h, false, &p.decoders, true, 0.0, &mut y);
        visit(t, &u, &nu, &h, &y);
    }
    Ok(())
}

/// Targets of a batch, stacked by time like [`stack_by_time`].
pub fn stacked_targets(spec: &TaskSpec, xs: &[Matrix]) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(xs.len());
    let Some(x0) = xs.first() else {
        return out;
    };
    let mut y = Matrix::zeros(x0.rows(), x0.cols());
    for x in xs {
        for b in 0..x.rows() {
            for c in 0..x.cols() {
                y[(b, c)] = spec.gammas[c] * (y[(b, c)] + spec.scales[c] * x[(b, c)]);
            }
        }
        out.push(y.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::normalize;
    use proptest::prelude::*;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let mut v = v;
        normalize(&mut v);
        v
    }

    fn random_params(n: usize, dch: usize, act: Activation, scale: f64, seed: u64) -> NetworkParams {
        let mut r = rng::seeded(seed, 0);
        let w = Matrix::from_vec(n, n, rng::gaussian_vec(&mut r, n * n, scale / (n as f64).sqrt())).unwrap();
        let enc: Vec<_> = (0..dch).map(|_| unit(rng::gaussian_vec(&mut r, n, 1.0))).collect();
        let dec: Vec<_> = (0..dch).map(|_| unit(rng::gaussian_vec(&mut r, n, 1.0))).collect();
        NetworkParams::from_vectors(w, &enc, &dec, act).unwrap()
    }

    #[test]
    fn activation_examples() {
        assert_eq!(apply_activation(Activation::Relu, &[-1.0, 2.0]), vec![0.0, 2.0]);
        let s = Activation::STEEP_SIGMOID;
        assert_eq!(s.eval(0.1), 0.5);
        let oracle = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((s.eval(0.2) - oracle).abs() < 1e-15);
        assert!((s.eval(0.2) - 0.993307).abs() < 1e-6);
        assert!(Activation::Sigmoid { slope: 0.0, bias: 0.0 }.validate().is_err());
    }

    #[test]
    fn step_examples() {
        let e = vec![1.0, 0.0];
        let p = NetworkParams::from_vectors(Matrix::identity(2).scaled(0.7), &[e.clone()], &[e], Activation::Linear)
            .unwrap();
        let out = step(&p, &[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(out.nu, vec![0.0, 0.0]);
        assert_eq!(out.y, vec![0.0]);
        let out = step(&p, &[0.0, 0.0], &[1.0]).unwrap();
        assert!((out.y[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn step_first_current_is_input_times_we() {
        let p = random_params(6, 1, Activation::Relu, 1.0, 3);
        let out = step(&p, &[0.0; 6], &[0.37]).unwrap();
        let we = p.w().matvec(p.encoder(0));
        for (a, b) in out.nu.iter().zip(&we) {
            assert!((a - 0.37 * b).abs() < 1e-14);
        }
    }

    #[test]
    fn step_reports_shape_and_non_finite() {
        let p = random_params(4, 1, Activation::Linear, 1.0, 1);
        assert!(matches!(step(&p, &[0.0; 3], &[1.0]), Err(Error::Shape { .. })));
        assert!(matches!(step(&p, &[f64::NAN; 4], &[1.0]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let p = random_params(8, 2, Activation::Linear, 1.0, 2);
        let spec = TaskSpec::new(vec![0.5, 0.6], vec![1.0, 1.0], 10, InputKind::default()).unwrap();
        let tr = run(&p, &spec, &Matrix::zeros(2, 10)).unwrap();
        assert!(tr.outputs.max_abs() == 0.0 && tr.targets.max_abs() == 0.0);
    }

    #[test]
    fn impulse_into_rank_one_integrator() {
        let (gamma, s) = (0.8, 1.5);
        let e = unit(vec![1.0, 0.5, -0.3, 0.2]);
        let d = unit(vec![0.4, 1.0, 0.1, -0.5]);
        // W = d r^T with r = a e + b d, r.d = gamma and r.e = s gamma.
        let de = dot(&d, &e);
        let l = d.clone();
        let det = de * de - 1.0;
        let a = (gamma * de - s * gamma) / det;
        let b = (s * gamma * de - gamma) / det;
        let r: Vec<f64> = e.iter().zip(&d).map(|(x, y)| a * x + b * y).collect();
        let w = Matrix::outer(&l, &r);
        let p = NetworkParams::from_vectors(w, &[e], &[d], Activation::Linear).unwrap();
        let spec = TaskSpec::single(gamma, s, 30).unwrap();
        let mut x = Matrix::zeros(1, 30);
        x[(0, 0)] = 1.0;
        let tr = run(&p, &spec, &x).unwrap();
        for t in 0..30 {
            let expect = s * gamma.powi(t as i32 + 1);
            assert!((tr.outputs[(0, t)] - expect).abs() < 1e-12, "t={t}");
            assert!((tr.targets[(0, t)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn target_examples() {
        let spec = TaskSpec::single(0.5, 2.0, 5).unwrap();
        let mut x = Matrix::zeros(1, 5);
        assert_eq!(target_of(&spec, &x).unwrap().max_abs(), 0.0);
        x[(0, 0)] = 1.0;
        let y = target_of(&spec, &x).unwrap();
        assert_eq!(y.row(0), &[1.0, 0.5, 0.25, 0.125, 0.0625]);

        let spec = TaskSpec::single(0.8, 1.0, 200).unwrap();
        let y = target_of(&spec, &Matrix::from_fn(1, 200, |_, _| 1.0)).unwrap();
        assert!((y[(0, 199)] - 4.0).abs() < 1e-12);
        assert!(y.row(0).iter().all(|&v| v <= 4.0));
    }

    #[test]
    fn sampling_is_deterministic_and_calibrated() {
        let spec = TaskSpec::single(0.9, 1.0, 10).unwrap();
        assert_eq!(sample_inputs(&spec, 5, 3).unwrap(), sample_inputs(&spec, 5, 3).unwrap());
        let batch = sample_inputs(&spec, 11, 10_000).unwrap();
        let all: Vec<f64> = batch.iter().flat_map(|m| m.as_slice().to_vec()).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 0.05);
        assert!((var - 1.0).abs() < 0.05);
        assert!(sample_inputs(&spec, 1, 0).is_err());
    }

    #[test]
    fn burst_layout() {
        let spec = TaskSpec::new(
            vec![0.9],
            vec![1.0],
            200,
            InputKind::Burst {
                period: 20,
                magnitude: 1.0,
                width: 1,
            },
        )
        .unwrap();
        let x = &sample_inputs(&spec, 3, 1).unwrap()[0];
        let nz: Vec<(usize, f64)> = (0..200).filter(|&t| x[(0, t)] != 0.0).map(|t| (t, x[(0, t)])).collect();
        assert!(nz.len() >= 9);
        for w in nz.windows(2) {
            assert_eq!(w[1].0 - w[0].0, 21);
            assert_eq!(w[1].1, -w[0].1);
        }
        assert!(nz.iter().all(|&(_, v)| v.abs() == 1.0));
    }

    #[test]
    fn batched_simulation_matches_run() {
        let p = random_params(7, 2, Activation::Relu, 1.2, 4);
        let spec = TaskSpec::new(vec![0.9, 0.7], vec![1.0, 2.0], 12, InputKind::default()).unwrap();
        let batch = sample_inputs(&spec, 9, 3).unwrap();
        let fwd = forward_batch(&p, &stack_by_time(&batch).unwrap()).unwrap();
        let targets = stacked_targets(&spec, &stack_by_time(&batch).unwrap());
        for (b, x) in batch.iter().enumerate() {
            let tr = run(&p, &spec, x).unwrap();
            for t in 0..12 {
                for i in 0..7 {
                    assert!((fwd.states[t][(b, i)] - tr.states[(t, i)]).abs() < 1e-12);
                }
                for c in 0..2 {
                    assert!((fwd.outputs[t][(b, c)] - tr.outputs[(c, t)]).abs() < 1e-12);
                    assert!((targets[t][(b, c)] - tr.targets[(c, t)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn divergence_reports_step() {
        let e = unit(vec![1.0, 1.0]);
        let p = NetworkParams::from_vectors(Matrix::identity(2).scaled(20.0), &[e.clone()], &[e], Activation::Linear)
            .unwrap();
        let spec = TaskSpec::single(0.5, 1.0, 40).unwrap();
        let mut x = Matrix::zeros(1, 40);
        x[(0, 0)] = 1.0;
        match run(&p, &spec, &x) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(TaskSpec::single(1.5, 1.0, 3).is_err());
        assert!(TaskSpec::single(0.5, -1.0, 3).is_err());
        assert!(TaskSpec::single(0.5, 1.0, 0).is_err());
        let w = Matrix::zeros(2, 2);
        assert!(NetworkParams::from_vectors(w, &[vec![1.0, 1.0]], &[vec![1.0, 0.0]], Activation::Linear).is_err());
    }

    proptest! {
        #[test]
        fn recursive_and_summed_targets_agree(seed in 0u64..1000, gamma in 0.05f64..0.999, s in 0.1f64..5.0) {
            let spec = TaskSpec::single(gamma, s, 300).unwrap();
            let x = &sample_inputs(&spec, seed, 1).unwrap()[0];
            let a = target_of(&spec, x).unwrap();
            let b = target_of_summed(&spec, x).unwrap();
            let scale = a.max_abs().max(1.0);
            prop_assert!(a.sub(&b).max_abs() < 1e-12 * scale);
        }

        #[test]
        fn linear_outputs_are_moment_convolutions(seed in 0u64..500) {
            let p = random_params(10, 1, Activation::Linear, 0.9, seed);
            let spec = TaskSpec::single(0.9, 1.0, 15).unwrap();
            let x = &sample_inputs(&spec, seed + 1, 1).unwrap()[0];
            let tr = run(&p, &spec, x).unwrap();
            // mu_{q+1} = d W^{q+1} e
            let mut v = p.encoder(0).to_vec();
            let mut mu = Vec::new();
            for _ in 0..15 {
                v = p.w().matvec(&v);
                mu.push(dot(p.decoder(0), &v));
            }
            for t in 0..15 {
                let y: f64 = (0..=t).map(|q| x[(0, t - q)] * mu[q]).sum();
                prop_assert!((y - tr.outputs[(0, t)]).abs() < 1e-9);
            }
        }

        #[test]
        fn relu_with_nonnegative_drive_stays_nonnegative(seed in 0u64..500) {
            let n = 8;
            let mut r = rng::seeded(seed, 1);
            let w = Matrix::from_fn(n, n, |_, _| r.random_range(0.0..0.2));
            let e = unit((0..n).map(|_| r.random_range(0.0..1.0)).collect());
            let d = unit(rng::gaussian_vec(&mut r, n, 1.0));
            let p = NetworkParams::from_vectors(w, &[e], &[d], Activation::Relu).unwrap();
            let spec = TaskSpec::single(0.9, 1.0, 20).unwrap();
            let x = Matrix::from_fn(1, 20, |_, _| r.random_range(0.0..1.0));
            let tr = run(&p, &spec, &x).unwrap();
            prop_assert!(tr.states.as_slice().iter().all(|&h| h >= 0.0));
        }
    }
}
