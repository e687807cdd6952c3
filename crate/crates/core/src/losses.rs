//! Loss functionals.
//!
//! * [`batch_loss`]: empirical squared error of simulated outputs.
//! * [`averaged_linear_loss`]: the exact input average of the batch loss for
//!   a linear network, a quadratic form in the moment residuals
//!   `mu_q - s gamma^q` weighted by the input correlation matrix [`ChiMatrix`].
//! * Proxy losses: data-free objectives whose zeros are integrators. They
//!   compare `f(W u)` with the state the network should hold when the
//!   integral equals `z`, for `z` ranging over a [`ProxyDomain`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::model::{self, Activation, NetworkParams, TaskSpec};
use crate::numerics::{dot, gemm, norm, pairwise_sum, symmetric_eigen, Matrix};
use crate::rng;

/// Mean over the batch of the squared output error summed over time steps
/// and channels.
pub fn batch_loss(p: &NetworkParams, spec: &TaskSpec, inputs: &[Matrix]) -> Result<f64> {
    let (total, b) = squared_error_sum(p, spec, inputs)?;
    Ok(total / b as f64)
}

/// Mean squared error per (sequence, step, channel).
pub fn mean_step_error(p: &NetworkParams, spec: &TaskSpec, inputs: &[Matrix]) -> Result<f64> {
    let (total, b) = squared_error_sum(p, spec, inputs)?;
    let steps = inputs[0].cols() * inputs[0].rows();
    Ok(total / (b * steps) as f64)
}

fn squared_error_sum(p: &NetworkParams, spec: &TaskSpec, inputs: &[Matrix]) -> Result<(f64, usize)> {
    if inputs.is_empty() {
        return Err(invalid("batch", "must be nonempty"));
    }
    let xs = model::stack_by_time(inputs)?;
    if xs[0].cols() != spec.channels() || p.channels() != spec.channels() {
        return Err(shape("batch_loss", format!("{} channels", spec.channels()), xs[0].cols()));
    }
    let targets = model::stacked_targets(spec, &xs);
    let b = inputs.len();
    let mut per_seq = vec![0.0; b];
    model::simulate_batch(p, &xs, |t, _, _, _, y| {
        for (r, acc) in per_seq.iter_mut().enumerate() {
            for c in 0..y.cols() {
                let diff = y[(r, c)] - targets[t][(r, c)];
                *acc += diff * diff;
            }
        }
    })?;
    Ok((pairwise_sum(&per_seq), b))
}

/// Time-integrated input correlation matrix, `T x T`. Entry `(q-1, p-1)`
/// holds `chi_{qp}` for lags `q, p = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiMatrix {
    entries: Matrix,
}

impl ChiMatrix {
    pub fn new(entries: Matrix) -> Result<Self> {
        if !entries.is_square() || entries.rows() == 0 {
            return Err(shape("ChiMatrix", "nonempty square matrix", format!("{}x{}", entries.rows(), entries.cols())));
        }
        let tol = 1e-12 * entries.max_abs().max(1.0);
        if entries.sub(&entries.transpose()).max_abs() > tol {
            return Err(invalid("chi", "must be symmetric"));
        }
        Ok(Self { entries })
    }

    pub fn t_len(&self) -> usize {
        self.entries.rows()
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// `chi_{qp}` with 1-based lags.
    pub fn get(&self, q: usize, p: usize) -> f64 {
        self.entries[(q - 1, p - 1)]
    }

    pub fn is_diagonal(&self) -> bool {
        let t = self.t_len();
        (0..t).all(|i| (0..t).all(|j| i == j || self.entries[(i, j)] == 0.0))
    }

    pub fn smallest_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = symmetric_eigen(&self.entries)?;
        Ok(*vals.last().expect("nonempty"))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.smallest_eigenvalue().map(|l| l > 0.0).unwrap_or(false)
    }
}

/// `chi` of i.i.d. inputs: `diag(variance (T - q + 1))`.
pub fn chi_white_noise(t_len: usize, variance: f64) -> Result<ChiMatrix> {
    if t_len == 0 {
        return Err(invalid("t", "must be at least 1"));
    }
    if !(variance > 0.0) {
        return Err(invalid("variance", format!("must be positive, got {variance}")));
    }
    let diag: Vec<f64> = (1..=t_len).map(|q| variance * (t_len - q + 1) as f64).collect();
    ChiMatrix::new(Matrix::diag(&diag))
}

/// Sample average of `sum_{t} x_{t-q+1} x_{t-p+1}` over the sequences, with
/// both indices restricted to the epoch.
pub fn chi_empirical(inputs: &[Vec<f64>]) -> Result<ChiMatrix> {
    let first = inputs.first().ok_or_else(|| invalid("batch", "must be nonempty"))?;
    let t_len = first.len();
    if t_len == 0 || inputs.iter().any(|x| x.len() != t_len) {
        return Err(shape("chi_empirical", "equal nonzero lengths", "ragged or empty sequences"));
    }
    let mut acc = Matrix::zeros(t_len, t_len);
    for x in inputs {
        for q in 0..t_len {
            for p in q..t_len {
                let mut s = 0.0;
                for t in p..t_len {
                    s += x[t - q] * x[t - p];
                }
                acc[(q, p)] += s;
            }
        }
    }
    let b = inputs.len() as f64;
    let entries = Matrix::from_fn(t_len, t_len, |q, p| {
        let (i, j) = if q <= p { (q, p) } else { (p, q) };
        acc[(i, j)] / b
    });
    ChiMatrix::new(entries)
}

/// `mu_q = d^T W^q e` for `q = 1..=qmax` by repeated matrix-vector products.
pub fn moment_sequence(w: &Matrix, e: &[f64], d: &[f64], qmax: usize) -> Vec<f64> {
    let mut v = e.to_vec();
    (0..qmax)
        .map(|_| {
            v = w.matvec(&v);
            dot(d, &v)
        })
        .collect()
}

/// Residuals `mu_q - s gamma^q` for `q = 1..=qmax`.
pub fn moment_residuals(w: &Matrix, e: &[f64], d: &[f64], s: f64, gamma: f64, qmax: usize) -> Vec<f64> {
    moment_sequence(w, e, d, qmax)
        .into_iter()
        .enumerate()
        .map(|(k, mu)| mu - s * gamma.powi(k as i32 + 1))
        .collect()
}

/// Exact input-averaged loss of a linear network.
pub fn averaged_linear_loss(w: &Matrix, e: &[f64], d: &[f64], s: f64, gamma: f64, chi: &ChiMatrix) -> Result<f64> {
    if !w.is_square() || e.len() != w.rows() || d.len() != w.rows() {
        return Err(shape("averaged_linear_loss", format!("{0}x{0} W and vectors", e.len()), format!("{}x{}", w.rows(), w.cols())));
    }
    let r = moment_residuals(w, e, d, s, gamma, chi.t_len());
    Ok(quadratic_form(chi.entries(), &r))
}

pub(crate) fn quadratic_form(m: &Matrix, r: &[f64]) -> f64 {
    dot(r, &m.matvec(r))
}

/// Sampling of proxy domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    /// Tensor grid with `samples_per_eval` evenly spaced points per channel
    /// (endpoints included). Falls back to Monte-Carlo beyond three channels.
    Grid,
    /// `samples_per_eval` uniform draws in total.
    MonteCarlo { seed: u64 },
}

/// Integration domain `Z_1 x ... x Z_D` of the proxy losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyDomain {
    pub z_max: Vec<f64>,
    pub samples_per_eval: usize,
    pub sampling: Sampling,
}

/// Above this many channels a grid is replaced by Monte-Carlo sampling.
pub const MAX_GRID_CHANNELS: usize = 3;
pub const DEFAULT_GRID_POINTS: usize = 101;
pub const DEFAULT_MC_SAMPLES: usize = 4096;

impl ProxyDomain {
    pub fn grid(z_max: Vec<f64>, points_per_channel: usize) -> Self {
        Self {
            z_max,
            samples_per_eval: points_per_channel,
            sampling: Sampling::Grid,
        }
    }

    pub fn monte_carlo(z_max: Vec<f64>, samples: usize, seed: u64) -> Self {
        Self {
            z_max,
            samples_per_eval: samples,
            sampling: Sampling::MonteCarlo { seed },
        }
    }

    pub fn channels(&self) -> usize {
        self.z_max.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_max.is_empty() {
            return Err(invalid("domain.z_max", "at least one channel is required"));
        }
        for (c, &z) in self.z_max.iter().enumerate() {
            if !(z > 0.0 && z.is_finite()) {
                return Err(invalid(format!("domain.z_max[{c}]"), format!("must be positive, got {z}")));
            }
        }
        if self.samples_per_eval == 0 {
            return Err(invalid("domain.samples_per_eval", "must be at least 1"));
        }
        Ok(())
    }

    /// Sample points as an `N x D` matrix. `draw` selects the Monte-Carlo
    /// redraw and is ignored for grids.
    pub fn points_at(&self, draw: u64) -> Result<Matrix> {
        self.validate()?;
        let dch = self.channels();
        match self.sampling {
            Sampling::Grid if dch <= MAX_GRID_CHANNELS => {
                let k = self.samples_per_eval;
                let axes: Vec<Vec<f64>> = self
                    .z_max
                    .iter()
                    .map(|&z| {
                        if k == 1 {
                            vec![0.0]
                        } else {
                            (0..k).map(|i| -z + 2.0 * z * i as f64 / (k - 1) as f64).collect()
                        }
                    })
                    .collect();
                let total = k.pow(dch as u32);
                Ok(Matrix::from_fn(total, dch, |row, c| {
                    let idx = (row / k.pow((dch - 1 - c) as u32)) % k;
                    axes[c][idx]
                }))
            }
            Sampling::Grid => self.monte_carlo_points(0, draw),
            Sampling::MonteCarlo { seed } => self.monte_carlo_points(seed, draw),
        }
    }

    pub fn points(&self) -> Result<Matrix> {
        self.points_at(0)
    }

    fn monte_carlo_points(&self, seed: u64, draw: u64) -> Result<Matrix> {
        use rand::Rng as _;
        let mut r = rng::seeded(seed ^ draw.wrapping_mul(0x9E37_79B9_7F4A_7C15), rng::stream::DOMAIN);
        let n = if self.sampling == Sampling::Grid {
            DEFAULT_MC_SAMPLES
        } else {
            self.samples_per_eval
        };
        Ok(Matrix::from_fn(n, self.channels(), |_, c| {
            let z = self.z_max[c];
            r.random_range(-z..=z)
        }))
    }
}

/// Evaluation of the generic proxy objective over explicit sample points.
///
/// Rows of `z` are samples `(z_1..z_D)`. With `u = sum_c z_c e_c` and
/// `a = f(W u)` each sample contributes
/// `sum_c (d_c . a - s_c gamma_c z_c)^2 + |W a - sum_c gamma_c z_c W e_c|^2`;
/// the result is the mean over samples. When `want_grad` is set the exact
/// gradient with respect to `W` is returned too, using `relu_at_zero` for the
/// ReLU kink.
pub(crate) struct ProxyEval {
    pub loss: f64,
    pub grad: Option<Matrix>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn proxy_eval(
    w: &Matrix,
    enc: &Matrix,
    dec: &Matrix,
    scales: &[f64],
    gammas: &[f64],
    act: Activation,
    z: &Matrix,
    relu_at_zero: f64,
    want_grad: bool,
) -> ProxyEval {
    let (nz, dch, n) = (z.rows(), z.cols(), w.rows());
    // M = E W^T, row c is (W e_c)^T.
    let mut m = Matrix::zeros(dch, n);
    gemm(1.0, enc, false, w, true, 0.0, &mut m);
    let a = z.matmul(&m);
    let mut f = a.clone();
    act.apply_in_place(f.as_mut_slice());

    // Decoder residual r1 = F D^T - Z diag(s gamma).
    let mut r1 = Matrix::zeros(nz, dch);
    gemm(1.0, &f, false, dec, true, 0.0, &mut r1);
    for k in 0..nz {
        for c in 0..dch {
            r1[(k, c)] -= scales[c] * gammas[c] * z[(k, c)];
        }
    }
    // State residual rho = F W^T - (Z Gamma) M.
    let zg = Matrix::from_fn(nz, dch, |k, c| gammas[c] * z[(k, c)]);
    let mut rho = zg.matmul(&m);
    gemm(1.0, &f, false, w, true, -1.0, &mut rho);

    let sq = |x: &Matrix| dot(x.as_slice(), x.as_slice());
    let inv = 1.0 / nz as f64;
    let loss = inv * (sq(&r1) + sq(&rho));
    if !want_grad {
        return ProxyEval { loss, grad: None };
    }

    // dL/dF = (2/N)(r1 D + rho W), then through f'.
    let mut g_a = Matrix::zeros(nz, n);
    gemm(2.0 * inv, &r1, false, dec, false, 0.0, &mut g_a);
    gemm(2.0 * inv, &rho, false, w, false, 1.0, &mut g_a);
    if act != Activation::Linear {
        for ((g, &x), &y) in g_a.as_mut_slice().iter_mut().zip(a.as_slice()).zip(f.as_slice()) {
            *g *= act.derivative(x, y, relu_at_zero);
        }
    }
    // dL/dW = (2/N) rho^T F + G^T E, G = Z^T gA - (2/N) (Z Gamma)^T rho.
    let mut grad = Matrix::zeros(n, n);
    gemm(2.0 * inv, &rho, true, &f, false, 0.0, &mut grad);
    let mut g = Matrix::zeros(dch, n);
    gemm(1.0, z, true, &g_a, false, 0.0, &mut g);
    gemm(-2.0 * inv, &zg, true, &rho, false, 1.0, &mut g);
    gemm(1.0, &g, true, enc, false, 1.0, &mut grad);
    ProxyEval {
        loss,
        grad: Some(grad),
    }
}

fn check_vectors(context: &'static str, w: &Matrix, e: &[f64], d: &[f64]) -> Result<()> {
    if !w.is_square() || e.len() != w.rows() || d.len() != w.rows() {
        return Err(shape(context, format!("{0}x{0} W with length-{0} e, d", w.rows()), format!("{}x{} / {} / {}", w.rows(), w.cols(), e.len(), d.len())));
    }
    Ok(())
}

/// Proxy loss of a single-channel ReLU network: the sum over `z = +-1` of
/// `(d . R(zWe) - z s gamma)^2 + |W R(zWe) - z gamma W e|^2`.
pub fn proxy_relu_loss(w: &Matrix, e: &[f64], d: &[f64], s: f64, gamma: f64) -> Result<f64> {
    check_vectors("proxy_relu_loss", w, e, d)?;
    let we = w.matvec(e);
    let mut total = 0.0;
    for z in [1.0, -1.0] {
        let a: Vec<f64> = we.iter().map(|&v| (z * v).max(0.0)).collect();
        let dec = dot(d, &a) - z * s * gamma;
        let wa = w.matvec(&a);
        let state: f64 = wa.iter().zip(&we).map(|(x, y)| (x - z * gamma * y).powi(2)).sum();
        total += dec * dec + state;
    }
    Ok(total)
}

/// Single-channel proxy loss averaged over the samples of `dom`.
pub fn proxy_generic_loss(
    w: &Matrix,
    e: &[f64],
    d: &[f64],
    s: f64,
    gamma: f64,
    a: Activation,
    dom: &ProxyDomain,
) -> Result<f64> {
    check_vectors("proxy_generic_loss", w, e, d)?;
    if dom.channels() != 1 {
        return Err(shape("proxy_generic_loss", "single-channel domain", dom.channels()));
    }
    let z = dom.points()?;
    let enc = Matrix::from_rows(&[e]);
    let dec = Matrix::from_rows(&[d]);
    Ok(proxy_eval(w, &enc, &dec, &[s], &[gamma], a, &z, 0.0, false).loss)
}

/// Multi-channel proxy loss of a network, averaged over the samples of `dom`.
pub fn proxy_multi_loss(p: &NetworkParams, spec: &TaskSpec, dom: &ProxyDomain) -> Result<f64> {
    check_multi(p, spec, dom)?;
    let z = dom.points()?;
    Ok(proxy_eval(p.w(), p.encoders(), p.decoders(), &spec.scales, &spec.gammas, p.activation(), &z, 0.0, false).loss)
}

pub(crate) fn check_multi(p: &NetworkParams, spec: &TaskSpec, dom: &ProxyDomain) -> Result<()> {
    if p.channels() != spec.channels() || dom.channels() != spec.channels() {
        return Err(shape(
            "proxy_multi_loss",
            format!("{} channels everywhere", spec.channels()),
            format!("network {}, domain {}", p.channels(), dom.channels()),
        ));
    }
    Ok(())
}

/// A weight matrix at which the ReLU proxy loss vanishes exactly.
///
/// With `p = R(d)` and `m = R(-d)` the vectors `v_+ = s gamma p/|p|^2` and
/// `v_- = s gamma m/|m|^2` are decoded to `+-s gamma`. The matrix
/// `W = v r^T`, `v = v_+ - v_-`, with `r.e = 1`, `r.v_+ = gamma`,
/// `r.v_- = -gamma` then maps `e` to `v`, `R(+-v)` to `v_+-` and
/// `W v_+- = +-gamma v`.
pub fn exact_relu_integrator(e: &[f64], d: &[f64], s: f64, gamma: f64) -> Result<Matrix> {
    let pos: Vec<f64> = d.iter().map(|&x| x.max(0.0)).collect();
    let neg: Vec<f64> = d.iter().map(|&x| (-x).max(0.0)).collect();
    let (pp, mm) = (dot(&pos, &pos), dot(&neg, &neg));
    if pp == 0.0 || mm == 0.0 {
        return Err(Error::Degenerate {
            analysis: "exact_relu_integrator",
            reason: "decoder needs entries of both signs".into(),
        });
    }
    let vp: Vec<f64> = pos.iter().map(|x| s * gamma * x / pp).collect();
    let vm: Vec<f64> = neg.iter().map(|x| s * gamma * x / mm).collect();
    let r = min_norm_solution(&[e.to_vec(), vp.clone(), vm.clone()], &[1.0, gamma, -gamma])?;
    let v: Vec<f64> = vp.iter().zip(&vm).map(|(a, b)| a - b).collect();
    Ok(Matrix::outer(&v, &r))
}

/// Smallest-norm `r` with `a_k . r = b_k` for every constraint.
pub(crate) fn min_norm_solution(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let k = rows.len();
    let gram = Matrix::from_fn(k, k, |i, j| dot(&rows[i], &rows[j]));
    let coef = crate::numerics::solve(&gram, rhs)?;
    let mut r = vec![0.0; rows[0].len()];
    for (c, row) in coef.iter().zip(rows) {
        crate::numerics::axpy(*c, row, &mut r);
    }
    Ok(r)
}

/// Norm of `W e`, used to normalise residuals.
pub fn drive_norm(w: &Matrix, e: &[f64]) -> f64 {
    norm(&w.matvec(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_inputs, InputKind};
    use crate::numerics::normalize;
    use crate::rng::{gaussian_vec, seeded};
    use proptest::prelude::*;

    fn unit(seed: u64, n: usize) -> Vec<f64> {
        let mut v = gaussian_vec(&mut seeded(seed, 0), n, 1.0);
        normalize(&mut v);
        v
    }

    fn random_w(n: usize, scale: f64, seed: u64) -> Matrix {
        Matrix::from_vec(n, n, gaussian_vec(&mut seeded(seed, 1), n * n, scale / (n as f64).sqrt())).unwrap()
    }

    #[test]
    fn batch_loss_hand_example() {
        // W = 0: outputs vanish, loss is the squared target 0.5^2 + 0.25^2.
        let e = vec![1.0, 0.0];
        let p = NetworkParams::from_vectors(Matrix::zeros(2, 2), &[e.clone()], &[e], Activation::Linear).unwrap();
        let spec = TaskSpec::single(0.5, 1.0, 2).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0]]);
        assert!((batch_loss(&p, &spec, &[x]).unwrap() - 0.3125).abs() < 1e-15);
    }

    #[test]
    fn batch_loss_is_order_invariant() {
        let e = unit(1, 6);
        let d = unit(2, 6);
        let p = NetworkParams::from_vectors(random_w(6, 1.0, 3), &[e], &[d], Activation::Relu).unwrap();
        let spec = TaskSpec::single(0.9, 1.0, 8).unwrap();
        let mut batch = sample_inputs(&spec, 4, 9).unwrap();
        let a = batch_loss(&p, &spec, &batch).unwrap();
        batch.reverse();
        let b = batch_loss(&p, &spec, &batch).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn chi_examples() {
        assert_eq!(chi_white_noise(3, 1.0).unwrap().entries(), &Matrix::diag(&[3.0, 2.0, 1.0]));
        assert_eq!(chi_white_noise(1, 2.5).unwrap().entries(), &Matrix::diag(&[2.5]));
        assert!(chi_white_noise(7, 1.0).unwrap().is_positive_definite());

        let ones = chi_empirical(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(ones.entries(), &Matrix::from_rows(&[[2.0, 1.0], [1.0, 1.0]]));
        let zeros = chi_empirical(&[vec![0.0; 4], vec![0.0; 4]]).unwrap();
        assert_eq!(zeros.entries().max_abs(), 0.0);
        assert!(!zeros.is_positive_definite());
    }

    #[test]
    fn chi_white_noise_matches_monte_carlo() {
        // Oracle: direct average of the defining double sum over white noise.
        let mut r = seeded(21, 0);
        let batch: Vec<Vec<f64>> = (0..200_000).map(|_| gaussian_vec(&mut r, 3, 1.0)).collect();
        let emp = chi_empirical(&batch).unwrap();
        let exact = chi_white_noise(3, 1.0).unwrap();
        for q in 1..=3 {
            let rel = (emp.get(q, q) - exact.get(q, q)).abs() / exact.get(q, q);
            assert!(rel < 0.01, "q={q} rel={rel}");
        }
        assert!(emp.entries().rel_diff(exact.entries()) < 3.0 / (200_000f64).sqrt());
    }

    #[test]
    fn averaged_loss_examples() {
        let e = vec![1.0, 0.0];
        let chi = chi_white_noise(2, 1.0).unwrap();
        let l = averaged_linear_loss(&Matrix::zeros(2, 2), &e, &e, 1.0, 0.5, &chi).unwrap();
        assert!((l - 0.5625).abs() < 1e-15);
        // gamma I with e = d and s = 1 satisfies every moment condition.
        let l = averaged_linear_loss(&Matrix::identity(2).scaled(0.5), &e, &e, 1.0, 0.5, &chi).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn averaged_loss_matches_monte_carlo_batch_loss() {
        let n = 8;
        let (e, d) = (unit(5, n), unit(6, n));
        let w = random_w(n, 0.8, 7);
        let spec = TaskSpec::single(0.8, 1.3, 5).unwrap();
        let chi = chi_white_noise(5, 1.0).unwrap();
        let exact = averaged_linear_loss(&w, &e, &d, 1.3, 0.8, &chi).unwrap();
        let p = NetworkParams::from_vectors(w, &[e], &[d], Activation::Linear).unwrap();
        let batch = sample_inputs(&spec, 8, 100_000).unwrap();
        let mc = batch_loss(&p, &spec, &batch).unwrap();
        assert!((mc - exact).abs() / exact < 0.02, "mc={mc} exact={exact}");
    }

    #[test]
    fn proxy_relu_examples() {
        let n = 12;
        let (e, d) = (unit(1, n), unit(2, n));
        let (s, g) = (2.0, 0.9);
        let l0 = proxy_relu_loss(&Matrix::zeros(n, n), &e, &d, s, g).unwrap();
        assert!((l0 - 2.0 * (s * g) * (s * g)).abs() < 1e-14);
        let w = exact_relu_integrator(&e, &d, s, g).unwrap();
        assert!(proxy_relu_loss(&w, &e, &d, s, g).unwrap() < 1e-24);
    }

    #[test]
    fn two_point_generic_proxy_is_half_the_relu_proxy() {
        let n = 9;
        let (e, d) = (unit(3, n), unit(4, n));
        let w = random_w(n, 1.0, 5);
        let dom = ProxyDomain::grid(vec![1.0], 2);
        let generic = proxy_generic_loss(&w, &e, &d, 1.5, 0.8, Activation::Relu, &dom).unwrap();
        let relu = proxy_relu_loss(&w, &e, &d, 1.5, 0.8).unwrap();
        assert!((generic - relu / 2.0).abs() < 1e-12 * relu);
    }

    #[test]
    fn linear_rank_one_gi_zeroes_generic_proxy() {
        let n = 6;
        let (e, d) = (unit(7, n), unit(8, n));
        let (s, g) = (1.7, 0.6);
        // W = d r^T with r.d = gamma and r.e = s gamma.
        let r = min_norm_solution(&[d.clone(), e.clone()], &[g, s * g]).unwrap();
        let w = Matrix::outer(&d, &r);
        for zmax in [0.5, 3.0] {
            let dom = ProxyDomain::grid(vec![zmax], 11);
            assert!(proxy_generic_loss(&w, &e, &d, s, g, Activation::Linear, &dom).unwrap() < 1e-26);
        }
    }

    #[test]
    fn multi_proxy_reduces_and_integrates_zero_w() {
        let n = 10;
        let (e, d) = (unit(9, n), unit(10, n));
        let w = random_w(n, 1.0, 11);
        let spec = TaskSpec::single(0.7, 1.1, 4).unwrap();
        let p = NetworkParams::from_vectors(w.clone(), &[e.clone()], &[d.clone()], Activation::Relu).unwrap();
        let dom = ProxyDomain::grid(vec![2.0], 21);
        let a = proxy_multi_loss(&p, &spec, &dom).unwrap();
        let b = proxy_generic_loss(&w, &e, &d, 1.1, 0.7, Activation::Relu, &dom).unwrap();
        assert!((a - b).abs() < 1e-14 * a);

        // W = 0, D = 2: sum_c (s_c gamma_c)^2 E[z_c^2] with the grid second moment.
        let encs = [unit(12, n), unit(13, n)];
        let decs = [unit(14, n), unit(15, n)];
        let p = NetworkParams::from_vectors(Matrix::zeros(n, n), &encs, &decs, Activation::Relu).unwrap();
        let spec = TaskSpec::new(vec![0.9, 0.5], vec![1.0, 2.0], 4, InputKind::default()).unwrap();
        let dom = ProxyDomain::grid(vec![1.0, 3.0], 5);
        let second_moment = |zmax: f64| {
            let pts: Vec<f64> = (0..5).map(|i| -zmax + 0.5 * zmax * i as f64).collect();
            pts.iter().map(|z| z * z).sum::<f64>() / 5.0
        };
        let expect = 0.9f64.powi(2) * second_moment(1.0) + 1.0f64.powi(2) * second_moment(3.0);
        assert!((proxy_multi_loss(&p, &spec, &dom).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn grid_contains_endpoints_and_zero() {
        let pts = ProxyDomain::grid(vec![5.0], 101).points().unwrap();
        assert_eq!(pts.rows(), 101);
        assert_eq!(pts[(0, 0)], -5.0);
        assert_eq!(pts[(50, 0)], 0.0);
        assert_eq!(pts[(100, 0)], 5.0);
        let mc = ProxyDomain::monte_carlo(vec![1.0, 2.0], 64, 3);
        assert_eq!(mc.points().unwrap(), mc.points().unwrap());
        assert!(ProxyDomain::grid(vec![0.0], 3).points().is_err());
    }

    #[test]
    fn exact_relu_integrator_generalizes() {
        // A zero of the ReLU proxy integrates any sequence exactly.
        let n = 30;
        let (e, d) = (unit(31, n), unit(32, n));
        let (s, g) = (2.0, 0.95);
        let w = exact_relu_integrator(&e, &d, s, g).unwrap();
        let p = NetworkParams::from_vectors(w, &[e], &[d], Activation::Relu).unwrap();
        let spec = TaskSpec::single(g, s, 200).unwrap();
        let batch = sample_inputs(&spec, 33, 100).unwrap();
        assert!(mean_step_error(&p, &spec, &batch).unwrap() < 1e-8);
    }

    proptest! {
        #[test]
        fn averaged_loss_is_nonnegative(seed in 0u64..1000, t in 1usize..6) {
            let n = 5;
            let (e, d) = (unit(seed, n), unit(seed + 1, n));
            let w = random_w(n, 1.5, seed + 2);
            let chi = chi_white_noise(t, 1.0).unwrap();
            prop_assert!(averaged_linear_loss(&w, &e, &d, 1.0, 0.7, &chi).unwrap() >= 0.0);
        }

        #[test]
        fn proxy_loss_ignores_sample_order(seed in 0u64..500) {
            let n = 7;
            let (e, d) = (unit(seed, n), unit(seed + 1, n));
            let w = random_w(n, 1.0, seed + 2);
            let z = ProxyDomain::grid(vec![2.0], 9).points().unwrap();
            let zr = Matrix::from_fn(9, 1, |k, _| z[(8 - k, 0)]);
            let enc = Matrix::from_rows(&[e]);
            let dec = Matrix::from_rows(&[d]);
            let act = Activation::STEEP_SIGMOID;
            let a = proxy_eval(&w, &enc, &dec, &[1.0], &[0.8], act, &z, 0.0, false).loss;
            let b = proxy_eval(&w, &enc, &dec, &[1.0], &[0.8], act, &zr, 0.0, false).loss;
            prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }
    }
}
