//! Null-initialisation analysis in the two-dimensional `(d, e)` subspace.
//!
//! Gradient descent on the averaged linear loss started from `W = 0` keeps
//! `W` in `span{d d^T, d e^T, e d^T, e e^T}`. Writing
//! `W = sum_ab omega_ab vbar_a vbar_b^T` with the orthonormal pair
//! `(vbar_1, vbar_2) = (d, e) Sigma^{-1/2}` and the overlap matrix
//!
//! ```text
//! Sigma = | d.d  d.e |
//!         | d.e  e.e |
//! ```
//!
//! the moments are `mu_q = (sqrt(Sigma) omega^q sqrt(Sigma))_{12}`, so the
//! whole problem reduces to the 2x2 matrix `omega`.
//!
//! Matrices with eigenvalue `gamma` and eigenvectors `(1, alpha)`,
//! `(1, beta)` are written `Gamma(lambda, alpha, beta)`. For `lambda = 0` the
//! integration scale is `g_1 = Z (alpha - alpha0)(beta - beta0)/(beta - alpha)`
//! and the integrators of scale `s` form the curve `beta = beta_s(alpha)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::losses::{averaged_linear_loss, ChiMatrix};
use crate::numerics::{dot, inv2, mat_pow, orthonormal_basis, spd_sqrt2, symmetric_eigen, Matrix, NumericsConfig};
use crate::training::grad_linear_analytic;

/// Relative eigenvalue threshold below which a Hessian direction is null.
pub const NULL_EIGENVALUE_REL: f64 = 1e-8;

/// `omega` together with the vectors that define the subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaState {
    pub omega: Matrix,
    /// `[[d.d, d.e], [d.e, e.e]]`.
    pub sigma: Matrix,
    pub e: Vec<f64>,
    pub d: Vec<f64>,
}

impl OmegaState {
    pub fn new(omega: Matrix, e: &[f64], d: &[f64]) -> Result<Self> {
        if omega.rows() != 2 || omega.cols() != 2 {
            return Err(shape("OmegaState", "2x2 omega", format!("{}x{}", omega.rows(), omega.cols())));
        }
        if e.len() != d.len() {
            return Err(shape("OmegaState", "equal-length e and d", format!("{} / {}", e.len(), d.len())));
        }
        let sigma = overlap_matrix(e, d);
        spd_sqrt2(&sigma).map_err(|_| Error::Degenerate {
            analysis: "OmegaState",
            reason: "e and d are linearly dependent".into(),
        })?;
        Ok(Self {
            omega,
            sigma,
            e: e.to_vec(),
            d: d.to_vec(),
        })
    }

    pub fn zero(e: &[f64], d: &[f64]) -> Result<Self> {
        Self::new(Matrix::zeros(2, 2), e, d)
    }

    pub fn with_omega(&self, omega: Matrix) -> Self {
        Self {
            omega,
            ..self.clone()
        }
    }

    pub fn sqrt_sigma(&self) -> Matrix {
        spd_sqrt2(&self.sigma).expect("checked at construction")
    }

    /// Orthonormal vectors `vbar_1, vbar_2`.
    pub fn basis(&self) -> (Vec<f64>, Vec<f64>) {
        let inv = inv2(&self.sqrt_sigma()).expect("SPD");
        let n = self.e.len();
        let v1 = (0..n).map(|i| inv[(0, 0)] * self.d[i] + inv[(1, 0)] * self.e[i]).collect();
        let v2 = (0..n).map(|i| inv[(0, 1)] * self.d[i] + inv[(1, 1)] * self.e[i]).collect();
        (v1, v2)
    }

    /// `(a, b)` with `mu_q = a^T omega^q b`: the first row and second column
    /// of `sqrt(Sigma)`.
    fn readout_pair(&self) -> (Vec<f64>, Vec<f64>) {
        let r = self.sqrt_sigma();
        (vec![r[(0, 0)], r[(0, 1)]], vec![r[(0, 1)], r[(1, 1)]])
    }
}

/// `[[d.d, d.e], [d.e, e.e]]`.
pub fn overlap_matrix(e: &[f64], d: &[f64]) -> Matrix {
    let de = dot(d, e);
    Matrix::from_rows(&[[dot(d, d), de], [de, dot(e, e)]])
}

/// Lifts `omega` to the full `n x n` weight matrix.
pub fn omega_to_w(st: &OmegaState) -> Result<Matrix> {
    let (v1, v2) = st.basis();
    let n = v1.len();
    let mut w = Matrix::zeros(n, n);
    let vs = [&v1, &v2];
    for a in 0..2 {
        for b in 0..2 {
            w.add_outer(st.omega[(a, b)], vs[a], vs[b]);
        }
    }
    Ok(w)
}

/// Coordinates `vbar_a^T W vbar_b` of `W` in the subspace.
pub fn w_to_omega(w: &Matrix, e: &[f64], d: &[f64]) -> Result<OmegaState> {
    let st = OmegaState::zero(e, d)?;
    let (v1, v2) = st.basis();
    let wv1 = w.matvec(&v1);
    let wv2 = w.matvec(&v2);
    let omega = Matrix::from_rows(&[[dot(&v1, &wv1), dot(&v1, &wv2)], [dot(&v2, &wv1), dot(&v2, &wv2)]]);
    Ok(st.with_omega(omega))
}

/// `mu_q = (sqrt(Sigma) omega^q sqrt(Sigma))_{12}` for `q = 1..=qmax`.
pub fn moments_omega(st: &OmegaState, qmax: usize) -> Result<Vec<f64>> {
    if qmax == 0 {
        return Err(invalid("qmax", "must be at least 1"));
    }
    let (a, b) = st.readout_pair();
    let mut v = b;
    Ok((0..qmax)
        .map(|_| {
            v = st.omega.matvec(&v);
            dot(&a, &v)
        })
        .collect())
}

/// Same moments through an explicit matrix power.
pub fn moment_by_power(st: &OmegaState, q: u32) -> Result<f64> {
    let r = st.sqrt_sigma();
    Ok(r.matmul(&mat_pow(&st.omega, q)?).matmul(&r)[(0, 1)])
}

/// Constants of the integrator manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldConstants {
    pub alpha0: f64,
    pub beta0: f64,
    #[serde(rename = "z")]
    pub z: f64,
    pub l_plus: f64,
    pub l_minus: f64,
    pub kappa: f64,
    pub r_plus: f64,
    pub r_minus: f64,
    /// `d.e`.
    pub de: f64,
}

pub fn manifold_constants(e: &[f64], d: &[f64]) -> Result<ManifoldConstants> {
    if e.len() != d.len() {
        return Err(shape("manifold_constants", "equal-length e and d", format!("{} / {}", e.len(), d.len())));
    }
    orthonormal_basis(&[d.to_vec(), e.to_vec()], NumericsConfig::default().span_conditioning)?;
    let (dd, ee, de) = (dot(d, d), dot(e, e), dot(d, e));
    let l_plus = dd + ee;
    let l_minus = dd - ee;
    let kappa = (l_minus * l_minus + 4.0 * de * de).sqrt();
    if kappa <= 1e-14 * l_plus {
        return Err(Error::Degenerate {
            analysis: "manifold_constants",
            reason: format!("kappa = {kappa:.3e}: |e| = |d| with e orthogonal to d"),
        });
    }
    if de.abs() <= 1e-14 * l_plus {
        return Err(Error::Degenerate {
            analysis: "manifold_constants",
            reason: "d.e = 0 puts alpha0 and beta0 at infinity".into(),
        });
    }
    let r_plus = (l_plus + kappa).sqrt();
    let r_minus = (l_plus - kappa).sqrt();
    let denom = 2.0 * de * (r_plus - r_minus);
    let alpha0 = -((kappa - l_minus) * r_minus + (kappa + l_minus) * r_plus) / denom;
    let beta0 = ((kappa + l_minus) * r_minus + (kappa - l_minus) * r_plus) / denom;
    let z = (de * (r_plus - r_minus)).powi(2) / (2.0 * kappa * kappa);
    Ok(ManifoldConstants {
        alpha0,
        beta0,
        z,
        l_plus,
        l_minus,
        kappa,
        r_plus,
        r_minus,
        de,
    })
}

impl ManifoldConstants {
    /// Scale carried by the `gamma` mode: `Z (a - a0)(b - b0)/(b - a)`.
    pub fn g1(&self, alpha: f64, beta: f64) -> f64 {
        self.z * (alpha - self.alpha0) * (beta - self.beta0) / (beta - alpha)
    }

    /// Weight of the second mode: `Z (a - b0)(b - a0)/(a - b)`.
    pub fn g2(&self, alpha: f64, beta: f64) -> f64 {
        self.z * (alpha - self.beta0) * (beta - self.alpha0) / (alpha - beta)
    }

    /// `beta` on the iso-scale curve `g1 = s` through `alpha`.
    pub fn beta_s(&self, alpha: f64, s: f64) -> f64 {
        let za = self.z * (alpha - self.alpha0);
        (za * self.beta0 - alpha * s) / (za - s)
    }
}

/// `g_i = (sqrt(Sigma) P)_{1i} (P^{-1} sqrt(Sigma))_{i2}` with
/// `P = [[1, 1], [alpha, beta]]`, evaluated directly.
pub fn g_coefficients(sigma: &Matrix, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    let r = spd_sqrt2(sigma)?;
    let p = modal(alpha, beta)?;
    let pinv = inv2(&p).expect("alpha != beta");
    let left = r.matmul(&p);
    let right = pinv.matmul(&r);
    Ok((left[(0, 0)] * right[(0, 1)], left[(0, 1)] * right[(1, 1)]))
}

fn modal(alpha: f64, beta: f64) -> Result<Matrix> {
    if alpha == beta || !(alpha - beta).is_finite() {
        return Err(Error::Degenerate {
            analysis: "Gamma(lambda, alpha, beta)",
            reason: format!("alpha = beta = {alpha}"),
        });
    }
    Ok(Matrix::from_rows(&[[1.0, 1.0], [alpha, beta]]))
}

/// `P diag(gamma, lambda) P^{-1}`, `P = [[1, 1], [alpha, beta]]`.
pub fn gamma_matrix(gamma: f64, lambda: f64, alpha: f64, beta: f64) -> Result<Matrix> {
    let k = 1.0 / (alpha - beta);
    modal(alpha, beta)?;
    Ok(Matrix::from_rows(&[
        [k * (alpha * lambda - beta * gamma), k * (gamma - lambda)],
        [k * alpha * beta * (lambda - gamma), k * (alpha * gamma - beta * lambda)],
    ]))
}

/// Which family a manifold point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    /// `lambda = 0`, scale fixed by `beta = beta_s(alpha)`.
    RankOne,
    /// `Gamma(lambda, alpha, alpha0)`.
    MAlpha,
    /// `Gamma(lambda, beta0, beta)`.
    MBeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub which: ManifoldKind,
}

/// Integrator of decay `gamma` and scale `s` on the rank-one curve,
/// parametrised by `alpha`.
pub fn gi_manifold_point(c: &ManifoldConstants, s: f64, gamma: f64, alpha: f64) -> Result<(ManifoldPoint, Matrix)> {
    check_scale(c, s)?;
    let za = c.z * (alpha - c.alpha0);
    if (za - s).abs() <= 1e-14 * s.abs().max(za.abs()) {
        return Err(Error::Degenerate {
            analysis: "gi_manifold_point",
            reason: format!("Z (alpha - alpha0) = s at alpha = {alpha}"),
        });
    }
    let beta = c.beta_s(alpha, s);
    if (alpha - beta).abs() < 1e-12 * alpha.abs().max(1.0) {
        return Err(Error::Degenerate {
            analysis: "gi_manifold_point",
            reason: format!("alpha = beta_s(alpha) = {alpha}"),
        });
    }
    let omega = rank_one_omega(gamma, alpha, beta);
    Ok((
        ManifoldPoint {
            alpha,
            beta,
            lambda: 0.0,
            which: ManifoldKind::RankOne,
        },
        omega,
    ))
}

/// Point of `M_alpha` (`free` is alpha) or `M_beta` (`free` is beta).
pub fn special_manifold_point(c: &ManifoldConstants, which: ManifoldKind, lambda: f64, gamma: f64, free: f64) -> Result<(ManifoldPoint, Matrix)> {
    let (alpha, beta) = match which {
        ManifoldKind::MAlpha => (free, c.alpha0),
        ManifoldKind::MBeta => (c.beta0, free),
        ManifoldKind::RankOne => return Err(invalid("which", "use gi_manifold_point for the rank-one curve")),
    };
    let omega = gamma_matrix(gamma, lambda, alpha, beta)?;
    Ok((ManifoldPoint { alpha, beta, lambda, which }, omega))
}

/// `gamma/(beta - alpha) [[beta, -1], [alpha beta, -alpha]]`.
pub fn rank_one_omega(gamma: f64, alpha: f64, beta: f64) -> Matrix {
    let k = gamma / (beta - alpha);
    Matrix::from_rows(&[[k * beta, -k], [k * alpha * beta, -k * alpha]])
}

fn check_scale(c: &ManifoldConstants, s: f64) -> Result<()> {
    if s == 0.0 || !s.is_finite() {
        return Err(invalid("s", format!("scale must be finite and nonzero, got {s}")));
    }
    if (s - c.de).abs() <= 1e-12 * c.de.abs().max(1.0) {
        return Err(Error::SpecialScale { s, de: c.de });
    }
    Ok(())
}

/// Loss of the reduced problem, identical to the averaged loss of the lift.
pub fn omega_loss(st: &OmegaState, s: f64, gamma: f64, chi: &ChiMatrix) -> Result<f64> {
    let (a, b) = st.readout_pair();
    averaged_linear_loss(&st.omega, &b, &a, s, gamma, chi)
}

/// Gradient of [`omega_loss`] with respect to `omega`.
pub fn omega_gradient(st: &OmegaState, s: f64, gamma: f64, chi: &ChiMatrix) -> Result<Matrix> {
    let (a, b) = st.readout_pair();
    grad_linear_analytic(&st.omega, &b, &a, s, gamma, chi)
}

/// `d mu_q / d omega` for `q = 1..=T`, flattened row-major.
fn moment_jacobian(st: &OmegaState, t_len: usize) -> Vec<[f64; 4]> {
    let (a, b) = st.readout_pair();
    let w = &st.omega;
    let mut right = vec![b];
    let mut left = vec![a];
    for k in 1..t_len {
        right.push(w.matvec(&right[k - 1]));
        left.push(w.tr_matvec(&left[k - 1]));
    }
    (1..=t_len)
        .map(|q| {
            let mut j = [0.0; 4];
            for m in 0..q {
                let (l, r) = (&left[m], &right[q - 1 - m]);
                j[0] += l[0] * r[0];
                j[1] += l[0] * r[1];
                j[2] += l[1] * r[0];
                j[3] += l[1] * r[1];
            }
            j
        })
        .collect()
}

/// Gauss-Newton Hessian of the reduced loss and its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianReport {
    /// 4x4, coordinates `(omega_11, omega_12, omega_21, omega_22)`.
    pub matrix: Matrix,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub loss: f64,
    /// Set when the loss is not negligible, so the dropped residual term
    /// of the exact Hessian matters.
    pub off_manifold: bool,
}

impl HessianReport {
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Eigenvalues below `NULL_EIGENVALUE_REL * lambda_max` in magnitude.
    pub fn null_count(&self) -> usize {
        let tol = NULL_EIGENVALUE_REL * self.lambda_max().abs();
        self.eigenvalues.iter().filter(|l| l.abs() < tol).count()
    }

    /// Smallest eigenvalue above the null threshold.
    pub fn lambda_min_nonzero(&self) -> Option<f64> {
        let tol = NULL_EIGENVALUE_REL * self.lambda_max().abs();
        self.eigenvalues.iter().rev().copied().find(|&l| l >= tol)
    }

    pub fn condition_number(&self) -> Option<f64> {
        self.lambda_min_nonzero().map(|l| self.lambda_max() / l)
    }
}

/// `H = 2 sum_qp chi_qp (d mu_q/d omega)(d mu_p/d omega)^T`, exact at integrators.
pub fn hessian_omega(st: &OmegaState, s: f64, gamma: f64, chi: &ChiMatrix) -> Result<HessianReport> {
    let t_len = chi.t_len();
    let jac = moment_jacobian(st, t_len);
    let mut h = Matrix::zeros(4, 4);
    for q in 0..t_len {
        for p in 0..t_len {
            let c = 2.0 * chi.entries()[(q, p)];
            if c == 0.0 {
                continue;
            }
            h.add_outer(c, &jac[q], &jac[p]);
        }
    }
    let (eigenvalues, _) = symmetric_eigen(&h)?;
    let loss = omega_loss(st, s, gamma, chi)?;
    Ok(HessianReport {
        matrix: h,
        eigenvalues,
        loss,
        off_manifold: loss >= 1e-10,
    })
}

/// Plain gradient descent on `omega`; returns the final state and the loss
/// before every step.
pub fn train_omega(st: &OmegaState, s: f64, gamma: f64, chi: &ChiMatrix, lr: f64, steps: usize, stop_loss: f64) -> Result<(OmegaState, Vec<f64>)> {
    let mut cur = st.clone();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let l = omega_loss(&cur, s, gamma, chi)?;
        if !l.is_finite() {
            return Err(Error::NonFinite {
                context: "omega loss",
                step: Some(step),
            });
        }
        losses.push(l);
        if l < stop_loss {
            break;
        }
        let g = omega_gradient(&cur, s, gamma, chi)?;
        cur.omega.axpy(-lr, &g);
    }
    Ok((cur, losses))
}

/// Grid over `alpha` for manifold scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    /// Log-spaced magnitudes per sign.
    pub points_per_sign: usize,
    pub min_abs: f64,
    pub max_abs: f64,
    /// Points with `|alpha - beta|` below this are skipped.
    pub exclusion: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self {
            points_per_sign: 200,
            min_abs: 1e-3,
            max_abs: 1e3,
            exclusion: 1e-6,
        }
    }
}

impl ScanGrid {
    pub fn alphas(&self) -> Vec<f64> {
        let k = self.points_per_sign;
        let mut out = Vec::with_capacity(2 * k + 1);
        let (lo, hi) = (self.min_abs.ln(), self.max_abs.ln());
        let mags: Vec<f64> = (0..k)
            .map(|i| if k == 1 { self.max_abs } else { (lo + (hi - lo) * i as f64 / (k - 1) as f64).exp() })
            .collect();
        out.extend(mags.iter().rev().map(|m| -m));
        out.push(0.0);
        out.extend(mags.iter().copied());
        out
    }
}

/// One point of a manifold scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceScan {
    pub rows: Vec<ScanRow>,
    /// Lowest condition number; ties go to the earliest grid point.
    pub best: ScanRow,
}

impl ConvergenceScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,lambda_min,lambda_max,condition_number\n");
        for r in &self.rows {
            out.push_str(&format!("{:e},{:e},{:e},{:e},{:e}\n", r.alpha, r.beta, r.lambda_min, r.lambda_max, r.condition_number));
        }
        out
    }
}

/// Scans the scale-`s` integrator curve and returns the smallest condition
/// number `C = lambda_max / lambda_min` of the reduced Hessian.
pub fn convergence_bound(e: &[f64], d: &[f64], s: f64, gamma: f64, chi: &ChiMatrix, grid: &ScanGrid) -> Result<ConvergenceScan> {
    let c = manifold_constants(e, d)?;
    check_scale(&c, s)?;
    let base = OmegaState::zero(e, d)?;
    let mut rows = Vec::new();
    for alpha in grid.alphas() {
        let Ok((pt, omega)) = gi_manifold_point(&c, s, gamma, alpha) else {
            continue;
        };
        if (pt.alpha - pt.beta).abs() < grid.exclusion || !omega.is_finite() {
            continue;
        }
        let h = hessian_omega(&base.with_omega(omega), s, gamma, chi)?;
        let Some(lmin) = h.lambda_min_nonzero() else {
            continue;
        };
        rows.push(ScanRow {
            alpha: pt.alpha,
            beta: pt.beta,
            lambda_min: lmin,
            lambda_max: h.lambda_max(),
            condition_number: h.lambda_max() / lmin,
        });
    }
    let best = rows
        .iter()
        .copied()
        .reduce(|a, b| if b.condition_number < a.condition_number { b } else { a })
        .ok_or_else(|| invalid("grid", "no admissible grid point"))?;
    Ok(ConvergenceScan { rows, best })
}

/// Asymptotic behaviour of a loss series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvergenceKind {
    /// `loss ~ exp(-rate tau)`.
    Exponential { rate: f64 },
    /// `loss ~ tau^exponent`.
    Algebraic { exponent: f64 },
    Undetermined,
}

/// Fits of the tail of a loss series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    pub kind: ConvergenceKind,
    pub r2_exponential: f64,
    pub r2_power: f64,
    pub slope_exponential: f64,
    pub slope_power: f64,
}

/// R-squared margin required to prefer one model over the other.
pub const CLASSIFICATION_MARGIN: f64 = 0.05;

/// Classifies a loss series over its final two decades `[N/100, N]`.
pub fn detect_algebraic_convergence(losses: &[f64]) -> Result<ConvergenceKind> {
    Ok(fit_convergence(losses)?.kind)
}

pub fn fit_convergence(losses: &[f64]) -> Result<ConvergenceFit> {
    if losses.len() < 100 {
        return Err(invalid("loss_series", format!("need at least 100 values, got {}", losses.len())));
    }
    if losses.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(invalid("loss_series", "values must be positive and finite"));
    }
    let n = losses.len();
    let start = (n / 100).max(1);
    let tail = &losses[start - 1..];
    let taus: Vec<f64> = (start..=n).map(|t| t as f64).collect();
    let logs: Vec<f64> = tail.iter().map(|l| l.ln()).collect();
    let log_taus: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let (slope_e, r2_e) = linear_fit(&taus, &logs);
    let (slope_p, r2_p) = linear_fit(&log_taus, &logs);
    let monotone = tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let kind = if !monotone {
        ConvergenceKind::Undetermined
    } else if r2_p >= r2_e + CLASSIFICATION_MARGIN {
        ConvergenceKind::Algebraic { exponent: slope_p }
    } else if r2_e >= r2_p + CLASSIFICATION_MARGIN {
        ConvergenceKind::Exponential { rate: -slope_e }
    } else {
        ConvergenceKind::Undetermined
    };
    Ok(ConvergenceFit {
        kind,
        r2_exponential: r2_e,
        r2_power: r2_p,
        slope_exponential: slope_e,
        slope_power: slope_p,
    })
}

/// Ordinary least squares `y = a x + b`; returns `(a, R^2)`.
pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

/// Time constant of the parameter error implied by the tail of a loss
/// series, `-2 / (d ln L / d tau)`, fitted over the last `fraction` of it.
pub fn fit_time_constant(losses: &[f64], fraction: f64) -> f64 {
    let n = losses.len();
    let start = ((1.0 - fraction) * n as f64) as usize;
    let x: Vec<f64> = (start..n).map(|t| t as f64).collect();
    let y: Vec<f64> = losses[start..].iter().map(|l| l.ln()).collect();
    -2.0 / linear_fit(&x, &y).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{chi_white_noise, moment_sequence};
    use crate::numerics::{normalize, svd, Eig2};
    use crate::rng::{gaussian_vec, seeded};
    use proptest::prelude::*;

    fn pair(seed: u64, n: usize, ne: f64, nd: f64) -> (Vec<f64>, Vec<f64>) {
        let mut r = seeded(seed, 0);
        let mut e = gaussian_vec(&mut r, n, 1.0);
        let mut d = gaussian_vec(&mut r, n, 1.0);
        normalize(&mut e);
        normalize(&mut d);
        e.iter_mut().for_each(|x| *x *= ne);
        d.iter_mut().for_each(|x| *x *= nd);
        (e, d)
    }

    /// Unit e, d in R^2 with d.e = 0.5.
    fn half_overlap() -> (Vec<f64>, Vec<f64>) {
        let t = 0.5f64.acos();
        (vec![1.0, 0.0], vec![t.cos(), t.sin()])
    }

    #[test]
    fn omega_lift_examples() {
        let (e, d) = pair(1, 7, 1.0, 1.0);
        let st = OmegaState::zero(&e, &d).unwrap();
        assert_eq!(omega_to_w(&st).unwrap().max_abs(), 0.0);

        let (e, d) = (vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]);
        let st = OmegaState::new(Matrix::diag(&[0.6, 0.0]), &e, &d).unwrap();
        let w = omega_to_w(&st).unwrap();
        let full = moment_sequence(&w, &e, &d, 6);
        let reduced = moments_omega(&st, 6).unwrap();
        for (a, b) in full.iter().zip(&reduced) {
            assert!((a - b).abs() < 1e-12);
        }

        let (e, d) = pair(2, 9, 1.3, 0.7);
        let st = OmegaState::new(rank_one_omega(0.8, 0.4, -1.7), &e, &d).unwrap();
        let s = svd(&omega_to_w(&st).unwrap()).unwrap();
        assert!(s.singular_values[1] < 1e-10 * s.singular_values[0]);
    }

    #[test]
    fn round_trip_through_w() {
        let (e, d) = pair(3, 8, 0.9, 1.4);
        let omega = Matrix::from_rows(&[[0.3, -0.2], [0.5, 0.1]]);
        let st = OmegaState::new(omega.clone(), &e, &d).unwrap();
        let back = w_to_omega(&omega_to_w(&st).unwrap(), &e, &d).unwrap();
        assert!(back.omega.sub(&omega).max_abs() < 1e-12);
    }

    #[test]
    fn paper_constants_for_half_overlap() {
        let (e, d) = half_overlap();
        let c = manifold_constants(&e, &d).unwrap();
        let r3 = 3f64.sqrt();
        assert!((c.kappa - 1.0).abs() < 1e-12);
        assert!((c.r_minus - 1.0).abs() < 1e-12);
        assert!((c.r_plus - r3).abs() < 1e-12);
        assert!((c.alpha0 + 2.0 + r3).abs() < 1e-10);
        assert!((c.beta0 - 2.0 - r3).abs() < 1e-10);
        assert!((c.z - (2.0 - r3) / 4.0).abs() < 1e-10);
    }

    #[test]
    fn constants_match_direct_g_coefficients() {
        for seed in 0..20 {
            let (e, d) = pair(seed, 5, 0.5 + seed as f64 * 0.1, 1.5 - seed as f64 * 0.05);
            let c = manifold_constants(&e, &d).unwrap();
            let sigma = overlap_matrix(&e, &d);
            for (alpha, beta) in [(0.3, -1.2), (2.0, 5.0), (-4.0, 0.1)] {
                let (g1, g2) = g_coefficients(&sigma, alpha, beta).unwrap();
                assert!((g1 - c.g1(alpha, beta)).abs() < 1e-9 * (1.0 + g1.abs()));
                assert!((g2 - c.g2(alpha, beta)).abs() < 1e-9 * (1.0 + g2.abs()));
                assert!((g1 + g2 - c.de).abs() < 1e-9);
            }
            // The direct coefficients vanish on the lines given by the constants.
            assert!(g_coefficients(&sigma, c.alpha0, 0.7).unwrap().0.abs() < 1e-9);
            assert!(g_coefficients(&sigma, 0.7, c.beta0).unwrap().0.abs() < 1e-9);
            assert!(g_coefficients(&sigma, c.beta0, 0.7).unwrap().1.abs() < 1e-9);
            assert!(g_coefficients(&sigma, 0.7, c.alpha0).unwrap().1.abs() < 1e-9);
        }
    }

    #[test]
    fn swapping_e_and_d_swaps_and_negates_roots() {
        let (e, d) = pair(4, 6, 0.8, 1.3);
        let a = manifold_constants(&e, &d).unwrap();
        let b = manifold_constants(&d, &e).unwrap();
        assert!((a.alpha0 + b.beta0).abs() < 1e-10 * a.alpha0.abs());
        assert!((a.beta0 + b.alpha0).abs() < 1e-10 * a.beta0.abs());
        assert!((a.z - b.z).abs() < 1e-12);
        assert_eq!(a.l_minus, -b.l_minus);
    }

    #[test]
    fn constants_reject_degenerate_pairs() {
        assert!(manifold_constants(&[1.0, 0.0], &[0.0, 1.0]).is_err());
        assert!(manifold_constants(&[1.0, 0.0], &[2.0, 0.0]).is_err());
    }

    #[test]
    fn manifold_points_are_integrators() {
        let (e, d) = pair(5, 10, 1.0, 1.0);
        let c = manifold_constants(&e, &d).unwrap();
        let (s, gamma) = (0.3, 0.9);
        let mut omegas = Vec::new();
        for alpha in [-3.0, -0.5, 0.2, 1.7] {
            let (pt, omega) = gi_manifold_point(&c, s, gamma, alpha).unwrap();
            assert!((c.g1(pt.alpha, pt.beta) - s).abs() < 1e-10);
            let (g1, _) = g_coefficients(&overlap_matrix(&e, &d), pt.alpha, pt.beta).unwrap();
            assert!((g1 - s).abs() < 1e-9);
            match crate::numerics::eig2(&omega).unwrap() {
                Eig2::Real { values, .. } => {
                    assert!((values.0 - gamma).abs() < 1e-10 && values.1.abs() < 1e-10);
                }
                other => panic!("{other:?}"),
            }
            let st = OmegaState::new(omega.clone(), &e, &d).unwrap();
            let w = omega_to_w(&st).unwrap();
            let mu = moment_sequence(&w, &e, &d, 50);
            for (q, m) in mu.iter().enumerate() {
                assert!((m - s * gamma.powi(q as i32 + 1)).abs() < 1e-8);
            }
            omegas.push(omega);
        }
        assert!(omegas[0].sub(&omegas[1]).max_abs() > 1e-3);
        assert!(matches!(gi_manifold_point(&c, c.de, gamma, 0.3), Err(Error::SpecialScale { .. })));
    }

    #[test]
    fn beta_s_approaches_roots_at_special_scale() {
        let (e, d) = half_overlap();
        let c = manifold_constants(&e, &d).unwrap();
        let alpha = 0.8;
        let near = c.beta_s(alpha, c.de * (1.0 + 1e-9));
        assert!((near - c.alpha0).abs() < 1e-5 * c.alpha0.abs());
        // At alpha = beta0 the curve degenerates: every beta works.
        assert!((c.g1(c.beta0, 3.0) - c.de).abs() < 1e-12);
    }

    #[test]
    fn moments_agree_with_powers_and_lift() {
        let (e, d) = pair(6, 12, 1.2, 0.9);
        let st = OmegaState::new(Matrix::from_rows(&[[0.5, 0.3], [-0.2, 0.4]]), &e, &d).unwrap();
        let reduced = moments_omega(&st, 20).unwrap();
        let lifted = moment_sequence(&omega_to_w(&st).unwrap(), &e, &d, 20);
        for q in 1..=20 {
            let p = moment_by_power(&st, q as u32).unwrap();
            assert!((p - reduced[q - 1]).abs() < 1e-10);
            assert!((lifted[q - 1] - reduced[q - 1]).abs() < 1e-10);
        }
        assert!(moments_omega(&st, 0).is_err());
        assert!(moments_omega(&OmegaState::zero(&e, &d).unwrap(), 5).unwrap().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn hessian_matches_finite_differences_at_integrator() {
        let (e, d) = pair(7, 6, 1.0, 1.0);
        let c = manifold_constants(&e, &d).unwrap();
        let (s, gamma) = (0.6, 0.8);
        let chi = chi_white_noise(5, 1.0).unwrap();
        let (_, omega) = gi_manifold_point(&c, s, gamma, 0.9).unwrap();
        let st = OmegaState::new(omega.clone(), &e, &d).unwrap();
        let h = hessian_omega(&st, s, gamma, &chi).unwrap();
        assert!(!h.off_manifold);
        assert!(h.matrix.sub(&h.matrix.transpose()).max_abs() < 1e-12);
        let eps = 1e-4;
        let loss = |o: &Matrix| omega_loss(&st.with_omega(o.clone()), s, gamma, &chi).unwrap();
        let mut fd = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let bump = |di: f64, dj: f64| {
                    let mut o = omega.clone();
                    o.as_mut_slice()[i] += di;
                    o.as_mut_slice()[j] += dj;
                    loss(&o)
                };
                fd[(i, j)] = (bump(eps, eps) - bump(eps, -eps) - bump(-eps, eps) + bump(-eps, -eps)) / (4.0 * eps * eps);
            }
        }
        assert!(fd.rel_diff(&h.matrix) < 1e-5, "{}", fd.rel_diff(&h.matrix));
        assert_eq!(h.null_count(), 1);
        assert!(h.eigenvalues.iter().all(|&l| l > -1e-8 * h.lambda_max()));
    }

    #[test]
    fn hessian_has_three_null_directions_on_intersection() {
        let (e, d) = pair(8, 6, 1.0, 1.0);
        let c = manifold_constants(&e, &d).unwrap();
        let gamma = 0.8;
        let chi = chi_white_noise(6, 1.0).unwrap();
        for lambda in [0.0, 0.3, -0.4] {
            let omega = gamma_matrix(gamma, lambda, c.beta0, c.alpha0).unwrap();
            let st = OmegaState::new(omega, &e, &d).unwrap();
            let h = hessian_omega(&st, c.de, gamma, &chi).unwrap();
            assert!(h.loss < 1e-20);
            assert_eq!(h.null_count(), 3, "{:?}", h.eigenvalues);
        }
    }

    #[test]
    fn scan_finds_well_conditioned_points() {
        let (e, d) = pair(9, 6, 1.0, 1.0);
        let chi = chi_white_noise(3, 1.0).unwrap();
        let grid = ScanGrid {
            points_per_sign: 40,
            ..Default::default()
        };
        let scan = convergence_bound(&e, &d, 1.0, 0.8, &chi, &grid).unwrap();
        assert!(scan.rows.iter().all(|r| r.condition_number >= 1.0));
        assert!(scan.best.alpha.abs() < 100.0);
        assert!(scan.to_csv().starts_with("alpha,beta,lambda_min,lambda_max,condition_number\n"));
        let empty = ScanGrid {
            points_per_sign: 0,
            ..Default::default()
        };
        // Only alpha = 0 remains; still admissible.
        assert_eq!(convergence_bound(&e, &d, 1.0, 0.8, &chi, &empty).unwrap().rows.len(), 1);
    }

    #[test]
    fn classification_of_synthetic_series() {
        let geo: Vec<f64> = (0..1000).map(|t| 3.0 * 0.99f64.powi(t)).collect();
        assert!(matches!(detect_algebraic_convergence(&geo).unwrap(), ConvergenceKind::Exponential { .. }));
        let pow: Vec<f64> = (1..=1000).map(|t| 5.0 / (t as f64).powi(2)).collect();
        match detect_algebraic_convergence(&pow).unwrap() {
            ConvergenceKind::Algebraic { exponent } => assert!((exponent + 2.0).abs() < 0.1),
            other => panic!("{other:?}"),
        }
        let mut bumpy = pow.clone();
        bumpy[900] *= 2.0;
        assert_eq!(detect_algebraic_convergence(&bumpy).unwrap(), ConvergenceKind::Undetermined);
        assert!(detect_algebraic_convergence(&pow[..50]).is_err());
    }

    /// T = 1 from W = 0: `W(tau) = c(tau) d e^T` with
    /// `c(tau) = s gamma / k (1 - (1 - 2 eta k)^tau)`, `k = |e|^2 |d|^2`.
    #[test]
    fn single_step_epoch_matches_closed_form() {
        let (e, d) = pair(11, 8, 1.3, 0.8);
        let k = dot(&e, &e) * dot(&d, &d);
        let (s, gamma) = (1.5, 0.9);
        let chi = chi_white_noise(1, 1.0).unwrap();
        let eta = 0.3 / k;
        let mut st = OmegaState::zero(&e, &d).unwrap();
        for tau in 1..=1000 {
            st = train_omega(&st, s, gamma, &chi, eta, 1, 0.0).unwrap().0;
            let c = s * gamma / k * (1.0 - (1.0 - 2.0 * eta * k).powi(tau));
            let w = omega_to_w(&st).unwrap();
            let expect = Matrix::outer(&d, &e).scaled(c);
            assert!(w.sub(&expect).max_abs() < 1e-10, "tau={tau}");
        }
        // Stable strictly below eta = 1/k, unstable from it on.
        let run = |eta: f64| train_omega(&OmegaState::zero(&e, &d).unwrap(), s, gamma, &chi, eta, 200, 0.0).unwrap().1;
        let below = run(0.99 / k);
        assert!(below.last().unwrap() < &(1e-3 * below[0]));
        let at = run(1.0 / k);
        assert!((at.last().unwrap() - at[0]).abs() < 1e-9 * at[0]);
        let above = run(1.01 / k);
        assert!(above.last().unwrap() > &(10.0 * above[0]));
    }

    #[test]
    fn gd_time_constant_tracks_condition_number() {
        let (e, d) = pair(10, 6, 1.0, 1.0);
        let c = manifold_constants(&e, &d).unwrap();
        let (s, gamma) = (0.7, 0.8);
        let chi = chi_white_noise(3, 1.0).unwrap();
        let (_, omega) = gi_manifold_point(&c, s, gamma, 0.5).unwrap();
        let st = OmegaState::new(omega, &e, &d).unwrap();
        let h = hessian_omega(&st, s, gamma, &chi).unwrap();
        let cond = h.condition_number().unwrap();
        let mut start = st.omega.clone();
        start.axpy(1e-4, &Matrix::from_rows(&[[0.3, -0.7], [0.5, 0.2]]));
        let steps = (30.0 * cond) as usize;
        let (_, losses) = train_omega(&st.with_omega(start), s, gamma, &chi, 1.0 / h.lambda_max(), steps, 1e-28).unwrap();
        let tc = fit_time_constant(&losses, 0.3);
        assert!((tc - cond).abs() < 0.3 * cond, "tc={tc} C={cond}");
    }

    proptest! {
        #[test]
        fn gamma_matrix_has_prescribed_eigenvalues(lambda in -2.0f64..2.0, alpha in -5.0f64..5.0, beta in -5.0f64..5.0) {
            prop_assume!((alpha - beta).abs() > 0.1);
            prop_assume!((lambda - 0.7).abs() > 1e-3);
            let m = gamma_matrix(0.7, lambda, alpha, beta).unwrap();
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            prop_assert!((tr - 0.7 - lambda).abs() < 1e-10 * (1.0 + m.max_abs()));
            prop_assert!((det - 0.7 * lambda).abs() < 1e-10 * (1.0 + m.max_abs().powi(2)));
        }

        #[test]
        fn g_coefficients_sum_to_overlap(seed in 0u64..1000, alpha in -4.0f64..4.0, beta in -4.0f64..4.0) {
            prop_assume!((alpha - beta).abs() > 0.05);
            let (e, d) = pair(seed, 5, 1.0, 1.0);
            let (g1, g2) = g_coefficients(&overlap_matrix(&e, &d), alpha, beta).unwrap();
            prop_assert!((g1 + g2 - dot(&d, &e)).abs() < 1e-9 * (1.0 + g1.abs()));
        }

        #[test]
        fn iso_scale_points_lift_to_integrators(seed in 0u64..500, alpha in -3.0f64..3.0, s in 0.2f64..3.0) {
            let (e, d) = pair(seed, 8, 1.0, 1.0);
            let c = manifold_constants(&e, &d).unwrap();
            prop_assume!((s - c.de).abs() > 0.05);
            let Ok((_, omega)) = gi_manifold_point(&c, s, 0.85, alpha) else { return Ok(()) };
            prop_assume!(omega.max_abs() < 1e3);
            let w = omega_to_w(&OmegaState::new(omega, &e, &d).unwrap()).unwrap();
            let mu = moment_sequence(&w, &e, &d, 50);
            for (q, m) in mu.iter().enumerate() {
                prop_assert!((m - s * 0.85f64.powi(q as i32 + 1)).abs() < 1e-8 * (1.0 + w.max_abs()));
            }
        }
    }
}
