//! Structural analyses of trained networks.
//!
//! Most analyses work on a [`Samples`] set: every time step of a batch of
//! simulated sequences flattened into rows of currents, states and targets.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, shape, Error, Result};
use crate::losses::{min_norm_solution, moment_sequence};
use crate::model::{sample_inputs_stream, simulate_batch, stack_by_time, stacked_targets, Activation, NetworkParams, TaskSpec, Trajectory};
use crate::numerics::{cosine, dot, gemm, norm, solve, svd, Matrix};
use crate::rng::{self, gaussian_vec};
use crate::training::DaleMask;

/// Moments `mu_q = d^T W^q e`, `q = 1..=qmax`, by repeated products.
pub fn moments(w: &Matrix, e: &[f64], d: &[f64], qmax: usize) -> Result<Vec<f64>> {
    if qmax == 0 {
        return Err(invalid("qmax", "must be at least 1"));
    }
    if !w.is_square() || w.rows() != e.len() || e.len() != d.len() {
        return Err(shape("moments", format!("{0}x{0} W with length-{0} e, d", w.rows()), format!("{} / {}", e.len(), d.len())));
    }
    Ok(moment_sequence(w, e, d, qmax))
}

/// Residuals of the integrator conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiReport {
    pub qmax: usize,
    pub tolerance: f64,
    pub max_moment_residual: f64,
    /// `max_q |d_c^T W^q e_c - s_c gamma_c^q|` per channel.
    pub channel_residuals: Vec<f64>,
    /// `max_q |d_c^T W^q e_c'|` over `c != c'`; zero for one channel.
    pub max_cross_residual: f64,
    pub verdict: bool,
}

/// Single-channel check of `mu_q = s gamma^q` for `q <= qmax`.
pub fn gi_check(w: &Matrix, e: &[f64], d: &[f64], s: f64, gamma: f64, qmax: usize, tol: f64) -> Result<GiReport> {
    let mu = moments(w, e, d, qmax)?;
    let worst = mu
        .iter()
        .enumerate()
        .map(|(q, m)| (m - s * gamma.powi(q as i32 + 1)).abs())
        .fold(0.0, f64::max);
    Ok(GiReport {
        qmax,
        tolerance: tol,
        max_moment_residual: worst,
        channel_residuals: vec![worst],
        max_cross_residual: 0.0,
        verdict: worst < tol,
    })
}

/// Multi-channel check: `d_c^T W^q e_c' = delta_cc' s_c gamma_c^q`.
pub fn gi_check_network(p: &NetworkParams, spec: &TaskSpec, qmax: usize, tol: f64) -> Result<GiReport> {
    if spec.channels() != p.channels() {
        return Err(shape("gi_check_network", format!("{} channels", p.channels()), spec.channels()));
    }
    if qmax == 0 {
        return Err(invalid("qmax", "must be at least 1"));
    }
    let dch = p.channels();
    let mut channel = vec![0.0f64; dch];
    let mut cross = 0.0f64;
    for src in 0..dch {
        let mut v = p.encoder(src).to_vec();
        for q in 1..=qmax {
            v = p.w().matvec(&v);
            for dst in 0..dch {
                let mu = dot(p.decoder(dst), &v);
                if dst == src {
                    let r = (mu - spec.scales[src] * spec.gammas[src].powi(q as i32)).abs();
                    channel[src] = channel[src].max(r);
                } else {
                    cross = cross.max(mu.abs());
                }
            }
        }
    }
    let worst = channel.iter().copied().fold(cross, f64::max);
    Ok(GiReport {
        qmax,
        tolerance: tol,
        max_moment_residual: worst,
        channel_residuals: channel,
        max_cross_residual: cross,
        verdict: worst < tol,
    })
}

/// Linear multi-channel integrator `W = L diag(gamma) R^T` with
/// `L = D^T (D D^T)^{-1}` and `R` the smallest matrix with
/// `R^T L = I` and `r_c . e_c' = s_c delta_cc'`.
pub fn linear_multichannel_gi(encoders: &Matrix, decoders: &Matrix, scales: &[f64], gammas: &[f64]) -> Result<Matrix> {
    let (dch, n) = (decoders.rows(), decoders.cols());
    if encoders.rows() != dch || encoders.cols() != n || scales.len() != dch || gammas.len() != dch {
        return Err(shape("linear_multichannel_gi", format!("{dch} channels of length {n}"), format!("{}x{}", encoders.rows(), encoders.cols())));
    }
    if 2 * dch > n {
        return Err(invalid("network.n", format!("need n >= 2D, got n={n}, D={dch}")));
    }
    let gram = Matrix::from_fn(dch, dch, |a, b| dot(decoders.row(a), decoders.row(b)));
    let mut ls = Vec::with_capacity(dch);
    for c in 0..dch {
        let mut unit = vec![0.0; dch];
        unit[c] = 1.0;
        let coef = solve(&gram, &unit)?;
        let mut l = vec![0.0; n];
        for (k, a) in coef.iter().enumerate() {
            crate::numerics::axpy(*a, decoders.row(k), &mut l);
        }
        ls.push(l);
    }
    let mut rows: Vec<Vec<f64>> = ls.clone();
    rows.extend((0..dch).map(|c| encoders.row(c).to_vec()));
    let mut w = Matrix::zeros(n, n);
    for c in 0..dch {
        let mut rhs = vec![0.0; 2 * dch];
        rhs[c] = 1.0;
        rhs[dch + c] = scales[c];
        let r = min_norm_solution(&rows, &rhs)?;
        w.add_outer(gammas[c], &ls[c], &r);
    }
    Ok(w)
}

/// One singular triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub sigma: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Leading `k` singular triplets by randomized subspace iteration.
///
/// Signs are fixed so that the left vector has a nonnegative sum.
pub fn leading_triplets(m: &Matrix, k: usize, seed: u64) -> Result<Vec<Triplet>> {
    let (rows, cols) = (m.rows(), m.cols());
    let k = k.min(rows).min(cols);
    if k == 0 {
        return Ok(Vec::new());
    }
    let block = (k + 8).min(cols).min(rows);
    let mut r = rng::seeded(seed, rng::stream::PROBE);
    let omega = Matrix::from_vec(cols, block, gaussian_vec(&mut r, cols * block, 1.0))?;
    let mut y = Matrix::zeros(rows, block);
    gemm(1.0, m, false, &omega, false, 0.0, &mut y);
    orthonormalize_columns(&mut y);
    let mut z = Matrix::zeros(cols, block);
    for _ in 0..12 {
        gemm(1.0, m, true, &y, false, 0.0, &mut z);
        orthonormalize_columns(&mut z);
        gemm(1.0, m, false, &z, false, 0.0, &mut y);
        orthonormalize_columns(&mut y);
    }
    // B = Q^T M is block x cols.
    let mut b = Matrix::zeros(block, cols);
    gemm(1.0, &y, true, m, false, 0.0, &mut b);
    let small = svd(&b)?;
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let ub = small.left(j);
        let mut left = y.matvec(&ub);
        let mut right = small.right(j);
        if left.iter().sum::<f64>() < 0.0 {
            left.iter_mut().for_each(|x| *x = -*x);
            right.iter_mut().for_each(|x| *x = -*x);
        }
        out.push(Triplet {
            sigma: small.singular_values[j],
            left,
            right,
        });
    }
    Ok(out)
}

/// Modified Gram-Schmidt, applied twice; zero columns stay zero.
fn orthonormalize_columns(m: &mut Matrix) {
    let (rows, cols) = (m.rows(), m.cols());
    let mut colv: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    for _ in 0..2 {
        for j in 0..cols {
            for i in 0..j {
                let (head, tail) = colv.split_at_mut(j);
                let c = dot(&head[i], &tail[0]);
                crate::numerics::axpy(-c, &head[i], &mut tail[0]);
            }
            let nrm = norm(&colv[j]);
            if nrm > 1e-300 {
                colv[j].iter_mut().for_each(|x| *x /= nrm);
            } else {
                colv[j].iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
    for (j, c) in colv.iter().enumerate() {
        debug_assert_eq!(c.len(), rows);
        m.set_column(j, c);
    }
}

/// Singular spectrum of `W` split into outliers and bulk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub singular_values: Vec<f64>,
    /// Number of expected structured modes used as reference.
    pub reference_rank: usize,
    pub gap_factor: f64,
    /// Singular values larger than `gap_factor` times the
    /// `(reference_rank + 1)`-th one.
    pub outlier_count: usize,
    /// Statistics over the values beyond `reference_rank`.
    pub bulk_mean: f64,
    pub bulk_median: f64,
    pub bulk_max: f64,
    /// Leading `reference_rank + 1` triplets.
    pub top: Vec<Triplet>,
}

pub const DEFAULT_GAP_FACTOR: f64 = 5.0;

/// Spectrum of `W` relative to `reference_rank` expected modes.
pub fn spectrum_summary(w: &Matrix, reference_rank: usize, gap_factor: f64) -> Result<SpectrumSummary> {
    let res = svd(w)?;
    let sv = res.singular_values.clone();
    let k = sv.len();
    if reference_rank >= k {
        return Err(invalid("reference_rank", format!("must be below min(rows, cols) = {k}")));
    }
    let reference = sv[reference_rank];
    let outlier_count = sv.iter().filter(|&&v| v > gap_factor * reference).count();
    let bulk = &sv[reference_rank..];
    let mut sorted = bulk.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bulk_median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let top = (0..=reference_rank)
        .map(|j| {
            let mut left = res.left(j);
            let mut right = res.right(j);
            if left.iter().sum::<f64>() < 0.0 {
                left.iter_mut().for_each(|x| *x = -*x);
                right.iter_mut().for_each(|x| *x = -*x);
            }
            Triplet { sigma: sv[j], left, right }
        })
        .collect();
    Ok(SpectrumSummary {
        bulk_mean: bulk.iter().sum::<f64>() / bulk.len() as f64,
        bulk_median,
        bulk_max: bulk[0],
        singular_values: sv,
        reference_rank,
        gap_factor,
        outlier_count,
        top,
    })
}

/// Every time step of a batch of sequences, one row per `(sequence, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    /// `N x n`.
    pub currents: Matrix,
    /// `N x n`.
    pub states: Matrix,
    /// `N x D`.
    pub targets: Matrix,
    /// `N x D`.
    pub outputs: Matrix,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.currents.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> usize {
        self.currents.cols()
    }

    pub fn channels(&self) -> usize {
        self.targets.cols()
    }

    /// Simulates `batch` fresh sequences of `spec`.
    pub fn collect(p: &NetworkParams, spec: &TaskSpec, batch: usize, seed: u64) -> Result<Self> {
        let inputs = sample_inputs_stream(spec, seed, rng::stream::PROBE, batch)?;
        Self::simulate(p, spec, &inputs)
    }

    /// Simulates the given `D x T` sequences.
    pub fn simulate(p: &NetworkParams, spec: &TaskSpec, inputs: &[Matrix]) -> Result<Self> {
        let xs = stack_by_time(inputs)?;
        let ys = stacked_targets(spec, &xs);
        let (b, t_len, n, dch) = (inputs.len(), xs.len(), p.n(), p.channels());
        let total = b * t_len;
        let mut currents = Matrix::zeros(total, n);
        let mut states = Matrix::zeros(total, n);
        let mut outputs = Matrix::zeros(total, dch);
        let mut targets = Matrix::zeros(total, dch);
        simulate_batch(p, &xs, |t, _, nu, h, y| {
            for r in 0..b {
                let row = r * t_len + t;
                currents.row_mut(row).copy_from_slice(nu.row(r));
                states.row_mut(row).copy_from_slice(h.row(r));
                outputs.row_mut(row).copy_from_slice(y.row(r));
                targets.row_mut(row).copy_from_slice(ys[t].row(r));
            }
        })?;
        Ok(Self {
            currents,
            states,
            targets,
            outputs,
        })
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        let first = trajs.first().ok_or_else(|| invalid("trajectories", "must be nonempty"))?;
        let (n, dch) = (first.currents.cols(), first.targets.rows());
        let total: usize = trajs.iter().map(|t| t.currents.rows()).sum();
        let mut out = Self {
            currents: Matrix::zeros(total, n),
            states: Matrix::zeros(total, n),
            targets: Matrix::zeros(total, dch),
            outputs: Matrix::zeros(total, dch),
        };
        let mut row = 0;
        for tr in trajs {
            if tr.currents.cols() != n || tr.targets.rows() != dch {
                return Err(shape("from_trajectories", format!("n={n}, D={dch}"), "mixed trajectories"));
            }
            for t in 0..tr.currents.rows() {
                out.currents.row_mut(row).copy_from_slice(tr.currents.row(t));
                out.states.row_mut(row).copy_from_slice(tr.states.row(t));
                for c in 0..dch {
                    out.targets[(row, c)] = tr.targets[(c, t)];
                    out.outputs[(row, c)] = tr.outputs[(c, t)];
                }
                row += 1;
            }
        }
        Ok(out)
    }

    /// Copy with target rows permuted at random.
    pub fn shuffled_targets(&self, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::seeded(seed, rng::stream::SHUFFLE));
        let targets = Matrix::from_fn(self.len(), self.channels(), |r, c| self.targets[(order[r], c)]);
        Self {
            targets,
            ..self.clone()
        }
    }

    fn target_column(&self, c: usize) -> Vec<f64> {
        self.targets.column(c)
    }
}

/// Per-neuron fit `nu_i = L_i y` with zero intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityFit {
    pub l: Vec<f64>,
    /// Uncentered R^2 per neuron; 1 for neurons whose current is always 0.
    pub r2: Vec<f64>,
    pub median_r2: f64,
    /// Cosine between `L` and `W e / (s gamma)`, when supplied.
    pub cosine_to_prediction: Option<f64>,
}

/// Regresses every current on the single integral.
pub fn current_linearity_fit(samples: &Samples, prediction: Option<&[f64]>) -> Result<LinearityFit> {
    if samples.channels() != 1 {
        return Err(invalid("analysis.current_linearity", format!("needs one channel, got {}", samples.channels())));
    }
    let y = samples.target_column(0);
    let yy = dot(&y, &y);
    if yy == 0.0 {
        return Err(Error::Degenerate {
            analysis: "current_linearity_fit",
            reason: "target is identically zero".into(),
        });
    }
    let n = samples.n();
    let mut l = vec![0.0; n];
    let mut num = vec![0.0; n];
    let mut ss = vec![0.0; n];
    for (t, &yt) in y.iter().enumerate() {
        let row = samples.currents.row(t);
        for i in 0..n {
            num[i] += row[i] * yt;
            ss[i] += row[i] * row[i];
        }
    }
    for i in 0..n {
        l[i] = num[i] / yy;
    }
    let mut res = vec![0.0; n];
    for (t, &yt) in y.iter().enumerate() {
        let row = samples.currents.row(t);
        for i in 0..n {
            res[i] += (row[i] - l[i] * yt).powi(2);
        }
    }
    let r2: Vec<f64> = (0..n).map(|i| if ss[i] == 0.0 { 1.0 } else { 1.0 - res[i] / ss[i] }).collect();
    let cosine_to_prediction = match prediction {
        Some(p) if p.len() == n => Some(cosine(&l, p)),
        Some(p) => return Err(shape("current_linearity_fit", format!("prediction of length {n}"), p.len())),
        None => None,
    };
    Ok(LinearityFit {
        median_r2: median(&r2),
        l,
        r2,
        cosine_to_prediction,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Population of a ReLU neuron in a single-channel integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Plus,
    Minus,
    Shared,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationLabels {
    pub labels: Vec<Population>,
    pub l_plus: Vec<f64>,
    pub l_minus: Vec<f64>,
    pub threshold: f64,
    /// `d . L_+` and `d . L_-` when a decoder is supplied.
    pub decoder_plus: Option<f64>,
    pub decoder_minus: Option<f64>,
    /// Share of `sum_i |d_i| <h_i>` carried by shared neurons.
    pub shared_output_share: f64,
}

impl PopulationLabels {
    pub fn count(&self, p: Population) -> usize {
        self.labels.iter().filter(|&&l| l == p).count()
    }

    pub fn fraction(&self, p: Population) -> f64 {
        self.count(p) as f64 / self.labels.len() as f64
    }

    pub fn shared_null_fraction(&self) -> f64 {
        self.fraction(Population::Shared) + self.fraction(Population::Null)
    }
}

/// Relative population threshold: `1e-3 * max(L_+, L_-)`.
pub const DEFAULT_POPULATION_THRESHOLD: f64 = 1e-3;

/// Nonnegative fit `h_t = R(y_t) L_+ + R(-y_t) L_-` per neuron and labels.
///
/// `threshold_rel` is relative to the largest fitted coefficient.
pub fn classify_populations(samples: &Samples, d: Option<&[f64]>, threshold_rel: f64) -> Result<PopulationLabels> {
    if samples.channels() != 1 {
        return Err(invalid("analysis.populations", format!("needs one channel, got {}", samples.channels())));
    }
    let y = samples.target_column(0);
    let pos: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
    let neg: Vec<f64> = y.iter().map(|v| (-v).max(0.0)).collect();
    let (pp, nn) = (dot(&pos, &pos), dot(&neg, &neg));
    if pp == 0.0 || nn == 0.0 {
        return Err(Error::Degenerate {
            analysis: "classify_populations",
            reason: "targets do not cover both signs".into(),
        });
    }
    let n = samples.n();
    let mut lp = vec![0.0; n];
    let mut lm = vec![0.0; n];
    let mut mean_h = vec![0.0; n];
    for t in 0..samples.len() {
        let row = samples.states.row(t);
        for i in 0..n {
            lp[i] += row[i] * pos[t];
            lm[i] += row[i] * neg[t];
            mean_h[i] += row[i];
        }
    }
    // The two regressors have disjoint support, so the nonnegative least
    // squares problem separates into two clipped scalar fits.
    for i in 0..n {
        lp[i] = (lp[i] / pp).max(0.0);
        lm[i] = (lm[i] / nn).max(0.0);
    }
    let scale = lp.iter().chain(&lm).copied().fold(0.0, f64::max);
    let threshold = threshold_rel * scale;
    let labels: Vec<Population> = (0..n)
        .map(|i| match (lp[i] > threshold, lm[i] > threshold) {
            (true, true) => Population::Shared,
            (true, false) => Population::Plus,
            (false, true) => Population::Minus,
            (false, false) => Population::Null,
        })
        .collect();
    let (mut shared, mut total) = (0.0, 0.0);
    if let Some(d) = d {
        if d.len() != n {
            return Err(shape("classify_populations", format!("decoder of length {n}"), d.len()));
        }
        for i in 0..n {
            let c = d[i].abs() * mean_h[i];
            total += c;
            if labels[i] == Population::Shared {
                shared += c;
            }
        }
    }
    Ok(PopulationLabels {
        decoder_plus: d.map(|d| dot(d, &lp)),
        decoder_minus: d.map(|d| dot(d, &lm)),
        shared_output_share: if total > 0.0 { shared / total } else { 0.0 },
        labels,
        l_plus: lp,
        l_minus: lm,
        threshold,
    })
}

/// Residuals of `W L_+ = -W L_- = W e / s` and `d . R(+-We) = +-s gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionResiduals {
    /// `|W L_+ + W L_-|`.
    pub balance: f64,
    /// `|s W L_+ - W e|`.
    pub scale: f64,
    /// `|d . R(We) - s gamma|`.
    pub decoder_plus: f64,
    /// `|d . R(-We) + s gamma|`.
    pub decoder_minus: f64,
    /// The same four residuals divided by `|We|/s`, `|We|`, `s gamma`,
    /// `s gamma`; left unnormalised when the divisor vanishes.
    pub normalized: [f64; 4],
}

impl ConditionResiduals {
    pub fn max_normalized(&self) -> f64 {
        self.normalized.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates the ReLU integrator conditions. Without explicit `L_+-` the
/// vectors `R(+-We)/(s gamma)` are used.
pub fn current_conditions_residuals(
    w: &Matrix,
    e: &[f64],
    d: &[f64],
    s: f64,
    gamma: f64,
    populations: Option<(&[f64], &[f64])>,
) -> Result<ConditionResiduals> {
    let n = w.rows();
    if !w.is_square() || e.len() != n || d.len() != n {
        return Err(shape("current_conditions_residuals", format!("{n}x{n} W and vectors"), format!("{} / {}", e.len(), d.len())));
    }
    let we = w.matvec(e);
    let sg = s * gamma;
    let plus: Vec<f64> = we.iter().map(|v| v.max(0.0)).collect();
    let minus: Vec<f64> = we.iter().map(|v| (-v).max(0.0)).collect();
    let (lp, lm) = match populations {
        Some((a, b)) => {
            if a.len() != n || b.len() != n {
                return Err(shape("current_conditions_residuals", format!("L of length {n}"), a.len()));
            }
            (a.to_vec(), b.to_vec())
        }
        None => (plus.iter().map(|v| v / sg).collect(), minus.iter().map(|v| v / sg).collect()),
    };
    let wlp = w.matvec(&lp);
    let wlm = w.matvec(&lm);
    let balance = norm(&wlp.iter().zip(&wlm).map(|(a, b)| a + b).collect::<Vec<_>>());
    let scale = norm(&wlp.iter().zip(&we).map(|(a, b)| s * a - b).collect::<Vec<_>>());
    let decoder_plus = (dot(d, &plus) - sg).abs();
    let decoder_minus = (dot(d, &minus) + sg).abs();
    let nwe = norm(&we);
    let div = |x: f64, by: f64| if by > 0.0 { x / by } else { x };
    Ok(ConditionResiduals {
        balance,
        scale,
        decoder_plus,
        decoder_minus,
        normalized: [div(balance, nwe / s), div(scale, nwe), div(decoder_plus, sg), div(decoder_minus, sg)],
    })
}

/// Out-of-subspace to in-subspace current ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub r: f64,
    /// `sqrt(n/D - 1)`, the value for isotropic currents.
    pub r_null: f64,
    pub d_used: usize,
    pub samples: usize,
    /// Leading `D` left singular vectors of `W`.
    pub basis: Vec<Vec<f64>>,
}

/// `r = <|nu_perp|> / <|nu_par|>` with respect to the top-`D` left
/// singular subspace of `W`.
pub fn manifold_ratio(samples: &Samples, w: &Matrix, d_used: usize) -> Result<ManifoldReport> {
    let n = samples.n();
    if d_used == 0 || d_used >= n {
        return Err(invalid("analysis.manifold_ratio.D", format!("need 1 <= D < n, got {d_used}")));
    }
    if w.rows() != n {
        return Err(shape("manifold_ratio", format!("{n}x{n} W"), format!("{}x{}", w.rows(), w.cols())));
    }
    let basis: Vec<Vec<f64>> = leading_triplets(w, d_used, 0)?.into_iter().map(|t| t.left).collect();
    let q = Matrix::from_columns(&basis);
    let mut coef = Matrix::zeros(samples.len(), d_used);
    gemm(1.0, &samples.currents, false, &q, false, 0.0, &mut coef);
    let (mut perp, mut par) = (0.0, 0.0);
    let mut any = false;
    for t in 0..samples.len() {
        let total: f64 = samples.currents.row(t).iter().map(|x| x * x).sum();
        let p2: f64 = coef.row(t).iter().map(|x| x * x).sum();
        any |= total > 0.0;
        par += p2.sqrt();
        perp += (total - p2).max(0.0).sqrt();
    }
    if !any {
        return Err(Error::Degenerate {
            analysis: "manifold_ratio",
            reason: "all currents are zero".into(),
        });
    }
    Ok(ManifoldReport {
        r: perp / par,
        r_null: (n as f64 / d_used as f64 - 1.0).sqrt(),
        d_used,
        samples: samples.len(),
        basis,
    })
}

/// Linear map from integrals to current coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RMatrixFit {
    /// `D x D`.
    pub r: Matrix,
    /// RMS error over RMS coordinate.
    pub residual: f64,
}

/// Projects currents on `basis` (least squares) and regresses the
/// coordinates on the targets: `alpha_t = R y_t`.
pub fn fit_r_matrix(samples: &Samples, basis: &[Vec<f64>]) -> Result<RMatrixFit> {
    let dch = samples.channels();
    if basis.len() != dch {
        return Err(shape("fit_r_matrix", format!("{dch} basis vectors"), basis.len()));
    }
    let n = samples.n();
    if basis.iter().any(|b| b.len() != n) {
        return Err(shape("fit_r_matrix", format!("basis vectors of length {n}"), "other"));
    }
    let q = Matrix::from_columns(basis);
    let gram = Matrix::from_fn(dch, dch, |a, b| dot(&basis[a], &basis[b]));
    let mut proj = Matrix::zeros(samples.len(), dch);
    gemm(1.0, &samples.currents, false, &q, false, 0.0, &mut proj);
    // alpha_t = G^{-1} B^T nu_t
    let ginv = invert(&gram)?;
    let mut alpha = Matrix::zeros(samples.len(), dch);
    gemm(1.0, &proj, false, &ginv, true, 0.0, &mut alpha);
    let yty = Matrix::from_fn(dch, dch, |a, b| (0..samples.len()).map(|t| samples.targets[(t, a)] * samples.targets[(t, b)]).sum());
    let aty = Matrix::from_fn(dch, dch, |a, b| (0..samples.len()).map(|t| alpha[(t, a)] * samples.targets[(t, b)]).sum());
    let cond_ok = {
        let s = svd(&yty)?;
        s.singular_values[dch - 1] > 1e-12 * s.singular_values[0]
    };
    if !cond_ok {
        return Err(Error::Degenerate {
            analysis: "fit_r_matrix",
            reason: "target covariance is rank deficient".into(),
        });
    }
    let r = aty.matmul(&invert(&yty)?);
    let (mut err, mut tot) = (0.0, 0.0);
    for t in 0..samples.len() {
        let pred = r.matvec(samples.targets.row(t));
        for c in 0..dch {
            err += (alpha[(t, c)] - pred[c]).powi(2);
            tot += alpha[(t, c)].powi(2);
        }
    }
    if tot == 0.0 {
        return Err(Error::Degenerate {
            analysis: "fit_r_matrix",
            reason: "currents have no component in the basis".into(),
        });
    }
    Ok(RMatrixFit {
        r,
        residual: (err / tot).sqrt(),
    })
}

fn invert(m: &Matrix) -> Result<Matrix> {
    let k = m.rows();
    let mut out = Matrix::zeros(k, k);
    for c in 0..k {
        let mut unit = vec![0.0; k];
        unit[c] = 1.0;
        out.set_column(c, &solve(m, &unit)?);
    }
    Ok(out)
}

/// Number of angle bins.
pub const SELECTIVITY_BINS: usize = 16;
/// Significance level of the uniformity test.
pub const UNIFORMITY_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityReport {
    /// Fitted direction per active neuron (`None` for silent neurons).
    pub directions: Vec<Option<Vec<f64>>>,
    /// Angles in `[0, 2 pi)` of the active neurons, for `D = 2`.
    pub angles: Vec<f64>,
    pub fit_r2: Vec<f64>,
    pub silent: usize,
    /// Bin `k` is centred on `2 pi k / bins`.
    pub histogram: Vec<usize>,
    pub chi2: f64,
    pub p_value: f64,
    /// Fraction of angles in the bins centred on multiples of `pi/2`.
    pub axis_mass: f64,
}

impl SelectivityReport {
    pub fn uniform(&self) -> bool {
        self.p_value >= UNIFORMITY_ALPHA
    }

    /// `axis_mass` relative to its value under a uniform distribution.
    pub fn axis_enrichment(&self) -> f64 {
        self.axis_mass / (4.0 / self.histogram.len() as f64)
    }

    /// Rows `bin_left,bin_right,count`.
    pub fn histogram_csv(&self) -> String {
        let k = self.histogram.len();
        let w = std::f64::consts::TAU / k as f64;
        let mut out = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.histogram.iter().enumerate() {
            out.push_str(&format!("{:.12},{:.12},{}\n", (i as f64 - 0.5) * w, (i as f64 + 0.5) * w, c));
        }
        out
    }
}

/// Per-neuron preferred direction in integral space.
///
/// ReLU: zero-intercept least squares of `h_i` on the targets over the
/// steps where the neuron is active. Other activations: least squares of
/// the current on the targets plus an intercept, whose coefficient vector is
/// normal to the activity level sets.
pub fn selectivity_analysis(samples: &Samples, activation: Activation) -> Result<SelectivityReport> {
    let dch = samples.channels();
    let n = samples.n();
    let mut directions = Vec::with_capacity(n);
    let mut fit_r2 = Vec::with_capacity(n);
    let mut angles = Vec::new();
    let mut silent = 0;
    for i in 0..n {
        let h = samples.states.column(i);
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / h.len() as f64;
        if var < 1e-12 {
            silent += 1;
            directions.push(None);
            continue;
        }
        let (dir, r2) = match activation {
            Activation::Relu => fit_relu_direction(samples, &h)?,
            _ => fit_current_direction(samples, i)?,
        };
        if dch == 2 {
            angles.push(dir[1].atan2(dir[0]).rem_euclid(std::f64::consts::TAU));
        }
        directions.push(Some(dir));
        fit_r2.push(r2);
    }
    let histogram = angle_histogram(&angles, SELECTIVITY_BINS);
    let (chi2, p_value) = uniformity_test(&histogram);
    let axis_mass = if angles.is_empty() {
        0.0
    } else {
        let step = SELECTIVITY_BINS / 4;
        (0..4).map(|k| histogram[k * step]).sum::<usize>() as f64 / angles.len() as f64
    };
    Ok(SelectivityReport {
        directions,
        angles,
        fit_r2,
        silent,
        histogram,
        chi2,
        p_value,
        axis_mass,
    })
}

fn fit_relu_direction(samples: &Samples, h: &[f64]) -> Result<(Vec<f64>, f64)> {
    let dch = samples.channels();
    let mut xtx = Matrix::zeros(dch, dch);
    let mut xty = vec![0.0; dch];
    for (t, &ht) in h.iter().enumerate() {
        if ht <= 0.0 {
            continue;
        }
        let y = samples.targets.row(t);
        for a in 0..dch {
            xty[a] += y[a] * ht;
            for b in 0..dch {
                xtx[(a, b)] += y[a] * y[b];
            }
        }
    }
    let dir = solve(&xtx, &xty).map_err(|_| Error::Degenerate {
        analysis: "selectivity_analysis",
        reason: "active steps do not span the integral space".into(),
    })?;
    let (mut res, mut tot) = (0.0, 0.0);
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    for (t, &ht) in h.iter().enumerate() {
        let pred = dot(&dir, samples.targets.row(t)).max(0.0);
        res += (ht - pred).powi(2);
        tot += (ht - mean).powi(2);
    }
    Ok((dir, 1.0 - res / tot))
}

fn fit_current_direction(samples: &Samples, i: usize) -> Result<(Vec<f64>, f64)> {
    let dch = samples.channels();
    let k = dch + 1;
    let mut xtx = Matrix::zeros(k, k);
    let mut xty = vec![0.0; k];
    let nu = samples.currents.column(i);
    for (t, &v) in nu.iter().enumerate() {
        let y = samples.targets.row(t);
        let x: Vec<f64> = y.iter().copied().chain(std::iter::once(1.0)).collect();
        for a in 0..k {
            xty[a] += x[a] * v;
            for b in 0..k {
                xtx[(a, b)] += x[a] * x[b];
            }
        }
    }
    let coef = solve(&xtx, &xty)?;
    let mean = nu.iter().sum::<f64>() / nu.len() as f64;
    let (mut res, mut tot) = (0.0, 0.0);
    for (t, &v) in nu.iter().enumerate() {
        let pred = dot(&coef[..dch], samples.targets.row(t)) + coef[dch];
        res += (v - pred).powi(2);
        tot += (v - mean).powi(2);
    }
    let r2 = if tot > 0.0 { 1.0 - res / tot } else { 1.0 };
    Ok((coef[..dch].to_vec(), r2))
}

/// Histogram of angles with bin `k` centred on `2 pi k / bins`.
pub fn angle_histogram(angles: &[f64], bins: usize) -> Vec<usize> {
    let w = std::f64::consts::TAU / bins as f64;
    let mut h = vec![0; bins];
    for &a in angles {
        let k = ((a / w + 0.5).floor() as isize).rem_euclid(bins as isize) as usize;
        h[k] += 1;
    }
    h
}

/// Pearson chi-squared statistic against the uniform distribution and its
/// p-value with `bins - 1` degrees of freedom.
pub fn uniformity_test(histogram: &[usize]) -> (f64, f64) {
    let total: usize = histogram.iter().sum();
    let k = histogram.len();
    if total == 0 || k < 2 {
        return (0.0, 1.0);
    }
    let expected = total as f64 / k as f64;
    let chi2: f64 = histogram.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("positive degrees of freedom");
    (chi2, 1.0 - dist.cdf(chi2))
}

/// Rank-one ReLU integrator compared with its norm bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rank1Report {
    pub sigma: f64,
    pub second_sigma: f64,
    /// `2 gamma max(s, 1)`.
    pub sigma_bound: f64,
    /// `r . e` with the sign convention `r . e >= 0`.
    pub r_dot_e: f64,
    /// `min(s, 1)`.
    pub r_dot_e_prediction: f64,
    pub cos_l_d: f64,
    /// Fraction of positive components of `l`.
    pub positive_fraction: f64,
}

impl Rank1Report {
    pub fn sigma_rel_dev(&self) -> f64 {
        (self.sigma - self.sigma_bound).abs() / self.sigma_bound
    }

    pub fn r_dot_e_rel_dev(&self) -> f64 {
        (self.r_dot_e - self.r_dot_e_prediction).abs() / self.r_dot_e_prediction
    }
}

pub fn rank1_relu_predictions(w: &Matrix, e: &[f64], d: &[f64], s: f64, gamma: f64) -> Result<Rank1Report> {
    let n = w.rows();
    if e.len() != n || d.len() != n {
        return Err(shape("rank1_relu_predictions", format!("vectors of length {n}"), e.len()));
    }
    let top = leading_triplets(w, 2, 0)?;
    let t = &top[0];
    let sign = if dot(&t.right, e) < 0.0 { -1.0 } else { 1.0 };
    let l: Vec<f64> = t.left.iter().map(|x| sign * x).collect();
    let r: Vec<f64> = t.right.iter().map(|x| sign * x).collect();
    Ok(Rank1Report {
        sigma: t.sigma,
        second_sigma: top.get(1).map_or(0.0, |t| t.sigma),
        sigma_bound: 2.0 * gamma * s.max(1.0),
        r_dot_e: dot(&r, e),
        r_dot_e_prediction: s.min(1.0),
        cos_l_d: cosine(&l, d),
        positive_fraction: l.iter().filter(|&&x| x > 0.0).count() as f64 / n as f64,
    })
}

/// Sign structure of the leading mode of a sign-constrained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaleModeReport {
    /// Leading `D + 1` singular values.
    pub singular_values: Vec<f64>,
    pub l0_min: f64,
    pub l0_nonnegative: bool,
    /// Fraction of columns where `sign(r0_j)` equals the mask sign.
    pub r0_sign_agreement: f64,
    /// `|d_c . l0|` per channel.
    pub decoder_overlaps: Vec<f64>,
    pub tolerance: f64,
}

/// Leading triplet of `W` with the sign fixed by `sum(l0) >= 0`.
pub fn dale_mode_analysis(w: &Matrix, decoders: &Matrix, mask: &DaleMask, tol: f64) -> Result<DaleModeReport> {
    let n = w.rows();
    if mask.signs.len() != n || decoders.cols() != n {
        return Err(shape("dale_mode_analysis", format!("mask and decoders of length {n}"), mask.signs.len()));
    }
    let dch = decoders.rows();
    let top = leading_triplets(w, dch + 1, 0)?;
    let l0 = &top[0].left;
    let r0 = &top[0].right;
    let l0_min = l0.iter().copied().fold(f64::INFINITY, f64::min);
    let agree = r0
        .iter()
        .zip(&mask.signs)
        .filter(|(r, &m)| (**r > 0.0 && m > 0) || (**r < 0.0 && m < 0))
        .count();
    Ok(DaleModeReport {
        singular_values: top.iter().map(|t| t.sigma).collect(),
        l0_min,
        l0_nonnegative: l0_min >= -tol,
        r0_sign_agreement: agree as f64 / n as f64,
        decoder_overlaps: (0..dch).map(|c| dot(decoders.row(c), l0).abs()).collect(),
        tolerance: tol,
    })
}

/// Squared Frobenius mass of `W` inside and outside the channel blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMass {
    pub on_block: f64,
    pub off_block: f64,
}

impl BlockMass {
    pub fn off_fraction(&self) -> f64 {
        let total = self.on_block + self.off_block;
        if total == 0.0 {
            0.0
        } else {
            self.off_block / total
        }
    }

    pub fn off_on_ratio(&self) -> f64 {
        self.off_block / self.on_block
    }
}

/// Entries `W_ij` with `i` and `j` in the same support count as on-block.
pub fn support_structure_analysis(w: &Matrix, supports: &[Vec<usize>]) -> Result<BlockMass> {
    let n = w.rows();
    let mut owner = vec![usize::MAX; n];
    for (c, s) in supports.iter().enumerate() {
        for &i in s {
            if i >= n {
                return Err(shape("support_structure_analysis", format!("indices below {n}"), i));
            }
            if owner[i] != usize::MAX {
                return Err(invalid("supports", format!("neuron {i} belongs to two supports")));
            }
            owner[i] = c;
        }
    }
    let (mut on, mut off) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..w.cols() {
            let v = w[(i, j)] * w[(i, j)];
            if owner[i] != usize::MAX && owner[i] == owner[j] {
                on += v;
            } else {
                off += v;
            }
        }
    }
    Ok(BlockMass {
        on_block: on,
        off_block: off,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::exact_relu_integrator;
    use crate::model::{run, sample_inputs, InputKind};
    use crate::numerics::normalize;
    use crate::training::{init_network, EncoderKind, InitKind};
    use proptest::prelude::*;

    fn unit(seed: u64, n: usize) -> Vec<f64> {
        let mut v = gaussian_vec(&mut rng::seeded(seed, 0), n, 1.0);
        normalize(&mut v);
        v
    }

    fn relu_gi(n: usize, seed: u64, s: f64, gamma: f64) -> NetworkParams {
        let p = init_network(n, 1, Activation::Relu, InitKind::Zero, EncoderKind::Gaussian, seed).unwrap();
        let w = exact_relu_integrator(p.encoder(0), p.decoder(0), s, gamma).unwrap();
        p.with_w(w).unwrap()
    }

    #[test]
    fn moments_examples() {
        let e = unit(1, 6);
        assert!(moments(&Matrix::zeros(6, 6), &e, &e, 5).unwrap().iter().all(|&m| m == 0.0));
        let w = Matrix::identity(6).scaled(0.7);
        for (q, m) in moments(&w, &e, &e, 8).unwrap().iter().enumerate() {
            assert!((m - 0.7f64.powi(q as i32 + 1)).abs() < 1e-14);
        }
        assert!(moments(&w, &e, &e, 0).is_err());
    }

    #[test]
    fn rank_one_construction_is_an_integrator() {
        let (e, d) = (unit(2, 30), unit(3, 30));
        let (s, gamma) = (1.5, 0.9);
        let w = linear_multichannel_gi(&Matrix::from_rows(&[&e]), &Matrix::from_rows(&[&d]), &[s], &[gamma]).unwrap();
        let rep = gi_check(&w, &e, &d, s, gamma, 100, 1e-9).unwrap();
        assert!(rep.verdict, "{rep:?}");
        assert!(!gi_check(&w, &e, &d, s, 0.8, 100, 1e-9).unwrap().verdict);
    }

    #[test]
    fn multichannel_construction_passes_cross_conditions() {
        let p = init_network(40, 3, Activation::Linear, InitKind::Zero, EncoderKind::Gaussian, 4).unwrap();
        let spec = TaskSpec::new(vec![0.9, 0.8, 0.95], vec![1.0, 2.0, 0.5], 10, InputKind::default()).unwrap();
        let w = linear_multichannel_gi(p.encoders(), p.decoders(), &spec.scales, &spec.gammas).unwrap();
        let p = p.with_w(w).unwrap();
        let rep = gi_check_network(&p, &spec, 100, 1e-9).unwrap();
        assert!(rep.verdict, "{rep:?}");
        assert_eq!(rep.channel_residuals.len(), 3);
        // The integrator property translates into exact outputs.
        let xs = sample_inputs(&spec, 5, 10).unwrap();
        let err = crate::losses::mean_step_error(&p, &spec, &xs).unwrap();
        assert!(err < 1e-20);
    }

    #[test]
    fn spectrum_examples() {
        let (a, b, c) = (unit(5, 20), unit(6, 20), unit(7, 20));
        let mut w = Matrix::outer(&a, &b);
        w.add_outer(2.0, &c, &a);
        let sum = spectrum_summary(&w, 2, DEFAULT_GAP_FACTOR).unwrap();
        assert_eq!(sum.outlier_count, 2);
        assert!(sum.bulk_max < 1e-10);
        assert_eq!(sum.top.len(), 3);
        assert!(spectrum_summary(&w, 20, 5.0).is_err());
    }

    #[test]
    fn leading_triplets_match_full_svd() {
        let mut r = rng::seeded(8, 0);
        let m = Matrix::from_vec(30, 30, gaussian_vec(&mut r, 900, 1.0)).unwrap();
        let mut w = m.scaled(0.01);
        w.add_outer(5.0, &unit(9, 30), &unit(10, 30));
        w.add_outer(3.0, &unit(11, 30), &unit(12, 30));
        let full = svd(&w).unwrap();
        let top = leading_triplets(&w, 2, 1).unwrap();
        for j in 0..2 {
            assert!((top[j].sigma - full.singular_values[j]).abs() < 1e-10);
            assert!((dot(&top[j].left, &full.left(j)).abs() - 1.0).abs() < 1e-9);
            assert!(top[j].left.iter().sum::<f64>() >= 0.0);
        }
    }

    #[test]
    fn linearity_fit_recovers_synthetic_slopes() {
        let n = 12;
        let l0 = gaussian_vec(&mut rng::seeded(13, 0), n, 1.0);
        let y: Vec<f64> = (0..200).map(|t| ((t as f64) * 0.37).sin() * 3.0).collect();
        let samples = synthetic_samples(&l0, &y, Activation::Relu);
        let fit = current_linearity_fit(&samples, Some(&l0)).unwrap();
        for i in 0..n {
            assert!((fit.l[i] - l0[i]).abs() < 1e-12);
            assert!((fit.r2[i] - 1.0).abs() < 1e-12);
        }
        assert!((fit.cosine_to_prediction.unwrap() - 1.0).abs() < 1e-12);
        let zero = synthetic_samples(&l0, &vec![0.0; 10], Activation::Relu);
        assert!(current_linearity_fit(&zero, None).is_err());
    }

    fn synthetic_samples(l: &[f64], y: &[f64], act: Activation) -> Samples {
        let n = l.len();
        let currents = Matrix::from_fn(y.len(), n, |t, i| l[i] * y[t]);
        let states = Matrix::from_fn(y.len(), n, |t, i| act.eval(currents[(t, i)]));
        let targets = Matrix::from_fn(y.len(), 1, |t, _| y[t]);
        Samples {
            outputs: targets.clone(),
            currents,
            states,
            targets,
        }
    }

    #[test]
    fn populations_recovered_from_bipopulation_data() {
        let n = 40;
        let mut l = gaussian_vec(&mut rng::seeded(14, 0), n, 1.0);
        l[3] = 0.0;
        l[17] = 0.0;
        let y: Vec<f64> = (0..300).map(|t| ((t as f64) * 0.21).sin() * 2.0 + 0.1).collect();
        let samples = synthetic_samples(&l, &y, Activation::Relu);
        let labels = classify_populations(&samples, None, DEFAULT_POPULATION_THRESHOLD).unwrap();
        for i in 0..n {
            let want = if l[i] > 0.0 {
                Population::Plus
            } else if l[i] < 0.0 {
                Population::Minus
            } else {
                Population::Null
            };
            assert_eq!(labels.labels[i], want, "neuron {i}");
            assert!((labels.l_plus[i] - l[i].max(0.0)).abs() < 1e-12);
            assert!((labels.l_minus[i] - (-l[i]).max(0.0)).abs() < 1e-12);
        }
        assert_eq!(labels.count(Population::Null), 2);
        assert_eq!(labels.count(Population::Shared), 0);
        let positive: Vec<f64> = y.iter().map(|v| v.abs()).collect();
        assert!(classify_populations(&synthetic_samples(&l, &positive, Activation::Relu), None, 1e-3).is_err());
    }

    #[test]
    fn exact_relu_integrator_has_zero_condition_residuals() {
        let p = relu_gi(60, 15, 2.0, 0.9);
        let res = current_conditions_residuals(p.w(), p.encoder(0), p.decoder(0), 2.0, 0.9, None).unwrap();
        assert!(res.max_normalized() < 1e-9, "{res:?}");
        let zero = current_conditions_residuals(&Matrix::zeros(60, 60), p.encoder(0), p.decoder(0), 2.0, 0.9, None).unwrap();
        assert!((zero.decoder_plus - 1.8).abs() < 1e-15);
        assert!((zero.decoder_minus - 1.8).abs() < 1e-15);
    }

    #[test]
    fn trained_style_relu_gi_has_linear_currents_and_clean_populations() {
        let (s, gamma) = (2.0, 0.9);
        let p = relu_gi(80, 16, s, gamma);
        let spec = TaskSpec::single(gamma, s, 50).unwrap();
        let samples = Samples::collect(&p, &spec, 20, 1).unwrap();
        let we: Vec<f64> = p.w().matvec(p.encoder(0)).iter().map(|v| v / (s * gamma)).collect();
        let fit = current_linearity_fit(&samples, Some(&we)).unwrap();
        assert!(fit.median_r2 > 0.999999);
        assert!(fit.cosine_to_prediction.unwrap() > 0.999999);
        let labels = classify_populations(&samples, Some(p.decoder(0)), DEFAULT_POPULATION_THRESHOLD).unwrap();
        assert_eq!(labels.count(Population::Shared), 0);
        assert!((labels.decoder_plus.unwrap() - 1.0).abs() < 1e-9);
        assert!((labels.decoder_minus.unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn samples_agree_with_single_runs() {
        let p = relu_gi(20, 17, 1.0, 0.8);
        let spec = TaskSpec::single(0.8, 1.0, 7).unwrap();
        let xs = sample_inputs(&spec, 3, 4).unwrap();
        let trajs: Vec<Trajectory> = xs.iter().map(|x| run(&p, &spec, x).unwrap()).collect();
        let a = Samples::from_trajectories(&trajs).unwrap();
        let b = Samples::simulate(&p, &spec, &xs).unwrap();
        assert!(a.currents.sub(&b.currents).max_abs() < 1e-12);
        assert!(a.targets.sub(&b.targets).max_abs() < 1e-12);
        assert!(a.outputs.sub(&b.outputs).max_abs() < 1e-12);
    }

    #[test]
    fn manifold_ratio_examples() {
        let n = 20;
        let (a, b) = (unit(18, n), unit(19, n));
        let w = Matrix::outer(&a, &b);
        let y: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).cos()).collect();
        let samples = synthetic_samples(&a, &y, Activation::Relu);
        let rep = manifold_ratio(&samples, &w, 1).unwrap();
        // sqrt of a rounding-level difference
        assert!(rep.r < 1e-6, "{}", rep.r);
        let mut noisy = samples.clone();
        noisy.currents.axpy(0.1, &Matrix::from_fn(50, n, |t, i| ((t * 7 + i * 3) as f64).sin()));
        let r1 = manifold_ratio(&noisy, &w, 1).unwrap().r;
        noisy.currents.scale(4.0);
        assert!((manifold_ratio(&noisy, &w, 1).unwrap().r - r1).abs() < 1e-12);
        // n = 1000, D = 2 reference value.
        assert!(((1000.0f64 / 2.0 - 1.0).sqrt() - 22.338).abs() < 1e-3);
        let zero = synthetic_samples(&a, &vec![0.0; 5], Activation::Relu);
        assert!(manifold_ratio(&zero, &w, 1).is_err());
    }

    #[test]
    fn r_matrix_exact_for_linear_integrator_and_shuffle_breaks_it() {
        let p = init_network(30, 2, Activation::Linear, InitKind::Zero, EncoderKind::Gaussian, 20).unwrap();
        let spec = TaskSpec::new(vec![0.9, 0.8], vec![1.0, 1.5], 40, InputKind::default()).unwrap();
        let w = linear_multichannel_gi(p.encoders(), p.decoders(), &spec.scales, &spec.gammas).unwrap();
        let p = p.with_w(w).unwrap();
        let samples = Samples::collect(&p, &spec, 30, 2).unwrap();
        let rep = manifold_ratio(&samples, p.w(), 2).unwrap();
        let fit = fit_r_matrix(&samples, &rep.basis).unwrap();
        assert!(fit.residual < 1e-8, "{}", fit.residual);
        let shuffled = fit_r_matrix(&samples.shuffled_targets(3), &rep.basis).unwrap();
        assert!(shuffled.residual > 0.8, "{}", shuffled.residual);
        // Orthogonal change of basis leaves the residual unchanged.
        let (c, s) = (0.6, 0.8);
        let rotated: Vec<Vec<f64>> = vec![
            rep.basis[0].iter().zip(&rep.basis[1]).map(|(x, y)| c * x - s * y).collect(),
            rep.basis[0].iter().zip(&rep.basis[1]).map(|(x, y)| s * x + c * y).collect(),
        ];
        let shuffled_rot = fit_r_matrix(&samples.shuffled_targets(3), &rotated).unwrap();
        assert!((shuffled_rot.residual - shuffled.residual).abs() < 1e-10);
    }

    #[test]
    fn selectivity_angles_from_synthetic_directions() {
        let dirs = [(1.0, 0.0), (0.0, 1.0), (-1.0, 1.0), (0.3, -0.9)];
        let n = dirs.len();
        let mut r = rng::seeded(21, 0);
        let ys = gaussian_vec(&mut r, 400, 1.0);
        let targets = Matrix::from_vec(200, 2, ys).unwrap();
        let currents = Matrix::from_fn(200, n, |t, i| dirs[i].0 * targets[(t, 0)] + dirs[i].1 * targets[(t, 1)]);
        let states = Matrix::from_fn(200, n, |t, i| currents[(t, i)].max(0.0));
        let samples = Samples {
            outputs: targets.clone(),
            currents,
            states,
            targets,
        };
        let rep = selectivity_analysis(&samples, Activation::Relu).unwrap();
        assert!(rep.angles[0].abs() < 1e-12);
        assert!((rep.angles[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((rep.angles[2] - 0.75 * std::f64::consts::PI).abs() < 1e-12);
        assert!(rep.fit_r2.iter().all(|&r| r > 1.0 - 1e-12));
        // Swapping channels maps theta to pi/2 - theta.
        let swapped = Samples {
            targets: Matrix::from_fn(200, 2, |t, c| samples.targets[(t, 1 - c)]),
            ..samples.clone()
        };
        let sw = selectivity_analysis(&swapped, Activation::Relu).unwrap();
        for (a, b) in rep.angles.iter().zip(&sw.angles) {
            let expect = (std::f64::consts::FRAC_PI_2 - a).rem_euclid(std::f64::consts::TAU);
            assert!((b - expect).abs() < 1e-9);
        }
        let sig = selectivity_analysis(&samples, Activation::STEEP_SIGMOID).unwrap();
        assert!((sig.angles[3] - (-0.9f64).atan2(0.3).rem_euclid(std::f64::consts::TAU)).abs() < 1e-9);
    }

    #[test]
    fn uniformity_test_examples() {
        let flat = vec![10; 16];
        let (chi2, p) = uniformity_test(&flat);
        assert_eq!(chi2, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let mut peaked = vec![0; 16];
        peaked[0] = 160;
        assert!(uniformity_test(&peaked).1 < 1e-10);
        // Critical value of chi-squared with 15 degrees of freedom at 0.01.
        let dist = ChiSquared::new(15.0).unwrap();
        assert!((dist.inverse_cdf(0.99) - 30.578).abs() < 1e-2);
        let h = angle_histogram(&[0.0, std::f64::consts::TAU - 0.01, std::f64::consts::PI], 16);
        assert_eq!(h[0], 2);
        assert_eq!(h[8], 1);
    }

    #[test]
    fn rank1_report_on_exact_integrator() {
        let (s, gamma) = (1.0, 0.9);
        let p = relu_gi(50, 22, s, gamma);
        let rep = rank1_relu_predictions(p.w(), p.encoder(0), p.decoder(0), s, gamma).unwrap();
        assert!(rep.second_sigma < 1e-10 * rep.sigma);
        assert!(rep.r_dot_e > 0.0);
        assert!((rep.sigma_bound - 1.8).abs() < 1e-15);
    }

    #[test]
    fn dale_mode_detected_in_synthetic_matrix() {
        let n = 60;
        let mask = DaleMask::random(n, 0.25, 23).unwrap();
        let l0: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64 * 0.1).collect();
        let r0: Vec<f64> = (0..n).map(|j| f64::from(mask.signs[j]) * (1.0 + (j % 3) as f64 * 0.2)).collect();
        let mut w = Matrix::outer(&l0, &r0);
        w.axpy(1e-3, &Matrix::from_fn(n, n, |i, j| ((i * 13 + j * 7) as f64).sin()));
        let dec = Matrix::from_rows(&[&unit(24, n), &unit(25, n)]);
        let rep = dale_mode_analysis(&w, &dec, &mask, 1e-6).unwrap();
        assert!(rep.l0_nonnegative);
        assert_eq!(rep.r0_sign_agreement, 1.0);
        assert_eq!(rep.singular_values.len(), 3);
    }

    #[test]
    fn block_mass_examples() {
        let id = Matrix::identity(10);
        let supports = vec![(0..5).collect::<Vec<_>>(), (5..10).collect()];
        assert_eq!(support_structure_analysis(&id, &supports).unwrap().off_block, 0.0);
        let ones = Matrix::from_fn(10, 10, |_, _| 1.0);
        let m = support_structure_analysis(&ones, &supports).unwrap();
        assert!((m.off_fraction() - 0.5).abs() < 1e-15);
        assert!(support_structure_analysis(&id, &[vec![0, 1], vec![1]]).is_err());
    }

    proptest! {
        #[test]
        fn manifold_ratio_scale_invariant(seed in 0u64..200, k in 0.1f64..10.0) {
            let n = 12;
            let mut r = rng::seeded(seed, 0);
            let currents = Matrix::from_vec(30, n, gaussian_vec(&mut r, 30 * n, 1.0)).unwrap();
            let w = Matrix::from_vec(n, n, gaussian_vec(&mut r, n * n, 1.0)).unwrap();
            let samples = Samples {
                states: currents.clone(),
                currents,
                targets: Matrix::zeros(30, 1),
                outputs: Matrix::zeros(30, 1),
            };
            let a = manifold_ratio(&samples, &w, 2).unwrap().r;
            let mut scaled = samples.clone();
            scaled.currents.scale(k);
            let b = manifold_ratio(&scaled, &w, 2).unwrap().r;
            prop_assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }

        #[test]
        fn populations_exact_for_large_slopes(seed in 0u64..200) {
            let n = 30;
            let mut l = gaussian_vec(&mut rng::seeded(seed, 1), n, 1.0);
            for v in l.iter_mut() {
                if v.abs() < 0.05 { *v = 0.0; }
            }
            let y: Vec<f64> = (0..100).map(|t| ((t as f64) * 0.53 + seed as f64).sin()).collect();
            let samples = synthetic_samples(&l, &y, Activation::Relu);
            let labels = classify_populations(&samples, None, DEFAULT_POPULATION_THRESHOLD).unwrap();
            for i in 0..n {
                if l[i].abs() > 10.0 * labels.threshold {
                    let want = if l[i] > 0.0 { Population::Plus } else { Population::Minus };
                    prop_assert_eq!(labels.labels[i], want);
                }
            }
        }
    }
}
