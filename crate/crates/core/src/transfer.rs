//! Context-dependent classification read out from a frozen 3-channel
//! integrator.
//!
//! Channel 2 is the context cue: for `y_2 < 0` the label is the sign of
//! `y_0`, otherwise the sign of `y_1`. Only a sigmoidal readout `u` is
//! trained; the integrator is never modified.

use serde::{Deserialize, Serialize};

use crate::diagnostics::Samples;
use crate::error::{invalid, shape, Error, Result};
use crate::losses::{mean_step_error, min_norm_solution};
use crate::model::{sample_inputs_stream, Activation, NetworkParams, TaskSpec};
use crate::numerics::{dot, gemm, norm, Matrix};
use crate::rng::{self, gaussian_vec};
use crate::training::{optimizer_step, OptimizerKind, OptimizerState};

pub const CONTEXT_CHANNELS: usize = 3;
pub const DEFAULT_GAMMAS: [f64; 3] = [0.995, 0.992, 0.99];
pub const DEFAULT_DEAD_ZONE: f64 = 0.1;

/// Label of the context rule; ties resolve to 0.
pub fn context_label(y: [f64; 3]) -> u8 {
    u8::from(selected_integral(y) > 0.0)
}

/// The integral picked by the cue `y_2`.
pub fn selected_integral(y: [f64; 3]) -> f64 {
    if y[2] < 0.0 {
        y[0]
    } else {
        y[1]
    }
}

/// `out = 1 / (1 + exp(-slope (z - bias)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutLink {
    pub slope: f64,
    pub bias: f64,
}

impl Default for ReadoutLink {
    fn default() -> Self {
        Self { slope: 50.0, bias: 0.1 }
    }
}

impl ReadoutLink {
    pub fn eval(&self, z: f64) -> f64 {
        1.0 / (1.0 + (-self.slope * (z - self.bias)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutObjective {
    #[default]
    SquaredError,
    CrossEntropy,
}

/// A frozen integrator together with its task and readout link.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTask {
    integrator: NetworkParams,
    spec: TaskSpec,
    pub link: ReadoutLink,
    /// Steps with `|selected integral|` below this are excluded from the
    /// headline accuracy.
    pub dead_zone: f64,
}

impl ContextTask {
    /// Accepts the integrator only if its held-out error per step on `spec`
    /// is below `max_step_error`.
    pub fn new(integrator: NetworkParams, spec: TaskSpec, max_step_error: f64, seed: u64) -> Result<Self> {
        if integrator.channels() != CONTEXT_CHANNELS || spec.channels() != CONTEXT_CHANNELS {
            return Err(invalid("network.channels", format!("context task needs D=3, got {}", integrator.channels())));
        }
        let xs = sample_inputs_stream(&spec, seed, rng::stream::HELDOUT, 16)?;
        let err = mean_step_error(&integrator, &spec, &xs)?;
        if !(err < max_step_error) {
            return Err(invalid("transfer.integrator", format!("error per step {err:.3e} exceeds {max_step_error:.3e}")));
        }
        Ok(Self {
            integrator,
            spec,
            link: ReadoutLink::default(),
            dead_zone: DEFAULT_DEAD_ZONE,
        })
    }

    pub fn integrator(&self) -> &NetworkParams {
        &self.integrator
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }
}

/// Exact 3-channel ReLU integrator with mixed selectivity.
///
/// Neurons come in pairs `(k, k + n/2)` with currents `+-l_k . y`, so that
/// `h_k - h_{k+n/2} = l_k . y` is linear in the integrals. The directions
/// `l_k` are random, which makes the states nonlinear in `y` and lets a
/// linear readout express the context rule.
pub fn paired_relu_integrator(n: usize, spec: &TaskSpec, seed: u64) -> Result<NetworkParams> {
    let dch = spec.channels();
    if !n.is_multiple_of(2) || n < 4 * dch {
        return Err(invalid("network.n", format!("need an even n >= {}, got {n}", 4 * dch)));
    }
    let m = n / 2;
    let mut r = rng::seeded(seed, rng::stream::ENCODERS);
    // Decoders d_c = (g_c, -g_c) / (sqrt2 |g_c|).
    let g = Matrix::from_vec(m, dch, gaussian_vec(&mut r, m * dch, 1.0))?;
    let gnorm: Vec<f64> = (0..dch).map(|c| norm(&g.column(c))).collect();
    let mut decoders = Matrix::zeros(dch, n);
    for c in 0..dch {
        for k in 0..m {
            let v = g[(k, c)] / (std::f64::consts::SQRT_2 * gnorm[c]);
            decoders[(c, k)] = v;
            decoders[(c, k + m)] = -v;
        }
    }
    // L = G (G^T G)^{-1} diag(sqrt2 |g_c|) gives d_c . h = y_c.
    let mut gtg = Matrix::zeros(dch, dch);
    gemm(1.0, &g, true, &g, false, 0.0, &mut gtg);
    let mut l = Matrix::zeros(m, dch);
    for c in 0..dch {
        let mut unit = vec![0.0; dch];
        unit[c] = std::f64::consts::SQRT_2 * gnorm[c];
        let coef = crate::numerics::solve(&gtg, &unit)?;
        l.set_column(c, &g.matvec(&coef));
    }
    let mut encoders = Matrix::from_vec(dch, n, gaussian_vec(&mut r, dch * n, 1.0))?;
    for c in 0..dch {
        let len = norm(encoders.row(c));
        encoders.row_mut(c).iter_mut().for_each(|x| *x /= len);
    }
    // r_c = (a_c, -a_c) with L^T a_c = unit_c and r_c . e_c' = s_c delta.
    let mut rows: Vec<Vec<f64>> = (0..dch).map(|c| l.column(c)).collect();
    rows.extend((0..dch).map(|c| {
        let e = encoders.row(c);
        (0..m).map(|k| e[k] - e[k + m]).collect::<Vec<f64>>()
    }));
    let mut w = Matrix::zeros(n, n);
    for c in 0..dch {
        let mut rhs = vec![0.0; 2 * dch];
        rhs[c] = 1.0;
        rhs[dch + c] = spec.scales[c];
        let a = min_norm_solution(&rows, &rhs)?;
        let rc: Vec<f64> = a.iter().copied().chain(a.iter().map(|x| -x)).collect();
        let vc: Vec<f64> = (0..n).map(|i| if i < m { l[(i, c)] } else { -l[(i - m, c)] }).collect();
        w.add_outer(spec.gammas[c], &vc, &rc);
    }
    NetworkParams::new(w, encoders, decoders, Activation::Relu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutOptions {
    pub steps: usize,
    pub lr: f64,
    pub objective: ReadoutObjective,
    /// Training and held-out sequences.
    pub train_batch: usize,
    pub heldout_batch: usize,
    pub seed: u64,
    /// Train on permuted labels (chance control).
    pub shuffle_labels: bool,
}

impl Default for ReadoutOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-3,
            objective: ReadoutObjective::SquaredError,
            train_batch: 32,
            heldout_batch: 32,
            seed: 0,
            shuffle_labels: false,
        }
    }
}

/// One held-out step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub output: f64,
    pub label: u8,
    pub selected_integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRecord {
    pub u: Vec<f64>,
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    /// Held-out accuracy outside the dead zone.
    pub heldout_accuracy: f64,
    /// Held-out accuracy inside the dead zone (`None` if no step falls in it).
    pub dead_zone_accuracy: Option<f64>,
    pub heldout_accuracy_all: f64,
    pub dead_zone: f64,
    /// First held-out sequence.
    pub trace: Vec<TraceRow>,
}

impl ReadoutRecord {
    /// Rows `t,output,label,selected_integral`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("t,output,label,selected_integral\n");
        for r in &self.trace {
            out.push_str(&format!("{},{:.17e},{},{:.17e}\n", r.t, r.output, r.label, r.selected_integral));
        }
        out
    }
}

struct LabelledStates {
    states: Matrix,
    labels: Vec<f64>,
    selected: Vec<f64>,
}

fn labelled(task: &ContextTask, batch: usize, seed: u64, stream: u64) -> Result<LabelledStates> {
    let inputs = sample_inputs_stream(&task.spec, seed, stream, batch)?;
    let s = Samples::simulate(&task.integrator, &task.spec, &inputs)?;
    let (labels, selected) = (0..s.len())
        .map(|t| {
            let row = s.targets.row(t);
            let y = [row[0], row[1], row[2]];
            (f64::from(context_label(y)), selected_integral(y))
        })
        .unzip();
    Ok(LabelledStates {
        states: s.states,
        labels,
        selected,
    })
}

/// Trains `u` by full-batch Adam on the fixed training states.
pub fn train_readout(task: &ContextTask, opts: &ReadoutOptions) -> Result<ReadoutRecord> {
    if opts.steps == 0 || opts.train_batch == 0 || opts.heldout_batch == 0 {
        return Err(invalid("transfer", "steps and batches must be positive"));
    }
    let mut train = labelled(task, opts.train_batch, opts.seed, rng::stream::INPUTS)?;
    if opts.shuffle_labels {
        use rand::seq::SliceRandom;
        train.labels.shuffle(&mut rng::seeded(opts.seed, rng::stream::SHUFFLE));
    }
    let heldout = labelled(task, opts.heldout_batch, opts.seed, rng::stream::HELDOUT)?;
    let n = task.integrator.n();
    let rows = train.states.rows();
    let link = task.link;
    let mut u = Matrix::zeros(1, n);
    let mut opt = OptimizerState::new(OptimizerKind::adam(opts.lr))?;
    let mut losses = Vec::with_capacity(opts.steps);
    let mut z = Matrix::zeros(rows, 1);
    let mut coef = Matrix::zeros(rows, 1);
    let mut grad = Matrix::zeros(1, n);
    for step in 0..opts.steps {
        gemm(1.0, &train.states, false, &u, true, 0.0, &mut z);
        let mut loss = 0.0;
        for t in 0..rows {
            let out = link.eval(z[(t, 0)]);
            let lab = train.labels[t];
            let (l, dz) = match opts.objective {
                ReadoutObjective::SquaredError => ((out - lab).powi(2), 2.0 * (out - lab) * out * (1.0 - out) * link.slope),
                ReadoutObjective::CrossEntropy => {
                    let o = out.clamp(1e-15, 1.0 - 1e-15);
                    (-(lab * o.ln() + (1.0 - lab) * (1.0 - o).ln()), (out - lab) * link.slope)
                }
            };
            loss += l;
            coef[(t, 0)] = dz / rows as f64;
        }
        loss /= rows as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "readout loss",
                step: Some(step),
            });
        }
        losses.push(loss);
        gemm(1.0, &coef, true, &train.states, false, 0.0, &mut grad);
        optimizer_step(&mut opt, &mut u, &grad)?;
    }
    let u = u.into_vec();
    let train_accuracy = accuracy(&train, &u, link, |_| true);
    let dz = task.dead_zone;
    let heldout_accuracy = accuracy(&heldout, &u, link, |sel| sel.abs() >= dz);
    let inside = heldout.selected.iter().filter(|s| s.abs() < dz).count();
    let dead_zone_accuracy = (inside > 0).then(|| accuracy(&heldout, &u, link, |sel| sel.abs() < dz));
    let trace = (0..task.spec.t_len)
        .map(|t| TraceRow {
            t,
            output: link.eval(dot(&u, heldout.states.row(t))),
            label: heldout.labels[t] as u8,
            selected_integral: heldout.selected[t],
        })
        .collect();
    Ok(ReadoutRecord {
        heldout_accuracy_all: accuracy(&heldout, &u, link, |_| true),
        u,
        losses,
        train_accuracy,
        heldout_accuracy,
        dead_zone_accuracy,
        dead_zone: dz,
        trace,
    })
}

fn accuracy(data: &LabelledStates, u: &[f64], link: ReadoutLink, keep: impl Fn(f64) -> bool) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for t in 0..data.states.rows() {
        if !keep(data.selected[t]) {
            continue;
        }
        let pred = f64::from(u8::from(link.eval(dot(u, data.states.row(t))) > 0.5));
        hit += usize::from(pred == data.labels[t]);
        total += 1;
    }
    if total == 0 {
        f64::NAN
    } else {
        hit as f64 / total as f64
    }
}

/// Readout output for one state `h`.
pub fn readout_output(task: &ContextTask, u: &[f64], h: &[f64]) -> Result<f64> {
    if u.len() != task.integrator.n() || h.len() != u.len() {
        return Err(shape("readout_output", task.integrator.n(), u.len()));
    }
    Ok(task.link.eval(dot(u, h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InputKind;
    use proptest::prelude::*;

    fn spec(t_len: usize) -> TaskSpec {
        TaskSpec::new(DEFAULT_GAMMAS.to_vec(), vec![1.0; 3], t_len, InputKind::default()).unwrap()
    }

    #[test]
    fn label_examples() {
        assert_eq!(context_label([1.0, -1.0, -1.0]), 1);
        assert_eq!(context_label([1.0, -1.0, 1.0]), 0);
        assert_eq!(context_label([0.0, 0.0, 0.0]), 0);
        assert_eq!(context_label([-1.0, 1.0, 0.0]), 1);
    }

    #[test]
    fn paired_integrator_is_exact() {
        let sp = spec(50);
        let p = paired_relu_integrator(60, &sp, 1).unwrap();
        let xs = sample_inputs_stream(&sp, 2, rng::stream::HELDOUT, 4).unwrap();
        assert!(mean_step_error(&p, &sp, &xs).unwrap() < 1e-20);
        assert!(paired_relu_integrator(61, &sp, 1).is_err());
        assert!(paired_relu_integrator(10, &sp, 1).is_err());
    }

    #[test]
    fn task_rejects_non_integrators_and_wrong_channels() {
        let sp = spec(20);
        let mut p = paired_relu_integrator(40, &sp, 3).unwrap();
        let w = p.w().scaled(0.5);
        p.set_w(w).unwrap();
        assert!(ContextTask::new(p, sp.clone(), 1e-6, 0).is_err());
        let single = TaskSpec::single(0.9, 1.0, 10).unwrap();
        let p1 = crate::training::init_network(20, 1, Activation::Relu, crate::training::InitKind::Zero, crate::training::EncoderKind::Gaussian, 0).unwrap();
        assert!(ContextTask::new(p1, single, 1.0, 0).is_err());
    }

    #[test]
    fn readout_training_leaves_integrator_untouched_and_learns() {
        let sp = spec(100);
        let p = paired_relu_integrator(100, &sp, 4).unwrap();
        let task = ContextTask::new(p.clone(), sp, 1e-12, 0).unwrap();
        let opts = ReadoutOptions {
            steps: 300,
            lr: 1e-2,
            train_batch: 8,
            heldout_batch: 4,
            ..Default::default()
        };
        let rec = train_readout(&task, &opts).unwrap();
        assert_eq!(task.integrator().w().as_slice(), p.w().as_slice());
        assert!(rec.losses.last().unwrap() < &rec.losses[0]);
        assert!(rec.heldout_accuracy > 0.7, "{}", rec.heldout_accuracy);
        assert_eq!(rec.trace.len(), 100);
        assert!(rec.trace_csv().starts_with("t,output,label,selected_integral\n"));
    }

    proptest! {
        #[test]
        fn link_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let link = ReadoutLink::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(link.eval(lo) <= link.eval(hi));
        }

        #[test]
        fn label_depends_only_on_signs(y0 in -5.0f64..5.0, y1 in -5.0f64..5.0, y2 in -5.0f64..5.0, k in 0.1f64..10.0) {
            prop_assert_eq!(context_label([y0, y1, y2]), context_label([k * y0, k * y1, k * y2]));
        }
    }
}
