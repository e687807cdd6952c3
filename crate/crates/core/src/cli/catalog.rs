//! Catalogued experiments for `reproduce`.
//!
//! Each entry trains (or loads from `<out>/cache`) the networks it needs,
//! writes CSV data and a `summary.json` with metrics and pass/fail checks.
//! Desk scale uses n = 250 (500 for the three-channel spectra); `--full`
//! uses n = 1000.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    classify_populations, current_conditions_residuals, current_linearity_fit, dale_mode_analysis, fit_r_matrix, manifold_ratio,
    rank1_relu_predictions, selectivity_analysis, spectrum_summary, support_structure_analysis, Population, Samples,
    DEFAULT_GAP_FACTOR, DEFAULT_POPULATION_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::losses::{chi_white_noise, mean_step_error};
use crate::lowrank::{convergence_bound, fit_convergence, train_omega, ConvergenceKind, OmegaState, ScanGrid};
use crate::model::{sample_inputs_stream, Activation, InputKind, NetworkParams, TaskSpec};
use crate::numerics::{dot, Matrix};
use crate::rng;
use crate::training::{disjoint_supports, init_network, DaleMask, EncoderKind, InitKind, OptimizerKind};
use crate::transfer::{paired_relu_integrator, train_readout, ContextTask, ReadoutOptions, DEFAULT_GAMMAS};

use super::checkpoint::Checkpoint;
use super::config::{AnalysisConfig, ExperimentConfig, LossConfig, NetworkConfig, TrainingConfig};
use super::{checkpoint_for, csv, train_config, write_atomic, write_json, Provenance};

pub const DEFAULT_SEED: u64 = 1;

pub const CATALOG: [(&str, &str); 14] = [
    ("fig2_populations", "ReLU D=1 population labels, proxy and batch training"),
    ("fig3_currents", "ReLU D=1 currents proportional to the integral"),
    ("fig4_patterns", "ReLU D=2 activity directions in integral space"),
    ("fig5_spectra", "ReLU D=3 batch training, singular value outliers"),
    ("fig6_sigmoid", "sigmoid D=1 proxy training, burst test sequences"),
    ("fig8_rmap", "ReLU D=2 linear map from integrals to current coordinates"),
    ("fig9_selectivity", "ReLU and sigmoid D=2 selectivity angle histograms"),
    ("fig10_dale", "sign-constrained D=2 training, extra positive mode"),
    ("fig11_algebraic", "power-law convergence at s = d.e in the reduced dynamics"),
    ("fig12_condition", "condition number bound along rank-1 manifolds versus s"),
    ("fig13_rank1", "ReLU rank-1 singular value and r.e versus s"),
    ("table1_ratios", "out-of-manifold current ratios"),
    ("fig15_transfer", "context-dependent readout on a frozen D=3 integrator"),
    ("support_blocks", "block structure of W with disjoint channel supports"),
];

/// One pass/fail bar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bar: String,
    pub pass: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, bar: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bar: format!("< {bar}"),
            pass: value < bar,
        }
    }

    pub fn above(name: &str, value: f64, bar: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bar: format!("> {bar}"),
            pass: value > bar,
        }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bar: format!("in [{lo}, {hi}]"),
            pass: (lo..=hi).contains(&value),
        }
    }

    pub fn equals(name: &str, value: f64, want: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bar: format!("= {want}"),
            pass: value == want,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub full: bool,
    pub seed: u64,
    pub config_hashes: Vec<String>,
    pub metrics: Map<String, Value>,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

/// Desk- or paper-scale recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub full: bool,
}

impl Scale {
    pub fn n(self) -> usize {
        if self.full {
            1000
        } else {
            250
        }
    }
}

fn config(
    id: &str,
    seed: u64,
    network: NetworkConfig,
    task: TaskSpec,
    loss: LossConfig,
    optimizer: OptimizerKind,
    steps: usize,
    stop_loss: Option<f64>,
) -> ExperimentConfig {
    ExperimentConfig {
        experiment: id.into(),
        seed,
        network,
        task,
        training: TrainingConfig {
            loss,
            optimizer,
            steps,
            stop_loss,
            dale_fraction: None,
        },
        analysis: AnalysisConfig::default(),
        output: None,
    }
}

fn net(n: usize, channels: usize, activation: Activation, init: InitKind, encoders: EncoderKind) -> NetworkConfig {
    NetworkConfig {
        n,
        channels,
        activation,
        init,
        encoders,
    }
}

/// ReLU D=1 on the two-point proxy; `T = 200` white-noise test task.
pub fn relu_proxy_single(n: usize, s: f64, gamma: f64, seed: u64) -> Result<ExperimentConfig> {
    Ok(config(
        "relu_proxy_single",
        seed,
        net(n, 1, Activation::Relu, InitKind::Zero, EncoderKind::Gaussian),
        TaskSpec::single(gamma, s, 200)?,
        LossConfig::ProxyRelu,
        OptimizerKind::Gd {
            lr: 0.2 / s.max(1.0).powi(2),
        },
        20_000,
        Some(1e-20),
    ))
}

/// ReLU batch training, `gamma = 0.8`, `s = 1`, `T = 10`.
pub fn relu_batch(n: usize, channels: usize, seed: u64) -> Result<ExperimentConfig> {
    Ok(config(
        "relu_batch",
        seed,
        net(n, channels, Activation::Relu, InitKind::Gaussian { gain: 0.01 }, EncoderKind::Gaussian),
        TaskSpec::new(vec![0.8; channels], vec![1.0; channels], 10, InputKind::default())?,
        LossConfig::Batch { batch: 16 },
        OptimizerKind::Gd { lr: 1e-3 },
        2000,
        None,
    ))
}

/// D=2 on the sampled proxy. ReLU: `gamma = 0.9`, `Z = [-1, 1]^2`;
/// sigmoid: `gamma = (0.8, 0.75)`, `Z = [-5, 5]^2`.
pub fn proxy_two(n: usize, activation: Activation, encoders: EncoderKind, seed: u64) -> Result<ExperimentConfig> {
    let relu = activation == Activation::Relu;
    let (gammas, z, optimizer, input) = if relu {
        (vec![0.9, 0.9], 1.0, OptimizerKind::Gd { lr: 0.2 }, InputKind::default())
    } else {
        (vec![0.8, 0.75], 5.0, OptimizerKind::adam(1e-3), InputKind::GaussianWhite { std: 0.5 })
    };
    Ok(config(
        "proxy_two",
        seed,
        net(n, 2, activation, InitKind::Zero, encoders),
        TaskSpec::new(gammas, vec![1.0; 2], 50, input)?,
        LossConfig::Proxy {
            z_max: vec![z; 2],
            points: Some(21),
            monte_carlo: false,
        },
        optimizer,
        3000,
        Some(1e-16),
    ))
}

/// Sigmoid D=1, `gamma = 0.8`, `s = 1`, `Z = [-5, 5]`; burst test task.
pub fn sigmoid_single(n: usize, seed: u64) -> Result<ExperimentConfig> {
    Ok(config(
        "sigmoid_single",
        seed,
        net(n, 1, Activation::STEEP_SIGMOID, InitKind::Zero, EncoderKind::Gaussian),
        TaskSpec::new(vec![0.8], vec![1.0], 400, burst_input())?,
        LossConfig::Proxy {
            z_max: vec![5.0],
            points: Some(SIGMOID_GRID_POINTS),
            monte_carlo: false,
        },
        OptimizerKind::adam(SIGMOID_LR),
        SIGMOID_STEPS,
        Some(1e-16),
    ))
}

pub const SIGMOID_GRID_POINTS: usize = 51;
pub const SIGMOID_LR: f64 = 3e-4;
pub const SIGMOID_STEPS: usize = 10_000;

/// Bursts of ten `+-1` inputs separated by twenty silent steps; the
/// integral stays within `|y| < 4`.
pub fn burst_input() -> InputKind {
    InputKind::Burst {
        period: 20,
        magnitude: 1.0,
        width: 10,
    }
}

/// ReLU D=2 batch training with 25% inhibitory neurons.
pub fn dale_two(n: usize, seed: u64) -> Result<ExperimentConfig> {
    let mut cfg = relu_batch(n, 2, seed)?;
    cfg.experiment = "dale_two".into();
    cfg.training.steps = 6000;
    cfg.training.dale_fraction = Some(0.25);
    Ok(cfg)
}

struct Trained {
    params: NetworkParams,
    task: TaskSpec,
    dale: Option<DaleMask>,
}

struct Ctx {
    id: String,
    out: PathBuf,
    seed: u64,
    scale: Scale,
    hashes: Vec<String>,
    metrics: Map<String, Value>,
    checks: Vec<Check>,
}

impl Ctx {
    fn prov(&self) -> Provenance {
        let joined = self.hashes.join(",");
        Provenance {
            config_hash: if self.hashes.len() == 1 {
                self.hashes[0].clone()
            } else {
                hex::encode(Sha256::digest(joined.as_bytes()))
            },
            seed: self.seed,
        }
    }

    /// Loads `<out>/cache/<hash>.json` or trains and stores it.
    fn trained(&mut self, cfg: &ExperimentConfig) -> Result<Trained> {
        let hash = cfg.hash();
        self.hashes.push(hash.clone());
        let path = self.out.join("cache").join(format!("{hash}.json"));
        let ck = match Checkpoint::load(&path) {
            Ok(ck) => ck,
            Err(_) => {
                let (p, rec) = train_config(cfg)?;
                if rec.diverged() {
                    return Err(Error::Divergence {
                        step: rec.steps(),
                        norm: f64::INFINITY,
                    });
                }
                let ck = checkpoint_for(cfg, &p, &rec)?;
                ck.save(&path)?;
                ck
            }
        };
        Ok(Trained {
            params: ck.params()?,
            task: ck.task.clone(),
            dale: ck.training.and_then(|t| t.dale),
        })
    }

    fn csv(&self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        write_atomic(&self.out.join(name), csv(&self.prov(), header, rows).as_bytes())
    }

    fn metric(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.metrics.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn finish(self) -> Result<Summary> {
        let prov = self.prov();
        let summary = Summary {
            all_pass: self.checks.iter().all(|c| c.pass),
            experiment: self.id,
            full: self.scale.full,
            seed: self.seed,
            config_hashes: self.hashes,
            metrics: self.metrics,
            checks: self.checks,
        };
        let mut v = serde_json::to_value(&summary)?;
        v["config_hash"] = json!(prov.config_hash);
        write_json(&self.out.join("summary.json"), &v)?;
        Ok(summary)
    }
}

/// Runs catalog entry `id` into `out`.
pub fn reproduce(id: &str, out: &Path, seed: u64, full: bool) -> Result<Summary> {
    let mut ctx = Ctx {
        id: id.into(),
        out: out.to_path_buf(),
        seed,
        scale: Scale { full },
        hashes: Vec::new(),
        metrics: Map::new(),
        checks: Vec::new(),
    };
    std::fs::create_dir_all(out)?;
    match id {
        "fig2_populations" => fig2(&mut ctx)?,
        "fig3_currents" => fig3(&mut ctx)?,
        "fig4_patterns" => fig4(&mut ctx)?,
        "fig5_spectra" => fig5(&mut ctx)?,
        "fig6_sigmoid" => fig6(&mut ctx)?,
        "fig8_rmap" => fig8(&mut ctx)?,
        "fig9_selectivity" => fig9(&mut ctx)?,
        "fig10_dale" => fig10(&mut ctx)?,
        "fig11_algebraic" => fig11(&mut ctx)?,
        "fig12_condition" => fig12(&mut ctx)?,
        "fig13_rank1" => fig13(&mut ctx)?,
        "table1_ratios" => table1(&mut ctx)?,
        "fig15_transfer" => fig15(&mut ctx)?,
        "support_blocks" => support_blocks(&mut ctx)?,
        _ => {
            return Err(Error::UnknownExperiment {
                id: id.into(),
                valid: CATALOG.map(|(k, _)| k).join(", "),
            })
        }
    }
    ctx.finish()
}

fn test_samples(t: &Trained, seed: u64, t_len: Option<usize>) -> Result<Samples> {
    let task = match t_len {
        Some(len) => t.task.with_len(len),
        None => t.task.clone(),
    };
    Samples::collect(&t.params, &task, 32, seed)
}

fn fig2(ctx: &mut Ctx) -> Result<()> {
    let n = ctx.scale.n();
    let runs = [
        ("proxy", relu_proxy_single(n, 2.0, 0.995, ctx.seed)?, 0.02),
        ("batch", relu_batch(n, 1, ctx.seed)?, 0.15),
    ];
    for (name, cfg, bar) in runs {
        let t = ctx.trained(&cfg)?;
        let sm = test_samples(&t, ctx.seed, Some(100))?;
        let lab = classify_populations(&sm, Some(t.params.decoder(0)), DEFAULT_POPULATION_THRESHOLD)?;
        ctx.csv(
            &format!("populations_{name}.csv"),
            "neuron,population,l_plus,l_minus",
            (0..n).map(|i| format!("{i},{:?},{:.17e},{:.17e}", lab.labels[i], lab.l_plus[i], lab.l_minus[i]).to_lowercase()),
        )?;
        ctx.metric(
            name,
            json!({
                "plus": lab.count(Population::Plus), "minus": lab.count(Population::Minus),
                "shared": lab.count(Population::Shared), "null": lab.count(Population::Null),
                "shared_output_share": lab.shared_output_share,
            }),
        )?;
        ctx.check(Check::below(&format!("{name}_shared_null_fraction"), lab.shared_null_fraction(), bar));
    }
    Ok(())
}

fn fig3(ctx: &mut Ctx) -> Result<()> {
    let (s, gamma) = (2.0, 0.995);
    let t = ctx.trained(&relu_proxy_single(ctx.scale.n(), s, gamma, ctx.seed)?)?;
    let p = &t.params;
    let sm = test_samples(&t, ctx.seed, Some(100))?;
    let pred: Vec<f64> = p.w().matvec(p.encoder(0)).iter().map(|x| x / (s * gamma)).collect();
    let fit = current_linearity_fit(&sm, Some(&pred))?;
    ctx.csv(
        "currents.csv",
        "neuron,l_fit,l_predicted,r2",
        (0..p.n()).map(|i| format!("{i},{:.17e},{:.17e},{:.17e}", fit.l[i], pred[i], fit.r2[i])),
    )?;
    ctx.csv(
        "currents_trace.csv",
        "t,y,nu0,nu1,nu2,nu3",
        (0..100).map(|k| {
            let nu = sm.currents.row(k);
            format!("{k},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", sm.targets[(k, 0)], nu[0], nu[1], nu[2], nu[3])
        }),
    )?;
    let res = current_conditions_residuals(p.w(), p.encoder(0), p.decoder(0), s, gamma, None)?;
    ctx.metric("condition_residuals", res)?;
    ctx.check(Check::above("median_r2", fit.median_r2, 0.99));
    ctx.check(Check::above("cosine_to_we", fit.cosine_to_prediction.unwrap_or(f64::NAN), 0.99));
    ctx.check(Check::below("max_normalized_condition_residual", res.max_normalized(), 1e-3));
    Ok(())
}

fn fig4(ctx: &mut Ctx) -> Result<()> {
    let t = ctx.trained(&proxy_two(ctx.scale.n(), Activation::Relu, EncoderKind::Gaussian, ctx.seed)?)?;
    let sm = test_samples(&t, ctx.seed, None)?;
    let sel = selectivity_analysis(&sm, Activation::Relu)?;
    let rows: Vec<String> = sel
        .directions
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.as_ref().map(|d| format!("{i},{:.17e},{:.17e},{:.17e}", d[0], d[1], d[1].atan2(d[0]))))
        .collect();
    ctx.csv("directions.csv", "neuron,s0,s1,angle", rows)?;
    let m = manifold_ratio(&sm, t.params.w(), 2)?;
    ctx.metric("r", m.r)?;
    ctx.metric("median_fit_r2", median(&sel.fit_r2))?;
    ctx.check(Check::above("median_direction_fit_r2", median(&sel.fit_r2), 0.99));
    ctx.check(Check::below("r", m.r, 0.1));
    Ok(())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        f64::NAN
    } else {
        s[s.len() / 2]
    }
}

fn fig5(ctx: &mut Ctx) -> Result<()> {
    let n = if ctx.scale.full { 1000 } else { 500 };
    let t = ctx.trained(&relu_batch(n, 3, ctx.seed)?)?;
    let sum = spectrum_summary(t.params.w(), 3, DEFAULT_GAP_FACTOR)?;
    ctx.csv("singular_values.csv", "index,sigma", sum.singular_values.iter().enumerate().map(|(k, s)| format!("{k},{s:.17e}")))?;
    ctx.metric("outlier_count", sum.outlier_count)?;
    ctx.metric("top_singular_values", &sum.singular_values[..5])?;
    ctx.metric("bulk_median", sum.bulk_median)?;
    ctx.check(Check::equals("outlier_count", sum.outlier_count as f64, 3.0));
    Ok(())
}

fn fig6(ctx: &mut Ctx) -> Result<()> {
    let t = ctx.trained(&sigmoid_single(ctx.scale.n(), ctx.seed)?)?;
    let xs = sample_inputs_stream(&t.task, ctx.seed, rng::stream::HELDOUT, 8)?;
    let err = mean_step_error(&t.params, &t.task, &xs)?;
    let sm = Samples::simulate(&t.params, &t.task, &xs[..1])?;
    let x = &xs[0];
    ctx.csv(
        "burst_trace.csv",
        "t,x,target,output",
        (0..t.task.t_len).map(|k| format!("{k},{:.17e},{:.17e},{:.17e}", x[(0, k)], sm.targets[(k, 0)], sm.outputs[(k, 0)])),
    )?;
    let sum = spectrum_summary(t.params.w(), 1, DEFAULT_GAP_FACTOR)?;
    ctx.metric("top_singular_values", &sum.singular_values[..4])?;
    ctx.check(Check::below("burst_error_per_step", err, 0.02));
    Ok(())
}

fn fig8(ctx: &mut Ctx) -> Result<()> {
    let t = ctx.trained(&proxy_two(ctx.scale.n(), Activation::Relu, EncoderKind::Gaussian, ctx.seed)?)?;
    let sm = test_samples(&t, ctx.seed, None)?;
    let basis = manifold_ratio(&sm, t.params.w(), 2)?.basis;
    let fit = fit_r_matrix(&sm, &basis)?;
    let shuffled = fit_r_matrix(&sm.shuffled_targets(ctx.seed), &basis)?;
    ctx.csv("r_matrix.csv", "col0,col1", (0..2).map(|a| format!("{:.17e},{:.17e}", fit.r[(a, 0)], fit.r[(a, 1)])))?;
    ctx.check(Check::below("r_fit_residual", fit.residual, 0.05));
    ctx.check(Check::above("shuffled_residual", shuffled.residual, 0.5));
    Ok(())
}

fn fig9(ctx: &mut Ctx) -> Result<()> {
    let n = ctx.scale.n();
    for (name, act) in [("relu", Activation::Relu), ("sigmoid", Activation::STEEP_SIGMOID)] {
        let t = ctx.trained(&proxy_two(n, act, EncoderKind::Gaussian, ctx.seed)?)?;
        let sm = test_samples(&t, ctx.seed, None)?;
        let sel = selectivity_analysis(&sm, act)?;
        write_atomic(
            &ctx.out.join(format!("histogram_{name}.csv")),
            format!("# config_hash={} seed={}\n{}", ctx.prov().config_hash, ctx.seed, sel.histogram_csv()).as_bytes(),
        )?;
        ctx.metric(name, json!({"p_value": sel.p_value, "axis_enrichment": sel.axis_enrichment(), "histogram": sel.histogram}))?;
        if act == Activation::Relu {
            ctx.check(Check::above("relu_uniformity_p_value", sel.p_value, 0.01));
        } else {
            ctx.check(Check::above("sigmoid_axis_enrichment", sel.axis_enrichment(), 2.0));
        }
    }
    Ok(())
}

fn fig10(ctx: &mut Ctx) -> Result<()> {
    let t = ctx.trained(&dale_two(ctx.scale.n(), ctx.seed)?)?;
    let mask = t.dale.clone().ok_or_else(|| crate::error::invalid("training.dale_fraction", "missing from checkpoint"))?;
    let sum = spectrum_summary(t.params.w(), 3, DEFAULT_GAP_FACTOR)?;
    let rep = dale_mode_analysis(t.params.w(), t.params.decoders(), &mask, 1e-6)?;
    let top = &sum.top[0];
    ctx.csv(
        "dale_mode.csv",
        "neuron,l0,r0,sign",
        (0..t.params.n()).map(|i| format!("{i},{:.17e},{:.17e},{}", top.left[i], top.right[i], mask.signs[i])),
    )?;
    ctx.metric("top_singular_values", &sum.singular_values[..6])?;
    ctx.metric("r0_sign_agreement", rep.r0_sign_agreement)?;
    ctx.check(Check::equals("outlier_count", sum.outlier_count as f64, 3.0));
    ctx.check(Check::above("l0_min", rep.l0_min, -1e-6));
    let worst = rep.decoder_overlaps.iter().copied().fold(0.0, f64::max);
    ctx.check(Check::below("max_decoder_overlap", worst, 0.1));
    Ok(())
}

fn fig11(ctx: &mut Ctx) -> Result<()> {
    let p = init_network(50, 1, Activation::Linear, InitKind::Zero, EncoderKind::Gaussian, ctx.seed)?;
    ctx.hashes.push(format!("fig11:n=50:seed={}", ctx.seed));
    let (e, d) = (p.encoder(0).to_vec(), p.decoder(0).to_vec());
    let chi = chi_white_noise(3, 1.0)?;
    let special = train_omega(&OmegaState::zero(&e, &d)?, dot(&e, &d), 0.9, &chi, 0.05, 20_000, 1e-30)?.1;
    let start = OmegaState::new(Matrix::from_rows(&[[0.3, -0.2], [0.4, 0.1]]), &e, &d)?;
    let generic = train_omega(&start, 1.0, 0.9, &chi, 0.05, 20_000, 1e-30)?.1;
    let len = special.len().max(generic.len());
    let at = |v: &[f64], k: usize| v.get(k).map_or(String::new(), |x| format!("{x:.17e}"));
    ctx.csv("losses.csv", "step,loss_special_scale,loss_generic", (0..len).map(|k| format!("{k},{},{}", at(&special, k), at(&generic, k))))?;
    let fs = fit_convergence(&special)?;
    let fg = fit_convergence(&generic)?;
    ctx.metric("special_scale", fs)?;
    ctx.metric("generic", fg)?;
    let exponent = match fs.kind {
        ConvergenceKind::Algebraic { exponent } => exponent,
        _ => f64::NAN,
    };
    ctx.metric("fitted_exponent", exponent)?;
    ctx.check(Check::within("special_scale_exponent", exponent, -2.3, -1.7));
    ctx.check(Check::equals(
        "generic_is_exponential",
        f64::from(u8::from(matches!(fg.kind, ConvergenceKind::Exponential { .. }))),
        1.0,
    ));
    Ok(())
}

fn fig12(ctx: &mut Ctx) -> Result<()> {
    let chi = chi_white_noise(3, 1.0)?;
    let gamma = 0.9;
    let mut rows = Vec::new();
    let mut all_ge_one = true;
    let mut u_shaped = true;
    for (label, enc) in [("independent", EncoderKind::Gaussian), ("overlap_0.5", EncoderKind::Overlap { overlap: 0.5 })] {
        let p = init_network(50, 1, Activation::Linear, InitKind::Zero, enc, ctx.seed)?;
        ctx.hashes.push(format!("fig12:{label}:n=50:seed={}", ctx.seed));
        let (e, d) = (p.encoder(0), p.decoder(0));
        let de = dot(e, d);
        let mut curve = Vec::new();
        for k in 0..25 {
            let s = 0.05 * 400f64.powf(k as f64 / 24.0);
            if (s - de).abs() < 1e-3 {
                continue;
            }
            let scan = convergence_bound(e, d, s, gamma, &chi, &ScanGrid::default())?;
            let b = scan.best;
            all_ge_one &= b.condition_number >= 1.0;
            rows.push(format!("{label},{s:.17e},{:.17e},{:.17e},{:.17e}", b.condition_number, b.alpha, b.beta));
            curve.push(b.condition_number);
        }
        let arg = curve.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
        u_shaped &= arg > 0 && arg + 1 < curve.len();
        ctx.metric(&format!("{label}_min_condition"), curve.iter().copied().fold(f64::INFINITY, f64::min))?;
    }
    ctx.csv("condition.csv", "vectors,s,condition_number,alpha,beta", rows)?;
    ctx.check(Check::equals("condition_at_least_one", f64::from(u8::from(all_ge_one)), 1.0));
    ctx.check(Check::equals("interior_minimum", f64::from(u8::from(u_shaped)), 1.0));
    Ok(())
}

fn fig13(ctx: &mut Ctx) -> Result<()> {
    let gamma = 0.995;
    let scales = if ctx.scale.full { vec![0.1, 0.2, 0.5, 2.0, 5.0, 10.0] } else { vec![0.1, 0.5, 2.0, 10.0] };
    let mut rows = Vec::new();
    for s in scales {
        let t = ctx.trained(&relu_proxy_single(ctx.scale.n(), s, gamma, ctx.seed)?)?;
        let p = &t.params;
        let r = rank1_relu_predictions(p.w(), p.encoder(0), p.decoder(0), s, gamma)?;
        rows.push(format!(
            "{s},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.sigma, r.sigma_bound, r.r_dot_e, r.r_dot_e_prediction, r.cos_l_d
        ));
        if s == 0.1 || s == 10.0 {
            ctx.check(Check::below(&format!("sigma_rel_dev_s{s}"), r.sigma_rel_dev(), 0.05));
            ctx.check(Check::below(&format!("r_dot_e_rel_dev_s{s}"), r.r_dot_e_rel_dev(), 0.2));
        }
    }
    ctx.csv("rank1.csv", "s,sigma,sigma_bound,r_dot_e,r_dot_e_prediction,cos_l_d", rows)?;
    Ok(())
}

fn table1(ctx: &mut Ctx) -> Result<()> {
    let n = ctx.scale.n();
    let seed = ctx.seed;
    let cells = [
        ("relu", "batch", relu_batch(n, 1, seed)?),
        ("relu", "batch", relu_batch(n, 2, seed)?),
        ("relu", "proxy", relu_proxy_single(n, 2.0, 0.995, seed)?),
        ("relu", "proxy", proxy_two(n, Activation::Relu, EncoderKind::Gaussian, seed)?),
        ("sigmoid", "proxy", sigmoid_single(n, seed)?),
        ("sigmoid", "proxy", proxy_two(n, Activation::STEEP_SIGMOID, EncoderKind::Gaussian, seed)?),
    ];
    let mut rows = Vec::new();
    for (act, loss, cfg) in cells {
        let t = ctx.trained(&cfg)?;
        let dch = t.params.channels();
        let mut sm_task = t.task.with_len(200);
        if act == "sigmoid" {
            sm_task = sm_task.with_input(InputKind::GaussianWhite { std: 0.5 });
        }
        let sm = Samples::collect(&t.params, &sm_task, 32, seed)?;
        let m = manifold_ratio(&sm, t.params.w(), dch)?;
        rows.push(format!("{act},{loss},{dch},{:.17e},{:.17e}", m.r, m.r_null));
        if act == "relu" {
            let name = format!("{act}_{loss}_d{dch}");
            if ctx.scale.full {
                ctx.check(Check::below(&format!("{name}_r_over_r_null"), m.r / m.r_null, 0.01));
            } else {
                ctx.check(Check::below(&format!("{name}_r"), m.r, 0.1));
                ctx.check(Check::below(&format!("{name}_r_over_r_null"), m.r / m.r_null, 0.02));
            }
        }
    }
    ctx.csv("ratios.csv", "activation,loss,channels,r,r_null", rows)?;
    Ok(())
}

fn fig15(ctx: &mut Ctx) -> Result<()> {
    let n = if ctx.scale.full { 1000 } else { 200 };
    let spec = TaskSpec::new(DEFAULT_GAMMAS.to_vec(), vec![1.0; 3], 200, InputKind::default())?;
    ctx.hashes.push(format!("fig15:paired_relu:n={n}:seed={}", ctx.seed));
    let p = paired_relu_integrator(n, &spec, ctx.seed)?;
    let task = ContextTask::new(p, spec, 1e-10, ctx.seed)?;
    let opts = ReadoutOptions {
        seed: ctx.seed,
        ..Default::default()
    };
    let rec = train_readout(&task, &opts)?;
    let control = train_readout(
        &task,
        &ReadoutOptions {
            shuffle_labels: true,
            ..opts
        },
    )?;
    write_atomic(
        &ctx.out.join("trace.csv"),
        format!("# config_hash={} seed={}\n{}", ctx.prov().config_hash, ctx.seed, rec.trace_csv()).as_bytes(),
    )?;
    ctx.metric("dead_zone_accuracy", rec.dead_zone_accuracy)?;
    ctx.metric("heldout_accuracy_all", rec.heldout_accuracy_all)?;
    ctx.check(Check::above("heldout_accuracy", rec.heldout_accuracy, 0.9));
    ctx.check(Check::within("shuffled_control_accuracy", control.heldout_accuracy, 0.45, 0.55));
    Ok(())
}

fn support_blocks(ctx: &mut Ctx) -> Result<()> {
    let n = ctx.scale.n();
    let mut rows = Vec::new();
    for (name, enc, bar_below) in [("disjoint", EncoderKind::DisjointSupport, true), ("unconstrained", EncoderKind::Gaussian, false)] {
        let t = ctx.trained(&proxy_two(n, Activation::Relu, enc, ctx.seed)?)?;
        let bm = support_structure_analysis(t.params.w(), &disjoint_supports(n, 2))?;
        rows.push(format!("{name},{:.17e},{:.17e},{:.17e}", bm.on_block, bm.off_block, bm.off_fraction()));
        if bar_below {
            ctx.check(Check::below("disjoint_off_block_fraction", bm.off_fraction(), 0.01));
        } else {
            ctx.check(Check::above("unconstrained_off_block_fraction", bm.off_fraction(), 0.3));
        }
    }
    ctx.csv("blocks.csv", "encoders,on_block,off_block,off_fraction", rows)?;
    Ok(())
}
