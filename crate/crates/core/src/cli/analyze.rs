//! The `analyze` verb: diagnostics on a checkpoint.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::diagnostics::{
    classify_populations, current_conditions_residuals, current_linearity_fit, dale_mode_analysis, fit_r_matrix, gi_check_network,
    manifold_ratio, rank1_relu_predictions, selectivity_analysis, spectrum_summary, support_structure_analysis, Samples,
    DEFAULT_GAP_FACTOR, DEFAULT_POPULATION_THRESHOLD,
};
use crate::error::Result;
use crate::model::{Activation, NetworkParams, TaskSpec};
use crate::training::{disjoint_supports, DaleMask};

use super::config::{AnalysisConfig, AnalysisKind};
use super::{csv, write_atomic, write_json, Provenance};

/// Outcome of one analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub analysis: &'static str,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub result: Value,
}

/// A network with everything the analyses need.
pub struct Subject<'a> {
    pub params: &'a NetworkParams,
    pub task: &'a TaskSpec,
    pub dale: Option<&'a DaleMask>,
}

enum Outcome {
    Done(Value, Vec<(String, String)>),
    Skipped(String),
}

fn skip(reason: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome::Skipped(reason.into()))
}

/// Runs `kinds` and writes `<name>.json` (plus CSVs) into `out`.
pub fn run_analyses(subject: &Subject, kinds: &[AnalysisKind], cfg: &AnalysisConfig, prov: &Provenance, out: &Path) -> Result<Vec<AnalysisReport>> {
    std::fs::create_dir_all(out)?;
    let mut samples: Option<Samples> = None;
    let mut reports = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let outcome = match analyse(kind, subject, cfg, prov, &mut samples) {
            Ok(o) => o,
            // Degenerate inputs are reported, not fatal.
            Err(e @ crate::Error::Degenerate { .. }) => Outcome::Skipped(e.to_string()),
            Err(e) => return Err(e),
        };
        let report = match outcome {
            Outcome::Done(result, files) => {
                for (name, body) in files {
                    write_atomic(&out.join(name), body.as_bytes())?;
                }
                AnalysisReport {
                    analysis: kind.name(),
                    provenance: prov.clone(),
                    status: "ok",
                    reason: None,
                    result,
                }
            }
            Outcome::Skipped(reason) => AnalysisReport {
                analysis: kind.name(),
                provenance: prov.clone(),
                status: "skipped",
                reason: Some(reason),
                result: Value::Null,
            },
        };
        write_json(&out.join(format!("{}.json", kind.name())), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

fn analyse(kind: AnalysisKind, sub: &Subject, cfg: &AnalysisConfig, prov: &Provenance, cache: &mut Option<Samples>) -> Result<Outcome> {
    let p = sub.params;
    let (n, dch) = (p.n(), p.channels());
    let relu = p.activation() == Activation::Relu;
    let mut samples = || -> Result<Samples> {
        if cache.is_none() {
            *cache = Some(Samples::collect(p, sub.task, cfg.batch, prov.seed)?);
        }
        Ok(cache.clone().expect("filled above"))
    };
    match kind {
        AnalysisKind::GiCheck => {
            if p.activation() != Activation::Linear {
                return skip("moment conditions characterise linear networks only");
            }
            let rep = gi_check_network(p, sub.task, cfg.qmax, cfg.gi_tolerance)?;
            Ok(Outcome::Done(serde_json::to_value(rep)?, vec![]))
        }
        AnalysisKind::Spectrum => {
            let reference = dch + usize::from(sub.dale.is_some());
            if reference >= n {
                return skip(format!("reference rank {reference} needs n > {reference}"));
            }
            let sum = spectrum_summary(p.w(), reference, DEFAULT_GAP_FACTOR)?;
            let rows = sum.singular_values.iter().enumerate().map(|(k, s)| format!("{k},{s:.17e}"));
            let file = csv(prov, "index,sigma", rows);
            let mut v = serde_json::to_value(&sum)?;
            // Vectors go to CSV only.
            v.as_object_mut().expect("struct").remove("top");
            Ok(Outcome::Done(v, vec![("singular_values.csv".into(), file)]))
        }
        AnalysisKind::Linearity => {
            if dch != 1 {
                return skip(format!("needs one channel, network has {dch}"));
            }
            let sg = sub.task.scales[0] * sub.task.gammas[0];
            let pred: Vec<f64> = p.w().matvec(p.encoder(0)).iter().map(|x| x / sg).collect();
            let fit = current_linearity_fit(&samples()?, Some(&pred))?;
            let rows = (0..n).map(|i| format!("{i},{:.17e},{:.17e},{:.17e}", fit.l[i], pred[i], fit.r2[i]));
            let file = csv(prov, "neuron,l_fit,l_predicted,r2", rows);
            Ok(Outcome::Done(
                json!({"median_r2": fit.median_r2, "cosine_to_prediction": fit.cosine_to_prediction}),
                vec![("linearity.csv".into(), file)],
            ))
        }
        AnalysisKind::Populations => {
            if dch != 1 || !relu {
                return skip("needs a single-channel ReLU network");
            }
            let lab = classify_populations(&samples()?, Some(p.decoder(0)), DEFAULT_POPULATION_THRESHOLD)?;
            let rows = (0..n).map(|i| format!("{i},{},{:.17e},{:.17e}", label_name(lab.labels[i]), lab.l_plus[i], lab.l_minus[i]));
            let file = csv(prov, "neuron,population,l_plus,l_minus", rows);
            use crate::diagnostics::Population as P;
            Ok(Outcome::Done(
                json!({
                    "plus": lab.count(P::Plus), "minus": lab.count(P::Minus),
                    "shared": lab.count(P::Shared), "null": lab.count(P::Null),
                    "shared_null_fraction": lab.shared_null_fraction(),
                    "shared_output_share": lab.shared_output_share,
                    "decoder_plus": lab.decoder_plus, "decoder_minus": lab.decoder_minus,
                    "threshold": lab.threshold,
                }),
                vec![("populations.csv".into(), file)],
            ))
        }
        AnalysisKind::Conditions => {
            if dch != 1 || !relu {
                return skip("needs a single-channel ReLU network");
            }
            let (s, g) = (sub.task.scales[0], sub.task.gammas[0]);
            let res = current_conditions_residuals(p.w(), p.encoder(0), p.decoder(0), s, g, None)?;
            Ok(Outcome::Done(serde_json::to_value(res)?, vec![]))
        }
        AnalysisKind::ManifoldRatio => {
            if dch >= n {
                return skip("needs D < n");
            }
            let rep = manifold_ratio(&samples()?, p.w(), dch)?;
            Ok(Outcome::Done(json!({"r": rep.r, "r_null": rep.r_null, "d_used": rep.d_used, "samples": rep.samples}), vec![]))
        }
        AnalysisKind::RMatrix => {
            if dch >= n {
                return skip("needs D < n");
            }
            let sm = samples()?;
            let basis = manifold_ratio(&sm, p.w(), dch)?.basis;
            let fit = fit_r_matrix(&sm, &basis)?;
            let shuffled = fit_r_matrix(&sm.shuffled_targets(prov.seed), &basis)?;
            let rows = (0..dch).map(|a| (0..dch).map(|b| format!("{:.17e}", fit.r[(a, b)])).collect::<Vec<_>>().join(","));
            let header = (0..dch).map(|b| format!("col{b}")).collect::<Vec<_>>().join(",");
            let file = csv(prov, &header, rows);
            Ok(Outcome::Done(
                json!({"residual": fit.residual, "shuffled_residual": shuffled.residual}),
                vec![("r_matrix.csv".into(), file)],
            ))
        }
        AnalysisKind::Selectivity => {
            if dch != 2 {
                return skip(format!("angles are defined for two channels, network has {dch}"));
            }
            let rep = selectivity_analysis(&samples()?, p.activation())?;
            let angles = csv(prov, "angle", rep.angles.iter().map(|a| format!("{a:.17e}")));
            let hist = format!("{}{}", comment(prov), rep.histogram_csv());
            Ok(Outcome::Done(
                json!({
                    "p_value": rep.p_value, "chi2": rep.chi2, "uniform": rep.uniform(),
                    "axis_mass": rep.axis_mass, "axis_enrichment": rep.axis_enrichment(),
                    "silent": rep.silent, "histogram": rep.histogram,
                }),
                vec![("selectivity_angles.csv".into(), angles), ("selectivity_histogram.csv".into(), hist)],
            ))
        }
        AnalysisKind::Rank1 => {
            if dch != 1 || !relu {
                return skip("needs a single-channel ReLU network");
            }
            let (s, g) = (sub.task.scales[0], sub.task.gammas[0]);
            let rep = rank1_relu_predictions(p.w(), p.encoder(0), p.decoder(0), s, g)?;
            let mut v = serde_json::to_value(rep)?;
            v["sigma_rel_dev"] = json!(rep.sigma_rel_dev());
            v["r_dot_e_rel_dev"] = json!(rep.r_dot_e_rel_dev());
            Ok(Outcome::Done(v, vec![]))
        }
        AnalysisKind::DaleMode => {
            let Some(mask) = sub.dale else {
                return skip("network was trained without a sign constraint");
            };
            let rep = dale_mode_analysis(p.w(), p.decoders(), mask, 1e-6)?;
            Ok(Outcome::Done(serde_json::to_value(rep)?, vec![]))
        }
        AnalysisKind::SupportBlocks => {
            if dch < 2 {
                return skip("needs at least two channels");
            }
            let (supports, partition) = match encoder_supports(p) {
                Some(s) => (s, "encoder_support"),
                None => (disjoint_supports(n, dch), "contiguous"),
            };
            let bm = support_structure_analysis(p.w(), &supports)?;
            Ok(Outcome::Done(
                json!({"partition": partition, "on_block": bm.on_block, "off_block": bm.off_block, "off_fraction": bm.off_fraction()}),
                vec![],
            ))
        }
    }
}

fn label_name(p: crate::diagnostics::Population) -> &'static str {
    use crate::diagnostics::Population as P;
    match p {
        P::Plus => "plus",
        P::Minus => "minus",
        P::Shared => "shared",
        P::Null => "null",
    }
}

fn comment(prov: &Provenance) -> String {
    format!("# config_hash={} seed={}\n", prov.config_hash, prov.seed)
}

/// Channel supports read off the encoder and decoder sparsity, when they
/// are disjoint and do not all cover the whole network.
pub fn encoder_supports(p: &NetworkParams) -> Option<Vec<Vec<usize>>> {
    let n = p.n();
    let sets: Vec<Vec<usize>> = (0..p.channels())
        .map(|c| (0..n).filter(|&i| p.encoder(c)[i] != 0.0 || p.decoder(c)[i] != 0.0).collect())
        .collect();
    let mut owner = vec![false; n];
    for s in &sets {
        if s.len() == n {
            return None;
        }
        for &i in s {
            if owner[i] {
                return None;
            }
            owner[i] = true;
        }
    }
    Some(sets)
}
