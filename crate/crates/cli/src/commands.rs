//! The four subcommands. Each returns `Ok(())` on success and a [`CliError`]
//! whose exit code tells the caller what went wrong.

use std::path::{Path, PathBuf};

use collapse_lab::data_model::{
    check_neighbour_counts, check_symmetry_assumption, encode_sentence, full_latent_set, sample_latents, sample_sentence,
    DataModelConfig, LatentSet, OneHot,
};
use collapse_lab::diagnostics::{collapse_report, compare_to_theory, per_word_rows, CollapseReport, ComparisonRow, Tolerances};
use collapse_lab::network::{
    batch_objective, finite_difference_check, objective_and_gradient, NetworkKind, Weights, Workspace,
};
use collapse_lab::theory::{
    build_collapse_config, closed_form_risk, equiangular_frame, exact_risk, exact_risk_and_gradient, minimize_h,
    minimize_hstar, solve_type3_system, uniqueness_bound_sides, CollapseConstants, CollapseKind, TheoryParams,
    TheoryPrediction, Type3Solution,
};
use collapse_lab::trainer::{empirical_risk, evaluate_accuracy, make_dataset, sgd_train, StopReason, EVAL_SEED};
use collapse_lab::Error;
use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{write_dataset, write_history, write_json, write_words};
use crate::spec::ExperimentSpec;
use crate::CliError;

const DEFAULT_OUT: &str = "collapse-lab-out";
const TOP_SINGULAR_VALUES: usize = 5;
/// Coordinates probed per instance when a model is too large to check fully.
const FD_SAMPLED_COORDS: usize = 200;
const FD_FULL_LIMIT: usize = 2000;
const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
    /// Weights file for `report` and `verify`.
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Metadata {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
}

fn metadata(command: &'static str, spec: &ExperimentSpec) -> Metadata {
    Metadata {
        tool: "collapse-lab",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: spec.seed,
    }
}

fn setup(opts: &Options) -> Result<(ExperimentSpec, PathBuf), CliError> {
    let mut spec = ExperimentSpec::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        spec.seed = seed;
    }
    if opts.threads > 1 {
        warn!("--threads {} requested; the pipelines are single-threaded", opts.threads);
    }
    let out = opts
        .out
        .clone()
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    Ok((spec, out))
}

/// Latents and training data come from one stream, evaluation from another,
/// verification instances from a third.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn latents_for(spec: &ExperimentSpec, cfg: &DataModelConfig, rng: &mut ChaCha8Rng) -> Result<LatentSet, CliError> {
    sample_latents(cfg, spec.data.distinct_latents, rng).map_err(CliError::from_core)
}

fn prediction_for(spec: &ExperimentSpec, kind: NetworkKind) -> Result<Option<TheoryPrediction>, CliError> {
    let params = spec.theory_params()?;
    Ok(match kind {
        NetworkKind::Plain if spec.theory.minimize_h => Some(minimize_h(&params)),
        NetworkKind::LayerNorm { .. } if spec.theory.minimize_hstar => Some(minimize_hstar(&params)),
        _ => None,
    })
}

fn comparison(
    spec: &ExperimentSpec,
    report: &CollapseReport,
    prediction: Option<&TheoryPrediction>,
) -> Vec<ComparisonRow> {
    prediction
        .map(|p| {
            compare_to_theory(
                report,
                p,
                Tolerances {
                    norm: spec.theory.norm_tolerance,
                },
            )
        })
        .unwrap_or_default()
}

#[derive(Debug, Serialize)]
struct TrainReport {
    metadata: Metadata,
    kind: NetworkKind,
    n_samples: usize,
    initial_risk: f64,
    final_risk: f64,
    epochs_run: usize,
    stop: StopReason,
    max_abs_entry: f64,
    test_accuracy: f64,
    collapse: CollapseReport,
    prediction: Option<TheoryPrediction>,
    comparison: Vec<ComparisonRow>,
}

/// `make_dataset -> sgd_train -> evaluate_accuracy -> diagnostics`; writes
/// `weights.bin`, `history.csv`, `dataset.csv`, `words.csv`, `report.json`.
pub fn cmd_train(opts: &Options) -> Result<(), CliError> {
    let (spec, out) = setup(opts)?;
    let cfg = spec.data_config()?;
    let kind = spec.kind()?;
    let mut rng = stream(spec.seed, 0);
    let latents = latents_for(&spec, &cfg, &mut rng)?;
    let dataset = make_dataset(&latents, &cfg, spec.train.n_spl, &mut rng).map_err(CliError::from_core)?;
    write_dataset(&out.join("dataset.csv"), &dataset)?;
    info!("training on {} samples", dataset.len());

    let outcome = sgd_train(kind, &dataset, &spec.train_config()).map_err(CliError::from_core)?;
    write_history(&out.join("history.csv"), &outcome.history)?;
    let weights = &outcome.weights;
    let path = out.join("weights.bin");
    std::fs::write(&path, weights.to_bytes(kind)).map_err(|e| CliError::io(&path, e))?;

    let final_risk = empirical_risk(kind, weights, &dataset, spec.train.lambda).map_err(CliError::from_core)?;
    let test_accuracy = evaluate_accuracy(kind, weights, &latents, &cfg, spec.train.n_test, &mut stream(spec.seed ^ EVAL_SEED, 1))
        .map_err(CliError::from_core)?;
    info!("test accuracy {test_accuracy}");
    let collapse = collapse_report(kind, weights, &latents, &cfg, TOP_SINGULAR_VALUES).map_err(CliError::from_core)?;
    write_words(&out.join("words.csv"), &per_word_rows(weights.w(), &cfg))?;
    let prediction = prediction_for(&spec, kind)?;
    let comparison = comparison(&spec, &collapse, prediction.as_ref());
    write_json(
        &out.join("report.json"),
        &TrainReport {
            metadata: metadata("train", &spec),
            kind,
            n_samples: dataset.len(),
            initial_risk: outcome.initial_risk,
            final_risk,
            epochs_run: outcome.history.len(),
            stop: outcome.stop,
            max_abs_entry: outcome.max_abs_entry,
            test_accuracy,
            collapse,
            prediction,
            comparison,
        },
    )
}

fn load_weights(path: &Path, spec: &ExperimentSpec, cfg: &DataModelConfig) -> Result<(Weights, NetworkKind), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (w, kind) = Weights::from_bytes(&bytes).map_err(|e| CliError::io(path, e))?;
    let expected = (spec.train.d, cfg.n_w(), cfg.n_classes(), cfg.seq_len());
    let found = (w.d(), w.n_w(), w.n_classes(), w.seq_len());
    if expected != found {
        return Err(CliError::Input(format!(
            "{}: weights have (d, n_w, K, L) = {found:?}, config implies {expected:?}",
            path.display()
        )));
    }
    Ok((w, kind))
}

#[derive(Debug, Serialize)]
struct EvalReport {
    metadata: Metadata,
    weights: String,
    kind: NetworkKind,
    test_accuracy: f64,
    collapse: CollapseReport,
    prediction: Option<TheoryPrediction>,
    comparison: Vec<ComparisonRow>,
}

/// Diagnostics for an existing weights file (default `<out>/weights.bin`):
/// writes `report.json` and `words.csv`.
pub fn cmd_report(opts: &Options) -> Result<(), CliError> {
    let (spec, out) = setup(opts)?;
    let cfg = spec.data_config()?;
    let path = opts.weights.clone().unwrap_or_else(|| out.join("weights.bin"));
    let (weights, kind) = load_weights(&path, &spec, &cfg)?;
    let latents = latents_for(&spec, &cfg, &mut stream(spec.seed, 0))?;
    let test_accuracy = evaluate_accuracy(kind, &weights, &latents, &cfg, spec.train.n_test, &mut stream(spec.seed ^ EVAL_SEED, 1))
        .map_err(CliError::from_core)?;
    let collapse = collapse_report(kind, &weights, &latents, &cfg, TOP_SINGULAR_VALUES).map_err(CliError::from_core)?;
    write_words(&out.join("words.csv"), &per_word_rows(weights.w(), &cfg))?;
    let prediction = prediction_for(&spec, kind)?;
    let comparison = comparison(&spec, &collapse, prediction.as_ref());
    write_json(
        &out.join("report.json"),
        &EvalReport {
            metadata: metadata("report", &spec),
            weights: path.display().to_string(),
            kind,
            test_accuracy,
            collapse,
            prediction,
            comparison,
        },
    )
}

#[derive(Debug, Serialize)]
struct BoundReport {
    lhs: f64,
    rhs: f64,
    holds: bool,
}

#[derive(Debug, Serialize)]
struct PredictionReport {
    metadata: Metadata,
    h: Option<TheoryPrediction>,
    hstar: Option<TheoryPrediction>,
    uniqueness_bound: BoundReport,
    type3: Option<Type3Solution>,
}

/// Closed-form predictions; writes `prediction.json`. Exit 3 when the
/// type-III solve is requested outside its guarantee.
pub fn cmd_theory(opts: &Options) -> Result<(), CliError> {
    let (spec, out) = setup(opts)?;
    let params = spec.theory_params()?;
    let (lhs, rhs) = uniqueness_bound_sides(&params);
    let mut violated = None;
    let type3 = if spec.theory.type3 {
        match solve_type3_system(&params) {
            Ok(s) => Some(s),
            Err(e @ Error::NoGuarantee { .. }) => {
                violated = Some(e);
                None
            }
            Err(e) => return Err(CliError::from_core(e)),
        }
    } else {
        None
    };
    write_json(
        &out.join("prediction.json"),
        &PredictionReport {
            metadata: metadata("theory", &spec),
            h: spec.theory.minimize_h.then(|| minimize_h(&params)),
            hstar: spec.theory.minimize_hstar.then(|| minimize_hstar(&params)),
            uniqueness_bound: BoundReport {
                lhs,
                rhs,
                holds: lhs < rhs,
            },
            type3,
        },
    )?;
    match violated {
        Some(e) => Err(CliError::from_core(e)),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    status: Status,
    detail: Value,
}

impl Check {
    fn new(name: &'static str, pass: bool, detail: Value) -> Self {
        let status = if pass { Status::Pass } else { Status::Fail };
        Self { name, status, detail }
    }

    fn skipped(name: &'static str, why: impl Into<String>) -> Self {
        Self {
            name,
            status: Status::Skipped,
            detail: json!({ "reason": why.into() }),
        }
    }
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    metadata: Metadata,
    n_latents: usize,
    full_latent_set: bool,
    checks: Vec<Check>,
}

/// Symmetry, neighbour-count, gradient, closed-form and criticality checks on
/// a tiny instance; writes `verify.json`, exit 1 if any check fails.
pub fn cmd_verify(opts: &Options) -> Result<(), CliError> {
    let (spec, out) = setup(opts)?;
    let cfg = spec.data_config()?;
    let params = spec.theory_params()?;
    let full = cfg.latent_space_size() == Some(cfg.n_classes() as u128);
    let latents = if full && spec.data.distinct_latents {
        full_latent_set(cfg.n_c(), cfg.seq_len()).map_err(CliError::from_core)?
    } else {
        latents_for(&spec, &cfg, &mut stream(spec.seed, 0))?
    };
    let full = full && latents.distinct();
    // Read the weights first so a bad file is reported as bad input.
    let loaded = match &opts.weights {
        Some(p) => Some(load_weights(p, &spec, &cfg)?),
        None => None,
    };

    let mut checks = Vec::new();
    let sym = check_symmetry_assumption(&latents);
    checks.push(Check::new("symmetry", sym.holds, json!(sym)));
    let counts = check_neighbour_counts(&latents);
    checks.push(Check::new("neighbour_counts", counts.holds, json!(counts)));
    checks.push(gradient_check(&spec, &cfg, &latents)?);
    checks.extend(closed_form_checks(&spec, &params, &latents, full));
    checks.push(criticality_check(&spec, &params, &latents, full));
    if let Some((w, kind)) = loaded {
        checks.push(weights_check(&spec, &params, &latents, &w, kind));
    }

    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| matches!(c.status, Status::Fail))
        .map(|c| c.name)
        .collect();
    write_json(
        &out.join("verify.json"),
        &VerifyReport {
            metadata: metadata("verify", &spec),
            n_latents: latents.len(),
            full_latent_set: full,
            checks,
        },
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}

fn probe_coords(total: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    (total > FD_FULL_LIMIT).then(|| sample(rng, total, FD_SAMPLED_COORDS).into_vec())
}

/// Backward pass against central differences on random weights and random
/// minibatches from this data model, for both network kinds.
fn gradient_check(spec: &ExperimentSpec, cfg: &DataModelConfig, latents: &LatentSet) -> Result<Check, CliError> {
    let v = &spec.verify;
    let d = v.fd_width.max(2);
    let mut rng = stream(spec.seed, 2);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..v.fd_instances {
        for kind in [NetworkKind::Plain, NetworkKind::layer_norm(spec.network.epsilon).map_err(CliError::from_core)?] {
            let w = Weights::random(d, cfg.n_w(), cfg.n_classes(), cfg.seq_len(), &mut rng);
            let xs: Vec<(OneHot, usize)> = (0..8)
                .map(|i| {
                    let k = i % latents.len();
                    let x = sample_sentence(latents.get(k), cfg, &mut rng);
                    Ok((encode_sentence(&x, cfg)?, k))
                })
                .collect::<Result<_, Error>>()
                .map_err(CliError::from_core)?;
            let batch: Vec<(&OneHot, usize)> = xs.iter().map(|(x, k)| (x, *k)).collect();
            let (lw, lu) = kind.penalties(spec.train.lambda);
            let (_, g) = objective_and_gradient(kind, &w, &batch, lw, lu, &mut Workspace::default())
                .map_err(CliError::from_core)?;
            let coords = probe_coords(w.w().len() + w.u().len(), &mut rng);
            let r = finite_difference_check(&w, &g, v.fd_step, coords.as_deref(), |p| {
                batch_objective(kind, p, &batch, lw, lu)
            })
            .map_err(CliError::from_core)?;
            worst = worst.max(r.rel_error);
            checked += r.checked;
        }
    }
    Ok(Check::new(
        "gradient_finite_differences",
        worst <= v.fd_tolerance,
        json!({ "instances": 2 * v.fd_instances, "coordinates": checked, "max_rel_error": worst, "tolerance": v.fd_tolerance }),
    ))
}

fn closed_form_checks(spec: &ExperimentSpec, params: &TheoryParams, latents: &LatentSet, full: bool) -> Vec<Check> {
    const NAMES: [&str; 2] = ["closed_form_type_i", "closed_form_type_ii"];
    if !full {
        return NAMES
            .iter()
            .map(|n| Check::skipped(n, "needs the full latent set"))
            .collect();
    }
    let v = &spec.verify;
    let n = v.closed_form_points.max(2);
    let grid: Vec<f64> = (0..n).map(|i| 3.0 * i as f64 / (n - 1) as f64).collect();
    let mut checks = Vec::new();
    for (name, collapse) in NAMES.into_iter().zip([CollapseKind::I, CollapseKind::II]) {
        let result = (|| -> collapse_lab::Result<f64> {
            let (frame, kind) = match collapse {
                CollapseKind::I => (equiangular_frame(params.n_c(), params.d, false)?, NetworkKind::Plain),
                // exact LayerNorm so the frame embeddings are fixed points
                _ => (equiangular_frame(params.n_c(), params.d, true)?, NetworkKind::layer_norm(0.0)?),
            };
            let mut worst = 0.0f64;
            for &c in &grid {
                let constants = match collapse {
                    CollapseKind::I => CollapseConstants::type_i_tied(c, params),
                    _ => CollapseConstants::TypeII { c },
                };
                let w = build_collapse_config(&constants, &frame, latents, params.data.s_c())?;
                let exact = exact_risk(kind, &w, latents, params)?;
                worst = worst.max((exact - closed_form_risk(collapse, c, params)?).abs());
            }
            Ok(worst)
        })();
        checks.push(match result {
            Ok(worst) => Check::new(
                name,
                worst <= v.closed_form_tolerance,
                json!({ "points": n, "max_abs_deviation": worst, "tolerance": v.closed_form_tolerance }),
            ),
            Err(e) => Check::skipped(name, e.to_string()),
        });
    }
    checks
}

fn criticality_check(spec: &ExperimentSpec, params: &TheoryParams, latents: &LatentSet, full: bool) -> Check {
    const NAME: &str = "type_iii_criticality";
    if !full {
        return Check::skipped(NAME, "needs the full latent set");
    }
    let solution = match solve_type3_system(params) {
        Ok(s) => s,
        Err(e) => return Check::skipped(NAME, e.to_string()),
    };
    let result = (|| -> collapse_lab::Result<f64> {
        let frame = equiangular_frame(params.n_c(), params.d, false)?;
        let constants = CollapseConstants::TypeIII {
            c: solution.c,
            radii: solution.radii.clone(),
        };
        let w = build_collapse_config(&constants, &frame, latents, params.data.s_c())?;
        Ok(exact_risk_and_gradient(NetworkKind::Plain, &w, latents, params)?.1.norm())
    })();
    let grad_norm = match result {
        Ok(g) => g,
        Err(e) => return Check::skipped(NAME, e.to_string()),
    };
    let mu = params.mu();
    let ordered = (1..mu.len()).all(|b| {
        let (r0, r1) = (solution.radii[b - 1], solution.radii[b]);
        if mu[b - 1] > mu[b] {
            r0 > r1
        } else if mu[b - 1] < mu[b] {
            r0 < r1
        } else {
            (r0 - r1).abs() <= 1e-12 * r0.abs().max(1.0)
        }
    });
    let tol = spec.verify.criticality_tolerance;
    let pass = grad_norm <= tol
        && solution.rank_residual <= RESIDUAL_TOLERANCE
        && solution.norm_residual <= RESIDUAL_TOLERANCE
        && ordered;
    Check::new(
        NAME,
        pass,
        json!({ "gradient_norm": grad_norm, "tolerance": tol, "solution": solution, "radii_follow_frequencies": ordered }),
    )
}

/// Exact risk at a given weights file, with its gradient checked by finite
/// differences on a sample of coordinates.
fn weights_check(spec: &ExperimentSpec, params: &TheoryParams, latents: &LatentSet, w: &Weights, kind: NetworkKind) -> Check {
    const NAME: &str = "weights_exact_gradient";
    let v = &spec.verify;
    let result = (|| -> collapse_lab::Result<(f64, f64, usize)> {
        let (risk, g) = exact_risk_and_gradient(kind, w, latents, params)?;
        let mut rng = stream(spec.seed, 3);
        let total = w.w().len() + w.u().len();
        let coords = sample(&mut rng, total, FD_SAMPLED_COORDS.min(total)).into_vec();
        let r = finite_difference_check(w, &g, v.fd_step, Some(&coords), |p| exact_risk(kind, p, latents, params))?;
        Ok((risk, r.rel_error, r.checked))
    })();
    match result {
        Ok((risk, rel, n)) => Check::new(
            NAME,
            rel <= v.fd_tolerance,
            json!({ "exact_risk": risk, "coordinates": n, "max_rel_error": rel, "tolerance": v.fd_tolerance }),
        ),
        Err(e) => Check::skipped(NAME, e.to_string()),
    }
}
