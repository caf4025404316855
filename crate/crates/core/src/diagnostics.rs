//! Collapse diagnostics for trained or constructed weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_model::{to_one_based, DataModelConfig, LatentSet};
use crate::error::Result;
use crate::network::{layer_norm, NetworkKind, Weights};
use crate::theory::TheoryPrediction;

const ZERO_NORM: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: impl IntoIterator<Item = f64>) -> MeanStd {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub overall: MeanStd,
    /// Indexed by rank `beta` (0-based) when requested.
    pub per_rank: Vec<MeanStd>,
}

/// Column-norm statistics; with `s_c` the columns are also grouped by rank
/// across concepts (column `alpha*s_c + beta`).
pub fn embedding_norm_stats(w: &DMatrix<f64>, s_c: Option<usize>) -> NormStats {
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let per_rank = match s_c {
        Some(s) if s > 0 => (0..s)
            .map(|b| mean_std(norms.iter().enumerate().filter(|(j, _)| j % s == b).map(|(_, v)| *v)))
            .collect(),
        _ => Vec::new(),
    };
    NormStats {
        overall: mean_std(norms),
        per_rank,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    /// Mean pairwise cosine inside each group (NaN for groups with fewer than
    /// two usable columns).
    pub within: Vec<f64>,
    pub within_mean: f64,
    /// Mean cosine between distinct group mean directions.
    pub cross_mean: f64,
    /// Columns skipped because their norm is zero.
    pub excluded_zero_columns: usize,
}

/// Group membership of each column: `partition` is `groups x columns` with a
/// single 1 per column (the matrix `P`, or `Z` for head blocks).
fn groups_of(partition: &DMatrix<f64>) -> Vec<Option<usize>> {
    partition
        .column_iter()
        .map(|c| c.iter().position(|v| *v != 0.0))
        .collect()
}

pub fn concept_alignment(m: &DMatrix<f64>, partition: &DMatrix<f64>) -> AlignmentStats {
    let n_groups = partition.nrows();
    let membership = groups_of(partition);
    let mut unit_sum = vec![DVector::<f64>::zeros(m.nrows()); n_groups];
    let mut raw_sum = vec![DVector::<f64>::zeros(m.nrows()); n_groups];
    let mut counts = vec![0usize; n_groups];
    let mut excluded = 0;
    for (j, col) in m.column_iter().enumerate() {
        let Some(g) = membership.get(j).copied().flatten() else {
            continue;
        };
        let norm = col.norm();
        if norm <= ZERO_NORM {
            excluded += 1;
            continue;
        }
        unit_sum[g] += col / norm;
        raw_sum[g] += col;
        counts[g] += 1;
    }
    // mean pairwise cosine = (|sum of unit vectors|^2 - m) / (m (m - 1))
    let within: Vec<f64> = (0..n_groups)
        .map(|g| {
            let c = counts[g] as f64;
            if counts[g] < 2 {
                f64::NAN
            } else {
                (unit_sum[g].norm_squared() - c) / (c * (c - 1.0))
            }
        })
        .collect();
    let finite: Vec<f64> = within.iter().copied().filter(|v| v.is_finite()).collect();
    let within_mean = mean_std(finite).mean;
    let dirs: Vec<DVector<f64>> = raw_sum
        .iter()
        .filter(|v| v.norm() > ZERO_NORM)
        .map(|v| v.normalize())
        .collect();
    let mut cross = Vec::new();
    for a in 0..dirs.len() {
        for b in (a + 1)..dirs.len() {
            cross.push(dirs[a].dot(&dirs[b]));
        }
    }
    AlignmentStats {
        within,
        within_mean,
        cross_mean: mean_std(cross).mean,
        excluded_zero_columns: excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equiangularity {
    /// Frobenius distance of the normalized Gram from the ideal frame Gram.
    pub residual: f64,
    /// Norm of the sum of the normalized vectors.
    pub sum_norm: f64,
}

/// Compares the directions of the columns of `g` against an equiangular
/// frame: unit norms, pairwise inner products `-1/(n-1)`, zero sum.
pub fn equiangularity_residual(g: &DMatrix<f64>) -> Equiangularity {
    let n = g.ncols();
    let mut unit = g.clone();
    for mut col in unit.column_iter_mut() {
        let norm = col.norm();
        if norm > ZERO_NORM {
            col /= norm;
        }
    }
    let nf = n as f64;
    let ideal = DMatrix::from_fn(n, n, |i, j| {
        let off = -1.0 / (nf - 1.0);
        if i == j {
            nf / (nf - 1.0) + off
        } else {
            off
        }
    });
    let residual = (unit.transpose() * &unit - ideal).norm();
    Equiangularity {
        residual,
        sum_norm: unit.column_sum().norm(),
    }
}

/// Top singular values after subtracting the mean column.
pub fn pca_singular_values(m: &DMatrix<f64>, top_k: usize) -> Vec<f64> {
    let mut centered = m.clone();
    if m.ncols() > 0 {
        let mean = m.column_mean();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
    }
    let mut sv: Vec<f64> = centered.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(top_k);
    sv
}

/// Concept mean directions as columns (`d x n_c`), from a `d x n_w` matrix.
pub fn concept_means(m: &DMatrix<f64>, partition: &DMatrix<f64>) -> DMatrix<f64> {
    let counts: Vec<f64> = partition.row_iter().map(|r| r.sum()).collect();
    let mut means = m * partition.transpose();
    for (g, mut col) in means.column_iter_mut().enumerate() {
        if counts[g] > 0.0 {
            col /= counts[g];
        }
    }
    means
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub kind: NetworkKind,
    /// Norms of the raw embeddings `w_{(alpha,beta)}`.
    pub embedding_norms: NormStats,
    /// Alignment of the word representations (LayerNorm applied for `h*`).
    pub alignment: AlignmentStats,
    pub equiangularity: Equiangularity,
    pub top_singular_values: Vec<f64>,
    pub u_norms: NormStats,
    pub u_alignment: AlignmentStats,
    pub u_equiangularity: Equiangularity,
    pub u_top_singular_values: Vec<f64>,
}

/// Word representations fed to the head.
pub fn word_representations(kind: NetworkKind, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match kind {
        NetworkKind::Plain => Ok(w.clone()),
        NetworkKind::LayerNorm { epsilon } => {
            let mut out = w.clone();
            for j in 0..w.ncols() {
                out.set_column(j, &layer_norm(w.column(j).as_slice(), epsilon)?);
            }
            Ok(out)
        }
    }
}

pub fn collapse_report(
    kind: NetworkKind,
    weights: &Weights,
    latents: &LatentSet,
    config: &DataModelConfig,
    top_k: usize,
) -> Result<CollapseReport> {
    let p = config.encodings().p;
    let reps = word_representations(kind, weights.w())?;
    let z = latents.z_matrix();
    let u_hat = weights.u_hat();
    let top = |m: &DMatrix<f64>| pca_singular_values(m, top_k.min(m.nrows().min(m.ncols())));
    Ok(CollapseReport {
        kind,
        embedding_norms: embedding_norm_stats(weights.w(), Some(config.s_c())),
        alignment: concept_alignment(&reps, &p),
        equiangularity: equiangularity_residual(&concept_means(&reps, &p)),
        top_singular_values: top(&reps),
        u_norms: embedding_norm_stats(&u_hat, None),
        u_alignment: concept_alignment(&u_hat, &z),
        u_equiangularity: equiangularity_residual(&concept_means(&u_hat, &z)),
        u_top_singular_values: top(&u_hat),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRow {
    pub alpha: usize,
    pub beta: usize,
    pub norm: f64,
    pub cosine_to_concept_mean: f64,
}

/// One row per word (1-based indices) for plotting.
pub fn per_word_rows(m: &DMatrix<f64>, config: &DataModelConfig) -> Vec<WordRow> {
    let s_c = config.s_c();
    let means = concept_means(m, &config.encodings().p);
    m.column_iter()
        .enumerate()
        .map(|(j, col)| {
            let mean = means.column(j / s_c);
            let denom = col.norm() * mean.norm();
            WordRow {
                alpha: to_one_based(j / s_c),
                beta: to_one_based(j % s_c),
                norm: col.norm(),
                cosine_to_concept_mean: if denom > ZERO_NORM { col.dot(&mean) / denom } else { f64::NAN },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Absolute tolerance on the mean norm.
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub observed: f64,
    pub predicted: f64,
    pub abs_deviation: f64,
    pub rel_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Observed mean norm against the prediction: word embeddings for the plain
/// network, head blocks for the LayerNorm one.
pub fn compare_to_theory(report: &CollapseReport, prediction: &TheoryPrediction, tol: Tolerances) -> Vec<ComparisonRow> {
    let (metric, observed) = match report.kind {
        NetworkKind::Plain => ("embedding_norm_mean", report.embedding_norms.overall.mean),
        NetworkKind::LayerNorm { .. } => ("head_block_norm_mean", report.u_norms.overall.mean),
    };
    vec![row(metric, observed, prediction.predicted_norm, tol.norm)]
}

fn row(metric: &str, observed: f64, predicted: f64, tolerance: f64) -> ComparisonRow {
    let abs = (observed - predicted).abs();
    ComparisonRow {
        metric: metric.to_string(),
        observed,
        predicted,
        abs_deviation: abs,
        rel_deviation: if predicted != 0.0 { abs / predicted.abs() } else { f64::INFINITY },
        tolerance,
        pass: abs <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{full_latent_set, WordLaw};
    use crate::theory::{build_collapse_config, equiangular_frame, CollapseConstants};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
    }

    fn type_i(c: f64) -> (Weights, DataModelConfig, LatentSet) {
        let cfg = DataModelConfig::with_law(3, 4, 2, 9, &WordLaw::Uniform, 0.01).unwrap();
        let lat = full_latent_set(3, 2).unwrap();
        let frame = equiangular_frame(3, 5, false).unwrap();
        let w = build_collapse_config(&CollapseConstants::TypeI { c, c_prime: 0.5 }, &frame, &lat, 4).unwrap();
        (w, cfg, lat)
    }

    #[test]
    fn norms_at_collapse() {
        let (w, _, _) = type_i(1.3);
        let s = embedding_norm_stats(w.w(), Some(4));
        assert!((s.overall.mean - 1.3).abs() < 1e-14 && s.overall.std < 1e-14);
        assert_eq!(s.per_rank.len(), 4);

        let lat = full_latent_set(3, 2).unwrap();
        let frame = equiangular_frame(3, 5, false).unwrap();
        let radii = vec![3.0, 2.0, 1.0, 0.5];
        let w3 = build_collapse_config(&CollapseConstants::TypeIII { c: 0.2, radii: radii.clone() }, &frame, &lat, 4)
            .unwrap();
        let s = embedding_norm_stats(w3.w(), Some(4));
        for (b, r) in radii.iter().enumerate() {
            assert!((s.per_rank[b].mean - r).abs() < 1e-14);
        }
    }

    #[test]
    fn alignment_examples() {
        let (w, cfg, _) = type_i(0.9);
        let p = cfg.encodings().p;
        let a = concept_alignment(w.w(), &p);
        assert!((a.within_mean - 1.0).abs() < 1e-12);
        assert!((a.cross_mean + 0.5).abs() < 1e-12);

        let mut zeroed = w.w().clone();
        zeroed.column_mut(2).fill(0.0);
        assert_eq!(concept_alignment(&zeroed, &p).excluded_zero_columns, 1);

        let big = DataModelConfig::with_law(3, 200, 1, 1, &WordLaw::Uniform, 0.0).unwrap();
        let a = concept_alignment(&gaussian(100, 600, 1), &big.encodings().p);
        assert!(a.within_mean.abs() < 0.02, "{}", a.within_mean);
    }

    #[test]
    fn equiangularity_examples() {
        let f = equiangular_frame(3, 6, false).unwrap();
        let e = equiangularity_residual(&(f.f.clone() * 2.5));
        assert!(e.residual < 1e-12 && e.sum_norm < 1e-12);
        let basis = DMatrix::<f64>::identity(3, 3);
        assert!((equiangularity_residual(&basis).residual - 6f64.sqrt() / 2.0).abs() < 1e-14);
        let mut pert = f.f.clone();
        pert[(0, 0)] += 1e-6;
        let r = equiangularity_residual(&pert).residual;
        assert!(r > 0.0 && r < 1e-5);
    }

    #[test]
    fn rotation_invariance() {
        let g = gaussian(6, 4, 3);
        let q = gaussian(6, 6, 4).qr().q();
        let a = equiangularity_residual(&g).residual;
        let b = equiangularity_residual(&(q * g)).residual;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn pca_examples() {
        let u = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let v = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.0, 1.5]);
        let rank1 = &u * v.transpose();
        let sv = pca_singular_values(&rank1, 3);
        assert!(sv[0] > 1.0 && sv[1] < 1e-12 && sv[2] < 1e-12);
        let sv = pca_singular_values(&gaussian(4, 9, 5), 4);
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn comparison_table() {
        let (w, cfg, lat) = type_i(1.41);
        let rep = collapse_report(NetworkKind::Plain, &w, &lat, &cfg, 3).unwrap();
        let pred = |c: f64| TheoryPrediction {
            tau: 0.0,
            c,
            c_prime: None,
            eta: 0.0,
            predicted_norm: c,
            predicted_risk: 0.0,
            predicted_margin_per_distance: 0.0,
            radii: vec![],
        };
        assert!(compare_to_theory(&rep, &pred(1.42214), Tolerances { norm: 0.15 })[0].pass);
        let (w, cfg, lat) = type_i(0.61);
        let rep = collapse_report(NetworkKind::Plain, &w, &lat, &cfg, 3).unwrap();
        assert!(compare_to_theory(&rep, &pred(0.61602), Tolerances { norm: 0.06 })[0].pass);
        let zero = Weights::zeros(5, 12, 9, 2);
        let rep = collapse_report(NetworkKind::Plain, &zero, &lat, &cfg, 3).unwrap();
        assert!(!compare_to_theory(&rep, &pred(1.42214), Tolerances { norm: 0.15 })[0].pass);
    }

    #[test]
    fn word_rows() {
        let (w, cfg, _) = type_i(2.0);
        let rows = per_word_rows(w.w(), &cfg);
        assert_eq!(rows.len(), 12);
        assert_eq!((rows[5].alpha, rows[5].beta), (2, 2));
        assert!(rows.iter().all(|r| (r.cosine_to_concept_mean - 1.0).abs() < 1e-12 && (r.norm - 2.0).abs() < 1e-12));
    }
}
