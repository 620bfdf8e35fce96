//! PCA of feature data and the plot-ready CSV bundle.
//!
//! Column layouts are described in `docs/report-formats.md`. All files are
//! deterministic for fixed inputs; wall-clock data goes under `timings/`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::ReportError;
use crate::features::{FeatureVector, FEATURE_NAMES, N_FEATURES};
use crate::objective::eval_f2;
use crate::registry::Registry;
use crate::surrogate::{predict_all, regression_metrics, Surrogate};
use crate::trace::OptTrace;
use crate::trees::ExtraTreesModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: [f64; N_FEATURES],
    /// Per-feature divisor applied after centering; all ones when unstandardized.
    pub scale: [f64; N_FEATURES],
    /// Principal axes as rows, by decreasing variance.
    pub axes: [[f64; N_FEATURES]; N_FEATURES],
    pub variances: [f64; N_FEATURES],
    pub ratios: [f64; N_FEATURES],
}

/// Sample-covariance PCA. With `standardize`, features are divided by their
/// sample standard deviation first (constant features keep unit scale).
/// Each axis is signed so its largest-magnitude entry is positive.
pub fn fit_pca(rows: &[FeatureVector], standardize: bool) -> Result<PcaModel, ReportError> {
    let n = rows.len();
    if n < 2 {
        return Err(ReportError::TooFewRows(n));
    }
    let mut mean = [0.0; N_FEATURES];
    for r in rows {
        for k in 0..N_FEATURES {
            mean[k] += r.0[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = [1.0; N_FEATURES];
    if standardize {
        for k in 0..N_FEATURES {
            let ss: f64 = rows.iter().map(|r| (r.0[k] - mean[k]).powi(2)).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            if sd > 0.0 {
                scale[k] = sd;
            }
        }
    }
    let centered = DMatrix::from_fn(n, N_FEATURES, |i, k| (rows[i].0[k] - mean[k]) / scale[k]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let total: f64 = cov.trace();
    if !(total > 0.0) {
        return Err(ReportError::ZeroVariance);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..N_FEATURES).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut axes = [[0.0; N_FEATURES]; N_FEATURES];
    let mut variances = [0.0; N_FEATURES];
    for (row, &j) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(j);
        let lead = (0..N_FEATURES)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .expect("seven entries");
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..N_FEATURES {
            axes[row][k] = sign * col[k];
        }
        variances[row] = eig.eigenvalues[j].max(0.0);
    }
    let vsum: f64 = variances.iter().sum();
    let mut ratios = [0.0; N_FEATURES];
    for k in 0..N_FEATURES {
        ratios[k] = variances[k] / vsum;
    }
    Ok(PcaModel {
        mean,
        scale,
        axes,
        variances,
        ratios,
    })
}

impl PcaModel {
    /// Scores on all seven axes.
    pub fn transform(&self, y: &FeatureVector) -> [f64; N_FEATURES] {
        let mut z = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            z[k] = (y.0[k] - self.mean[k]) / self.scale[k];
        }
        let mut out = [0.0; N_FEATURES];
        for (o, axis) in out.iter_mut().zip(&self.axes) {
            *o = axis.iter().zip(&z).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn project2d(&self, y: &FeatureVector) -> (f64, f64) {
        let t = self.transform(y);
        (t[0], t[1])
    }

    /// Inverse of `transform` using every axis.
    pub fn reconstruct(&self, scores: &[f64; N_FEATURES]) -> FeatureVector {
        let mut y = [0.0; N_FEATURES];
        for (s, axis) in scores.iter().zip(&self.axes) {
            for k in 0..N_FEATURES {
                y[k] += s * axis[k];
            }
        }
        for k in 0..N_FEATURES {
            y[k] = y[k] * self.scale[k] + self.mean[k];
        }
        FeatureVector(y)
    }
}

/// Pearson correlation matrix; a constant feature correlates 0 with others.
pub fn correlation_matrix(rows: &[FeatureVector]) -> [[f64; N_FEATURES]; N_FEATURES] {
    let n = rows.len().max(1) as f64;
    let mut mean = [0.0; N_FEATURES];
    for r in rows {
        for k in 0..N_FEATURES {
            mean[k] += r.0[k] / n;
        }
    }
    let mut c = [[0.0; N_FEATURES]; N_FEATURES];
    for a in 0..N_FEATURES {
        for b in 0..N_FEATURES {
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for r in rows {
                let da = r.0[a] - mean[a];
                let db = r.0[b] - mean[b];
                sab += da * db;
                saa += da * da;
                sbb += db * db;
            }
            c[a][b] = if a == b {
                1.0
            } else if saa > 0.0 && sbb > 0.0 {
                sab / (saa.sqrt() * sbb.sqrt())
            } else {
                0.0
            };
        }
    }
    c
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

/// A model scored against one labelled split.
pub struct ScoredModel<'a> {
    pub name: String,
    pub split: String,
    pub model: &'a dyn Surrogate,
    pub data: &'a Dataset,
}

pub struct ReportInputs<'a> {
    pub registry: &'a Registry,
    pub dataset: Option<&'a Dataset>,
    pub trees: Option<&'a ExtraTreesModel>,
    pub scored: Vec<ScoredModel<'a>>,
    pub traces: Vec<(String, &'a OptTrace)>,
    pub standardize_pca: bool,
    pub cost_bins: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSummary {
    pub written: Vec<String>,
    /// Artifact name and why it was not produced.
    pub skipped: Vec<(String, String)>,
}

fn put(out_dir: &Path, name: &str, body: String, summary: &mut ReportSummary) -> Result<(), ReportError> {
    let path = out_dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ReportError::Io {
            path: parent.display().to_string(),
            source: e,
        })?;
    }
    std::fs::write(&path, body).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    summary.written.push(name.to_string());
    Ok(())
}

fn feature_header() -> String {
    FEATURE_NAMES.join(",")
}

/// Writes whatever artifacts the inputs allow; missing inputs are listed in
/// `skipped` rather than failing the bundle.
pub fn export_reports(inputs: &ReportInputs<'_>, out_dir: &Path) -> Result<ReportSummary, ReportError> {
    let mut s = ReportSummary::default();
    let skip = |s: &mut ReportSummary, name: &str, why: &str| s.skipped.push((name.to_string(), why.to_string()));

    let mut pca = None;
    match inputs.dataset {
        Some(d) => {
            let costs: Vec<f64> = d
                .records
                .iter()
                .map(|r| eval_f2(r.composition.as_slice(), inputs.registry))
                .collect();
            let mut body = String::from("bin_lo,bin_hi,count\n");
            for (lo, hi, c) in histogram(&costs, inputs.cost_bins) {
                writeln!(body, "{lo},{hi},{c}").unwrap();
            }
            put(out_dir, "cost_histogram.csv", body, &mut s)?;

            let rows = d.features();
            let corr = correlation_matrix(&rows);
            let mut body = format!("feature,{}\n", feature_header());
            for (k, row) in corr.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(body, "{},{}", FEATURE_NAMES[k], cells.join(",")).unwrap();
            }
            put(out_dir, "feature_correlation.csv", body, &mut s)?;

            match fit_pca(&rows, inputs.standardize_pca) {
                Ok(m) => {
                    let mut body = format!("component,variance,ratio,{}\n", feature_header());
                    for k in 0..N_FEATURES {
                        let axis: Vec<String> = m.axes[k].iter().map(|v| v.to_string()).collect();
                        writeln!(body, "{},{},{},{}", k + 1, m.variances[k], m.ratios[k], axis.join(",")).unwrap();
                    }
                    put(out_dir, "pca_model.csv", body, &mut s)?;
                    let mut body = String::from("row,pc1,pc2,ms_celsius\n");
                    for (i, r) in d.records.iter().enumerate() {
                        let (a, b) = m.project2d(&r.features);
                        writeln!(body, "{i},{a},{b},{}", r.ms_temperature).unwrap();
                    }
                    put(out_dir, "pca_dataset.csv", body, &mut s)?;
                    pca = Some(m);
                }
                Err(e) => skip(&mut s, "pca_model.csv", &e.to_string()),
            }
        }
        None => {
            for name in [
                "cost_histogram.csv",
                "feature_correlation.csv",
                "pca_model.csv",
                "pca_dataset.csv",
            ] {
                skip(&mut s, name, "no dataset");
            }
        }
    }

    match inputs.trees {
        Some(t) => {
            let mut body = String::from("feature,importance\n");
            for (name, v) in FEATURE_NAMES.iter().zip(&t.importance) {
                writeln!(body, "{name},{v}").unwrap();
            }
            put(out_dir, "feature_importance.csv", body, &mut s)?;
        }
        None => skip(&mut s, "feature_importance.csv", "no trees model"),
    }

    let mut metrics = String::from("model,split,r_squared,mae\n");
    for m in &inputs.scored {
        let pred = predict_all(m.model, m.data);
        let truth = m.data.targets();
        let name = format!("scatter_{}_{}.csv", m.name, m.split);
        match regression_metrics(&pred, &truth) {
            Ok(sc) => {
                writeln!(metrics, "{},{},{},{}", m.name, m.split, sc.r_squared, sc.mae).unwrap();
                let mut body = String::from("true,predicted\n");
                for (t, p) in truth.iter().zip(&pred) {
                    writeln!(body, "{t},{p}").unwrap();
                }
                put(out_dir, &name, body, &mut s)?;
            }
            Err(e) => skip(&mut s, &name, &e.to_string()),
        }
    }
    if !inputs.scored.is_empty() {
        put(out_dir, "model_metrics.csv", metrics, &mut s)?;
    }

    if !inputs.traces.is_empty() {
        let registry = inputs.registry;
        match &pca {
            Some(m) => {
                let mut body = String::from("trace,step,pc1,pc2,marker\n");
                for (label, t) in &inputs.traces {
                    let pts = t.iterates();
                    for (i, x) in pts.iter().enumerate() {
                        let z = crate::objective::project_onto_simplex(x, 100.0);
                        let Ok(y) = crate::features::features_ambient(&z, registry) else {
                            continue;
                        };
                        let (a, b) = m.project2d(&y);
                        let marker = if i == 0 {
                            "start"
                        } else if i + 1 == pts.len() {
                            "end"
                        } else {
                            ""
                        };
                        writeln!(body, "{label},{i},{a},{b},{marker}").unwrap();
                    }
                }
                put(out_dir, "pca_paths.csv", body, &mut s)?;
            }
            None => skip(&mut s, "pca_paths.csv", "no PCA model"),
        }
        let mut obj = String::from("trace,eval_index,rho,objective,merit\n");
        let mut time = String::from("trace,eval_index,rho,wall_time_s\n");
        let mut any = false;
        for (label, t) in &inputs.traces {
            if let OptTrace::Dfo { records, .. } = t {
                any = true;
                for r in records {
                    writeln!(obj, "{label},{},{},{},{}", r.eval_index, r.rho, r.objective, r.merit).unwrap();
                    writeln!(time, "{label},{},{},{}", r.eval_index, r.rho, r.wall_time_s).unwrap();
                }
            }
        }
        if any {
            put(out_dir, "objective_vs_rho.csv", obj, &mut s)?;
            put(out_dir, "timings/time_vs_rho.csv", time, &mut s)?;
        } else {
            skip(&mut s, "objective_vs_rho.csv", "no derivative-free traces");
        }
    } else {
        skip(&mut s, "pca_paths.csv", "no traces");
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, seed: u64) -> Vec<FeatureVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut y = [0.0; N_FEATURES];
                let a: f64 = rng.random_range(-1.0..1.0);
                for (k, v) in y.iter_mut().enumerate() {
                    *v = a * (k as f64 + 1.0) + rng.random_range(-0.5..0.5) * 10f64.powi(k as i32 % 3);
                }
                FeatureVector(y)
            })
            .collect()
    }

    #[test]
    fn spectrum_is_conserved_and_axes_orthonormal() {
        for standardize in [false, true] {
            let rows = random_rows(200, 1);
            let m = fit_pca(&rows, standardize).unwrap();
            assert!((m.ratios.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(m.ratios.windows(2).all(|w| w[0] >= w[1]));
            for a in 0..N_FEATURES {
                for b in 0..N_FEATURES {
                    let d: f64 = (0..N_FEATURES).map(|k| m.axes[a][k] * m.axes[b][k]).sum();
                    assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
                }
                let lead = m.axes[a]
                    .iter()
                    .copied()
                    .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
                assert!(lead > 0.0);
            }
            // total variance equals the covariance trace
            let n = rows.len() as f64;
            let trace: f64 = (0..N_FEATURES)
                .map(|k| {
                    let mu = rows.iter().map(|r| r.0[k]).sum::<f64>() / n;
                    rows.iter().map(|r| ((r.0[k] - mu) / m.scale[k]).powi(2)).sum::<f64>() / (n - 1.0)
                })
                .sum();
            assert!((m.variances.iter().sum::<f64>() - trace).abs() < 1e-10 * trace);
            for r in &rows {
                let back = m.reconstruct(&m.transform(r));
                for k in 0..N_FEATURES {
                    assert!((back.0[k] - r.0[k]).abs() < 1e-10 * (1.0 + r.0[k].abs()));
                }
            }
        }
    }

    #[test]
    fn rank_one_and_isotropic_data() {
        let dir = [1.0, -2.0, 0.5, 3.0, 0.0, 1.5, -1.0];
        let rows: Vec<FeatureVector> = (0..20)
            .map(|i| {
                let t = i as f64 - 7.0;
                let mut y = [0.0; N_FEATURES];
                for k in 0..N_FEATURES {
                    y[k] = 10.0 + t * dir[k];
                }
                FeatureVector(y)
            })
            .collect();
        let m = fit_pca(&rows, false).unwrap();
        assert!((m.ratios[0] - 1.0).abs() < 1e-12);
        assert!(m.ratios[1..].iter().all(|&r| r.abs() < 1e-12));
        let (a, b) = m.project2d(&FeatureVector(m.mean));
        assert_eq!((a, b), (0.0, 0.0));

        // ±1 on two features at the corners of a square: equal variances
        let square: Vec<FeatureVector> = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .iter()
            .map(|&(p, q)| FeatureVector([p, q, 0.0, 0.0, 0.0, 0.0, 0.0]))
            .collect();
        let m = fit_pca(&square, false).unwrap();
        assert!((m.ratios[0] - 0.5).abs() < 1e-12 && (m.ratios[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rotation_leaves_ratios_unchanged() {
        let rows = random_rows(150, 4);
        let (c, s) = (0.6f64, 0.8f64);
        let rotated: Vec<FeatureVector> = rows
            .iter()
            .map(|r| {
                let mut y = r.0;
                y[0] = c * r.0[0] - s * r.0[3];
                y[3] = s * r.0[0] + c * r.0[3];
                FeatureVector(y)
            })
            .collect();
        let a = fit_pca(&rows, false).unwrap();
        let b = fit_pca(&rotated, false).unwrap();
        for k in 0..N_FEATURES {
            assert!((a.ratios[k] - b.ratios[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_contracts_distances() {
        let rows = random_rows(60, 8);
        let m = fit_pca(&rows, true).unwrap();
        for w in rows.windows(2) {
            let (a1, a2) = m.project2d(&w[0]);
            let (b1, b2) = m.project2d(&w[1]);
            let plane = ((a1 - b1).powi(2) + (a2 - b2).powi(2)).sqrt();
            let full: f64 = (0..N_FEATURES)
                .map(|k| ((w[0].0[k] - w[1].0[k]) / m.scale[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(plane <= full + 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(matches!(
            fit_pca(&random_rows(1, 0), true),
            Err(ReportError::TooFewRows(1))
        ));
        let same = vec![FeatureVector([1.0; N_FEATURES]); 5];
        assert!(matches!(fit_pca(&same, false), Err(ReportError::ZeroVariance)));
    }

    #[test]
    fn correlation_and_histogram() {
        let rows = random_rows(50, 2);
        let c = correlation_matrix(&rows);
        for a in 0..N_FEATURES {
            assert_eq!(c[a][a], 1.0);
            for b in 0..N_FEATURES {
                assert!((c[a][b] - c[b][a]).abs() < 1e-15 && c[a][b].abs() <= 1.0 + 1e-12);
            }
        }
        let h = histogram(&[0.0, 0.5, 1.0, 1.0, 2.0], 2);
        assert_eq!(h, vec![(0.0, 1.0, 2), (1.0, 2.0, 3)]);
    }
}
