//! Experiments: perturbation recovery, multistart minimization and
//! weighted-sum sweeps.
//!
//! Restarts run in parallel. Every run is a pure function of its inputs and
//! its own seed, so results do not depend on the worker count.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cobyla::{minimize_cobyla, CobylaConfig};
use crate::dataset::{mix64, Dataset, Standardization};
use crate::error::{DriverError, ObjectiveError};
use crate::features::{features_ambient, Composition};
use crate::objective::{project_onto_simplex, project_onto_support, ConstraintSet, Normalizers, ObjectiveSpec};
use crate::surrogate::Surrogate;
use crate::trace::{OptTrace, Termination, TimeColumn};
use crate::trust_constr::{minimize_trust_constr, ConstrainedProblem, TrustConstrConfig, ValueGrad};

/// Half-width of the uniform jitter applied to the non-zero percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub u: f64,
    pub seed: u64,
}

/// Pre-projection offsets, one per component; zero outside the support.
pub fn perturbation_offsets(x: &Composition, cfg: &PerturbationConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed));
    x.as_slice()
        .iter()
        .map(|&v| {
            if v > 0.0 && cfg.u > 0.0 {
                rng.random_range(-cfg.u..cfg.u)
            } else {
                0.0
            }
        })
        .collect()
}

/// Jitters the non-zero components and projects back onto the simplex face
/// of the original support, so zeros stay zero.
pub fn perturb_alloy(x: &Composition, cfg: &PerturbationConfig) -> Composition {
    if cfg.u <= 0.0 {
        return x.clone();
    }
    let support: Vec<bool> = x.as_slice().iter().map(|&v| v > 0.0).collect();
    let moved: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(perturbation_offsets(x, cfg))
        .map(|(a, d)| a + d)
        .collect();
    Composition::from_projection(project_onto_support(&moved, &support, 100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerChoice {
    Dfo(CobylaConfig),
    Grad(TrustConstrConfig),
}

impl OptimizerChoice {
    pub fn label(&self) -> &'static str {
        match self {
            OptimizerChoice::Dfo(_) => "dfo",
            OptimizerChoice::Grad(_) => "grad",
        }
    }
}

/// One optimization from one starting alloy.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub x0: Composition,
    pub x_final: Composition,
    pub f1: Option<f64>,
    pub f2: f64,
    pub predicted_ts: Option<f64>,
    /// Scalarized value under this run's own normalizers.
    pub value: f64,
    pub g2: Option<f64>,
    pub normalizers: Normalizers,
    pub termination: Termination,
    pub n_evals: usize,
    pub trace: OptTrace,
    pub warnings: Vec<String>,
}

/// Minimizes the scalarized objective from `x0`, with normalizers captured
/// at `x0`. The proximity constraint is optional.
pub fn optimize_from(
    spec: &ObjectiveSpec<'_>,
    constraints: Option<&ConstraintSet>,
    x0: &Composition,
    optimizer: &OptimizerChoice,
) -> Result<RunOutcome, DriverError> {
    let mut spec = *spec;
    let warnings = spec.capture_normalizers(x0.as_slice())?;
    let reg = spec.registry;
    let (x_final, termination, n_evals, trace) = match optimizer {
        OptimizerChoice::Dfo(cfg) => {
            let m = usize::from(constraints.is_some());
            let calcfc = |x: &[f64], con: &mut [f64]| {
                let z = project_onto_simplex(x, 100.0);
                if let Some(cs) = constraints {
                    con[0] = cs.g2(&z, reg).map_or(f64::NAN, |g| -g.value);
                }
                spec.scalarized(&z).unwrap_or(f64::NAN)
            };
            let r = minimize_cobyla(calcfc, m, x0.as_slice(), cfg)?;
            (project_onto_simplex(&r.x, 100.0), r.termination, r.n_evals, r.trace)
        }
        OptimizerChoice::Grad(cfg) => {
            if spec.lambda1 > 0.0 && !spec.surrogate.is_some_and(|s| s.is_differentiable()) {
                return Err(ObjectiveError::UnsupportedSurrogate.into());
            }
            let objective: ValueGrad =
                Box::new(
                    move |x: &[f64], g: &mut [f64]| match (spec.scalarized(x), spec.grad_scalarized(x)) {
                        (Ok(v), Ok(grad)) => {
                            g.copy_from_slice(&grad);
                            v
                        }
                        _ => f64::NAN,
                    },
                );
            let inequality = constraints.map(|cs| -> ValueGrad {
                Box::new(
                    move |x: &[f64], g: &mut [f64]| match (cs.g2(x, reg), cs.g2_gradient(x, reg)) {
                        (Ok(v), Ok(grad)) => {
                            g.copy_from_slice(&grad);
                            v.value
                        }
                        _ => f64::NAN,
                    },
                )
            });
            let problem = ConstrainedProblem {
                objective,
                inequality,
                sum_target: 100.0,
                nonnegative: true,
            };
            let r = minimize_trust_constr(problem, x0.as_slice(), cfg)?;
            (r.x, r.termination, r.n_evals, r.trace)
        }
    };
    let eval = spec.evaluate(&x_final)?;
    let g2 = match constraints {
        Some(cs) => Some(cs.g2(&x_final, reg)?.value),
        None => None,
    };
    Ok(RunOutcome {
        x0: x0.clone(),
        x_final: Composition::from_projection(x_final),
        f1: eval.f1,
        f2: eval.f2,
        predicted_ts: eval.predicted_ts,
        value: eval.value,
        g2,
        normalizers: spec.normalizers,
        termination,
        n_evals,
        trace,
        warnings,
    })
}

/// Index of the record whose temperature equals `ts` (within 1e-6 °C);
/// the lowest index wins.
pub fn find_target_by_temperature(d: &Dataset, ts: f64) -> Result<usize, DriverError> {
    d.records
        .iter()
        .position(|r| (r.ms_temperature - ts).abs() <= 1e-6)
        .ok_or(DriverError::NoSuchTarget(ts))
}

/// Euclidean distance between the features of two compositions after
/// standardization.
pub fn feature_distance(
    a: &Composition,
    b: &Composition,
    reg: &crate::registry::Registry,
    scaling: &Standardization,
) -> Result<f64, DriverError> {
    let ya = scaling.apply(&features_ambient(a.as_slice(), reg).map_err(ObjectiveError::from)?);
    let yb = scaling.apply(&features_ambient(b.as_slice(), reg).map_err(ObjectiveError::from)?);
    Ok(ya.distance(&yb))
}

/// A surrogate paired with the optimizer that drives it.
#[derive(Clone, Copy)]
pub struct Solver<'a> {
    pub surrogate: &'a dyn Surrogate,
    pub optimizer: OptimizerChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRun {
    pub optimizer: &'static str,
    pub u: f64,
    pub seed: u64,
    pub outcome: Result<RunOutcome, String>,
    /// Standardized feature distance from the final alloy to the target alloy.
    pub feature_distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RecoveryConfig {
    pub u_values: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Perturbs the target alloy, then asks each solver to recover an alloy with
/// the target's temperature (`λ1 = 1`, `λ2 = 0`). Failed runs are kept with
/// their error message.
pub fn run_recovery_experiment(
    dataset: &Dataset,
    target: usize,
    solvers: &[Solver<'_>],
    constraints: Option<&ConstraintSet>,
    reg: &crate::registry::Registry,
    cfg: &RecoveryConfig,
) -> Result<Vec<RecoveryRun>, DriverError> {
    let record = dataset
        .records
        .get(target)
        .ok_or_else(|| DriverError::Invalid(format!("no record {target}")))?;
    let scaling = Standardization::fit(&dataset.features());
    let mut jobs = Vec::new();
    for solver in solvers {
        for &u in &cfg.u_values {
            if !(u >= 0.0) {
                return Err(DriverError::Invalid(format!("perturbation half-width {u} is negative")));
            }
            for &seed in &cfg.seeds {
                jobs.push((*solver, u, seed));
            }
        }
    }
    let runs = jobs
        .par_iter()
        .map(|&(solver, u, seed)| {
            let x0 = perturb_alloy(&record.composition, &PerturbationConfig { u, seed });
            let outcome = ObjectiveSpec::new(1.0, 0.0, record.ms_temperature, Some(solver.surrogate), reg)
                .map_err(DriverError::from)
                .and_then(|spec| optimize_from(&spec, constraints, &x0, &solver.optimizer))
                .map_err(|e| e.to_string());
            let feature_distance = outcome
                .as_ref()
                .ok()
                .and_then(|o| feature_distance(&o.x_final, &record.composition, reg, &scaling).ok());
            RecoveryRun {
                optimizer: solver.optimizer.label(),
                u,
                seed,
                outcome,
                feature_distance,
            }
        })
        .collect();
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartRun {
    /// Dataset row used as the starting alloy.
    pub start_row: usize,
    pub outcome: Result<RunOutcome, String>,
    /// Scalarized value under the experiment's reference normalizers.
    pub reference_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub lambda: (f64, f64),
    pub ts_target: f64,
    pub optimizer: &'static str,
    /// Normalizers at the first restart's starting alloy; used to compare runs.
    pub reference: Normalizers,
    pub runs: Vec<RestartRun>,
    pub best: usize,
}

impl ExperimentResult {
    pub fn best_run(&self) -> &RunOutcome {
        self.runs[self.best].outcome.as_ref().expect("best run succeeded")
    }

    pub fn best_value(&self) -> f64 {
        self.runs[self.best].reference_value.expect("best run succeeded")
    }
}

/// Draws `n` distinct dataset rows; deterministic in `seed`.
pub fn draw_start_rows(dataset_len: usize, n: usize, seed: u64) -> Result<Vec<usize>, DriverError> {
    if n == 0 || n > dataset_len {
        return Err(DriverError::Invalid(format!(
            "need between 1 and {dataset_len} restarts, got {n}"
        )));
    }
    let mut rows: Vec<usize> = (0..dataset_len).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x5354_4152_5453)));
    rows.truncate(n);
    Ok(rows)
}

/// Independent runs from the given dataset rows; the best run minimizes the
/// scalarized value re-normalized at the first row's alloy.
pub fn run_multistart_from(
    spec: &ObjectiveSpec<'_>,
    constraints: Option<&ConstraintSet>,
    optimizer: &OptimizerChoice,
    dataset: &Dataset,
    start_rows: &[usize],
) -> Result<ExperimentResult, DriverError> {
    if start_rows.is_empty() {
        return Err(DriverError::Invalid("need at least one restart".into()));
    }
    let starts: Vec<&Composition> = start_rows
        .iter()
        .map(|&r| {
            dataset
                .records
                .get(r)
                .map(|rec| &rec.composition)
                .ok_or_else(|| DriverError::Invalid(format!("no record {r}")))
        })
        .collect::<Result<_, _>>()?;
    let mut reference = *spec;
    reference.capture_normalizers(starts[0].as_slice())?;

    let runs: Vec<RestartRun> = start_rows
        .par_iter()
        .zip(starts.par_iter())
        .map(|(&row, x0)| {
            let outcome = optimize_from(spec, constraints, x0, optimizer).map_err(|e| e.to_string());
            let reference_value = outcome
                .as_ref()
                .ok()
                .and_then(|o| reference.scalarized(o.x_final.as_slice()).ok());
            RestartRun {
                start_row: row,
                outcome,
                reference_value,
            }
        })
        .collect();

    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.reference_value.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    let Some(best) = best else {
        let msgs: Vec<String> = runs
            .iter()
            .map(|r| format!("row {}: {}", r.start_row, r.outcome.as_ref().err().map_or("ok", |s| s)))
            .collect();
        return Err(DriverError::AllRunsFailed(runs.len(), msgs.join("; ")));
    };
    Ok(ExperimentResult {
        lambda: (spec.lambda1, spec.lambda2),
        ts_target: spec.ts_target,
        optimizer: optimizer.label(),
        reference: reference.normalizers,
        runs,
        best,
    })
}

/// Multistart from `n_restarts` distinct random dataset alloys.
pub fn run_multistart(
    spec: &ObjectiveSpec<'_>,
    constraints: Option<&ConstraintSet>,
    optimizer: &OptimizerChoice,
    dataset: &Dataset,
    n_restarts: usize,
    seed: u64,
) -> Result<ExperimentResult, DriverError> {
    let rows = draw_start_rows(dataset.len(), n_restarts, seed)?;
    run_multistart_from(spec, constraints, optimizer, dataset, &rows)
}

/// Default target temperature of the sweep experiments, °C.
pub const SWEEP_DEFAULT_TS: f64 = 100.0;

/// The three weightings of the trade-off study.
pub const DEFAULT_LAMBDAS: [(f64, f64); 3] = [(0.25, 0.75), (0.5, 0.5), (0.75, 0.25)];

/// One multistart experiment per weight pair, all from the same start rows.
#[allow(clippy::too_many_arguments)]
pub fn run_lambda_sweep(
    lambdas: &[(f64, f64)],
    ts_target: f64,
    surrogate: Option<&dyn Surrogate>,
    reg: &crate::registry::Registry,
    constraints: Option<&ConstraintSet>,
    optimizer: &OptimizerChoice,
    dataset: &Dataset,
    n_restarts: usize,
    seed: u64,
) -> Result<Vec<ExperimentResult>, DriverError> {
    let rows = draw_start_rows(dataset.len(), n_restarts, seed)?;
    lambdas
        .iter()
        .map(|&(l1, l2)| {
            let spec = ObjectiveSpec::new(l1, l2, ts_target, surrogate, reg)?;
            run_multistart_from(&spec, constraints, optimizer, dataset, &rows)
        })
        .collect()
}

/// `lambda1,lambda2,optimizer,best_row,f1,f2,value,g2` plus one column per element.
pub fn write_sweep_summary<W: Write>(
    mut w: W,
    results: &[ExperimentResult],
    reg: &crate::registry::Registry,
) -> std::io::Result<()> {
    let symbols: Vec<&str> = reg.symbols().collect();
    writeln!(
        w,
        "lambda1,lambda2,optimizer,best_row,f1,f2,value,g2,{}",
        symbols.join(",")
    )?;
    for r in results {
        let b = r.best_run();
        let cells: Vec<String> = b.x_final.as_slice().iter().map(|v| v.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.lambda.0,
            r.lambda.1,
            r.optimizer,
            r.runs[r.best].start_row,
            opt(b.f1),
            b.f2,
            r.best_value(),
            opt(b.g2),
            cells.join(",")
        )?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> DriverError {
    DriverError::Invalid(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), DriverError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| io_err(path, e))?;
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Writes `traces/<label>.csv` (blank time column), `timings/<label>.csv` and
/// `runs.csv` for a set of labelled runs.
pub fn write_runs(
    dir: &Path,
    runs: &[(String, &Result<RunOutcome, String>)],
    reg: &crate::registry::Registry,
) -> Result<(), DriverError> {
    let traces = dir.join("traces");
    let timings = dir.join("timings");
    for d in [&traces, &timings] {
        std::fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    let symbols: Vec<&str> = reg.symbols().collect();
    let mut summary = format!(
        "run,status,termination,n_evals,f1,f2,predicted_ts,value,g2,{}\n",
        symbols.join(",")
    );
    for (label, outcome) in runs {
        match outcome {
            Ok(o) => {
                write_file(&traces.join(format!("{label}.csv")), |b| {
                    o.trace.write_csv(b, TimeColumn::Blank)
                })?;
                write_file(&timings.join(format!("{label}.csv")), |b| o.trace.write_timing_csv(b))?;
                let cells: Vec<String> = o.x_final.as_slice().iter().map(|v| v.to_string()).collect();
                summary.push_str(&format!(
                    "{label},ok,{},{},{},{},{},{},{},{}\n",
                    o.termination.as_str(),
                    o.n_evals,
                    opt(o.f1),
                    o.f2,
                    opt(o.predicted_ts),
                    o.value,
                    opt(o.g2),
                    cells.join(",")
                ));
            }
            Err(e) => {
                let msg = e.replace([',', '\n'], ";");
                summary.push_str(&format!(
                    "{label},failed:{msg},,,,,,,{}\n",
                    ",".repeat(symbols.len() - 1)
                ));
            }
        }
    }
    let path = dir.join("runs.csv");
    std::fs::write(&path, summary).map_err(|e| io_err(&path, e))
}

/// Seed for run `k` of an experiment with master `seed`.
pub fn run_seed(seed: u64, k: u64) -> u64 {
    mix64(seed ^ mix64(k))
}

/// Random composition with `k` non-zero components, for tests and synthetic data.
pub fn random_composition(rng: &mut impl Rng, n: usize, k: usize) -> Composition {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut v = vec![0.0; n];
    for &i in idx.iter().take(k.clamp(1, n)) {
        v[i] = rng.random_range(0.05..1.0);
    }
    let s: f64 = v.iter().sum();
    Composition::from_projection(v.iter().map(|x| 100.0 * x / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AlloyRecord, NeighborIndex};
    use crate::registry::Registry;

    /// Smooth analytic stand-in for a trained network.
    struct Linear {
        w: [f64; 7],
        b: f64,
    }

    impl Surrogate for Linear {
        fn predict(&self, y: &crate::features::FeatureVector) -> f64 {
            self.b + y.0.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>()
        }
        fn input_gradient(&self, _: &crate::features::FeatureVector) -> Option<[f64; 7]> {
            Some(self.w)
        }
        fn is_differentiable(&self) -> bool {
            true
        }
    }

    fn toy() -> (Registry, Dataset) {
        let reg = Registry::default_39()
            .subset_by_symbols(&["Ni", "Ti", "Cu", "Hf"])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records = (0..30)
            .map(|i| {
                let c = random_composition(&mut rng, 4, 2 + i % 3);
                AlloyRecord::new(c, 50.0 + i as f64, &reg).unwrap()
            })
            .collect();
        (reg, Dataset::new(records))
    }

    /// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} exp(-2 k² λ²)`.
    fn kolmogorov_q(lambda: f64) -> f64 {
        let mut s = 0.0;
        for k in 1..200 {
            let k = k as f64;
            s += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        }
        s.clamp(0.0, 1.0)
    }

    #[test]
    fn perturbation_draw_is_uniform() {
        let x = Composition::new(vec![50.0, 30.0, 0.0, 20.0]).unwrap();
        let u = 10.0;
        let mut draws: Vec<f64> = (0..10_000)
            .map(|s| perturbation_offsets(&x, &PerturbationConfig { u, seed: s })[1])
            .collect();
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = (v + u) / (2.0 * u);
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        let p = kolmogorov_q((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d);
        assert!(p > 0.01, "KS D={d}, p={p}");
    }

    #[test]
    fn perturbation_keeps_support_and_sum() {
        let x = Composition::new(vec![50.0, 30.0, 0.0, 20.0]).unwrap();
        assert_eq!(perturb_alloy(&x, &PerturbationConfig { u: 0.0, seed: 9 }), x);
        for seed in 0..50 {
            let p = perturb_alloy(&x, &PerturbationConfig { u: 10.0, seed });
            assert_eq!(p.as_slice()[2], 0.0);
            assert!((p.as_slice().iter().sum::<f64>() - 100.0).abs() < 1e-9);
            assert!(p.as_slice().iter().all(|&v| v >= 0.0));
            assert_ne!(p, x);
            assert_eq!(p, perturb_alloy(&x, &PerturbationConfig { u: 10.0, seed }));
        }
    }

    #[test]
    fn gradient_recovery_from_an_exact_start_stays_put() {
        let (reg, data) = toy();
        let s = Linear {
            w: [0.01, 0.0, 2.0, 30.0, 0.0, 10.0, 0.0],
            b: 0.0,
        };
        // retarget so the surrogate interpolates record 0 exactly
        let y0 = data.records[0].features;
        let target = s.predict(&y0);
        let mut d = data.clone();
        d.records[0].ms_temperature = target;
        let solver = Solver {
            surrogate: &s,
            optimizer: OptimizerChoice::Grad(TrustConstrConfig::default()),
        };
        let runs = run_recovery_experiment(
            &d,
            0,
            &[solver],
            None,
            &reg,
            &RecoveryConfig {
                u_values: vec![0.0],
                seeds: vec![1],
            },
        )
        .unwrap();
        let o = runs[0].outcome.as_ref().unwrap();
        assert!(o.f1.unwrap() < 1e-8);
        assert!(runs[0].feature_distance.unwrap() < 1e-9);
    }

    #[test]
    fn cost_only_multistart_never_worsens_the_best_start() {
        let (reg, data) = toy();
        let cs = ConstraintSet::new(0.4, NeighborIndex::standardized(data.features()).unwrap()).unwrap();
        for choice in [
            OptimizerChoice::Dfo(CobylaConfig {
                max_evals: 400,
                ..Default::default()
            }),
            OptimizerChoice::Grad(TrustConstrConfig {
                max_iter: 200,
                ..Default::default()
            }),
        ] {
            let spec = ObjectiveSpec::new(0.0, 1.0, 100.0, None, &reg).unwrap();
            let r = run_multistart(&spec, Some(&cs), &choice, &data, 5, 11).unwrap();
            let best_f2 = r.best_run().f2;
            for run in &r.runs {
                let start = crate::objective::eval_f2(data.records[run.start_row].composition.as_slice(), &reg);
                assert!(best_f2 <= start + 1e-12, "{}: {best_f2} > {start}", choice.label());
            }
            for run in &r.runs {
                assert!(r.best_value() <= run.reference_value.unwrap());
            }
        }
    }

    #[test]
    fn restart_order_does_not_change_the_best_value() {
        let (reg, data) = toy();
        let spec = ObjectiveSpec::new(0.0, 1.0, 100.0, None, &reg).unwrap();
        let choice = OptimizerChoice::Grad(TrustConstrConfig {
            max_iter: 100,
            ..Default::default()
        });
        let rows = draw_start_rows(data.len(), 4, 2).unwrap();
        let mut rev = rows.clone();
        rev.reverse();
        // Same first row keeps the reference normalization fixed.
        rev.swap(0, 3);
        let a = run_multistart_from(&spec, None, &choice, &data, &rows).unwrap();
        let b = run_multistart_from(&spec, None, &choice, &data, &rev).unwrap();
        assert_eq!(a.best_value(), b.best_value());
        let single = run_multistart_from(&spec, None, &choice, &data, &rows[..1]).unwrap();
        let direct = optimize_from(&spec, None, &data.records[rows[0]].composition, &choice).unwrap();
        assert_eq!(single.best_run().x_final, direct.x_final);
        assert_eq!(single.best_run().trace.to_csv_string(), direct.trace.to_csv_string());
    }

    #[test]
    fn sweep_and_target_lookup() {
        let (reg, data) = toy();
        assert_eq!(find_target_by_temperature(&data, 53.0).unwrap(), 3);
        assert!(matches!(
            find_target_by_temperature(&data, 90.45),
            Err(DriverError::NoSuchTarget(_))
        ));
        let s = Linear {
            w: [0.0, 0.0, 1.0, 20.0, 0.0, 5.0, 0.0],
            b: 0.0,
        };
        let choice = OptimizerChoice::Grad(TrustConstrConfig {
            max_iter: 100,
            ..Default::default()
        });
        let res = run_lambda_sweep(
            &DEFAULT_LAMBDAS,
            SWEEP_DEFAULT_TS,
            Some(&s),
            &reg,
            None,
            &choice,
            &data,
            3,
            5,
        )
        .unwrap();
        assert_eq!(res.len(), 3);
        let mut buf = Vec::new();
        write_sweep_summary(&mut buf, &res, &reg).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("lambda1,lambda2,optimizer,best_row,f1,f2,value,g2,Ni,Ti,Cu,Hf"));
        let bad = run_lambda_sweep(&[(0.5, 0.6)], 100.0, Some(&s), &reg, None, &choice, &data, 3, 5);
        assert!(bad.is_err());
    }

    #[test]
    fn non_differentiable_surrogate_is_rejected_for_the_gradient_path() {
        struct Flat;
        impl Surrogate for Flat {
            fn predict(&self, _: &crate::features::FeatureVector) -> f64 {
                1.0
            }
        }
        let (reg, data) = toy();
        let spec = ObjectiveSpec::new(1.0, 0.0, 100.0, Some(&Flat), &reg).unwrap();
        let r = optimize_from(
            &spec,
            None,
            &data.records[0].composition,
            &OptimizerChoice::Grad(TrustConstrConfig::default()),
        );
        assert!(matches!(
            r,
            Err(DriverError::Objective(ObjectiveError::UnsupportedSurrogate))
        ));
        let err = run_multistart(
            &spec,
            None,
            &OptimizerChoice::Grad(TrustConstrConfig::default()),
            &data,
            2,
            0,
        );
        assert!(matches!(err, Err(DriverError::AllRunsFailed(2, _))));
    }
}
