use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};

use alloy_design::dataset::{dedup_median, ingest_csv, split, Dataset, NeighborIndex, SplitConfig};
use alloy_design::driver::{
    find_target_by_temperature, run_lambda_sweep, run_multistart, run_recovery_experiment, write_runs,
    write_sweep_summary, ExperimentResult, OptimizerChoice, RecoveryConfig, RunOutcome, Solver,
};
use alloy_design::manifest::{ExperimentKind, OptimizerKind, RunManifest};
use alloy_design::mlp::{fit_mlp, write_loss_history, MlpModel};
use alloy_design::objective::{ConstraintSet, ObjectiveSpec};
use alloy_design::report::{export_reports, fit_pca, ReportInputs, ScoredModel};
use alloy_design::surrogate::{score, Surrogate, SurrogateModel};
use alloy_design::synthetic::{generate, median_target, synthetic_registry, GroundTruth, SyntheticConfig};
use alloy_design::trace::OptTrace;
use alloy_design::trees::{train_extra_trees, ExtraTreesModel};
use alloy_design::Registry;

#[derive(Parser)]
#[command(name = "alloy-design", version, about = "Surrogate-based alloy composition design")]
struct Cli {
    /// Run manifest (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Master seed; overrides `pipeline.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an alloy CSV and write it back with computed features.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Merge duplicate compositions by median temperature.
    Dedup {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Shuffle and split into train.csv and test.csv.
    Split {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train surrogates and write models plus metrics.
    Train {
        #[arg(long, value_enum, default_value_t = ModelArg::Both)]
        model: ModelArg,
    },
    /// Score a saved model on the train and test splits.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
    },
    /// One multistart optimization with the manifest's objective.
    Optimize {
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
        #[arg(long)]
        ts_target: Option<f64>,
        /// Temperature weight; the cost weight becomes `1 - lambda1`.
        #[arg(long)]
        lambda1: Option<f64>,
    },
    /// Recovery, cost-only, weight sweep or initial-radius sweep.
    Experiment {
        #[arg(long, value_enum)]
        kind: Option<ExperimentArg>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
    },
    /// Principal components of the dataset features.
    Pca {
        /// Use raw rather than standardized features.
        #[arg(long)]
        unstandardized: bool,
    },
    /// Figure data: histograms, correlations, PCA, importances, scatter.
    Report,
    /// Write a synthetic registry and dataset with a known temperature law.
    Synth {
        #[arg(long, default_value_t = 800)]
        n_alloys: usize,
        #[arg(long, default_value_t = 5.0)]
        noise_sd: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Trees,
    Mlp,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Dfo,
    Grad,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Recovery,
    Cost,
    Sweep,
    RhobegSweep,
}

/// Exit 2 for bad inputs, 1 for failures while running.
enum CliError {
    Input(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn driver_err(e: alloy_design::DriverError) -> CliError {
    use alloy_design::DriverError as D;
    match e {
        D::NoSuchTarget(_) | D::Invalid(_) | D::Dataset(_) => input(e),
        _ => runtime(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

struct Ctx {
    manifest: RunManifest,
    out: PathBuf,
    seed: u64,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut manifest = match &cli.manifest {
        Some(p) => RunManifest::load(p).map_err(input)?,
        None => RunManifest::default(),
    };
    if let Some(s) = cli.seed {
        manifest.pipeline.seed = s;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| manifest.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| input(format!("{}: {e}", out.display())))?;
    let ctx = Ctx {
        seed: manifest.pipeline.seed,
        manifest,
        out,
    };
    match cli.command {
        Command::Ingest { input } => cmd_ingest(&ctx, input),
        Command::Dedup { input } => cmd_dedup(&ctx, input),
        Command::Split { input, fraction } => cmd_split(&ctx, input, fraction),
        Command::Train { model } => cmd_train(&ctx, model),
        Command::Evaluate { model } => cmd_evaluate(&ctx, &model),
        Command::Optimize {
            restarts,
            optimizer,
            ts_target,
            lambda1,
        } => {
            let mut ctx = ctx;
            apply_overrides(&mut ctx.manifest, restarts, optimizer)?;
            if let Some(t) = ts_target {
                ctx.manifest.objective.ts_target = t;
            }
            if let Some(l) = lambda1 {
                ctx.manifest.objective.lambda1 = l;
                ctx.manifest.objective.lambda2 = 1.0 - l;
            }
            ctx.manifest.validate().map_err(input)?;
            cmd_optimize(&ctx)
        }
        Command::Experiment {
            kind,
            restarts,
            optimizer,
        } => {
            let mut ctx = ctx;
            apply_overrides(&mut ctx.manifest, restarts, optimizer)?;
            if let Some(k) = kind {
                ctx.manifest.experiment.kind = match k {
                    ExperimentArg::Recovery => ExperimentKind::Recovery,
                    ExperimentArg::Cost => ExperimentKind::Cost,
                    ExperimentArg::Sweep => ExperimentKind::Sweep,
                    ExperimentArg::RhobegSweep => ExperimentKind::RhobegSweep,
                };
            }
            cmd_experiment(&ctx)
        }
        Command::Pca { unstandardized } => cmd_pca(&ctx, !unstandardized),
        Command::Report => cmd_report(&ctx),
        Command::Synth { n_alloys, noise_sd } => cmd_synth(&ctx, n_alloys, noise_sd),
    }
}

fn apply_overrides(m: &mut RunManifest, restarts: Option<usize>, optimizer: Option<OptimizerArg>) -> CliResult<()> {
    if let Some(r) = restarts {
        if r == 0 {
            return Err(input("--restarts must be at least 1"));
        }
        m.experiment.restarts = r;
    }
    if let Some(o) = optimizer {
        m.optimizer.kind = match o {
            OptimizerArg::Dfo => OptimizerKind::Dfo,
            OptimizerArg::Grad => OptimizerKind::Grad,
        };
    }
    Ok(())
}

// ---------------------------------------------------------------- data

fn registry(m: &RunManifest) -> CliResult<Registry> {
    match (&m.paths.elements, &m.paths.enthalpy) {
        (Some(e), Some(h)) => Registry::load(e, h).map_err(input),
        _ => Ok(Registry::default_39()),
    }
}

fn dataset_path(m: &RunManifest, arg: Option<PathBuf>) -> CliResult<PathBuf> {
    arg.or_else(|| m.paths.dataset.clone())
        .ok_or_else(|| input("no dataset: pass --input or set paths.dataset"))
}

struct Prepared {
    reg: Registry,
    data: Dataset,
    train: Dataset,
    test: Dataset,
}

/// Ingest, optional median merge, split.
fn prepare(ctx: &Ctx) -> CliResult<Prepared> {
    let m = &ctx.manifest;
    let reg = registry(m)?;
    let raw = ingest_csv(&dataset_path(m, None)?, &reg).map_err(input)?;
    let data = if m.pipeline.dedup { dedup_median(&raw) } else { raw };
    let cfg = SplitConfig::new(m.pipeline.train_fraction, ctx.seed).map_err(input)?;
    let (train, test) = split(&data, &cfg).map_err(input)?;
    Ok(Prepared { reg, data, train, test })
}

fn save_dataset(d: &Dataset, path: &Path, reg: &Registry) -> CliResult<()> {
    d.save(path, reg).map_err(runtime)?;
    println!("wrote {} ({} rows)", path.display(), d.len());
    Ok(())
}

fn cmd_ingest(ctx: &Ctx, arg: Option<PathBuf>) -> CliResult<()> {
    let reg = registry(&ctx.manifest)?;
    let d = ingest_csv(&dataset_path(&ctx.manifest, arg)?, &reg).map_err(input)?;
    save_dataset(&d, &ctx.out.join("dataset.csv"), &reg)
}

fn cmd_dedup(ctx: &Ctx, arg: Option<PathBuf>) -> CliResult<()> {
    let reg = registry(&ctx.manifest)?;
    let d = ingest_csv(&dataset_path(&ctx.manifest, arg)?, &reg).map_err(input)?;
    save_dataset(&dedup_median(&d), &ctx.out.join("dataset_dedup.csv"), &reg)
}

fn cmd_split(ctx: &Ctx, arg: Option<PathBuf>, fraction: Option<f64>) -> CliResult<()> {
    let m = &ctx.manifest;
    let reg = registry(m)?;
    let raw = ingest_csv(&dataset_path(m, arg)?, &reg).map_err(input)?;
    let data = if m.pipeline.dedup { dedup_median(&raw) } else { raw };
    let cfg = SplitConfig::new(fraction.unwrap_or(m.pipeline.train_fraction), ctx.seed).map_err(input)?;
    let (train, test) = split(&data, &cfg).map_err(input)?;
    save_dataset(&train, &ctx.out.join("train.csv"), &reg)?;
    save_dataset(&test, &ctx.out.join("test.csv"), &reg)
}

// ---------------------------------------------------------------- models

fn train_trees(ctx: &Ctx, p: &Prepared) -> CliResult<ExtraTreesModel> {
    if let Some(f) = &ctx.manifest.models.trees_file {
        return match SurrogateModel::load(f).map_err(input)? {
            SurrogateModel::Trees(t) => Ok(t),
            other => Err(input(format!(
                "{} holds a {} model, expected trees",
                f.display(),
                other.name()
            ))),
        };
    }
    train_extra_trees(&p.train, &ctx.manifest.models.trees_params(ctx.seed)).map_err(runtime)
}

fn train_mlp(ctx: &Ctx, p: &Prepared) -> CliResult<(MlpModel, Option<Vec<f64>>)> {
    if let Some(f) = &ctx.manifest.models.mlp_file {
        return match SurrogateModel::load(f).map_err(input)? {
            SurrogateModel::Mlp(m) => Ok((m, None)),
            other => Err(input(format!(
                "{} holds a {} model, expected mlp",
                f.display(),
                other.name()
            ))),
        };
    }
    let m = &ctx.manifest.models;
    let o = fit_mlp(&m.mlp_arch(), &p.train, &m.mlp_train(ctx.seed)).map_err(runtime)?;
    Ok((o.model, Some(o.loss_history)))
}

fn metrics_rows(name: &str, model: &dyn Surrogate, p: &Prepared) -> CliResult<String> {
    let mut s = String::new();
    for (split_name, d) in [("train", &p.train), ("test", &p.test)] {
        let sc = score(model, d).map_err(runtime)?;
        s.push_str(&format!("{name},{split_name},{},{}\n", sc.r_squared, sc.mae));
        println!("{name} {split_name}: R2 = {:.4}, MAE = {:.3}", sc.r_squared, sc.mae);
    }
    Ok(s)
}

fn write_text(path: &Path, body: &str) -> CliResult<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| runtime(format!("{}: {e}", d.display())))?;
    }
    std::fs::write(path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_train(ctx: &Ctx, which: ModelArg) -> CliResult<()> {
    let p = prepare(ctx)?;
    let mut metrics = String::from("model,split,r_squared,mae\n");
    let models = ctx.out.join("models");
    std::fs::create_dir_all(&models).map_err(runtime)?;
    if which != ModelArg::Mlp {
        let t = train_trees(ctx, &p)?;
        metrics.push_str(&metrics_rows("trees", &t, &p)?);
        SurrogateModel::Trees(t)
            .save(&models.join("trees.json"))
            .map_err(runtime)?;
    }
    if which != ModelArg::Trees {
        let (m, history) = train_mlp(ctx, &p)?;
        metrics.push_str(&metrics_rows("mlp", &m, &p)?);
        if let Some(h) = history {
            let mut buf = Vec::new();
            write_loss_history(&mut buf, &h).map_err(runtime)?;
            write_text(&ctx.out.join("mlp_loss.csv"), &String::from_utf8_lossy(&buf))?;
        }
        SurrogateModel::Mlp(m).save(&models.join("mlp.json")).map_err(runtime)?;
    }
    write_text(&ctx.out.join("metrics.csv"), &metrics)?;
    write_metadata(ctx, "train", None, None)
}

fn cmd_evaluate(ctx: &Ctx, path: &Path) -> CliResult<()> {
    let p = prepare(ctx)?;
    let model = SurrogateModel::load(path).map_err(input)?;
    let mut metrics = String::from("model,split,r_squared,mae\n");
    metrics.push_str(&metrics_rows(model.name(), &model, &p)?);
    write_text(&ctx.out.join("evaluation.csv"), &metrics)
}

// ---------------------------------------------------------------- optimization

fn optimizer_choice(m: &RunManifest, kind: OptimizerKind) -> OptimizerChoice {
    match kind {
        OptimizerKind::Dfo => OptimizerChoice::Dfo(m.optimizer.dfo),
        OptimizerKind::Grad => OptimizerChoice::Grad(m.optimizer.grad),
    }
}

fn constraints(m: &RunManifest, p: &Prepared) -> CliResult<Option<ConstraintSet>> {
    if !m.objective.proximity {
        return Ok(None);
    }
    let rows = p.train.features();
    let index = if m.objective.standardized_index {
        NeighborIndex::standardized(rows)
    } else {
        NeighborIndex::new(rows)
    }
    .map_err(input)?;
    ConstraintSet::new(m.objective.tau, index).map(Some).map_err(input)
}

/// Surrogates trained only when a run needs them.
struct Models {
    trees: Option<ExtraTreesModel>,
    mlp: Option<MlpModel>,
}

impl Models {
    fn load(ctx: &Ctx, p: &Prepared, need_trees: bool, need_mlp: bool) -> CliResult<Self> {
        Ok(Models {
            trees: if need_trees { Some(train_trees(ctx, p)?) } else { None },
            mlp: if need_mlp { Some(train_mlp(ctx, p)?.0) } else { None },
        })
    }

    /// The derivative-free path drives the trees, the gradient path the network.
    fn for_kind(&self, kind: OptimizerKind) -> Option<&dyn Surrogate> {
        match kind {
            OptimizerKind::Dfo => self.trees.as_ref().map(|t| t as &dyn Surrogate),
            OptimizerKind::Grad => self.mlp.as_ref().map(|m| m as &dyn Surrogate),
        }
    }
}

fn multistart_rows(res: &ExperimentResult) -> String {
    let mut s = String::from("restart,start_row,status,value,reference_value\n");
    for (k, r) in res.runs.iter().enumerate() {
        match &r.outcome {
            Ok(o) => s.push_str(&format!(
                "{k},{},{},{},{}\n",
                r.start_row,
                o.termination.as_str(),
                o.value,
                r.reference_value.map_or_else(String::new, |v| v.to_string())
            )),
            Err(_) => s.push_str(&format!("{k},{},failed,,\n", r.start_row)),
        }
    }
    s
}

fn labelled(prefix: &str, res: &ExperimentResult) -> Vec<(String, Result<RunOutcome, String>)> {
    res.runs
        .iter()
        .enumerate()
        .map(|(k, r)| (format!("{prefix}restart{k:03}"), r.outcome.clone()))
        .collect()
}

fn emit_runs(ctx: &Ctx, reg: &Registry, runs: &[(String, Result<RunOutcome, String>)]) -> CliResult<()> {
    let refs: Vec<(String, &Result<RunOutcome, String>)> = runs.iter().map(|(l, o)| (l.clone(), o)).collect();
    write_runs(&ctx.out, &refs, reg).map_err(runtime)
}

fn emit_reports(
    ctx: &Ctx,
    p: &Prepared,
    models: &Models,
    runs: &[(String, Result<RunOutcome, String>)],
) -> CliResult<()> {
    let mut scored = Vec::new();
    for (name, m) in [
        ("trees", models.trees.as_ref().map(|t| t as &dyn Surrogate)),
        ("mlp", models.mlp.as_ref().map(|m| m as &dyn Surrogate)),
    ] {
        if let Some(m) = m {
            for (split_name, d) in [("train", &p.train), ("test", &p.test)] {
                scored.push(ScoredModel {
                    name: name.to_string(),
                    split: split_name.to_string(),
                    model: m,
                    data: d,
                });
            }
        }
    }
    let traces: Vec<(String, &OptTrace)> = runs
        .iter()
        .filter_map(|(l, o)| o.as_ref().ok().map(|o| (l.clone(), &o.trace)))
        .collect();
    let inputs = ReportInputs {
        registry: &p.reg,
        dataset: Some(&p.data),
        trees: models.trees.as_ref(),
        scored,
        traces,
        standardize_pca: true,
        cost_bins: 20,
    };
    let summary = export_reports(&inputs, &ctx.out.join("reports")).map_err(runtime)?;
    for (name, why) in &summary.skipped {
        eprintln!("note: skipped {name}: {why}");
    }
    Ok(())
}

fn cmd_optimize(ctx: &Ctx) -> CliResult<()> {
    let m = &ctx.manifest;
    let p = prepare(ctx)?;
    let kind = m.optimizer.kind;
    let needs_model = m.objective.lambda1 > 0.0;
    let models = Models::load(
        ctx,
        &p,
        needs_model && kind == OptimizerKind::Dfo,
        needs_model && kind == OptimizerKind::Grad,
    )?;
    let cs = constraints(m, &p)?;
    let spec = ObjectiveSpec::new(
        m.objective.lambda1,
        m.objective.lambda2,
        m.objective.ts_target,
        models.for_kind(kind).filter(|_| needs_model),
        &p.reg,
    )
    .map_err(input)?;
    let started = Instant::now();
    let res = run_multistart(
        &spec,
        cs.as_ref(),
        &optimizer_choice(m, kind),
        &p.data,
        m.experiment.restarts,
        ctx.seed,
    )
    .map_err(driver_err)?;
    let elapsed = started.elapsed().as_secs_f64();
    let runs = labelled("", &res);
    emit_runs(ctx, &p.reg, &runs)?;
    write_text(&ctx.out.join("multistart.csv"), &multistart_rows(&res))?;
    let mut buf = Vec::new();
    write_sweep_summary(&mut buf, std::slice::from_ref(&res), &p.reg).map_err(runtime)?;
    write_text(&ctx.out.join("best.csv"), &String::from_utf8_lossy(&buf))?;
    println!(
        "best value {} from row {}",
        res.best_value(),
        res.runs[res.best].start_row
    );
    emit_reports(ctx, &p, &models, &runs)?;
    write_metadata(ctx, "optimize", Some(m.experiment.restarts), Some(elapsed))
}

fn cmd_experiment(ctx: &Ctx) -> CliResult<()> {
    let m = &ctx.manifest;
    let e = &m.experiment;
    let p = prepare(ctx)?;
    let cs = constraints(m, &p)?;
    let kind = m.optimizer.kind;
    let started = Instant::now();
    let (models, runs) = match e.kind {
        ExperimentKind::Recovery => {
            let models = Models::load(ctx, &p, true, true)?;
            let target = match (e.target_ts, e.target_row) {
                (Some(t), _) => find_target_by_temperature(&p.data, t).map_err(driver_err)?,
                (None, Some(r)) if r < p.data.len() => r,
                (None, Some(r)) => return Err(input(format!("target_row {r} is past the end of the dataset"))),
                (None, None) => median_target(&p.data).ok_or_else(|| input("dataset is empty"))?,
            };
            let solvers = [
                Solver {
                    surrogate: models.trees.as_ref().expect("loaded"),
                    optimizer: optimizer_choice(m, OptimizerKind::Dfo),
                },
                Solver {
                    surrogate: models.mlp.as_ref().expect("loaded"),
                    optimizer: optimizer_choice(m, OptimizerKind::Grad),
                },
            ];
            let cfg = RecoveryConfig {
                u_values: e.u_values.clone(),
                seeds: e.seeds.clone(),
            };
            let rec =
                run_recovery_experiment(&p.data, target, &solvers, cs.as_ref(), &p.reg, &cfg).map_err(driver_err)?;
            let mut table = String::from("optimizer,u,seed,status,f1,predicted_ts,feature_distance,n_evals\n");
            let mut runs = Vec::new();
            for r in &rec {
                let label = format!("{}_u{}_s{}", r.optimizer, r.u, r.seed);
                match &r.outcome {
                    Ok(o) => table.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        r.optimizer,
                        r.u,
                        r.seed,
                        o.termination.as_str(),
                        o.f1.map_or_else(String::new, |v| v.to_string()),
                        o.predicted_ts.map_or_else(String::new, |v| v.to_string()),
                        r.feature_distance.map_or_else(String::new, |v| v.to_string()),
                        o.n_evals
                    )),
                    Err(_) => table.push_str(&format!("{},{},{},failed,,,,\n", r.optimizer, r.u, r.seed)),
                }
                runs.push((label, r.outcome.clone()));
            }
            write_text(&ctx.out.join("recovery.csv"), &table)?;
            println!(
                "recovery of row {target} (T = {}): {} runs",
                p.data.records[target].ms_temperature,
                rec.len()
            );
            (models, runs)
        }
        ExperimentKind::Cost => {
            let models = Models { trees: None, mlp: None };
            let spec = ObjectiveSpec::new(0.0, 1.0, m.objective.ts_target, None, &p.reg).map_err(input)?;
            let res = run_multistart(
                &spec,
                cs.as_ref(),
                &optimizer_choice(m, kind),
                &p.data,
                e.restarts,
                ctx.seed,
            )
            .map_err(driver_err)?;
            write_text(&ctx.out.join("multistart.csv"), &multistart_rows(&res))?;
            let mut buf = Vec::new();
            write_sweep_summary(&mut buf, std::slice::from_ref(&res), &p.reg).map_err(runtime)?;
            write_text(&ctx.out.join("best.csv"), &String::from_utf8_lossy(&buf))?;
            println!("best cost {}", res.best_run().f2);
            (models, labelled("", &res))
        }
        ExperimentKind::Sweep => {
            let models = Models::load(ctx, &p, kind == OptimizerKind::Dfo, kind == OptimizerKind::Grad)?;
            let lambdas: Vec<(f64, f64)> = e.lambdas.iter().map(|l| (l[0], l[1])).collect();
            let results = run_lambda_sweep(
                &lambdas,
                m.objective.ts_target,
                models.for_kind(kind),
                &p.reg,
                cs.as_ref(),
                &optimizer_choice(m, kind),
                &p.data,
                e.restarts,
                ctx.seed,
            )
            .map_err(driver_err)?;
            let mut buf = Vec::new();
            write_sweep_summary(&mut buf, &results, &p.reg).map_err(runtime)?;
            write_text(&ctx.out.join("sweep_summary.csv"), &String::from_utf8_lossy(&buf))?;
            let mut runs = Vec::new();
            for (i, r) in results.iter().enumerate() {
                runs.extend(labelled(&format!("w{i}_"), r));
            }
            println!("{} weight pairs swept", results.len());
            (models, runs)
        }
        ExperimentKind::RhobegSweep => {
            let models = Models::load(ctx, &p, m.objective.lambda1 > 0.0, false)?;
            let spec = ObjectiveSpec::new(
                m.objective.lambda1,
                m.objective.lambda2,
                m.objective.ts_target,
                models.for_kind(OptimizerKind::Dfo),
                &p.reg,
            )
            .map_err(input)?;
            let mut table = String::from("rhobeg,best_row,best_value,total_evals\n");
            let mut runs = Vec::new();
            for (i, &rho) in e.rhobeg_values.iter().enumerate() {
                let mut cfg = m.optimizer.dfo;
                cfg.rhobeg = rho;
                let res = run_multistart(
                    &spec,
                    cs.as_ref(),
                    &OptimizerChoice::Dfo(cfg),
                    &p.data,
                    e.restarts,
                    ctx.seed,
                )
                .map_err(driver_err)?;
                let evals: usize = res
                    .runs
                    .iter()
                    .filter_map(|r| r.outcome.as_ref().ok())
                    .map(|o| o.n_evals)
                    .sum();
                table.push_str(&format!(
                    "{rho},{},{},{evals}\n",
                    res.runs[res.best].start_row,
                    res.best_value()
                ));
                runs.extend(labelled(&format!("r{i}_"), &res));
            }
            write_text(&ctx.out.join("rhobeg_summary.csv"), &table)?;
            (models, runs)
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    emit_runs(ctx, &p.reg, &runs)?;
    emit_reports(ctx, &p, &models, &runs)?;
    let restarts = (e.kind != ExperimentKind::Recovery).then_some(e.restarts);
    write_metadata(ctx, "experiment", restarts, Some(elapsed))
}

// ---------------------------------------------------------------- reports

fn cmd_pca(ctx: &Ctx, standardize: bool) -> CliResult<()> {
    let reg = registry(&ctx.manifest)?;
    let raw = ingest_csv(&dataset_path(&ctx.manifest, None)?, &reg).map_err(input)?;
    let data = if ctx.manifest.pipeline.dedup {
        dedup_median(&raw)
    } else {
        raw
    };
    let rows = data.features();
    let pca = fit_pca(&rows, standardize).map_err(input)?;
    let mut s = String::from("component,variance,ratio\n");
    for k in 0..pca.variances.len() {
        s.push_str(&format!("{},{},{}\n", k + 1, pca.variances[k], pca.ratios[k]));
    }
    write_text(&ctx.out.join("pca_variance.csv"), &s)?;
    let mut s = String::from("row,pc1,pc2,ms_celsius\n");
    for (i, (y, r)) in rows.iter().zip(&data.records).enumerate() {
        let (a, b) = pca.project2d(y);
        s.push_str(&format!("{i},{a},{b},{}\n", r.ms_temperature));
    }
    write_text(&ctx.out.join("pca_dataset.csv"), &s)?;
    println!(
        "first two components explain {:.1}% of the variance",
        100.0 * (pca.ratios[0] + pca.ratios[1])
    );
    Ok(())
}

fn cmd_report(ctx: &Ctx) -> CliResult<()> {
    let p = prepare(ctx)?;
    let models = Models::load(ctx, &p, true, true)?;
    emit_reports(ctx, &p, &models, &[])?;
    write_metadata(ctx, "report", None, None)
}

fn cmd_synth(ctx: &Ctx, n_alloys: usize, noise_sd: f64) -> CliResult<()> {
    let reg = synthetic_registry().map_err(runtime)?;
    let truth = GroundTruth::for_registry(&reg).map_err(runtime)?;
    let cfg = SyntheticConfig {
        n_alloys,
        noise_sd,
        seed: ctx.seed,
        ..SyntheticConfig::default()
    };
    let d = generate(&reg, &truth, &cfg).map_err(input)?;
    reg.save(&ctx.out.join("elements.csv"), &ctx.out.join("enthalpy.csv"))
        .map_err(runtime)?;
    save_dataset(&d, &ctx.out.join("dataset.csv"), &reg)
}

/// Wall-clock facts live here so result files stay byte-reproducible.
fn write_metadata(ctx: &Ctx, command: &str, restarts: Option<usize>, elapsed_s: Option<f64>) -> CliResult<()> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": ctx.seed,
        "restarts": restarts,
        "finished_unix_s": now,
        "elapsed_s": elapsed_s,
    });
    write_text(&ctx.out.join("manifest.resolved.toml"), &ctx.manifest.to_toml())?;
    write_text(
        &ctx.out.join("metadata.json"),
        &serde_json::to_string_pretty(&meta).expect("json"),
    )
}
