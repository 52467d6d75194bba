//! `bedrecon` command-line driver.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bedrecon::baselines::{idw_predict, rbf_predict};
use bedrecon::features::io::{read_features, write_features};
use bedrecon::features::build_feature_tensor;
use bedrecon::inference::{difference_grid, predict_full_grid};
use bedrecon::metrics::{evaluate, write_metric_csv};
use bedrecon::nn::gradcheck::{check_model_gradients, GradcheckConfig};
use bedrecon::nn::ModelState;
use bedrecon::patches::write_manifest;
use bedrecon::pipeline::{coverage_mask, make_splits, restrict_observations};
use bedrecon::raster::io::{read_grid, write_grid};
use bedrecon::raster::ReferenceGrid;
use bedrecon::synth::{generate_scenario, Scenario};
use bedrecon::train::{load_checkpoint, save_checkpoint, train, write_trace_csv, TrainingData};
use clap::{Parser, Subcommand};

use config::{ConfigError, RunConfig, OUTPUT_DIR_ENV};

#[derive(Parser, Debug)]
#[command(name = "bedrecon", version, about = "Bed elevation reconstruction from sparse observations")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and the BEDRECON_OUTPUT_DIR variable).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario directory.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
    },
    /// Build the normalized feature tensor (BTF1).
    Features {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes a checkpoint, the loss trace and the split manifest.
    Train {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stitch a full-grid prediction and its difference from the reference.
    Predict {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a prediction grid against the true bed and the reference.
    Evaluate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        prediction: Option<PathBuf>,
    },
    /// Run the IDW and RBF baselines and score them.
    Baseline {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Finite-difference check of the model gradients.
    Gradcheck,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<bedrecon::Error> for Failure {
    fn from(e: bedrecon::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

struct Context {
    cfg: RunConfig,
    output_dir: PathBuf,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn scenario_dir(&self, arg: Option<PathBuf>) -> PathBuf {
        arg.or_else(|| self.cfg.scenario_dir.clone())
            .unwrap_or_else(|| self.out("scenario"))
    }

    fn checkpoint(&self, arg: Option<PathBuf>) -> PathBuf {
        arg.or_else(|| self.cfg.checkpoint.clone())
            .unwrap_or_else(|| self.out("model.btck"))
    }

    fn ensure_output_dir(&self) -> CmdResult {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| {
            Failure::Runtime(format!("cannot create {}: {e}", self.output_dir.display()))
        })
    }
}

fn require(path: &Path, what: &str) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_scenario(dir: &Path) -> Result<Scenario, Failure> {
    require(dir, "scenario directory")?;
    Ok(Scenario::load(dir)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_synth(ctx: &Context, out: Option<PathBuf>, seed: Option<u64>, rows: Option<usize>, cols: Option<usize>) -> CmdResult {
    let dir = ctx.scenario_dir(out);
    let s = generate_scenario(
        rows.unwrap_or(ctx.cfg.rows),
        cols.unwrap_or(ctx.cfg.cols),
        seed.unwrap_or(ctx.cfg.seed),
        &ctx.cfg.scenario,
    )?;
    s.save(&dir)?;
    println!(
        "scenario {}x{} seed {} -> {} ({} observed cells, mass residual {:.3e})",
        s.true_bed.rows(),
        s.true_bed.cols(),
        s.seed,
        dir.display(),
        s.report.observed_cells,
        s.report.mass_residual
    );
    Ok(())
}

fn cmd_features(ctx: &Context, scenario: Option<PathBuf>, out: Option<PathBuf>) -> CmdResult {
    let s = load_scenario(&ctx.scenario_dir(scenario))?;
    let exp = ctx.cfg.experiment();
    let (rows, cols) = (s.true_bed.rows(), s.true_bed.cols());
    let splits = make_splits(rows, cols, &exp)?;
    let region = coverage_mask(rows, cols, &splits.train);
    let t = build_feature_tensor(&s.stack, exp.features, Some(&region))?;
    ctx.ensure_output_dir()?;
    let path = out.unwrap_or_else(|| ctx.out("features.btf"));
    write_features(&path, &t)?;
    println!("{} channels -> {}", t.channels(), path.display());
    Ok(())
}

fn cmd_train(ctx: &Context, scenario: Option<PathBuf>, features: Option<PathBuf>, checkpoint: Option<PathBuf>) -> CmdResult {
    let s = load_scenario(&ctx.scenario_dir(scenario))?;
    let fpath = features.unwrap_or_else(|| ctx.out("features.btf"));
    require(&fpath, "feature tensor")?;
    let t = read_features(&fpath)?;
    let exp = ctx.cfg.experiment();
    let (rows, cols) = (s.true_bed.rows(), s.true_bed.cols());
    let splits = make_splits(rows, cols, &exp)?;
    if let Some(w) = &splits.warning {
        eprintln!("warning: {w}");
    }
    let (obs, reference) = match &splits.test_cells {
        Some(test) => {
            let keep: Vec<bool> = test.iter().map(|t| !t).collect();
            let obs = restrict_observations(&s.observations, &keep);
            let g = s.reference.grid();
            let valid = g.validity().iter().zip(&keep).map(|(a, b)| *a && *b).collect();
            let r = ReferenceGrid::new(g.with_same_geometry(g.values().to_vec(), valid)?, &obs)?;
            (obs, r)
        }
        None => (s.observations.clone(), s.reference.clone()),
    };
    let data = TrainingData {
        features: &t,
        observations: &obs,
        reference: &reference,
        train: &splits.train,
        validation: &splits.validation,
        patch_size: exp.patch_size,
    };
    let model = ModelState::new(exp.model.model_config(t.channels()))?;
    let outcome = train(model, &data, &exp.train)?;
    ctx.ensure_output_dir()?;
    let ck = ctx.checkpoint(checkpoint);
    save_checkpoint(&ck, &outcome.model)?;
    write_trace_csv(ctx.out("loss_trace.csv"), &outcome.trace)?;
    let manifest: Vec<_> = splits
        .train
        .iter()
        .chain(&splits.validation)
        .chain(&splits.test)
        .copied()
        .collect();
    write_manifest(ctx.out("splits.csv"), &manifest)?;
    println!(
        "trained {} iterations, best validation loss {:.4} at iteration {} -> {}",
        outcome.iterations_run,
        outcome.best_val_loss,
        outcome.best_iteration,
        ck.display()
    );
    Ok(())
}

fn cmd_predict(ctx: &Context, scenario: Option<PathBuf>, features: Option<PathBuf>, checkpoint: Option<PathBuf>) -> CmdResult {
    let s = load_scenario(&ctx.scenario_dir(scenario))?;
    let fpath = features.unwrap_or_else(|| ctx.out("features.btf"));
    require(&fpath, "feature tensor")?;
    let ck = ctx.checkpoint(checkpoint);
    require(&ck, "checkpoint")?;
    let t = read_features(&fpath)?;
    let mut model = load_checkpoint(&ck)?;
    let exp = ctx.cfg.experiment();
    let pred = predict_full_grid(&mut model, &t, exp.patch_size, exp.inference_stride(), exp.train.batch_size)?;
    ctx.ensure_output_dir()?;
    write_grid(ctx.out("prediction.btg"), &pred)?;
    write_grid(ctx.out("difference.btg"), &difference_grid(&pred, s.reference.grid())?)?;
    println!("prediction -> {}", ctx.out("prediction.btg").display());
    Ok(())
}

fn cmd_evaluate(ctx: &Context, scenario: Option<PathBuf>, prediction: Option<PathBuf>) -> CmdResult {
    let s = load_scenario(&ctx.scenario_dir(scenario))?;
    let ppath = prediction.unwrap_or_else(|| ctx.out("prediction.btg"));
    require(&ppath, "prediction grid")?;
    let pred = read_grid(&ppath)?;
    let vs_bed = evaluate(&pred, &s.true_bed, None)?;
    let vs_ref = evaluate(&pred, s.reference.grid(), None)?;
    ctx.ensure_output_dir()?;
    vs_bed.write_json(ctx.out("metrics.json"))?;
    vs_ref.write_json(ctx.out("metrics_reference.json"))?;
    write_metric_csv(
        ctx.out("metrics.csv"),
        &[("true_bed".into(), vs_bed), ("reference".into(), vs_ref)],
    )?;
    println!("{}", vs_bed.to_json()?);
    Ok(())
}

fn cmd_baseline(ctx: &Context, scenario: Option<PathBuf>) -> CmdResult {
    let s = load_scenario(&ctx.scenario_dir(scenario))?;
    ctx.ensure_output_dir()?;
    let mut rows = Vec::new();
    for (name, grid) in [
        ("idw", idw_predict(&s.observations, None, &ctx.cfg.idw)?),
        ("rbf", rbf_predict(&s.observations, None, &ctx.cfg.rbf)?),
    ] {
        let m = evaluate(&grid, &s.true_bed, None)?;
        write_grid(ctx.out(&format!("{name}.btg")), &grid)?;
        m.write_json(ctx.out(&format!("{name}_metrics.json")))?;
        println!("{}", m.csv_row(name));
        rows.push((name.to_string(), m));
    }
    write_metric_csv(ctx.out("baseline_metrics.csv"), &rows)?;
    Ok(())
}

fn cmd_gradcheck(ctx: &Context) -> CmdResult {
    let g = &ctx.cfg.gradcheck;
    let cfg = GradcheckConfig {
        samples_per_tensor: g.samples_per_tensor,
        tolerance: g.tolerance,
        seed: g.seed,
        ..GradcheckConfig::default()
    };
    let report = check_model_gradients(&cfg)?;
    ctx.ensure_output_dir()?;
    write_json(&ctx.out("gradcheck.json"), &report)?;
    println!(
        "{} entries over {} tensors, max relative error {:.3e} (tolerance {:.1e})",
        report.entries.len(),
        report.tensors_checked,
        report.max_rel_error,
        report.tolerance
    );
    if report.passed {
        Ok(())
    } else {
        let w = report.worst().expect("failed report has entries");
        Err(Failure::Runtime(format!(
            "gradient check failed: {}[{}] analytic {:e} numeric {:e}",
            w.parameter, w.index, w.analytic, w.numeric
        )))
    }
}

fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => {
            require(p, "config file")?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    let output_dir = cli
        .output_dir
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bedrecon-out"));
    let ctx = Context { cfg, output_dir };
    match cli.command {
        Command::Synth { out, seed, rows, cols } => cmd_synth(&ctx, out, seed, rows, cols),
        Command::Features { scenario, out } => cmd_features(&ctx, scenario, out),
        Command::Train { scenario, features, checkpoint } => cmd_train(&ctx, scenario, features, checkpoint),
        Command::Predict { scenario, features, checkpoint } => cmd_predict(&ctx, scenario, features, checkpoint),
        Command::Evaluate { scenario, prediction } => cmd_evaluate(&ctx, scenario, prediction),
        Command::Baseline { scenario } => cmd_baseline(&ctx, scenario),
        Command::Gradcheck => cmd_gradcheck(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
