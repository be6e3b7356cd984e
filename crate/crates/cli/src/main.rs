use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dpmcl_core::data::export_stream_csv;
use dpmcl_core::harness::{ablation_sweep, run_experiment, Settings, SweepParam};
use dpmcl_core::learners::gradcheck::composition_suite;
use dpmcl_core::theory::{classify_convergence, gamma_partial_integral, GammaSchedule, DEFAULT_LADDER, DEFAULT_STEP, DEFAULT_TOL};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dpmcl", version, about = "Continual-learning benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method on a stream for several repetitions
    Run(RunArgs),
    /// Repeat `run` for each value of zeta or kappa
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Classify convergence of a discount schedule
    Theory {
        /// constant:c, geometric:r, harmonic:p or growing:g
        #[arg(long)]
        schedule: String,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long = "L", default_value_t = 1.0)]
        upper: f64,
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic gradients of composed and gated models against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat TOML settings; flags given here override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// sine, synth-class or idx
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stream_seed: Option<u64>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    zeta: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long)]
    idx_images: Option<PathBuf>,
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// Write the train/val/test splits of the first run's stream as CSV here
    #[arg(long)]
    export_stream: Option<PathBuf>,
    /// Write each run's final learner checkpoint and memory into the output directory
    #[arg(long)]
    save_state: bool,
}

impl RunArgs {
    fn settings(&self) -> anyhow::Result<Settings> {
        let base = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let flags = Settings {
            method: self.method.clone(),
            dataset: self.dataset.clone(),
            total_runs: self.runs,
            seed: self.seed,
            stream_seed: self.stream_seed,
            num_tasks: self.tasks,
            out: self.out.clone(),
            kappa: self.kappa,
            zeta: self.zeta,
            beta: self.beta,
            learning_rate: self.lr,
            batch_size: self.batch,
            memory_length: self.memory,
            idx_images: self.idx_images.clone(),
            idx_labels: self.idx_labels.clone(),
            ..Settings::default()
        };
        Ok(base.merged(flags))
    }
}

fn run(args: &RunArgs) -> anyhow::Result<()> {
    let spec = args.settings()?.run_spec()?;
    if let Some(dir) = &args.export_stream {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        export_stream_csv(&spec.stream.tasks_for_run(0)?, dir)?;
    }
    if args.save_state && spec.output_dir.is_none() {
        bail!("--save-state needs --out");
    }
    let result = run_experiment(&spec)?;
    if let (true, Some(dir)) = (args.save_state, &spec.output_dir) {
        for r in &result.runs {
            r.learner.save(&dir.join(format!("learner_run{}.json", r.run)))?;
            r.learner.memory().write_csv(&dir.join(format!("memory_run{}.csv", r.run)))?;
        }
    }
    let (cme, nte) = result.final_means();
    println!(
        "{}",
        json!({
            "method": spec.method.name(),
            "dataset": spec.stream.name(),
            "runs": spec.runs,
            "final_cme": cme,
            "final_nte": nte,
        })
    );
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Sweep { param, values, run } => {
            let param: SweepParam = param.parse()?;
            let spec = run.settings()?.run_spec()?;
            let table = ablation_sweep(param, &values, &spec)?;
            println!("{}", serde_json::to_string_pretty(&table)?);
            Ok(())
        }
        Command::Theory {
            schedule,
            eps,
            upper,
            ladder,
            tol,
            out,
        } => {
            let schedule: GammaSchedule = schedule.parse()?;
            let ladder = ladder.unwrap_or_else(|| DEFAULT_LADDER.to_vec());
            let report = classify_convergence(&schedule, eps, upper, &ladder, tol)?;
            let last = *ladder.last().expect("non-empty ladder");
            let (lower, upper_value) = gamma_partial_integral(&schedule, eps, upper, last, DEFAULT_STEP)?;
            let record = json!({
                "report": report,
                "integral_at_last_horizon": { "lower": lower, "upper": upper_value },
            });
            let text = serde_json::to_string_pretty(&record)?;
            if let Some(path) = out {
                std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{text}");
            Ok(())
        }
        Command::Gradcheck { instances, seed, tol } => {
            let report = composition_suite(instances, seed)?;
            let pass = report.max_rel_error < tol;
            println!("{}", json!({ "pass": pass, "tol": tol, "report": report }));
            if !pass {
                bail!("max relative error {} exceeds {tol}", report.max_rel_error);
            }
            Ok(())
        }
    }
}

fn error_record(err: &anyhow::Error) -> serde_json::Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<dpmcl_core::Error>())
        .map_or("cli", |e| e.kind());
    let causes: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    json!({ "error": { "kind": kind, "message": err.to_string(), "causes": causes } })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_record(&err));
            ExitCode::FAILURE
        }
    }
}
