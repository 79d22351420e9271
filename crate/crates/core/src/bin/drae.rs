use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use drae::config::ExperimentConfig;
use drae::gradcheck::standard_suite;
use drae::harness::{
    datasize_ablation, dimension_sweep, emit_ablation, emit_report, emit_sweep, parse_report, run_loso,
    summarize_stats, sweep_lambda, Ablation, EvalReport,
};
use drae::model::ModelVariant;
use drae::Error;

#[derive(Parser)]
#[command(name = "drae", version, about = "Subject-transfer representation learning with adversarial rateless autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as CSV.
    Synth(Common),
    /// Leave-one-subject-out evaluation of one variant.
    Loso(Common),
    /// Two-stage lambda sweep and selection.
    Sweep(Common),
    /// Accuracy against latent width, variant versus AE.
    Dimsweep(Common),
    /// Accuracy against training-data fraction, variant versus AE.
    Datasize(Common),
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the summary of an emitted report.
    Report {
        /// Report directory or report.json path.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long = "lambda-a")]
    lambda_a: Option<f64>,
    #[arg(long = "lambda-n")]
    lambda_n: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Data fraction; a comma-separated list sets the datasize grid.
    #[arg(long, value_delimiter = ',')]
    fraction: Option<Vec<f64>>,
    /// Comma-separated classifier tags.
    #[arg(long, value_delimiter = ',')]
    classifier: Option<Vec<String>>,
    /// CSV path or `synth`.
    #[arg(long)]
    data: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) => Failure::Usage(format!("{e:#}")),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

impl Common {
    fn resolve(&self, datasize: bool) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.seed {
            cfg.experiment.seeds = s.clone();
        }
        if let Some(v) = &self.variant {
            cfg.experiment.variant = v.parse::<ModelVariant>()?;
        }
        if let Some(v) = self.lambda_a {
            cfg.train.lambda_a = v;
        }
        if let Some(v) = self.lambda_n {
            cfg.train.lambda_n = v;
        }
        if let Some(v) = self.dim {
            cfg.model.dim = v;
        }
        if let Some(v) = self.alpha {
            cfg.model.alpha = v;
        }
        if let Some(f) = &self.fraction {
            if datasize {
                cfg.sweep.fractions = f.clone();
            } else if let [one] = f.as_slice() {
                cfg.experiment.fraction = *one;
            } else {
                return Err(Failure::Usage("--fraction takes a single value for this verb".into()));
            }
        }
        if let Some(c) = &self.classifier {
            cfg.experiment.classifiers = c.clone();
        }
        if let Some(d) = &self.data {
            cfg.data.source = d.clone();
        }
        if cfg.train.log_every == 0 {
            cfg.train.log_every = cfg.train.epochs.max(1);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_pool(jobs: usize) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("building the worker pool")
}

fn print_report(r: &EvalReport) {
    println!("{} over {} subject(s), seeds {:?}", r.variant, r.subjects.len(), r.seeds);
    println!("{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "clf", "mean", "median", "q1", "q3", "min", "max");
    for (tag, s) in &r.summary {
        println!(
            "{tag:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            s.mean, s.median, s.q1, s.q3, s.min, s.max
        );
    }
    if let Some(a) = r.mean_adversary_accuracy() {
        println!("adversary accuracy (validation) {a:.4}");
    }
    if let Some(n) = r.mean_nuisance_accuracy() {
        println!("nuisance accuracy (validation)  {n:.4}");
    }
}

fn print_ablation(a: &Ablation) {
    let models: Vec<String> = {
        let mut m: Vec<String> = a.rows.iter().map(|r| r.model.clone()).collect();
        m.dedup();
        m
    };
    print!("{:>8}", a.name);
    for m in &models {
        print!(" {m:>10}");
    }
    println!();
    for x in a.xs() {
        print!("{x:>8}");
        for m in &models {
            print!(" {:>10.4}", a.mean(x, m).unwrap_or(f64::NAN));
        }
        println!();
    }
}

fn wrote(paths: &[PathBuf], out: &Path) {
    println!("wrote {} file(s) under {}", paths.len(), out.display());
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Gradcheck { tol, seed } => {
            if !(tol > 0.0) {
                return Err(Failure::Usage("--tol must be > 0".into()));
            }
            let reports = standard_suite(tol, seed)?;
            println!("{:<40} {:>7} {:>12}  result", "check", "params", "max rel err");
            let mut ok = true;
            for r in &reports {
                ok &= r.passed;
                println!(
                    "{:<40} {:>7} {:>12.3e}  {}",
                    r.label,
                    r.entries.len(),
                    r.max_rel_error,
                    if r.passed { "pass" } else { "FAIL" }
                );
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Report { out } => {
            let r = parse_report(&out)?;
            print_report(&r);
            for (tag, s) in &r.summary {
                let v: Vec<f64> = r.subjects.iter().map(|e| e.test_accuracy[tag]).collect();
                if summarize_stats(&v)? != *s {
                    return Err(Failure::Runtime(anyhow::anyhow!("summary for {tag} does not match its per-subject rows")));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth(c) => {
            let cfg = c.resolve(false)?;
            let mut params = cfg.data.synth;
            if let Some(s) = c.seed.as_ref().and_then(|s| s.first()) {
                params.seed = *s;
            }
            let table = drae::data::synth_generate(&params)?;
            std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
            let path = c.out.join("data.csv");
            table.write_csv(&path)?;
            cfg.write_resolved(&c.out)?;
            println!("wrote {} rows to {}", table.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Loso(c) => {
            let cfg = c.resolve(false)?;
            init_pool(c.jobs)?;
            cfg.write_resolved(&c.out)?;
            let table = cfg.load_data()?;
            let report = run_loso(&cfg, &table)?;
            print_report(&report);
            wrote(&emit_report(&report, &c.out)?, &c.out);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(c) => {
            let cfg = c.resolve(false)?;
            init_pool(c.jobs)?;
            cfg.write_resolved(&c.out)?;
            let table = cfg.load_data()?;
            let sweep = sweep_lambda(&cfg, &table)?;
            println!("{:>5} {:>8} {:>8} {:>8} {:>8} {:>8}", "stage", "lam_a", "lam_n", "task", "adv", "nui");
            let pct = |v: Option<f64>| v.map(|x| format!("{:.1}", 100.0 * x)).unwrap_or_else(|| "-".into());
            for cell in &sweep.cells {
                println!(
                    "{:>5} {:>8} {:>8} {:>8.1} {:>8} {:>8}",
                    cell.stage,
                    cell.lambda_a,
                    cell.lambda_n,
                    100.0 * cell.val_accuracy,
                    pct(cell.adversary_accuracy),
                    pct(cell.nuisance_accuracy)
                );
            }
            println!("selected lambda_a={} lambda_n={}", sweep.selected.0, sweep.selected.1);
            wrote(&emit_sweep(&sweep, &c.out)?, &c.out);
            Ok(ExitCode::SUCCESS)
        }
        Command::Dimsweep(c) => {
            let cfg = c.resolve(false)?;
            init_pool(c.jobs)?;
            cfg.write_resolved(&c.out)?;
            let table = cfg.load_data()?;
            let a = dimension_sweep(&cfg, &table)?;
            print_ablation(&a);
            wrote(&emit_ablation(&a, &c.out)?, &c.out);
            Ok(ExitCode::SUCCESS)
        }
        Command::Datasize(c) => {
            let cfg = c.resolve(true)?;
            init_pool(c.jobs)?;
            cfg.write_resolved(&c.out)?;
            let table = cfg.load_data()?;
            let a = datasize_ablation(&cfg, &table, &cfg.sweep.fractions)?;
            print_ablation(&a);
            wrote(&emit_ablation(&a, &c.out)?, &c.out);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("drae: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("drae: {e:#}");
            ExitCode::from(1)
        }
    }
}
