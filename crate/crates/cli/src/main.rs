//! `stylesr`: train the degradation model and the SR network, generate
//! pairs, evaluate and upscale.
//!
//! Failures print one line `category: message` to stderr and exit nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stylesr::io::fmt_sig9;
use stylesr::mine::{run_gaussian_benchmark, GaussianBenchmark};
use stylesr::pipeline::{self, csv::CsvLog, TrainConfig};
use stylesr::{gradsuite, Rng};

#[derive(Debug, Parser)]
#[command(name = "stylesr", version, about = "Style-learned degradation and attention super-resolution")]
struct Cli {
    /// JSON training configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Central-difference checks of every differentiable op and block.
    Gradcheck,
    /// Trains a MINE critic on a correlated bivariate Gaussian.
    MineDemo {
        #[arg(long, default_value_t = 0.9)]
        rho: f64,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
    },
    /// Stage 1: trains the styleVAE on unpaired HR and real LR images.
    TrainStylevae {
        /// Checkpoint directory to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Degrades every HR image under sampled styles into an LR/HR pair set.
    GenPairs {
        /// Stage-1 checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Stage 2: trains the SR network on a generated pair set.
    TrainSr {
        /// Pair directory written by gen-pairs.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Upscales a PNG, or every PNG in a directory.
    Infer {
        /// SR checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// PSNR/SSIM of an SR checkpoint and the bilinear baseline.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Writes the procedural HR, real-LR and eval sets as PNG directories.
    SynthData,
    /// Stage 1, gen-pairs, stage 2 and eval in one run.
    Pipeline,
}

fn config(cli: &Cli) -> stylesr::Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_eval(report: &pipeline::EvalReport, path: &Path) {
    let m = &report.mean;
    println!(
        "bilinear-baseline psnr {:.3} dB ssim {:.4}; model psnr {:.3} dB ssim {:.4}; gain {:+.3} dB ({})",
        m.bilinear_psnr,
        m.bilinear_ssim,
        m.model_psnr,
        m.model_ssim,
        report.gain_db(),
        path.display()
    );
}

fn run(cli: &Cli) -> stylesr::Result<()> {
    let out = cli.out.as_path();
    // Validated up front so a bad --config fails every subcommand alike.
    let cfg = config(cli)?;
    match &cli.command {
        Command::Gradcheck => {
            let r = gradsuite::run(cfg.seed)?;
            let mut log = CsvLog::new(&["case", "max_rel_error", "passed"]);
            for c in &r.cases {
                let status = if c.report.passed { "ok" } else { "FAIL" };
                println!("{status:4} {:.3e} {}", c.report.max_rel_error, c.name);
                if let Some(f) = &c.report.failure {
                    println!("     {f}");
                }
                log.push_raw(vec![
                    c.name.clone(),
                    fmt_sig9(c.report.max_rel_error),
                    c.report.passed.to_string(),
                ]);
            }
            for s in &r.skipped {
                println!("skip           {s} (gradient vanishes identically)");
            }
            log.write(&out.join("gradcheck.csv"))?;
            let failed = r.cases.iter().filter(|c| !c.report.passed).count();
            println!("{} cases, {failed} failed, {:.1} s", r.cases.len(), r.elapsed.as_secs_f64());
            if failed > 0 {
                return Err(stylesr::Error::Graph(format!("{failed} gradient checks failed")));
            }
        }
        Command::MineDemo { rho, steps } => {
            let bench = GaussianBenchmark {
                rho: *rho,
                steps: *steps,
                ..GaussianBenchmark::default()
            };
            let r = run_gaussian_benchmark(&bench, Rng::new(cfg.seed))?;
            let mut log = CsvLog::new(&["step", "nu", "analytic_mi"]);
            for &(step, nu) in &r.trace {
                log.push_step(step as u64, &[nu, r.analytic]);
            }
            let path = out.join("mine_demo.csv");
            log.write(&path)?;
            println!(
                "estimate {:.4} nats, analytic {:.4} nats ({})",
                r.final_estimate,
                r.analytic,
                path.display()
            );
        }
        Command::TrainStylevae { resume } => {
            let r = pipeline::train_stylevae(&cfg, out, resume.as_deref())?;
            let t = r.totals();
            println!(
                "{} steps, total loss {:.5} -> {:.5}; checkpoint {}",
                r.steps,
                t.first().copied().unwrap_or(f64::NAN),
                t.last().copied().unwrap_or(f64::NAN),
                r.checkpoint.display()
            );
        }
        Command::GenPairs { checkpoint } => {
            let r = pipeline::gen_pairs(&cfg, checkpoint, out)?;
            match r.diversity {
                Some(d) => println!("{} pairs in {}; style diversity {d:.5}", r.count, r.dir.display()),
                None => println!("{} pairs in {}", r.count, r.dir.display()),
            }
        }
        Command::TrainSr { pairs, resume } => {
            let r = pipeline::train_sr(&cfg, pairs, out, resume.as_deref())?;
            let rows = r.log.rows();
            println!(
                "{} steps, L1 {} -> {}; checkpoint {}",
                r.steps,
                rows.first().map_or("-", |row| row[1].as_str()),
                rows.last().map_or("-", |row| row[1].as_str()),
                r.checkpoint.display()
            );
        }
        Command::Infer { checkpoint, input } => {
            let (sr, _) = pipeline::stage2::load_sr(checkpoint)?;
            let output = if input.is_dir() {
                out.to_path_buf()
            } else {
                out.join(input.file_name().unwrap_or_else(|| "upscaled.png".as_ref()))
            };
            for p in pipeline::eval::infer(&sr, input, &output)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { checkpoint } => {
            let r = pipeline::eval_checkpoint(&cfg, checkpoint, out)?;
            print_eval(&r, &out.join(pipeline::eval::FILE));
        }
        Command::SynthData => {
            for d in pipeline::synth_data(&cfg, out)? {
                println!("{}", d.display());
            }
        }
        Command::Pipeline => {
            let r = pipeline::run_pipeline(&cfg, out)?;
            let t = r.stage1.totals();
            println!(
                "stage 1: {} steps, total loss {:.5} -> {:.5}",
                r.stage1.steps,
                t.first().copied().unwrap_or(f64::NAN),
                t.last().copied().unwrap_or(f64::NAN)
            );
            println!("pairs: {}, style diversity {:?}", r.pairs.count, r.pairs.diversity);
            println!("stage 2: {} steps", r.stage2.steps);
            print_eval(&r.eval, &out.join(pipeline::eval::FILE));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.category(), e.message());
            ExitCode::FAILURE
        }
    }
}
