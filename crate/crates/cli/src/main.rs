use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gnc_lab::diagnostics::{probe_end_to_end_rank, probe_independence, probe_spectrum};
use gnc_lab::harness::{self, Axis, SweepConfig};
use gnc_lab::{
    run_gd, run_gnc, run_prior_baseline, stats, Activation, FactorizationSpec, GdConfig, GdOutcome, GncConfig,
    MeasurementKind, Precision, PriorSpec, ProblemInstance, ProblemParams,
};

#[derive(Parser)]
#[command(name = "gnc-lab", version, about = "Guess & Check versus gradient descent on deep matrix factorizations")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single precision G&C evaluation with f64 re-verification.
    #[arg(long = "f32", global = true)]
    f32: bool,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a problem instance and write it as JSON.
    Gen {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run Guess & Check on an instance.
    Gnc {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long)]
        eps_train: f64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run gradient descent on an instance.
    Gd {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        lr: f64,
        #[arg(long, default_value_t = 100_000)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        init_scale: f64,
        #[arg(long, default_value_t = 0.0)]
        momentum: f64,
        /// Use the base rate as a fixed step size.
        #[arg(long)]
        fixed_lr: bool,
        #[arg(long, default_value_t = 1000)]
        record_every: usize,
        /// Write the loss trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Generalization losses of independent prior draws.
    Prior {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Run a width or depth sweep.
    Sweep(SweepArgs),
    /// Mechanism probes.
    Diag {
        #[command(subcommand)]
        probe: Diag,
    },
    /// Render an SVG plot from a sweep cell CSV.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    m_prime: usize,
    #[arg(long, default_value_t = 1)]
    rank: usize,
    #[arg(long, default_value_t = 1.0)]
    norm: f64,
    #[arg(long, default_value_t = 15)]
    n: usize,
    /// gaussian or indicator.
    #[arg(long, default_value = "gaussian")]
    kind: MeasurementKind,
}

#[derive(Args)]
struct ModelArgs {
    /// Instance JSON written by `gen`.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 5)]
    width: usize,
    /// linear, tanh or lrelu.
    #[arg(long, default_value = "linear")]
    activation: Activation,
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    Gaussian,
    Uniform,
}

#[derive(Args)]
struct PriorArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    base: Base,
    /// Variance of the Gaussian base, or half-width of the uniform base.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    normalize: bool,
}

impl PriorArgs {
    fn spec(&self) -> PriorSpec {
        let p = match self.base {
            Base::Gaussian => PriorSpec::gaussian(self.scale),
            Base::Uniform => PriorSpec::uniform(self.scale),
        };
        if self.normalize {
            p.normalized()
        } else {
            p
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Built-in preset name.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Sweep configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    desk_scale: bool,
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
    /// List preset names and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Subcommand)]
enum Diag {
    /// Compare P(gen | train) with P(gen) under the prior.
    Independence {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long)]
        eps_train: f64,
        /// Defaults to the median generalization loss of 10^4 prior draws.
        #[arg(long)]
        eps_gen: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
    },
    /// Lyapunov gap and rank-one residual of products of Gaussian matrices.
    Spectrum {
        #[arg(long, default_value_t = 5)]
        width: usize,
        /// Factorization depth; the product has depth - 2 factors.
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        normalize: bool,
    },
    /// Spectrum and effective rank of the end-to-end matrix under the prior.
    Rank {
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        m_prime: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 5)]
        width: usize,
        #[arg(long, default_value = "linear")]
        activation: Activation,
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

/// Set when a run finished but some of its parts were flagged.
struct Flagged;

fn load_instance(path: &Path) -> Result<ProblemInstance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ProblemInstance::from_json(&text)?)
}

fn model(args: &ModelArgs, precision: Precision) -> Result<(FactorizationSpec, ProblemInstance)> {
    let inst = load_instance(&args.instance)?;
    let (m, mp) = inst.shape();
    let spec = FactorizationSpec::new(args.depth, args.width, m, mp, args.activation)?.with_precision(precision);
    Ok((spec, inst))
}

fn print_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn sweep_config(args: &SweepArgs, cli: &Cli) -> Result<SweepConfig> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), None) => harness::load_preset(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).context("parsing sweep configuration")?
        }
        _ => bail!("pass exactly one of --preset or --config"),
    };
    if args.desk_scale {
        cfg = harness::desk_scale(&cfg);
    }
    if cli.seed != 0 {
        cfg.master_seed = cli.seed;
    }
    if cli.f32 {
        cfg.gnc.precision = Precision::F32;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Option<Flagged>> {
    let precision = if cli.f32 { Precision::F32 } else { Precision::F64 };
    match &cli.command {
        Command::Gen { problem: p, out } => {
            let params = ProblemParams::new(p.m, p.m_prime, p.rank, p.norm, p.n, p.kind, cli.seed);
            let inst = ProblemInstance::generate(&params)?;
            fs::write(out, inst.to_json()?).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Gnc { model: margs, prior, eps_train, samples, out } => {
            let (spec, inst) = model(margs, precision)?;
            let mut cfg = GncConfig::new(*eps_train, *samples, prior.spec());
            cfg.precision = precision;
            let report = run_gnc(&spec, &inst, &cfg, cli.seed)?;
            print_json(&report, out.as_deref())?;
            if report.accepted_count == 0 {
                log::warn!("no draw reached training loss below {eps_train}");
                return Ok(Some(Flagged));
            }
        }
        Command::Gd { model: margs, lr, epochs, init_scale, momentum, fixed_lr, record_every, trace } => {
            let (spec, inst) = model(margs, Precision::F64)?;
            let mut cfg = GdConfig::new(*lr, *epochs, *init_scale);
            cfg.momentum = *momentum;
            cfg.adaptive = !fixed_lr;
            cfg.record_every = *record_every;
            let tr = run_gd(&spec, &inst, &cfg, cli.seed)?;
            if let Some(path) = trace {
                tr.write_csv(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
            }
            print_json(
                &serde_json::json!({
                    "outcome": tr.outcome,
                    "final_train_loss": tr.final_train_loss(),
                    "final_gen_loss": tr.final_gen_loss(),
                }),
                None,
            )?;
            if tr.outcome != GdOutcome::Completed {
                return Ok(Some(Flagged));
            }
        }
        Command::Prior { model: margs, prior, trials } => {
            let (spec, inst) = model(margs, Precision::F64)?;
            let losses = run_prior_baseline(&spec, &inst, &prior.spec(), *trials, cli.seed)?;
            let q = stats::Quartiles::of(&losses);
            print_json(&serde_json::json!({ "trials": trials, "quartiles": q, "mean": stats::mean(&losses) }), None)?;
        }
        Command::Sweep(args) => {
            if args.list {
                for name in harness::list_presets() {
                    println!("{name}");
                }
                return Ok(None);
            }
            let cfg = sweep_config(args, cli)?;
            if args.dump_config {
                print_json(&cfg, None)?;
                return Ok(None);
            }
            let res = harness::run_sweep(&cfg)?;
            for path in harness::write_outputs(&res, &args.out)? {
                log::info!("wrote {}", path.display());
            }
            for a in res.aggregates() {
                let median = a.quartiles.map_or("undefined".to_string(), |q| format!("{:.4e}", q.median));
                println!("{}={:<4} {:<6} median {median} ({} undefined)", cfg.axis.name(), a.axis_value, a.optimizer.name(), a.undefined);
            }
            if res.has_failures() {
                log::warn!("some cells failed; see the status column of cells.csv");
                return Ok(Some(Flagged));
            }
        }
        Command::Diag { probe } => match probe {
            Diag::Independence { model: margs, prior, eps_train, eps_gen, samples } => {
                let (spec, inst) = model(margs, Precision::F64)?;
                let prior = prior.spec();
                let eps_gen = match eps_gen {
                    Some(e) => *e,
                    None => stats::median(&run_prior_baseline(&spec, &inst, &prior, 10_000, cli.seed ^ 1)?)
                        .context("no finite prior losses")?,
                };
                let probe = probe_independence(&spec, &inst, &prior, *eps_train, eps_gen, *samples, cli.seed)?;
                print_json(&serde_json::json!({ "probe": probe, "z_score": probe.z_score() }), None)?;
            }
            Diag::Spectrum { width, depth, trials, normalize } => {
                let run = probe_spectrum(*width, *depth, *normalize, cli.seed, *trials)?;
                print_json(
                    &serde_json::json!({
                        "median_gap": run.median_gap(),
                        "median_rank_one_residual": run.median_residual(),
                        "failed_trials": run.failed_trials,
                        "probes": run.probes,
                    }),
                    None,
                )?;
            }
            Diag::Rank { m, m_prime, depth, width, activation, prior, trials } => {
                let spec = FactorizationSpec::new(*depth, *width, *m, *m_prime, *activation)?;
                let run = probe_end_to_end_rank(&spec, &prior.spec(), cli.seed, *trials)?;
                let ranks: Vec<f64> = run.probes.iter().map(|p| p.effective_rank).collect();
                print_json(
                    &serde_json::json!({
                        "median_effective_rank": stats::median(&ranks),
                        "median_gap": run.median_gap(),
                        "median_rank_one_residual": run.median_residual(),
                        "failed_trials": run.failed_trials,
                    }),
                    None,
                )?;
            }
        },
        Command::Plot { input, out, title } => {
            let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
            let rows = harness::read_cells_csv(file)?;
            let axis = rows.first().map_or(Axis::Width, |r| r.axis);
            let title = title.clone().unwrap_or_else(|| input.display().to_string());
            let svg = harness::render_svg(axis, &title, &harness::aggregate_rows(&rows));
            fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(None)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Flagged)) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
