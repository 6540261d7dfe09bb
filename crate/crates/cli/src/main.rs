use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use tfponet::harness::{self, ErrorNorm, OutputMapKind, RunConfig};
use tfponet::physics_loss::Reduction;
use tfponet::problem::FluxConvention;
use tfponet::{Error, Result};

const THREADS_VAR: &str = "TFPONET_THREADS";

#[derive(Parser)]
#[command(name = "tfponet", version, about = "Tailored finite point operator network for elliptic interface problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample source fields and write train.tfpo / test.tfpo (test with references).
    GenData {
        #[command(flatten)]
        run: RunArgs,
        /// Also store least-squares coefficients.
        #[arg(long)]
        with_oracle: bool,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train a network on a training file.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a test file with references.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Evaluate least-squares coefficients on a test file with references.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "oracle")]
        out: PathBuf,
    },
    /// Oracle error norms over a ladder of cell counts (1D benchmarks).
    Convergence {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated cell counts.
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        cells: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = NormArg::Broken)]
        norm: NormArg,
        /// Highest derivative of the broken norm.
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value = "convergence")]
        out: PathBuf,
    },
    /// Attach fine-grid reference solutions to a dataset file.
    Reference {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        /// Output file; defaults to overwriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Broken,
    Epsilon,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

/// Run configuration: a preset or a config/manifest file, then overrides.
#[derive(Args)]
struct RunArgs {
    /// JSON run configuration or a manifest written by an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Diffusion of the 1d-singular family.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Training mesh, `NX` or `NXxNY`.
    #[arg(long, value_parser = parse_cells)]
    train_cells: Option<[usize; 2]>,
    /// Evaluation grid, `NX` or `NXxNY`.
    #[arg(long, value_parser = parse_cells)]
    test_cells: Option<[usize; 2]>,
    #[arg(long)]
    length_scale: Option<f64>,
    /// Number of training samples.
    #[arg(long)]
    train: Option<usize>,
    /// Number of test samples.
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    gamma_c: Option<f64>,
    #[arg(long)]
    gamma_b: Option<f64>,
    #[arg(long)]
    gamma_j: Option<f64>,
    #[arg(long)]
    gamma_d: Option<f64>,
    /// `sum` or `mean`.
    #[arg(long, value_parser = parse_enum::<Reduction>)]
    reduction: Option<Reduction>,
    /// `derivative` or `flux`.
    #[arg(long, value_parser = parse_enum::<FluxConvention>)]
    flux_convention: Option<FluxConvention>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Learning-rate factor per step.
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Allow multi-threaded training (results then depend on scheduling).
    #[arg(long)]
    nondeterministic: bool,
    #[arg(long)]
    points_per_edge: Option<usize>,
    #[arg(long)]
    quad_order: Option<usize>,
    /// `range` or `jacobian`.
    #[arg(long, value_parser = parse_enum::<OutputMapKind>)]
    output_map: Option<OutputMapKind>,
    #[arg(long)]
    output_margin: Option<f64>,
    #[arg(long)]
    reference_refine: Option<usize>,
    #[arg(long)]
    plot_samples: Option<usize>,
}

fn parse_cells(s: &str) -> std::result::Result<[usize; 2], String> {
    let mut parts = s.split(['x', 'X']);
    let nx = parts.next().unwrap_or("").trim().parse::<usize>().map_err(|e| e.to_string())?;
    let ny = match parts.next() {
        Some(p) => p.trim().parse::<usize>().map_err(|e| e.to_string())?,
        None => 1,
    };
    if parts.next().is_some() {
        return Err(format!("expected NX or NXxNY, got `{s}`"));
    }
    Ok([nx, ny])
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match (&self.config, &self.benchmark) {
            (Some(path), _) => harness::read_config(path)?,
            (None, Some(b)) => match self.preset {
                Preset::Desk => RunConfig::desk(b)?,
                Preset::Full => RunConfig::full(b)?,
            },
            (None, None) => return Err(Error::Config("either --config or --benchmark is required".into())),
        };
        if self.config.is_some() {
            if let Some(b) = &self.benchmark {
                c.benchmark = b.clone();
            }
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+;)*) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set! {
            train_cells => train_resolution;
            test_cells => test_resolution;
            length_scale => length_scale;
            train => n_train;
            test => n_test;
            gamma_c => loss_weights.continuity;
            gamma_b => loss_weights.boundary;
            gamma_j => loss_weights.jump;
            gamma_d => loss_weights.data;
            reduction => reduction;
            flux_convention => flux_convention;
            lr => optimizer.lr;
            beta1 => optimizer.beta1;
            beta2 => optimizer.beta2;
            adam_eps => optimizer.eps;
            weight_decay => optimizer.weight_decay;
            lr_decay => optimizer.decay;
            steps => steps;
            batch_size => batch_size;
            seed => seed;
            points_per_edge => points_per_edge;
            quad_order => quad_order;
            output_map => output_map;
            output_margin => output_margin;
            reference_refine => reference_refine;
            plot_samples => plot_samples;
        }
        if self.epsilon.is_some() {
            c.epsilon = self.epsilon;
        }
        if self.nondeterministic {
            c.deterministic = false;
        }
        c.validate()?;
        Ok(c)
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_VAR} must be positive")));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenData { run, with_oracle, out } => {
            let config = run.resolve()?;
            let (train, test) = harness::run_gen_data(&config, &out, with_oracle)?;
            println!("{}\n{}", train.display(), test.display());
        }
        Command::Train { run, data, out } => {
            let config = run.resolve()?;
            let (_, trace) = harness::run_train(&config, &data, &out)?;
            if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
                println!("loss {:e} -> {:e} after {} steps", first.loss, last.loss, trace.len());
            }
        }
        Command::Eval { checkpoint, data, out } => print_json(&harness::run_eval(&checkpoint, &data, &out)?)?,
        Command::Oracle { run, data, out } => print_json(&harness::run_oracle(&run.resolve()?, &data, &out)?)?,
        Command::Convergence { run, cells, samples, norm, order, out } => {
            let config = run.resolve()?;
            let norm = match norm {
                NormArg::Broken => ErrorNorm::Broken { order },
                NormArg::Epsilon => {
                    let eps = config.problem()?.epsilon.ok_or_else(|| Error::Config(format!("{} has no small parameter", config.benchmark)))?;
                    ErrorNorm::Epsilon { epsilon: eps }
                }
            };
            print_json(&harness::run_convergence(&config, &cells, samples, norm, &out)?)?;
        }
        Command::Reference { run, data, out } => {
            let config = run.resolve()?;
            let out = out.unwrap_or_else(|| data.clone());
            println!("{}", harness::run_reference(&config, &data, &out)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
