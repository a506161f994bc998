//! `rs-tensor` command-line front end.

mod commands;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rs_tensor::Error;

use output::Sink;
use settings::Settings;

#[derive(Parser)]
#[command(name = "rs-tensor", version, about = "Range-separated tensor summation of particle potentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand the kernel, project it on the grid, split, write vectors and the error table.
    Kernel(Run),
    /// Build the RS tensor of a particle system and write the container.
    Assemble(Run),
    /// Interaction energy against direct summation.
    Energy(Run),
    /// Finite-difference forces against direct summation.
    Forces(Run),
    /// Side-matrix singular values of the long part for several cluster sizes.
    Svals(Run),
    /// Scattered-data interpolation on the full grid.
    Interp(Run),
    /// Generate a particle system and write it in the particle text format.
    Gen(Run),
}

#[derive(Args, Clone)]
struct Run {
    /// `key = value` file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: RS_TENSOR_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    keys: Keys,
}

/// One flag per config key.
#[derive(Args, Clone, Default)]
#[allow(non_snake_case)]
struct Keys {
    /// Grid points per axis.
    #[arg(long)]
    n: Option<String>,
    /// Box half-width.
    #[arg(long)]
    b: Option<String>,
    /// Expansion order, or `auto`.
    #[arg(long = "M")]
    M: Option<String>,
    #[arg(long = "C0")]
    C0: Option<String>,
    /// newton | yukawa:<λ> | slater:<λ> | gaussian:<λ>
    #[arg(long)]
    kernel: Option<String>,
    /// cell | collocation
    #[arg(long)]
    entry: Option<String>,
    /// Split distance.
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    /// max | l1
    #[arg(long)]
    criterion: Option<String>,
    /// Number of long-range terms.
    #[arg(long = "Rl")]
    Rl: Option<String>,
    /// Short-range window radius in cells.
    #[arg(long)]
    gamma: Option<String>,
    /// strict | soft | soft:<cap>
    #[arg(long)]
    overlap: Option<String>,
    /// Rank-truncation tolerance.
    #[arg(long)]
    eps: Option<String>,
    /// Fixed Tucker ranks r1,r2,r3.
    #[arg(long)]
    ranks: Option<String>,
    #[arg(long)]
    sweeps: Option<String>,
    #[arg(long = "eps_c2t")]
    eps_c2t: Option<String>,
    #[arg(long = "eps_t2c")]
    eps_t2c: Option<String>,
    /// tucker | canonical
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    reduce: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long = "expansion_tol")]
    expansion_tol: Option<String>,
    /// Particle file.
    #[arg(long)]
    particles: Option<String>,
    /// Lattice k or kxkxk.
    #[arg(long)]
    lattice: Option<String>,
    #[arg(long)]
    spacing: Option<String>,
    /// Cluster size (svals: comma-separated list).
    #[arg(long = "N")]
    N: Option<String>,
    #[arg(long = "min_sep")]
    min_sep: Option<String>,
    /// unit | random_sign | uniform
    #[arg(long)]
    charges: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    probes: Option<String>,
    #[arg(long = "r_min")]
    r_min: Option<String>,
    #[arg(long = "r_max")]
    r_max: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    /// CG relative residual target.
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "max_iter")]
    max_iter: Option<String>,
}

impl Keys {
    fn pairs(&self) -> [(&'static str, &Option<String>); 34] {
        [
            ("n", &self.n),
            ("b", &self.b),
            ("M", &self.M),
            ("C0", &self.C0),
            ("kernel", &self.kernel),
            ("entry", &self.entry),
            ("sigma", &self.sigma),
            ("delta", &self.delta),
            ("criterion", &self.criterion),
            ("Rl", &self.Rl),
            ("gamma", &self.gamma),
            ("overlap", &self.overlap),
            ("eps", &self.eps),
            ("ranks", &self.ranks),
            ("sweeps", &self.sweeps),
            ("eps_c2t", &self.eps_c2t),
            ("eps_t2c", &self.eps_t2c),
            ("format", &self.format),
            ("reduce", &self.reduce),
            ("threshold", &self.threshold),
            ("expansion_tol", &self.expansion_tol),
            ("particles", &self.particles),
            ("lattice", &self.lattice),
            ("spacing", &self.spacing),
            ("N", &self.N),
            ("min_sep", &self.min_sep),
            ("charges", &self.charges),
            ("seed", &self.seed),
            ("probes", &self.probes),
            ("r_min", &self.r_min),
            ("r_max", &self.r_max),
            ("samples", &self.samples),
            ("tol", &self.tol),
            ("max_iter", &self.max_iter),
        ]
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Capacity(_) => 4,
        Error::Numerical(_) | Error::Solver(_) | Error::Resolution(_) | Error::Separation(_) | Error::Capability(_) => 3,
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Domain(_)
        | Error::Packing(_)
        | Error::Shape(_)
        | Error::IndexOutOfRange { .. }
        | Error::Format(_)
        | Error::Io(_) => 2,
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), Error> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var("RS_TENSOR_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| Error::Config(format!("invalid RS_TENSOR_THREADS '{v}'")))?),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let (command, run) = match cli.command {
        Command::Kernel(r) => (commands::kernel as fn(&Settings, &mut Sink) -> Result<(), Error>, r),
        Command::Assemble(r) => (commands::assemble as _, r),
        Command::Energy(r) => (commands::energy as _, r),
        Command::Forces(r) => (commands::forces as _, r),
        Command::Svals(r) => (commands::svals as _, r),
        Command::Interp(r) => (commands::interp as _, r),
        Command::Gen(r) => (commands::gen as _, r),
    };
    init_threads(run.threads)?;
    let mut settings = Settings::load(run.config.as_deref())?;
    for (key, value) in run.keys.pairs() {
        if let Some(v) = value {
            settings.set(key, v.clone());
        }
    }
    let mut sink = Sink::new(&run.out)?;
    command(&settings, &mut sink)?;
    sink.finish()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
