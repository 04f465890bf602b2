use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use self_emd::io::commands::{
    cmd_emd, cmd_gen_synthetic, cmd_heatmap, cmd_oracle_check, cmd_sinkhorn_bench, cmd_train, BenchArgs,
    CommandError, HeatmapArgs, OracleArgs, PairArgs,
};
use self_emd::ot::{DEFAULT_ITERATIONS, DEFAULT_LAMBDA};

#[derive(Parser)]
#[command(name = "semd", version, about = "EMD similarity between feature maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Similarity and loss between two feature maps.
    Emd(Pair),
    /// Export one node's row of the transport plan as CSV.
    Heatmap {
        #[command(flatten)]
        pair: Pair,
        /// Row-major node index in the first map.
        #[arg(long)]
        node: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entropic gap and marginal violation over λ and iteration counts.
    SinkhornBench {
        #[arg(long, default_value_t = 8)]
        size: usize,
        /// Comma-separated λ values.
        #[arg(long, value_delimiter = ',', default_value = "5,25,100")]
        lambda: Vec<f64>,
        /// Comma-separated iteration counts.
        #[arg(long, value_delimiter = ',', default_value = "10")]
        iters: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write 0 in the timing column so output is reproducible.
        #[arg(long)]
        no_timing: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the solvers against each other and against enumeration.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 5)]
        max_size: usize,
        #[arg(long, default_value_t = 200.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the toy encoder; writes checkpoint.semd and history.csv.
    Train {
        /// key=value config file; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write synthetic multi-object scenes as PPM files.
    GenSynthetic {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Pair {
    fmap_a: PathBuf,
    fmap_b: PathBuf,
    #[arg(long)]
    vec_a: Option<PathBuf>,
    #[arg(long)]
    vec_b: Option<PathBuf>,
    /// Pyramid grid sizes, e.g. 7,5,3.
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iters: usize,
    /// Use the exact transportation simplex instead of Sinkhorn.
    #[arg(long)]
    exact: bool,
}

impl From<Pair> for PairArgs {
    fn from(p: Pair) -> Self {
        PairArgs {
            fmap_a: p.fmap_a,
            fmap_b: p.fmap_b,
            vec_a: p.vec_a,
            vec_b: p.vec_b,
            grids: p.grids,
            lambda: p.lambda,
            iterations: p.iters,
            exact: p.exact,
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CommandError> {
    let text = match cli.command {
        Command::Emd(pair) => cmd_emd(&pair.into())?,
        Command::Heatmap { pair, node, out } => cmd_heatmap(&HeatmapArgs { pair: pair.into(), node, out })?,
        Command::SinkhornBench { size, lambda, iters, instances, seed, no_timing, out } => {
            let csv = cmd_sinkhorn_bench(&BenchArgs {
                size,
                lambdas: lambda,
                iterations: iters,
                instances,
                seed,
                timing: !no_timing,
            })?;
            match out {
                Some(path) => {
                    self_emd::io::atomic_write(&path, csv.as_bytes())
                        .map_err(|e| CommandError::Internal(format!("{}: {e}", path.display())))?;
                    format!("out={}\n", path.display())
                }
                None => csv,
            }
        }
        Command::OracleCheck { instances, max_size, lambda, iters, seed } => {
            let (text, passed) =
                cmd_oracle_check(&OracleArgs { instances, max_size, lambda, iterations: iters, seed, ..OracleArgs::default() })?;
            print!("{text}");
            return Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::Train { config, seed, out } => cmd_train(config.as_deref(), seed, &out)?,
        Command::GenSynthetic { n, seed, size, out } => cmd_gen_synthetic(n, seed, size, &out)?,
    };
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("semd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
