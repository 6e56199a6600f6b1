use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eigeninf::experiment::run_experiment;
use eigeninf::mle::{detq_sign_map, SignMapGrid};
use eigeninf::relations::generate_relations;
use eigeninf::{ExperimentConfig, Family, RelationKind};

/// Caps the rayon worker count when set to a positive integer.
const THREADS_ENV: &str = "EIGENINF_THREADS";

#[derive(Parser)]
#[command(name = "eigeninf", version, about = "Covariance eigen-inference benchmarks")]
struct Cli {
    /// Print the default configuration and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble experiment described by a config file.
    Run {
        config: PathBuf,
        /// Overrides the `output` key of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map sign(det Q) over two-atom models.
    Signmap {
        #[arg(long)]
        r: f64,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "normal")]
        family: Family,
        /// Grid size as WIDTHxHEIGHT.
        #[arg(long, default_value = "200x200", value_parser = parse_grid)]
        grid: (usize, usize),
        /// Largest Λ_s on the horizontal axis.
        #[arg(long, default_value_t = 3.0)]
        lambda_max: f64,
        /// Output prefix; writes `<out>.csv` and `<out>.pgm`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a moment relation table.
    Relations {
        #[arg(long)]
        kind: RelationKind,
        #[arg(long)]
        order: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration.
    PrintConfig,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid `{s}` is not WIDTHxHEIGHT"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width `{w}`"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height `{h}`"))?;
    if w == 0 || h == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((w, h))
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_ENV}=`{v}` is not a positive integer"))?;
    if n == 0 {
        return Err(format!("{THREADS_ENV} must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn with_ext(prefix: &PathBuf, ext: &str) -> PathBuf {
    let mut s = prefix.clone().into_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let command = match (cli.print_config, cli.command) {
        (true, _) | (false, Some(Command::PrintConfig)) => {
            print!("{}", ExperimentConfig::default());
            return Ok(());
        }
        (false, None) => return Err("no subcommand given (see --help)".into()),
        (false, Some(c)) => c,
    };
    init_threads()?;
    match command {
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output = out;
            }
            let report = run_experiment(&cfg)?;
            report.emit(&cfg.output)?;
            print!("{}", report.table_csv());
        }
        Command::Signmap {
            r,
            k,
            family,
            grid: (w, h),
            lambda_max,
            out,
        } => {
            let (ls, ps) = SignMapGrid::axes(w, h, lambda_max);
            let grid = detq_sign_map(r, k, family, &ls, &ps)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            grid.write_csv(BufWriter::new(fs::File::create(with_ext(&out, "csv"))?))?;
            grid.write_pgm(BufWriter::new(fs::File::create(with_ext(&out, "pgm"))?))?;
            println!(
                "negative {:.16e} zero {:.16e} positive {:.16e}",
                grid.fraction(-1),
                grid.fraction(0),
                grid.fraction(1)
            );
        }
        Command::Relations { kind, order, out } => {
            if order == 0 {
                return Err("order must be positive".into());
            }
            let table = generate_relations(kind, order).to_string();
            match out {
                Some(path) => fs::write(path, table)?,
                None => io::stdout().lock().write_all(table.as_bytes())?,
            }
        }
        Command::PrintConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
