//! Command-line driver for the overhead, utilization and adaptation experiments.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dashsim::catalog::load_catalog;
use dashsim::netem::BandwidthTrajectory;
use dashsim::scenario::{
    run_adaptation, run_overhead_sweep, run_utilization_grid, table2, write_averages_csv,
    write_table2_csv, Experiment, ScenarioSpec,
};
use dashsim::{Result, StackKind};

#[derive(Parser)]
#[command(name = "dashsim", version, about = "DASH streaming over HTTP/2, SSL and QUIC stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Protocol overhead of every stack at every representation.
    Overhead(RunArgs),
    /// Link utilization per stack, RTT and representation.
    Utilization(RunArgs),
    /// Adaptive sessions against a bandwidth trajectory.
    Adaptation(RunArgs),
    /// Header overhead of full-MTU frames on the TCP and QUIC paths.
    Table2 {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Args)]
struct RunArgs {
    /// Stack name or `all`; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    stack: Vec<String>,
    /// Round-trip times in milliseconds.
    #[arg(long, value_delimiter = ',')]
    rtt: Option<Vec<u64>>,
    /// Bandwidth trajectory file for adaptation runs.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Catalog file replacing the built-in ladder.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Representation levels for fixed-level experiments.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    /// Segments per fixed-level cell.
    #[arg(long)]
    segments: Option<u32>,
    /// Output directory; without it the summary goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write per-run packet and frame logs.
    #[arg(long)]
    dump_packets: bool,
}

fn parse_stacks(names: &[String]) -> Result<Vec<StackKind>> {
    let mut out = Vec::new();
    for name in names {
        let kinds = if name == "all" { StackKind::ALL.to_vec() } else { vec![name.parse()?] };
        for k in kinds {
            if !out.contains(&k) {
                out.push(k);
            }
        }
    }
    Ok(out)
}

fn build_spec(experiment: Experiment, args: RunArgs) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::new(experiment);
    spec.stacks = parse_stacks(&args.stack)?;
    if let Some(rtt) = args.rtt {
        spec.rtts_ms = rtt;
    }
    if let Some(path) = args.catalog {
        spec.catalog = load_catalog(path)?;
        spec.levels = (0..spec.catalog.level_count()).collect();
    }
    if let Some(levels) = args.levels {
        spec.levels = levels;
    }
    if let Some(path) = args.trajectory {
        spec.trajectory = Arc::new(BandwidthTrajectory::load(path)?);
    }
    if let Some(seeds) = args.seeds {
        spec.seeds = seeds;
    }
    if let Some(n) = args.segments {
        spec.segments_per_cell = n;
    }
    spec.out_dir = args.out;
    spec.dump_packets = args.dump_packets;
    if spec.dump_packets && spec.out_dir.is_none() {
        return Err(dashsim::Error::Invalid {
            what: "arguments",
            message: "--dump-packets needs --out".into(),
        });
    }
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    match cli.command {
        Command::Table2 { out, format: Format::Csv } => {
            let rows = table2();
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                let path = dir.join("table2.csv");
                let file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
                write_table2_csv(&rows, io::BufWriter::new(file))?;
            }
            write_table2_csv(&rows, stdout.lock())?;
        }
        Command::Overhead(args) => {
            let spec = build_spec(Experiment::Overhead, args)?;
            let table = run_overhead_sweep(&spec)?;
            if spec.out_dir.is_none() {
                table.write_summary_csv(stdout.lock())?;
            }
        }
        Command::Utilization(args) => {
            let spec = build_spec(Experiment::Utilization, args)?;
            let table = run_utilization_grid(&spec)?;
            if spec.out_dir.is_none() {
                table.write_summary_csv(stdout.lock())?;
                writeln!(stdout.lock()).map_err(|e| io_err("stdout", e))?;
            }
            write_averages_csv(&table.rtt_averages(), if spec.out_dir.is_none() {
                Box::new(stdout.lock()) as Box<dyn Write>
            } else {
                Box::new(io::stderr())
            })?;
        }
        Command::Adaptation(args) => {
            let spec = build_spec(Experiment::Adaptation, args)?;
            let out = run_adaptation(&spec)?;
            if spec.out_dir.is_none() {
                out.table.write_summary_csv(stdout.lock())?;
            }
        }
    }
    Ok(())
}

fn io_err(path: impl Into<PathBuf>, e: io::Error) -> dashsim::Error {
    dashsim::Error::Io { path: path.into(), source: e }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("dashsim: error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                msg += &format!("\n  caused by: {s}");
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
