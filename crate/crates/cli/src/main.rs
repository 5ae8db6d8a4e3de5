//! Command-line front end: validate and compile scheduling trees, replay
//! traces and generate synthetic ones.
//!
//! Exit status is 0 on success, 1 when the input has problems (parse errors,
//! validation failures, mesh diagnostics, simulation errors) and 2 when a
//! file cannot be read or written.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use pifo::compiler::{check_config, compile_with, CompileOptions, MeshConfig, DEFAULT_MAX_BLOCKS};
use pifo::hw::HwConfig;
use pifo::mesh::{run_mesh, BackendKind, MeshOptions};
use pifo::scalar::{parse_decimal, Fixed, TxnScalar};
use pifo::sim::{run_behavioral, SimConfig};
use pifo::trace::{self, GenSpec, LoadError, TraceError};
use pifo::tree::SchedTree;
use pifo::PacketRecord;

#[derive(Parser)]
#[command(name = "pifo", version, about = "Programmable packet scheduling with PIFO trees")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a tree config, then print its leaf-to-root paths.
    Validate { tree: PathBuf },
    /// Compile a tree to a mesh configuration.
    Compile {
        tree: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_BLOCKS)]
        max_blocks: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a mesh configuration against its tree.
    Check { tree: PathBuf, mesh: PathBuf },
    /// Replay a trace. TRACE is a CSV file or `gen:<generator>`.
    Run {
        tree: PathBuf,
        trace: String,
        #[arg(long, value_enum, default_value_t = Mode::Behavioral)]
        mode: Mode,
        /// Bytes per tick; decimals allowed.
        #[arg(long, default_value = "1")]
        line_rate: String,
        #[arg(long)]
        horizon: Option<u64>,
        /// Seed for `gen:` traces.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Window in ticks for the statistics summary.
        #[arg(long)]
        stats_window: Option<u64>,
        /// Run the mesh at 5 cycles per 4 ticks.
        #[arg(long)]
        overclock: bool,
        /// Departure log; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Event log; stderr when absent.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Statistics summary; stderr when absent.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Generate a trace, e.g. `backlogged:flows=2,len=100,ticks=10000`.
    Gen {
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Behavioral,
    Mesh,
    Hw,
}

/// A failure and the exit status it maps to.
enum Failure {
    Diagnostics(String),
    Io(String),
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { .. } => Failure::Io(e.to_string()),
            LoadError::Config { .. } => Failure::Diagnostics(e.to_string()),
        }
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Diagnostics(e.to_string()),
        }
    }
}

fn io_fail(what: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", what.display()))
}

fn output(path: &Option<PathBuf>, fallback: Box<dyn Write>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_fail(p))?)),
        None => fallback,
    })
}

fn parse_rate(s: &str) -> Result<Fixed, Failure> {
    parse_decimal(s)
        .and_then(|(n, d)| Fixed::from_ratio(n, d))
        .filter(|r| *r > Fixed::ZERO)
        .ok_or_else(|| Failure::Diagnostics(format!("line rate `{s}` is not a positive number")))
}

fn load_trace(arg: &str, seed: u64) -> Result<Vec<PacketRecord>, Failure> {
    if let Some(spec) = arg.strip_prefix("gen:") {
        return Ok(trace::generate_trace(&GenSpec::parse(spec)?, seed)?);
    }
    let path = Path::new(arg);
    let file = File::open(path).map_err(io_fail(path))?;
    trace::read_trace(io::BufReader::new(file)).map_err(|e| match e {
        TraceError::Io(e) => io_fail(path)(e),
        e => Failure::Diagnostics(format!("{}: {e}", path.display())),
    })
}

fn compiled(tree: &Arc<SchedTree>, max_blocks: usize) -> Result<MeshConfig, Failure> {
    compile_with(tree, &CompileOptions { max_blocks }).map_err(|e| Failure::Diagnostics(e.to_string()))
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Validate { tree } => {
            let (t, _) = trace::load_config(&tree)?;
            println!("{}: {} nodes, depth {}", tree.display(), t.len(), t.depth());
            print!("{}", t.path_table());
        }
        Cmd::Compile { tree, max_blocks, out } => {
            let (t, _) = trace::load_config(&tree)?;
            let cfg = compiled(&t, max_blocks)?;
            let mut w = output(&out, Box::new(io::stdout()))?;
            w.write_all(cfg.to_text().as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| Failure::Io(e.to_string()))?;
        }
        Cmd::Check { tree, mesh } => {
            let (t, _) = trace::load_config(&tree)?;
            let text = std::fs::read_to_string(&mesh).map_err(io_fail(&mesh))?;
            let cfg = MeshConfig::from_text(&text, &t)
                .map_err(|e| Failure::Diagnostics(format!("{}: {e}", mesh.display())))?;
            let diags = check_config(&cfg);
            if !diags.is_empty() {
                let lines: Vec<String> = diags.iter().map(ToString::to_string).collect();
                return Err(Failure::Diagnostics(lines.join("\n")));
            }
            println!("{}: ok", mesh.display());
        }
        Cmd::Run {
            tree,
            trace: trace_arg,
            mode,
            line_rate,
            horizon,
            seed,
            stats_window,
            overclock,
            out,
            events,
            stats,
        } => {
            let (t, _) = trace::load_config(&tree)?;
            let packets = load_trace(&trace_arg, seed)?;
            let mut sim = SimConfig::default().with_line_rate(parse_rate(&line_rate)?);
            if let Some(h) = horizon {
                sim = sim.with_horizon(h);
            }
            let result = match mode {
                Mode::Behavioral => run_behavioral(&t, &packets, &sim),
                Mode::Mesh | Mode::Hw => {
                    let cfg = compiled(&t, DEFAULT_MAX_BLOCKS)?;
                    let opts = MeshOptions {
                        backend: if mode == Mode::Hw {
                            BackendKind::Hardware(HwConfig::default())
                        } else {
                            BackendKind::Behavioral
                        },
                        overclock,
                        ..MeshOptions::default()
                    };
                    run_mesh(&cfg, &packets, &sim, &opts)
                }
            };
            let log = result.map_err(|e| Failure::Diagnostics(e.to_string()))?;
            let w = output(&out, Box::new(io::stdout()))?;
            trace::write_departures(w, &log.departures)?;
            let mut w = output(&events, Box::new(io::stderr()))?;
            trace::write_events(&mut w, &log.events)
                .and_then(|_| w.flush())
                .map_err(|e| Failure::Io(e.to_string()))?;
            if log.max_deferral > 0 {
                eprintln!("max shaping deferral: {} ticks", log.max_deferral);
            }
            if let Some(window) = stats_window {
                let s = trace::stats(&log.departures, window).with_classes(&t);
                let mut w = output(&stats, Box::new(io::stderr()))?;
                s.write_summary(&mut w)
                    .and_then(|_| w.flush())
                    .map_err(|e| Failure::Io(e.to_string()))?;
            }
        }
        Cmd::Gen { spec, seed, out } => {
            let packets = trace::generate_trace(&GenSpec::parse(&spec)?, seed)?;
            trace::write_trace(output(&out, Box::new(io::stdout()))?, &packets)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage mistakes are diagnostics; 2 is reserved for I/O.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Diagnostics(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
