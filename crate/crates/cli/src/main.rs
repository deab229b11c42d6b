use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use crane_core::evaluation::{parse_methods, run_benchmark, theory_suite, BenchOptions, MethodKind};
use crane_core::io::{load_model, read_config, read_edge_keys, read_edge_list, save_model, write_edge_list};
use crane_core::training::zipf_stream;
use crane_core::{train, CarryMode, CraneError};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "crane", version, about = "Hierarchical neural sketch for graph-stream frequency estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on synthetic tasks.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config file's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace, one `step<TAB>loss` line per optimizer step.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Store an edge stream into a model's memories.
    Ingest {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print estimated frequencies for a list of edges.
    Query {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        edges: PathBuf,
    },
    /// Compare methods on a stream under one memory budget.
    Bench {
        /// Trained model; required when `crane` is among the methods.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, default_value_t = 65_536)]
        budget: usize,
        #[arg(long, default_value = "crane,tcm,cms")]
        methods: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Full report; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Summary table (TSV).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Record throughput. Timings vary between runs.
        #[arg(long)]
        timing: bool,
    },
    /// Run the property experiments; exits 0 only if every check passes.
    Theory {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trained model for the isolation and decoder checks.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write a synthetic Zipf edge stream.
    Gen {
        #[arg(long, default_value_t = 100_000)]
        updates: usize,
        #[arg(long, default_value_t = 10_000)]
        universe: usize,
        #[arg(long, default_value_t = 1.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1 << 20)]
        id_space: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Error(CraneError),
    ChecksFailed(usize),
}

impl From<CraneError> for Failure {
    fn from(e: CraneError) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, seed, out, trace } => {
            let mut cfg = read_config(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let mut trace_out = trace.as_deref().map(create).transpose()?;
            let mut write_err = None;
            let outcome = train(&cfg.train, &cfg.task, |e| {
                if e.step % 100 == 0 {
                    info!("step {} loss {:.6}", e.step, e.mean_loss);
                }
                if let (Some(w), None) = (trace_out.as_mut(), &write_err) {
                    if let Err(err) = writeln!(w, "{}\t{}", e.step, e.mean_loss) {
                        write_err = Some(err);
                    }
                }
            })?;
            if let Some(err) = write_err {
                return Err(err.into());
            }
            if let Some(mut w) = trace_out {
                w.flush()?;
            }
            save_model(&out, &outcome.model)?;
        }
        Command::Ingest { model, stream, out } => {
            let mut m = load_model(&model)?;
            m.set_carry_mode(CarryMode::MiniBatch);
            let parsed = read_edge_list(&stream)?;
            m.ingest(&parsed.edges)?;
            info!("stored {} updates, {} active layers", parsed.edges.len(), m.active_layers());
            save_model(&out, &m)?;
        }
        Command::Query { model, edges } => {
            let m = load_model(&model)?;
            let keys = read_edge_keys(&edges)?;
            let mut w = BufWriter::new(std::io::stdout().lock());
            for e in &keys.edges {
                writeln!(w, "{}\t{}\t{}", e.origin, e.dest, m.query(e.origin, e.dest))?;
            }
            w.flush()?;
        }
        Command::Bench { model, stream, budget, methods, seed, report, table, timing } => {
            let methods = parse_methods(&methods)?;
            let model = match (&model, methods.contains(&MethodKind::Crane)) {
                (Some(p), _) => Some(load_model(p)?),
                (None, true) => {
                    return Err(CraneError::Parameter("method crane needs --model".into()).into())
                }
                (None, false) => None,
            };
            let parsed = read_edge_list(&stream)?;
            let opts = BenchOptions { budget, seed, timing };
            let rep = run_benchmark(&parsed.edges, &methods, model.as_ref(), &opts)?;
            match report {
                Some(p) => {
                    let mut w = create(&p)?;
                    w.write_all(rep.to_text().as_bytes())?;
                    w.flush()?;
                }
                None => print!("{}", rep.to_text()),
            }
            if let Some(p) = table {
                let mut w = create(&p)?;
                w.write_all(rep.to_tsv().as_bytes())?;
                w.flush()?;
            }
        }
        Command::Theory { seed, model } => {
            let model = model.as_deref().map(load_model).transpose()?;
            let checks = theory_suite(seed, model.as_ref())?;
            let mut failed = 0;
            for c in &checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                failed += usize::from(!c.passed);
                println!("{verdict} {} measured={:.6} reference={:.6} {}", c.name, c.measured, c.reference, c.detail);
            }
            if failed > 0 {
                return Err(Failure::ChecksFailed(failed));
            }
        }
        Command::Gen { updates, universe, alpha, id_space, seed, out } => {
            let edges = zipf_stream(alpha, universe, updates, id_space, seed)?;
            match out {
                Some(p) => {
                    let mut w = create(&p)?;
                    write_edge_list(&mut w, &edges)?;
                    w.flush()?;
                }
                None => write_edge_list(BufWriter::new(std::io::stdout().lock()), &edges)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::ChecksFailed(n)) => {
            eprintln!("error: {n} property check(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            match e {
                CraneError::NonFinite(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
