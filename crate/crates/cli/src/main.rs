use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mugi::experiment::{
    error_curve, run_experiment, write_error_curve, ErrorCurveSpec, Experiment, ExperimentConfig, ExperimentError,
};
use mugi::lut::{Lut, LutWindow, NonlinearKind, WindowPolicy};
use mugi::workload::{build_graph, ModelSpec, Phase, RunSpec, DEFAULT_GROUP_SIZE};

#[derive(Parser)]
#[command(name = "mugi", version, about = "Value-level-parallel accelerator model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration file without running it.
    Validate(ConfigArgs),
    /// Run every design against every run and write the reports.
    Run(RunArgs),
    /// Relative error of a LUT approximation over an input range, as CSV.
    ErrorCurve(CurveArgs),
    /// Write a lookup table as a binary artifact or CSV.
    DumpLut(LutArgs),
    /// Print the op graph of each run as JSON.
    DumpGraph(GraphArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured worker count.
    #[arg(short, long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; defaults to the configured one, then `results`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Exp,
    Silu,
    Gelu,
    GeluTanh,
    GeluFast,
}

impl From<Kind> for NonlinearKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Exp => NonlinearKind::Exp,
            Kind::Silu => NonlinearKind::Silu,
            Kind::Gelu => NonlinearKind::Gelu,
            Kind::GeluTanh => NonlinearKind::GeluTanh,
            Kind::GeluFast => NonlinearKind::GeluFast,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    AlignMax,
    AlignMin,
}

#[derive(Args)]
struct WindowArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, allow_hyphen_values = true, default_value_t = -3)]
    min_exp: i32,
    #[arg(long, allow_hyphen_values = true, default_value_t = 4)]
    max_exp: i32,
    /// Store rows for both signs.
    #[arg(long)]
    signed: bool,
}

impl WindowArgs {
    fn window(&self) -> Result<LutWindow, Failure> {
        LutWindow::new(self.min_exp, self.max_exp, self.signed).map_err(|e| Failure::Config(e.to_string()))
    }
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, value_enum, default_value = "align-max")]
    policy: Policy,
    #[arg(long, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 1024)]
    samples: usize,
    /// CSV file; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LutFormat {
    Binary,
    Csv,
}

#[derive(Args)]
struct LutArgs {
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, value_enum, default_value = "binary")]
    format: LutFormat,
    /// Required for the binary format.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    /// Dump every run of this configuration.
    #[arg(short, long, conflicts_with = "model")]
    config: Option<PathBuf>,
    /// Model preset, e.g. llama2-7b.
    #[arg(long, required_unless_present = "config")]
    model: Option<String>,
    #[arg(long, default_value_t = 1)]
    batch: u64,
    #[arg(long)]
    prefill: bool,
    #[arg(long)]
    seq_len: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_GROUP_SIZE)]
    group_size: u64,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => Failure::Config(c.to_string()),
            ExperimentError::Runtime(m) => Failure::Runtime(m),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load(args: &ConfigArgs) -> Result<Experiment, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| Failure::Config(format!("config error: {e}")))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    cfg.resolve(base).map_err(|e| Failure::Config(format!("config error: {e}")))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate(args) => {
            let exp = load(&args)?;
            println!(
                "ok: {} designs, {} runs, {} points",
                exp.designs.len(),
                exp.runs.len(),
                exp.designs.len() * exp.runs.len()
            );
        }
        Command::Run(args) => {
            let exp = load(&args.config)?;
            let dir = args.out.or_else(|| exp.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
            let report = run_experiment(&exp)?;
            report.write_to(&dir)?;
            let failed = report.functional.iter().filter(|r| !r.pass).count();
            eprintln!("wrote {} rows to {}", report.summary.len(), dir.display());
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} functional checks failed")));
            }
        }
        Command::ErrorCurve(args) => {
            if args.samples < 2 {
                return Err(Failure::Config("samples: must be at least 2".into()));
            }
            let spec = ErrorCurveSpec {
                kind: args.window.kind.into(),
                window: args.window.window()?,
                policy: match args.policy {
                    Policy::AlignMax => WindowPolicy::AlignMax,
                    Policy::AlignMin => WindowPolicy::AlignMin,
                },
                from: args.from,
                to: args.to,
                samples: args.samples,
            };
            let points = error_curve(&spec)?;
            write_error_curve(&points, sink(args.out.as_deref())?)?;
        }
        Command::DumpLut(args) => {
            let lut = Lut::build(args.window.kind.into(), args.window.window()?).map_err(runtime)?;
            match args.format {
                LutFormat::Binary => {
                    let Some(path) = args.out.as_deref() else {
                        return Err(Failure::Config("out: required for the binary format".into()));
                    };
                    lut.write_to(sink(Some(path))?).map_err(runtime)?;
                }
                LutFormat::Csv => write_lut_csv(&lut, sink(args.out.as_deref())?).map_err(runtime)?,
            }
        }
        Command::DumpGraph(args) => {
            let runs: Vec<(String, RunSpec)> = match &args.config {
                Some(path) => load(&ConfigArgs { config: path.clone(), seed: None, workers: None })?.runs,
                None => {
                    let name = args.model.as_deref().unwrap_or_default();
                    let mut model = ModelSpec::preset(name).map_err(|e| Failure::Config(format!("model: {e}")))?;
                    if let Some(s) = args.seq_len {
                        model.seq_len = s;
                    }
                    let phase = if args.prefill { Phase::Prefill } else { Phase::Decode };
                    let run = RunSpec { model, batch: args.batch, phase, group_size: args.group_size };
                    run.validate().map_err(|e| Failure::Config(e.to_string()))?;
                    vec![(name.to_string(), run)]
                }
            };
            let graphs = runs
                .iter()
                .map(|(id, r)| build_graph(r).map(|g| (id.clone(), g)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(runtime)?;
            let mut out = sink(args.out.as_deref())?;
            serde_json::to_writer_pretty(&mut out, &graphs).map_err(runtime)?;
            writeln!(out).map_err(runtime)?;
        }
    }
    Ok(())
}

fn write_lut_csv(lut: &Lut, mut w: impl Write) -> io::Result<()> {
    let win = lut.window();
    write!(w, "sign,mantissa")?;
    for e in win.min_exp..=win.max_exp {
        write!(w, ",e{e}")?;
    }
    writeln!(w)?;
    for negative in [false, true] {
        for m in 0..8u8 {
            let Some(row) = lut.row(negative, m) else { continue };
            write!(w, "{},{m}", if negative { '-' } else { '+' })?;
            for v in row {
                write!(w, ",{}", v.to_f64())?;
            }
            writeln!(w)?;
        }
    }
    w.flush()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
