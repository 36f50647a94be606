use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use camp_core::centrality::{compute_for_ordering, CentralityMeasure};
use camp_core::experiment::{
    load_dataset, run_experiment, sweep, write_run, write_sweep, ExperimentConfig, ExperimentError, Prepared,
    SweepGrid,
};
use camp_core::graph::{fill_featureless, load_tudataset, Dataset};
use camp_core::scheduler::{build_schedule, BatchMode, Order, ScheduleParams};
use camp_core::seeds;
use clap::{Parser, Subcommand, ValueEnum};

mod diagnose;

#[derive(Parser)]
#[command(name = "camp", version, about = "Centrality-ordered asynchronous message passing for graph classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate over independent random splits.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, applied after the config file. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the protocol at every point of a grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// `key=v1,v2,...` with key one of order, p, layers, measure. Repeatable.
        #[arg(long, value_name = "KEY=V1,V2", required = true)]
        grid: Vec<String>,
    },
    /// Oversmoothing and oversquashing diagnostics.
    Diagnose(diagnose::Args),
    /// Per-node centrality scores as CSV.
    Centrality {
        /// Directory holding the `{name}_*.txt` files.
        #[arg(long)]
        dataset: PathBuf,
        /// Dataset file prefix; defaults to the directory name.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        measure: CentralityMeasure,
        #[arg(long)]
        out: PathBuf,
    },
    /// Layer schedules as JSON.
    ScheduleDump {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        name: Option<String>,
        /// Required in camp mode.
        #[arg(long)]
        measure: Option<CentralityMeasure>,
        #[arg(long = "layers", short = 'L')]
        layers: usize,
        #[arg(long, default_value = "descending")]
        order: Order,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Camp)]
        mode: Mode,
        /// Only this graph.
        #[arg(long)]
        graph: Option<usize>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Camp,
    Ramp,
}

/// Process exit status plus the message printed on stderr.
pub(crate) struct Failure {
    code: u8,
    message: String,
}

pub(crate) const CONFIG: u8 = 2;
pub(crate) const DATA: u8 = 3;
pub(crate) const NUMERICAL: u8 = 4;

impl Failure {
    pub(crate) fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Config(_) => CONFIG,
            ExperimentError::Data(_)
            | ExperimentError::Split(_)
            | ExperimentError::Centrality(_)
            | ExperimentError::Checkpoint(_)
            | ExperimentError::Schedule(_) => DATA,
            ExperimentError::Optim(_) | ExperimentError::NoSuccessfulTrials(_) => NUMERICAL,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

pub(crate) fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::new(1, format!("{}: {e}", path.display()))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_failure(parent))?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(io_failure(path))
}

pub(crate) fn load(dir: &Path, name: Option<&str>) -> Result<Dataset, Failure> {
    let name = match name {
        Some(n) => n.to_string(),
        None => dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Failure::new(DATA, format!("cannot infer a dataset name from {}", dir.display())))?
            .to_string(),
    };
    load_tudataset(dir, &name)
        .map(fill_featureless)
        .map_err(|e| Failure::new(DATA, e.to_string()))
}

fn read_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(CONFIG, format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(|e| Failure::new(CONFIG, e.to_string()))?;
    for kv in overrides {
        cfg.apply_override(kv).map_err(|e| Failure::new(CONFIG, e.to_string()))?;
    }
    Ok(cfg)
}

fn train(config: &Path, overrides: &[String]) -> Result<(), Failure> {
    let cfg = read_config(config, overrides)?;
    cfg.validate().map_err(|e| Failure::new(CONFIG, e.to_string()))?;
    let dataset = load_dataset(&cfg).map_err(|e| Failure::new(DATA, e.to_string()))?;
    let prepared = Prepared::new(dataset, cfg.measure)?;
    let outcome = run_experiment(&cfg, &prepared)?;
    let dir = cfg.output_dir.join(cfg.resolved_run_id());
    write_run(&dir, &cfg, &prepared.dataset, &outcome)?;

    for r in outcome.results.iter().filter(|r| !r.succeeded()) {
        eprintln!("trial {} failed: {:?}", r.trial, r.status);
    }
    match &outcome.aggregate {
        Some(a) => {
            println!(
                "{} {} L={} mode={}: test accuracy {:.2} ± {:.2} over {} trials ({} failed)",
                cfg.dataset,
                cfg.arch,
                cfg.layers,
                cfg.mode,
                100.0 * a.mean,
                100.0 * a.scaled_std,
                a.trials,
                a.failed.len()
            );
            println!("results in {}", dir.display());
            Ok(())
        }
        None => Err(Failure::new(
            NUMERICAL,
            format!("all {} trials failed; details in {}", outcome.results.len(), dir.display()),
        )),
    }
}

fn run_sweep(config: &Path, overrides: &[String], axes: &[String]) -> Result<(), Failure> {
    let cfg = read_config(config, overrides)?;
    let mut grid = SweepGrid::default();
    for a in axes {
        grid.add_axis(a).map_err(|e| Failure::new(CONFIG, e.to_string()))?;
    }
    for point in grid.points(&cfg) {
        point.validate().map_err(|e| Failure::new(CONFIG, e.to_string()))?;
    }
    let dataset = load_dataset(&cfg).map_err(|e| Failure::new(DATA, e.to_string()))?;
    let rows = sweep(&cfg, &grid, &dataset)?;
    let dir = cfg.output_dir.join(cfg.resolved_run_id());
    write_sweep(&dir, &rows)?;
    for r in &rows {
        let measure = r.measure.map_or("none".to_string(), |m| m.to_string());
        match &r.aggregate {
            Some(a) => println!(
                "measure={measure} order={} p={} L={}: {:.2} ± {:.2}",
                r.order,
                r.p,
                r.layers,
                100.0 * a.mean,
                100.0 * a.scaled_std
            ),
            None => println!("measure={measure} order={} p={} L={}: all trials failed", r.order, r.p, r.layers),
        }
    }
    println!("results in {}", dir.display());
    if rows.iter().all(|r| r.aggregate.is_none()) {
        return Err(Failure::new(NUMERICAL, "every grid point failed"));
    }
    Ok(())
}

fn centrality(dataset: &Path, name: Option<&str>, measure: CentralityMeasure, out: &Path) -> Result<(), Failure> {
    let ds = load(dataset, name)?;
    let mut w = create(out)?;
    let mut text = String::from("graph_id,node_id,score\n");
    let mut too_small = 0;
    for g in &ds.graphs {
        if g.n() < measure.min_nodes() {
            too_small += 1;
        }
        let scores = compute_for_ordering(measure, g).map_err(|e| Failure::new(DATA, e.to_string()))?;
        for (v, s) in scores.scores.iter().enumerate() {
            text.push_str(&format!("{},{v},{s:.6}\n", g.graph_id()));
        }
    }
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_failure(out))?;
    if too_small > 0 {
        eprintln!(
            "{too_small} graphs have fewer than {} nodes; {measure} is undefined there and written as 0",
            measure.min_nodes()
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn schedule_dump(
    dataset: &Path,
    name: Option<&str>,
    measure: Option<CentralityMeasure>,
    layers: usize,
    order: Order,
    p: f64,
    seed: u64,
    mode: Mode,
    graph: Option<usize>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let ds = load(dataset, name)?;
    let mode = match mode {
        Mode::Camp => BatchMode::Camp,
        Mode::Ramp => BatchMode::Ramp,
    };
    let measure = match (mode, measure) {
        (BatchMode::Camp, None) => return Err(Failure::new(CONFIG, "camp mode needs --measure")),
        (BatchMode::Ramp, Some(_)) => return Err(Failure::new(CONFIG, "ramp mode ignores centrality; drop --measure")),
        (_, m) => m,
    };
    let graphs: Vec<_> = match graph {
        Some(id) => vec![ds
            .graphs
            .get(id)
            .ok_or_else(|| Failure::new(DATA, format!("graph {id} out of range ({} graphs)", ds.len())))?],
        None => ds.graphs.iter().collect(),
    };
    let mut records = Vec::with_capacity(graphs.len());
    for g in graphs {
        let scores = compute_for_ordering(measure.unwrap_or(CentralityMeasure::Degree), g)
            .map_err(|e| Failure::new(DATA, e.to_string()))?;
        let params = ScheduleParams {
            layers,
            order,
            p,
            seed: seeds::derive(seed, g.graph_id() as u64),
            mode,
        };
        let sched = build_schedule(&scores, &params).map_err(|e| Failure::new(CONFIG, e.to_string()))?;
        if let Some(w) = &sched.warning {
            eprintln!("graph {}: {w:?}", g.graph_id());
        }
        records.push(sched.record(g.graph_id()));
    }
    let json = serde_json::to_string_pretty(&records).expect("records serialize");
    match out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{json}").and_then(|_| w.flush()).map_err(io_failure(path))
        }
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, overrides } => train(&config, &overrides),
        Command::Sweep {
            config,
            overrides,
            grid,
        } => run_sweep(&config, &overrides, &grid),
        Command::Diagnose(args) => diagnose::run(&args),
        Command::Centrality {
            dataset,
            name,
            measure,
            out,
        } => centrality(&dataset, name.as_deref(), measure, &out),
        Command::ScheduleDump {
            dataset,
            name,
            measure,
            layers,
            order,
            p,
            seed,
            mode,
            graph,
            out,
        } => schedule_dump(&dataset, name.as_deref(), measure, layers, order, p, seed, mode, graph, out.as_deref()),
    }
}

/// Training allocates and frees many mid-sized buffers per step; glibc's
/// default thresholds hand them back to the kernel every time.
fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        // SAFETY: mallopt only adjusts allocator parameters and is called
        // before any other thread exists.
        libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
    }
}

fn main() -> ExitCode {
    tune_allocator();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
