use std::io::Write;
use std::path::PathBuf;

use camp_core::diagnostics::{
    dirichlet_report, normalized_total_resistance, product_vs_power, sensitivity_report, signal_propagation,
    total_effective_resistance, DiagnosticsError,
};
use camp_core::experiment::checkpoint_schedules;
use camp_core::models::{load_checkpoint, CheckpointMeta, ModelParams};
use camp_core::scheduler::LayerSchedule;
use clap::ValueEnum;

use crate::{create, io_failure, load, Failure, DATA};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    /// Dirichlet energy after every layer.
    Dirichlet,
    /// Jacobian norms against the sensitivity bound.
    Sensitivity,
    /// Product of masked adjacencies against the full power.
    Prop1,
    /// Total effective resistance.
    Resistance,
    /// Distance-weighted signal spread from random sources.
    Signal,
}

#[derive(clap::Args)]
pub struct Args {
    /// Directory holding the `{name}_*.txt` files.
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset file prefix; defaults to the directory name.
    #[arg(long)]
    name: Option<String>,
    /// Trained model; required by every metric except resistance.
    #[arg(long)]
    model_ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long)]
    out: PathBuf,
    /// Layer for sensitivity and prop1; defaults to the model depth.
    #[arg(long)]
    layer: Option<usize>,
    /// Only the first N graphs.
    #[arg(long)]
    max_graphs: Option<usize>,
    /// Sources per graph for the signal metric.
    #[arg(long, default_value_t = 10)]
    sources: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct Model {
    params: ModelParams,
    meta: CheckpointMeta,
    schedules: Vec<LayerSchedule>,
}

fn diag(e: DiagnosticsError) -> Failure {
    Failure::new(1, e.to_string())
}

pub fn run(args: &Args) -> Result<(), Failure> {
    let ds = load(&args.dataset, args.name.as_deref())?;
    let graphs = &ds.graphs[..args.max_graphs.unwrap_or(ds.len()).min(ds.len())];

    let model = match &args.model_ckpt {
        Some(path) => {
            let (params, meta) = load_checkpoint(path).map_err(|e| Failure::new(DATA, e.to_string()))?;
            if meta.input_dim != ds.feature_dim {
                return Err(Failure::new(
                    DATA,
                    format!(
                        "checkpoint expects {} input features, dataset has {}",
                        meta.input_dim, ds.feature_dim
                    ),
                ));
            }
            let schedules = checkpoint_schedules(&meta, &ds)?;
            Some(Model {
                params,
                meta,
                schedules,
            })
        }
        None if args.metric == Metric::Resistance => None,
        None => return Err(Failure::new(crate::CONFIG, "this metric needs --model-ckpt")),
    };
    let layer = |m: &Model| args.layer.unwrap_or(m.meta.config.layers);

    let mut text = String::new();
    match (args.metric, &model) {
        (Metric::Resistance, _) => {
            text.push_str("graph_id,n,components,r_total,r_total_normalized\n");
            for g in graphs {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    g.graph_id(),
                    g.n(),
                    g.connected_components().0,
                    total_effective_resistance(g),
                    normalized_total_resistance(g)
                ));
            }
        }
        (Metric::Dirichlet, Some(m)) => {
            text.push_str("graph_id,layer,energy\n");
            for (i, g) in graphs.iter().enumerate() {
                let r = dirichlet_report(g, &m.schedules[i], &m.params, &m.meta.config).map_err(diag)?;
                for (l, e) in r.energies.iter().enumerate() {
                    text.push_str(&format!("{},{l},{e}\n", r.graph_id));
                }
            }
        }
        (Metric::Sensitivity, Some(m)) => {
            text.push_str("graph_id,layer,u,v,distance,jacobian_l1,model_factor,product_entry,bound\n");
            for (i, g) in graphs.iter().enumerate() {
                let r = sensitivity_report(g, &m.schedules[i], &m.params, &m.meta.config, layer(m))
                    .map_err(diag)?;
                for p in &r.pairs {
                    text.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{}\n",
                        r.graph_id,
                        r.layer,
                        p.u,
                        p.v,
                        p.distance,
                        p.jacobian_l1,
                        p.model_factor,
                        p.product_entry,
                        p.bound()
                    ));
                }
            }
        }
        (Metric::Prop1, Some(m)) => {
            text.push_str("graph_id,layer,u,v,product,power\n");
            let l = layer(m);
            for (i, g) in graphs.iter().enumerate() {
                let (prod, pow) = product_vs_power(g, &m.schedules[i], l, false).map_err(diag)?;
                for u in 0..g.n() {
                    for v in 0..g.n() {
                        text.push_str(&format!("{},{l},{u},{v},{},{}\n", g.graph_id(), prod.get(u, v), pow.get(u, v)));
                    }
                }
            }
        }
        (Metric::Signal, Some(m)) => {
            text.push_str("graph_id,layers,r_total_normalized,signal\n");
            for (i, g) in graphs.iter().enumerate() {
                let e = signal_propagation(
                    g,
                    &m.schedules[i],
                    &m.meta.config,
                    args.sources,
                    camp_core::seeds::derive(args.seed, g.graph_id() as u64),
                )
                .map_err(diag)?;
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    e.graph_id, m.meta.config.layers, e.r_total_normalized, e.signal
                ));
            }
        }
        (_, None) => unreachable!("checked above"),
    }
    let mut w = create(&args.out)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_failure(&args.out))
}
