//! Command-line front end of the in-situ workflow simulator.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use insitu::dtl::QueueMode;
use insitu::engine::write_trace_csv;
use insitu::error::Error;
use insitu::experiments::{
    build_scenario_grid, compare_data_scaling, export_report, load_scenario, load_sweep,
    run_scenario, run_scenario_traced,
};
use insitu::model::{extract_stages, ModelReport, StageCosts};
use insitu::platform::load_platform;
use insitu::workflow::{self, load_mapping, Mapping, RunOptions, WorkflowConfig};

#[derive(Parser)]
#[command(
    name = "insitu",
    about = "Deterministic simulation of in-situ workflows: allocation, stride/cost and mapping studies without a cluster",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario file and print its report as CSV.
    Run {
        scenario: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write the simulation trace to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Expand a sweep grid, run every scenario, emit one CSV report.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare in-situ and in-transit mappings while scaling the data
    /// volume (mailbox DTL).
    CompareMapping {
        scenario: PathBuf,
        /// Data scales to sweep, e.g. --scales 1,10,100,1000
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,500,1000")]
        scales: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the analytical model from given stage costs.
    Model {
        /// Number of steps.
        #[arg(long)]
        rho: u64,
        /// Six per-step stage costs: S,I,G,A,Se,C (seconds).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        stages: Vec<f64>,
        /// Include Se and C in the idle/makespan evaluation.
        #[arg(long)]
        strict: bool,
    },
    /// Simulate one workflow directly from command-line parameters.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Platform description file.
    #[arg(long)]
    platform: PathBuf,
    /// Analytics configuration: <n-actors> <mapping-file> <cost-per-particle>
    /// <compute-scale> <size-per-particle> <data-scale>
    #[arg(long, num_args = 6, value_names = [
        "N_ACTORS", "MAPPING", "COST_PER_PARTICLE", "COMPUTE_SCALE",
        "SIZE_PER_PARTICLE", "DATA_SCALE",
    ])]
    analysis: Vec<String>,
    /// Total iterations of the main loop.
    #[arg(long, default_value_t = 8000)]
    iterations: u64,
    /// Analytics stride (iterations between analyses).
    #[arg(long, default_value_t = 1000)]
    stride: u64,
    /// Halo-exchange periodicity.
    #[arg(long, default_value_t = 20)]
    exchange_every: u64,
    /// Number of simulation ranks; they fill node cores left free by the
    /// analytics mapping.
    #[arg(long)]
    ranks: usize,
    /// Seconds of work per iteration per rank on a reference core.
    #[arg(long, default_value_t = 0.004)]
    rank_work: f64,
    /// Bytes exchanged with each grid neighbor.
    #[arg(long, default_value_t = 0.0)]
    halo_bytes: f64,
    /// Particles of the simulated system.
    #[arg(long)]
    particles: u64,
    /// DTL queue implementation: instantaneous or mailbox.
    #[arg(long, default_value = "mailbox")]
    dtl: String,
    /// Allow more slots than cores on a node.
    #[arg(long)]
    oversubscribe: bool,
    /// Write the simulation trace to this CSV file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Infeasible(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn out_writer(path: &Option<PathBuf>) -> insitu::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn warn_constancy() {
    eprintln!(
        "warning: stage durations deviate more than {:.0}% from their steady-state means",
        insitu::model::CONSTANCY_WARN_THRESHOLD * 100.0
    );
}

fn dispatch(cli: Cli) -> insitu::Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            output,
            trace,
        } => {
            let s = load_scenario(&scenario)?;
            let platform = load_platform(&s.platform)?;
            let (result, outcome) = run_scenario_traced(&s, &platform)?;
            if result.constancy_warning {
                warn_constancy();
            }
            if let Some(path) = trace {
                write_trace_csv(&outcome.trace, std::fs::File::create(path)?)?;
            }
            export_report(&[result], out_writer(&output)?)
        }
        Command::Sweep { spec, output } => {
            let spec = load_sweep(&spec)?;
            let platform = load_platform(&spec.platform)?;
            let grid = build_scenario_grid(&spec, &platform)?;
            let mut results = Vec::with_capacity(grid.len());
            for s in &grid {
                results.push(run_scenario(s, &platform)?);
            }
            export_report(&results, out_writer(&output)?)
        }
        Command::CompareMapping {
            scenario,
            scales,
            output,
        } => {
            let s = load_scenario(&scenario)?;
            let platform = load_platform(&s.platform)?;
            let rows = compare_data_scaling(&s, &platform, &scales)?;
            let mut w = out_writer(&output)?;
            writeln!(w, "scale,mode,sim_time")?;
            for r in rows {
                writeln!(w, "{},{},{:.9}", r.scale, r.mode, r.sim_time)?;
            }
            Ok(())
        }
        Command::Model {
            rho,
            stages,
            strict,
        } => {
            if stages.len() != 6 {
                return Err(Error::Config(format!(
                    "--stages needs six comma-separated values S,I,G,A,Se,C, got {}",
                    stages.len()
                )));
            }
            let costs = StageCosts::new(
                stages[0], stages[1], stages[2], stages[3], stages[4], stages[5],
            )?;
            let mut report = ModelReport::from_stages(costs, rho)?;
            if strict {
                let m = insitu::model::ModelInputs::with_rho(costs, rho)?;
                report.makespan_predicted = insitu::model::makespan_strict(&m);
                report.eta_predicted = insitu::model::efficiency_strict(&m)?;
            }
            println!("{report}");
            Ok(())
        }
        Command::Simulate(args) => simulate(args),
    }
}

fn simulate(args: SimulateArgs) -> insitu::Result<()> {
    let platform = load_platform(&args.platform)?;
    if args.analysis.len() != 6 {
        return Err(Error::Config(
            "--analysis needs exactly six values: n-actors mapping-file cost-per-particle \
             compute-scale size-per-particle data-scale"
                .into(),
        ));
    }
    let parse_f = |what: &str, v: &str| -> insitu::Result<f64> {
        v.parse()
            .map_err(|_| Error::Config(format!("bad {what}: {v}")))
    };
    let n_actors: usize = args.analysis[0]
        .parse()
        .map_err(|_| Error::Config(format!("bad actor count: {}", args.analysis[0])))?;
    let mapping_path = PathBuf::from(&args.analysis[1]);
    let cost_per_particle = parse_f("cost per particle", &args.analysis[2])?;
    let compute_scale = parse_f("compute scale", &args.analysis[3])?;
    let size_per_particle = parse_f("size per particle", &args.analysis[4])?;
    let data_scale = parse_f("data scale", &args.analysis[5])?;

    let analytics_mapping = load_mapping(&mapping_path, &platform, n_actors)?;
    let cfg = WorkflowConfig {
        total_iterations: args.iterations,
        stride: args.stride,
        exchange_every: args.exchange_every,
        n_ranks: args.ranks,
        rank_iteration_work: args.rank_work,
        halo_bytes: args.halo_bytes,
        n_analytics_actors: n_actors,
        analytics_mapping: Some(mapping_path),
        cost_per_particle,
        compute_scale,
        size_per_particle,
        data_scale,
        n_particles: args.particles,
        dtl_mode: args.dtl.parse::<QueueMode>()?,
    };
    let rank_mapping = fill_ranks(
        &platform,
        &analytics_mapping,
        args.ranks,
        args.oversubscribe,
    )?;
    let opts = RunOptions {
        allow_oversubscribe: args.oversubscribe,
        ..RunOptions::default()
    };
    let outcome = workflow::run(&platform, &cfg, &rank_mapping, &analytics_mapping, &opts)?;
    if let Some(path) = &args.trace {
        write_trace_csv(&outcome.trace, std::fs::File::create(path)?)?;
    }
    match extract_stages(&outcome.trace, &cfg) {
        Ok(x) => {
            if x.constancy_warning {
                warn_constancy();
            }
            println!("{}", ModelReport::from_extraction(&x)?);
        }
        Err(Error::InsufficientSteps { rho }) => {
            println!(
                "completed at t={:.9} s ({rho} steps: too few for stage statistics)",
                outcome.end_time
            );
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

/// Ranks fill the cores each node has left after placing analytics actors;
/// with oversubscription, any surplus is spread round-robin.
fn fill_ranks(
    platform: &insitu::platform::Platform,
    analytics: &Mapping,
    n_ranks: usize,
    oversubscribe: bool,
) -> insitu::Result<Mapping> {
    let mut free: Vec<usize> = platform.nodes.iter().map(|n| n.cores as usize).collect();
    for node in analytics.slots() {
        free[node.index()] = free[node.index()].saturating_sub(1);
    }
    let mut counts = vec![0usize; platform.n_nodes()];
    let mut left = n_ranks;
    for (i, f) in free.iter().enumerate() {
        if left == 0 {
            break;
        }
        let here = (*f).min(left);
        counts[i] += here;
        left -= here;
    }
    if left > 0 {
        if !oversubscribe {
            return Err(Error::Infeasible(format!(
                "{left} ranks do not fit on the free cores; use --oversubscribe to pack them anyway"
            )));
        }
        let n = platform.n_nodes();
        for k in 0..left {
            counts[k % n] += 1;
        }
    }
    let entries = platform
        .node_ids()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .collect();
    Ok(Mapping::new(entries))
}
