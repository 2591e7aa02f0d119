//! `edugrid` command line: run jobs locally, host nodes, and drive a
//! running instance.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use clap::{Parser, Subcommand};

use edugrid::fusion::{
    FusionError, GimClient, HealPolicy, Instance, JobResult, JobSpec, TopologyConfig,
};
use edugrid::marf::stage_executors;
use edugrid::tier::{options, Configuration, Node};
use edugrid::transport::{Endpoint, TransportKind, TransportOptions};

/// Environment variable naming the option file.
const OPTS_ENV: &str = "EDUGRID_OPTS";

#[derive(Parser)]
#[command(
    name = "edugrid",
    version,
    about = "Demand-driven audio recognition runtime"
)]
struct Cli {
    /// Log runtime detail to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    /// Option file with tuning keys; overrides $EDUGRID_OPTS.
    #[arg(long, global = true)]
    options: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Boot the whole topology in this process and run one job.
    RunLocal {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        job: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Host one node of a TCP topology until killed.
    Node {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "node-id")]
        node_id: String,
    },
    /// Run a job on the instance whose manager listens at `endpoint`.
    Submit {
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        job: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Crash a node of a running instance.
    InjectFault {
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        node: String,
    },
    /// Print instance or node counters as key=value lines.
    Stats {
        #[arg(long)]
        endpoint: String,
    },
}

enum Failure {
    /// Configuration, input or connection problem.
    Setup(String),
    /// The job ran but did not fully succeed.
    Job(String),
}

impl From<FusionError> for Failure {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::JobStalled(_) | FusionError::JobFailed(_) => Failure::Job(e.to_string()),
            other => Failure::Setup(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.verbose {
        env_logger::Builder::new()
            .filter_level(log::LevelFilter::Debug)
            .target(env_logger::Target::Stderr)
            .init();
    }
    let result = load_options(cli.options.as_deref()).and_then(|()| match cli.command {
        Command::RunLocal { config, job, out } => run_local(&config, &job, &out, cli.verbose),
        Command::Node { config, node_id } => node(&config, &node_id),
        Command::Submit { endpoint, job, out } => submit(&endpoint, &job, &out),
        Command::InjectFault { endpoint, node } => inject_fault(&endpoint, &node),
        Command::Stats { endpoint } => stats(&endpoint),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Setup(msg)) => {
            eprintln!("edugrid: error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Job(msg)) => {
            eprintln!("edugrid: job failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_options(flag: Option<&Path>) -> Result<(), Failure> {
    let path = match flag {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(OPTS_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => return Ok(()),
        },
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))?;
    options()
        .load(&text)
        .map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))
}

fn read_topology(path: &Path) -> Result<TopologyConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))?;
    let mut t = TopologyConfig::from_json(&text)
        .map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))?;
    let opts = options();
    if let Some(v) = opts.get("lease.ms") {
        t.lease_ms = v
            .parse()
            .map_err(|_| Failure::Setup(format!("option lease.ms: bad value {v:?}")))?;
    }
    Ok(t)
}

fn heal_policy(t: &TopologyConfig) -> Result<HealPolicy, Failure> {
    let mut p = HealPolicy::new(t.lease_ms, t.replace_nodes);
    if let Some(v) = options().get("sweep.ms") {
        p.sweep_ms = v
            .parse()
            .map_err(|_| Failure::Setup(format!("option sweep.ms: bad value {v:?}")))?;
    }
    Ok(p)
}

/// Tier tuning from the option file.
fn base_config() -> Configuration {
    options().snapshot()
}

fn read_job(path: &Path) -> Result<JobSpec, Failure> {
    Ok(JobSpec::load(path)?)
}

fn write_result(path: &Path, r: &JobResult) -> Result<(), Failure> {
    std::fs::write(path, r.to_json())
        .map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))
}

fn summarize(r: &JobResult) {
    let ok = r
        .results
        .values()
        .filter(|s| s.status == edugrid::fusion::SampleStatus::Ok)
        .count();
    eprintln!(
        "job: {ok}/{} samples ok{}",
        r.results.len(),
        if r.stalled { ", stalled" } else { "" }
    );
    if let Some(s) = r.stats {
        eprintln!(
            "job: {} demands executed, {} cache hits, {} ms",
            s.demands_executed, s.cache_hits, s.elapsed_ms
        );
    }
    for (id, stage, detail) in r.failures() {
        eprintln!("job: sample {id} failed at {stage}: {detail}");
    }
}

/// Write the result, then turn an unsuccessful one into a job failure.
fn finish(out: &Path, r: &JobResult) -> Result<(), Failure> {
    write_result(out, r)?;
    summarize(r);
    if r.stalled {
        return Err(Failure::Job("deadline exceeded".into()));
    }
    if !r.is_success() {
        return Err(Failure::Job(format!(
            "{} sample(s) failed",
            r.failures().len()
        )));
    }
    Ok(())
}

fn run_local(config: &Path, job: &Path, out: &Path, verbose: bool) -> Result<(), Failure> {
    let mut topology = read_topology(config)?;
    topology.transport_kind = TransportKind::Local;
    let policy = heal_policy(&topology)?;
    let spec = read_job(job)?;
    let instance = Instance::boot(&topology, stage_executors(), base_config())?;
    instance.start_monitor(policy);
    if verbose {
        log::info!("instance up; store at {}", instance.store_endpoint());
    }
    let result = match instance.run_job(&spec) {
        Ok(r) => r,
        Err(FusionError::JobStalled(partial)) => *partial,
        Err(e) => {
            instance.shutdown();
            return Err(e.into());
        }
    };
    for e in instance.events() {
        eprintln!("heal: {e}");
    }
    instance.shutdown();
    finish(out, &result)
}

fn node(config: &Path, node_id: &str) -> Result<(), Failure> {
    let mut topology = read_topology(config)?;
    topology.transport_kind = TransportKind::Tcp;
    let me = topology
        .nodes
        .iter()
        .find(|n| n.node_id == node_id)
        .ok_or_else(|| {
            Failure::Setup(format!("unknown node {node_id:?} in {}", config.display()))
        })?;
    let endpoint =
        Endpoint::tcp(me.host.clone(), me.port).map_err(|e| Failure::Setup(e.to_string()))?;
    let base = base_config();
    let executors = stage_executors();
    let node = Node::new(node_id, TransportKind::Tcp, base.clone(), executors.clone());
    let opts = TransportOptions {
        max_frame: base
            .parse_or("transport.max_frame", TransportOptions::default().max_frame)
            .map_err(|e| Failure::Setup(e.to_string()))?,
    };
    let bound = node
        .serve(&endpoint, opts)
        .map_err(|e| Failure::Setup(format!("{endpoint}: {e}")))?;
    eprintln!("node {node_id} listening on {bound}");

    let manager = topology.manager_node()?;
    let instance: Option<Arc<Instance>> = if manager == node_id {
        let inst = Instance::attach(&topology, node.clone(), executors, base)?;
        inst.start_monitor(heal_policy(&topology)?);
        eprintln!(
            "node {node_id} manages the instance; store at {}",
            inst.store_endpoint()
        );
        Some(inst)
    } else {
        None
    };
    let mut seen = 0;
    loop {
        thread::sleep(Duration::from_millis(200));
        if let Some(inst) = &instance {
            let events = inst.events();
            for e in &events[seen..] {
                eprintln!("heal: {e}");
            }
            seen = events.len();
        }
    }
}

fn client(endpoint: &str) -> Result<GimClient, Failure> {
    let ep = Endpoint::parse(endpoint).map_err(|e| Failure::Setup(e.to_string()))?;
    GimClient::connect(&ep, TransportOptions::default())
        .map_err(|e| Failure::Setup(format!("cannot connect to {endpoint}: {e}")))
}

fn submit(endpoint: &str, job: &Path, out: &Path) -> Result<(), Failure> {
    let spec = read_job(job)?;
    let result = client(endpoint)?.submit(&spec)?;
    finish(out, &result)
}

fn inject_fault(endpoint: &str, node: &str) -> Result<(), Failure> {
    client(endpoint)?.inject_fault(node)?;
    eprintln!("node {node} killed");
    Ok(())
}

fn stats(endpoint: &str) -> Result<(), Failure> {
    print!("{}", client(endpoint)?.stats()?);
    Ok(())
}
