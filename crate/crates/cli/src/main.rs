use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_cache::recognize::{classify, RecognizerConfig};
use adaptive_cache::sim::{
    run_with_tree, AllocationMode, PolicyMode, PrefetchSetting, SimConfig, SimReport,
};
use adaptive_cache::trace::{parse_trace, write_trace};
use adaptive_cache::tree::resolve_levels;
use adaptive_cache::workload::{
    build_catalog, generate_workload, merge_traces, DatasetLayout, WorkloadSpec,
};
use adaptive_cache::{AccessEvent, NamespaceCatalog};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "adaptive-cache",
    version,
    about = "Trace-driven simulator for a workload-adaptive block cache"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic trace and its catalog from a workload description.
    Generate {
        /// JSON file with `datasets`, `workloads` and optional `seed`, `block_size`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
    },
    /// Replay a trace through the cache and write a report.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        /// Total cache capacity; accepts float notation such as 7.5e9.
        #[arg(long, value_parser = parse_bytes)]
        cache_bytes: Option<u64>,
        /// TOML file overriding any simulator setting.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long, value_enum)]
        prefetch: Option<PrefetchArg>,
        #[arg(long, value_enum)]
        allocation: Option<AllocationArg>,
        /// Report destination; without it the report JSON goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the final access-stream tree as JSON.
        #[arg(long)]
        dump_tree: Option<PathBuf>,
    },
    /// Classify a slice of the accesses under one prefix.
    Recognize {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        prefix: String,
        /// First access of the slice, counted within the prefix.
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long, default_value_t = 100)]
        len: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Render a report as a table, optionally with plot data as CSV.
    Report {
        #[arg(long)]
        report: PathBuf,
        /// CSV destination, or `-` for stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Adaptive,
    Lru,
    Fifo,
    Uniform,
    /// Shared LRU cache with stride readahead.
    ArcLessBaseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrefetchArg {
    None,
    Stride,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum AllocationArg {
    Adaptive,
    Static,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateConfig {
    #[serde(default = "default_block_size")]
    block_size: u64,
    datasets: Vec<DatasetLayout>,
    workloads: Vec<WorkloadSpec>,
    #[serde(default)]
    seed: u64,
}

fn default_block_size() -> u64 {
    adaptive_cache::namespace::DEFAULT_BLOCK_SIZE
}

fn parse_bytes(s: &str) -> Result<u64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if !v.is_finite() || v < 1.0 || v > u64::MAX as f64 {
        return Err(format!("cache size out of range: {s}"));
    }
    Ok(v.round() as u64)
}

/// Exit status 1 for bad invocations, 2 for bad input data.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<adaptive_cache::Error> for Failure {
    fn from(e: adaptive_cache::Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.into())
        } else {
            Failure::Usage(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    Ok(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

fn write(path: &Path, contents: &str) -> CliResult {
    Ok(fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?)
}

fn load_catalog(path: &Path) -> CliResult<NamespaceCatalog> {
    NamespaceCatalog::from_json(&read(path)?)
        .map_err(|e| Failure::Data(anyhow!(e).context(path.display().to_string())))
}

fn load_trace(path: &Path) -> CliResult<Vec<AccessEvent>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    parse_trace(BufReader::new(file))
        .map_err(|e| Failure::Data(anyhow!(e).context(path.display().to_string())))
}

fn generate(config: &Path, trace: &Path, catalog: &Path) -> CliResult {
    let cfg: GenerateConfig = serde_json::from_str(&read(config)?)
        .map_err(|e| Failure::Usage(anyhow!(e).context(config.display().to_string())))?;
    let cat = build_catalog(&cfg.datasets, cfg.block_size)?;
    let mut traces = Vec::new();
    for (i, spec) in cfg.workloads.iter().enumerate() {
        traces.push(generate_workload(
            spec,
            &cat,
            cfg.seed.wrapping_add(i as u64),
        )?);
    }
    let events = merge_traces(traces);
    let mut buf = Vec::new();
    write_trace(&mut buf, &events)?;
    fs::write(trace, buf).with_context(|| format!("writing {}", trace.display()))?;
    write(catalog, &cat.to_json())?;
    eprintln!("{} events over {} files", events.len(), cat.file_count());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    trace: &Path,
    catalog: &Path,
    cache_bytes: Option<u64>,
    config: Option<&Path>,
    policy: Option<PolicyArg>,
    prefetch: Option<PrefetchArg>,
    allocation: Option<AllocationArg>,
    out: Option<&Path>,
    dump_tree: Option<&Path>,
) -> CliResult {
    let mut cfg = match config {
        Some(p) => SimConfig::from_toml_str(&read(p)?)?,
        None => SimConfig::default(),
    };
    if let Some(b) = cache_bytes {
        cfg.cache_bytes = b;
    }
    if let Some(p) = policy {
        cfg.policy = match p {
            PolicyArg::Adaptive => PolicyMode::Adaptive,
            PolicyArg::Lru => PolicyMode::Lru,
            PolicyArg::Fifo => PolicyMode::Fifo,
            PolicyArg::Uniform => PolicyMode::Uniform,
            PolicyArg::ArcLessBaseline => {
                cfg.prefetch = PrefetchSetting::Stride;
                PolicyMode::Lru
            }
        };
    }
    if let Some(p) = prefetch {
        cfg.prefetch = match p {
            PrefetchArg::None => PrefetchSetting::None,
            PrefetchArg::Stride => PrefetchSetting::Stride,
            PrefetchArg::Adaptive => PrefetchSetting::Adaptive,
        };
    }
    if let Some(a) = allocation {
        cfg.allocation = match a {
            AllocationArg::Adaptive => AllocationMode::Adaptive,
            AllocationArg::Static => AllocationMode::Static,
        };
    }
    cfg.validate()?;
    let cat = load_catalog(catalog)?;
    let events = load_trace(trace)?;
    let (report, tree) = run_with_tree(&events, &cat, &cfg)?;
    let json = report.to_json();
    match out {
        Some(p) => {
            write(p, &json)?;
            print!("{}", report.render_table());
        }
        None => println!("{json}"),
    }
    if let Some(p) = dump_tree {
        let dump = serde_json::to_string_pretty(&tree).context("serializing tree")?;
        write(p, &dump)?;
    }
    Ok(())
}

fn recognize(
    trace: &Path,
    catalog: &Path,
    prefix: &str,
    start: usize,
    len: usize,
    alpha: f64,
) -> CliResult {
    let rec = RecognizerConfig {
        alpha,
        ..RecognizerConfig::default()
    };
    rec.validate()?;
    let cat = load_catalog(catalog)?;
    let events = load_trace(trace)?;
    let prefix = prefix.trim_end_matches('/');
    let depth = prefix.split('/').filter(|s| !s.is_empty()).count();
    let c = cat
        .item_count(if prefix.is_empty() { "/" } else { prefix })
        .ok_or_else(|| Failure::Data(anyhow!("prefix not found in catalog: {prefix}")))?;
    let mut indices = Vec::new();
    for ev in &events {
        if !ev.path.starts_with(prefix) {
            continue;
        }
        let levels = resolve_levels(&ev.path, &cat)?;
        if let Some(level) = levels.get(depth) {
            indices.push(level.index);
        }
    }
    let slice: Vec<u64> = indices.iter().skip(start).take(len).copied().collect();
    if slice.len() < 2 {
        return Err(Failure::Data(anyhow!(
            "only {} accesses under {prefix} from offset {start}; need at least 2",
            slice.len()
        )));
    }
    let result = classify(&slice, c, &rec)?;
    let (d_max, d_alpha) = match &result.ks {
        Some(ks) => (format!("{:.6}", ks.d_max), format!("{:.6}", ks.d_alpha)),
        None => ("-".into(), "-".into()),
    };
    println!(
        "label: {}",
        serde_json::to_value(result.label)
            .context("label")?
            .as_str()
            .unwrap_or("?")
    );
    println!("d_max: {d_max}");
    println!("d_alpha: {d_alpha}");
    println!("accesses: {}", slice.len());
    Ok(())
}

fn report(path: &Path, csv: Option<&Path>) -> CliResult {
    let report = SimReport::from_json(&read(path)?)
        .map_err(|e| Failure::Data(anyhow!(e).context(path.display().to_string())))?;
    print!("{}", report.render_table());
    if let Some(p) = csv {
        let data = report.render_csv();
        if p == Path::new("-") {
            std::io::stdout()
                .write_all(data.as_bytes())
                .context("writing csv")?;
        } else {
            write(p, &data)?;
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Generate {
            config,
            trace,
            catalog,
        } => generate(&config, &trace, &catalog),
        Command::Simulate {
            trace,
            catalog,
            cache_bytes,
            config,
            policy,
            prefetch,
            allocation,
            out,
            dump_tree,
        } => simulate(
            &trace,
            &catalog,
            cache_bytes,
            config.as_deref(),
            policy,
            prefetch,
            allocation,
            out.as_deref(),
            dump_tree.as_deref(),
        ),
        Command::Recognize {
            trace,
            catalog,
            prefix,
            start,
            len,
            alpha,
        } => recognize(&trace, &catalog, &prefix, start, len, alpha),
        Command::Report { report: path, csv } => report(&path, csv.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
