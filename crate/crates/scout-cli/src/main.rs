//! Command line front end: dataset generation, benchmark runs, sensitivity
//! sweeps, and report summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use scout_core::dataset::{
    generate_fiber_forest, generate_query_sequence, save_dataset, save_sequence, GeneratorParams,
    SequenceParams,
};
use scout_core::geometry::{Aabb, Vec3};
use scout_core::harness::{
    run_benchmark, sweep, sweep_csv, BenchmarkConfig, CostModel, DatasetSource, MetricsReport,
    PredictorKind, SweepAxis,
};
use scout_core::prefetch::Strategy;

#[derive(Parser)]
#[command(name = "scout", about = "Structure-aware spatial prefetching benchmark simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fiber dataset (and optionally a query sequence).
    Generate(GenerateArgs),
    /// Run a single benchmark and emit per-query CSV plus a summary line.
    Run(RunArgs),
    /// Run a sensitivity sweep over one parameter axis.
    Sweep(SweepArgs),
    /// Summarize a previously written run CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of fibers to grow.
    #[arg(long = "gen-fibers", default_value_t = 100)]
    gen_fibers: usize,
    /// Target object count.
    #[arg(long = "gen-objects", default_value_t = 200_000)]
    gen_objects: usize,
    /// Branching probability per backbone step.
    #[arg(long = "gen-bifurcation", default_value_t = 0.1)]
    gen_bifurcation: f64,
    /// Walk step length, micrometers.
    #[arg(long = "gen-step", default_value_t = 3.0)]
    gen_step: f64,
    /// Maximum turn angle per step, radians.
    #[arg(long = "gen-tortuosity", default_value_t = 0.3)]
    gen_tortuosity: f64,
    /// Cubic bounds side length, micrometers.
    #[arg(long = "gen-side", default_value_t = 280.0)]
    gen_side: f64,
}

impl GenArgs {
    fn params(&self, seed: u64) -> GeneratorParams {
        GeneratorParams {
            fiber_count: self.gen_fibers,
            target_object_count: self.gen_objects,
            bifurcation_prob: self.gen_bifurcation,
            step_length: self.gen_step,
            tortuosity: self.gen_tortuosity,
            bounds: Aabb::new(Vec3::ZERO, Vec3::new(self.gen_side, self.gen_side, self.gen_side)),
            seed,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    gen: GenArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write one example query sequence here.
    #[arg(long)]
    sequence_out: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    queries: usize,
    #[arg(long, default_value_t = 80_000.0)]
    volume: f64,
    #[arg(long, default_value_t = 0.0)]
    gap: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Load the dataset from a segment file instead of generating one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    gen: GenArgs,
    /// Predictor: scout, scout-opt, oracle, straight, poly:K, ewma:L,
    /// hilbert, none.
    #[arg(long, default_value = "scout")]
    predictor: String,
    /// Window strategy: deep or broad.
    #[arg(long, default_value = "broad")]
    strategy: String,
    /// Maximum broad-prefetch locations before k-means limiting.
    #[arg(long = "broad-limit", default_value_t = 8)]
    broad_limit: usize,
    #[arg(long, default_value_t = 25)]
    queries: usize,
    /// Query volume, cubic micrometers.
    #[arg(long, default_value_t = 80_000.0)]
    volume: f64,
    /// Gap distance between consecutive queries, micrometers.
    #[arg(long, default_value_t = 0.0)]
    gap: f64,
    /// Prefetch window ratio r = u/d.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[arg(long, default_value_t = 30)]
    sequences: usize,
    #[arg(long = "page-capacity", default_value_t = 87)]
    page_capacity: usize,
    /// Grid cells per axis over each query region.
    #[arg(long = "grid-cells", default_value_t = 40)]
    grid_cells: usize,
    /// Gap traversal I/O budget as a fraction of the last query's pages.
    #[arg(long = "gap-budget", default_value_t = 0.10)]
    gap_budget: f64,
    /// Prefetch cache capacity in pages (unlimited when omitted).
    #[arg(long = "cache-pages")]
    cache_pages: Option<usize>,
    /// Simulate an index without neighborhood-ordered retrieval.
    #[arg(long = "unordered-index", default_value_t = false)]
    unordered_index: bool,
    /// Charge graph operations to response time, pages per operation.
    #[arg(long = "op-cost", default_value_t = 0.0)]
    op_cost: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Key = value file mirroring these flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl BenchArgs {
    fn to_config(&self, cli_args: &[String]) -> Result<BenchmarkConfig> {
        let mut args = self.resolved(cli_args)?;
        let dataset = match args.dataset.take() {
            Some(path) => DatasetSource::File(path),
            None => DatasetSource::Generate(args.gen.params(scout_core::derive_seed(args.seed, 0xda7a))),
        };
        let predictor: PredictorKind =
            args.predictor.parse().map_err(|e: String| anyhow::anyhow!(e))?;
        let strategy: Strategy = args.strategy.parse().map_err(|e: String| anyhow::anyhow!(e))?;
        Ok(BenchmarkConfig {
            dataset,
            sequences: args.sequences,
            query_count: args.queries,
            query_volume: args.volume,
            gap_distance: args.gap,
            predictor,
            strategy,
            broad_limit: args.broad_limit,
            page_capacity: args.page_capacity,
            grid_cells_per_axis: args.grid_cells,
            gap_budget_frac: args.gap_budget,
            cache_pages: args.cache_pages,
            ordered_retrieval: !args.unordered_index,
            cost: CostModel { t_page: 1.0, window_ratio: args.ratio },
            op_cost_pages: args.op_cost,
            seed: args.seed,
        })
    }

    /// Applies config-file values for keys not set on the command line.
    fn resolved(&self, cli_args: &[String]) -> Result<BenchArgs> {
        let mut out = BenchArgs {
            dataset: self.dataset.clone(),
            gen: GenArgs { ..self.gen },
            predictor: self.predictor.clone(),
            strategy: self.strategy.clone(),
            broad_limit: self.broad_limit,
            queries: self.queries,
            volume: self.volume,
            gap: self.gap,
            ratio: self.ratio,
            sequences: self.sequences,
            page_capacity: self.page_capacity,
            grid_cells: self.grid_cells,
            gap_budget: self.gap_budget,
            cache_pages: self.cache_pages,
            unordered_index: self.unordered_index,
            op_cost: self.op_cost,
            seed: self.seed,
            config: None,
        };
        let Some(path) = &self.config else { return Ok(out) };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let given = |flag: &str| cli_args.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")));
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {}: expected key = value", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            let flag = format!("--{key}");
            if given(&flag) {
                continue;
            }
            match key {
                "dataset" => out.dataset = Some(PathBuf::from(value)),
                "gen-fibers" => out.gen.gen_fibers = value.parse()?,
                "gen-objects" => out.gen.gen_objects = value.parse()?,
                "gen-bifurcation" => out.gen.gen_bifurcation = value.parse()?,
                "gen-step" => out.gen.gen_step = value.parse()?,
                "gen-tortuosity" => out.gen.gen_tortuosity = value.parse()?,
                "gen-side" => out.gen.gen_side = value.parse()?,
                "predictor" => out.predictor = value.to_string(),
                "strategy" => out.strategy = value.to_string(),
                "broad-limit" => out.broad_limit = value.parse()?,
                "queries" => out.queries = value.parse()?,
                "volume" => out.volume = value.parse()?,
                "gap" => out.gap = value.parse()?,
                "ratio" => out.ratio = value.parse()?,
                "sequences" => out.sequences = value.parse()?,
                "page-capacity" => out.page_capacity = value.parse()?,
                "grid-cells" => out.grid_cells = value.parse()?,
                "gap-budget" => out.gap_budget = value.parse()?,
                "cache-pages" => out.cache_pages = Some(value.parse()?),
                "op-cost" => out.op_cost = value.parse()?,
                "seed" => out.seed = value.parse()?,
                other => bail!("config line {}: unknown key '{other}'", lineno + 1),
            }
        }
        Ok(out)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    bench: BenchArgs,
    /// Write per-query CSV plus the summary line here (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    bench: BenchArgs,
    /// Axis: query_volume, dataset_density, sequence_length, window_ratio,
    /// grid_cells, gap_distance.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run CSV written by `scout run`.
    #[arg(long = "in")]
    input: PathBuf,
}

fn main() -> Result<()> {
    let raw: Vec<String> = std::env::args().collect();
    match Cli::parse().command {
        Command::Generate(args) => generate(args),
        Command::Run(args) => run(args, &raw),
        Command::Sweep(args) => run_sweep(args, &raw),
        Command::Report(args) => report(args),
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let params = args.gen.params(args.seed);
    let ds = generate_fiber_forest(&params)?;
    save_dataset(&ds, &args.out)?;
    eprintln!("wrote {} objects to {}", ds.len(), args.out.display());
    if let Some(seq_path) = args.sequence_out {
        let sp = SequenceParams {
            query_count: args.queries,
            query_volume: args.volume,
            gap_distance: args.gap,
            window_ratio: 1.0,
            seed: scout_core::derive_seed(args.seed, 0x5e9),
        };
        let qs = generate_query_sequence(&ds, &sp)?;
        save_sequence(&qs, &seq_path)?;
        eprintln!("wrote {} queries to {}", qs.queries.len(), seq_path.display());
    }
    Ok(())
}

fn write_run_output(report: &MetricsReport, out: Option<&Path>) -> Result<()> {
    let body = format!("{}{}\n", report.to_csv(), report.summary_json());
    match out {
        Some(path) => {
            std::fs::write(path, &body).with_context(|| format!("writing {}", path.display()))?;
            println!("{}", report.summary_json());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

fn run(args: RunArgs, raw: &[String]) -> Result<()> {
    let config = args.bench.to_config(raw)?;
    let report = run_benchmark(&config)?;
    write_run_output(&report, args.out.as_deref())
}

fn run_sweep(args: SweepArgs, raw: &[String]) -> Result<()> {
    let config = args.bench.to_config(raw)?;
    let axis: SweepAxis = args.axis.parse()?;
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad sweep value '{v}'")))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("no sweep values given");
    }
    let results = sweep(&config, axis, &values)?;
    let csv = sweep_csv(axis, &results);
    match args.out {
        Some(path) => {
            std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            for (v, r) in &results {
                println!("{axis}={v}: hit_rate={:.4} speedup={:.3}", r.hit_rate, r.speedup);
            }
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let mut per_seq: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut total_rows = 0usize;
    let mut summary = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("config_hash,") {
            continue;
        }
        if line.starts_with('{') {
            summary = Some(line.to_string());
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            bail!("malformed row: {line}");
        }
        let seq: usize = fields[3].parse()?;
        let query: usize = fields[4].parse()?;
        let needed: usize = fields[5].parse()?;
        let hits: usize = fields[6].parse()?;
        total_rows += 1;
        if query > 1 {
            let e = per_seq.entry(seq).or_insert((0, 0));
            e.0 += hits;
            e.1 += needed;
        }
    }
    if total_rows == 0 {
        bail!("no data rows in {}", args.input.display());
    }
    println!("rows: {total_rows}");
    let mut grand = (0usize, 0usize);
    for (seq, (hits, needed)) in &per_seq {
        grand.0 += hits;
        grand.1 += needed;
        let rate = if *needed > 0 { *hits as f64 / *needed as f64 } else { 0.0 };
        println!("sequence {seq}: hit_rate={rate:.4} ({hits}/{needed})");
    }
    if grand.1 > 0 {
        println!("overall hit_rate: {:.4}", grand.0 as f64 / grand.1 as f64);
    }
    if let Some(s) = summary {
        println!("summary: {s}");
    }
    Ok(())
}
