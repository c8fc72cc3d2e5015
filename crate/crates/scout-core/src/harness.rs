//! Benchmark orchestration under logical time: runs query sequences against
//! the paged index with a chosen predictor, accounts cache hits, prefetch
//! and gap I/O per query, and emits deterministic CSV/JSON reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{
    hilbert_order_for, plan_hilbert, predict_ewma, predict_polynomial, predict_straight_line,
    CenterHistory,
};
use crate::dataset::{
    generate_fiber_forest, generate_query_sequence, load_dataset, Dataset, DatasetError,
    GeneratorParams, SequenceParams,
};
use crate::derive_seed;
use crate::graph::{build_graph_grid_hash, build_sparse_graph, entry_point, ExitEdge, GridHashConfig};
use crate::index::{build_index, PagedIndex};
use crate::predictor::{
    candidate_exits, estimate_gap, extrapolate, gap_traverse, prune_candidates, CarriedExit,
    PredictedLocation,
};
use crate::prefetch::{
    cache_serve, plan_broad, plan_deep, run_incremental, PageCache, PlanTarget, PrefetchPlan,
    Strategy, WindowBudget,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("predictor scout-opt requires ordered retrieval")]
    OrderedRetrievalRequired,
    #[error("unknown sweep axis '{0}'")]
    UnknownAxis(String),
    #[error("trace is empty")]
    EmptyTrace,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Logical I/O cost model: one page fetch costs `t_page` abstract units;
/// the prefetch window after a query lasts `window_ratio` times the query's
/// own retrieval cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub t_page: f64,
    pub window_ratio: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { t_page: 1.0, window_ratio: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PredictorKind {
    Scout,
    ScoutOpt,
    Oracle,
    Straight,
    Poly(usize),
    Ewma(f64),
    Hilbert,
    /// No prefetching and no cache: every needed page is a miss.
    NoPrefetch,
}

impl FromStr for PredictorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scout" => Ok(PredictorKind::Scout),
            "scout-opt" => Ok(PredictorKind::ScoutOpt),
            "oracle" => Ok(PredictorKind::Oracle),
            "straight" => Ok(PredictorKind::Straight),
            "hilbert" => Ok(PredictorKind::Hilbert),
            "none" => Ok(PredictorKind::NoPrefetch),
            _ => {
                if let Some(k) = s.strip_prefix("poly:") {
                    let k: usize =
                        k.parse().map_err(|_| format!("invalid polynomial degree in '{s}'"))?;
                    if k == 0 {
                        return Err("polynomial degree must be >= 1".into());
                    }
                    return Ok(PredictorKind::Poly(k));
                }
                if let Some(l) = s.strip_prefix("ewma:") {
                    let l: f64 = l.parse().map_err(|_| format!("invalid lambda in '{s}'"))?;
                    if !(0.0..=1.0).contains(&l) || l == 0.0 {
                        return Err("ewma lambda must be in (0, 1]".into());
                    }
                    return Ok(PredictorKind::Ewma(l));
                }
                Err(format!(
                    "unknown predictor '{s}' (expected scout, scout-opt, oracle, straight, \
                     poly:K, ewma:L, hilbert, none)"
                ))
            }
        }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictorKind::Scout => write!(f, "scout"),
            PredictorKind::ScoutOpt => write!(f, "scout-opt"),
            PredictorKind::Oracle => write!(f, "oracle"),
            PredictorKind::Straight => write!(f, "straight"),
            PredictorKind::Poly(k) => write!(f, "poly:{k}"),
            PredictorKind::Ewma(l) => write!(f, "ewma:{l}"),
            PredictorKind::Hilbert => write!(f, "hilbert"),
            PredictorKind::NoPrefetch => write!(f, "none"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deep" => Ok(Strategy::Deep),
            "broad" => Ok(Strategy::Broad),
            _ => Err(format!("unknown strategy '{s}' (expected deep or broad)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Generate(GeneratorParams),
    File(PathBuf),
}

/// Full description of one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub dataset: DatasetSource,
    pub sequences: usize,
    pub query_count: usize,
    pub query_volume: f64,
    pub gap_distance: f64,
    pub predictor: PredictorKind,
    pub strategy: Strategy,
    pub broad_limit: usize,
    pub page_capacity: usize,
    pub grid_cells_per_axis: usize,
    /// Gap traversal I/O budget as a fraction of the last query's pages.
    pub gap_budget_frac: f64,
    /// Prefetch cache capacity in pages; unlimited when absent.
    pub cache_pages: Option<usize>,
    /// The index supports neighborhood-ordered retrieval.
    pub ordered_retrieval: bool,
    pub cost: CostModel,
    /// Charge graph build/traversal operations to response time at this
    /// many pages per operation (0 = prediction is free, overlapped with
    /// the user's analysis).
    pub op_cost_pages: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            dataset: DatasetSource::Generate(GeneratorParams::default()),
            sequences: 30,
            query_count: 25,
            query_volume: 80_000.0,
            gap_distance: 0.0,
            predictor: PredictorKind::Scout,
            strategy: Strategy::Broad,
            broad_limit: 8,
            page_capacity: 87,
            grid_cells_per_axis: 40,
            gap_budget_frac: 0.10,
            cache_pages: None,
            ordered_retrieval: true,
            cost: CostModel::default(),
            op_cost_pages: 0.0,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.sequences == 0 || self.query_count == 0 {
            return Err(HarnessError::InvalidConfig("sequences and queries must be >= 1".into()));
        }
        if self.query_volume <= 0.0 {
            return Err(HarnessError::InvalidConfig("query volume must be positive".into()));
        }
        if self.gap_distance < 0.0 || self.gap_budget_frac < 0.0 {
            return Err(HarnessError::InvalidConfig("gap parameters must be non-negative".into()));
        }
        if self.page_capacity == 0 || self.grid_cells_per_axis == 0 || self.broad_limit == 0 {
            return Err(HarnessError::InvalidConfig(
                "page capacity, grid cells and broad limit must be >= 1".into(),
            ));
        }
        if self.cost.t_page <= 0.0 || self.cost.window_ratio < 0.0 {
            return Err(HarnessError::InvalidConfig("invalid cost model".into()));
        }
        if self.predictor == PredictorKind::ScoutOpt && !self.ordered_retrieval {
            return Err(HarnessError::OrderedRetrievalRequired);
        }
        Ok(())
    }

    /// Stable short hash of the full configuration.
    pub fn config_hash(&self) -> String {
        let encoded = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(encoded.as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-query accounting record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub seq: usize,
    /// 1-based query index within the sequence.
    pub query: usize,
    pub needed: usize,
    pub hits: usize,
    pub misses: usize,
    /// Pages prefetched in the window following this query.
    pub prefetched: usize,
    /// Pages fetched by gap traversal in that window.
    pub gap_pages: usize,
    /// Gap fetches beyond the window budget, charged to response time.
    pub gap_overflow: usize,
    pub candidates: usize,
    pub reset: bool,
    pub build_ops: u64,
    pub traverse_ops: u64,
    pub result_objects: usize,
}

/// Event log of one benchmark run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<QueryRecord>,
}

/// Percentage of needed pages served from the prefetch cache, excluding the
/// first query of each sequence (no prediction precedes it).
pub fn compute_hit_rate(trace: &RunTrace) -> Result<f64, HarnessError> {
    if trace.rows.is_empty() {
        return Err(HarnessError::EmptyTrace);
    }
    let mut hits = 0usize;
    let mut needed = 0usize;
    for r in &trace.rows {
        if r.query > 1 {
            hits += r.hits;
            needed += r.needed;
        }
    }
    if needed == 0 {
        return Ok(0.0);
    }
    Ok(hits as f64 / needed as f64)
}

/// Response-time speedup over running with no prefetching at all. Gap
/// fetches within the window occupy idle time and are free; overflow is
/// charged. Graph operations are charged at `op_cost_pages` when configured.
pub fn compute_speedup(trace: &RunTrace, cm: &CostModel, op_cost_pages: f64) -> f64 {
    let baseline: f64 = trace.rows.iter().map(|r| r.needed as f64 * cm.t_page).sum();
    let mut cost: f64 = trace
        .rows
        .iter()
        .map(|r| (r.misses + r.gap_overflow) as f64 * cm.t_page)
        .sum();
    if op_cost_pages > 0.0 {
        let ops: u64 = trace.rows.iter().map(|r| r.build_ops + r.traverse_ops).sum();
        cost += ops as f64 * op_cost_pages * cm.t_page;
    }
    if cost == 0.0 {
        return f64::INFINITY;
    }
    baseline / cost
}

/// Result of one benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub config_hash: String,
    pub predictor: String,
    pub strategy: String,
    pub seed: u64,
    pub hit_rate: f64,
    pub speedup: f64,
    pub trace: RunTrace,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "config_hash,predictor,strategy,seq,query,needed,hits,misses,prefetched,gap_pages,candidates,reset";

    /// Per-query rows in the pinned CSV layout.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.trace.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.config_hash,
                self.predictor,
                self.strategy,
                r.seq,
                r.query,
                r.needed,
                r.hits,
                r.misses,
                r.prefetched,
                r.gap_pages,
                r.candidates,
                u8::from(r.reset)
            )
            .expect("string write");
        }
        out
    }

    /// One summary JSON line for the run.
    pub fn summary_json(&self) -> String {
        let speedup = if self.speedup.is_finite() {
            serde_json::json!(round6(self.speedup))
        } else {
            serde_json::json!("inf")
        };
        serde_json::json!({
            "config_hash": self.config_hash,
            "predictor": self.predictor,
            "strategy": self.strategy,
            "seed": self.seed,
            "sequences": self.trace.rows.iter().map(|r| r.seq).max().map_or(0, |s| s + 1),
            "hit_rate": round6(self.hit_rate),
            "speedup": speedup,
        })
        .to_string()
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Loads or generates the configured dataset.
pub fn resolve_dataset(config: &BenchmarkConfig) -> Result<Dataset, HarnessError> {
    match &config.dataset {
        DatasetSource::Generate(params) => Ok(generate_fiber_forest(params)?),
        DatasetSource::File(path) => Ok(load_dataset(path)?),
    }
}

/// Runs the full benchmark described by `config`.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<MetricsReport, HarnessError> {
    let ds = resolve_dataset(config)?;
    run_benchmark_on(config, &ds)
}

/// Runs the benchmark against an already-built dataset (shared across sweep
/// points and repeated runs).
pub fn run_benchmark_on(config: &BenchmarkConfig, ds: &Dataset) -> Result<MetricsReport, HarnessError> {
    config.validate()?;
    let idx = build_index(ds, config.page_capacity);
    let grid = GridHashConfig { cell_count_per_axis: config.grid_cells_per_axis };
    let mut trace = RunTrace::default();

    for s in 0..config.sequences {
        let sp = SequenceParams {
            query_count: config.query_count,
            query_volume: config.query_volume,
            gap_distance: config.gap_distance,
            window_ratio: config.cost.window_ratio,
            seed: derive_seed(config.seed, 0x5e90_0000 + s as u64),
        };
        let qs = generate_query_sequence(ds, &sp)?;
        let mut plan_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x91a0_0000 + s as u64));
        run_sequence(config, ds, &idx, &grid, s, &qs.queries, &mut plan_rng, &mut trace);
    }

    let hit_rate = compute_hit_rate(&trace)?;
    let speedup = compute_speedup(&trace, &config.cost, config.op_cost_pages);
    Ok(MetricsReport {
        config_hash: config.config_hash(),
        predictor: config.predictor.to_string(),
        strategy: config.strategy.to_string(),
        seed: config.seed,
        hit_rate,
        speedup,
        trace,
    })
}

/// Per-sequence predictor state.
struct SequenceState {
    cache: PageCache,
    history_boxes: Vec<crate::geometry::Aabb>,
    history_centers: CenterHistory,
    prev_exits: Vec<CarriedExit>,
    prev_center: Option<crate::geometry::Vec3>,
}

#[allow(clippy::too_many_arguments)]
fn run_sequence(
    config: &BenchmarkConfig,
    ds: &Dataset,
    idx: &PagedIndex,
    grid: &GridHashConfig,
    seq: usize,
    queries: &[crate::geometry::Aabb],
    plan_rng: &mut ChaCha8Rng,
    trace: &mut RunTrace,
) {
    let edge = config.query_volume.cbrt();
    let hilbert_order = hilbert_order_for(&ds.bounds, edge);
    // The prefetch cache is cleared between sequences.
    let mut state = SequenceState {
        cache: match config.cache_pages {
            Some(c) => PageCache::with_capacity(c),
            None => PageCache::unbounded(),
        },
        history_boxes: Vec::new(),
        history_centers: CenterHistory::default(),
        prev_exits: Vec::new(),
        prev_center: None,
    };

    for (i, region) in queries.iter().enumerate() {
        let result = idx.range_query(region);
        let needed = result.pages.len();
        let (hits, misses) = if config.predictor == PredictorKind::NoPrefetch {
            (0, needed)
        } else {
            let (h, m) = cache_serve(&mut state.cache, &result.pages);
            (h.len(), m.len())
        };
        state.history_boxes.push(*region);
        state.history_centers.push(region.center());

        let mut row = QueryRecord {
            seq,
            query: i + 1,
            needed,
            hits,
            misses,
            prefetched: 0,
            gap_pages: 0,
            gap_overflow: 0,
            candidates: 0,
            reset: false,
            build_ops: 0,
            traverse_ops: 0,
            result_objects: result.object_ids.len(),
        };

        let last = i + 1 == queries.len();
        if config.predictor != PredictorKind::NoPrefetch {
            run_window(
                config, idx, grid, region, &result.pages, queries, i, edge, hilbert_order,
                plan_rng, &mut state, &mut row, last,
            );
        }

        state.prev_center = Some(region.center());
        trace.rows.push(row);
    }
}

#[allow(clippy::too_many_arguments)]
fn run_window(
    config: &BenchmarkConfig,
    idx: &PagedIndex,
    grid: &GridHashConfig,
    region: &crate::geometry::Aabb,
    result_pages: &BTreeSet<usize>,
    queries: &[crate::geometry::Aabb],
    i: usize,
    edge: f64,
    hilbert_order: u32,
    plan_rng: &mut ChaCha8Rng,
    state: &mut SequenceState,
    row: &mut QueryRecord,
    last: bool,
) {
    let window = WindowBudget {
        pages: (config.cost.window_ratio * row.needed as f64).floor() as usize,
    };

    // SCOUT variants also model the query content when no window follows,
    // so candidate statistics cover every query; prefetching is skipped.
    let is_scout =
        matches!(config.predictor, PredictorKind::Scout | PredictorKind::ScoutOpt);
    if !is_scout && last {
        return;
    }

    let plan: PrefetchPlan = match config.predictor {
        PredictorKind::Scout | PredictorKind::ScoutOpt => {
            let locations = scout_predict(config, idx, grid, region, result_pages, edge, state, row);
            if last {
                return;
            }
            let effective = WindowBudget { pages: window.pages.saturating_sub(row.gap_pages.min(window.pages)) };
            row.gap_overflow = row.gap_pages.saturating_sub(window.pages);
            match config.strategy {
                Strategy::Deep | Strategy::Baseline => plan_deep(&locations, effective, plan_rng),
                Strategy::Broad => {
                    plan_broad(&locations, effective, config.broad_limit, plan_rng)
                }
            }
        }
        PredictorKind::Oracle => {
            let next = &queries[i + 1];
            let pages: Vec<usize> = idx.range_query(next).pages.into_iter().collect();
            PrefetchPlan { targets: Vec::new(), ordered_pages: Some(pages), strategy: Some(Strategy::Baseline) }
        }
        PredictorKind::Straight => location_plan(predict_straight_line(&state.history_centers), window),
        PredictorKind::Poly(k) => location_plan(predict_polynomial(&state.history_centers, k), window),
        PredictorKind::Ewma(l) => location_plan(predict_ewma(&state.history_centers, l), window),
        PredictorKind::Hilbert => {
            plan_hilbert(idx, &idx_bounds(idx), region, window, hilbert_order)
        }
        PredictorKind::NoPrefetch => unreachable!("filtered by caller"),
    };

    let effective = WindowBudget { pages: window.pages.saturating_sub(row.gap_pages.min(window.pages)) };
    let stats = run_incremental(&plan, idx, &mut state.cache, effective, config.query_volume);
    row.prefetched = stats.fetched();
}

fn idx_bounds(idx: &PagedIndex) -> crate::geometry::Aabb {
    idx.pages()
        .iter()
        .map(|p| p.bbox)
        .reduce(|a, b| a.union(&b))
        .unwrap_or(crate::geometry::Aabb::new(
            crate::geometry::Vec3::ZERO,
            crate::geometry::Vec3::ZERO,
        ))
}

/// Builds the query graph (full or sparse), prunes candidates, and predicts
/// next-query locations. Fills the row's accounting fields and updates the
/// carried exits.
#[allow(clippy::too_many_arguments)]
fn scout_predict(
    config: &BenchmarkConfig,
    idx: &PagedIndex,
    grid: &GridHashConfig,
    region: &crate::geometry::Aabb,
    result_pages: &BTreeSet<usize>,
    edge: f64,
    state: &mut SequenceState,
    row: &mut QueryRecord,
) -> Vec<PredictedLocation> {
    let tol = grid.cell_diagonal(region);
    let sparse_wanted = config.predictor == PredictorKind::ScoutOpt && !state.prev_exits.is_empty();

    let full_build = |row: &mut QueryRecord| {
        let mut objects = Vec::new();
        for &p in result_pages {
            objects.extend_from_slice(idx.page_objects(p).expect("result page"));
        }
        let (g, store) = build_graph_grid_hash(&objects, region, grid);
        row.build_ops += g.build_ops;
        (g, store)
    };

    let (graph, store, mut cs) = if sparse_wanted {
        let entry_edges: Vec<ExitEdge> =
            state.prev_exits.iter().map(|c| c.edge.clone()).collect();
        let seeds: Vec<crate::geometry::Vec3> = entry_edges
            .iter()
            .map(|e| entry_point(e, region).unwrap_or(e.exit_point))
            .collect();
        let stream = idx.order_pages(result_pages, &seeds);
        let sparse = build_sparse_graph(idx, &stream, &entry_edges, region, grid);
        row.build_ops += sparse.graph.build_ops;
        let (cs, ops) = prune_candidates(&state.prev_exits, &sparse.graph, &sparse.objects, region, tol);
        row.traverse_ops += ops;
        if cs.reset {
            // The candidate trail went cold; fall back to the full graph so
            // the reset sees every structure in the result.
            let (g, st) = full_build(row);
            let (cs2, ops2) = prune_candidates(&state.prev_exits, &g, &st, region, tol);
            row.traverse_ops += ops2;
            (g, st, cs2)
        } else {
            (sparse.graph, sparse.objects, cs)
        }
    } else {
        let (g, st) = full_build(row);
        let (cs, ops) = prune_candidates(&state.prev_exits, &g, &st, region, tol);
        row.traverse_ops += ops;
        (g, st, cs)
    };

    if state.prev_exits.is_empty() {
        // First query of the sequence: no entry side; the reset flag only
        // reflects candidate loss afterwards.
        cs.reset = true;
    }
    row.candidates = cs.lineage_count();
    row.reset = cs.reset;

    // Forward exits drive prediction; every candidate exit is carried for
    // pruning, since the structure may leave through a side face and still
    // reach the next query.
    let tangent = tol * 6.0;
    let (forward, dfs_ops) = candidate_exits(&cs, &graph, &store, region, state.prev_center, tangent);
    row.traverse_ops += dfs_ops;
    let (all_exits, _) = candidate_exits(&cs, &graph, &store, region, None, tangent);

    let gap = estimate_gap(&state.history_boxes);
    if config.predictor == PredictorKind::ScoutOpt && gap.distance > 0.0 && !forward.is_empty() {
        let budget = (config.gap_budget_frac * row.needed as f64).ceil() as usize;
        let out = gap_traverse(idx, &forward, gap, budget, grid, region, edge, &mut state.cache);
        row.gap_pages = out.pages_read;
        state.prev_exits = out.carried_exits;
        out.predictions
    } else {
        let forward_edges: Vec<ExitEdge> = forward.iter().map(|c| c.edge.clone()).collect();
        let locations = extrapolate(&forward_edges, gap, edge);
        state.prev_exits = all_exits;
        locations
    }
}

fn location_plan(prediction: Option<PredictedLocation>, budget: WindowBudget) -> PrefetchPlan {
    match prediction {
        Some(location) => PrefetchPlan {
            targets: vec![PlanTarget { location, page_budget: budget.pages }],
            ordered_pages: None,
            strategy: Some(Strategy::Baseline),
        },
        None => PrefetchPlan::default(),
    }
}

/// Sensitivity sweep dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    QueryVolume,
    DatasetDensity,
    SequenceLength,
    WindowRatio,
    GridCells,
    GapDistance,
}

impl FromStr for SweepAxis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query_volume" => Ok(SweepAxis::QueryVolume),
            "dataset_density" => Ok(SweepAxis::DatasetDensity),
            "sequence_length" => Ok(SweepAxis::SequenceLength),
            "window_ratio" => Ok(SweepAxis::WindowRatio),
            "grid_cells" => Ok(SweepAxis::GridCells),
            "gap_distance" => Ok(SweepAxis::GapDistance),
            _ => Err(HarnessError::UnknownAxis(s.to_string())),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepAxis::QueryVolume => "query_volume",
            SweepAxis::DatasetDensity => "dataset_density",
            SweepAxis::SequenceLength => "sequence_length",
            SweepAxis::WindowRatio => "window_ratio",
            SweepAxis::GridCells => "grid_cells",
            SweepAxis::GapDistance => "gap_distance",
        };
        write!(f, "{s}")
    }
}

/// Applies one sweep value to a copy of the config.
pub fn apply_axis(
    config: &BenchmarkConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<BenchmarkConfig, HarnessError> {
    let mut c = config.clone();
    match axis {
        SweepAxis::QueryVolume => c.query_volume = value,
        SweepAxis::DatasetDensity => match &mut c.dataset {
            DatasetSource::Generate(p) => p.target_object_count = value as usize,
            DatasetSource::File(_) => {
                return Err(HarnessError::InvalidConfig(
                    "dataset_density sweep requires a generated dataset".into(),
                ))
            }
        },
        SweepAxis::SequenceLength => c.query_count = value as usize,
        SweepAxis::WindowRatio => c.cost.window_ratio = value,
        SweepAxis::GridCells => c.grid_cells_per_axis = value as usize,
        SweepAxis::GapDistance => c.gap_distance = value,
    }
    Ok(c)
}

/// Runs one benchmark per axis value with shared seeds.
pub fn sweep(
    config: &BenchmarkConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<(f64, MetricsReport)>, HarnessError> {
    let mut out = Vec::with_capacity(values.len());
    // The dataset can be shared across points unless the axis changes it.
    let shared = if axis == SweepAxis::DatasetDensity { None } else { Some(resolve_dataset(config)?) };
    for &v in values {
        let c = apply_axis(config, axis, v)?;
        let report = match &shared {
            Some(ds) => run_benchmark_on(&c, ds)?,
            None => run_benchmark(&c)?,
        };
        out.push((v, report));
    }
    Ok(out)
}

/// CSV of (value, hit_rate, speedup) for a sweep.
pub fn sweep_csv(axis: SweepAxis, results: &[(f64, MetricsReport)]) -> String {
    let mut out = String::from("axis,value,hit_rate,speedup\n");
    for (v, r) in results {
        let speedup = if r.speedup.is_finite() { format!("{:.6}", r.speedup) } else { "inf".into() };
        writeln!(out, "{axis},{v},{:.6},{speedup}", r.hit_rate).expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Vec3};

    fn small_config(predictor: PredictorKind, seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            dataset: DatasetSource::Generate(GeneratorParams {
                fiber_count: 6,
                target_object_count: 9_000,
                bifurcation_prob: 0.06,
                step_length: 3.0,
                tortuosity: 0.25,
                bounds: Aabb::new(Vec3::ZERO, Vec3::new(160.0, 160.0, 160.0)),
                seed: derive_seed(seed, 0xda7a),
            }),
            sequences: 4,
            query_count: 10,
            query_volume: 12_000.0,
            predictor,
            seed,
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn no_prefetch_run_is_exact_baseline() {
        let report = run_benchmark(&small_config(PredictorKind::NoPrefetch, 1)).unwrap();
        assert_eq!(report.hit_rate, 0.0);
        assert_eq!(report.speedup, 1.0);
        for r in &report.trace.rows {
            assert_eq!(r.hits, 0);
            assert_eq!(r.misses, r.needed);
        }
    }

    #[test]
    fn oracle_with_ample_window_hits_everything() {
        // Homogeneous straight fibers keep pages-per-query stable so the
        // window budget floor(r * needed) always covers the next query.
        let config = BenchmarkConfig {
            dataset: DatasetSource::Generate(GeneratorParams {
                fiber_count: 3,
                target_object_count: 6_000,
                bifurcation_prob: 0.0,
                step_length: 1.5,
                tortuosity: 0.05,
                bounds: Aabb::new(Vec3::ZERO, Vec3::new(220.0, 220.0, 220.0)),
                seed: derive_seed(2, 0xda7a),
            }),
            sequences: 4,
            query_count: 10,
            query_volume: 20_000.0,
            predictor: PredictorKind::Oracle,
            page_capacity: 8,
            seed: 2,
            cost: CostModel { t_page: 1.0, window_ratio: 3.0 },
            ..BenchmarkConfig::default()
        };
        let report = run_benchmark(&config).unwrap();
        assert_eq!(report.hit_rate, 1.0, "oracle hit rate {}", report.hit_rate);
        for r in &report.trace.rows {
            assert_eq!(r.hits + r.misses, r.needed);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let config = small_config(PredictorKind::Scout, 3);
        let a = run_benchmark(&config).unwrap();
        let b = run_benchmark(&config).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.summary_json(), b.summary_json());
    }

    #[test]
    fn hit_rate_excludes_first_query() {
        let trace = RunTrace {
            rows: vec![
                QueryRecord {
                    seq: 0, query: 1, needed: 10, hits: 0, misses: 10, prefetched: 0,
                    gap_pages: 0, gap_overflow: 0, candidates: 0, reset: true,
                    build_ops: 0, traverse_ops: 0, result_objects: 0,
                },
                QueryRecord {
                    seq: 0, query: 2, needed: 100, hits: 75, misses: 25, prefetched: 0,
                    gap_pages: 0, gap_overflow: 0, candidates: 0, reset: false,
                    build_ops: 0, traverse_ops: 0, result_objects: 0,
                },
            ],
        };
        assert_eq!(compute_hit_rate(&trace).unwrap(), 0.75);
        assert!(compute_hit_rate(&RunTrace::default()).is_err());
    }

    #[test]
    fn speedup_matches_uniform_hit_rate_algebra() {
        // Uniform hit rate h with no gap overflow gives 1/(1-h).
        let h = 0.9;
        let rows: Vec<QueryRecord> = (0..20)
            .map(|i| QueryRecord {
                seq: 0, query: i + 1, needed: 100, hits: (100.0 * h) as usize,
                misses: 100 - (100.0 * h) as usize, prefetched: 0, gap_pages: 0,
                gap_overflow: 0, candidates: 0, reset: false, build_ops: 0,
                traverse_ops: 0, result_objects: 0,
            })
            .collect();
        let trace = RunTrace { rows };
        let s = compute_speedup(&trace, &CostModel::default(), 0.0);
        assert!((s - 10.0).abs() < 1e-9, "speedup {s}");

        // All hits: infinite speedup sentinel.
        let rows = vec![QueryRecord {
            seq: 0, query: 1, needed: 5, hits: 5, misses: 0, prefetched: 0, gap_pages: 0,
            gap_overflow: 0, candidates: 0, reset: false, build_ops: 0, traverse_ops: 0,
            result_objects: 0,
        }];
        assert!(compute_speedup(&RunTrace { rows }, &CostModel::default(), 0.0).is_infinite());
    }

    #[test]
    fn conservation_and_window_bounds_hold() {
        let config = small_config(PredictorKind::Scout, 4);
        let report = run_benchmark(&config).unwrap();
        for r in &report.trace.rows {
            assert_eq!(r.hits + r.misses, r.needed);
            let window = (config.cost.window_ratio * r.needed as f64).floor() as usize;
            assert!(r.prefetched + r.gap_pages.min(window) <= window,
                "window overrun: {r:?}");
        }
    }

    #[test]
    fn scout_opt_requires_ordered_retrieval() {
        let mut config = small_config(PredictorKind::ScoutOpt, 5);
        config.ordered_retrieval = false;
        assert!(matches!(
            run_benchmark(&config),
            Err(HarnessError::OrderedRetrievalRequired)
        ));
    }

    #[test]
    fn oracle_is_a_hit_rate_ceiling() {
        let mut oracle_cfg = small_config(PredictorKind::Oracle, 6);
        oracle_cfg.cost.window_ratio = 1.5;
        let oracle = run_benchmark(&oracle_cfg).unwrap();
        for predictor in [
            PredictorKind::Scout,
            PredictorKind::Straight,
            PredictorKind::Ewma(0.3),
        ] {
            let mut c = small_config(predictor, 6);
            c.cost.window_ratio = 1.5;
            let r = run_benchmark(&c).unwrap();
            assert!(
                r.hit_rate <= oracle.hit_rate + 1e-12,
                "{predictor:?} ({}) beat oracle ({})",
                r.hit_rate,
                oracle.hit_rate
            );
        }
    }

    #[test]
    fn predictor_kind_round_trips_through_strings() {
        for s in ["scout", "scout-opt", "oracle", "straight", "poly:2", "ewma:0.3", "hilbert", "none"] {
            let k: PredictorKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("poly:0".parse::<PredictorKind>().is_err());
        assert!("ewma:0".parse::<PredictorKind>().is_err());
        assert!("nonsense".parse::<PredictorKind>().is_err());
    }

    #[test]
    fn sweep_single_value_equals_run() {
        let config = small_config(PredictorKind::Straight, 7);
        let single = sweep(&config, SweepAxis::WindowRatio, &[1.0]).unwrap();
        let direct = run_benchmark(&config).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].1.to_csv(), direct.to_csv());
        assert!(matches!(
            "bogus".parse::<SweepAxis>(),
            Err(HarnessError::UnknownAxis(_))
        ));
    }

    #[test]
    fn fig10_template_configs_run() {
        // Template rows: (queries, volume, gap, ratio).
        for (queries, volume, gap, ratio) in [
            (25, 80_000.0, 0.0, 0.8),
            (35, 20_000.0, 0.0, 2.0),
            (12, 30_000.0, 25.0, 1.2),
        ] {
            let mut config = small_config(PredictorKind::Scout, 8);
            config.sequences = 1;
            config.query_count = queries;
            config.query_volume = volume;
            config.gap_distance = gap;
            config.cost.window_ratio = ratio;
            // Long sequences need a bigger dataset to host the path.
            if let DatasetSource::Generate(p) = &mut config.dataset {
                p.target_object_count = 24_000;
                p.bounds = Aabb::new(Vec3::ZERO, Vec3::new(260.0, 260.0, 260.0));
            }
            let report = run_benchmark(&config).unwrap();
            assert_eq!(report.trace.rows.len(), queries);
        }
    }
}
