//! Prefetch planning and execution: the page cache, deep and broad window
//! strategies with a k-means location limiter, and the incremental probe
//! schedule that fills the prefetch window.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Vec3};
use crate::index::{PagedIndex, PageId};
use crate::predictor::PredictedLocation;

/// Page fetches allowed within one prefetch window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowBudget {
    pub pages: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Deep,
    Broad,
    Baseline,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Deep => write!(f, "deep"),
            Strategy::Broad => write!(f, "broad"),
            Strategy::Baseline => write!(f, "baseline"),
        }
    }
}

/// One prefetch target with its share of the window budget.
#[derive(Debug, Clone)]
pub struct PlanTarget {
    pub location: PredictedLocation,
    pub page_budget: usize,
}

/// Per-window prefetch instructions: either probe targets, or an explicit
/// page order for methods that enumerate pages directly.
#[derive(Debug, Clone, Default)]
pub struct PrefetchPlan {
    pub targets: Vec<PlanTarget>,
    pub ordered_pages: Option<Vec<PageId>>,
    pub strategy: Option<Strategy>,
}

impl PrefetchPlan {
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty() && self.ordered_pages.as_ref().map_or(true, Vec::is_empty)
    }
}

#[derive(Debug, Clone, Copy)]
struct CacheEntry {
    order: u64,
    prefetched: bool,
    used: bool,
}

/// Resident page set with optional capacity. Cleared between sequences.
#[derive(Debug, Default)]
pub struct PageCache {
    entries: BTreeMap<PageId, CacheEntry>,
    capacity: Option<usize>,
    counter: u64,
}

impl PageCache {
    pub fn unbounded() -> Self {
        PageCache::default()
    }

    pub fn with_capacity(pages: usize) -> Self {
        PageCache { capacity: Some(pages), ..PageCache::default() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.counter = 0;
    }

    pub fn resident(&self, page: PageId) -> bool {
        self.entries.contains_key(&page)
    }

    fn full(&self) -> bool {
        self.capacity.is_some_and(|c| self.entries.len() >= c)
    }

    /// Inserts a prefetched page; false when the cache is full (prefetching
    /// halts for the window).
    pub fn insert_prefetched(&mut self, page: PageId) -> bool {
        if self.entries.contains_key(&page) {
            return true;
        }
        if self.full() {
            return false;
        }
        self.counter += 1;
        self.entries.insert(page, CacheEntry { order: self.counter, prefetched: true, used: false });
        true
    }

    /// Inserts a page fetched at query time. When capacity forces it, the
    /// oldest prefetched-but-unused page is evicted first.
    pub fn insert_miss(&mut self, page: PageId) {
        if self.entries.contains_key(&page) {
            return;
        }
        if self.full() {
            let victim = self
                .entries
                .iter()
                .filter(|(_, e)| e.prefetched && !e.used)
                .min_by_key(|(_, e)| e.order)
                .map(|(&p, _)| p)
                .or_else(|| self.entries.iter().min_by_key(|(_, e)| e.order).map(|(&p, _)| p));
            if let Some(victim) = victim {
                self.entries.remove(&victim);
            }
        }
        self.counter += 1;
        self.entries.insert(page, CacheEntry { order: self.counter, prefetched: false, used: true });
    }

    fn mark_used(&mut self, page: PageId) {
        if let Some(e) = self.entries.get_mut(&page) {
            e.used = true;
        }
    }
}

/// Serves a query's page set from the cache: hits stay, misses are fetched
/// from "disk" and inserted.
pub fn cache_serve(
    cache: &mut PageCache,
    needed: &BTreeSet<PageId>,
) -> (BTreeSet<PageId>, BTreeSet<PageId>) {
    let mut hits = BTreeSet::new();
    let mut misses = BTreeSet::new();
    for &p in needed {
        if cache.resident(p) {
            cache.mark_used(p);
            hits.insert(p);
        } else {
            misses.insert(p);
        }
    }
    for &p in &misses {
        cache.insert_miss(p);
    }
    (hits, misses)
}

/// Deep prefetching: the whole window budget on one candidate picked
/// uniformly at random.
pub fn plan_deep(
    locations: &[PredictedLocation],
    budget: WindowBudget,
    rng: &mut ChaCha8Rng,
) -> PrefetchPlan {
    if locations.is_empty() {
        return PrefetchPlan::default();
    }
    let pick = rng.gen_range(0..locations.len());
    PrefetchPlan {
        targets: vec![PlanTarget { location: locations[pick].clone(), page_budget: budget.pages }],
        ordered_pages: None,
        strategy: Some(Strategy::Deep),
    }
}

/// Broad prefetching: the budget split equally across candidates. With more
/// than `d_limit` candidates, exit locations are clustered with k-means and
/// one location is drawn per cluster. Overlapping targets are left separate:
/// the cache already guarantees overlapping probe content is fetched once.
pub fn plan_broad(
    locations: &[PredictedLocation],
    budget: WindowBudget,
    d_limit: usize,
    rng: &mut ChaCha8Rng,
) -> PrefetchPlan {
    assert!(d_limit >= 1);
    if locations.is_empty() {
        return PrefetchPlan::default();
    }
    let chosen: Vec<PredictedLocation> = if locations.len() <= d_limit {
        locations.to_vec()
    } else {
        // Cluster the exit locations, then draw one location per cluster.
        let points: Vec<Vec3> = locations.iter().map(|l| l.origin).collect();
        let assignment = kmeans(&points, d_limit, rng);
        let mut picks = Vec::with_capacity(d_limit);
        for cluster in 0..d_limit {
            let members: Vec<usize> =
                (0..locations.len()).filter(|&i| assignment[i] == cluster).collect();
            if members.is_empty() {
                continue;
            }
            let pick = members[rng.gen_range(0..members.len())];
            picks.push(locations[pick].clone());
        }
        picks
    };

    let n = chosen.len();
    let base = budget.pages / n;
    let extra = budget.pages % n;
    let mut targets: Vec<PlanTarget> = chosen
        .into_iter()
        .enumerate()
        .map(|(i, location)| PlanTarget {
            location,
            page_budget: base + usize::from(i < extra),
        })
        .collect();

    PrefetchPlan { targets, ordered_pages: None, strategy: Some(Strategy::Broad) }
}

/// Lloyd's k-means over 3D points with seeded distinct-point initialization.
/// Returns the per-point cluster assignment.
pub fn kmeans(points: &[Vec3], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(k >= 1);
    if points.is_empty() {
        return Vec::new();
    }
    let k = k.min(points.len());
    // Initialize with k distinct point indices.
    let mut order: Vec<usize> = (0..points.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut centroids: Vec<Vec3> = order[..k].iter().map(|&i| points[i]).collect();
    let mut assignment = vec![0usize; points.len()];

    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .map(|c| (p.distance(centroids[c]), c))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap()
                .1;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![Vec3::ZERO; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assignment[i]] = sums[assignment[i]] + *p;
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] * (1.0 / counts[c] as f64);
            } else {
                // Reseed an empty cluster at the point farthest from its
                // centroid.
                let far = (0..points.len())
                    .map(|i| (points[i].distance(centroids[assignment[i]]), i))
                    .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                    .unwrap()
                    .1;
                centroids[c] = points[far];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    assignment
}

/// One page fetch performed during a prefetch window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FetchEvent {
    pub page: PageId,
    pub target: usize,
    pub probe: usize,
}

/// Outcome of executing a prefetch plan.
#[derive(Debug, Default)]
pub struct PrefetchStats {
    pub events: Vec<FetchEvent>,
    /// The cache filled up and prefetching halted for the window.
    pub halted: bool,
}

impl PrefetchStats {
    pub fn fetched(&self) -> usize {
        self.events.len()
    }
}

/// Probe growth factor: linear dimensions scale by this per probe.
pub const PROBE_GROWTH: f64 = 1.3;
/// First probe volume as a fraction of the query volume.
pub const PROBE_INITIAL_FRACTION: f64 = 0.25;
const MAX_PROBES: usize = 64;

/// Executes a plan within the window budget. Each target runs a series of
/// growing box probes along its direction; only non-resident pages are
/// fetched and every fetched page costs one unit of budget.
pub fn run_incremental(
    plan: &PrefetchPlan,
    idx: &PagedIndex,
    cache: &mut PageCache,
    budget: WindowBudget,
    query_volume: f64,
) -> PrefetchStats {
    let mut stats = PrefetchStats::default();
    let mut remaining = budget.pages;
    if remaining == 0 {
        return stats;
    }

    if let Some(pages) = &plan.ordered_pages {
        for (i, &p) in pages.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            if cache.resident(p) {
                continue;
            }
            if !cache.insert_prefetched(p) {
                stats.halted = true;
                break;
            }
            stats.events.push(FetchEvent { page: p, target: 0, probe: i });
            remaining -= 1;
        }
        return stats;
    }

    let data_bounds = match idx.pages().iter().map(|p| p.bbox).reduce(|a, b| a.union(&b)) {
        Some(b) => b,
        None => return stats,
    };

    // Per-target probe cursors; probes start just beyond the exit location
    // and grow along the extrapolated axis.
    struct Cursor {
        center: Vec3,
        edge: f64,
        probe: usize,
        share: usize,
        live: bool,
    }
    let mut cursors: Vec<Cursor> = plan
        .targets
        .iter()
        .map(|t| {
            let edge = (query_volume * PROBE_INITIAL_FRACTION).cbrt();
            Cursor {
                center: t.location.origin + t.location.direction * (edge / 2.0),
                edge,
                probe: 0,
                share: t.page_budget,
                live: true,
            }
        })
        .collect();

    // First pass honors the per-target shares; once every share is spent or
    // stuck, leftover window budget keeps the remaining probes growing.
    let mut enforce_share = true;
    while remaining > 0 && !stats.halted {
        let mut progressed = false;
        for (target_idx, target) in plan.targets.iter().enumerate() {
            let c = &mut cursors[target_idx];
            if !c.live || remaining == 0 || (enforce_share && c.share == 0) {
                continue;
            }
            if c.probe >= MAX_PROBES {
                c.live = false;
                continue;
            }
            let probe_box = Aabb::cube(c.center, c.edge);
            if !probe_box.intersects(&data_bounds) {
                c.live = false;
                continue;
            }
            let result = idx.range_query(&probe_box);
            // Nearer pages first within the probe.
            let origin = target.location.origin;
            let mut new_pages: Vec<PageId> =
                result.pages.iter().copied().filter(|&p| !cache.resident(p)).collect();
            new_pages.sort_by(|&a, &b| {
                idx.pages()[a]
                    .bbox
                    .distance_to_point(origin)
                    .total_cmp(&idx.pages()[b].bbox.distance_to_point(origin))
                    .then(a.cmp(&b))
            });
            for p in new_pages {
                if remaining == 0 || (enforce_share && c.share == 0) {
                    break;
                }
                if !cache.insert_prefetched(p) {
                    stats.halted = true;
                    break;
                }
                stats.events.push(FetchEvent { page: p, target: target_idx, probe: c.probe });
                c.share = c.share.saturating_sub(1);
                remaining -= 1;
                progressed = true;
            }
            if stats.halted {
                break;
            }
            c.center = c.center + target.location.direction * (c.edge / 2.0);
            c.edge *= PROBE_GROWTH;
            c.probe += 1;
        }
        if !progressed {
            if enforce_share && cursors.iter().any(|c| c.live) {
                enforce_share = false;
            } else if cursors.iter().all(|c| !c.live) {
                break;
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_fiber_forest, GeneratorParams};
    use crate::index::build_index;
    use rand::SeedableRng;

    fn loc(center: Vec3) -> PredictedLocation {
        PredictedLocation {
            center,
            direction: Vec3::new(1.0, 0.0, 0.0),
            weight: 1.0,
            origin: center,
        }
    }

    #[test]
    fn cache_serve_partitions_by_residency() {
        let mut cache = PageCache::unbounded();
        cache.insert_prefetched(1);
        cache.insert_prefetched(2);
        cache.insert_prefetched(3);
        let needed: BTreeSet<PageId> = [1, 2, 3, 4].into();
        let (hits, misses) = cache_serve(&mut cache, &needed);
        assert_eq!(hits.len(), 3);
        assert_eq!(misses, [4].into());
        // The miss was inserted.
        assert!(cache.resident(4));
        let (hits, misses) = cache_serve(&mut cache, &needed);
        assert_eq!(hits.len(), 4);
        assert!(misses.is_empty());
    }

    #[test]
    fn empty_cache_all_misses() {
        let mut cache = PageCache::unbounded();
        let needed: BTreeSet<PageId> = [7, 8].into();
        let (hits, misses) = cache_serve(&mut cache, &needed);
        assert!(hits.is_empty());
        assert_eq!(misses.len(), 2);
    }

    #[test]
    fn capacity_halts_prefetch_and_miss_insert_evicts_unused() {
        let mut cache = PageCache::with_capacity(2);
        assert!(cache.insert_prefetched(1));
        assert!(cache.insert_prefetched(2));
        assert!(!cache.insert_prefetched(3), "full cache must refuse prefetch");
        // A miss still inserts, evicting the oldest unused prefetched page.
        cache.insert_miss(9);
        assert!(cache.resident(9));
        assert!(!cache.resident(1));
        assert!(cache.resident(2));
    }

    #[test]
    fn deep_plan_is_seed_deterministic_and_uniform() {
        let locations: Vec<PredictedLocation> = (0..4)
            .map(|i| loc(Vec3::new(i as f64 * 100.0, 0.0, 0.0)))
            .collect();
        let budget = WindowBudget { pages: 10 };

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = plan_deep(&locations, budget, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = plan_deep(&locations, budget, &mut rng);
        assert_eq!(a.targets[0].location.center, b.targets[0].location.center);
        assert_eq!(a.targets[0].page_budget, 10);

        // Over many seeds each of the 4 disjoint targets is picked ~1/4 of
        // the time.
        let mut counts = [0usize; 4];
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let plan = plan_deep(&locations, budget, &mut rng);
            let x = plan.targets[0].location.center.x;
            counts[(x / 100.0) as usize] += 1;
        }
        for c in counts {
            let frac = c as f64 / 1000.0;
            assert!((frac - 0.25).abs() <= 0.05, "pick fraction {frac}");
        }
    }

    #[test]
    fn broad_splits_budget_equally() {
        let locations: Vec<PredictedLocation> = (0..4)
            .map(|i| loc(Vec3::new(i as f64 * 1000.0, 0.0, 0.0)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = plan_broad(&locations, WindowBudget { pages: 100 }, 8, &mut rng);
        assert_eq!(plan.targets.len(), 4);
        for t in &plan.targets {
            assert_eq!(t.page_budget, 25);
        }
    }

    #[test]
    fn single_location_broad_equals_deep() {
        let locations = vec![loc(Vec3::new(5.0, 5.0, 5.0))];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let broad = plan_broad(&locations, WindowBudget { pages: 7 }, 3, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let deep = plan_deep(&locations, WindowBudget { pages: 7 }, &mut rng);
        assert_eq!(broad.targets.len(), 1);
        assert_eq!(broad.targets[0].page_budget, deep.targets[0].page_budget);
        assert_eq!(broad.targets[0].location.center, deep.targets[0].location.center);
    }

    #[test]
    fn broad_limits_targets_with_kmeans_clusters() {
        // Three well-separated groups of exit locations; any converged
        // k-means (the independent oracle is the obvious partition) puts
        // each pick in a distinct group.
        let mut locations = Vec::new();
        let groups = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1000.0, 0.0, 0.0),
            Vec3::new(0.0, 1000.0, 0.0),
        ];
        for (gi, g) in groups.iter().enumerate() {
            for k in 0..=gi {
                locations.push(loc(*g + Vec3::new(k as f64, 0.0, 0.0)));
            }
        }
        // 10 locations total across 3 groups? 1+2+3 = 6; add 4 more to group 0.
        for k in 0..4 {
            locations.push(loc(groups[0] + Vec3::new(0.0, k as f64 + 1.0, 0.0)));
        }
        assert_eq!(locations.len(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = plan_broad(&locations, WindowBudget { pages: 30 }, 3, &mut rng);
        assert_eq!(plan.targets.len(), 3);
        let group_of = |c: Vec3| {
            groups
                .iter()
                .enumerate()
                .min_by(|a, b| c.distance(*a.1).total_cmp(&c.distance(*b.1)))
                .unwrap()
                .0
        };
        let mut seen = BTreeSet::new();
        for t in &plan.targets {
            assert!(seen.insert(group_of(t.location.center)), "two picks in one cluster");
        }
    }

    fn probe_index() -> (crate::dataset::Dataset, crate::index::PagedIndex) {
        let ds = generate_fiber_forest(&GeneratorParams {
            fiber_count: 4,
            target_object_count: 3000,
            bifurcation_prob: 0.05,
            step_length: 3.0,
            tortuosity: 0.2,
            bounds: Aabb::new(Vec3::ZERO, Vec3::new(120.0, 120.0, 120.0)),
            seed: 77,
        })
        .unwrap();
        let idx = build_index(&ds, 40);
        (ds, idx)
    }

    #[test]
    fn zero_budget_fetches_nothing() {
        let (ds, idx) = probe_index();
        let mut cache = PageCache::unbounded();
        let plan = PrefetchPlan {
            targets: vec![PlanTarget {
                location: loc(ds.objects[0].seg.midpoint()),
                page_budget: 10,
            }],
            ordered_pages: None,
            strategy: Some(Strategy::Deep),
        };
        let stats = run_incremental(&plan, &idx, &mut cache, WindowBudget { pages: 0 }, 1000.0);
        assert_eq!(stats.fetched(), 0);
    }

    #[test]
    fn no_page_fetched_twice_and_budget_respected() {
        let (ds, idx) = probe_index();
        let mut cache = PageCache::unbounded();
        let plan = PrefetchPlan {
            targets: vec![PlanTarget {
                location: loc(ds.objects[100].seg.midpoint()),
                page_budget: 12,
            }],
            ordered_pages: None,
            strategy: Some(Strategy::Deep),
        };
        let stats = run_incremental(&plan, &idx, &mut cache, WindowBudget { pages: 12 }, 4000.0);
        assert!(stats.fetched() <= 12);
        let mut seen = BTreeSet::new();
        for e in &stats.events {
            assert!(seen.insert(e.page), "page {} fetched twice", e.page);
        }
        // Probe indices are non-decreasing within the target.
        for w in stats.events.windows(2) {
            assert!(w[0].probe <= w[1].probe);
        }
    }

    #[test]
    fn full_cache_halts_window() {
        let (ds, idx) = probe_index();
        let mut cache = PageCache::with_capacity(3);
        let plan = PrefetchPlan {
            targets: vec![PlanTarget {
                location: loc(ds.objects[500].seg.midpoint()),
                page_budget: 50,
            }],
            ordered_pages: None,
            strategy: Some(Strategy::Deep),
        };
        let stats = run_incremental(&plan, &idx, &mut cache, WindowBudget { pages: 50 }, 8000.0);
        assert!(stats.halted);
        assert_eq!(cache.len(), 3);
    }

    #[test]
    fn ordered_plan_fetches_in_order() {
        let (_, idx) = probe_index();
        let mut cache = PageCache::unbounded();
        cache.insert_prefetched(1);
        let pages: Vec<PageId> = (0..6).collect();
        let plan = PrefetchPlan {
            targets: Vec::new(),
            ordered_pages: Some(pages),
            strategy: Some(Strategy::Baseline),
        };
        let stats = run_incremental(&plan, &idx, &mut cache, WindowBudget { pages: 4 }, 1.0);
        let fetched: Vec<PageId> = stats.events.iter().map(|e| e.page).collect();
        assert_eq!(fetched, vec![0, 2, 3, 4]);
    }
}
