//! Candidate-set maintenance across a query sequence and next-location
//! prediction: exit extrapolation, gap estimation, and budget-bounded gap
//! traversal through pages between non-adjacent queries.

use std::collections::BTreeSet;

use crate::geometry::{Aabb, Vec3};
use crate::graph::{
    entry_point, exit_edges, exit_edges_smoothed, ExitEdge, GridHashConfig, ObjectStore,
    StructureGraph,
};
use crate::index::{PagedIndex, PageId};
use crate::prefetch::PageCache;

/// A predicted location for the next query.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedLocation {
    pub center: Vec3,
    /// Unit direction of travel at the prediction.
    pub direction: Vec3,
    /// Weights over one prediction batch sum to 1.
    pub weight: f64,
    /// Anchor the incremental probes start from: the exit location for
    /// structure-based predictions, the current query boundary for
    /// location-only ones.
    pub origin: Vec3,
}

/// Estimated distance between consecutive queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    pub distance: f64,
}

/// An exit edge tagged with the reset-generation candidate it descends
/// from. Lineages only die between resets, never appear.
#[derive(Debug, Clone, PartialEq)]
pub struct CarriedExit {
    pub edge: ExitEdge,
    pub ancestor: u64,
}

/// One surviving candidate: the component label, its lineage, and the edge
/// where the structure entered the current query.
#[derive(Debug, Clone)]
pub struct CandidateEntry {
    pub component: u64,
    pub ancestor: u64,
    pub edge: ExitEdge,
}

/// Structures that exited the previous query and entered the current one.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub entries: Vec<CandidateEntry>,
    pub reset: bool,
}

impl CandidateSet {
    /// Number of distinct candidate components.
    pub fn component_count(&self) -> usize {
        self.entries.iter().map(|e| e.component).collect::<BTreeSet<_>>().len()
    }

    /// Number of distinct surviving lineages; non-increasing between resets.
    pub fn lineage_count(&self) -> usize {
        self.entries.iter().map(|e| e.ancestor).collect::<BTreeSet<_>>().len()
    }

    pub fn start_ids(&self) -> BTreeSet<u64> {
        self.entries.iter().map(|e| e.edge.inside_id).collect()
    }
}

/// Intersects the structures exiting the previous query with those entering
/// the current one. An empty intersection resets the candidate set to every
/// component with a boundary crossing.
///
/// Matching uses continuing-object identity when the previous exit recorded
/// one, else proximity of the projected entry point within `tol`.
pub fn prune_candidates(
    prev_exits: &[CarriedExit],
    g: &StructureGraph,
    objects: &ObjectStore,
    region: &Aabb,
    tol: f64,
) -> (CandidateSet, u64) {
    let mut ops = 0u64;
    let components = g.inside_components();
    let mut label_of = std::collections::BTreeMap::new();
    for comp in &components {
        let label = *comp.iter().next().unwrap();
        for &id in comp {
            label_of.insert(id, label);
        }
        ops += comp.len() as u64;
    }

    // Boundary edges of every component, for resets and proximity matching.
    let (all_edges, scan_ops) = exit_edges(g, objects, region, &BTreeSet::new());
    ops += scan_ops;

    let mut entries: Vec<CandidateEntry> = Vec::new();
    if !prev_exits.is_empty() {
        let mut matched: BTreeSet<u64> = BTreeSet::new();
        for carried in prev_exits {
            let e = &carried.edge;
            // Identity: the crossing object itself or its continuation shows
            // up in the current result (object ids are stable).
            let id_match = [e.outside_id, Some(e.inside_id)]
                .into_iter()
                .flatten()
                .find(|w| g.is_inside(*w));
            if let Some(w) = id_match {
                let label = label_of[&w];
                if matched.insert(label) {
                    entries.push(CandidateEntry {
                        component: label,
                        ancestor: carried.ancestor,
                        edge: ExitEdge {
                            inside_id: w,
                            outside_id: e.outside_id,
                            exit_point: entry_point(e, region).unwrap_or(e.exit_point),
                            direction: e.direction,
                        },
                    });
                }
                continue;
            }
            // Proximity: a component crossing the boundary near the
            // extrapolated entry point, on the entry side (its outward
            // direction opposes the carried travel direction).
            if let Some(p) = entry_point(e, region) {
                for edge in &all_edges {
                    ops += 1;
                    if edge.direction.dot(e.direction) <= 0.0 && edge.exit_point.distance(p) <= tol {
                        let label = label_of[&edge.inside_id];
                        if matched.insert(label) {
                            entries.push(CandidateEntry {
                                component: label,
                                ancestor: carried.ancestor,
                                edge: ExitEdge {
                                    inside_id: edge.inside_id,
                                    outside_id: e.outside_id,
                                    exit_point: p,
                                    direction: e.direction,
                                },
                            });
                        }
                    }
                }
            }
        }
    }

    let reset = entries.is_empty();
    if reset {
        // All structures with boundary crossings become candidates again.
        let mut seen: BTreeSet<u64> = BTreeSet::new();
        for edge in &all_edges {
            let label = label_of[&edge.inside_id];
            if seen.insert(label) {
                entries.push(CandidateEntry {
                    component: label,
                    ancestor: label,
                    edge: edge.clone(),
                });
            }
        }
    }
    entries.sort_by_key(|e| (e.component, e.edge.inside_id));
    (CandidateSet { entries, reset }, ops)
}

/// Forward exit edges of the candidate components: a depth-first traversal
/// from the candidate entries, keeping exits whose direction agrees with the
/// travel direction (entry-side exits point backward and are dropped).
/// Exits inherit the lineage of the candidate component they belong to.
/// `tangent_radius > 0` smooths exit directions over nearby connected
/// objects.
pub fn candidate_exits(
    cs: &CandidateSet,
    g: &StructureGraph,
    objects: &ObjectStore,
    region: &Aabb,
    prev_center: Option<Vec3>,
    tangent_radius: f64,
) -> (Vec<CarriedExit>, u64) {
    let starts = cs.start_ids();
    if starts.is_empty() {
        return (Vec::new(), 0);
    }
    let (mut exits, ops) = exit_edges_smoothed(g, objects, region, &starts, tangent_radius);
    if let Some(prev) = prev_center {
        let travel = (region.center() - prev).normalized();
        exits.retain(|e| e.direction.dot(travel) >= 0.0);
    }

    // Map each exit's component to the lineage of the entry that matched it.
    let mut ancestor_of: std::collections::BTreeMap<u64, u64> = std::collections::BTreeMap::new();
    for entry in &cs.entries {
        let members = g.reachable(&[entry.edge.inside_id].into());
        for m in members {
            ancestor_of.entry(m).or_insert(entry.ancestor);
        }
    }
    let carried = exits
        .into_iter()
        .map(|edge| {
            let ancestor = ancestor_of.get(&edge.inside_id).copied().unwrap_or(edge.inside_id);
            CarriedExit { edge, ancestor }
        })
        .collect();
    (carried, ops)
}

/// Face-to-face distance between the last two queries; 0 with fewer than two.
pub fn estimate_gap(history: &[Aabb]) -> GapEstimate {
    let distance = match history {
        [.., a, b] => a.gap_distance(b),
        _ => 0.0,
    };
    GapEstimate { distance }
}

/// Linear extrapolation: each exit predicts a center one gap plus half a
/// query edge beyond its exit point, with uniform weights.
pub fn extrapolate(
    exits: &[ExitEdge],
    gap: GapEstimate,
    query_edge: f64,
) -> Vec<PredictedLocation> {
    if exits.is_empty() {
        return Vec::new();
    }
    let w = 1.0 / exits.len() as f64;
    exits
        .iter()
        .map(|e| PredictedLocation {
            center: e.exit_point + e.direction * (gap.distance + query_edge / 2.0),
            direction: e.direction,
            weight: w,
            origin: e.exit_point,
        })
        .collect()
}

/// Result of bridging the gap between queries by following structures.
#[derive(Debug)]
pub struct GapTraversal {
    pub predictions: Vec<PredictedLocation>,
    /// Exits projected through the gap, used for pruning at the next query.
    pub carried_exits: Vec<CarriedExit>,
    pub pages_read: usize,
}

/// Follows candidate structures page by page through the gap region until
/// the estimated gap distance is covered or the I/O budget is exhausted; on
/// exhaustion falls back to linear extrapolation from the farthest point
/// reached.
pub fn gap_traverse(
    idx: &PagedIndex,
    exits: &[CarriedExit],
    gap: GapEstimate,
    budget_pages: usize,
    cfg: &GridHashConfig,
    region: &Aabb,
    query_edge: f64,
    cache: &mut PageCache,
) -> GapTraversal {
    let edges: Vec<ExitEdge> = exits.iter().map(|c| c.edge.clone()).collect();
    if gap.distance <= 0.0 || budget_pages == 0 || exits.is_empty() {
        return GapTraversal {
            predictions: extrapolate(&edges, gap, query_edge),
            carried_exits: exits.to_vec(),
            pages_read: 0,
        };
    }

    let reach = gap.distance + query_edge;
    let window = region.inflate(reach);
    let mut builder = crate::graph::LatticeGraphBuilder::new(region, cfg, window);
    let mut loaded: BTreeSet<PageId> = BTreeSet::new();
    let mut pages_read = 0usize;
    let quota = budget_pages.div_ceil(exits.len());

    let mut predictions = Vec::new();
    let mut out_exits: Vec<CarriedExit> = Vec::new();

    for carried in exits {
        let exit = &carried.edge;
        let mut local_budget = quota.min(budget_pages - pages_read);
        let start_page = exit
            .outside_id
            .and_then(|w| idx.page_of(w))
            .or_else(|| idx.nearest_page(exit.exit_point));
        let Some(start_page) = start_page else {
            fallback(carried, gap.distance, query_edge, &mut predictions, &mut out_exits);
            continue;
        };
        fetch_page(idx, start_page, &mut builder, &mut loaded, cache, &mut pages_read, &mut local_budget);

        // Locate the continuing object near the exit.
        let diag = cfg.cell_diagonal(region);
        let start_obj = exit.outside_id.filter(|w| builder.objects().contains_key(w)).or_else(|| {
            builder
                .objects()
                .iter()
                .map(|(&id, o)| {
                    (crate::geometry::point_segment_distance(exit.exit_point, &o.seg), id)
                })
                .filter(|(d, _)| *d <= diag * 2.0)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, id)| id)
        });
        let Some(start_obj) = start_obj else {
            fallback(carried, gap.distance, query_edge, &mut predictions, &mut out_exits);
            continue;
        };

        // Walk outward, fetching neighbor pages when the frontier dries up.
        loop {
            let (tips, best) = walk_gap(
                builder.graph(),
                builder.objects(),
                start_obj,
                exit.exit_point,
                gap.distance,
            );
            if !tips.is_empty() {
                let w = 1.0;
                for tip in tips {
                    let o = &builder.objects()[&tip];
                    let (point, dir) = reach_point(o, exit.exit_point, gap.distance);
                    predictions.push(PredictedLocation {
                        center: point + dir * (query_edge / 2.0),
                        direction: dir,
                        weight: w,
                        origin: point,
                    });
                    out_exits.push(CarriedExit {
                        edge: ExitEdge {
                            inside_id: tip,
                            outside_id: Some(tip),
                            exit_point: point,
                            direction: dir,
                        },
                        ancestor: carried.ancestor,
                    });
                }
                break;
            }
            // Need more pages around the farthest point reached.
            let Some((_, far_id)) = best else {
                fallback(carried, gap.distance, query_edge, &mut predictions, &mut out_exits);
                break;
            };
            if local_budget == 0 || pages_read >= budget_pages {
                stopped_fallback(
                    &builder,
                    far_id,
                    carried,
                    gap.distance,
                    query_edge,
                    &mut predictions,
                    &mut out_exits,
                );
                break;
            }
            let far_obj = &builder.objects()[&far_id];
            let far_point = far_end(far_obj, exit.exit_point);
            let host = idx.page_of(far_id).expect("loaded object has a page");
            let next_page = idx
                .neighbor_pages(host)
                .expect("valid page")
                .iter()
                .copied()
                .filter(|p| !loaded.contains(p))
                .map(|p| (idx.pages()[p].bbox.distance_to_point(far_point), p))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, p)| p);
            let Some(next_page) = next_page else {
                stopped_fallback(
                    &builder,
                    far_id,
                    carried,
                    gap.distance,
                    query_edge,
                    &mut predictions,
                    &mut out_exits,
                );
                break;
            };
            fetch_page(idx, next_page, &mut builder, &mut loaded, cache, &mut pages_read, &mut local_budget);
        }
    }

    let w = 1.0 / predictions.len().max(1) as f64;
    for p in &mut predictions {
        p.weight = w;
    }
    debug_assert!(pages_read <= budget_pages);
    GapTraversal { predictions, carried_exits: out_exits, pages_read }
}

fn fetch_page(
    idx: &PagedIndex,
    page: PageId,
    builder: &mut crate::graph::LatticeGraphBuilder,
    loaded: &mut BTreeSet<PageId>,
    cache: &mut PageCache,
    pages_read: &mut usize,
    local_budget: &mut usize,
) {
    if !loaded.insert(page) {
        return;
    }
    builder.add_objects(idx.page_objects(page).expect("valid page"));
    if !cache.resident(page) {
        cache.insert_prefetched(page);
        *pages_read += 1;
        *local_budget = local_budget.saturating_sub(1);
    }
}

/// Expands from `start` over objects outside the region, returning objects
/// whose far endpoint crosses the gap distance (tips) and the farthest
/// object reached.
fn walk_gap(
    g: &StructureGraph,
    objects: &ObjectStore,
    start: u64,
    origin: Vec3,
    gap_distance: f64,
) -> (Vec<u64>, Option<(f64, u64)>) {
    let mut visited: BTreeSet<u64> = [start].into();
    let mut stack = vec![start];
    let mut tips = Vec::new();
    let mut farthest: Option<(f64, u64)> = None;
    while let Some(v) = stack.pop() {
        let o = &objects[&v];
        let d = origin.distance(far_end(o, origin));
        if farthest.map_or(true, |(fd, fid)| d > fd || (d == fd && v < fid)) {
            farthest = Some((d, v));
        }
        if d >= gap_distance {
            tips.push(v);
            continue;
        }
        for w in g.neighbors(v) {
            if g.is_inside(w) {
                continue;
            }
            if visited.insert(w) {
                stack.push(w);
            }
        }
    }
    tips.sort_unstable();
    (tips, farthest)
}

fn far_end(o: &crate::dataset::SegmentObject, origin: Vec3) -> Vec3 {
    if o.seg.p0.distance(origin) >= o.seg.p1.distance(origin) {
        o.seg.p0
    } else {
        o.seg.p1
    }
}

/// Point on the tip object at the gap distance from the origin, with the
/// local direction oriented away from the origin.
fn reach_point(
    o: &crate::dataset::SegmentObject,
    origin: Vec3,
    gap_distance: f64,
) -> (Vec3, Vec3) {
    let far = far_end(o, origin);
    let near = if far == o.seg.p0 { o.seg.p1 } else { o.seg.p0 };
    let mut dir = (far - near).normalized();
    if dir.dot(far - origin) < 0.0 {
        dir = -dir;
    }
    // Interpolate between endpoints to land close to the gap radius.
    let d_near = near.distance(origin);
    let d_far = far.distance(origin);
    let point = if d_far > d_near && gap_distance > d_near {
        let t = ((gap_distance - d_near) / (d_far - d_near)).clamp(0.0, 1.0);
        near + (far - near) * t
    } else {
        far
    };
    (point, dir)
}

fn fallback(
    carried: &CarriedExit,
    gap_distance: f64,
    query_edge: f64,
    predictions: &mut Vec<PredictedLocation>,
    out_exits: &mut Vec<CarriedExit>,
) {
    let exit = &carried.edge;
    predictions.push(PredictedLocation {
        center: exit.exit_point + exit.direction * (gap_distance + query_edge / 2.0),
        direction: exit.direction,
        weight: 1.0,
        origin: exit.exit_point + exit.direction * gap_distance,
    });
    out_exits.push(carried.clone());
}

/// Linear extrapolation from the point where the traversal was stopped.
fn stopped_fallback(
    builder: &crate::graph::LatticeGraphBuilder,
    far_id: u64,
    carried: &CarriedExit,
    gap_distance: f64,
    query_edge: f64,
    predictions: &mut Vec<PredictedLocation>,
    out_exits: &mut Vec<CarriedExit>,
) {
    let exit = &carried.edge;
    let o = &builder.objects()[&far_id];
    let far = far_end(o, exit.exit_point);
    let near = if far == o.seg.p0 { o.seg.p1 } else { o.seg.p0 };
    let mut dir = (far - near).normalized();
    if dir.dot(far - exit.exit_point) < 0.0 {
        dir = -dir;
    }
    let remaining = (gap_distance - exit.exit_point.distance(far)).max(0.0);
    let point = far + dir * remaining;
    predictions.push(PredictedLocation {
        center: point + dir * (query_edge / 2.0),
        direction: dir,
        weight: 1.0,
        origin: point,
    });
    out_exits.push(CarriedExit {
        edge: ExitEdge {
            inside_id: far_id,
            outside_id: Some(far_id),
            exit_point: point,
            direction: dir,
        },
        ancestor: carried.ancestor,
    });
}
