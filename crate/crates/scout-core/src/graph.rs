//! Approximate object-connectivity graphs built from query results.
//!
//! Objects are rasterized into a grid lattice anchored at the query region;
//! objects sharing a cell get an edge. A brute-force pairwise builder serves
//! as the oracle, and a sparse variant builds only the sub-graph reachable
//! from candidate entry locations by pulling pages from an ordered stream.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{BuildHasherDefault, Hasher};

use crate::dataset::SegmentObject;
use crate::geometry::{
    aabb_intersects_segment, clip_segment_params, min_segment_distance, point_segment_distance,
    Aabb, Vec3,
};
use crate::index::{PagedIndex, PageId};

/// Objects keyed by id, as delivered by fetched pages.
pub type ObjectStore = BTreeMap<u64, SegmentObject>;

/// Grid resolution over a query region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHashConfig {
    pub cell_count_per_axis: usize,
}

impl Default for GridHashConfig {
    fn default() -> Self {
        GridHashConfig { cell_count_per_axis: 40 }
    }
}

impl GridHashConfig {
    pub fn cell_size(&self, region: &Aabb) -> Vec3 {
        region.extent() * (1.0 / self.cell_count_per_axis as f64)
    }

    pub fn cell_diagonal(&self, region: &Aabb) -> f64 {
        self.cell_size(region).norm()
    }
}

/// Where a traversed structure crosses the query boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitEdge {
    /// Object inside the region whose structure exits there.
    pub inside_id: u64,
    /// Continuing object beyond the boundary, when present in fetched pages.
    pub outside_id: Option<u64>,
    pub exit_point: Vec3,
    /// Unit direction, oriented outward.
    pub direction: Vec3,
}

/// Adjacency over object ids with an inside/outside split relative to the
/// query region.
#[derive(Debug, Clone, Default)]
pub struct StructureGraph {
    adjacency: BTreeMap<u64, BTreeSet<u64>>,
    inside: BTreeSet<u64>,
    /// Rasterized cell visits plus pairwise comparisons.
    pub build_ops: u64,
}

impl StructureGraph {
    pub fn vertices(&self) -> impl Iterator<Item = u64> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.adjacency.contains_key(&id)
    }

    pub fn is_inside(&self, id: u64) -> bool {
        self.inside.contains(&id)
    }

    pub fn inside_ids(&self) -> &BTreeSet<u64> {
        &self.inside
    }

    pub fn neighbors(&self, id: u64) -> impl Iterator<Item = u64> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(|n| n.len()).sum::<usize>() / 2
    }

    pub fn edges(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(&a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
    }

    pub fn add_vertex(&mut self, id: u64, inside: bool) {
        self.adjacency.entry(id).or_default();
        if inside {
            self.inside.insert(id);
        }
    }

    pub fn add_edge(&mut self, a: u64, b: u64) {
        if a == b {
            return;
        }
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    /// Connected components containing at least one inside vertex, labeled
    /// by their minimum inside id. Outside vertices bridge connectivity (a
    /// structure dipping out of the region stays one component) but only
    /// inside members are listed.
    pub fn inside_components(&self) -> Vec<BTreeSet<u64>> {
        let mut seen: BTreeSet<u64> = BTreeSet::new();
        let mut components = Vec::new();
        for &start in &self.inside {
            if seen.contains(&start) {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut stack = vec![start];
            seen.insert(start);
            while let Some(v) = stack.pop() {
                if self.inside.contains(&v) {
                    comp.insert(v);
                }
                for w in self.neighbors(v) {
                    if seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
            components.push(comp);
        }
        components
    }

    /// All vertices reachable from `starts`; outside vertices act as
    /// connectivity bridges.
    pub fn reachable(&self, starts: &BTreeSet<u64>) -> BTreeSet<u64> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<u64> = starts
            .iter()
            .copied()
            .filter(|id| self.contains(*id))
            .collect();
        seen.extend(stack.iter().copied());
        while let Some(v) = stack.pop() {
            for w in self.neighbors(v) {
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        seen
    }
}

#[derive(Default)]
struct CellHasher(u64);

impl Hasher for CellHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100000001b3);
        }
    }
    fn write_u64(&mut self, v: u64) {
        self.0 = (self.0 ^ v).wrapping_mul(0x9E3779B97F4A7C15);
        self.0 ^= self.0 >> 29;
    }
}

type CellMap = HashMap<u64, Vec<u32>, BuildHasherDefault<CellHasher>>;

fn pack_cell(c: (i64, i64, i64)) -> u64 {
    const BIAS: i64 = 1 << 20;
    (((c.0 + BIAS) as u64) << 42) | (((c.1 + BIAS) as u64) << 21) | ((c.2 + BIAS) as u64)
}

/// Incremental grid-hash graph builder over a lattice anchored at a region.
pub struct LatticeGraphBuilder {
    origin: Vec3,
    cell: Vec3,
    window: Aabb,
    inside_region: Aabb,
    cells: CellMap,
    objects: ObjectStore,
    slots: Vec<u64>,
    graph: StructureGraph,
}

impl LatticeGraphBuilder {
    /// Lattice with `cfg` resolution over `region`; objects are rasterized
    /// within `window` and classified inside/outside against `region`.
    pub fn new(region: &Aabb, cfg: &GridHashConfig, window: Aabb) -> Self {
        LatticeGraphBuilder {
            origin: region.min,
            cell: cfg.cell_size(region),
            window,
            inside_region: *region,
            cells: CellMap::default(),
            objects: ObjectStore::new(),
            slots: Vec::new(),
            graph: StructureGraph::default(),
        }
    }

    fn cell_of(&self, p: Vec3) -> (i64, i64, i64) {
        (
            ((p.x - self.origin.x) / self.cell.x).floor() as i64,
            ((p.y - self.origin.y) / self.cell.y).floor() as i64,
            ((p.z - self.origin.z) / self.cell.z).floor() as i64,
        )
    }

    /// Adds objects, connecting every pair that shares a lattice cell.
    pub fn add_objects(&mut self, objects: &[SegmentObject]) {
        for o in objects {
            if self.objects.contains_key(&o.id) {
                continue;
            }
            let inside = aabb_intersects_segment(&self.inside_region, &o.seg);
            self.objects.insert(o.id, *o);
            self.graph.add_vertex(o.id, inside);
            let slot = self.slots.len() as u32;
            self.slots.push(o.id);

            let Some((t0, t1)) = clip_segment_params(&self.window, &o.seg) else {
                continue;
            };
            let dir = o.seg.direction();
            // Exact endpoints when unclipped: objects sharing an endpoint
            // must land in the same cell.
            let start = if t0 == 0.0 { o.seg.p0 } else { o.seg.point_at(t0) };
            let end = if t1 == 1.0 { o.seg.p1 } else { o.seg.point_at(t1) };
            let mut c = self.cell_of(start);
            let target = self.cell_of(end);

            let mut t_max = [f64::INFINITY; 3];
            let mut t_delta = [f64::INFINITY; 3];
            let mut step = [0i64; 3];
            for axis in 0..3 {
                let d = dir.component(axis);
                if d != 0.0 {
                    let cw = self.cell.component(axis);
                    step[axis] = if d > 0.0 { 1 } else { -1 };
                    t_delta[axis] = (cw / d).abs();
                    let cell_idx = match axis {
                        0 => c.0,
                        1 => c.1,
                        _ => c.2,
                    };
                    let boundary = self.origin.component(axis)
                        + (cell_idx + i64::from(d > 0.0)) as f64 * cw;
                    t_max[axis] = (boundary - start.component(axis)) / d;
                }
            }

            let span = (target.0 - c.0).abs() + (target.1 - c.1).abs() + (target.2 - c.2).abs();
            let max_steps = span as usize + 4;
            for _ in 0..=max_steps {
                self.visit_cell(c, slot);
                if c == target {
                    break;
                }
                let axis = (0..3).min_by(|&a, &b| t_max[a].total_cmp(&t_max[b])).unwrap();
                t_max[axis] += t_delta[axis];
                match axis {
                    0 => c.0 += step[0],
                    1 => c.1 += step[1],
                    _ => c.2 += step[2],
                }
            }
        }
    }

    fn visit_cell(&mut self, c: (i64, i64, i64), slot: u32) {
        self.graph.build_ops += 1;
        let occupants = self.cells.entry(pack_cell(c)).or_default();
        let id = self.slots[slot as usize];
        for &other in occupants.iter() {
            self.graph.build_ops += 1;
            let other_id = self.slots[other as usize];
            self.graph.add_edge(id, other_id);
        }
        occupants.push(slot);
    }

    pub fn objects(&self) -> &ObjectStore {
        &self.objects
    }

    pub fn graph(&self) -> &StructureGraph {
        &self.graph
    }

    pub fn finish(self) -> (StructureGraph, ObjectStore) {
        (self.graph, self.objects)
    }
}

/// Builds the per-query graph: objects rasterized into the region's grid,
/// pairs sharing a cell connected. Objects beyond the region stay as outside
/// vertices so exits can be labeled.
pub fn build_graph_grid_hash(
    objects: &[SegmentObject],
    region: &Aabb,
    cfg: &GridHashConfig,
) -> (StructureGraph, ObjectStore) {
    let margin = cfg.cell_size(region).norm() * 2.0;
    let mut builder = LatticeGraphBuilder::new(region, cfg, region.inflate(margin));
    builder.add_objects(objects);
    builder.finish()
}

/// O(n²) oracle: edge iff the minimum segment distance is at most `tau`.
pub fn build_graph_brute_force(objects: &[SegmentObject], tau: f64) -> StructureGraph {
    let mut g = StructureGraph::default();
    for o in objects {
        g.add_vertex(o.id, true);
    }
    for (i, a) in objects.iter().enumerate() {
        for b in &objects[i + 1..] {
            g.build_ops += 1;
            if min_segment_distance(&a.seg, &b.seg) <= tau {
                g.add_edge(a.id, b.id);
            }
        }
    }
    g
}

/// Depth-first traversal from `start_ids` (all inside vertices when empty)
/// reporting boundary crossings and edges to outside objects. Returns the
/// exits and the traversal operation count.
pub fn exit_edges(
    g: &StructureGraph,
    objects: &ObjectStore,
    region: &Aabb,
    start_ids: &BTreeSet<u64>,
) -> (Vec<ExitEdge>, u64) {
    exit_edges_smoothed(g, objects, region, start_ids, 0.0)
}

/// [`exit_edges`] with directions averaged over connected objects within
/// `tangent_radius` of each exit point. Segments much shorter than a grid
/// cell carry too little direction on their own.
pub fn exit_edges_smoothed(
    g: &StructureGraph,
    objects: &ObjectStore,
    region: &Aabb,
    start_ids: &BTreeSet<u64>,
    tangent_radius: f64,
) -> (Vec<ExitEdge>, u64) {
    let mut ops = 0u64;
    let starts: BTreeSet<u64> = if start_ids.is_empty() {
        g.inside_ids().clone()
    } else {
        start_ids.iter().copied().filter(|id| g.is_inside(*id)).collect()
    };

    let mut visited: BTreeSet<u64> = BTreeSet::new();
    let mut stack: Vec<u64> = starts.iter().rev().copied().collect();
    visited.extend(starts.iter().copied());
    let mut exits = Vec::new();
    // Objects whose own geometry crosses the boundary; their outside
    // neighbors are already represented by the crossing.
    let mut crossing: BTreeSet<u64> = BTreeSet::new();

    // Outside vertices are traversed as bridges but only inside vertices
    // produce exits.
    let mut order = Vec::new();
    while let Some(v) = stack.pop() {
        ops += 1;
        if g.is_inside(v) {
            order.push(v);
        }
        for w in g.neighbors(v) {
            ops += 1;
            if visited.insert(w) {
                stack.push(w);
            }
        }
    }

    for &v in &order {
        let seg = objects[&v].seg;
        if let Some((t0, t1)) = clip_segment_params(region, &seg) {
            let dir = seg.direction().normalized();
            if t0 > 0.0 {
                crossing.insert(v);
                exits.push(ExitEdge {
                    inside_id: v,
                    outside_id: nearest_outside_neighbor(g, objects, v, seg.point_at(t0), -dir),
                    exit_point: seg.point_at(t0),
                    direction: -dir,
                });
            }
            if t1 < 1.0 {
                crossing.insert(v);
                exits.push(ExitEdge {
                    inside_id: v,
                    outside_id: nearest_outside_neighbor(g, objects, v, seg.point_at(t1), dir),
                    exit_point: seg.point_at(t1),
                    direction: dir,
                });
            }
        }
    }

    // Edges into outside objects from fully-interior vertices: the structure
    // leaves through a page whose crossing object was not part of the graph.
    for &v in &order {
        if crossing.contains(&v) {
            continue;
        }
        for w in g.neighbors(v) {
            if g.is_inside(w) {
                continue;
            }
            // Skip when the outside object also touches a crossing vertex.
            let represented = g.neighbors(w).any(|u| crossing.contains(&u));
            if represented {
                continue;
            }
            let seg = objects[&v].seg;
            let target = objects[&w].seg.midpoint();
            let d0 = seg.p0.distance(target);
            let d1 = seg.p1.distance(target);
            let (near, far) = if d0 <= d1 { (seg.p1, seg.p0) } else { (seg.p0, seg.p1) };
            let exit_point = region.clamp_point(far);
            let mut direction = (far - near).normalized();
            if direction.dot(target - far) < 0.0 {
                direction = -direction;
            }
            exits.push(ExitEdge {
                inside_id: v,
                outside_id: Some(w),
                exit_point,
                direction,
            });
        }
    }

    if tangent_radius > 0.0 {
        for e in &mut exits {
            e.direction = smoothed_direction(g, objects, e, tangent_radius);
        }
    }

    exits.sort_by(|a, b| {
        a.inside_id
            .cmp(&b.inside_id)
            .then(a.exit_point.x.total_cmp(&b.exit_point.x))
            .then(a.exit_point.y.total_cmp(&b.exit_point.y))
            .then(a.exit_point.z.total_cmp(&b.exit_point.z))
    });
    (exits, ops)
}

/// Mean of the connected segment directions within `radius` of the exit
/// point, each oriented along the raw exit direction.
fn smoothed_direction(
    g: &StructureGraph,
    objects: &ObjectStore,
    exit: &ExitEdge,
    radius: f64,
) -> Vec3 {
    let mut sum = Vec3::ZERO;
    let mut visited: BTreeSet<u64> = [exit.inside_id].into();
    let mut stack = vec![exit.inside_id];
    while let Some(v) = stack.pop() {
        let seg = objects[&v].seg;
        if point_segment_distance(exit.exit_point, &seg) > radius {
            continue;
        }
        let d = seg.direction();
        sum = sum + if d.dot(exit.direction) >= 0.0 { d } else { -d };
        for w in g.neighbors(v) {
            if visited.insert(w) {
                stack.push(w);
            }
        }
    }
    if sum.norm() > 1e-12 {
        sum.normalized()
    } else {
        exit.direction
    }
}

/// The outside neighbor most plausibly continuing the structure: nearest to
/// the exit point and lying ahead of it along the exit direction.
fn nearest_outside_neighbor(
    g: &StructureGraph,
    objects: &ObjectStore,
    v: u64,
    exit_point: Vec3,
    direction: Vec3,
) -> Option<u64> {
    g.neighbors(v)
        .filter(|w| !g.is_inside(*w))
        .filter(|w| (objects[w].seg.midpoint() - exit_point).dot(direction) > 0.0)
        .map(|w| (point_segment_distance(exit_point, &objects[&w].seg), w))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, w)| w)
}

/// Where an entry edge from the previous query meets the current region:
/// the exit point itself when already inside, else the first ray crossing.
pub fn entry_point(edge: &ExitEdge, region: &Aabb) -> Option<Vec3> {
    if region.contains_point(edge.exit_point) {
        return Some(edge.exit_point);
    }
    // Clip a long ray along the edge direction against the region.
    let reach = region.extent().norm() + region.distance_to_point(edge.exit_point) * 2.0 + 1.0;
    let probe = crate::geometry::Segment::new(
        edge.exit_point,
        edge.exit_point + edge.direction * reach,
    );
    clip_segment_params(region, &probe).map(|(t0, _)| probe.point_at(t0))
}

/// Inside objects matching the entry edges: by continuing-object identity
/// first, else by proximity of the projected entry point within `tol`.
pub fn match_entry_objects(
    g: &StructureGraph,
    objects: &ObjectStore,
    entries: &[ExitEdge],
    region: &Aabb,
    tol: f64,
) -> BTreeSet<u64> {
    let mut matched = BTreeSet::new();
    for e in entries {
        if let Some(w) = e.outside_id {
            if g.is_inside(w) {
                matched.insert(w);
                continue;
            }
        }
        if let Some(p) = entry_point(e, region) {
            for (&id, o) in objects {
                if g.is_inside(id) && point_segment_distance(p, &o.seg) <= tol {
                    matched.insert(id);
                }
            }
        }
    }
    matched
}

/// Outcome of interleaved sparse graph construction.
#[derive(Debug)]
pub struct SparseBuild {
    pub graph: StructureGraph,
    pub objects: ObjectStore,
    /// Pages pulled from the stream, in pull order.
    pub touched_pages: Vec<PageId>,
    /// False when the stream ended before the traversal closed.
    pub complete: bool,
}

/// Builds the sub-graph reachable from the entry edges by pulling pages from
/// an ordered page stream, stopping once no unloaded result page can extend
/// the reachable component.
pub fn build_sparse_graph(
    idx: &PagedIndex,
    stream: &[PageId],
    entry_edges: &[ExitEdge],
    region: &Aabb,
    cfg: &GridHashConfig,
) -> SparseBuild {
    let diag = cfg.cell_diagonal(region);
    let margin = diag * 2.0;
    let mut builder = LatticeGraphBuilder::new(region, cfg, region.inflate(margin));
    let mut touched = Vec::new();
    let mut complete = false;

    for (pulled, &page) in stream.iter().enumerate() {
        builder.add_objects(idx.page_objects(page).expect("stream page exists"));
        touched.push(page);

        if entry_edges.is_empty() {
            continue;
        }
        let starts =
            match_entry_objects(builder.graph(), builder.objects(), entry_edges, region, diag);
        if starts.is_empty() {
            continue;
        }
        let reachable = builder.graph().reachable(&starts);
        if reachable.is_empty() {
            continue;
        }
        // The reachable set is closed once every unloaded result page is
        // farther than a cell diagonal from every reachable object: no
        // shared cell can connect them. Distance is bounded below by the
        // page box to segment midpoint distance minus half the segment
        // length.
        let closed = stream[pulled + 1..].iter().all(|&u| {
            let ub = &idx.pages()[u].bbox;
            reachable.iter().all(|id| {
                let seg = builder.objects()[id].seg;
                ub.distance_to_point(seg.midpoint()) - seg.length() / 2.0 > diag
            })
        });
        if closed {
            complete = true;
            break;
        }
    }
    if touched.len() == stream.len() {
        complete = true;
    }

    let (graph, objects) = builder.finish();
    SparseBuild { graph, objects, touched_pages: touched, complete }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_fiber_forest, Dataset, GeneratorParams};
    use crate::index::build_index;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obj(id: u64, p0: (f64, f64, f64), p1: (f64, f64, f64)) -> SegmentObject {
        SegmentObject {
            id,
            fiber_id: 0,
            seg: crate::geometry::Segment::new(
                Vec3::new(p0.0, p0.1, p0.2),
                Vec3::new(p1.0, p1.1, p1.2),
            ),
            r0: 0.5,
            r1: 0.5,
        }
    }

    fn unit_region() -> Aabb {
        Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn endpoint_sharing_segments_get_an_edge() {
        let objects = vec![
            obj(0, (0.1, 0.5, 0.5), (0.5, 0.5, 0.5)),
            obj(1, (0.5, 0.5, 0.5), (0.9, 0.5, 0.5)),
        ];
        let (g, _) = build_graph_grid_hash(&objects, &unit_region(), &GridHashConfig::default());
        assert!(g.neighbors(0).any(|w| w == 1));
    }

    #[test]
    fn distant_objects_get_no_edge() {
        let cfg = GridHashConfig { cell_count_per_axis: 10 };
        let objects = vec![
            obj(0, (0.05, 0.05, 0.05), (0.15, 0.05, 0.05)),
            obj(1, (0.85, 0.85, 0.85), (0.95, 0.85, 0.85)),
        ];
        let (g, _) = build_graph_grid_hash(&objects, &unit_region(), &cfg);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn brute_force_on_chain_is_a_path() {
        let objects: Vec<SegmentObject> = (0..5)
            .map(|i| obj(i, (i as f64 * 0.1, 0.0, 0.0), ((i + 1) as f64 * 0.1, 0.0, 0.0)))
            .collect();
        let g = build_graph_brute_force(&objects, 0.0);
        assert_eq!(g.edge_count(), 4);
        let g_all = build_graph_brute_force(&objects, f64::INFINITY);
        assert_eq!(g_all.edge_count(), 10);
        let single = build_graph_brute_force(&objects[..1], 1.0);
        assert_eq!(single.edge_count(), 0);
    }

    #[test]
    fn grid_edges_subset_of_brute_force_at_cell_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut objects = Vec::new();
        for id in 0..300 {
            let p = Vec3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let d = Vec3::new(
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
            );
            objects.push(obj(id, (p.x, p.y, p.z), (p.x + d.x, p.y + d.y, p.z + d.z)));
        }
        let cfg = GridHashConfig { cell_count_per_axis: 12 };
        let region = unit_region();
        let diag = cfg.cell_diagonal(&region);
        let (g, store) = build_graph_grid_hash(&objects, &region, &cfg);
        let oracle = build_graph_brute_force(&objects, diag);
        for (a, b) in g.edges() {
            let d = min_segment_distance(&store[&a].seg, &store[&b].seg);
            assert!(d <= diag * (1.0 + 1e-9), "edge ({a},{b}) dist {d} > diag {diag}");
            assert!(oracle.neighbors(a).any(|w| w == b), "edge ({a},{b}) missing from oracle");
        }
    }

    #[test]
    fn interior_only_graph_has_no_exits() {
        let objects = vec![
            obj(0, (0.3, 0.5, 0.5), (0.5, 0.5, 0.5)),
            obj(1, (0.5, 0.5, 0.5), (0.7, 0.5, 0.5)),
        ];
        let (g, store) = build_graph_grid_hash(&objects, &unit_region(), &GridHashConfig::default());
        let (exits, _) = exit_edges(&g, &store, &unit_region(), &BTreeSet::new());
        assert!(exits.is_empty());
    }

    /// A straight chain through the unit cube along x.
    fn chain_through_cube() -> Vec<SegmentObject> {
        let mut objects = Vec::new();
        let mut x = -0.45;
        let mut id = 0;
        while x < 1.4 {
            objects.push(obj(id, (x, 0.5, 0.5), (x + 0.3, 0.5, 0.5)));
            id += 1;
            x += 0.3;
        }
        objects
    }

    #[test]
    fn straight_fiber_has_two_exits() {
        let objects = chain_through_cube();
        let inside: Vec<SegmentObject> = objects
            .iter()
            .filter(|o| aabb_intersects_segment(&unit_region(), &o.seg))
            .copied()
            .collect();
        let (g, store) = build_graph_grid_hash(&inside, &unit_region(), &GridHashConfig::default());
        let (exits, _) = exit_edges(&g, &store, &unit_region(), &BTreeSet::new());
        assert_eq!(exits.len(), 2, "exits: {exits:?}");
        let mut dirs: Vec<f64> = exits.iter().map(|e| e.direction.x).collect();
        dirs.sort_by(f64::total_cmp);
        assert!(dirs[0] < -0.99 && dirs[1] > 0.99);
        for e in &exits {
            assert!(
                e.exit_point.x.abs() < 1e-9 || (e.exit_point.x - 1.0).abs() < 1e-9,
                "exit point {:?} not on boundary",
                e.exit_point
            );
        }
    }

    #[test]
    fn bifurcating_fiber_has_exit_per_branch() {
        // Trunk enters at x=0, splits at (0.5,0.5,0.5); children leave
        // through the +x face at different y.
        let mut objects = vec![
            obj(0, (-0.2, 0.5, 0.5), (0.2, 0.5, 0.5)),
            obj(1, (0.2, 0.5, 0.5), (0.5, 0.5, 0.5)),
            obj(2, (0.5, 0.5, 0.5), (0.8, 0.7, 0.5)),
            obj(3, (0.8, 0.7, 0.5), (1.2, 0.9, 0.5)),
            obj(4, (0.5, 0.5, 0.5), (0.8, 0.3, 0.5)),
            obj(5, (0.8, 0.3, 0.5), (1.2, 0.1, 0.5)),
        ];
        objects.retain(|o| aabb_intersects_segment(&unit_region(), &o.seg));
        let (g, store) = build_graph_grid_hash(&objects, &unit_region(), &GridHashConfig::default());
        let (exits, _) = exit_edges(&g, &store, &unit_region(), &BTreeSet::new());
        // Entering exit at x=0 plus one exit per child branch.
        let forward: Vec<&ExitEdge> = exits.iter().filter(|e| e.direction.x > 0.0).collect();
        assert_eq!(forward.len(), 2, "exits: {exits:?}");
        assert!(forward.iter().any(|e| e.direction.y > 0.0));
        assert!(forward.iter().any(|e| e.direction.y < 0.0));
    }

    #[test]
    fn traversal_restricted_to_start_component() {
        let objects = vec![
            obj(0, (-0.2, 0.5, 0.5), (0.5, 0.5, 0.5)),
            obj(1, (0.5, 0.5, 0.5), (1.2, 0.5, 0.5)),
            obj(10, (-0.2, 0.2, 0.2), (0.5, 0.2, 0.2)),
            obj(11, (0.5, 0.2, 0.2), (1.2, 0.2, 0.2)),
        ];
        let (g, store) = build_graph_grid_hash(&objects, &unit_region(), &GridHashConfig::default());
        let starts: BTreeSet<u64> = [0u64].into();
        let (exits, _) = exit_edges(&g, &store, &unit_region(), &starts);
        assert!(exits.iter().all(|e| e.inside_id <= 1), "leaked into other fiber: {exits:?}");
        assert_eq!(exits.len(), 2);
    }

    fn sparse_test_dataset(seed: u64) -> Dataset {
        generate_fiber_forest(&GeneratorParams {
            fiber_count: 6,
            target_object_count: 4000,
            bifurcation_prob: 0.08,
            step_length: 3.0,
            tortuosity: 0.25,
            bounds: Aabb::new(Vec3::ZERO, Vec3::new(140.0, 140.0, 140.0)),
            seed,
        })
        .unwrap()
    }

    #[test]
    fn sparse_graph_matches_full_reachable_exits() {
        let ds = sparse_test_dataset(3);
        let idx = build_index(&ds, 87);
        let cfg = GridHashConfig { cell_count_per_axis: 24 };
        let mut rng = ChaCha8Rng::seed_from_u64(17);

        let mut checked = 0;
        for _ in 0..60 {
            let o = &ds.objects[rng.gen_range(0..ds.len())];
            let region = Aabb::cube(o.seg.midpoint(), 24.0);
            let result = idx.range_query(&region);
            if result.pages.len() < 2 {
                continue;
            }
            // Synthesize an entry edge at a boundary crossing of the region.
            let mut all_objects = Vec::new();
            for &p in &result.pages {
                all_objects.extend_from_slice(idx.page_objects(p).unwrap());
            }
            let (full_g, full_store) = build_graph_grid_hash(&all_objects, &region, &cfg);
            let (all_exits, _) = exit_edges(&full_g, &full_store, &region, &BTreeSet::new());
            let Some(entry) = all_exits.first() else { continue };
            let entry = ExitEdge {
                inside_id: entry.inside_id,
                outside_id: Some(entry.inside_id),
                exit_point: entry.exit_point,
                direction: -entry.direction,
            };
            let entries = vec![entry];

            let starts = match_entry_objects(&full_g, &full_store, &entries, &region, cfg.cell_diagonal(&region));
            let (full_exits, _) = exit_edges(&full_g, &full_store, &region, &starts);

            let stream =
                idx.ordered_range_query(&region, &[entries[0].exit_point]);
            let sparse = build_sparse_graph(&idx, &stream, &entries, &region, &cfg);
            assert!(sparse.complete);
            for p in &sparse.touched_pages {
                assert!(result.pages.contains(p));
            }
            for v in sparse.graph.vertices() {
                assert!(full_g.contains(v), "sparse vertex {v} not in full graph");
            }
            let sparse_starts = match_entry_objects(
                &sparse.graph,
                &sparse.objects,
                &entries,
                &region,
                cfg.cell_diagonal(&region),
            );
            let (sparse_exits, _) = exit_edges(&sparse.graph, &sparse.objects, &region, &sparse_starts);
            assert_eq!(sparse_exits, full_exits);
            checked += 1;
        }
        assert!(checked >= 20, "only {checked} usable query regions");
    }

    #[test]
    fn sparse_touches_fewer_pages_than_result_on_multi_structure_regions() {
        let ds = sparse_test_dataset(4);
        let idx = build_index(&ds, 87);
        let cfg = GridHashConfig { cell_count_per_axis: 24 };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut any_sparser = false;
        for _ in 0..40 {
            let o = &ds.objects[rng.gen_range(0..ds.len())];
            let region = Aabb::cube(o.seg.midpoint(), 30.0);
            let result = idx.range_query(&region);
            if result.pages.len() < 4 {
                continue;
            }
            let mut all_objects = Vec::new();
            for &p in &result.pages {
                all_objects.extend_from_slice(idx.page_objects(p).unwrap());
            }
            let (full_g, full_store) = build_graph_grid_hash(&all_objects, &region, &cfg);
            let (all_exits, _) = exit_edges(&full_g, &full_store, &region, &BTreeSet::new());
            let Some(entry) = all_exits.first() else { continue };
            let entries = vec![ExitEdge {
                inside_id: entry.inside_id,
                outside_id: Some(entry.inside_id),
                exit_point: entry.exit_point,
                direction: -entry.direction,
            }];
            let stream = idx.ordered_range_query(&region, &[entries[0].exit_point]);
            let sparse = build_sparse_graph(&idx, &stream, &entries, &region, &cfg);
            if sparse.touched_pages.len() < result.pages.len() {
                any_sparser = true;
            }
        }
        assert!(any_sparser, "sparse build never stopped early");
    }
}
