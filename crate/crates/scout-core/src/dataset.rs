//! Synthetic branching fiber datasets, guided query sequences over them, and
//! the line-oriented segment file format.
//!
//! A dataset is a forest of "fibers": random-walk polylines of line segments
//! that occasionally bifurcate. Consecutive segments of a walk share an
//! endpoint exactly, so the ground-truth connectivity graph can be derived
//! from geometry alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::geometry::{aabb_intersects_segment, clamp_advance, polyline_length, Aabb, Segment, Vec3};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bounds too small to place {0} fiber roots")]
    BoundsTooSmall(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no fiber admits a guided path long enough for {queries} queries")]
    NoGuidingPath { queries: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One spatial primitive: a 3D line segment with endpoint radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentObject {
    pub id: u64,
    pub fiber_id: u64,
    pub seg: Segment,
    pub r0: f64,
    pub r1: f64,
}

/// Ground-truth adjacency: objects sharing a segment endpoint exactly.
pub type TruthGraph = BTreeMap<u64, BTreeSet<u64>>;

/// An immutable set of segment objects with bounds and ground-truth structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub objects: Vec<SegmentObject>,
    pub bounds: Aabb,
    pub truth: TruthGraph,
}

impl Dataset {
    /// Builds a dataset from raw objects, deriving the truth graph from
    /// exactly shared endpoints (ε_join = 0 by construction).
    pub fn from_objects(objects: Vec<SegmentObject>, bounds: Aabb) -> Dataset {
        let truth = derive_truth(&objects);
        let bounds = objects
            .iter()
            .map(|o| Aabb::new(
                Vec3::new(
                    o.seg.p0.x.min(o.seg.p1.x),
                    o.seg.p0.y.min(o.seg.p1.y),
                    o.seg.p0.z.min(o.seg.p1.z),
                ),
                Vec3::new(
                    o.seg.p0.x.max(o.seg.p1.x),
                    o.seg.p0.y.max(o.seg.p1.y),
                    o.seg.p0.z.max(o.seg.p1.z),
                ),
            ))
            .fold(bounds, |acc, b| acc.union(&b));
        Dataset { objects, bounds, truth }
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    /// Longest segment in the dataset; used as the page adjacency distance.
    pub fn max_segment_length(&self) -> f64 {
        self.objects.iter().map(|o| o.seg.length()).fold(0.0, f64::max)
    }

    /// Object ids grouped by fiber, fibers in ascending id order.
    pub fn fibers(&self) -> BTreeMap<u64, Vec<u64>> {
        let mut map: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for o in &self.objects {
            map.entry(o.fiber_id).or_default().push(o.id);
        }
        map
    }
}

fn endpoint_key(p: Vec3) -> (u64, u64, u64) {
    (p.x.to_bits(), p.y.to_bits(), p.z.to_bits())
}

fn derive_truth(objects: &[SegmentObject]) -> TruthGraph {
    let mut by_endpoint: HashMap<(u64, u64, u64), Vec<u64>> = HashMap::new();
    for o in objects {
        by_endpoint.entry(endpoint_key(o.seg.p0)).or_default().push(o.id);
        by_endpoint.entry(endpoint_key(o.seg.p1)).or_default().push(o.id);
    }
    let mut truth: TruthGraph = objects.iter().map(|o| (o.id, BTreeSet::new())).collect();
    for group in by_endpoint.values() {
        for (i, &a) in group.iter().enumerate() {
            for &b in &group[i + 1..] {
                if a != b {
                    truth.get_mut(&a).unwrap().insert(b);
                    truth.get_mut(&b).unwrap().insert(a);
                }
            }
        }
    }
    truth
}

/// Parameters for the synthetic fiber forest generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub fiber_count: usize,
    pub target_object_count: usize,
    /// Probability per backbone step of sprouting a side branch.
    pub bifurcation_prob: f64,
    pub step_length: f64,
    /// Maximum turn angle per step, radians.
    pub tortuosity: f64,
    pub bounds: Aabb,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            fiber_count: 100,
            target_object_count: 200_000,
            bifurcation_prob: 0.1,
            step_length: 3.0,
            tortuosity: 0.3,
            bounds: Aabb::new(Vec3::ZERO, Vec3::new(400.0, 400.0, 400.0)),
            seed: 0,
        }
    }
}

/// Grows one fiber: a backbone walk plus side branches sprouted along it.
struct FiberWalk<'a> {
    params: &'a GeneratorParams,
    rng: ChaCha8Rng,
    objects: Vec<SegmentObject>,
    next_id: u64,
    fiber_id: u64,
}

impl<'a> FiberWalk<'a> {
    fn random_unit(&mut self) -> Vec3 {
        loop {
            let v = Vec3::new(
                self.rng.gen_range(-1.0..1.0),
                self.rng.gen_range(-1.0..1.0),
                self.rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v * (1.0 / n);
            }
        }
    }

    /// Rotates `dir` by a random angle in [0, max_turn] around a random
    /// perpendicular axis.
    fn perturb(&mut self, dir: Vec3, max_turn: f64) -> Vec3 {
        let angle = self.rng.gen_range(0.0..=max_turn);
        let r = self.random_unit();
        let perp = r - dir * r.dot(dir);
        let n = perp.norm();
        if n < 1e-9 {
            return dir;
        }
        let perp = perp * (1.0 / n);
        (dir * angle.cos() + perp * angle.sin()).normalized()
    }

    /// One step from `pos` along `dir`, reflected back into bounds.
    fn step(&mut self, pos: Vec3, dir: Vec3) -> (Vec3, Vec3) {
        let bounds = &self.params.bounds;
        let step = self.params.step_length;
        let mut dir = dir;
        let mut next = pos + dir * step;
        for axis in 0..3 {
            let v = next.component(axis);
            if v < bounds.min.component(axis) || v > bounds.max.component(axis) {
                dir = dir.with_component(axis, -dir.component(axis));
            }
        }
        next = pos + dir * step;
        if !bounds.contains_point(next) {
            // Corner case: aim at the box center instead.
            dir = (bounds.center() - pos).normalized();
            next = bounds.clamp_point(pos + dir * step);
        }
        if next.distance(pos) < 1e-9 {
            next = bounds.clamp_point(pos + Vec3::new(step, 0.0, 0.0));
        }
        (next, dir)
    }

    fn emit(&mut self, from: Vec3, to: Vec3) {
        let r = 0.5;
        self.objects.push(SegmentObject {
            id: self.next_id,
            fiber_id: self.fiber_id,
            seg: Segment::new(from, to),
            r0: r,
            r1: r,
        });
        self.next_id += 1;
    }

    /// Walks `steps` objects from (pos, dir), recording sprout points when
    /// `sprout` is set. Returns sprout (position, direction) pairs.
    fn walk(&mut self, mut pos: Vec3, mut dir: Vec3, steps: usize, sprout: bool) -> Vec<(Vec3, Vec3)> {
        let mut sprouts = Vec::new();
        for _ in 0..steps {
            if sprout && self.rng.gen_bool(self.params.bifurcation_prob) {
                let child_dir = self.perturb(dir, 1.0);
                sprouts.push((pos, child_dir));
            }
            dir = self.perturb(dir, self.params.tortuosity);
            let (next, new_dir) = self.step(pos, dir);
            self.emit(pos, next);
            pos = next;
            dir = new_dir;
        }
        sprouts
    }

    /// Generates the full fiber within an exact object budget.
    fn grow(&mut self, budget: usize) {
        let bounds = self.params.bounds;
        let margin = self.params.step_length.min(bounds.extent().norm() * 0.05);
        let root = Vec3::new(
            self.rng.gen_range(bounds.min.x + margin..=bounds.max.x - margin),
            self.rng.gen_range(bounds.min.y + margin..=bounds.max.y - margin),
            self.rng.gen_range(bounds.min.z + margin..=bounds.max.z - margin),
        );
        let dir = self.random_unit();

        // The backbone takes half the budget (all of it when branching is
        // off) so guided sequences always have a long path to follow.
        let backbone = if self.params.bifurcation_prob == 0.0 {
            budget
        } else {
            budget.div_ceil(2)
        };
        let sprouts = self.walk(root, dir, backbone, self.params.bifurcation_prob > 0.0);

        let mut remaining = budget - backbone;
        if sprouts.is_empty() || remaining == 0 {
            if remaining > 0 {
                let last = self.objects.last().unwrap();
                let pos = last.seg.p1;
                let d = last.seg.direction().normalized();
                self.walk(pos, d, remaining, false);
            }
            return;
        }
        let per_branch = (remaining / sprouts.len()).max(1);
        for (pos, dir) in &sprouts {
            if remaining == 0 {
                break;
            }
            let n = per_branch.min(remaining);
            self.walk(*pos, *dir, n, false);
            remaining -= n;
        }
        if remaining > 0 {
            let last = self.objects.last().unwrap();
            let pos = last.seg.p1;
            let d = last.seg.direction().normalized();
            self.walk(pos, d, remaining, false);
        }
    }
}

/// Generates a deterministic branching fiber forest.
pub fn generate_fiber_forest(params: &GeneratorParams) -> Result<Dataset, DatasetError> {
    let bounds = params.bounds;
    let e = bounds.extent();
    let min_room = params.step_length.powi(3) * params.fiber_count as f64;
    if e.x <= 0.0 || e.y <= 0.0 || e.z <= 0.0 || bounds.volume() < min_room {
        return Err(DatasetError::BoundsTooSmall(params.fiber_count));
    }

    let mut objects = Vec::with_capacity(params.target_object_count);
    let base = params.target_object_count / params.fiber_count;
    let extra = params.target_object_count % params.fiber_count;
    let mut next_id = 0u64;
    for f in 0..params.fiber_count {
        let budget = base + usize::from(f < extra);
        if budget == 0 {
            continue;
        }
        let mut walk = FiberWalk {
            params,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(params.seed, f as u64)),
            objects: Vec::with_capacity(budget),
            next_id,
            fiber_id: f as u64,
        };
        walk.grow(budget);
        next_id = walk.next_id;
        objects.extend(walk.objects);
    }
    Ok(Dataset::from_objects(objects, bounds))
}

/// Parameters for guided query sequence generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub query_count: usize,
    /// Volume of each cube query, µm³.
    pub query_volume: f64,
    pub gap_distance: f64,
    pub window_ratio: f64,
    pub seed: u64,
}

/// An ordered sequence of cube queries guided by one fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySequence {
    pub queries: Vec<Aabb>,
    pub guiding_fiber: u64,
    pub gap: f64,
    pub params: SequenceParams,
}

impl QuerySequence {
    pub fn edge_length(&self) -> f64 {
        self.params.query_volume.cbrt()
    }
}

/// Places cube queries along a seeded random walk on the truth graph of one
/// fiber. Consecutive centers are separated by edge length + gap along the
/// walked path.
pub fn generate_query_sequence(
    ds: &Dataset,
    sp: &SequenceParams,
) -> Result<QuerySequence, DatasetError> {
    if ds.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let edge = sp.query_volume.cbrt();
    let spacing = edge + sp.gap_distance;
    let needed = (sp.query_count.max(1) - 1) as f64 * spacing + edge;

    let by_id: HashMap<u64, &SegmentObject> = ds.objects.iter().map(|o| (o.id, o)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed);
    let fibers = ds.fibers();
    let mut fiber_ids: Vec<u64> = fibers.keys().copied().collect();
    shuffle(&mut fiber_ids, &mut rng);

    for fiber in fiber_ids {
        let members = &fibers[&fiber];
        // Fibers with too little total wire cannot host the path.
        let wire: f64 = members.iter().map(|id| by_id[id].seg.length()).sum();
        if wire < needed {
            continue;
        }
        let mut leaves: Vec<u64> = members
            .iter()
            .copied()
            .filter(|id| ds.truth[id].len() <= 1)
            .collect();
        shuffle(&mut leaves, &mut rng);
        for start in leaves.into_iter().take(8) {
            if let Some(path) = find_path(ds, &by_id, start, needed, &mut rng) {
                let polyline = path_polyline(&path, &by_id);
                debug_assert!(polyline_length(&polyline) >= needed * 0.999);
                let mut queries = Vec::with_capacity(sp.query_count);
                for i in 0..sp.query_count {
                    let center = clamp_advance(&polyline, 0, edge / 2.0 + i as f64 * spacing)
                        .expect("path polyline has >= 2 points");
                    queries.push(Aabb::cube(center, edge));
                }
                debug_assert!(queries.iter().all(|q| {
                    members.iter().any(|id| aabb_intersects_segment(q, &by_id[id].seg))
                }));
                return Ok(QuerySequence {
                    queries,
                    guiding_fiber: fiber,
                    gap: sp.gap_distance,
                    params: sp.clone(),
                });
            }
        }
    }
    Err(DatasetError::NoGuidingPath { queries: sp.query_count })
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Depth-first search from `start` for a simple path of at least `needed`
/// arc length, visiting neighbors in seeded random order.
fn find_path(
    ds: &Dataset,
    by_id: &HashMap<u64, &SegmentObject>,
    start: u64,
    needed: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<u64>> {
    let mut path = vec![start];
    let mut length = by_id[&start].seg.length();
    let mut visited: BTreeSet<u64> = [start].into();
    // Per-path-position iterators over shuffled neighbors.
    let mut frames: Vec<Vec<u64>> = vec![shuffled_neighbors(ds, start, rng)];
    let mut expansions = 0usize;

    while let Some(frame) = frames.last_mut() {
        if length >= needed {
            return Some(path);
        }
        match frame.pop() {
            Some(next) if !visited.contains(&next) => {
                visited.insert(next);
                path.push(next);
                length += by_id[&next].seg.length();
                frames.push(shuffled_neighbors(ds, next, rng));
                expansions += 1;
                if expansions > ds.len() * 4 {
                    return None;
                }
            }
            Some(_) => {}
            None => {
                frames.pop();
                let dropped = path.pop().unwrap();
                length -= by_id[&dropped].seg.length();
            }
        }
    }
    None
}

fn shuffled_neighbors(ds: &Dataset, id: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut n: Vec<u64> = ds.truth[&id].iter().copied().collect();
    shuffle(&mut n, rng);
    n
}

/// Chains the path objects into a polyline by matching shared endpoints.
fn path_polyline(path: &[u64], by_id: &HashMap<u64, &SegmentObject>) -> Vec<Vec3> {
    if path.len() == 1 {
        let s = by_id[&path[0]].seg;
        return vec![s.p0, s.p1];
    }
    let mut points = Vec::with_capacity(path.len() + 1);
    let first = by_id[&path[0]].seg;
    let second = by_id[&path[1]].seg;
    // Orient the first segment so its shared endpoint comes last.
    let first_shared = endpoint_key(first.p1) == endpoint_key(second.p0)
        || endpoint_key(first.p1) == endpoint_key(second.p1);
    if first_shared {
        points.push(first.p0);
        points.push(first.p1);
    } else {
        points.push(first.p1);
        points.push(first.p0);
    }
    for id in &path[1..] {
        let seg = by_id[id].seg;
        let tail = *points.last().unwrap();
        if endpoint_key(seg.p0) == endpoint_key(tail) {
            points.push(seg.p1);
        } else {
            points.push(seg.p0);
        }
    }
    points
}

/// Writes the dataset as line-oriented text:
/// `id fiber_id x0 y0 z0 x1 y1 z1 r0 r1`.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# segment dataset: id fiber_id x0 y0 z0 x1 y1 z1 r0 r1")?;
    let b = ds.bounds;
    writeln!(
        out,
        "# bounds {} {} {} {} {} {}",
        b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
    )?;
    for o in &ds.objects {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {}",
            o.id, o.fiber_id, o.seg.p0.x, o.seg.p0.y, o.seg.p0.z, o.seg.p1.x, o.seg.p1.y,
            o.seg.p1.z, o.r0, o.r1
        )?;
    }
    Ok(())
}

/// Loads a dataset saved by [`save_dataset`]. `#` lines are comments; a
/// `# bounds` line restores the original bounds.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut objects = Vec::new();
    let mut bounds: Option<Aabb> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(vals) = rest.strip_prefix("bounds") {
                let nums = parse_floats(vals, 6, line_no)?;
                bounds = Some(Aabb::new(
                    Vec3::new(nums[0], nums[1], nums[2]),
                    Vec3::new(nums[3], nums[4], nums[5]),
                ));
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(DatasetError::Parse {
                line: line_no,
                msg: format!("expected 10 fields, found {}", fields.len()),
            });
        }
        let id: u64 = fields[0].parse().map_err(|_| DatasetError::Parse {
            line: line_no,
            msg: format!("invalid id '{}'", fields[0]),
        })?;
        let fiber_id: u64 = fields[1].parse().map_err(|_| DatasetError::Parse {
            line: line_no,
            msg: format!("invalid fiber id '{}'", fields[1]),
        })?;
        let mut nums = [0.0f64; 8];
        for (k, field) in fields[2..].iter().enumerate() {
            nums[k] = field.parse().map_err(|_| DatasetError::Parse {
                line: line_no,
                msg: format!("invalid number '{field}'"),
            })?;
        }
        objects.push(SegmentObject {
            id,
            fiber_id,
            seg: Segment::new(
                Vec3::new(nums[0], nums[1], nums[2]),
                Vec3::new(nums[3], nums[4], nums[5]),
            ),
            r0: nums[6],
            r1: nums[7],
        });
    }
    let bounds = bounds.unwrap_or_else(|| tight_bounds(&objects));
    Ok(Dataset::from_objects(objects, bounds))
}

fn tight_bounds(objects: &[SegmentObject]) -> Aabb {
    if objects.is_empty() {
        return Aabb::new(Vec3::ZERO, Vec3::ZERO);
    }
    let first = objects[0].seg.p0;
    let mut bb = Aabb::new(first, first);
    for o in objects {
        for p in [o.seg.p0, o.seg.p1] {
            bb = bb.union(&Aabb::new(p, p));
        }
    }
    bb
}

fn parse_floats(s: &str, n: usize, line: usize) -> Result<Vec<f64>, DatasetError> {
    let vals: Result<Vec<f64>, _> = s.split_whitespace().map(str::parse).collect();
    match vals {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(DatasetError::Parse { line, msg: format!("expected {n} numbers in '{s}'") }),
    }
}

/// Writes a query sequence as `cx cy cz edge_length` lines.
pub fn save_sequence(qs: &QuerySequence, path: &Path) -> Result<(), DatasetError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# query sequence: cx cy cz edge_length")?;
    for q in &qs.queries {
        let c = q.center();
        let e = q.extent().x;
        writeln!(out, "{} {} {} {}", c.x, c.y, c.z, e)?;
    }
    Ok(())
}

/// Loads the cube queries of a sequence file.
pub fn load_sequence(path: &Path) -> Result<Vec<Aabb>, DatasetError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut queries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let nums = parse_floats(trimmed, 4, i + 1)?;
        queries.push(Aabb::cube(Vec3::new(nums[0], nums[1], nums[2]), nums[3]));
    }
    Ok(queries)
}
