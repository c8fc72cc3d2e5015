//! Paged spatial index: sort-tile-recursive packing into fixed-capacity
//! pages, unordered range queries, and neighborhood-ordered retrieval.
//!
//! Pages are the unit of simulated I/O. A page is in a query result when any
//! member object intersects the region; whole pages are always "read".

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::dataset::{Dataset, SegmentObject};
use crate::geometry::{aabb_intersects_segment, Aabb, Vec3};

pub type PageId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("unknown page id {0}")]
    UnknownPage(PageId),
}

/// A fixed-capacity group of objects with a tight bounding box.
#[derive(Debug, Clone)]
pub struct Page {
    pub page_id: PageId,
    pub object_ids: Vec<u64>,
    pub bbox: Aabb,
}

/// Immutable paged index over a dataset.
#[derive(Debug, Clone)]
pub struct PagedIndex {
    pages: Vec<Page>,
    /// Objects in page order; page `i` owns `objects[i*cap .. i*cap+len(i)]`.
    objects: Vec<SegmentObject>,
    page_capacity: usize,
    object_page: BTreeMap<u64, PageId>,
    adjacency: Vec<BTreeSet<PageId>>,
    adjacency_distance: f64,
}

/// Result of a range query: pages holding at least one intersecting object,
/// plus the intersecting object ids themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub pages: BTreeSet<PageId>,
    pub object_ids: BTreeSet<u64>,
}

/// Builds the index by sorting object midpoints into STR order and chunking
/// into full pages (100% fill; only the last page may be partial).
pub fn build_index(ds: &Dataset, page_capacity: usize) -> PagedIndex {
    assert!(page_capacity >= 1, "page_capacity must be >= 1");
    let mut objects = ds.objects.clone();
    let n = objects.len();
    if n == 0 {
        return PagedIndex {
            pages: Vec::new(),
            objects,
            page_capacity,
            object_page: BTreeMap::new(),
            adjacency: Vec::new(),
            adjacency_distance: 0.0,
        };
    }

    let page_count = n.div_ceil(page_capacity);
    let slices = (page_count as f64).cbrt().ceil() as usize;
    let slices = slices.max(1);

    sort_by_axis(&mut objects, 0);
    let slab = n.div_ceil(slices);
    for chunk in objects.chunks_mut(slab) {
        sort_by_axis(chunk, 1);
        let run = chunk.len().div_ceil(slices);
        for sub in chunk.chunks_mut(run.max(1)) {
            sort_by_axis(sub, 2);
        }
    }

    let mut pages = Vec::with_capacity(page_count);
    let mut object_page = BTreeMap::new();
    for (page_id, members) in objects.chunks(page_capacity).enumerate() {
        let mut bbox = point_box(members[0].seg.p0);
        let mut ids = Vec::with_capacity(members.len());
        for o in members {
            bbox = bbox.union(&point_box(o.seg.p0)).union(&point_box(o.seg.p1));
            ids.push(o.id);
            object_page.insert(o.id, page_id);
        }
        pages.push(Page { page_id, object_ids: ids, bbox });
    }

    // Adjacency distance: the longest segment bridges any bbox gap left by
    // midpoint-based packing, so ordered traversal of a contiguous fiber
    // never dead-ends between pages.
    let adjacency_distance = ds.max_segment_length();
    let mut adjacency = vec![BTreeSet::new(); pages.len()];
    for i in 0..pages.len() {
        for j in i + 1..pages.len() {
            if pages[i].bbox.gap_distance(&pages[j].bbox) <= adjacency_distance {
                adjacency[i].insert(j);
                adjacency[j].insert(i);
            }
        }
    }

    PagedIndex { pages, objects, page_capacity, object_page, adjacency, adjacency_distance }
}

fn sort_by_axis(objects: &mut [SegmentObject], axis: usize) {
    objects.sort_by(|a, b| {
        a.seg
            .midpoint()
            .component(axis)
            .total_cmp(&b.seg.midpoint().component(axis))
            .then(a.id.cmp(&b.id))
    });
}

fn point_box(p: Vec3) -> Aabb {
    Aabb::new(p, p)
}

impl PagedIndex {
    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn pages(&self) -> &[Page] {
        &self.pages
    }

    pub fn page_capacity(&self) -> usize {
        self.page_capacity
    }

    pub fn adjacency_distance(&self) -> f64 {
        self.adjacency_distance
    }

    /// The page holding an object.
    pub fn page_of(&self, object_id: u64) -> Option<PageId> {
        self.object_page.get(&object_id).copied()
    }

    /// Objects stored in one page.
    pub fn page_objects(&self, page_id: PageId) -> Result<&[SegmentObject], IndexError> {
        if page_id >= self.pages.len() {
            return Err(IndexError::UnknownPage(page_id));
        }
        let start = page_id * self.page_capacity;
        let end = (start + self.page_capacity).min(self.objects.len());
        Ok(&self.objects[start..end])
    }

    /// Pages whose bounding boxes are within the adjacency distance.
    pub fn neighbor_pages(&self, page_id: PageId) -> Result<&BTreeSet<PageId>, IndexError> {
        self.adjacency.get(page_id).ok_or(IndexError::UnknownPage(page_id))
    }

    /// Unordered range query: the set of pages with at least one member
    /// intersecting the region, and the intersecting objects.
    pub fn range_query(&self, region: &Aabb) -> QueryResult {
        let mut pages = BTreeSet::new();
        let mut object_ids = BTreeSet::new();
        for page in &self.pages {
            if !page.bbox.intersects(region) {
                continue;
            }
            let members = self.page_objects(page.page_id).unwrap();
            let mut hit = false;
            for o in members {
                if aabb_intersects_segment(region, &o.seg) {
                    object_ids.insert(o.id);
                    hit = true;
                }
            }
            if hit {
                pages.insert(page.page_id);
            }
        }
        QueryResult { pages, object_ids }
    }

    /// Neighborhood-ordered retrieval: yields the same page set as
    /// [`range_query`], pages hosting seed locations first, every later page
    /// adjacent to an already-yielded one whenever possible.
    pub fn ordered_range_query(&self, region: &Aabb, seeds: &[Vec3]) -> Vec<PageId> {
        let result = self.range_query(region);
        self.order_pages(&result.pages, seeds)
    }

    /// Orders an arbitrary page set by adjacency-connected breadth-first
    /// traversal from the pages nearest the seed points.
    pub fn order_pages(&self, page_set: &BTreeSet<PageId>, seeds: &[Vec3]) -> Vec<PageId> {
        let mut remaining: BTreeSet<PageId> = page_set.clone();
        let mut out = Vec::with_capacity(page_set.len());
        let mut queue: VecDeque<PageId> = VecDeque::new();

        for seed in seeds {
            if let Some(p) = self.nearest_page_in(&remaining, *seed) {
                if remaining.remove(&p) {
                    queue.push_back(p);
                }
            }
        }

        loop {
            while let Some(p) = queue.pop_front() {
                out.push(p);
                for &q in &self.adjacency[p] {
                    if remaining.remove(&q) {
                        queue.push_back(q);
                    }
                }
            }
            match remaining.iter().next().copied() {
                Some(restart) => {
                    remaining.remove(&restart);
                    queue.push_back(restart);
                }
                None => break,
            }
        }
        out
    }

    /// The page of `set` whose bbox is closest to the point.
    pub fn nearest_page_in(&self, set: &BTreeSet<PageId>, point: Vec3) -> Option<PageId> {
        set.iter()
            .copied()
            .map(|p| (self.pages[p].bbox.distance_to_point(point), p))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, p)| p)
    }

    /// The page nearest to a point among all pages.
    pub fn nearest_page(&self, point: Vec3) -> Option<PageId> {
        (0..self.pages.len())
            .map(|p| (self.pages[p].bbox.distance_to_point(point), p))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, p)| p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_fiber_forest, GeneratorParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_dataset(n: usize, seed: u64) -> Dataset {
        generate_fiber_forest(&GeneratorParams {
            fiber_count: 5,
            target_object_count: n,
            bifurcation_prob: 0.1,
            step_length: 3.0,
            tortuosity: 0.3,
            bounds: Aabb::new(Vec3::ZERO, Vec3::new(120.0, 120.0, 120.0)),
            seed,
        })
        .unwrap()
    }

    #[test]
    fn exact_capacity_gives_one_page() {
        let ds = test_dataset(87, 0);
        let idx = build_index(&ds, 87);
        assert_eq!(idx.page_count(), 1);
        assert_eq!(idx.pages()[0].object_ids.len(), 87);
    }

    #[test]
    fn full_fill_page_count() {
        let ds = test_dataset(870, 1);
        let idx = build_index(&ds, 87);
        assert_eq!(idx.page_count(), 10);
        for p in idx.pages() {
            assert_eq!(p.object_ids.len(), 87);
        }
    }

    #[test]
    fn pages_partition_the_dataset() {
        let ds = test_dataset(1000, 2);
        let idx = build_index(&ds, 87);
        assert_eq!(idx.page_count(), 1000usize.div_ceil(87));
        let mut seen = BTreeSet::new();
        for p in idx.pages() {
            for id in &p.object_ids {
                assert!(seen.insert(*id), "object {id} appears in two pages");
            }
        }
        assert_eq!(seen.len(), ds.len());
    }

    #[test]
    fn empty_dataset_builds_empty_index() {
        let ds = Dataset::from_objects(vec![], Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0)));
        let idx = build_index(&ds, 87);
        assert_eq!(idx.page_count(), 0);
        assert!(idx.range_query(&Aabb::cube(Vec3::ZERO, 10.0)).pages.is_empty());
    }

    #[test]
    fn range_query_matches_linear_scan_oracle() {
        let ds = test_dataset(2000, 3);
        let idx = build_index(&ds, 87);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let c = Vec3::new(
                rng.gen_range(0.0..120.0),
                rng.gen_range(0.0..120.0),
                rng.gen_range(0.0..120.0),
            );
            let region = Aabb::cube(c, rng.gen_range(5.0..40.0));
            let got = idx.range_query(&region);
            let want: BTreeSet<u64> = ds
                .objects
                .iter()
                .filter(|o| aabb_intersects_segment(&region, &o.seg))
                .map(|o| o.id)
                .collect();
            assert_eq!(got.object_ids, want);
            let want_pages: BTreeSet<PageId> =
                want.iter().map(|id| idx.page_of(*id).unwrap()).collect();
            assert_eq!(got.pages, want_pages);
        }
    }

    #[test]
    fn whole_bounds_query_returns_all_pages() {
        let ds = test_dataset(500, 4);
        let idx = build_index(&ds, 50);
        let got = idx.range_query(&ds.bounds);
        assert_eq!(got.pages.len(), idx.page_count());
        let far = Aabb::cube(Vec3::new(9000.0, 9000.0, 9000.0), 1.0);
        assert!(idx.range_query(&far).pages.is_empty());
    }

    #[test]
    fn adjacency_is_symmetric_and_irreflexive() {
        let ds = test_dataset(2000, 5);
        let idx = build_index(&ds, 87);
        for p in 0..idx.page_count() {
            let neigh = idx.neighbor_pages(p).unwrap();
            assert!(!neigh.contains(&p));
            for &q in neigh {
                assert!(idx.neighbor_pages(q).unwrap().contains(&p));
                let gap = idx.pages()[p].bbox.gap_distance(&idx.pages()[q].bbox);
                assert!(gap <= idx.adjacency_distance() + 1e-9);
            }
        }
        assert_eq!(idx.neighbor_pages(9999), Err(IndexError::UnknownPage(9999)));
    }

    #[test]
    fn ordered_query_yields_same_set_connected_order() {
        let ds = test_dataset(3000, 6);
        let idx = build_index(&ds, 87);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let c = Vec3::new(
                rng.gen_range(10.0..110.0),
                rng.gen_range(10.0..110.0),
                rng.gen_range(10.0..110.0),
            );
            let region = Aabb::cube(c, rng.gen_range(10.0..50.0));
            let unordered = idx.range_query(&region).pages;
            let seed = vec![region.center()];
            let ordered = idx.ordered_range_query(&region, &seed);
            assert_eq!(unordered, ordered.iter().copied().collect::<BTreeSet<_>>());

            // Order property: each page after the first is adjacent to some
            // earlier page, unless no remaining page was adjacent (restart).
            let mut yielded: BTreeSet<PageId> = BTreeSet::new();
            for (i, &p) in ordered.iter().enumerate() {
                if i > 0 {
                    let connected = idx.adjacency[p].iter().any(|q| yielded.contains(q));
                    if !connected {
                        // Restart is only legal when nothing remaining was
                        // adjacent to the yielded prefix.
                        let any_reachable = ordered[i..].iter().any(|&r| {
                            idx.adjacency[r].iter().any(|q| yielded.contains(q))
                        });
                        assert!(!any_reachable, "page {p} disconnected but reachable pages remain");
                    }
                }
                yielded.insert(p);
            }
        }
    }

    #[test]
    fn single_page_result_is_that_page() {
        let ds = test_dataset(500, 8);
        let idx = build_index(&ds, 500);
        assert_eq!(idx.page_count(), 1);
        let region = Aabb::cube(ds.objects[0].seg.p0, 5.0);
        let ordered = idx.ordered_range_query(&region, &[]);
        assert_eq!(ordered, vec![0]);
    }
}
