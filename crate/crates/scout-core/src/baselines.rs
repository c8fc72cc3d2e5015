//! Location-only prediction baselines: straight line, polynomial, EWMA, and
//! Hilbert-value page prefetching. All are pure functions of the query
//! center history and feed the same incremental prefetch executor.

use std::collections::BTreeSet;

use crate::geometry::{Aabb, Vec3};
use crate::hilbert;
use crate::index::{PagedIndex, PageId};
use crate::predictor::PredictedLocation;
use crate::prefetch::{PrefetchPlan, Strategy, WindowBudget};

/// Past query centers in chronological order.
#[derive(Debug, Clone, Default)]
pub struct CenterHistory {
    centers: Vec<Vec3>,
}

impl CenterHistory {
    pub fn push(&mut self, c: Vec3) {
        self.centers.push(c);
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vec3] {
        &self.centers
    }
}

impl From<Vec<Vec3>> for CenterHistory {
    fn from(centers: Vec<Vec3>) -> Self {
        CenterHistory { centers }
    }
}

fn prediction_from(last: Vec3, center: Vec3) -> PredictedLocation {
    PredictedLocation {
        center,
        direction: (center - last).normalized(),
        weight: 1.0,
        origin: (last + center) * 0.5,
    }
}

/// Linear extrapolation of the last two centers.
pub fn predict_straight_line(h: &CenterHistory) -> Option<PredictedLocation> {
    match h.centers() {
        [.., a, b] => Some(prediction_from(*b, *b + (*b - *a))),
        _ => None,
    }
}

/// Degree-`k` interpolating polynomial through the last `k+1` centers
/// (parameterized by query index), evaluated at the next index.
pub fn predict_polynomial(h: &CenterHistory, degree: usize) -> Option<PredictedLocation> {
    let n = degree + 1;
    if h.len() < n || degree == 0 {
        return None;
    }
    let pts = &h.centers()[h.len() - n..];
    // Lagrange evaluation at x = n for nodes 0..n-1.
    let x = n as f64;
    let mut center = Vec3::ZERO;
    for (i, p) in pts.iter().enumerate() {
        let mut basis = 1.0;
        for j in 0..n {
            if j != i {
                basis *= (x - j as f64) / (i as f64 - j as f64);
            }
        }
        center = center + *p * basis;
    }
    Some(prediction_from(*pts.last().unwrap(), center))
}

/// Number of recent movement vectors EWMA considers before renormalizing.
pub const EWMA_WINDOW: usize = 8;

/// Exponentially weighted movement vectors: the last step weighted λ, the
/// one before (1−λ)·λ, and so on over the trailing window, renormalized to
/// sum 1.
pub fn predict_ewma(h: &CenterHistory, lambda: f64) -> Option<PredictedLocation> {
    if h.len() < 2 || !(0.0..=1.0).contains(&lambda) || lambda == 0.0 {
        return None;
    }
    let centers = h.centers();
    let moves: Vec<Vec3> = centers.windows(2).map(|w| w[1] - w[0]).collect();
    let take = moves.len().min(EWMA_WINDOW);
    let recent = &moves[moves.len() - take..];
    let weights = ewma_weights(lambda, take);
    let mut step = Vec3::ZERO;
    for (i, m) in recent.iter().enumerate() {
        step = step + *m * weights[i];
    }
    let last = *centers.last().unwrap();
    Some(prediction_from(last, last + step))
}

/// Normalized EWMA weights for `n` vectors, oldest first.
pub fn ewma_weights(lambda: f64, n: usize) -> Vec<f64> {
    let raw: Vec<f64> =
        (0..n).map(|i| lambda * (1.0 - lambda).powi((n - 1 - i) as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Order (bits per axis) so the Hilbert cell edge is close to the query
/// edge over the dataset bounds.
pub fn hilbert_order_for(bounds: &Aabb, query_edge: f64) -> u32 {
    let extent = bounds.extent();
    let max_extent = extent.x.max(extent.y).max(extent.z);
    if query_edge <= 0.0 || max_extent <= 0.0 {
        return 1;
    }
    let cells = (max_extent / query_edge).max(1.0);
    (cells.log2().round() as i64).clamp(1, 6) as u32
}

/// Static Hilbert prefetching: pages overlapping cells with Hilbert values
/// in expanding rings around the current region's cell values.
pub fn plan_hilbert(
    idx: &PagedIndex,
    bounds: &Aabb,
    current_region: &Aabb,
    budget: WindowBudget,
    order: u32,
) -> PrefetchPlan {
    if budget.pages == 0 || idx.page_count() == 0 {
        return PrefetchPlan { targets: Vec::new(), ordered_pages: Some(Vec::new()), strategy: Some(Strategy::Baseline) };
    }
    let per_axis = 1u64 << order;
    let extent = bounds.extent();
    let cell_edge = Vec3::new(
        extent.x / per_axis as f64,
        extent.y / per_axis as f64,
        extent.z / per_axis as f64,
    );
    let cell_of = |p: Vec3| -> [u32; 3] {
        let mut c = [0u32; 3];
        for axis in 0..3 {
            let rel = (p.component(axis) - bounds.min.component(axis))
                / cell_edge.component(axis).max(1e-12);
            c[axis] = (rel.floor() as i64).clamp(0, per_axis as i64 - 1) as u32;
        }
        c
    };
    let lo = cell_of(current_region.min);
    let hi = cell_of(current_region.max);
    let mut occupied = BTreeSet::new();
    for cx in lo[0]..=hi[0] {
        for cy in lo[1]..=hi[1] {
            for cz in lo[2]..=hi[2] {
                occupied.insert(hilbert::cell_to_index(order, [cx, cy, cz]));
            }
        }
    }

    let max_value = hilbert::cell_count(order);
    let cell_box = |cell: [u32; 3]| -> Aabb {
        let min = Vec3::new(
            bounds.min.x + cell[0] as f64 * cell_edge.x,
            bounds.min.y + cell[1] as f64 * cell_edge.y,
            bounds.min.z + cell[2] as f64 * cell_edge.z,
        );
        Aabb::new(min, min + cell_edge)
    };

    let mut pages: Vec<PageId> = Vec::new();
    let mut listed: BTreeSet<PageId> = BTreeSet::new();
    let mut ring = 1u64;
    // Enumerate cells by increasing Hilbert-value distance from the
    // occupied values until enough pages are listed.
    while pages.len() < budget.pages * 4 && ring < max_value {
        let mut ring_cells: BTreeSet<u64> = BTreeSet::new();
        for &v in &occupied {
            if v >= ring {
                ring_cells.insert(v - ring);
            }
            if v + ring < max_value {
                ring_cells.insert(v + ring);
            }
        }
        for v in ring_cells {
            if occupied.contains(&v) {
                continue;
            }
            let bbox = cell_box(hilbert::index_to_cell(order, v));
            for page in idx.pages() {
                if page.bbox.intersects(&bbox) && listed.insert(page.page_id) {
                    pages.push(page.page_id);
                }
            }
        }
        ring += 1;
    }
    PrefetchPlan { targets: Vec::new(), ordered_pages: Some(pages), strategy: Some(Strategy::Baseline) }
}
