//! 3D Hilbert curve index/coordinate conversion (Skilling's transpose
//! algorithm). Consecutive indices map to face-adjacent cells.

/// Cell coordinates of a Hilbert index at the given order (bits per axis).
pub fn index_to_cell(order: u32, d: u64) -> [u32; 3] {
    let mut x = transpose_of_index(order, d);
    transpose_to_axes(&mut x, order);
    x
}

/// Hilbert index of a cell at the given order.
pub fn cell_to_index(order: u32, cell: [u32; 3]) -> u64 {
    let mut x = cell;
    axes_to_transpose(&mut x, order);
    index_of_transpose(order, &x)
}

/// Total cell count at an order: `8^order`.
pub fn cell_count(order: u32) -> u64 {
    1u64 << (3 * order)
}

fn transpose_of_index(order: u32, d: u64) -> [u32; 3] {
    let mut x = [0u32; 3];
    for j in 0..order {
        for (a, xa) in x.iter_mut().enumerate() {
            let bit = (d >> (3 * (order - 1 - j) + (2 - a as u32))) & 1;
            *xa |= (bit as u32) << (order - 1 - j);
        }
    }
    x
}

fn index_of_transpose(order: u32, x: &[u32; 3]) -> u64 {
    let mut d = 0u64;
    for j in 0..order {
        for (a, xa) in x.iter().enumerate() {
            let bit = u64::from((xa >> (order - 1 - j)) & 1);
            d |= bit << (3 * (order - 1 - j) + (2 - a as u32));
        }
    }
    d
}

fn axes_to_transpose(x: &mut [u32; 3], order: u32) {
    let m = 1u32 << (order - 1);
    // Inverse undo
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for xa in x.iter_mut() {
        *xa ^= t;
    }
}

fn transpose_to_axes(x: &mut [u32; 3], order: u32) {
    let n = 2u32 << (order - 1);
    // Gray decode by H ^ (H/2)
    let mut t = x[2] >> 1;
    for i in (1..3).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    // Undo excess work
    let mut q = 2;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_order_4() {
        for d in 0..cell_count(4) {
            let cell = index_to_cell(4, d);
            assert_eq!(cell_to_index(4, cell), d);
        }
    }

    #[test]
    fn visits_every_cell_once() {
        let order = 3;
        let mut seen = vec![false; cell_count(order) as usize];
        for d in 0..cell_count(order) {
            let [x, y, z] = index_to_cell(order, d);
            assert!(x < 8 && y < 8 && z < 8);
            let flat = (x * 64 + y * 8 + z) as usize;
            assert!(!seen[flat], "cell visited twice");
            seen[flat] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn consecutive_indices_are_face_adjacent() {
        let order = 3;
        for d in 0..cell_count(order) - 1 {
            let a = index_to_cell(order, d);
            let b = index_to_cell(order, d + 1);
            let diff: u32 = (0..3).map(|i| a[i].abs_diff(b[i])).sum();
            assert_eq!(diff, 1, "cells {a:?} and {b:?} not face-adjacent at d={d}");
        }
    }
}
