//! Binary raster morphology: 3x3 erosion/dilation, connected-component
//! labeling, small-component removal, Euclidean distance transform and
//! boundary tracing.

use crate::grid::MaskGrid;

/// Erosion with a full 3x3 structuring element. Cells outside the grid
/// count as background, so border pixels never survive.
pub fn erode3x3(mask: &MaskGrid) -> MaskGrid {
    let (rows, cols) = mask.shape();
    MaskGrid::from_fn(rows, cols, |r, c| {
        if r == 0 || c == 0 || r + 1 == rows || c + 1 == cols {
            return false;
        }
        for dr in -1_isize..=1 {
            for dc in -1_isize..=1 {
                if !mask.get((r as isize + dr) as usize, (c as isize + dc) as usize) {
                    return false;
                }
            }
        }
        true
    })
}

/// Dilation with a full 3x3 structuring element.
pub fn dilate3x3(mask: &MaskGrid) -> MaskGrid {
    let (rows, cols) = mask.shape();
    MaskGrid::from_fn(rows, cols, |r, c| {
        for dr in -1_isize..=1 {
            for dc in -1_isize..=1 {
                let rr = r as isize + dr;
                let cc = c as isize + dc;
                if rr >= 0
                    && cc >= 0
                    && (rr as usize) < rows
                    && (cc as usize) < cols
                    && mask.get(rr as usize, cc as usize)
                {
                    return true;
                }
            }
        }
        false
    })
}

/// Morphological opening: one erosion followed by one dilation.
pub fn open3x3(mask: &MaskGrid) -> MaskGrid {
    dilate3x3(&erode3x3(mask))
}

/// 8-connected component labels. Returns (labels, component count) where
/// label 0 means background and components are numbered from 1.
pub fn label_components(mask: &MaskGrid) -> (Vec<u32>, usize) {
    let (rows, cols) = mask.shape();
    let mut labels = vec![0_u32; rows * cols];
    let mut next = 0_u32;
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if !mask.values()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (r, c) = (idx / cols, idx % cols);
            for dr in -1_isize..=1 {
                for dc in -1_isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let rr = r as isize + dr;
                    let cc = c as isize + dc;
                    if rr < 0 || cc < 0 || rr as usize >= rows || cc as usize >= cols {
                        continue;
                    }
                    let nidx = rr as usize * cols + cc as usize;
                    if mask.values()[nidx] && labels[nidx] == 0 {
                        labels[nidx] = next;
                        stack.push(nidx);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Removes 8-connected components with area strictly below `min_area`.
pub fn filter_small_components(mask: &MaskGrid, min_area: usize) -> MaskGrid {
    let (labels, count) = label_components(mask);
    let mut areas = vec![0_usize; count + 1];
    for &l in &labels {
        areas[l as usize] += 1;
    }
    let (rows, cols) = mask.shape();
    MaskGrid::from_vec(
        rows,
        cols,
        labels
            .iter()
            .map(|&l| l != 0 && areas[l as usize] >= min_area)
            .collect(),
    )
}

/// Masks of the individual 8-connected components, largest first.
pub fn split_components(mask: &MaskGrid) -> Vec<MaskGrid> {
    let (labels, count) = label_components(mask);
    let (rows, cols) = mask.shape();
    let mut comps: Vec<MaskGrid> = (1..=count as u32)
        .map(|l| {
            MaskGrid::from_vec(rows, cols, labels.iter().map(|&v| v == l).collect())
        })
        .collect();
    comps.sort_by_key(|m| std::cmp::Reverse(m.count_true()));
    comps
}

/// Exact squared Euclidean distance to the nearest set pixel, per pixel.
/// Set pixels have distance 0; a grid with no set pixels returns
/// `usize::MAX` everywhere (reported as `f64::INFINITY` by [`edt`]).
///
/// Two-pass separable lower-envelope method over row then column
/// parabolas.
pub fn squared_edt(mask: &MaskGrid) -> Vec<f64> {
    let (rows, cols) = mask.shape();
    let inf = f64::INFINITY;
    // Pass 1: per column, 1D distance along rows.
    let mut interm = vec![inf; rows * cols];
    for (i, v) in interm.iter_mut().enumerate() {
        if mask.values()[i] {
            *v = 0.0;
        }
    }
    let mut scratch = vec![0.0_f64; rows.max(cols)];
    for c in 0..cols {
        for r in 0..rows {
            scratch[r] = interm[r * cols + c];
        }
        let out = dt_1d(&scratch[..rows]);
        for r in 0..rows {
            interm[r * cols + c] = out[r];
        }
    }
    // Pass 2: per row.
    let mut result = vec![inf; rows * cols];
    for r in 0..rows {
        let row = &interm[r * cols..(r + 1) * cols];
        let out = dt_1d(row);
        result[r * cols..(r + 1) * cols].copy_from_slice(&out);
    }
    result
}

/// Euclidean distance (pixels) to the nearest set pixel.
pub fn edt(mask: &MaskGrid) -> Vec<f64> {
    squared_edt(mask).into_iter().map(f64::sqrt).collect()
}

// 1D squared distance transform of sampled function f (lower envelope of
// parabolas), after Felzenszwalb & Huttenlocher.
fn dt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0_f64; n];
    let mut v = vec![0_usize; n]; // parabola apexes
    let mut z = vec![0.0_f64; n + 1]; // envelope boundaries
    let mut k = 0_usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            let denom = 2.0 * (q as f64 - p as f64);
            let s = if f[p].is_infinite() {
                f64::NEG_INFINITY
            } else {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / denom
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0_usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
    d
}

/// Outer boundary ring of the largest component of `mask`, as pixel
/// coordinates `(row, col)` in tracing order. Empty for an empty mask.
///
/// Moore neighbor tracing starting from the top-most, left-most pixel.
pub fn trace_boundary(mask: &MaskGrid) -> Vec<(usize, usize)> {
    let comps = split_components(mask);
    let Some(comp) = comps.first() else {
        return Vec::new();
    };
    let (rows, cols) = comp.shape();
    let start = comp
        .iter_indexed()
        .find(|&(_, _, v)| v)
        .map(|(r, c, _)| (r, c))
        .expect("component is non-empty");
    if comp.count_true() == 1 {
        return vec![start];
    }

    // Clockwise Moore neighborhood, starting west.
    const DIRS: [(isize, isize); 8] = [
        (0, -1),
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
        (1, 0),
        (1, -1),
    ];
    let inside = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && comp.get(r as usize, c as usize)
    };

    let mut ring = vec![start];
    let mut current = start;
    let mut backtrack_dir = 0_usize; // came from the west initially
    loop {
        let mut found = None;
        for step in 0..8 {
            let dir = (backtrack_dir + 1 + step) % 8;
            let (dr, dc) = DIRS[dir];
            let r = current.0 as isize + dr;
            let c = current.1 as isize + dc;
            if inside(r, c) {
                found = Some(((r as usize, c as usize), dir));
                break;
            }
        }
        let Some((next, dir)) = found else {
            break; // isolated pixel, handled above, defensive here
        };
        if next == start && ring.len() > 1 {
            break;
        }
        ring.push(next);
        current = next;
        // New backtrack direction points from `next` to the previous pixel.
        backtrack_dir = (dir + 4) % 8;
    }
    ring
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: usize, cols: usize, set: &[(usize, usize)]) -> MaskGrid {
        let mut m = MaskGrid::empty(rows, cols);
        for &(r, c) in set {
            m.set(r, c, true);
        }
        m
    }

    #[test]
    fn opening_removes_isolated_pixel() {
        let m = mask_from(7, 7, &[(3, 3)]);
        assert_eq!(open3x3(&m).count_true(), 0);
    }

    #[test]
    fn opening_preserves_large_block_interiorish() {
        let mut m = MaskGrid::empty(8, 8);
        for r in 1..7 {
            for c in 1..7 {
                m.set(r, c, true);
            }
        }
        let opened = open3x3(&m);
        // 6x6 block erodes to 4x4 core, dilates back to the full 6x6.
        assert_eq!(opened.count_true(), 36);
        assert!(opened.get(1, 1) && opened.get(6, 6));
    }

    #[test]
    fn component_filter_boundary() {
        // 35-pixel blob removed, 36-pixel blob kept (7x5 = 35, 6x6 = 36).
        let mut m = MaskGrid::empty(20, 20);
        for r in 0..7 {
            for c in 0..5 {
                m.set(r, c, true);
            }
        }
        for r in 10..16 {
            for c in 10..16 {
                m.set(r, c, true);
            }
        }
        let f = filter_small_components(&m, 36);
        assert_eq!(f.count_true(), 36);
        assert!(!f.get(0, 0));
        assert!(f.get(10, 10));
    }

    #[test]
    fn component_filter_is_idempotent() {
        let m = mask_from(10, 10, &[(1, 1), (1, 2), (5, 5), (5, 6), (6, 5), (6, 6)]);
        let once = filter_small_components(&m, 3);
        let twice = filter_small_components(&once, 3);
        assert_eq!(once, twice);
    }

    #[test]
    fn diagonal_pixels_are_8_connected() {
        let m = mask_from(4, 4, &[(0, 0), (1, 1), (2, 2)]);
        let (_, count) = label_components(&m);
        assert_eq!(count, 1);
    }

    #[test]
    fn edt_matches_brute_force() {
        let m = mask_from(9, 11, &[(2, 3), (7, 9), (0, 0)]);
        let got = edt(&m);
        let set = m.true_pixels();
        for r in 0..9 {
            for c in 0..11 {
                let want = set
                    .iter()
                    .map(|&(sr, sc)| {
                        let dr = r as f64 - sr as f64;
                        let dc = c as f64 - sc as f64;
                        (dr * dr + dc * dc).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min);
                let g = got[r * 11 + c];
                assert!((g - want).abs() < 1e-9, "({r},{c}): {g} vs {want}");
            }
        }
    }

    #[test]
    fn edt_of_empty_mask_is_infinite() {
        let m = MaskGrid::empty(3, 3);
        assert!(edt(&m).iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn boundary_of_rectangle_is_its_perimeter() {
        let mut m = MaskGrid::empty(8, 8);
        for r in 2..6 {
            for c in 1..7 {
                m.set(r, c, true);
            }
        }
        let ring = trace_boundary(&m);
        // 4x6 rectangle: perimeter pixels = 2*(4+6) - 4 = 16.
        assert_eq!(ring.len(), 16);
        for &(r, c) in &ring {
            assert!(m.get(r, c));
            assert!(r == 2 || r == 5 || c == 1 || c == 6);
        }
    }

    #[test]
    fn boundary_of_single_pixel() {
        let m = mask_from(3, 3, &[(1, 1)]);
        assert_eq!(trace_boundary(&m), vec![(1, 1)]);
    }
}
