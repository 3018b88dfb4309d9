//! Brute-force reference implementations used only by tests.
//!
//! Nothing here depends on the main crate. Routines favour obviousness over
//! speed and are meant for inputs of at most a few thousand pixels.

/// How an oracle value was obtained, with the tolerance it should be compared at.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub values: Vec<f64>,
    pub method: &'static str,
    pub tolerance: f64,
}

impl OracleResult {
    pub fn scalar(value: f64, method: &'static str, tolerance: f64) -> Self {
        Self { values: vec![value], method, tolerance }
    }

    pub fn value(&self) -> f64 {
        self.values[0]
    }

    /// Relative agreement `|a - b| <= tolerance * max(1, |a|, |b|)` for every entry.
    pub fn agrees_with(&self, other: &[f64]) -> bool {
        self.values.len() == other.len()
            && self
                .values
                .iter()
                .zip(other)
                .all(|(a, b)| (a - b).abs() <= self.tolerance * 1f64.max(a.abs()).max(b.abs()))
    }
}

// ---------------------------------------------------------------- components

/// Labels the 4-connected components of a row-major mask with an explicit-stack
/// flood fill. Labels start at 1 in raster order of the first pixel; background is 0.
pub fn floodfill_cc(height: usize, width: usize, mask: &[bool]) -> (Vec<u32>, usize) {
    assert_eq!(mask.len(), height * width, "mask length");
    let mut labels = vec![0u32; mask.len()];
    let mut next = 0u32;
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            let (u, v) = (p / width, p % width);
            let mut candidates = Vec::with_capacity(4);
            if u > 0 {
                candidates.push(p - width);
            }
            if u + 1 < height {
                candidates.push(p + width);
            }
            if v > 0 {
                candidates.push(p - 1);
            }
            if v + 1 < width {
                candidates.push(p + 1);
            }
            for q in candidates {
                if mask[q] && labels[q] == 0 {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
    }
    (labels, next as usize)
}

/// True when two labelings induce the same partition (zero must map to zero).
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------- polygons

/// Absolute shoelace area; fewer than three vertices gives 0.
pub fn shoelace_area(polygon: &[[f64; 2]]) -> f64 {
    if polygon.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..polygon.len() {
        let [x0, y0] = polygon[i];
        let [x1, y1] = polygon[(i + 1) % polygon.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}

/// Half-plane containment for a convex polygon in either orientation.
/// Points on an edge count as inside (within `1e-9`).
pub fn contains(polygon: &[[f64; 2]], point: [f64; 2]) -> bool {
    if polygon.len() < 3 {
        return false;
    }
    let mut saw_pos = false;
    let mut saw_neg = false;
    for i in 0..polygon.len() {
        let a = polygon[i];
        let b = polygon[(i + 1) % polygon.len()];
        let cross = (b[0] - a[0]) * (point[1] - a[1]) - (b[1] - a[1]) * (point[0] - a[0]);
        if cross > 1e-9 {
            saw_pos = true;
        } else if cross < -1e-9 {
            saw_neg = true;
        }
    }
    !(saw_pos && saw_neg)
}

/// Convex hull by gift wrapping (Jarvis march); collinear points on hull
/// edges are dropped. Returns vertices counter-clockwise.
pub fn gift_wrap_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for p in points {
        if !pts.contains(p) {
            pts.push(*p);
        }
    }
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let dist2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let start = (0..pts.len())
        .min_by(|&i, &j| pts[i][0].total_cmp(&pts[j][0]).then(pts[i][1].total_cmp(&pts[j][1])))
        .unwrap();
    let mut hull = Vec::new();
    let mut current = start;
    loop {
        hull.push(pts[current]);
        let mut candidate = if current == 0 { 1 } else { 0 };
        for k in 0..pts.len() {
            if k == current {
                continue;
            }
            let c = cross(pts[current], pts[candidate], pts[k]);
            // Clockwise of the candidate, or collinear but farther: wrap tighter.
            if c < 0.0 || (c == 0.0 && dist2(pts[current], pts[k]) > dist2(pts[current], pts[candidate])) {
                candidate = k;
            }
        }
        current = candidate;
        if current == start || hull.len() > pts.len() {
            break;
        }
    }
    hull
}

/// Largest triangle area over all point triples; a lower bound for the hull area.
pub fn max_triangle_area(points: &[[f64; 2]]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            for k in j + 1..points.len() {
                best = best.max(shoelace_area(&[points[i], points[j], points[k]]));
            }
        }
    }
    best
}

/// Hull area of a pixel set treated as unit squares: every pixel contributes
/// its four corners, then the gift-wrap hull is measured with the shoelace formula.
pub fn pixel_hull_area(pixels: &[(usize, usize)]) -> OracleResult {
    let mut corners = Vec::with_capacity(pixels.len() * 4);
    for &(u, v) in pixels {
        let (u, v) = (u as f64, v as f64);
        corners.extend_from_slice(&[[u, v], [u + 1.0, v], [u, v + 1.0], [u + 1.0, v + 1.0]]);
    }
    OracleResult::scalar(shoelace_area(&gift_wrap_hull(&corners)), "gift-wrap hull + shoelace", 1e-9)
}

// ---------------------------------------------------------------- shape

/// Max minus min Euclidean distance from the pixel centroid to pixels that
/// touch the background or the image border (4-neighbourhood).
pub fn boundary_spread(height: usize, width: usize, mask: &[bool]) -> OracleResult {
    let members: Vec<(usize, usize)> = (0..height * width)
        .filter(|&i| mask[i])
        .map(|i| (i / width, i % width))
        .collect();
    if members.is_empty() {
        return OracleResult::scalar(0.0, "boundary enumeration", 1e-9);
    }
    let n = members.len() as f64;
    let cu = members.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cv = members.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let inside = |u: isize, v: isize| {
        u >= 0 && v >= 0 && (u as usize) < height && (v as usize) < width && mask[u as usize * width + v as usize]
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(u, v) in &members {
        let (ui, vi) = (u as isize, v as isize);
        let on_boundary = [(ui - 1, vi), (ui + 1, vi), (ui, vi - 1), (ui, vi + 1)]
            .iter()
            .any(|&(a, b)| !inside(a, b));
        if on_boundary {
            let d = ((u as f64 - cu).powi(2) + (v as f64 - cv).powi(2)).sqrt();
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    OracleResult::scalar(hi - lo, "boundary enumeration", 1e-9)
}

// ---------------------------------------------------------------- watershed

/// Priority flood simulated with a plain list and a linear scan for the
/// lowest `(height, insertion order)` entry. Neighbours are visited N, S, W, E;
/// a pixel is labelled when first pushed. Pixels outside `domain` or unreachable
/// stay 0; markers are labelled `1..=markers.len()` in order.
pub fn simulate_priority_flood(
    height: usize,
    width: usize,
    landscape: &[f64],
    markers: &[(usize, usize)],
    domain: &[bool],
) -> Vec<u32> {
    let mut labels = vec![0u32; height * width];
    let mut pending: Vec<(f64, usize, usize)> = Vec::new();
    let mut order = 0usize;
    for (k, &(u, v)) in markers.iter().enumerate() {
        let p = u * width + v;
        labels[p] = k as u32 + 1;
        pending.push((landscape[p], order, p));
        order += 1;
    }
    while !pending.is_empty() {
        let mut best = 0;
        for i in 1..pending.len() {
            let (h, o, _) = pending[i];
            let (bh, bo, _) = pending[best];
            if h < bh || (h == bh && o < bo) {
                best = i;
            }
        }
        let (_, _, p) = pending.remove(best);
        let (u, v) = (p / width, p % width);
        let mut next = Vec::new();
        if u > 0 {
            next.push(p - width);
        }
        if u + 1 < height {
            next.push(p + width);
        }
        if v > 0 {
            next.push(p - 1);
        }
        if v + 1 < width {
            next.push(p + 1);
        }
        for q in next {
            if domain[q] && labels[q] == 0 {
                labels[q] = labels[p];
                pending.push((landscape[q], order, q));
                order += 1;
            }
        }
    }
    labels
}

// ---------------------------------------------------------------- derivatives

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], eps: f64) -> OracleResult {
    assert!(eps > 0.0, "eps must be positive");
    let mut probe = x.to_vec();
    let mut values = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        values.push((up - down) / (2.0 * eps));
    }
    OracleResult { values, method: "central difference", tolerance: eps }
}

/// Central difference along a single coordinate.
pub fn finite_diff_at<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], index: usize, eps: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[index] = x[index] + eps;
    let up = f(&probe);
    probe[index] = x[index] - eps;
    let down = f(&probe);
    (up - down) / (2.0 * eps)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
