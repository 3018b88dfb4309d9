//! Planar convex hulls (Andrew's monotone chain) and polygon areas.

use thiserror::Error;

/// A point in the `(u, v)` plane.
pub type Point2 = [f64; 2];

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum HullError {
    #[error("convex hull of an empty point set")]
    EmptyInput,
}

#[inline]
fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull with collinear points dropped.
///
/// A single distinct point yields a one-vertex hull, collinear input a
/// two-vertex hull holding the extreme points. Both have zero area.
pub fn convex_hull(points: &[Point2]) -> Result<Vec<Point2>, HullError> {
    if points.is_empty() {
        return Err(HullError::EmptyInput);
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Ok(pts);
    }

    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    Ok(hull)
}

/// Absolute polygon area by the shoelace formula; fewer than 3 vertices is 0.
pub fn polygon_area(polygon: &[Point2]) -> f64 {
    if polygon.len() < 3 {
        return 0.0;
    }
    let twice: f64 = polygon
        .iter()
        .zip(polygon.iter().cycle().skip(1))
        .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
        .sum();
    twice.abs() / 2.0
}

/// Smallest signed distance from `p` to the supporting lines of a CCW convex
/// polygon's edges; non-negative iff `p` is inside or on the polygon.
pub fn signed_distance_inside(polygon: &[Point2], p: Point2) -> f64 {
    let n = polygon.len();
    match n {
        0 => f64::NEG_INFINITY,
        1 => -((p[0] - polygon[0][0]).hypot(p[1] - polygon[0][1])),
        _ => (0..n)
            .map(|i| {
                let a = polygon[i];
                let b = polygon[(i + 1) % n];
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                cross(a, b, p) / len
            })
            .fold(f64::INFINITY, f64::min),
    }
}

/// True when every consecutive edge pair turns the same (counter-clockwise) way.
pub fn is_convex_ccw(polygon: &[Point2]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return true;
    }
    (0..n).all(|i| cross(polygon[i], polygon[(i + 1) % n], polygon[(i + 2) % n]) > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.len(), 4);
        assert_eq!(polygon_area(&hull), 1.0);
        assert!(is_convex_ccw(&hull));
    }

    #[test]
    fn collinear_points_collapse_to_segment() {
        let hull = convex_hull(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert_eq!(hull, vec![[0.0, 0.0], [2.0, 2.0]]);
        assert_eq!(polygon_area(&hull), 0.0);
    }

    #[test]
    fn interior_and_edge_points_dropped() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [2.0, 2.0], [0.0, 2.0], [1.0, 1.0]];
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.len(), 4);
        assert_eq!(polygon_area(&hull), 4.0);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(convex_hull(&[]), Err(HullError::EmptyInput));
    }

    #[test]
    fn containment_sign() {
        let hull = convex_hull(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]).unwrap();
        assert!(signed_distance_inside(&hull, [0.5, 0.5]) > 0.0);
        assert!(signed_distance_inside(&hull, [1.0, 1.0]).abs() < 1e-12);
        assert!(signed_distance_inside(&hull, [2.0, 2.0]) < 0.0);
    }
}
