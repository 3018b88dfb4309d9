//! Binary morphology on masks: 4-connected component labelling, blob
//! geometry, and erosion with a 3x3 square structuring element.

use thiserror::Error;

use crate::hull::{convex_hull, polygon_area, Point2};
use crate::types::{neighbors4, BinaryMask, MapError, PixelCoord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MorphologyError {
    #[error("regions {first} and {second} overlap")]
    RegionsOverlap { first: usize, second: usize },
    #[error("region {index} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

/// Per-pixel component labels: 0 is background, `1..=K` are components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    num_labels: u32,
}

impl InstanceLabelMap {
    /// Wraps raw labels. Labels must cover `1..=max` without gaps.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self, MapError> {
        if labels.len() != height * width {
            return Err(MapError::BufferLength {
                expected: height * width,
                actual: labels.len(),
            });
        }
        let num_labels = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; num_labels as usize + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().skip(1).position(|&s| !s) {
            return Err(MapError::OutOfRange { index: missing + 1 });
        }
        Ok(Self {
            height,
            width,
            labels,
            num_labels,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
            num_labels: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of components `K`.
    pub fn num_labels(&self) -> usize {
        self.num_labels as usize
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u32 {
        self.labels[u * self.width + v]
    }

    pub fn region_mask(&self, label: u32) -> BinaryMask {
        BinaryMask::from_vec(
            self.height,
            self.width,
            self.labels.iter().map(|&l| l == label).collect(),
        )
        .expect("label buffer matches its own shape")
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask::from_vec(
            self.height,
            self.width,
            self.labels.iter().map(|&l| l != 0).collect(),
        )
        .expect("label buffer matches its own shape")
    }

    pub fn flipped(&self, vertical: bool, horizontal: bool) -> Self {
        let mut labels = vec![0; self.labels.len()];
        for u in 0..self.height {
            for v in 0..self.width {
                let su = if vertical { self.height - 1 - u } else { u };
                let sv = if horizontal { self.width - 1 - v } else { v };
                labels[u * self.width + v] = self.get(su, sv);
            }
        }
        Self {
            labels,
            ..self.clone()
        }
    }
}

/// Disjoint-set forest over provisional labels, union by smaller root.
struct DisjointSets {
    parent: Vec<u32>,
}

impl DisjointSets {
    fn new() -> Self {
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Labels 4-connected foreground components `1..=K` in raster order of each
/// component's first pixel.
pub fn connected_components(mask: &BinaryMask) -> InstanceLabelMap {
    let (h, w) = mask.shape();
    let mut provisional = vec![0u32; h * w];
    let mut sets = DisjointSets::new();

    for u in 0..h {
        for v in 0..w {
            if !mask.get(u, v) {
                continue;
            }
            let up = if u > 0 { provisional[(u - 1) * w + v] } else { 0 };
            let left = if v > 0 { provisional[u * w + v - 1] } else { 0 };
            provisional[u * w + v] = match (up, left) {
                (0, 0) => sets.make(),
                (a, 0) | (0, a) => a,
                (a, b) => sets.union(a, b),
            };
        }
    }

    // Final ids are handed out on first sight of each root while scanning.
    let mut final_id = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let mut labels = provisional;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if final_id[root] == 0 {
            next += 1;
            final_id[root] = next;
        }
        *l = final_id[root];
    }

    InstanceLabelMap {
        height: h,
        width: w,
        labels,
        num_labels: next,
    }
}

/// One labelled component with its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub id: u32,
    /// Pixels in raster order.
    pub pixels: Vec<PixelCoord>,
    /// Mean of pixel-centre coordinates `(u_c, v_c)`.
    pub centroid: (f64, f64),
    /// Pixels with a 4-neighbour outside the blob or outside the image.
    pub boundary: Vec<PixelCoord>,
    pub pixel_area: usize,
    /// Counter-clockwise hull of the pixels' unit-square corners.
    pub hull: Vec<Point2>,
    pub hull_area: f64,
}

impl Blob {
    /// Distance of every boundary pixel centre to the centroid, in boundary order.
    pub fn boundary_radii(&self) -> Vec<f64> {
        self.boundary.iter().map(|p| self.radius(*p)).collect()
    }

    #[inline]
    pub fn radius(&self, p: PixelCoord) -> f64 {
        (p.u as f64 - self.centroid.0).hypot(p.v as f64 - self.centroid.1)
    }
}

/// Builds a [`Blob`] for every label `1..=K`, ordered by id.
pub fn extract_blobs(labels: &InstanceLabelMap) -> Vec<Blob> {
    let (h, w) = labels.shape();
    let k = labels.num_labels();
    let mut pixels: Vec<Vec<PixelCoord>> = vec![Vec::new(); k];
    for u in 0..h {
        for v in 0..w {
            let l = labels.get(u, v);
            if l != 0 {
                pixels[l as usize - 1].push(PixelCoord::new(u, v));
            }
        }
    }

    pixels
        .into_iter()
        .enumerate()
        .map(|(i, pixels)| {
            let id = i as u32 + 1;
            let n = pixels.len() as f64;
            let (su, sv) = pixels
                .iter()
                .fold((0.0, 0.0), |(a, b), p| (a + p.u as f64, b + p.v as f64));
            let boundary = pixels
                .iter()
                .copied()
                .filter(|p| {
                    let interior = p.u > 0
                        && p.v > 0
                        && p.u + 1 < h
                        && p.v + 1 < w
                        && neighbors4(p.u, p.v, h, w).all(|(a, b)| labels.get(a, b) == id);
                    !interior
                })
                .collect();
            let hull = convex_hull(&row_extreme_corners(&pixels)).expect("blob has pixels");
            let hull_area = polygon_area(&hull);
            Blob {
                id,
                centroid: (su / n, sv / n),
                boundary,
                pixel_area: pixels.len(),
                hull,
                hull_area,
                pixels,
            }
        })
        .collect()
}

/// Unit-square corners of the leftmost and rightmost pixel of every row; their
/// hull equals the hull of all pixel corners.
fn row_extreme_corners(pixels: &[PixelCoord]) -> Vec<Point2> {
    let mut corners = Vec::new();
    let mut i = 0;
    while i < pixels.len() {
        let u = pixels[i].u;
        let (mut lo, mut hi) = (pixels[i].v, pixels[i].v);
        while i < pixels.len() && pixels[i].u == u {
            lo = lo.min(pixels[i].v);
            hi = hi.max(pixels[i].v);
            i += 1;
        }
        let (u, lo, hi) = (u as f64, lo as f64, hi as f64 + 1.0);
        corners.extend([[u, lo], [u + 1.0, lo], [u, hi], [u + 1.0, hi]]);
    }
    corners
}

/// Binary erosion with a 3x3 square; pixels outside the image count as background.
pub fn erode(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.shape();
    BinaryMask::from_fn(h, w, |u, v| {
        if u == 0 || v == 0 || u + 1 >= h || v + 1 >= w {
            return false;
        }
        (u - 1..=u + 1).all(|a| (v - 1..=v + 1).all(|b| mask.get(a, b)))
    })
}

fn check_disjoint(regions: &[BinaryMask]) -> Result<(), MorphologyError> {
    let Some(first) = regions.first() else {
        return Ok(());
    };
    let shape = first.shape();
    let mut owner: Vec<Option<usize>> = vec![None; shape.0 * shape.1];
    for (index, region) in regions.iter().enumerate() {
        if region.shape() != shape {
            return Err(MorphologyError::ShapeMismatch {
                index,
                expected: shape,
                actual: region.shape(),
            });
        }
        for (i, &inside) in region.data().iter().enumerate() {
            if !inside {
                continue;
            }
            if let Some(first) = owner[i] {
                return Err(MorphologyError::RegionsOverlap {
                    first,
                    second: index,
                });
            }
            owner[i] = Some(index);
        }
    }
    Ok(())
}

/// Erodes each region independently. Inputs must be pairwise disjoint.
pub fn erode_regions(regions: &[BinaryMask]) -> Result<Vec<BinaryMask>, MorphologyError> {
    check_disjoint(regions)?;
    Ok(regions.iter().map(erode).collect())
}

/// Erodes the union of the regions once, then splits the result back per region.
pub fn erode_regions_union(regions: &[BinaryMask]) -> Result<Vec<BinaryMask>, MorphologyError> {
    check_disjoint(regions)?;
    let Some(first) = regions.first() else {
        return Ok(Vec::new());
    };
    let union = regions
        .iter()
        .skip(1)
        .fold(first.clone(), |acc, r| acc.union(r));
    let eroded = erode(&union);
    Ok(regions.iter().map(|r| r.intersection(&eroded)).collect())
}
