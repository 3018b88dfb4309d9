//! Marker-based flooding watershed and the selective variant seeded by
//! positive and negative point annotations.
//!
//! Flooding pops pixels in increasing `(height, insertion order)`; a pixel
//! takes the label of the first flood that pushes it. Neighbours are visited
//! N, S, W, E. Every reachable domain pixel joins exactly one region, there
//! is no ridge label.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::morphology::{erode_regions, erode_regions_union, InstanceLabelMap, MorphologyError};
use crate::types::{neighbors4, AnnotationSet, BinaryMask, PixelCoord, ProbabilityMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WatershedError {
    #[error("no markers given")]
    NoMarkers,
    #[error("marker {marker} at {point} is outside the image or the flood domain")]
    MarkerOutsideDomain { marker: usize, point: PixelCoord },
    #[error("markers {first} and {second} share pixel {point}")]
    DuplicateMarker {
        first: usize,
        second: usize,
        point: PixelCoord,
    },
    #[error("landscape has {actual} values for a {height}x{width} domain")]
    LandscapeShape {
        height: usize,
        width: usize,
        actual: usize,
    },
    #[error("landscape value at index {index} is not finite")]
    NonFiniteLandscape { index: usize },
    #[error("prediction mask shape {mask:?} differs from probability map shape {map:?}")]
    ShapeMismatch {
        mask: (usize, usize),
        map: (usize, usize),
    },
    #[error(transparent)]
    Morphology(#[from] MorphologyError),
}

/// How the eroded expandable regions are derived from the flood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErosionMode {
    /// Erode every region on its own.
    #[default]
    PerRegion,
    /// Erode the union of all regions, then split per region.
    Union,
}

/// Result of a plain watershed flood.
#[derive(Debug, Clone, PartialEq)]
pub struct Flood {
    /// Region `k` (1-based) belongs to marker `marker_of_region[k - 1]`;
    /// unreachable or out-of-domain pixels are 0.
    pub labels: InstanceLabelMap,
    pub marker_of_region: Vec<usize>,
}

impl Flood {
    pub fn region(&self, marker: usize) -> BinaryMask {
        let label = self
            .marker_of_region
            .iter()
            .position(|&m| m == marker)
            .expect("every marker owns a region") as u32
            + 1;
        self.labels.region_mask(label)
    }
}

/// Selective watershed output: positive regions `r_p` and negative regions `r_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub flood: Flood,
    pub positive_regions: Vec<BinaryMask>,
    pub negative_regions: Vec<BinaryMask>,
}

impl RegionSet {
    pub fn labels(&self) -> &InstanceLabelMap {
        &self.flood.labels
    }
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    height: f64,
    seq: u64,
    index: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    // Reversed so the max-heap pops the lowest (height, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .height
            .total_cmp(&self.height)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Floods `landscape` from all markers at once, restricted to `domain`.
pub fn watershed(
    landscape: &[f64],
    markers: &[PixelCoord],
    domain: &BinaryMask,
) -> Result<Flood, WatershedError> {
    let (h, w) = domain.shape();
    if landscape.len() != h * w {
        return Err(WatershedError::LandscapeShape {
            height: h,
            width: w,
            actual: landscape.len(),
        });
    }
    if let Some(index) = landscape.iter().position(|x| !x.is_finite()) {
        return Err(WatershedError::NonFiniteLandscape { index });
    }
    if markers.is_empty() {
        return Err(WatershedError::NoMarkers);
    }

    let mut labels = vec![0u32; h * w];
    let mut heap = BinaryHeap::with_capacity(h * w);
    let mut seq = 0u64;
    for (marker, &point) in markers.iter().enumerate() {
        if !point.in_bounds(h, w) || !domain.contains(point) {
            return Err(WatershedError::MarkerOutsideDomain { marker, point });
        }
        let index = point.index(w);
        if labels[index] != 0 {
            return Err(WatershedError::DuplicateMarker {
                first: labels[index] as usize - 1,
                second: marker,
                point,
            });
        }
        labels[index] = marker as u32 + 1;
        heap.push(QueueEntry {
            height: landscape[index],
            seq,
            index,
        });
        seq += 1;
    }

    while let Some(QueueEntry { index, .. }) = heap.pop() {
        let label = labels[index];
        for (a, b) in neighbors4(index / w, index % w, h, w) {
            let n = a * w + b;
            if labels[n] == 0 && domain.get(a, b) {
                labels[n] = label;
                heap.push(QueueEntry {
                    height: landscape[n],
                    seq,
                    index: n,
                });
                seq += 1;
            }
        }
    }

    Ok(Flood {
        labels: InstanceLabelMap::new(h, w, labels).expect("every marker labels at least itself"),
        marker_of_region: (0..markers.len()).collect(),
    })
}

/// Floods the whole image on `1 - fg` from positives then negatives and
/// splits the regions by marker polarity.
///
/// `pred` only has to match the map's shape; the landscape comes from `prob`
/// so that confidence orders the flood, which reduces to uniform flooding on
/// a hard mask.
pub fn selective_watershed(
    pred: &BinaryMask,
    prob: &ProbabilityMap,
    ann: &AnnotationSet,
) -> Result<RegionSet, WatershedError> {
    if pred.shape() != prob.shape() {
        return Err(WatershedError::ShapeMismatch {
            mask: pred.shape(),
            map: prob.shape(),
        });
    }
    let (h, w) = prob.shape();
    let landscape: Vec<f64> = prob.foreground().iter().map(|f| 1.0 - f).collect();
    let markers: Vec<PixelCoord> = ann.positives.iter().chain(&ann.negatives).copied().collect();
    let flood = watershed(&landscape, &markers, &BinaryMask::filled(h, w))?;
    let n_pos = ann.positives.len();
    let positive_regions = (0..n_pos).map(|m| flood.region(m)).collect();
    let negative_regions = (n_pos..markers.len()).map(|m| flood.region(m)).collect();
    Ok(RegionSet {
        flood,
        positive_regions,
        negative_regions,
    })
}

/// Eroded positive and negative regions: where each instance may grow and
/// where background is enforced.
pub fn expandable_regions(
    pred: &BinaryMask,
    prob: &ProbabilityMap,
    ann: &AnnotationSet,
    mode: ErosionMode,
) -> Result<(Vec<BinaryMask>, Vec<BinaryMask>), WatershedError> {
    let regions = selective_watershed(pred, prob, ann)?;
    let n_pos = regions.positive_regions.len();
    let all: Vec<BinaryMask> = regions
        .positive_regions
        .into_iter()
        .chain(regions.negative_regions)
        .collect();
    let mut eroded = match mode {
        ErosionMode::PerRegion => erode_regions(&all)?,
        ErosionMode::Union => erode_regions_union(&all)?,
    };
    let neg = eroded.split_off(n_pos);
    Ok((eroded, neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(u: usize, v: usize) -> PixelCoord {
        PixelCoord::new(u, v)
    }

    #[test]
    fn single_marker_takes_connected_domain() {
        let domain = BinaryMask::from_ascii(&["###.", "#...", "#..#"]);
        let flood = watershed(&[0.3; 12], &[p(0, 1)], &domain).unwrap();
        assert_eq!(flood.region(0).count(), 5);
        assert_eq!(flood.labels.get(2, 3), 0);
    }

    #[test]
    fn fifo_tie_break_on_a_line() {
        let flood = watershed(&[0.0; 5], &[p(0, 0), p(0, 4)], &BinaryMask::filled(1, 5)).unwrap();
        assert_eq!(flood.labels.labels(), &[1, 1, 1, 2, 2]);
    }

    #[test]
    fn disconnected_domains() {
        let domain = BinaryMask::from_ascii(&["##.##", "##.##"]);
        let flood = watershed(&[1.0; 10], &[p(0, 0), p(1, 4)], &domain).unwrap();
        assert_eq!(flood.region(0), BinaryMask::from_ascii(&["##...", "##..."]));
        assert_eq!(flood.region(1), BinaryMask::from_ascii(&["...##", "...##"]));
    }

    #[test]
    fn lower_heights_flood_first() {
        // Valley at column 3 lets marker 0 pass through before marker 1 arrives.
        let land = [0.0, 0.5, 0.5, 0.1, 0.9, 0.0];
        let flood = watershed(&land, &[p(0, 0), p(0, 5)], &BinaryMask::filled(1, 6)).unwrap();
        assert_eq!(flood.labels.labels(), &[1, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn marker_errors() {
        let domain = BinaryMask::from_ascii(&["#."]);
        assert_eq!(watershed(&[0.0; 2], &[], &domain), Err(WatershedError::NoMarkers));
        assert!(matches!(
            watershed(&[0.0; 2], &[p(0, 1)], &domain),
            Err(WatershedError::MarkerOutsideDomain { marker: 0, .. })
        ));
        assert!(matches!(
            watershed(&[0.0; 2], &[p(0, 0), p(0, 0)], &domain),
            Err(WatershedError::DuplicateMarker { .. })
        ));
    }

    #[test]
    fn selective_single_positive() {
        let prob = ProbabilityMap::uniform(5, 5);
        let pred = BinaryMask::new(5, 5);
        let ann = AnnotationSet::new(vec![p(2, 2)], vec![]);
        let rs = selective_watershed(&pred, &prob, &ann).unwrap();
        assert_eq!(rs.positive_regions, vec![BinaryMask::filled(5, 5)]);
        assert!(rs.negative_regions.is_empty());
    }

    #[test]
    fn selective_partition_positive_negative() {
        let prob = ProbabilityMap::uniform(6, 7);
        let pred = BinaryMask::new(6, 7);
        let ann = AnnotationSet::new(vec![p(1, 1)], vec![p(4, 5)]);
        let rs = selective_watershed(&pred, &prob, &ann).unwrap();
        let (pos, neg) = (&rs.positive_regions[0], &rs.negative_regions[0]);
        assert!(!pos.intersects(neg));
        assert_eq!(pos.count() + neg.count(), 42);
        assert!(pos.contains(p(1, 1)) && neg.contains(p(4, 5)));
    }

    #[test]
    fn expandable_examples() {
        let prob = ProbabilityMap::uniform(5, 5);
        let pred = BinaryMask::new(5, 5);
        let center = BinaryMask::from_fn(5, 5, |u, v| (1..4).contains(&u) && (1..4).contains(&v));

        let ann = AnnotationSet::new(vec![p(2, 2)], vec![]);
        let (pos, neg) = expandable_regions(&pred, &prob, &ann, ErosionMode::PerRegion).unwrap();
        assert_eq!(pos, vec![center.clone()]);
        assert!(neg.is_empty());

        let ann = AnnotationSet::new(vec![], vec![p(0, 0)]);
        let (pos, neg) = expandable_regions(&pred, &prob, &ann, ErosionMode::PerRegion).unwrap();
        assert!(pos.is_empty());
        assert_eq!(neg, vec![center]);
    }

    proptest! {
        #[test]
        fn uniform_shift_preserves_labels(
            levels in proptest::collection::vec(0u8..16, 48),
            m1 in 0usize..48, m2 in 0usize..48,
            shift in 0u8..8,
        ) {
            prop_assume!(m1 != m2);
            let land: Vec<f64> = levels.iter().map(|&l| l as f64 / 16.0).collect();
            let shifted: Vec<f64> = land.iter().map(|x| x + shift as f64).collect();
            let markers = [p(m1 / 8, m1 % 8), p(m2 / 8, m2 % 8)];
            let domain = BinaryMask::filled(6, 8);
            let a = watershed(&land, &markers, &domain).unwrap();
            let b = watershed(&shifted, &markers, &domain).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
