use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triple_s::losses::{
    circ_loss, convex_loss, count_grad, count_loss, seg_loss, split_loss, total_loss, CountPair,
};
use triple_s::metrics::count_from_mask;
use triple_s::morphology::{connected_components, extract_blobs};
use triple_s::shape::{convexity, huber_z, lsc};
use triple_s::synthgen::{generate_scene, SceneConfig};
use triple_s::types::{
    threshold_prediction, AnnotationSet, BinaryMask, LossWeights, PixelCoord, ProbabilityMap, ShapeKind,
};
use triple_s::watershed::{selective_watershed, watershed};
use tss_oracles as oracle;

fn blob_of(mask: &BinaryMask) -> triple_s::Blob {
    extract_blobs(&connected_components(mask)).remove(0)
}

fn disk(radius: usize) -> BinaryMask {
    let n = 2 * radius + 1;
    let r = radius as i64;
    BinaryMask::from_fn(n, n, |u, v| {
        let (du, dv) = (u as i64 - r, v as i64 - r);
        du * du + dv * dv <= r * r
    })
}

#[test]
fn watershed_partitions_reachable_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let (h, w) = (rng.random_range(2..16), rng.random_range(2..16));
        let landscape: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let domain = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(0.75));
        let cells: Vec<PixelCoord> = domain.pixels().collect();
        if cells.is_empty() {
            continue;
        }
        let mut markers = Vec::new();
        for _ in 0..rng.random_range(1..6) {
            let p = cells[rng.random_range(0..cells.len())];
            if !markers.contains(&p) {
                markers.push(p);
            }
        }
        let flood = watershed(&landscape, &markers, &domain).unwrap();

        // Reachable = domain pixels 4-connected to some marker.
        let (components, _) = oracle::floodfill_cc(h, w, domain.data());
        let seeded: Vec<u32> = markers.iter().map(|m| components[m.index(w)]).collect();
        let regions: Vec<BinaryMask> = (0..markers.len()).map(|m| flood.region(m)).collect();
        for i in 0..h * w {
            let reachable = domain.data()[i] && seeded.contains(&components[i]);
            let owners = regions.iter().filter(|r| r.data()[i]).count();
            assert_eq!(owners, usize::from(reachable), "pixel {i}");
        }
        for (m, p) in markers.iter().enumerate() {
            assert!(regions[m].contains(*p));
        }
    }
}

#[test]
fn selective_regions_are_disjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..200 {
        let (h, w) = (rng.random_range(4..16), rng.random_range(4..16));
        let prob =
            ProbabilityMap::from_foreground(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let mut cells: Vec<PixelCoord> = (0..h * w).map(|i| PixelCoord::new(i / w, i % w)).collect();
        for i in (1..cells.len()).rev() {
            cells.swap(i, rng.random_range(0..=i));
        }
        let (np, nn) = (rng.random_range(0..4), rng.random_range(0..4));
        if np + nn == 0 {
            continue;
        }
        let ann = AnnotationSet::new(cells[..np].to_vec(), cells[np..np + nn].to_vec());
        let set = selective_watershed(&threshold_prediction(&prob), &prob, &ann).unwrap();
        let mut union = BinaryMask::new(h, w);
        for p in &set.positive_regions {
            for n in &set.negative_regions {
                assert!(!p.intersects(n));
            }
        }
        for r in set.positive_regions.iter().chain(&set.negative_regions) {
            assert!(!union.intersects(r));
            union = union.union(r);
        }
        assert_eq!(union.count(), h * w);
    }
}

#[test]
fn rectangles_are_convex() {
    for h in 1..=20 {
        for w in 1..=20 {
            let blob = blob_of(&BinaryMask::filled(h, w));
            assert!((convexity(&blob) - 1.0).abs() < 1e-9, "{h}x{w}");
        }
    }
}

#[test]
fn scaled_rectangles_stay_convex() {
    for k in 1..=4 {
        let blob = blob_of(&BinaryMask::filled(2 * k, 3 * k));
        assert!((convexity(&blob) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn disk_measures_match_oracles() {
    for r in 3..=12 {
        let m = disk(r);
        let blob = blob_of(&m);
        let n = m.height();
        let spread = oracle::boundary_spread(n, n, m.data());
        assert!(spread.agrees_with(&[lsc(&blob)]), "r={r}");
        assert!(lsc(&blob) <= 1.0, "r={r}: {}", lsc(&blob));
        let pixels: Vec<(usize, usize)> = blob.pixels.iter().map(|p| (p.u, p.v)).collect();
        let hull = oracle::pixel_hull_area(&pixels).value();
        assert!((convexity(&blob) - blob.pixel_area as f64 / hull).abs() < 1e-12);
        // Unit-square corners stick out of the disk, more so at small radii.
        assert!(convexity(&blob) > if r >= 9 { 0.9 } else { 0.75 }, "r={r}");
    }
    let r6 = blob_of(&disk(6));
    assert_eq!(r6.pixel_area, 113);
    assert!((r6.hull_area - 129.0).abs() < 1e-9);
    assert_eq!(lsc(&blob_of(&BinaryMask::filled(1, 1))), 0.0);
}

/// 12x12 frame holding a 4x4 block without its corners: every boundary pixel
/// is equally far from the centroid, so the raster berry is exactly round.
fn round_berry_scene() -> (BinaryMask, ProbabilityMap, AnnotationSet) {
    let berry = BinaryMask::from_fn(12, 12, |u, v| {
        (4..8).contains(&u) && (4..8).contains(&v) && !((u == 4 || u == 7) && (v == 4 || v == 7))
    });
    let fg: Vec<f64> = berry.data().iter().map(|&b| if b { 1.0 - 1e-7 } else { 1e-7 }).collect();
    let prob = ProbabilityMap::from_foreground(12, 12, fg).unwrap();
    let ann = AnnotationSet::new(vec![PixelCoord::new(5, 5)], vec![PixelCoord::new(0, 11)]);
    (berry, prob, ann)
}

#[test]
fn zero_at_optimum_for_seg_circ_and_count() {
    let (berry, prob, ann) = round_berry_scene();
    let pred = threshold_prediction(&prob);
    assert_eq!(pred, berry);
    assert_eq!(lsc(&blob_of(&berry)), 0.0);
    assert!(seg_loss(&prob, &ann).value < 1e-3);
    assert!(circ_loss(&prob, &pred).unwrap().value < 1e-3);
    assert_eq!(count_loss(&[CountPair::new(1, count_from_mask(&pred))]).unwrap(), 0.0);
    assert!(count_grad(&prob, &pred, 1).unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn split_pulls_background_band_into_positive_regions() {
    // The flood covers the whole frame, so even a perfect map leaves a
    // background band inside the positive region; the split loss is not zero there.
    let m = disk(3);
    let mut framed = BinaryMask::new(15, 15);
    for p in m.pixels() {
        framed.set(p.u + 4, p.v + 4, true);
    }
    let fg: Vec<f64> = framed.data().iter().map(|&b| if b { 1.0 - 1e-7 } else { 1e-7 }).collect();
    let prob = ProbabilityMap::from_foreground(15, 15, fg).unwrap();
    let ann = AnnotationSet::new(vec![PixelCoord::new(7, 7)], vec![PixelCoord::new(0, 14)]);
    let split = split_loss(&prob, &threshold_prediction(&prob), &ann).unwrap();
    assert!(split.value > 1.0);
    // All penalised pixels are background pulled towards foreground.
    for (i, g) in split.grad.iter().enumerate() {
        if *g < -2.0 {
            assert!(!framed.data()[i]);
        }
    }
}

#[test]
fn total_is_term_by_term_sum() {
    let scene = generate_scene(&SceneConfig { seed: 17, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (h, w) = scene.image.shape();
    let prob = ProbabilityMap::from_foreground(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let pred = threshold_prediction(&prob);
    let ann = &scene.annotations;
    let weights = LossWeights::new(1.0, 1.0, 1.0, 0.0, ShapeKind::Convex).unwrap();
    let report = total_loss(&prob, &pred, ann, scene.count, &weights).unwrap();

    let seg = seg_loss(&prob, ann);
    let split = split_loss(&prob, &pred, ann).unwrap();
    let shape = convex_loss(&prob, &pred).unwrap();
    assert_eq!(report.seg, seg.value);
    assert_eq!(report.split, split.value);
    assert_eq!(report.shape, shape.value);
    assert_eq!(report.count, 0.0);
    assert!((report.total - (seg.value + split.value + shape.value)).abs() < 1e-9 * report.total);
    for i in 0..h * w {
        let expected = seg.grad[i] + split.grad[i] + shape.grad[i];
        assert!((report.grad[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }
}

#[test]
fn count_pairs_match_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let pairs: Vec<CountPair> = (0..50)
        .map(|_| CountPair::new(rng.random_range(0..12), rng.random_range(0..12)))
        .collect();
    let direct: f64 = pairs
        .iter()
        .map(|p| {
            let r = (p.predicted as f64 - p.truth as f64).abs();
            if r < 1.0 {
                0.5 * r * r
            } else {
                r - 0.5
            }
        })
        .sum::<f64>()
        / 50.0;
    assert!((count_loss(&pairs).unwrap() - direct).abs() < 1e-12);
}

#[test]
fn circ_step_reduces_spread_of_spiky_blob() {
    // Disk of radius 4 with a three-pixel tail to the right.
    let mut m = BinaryMask::new(11, 15);
    for p in disk(4).pixels() {
        m.set(p.u + 1, p.v + 1, true);
    }
    for v in 10..13 {
        m.set(5, v, true);
    }
    let fg: Vec<f64> = m.data().iter().map(|&b| if b { 0.6 } else { 0.4 }).collect();
    let prob = ProbabilityMap::from_foreground(11, 15, fg).unwrap();
    let pred = threshold_prediction(&prob);
    let before = lsc(&blob_of(&pred));
    let grad = circ_loss(&prob, &pred).unwrap().grad;
    let stepped: Vec<f64> = prob
        .foreground()
        .iter()
        .zip(&grad)
        .map(|(f, g)| (f - 1.0 * g).clamp(0.0, 1.0))
        .collect();
    let after_pred = threshold_prediction(&ProbabilityMap::from_foreground(11, 15, stepped).unwrap());
    let main = extract_blobs(&connected_components(&after_pred))
        .into_iter()
        .max_by_key(|b| b.pixel_area)
        .unwrap();
    assert!(lsc(&main) < before, "{} -> {}", before, lsc(&main));
}

#[test]
fn huber_residual_derivative_by_differences() {
    let d = oracle::finite_diff(|x| huber_z(x[0], 0.0), &[0.5], 1e-5);
    assert!((d.value() - 0.5).abs() < 1e-6);
}

proptest! {
    #[test]
    fn watershed_ignores_uniform_shift(
        heights in proptest::collection::vec(0u8..8, 36),
        shift in -4i32..4,
    ) {
        let landscape: Vec<f64> = heights.iter().map(|&x| x as f64 / 8.0).collect();
        let shifted: Vec<f64> = landscape.iter().map(|x| x + shift as f64 / 4.0).collect();
        let markers = [PixelCoord::new(0, 0), PixelCoord::new(5, 5), PixelCoord::new(2, 4)];
        let domain = BinaryMask::filled(6, 6);
        prop_assert_eq!(
            watershed(&landscape, &markers, &domain).unwrap(),
            watershed(&shifted, &markers, &domain).unwrap()
        );
    }

    #[test]
    fn total_is_linear_in_weights(seed in any::<u64>(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prob = ProbabilityMap::from_foreground(10, 10, (0..100).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let pred = threshold_prediction(&prob);
        let ann = AnnotationSet::new(vec![PixelCoord::new(2, 2)], vec![PixelCoord::new(8, 8)]);
        let report = |w: LossWeights| total_loss(&prob, &pred, &ann, 2, &w).unwrap();
        let one = report(LossWeights::new(1.0, 1.0, 1.0, 1.0, ShapeKind::Circ).unwrap());
        let scaled = report(LossWeights::new(a, b, a, b, ShapeKind::Circ).unwrap());
        let expected = a * one.seg + b * one.split + a * one.shape + b * one.count;
        prop_assert!((scaled.total - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }
}
