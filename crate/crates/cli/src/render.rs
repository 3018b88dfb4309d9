use std::path::Path;

use image::{Rgb, RgbImage};
use triple_s::types::AnnotationSet;
use triple_s::watershed::RegionSet;

use crate::error::CliError;

const UNREACHED: [u8; 3] = [40, 40, 40];
const POSITIVE: [u8; 3] = [255, 255, 255];
const NEGATIVE: [u8; 3] = [0, 0, 0];

/// Colour for region `label` (1-based): hues spaced by the golden ratio so
/// neighbouring ids stay far apart on the colour wheel.
pub fn region_color(label: u32) -> [u8; 3] {
    if label == 0 {
        return UNREACHED;
    }
    let hue = (label as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.6, 0.9);
    let c = v * s;
    let x = c * (1.0 - (hue % 2.0 - 1.0).abs());
    let (r, g, b) = match hue as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Writes one colour per watershed region with the markers drawn on top
/// (positives white, negatives black).
pub fn save_regions(regions: &RegionSet, ann: &AnnotationSet, path: &Path) -> Result<(), CliError> {
    let labels = regions.labels();
    let (h, w) = labels.shape();
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb(region_color(labels.get(y as usize, x as usize))));
    for p in &ann.positives {
        img.put_pixel(p.v as u32, p.u as u32, Rgb(POSITIVE));
    }
    for p in &ann.negatives {
        img.put_pixel(p.v as u32, p.u as u32, Rgb(NEGATIVE));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    img.save(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colours_are_distinct_and_avoid_marker_colours() {
        let colours: Vec<[u8; 3]> = (0..=64).map(region_color).collect();
        for (i, a) in colours.iter().enumerate() {
            assert_ne!(*a, POSITIVE);
            assert_ne!(*a, NEGATIVE);
            for b in &colours[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }
}
