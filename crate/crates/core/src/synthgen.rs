//! Deterministic synthetic berry scenes: elliptical red berries with radial
//! shading on a textured green-brown canopy, leaf distractors (some of them
//! reddened), leaf occluders over berry rims, berry-wise visible instance
//! masks, and point annotations placed the way human annotators are asked to.
//!
//! All randomness flows from [`SceneConfig::seed`] through one ChaCha8 stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::{connected_components, InstanceLabelMap};
use crate::types::{AnnotationSet, BinaryMask, ImageRGB, PixelCoord};

/// Background candidates drawn per negative point.
pub const NEGATIVE_CANDIDATES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    ConfigInvalid(String),
    #[error("mask has no background pixel to place negative points on")]
    NoBackgroundPixels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range the berry count is drawn from.
    pub berry_count_range: (usize, usize),
    /// Inclusive range of the berries' major semi-axis, in pixels.
    pub radius_range: (f64, f64),
    /// Chance that a berry gets a leaf over part of its rim.
    pub occluder_probability: f64,
    pub distractor_count_range: (usize, usize),
    /// Fraction of distractor leaves that are tinted red.
    pub red_leaf_fraction: f64,
    /// Keep berry centres at least `2 * r_max + 1` apart so no two berries touch.
    pub separated: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            berry_count_range: (3, 8),
            radius_range: (3.5, 6.0),
            occluder_probability: 0.3,
            distractor_count_range: (2, 5),
            red_leaf_fraction: 0.3,
            separated: false,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::ConfigInvalid(m.to_string()));
        let (r_min, r_max) = self.radius_range;
        if self.berry_count_range.0 > self.berry_count_range.1 {
            return bad("berry count range is empty");
        }
        if self.distractor_count_range.0 > self.distractor_count_range.1 {
            return bad("distractor count range is empty");
        }
        if !(r_min.is_finite() && r_max.is_finite()) || r_min < 2.0 || r_min > r_max {
            return bad("radius range must satisfy 2 <= r_min <= r_max");
        }
        if (self.height as f64) < 2.0 * r_max + 1.0 || (self.width as f64) < 2.0 * r_max + 1.0 {
            return bad("berries of radius r_max do not fit inside the frame");
        }
        for (name, p) in [
            ("occluder probability", self.occluder_probability),
            ("red leaf fraction", self.red_leaf_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::ConfigInvalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: ImageRGB,
    /// Visible berry pixels, labels `1..=count` in placement order.
    pub instance_mask: InstanceLabelMap,
    pub count: usize,
    pub annotations: AnnotationSet,
}

/// Mixes a master seed with an index (splitmix64 finaliser).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cu: f64,
    cv: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, cu: f64, cv: f64, a: f64, ratio: (f64, f64)) -> Self {
        let b = a * rng.random_range(ratio.0..=ratio.1);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        Self {
            cu,
            cv,
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    /// Squared normalised radius; `<= 1` inside.
    #[inline]
    fn rho2(&self, u: usize, v: usize) -> f64 {
        let (du, dv) = (u as f64 - self.cu, v as f64 - self.cv);
        let x = du * self.cos + dv * self.sin;
        let y = -du * self.sin + dv * self.cos;
        (x / self.a).powi(2) + (y / self.b).powi(2)
    }

    fn bbox(&self, h: usize, w: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let r = self.a.max(self.b).ceil() + 1.0;
        let lo = |c: f64| (c - r).max(0.0) as usize;
        let hi = |c: f64, n: usize| ((c + r + 1.0).max(0.0) as usize).min(n);
        (lo(self.cu)..hi(self.cu, h), lo(self.cv)..hi(self.cv, w))
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn jitter(rng: &mut ChaCha8Rng, c: [f64; 3], amount: f64) -> [f64; 3] {
    c.map(|x| x + rng.random_range(-amount..=amount))
}

/// Smooth value noise in `[0, 1]`: random lattice values, bilinearly interpolated.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (fu, fv) = (u as f64 / cell as f64, v as f64 / cell as f64);
            let (iu, iv) = (fu as usize, fv as usize);
            let (tu, tv) = (fu - iu as f64, fv - iv as f64);
            let at = |a: usize, b: usize| lattice[a * gw + b];
            let top = at(iu, iv) * (1.0 - tv) + at(iu, iv + 1) * tv;
            let bottom = at(iu + 1, iv) * (1.0 - tv) + at(iu + 1, iv + 1) * tv;
            out.push(top * (1.0 - tu) + bottom * tu);
        }
    }
    out
}

const CANOPY_GREEN: [f64; 3] = [0.20, 0.36, 0.13];
const CANOPY_BROWN: [f64; 3] = [0.36, 0.27, 0.14];
const LEAF_GREEN: [f64; 3] = [0.16, 0.46, 0.12];
const LEAF_RED: [f64; 3] = [0.52, 0.16, 0.10];

fn paint_leaf(image: &mut ImageRGB, leaf: &Ellipse, color: [f64; 3], mut on_pixel: impl FnMut(usize, usize)) {
    let (rows, cols) = leaf.bbox(image.height(), image.width());
    for u in rows {
        for v in cols.clone() {
            let rho2 = leaf.rho2(u, v);
            if rho2 <= 1.0 {
                // Darker midrib and edges.
                let shade = 0.85 + 0.15 * (1.0 - rho2);
                image.set(u, v, color.map(|c| c * shade));
                on_pixel(u, v);
            }
        }
    }
}

/// Renders one scene. Deterministic in `config`.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene, SynthError> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut image = ImageRGB::zeros(h, w);

    // Canopy texture.
    let coarse = value_noise(&mut rng, h, w, 16);
    let fine = value_noise(&mut rng, h, w, 4);
    for u in 0..h {
        for v in 0..w {
            let i = u * w + v;
            let t = (0.7 * coarse[i] + 0.3 * fine[i]).clamp(0.0, 1.0);
            let base = mix(CANOPY_GREEN, CANOPY_BROWN, t);
            let c = jitter(&mut rng, base, 0.035);
            image.set(u, v, c);
        }
    }

    // Distractor leaves lie under the berries.
    let n_leaves = rng.random_range(config.distractor_count_range.0..=config.distractor_count_range.1);
    for _ in 0..n_leaves {
        let a = rng.random_range(3.0..=7.0);
        let cu = rng.random_range(0.0..h as f64);
        let cv = rng.random_range(0.0..w as f64);
        let leaf = Ellipse::random(&mut rng, cu, cv, a, (0.3, 0.5));
        let red = rng.random_bool(config.red_leaf_fraction);
        let color = jitter(&mut rng, if red { LEAF_RED } else { LEAF_GREEN }, 0.04);
        paint_leaf(&mut image, &leaf, color, |_, _| {});
    }

    // Berries.
    let (r_min, r_max) = config.radius_range;
    let n_berries = rng.random_range(config.berry_count_range.0..=config.berry_count_range.1);
    let mut berries: Vec<Ellipse> = Vec::with_capacity(n_berries);
    for _ in 0..n_berries {
        let mut placed = None;
        for _attempt in 0..200 {
            let a = rng.random_range(r_min..=r_max);
            let cu = rng.random_range(a..=(h as f64 - 1.0 - a));
            let cv = rng.random_range(a..=(w as f64 - 1.0 - a));
            let clear = berries.iter().all(|o| {
                let d = (o.cu - cu).hypot(o.cv - cv);
                if config.separated {
                    d >= 2.0 * r_max + 1.0
                } else {
                    d >= 0.8 * (a + o.a)
                }
            });
            if clear {
                placed = Some(Ellipse::random(&mut rng, cu, cv, a, (0.7, 1.0)));
                break;
            }
        }
        match placed {
            Some(e) => berries.push(e),
            None => break,
        }
    }

    let mut owner = vec![0u32; h * w];
    let mut footprint = BinaryMask::new(h, w);
    for (k, berry) in berries.iter().enumerate() {
        let albedo = [
            rng.random_range(0.62..=0.88),
            rng.random_range(0.06..=0.18),
            rng.random_range(0.06..=0.16),
        ];
        // Specular spot offset towards the top-left.
        let (hu, hv) = (berry.cu - 0.35 * berry.a, berry.cv - 0.35 * berry.a);
        let spot = (0.35 * berry.a).max(1.0);
        let (rows, cols) = berry.bbox(h, w);
        for u in rows {
            for v in cols.clone() {
                let rho2 = berry.rho2(u, v);
                if rho2 > 1.0 {
                    continue;
                }
                let shade = 1.0 - 0.5 * rho2;
                let d2 = (u as f64 - hu).powi(2) + (v as f64 - hv).powi(2);
                let gloss = 0.22 * (-d2 / (spot * spot)).exp();
                image.set(u, v, albedo.map(|c| c * shade + gloss));
                owner[u * w + v] = k as u32 + 1;
                footprint.set(u, v, true);
            }
        }
    }

    // Occluding leaves over berry rims.
    let mut occluder_colors = vec![None; berries.len()];
    for (k, berry) in berries.iter().enumerate() {
        if !rng.random_bool(config.occluder_probability) {
            continue;
        }
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let cu = berry.cu + berry.a * phi.cos();
        let cv = berry.cv + berry.a * phi.sin();
        let a = rng.random_range(0.5 * berry.a..=berry.a);
        let leaf = Ellipse::random(&mut rng, cu, cv, a, (0.35, 0.5));
        let color = jitter(&mut rng, LEAF_GREEN, 0.04);
        occluder_colors[k] = Some(color);
        paint_leaf(&mut image, &leaf, color, |u, v| owner[u * w + v] = 0);
    }

    // Keep each berry's largest visible piece; leftover slivers are painted as leaf.
    let mut labels = vec![0u32; h * w];
    let mut count = 0u32;
    for k in 0..berries.len() as u32 {
        let visible = BinaryMask::from_vec(h, w, owner.iter().map(|&o| o == k + 1).collect())
            .expect("owner buffer matches frame");
        let pieces = connected_components(&visible);
        if pieces.num_labels() == 0 {
            continue;
        }
        let mut sizes = vec![0usize; pieces.num_labels() + 1];
        for &l in pieces.labels() {
            sizes[l as usize] += 1;
        }
        let keep = (1..sizes.len()).max_by_key(|&l| (sizes[l], std::cmp::Reverse(l))).unwrap() as u32;
        count += 1;
        let sliver_color = occluder_colors[k as usize].unwrap_or(LEAF_GREEN);
        for (i, &l) in pieces.labels().iter().enumerate() {
            if l == keep {
                labels[i] = count;
            } else if l != 0 {
                image.set(i / w, i % w, sliver_color);
            }
        }
    }

    // Quantise to 8-bit levels so the in-memory scene equals its PNG.
    let quantised: Vec<f64> = image.data().iter().map(|x| (x * 255.0).round() / 255.0).collect();
    let image = ImageRGB::new(h, w, quantised).expect("clamped values stay in range");
    let instance_mask = InstanceLabelMap::new(h, w, labels).expect("labels are consecutive");

    let annotations = sample_annotations_avoiding(
        &instance_mask,
        Some(&footprint),
        &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xA770)),
    )?;
    Ok(Scene {
        image,
        instance_mask,
        count: count as usize,
        annotations,
    })
}

/// One positive at each instance's visible centroid (snapped onto the
/// instance) and as many negatives, each the best of
/// [`NEGATIVE_CANDIDATES`] background draws by distance to the nearest positive.
pub fn sample_annotations(mask: &InstanceLabelMap, seed: u64) -> Result<AnnotationSet, SynthError> {
    sample_annotations_avoiding(mask, None, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sample_annotations_avoiding(
    mask: &InstanceLabelMap,
    avoid: Option<&BinaryMask>,
    rng: &mut ChaCha8Rng,
) -> Result<AnnotationSet, SynthError> {
    let (h, w) = mask.shape();
    let k = mask.num_labels();
    if k == 0 {
        return Ok(AnnotationSet::default());
    }

    let mut members: Vec<Vec<PixelCoord>> = vec![Vec::new(); k];
    for u in 0..h {
        for v in 0..w {
            let l = mask.get(u, v);
            if l != 0 {
                members[l as usize - 1].push(PixelCoord::new(u, v));
            }
        }
    }
    let positives: Vec<PixelCoord> = members
        .iter()
        .map(|pixels| {
            let n = pixels.len() as f64;
            let cu = pixels.iter().map(|p| p.u as f64).sum::<f64>() / n;
            let cv = pixels.iter().map(|p| p.v as f64).sum::<f64>() / n;
            *pixels
                .iter()
                .min_by(|a, b| {
                    let da = (a.u as f64 - cu).powi(2) + (a.v as f64 - cv).powi(2);
                    let db = (b.u as f64 - cu).powi(2) + (b.v as f64 - cv).powi(2);
                    da.total_cmp(&db)
                })
                .expect("labels are non-empty")
        })
        .collect();

    let mut background: Vec<PixelCoord> = (0..h * w)
        .map(|i| PixelCoord::new(i / w, i % w))
        .filter(|p| mask.get(p.u, p.v) == 0 && avoid.is_none_or(|m| !m.contains(*p)))
        .collect();
    if background.is_empty() {
        // Fall back to the visible background when occluded footprints cover it all.
        background = (0..h * w)
            .map(|i| PixelCoord::new(i / w, i % w))
            .filter(|p| mask.get(p.u, p.v) == 0)
            .collect();
    }
    if background.is_empty() {
        return Err(SynthError::NoBackgroundPixels);
    }

    let nearest_positive = |p: PixelCoord| {
        positives
            .iter()
            .map(|q| (p.u as f64 - q.u as f64).hypot(p.v as f64 - q.v as f64))
            .fold(f64::INFINITY, f64::min)
    };
    // Drawn without replacement so no two negatives share a pixel.
    let mut negatives = Vec::with_capacity(positives.len());
    while negatives.len() < positives.len() && !background.is_empty() {
        let mut best_i = rng.random_range(0..background.len());
        let mut best_d = nearest_positive(background[best_i]);
        for _ in 1..NEGATIVE_CANDIDATES {
            let i = rng.random_range(0..background.len());
            let d = nearest_positive(background[i]);
            if d > best_d {
                best_i = i;
                best_d = d;
            }
        }
        negatives.push(background.swap_remove(best_i));
    }

    Ok(AnnotationSet::new(positives, negatives))
}

/// Split percentages for train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 90,
            val: 5,
            test: 5,
        }
    }
}

impl SplitSpec {
    pub fn new(train: u32, val: u32, test: u32) -> Result<Self, SynthError> {
        if train + val + test != 100 {
            return Err(SynthError::ConfigInvalid(format!(
                "split {train}:{val}:{test} does not sum to 100"
            )));
        }
        Ok(Self { train, val, test })
    }

    /// Image counts per split: validation and test are floored, the rest train.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let val = n * self.val as usize / 100;
        let test = n * self.test as usize / 100;
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// A generated scene with its split and derived seed.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub index: usize,
    pub split: Split,
    pub seed: u64,
    pub scene: Scene,
}

/// Generates `n_images` scenes; scene `i` uses seed `derive_seed(config.seed, i)`.
/// The first images go to train, then validation, then test.
pub fn generate_dataset(
    config: &SceneConfig,
    n_images: usize,
    split: SplitSpec,
) -> Result<Vec<DatasetEntry>, SynthError> {
    config.validate()?;
    let (n_train, n_val, _) = split.counts(n_images);
    (0..n_images)
        .map(|index| {
            let seed = derive_seed(config.seed, index as u64);
            let scene = generate_scene(&SceneConfig {
                seed,
                ..config.clone()
            })?;
            let split = if index < n_train {
                Split::Train
            } else if index < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            Ok(DatasetEntry {
                index,
                split,
                seed,
                scene,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene() {
        let scene = generate_scene(&SceneConfig {
            berry_count_range: (0, 0),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(scene.count, 0);
        assert_eq!(scene.instance_mask.num_labels(), 0);
        assert!(scene.annotations.is_empty());
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SceneConfig {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let other = generate_scene(&SceneConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(other.image, generate_scene(&SceneConfig { seed: 42, ..Default::default() }).unwrap().image);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SceneConfig { berry_count_range: (5, 3), ..Default::default() },
            SceneConfig { radius_range: (1.0, 3.0), ..Default::default() },
            SceneConfig { height: 8, ..Default::default() },
            SceneConfig { occluder_probability: 1.5, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(generate_scene(&cfg), Err(SynthError::ConfigInvalid(_))));
        }
    }

    #[test]
    fn centered_disk_positive() {
        let labels = (0..81)
            .map(|i| {
                let (u, v) = (i / 9, i % 9);
                let (a, b) = (u as i64 - 4, v as i64 - 4);
                u32::from(a * a + b * b <= 9)
            })
            .collect();
        let mask = InstanceLabelMap::new(9, 9, labels).unwrap();
        let ann = sample_annotations(&mask, 1).unwrap();
        assert_eq!(ann.positives, vec![PixelCoord::new(4, 4)]);
        assert_eq!(ann.negatives.len(), 1);
        assert_eq!(mask.get(ann.negatives[0].u, ann.negatives[0].v), 0);
    }

    #[test]
    fn all_foreground_has_no_negatives() {
        let mask = InstanceLabelMap::new(2, 2, vec![1; 4]).unwrap();
        assert_eq!(sample_annotations(&mask, 0), Err(SynthError::NoBackgroundPixels));
        assert!(sample_annotations(&InstanceLabelMap::empty(3, 3), 0).unwrap().is_empty());
    }

    #[test]
    fn scene_invariants() {
        for seed in 0..30 {
            let scene = generate_scene(&SceneConfig { seed, ..Default::default() }).unwrap();
            assert_eq!(scene.count, scene.instance_mask.num_labels());
            let ann = &scene.annotations;
            assert!(ann.validate(scene.image.shape()).is_ok());
            assert_eq!(ann.positives.len(), scene.count);
            assert_eq!(ann.negatives.len(), ann.positives.len());
            for (k, p) in ann.positives.iter().enumerate() {
                assert_eq!(scene.instance_mask.get(p.u, p.v), k as u32 + 1);
            }
            for p in &ann.negatives {
                assert_eq!(scene.instance_mask.get(p.u, p.v), 0);
            }
        }
    }

    #[test]
    fn split_counts() {
        assert_eq!(SplitSpec::default().counts(20), (18, 1, 1));
        assert_eq!(SplitSpec::default().counts(240), (216, 12, 12));
        assert!(SplitSpec::new(90, 5, 4).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
