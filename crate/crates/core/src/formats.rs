//! On-disk formats: 8-bit RGB PNG images, 16-bit grayscale PNG instance masks,
//! little-endian PFM probability maps, JSON annotations, the dataset manifest,
//! and CRC-protected network checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::InstanceLabelMap;
use crate::synthgen::{generate_dataset, SceneConfig, Split, SplitSpec, SynthError};
use crate::trainer::network::{ConvLayer, NetworkParams, ARCHITECTURE, KERNEL};
use crate::trainer::{Dataset, Sample};
use crate::types::{AnnotationSet, ImageRGB, MapError, PixelCoord, ProbabilityMap};

pub const MANIFEST_VERSION: &str = "tss-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSSNET01";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("checkpoint CRC mismatch (stored {stored:08x}, computed {computed:08x})")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("checkpoint layer dimensions do not match the network architecture")]
    DimensionMismatch,
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid PFM: {0}")]
    Pfm(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> FormatError + '_ {
    move |source| FormatError::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> FormatError + '_ {
    move |source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(json_err(path))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    serde_json::from_slice(&read_bytes(path)?).map_err(json_err(path))
}

// ---------------------------------------------------------------- images

pub fn save_image(image: &ImageRGB, path: &Path) -> Result<(), FormatError> {
    let (h, w) = image.shape();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
        w as u32,
        h as u32,
        image.data().iter().map(|x| (x * 255.0).round() as u8).collect(),
    )
    .expect("buffer length matches dimensions");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    buf.save(path).map_err(image_err(path))
}

pub fn load_image(path: &Path) -> Result<ImageRGB, FormatError> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(ImageRGB::new(h as usize, w as usize, data)?)
}

pub fn save_instance_mask(mask: &InstanceLabelMap, path: &Path) -> Result<(), FormatError> {
    let (h, w) = mask.shape();
    if mask.num_labels() > u16::MAX as usize {
        return Err(FormatError::Manifest(format!(
            "{} instances do not fit a 16-bit mask",
            mask.num_labels()
        )));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, mask.labels().iter().map(|&l| l as u16).collect())
            .expect("buffer length matches dimensions");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    buf.save(path).map_err(image_err(path))
}

pub fn load_instance_mask(path: &Path) -> Result<InstanceLabelMap, FormatError> {
    let img = image::open(path).map_err(image_err(path))?.to_luma16();
    let (w, h) = img.dimensions();
    let labels = img.into_raw().into_iter().map(u32::from).collect();
    Ok(InstanceLabelMap::new(h as usize, w as usize, labels)?)
}

// ---------------------------------------------------------------- PFM

/// Encodes the foreground channel as a single-channel little-endian PFM
/// (`Pf`, scale `-1.0`, rows stored bottom to top).
pub fn encode_pfm(map: &ProbabilityMap) -> Vec<u8> {
    let (h, w) = map.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for u in (0..h).rev() {
        for &f in &map.foreground()[u * w..(u + 1) * w] {
            out.extend_from_slice(&(f as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes a single-channel PFM of foreground probabilities; background is `1 - fg`.
pub fn decode_pfm(bytes: &[u8]) -> Result<ProbabilityMap, FormatError> {
    let bad = |m: &str| FormatError::Pfm(m.to_string());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "Pf" {
        return Err(bad("only single-channel 'Pf' maps are supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f32 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let raster = bytes.get(pos..).ok_or_else(|| bad("truncated raster"))?;
    if raster.len() != w * h * 4 {
        return Err(bad("raster length does not match dimensions"));
    }
    let mut fg = vec![0.0; w * h];
    for (k, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let value = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row_from_bottom, v) = (k / w, k % w);
        fg[(h - 1 - row_from_bottom) * w + v] = value as f64;
    }
    Ok(ProbabilityMap::from_foreground(h, w, fg)?)
}

pub fn save_pfm(map: &ProbabilityMap, path: &Path) -> Result<(), FormatError> {
    write_bytes(path, &encode_pfm(map))
}

pub fn load_pfm(path: &Path) -> Result<ProbabilityMap, FormatError> {
    decode_pfm(&read_bytes(path)?)
}

// ---------------------------------------------------------------- annotations

/// `{"image": str, "positives": [[u, v], ...], "negatives": [[u, v], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub image: String,
    pub positives: Vec<PixelCoord>,
    pub negatives: Vec<PixelCoord>,
}

impl AnnotationFile {
    pub fn new(image: impl Into<String>, ann: &AnnotationSet) -> Self {
        Self {
            image: image.into(),
            positives: ann.positives.clone(),
            negatives: ann.negatives.clone(),
        }
    }

    pub fn annotations(&self) -> AnnotationSet {
        AnnotationSet::new(self.positives.clone(), self.negatives.clone())
    }
}

pub fn save_annotations(file: &AnnotationFile, path: &Path) -> Result<(), FormatError> {
    write_json(path, file)
}

pub fn load_annotations(path: &Path) -> Result<AnnotationFile, FormatError> {
    read_json(path)
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub split: Split,
    /// Paths are relative to the dataset directory.
    pub image: String,
    pub mask: String,
    pub annotations: String,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub scene_config: SceneConfig,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn split_len(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }
}

/// Generates and writes `n_images` scenes under `dir/{train,val,test}/` plus
/// `dir/manifest.json`.
pub fn write_dataset(
    config: &SceneConfig,
    n_images: usize,
    split: SplitSpec,
    dir: &Path,
) -> Result<DatasetManifest, FormatError> {
    let entries = generate_dataset(config, n_images, split)?;
    let mut records = Vec::with_capacity(entries.len());
    for e in &entries {
        let stem = format!("{}/{:05}", e.split.as_str(), e.index);
        let rec = ManifestRecord {
            split: e.split,
            image: format!("{stem}.png"),
            mask: format!("{stem}_mask.png"),
            annotations: format!("{stem}.json"),
            count: e.scene.count,
            seed: e.seed,
        };
        save_image(&e.scene.image, &dir.join(&rec.image))?;
        save_instance_mask(&e.scene.instance_mask, &dir.join(&rec.mask))?;
        let image_name = format!("{:05}.png", e.index);
        save_annotations(&AnnotationFile::new(image_name, &e.scene.annotations), &dir.join(&rec.annotations))?;
        records.push(rec);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION.to_string(),
        scene_config: config.clone(),
        records,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, FormatError> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(FormatError::Manifest(format!(
            "unsupported version '{}', expected '{MANIFEST_VERSION}'",
            manifest.version
        )));
    }
    for r in &manifest.records {
        for f in [&r.image, &r.mask, &r.annotations] {
            if !dir.join(f).is_file() {
                return Err(FormatError::Manifest(format!("missing file {f}")));
            }
        }
    }
    Ok(manifest)
}

pub fn load_record(dir: &Path, record: &ManifestRecord) -> Result<Sample, FormatError> {
    let image = load_image(&dir.join(&record.image))?;
    let mask = load_instance_mask(&dir.join(&record.mask))?;
    if mask.shape() != image.shape() {
        return Err(FormatError::Manifest(format!("{}: mask and image shapes differ", record.mask)));
    }
    let annotations = load_annotations(&dir.join(&record.annotations))?.annotations();
    annotations
        .validate(image.shape())
        .map_err(|e| FormatError::Manifest(format!("{}: {e}", record.annotations)))?;
    Ok(Sample {
        name: record.image.clone(),
        image,
        annotations,
        gt_mask: mask.foreground(),
        count: record.count,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, FormatError> {
    let manifest = load_manifest(dir)?;
    let mut ds = Dataset::default();
    for r in &manifest.records {
        ds.split_mut(r.split).push(load_record(dir, r)?);
    }
    Ok(ds)
}

// ---------------------------------------------------------------- checkpoints

/// Layout: magic, `u32` layer count, `(in, out, kernel)` per layer as `u32`,
/// then weights and biases of every layer as `f32`, then a CRC-32 of all
/// preceding bytes. Everything little-endian.
pub fn encode_checkpoint(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + 12 * params.layers.len() + 4 * params.num_params() + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        for d in [l.in_channels, l.out_channels, KERNEL] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for x in params.iter() {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkParams, CheckpointError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::CrcMismatch { stored, computed });
    }

    let mut cursor = 8;
    let next_u32 = |cursor: &mut usize| -> Result<u32, CheckpointError> {
        let b = body.get(*cursor..*cursor + 4).ok_or(CheckpointError::Truncated)?;
        *cursor += 4;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    };
    let n_layers = next_u32(&mut cursor)? as usize;
    if n_layers != ARCHITECTURE.len() {
        return Err(CheckpointError::DimensionMismatch);
    }
    for &(i, o) in &ARCHITECTURE {
        let dims = [next_u32(&mut cursor)?, next_u32(&mut cursor)?, next_u32(&mut cursor)?];
        if dims != [i as u32, o as u32, KERNEL as u32] {
            return Err(CheckpointError::DimensionMismatch);
        }
    }
    let mut params = NetworkParams::zeros();
    let needed = 4 * params.num_params();
    let payload = body.get(cursor..cursor + needed).ok_or(CheckpointError::Truncated)?;
    if body.len() > cursor + needed {
        return Err(CheckpointError::TrailingBytes(body.len() - cursor - needed));
    }
    for (x, chunk) in params.iter_mut().zip(payload.chunks_exact(4)) {
        *x = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
    }
    debug_assert!(params.layers.iter().all(|l: &ConvLayer| l.bias.len() == l.out_channels));
    Ok(params)
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<(), FormatError> {
    write_bytes(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams, FormatError> {
    Ok(decode_checkpoint(&read_bytes(path)?)?)
}

/// Writes one JSON object per line.
pub fn write_json_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<(), FormatError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(json_err(path))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    write_bytes(path, &out)
}
