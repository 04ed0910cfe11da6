//! Artificial-zoom augmentation.
//!
//! Every source image yields `crops_per_size` random square crops for each
//! configured crop side that fits inside it, each resized to
//! `output_side`², plus the whole image resized to `output_side`². Crop
//! sides larger than the image's shorter edge are skipped.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{self, DatasetError, DatasetManifest, MANIFEST_FILE};
use crate::raster::{self, CropRect, RasterError, RasterImage};
use crate::rng;

pub const DEFAULT_CROP_SIZES: [usize; 7] = [100, 200, 300, 400, 500, 600, 700];
pub const DEFAULT_CROPS_PER_SIZE: usize = 5;
pub const DEFAULT_OUTPUT_SIDE: usize = 224;
pub const DEFAULT_SEED: u64 = 20_210_101;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: RasterError },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct AugmentationConfig {
    crop_sizes: Vec<usize>,
    crops_per_size: usize,
    output_side: usize,
    seed: u64,
}

#[derive(Deserialize)]
struct RawConfig {
    crop_sizes: Vec<usize>,
    crops_per_size: usize,
    output_side: usize,
    seed: u64,
}

impl TryFrom<RawConfig> for AugmentationConfig {
    type Error = AugmentError;

    fn try_from(r: RawConfig) -> Result<Self, Self::Error> {
        Self::new(r.crop_sizes, r.crops_per_size, r.output_side, r.seed)
    }
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_sizes: DEFAULT_CROP_SIZES.to_vec(),
            crops_per_size: DEFAULT_CROPS_PER_SIZE,
            output_side: DEFAULT_OUTPUT_SIDE,
            seed: DEFAULT_SEED,
        }
    }
}

impl AugmentationConfig {
    pub fn new(
        crop_sizes: Vec<usize>,
        crops_per_size: usize,
        output_side: usize,
        seed: u64,
    ) -> Result<Self, AugmentError> {
        if crop_sizes.is_empty() || crop_sizes.contains(&0) {
            return Err(AugmentError::InvalidConfig("crop sizes must be non-empty and > 0".into()));
        }
        if crop_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AugmentError::InvalidConfig("crop sizes must be strictly increasing".into()));
        }
        if crops_per_size == 0 {
            return Err(AugmentError::InvalidConfig("crops_per_size must be >= 1".into()));
        }
        if output_side == 0 {
            return Err(AugmentError::InvalidConfig("output_side must be > 0".into()));
        }
        Ok(Self { crop_sizes, crops_per_size, output_side, seed })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn crop_sizes(&self) -> &[usize] {
        &self.crop_sizes
    }

    pub fn crops_per_size(&self) -> usize {
        self.crops_per_size
    }

    pub fn output_side(&self) -> usize {
        self.output_side
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of outputs (crops + original) for a `w`×`h` source.
    pub fn outputs_for(&self, w: usize, h: usize) -> usize {
        let short = w.min(h);
        1 + self.crops_per_size * self.crop_sizes.iter().filter(|&&s| s <= short).count()
    }
}

/// What an augmented output was cut from: a square crop or the whole image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropSpec {
    Original,
    Rect(CropRect),
}

impl Serialize for CropSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CropSpec::Original => s.serialize_str("original"),
            CropSpec::Rect(r) => r.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for CropSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Tag(String),
            Rect(CropRect),
        }
        match Raw::deserialize(d)? {
            Raw::Tag(t) if t == "original" => Ok(CropSpec::Original),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("unknown crop tag '{t}'"))),
            Raw::Rect(r) => Ok(CropSpec::Rect(r)),
        }
    }
}

/// Provenance of one augmented output. `source_path` is relative to the
/// source root, `output_path` relative to the destination root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedSampleRecord {
    pub source_path: String,
    pub class_label: String,
    pub crop: CropSpec,
    pub output_path: String,
}

/// Crop rectangles for a `img_w`×`img_h` source, drawn from the stream
/// `(cfg.seed, per_image_seed)`. Ordered by crop size, then draw order.
pub fn plan_crops(
    img_w: usize,
    img_h: usize,
    cfg: &AugmentationConfig,
    per_image_seed: u64,
) -> Vec<CropRect> {
    let mut rng = rng::stream(cfg.seed, per_image_seed);
    let short = img_w.min(img_h);
    let mut rects = Vec::new();
    for &side in cfg.crop_sizes.iter().filter(|&&s| s <= short) {
        for _ in 0..cfg.crops_per_size {
            let x = rng::uniform_inclusive(&mut rng, (img_w - side) as u64) as usize;
            let y = rng::uniform_inclusive(&mut rng, (img_h - side) as u64) as usize;
            rects.push(CropRect::new(x, y, side));
        }
    }
    rects
}

/// Crops and resizes one image. The resized original comes last.
pub fn augment_image(
    img: &RasterImage,
    cfg: &AugmentationConfig,
    per_image_seed: u64,
) -> Result<Vec<(RasterImage, CropSpec)>, AugmentError> {
    let side = cfg.output_side;
    let mut out = Vec::new();
    for rect in plan_crops(img.width(), img.height(), cfg, per_image_seed) {
        let cropped = raster::crop(img, rect)?;
        out.push((raster::lanczos_resize(&cropped, side, side)?, CropSpec::Rect(rect)));
    }
    out.push((raster::lanczos_resize(img, side, side)?, CropSpec::Original));
    Ok(out)
}

/// Per-image seed derived from the source path relative to the source root.
pub fn per_image_seed(relative_source: &str) -> u64 {
    rng::stable_hash(relative_source)
}

/// Result of augmenting a whole tree.
#[derive(Debug, Clone)]
pub struct AugmentRun {
    pub classes: Vec<String>,
    pub records: Vec<AugmentedSampleRecord>,
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
}

fn output_name(stem: &str, crop: &CropSpec, index: usize) -> String {
    match crop {
        CropSpec::Original => format!("{stem}__orig.png"),
        CropSpec::Rect(r) => format!("{stem}__s{}_{index:02}.png", r.side),
    }
}

fn augment_one(
    src_root: &Path,
    dst_root: &Path,
    class: &str,
    file: &str,
    cfg: &AugmentationConfig,
) -> Result<Vec<AugmentedSampleRecord>, AugmentError> {
    let rel = format!("{class}/{file}");
    let path = src_root.join(class).join(file);
    let bytes = fs::read(&path).map_err(dataset::io_err(&path))?;
    let img = raster::decode_image(&bytes)
        .map_err(|source| AugmentError::Image { path: path.clone(), source })?;
    let stem = Path::new(file).file_stem().map(|s| s.to_string_lossy().into_owned());
    let stem = stem.unwrap_or_else(|| file.to_string());
    let outputs = augment_image(&img, cfg, per_image_seed(&rel))?;
    let mut records = Vec::with_capacity(outputs.len());
    for (i, (image, crop)) in outputs.iter().enumerate() {
        let out_rel = format!("{class}/{}", output_name(&stem, crop, i));
        let out_path = dst_root.join(&out_rel);
        let png = raster::encode_png(image)
            .map_err(|source| AugmentError::Image { path: out_path.clone(), source })?;
        fs::write(&out_path, png).map_err(dataset::io_err(&out_path))?;
        records.push(AugmentedSampleRecord {
            source_path: rel.clone(),
            class_label: class.to_string(),
            crop: *crop,
            output_path: out_rel,
        });
    }
    Ok(records)
}

/// Augments every image of a class-per-directory tree into `dst_root`,
/// writing PNG outputs, `manifest.jsonl` and `classes.json`.
///
/// Images are processed on the current rayon pool; the manifest is ordered
/// by source path regardless of scheduling.
pub fn augment_dataset(
    src_root: &Path,
    dst_root: &Path,
    cfg: &AugmentationConfig,
) -> Result<AugmentRun, AugmentError> {
    let classes = dataset::class_directories(src_root)?;
    let mut jobs = Vec::new();
    for class in &classes {
        let out_dir = dst_root.join(class);
        fs::create_dir_all(&out_dir).map_err(dataset::io_err(&out_dir))?;
        for file in dataset::list_images(&src_root.join(class))? {
            jobs.push((class.clone(), file));
        }
    }
    jobs.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    let per_image: Vec<Vec<AugmentedSampleRecord>> = jobs
        .par_iter()
        .map(|(class, file)| augment_one(src_root, dst_root, class, file, cfg))
        .collect::<Result<_, _>>()?;
    let records: Vec<AugmentedSampleRecord> = per_image.into_iter().flatten().collect();
    let manifest_path = dst_root.join(MANIFEST_FILE);
    dataset::write_records(&manifest_path, &classes, &records)?;
    let manifest = DatasetManifest::from_records(classes.clone(), &records)?.with_root(dst_root);
    Ok(AugmentRun { classes, records, manifest, manifest_path })
}
