use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::TrainError;
use crate::dataset::DatasetManifest;
use crate::nn::{Float, Tensor};
use crate::raster::{decode_image, lanczos_resize, RasterImage};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Labelled images addressed by sample id.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_classes(&self) -> usize;

    fn label(&self, id: usize) -> usize;

    /// Planar `(3, side, side)` network input for sample `id`.
    fn load(&self, id: usize) -> Result<Vec<Float>, TrainError>;

    fn side(&self) -> usize;

    /// `(N, 3, side, side)` batch and labels for `ids`, loaded in parallel.
    fn batch(&self, ids: &[usize]) -> Result<(Tensor, Vec<usize>), TrainError> {
        let side = self.side();
        let images: Vec<Vec<Float>> = ids.par_iter().map(|&i| self.load(i)).collect::<Result<_, _>>()?;
        let data = images.concat();
        let labels = ids.iter().map(|&i| self.label(i)).collect();
        Ok((Tensor::new(vec![ids.len(), 3, side, side], data)?, labels))
    }
}

/// Pre-decoded samples held in memory.
#[derive(Debug, Clone)]
pub struct InMemorySource {
    images: Vec<Vec<Float>>,
    labels: Vec<usize>,
    num_classes: usize,
    side: usize,
}

impl InMemorySource {
    pub fn new(images: Vec<Vec<Float>>, labels: Vec<usize>, num_classes: usize, side: usize) -> Result<Self, TrainError> {
        if images.len() != labels.len() {
            return Err(TrainError::Config(format!("{} images for {} labels", images.len(), labels.len())));
        }
        if let Some(i) = images.iter().position(|im| im.len() != 3 * side * side) {
            return Err(TrainError::Config(format!("image {i} is not 3x{side}x{side}")));
        }
        if let Some(&t) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(TrainError::TargetOutOfRange { target: t, classes: num_classes });
        }
        Ok(Self { images, labels, num_classes, side })
    }
}

impl SampleSource for InMemorySource {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn label(&self, id: usize) -> usize {
        self.labels[id]
    }

    fn load(&self, id: usize) -> Result<Vec<Float>, TrainError> {
        Ok(self.images[id].clone())
    }

    fn side(&self) -> usize {
        self.side
    }
}

/// Planar, per-channel ImageNet-standardised copy of `img`.
pub fn normalize_imagenet(img: &RasterImage) -> Vec<Float> {
    let planar = img.to_planar();
    let hw = img.width() * img.height();
    planar
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / hw.max(1);
            ((v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]) as Float
        })
        .collect()
}

/// Samples decoded from the files a manifest names, resized to `side` with
/// Lanczos when needed and ImageNet-standardised.
#[derive(Debug, Clone)]
pub struct DiskSource {
    manifest: DatasetManifest,
    side: usize,
}

impl DiskSource {
    pub fn new(manifest: DatasetManifest, side: usize) -> Result<Self, TrainError> {
        if side == 0 {
            return Err(TrainError::Config("input side must be positive".into()));
        }
        Ok(Self { manifest, side })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn read(&self, path: &Path) -> Result<RasterImage, TrainError> {
        let bytes = fs::read(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        let img = decode_image(&bytes).map_err(|source| TrainError::Image { path: path.to_path_buf(), source })?;
        if img.width() == self.side && img.height() == self.side {
            return Ok(img);
        }
        lanczos_resize(&img, self.side, self.side).map_err(|source| TrainError::Image { path: path.to_path_buf(), source })
    }
}

impl SampleSource for DiskSource {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn num_classes(&self) -> usize {
        self.manifest.classes().len()
    }

    fn label(&self, id: usize) -> usize {
        self.manifest.label(id)
    }

    fn load(&self, id: usize) -> Result<Vec<Float>, TrainError> {
        let path = self.manifest.resolve(&self.manifest.samples()[id]);
        Ok(normalize_imagenet(&self.read(&path)?))
    }

    fn side(&self) -> usize {
        self.side
    }
}
