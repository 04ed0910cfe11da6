//! Sample manifests, class inventories and deterministic k-fold splitting.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentedSampleRecord, CropSpec};
use crate::rng;

/// File name of the JSON Lines manifest written next to augmented outputs.
pub const MANIFEST_FILE: &str = "manifest.jsonl";
/// Sidecar listing the ordered class universe (keeps empty classes visible).
pub const CLASSES_FILE: &str = "classes.json";
pub const DEFAULT_SPLIT_SEED: u64 = 20_210_101;

/// The 32 DIBaS species used for classification (Candida albicans removed),
/// in the dataset's directory naming.
pub const DIBAS_CLASSES: [&str; 32] = [
    "Acinetobacter.baumanii",
    "Actinomyces.israeli",
    "Bacteroides.fragilis",
    "Bifidobacterium.spp",
    "Clostridium.perfringens",
    "Enterococcus.faecalis",
    "Enterococcus.faecium",
    "Escherichia.coli",
    "Fusobacterium",
    "Lactobacillus.casei",
    "Lactobacillus.crispatus",
    "Lactobacillus.delbrueckii",
    "Lactobacillus.gasseri",
    "Lactobacillus.jehnsenii",
    "Lactobacillus.johnsonii",
    "Lactobacillus.paracasei",
    "Lactobacillus.plantarum",
    "Lactobacillus.reuteri",
    "Lactobacillus.rhamnosus",
    "Lactobacillus.salivarius",
    "Listeria.monocytogenes",
    "Micrococcus.spp",
    "Neisseria.gonorrhoeae",
    "Porfyromonas.gingivalis",
    "Propionibacterium.acnes",
    "Proteus",
    "Pseudomonas.aeruginosa",
    "Staphylococcus.aureus",
    "Staphylococcus.epidermidis",
    "Staphylococcus.saprophiticus",
    "Streptococcus.agalactiae",
    "Veionella",
];

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("need at least {n_folds} samples for {n_folds} folds, have {samples}")]
    TooFewSamples { samples: usize, n_folds: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("fold {fold} out of range for {n_folds} folds")]
    FoldOutOfRange { fold: usize, n_folds: usize },
    #[error("fold assignment covers {assigned} samples but manifest has {samples}")]
    AssignmentMismatch { assigned: usize, samples: usize },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// One labelled sample. `group` names the source image an augmented sample
/// was cut from (used only by grouped splitting).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub path: String,
    pub class_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    samples: Vec<Sample>,
    classes: Vec<String>,
    labels: Vec<usize>,
    root: Option<PathBuf>,
}

impl DatasetManifest {
    /// Builds a manifest from `(path, class_label, group)` triples; ids are
    /// assigned in order.
    pub fn new(
        classes: Vec<String>,
        entries: impl IntoIterator<Item = (String, String, Option<String>)>,
    ) -> Result<Self, DatasetError> {
        let index: HashMap<&str, usize> =
            classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        if index.len() != classes.len() {
            return Err(DatasetError::InvalidManifest("duplicate class label".into()));
        }
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (id, (path, class_label, group)) in entries.into_iter().enumerate() {
            let label = *index.get(class_label.as_str()).ok_or_else(|| {
                DatasetError::InvalidManifest(format!("unknown class '{class_label}' for {path}"))
            })?;
            labels.push(label);
            samples.push(Sample { id, path, class_label, group });
        }
        Ok(Self { samples, classes, labels, root: None })
    }

    /// Manifest of augmented outputs; sample paths are the output paths and
    /// groups the source paths.
    pub fn from_records(
        classes: Vec<String>,
        records: &[AugmentedSampleRecord],
    ) -> Result<Self, DatasetError> {
        Self::new(
            classes,
            records.iter().map(|r| {
                (r.output_path.clone(), r.class_label.clone(), Some(r.source_path.clone()))
            }),
        )
    }

    /// Scans a class-per-subdirectory image tree (an un-augmented dataset).
    pub fn scan_directory(root: &Path) -> Result<Self, DatasetError> {
        let classes = list_class_dirs(root)?;
        let mut entries = Vec::new();
        for class in &classes {
            for file in list_images(&root.join(class))? {
                let rel = format!("{class}/{file}");
                entries.push((rel.clone(), class.clone(), Some(rel)));
            }
        }
        Ok(Self::new(classes, entries)?.with_root(root))
    }

    /// Loads either a JSON Lines manifest file (with its optional
    /// `classes.json` sidecar) or, for a directory, scans it as an image tree.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        if path.is_dir() {
            let manifest = path.join(MANIFEST_FILE);
            if manifest.is_file() {
                return Self::load_jsonl(&manifest);
            }
            return Self::scan_directory(path);
        }
        Self::load_jsonl(path)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, DatasetError> {
        let records = read_records(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let sidecar = dir.join(CLASSES_FILE);
        let classes = if sidecar.is_file() {
            let text = fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
            serde_json::from_str(&text)?
        } else {
            let mut c: Vec<String> = records.iter().map(|r| r.class_label.clone()).collect();
            c.sort();
            c.dedup();
            c
        };
        Ok(Self::from_records(classes, &records)?.with_root(dir))
    }

    /// Directory that relative sample paths resolve against.
    pub fn with_root(mut self, root: &Path) -> Self {
        self.root = Some(root.to_path_buf());
        self
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        match &self.root {
            Some(r) => r.join(&sample.path),
            None => PathBuf::from(&sample.path),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Class index of sample `id`.
    pub fn label(&self, id: usize) -> usize {
        self.labels[id]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

fn list_class_dirs(root: &Path) -> Result<Vec<String>, DatasetError> {
    let mut classes = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.file_type().map_err(io_err(root))?.is_dir() {
            classes.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    classes.sort();
    Ok(classes)
}

/// Image files (PNG/TIFF by extension) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<String>, DatasetError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let ext = Path::new(&name)
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if entry.file_type().map_err(io_err(dir))?.is_file()
            && IMAGE_EXTENSIONS.contains(&ext.as_str())
        {
            files.push(name);
        }
    }
    files.sort();
    Ok(files)
}

/// Lists the class sub-directories of `root`, sorted.
pub fn class_directories(root: &Path) -> Result<Vec<String>, DatasetError> {
    list_class_dirs(root)
}

pub fn read_records(path: &Path) -> Result<Vec<AugmentedSampleRecord>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes `records` as JSON Lines plus the `classes.json` sidecar in the same
/// directory.
pub fn write_records(
    path: &Path,
    classes: &[String],
    records: &[AugmentedSampleRecord],
) -> Result<(), DatasetError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err(path))?;
    let sidecar = path.parent().unwrap_or(Path::new(".")).join(CLASSES_FILE);
    let mut f = fs::File::create(&sidecar).map_err(io_err(&sidecar))?;
    serde_json::to_writer_pretty(&mut f, classes)?;
    f.write_all(b"\n").map_err(io_err(&sidecar))?;
    Ok(())
}

/// Sample count per class, in manifest class order.
pub fn class_distribution(m: &DatasetManifest) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; m.classes.len()];
    for &l in &m.labels {
        counts[l] += 1;
    }
    m.classes.iter().cloned().zip(counts).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub seed: u64,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn to_json(&self) -> Result<String, DatasetError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let fa: Self = serde_json::from_str(&text)?;
        if fa.n_folds < 2 {
            return Err(DatasetError::InvalidFoldCount(fa.n_folds));
        }
        if let Some(&bad) = fa.fold_of.iter().find(|&&f| f >= fa.n_folds) {
            return Err(DatasetError::FoldOutOfRange { fold: bad, n_folds: fa.n_folds });
        }
        Ok(fa)
    }

    /// Checks that the assignment covers exactly the manifest's samples.
    pub fn check_against(&self, m: &DatasetManifest) -> Result<(), DatasetError> {
        if self.fold_of.len() != m.len() {
            return Err(DatasetError::AssignmentMismatch {
                assigned: self.fold_of.len(),
                samples: m.len(),
            });
        }
        Ok(())
    }
}

fn check_fold_args(n: usize, n_folds: usize) -> Result<(), DatasetError> {
    if n_folds < 2 {
        return Err(DatasetError::InvalidFoldCount(n_folds));
    }
    if n < n_folds {
        return Err(DatasetError::TooFewSamples { samples: n, n_folds });
    }
    Ok(())
}

/// Shuffles sample ids with a permutation drawn from `seed`, then deals them
/// round-robin into `n_folds` folds (plain, non-stratified).
pub fn kfold_split(
    m: &DatasetManifest,
    n_folds: usize,
    seed: u64,
) -> Result<FoldAssignment, DatasetError> {
    let n = m.len();
    check_fold_args(n, n_folds)?;
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(seed, 0), &mut order);
    let mut fold_of = vec![0; n];
    for (i, id) in order.into_iter().enumerate() {
        fold_of[id] = i % n_folds;
    }
    Ok(FoldAssignment { n_folds, seed, fold_of })
}

/// Like [`kfold_split`] but keeps every sample of one group (source image)
/// in the same fold. Groups are shuffled and each goes to the currently
/// smallest fold, so fold sizes are only approximately balanced.
pub fn kfold_split_grouped(
    m: &DatasetManifest,
    n_folds: usize,
    seed: u64,
) -> Result<FoldAssignment, DatasetError> {
    let mut group_ids: HashMap<&str, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for s in &m.samples {
        let key = s.group.as_deref().unwrap_or(&s.path);
        let g = *group_ids.entry(key).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[g].push(s.id);
    }
    check_fold_args(members.len(), n_folds)?;
    let mut order: Vec<usize> = (0..members.len()).collect();
    rng::shuffle(&mut rng::stream(seed, 0), &mut order);
    let mut sizes = vec![0usize; n_folds];
    let mut fold_of = vec![0; m.len()];
    for g in order {
        let fold = (0..n_folds).min_by_key(|&f| (sizes[f], f)).unwrap_or(0);
        for &id in &members[g] {
            fold_of[id] = fold;
        }
        sizes[fold] += members[g].len();
    }
    Ok(FoldAssignment { n_folds, seed, fold_of })
}

/// Train/test sample ids for fold `k` (test = fold `k`), ascending.
pub fn fold_views(
    m: &DatasetManifest,
    fa: &FoldAssignment,
    k: usize,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if k >= fa.n_folds {
        return Err(DatasetError::FoldOutOfRange { fold: k, n_folds: fa.n_folds });
    }
    fa.check_against(m)?;
    let (test, train): (Vec<usize>, Vec<usize>) = (0..m.len()).partition(|&id| fa.fold_of[id] == k);
    Ok((train, test))
}

/// Whether a record describes an un-cropped (resized original) output.
pub fn is_original(record: &AugmentedSampleRecord) -> bool {
    matches!(record.crop, CropSpec::Original)
}
