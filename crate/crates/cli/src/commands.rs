use std::fs;
use std::path::{Path, PathBuf};

use artzoom::augment::{augment_dataset, AugmentationConfig, DEFAULT_SEED};
use artzoom::dataset::{
    class_distribution, kfold_split, kfold_split_grouped, DatasetManifest, FoldAssignment, DEFAULT_SPLIT_SEED,
};
use artzoom::metrics::{format_params, render_report, MetricReport, ReportInput};
use artzoom::nn::{build_architecture, Architecture, ArchitectureSpec, DEFAULT_INPUT_SIDE};
use artzoom::train::{run_cross_validation, CvOptions, DiskSource, TrainConfig};

use crate::config::{AugmentSection, EvalSection, ParamsSection, ReportSection, RunConfig, SplitSection};
use crate::exit::Failure;
use crate::{AugmentArgs, EvalArgs, Mode, ParamsArgs, ReportArgs, SplitArgs};

const DEFAULT_FOLDS: usize = 10;
const DEFAULT_CLASSES: usize = 32;
const MIN_INPUT_SIDE: usize = 32;

fn required<T>(flag: Option<T>, file: Option<T>, name: &str, section: &str) -> Result<T, Failure> {
    flag.or(file)
        .ok_or_else(|| Failure::usage(format!("missing --{} (or `{}` in the [{section}] config table)", name.replace('_', "-"), name)))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn check_folds(folds: usize) -> Result<(), Failure> {
    if folds < 2 {
        return Err(Failure::usage(format!("--folds must be at least 2, got {folds}")));
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, Failure> {
    if !path.exists() {
        return Err(Failure::usage(format!("manifest {} does not exist", path.display())));
    }
    Ok(DatasetManifest::load(path)?)
}

fn split_manifest(m: &DatasetManifest, folds: usize, seed: u64, grouped: bool) -> Result<FoldAssignment, Failure> {
    check_folds(folds)?;
    Ok(if grouped { kfold_split_grouped(m, folds, seed)? } else { kfold_split(m, folds, seed)? })
}

fn sizes_line(fa: &FoldAssignment) -> String {
    let sizes: Vec<String> = fa.fold_sizes().iter().map(usize::to_string).collect();
    sizes.join(" ")
}

pub fn augment(a: AugmentArgs, f: AugmentSection) -> Result<(), Failure> {
    let src = required(a.src, f.src, "src", "augment")?;
    let dst = required(a.dst, f.dst, "dst", "augment")?;
    if !src.is_dir() {
        return Err(Failure::usage(format!("source directory {} does not exist", src.display())));
    }
    let base = AugmentationConfig::default();
    let cfg = AugmentationConfig::new(
        a.crop_sizes.or(f.crop_sizes).unwrap_or_else(|| base.crop_sizes().to_vec()),
        a.crops_per_size.or(f.crops_per_size).unwrap_or(base.crops_per_size()),
        a.output_side.or(f.output_side).unwrap_or(base.output_side()),
        a.seed.or(f.seed).unwrap_or(DEFAULT_SEED),
    )?;
    fs::create_dir_all(&dst).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dst.display())))?;
    let jobs = a.jobs.or(f.jobs).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    let run = pool.install(|| augment_dataset(&src, &dst, &cfg))?;
    for (class, n) in class_distribution(&run.manifest) {
        println!("{class}\t{n}");
    }
    println!("total\t{}", run.records.len());
    println!("manifest\t{}", run.manifest_path.display());
    Ok(())
}

pub fn split(a: SplitArgs, f: SplitSection) -> Result<(), Failure> {
    let manifest_path = required(a.manifest, f.manifest, "manifest", "split")?;
    let folds = a.folds.or(f.folds).unwrap_or(DEFAULT_FOLDS);
    check_folds(folds)?;
    let seed = a.seed.or(f.seed).unwrap_or(DEFAULT_SPLIT_SEED);
    let grouped = a.group_by_source || f.group_by_source.unwrap_or(false);
    let m = load_manifest(&manifest_path)?;
    let fa = split_manifest(&m, folds, seed, grouped)?;
    let out = a.out.or(f.out).unwrap_or_else(|| {
        let dir = if manifest_path.is_dir() { manifest_path.clone() } else { parent(&manifest_path) };
        dir.join("folds.json")
    });
    fa.save(&out)?;
    println!("samples\t{}", m.len());
    println!("fold sizes\t{}", sizes_line(&fa));
    println!("written\t{}", out.display());
    Ok(())
}

fn parent(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

pub fn params(a: ParamsArgs, f: ParamsSection) -> Result<(), Failure> {
    let k = a.num_classes.or(f.num_classes).unwrap_or(DEFAULT_CLASSES);
    let archs: Vec<Architecture> = match a.arch.or(f.arch) {
        Some(name) => vec![ArchitectureSpec::parse(&name, k)?.architecture],
        None => Architecture::ALL.to_vec(),
    };
    for arch in archs {
        let g = build_architecture(&ArchitectureSpec::new(arch, k)?)?;
        let n = g.param_count();
        println!("{}\t{n}\t{}", arch.name(), format_params(n));
    }
    Ok(())
}

fn train_config(a: &EvalArgs, file: Option<TrainConfig>) -> TrainConfig {
    let mut t = file.unwrap_or_default();
    if let Some(v) = a.epochs {
        t.epochs_per_fold = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = a.beta1 {
        t.beta1 = v;
    }
    if let Some(v) = a.beta2 {
        t.beta2 = v;
    }
    if let Some(v) = a.eps {
        t.epsilon = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    t
}

pub fn eval(a: EvalArgs, f: EvalSection) -> Result<(), Failure> {
    let train = train_config(&a, f.train.clone());
    train.validate()?;
    let manifest_path = required(a.manifest, f.manifest, "manifest", "eval")?;
    let arch = required(a.arch, f.arch, "arch", "eval")?;
    let out = required(a.out, f.out, "out", "eval")?;
    let folds_file = a.folds_file.or(f.folds_file);
    let folds = a.folds.or(f.folds).unwrap_or(DEFAULT_FOLDS);
    let split_seed = a.split_seed.or(f.split_seed).unwrap_or(DEFAULT_SPLIT_SEED);
    let grouped = a.group_by_source || f.group_by_source.unwrap_or(false);
    let weights = a.weights.or(f.weights);
    let jobs = a.jobs.or(f.jobs).unwrap_or(1);
    let side = a.input_side.or(f.input_side).unwrap_or(DEFAULT_INPUT_SIDE);
    if side < MIN_INPUT_SIDE {
        return Err(Failure::usage(format!("--input-side must be at least {MIN_INPUT_SIDE}, got {side}")));
    }
    let architecture: Architecture = arch.parse()?;
    if folds_file.is_none() {
        check_folds(folds)?;
    }
    if let Some(w) = &weights {
        if !w.is_file() {
            return Err(Failure::usage(format!("weight file {} does not exist", w.display())));
        }
    }

    let manifest = load_manifest(&manifest_path)?;
    let spec = ArchitectureSpec::new(architecture, manifest.classes().len())?;
    let fa = match &folds_file {
        Some(p) => {
            let fa = FoldAssignment::load(p).map_err(|e| Failure::from(e).context(format!("{}", p.display())))?;
            fa.check_against(&manifest)?;
            fa
        }
        None => split_manifest(&manifest, folds, split_seed, grouped)?,
    };
    let resolved = RunConfig {
        eval: Some(EvalSection {
            manifest: Some(manifest_path),
            arch: Some(architecture.name().to_string()),
            out: Some(out.clone()),
            folds_file,
            folds: Some(fa.n_folds),
            split_seed: Some(split_seed),
            group_by_source: Some(grouped),
            weights: weights.clone(),
            jobs: Some(jobs),
            input_side: Some(side),
            train: Some(train.clone()),
        }),
        ..RunConfig::default()
    };
    let source = DiskSource::new(manifest, side)?;
    let opts = CvOptions { jobs, initial_weights: weights };
    let outcome = run_cross_validation(&spec, &source, &fa, &train, &opts)?;

    fs::create_dir_all(&out).map_err(|e| Failure::usage(format!("cannot create {}: {e}", out.display())))?;
    let report = &outcome.report;
    write(&out.join("report.json"), report.to_json()? + "\n")?;
    write(&out.join("per_fold.csv"), report.per_fold_csv()?)?;
    write(&out.join("per_fold_long.csv"), report.long_csv()?)?;
    write(&out.join("predictions.csv"), outcome.predictions_csv()?)?;
    write(&out.join("loss.csv"), outcome.loss_csv()?)?;
    write(&out.join("folds.json"), fa.to_json()? + "\n")?;
    write(&out.join("run.toml"), resolved.to_toml())?;
    print!("{}", render_report(&ReportInput::Results(vec![report.clone()]))?.text);
    Ok(())
}

fn read_report(run: &Path) -> Result<MetricReport, Failure> {
    let path = if run.is_dir() { run.join("report.json") } else { run.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    MetricReport::from_json(&text).map_err(|e| Failure::from(e).context(format!("{}", path.display())))
}

fn read_reports(runs: &[PathBuf]) -> Result<Vec<MetricReport>, Failure> {
    runs.iter().map(|r| read_report(r)).collect()
}

fn non_empty(cli: Vec<PathBuf>, file: Option<Vec<PathBuf>>) -> Vec<PathBuf> {
    if cli.is_empty() { file.unwrap_or_default() } else { cli }
}

pub fn report(a: ReportArgs, f: ReportSection) -> Result<(), Failure> {
    let mode = match (a.mode, f.mode.as_deref()) {
        (Some(m), _) => m,
        (None, None | Some("results")) => Mode::Results,
        (None, Some("improvement")) => Mode::Improvement,
        (None, Some(other)) => {
            return Err(Failure::usage(format!("unknown report mode '{other}' (valid: results, improvement)")))
        }
    };
    let runs = non_empty(a.runs, f.runs);
    let original = non_empty(a.original, f.original);
    let augmented = non_empty(a.augmented, f.augmented);
    let input = match mode {
        Mode::Results => {
            if runs.is_empty() {
                return Err(Failure::usage("results mode needs at least one RUN"));
            }
            if !original.is_empty() || !augmented.is_empty() {
                return Err(Failure::usage("--original/--augmented only apply to --mode improvement"));
            }
            ReportInput::Results(read_reports(&runs)?)
        }
        Mode::Improvement => {
            if original.is_empty() || augmented.is_empty() {
                return Err(Failure::usage("improvement mode needs --original and --augmented runs"));
            }
            if !runs.is_empty() {
                return Err(Failure::usage("positional RUNs only apply to --mode results"));
            }
            ReportInput::Improvement { original: read_reports(&original)?, augmented: read_reports(&augmented)? }
        }
    };
    let rendered = render_report(&input)?;
    if let Some(out) = a.out.or(f.out) {
        write(&out, &rendered.csv)?;
    }
    print!("{}", rendered.text);
    Ok(())
}
