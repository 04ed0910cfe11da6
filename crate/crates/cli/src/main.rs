//! `artzoom`: batch front end for the artificial-zoom experiment pipeline.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;
use exit::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "artzoom",
    version,
    about = "Artificial-zoom augmentation, k-fold evaluation and reporting for microscopy classifiers",
    long_about = "Artificial-zoom augmentation, k-fold evaluation and reporting for microscopy classifiers.\n\n\
        Every random choice is seeded; all seeds default to 20210101 so identical inputs give \
        byte-identical outputs.\n\n\
        Exit codes: 0 ok, 2 usage error, 3 data error, 4 internal error."
)]
pub struct Cli {
    /// TOML settings file with optional [augment], [split], [params], [eval] and [report] tables
    /// (keys mirror the long flag names with underscores; [eval.train] holds training
    /// hyperparameters). Explicit flags override the file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop every image of a class-per-directory tree at several sizes and resize the crops.
    ///
    /// Writes PNG outputs under DST/<class>/, plus DST/manifest.jsonl and DST/classes.json, then
    /// prints per-class counts and the total.
    Augment(AugmentArgs),
    /// Assign the samples of a manifest to k folds and write the assignment as JSON.
    Split(SplitArgs),
    /// Print the trainable parameter count of an architecture (all twelve when ARCH is omitted).
    Params(ParamsArgs),
    /// Cross-validate an architecture on a manifest and write per-fold metrics.
    ///
    /// OUT receives report.json, per_fold.csv (one row per fold plus a mean row),
    /// per_fold_long.csv, predictions.csv, loss.csv, folds.json and run.toml.
    Eval(EvalArgs),
    /// Render result tables, or relative-improvement tables from paired runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Source tree: one sub-directory of PNG/TIFF images per class
    #[arg(long, value_name = "DIR")]
    pub src: Option<PathBuf>,
    /// Destination directory (created if absent)
    #[arg(long, value_name = "DIR")]
    pub dst: Option<PathBuf>,
    /// Seed for crop positions; each image also mixes in a hash of its relative path
    /// [default: 20210101]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ascending crop side lengths in pixels; sides longer than an image's short edge are skipped
    /// [default: 100,200,300,400,500,600,700]
    #[arg(long, value_delimiter = ',', value_name = "PX,..")]
    pub crop_sizes: Option<Vec<usize>>,
    /// Random crops per admissible size [default: 5]
    #[arg(long)]
    pub crops_per_size: Option<usize>,
    /// Side of every square output image [default: 224]
    #[arg(long)]
    pub output_side: Option<usize>,
    /// Worker threads; 0 uses every core. Output does not depend on it [default: 0]
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Manifest file (manifest.jsonl), augmented output directory, or raw class-per-directory tree
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Output JSON [default: folds.json next to the manifest]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Number of folds, at least 2 [default: 10]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed of the sample permutation [default: 20210101]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep all crops of one source image in the same fold (fold sizes then only approximately
    /// balanced) [default: off]
    #[arg(long)]
    pub group_by_source: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Architecture name, e.g. mobilenet_v2 or efficientnet-b0
    pub arch: Option<String>,
    /// Classifier outputs [default: 32]
    #[arg(long)]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest file, augmented output directory, or raw class-per-directory tree
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Architecture name
    #[arg(long)]
    pub arch: Option<String>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Fold assignment written by `split`; when absent the split is computed here
    #[arg(long, value_name = "FILE")]
    pub folds_file: Option<PathBuf>,
    /// Number of folds when splitting here [default: 10]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed of the split permutation when splitting here [default: 20210101]
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Split by source image when splitting here [default: off]
    #[arg(long)]
    pub group_by_source: bool,
    /// STRW weight file to start every fold from; a head of the wrong size is replaced
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Folds trained concurrently; 1 is serial [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Side the images are resized to before entering the network [default: 224]
    #[arg(long)]
    pub input_side: Option<usize>,
    /// Training passes per fold [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// AdamW learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// AdamW decoupled weight decay [default: 0.01]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// AdamW first-moment decay [default: 0.9]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// AdamW second-moment decay [default: 0.999]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// AdamW denominator epsilon [default: 1e-8]
    #[arg(long)]
    pub eps: Option<f64>,
    /// Seed for weight initialisation, head replacement, epoch shuffles and dropout
    /// [default: 20210101]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Results,
    Improvement,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `results` tabulates RUNS; `improvement` pairs --original and --augmented runs by method
    /// [default: results]
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Run directories (or report.json files) for results mode
    #[arg(value_name = "RUN")]
    pub runs: Vec<PathBuf>,
    /// Runs on the original dataset (repeatable)
    #[arg(long, value_name = "RUN")]
    pub original: Vec<PathBuf>,
    /// Runs on the augmented dataset (repeatable)
    #[arg(long, value_name = "RUN")]
    pub augmented: Vec<PathBuf>,
    /// Also write the table as CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Augment(a) => commands::augment(a, file.augment.unwrap_or_default()),
        Command::Split(a) => commands::split(a, file.split.unwrap_or_default()),
        Command::Params(a) => commands::params(a, file.params.unwrap_or_default()),
        Command::Eval(a) => commands::eval(a, file.eval.unwrap_or_default()),
        Command::Report(a) => commands::report(a, file.report.unwrap_or_default()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_documents_every_seed_default() {
        let seeds = [
            artzoom::augment::DEFAULT_SEED,
            artzoom::dataset::DEFAULT_SPLIT_SEED,
            artzoom::train::DEFAULT_TRAIN_SEED,
        ];
        for s in seeds {
            assert_eq!(s, 20_210_101);
        }
        let mut cmd = Cli::command();
        for sub in ["augment", "split", "eval"] {
            let help = cmd.find_subcommand_mut(sub).unwrap().render_long_help().to_string();
            assert!(help.contains("[default: 20210101]"), "{sub}: {help}");
        }
    }

    #[test]
    fn help_defaults_match_library_defaults() {
        let t = artzoom::TrainConfig::default();
        let help = Cli::command().find_subcommand_mut("eval").unwrap().render_long_help().to_string();
        for needle in [
            format!("[default: {}]", t.epochs_per_fold),
            format!("[default: {}]", t.batch_size),
            format!("[default: {}]", t.learning_rate),
            format!("[default: {}]", t.weight_decay),
            format!("[default: {}]", t.beta1),
            format!("[default: {}]", t.beta2),
            format!("[default: {:e}]", t.epsilon),
            format!("[default: {}]", artzoom::nn::DEFAULT_INPUT_SIDE),
        ] {
            assert!(help.contains(&needle), "missing {needle}");
        }
        let aug = artzoom::AugmentationConfig::default();
        let help = Cli::command().find_subcommand_mut("augment").unwrap().render_long_help().to_string();
        let sizes: Vec<String> = aug.crop_sizes().iter().map(usize::to_string).collect();
        assert!(help.contains(&format!("[default: {}]", sizes.join(","))));
        assert!(help.contains(&format!("[default: {}]", aug.crops_per_size())));
        assert!(help.contains(&format!("[default: {}]", aug.output_side())));
    }
}
