//! The `samson` command line.
//!
//! Every subcommand reads a [`PipelineConfig`], applies the command-line
//! overrides, writes the effective configuration next to its outputs as
//! `<command>.config.ini`, and processes inputs in lexicographic order.
//!
//! Exit codes: 0 success, 2 configuration (including missing calibration
//! frames), 3 I/O, 4 invalid data, 5 training divergence.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

pub use config::PipelineConfig;

use crate::cube::{read_cube, write_cube};
use crate::error::{Error, Result};
use crate::eval::{build_confusion, metrics, split_labels};
use crate::manifest::{read_manifest, write_manifest, ManifestRecord};
use crate::nn::{cubes_to_tensor, format_history, load_model, save_model, train};
use crate::phantom::{default_class_specs, generate_dataset, DatasetParams};
use crate::preprocess::{correct_cube, CalibrationSet};
use crate::segment::{segment_cube, segment_mask, BinaryMask};
use crate::ImageCube;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_DIVERGENCE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "samson", version, about = "Multispectral algae segmentation and classification")]
pub struct Cli {
    /// INI configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step (overrides [global] seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides [paths] out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Override any config value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flat-field correct raw cubes.
    Correct { inputs: Vec<PathBuf> },
    /// Otsu-segment cubes; writes PNG masks and a blob table.
    Segment { inputs: Vec<PathBuf> },
    /// Segment cubes and crop every blob to a fixed-size ROI cube.
    Extract { inputs: Vec<PathBuf> },
    /// Generate a labelled phantom dataset.
    Synth,
    /// Train the classifier on the training split of a dataset.
    Train,
    /// Evaluate a trained model on the held-out split.
    Eval,
    /// Classify ROI cubes and print class probabilities.
    Predict { rois: Vec<PathBuf> },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Correct { .. } => "correct",
            Command::Segment { .. } => "segment",
            Command::Extract { .. } => "extract",
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Predict { .. } => "predict",
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        Error::Config(_) | Error::MissingCalibration(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::DivergenceDetected { .. } => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

/// Parse `args`, run the command and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.finish()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Correct { inputs } => cmd_correct(&cfg, inputs),
        Command::Segment { inputs } => cmd_segment(&cfg, inputs),
        Command::Extract { inputs } => cmd_extract(&cfg, inputs),
        Command::Synth => cmd_synth(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Predict { rois } => cmd_predict(&cfg, rois),
    })
    .inspect(|_| log::info!("{} finished", cli.command.name()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::from(e).at(path))
}

/// Create the output directory and record the effective configuration.
fn prepare_out(cfg: &PipelineConfig, command: &str) -> Result<()> {
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join(format!("{command}.config.ini")), &cfg.to_ini())
}

fn is_cube_file(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "samscube")
}

/// Expand files and directories into a sorted list of cube files.
fn collect_inputs(cli_inputs: &[PathBuf], cfg_input: Option<&PathBuf>) -> Result<Vec<PathBuf>> {
    let roots: Vec<PathBuf> = if cli_inputs.is_empty() {
        cfg_input.cloned().into_iter().collect()
    } else {
        cli_inputs.to_vec()
    };
    if roots.is_empty() {
        return Err(Error::Config("no inputs: pass files or set [paths] input".into()));
    }
    let mut files = Vec::new();
    for r in roots {
        if r.is_dir() {
            let entries = fs::read_dir(&r).map_err(|e| Error::from(e).at(&r))?;
            for e in entries {
                let p = e.map_err(|e| Error::from(e).at(&r))?.path();
                if p.is_file() && is_cube_file(&p) {
                    files.push(p);
                }
            }
        } else {
            files.push(r);
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "cube".into(), |s| s.to_string_lossy().into_owned())
}

/// Split per-file results into successes (in input order) and the first
/// failure, logging every failure against its file.
fn finish_batch<T>(files: &[PathBuf], results: Vec<Result<T>>) -> (Vec<T>, Option<Error>) {
    let mut first_err = None;
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = 0;
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                let e = match e {
                    Error::File { .. } => e,
                    other => other.at(f),
                };
                log::error!("{e}");
                failed += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    if failed > 0 {
        log::error!("{failed} of {} inputs failed", files.len());
    }
    (ok, first_err)
}

fn into_result(err: Option<Error>) -> Result<()> {
    err.map_or(Ok(()), Err)
}

pub fn cmd_correct(cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<()> {
    let files = collect_inputs(inputs, cfg.input.as_ref())?;
    let cal = CalibrationSet::load(&cfg.dark, &cfg.flat, cfg.epsilon)?;
    let targets: Vec<PathBuf> = files
        .iter()
        .map(|f| cfg.out.join(f.file_name().unwrap_or_default()))
        .collect();
    if let Some(f) = files.iter().zip(&targets).find(|(f, t)| f == t).map(|(f, _)| f) {
        return Err(Error::Config(format!(
            "output for {} would overwrite the input; choose another --out",
            f.display()
        )));
    }
    prepare_out(cfg, "correct")?;
    let results: Vec<Result<()>> = files
        .par_iter()
        .zip(&targets)
        .map(|(f, t)| {
            let raw = read_cube(f)?;
            let corrected = correct_cube(&raw, &cal)?;
            write_cube(&corrected, t)?;
            log::info!("corrected {} -> {}", f.display(), t.display());
            Ok(())
        })
        .collect();
    into_result(finish_batch(&files, results).1)
}

fn write_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("one byte per pixel");
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::from(io).at(path),
        other => Error::MalformedFile(format!("png encoding: {other}")).at(path),
    })
}

pub const BLOB_TABLE_HEADER: &str = "# file\tblob\ttheta\tarea\tx0\ty0\tx1\ty1";

pub fn cmd_segment(cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<()> {
    let files = collect_inputs(inputs, cfg.input.as_ref())?;
    prepare_out(cfg, "segment")?;
    let mask_dir = cfg.out.join("masks");
    create_dir(&mask_dir)?;
    let results: Vec<Result<String>> = files
        .par_iter()
        .map(|f| {
            let cube = read_cube(f)?;
            let seg = segment_mask(&cube, &cfg.segment)?;
            write_mask_png(&seg.mask, &mask_dir.join(format!("{}.png", stem(f))))?;
            let name = f.file_name().unwrap_or_default().to_string_lossy();
            let mut rows = String::new();
            for (i, b) in seg.blobs.iter().enumerate() {
                let bb = b.bbox;
                rows.push_str(&format!(
                    "{name}\t{i}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    seg.theta,
                    b.area(),
                    bb.x0,
                    bb.y0,
                    bb.x1,
                    bb.y1
                ));
            }
            log::info!("{}: theta {}, {} blobs", f.display(), seg.theta, seg.blobs.len());
            Ok(rows)
        })
        .collect();
    let (rows, err) = finish_batch(&files, results);
    let mut table = format!("{BLOB_TABLE_HEADER}\n");
    for r in rows {
        table.push_str(&r);
    }
    write_text(&cfg.out.join("blobs.tsv"), &table)?;
    into_result(err)
}

/// ROI file name for blob `index` of the cube with stem `stem`.
pub fn roi_name(stem: &str, index: usize) -> String {
    format!("{stem}_{index:04}.samscube")
}

pub fn cmd_extract(cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<()> {
    let files = collect_inputs(inputs, cfg.input.as_ref())?;
    prepare_out(cfg, "extract")?;
    let roi_dir = cfg.out.join("rois");
    create_dir(&roi_dir)?;
    let results: Vec<Result<Vec<ManifestRecord>>> = files
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            let cube = read_cube(f)?;
            let (_, rois) = segment_cube(&cube, &cfg.segment)?;
            let source = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let mut recs = Vec::with_capacity(rois.len());
            for roi in &rois {
                let name = roi_name(&stem(f), roi.blob_index);
                write_cube(&roi.to_cube(&source), roi_dir.join(&name))?;
                recs.push(ManifestRecord {
                    path: format!("rois/{name}"),
                    class_id: roi.label,
                    source_index: Some(k),
                    bbox: roi.blob.bbox,
                });
            }
            log::info!("{}: {} ROIs", f.display(), recs.len());
            Ok(recs)
        })
        .collect();
    let (recs, err) = finish_batch(&files, results);
    let records: Vec<ManifestRecord> = recs.into_iter().flatten().collect();
    write_manifest(&cfg.out.join("manifest.tsv"), &records)?;
    into_result(err)
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<()> {
    let specs = default_class_specs();
    let params = DatasetParams {
        segment: cfg.segment.clone(),
        ..cfg.phantom.clone()
    };
    let data = generate_dataset(&specs, &cfg.per_class, cfg.seed, &params)?;
    prepare_out(cfg, "synth")?;
    let dir = cfg.dataset_dir();
    data.save(&dir)?;
    log::info!("wrote {} ROIs to {}", data.rois.len(), dir.display());
    Ok(())
}

/// A labelled dataset directory loaded into memory.
pub struct LoadedDataset {
    pub paths: Vec<String>,
    pub cubes: Vec<ImageCube>,
    pub labels: Vec<usize>,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let records = read_manifest(&dir.join("manifest.tsv"))?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut labels = Vec::with_capacity(records.len());
    for r in &records {
        labels.push(r.class_id.ok_or_else(|| {
            Error::MalformedFile(format!("manifest entry {} has no class id", r.path))
        })?);
    }
    let cubes = records
        .par_iter()
        .map(|r| read_cube(dir.join(&r.path)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset {
        paths: records.into_iter().map(|r| r.path).collect(),
        cubes,
        labels,
    })
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let data = load_dataset(&cfg.dataset_dir())?;
    let split = split_labels(&data.labels, &cfg.split)?;
    let x = cubes_to_tensor(split.train.iter().map(|&i| &data.cubes[i]))?;
    let y: Vec<usize> = split.train.iter().map(|&i| data.labels[i]).collect();
    prepare_out(cfg, "train")?;
    let mut split_text = String::from("# path\tside\n");
    for (side, idx) in [("train", &split.train), ("test", &split.test)] {
        for &i in idx {
            split_text.push_str(&format!("{}\t{side}\n", data.paths[i]));
        }
    }
    write_text(&cfg.out.join("split.tsv"), &split_text)?;
    log::info!("training on {} of {} ROIs", split.train.len(), data.labels.len());
    let (model, history) = train(&x, &y, &cfg.train)?;
    write_text(&cfg.out.join("history.tsv"), &format_history(&history))?;
    save_model(&cfg.model_path(), &model)?;
    log::info!("saved model to {}", cfg.model_path().display());
    Ok(())
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<()> {
    let model = load_model(&cfg.model_path())?;
    let data = load_dataset(&cfg.dataset_dir())?;
    let split = split_labels(&data.labels, &cfg.split)?;
    let x = cubes_to_tensor(split.test.iter().map(|&i| &data.cubes[i]))?;
    let y: Vec<usize> = split.test.iter().map(|&i| data.labels[i]).collect();
    let preds: Vec<usize> = model.predict(&x)?.iter().map(|p| p.class_id).collect();
    let names = default_class_specs().into_iter().map(|s| s.name).collect();
    let cm = build_confusion(&preds, &y)?.with_names(names)?;
    let m = metrics(&cm)?;
    prepare_out(cfg, "eval")?;
    let table = cm.format_table();
    write_text(&cfg.out.join("confusion.txt"), &table)?;
    write_text(&cfg.out.join("confusion.tsv"), &cm.format_records())?;
    write_text(&cfg.out.join("metrics.tsv"), &m.format_records())?;
    print!("{table}");
    println!("accuracy {:.4} ({}/{})", m.overall, m.correct, m.total);
    Ok(())
}

pub fn cmd_predict(cfg: &PipelineConfig, rois: &[PathBuf]) -> Result<()> {
    let model = load_model(&cfg.model_path())?;
    let files = if rois.iter().any(|p| p.is_dir()) || rois.is_empty() {
        collect_inputs(rois, cfg.input.as_ref())?
    } else {
        rois.to_vec()
    };
    let cubes = files.iter().map(read_cube).collect::<Result<Vec<_>>>()?;
    let x = cubes_to_tensor(&cubes)?;
    for (f, p) in files.iter().zip(model.predict(&x)?) {
        let probs: Vec<String> = p.probabilities.iter().map(|v| format!("{v:.6}")).collect();
        println!("{}\t{}\t{}", f.display(), p.class_id, probs.join("\t"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::MissingCalibration("x".into()).at(Path::new("a"))), EXIT_CONFIG);
        let io = Error::from(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(exit_code(&io.at(Path::new("a"))), EXIT_IO);
        assert_eq!(exit_code(&Error::MalformedFile("x".into())), EXIT_DATA);
        assert_eq!(
            exit_code(&Error::DivergenceDetected { epoch: 0, batch: 1, loss: f64::NAN }),
            EXIT_DIVERGENCE
        );
    }

    #[test]
    fn roi_names_are_zero_padded() {
        assert_eq!(roi_name("field_a", 7), "field_a_0007.samscube");
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        assert_eq!(main_with_args(["samson", "frobnicate"]), 2);
        assert_eq!(main_with_args(["samson", "synth", "--set", "train.nope=1"]), EXIT_CONFIG);
    }
}
