//! INI pipeline configuration.
//!
//! Every key has a default, so an empty file (or none) is valid. Relative
//! paths in a file are resolved against the file's directory; paths given
//! on the command line are taken as they are.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ini::Ini;

use crate::cube::{ABSORPTION_NM, BAND_NM};
use crate::error::{Error, Result};
use crate::eval::SplitSpec;
use crate::nn::{NetworkConfig, TrainConfig, DEFAULT_SEED};
use crate::phantom::{DatasetParams, DEFAULT_PER_CLASS};
use crate::preprocess::DEFAULT_EPSILON;
use crate::segment::SegmentParams;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    pub out: PathBuf,
    /// Input cube file or directory of `*.samscube` files.
    pub input: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub dark: BTreeMap<u16, PathBuf>,
    pub flat: BTreeMap<u16, PathBuf>,
    pub epsilon: f32,
    pub segment: SegmentParams,
    pub per_class: Vec<usize>,
    pub phantom: DatasetParams,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: DEFAULT_SEED,
            jobs: 0,
            out: PathBuf::from("out"),
            input: None,
            dataset: None,
            model: None,
            dark: BTreeMap::new(),
            flat: BTreeMap::new(),
            epsilon: DEFAULT_EPSILON,
            segment: SegmentParams::default(),
            per_class: vec![DEFAULT_PER_CLASS; NUM_CLASSES],
            phantom: DatasetParams::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse {v:?}")))
}

fn parse_bool(section: &str, key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("[{section}] {key}: expected a boolean, got {v:?}"))),
    }
}

/// `16:2, 32:2` -> `[(16, 2), (32, 2)]`.
fn parse_stages(v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(',')
        .map(|s| {
            let (c, b) = s
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("[train] stages: expected channels:blocks, got {s:?}")))?;
            Ok((parse("train", "stages", c)?, parse("train", "stages", b)?))
        })
        .collect()
}

fn format_stages(stages: &[(usize, usize)]) -> String {
    stages.iter().map(|(c, b)| format!("{c}:{b}")).collect::<Vec<_>>().join(",")
}

fn band_key(key: &str, prefix: &str) -> Result<Option<u16>> {
    match key.strip_prefix(prefix) {
        None => Ok(None),
        Some(nm) => {
            let nm: u16 = parse("calibration", key, nm)?;
            if !BAND_NM.contains(&nm) {
                return Err(Error::Config(format!("[calibration] {key}: no {nm} nm band")));
            }
            Ok(Some(nm))
        }
    }
}

impl PipelineConfig {
    /// Load `path` over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let ini = Ini::load_from_file(path).map_err(|e| match e {
            ini::Error::Io(e) => Error::from(e).at(path),
            ini::Error::Parse(e) => Error::Config(format!("{}: {e}", path.display())),
        })?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut cfg = PipelineConfig::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("global");
            for (key, value) in props.iter() {
                cfg.set(section, key, value, &base)?;
            }
        }
        Ok(cfg)
    }

    /// Apply a `section.key=value` override; paths are relative to the
    /// current directory.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (lhs, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not section.key=value")))?;
        let (section, key) = lhs
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not section.key=value")))?;
        self.set(section, key, value, Path::new(""))
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || base.join(value.trim());
        let unknown = || Err(Error::Config(format!("unknown key [{section}] {key}")));
        match section {
            "global" => match key {
                "seed" => self.seed = parse(section, key, value)?,
                "jobs" => self.jobs = parse(section, key, value)?,
                _ => return unknown(),
            },
            "paths" => match key {
                "out" => self.out = path(),
                "input" => self.input = Some(path()),
                "dataset" => self.dataset = Some(path()),
                "model" => self.model = Some(path()),
                _ => return unknown(),
            },
            "calibration" => {
                if key == "epsilon" {
                    self.epsilon = parse(section, key, value)?;
                } else if let Some(nm) = band_key(key, "dark_")? {
                    self.dark.insert(nm, path());
                } else if let Some(nm) = band_key(key, "flat_")? {
                    if !ABSORPTION_NM.contains(&nm) {
                        return Err(Error::Config(format!("[calibration] {key}: fluorescence bands take no flat")));
                    }
                    self.flat.insert(nm, path());
                } else {
                    return unknown();
                }
            }
            "segment" => match key {
                "bins" => self.segment.bins = parse(section, key, value)?,
                "min_area" => self.segment.min_area = parse(section, key, value)?,
                "out_size" => self.segment.out_size = parse(section, key, value)?,
                "connectivity" => self.segment.connectivity = parse(section, key, value)?,
                _ => return unknown(),
            },
            "phantom" => match key {
                "per_class" => {
                    let counts = value
                        .split(',')
                        .map(|v| parse(section, key, v))
                        .collect::<Result<Vec<usize>>>()?;
                    self.per_class = match counts.as_slice() {
                        [n] => vec![*n; NUM_CLASSES],
                        _ => counts,
                    };
                }
                "organisms_per_field" => self.phantom.organisms_per_field = parse(section, key, value)?,
                "field_size" => self.phantom.field.size = parse(section, key, value)?,
                "noise_sigma" => self.phantom.field.noise_sigma = parse(section, key, value)?,
                "gap" => self.phantom.field.gap = parse(section, key, value)?,
                "max_attempts" => self.phantom.field.max_attempts = parse(section, key, value)?,
                "max_rounds" => self.phantom.max_rounds = parse(section, key, value)?,
                _ => return unknown(),
            },
            "train" => match key {
                "epochs" => self.train.epochs = parse(section, key, value)?,
                "batch_size" => self.train.batch_size = parse(section, key, value)?,
                "learning_rate" => self.train.learning_rate = parse(section, key, value)?,
                "schedule" => self.train.schedule = value.parse()?,
                "momentum" => self.train.momentum = parse(section, key, value)?,
                "weight_decay" => self.train.weight_decay = parse(section, key, value)?,
                "augment" => self.train.augment = parse_bool(section, key, value)?,
                "stem_channels" => self.train.network.stem_channels = parse(section, key, value)?,
                "stages" => self.train.network.stages = parse_stages(value)?,
                _ => return unknown(),
            },
            "split" => match key {
                "train_fraction" => self.split.train_fraction = parse(section, key, value)?,
                "stratified" => self.split.stratified = parse_bool(section, key, value)?,
                _ => return unknown(),
            },
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    /// Propagate the global seed and ROI size into the stage configs and
    /// validate them.
    pub fn finish(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        self.split.seed = self.seed;
        self.train.network.input_size = self.segment.out_size;
        self.segment.validate()?;
        self.train.validate()?;
        if self.per_class.len() != NUM_CLASSES {
            return Err(Error::Config(format!(
                "[phantom] per_class needs 1 or {NUM_CLASSES} values, got {}",
                self.per_class.len()
            )));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.samsmodl"))
    }

    /// The effective configuration as INI text; loading it back yields the
    /// same configuration.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let p = |p: &Path| p.display().to_string();
        writeln!(s, "[global]\nseed = {}\njobs = {}\n", self.seed, self.jobs).unwrap();
        writeln!(s, "[paths]\nout = {}", p(&self.out)).unwrap();
        writeln!(s, "dataset = {}", p(&self.dataset_dir())).unwrap();
        writeln!(s, "model = {}", p(&self.model_path())).unwrap();
        if let Some(i) = &self.input {
            writeln!(s, "input = {}", p(i)).unwrap();
        }
        writeln!(s, "\n[calibration]\nepsilon = {:e}", self.epsilon).unwrap();
        for (nm, path) in &self.dark {
            writeln!(s, "dark_{nm} = {}", p(path)).unwrap();
        }
        for (nm, path) in &self.flat {
            writeln!(s, "flat_{nm} = {}", p(path)).unwrap();
        }
        let g = &self.segment;
        writeln!(
            s,
            "\n[segment]\nbins = {}\nmin_area = {}\nout_size = {}\nconnectivity = {}",
            g.bins, g.min_area, g.out_size, g.connectivity
        )
        .unwrap();
        let ph = &self.phantom;
        let per_class = self.per_class.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        writeln!(
            s,
            "\n[phantom]\nper_class = {per_class}\norganisms_per_field = {}\nfield_size = {}\nnoise_sigma = {}\ngap = {}\nmax_attempts = {}\nmax_rounds = {}",
            ph.organisms_per_field, ph.field.size, ph.field.noise_sigma, ph.field.gap, ph.field.max_attempts, ph.max_rounds
        )
        .unwrap();
        let t = &self.train;
        writeln!(
            s,
            "\n[train]\nepochs = {}\nbatch_size = {}\nlearning_rate = {}\nschedule = {}\nmomentum = {}\nweight_decay = {}\naugment = {}\nstem_channels = {}\nstages = {}",
            t.epochs,
            t.batch_size,
            t.learning_rate,
            t.schedule,
            t.momentum,
            t.weight_decay,
            t.augment,
            t.network.stem_channels,
            format_stages(&t.network.stages)
        )
        .unwrap();
        writeln!(
            s,
            "\n[split]\ntrain_fraction = {}\nstratified = {}",
            self.split.train_fraction, self.split.stratified
        )
        .unwrap();
        s
    }

    pub fn network(&self) -> &NetworkConfig {
        &self.train.network
    }
}
