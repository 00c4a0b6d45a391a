//! Flat-field correction.
//!
//! Absorption planes are normalised as `(raw - dark) / (flat - dark)`.
//! Fluorescence planes have no flat reference (the sample is the light
//! source) and only receive dark subtraction.

use std::collections::BTreeMap;
use std::path::Path;

use crate::cube::{read_frames, Band, Image2D, ImageCube, Modality, ABSORPTION_NM, BAND_NM};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f32 = 1e-6;

/// Dark frames for every band and flat frames for the absorption bands.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    dark: BTreeMap<u16, Image2D>,
    flat: BTreeMap<u16, Image2D>,
    epsilon: f32,
}

impl CalibrationSet {
    pub fn new(dark: BTreeMap<u16, Image2D>, flat: BTreeMap<u16, Image2D>, epsilon: f32) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        for nm in BAND_NM {
            if !dark.contains_key(&nm) {
                return Err(Error::MissingCalibration(format!("dark frame for {nm} nm")));
            }
        }
        for nm in ABSORPTION_NM {
            if !flat.contains_key(&nm) {
                return Err(Error::MissingCalibration(format!("flat frame for {nm} nm")));
            }
        }
        if let Some(nm) = dark.keys().find(|nm| !BAND_NM.contains(nm)) {
            return Err(Error::UnknownBand(*nm));
        }
        if let Some(nm) = flat.keys().find(|nm| !ABSORPTION_NM.contains(nm)) {
            return Err(Error::Config(format!("flat frame given for non-absorption band {nm} nm")));
        }
        let first = &dark[&BAND_NM[0]];
        for (kind, nm, img) in dark
            .iter()
            .map(|(nm, i)| ("dark", nm, i))
            .chain(flat.iter().map(|(nm, i)| ("flat", nm, i)))
        {
            if !img.same_size(first) {
                return Err(Error::DimensionMismatch(format!(
                    "{kind} frame for {nm} nm is {}x{}, expected {}x{}",
                    img.width(),
                    img.height(),
                    first.width(),
                    first.height()
                )));
            }
        }
        Ok(CalibrationSet { dark, flat, epsilon })
    }

    /// Load single-band calibration frames from `SAMSCUBE` files.
    pub fn load<P: AsRef<Path>>(
        dark: &BTreeMap<u16, P>,
        flat: &BTreeMap<u16, P>,
        epsilon: f32,
    ) -> Result<Self> {
        let load_all = |paths: &BTreeMap<u16, P>| -> Result<BTreeMap<u16, Image2D>> {
            paths
                .iter()
                .map(|(&nm, p)| load_frame(p.as_ref(), nm).map(|img| (nm, img)))
                .collect()
        };
        Self::new(load_all(dark)?, load_all(flat)?, epsilon)
    }

    pub fn dark(&self, wavelength_nm: u16) -> Option<&Image2D> {
        self.dark.get(&wavelength_nm)
    }

    pub fn flat(&self, wavelength_nm: u16) -> Option<&Image2D> {
        self.flat.get(&wavelength_nm)
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }

    pub fn width(&self) -> usize {
        self.dark[&BAND_NM[0]].width()
    }

    pub fn height(&self) -> usize {
        self.dark[&BAND_NM[0]].height()
    }
}

/// Read a one-band calibration frame and check it is for `wavelength_nm`.
pub fn load_frame(path: &Path, wavelength_nm: u16) -> Result<Image2D> {
    let frames = read_frames(path)?;
    let expected = Band::new(wavelength_nm)?;
    match <[_; 1]>::try_from(frames.bands) {
        Ok([(band, img)]) if band == expected => Ok(img),
        Ok([(band, _)]) => Err(Error::MalformedFile(format!(
            "calibration frame is for {band}, expected {expected}"
        ))
        .at(path)),
        Err(bands) => Err(Error::MalformedFile(format!(
            "calibration frame must hold one band, found {}",
            bands.len()
        ))
        .at(path)),
    }
}

fn check_size(what: &str, a: &Image2D, b: &Image2D) -> Result<()> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

/// `max(raw - dark, 0) / max(flat - dark, epsilon)` per pixel.
pub fn flat_field_correct(raw: &Image2D, dark: &Image2D, flat: &Image2D, epsilon: f32) -> Result<Image2D> {
    check_size("raw vs dark", raw, dark)?;
    check_size("raw vs flat", raw, flat)?;
    let eps = f64::from(epsilon);
    let data = raw
        .pixels()
        .iter()
        .zip(dark.pixels())
        .zip(flat.pixels())
        .map(|((&r, &d), &f)| {
            let num = (f64::from(r) - f64::from(d)).max(0.0);
            let den = (f64::from(f) - f64::from(d)).max(eps);
            (num / den) as f32
        })
        .collect();
    Image2D::new(raw.width(), raw.height(), data)
}

/// `max(raw - dark, 0)` per pixel.
pub fn dark_subtract(raw: &Image2D, dark: &Image2D) -> Result<Image2D> {
    check_size("raw vs dark", raw, dark)?;
    let data = raw
        .pixels()
        .iter()
        .zip(dark.pixels())
        .map(|(&r, &d)| (f64::from(r) - f64::from(d)).max(0.0) as f32)
        .collect();
    Image2D::new(raw.width(), raw.height(), data)
}

/// Correct every band of `raw`: full flat-field for absorption bands, dark
/// subtraction for fluorescence bands. Metadata is carried over.
pub fn correct_cube(raw: &ImageCube, cal: &CalibrationSet) -> Result<ImageCube> {
    let mut planes = Vec::with_capacity(raw.planes().len());
    for (band, plane) in raw.bands() {
        let nm = band.wavelength_nm();
        let dark = cal
            .dark(nm)
            .ok_or_else(|| Error::MissingCalibration(format!("dark frame for {band}")))?;
        let corrected = match band.modality() {
            Modality::Absorption => {
                let flat = cal
                    .flat(nm)
                    .ok_or_else(|| Error::MissingCalibration(format!("flat frame for {band}")))?;
                flat_field_correct(plane, dark, flat, cal.epsilon)?
            }
            Modality::Fluorescence => dark_subtract(plane, dark)?,
        };
        planes.push(corrected);
    }
    let mut out = ImageCube::new(planes)?;
    *out.meta_mut() = raw.meta().clone();
    Ok(out)
}
