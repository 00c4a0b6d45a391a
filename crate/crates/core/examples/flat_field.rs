//! Simulate vignetted illumination and sensor offset, then undo both with
//! dark and flat calibration frames.
//!
//! ```text
//! cargo run --example flat_field
//! ```

use std::collections::BTreeMap;

use samson::cube::{ABSORPTION_NM, BAND_NM};
use samson::preprocess::{correct_cube, CalibrationSet, DEFAULT_EPSILON};
use samson::{Image2D, ImageCube};

const W: usize = 64;
const H: usize = 64;

fn vignette(x: usize, y: usize) -> f32 {
    let dx = (x as f32 - 31.5) / 32.0;
    let dy = (y as f32 - 31.5) / 32.0;
    0.9 - 0.3 * (dx * dx + dy * dy)
}

fn main() -> samson::Result<()> {
    let offset = 0.04;
    // what the sample actually transmits: a disk in a clear background
    let truth = Image2D::from_fn(W, H, |x, y| {
        let r2 = (x as f32 - 20.0).powi(2) + (y as f32 - 40.0).powi(2);
        if r2 < 100.0 { 0.3 } else { 1.0 }
    })?;

    let mut dark = BTreeMap::new();
    let mut flat = BTreeMap::new();
    for nm in BAND_NM {
        dark.insert(nm, Image2D::filled(W, H, offset));
    }
    for nm in ABSORPTION_NM {
        flat.insert(nm, Image2D::from_fn(W, H, |x, y| vignette(x, y) + offset)?);
    }
    let cal = CalibrationSet::new(dark, flat, DEFAULT_EPSILON)?;

    let raw = ImageCube::new(
        (0..9)
            .map(|_| Image2D::from_fn(W, H, |x, y| vignette(x, y) * truth.get(x, y) + offset))
            .collect::<samson::Result<Vec<_>>>()?,
    )?;
    let corrected = correct_cube(&raw, &cal)?;

    for (band, img) in corrected.bands() {
        let err = img
            .pixels()
            .iter()
            .zip(truth.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        let (lo, hi) = raw.band(band.wavelength_nm())?.min_max();
        println!("{band}  raw range {lo:.3}..{hi:.3}  max error vs truth {err:.2e}");
    }
    // fluorescence bands are only dark-subtracted, so the vignette remains
    Ok(())
}
