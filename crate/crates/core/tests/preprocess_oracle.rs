mod common;

use std::collections::BTreeMap;

use common::{flat_field_inversion_error, random_image, rng};
use proptest::prelude::*;
use rand::Rng;
use samson::cube::{Image2D, ImageCube, ABSORPTION_NM, BAND_NM};
use samson::preprocess::{correct_cube, dark_subtract, flat_field_correct, CalibrationSet, DEFAULT_EPSILON};

#[test]
fn flat_field_inverts_known_transmittance() {
    assert!(flat_field_inversion_error(100, 1) < 1e-5);
}

fn calibration(r: &mut impl Rng, w: usize, h: usize) -> CalibrationSet {
    let mut dark = BTreeMap::new();
    let mut flat = BTreeMap::new();
    for nm in BAND_NM {
        dark.insert(nm, random_image(r, w, h, 0.0, 0.05));
    }
    for nm in ABSORPTION_NM {
        flat.insert(nm, random_image(r, w, h, 0.5, 1.0));
    }
    CalibrationSet::new(dark, flat, DEFAULT_EPSILON).unwrap()
}

#[test]
fn cube_correction_is_per_plane() {
    let mut r = rng(2);
    let cal = calibration(&mut r, 16, 12);
    let planes = (0..9).map(|_| random_image(&mut r, 16, 12, 0.0, 1.2)).collect();
    let cube = ImageCube::new(planes).unwrap().with_meta("k", "v");
    let out = correct_cube(&cube, &cal).unwrap();
    assert_eq!(out.meta(), cube.meta());
    for ((band, got), (_, raw)) in out.bands().zip(cube.bands()) {
        let nm = band.wavelength_nm();
        let want = match cal.flat(nm) {
            Some(f) => flat_field_correct(raw, cal.dark(nm).unwrap(), f, DEFAULT_EPSILON).unwrap(),
            None => dark_subtract(raw, cal.dark(nm).unwrap()).unwrap(),
        };
        assert_eq!(got, &want, "{band}");
    }
}

proptest! {
    #[test]
    fn output_is_finite_and_non_negative(
        raw in prop::collection::vec(-10.0f32..10.0, 16),
        dark in prop::collection::vec(-1.0f32..1.0, 16),
        flat in prop::collection::vec(-1.0f32..2.0, 16),
    ) {
        let img = |v: Vec<f32>| Image2D::new(4, 4, v).unwrap();
        let out = flat_field_correct(&img(raw), &img(dark), &img(flat), DEFAULT_EPSILON).unwrap();
        prop_assert!(out.pixels().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn common_positive_scale_cancels(
        s in prop::collection::vec(0.0f32..1.0, 9),
        gain in prop::collection::vec(0.1f32..1.0, 9),
        k in 0.5f32..4.0,
    ) {
        let dark = Image2D::filled(3, 3, 0.25);
        let mk = |f: &dyn Fn(usize) -> f32| Image2D::from_fn(3, 3, |x, y| f(y * 3 + x)).unwrap();
        let flat1 = mk(&|i| gain[i] + 0.25);
        let raw1 = mk(&|i| gain[i] * s[i] + 0.25);
        let flat2 = mk(&|i| k * gain[i] + 0.25);
        let raw2 = mk(&|i| k * gain[i] * s[i] + 0.25);
        let a = flat_field_correct(&raw1, &dark, &flat1, DEFAULT_EPSILON).unwrap();
        let b = flat_field_correct(&raw2, &dark, &flat2, DEFAULT_EPSILON).unwrap();
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }
}
