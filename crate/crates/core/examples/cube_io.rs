//! Write a nine-band cube to disk, read it back and list its bands.
//!
//! ```text
//! cargo run --example cube_io [path]
//! ```

use samson::cube::{read_cube, write_cube};
use samson::{Image2D, ImageCube};

fn main() -> samson::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("example.samscube"), Into::into);

    // a horizontal ramp whose slope grows with the band index
    let planes = (0..9)
        .map(|b| Image2D::from_fn(48, 32, |x, _| (x as f32 / 47.0) * (b + 1) as f32 / 9.0))
        .collect::<samson::Result<Vec<_>>>()?;
    let cube = ImageCube::new(planes)?.with_meta("instrument", "bench rig");
    write_cube(&cube, &path)?;

    let back = read_cube(&path)?;
    assert_eq!(back, cube);
    println!("{}: {}x{}", path.display(), back.width(), back.height());
    for (band, img) in back.bands() {
        let (lo, hi) = img.min_max();
        println!("  {band}  min {lo:.3}  max {hi:.3}");
    }
    for (k, v) in back.meta() {
        println!("  meta {k} = {v}");
    }
    Ok(())
}
