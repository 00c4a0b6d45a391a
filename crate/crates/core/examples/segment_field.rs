//! Render a labelled phantom field, segment it and compare every blob with
//! the organism it came from.
//!
//! ```text
//! cargo run --example segment_field [seed] [organisms]
//! ```

use samson::phantom::{default_class_specs, field_rng, generate_field, match_blobs, FieldParams};
use samson::segment::{segment_cube, SegmentParams};

fn main() -> samson::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));
    let count: usize = args.next().map_or(8, |s| s.parse().expect("organisms must be an integer"));

    let specs = default_class_specs();
    let (cube, truth) = generate_field(&specs, count, &FieldParams::default(), &mut field_rng(seed, 0))?;
    let (seg, rois) = segment_cube(&cube, &SegmentParams::default())?;
    println!(
        "field {}x{}, theta {:.4}, {} blobs for {} organisms",
        cube.width(),
        cube.height(),
        seg.theta,
        seg.blobs.len(),
        truth.len()
    );

    let matched = match_blobs(&seg.blobs, &truth, cube.width(), cube.height());
    println!("blob  area  bbox               class");
    for ((roi, blob), m) in rois.iter().zip(&seg.blobs).zip(matched) {
        let b = blob.bbox;
        let class = m.map_or_else(|| "unmatched".to_string(), |k| specs[truth[k].class_id].name.clone());
        println!(
            "{:>4}  {:>4}  ({:>3},{:>3})-({:>3},{:>3})  {class}",
            roi.blob_index,
            blob.area(),
            b.x0,
            b.y0,
            b.x1,
            b.y1
        );
    }
    Ok(())
}
