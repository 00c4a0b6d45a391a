//! Generate a labelled ROI dataset from phantom fields and write it as
//! `SAMSCUBE` files plus a manifest.
//!
//! ```text
//! cargo run --example synth_dataset <out-dir> [per-class] [seed]
//! ```

use std::path::PathBuf;

use samson::phantom::{default_class_specs, generate_dataset, DatasetParams};

fn main() -> samson::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir: PathBuf = args.next().map_or_else(|| std::env::temp_dir().join("samson-dataset"), Into::into);
    let per_class: usize = args.next().map_or(20, |s| s.parse().expect("per-class must be an integer"));
    let seed: u64 = args.next().map_or(2024, |s| s.parse().expect("seed must be an integer"));

    let specs = default_class_specs();
    let data = generate_dataset(&specs, &[per_class; 6], seed, &DatasetParams::default())?;
    data.save(&dir)?;

    let fields = data.rois.iter().map(|r| r.field_index).max().map_or(0, |m| m + 1);
    println!("{} ROIs from {fields} fields in {}", data.rois.len(), dir.display());
    for (spec, n) in specs.iter().zip(&data.class_counts) {
        println!("  {:>4}  {}", n, spec.name);
    }
    Ok(())
}
