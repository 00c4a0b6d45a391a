//! Score a saved model on the held-out split of a dataset directory, as
//! written by `samson synth` and `samson train`.
//!
//! ```text
//! cargo run --example evaluate_model <model.samsmodl> <dataset-dir> [seed]
//! ```

use std::path::PathBuf;

use samson::cli::load_dataset;
use samson::eval::{build_confusion, metrics, split_labels, SplitSpec};
use samson::nn::{cubes_to_tensor, load_model};

fn main() -> samson::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(model), Some(dir)) = (args.next().map(PathBuf::from), args.next().map(PathBuf::from)) else {
        eprintln!("usage: evaluate_model <model.samsmodl> <dataset-dir> [seed]");
        std::process::exit(2);
    };
    let mut spec = SplitSpec::default();
    if let Some(s) = args.next() {
        spec.seed = s.parse().expect("seed must be an integer");
    }

    let model = load_model(&model)?;
    let data = load_dataset(&dir)?;
    let split = split_labels(&data.labels, &spec)?;
    let x = cubes_to_tensor(split.test.iter().map(|&i| &data.cubes[i]))?;
    let y: Vec<usize> = split.test.iter().map(|&i| data.labels[i]).collect();
    let preds: Vec<usize> = model.predict(&x)?.iter().map(|p| p.class_id).collect();

    let cm = build_confusion(&preds, &y)?;
    let m = metrics(&cm)?;
    print!("{}", cm.format_table());
    for (c, a) in m.per_class.iter().enumerate() {
        if let Some(acc) = a.accuracy() {
            println!("class {c}: {acc:.4} ({}/{})", a.correct, a.total);
        }
    }
    println!("overall {:.4} ({}/{})", m.overall, m.correct, m.total);
    Ok(())
}
