//! Train the residual classifier on the default phantom dataset and report
//! held-out accuracy.
//!
//! ```text
//! cargo run --release --example train_classifier [epochs]
//! ```

use std::time::Instant;

use samson::eval::{build_confusion, metrics, split_dataset, SplitSpec};
use samson::nn::{cubes_to_tensor, train, TrainConfig};
use samson::phantom::{default_class_specs, generate_dataset, DatasetParams, DEFAULT_PER_CLASS};

fn main() -> samson::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = TrainConfig::default();
    if let Some(e) = std::env::args().nth(1) {
        cfg.epochs = e.parse().expect("epochs must be an integer");
    }

    let t0 = Instant::now();
    let specs = default_class_specs();
    let data = generate_dataset(&specs, &[DEFAULT_PER_CLASS; 6], cfg.seed, &DatasetParams::default())?;
    println!("generated {} ROIs in {:.1?}", data.rois.len(), t0.elapsed());

    let split = split_dataset(&data, &SplitSpec::default())?;
    let labels = data.labels();
    let cubes = |idx: &[usize]| cubes_to_tensor(idx.iter().map(|&i| &data.rois[i].roi.crop));
    let (x_train, x_test) = (cubes(&split.train)?, cubes(&split.test)?);
    let y_train: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();

    let t1 = Instant::now();
    let (model, history) = train(&x_train, &y_train, &cfg)?;
    println!("trained {} epochs in {:.1?}", history.len(), t1.elapsed());

    let preds: Vec<usize> = model.predict(&x_test)?.iter().map(|p| p.class_id).collect();
    let names = specs.iter().map(|s| s.name.clone()).collect();
    let cm = build_confusion(&preds, &y_test)?.with_names(names)?;
    let m = metrics(&cm)?;
    print!("{}", cm.format_table());
    println!("held-out accuracy {:.4} ({}/{})", m.overall, m.correct, m.total);
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
