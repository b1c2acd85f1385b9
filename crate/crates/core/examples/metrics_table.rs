//! Confusion counts and the three reported metrics.

use codelnet::cli::metrics_table;
use codelnet::metrics::{confusion, evaluate_metrics};

fn main() -> codelnet::Result<()> {
    // 45 codeleted (1) and 45 nondeleted (0) test slices
    let truths: Vec<usize> = (0..90).map(|i| usize::from(i < 45)).collect();
    let predictions: Vec<usize> = (0..90)
        .map(|i| match i {
            0..=41 => 1,
            42..=44 => 0,
            45..=52 => 1,
            _ => 0,
        })
        .collect();
    let cm = confusion(&predictions, &truths)?;
    println!("{cm}");
    print!("{}", metrics_table(&cm));
    let m = evaluate_metrics(&cm)?;
    println!(
        "sensitivity {:.2}% specificity {:.2}% accuracy {:.2}%",
        100.0 * m.sensitivity,
        100.0 * m.specificity,
        100.0 * m.accuracy
    );
    Ok(())
}
