//! Patient-grouped split and per-epoch balanced sampling on a synthetic
//! manifest with 102 nondeleted and 57 codeleted patients of three slices.

use codelnet::data::{balanced_sample, split_dataset, Label, Manifest, SliceRecord, SplitSpec};

fn main() -> codelnet::Result<()> {
    let mut records = Vec::new();
    for (label, patients) in [(Label::Nondeleted, 102), (Label::Codeleted, 57)] {
        for p in 0..patients {
            for slice_index in 0..3 {
                records.push(SliceRecord {
                    patient_id: format!("{}{p:03}", label.token()),
                    slice_index,
                    label,
                    t1c: "unused".into(),
                    t2: "unused".into(),
                    mask: "unused".into(),
                });
            }
        }
    }
    let manifest = Manifest::new(".", records);
    let spec = SplitSpec {
        validation_fraction: 0.0,
        ..Default::default()
    };
    let split = split_dataset(&manifest, &spec)?;
    println!(
        "test {} / remaining {} / balanced {} per class",
        split.test.len(),
        split.train.len(),
        split.train_per_class
    );
    for epoch in 0..3 {
        let subset = balanced_sample(&split.train, split.train_per_class, epoch, 0)?;
        let first: Vec<String> = subset.iter().take(3).map(SliceRecord::id).collect();
        println!("epoch {epoch}: {} slices, first {:?}", subset.len(), first);
    }
    Ok(())
}
