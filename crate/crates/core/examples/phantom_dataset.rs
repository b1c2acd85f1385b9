//! Generate a small synthetic dataset and look at what was written.
//!
//! `cargo run --example phantom_dataset -- [out_dir]`

use codelnet::data::{read_tensor_file, Label};
use codelnet::phantom::{generate_phantom, PhantomConfig};

fn main() -> codelnet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "phantom_out".into());
    let cfg = PhantomConfig {
        patients_per_class: 4,
        ..Default::default()
    };
    let manifest = generate_phantom(&cfg, out.as_ref())?;
    println!(
        "{} slices: {} nondeleted, {} codeleted",
        manifest.len(),
        manifest.count(Label::Nondeleted),
        manifest.count(Label::Codeleted)
    );
    for record in manifest.records.iter().take(4) {
        let r = manifest.resolved(record);
        let mask = read_tensor_file(&r.mask)?;
        let area = mask.data().iter().filter(|&&v| v > 0.5).count();
        println!("{} {:<10} mask area {area}", r.id(), r.label.token());
    }
    println!("manifest at {out}/manifest.csv");
    Ok(())
}
