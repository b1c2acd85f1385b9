//! Save a network, load it back and confirm the predictions agree bit for bit.

use codelnet::network::{load_weights, save_weights};
use codelnet::{Network, NetworkConfig, Tensor};

fn main() -> codelnet::Result<()> {
    let cfg = NetworkConfig::desk_scale(2).with_seed(3);
    let net = Network::build(cfg.clone())?;
    let path = std::env::temp_dir().join("codelnet_example.cdw");
    save_weights(&net, &path)?;
    let loaded = load_weights(&path, cfg)?;

    let batch = Tensor::from_fn(&[4, 2, 64, 64], |i| ((i * 7919) % 101) as f32 / 50.0 - 1.0);
    let a = net.forward(&batch, false)?;
    let b = loaded.forward(&batch, false)?;
    let identical = a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    println!(
        "{} parameters, {} bytes on disk, predictions identical: {identical}",
        net.parameter_count(),
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0)
    );

    match load_weights(&path, NetworkConfig::desk_scale(1)) {
        Err(e) => println!("loading into a one-channel network fails: {e}"),
        Ok(_) => println!("unexpected: mismatched load succeeded"),
    }
    Ok(())
}
