//! Layer shapes and parameter counts of the full-size network.

use codelnet::{build_network, NetworkConfig};

fn main() -> codelnet::Result<()> {
    for (name, cfg) in [
        ("desk scale", NetworkConfig::desk_scale(2)),
        ("full scale", NetworkConfig::full_scale(2)),
    ] {
        let net = build_network(cfg.clone())?;
        println!(
            "{name}: canvas {}, {} parameters",
            cfg.canvas,
            net.parameter_count()
        );
        for (b, shapes) in net.conv_output_shapes().iter().enumerate() {
            let spec = &cfg.branches[b].stages[0];
            println!(
                "  branch {b}: {} filters of {}x{} stride {} -> {:?}",
                spec.filters, spec.kernel.h, spec.kernel.w, spec.stride.h, shapes
            );
        }
    }
    Ok(())
}
