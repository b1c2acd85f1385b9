//! Train the desk-scale network on a phantom dataset and report test metrics.
//!
//! `cargo run --release --example train_phantom -- [epochs] [seed]`

use codelnet::cli::metrics_table;
use codelnet::data::{split_dataset, SplitSpec};
use codelnet::optim::{train_loop_with, LrSchedule, TrainConfig};
use codelnet::phantom::{generate_phantom, PhantomConfig};
use codelnet::pipeline::{evaluate, prepare_split};
use codelnet::preprocess::ChannelSelection;
use codelnet::{Network, NetworkConfig};

fn main() -> codelnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(15, |s| s.parse().expect("epochs"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));

    let dir = std::env::temp_dir().join(format!("codelnet_train_phantom_{seed}"));
    let manifest = generate_phantom(
        &PhantomConfig {
            seed,
            ..Default::default()
        },
        &dir,
    )?;
    let split = split_dataset(
        &manifest,
        &SplitSpec {
            seed,
            ..Default::default()
        },
    )?;
    let (data, test) = prepare_split(&manifest, &split, ChannelSelection::Both, 64)?;
    println!(
        "pool {} (balanced {} per class), validation {}, test {}",
        data.pool.len(),
        data.per_class,
        data.validation.len(),
        test.len()
    );

    let mut net = Network::build(NetworkConfig::desk_scale(2).with_seed(seed))?;
    let cfg = TrainConfig {
        schedule: LrSchedule {
            base_lr: 0.01,
            halving_period: 50,
        },
        max_epochs: epochs,
        master_seed: seed,
        ..Default::default()
    };
    train_loop_with(&mut net, &data, &cfg, |log, _| {
        println!(
            "epoch {:>3} loss {:.4} acc {:.3} val_loss {:.4}",
            log.epoch,
            log.train_loss,
            log.train_acc,
            log.val_loss.unwrap_or(f64::NAN)
        );
    })?;

    let report = evaluate(&net, &test)?;
    print!("{}", metrics_table(&report.confusion));
    Ok(())
}
