//! The four optimizers on the same data, network initialisation and batches.

use codelnet::data::{split_dataset, SplitSpec};
use codelnet::optim::{train_loop, LrSchedule, OptimizerKind, TrainConfig};
use codelnet::phantom::{generate_phantom, PhantomConfig};
use codelnet::pipeline::{accuracy, prepare_split};
use codelnet::preprocess::ChannelSelection;
use codelnet::{Network, NetworkConfig};

fn main() -> codelnet::Result<()> {
    let dir = std::env::temp_dir().join("codelnet_optimizer_comparison");
    let manifest = generate_phantom(&PhantomConfig::default(), &dir)?;
    let split = split_dataset(&manifest, &SplitSpec::default())?;
    let (data, test) = prepare_split(&manifest, &split, ChannelSelection::Both, 64)?;

    for (kind, lr) in [
        (OptimizerKind::Sgd, 0.01),
        (OptimizerKind::RmsProp, 0.0005),
        (OptimizerKind::AdaDelta, 1.0),
        (OptimizerKind::Adam, 0.0005),
    ] {
        let mut net = Network::build(NetworkConfig::desk_scale(2))?;
        let cfg = TrainConfig {
            optimizer: kind,
            schedule: LrSchedule {
                base_lr: lr,
                halving_period: 50,
            },
            max_epochs: 10,
            ..Default::default()
        };
        let logs = train_loop(&mut net, &data, &cfg)?;
        let last = logs.last().expect("at least one epoch");
        println!(
            "{kind:<8} epochs {:>2} train loss {:.4} test accuracy {:.3}",
            logs.len(),
            last.train_loss,
            accuracy(&net, &test)?
        );
    }
    Ok(())
}
