//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use codelnet::data::{
    balanced_sample, decode_tensor, encode_tensor, split_dataset, Label, Manifest, SliceRecord,
    SplitSpec,
};
use codelnet::metrics::{evaluate_metrics, ConfusionMatrix};
use codelnet::network::{read_weights, write_weights, BranchSpec, StageSpec};
use codelnet::optim::{early_stop, train_loop, EpochLog, LrSchedule, OptimizerKind, TrainConfig};
use codelnet::phantom::{generate_phantom, PhantomConfig, Texture};
use codelnet::pipeline::{accuracy, prepare_split};
use codelnet::preprocess::{
    build_epoch_training_set, AugmentParams, ChannelSelection, Provenance, SliceSample,
};
use codelnet::tensor::gradcheck::{check_op, GradcheckReport, Op};
use codelnet::{Error, Network, NetworkConfig, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};

const SEEDS: [u64; 4] = [0, 1, 2, 3];
const SGD_LR: f64 = 0.01;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct RunResult {
    test_acc: f64,
    pool_acc: f64,
    logs: Vec<EpochLog>,
    elapsed: Duration,
}

/// Generate a phantom, split it, and train the desk-scale network on it.
fn phantom_run(phantom: &PhantomConfig, train: &TrainConfig) -> RunResult {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_phantom(phantom, dir.path()).unwrap();
    let spec = SplitSpec {
        seed: train.master_seed,
        ..Default::default()
    };
    let split = split_dataset(&manifest, &spec).unwrap();
    let (data, test) = prepare_split(&manifest, &split, ChannelSelection::Both, 64).unwrap();
    let mut net =
        Network::build(NetworkConfig::desk_scale(2).with_seed(train.master_seed)).unwrap();
    let logs = train_loop(&mut net, &data, train).unwrap();
    RunResult {
        test_acc: accuracy(&net, &test).unwrap(),
        pool_acc: accuracy(&net, &data.pool).unwrap(),
        logs,
        elapsed: start.elapsed(),
    }
}

fn learning_config(seed: u64, optimizer: OptimizerKind, lr: f64) -> TrainConfig {
    TrainConfig {
        optimizer,
        schedule: LrSchedule {
            base_lr: lr,
            halving_period: 50,
        },
        max_epochs: 30,
        master_seed: seed,
        ..Default::default()
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for op in Op::ALL {
        let tol = op.default_tolerance();
        let mut report = GradcheckReport::new(op.name(), tol);
        for seed in 0..100 {
            report.merge(&check_op(op, seed, tol));
        }
        ensure(report.passed, || format!("{report}"))?;
        lines.push(format!("{}={:.1e}", op.name(), report.max_rel_error));
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(60), || format!("took {t:?}"))?;
    Ok(format!("{} in {:.1}s", lines.join(" "), t.as_secs_f64()))
}

fn metric_arithmetic() -> Outcome {
    let cm = ConfusionMatrix {
        tp: 42,
        fp: 8,
        tn: 37,
        fn_: 3,
    };
    let m = evaluate_metrics(&cm).map_err(|e| e.to_string())?;
    let got = [
        m.sensitivity * 100.0,
        m.specificity * 100.0,
        m.accuracy * 100.0,
    ];
    for (g, want) in got.iter().zip([93.33, 82.22, 87.78]) {
        ensure((g - want).abs() < 0.01, || format!("{g:.4} vs {want}"))?;
    }
    for (g, table) in got.iter().zip([93.3, 82.2, 87.7]) {
        ensure((g - table).abs() <= 0.1, || {
            format!("{g:.4} vs table {table}")
        })?;
    }
    Ok(format!("{:.2}/{:.2}/{:.2}", got[0], got[1], got[2]))
}

fn schedule_and_stopping() -> Outcome {
    let s = LrSchedule::default();
    ensure(
        s.lr(0) == 0.001 && s.lr(50) == 0.0005 && s.lr(120) == 0.00025,
        || format!("{} {} {}", s.lr(0), s.lr(50), s.lr(120)),
    )?;
    ensure(early_stop(&[0.5; 11], 0.02, 10), || {
        "plateau did not stop".into()
    })?;
    let alt: Vec<f64> = (0..30)
        .map(|i| if i % 2 == 0 { 0.5 } else { 0.55 })
        .collect();
    ensure(!early_stop(&alt, 0.02, 10), || {
        "alternating series stopped".into()
    })?;
    Ok("0.001/0.0005/0.00025, plateau stops, alternation runs".into())
}

fn learning_runs() -> Vec<RunResult> {
    SEEDS
        .iter()
        .map(|&seed| {
            let phantom = PhantomConfig {
                patients_per_class: 30,
                seed,
                ..Default::default()
            };
            phantom_run(&phantom, &learning_config(seed, OptimizerKind::Sgd, SGD_LR))
        })
        .collect()
}

fn phantom_learning(runs: &[RunResult]) -> Outcome {
    let accs: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.test_acc)).collect();
    let good = runs.iter().filter(|r| r.test_acc >= 0.95).count();
    for r in runs {
        ensure(r.logs.len() <= 30, || format!("{} epochs", r.logs.len()))?;
        ensure(r.elapsed < Duration::from_secs(300), || {
            format!("run took {:?}", r.elapsed)
        })?;
    }
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    let detail = format!(
        "test accuracy [{}], slowest run {:.0}s",
        accs.join(", "),
        slowest.as_secs_f64()
    );
    ensure(good >= 3, || detail.clone())?;
    Ok(detail)
}

fn overfitting_pattern() -> Outcome {
    let mut gaps = [Vec::new(), Vec::new()];
    let mut train0 = Vec::new();
    for &seed in &SEEDS {
        let phantom = PhantomConfig {
            patients_per_class: 28,
            texture: Texture::Stripes,
            stripe_period: 6.0,
            seed,
            ..Default::default()
        };
        for (i, (k, epochs)) in [(0usize, 30usize), (30, 5)].into_iter().enumerate() {
            let cfg = TrainConfig {
                augmentation_fold: k,
                max_epochs: epochs,
                augment: AugmentParams {
                    max_shift: 3,
                    ..Default::default()
                },
                ..learning_config(seed, OptimizerKind::Sgd, SGD_LR)
            };
            let r = phantom_run(&phantom, &cfg);
            if k == 0 {
                train0.push(r.pool_acc);
            }
            gaps[i].push(r.pool_acc - r.test_acc);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (train0, gap0, gap30) = (mean(&train0), mean(&gaps[0]), mean(&gaps[1]));
    let detail = format!("k=0 train {train0:.3} gap {gap0:.3}; k=30 gap {gap30:.3}");
    ensure(train0 >= 0.99, || detail.clone())?;
    ensure(gap0 >= 0.10, || detail.clone())?;
    ensure(gap30 <= gap0 / 2.0, || detail.clone())?;
    Ok(detail)
}

fn optimizer_quartet(sgd: &RunResult) -> Outcome {
    let mut results = vec![(OptimizerKind::Sgd, sgd.test_acc, &sgd.logs)];
    let others = [
        (OptimizerKind::RmsProp, 0.0005),
        (OptimizerKind::AdaDelta, 1.0),
        (OptimizerKind::Adam, 0.0005),
    ];
    let runs: Vec<(OptimizerKind, RunResult)> = others
        .iter()
        .map(|&(kind, lr)| {
            let phantom = PhantomConfig {
                patients_per_class: 30,
                seed: SEEDS[0],
                ..Default::default()
            };
            (
                kind,
                phantom_run(&phantom, &learning_config(SEEDS[0], kind, lr)),
            )
        })
        .collect();
    results.extend(runs.iter().map(|(k, r)| (*k, r.test_acc, &r.logs)));
    let detail = results
        .iter()
        .map(|(k, a, _)| format!("{k} {a:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    for (kind, acc, logs) in &results {
        let finite = logs
            .iter()
            .all(|l| l.train_loss.is_finite() && l.val_loss.is_none_or(f64::is_finite));
        ensure(finite, || format!("{kind} produced a non-finite loss"))?;
        ensure(*acc >= 0.85, || detail.clone())?;
    }
    Ok(detail)
}

fn run_cli(args: &[&str]) -> i32 {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = codelnet::cli::run(args.iter().copied(), &mut out, &mut err);
    if code != 0 {
        eprintln!("{}", String::from_utf8_lossy(&err));
    }
    code
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).display().to_string();
    ensure(
        run_cli(&[
            "codelnet",
            "phantom",
            "--patients",
            "20",
            "--seed",
            "5",
            "--out",
            &d("data"),
        ]) == 0,
        || "phantom failed".into(),
    )?;
    for run in ["a", "b"] {
        let code = run_cli(&[
            "codelnet",
            "train",
            "--manifest",
            &d("data/manifest.csv"),
            "--seed",
            "5",
            "--epochs",
            "4",
            "--lr",
            "0.01",
            "--test-per-class",
            "15",
            "--augment-fold",
            "2",
            "--out",
            &d(run),
        ]);
        ensure(code == 0, || format!("train exited {code}"))?;
    }
    for file in ["epochs.csv", "weights.cdw"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        ensure(a == b, || format!("{file} differs"))?;
    }
    Ok("epochs.csv and weights.cdw byte-identical across two runs".into())
}

fn clinical_scale_manifest() -> Manifest {
    let mut records = Vec::new();
    let classes = [(Label::Nondeleted, 102), (Label::Codeleted, 57)];
    for (label, patients) in classes {
        for p in 0..patients {
            for s in 0..3 {
                let pid = format!("{}{p:03}", &label.token()[..1]);
                records.push(SliceRecord {
                    patient_id: pid,
                    slice_index: s,
                    label,
                    t1c: "t1c.tsr".into(),
                    t2: "t2.tsr".into(),
                    mask: "mask.tsr".into(),
                });
            }
        }
    }
    Manifest::new(".", records)
}

fn pipeline_counts() -> Outcome {
    let manifest = clinical_scale_manifest();
    ensure(manifest.len() == 477, || {
        format!("{} slices", manifest.len())
    })?;
    let spec = SplitSpec {
        test_per_class: 45,
        validation_fraction: 0.0,
        ..Default::default()
    };
    let split = split_dataset(&manifest, &spec).map_err(|e| e.to_string())?;
    ensure(split.test.len() == 90 && split.train.len() == 387, || {
        format!("test {} remaining {}", split.test.len(), split.train.len())
    })?;
    let subset =
        balanced_sample(&split.train, split.train_per_class, 0, 0).map_err(|e| e.to_string())?;
    let per_class = |l: Label| subset.iter().filter(|r| r.label == l).count();
    ensure(
        subset.len() == 252 && per_class(Label::Codeleted) == 126,
        || format!("balanced subset {}", subset.len()),
    )?;
    // small stand-in images; only the counts matter here
    let samples: Vec<SliceSample> = subset
        .iter()
        .map(|r| SliceSample {
            image: Tensor::from_fn(&[2, 16, 16], |i| (i % 5) as f32),
            label: r.label,
            provenance: Provenance {
                patient_id: r.patient_id.clone(),
                slice_index: r.slice_index,
                copy: None,
            },
        })
        .collect();
    let params = AugmentParams {
        max_shift: 4,
        ..Default::default()
    };
    let epoch = build_epoch_training_set(&samples, 30, 0, 0, &params);
    ensure(epoch.len() == 7560, || format!("augmented {}", epoch.len()))?;
    Ok(format!(
        "387 remaining -> {} balanced -> {} augmented",
        subset.len(),
        epoch.len()
    ))
}

fn random_network_config() -> impl Strategy<Value = NetworkConfig> {
    (
        1usize..=2,
        6usize..=12,
        1usize..=3,
        1usize..=4,
        proptest::collection::vec(1usize..5, 0..3),
        any::<u64>(),
    )
        .prop_map(|(ch, canvas, kernel, filters, fc, seed)| NetworkConfig {
            input_channels: ch,
            canvas,
            branches: vec![
                BranchSpec::new(vec![StageSpec::new(filters, kernel)]),
                BranchSpec::new(vec![StageSpec::new(filters + 1, kernel + 1).pool(2)]),
            ],
            fc_sizes: fc,
            classes: 2,
            init_seed: seed,
        })
}

fn format_roundtrips() -> Outcome {
    let mut runner = TestRunner::new(PtConfig {
        cases: 1000,
        failure_persistence: None,
        ..Default::default()
    });
    let tensors =
        (proptest::collection::vec(1usize..6, 1..5), any::<u64>()).prop_flat_map(|(shape, _)| {
            let n: usize = shape.iter().product();
            (Just(shape), proptest::collection::vec(any::<u32>(), n))
        });
    runner
        .run(&tensors, |(shape, bits)| {
            let t = Tensor::new(shape, bits.iter().map(|&b| f32::from_bits(b)).collect()).unwrap();
            let bytes = encode_tensor(&t).unwrap();
            let back = decode_tensor(&bytes, Path::new("case")).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back
                .data()
                .iter()
                .zip(t.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            Ok(())
        })
        .map_err(|e| format!("tensor roundtrip: {e}"))?;

    let mut runner = TestRunner::new(PtConfig {
        cases: 1000,
        failure_persistence: None,
        ..Default::default()
    });
    runner
        .run(&(random_network_config(), any::<u64>()), |(cfg, salt)| {
            let mut net = Network::build(cfg.clone()).unwrap();
            for (i, p) in net.parameters_mut().iter_mut().enumerate() {
                for (j, v) in p.tensor.data_mut().iter_mut().enumerate() {
                    *v = f32::from_bits(
                        (salt ^ ((i as u64) << 40) ^ j as u64).wrapping_mul(0x9E37_79B9) as u32,
                    );
                }
            }
            let mut bytes = Vec::new();
            write_weights(&net, &mut bytes).unwrap();
            let back = read_weights(&bytes[..], cfg, Path::new("case")).unwrap();
            for (a, b) in net.parameters().iter().zip(back.parameters()) {
                prop_assert_eq!(&a.name, &b.name);
                let same = a
                    .tensor
                    .data()
                    .iter()
                    .zip(b.tensor.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits());
                prop_assert!(same);
            }
            Ok(())
        })
        .map_err(|e| format!("weights roundtrip: {e}"))?;

    let t = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
    let good = encode_tensor(&t).unwrap();
    let reject = |bytes: &[u8], needle: &str| -> Result<(), String> {
        match decode_tensor(bytes, Path::new("bad")) {
            Err(Error::Format { detail, .. }) if detail.contains(needle) => Ok(()),
            other => Err(format!("expected `{needle}` format error, got {other:?}")),
        }
    };
    let mut bad = good.clone();
    bad[0] = b'X';
    reject(&bad, "magic")?;
    let mut bad = good.clone();
    bad[4] = 0;
    reject(&bad, "rank")?;
    reject(&good[..good.len() - 1], "length mismatch")?;

    let net = Network::build(NetworkConfig::tiny(2)).unwrap();
    let mut w = Vec::new();
    write_weights(&net, &mut w).unwrap();
    let reject_w = |bytes: &[u8], needle: &str| -> Result<(), String> {
        match read_weights(bytes, NetworkConfig::tiny(2), Path::new("bad")) {
            Err(Error::Format { detail, .. }) if detail.contains(needle) => Ok(()),
            other => Err(format!("expected `{needle}` weights error, got {other:?}")),
        }
    };
    let mut bad = w.clone();
    bad[1] = b'X';
    reject_w(&bad, "magic")?;
    let mut bad = w.clone();
    bad[4] = 9;
    reject_w(&bad, "version")?;
    reject_w(&w[..w.len() / 2], "truncated")?;
    match read_weights(&w[..], NetworkConfig::tiny(1), Path::new("x")) {
        Err(Error::ParameterMismatch { name, .. }) if name == "branch0.conv0.weight" => {}
        other => return Err(format!("channel mismatch not reported: {other:?}")),
    }
    Ok("1000 tensor and 1000 weights roundtrips bit-exact; corrupt headers rejected".into())
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} {name}: PASS ({d}) [{secs:.0}s]"),
            Err(d) => {
                failures += 1;
                println!("criterion {n} {name}: FAIL ({d}) [{secs:.0}s]");
            }
        }
    };
    report(1, "gradient correctness", &mut gradient_correctness);
    report(2, "metric arithmetic", &mut metric_arithmetic);
    report(3, "schedule and stopping", &mut schedule_and_stopping);
    let mut runs = Vec::new();
    report(4, "phantom learning", &mut || {
        runs = learning_runs();
        phantom_learning(&runs)
    });
    report(5, "overfitting vs augmentation", &mut overfitting_pattern);
    report(6, "optimizer quartet", &mut || match runs.first() {
        Some(sgd) => optimizer_quartet(sgd),
        None => Err("criterion 4 produced no SGD run".into()),
    });
    report(7, "determinism", &mut determinism);
    report(8, "pipeline counts", &mut pipeline_counts);
    report(9, "format roundtrips", &mut format_roundtrips);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
