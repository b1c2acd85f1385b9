use std::fs;
use std::path::Path;

use codelnet::cli::{run, EXIT_CHECK, EXIT_IO, EXIT_MISMATCH, EXIT_OK, EXIT_SPLIT, EXIT_USAGE};
use codelnet::data::{write_tensor_file, Label, Manifest, SliceRecord};
use codelnet::network::save_weights;
use codelnet::preprocess::zscore;
use codelnet::{Network, NetworkConfig, Tensor};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(
        std::iter::once("codelnet").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn phantom(dir: &Path, patients: &str, seed: &str) {
    let o = cli(&[
        "phantom",
        "--patients",
        patients,
        "--seed",
        seed,
        "--out",
        &s(dir),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
}

#[test]
fn phantom_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "phantom",
        "--patients",
        "2",
        "--out",
        &s(&dir.path().join("d")),
    ]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stdout.contains("(12 records)"), "{}", o.stdout);

    assert_eq!(cli(&["phantom", "--patients", "0"]).code, EXIT_USAGE);
    assert_eq!(cli(&["phantom", "--frobnicate"]).code, EXIT_USAGE);
    assert_eq!(cli(&[]).code, EXIT_USAGE);
    assert_eq!(cli(&["--help"]).code, EXIT_OK);

    let file = dir.path().join("plain_file");
    fs::write(&file, "x").unwrap();
    let o = cli(&["phantom", "--patients", "1", "--out", &s(&file.join("sub"))]);
    assert_eq!(o.code, EXIT_IO, "{}", o.stderr);
}

#[test]
fn infeasible_split_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), "4", "1");
    let o = cli(&[
        "train",
        "--manifest",
        &s(&dir.path().join("manifest.csv")),
        "--out",
        &s(&dir.path().join("run")),
    ]);
    assert_eq!(o.code, EXIT_SPLIT, "{}", o.stderr);
    assert!(o.stderr.contains("error:"));
}

#[test]
fn train_evaluate_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run_dir = dir.path().join("run");
    phantom(&data, "6", "2");
    let manifest = s(&data.join("manifest.csv"));
    let net = ["--branches", "8x4p2", "--fc", ""];
    let mut args = vec![
        "train",
        "--manifest",
        &manifest,
        "--test-per-class",
        "3",
        "--epochs",
        "2",
    ];
    let out = s(&run_dir);
    args.extend(net);
    args.extend(["--out", &out]);
    let o = cli(&args);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    for f in [
        "config.txt",
        "epochs.csv",
        "weights.cdw",
        "test_manifest.csv",
        "train_manifest.csv",
    ] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let epochs = fs::read_to_string(run_dir.join("epochs.csv")).unwrap();
    assert!(epochs.starts_with("epoch,lr,train_loss,train_acc,val_loss,val_acc\n"));
    assert_eq!(epochs.lines().count(), 3);

    let test_manifest = s(&run_dir.join("test_manifest.csv"));
    let mut eval = vec!["evaluate", "--manifest", &test_manifest];
    eval.extend(net);
    eval.extend(["--out", &out]);
    let o = cli(&eval);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.starts_with("metric,value\nsensitivity,"));
    let table = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(table, o.stdout);

    let mut predict = vec!["predict", "--manifest", &test_manifest];
    predict.extend(net);
    predict.extend(["--out", &out]);
    let o = cli(&predict);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let listed: Vec<String> = fs::read_to_string(run_dir.join("test_manifest.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{}_{}", f[0], f[1])
        })
        .collect();
    let lines: Vec<&str> = o.stdout.lines().collect();
    assert_eq!(lines.len(), 6);
    for (line, id) in lines.iter().zip(&listed) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 3);
        assert_eq!(f[0], id);
        assert!(f[1] == "nondeleted" || f[1] == "codeleted");
        let p: f64 = f[2].parse().unwrap();
        assert!((0.5..=1.0).contains(&p));
    }

    // wrong channel count for the stored weights
    let mut bad = eval.clone();
    bad.extend(["--channels", "t2"]);
    let o = cli(&bad);
    assert_eq!(o.code, EXIT_MISMATCH, "{}", o.stderr);
    assert!(o.stderr.contains("branch0.conv0.weight"), "{}", o.stderr);

    let missing = s(&dir.path().join("nope.csv"));
    let mut gone = vec!["predict", "--manifest", &missing];
    gone.extend(net);
    gone.extend(["--out", &out]);
    assert_eq!(cli(&gone).code, EXIT_IO);

    // the config echo reproduces the run
    let echo = run_dir.join("config.txt");
    let replay = dir.path().join("replay");
    let o = cli(&["train", "--config", &s(&echo), "--out", &s(&replay)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    for f in ["epochs.csv", "weights.cdw"] {
        assert_eq!(
            fs::read(run_dir.join(f)).unwrap(),
            fs::read(replay.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    phantom(&a, "2", "1");
    phantom(&b, "2", "2");
    assert_ne!(
        fs::read(a.join("tensors/P000_0_t1c.tsr")).unwrap(),
        fs::read(b.join("tensors/P000_0_t1c.tsr")).unwrap()
    );
}

#[test]
fn gradcheck_filter_and_failure() {
    let o = cli(&["gradcheck", "--op", "relu", "--cases", "3"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(o.stdout.lines().filter(|l| l.contains("relu")).count(), 1);
    assert!(!o.stdout.contains("dense"));

    let o = cli(&[
        "gradcheck",
        "--op",
        "dense",
        "--cases",
        "2",
        "--tolerance",
        "1e-14",
    ]);
    assert_eq!(o.code, EXIT_CHECK);
    assert!(o.stdout.contains("FAIL"));

    assert_eq!(cli(&["gradcheck", "--op", "nonsense"]).code, EXIT_USAGE);
}

/// A dataset and a hand-built network that separates it perfectly:
/// class images are `+P` and `-P`, the single 16×16 kernel is the z-scored
/// `P`, so the feature is `N` for codeleted and 0 after ReLU for nondeleted.
#[test]
fn perfect_oracle_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let n = 16;
    let pattern = Tensor::from_fn(&[n, n], |i| ((i * 37 % 11) as f32 - 5.0) * 0.3);
    let mask = Tensor::full(&[n, n], 1.0f32);
    fs::create_dir_all(dir.path().join("t")).unwrap();
    write_tensor_file(&mask, dir.path().join("t/mask.tsr")).unwrap();
    let mut records = Vec::new();
    for i in 0..8 {
        let label = if i % 2 == 0 {
            Label::Codeleted
        } else {
            Label::Nondeleted
        };
        let sign = if label == Label::Codeleted { 1.0 } else { -1.0 };
        let img = pattern.map(|v| sign * v * (1.0 + i as f32));
        let path = format!("t/img{i}.tsr");
        write_tensor_file(&img, dir.path().join(&path)).unwrap();
        records.push(SliceRecord {
            patient_id: format!("p{i}"),
            slice_index: 0,
            label,
            t1c: path.clone().into(),
            t2: path.into(),
            mask: "t/mask.tsr".into(),
        });
    }
    let manifest_path = dir.path().join("manifest.csv");
    Manifest::new(dir.path(), records)
        .write(&manifest_path)
        .unwrap();

    let cfg = NetworkConfig {
        input_channels: 1,
        canvas: n,
        branches: codelnet::network::parse_branches("16x1").unwrap(),
        fc_sizes: vec![],
        classes: 2,
        init_seed: 0,
    };
    let mut net = Network::build(cfg).unwrap();
    let kernel = zscore(&pattern.reshape(&[1, n, n]).unwrap()).unwrap();
    let setting: [(&str, &[f32]); 4] = [
        ("branch0.conv0.weight", kernel.data()),
        ("branch0.conv0.bias", &[0.0]),
        ("fc0.weight", &[-1.0, 1.0]),
        ("fc0.bias", &[0.5, 0.0]),
    ];
    for (name, values) in setting {
        net.parameter_mut(name)
            .unwrap()
            .tensor
            .data_mut()
            .copy_from_slice(values);
    }
    let weights = dir.path().join("oracle.cdw");
    save_weights(&net, &weights).unwrap();

    let o = cli(&[
        "evaluate",
        "--manifest",
        &s(&manifest_path),
        "--weights",
        &s(&weights),
        "--channels",
        "t1c",
        "--canvas",
        "16",
        "--branches",
        "16x1",
        "--fc",
        "",
        "--out",
        &s(&dir.path().join("eval")),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.contains("sensitivity,1.0000"), "{}", o.stdout);
    assert!(o.stdout.contains("specificity,1.0000"));
    assert!(o.stdout.contains("accuracy,1.0000"));
    assert!(o.stdout.contains("tp,4\nfp,0\ntn,4\nfn,0"));
}
