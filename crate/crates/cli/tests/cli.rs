use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn edgesplit(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgesplit"))
        .args(args)
        .env("EDGESPLIT_OUT", out_root)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out_root: &Path) -> String {
    let o = edgesplit(args, out_root);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const VGG: &str = r#"
[architecture]
name = "vgg16"
[split]
position = 3
[training]
optimizer = { kind = "sgd", momentum = 0.9 }
lr = 0.01
epochs = 100
batch_size = 128
[dataset]
kind = "cifar10"
path = "cifar"
"#;

fn vgg_config(dir: &Path) -> String {
    let cifar = dir.join("cifar");
    fs::create_dir_all(&cifar).unwrap();
    for i in 1..=5 {
        let f = fs::File::create(cifar.join(format!("data_batch_{i}.bin"))).unwrap();
        f.set_len(3073 * 10_000).unwrap();
    }
    let path = dir.join("vgg.toml");
    fs::write(&path, VGG).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn profile_vgg_lists_split3_bits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = vgg_config(dir.path());
    ok(&["profile", "--config", &cfg], dir.path());
    let csv = fs::read_to_string(dir.path().join("profile/profile.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("3,")).unwrap();
    assert!(row.ends_with(",16384"), "{row}");
}

#[test]
fn estimate_preset_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = vgg_config(dir.path());
    ok(&["estimate", "--config", &cfg], dir.path());
    let csv = fs::read_to_string(dir.path().join("estimate/estimate.csv")).unwrap();
    let total = |mode: &str, ch: &str| -> f64 {
        let row = csv.lines().find(|l| l.starts_with(&format!("{mode},{ch},"))).unwrap();
        row.rsplit(',').next().unwrap().parse().unwrap()
    };
    // Oracle: only the communication term depends on bandwidth.
    let oracle = |bits: f64| bits * 50_000.0 * (1.0 / 1.1e6 - 1.0 / 5.85e6);
    let dh = total("hierarchical", "3g") - total("hierarchical", "4g");
    let df = total("fullcloud", "3g") - total("fullcloud", "4g");
    assert!((dh - oracle(16384.0)).abs() < 1e-3, "{dh}");
    assert!((df - oracle(24576.0)).abs() < 1e-3, "{df}");
}

#[test]
fn errors_are_single_machine_readable_lines() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--set", "bogus=1"],
        vec!["profile", "--split", "99"],
        vec!["train", "--config", "/nonexistent/run.toml"],
    ] {
        let o = edgesplit(&args, dir.path());
        assert!(!o.status.success());
        let err = String::from_utf8(o.stderr).unwrap();
        let line = err.lines().last().unwrap();
        assert!(line.starts_with("error: kind=") && line.contains(" message=\""), "{line}");
    }
}

#[test]
fn fullcloud_matches_monolithic() {
    let dir = tempfile::tempdir().unwrap();
    let mut acc = Vec::new();
    for mode in ["fullcloud", "monolithic"] {
        let out = dir.path().join(mode);
        ok(&["train", "--mode", mode, "--set", "training.epochs=2", "--out", out.to_str().unwrap()], dir.path());
        acc.push(csv_column(&fs::read_to_string(out.join("metrics.csv")).unwrap(), "final_acc"));
    }
    assert_eq!(acc[0], acc[1]);
}

#[test]
fn resume_equals_straight_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    ok(&["train", "--set", "training.epochs=2", "--out", a], dir.path());
    let again = edgesplit(&["train", "--set", "training.epochs=2", "--out", a], dir.path());
    assert!(!again.status.success());
    ok(&["train", "--set", "training.epochs=3", "--resume", "--out", a], dir.path());
    ok(&["train", "--set", "training.epochs=3", "--out", b], dir.path());
    let read = |d: &str| fs::read_to_string(Path::new(d).join("metrics.csv")).unwrap();
    assert_eq!(read(a), read(b));
    assert!(Path::new(a).join("checkpoints/latest.ckpt").is_file());
    assert!(Path::new(a).join("events.log").is_file());

    ok(&["report", "--out", b], dir.path());
    let report = fs::read_to_string(Path::new(b).join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
}

#[test]
fn plan_picks_deepest_accurate_split() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &["plan", "--set", "training.epochs=3", "--set", "requirements.runtime_s=10.0", "--set", "requirements.accuracy=0.5"],
        dir.path(),
    );
    assert!(stdout.contains("chosen split: 3"), "{stdout}");
    assert!(stdout.contains("one-epoch trials 3, full runs 1"), "{stdout}");
    assert!(dir.path().join("plan/plan.csv").is_file());
}
