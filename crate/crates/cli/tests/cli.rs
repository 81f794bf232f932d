use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_infopriv"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["oracle-selftest"], tmp.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn train_then_certify_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&run(&["train", "--seed", "11", "--out", out], tmp.path())), 0);
        let o = run(&["certify", "--seed", "11", "--out", out], tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    let names: Vec<_> = a.iter().map(|(n, _)| n.as_str()).collect();
    for f in ["model.json", "joint.json", "samples.json", "trace.csv", "manifest.json", "certify.csv", "certify.json"] {
        assert!(names.contains(&f), "missing {f}");
    }
    assert_eq!(a, b);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    let star = manifest["summary"]["theta_star"].as_f64().unwrap();
    let theta = manifest["summary"]["theta"].as_f64().unwrap();
    assert!((theta - 0.999 * star).abs() < 1e-12);

    let mut rdr = csv::Reader::from_path(tmp.path().join("a/certify.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[0], "seed");
    assert_eq!(&header[1], "config_digest");
    let row = rdr.records().next().unwrap().unwrap();
    let be: f64 = row[header.iter().position(|h| h == "bayes_error_h").unwrap()].parse().unwrap();
    assert!((0.0..=0.5).contains(&be));
}

#[test]
fn seed_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["gen-data", "--seed", "1", "--out", "a"], tmp.path())), 0);
    assert_eq!(code(&run(&["gen-data", "--seed", "2", "--out", "b"], tmp.path())), 0);
    let read = |d: &str| fs::read(tmp.path().join(d).join("train.csv")).unwrap();
    assert_ne!(read("a"), read("b"));
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| fs::write(tmp.path().join(name), body).unwrap();
    write("loss.toml", "[risk]\nloss = \"no_such_loss\"\n");
    write("typo.toml", "[solver]\nmu = 5.0\nwat = 1\n");
    write(
        "rho.toml",
        "[data]\nsource = \"synthetic\"\nkind = \"binary_table3\"\nrho = 0.23\np_g = 0.95\n",
    );
    write("nosweep.toml", "");
    for (cmd, cfg) in [
        ("train", "loss.toml"),
        ("train", "typo.toml"),
        ("train", "rho.toml"),
        ("train", "missing.toml"),
        ("sweep", "nosweep.toml"),
    ] {
        let o = run(&[cmd, "--config", cfg, "--out", "o"], tmp.path());
        assert_eq!(code(&o), 2, "{cmd} {cfg}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["certify", "--out", "empty"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn oversized_support_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("big.toml"),
        "[data]\nsource = \"synthetic\"\nkind = \"mary_sec4a3\"\nm = 3\nn_train = 60\n[solver]\nz_card = 8\nmax_outer = 1\n",
    )
    .unwrap();
    assert_eq!(code(&run(&["train", "--config", "big.toml", "--out", "o"], tmp.path())), 0);
    // with samples the overflow is reported and the plug-in estimate still runs
    let o = run(&["certify", "--config", "big.toml", "--out", "o"], tmp.path());
    assert_eq!(code(&o), 0);
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("o/certify.json")).unwrap()).unwrap();
    assert_eq!(rep["support_overflow"], true);
    assert!(rep["epsilon_hat"].is_number() || rep["epsilon_hat"] == "inf");
    fs::remove_file(tmp.path().join("o/samples.json")).unwrap();
    let o = run(&["certify", "--config", "big.toml", "--out", "o"], tmp.path());
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("s.toml"),
        "[sweep]\naxis = \"rho\"\nvalues = [0.0, 0.1, 0.2]\n",
    )
    .unwrap();
    let mut outs = vec![];
    for (threads, out) in [("1", "one"), ("3", "three")] {
        let o = bin()
            .args(["sweep", "--config", "s.toml", "--out", out])
            .env("INFOPRIV_THREADS", threads)
            .current_dir(tmp.path())
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(fs::read(tmp.path().join(out).join("sweep.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let text = String::from_utf8(outs.remove(0)).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("axis,value,error_h,error_g,epsilon"));
}

#[test]
fn csv_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let mut body = String::from("age,work,income,race\n");
    for i in 0..120 {
        let age = 18 + (i * 7) % 60;
        let work = ["private", "gov", "self"][i % 3];
        let income = if (age > 40) ^ (i % 5 == 0) { ">50K" } else { "<=50K" };
        let race = ["White", "Black", "Other"][(i / 2) % 3];
        body.push_str(&format!("{age},{work},{income},{race}\n"));
    }
    body.push_str("?,private,>50K,White\n");
    fs::write(tmp.path().join("train.csv"), &body).unwrap();
    fs::write(
        tmp.path().join("c.toml"),
        r#"
[data]
source = "csv"
train = "train.csv"
test = "train.csv"

[data.schema]
features = ["age", "work"]
categorical = ["work"]
h_column = "income"
h_positive = ">50K"
g_column = "race"
levels = 4

[data.schema.g_classes]
White = 0
Black = 1
Other = 2
"#,
    )
    .unwrap();
    let o = run(&["train", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("o/bins.json").exists());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["data"]["rows_dropped"], 1);
    assert_eq!(manifest["summary"]["n_train"], 120);
    let o = run(&["certify", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("o/certify.json")).unwrap()).unwrap();
    assert!(rep["bayes_error_h"].is_null());
    assert!(!rep["test_error_h"].is_null());
}
