use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn selftrain(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selftrain"))
        .arg("--set")
        .arg(format!("data_root={}", root.display()))
        .args(["--set", "world.n_samples=3"])
        .args(args)
        .output()
        .expect("run selftrain")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn seeded_root() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&selftrain(dir.path(), &["gen-world"]));
    ok(&selftrain(dir.path(), &["seed-generate"]));
    dir
}

/// Every file under `dir` with its bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn eval_matches_golden_csv() {
    let out = Command::new(env!("CARGO_BIN_EXE_selftrain"))
        .args(["eval", "--dets"])
        .arg(fixture("golden/dets"))
        .arg("--gts")
        .arg(fixture("golden/gts"))
        .output()
        .unwrap();
    let csv = ok(&out);
    assert_eq!(csv, fs::read_to_string(fixture("golden/expected.csv")).unwrap());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean predicted objects per sample: 2.6667"));
}

#[test]
fn self_train_resume_and_report() {
    let dir = seeded_root();
    let root = dir.path();
    let text = ok(&selftrain(root, &["self-train"]));
    assert!(text.contains("round 1:") && text.contains("round 2:"), "{text}");

    // resuming a finished run rewrites nothing
    let before = snapshot(root);
    ok(&selftrain(root, &["--resume", "self-train"]));
    assert_eq!(snapshot(root), before);

    // a second fresh run refuses to overwrite
    let again = selftrain(root, &["self-train"]);
    assert_eq!(again.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    let report = ok(&selftrain(root, &["report"]));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 4, "{report}");
    assert!(lines[0].starts_with("round,status,algorithm"));
    assert!(lines[2].starts_with("1,complete,filter_data_augmentation"));
    let columns = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == columns));

    fs::remove_file(root.join("rounds/round_2/manifest.json")).unwrap();
    let report = ok(&selftrain(root, &["report"]));
    let last = report.lines().last().unwrap();
    assert!(last.starts_with("2,incomplete"), "{report}");
    assert_eq!(last.split(',').count(), columns);

    // --resume redoes only the incomplete round, reproducing it exactly
    ok(&selftrain(root, &["--resume", "self-train"]));
    assert_eq!(snapshot(root), before);
}

#[test]
fn stub_detector_keeps_labels_fixed() {
    let dir = seeded_root();
    let root = dir.path();
    ok(&selftrain(
        root,
        &[
            "--set",
            "detector.mode=external",
            "--set",
            "detector.infer_cmd=cp {labels_dir}/*.txt {out_dir}/",
            "--set",
            "max_rounds=3",
            "self-train",
        ],
    ));
    let labels = |r: usize| snapshot(&root.join(format!("rounds/round_{r}/pseudo_labels")));
    let first = labels(1);
    assert!(!first.is_empty());
    assert_eq!(labels(2), first);
    assert_eq!(labels(3), first);
}

#[test]
fn zero_rounds_does_nothing() {
    let dir = seeded_root();
    let out = selftrain(dir.path(), &["--set", "max_rounds=0", "self-train"]);
    ok(&out);
    assert!(!dir.path().join("rounds/round_1").exists());
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let empty = selftrain(root, &["seed-generate"]);
    assert_eq!(empty.status.code(), Some(3));

    for bad in ["filter.rho=1.5", "filter.unknown=1", "no_equals_sign"] {
        let out = selftrain(root, &["--set", bad, "gen-world"]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
    }
    let out = selftrain(root, &["--workers", "0", "gen-world"]);
    assert_eq!(out.status.code(), Some(2));

    ok(&selftrain(root, &["gen-world"]));
    assert_eq!(selftrain(root, &["gen-world"]).status.code(), Some(3));
    ok(&selftrain(root, &["--force", "gen-world"]));

    ok(&selftrain(root, &["seed-generate"]));
    let failing = selftrain(
        root,
        &["--set", "detector.mode=external", "--set", "detector.infer_cmd=exit 1", "self-train"],
    );
    assert_eq!(failing.status.code(), Some(4));
    let unknown = selftrain(root, &["--set", "detector.mode=nope", "--force", "self-train"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn filter_build_db_and_augment_commands() {
    let dir = seeded_root();
    let root = dir.path();
    let out = root.join("filtered");
    let text = ok(&selftrain(
        root,
        &["filter", "--detections", root.join("seed_labels").to_str().unwrap(), "--out", out.to_str().unwrap()],
    ));
    assert!(text.starts_with("t="), "{text}");
    assert!(out.join("pseudo_labels").is_dir() && out.join("augmentation_labels").is_dir());

    let db = root.join("db");
    ok(&selftrain(
        root,
        &["build-db", "--labels", out.join("augmentation_labels").to_str().unwrap(), "--out", db.to_str().unwrap()],
    ));
    assert!(db.join("index.json").is_file());

    let aug = root.join("aug");
    let text = ok(&selftrain(
        root,
        &[
            "augment",
            "--labels",
            out.join("pseudo_labels").to_str().unwrap(),
            "--db",
            db.to_str().unwrap(),
            "--out",
            aug.to_str().unwrap(),
        ],
    ));
    assert!(text.starts_with("3 samples"), "{text}");
    assert_eq!(fs::read_dir(aug.join("points")).unwrap().count(), 3);
}
