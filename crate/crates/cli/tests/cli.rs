use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vsod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsod")).args(args).output().expect("spawn vsod")
}

fn ok(args: &[&str]) -> Output {
    let out = vsod(args);
    assert!(
        out.status.success(),
        "vsod {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn synth(root: &Path) -> std::path::PathBuf {
    let clip = root.join("clip");
    ok(&["synth", "--output", p(&clip), "--seed", "7"]);
    clip
}

#[test]
fn synth_writes_clip_ground_truth_and_extents() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = synth(tmp.path());
    assert_eq!(fs::read_dir(clip.join("frames")).unwrap().count(), 32);
    assert_eq!(fs::read_dir(clip.join("gt")).unwrap().count(), 32);
    let objects = fs::read_to_string(clip.join("objects.txt")).unwrap();
    assert_eq!(objects.trim(), "object 0 first=0 last=31 size=16 origin=8,12 velocity=1,1");
    let img = image::open(clip.join("frames").join("00000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
}

#[test]
fn saliency_then_eval_reports_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = synth(tmp.path());
    let maps = tmp.path().join("maps");
    let report = tmp.path().join("metrics.txt");
    ok(&["saliency", "--input", p(&clip), "--output", p(&maps)]);
    let out = ok(&["eval", "--input", p(&maps), "--gt", p(&clip.join("gt")), "--report", p(&report)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("F-Adap"));
    let text = fs::read_to_string(&report).unwrap();
    for key in ["f_adap=", "f_max=", "mae="] {
        assert!(text.lines().any(|l| l.starts_with(key)), "missing {key} in {text}");
    }
    let prc = fs::read_to_string(tmp.path().join("metrics.prc.csv")).unwrap();
    assert_eq!(prc.lines().count(), 257);
}

#[test]
fn saliency_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = synth(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&["saliency", "--input", p(&clip), "--output", p(out), "--seed", "3", "--scales", "100,200"]);
    }
    let (da, db) = (dir_bytes(&a), dir_bytes(&b));
    assert_eq!(da.len(), 32);
    assert!(da == db);
}

#[test]
fn staged_artifacts_reproduce_the_direct_run() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = synth(tmp.path());
    let r = |name: &str| tmp.path().join(name);
    let scales = ["--scales", "100,200"];
    ok(&[&["flow", "--input", p(&clip), "--output", p(&r("flows"))][..], &scales].concat());
    ok(&[&["segment", "--input", p(&clip), "--flows", p(&r("flows")), "--output", p(&r("seg"))][..], &scales].concat());
    ok(&["features", "--input", p(&clip), "--segmentation", p(&r("seg")), "--output", p(&r("features.bin"))]);
    ok(&[
        &[
            "saliency",
            "--input",
            p(&clip),
            "--flows",
            p(&r("flows")),
            "--segmentation",
            p(&r("seg")),
            "--features",
            p(&r("features.bin")),
            "--output",
            p(&r("staged")),
        ][..],
        &scales,
    ]
    .concat());
    ok(&[&["saliency", "--input", p(&clip), "--output", p(&r("direct"))][..], &scales].concat());
    assert!(dir_bytes(&r("staged")) == dir_bytes(&r("direct")));
}

#[test]
fn vos_writes_masks_and_region_similarity() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = synth(tmp.path());
    let maps = tmp.path().join("maps");
    ok(&["saliency", "--input", p(&clip), "--output", p(&maps), "--scales", "100"]);
    let report = tmp.path().join("j.txt");
    let masks = tmp.path().join("masks");
    ok(&[
        "vos",
        "--input",
        p(&clip),
        "--maps",
        p(&maps),
        "--output",
        p(&masks),
        "--gt",
        p(&clip.join("gt")),
        "--report",
        p(&report),
    ]);
    assert_eq!(fs::read_dir(&masks).unwrap().count(), 32);
    let text = fs::read_to_string(report).unwrap();
    let mean: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("j_mean="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&mean));
}

#[test]
fn config_error_exits_2_with_one_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "theta_bt = -1\n").unwrap();
    let out = vsod(&["saliency", "--input", p(tmp.path()), "--output", p(&tmp.path().join("o")), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error kind=config msg=\""), "{err}");

    let out = vsod(&["flow", "--input", p(tmp.path()), "--output", "o", "--scales", "300,100"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_or_malformed_input_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vsod(&["saliency", "--input", p(&tmp.path().join("absent")), "--output", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind="));

    let clip = synth(tmp.path());
    let flows = tmp.path().join("flows");
    fs::create_dir(&flows).unwrap();
    fs::write(flows.join("fwd_00000.flo"), b"not a flow file").unwrap();
    fs::write(flows.join("bwd_00000.flo"), b"not a flow file").unwrap();
    let out = vsod(&["saliency", "--input", p(&clip), "--flows", p(&flows), "--output", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
}
