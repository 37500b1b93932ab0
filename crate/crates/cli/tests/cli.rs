use std::path::Path;
use std::process::{Command, Output};

use charprop::annotations::load_annotations;
use charprop::network::Model;

fn charprop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charprop"))
        .args(args)
        .env("CHARPROP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = charprop(args);
    assert!(
        out.status.success(),
        "charprop {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_small(dir: &Path, count: &str) {
    ok(&["synth", "--out", s(dir), "--count", count, "--seed", "7"]);
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth_small(&a, "3");
    synth_small(&b, "3");
    for name in [
        "annotations.txt",
        "scene_00000.png",
        "scene_00002.png",
        "synth_config.txt",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let ann = load_annotations(a.join("annotations.txt")).unwrap();
    assert_eq!(ann.len(), 3);
}

#[test]
fn synth_config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.txt");
    std::fs::write(&cfg, "count = 2\nseed = 3\ntexture = false\n").unwrap();
    let out = tmp.path().join("d");
    ok(&["synth", "--out", s(&out), "--config", s(&cfg), "--seed", "4"]);
    let echoed = std::fs::read_to_string(out.join("synth_config.txt")).unwrap();
    assert!(echoed.contains("seed = 4"), "{echoed}");
    assert!(echoed.contains("texture = false"), "{echoed}");
    assert!(echoed.contains("count = 2"), "{echoed}");
    assert!(out.join("scene_00001.png").exists());
    assert!(!out.join("scene_00002.png").exists());

    std::fs::write(&cfg, "colour = red\n").unwrap();
    assert!(!charprop(&["synth", "--out", s(&out), "--config", s(&cfg)])
        .status
        .success());
}

#[test]
fn train_infer_eval_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "4");
    let ann = data.join("annotations.txt");
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&ann),
        "--out",
        s(&run),
        "--arch",
        "cpn-eng-tiny",
        "--iterations",
        "5",
        "--batch-size",
        "16",
        "--lr",
        "0.01",
        "--seed",
        "1",
    ]);
    let log = std::fs::read_to_string(run.join("training_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "iter,loss_total,loss_cls,loss_reg");
    assert_eq!(lines.len(), 6);
    let echoed = std::fs::read_to_string(run.join("train_config.txt")).unwrap();
    assert!(
        echoed.contains("arch = cpn-eng-tiny") && echoed.contains("lr = 0.01"),
        "{echoed}"
    );

    // the echoed config reproduces the run
    let rerun = tmp.path().join("rerun");
    ok(&[
        "train",
        "--data",
        s(&ann),
        "--out",
        s(&rerun),
        "--config",
        s(&run.join("train_config.txt")),
    ]);
    assert_eq!(
        std::fs::read(run.join("model.cpnm")).unwrap(),
        std::fs::read(rerun.join("model.cpnm")).unwrap()
    );

    let props = tmp.path().join("out/proposals.csv");
    ok(&[
        "infer",
        "--model",
        s(&run.join("model.cpnm")),
        "--annotations",
        s(&ann),
        "--out",
        s(&props),
        "--max-scale",
        "1.5",
        "--score-threshold",
        "0.0",
        "--max-proposals",
        "50",
    ]);
    let csv = std::fs::read_to_string(&props).unwrap();
    assert!(csv.starts_with("image_id,x,y,w,h,score,template,scale\n"));
    assert!(csv.lines().count() > 1);
    assert!(tmp.path().join("out/infer_config.txt").exists());

    let curves = tmp.path().join("curves.csv");
    let out = ok(&[
        "eval",
        "--proposals",
        s(&props),
        "--annotations",
        s(&ann),
        "--top-n",
        "50",
        "--curves",
        s(&curves),
    ]);
    assert!(out.starts_with("recall "), "{out}");
    let curves = std::fs::read_to_string(curves).unwrap();
    assert!(curves.starts_with("axis,value,recall\n"));

    let report = ok(&["inspect", s(&run.join("model.cpnm"))]);
    assert!(report.contains("stride: 4"), "{report}");
    assert!(report.contains("receptive field: 29x29"), "{report}");
    assert!(report.contains("template 3:"), "{report}");
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "2");
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data.join("annotations.txt")),
        "--out",
        s(&run),
        "--arch",
        "cpn-eng-tiny",
        "--iterations",
        "3",
        "--batch-size",
        "8",
        "--lr",
        "0",
    ]);
    let init = Model::load(run.join("init.cpnm")).unwrap();
    let trained = Model::load(run.join("model.cpnm")).unwrap();
    assert_eq!(init.params, trained.params);
}

#[test]
fn inspect_full_size_english_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "1");
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data.join("annotations.txt")),
        "--out",
        s(&run),
        "--arch",
        "cpn-eng",
        "--iterations",
        "0",
    ]);
    let report = ok(&["inspect", s(&run.join("model.cpnm"))]);
    assert!(report.contains("stride: 4"), "{report}");
    assert!(report.contains("receptive field: 29x29"), "{report}");
    assert!(
        report.contains("29 -> 25 -> 12 -> 9 -> 4 -> 2 -> 1 -> 1 -> 1"),
        "{report}"
    );
}

#[test]
fn eval_on_truth_proposals_gives_full_recall() {
    let tmp = tempfile::tempdir().unwrap();
    let ann = tmp.path().join("ann.txt");
    std::fs::write(&ann, "a.png 10 20 30 40 A\na.png 50 20 10 40 B\nb.png 0 0 12 12\n").unwrap();
    let props = tmp.path().join("p.csv");
    std::fs::write(
        &props,
        "image_id,x,y,w,h,score,template,scale\na.png,10,20,30,40,0.9,1,1\na.png,50,20,10,40,0.8,1,1\nb.png,0,0,12,12,0.7,2,1\n",
    )
    .unwrap();
    let out = ok(&[
        "eval",
        "--proposals",
        s(&props),
        "--annotations",
        s(&ann),
        "--iou",
        "0.5",
    ]);
    assert!(out.starts_with("recall 1.000000 (3/3)"), "{out}");
}

#[test]
fn failures_exit_nonzero() {
    let out = charprop(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = charprop(&["inspect", "/nonexistent/model.cpnm"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    let out = charprop(&["eval", "--bogus"]);
    assert!(!out.status.success());
}
