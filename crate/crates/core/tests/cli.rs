use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use crossfusion::data::{read_bag, read_manifest, Dataset, Scale};
use crossfusion::train::{fold_dir, read_json, RunSummary};

fn xfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xfuse")).args(args).env_remove("XFUSE_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_contents(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// A small dataset and a two-fold run shared by the report tests.
struct Fixture {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let run = tmp.path().join("run");
        let o = xfuse(&["gen", "--out", s(&data), "--n-slides", "16", "--seed", "3", "--d-in", "16"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = xfuse(&[
            "train", "--data", s(&data), "--out", s(&run), "--folds", "2", "--epochs", "2", "--d-model", "8", "--heads",
            "2", "--seed", "1", "--quiet",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Fixture { _tmp: tmp, data, run }
    })
}

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(code(&xfuse(&["--help"])), 0);
    for sub in ["gen", "train", "eval", "gradcheck", "heatmap", "km"] {
        let o = xfuse(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&xfuse(&[])), 2);
    assert_eq!(code(&xfuse(&["bogus"])), 2);
    assert_eq!(code(&xfuse(&["gen", "--out", "x", "--no-such-flag"])), 2);
    assert_eq!(code(&xfuse(&["gen"])), 2);
    assert_eq!(code(&xfuse(&["gen", "--out", "x", "--signal", "bogus"])), 2);
    assert_eq!(code(&xfuse(&["train", "--data", "x", "--out", "y", "--variant", "tiny"])), 2);
    assert_eq!(code(&xfuse(&["heatmap", "--run", "r", "--fold", "0", "--slide", "a", "--layer", "cab-medium", "--out", "o"])), 2);
}

#[test]
fn gen_writes_bags_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let o = xfuse(&["gen", "--out", s(&out), "--n-slides", "10", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bags: Vec<_> = std::fs::read_dir(out.join("bags")).unwrap().collect();
    assert_eq!(bags.len(), 10);
    let recs = read_manifest(out.join("manifest.tsv")).unwrap();
    assert_eq!(recs.len(), 10);
    read_bag(out.join(&recs[0].bag_path)).unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("10 slides") && stdout.contains("mean patches"), "{stdout}");
}

#[test]
fn gen_is_deterministic_and_honours_the_seed_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for d in [&a, &b] {
        assert_eq!(code(&xfuse(&["gen", "--out", s(d), "--n-slides", "4", "--seed", "2"])), 0);
    }
    assert_eq!(dir_contents(&a), dir_contents(&b));

    let o = Command::new(env!("CARGO_BIN_EXE_xfuse"))
        .args(["gen", "--out", s(&c), "--n-slides", "4", "--seed", "9"])
        .env("XFUSE_SEED", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(dir_contents(&a), dir_contents(&c));

    let o = Command::new(env!("CARGO_BIN_EXE_xfuse"))
        .args(["gen", "--out", s(&c), "--n-slides", "4"])
        .env("XFUSE_SEED", "two")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_into_unwritable_location_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    std::fs::write(&file, b"x").unwrap();
    let o = xfuse(&["gen", "--out", s(&file.join("sub")), "--n-slides", "2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("plain"), "{}", stderr(&o));
}

#[test]
fn train_with_default_flags_writes_five_folds() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("d"), tmp.path().join("r"));
    assert_eq!(code(&xfuse(&["gen", "--out", s(&data), "--n-slides", "20", "--seed", "4", "--d-in", "16"])), 0);
    let o = xfuse(&["train", "--data", s(&data), "--out", s(&run), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: RunSummary = read_json(&run.join("summary.json")).unwrap();
    assert_eq!(summary.folds.len(), 5);
    for k in 0..5 {
        for f in ["checkpoint.xfckpt", "metrics.json", "risks.tsv"] {
            assert!(fold_dir(&run, k).join(f).is_file(), "fold {k} {f}");
        }
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains(&summary.mean_std));
}

#[test]
fn train_rejects_bad_configuration() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    for extra in [&["--folds", "1"][..], &["--d-model", "6", "--heads", "4"], &["--bins", "1"], &["--warmup", "30"], &["--dropout", "1.5"]] {
        let mut args = vec!["train", "--data", s(&f.data), "--out", s(&out), "--epochs", "1"];
        args.extend_from_slice(extra);
        let o = xfuse(&args);
        assert_eq!(code(&o), 2, "{extra:?}: {}", stderr(&o));
    }
    assert!(!out.exists());
}

#[test]
fn train_runs_the_concatenation_ablation() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r");
    let o = xfuse(&[
        "train", "--data", s(&f.data), "--out", s(&run), "--folds", "2", "--epochs", "1", "--d-model", "8", "--heads",
        "2", "--variant", "no-cp", "--quiet",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: RunSummary = read_json(&run.join("summary.json")).unwrap();
    assert_eq!(summary.variant.name(), "no-cp");
}

#[test]
fn corrupt_bag_fails_with_its_name() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert_eq!(code(&xfuse(&["gen", "--out", s(&data), "--n-slides", "6", "--seed", "1"])), 0);
    let victim = data.join("bags/s0002.xfb");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&victim, bytes).unwrap();
    let o = xfuse(&["train", "--data", s(&data), "--out", s(&tmp.path().join("r")), "--folds", "2"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("s0002.xfb"), "{}", stderr(&o));
}

#[test]
fn gradcheck_default_passes() {
    let o = xfuse(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let table = String::from_utf8_lossy(&o.stdout);
    for name in ["linear", "layer_norm", "softmax_attention", "grouped_conv2d", "conv3d_fuse", "cab", "pad_transformer", "conv_processor", "model_full"] {
        assert!(table.contains(name), "{name}");
    }
    assert!(!table.contains("FAIL"));
}

#[test]
fn gradcheck_flags_a_corrupted_backward_rule() {
    let o = xfuse(&["gradcheck", "--inject-fault", "softmax"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("softmax_attention"), "{}", stderr(&o));
}

#[test]
fn gradcheck_rejects_an_uneven_head_split() {
    assert_eq!(code(&xfuse(&["gradcheck", "--d-model", "6"])), 2);
}

#[test]
fn heatmap_rows_follow_the_native_scale() {
    let f = fixture();
    let data = Dataset::load(&f.data).unwrap();
    let slide = &data.slides[0];
    let tmp = tempfile::tempdir().unwrap();
    for (layer, scale) in [("cab-coarse", Scale::Coarse), ("cab-fine", Scale::Fine), ("pt-source", Scale::Source), ("pt-fused", Scale::Source)] {
        let csv = tmp.path().join(format!("{layer}.csv"));
        let pgm = tmp.path().join(format!("{layer}.pgm"));
        let o = xfuse(&[
            "heatmap", "--run", s(&f.run), "--fold", "1", "--slide", &slide.id, "--layer", layer, "--out", s(&csv),
            "--pgm", s(&pgm),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let text = std::fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,score"));
        let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        let coords = &slide.bag.scale(scale).coords;
        assert_eq!(rows.len(), coords.len(), "{layer}");
        for (r, c) in rows.iter().zip(coords) {
            assert_eq!((r[0] as i32, r[1] as i32), (c[0], c[1]));
        }
        let scores: Vec<f64> = rows.iter().map(|r| r[2]).collect();
        assert_eq!(scores.iter().copied().fold(f64::INFINITY, f64::min), 0.0, "{layer}");
        assert_eq!(scores.iter().copied().fold(0.0, f64::max), 1.0, "{layer}");
        let img = std::fs::read(&pgm).unwrap();
        assert!(img.starts_with(b"P5\n"));
    }
}

#[test]
fn heatmap_is_deterministic() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let outs: Vec<Vec<u8>> = ["a.csv", "b.csv"]
        .iter()
        .map(|name| {
            let p = tmp.path().join(name);
            let o = xfuse(&["heatmap", "--run", s(&f.run), "--fold", "0", "--slide", "s0005", "--layer", "pt-fused", "--out", s(&p)]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            std::fs::read(p).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn heatmap_unknown_slide_or_fold_is_a_usage_error() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap().path().join("h.csv");
    let o = xfuse(&["heatmap", "--run", s(&f.run), "--fold", "0", "--slide", "nope", "--layer", "cab-fine", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = xfuse(&["heatmap", "--run", s(&f.run), "--fold", "7", "--slide", "s0001", "--layer", "cab-fine", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn heatmap_layer_missing_from_variant_is_a_usage_error() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r");
    let o = xfuse(&[
        "train", "--data", s(&f.data), "--out", s(&run), "--folds", "2", "--epochs", "1", "--d-model", "8", "--heads",
        "2", "--variant", "no-fc", "--quiet",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = tmp.path().join("h.csv");
    let o = xfuse(&["heatmap", "--run", s(&run), "--fold", "0", "--slide", "s0001", "--layer", "cab-coarse", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = xfuse(&["heatmap", "--run", s(&run), "--fold", "0", "--slide", "s0001", "--layer", "pt-source", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fine = Dataset::load(&f.data).unwrap().find("s0001").unwrap().bag.scale(Scale::Fine).len();
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), fine + 1);
}

#[test]
fn km_writes_curves_with_p_header() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let (csv, svg) = (tmp.path().join("km.csv"), tmp.path().join("km.svg"));
    let o = xfuse(&["km", "--run", s(&f.run), "--out", s(&csv), "--svg", s(&svg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let first = text.lines().next().unwrap();
    let p: f64 = first.strip_prefix("# logrank_p=").unwrap().parse().unwrap();
    assert!(p.is_nan() || (0.0..=1.0).contains(&p));
    assert_eq!(text.lines().nth(1), Some("group,time,survival"));
    let groups: Vec<&str> = text.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert!(groups.contains(&"high") && groups.contains(&"low"));
    let svg = std::fs::read_to_string(&svg).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    let again = tmp.path().join("km2.csv");
    assert_eq!(code(&xfuse(&["km", "--run", s(&f.run), "--out", s(&again)])), 0);
    assert_eq!(text, std::fs::read_to_string(&again).unwrap());
}

#[test]
fn km_with_missing_fold_outputs_fails() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r");
    std::fs::create_dir_all(fold_dir(&run, 0)).unwrap();
    std::fs::copy(f.run.join("config.json"), run.join("config.json")).unwrap();
    std::fs::copy(fold_dir(&f.run, 0).join("risks.tsv"), fold_dir(&run, 0).join("risks.tsv")).unwrap();
    let o = xfuse(&["km", "--run", s(&run), "--out", s(&tmp.path().join("km.csv"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("fold_1"), "{}", stderr(&o));
}

#[test]
fn eval_reproduces_stored_metrics() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eval.json");
    let o = xfuse(&["eval", "--run", s(&f.run), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 2);
    assert!(!stdout.contains("differs"), "{stdout}");
    let reports: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
}
