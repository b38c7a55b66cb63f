//! End-to-end runs of the `fsosr` executable and its file formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fsosr::{emb, raster};
use fsosr_core::dataset::{mask_span, EmbeddingDataset, RasterImage, View};
use fsosr_core::numkit::Matrix;
use proptest::prelude::*;

fn fsosr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsosr"))
        .args(args)
        .output()
        .unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = fsosr(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(
        fsosr(&["selfcheck", "--no-such-flag"]).status.code(),
        Some(2)
    );
}

#[test]
fn selfcheck_passes_on_a_fresh_build() {
    let out = fsosr(&["selfcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.ends_with("[ok]")).count(),
        2,
        "{text}"
    );
}

#[test]
fn missing_input_reports_its_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = fsosr(&[
        "select",
        "--pool",
        &path(dir.path(), "absent.emb"),
        "--out",
        &path(dir.path(), "x.emb"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().filter(|l| l.starts_with("error[")).count(), 1);
    assert!(err.contains("error[io]"), "{err}");
}

#[test]
fn infeasible_selection_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = fsosr(&[
        "select",
        "--k",
        "500",
        "--pool",
        &fixture("pool.emb"),
        "--out",
        &path(dir.path(), "x.emb"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("error[infeasible]"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn mask_round_trips_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (37, 20);
    let pixels: Vec<u8> = (0..w * h * 3).map(|i| (i % 251) as u8 + 1).collect();
    let img = RasterImage::new(w, h, 3, pixels).unwrap();
    let input = dir.path().join("in.png");
    raster::write_png(&input, &img).unwrap();

    let output = dir.path().join("out.png");
    let out = fsosr(&[
        "mask",
        "--gamma",
        "8",
        input.to_str().unwrap(),
        output.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let masked = raster::read_png(&output).unwrap();
    assert_eq!(
        (masked.width(), masked.height(), masked.channels()),
        (w, h, 3)
    );
    let ((x0, x1), (y0, y1)) = (mask_span(w, 8), mask_span(h, 8));
    for y in 0..h {
        for x in 0..w {
            let inside = (x0..x1).contains(&x) && (y0..y1).contains(&y);
            if inside {
                assert_eq!(masked.pixel(x, y), [0, 0, 0]);
            } else {
                assert_eq!(masked.pixel(x, y), img.pixel(x, y));
            }
        }
    }
}

fn run_pipeline(dir: &Path) -> PathBuf {
    let cfg = fixture("run.cfg");
    let o = |n: &str| path(dir, n);
    let steps: Vec<Vec<String>> = vec![
        vec![
            "select".into(),
            "--config".into(),
            cfg.clone(),
            "--pool".into(),
            fixture("pool.emb"),
            "--out".into(),
            o("sel.emb"),
        ],
        vec![
            "build-context".into(),
            "--config".into(),
            cfg.clone(),
            "--context".into(),
            fixture("ctx.emb"),
            "--out".into(),
            o("dict.bin"),
        ],
        vec![
            "train-csr".into(),
            "--config".into(),
            cfg.clone(),
            "--train".into(),
            o("sel.emb"),
            "--dict".into(),
            o("dict.bin"),
            "--out".into(),
            o("head.bin"),
        ],
        vec![
            "train-pa".into(),
            "--config".into(),
            cfg.clone(),
            "--train".into(),
            o("sel.emb"),
            "--out".into(),
            o("projector.bin"),
            "--prototypes".into(),
            o("protos.emb"),
        ],
        vec![
            "eval".into(),
            "--config".into(),
            cfg,
            "--test".into(),
            fixture("test.emb"),
            "--truth".into(),
            fixture("test.csv"),
            "--dict".into(),
            o("dict.bin"),
            "--head".into(),
            o("head.bin"),
            "--projector".into(),
            o("projector.bin"),
            "--prototypes".into(),
            o("protos.emb"),
            "--fallback".into(),
            fixture("fb.emb"),
            "--out".into(),
            o("report.json"),
            "--decisions".into(),
            o("decisions.csv"),
        ],
    ];
    for step in steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let out = fsosr(&args);
        assert_eq!(out.status.code(), Some(0), "{}: {}", step[0], stderr(&out));
    }
    dir.join("report.json")
}

#[test]
fn fixture_pipeline_produces_an_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_pipeline(dir.path())).unwrap()).unwrap();
    assert_eq!(report["n_samples"], 140);
    let counts = [
        "known_as_known",
        "known_as_unknown",
        "unknown_as_known",
        "unknown_as_unknown",
    ];
    let total: u64 = counts
        .iter()
        .map(|k| report["confusion"][k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 140);
    for key in ["closed_accuracy", "open_accuracy", "overall_accuracy"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert_eq!(report["comparator"], "sim-above-known");
    assert!(report["provenance"]["config_hash"].as_str().unwrap().len() == 16);

    let selected = emb::load_embeddings(&dir.path().join("sel.emb"), None, View::Full).unwrap();
    assert_eq!(selected.len(), 5 * 4);
    let decisions = fs::read_to_string(dir.path().join("decisions.csv")).unwrap();
    assert!(decisions.starts_with("# tool=fsosr "));
    assert_eq!(
        decisions.lines().filter(|l| !l.starts_with('#')).count(),
        141
    );
}

#[test]
fn every_output_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    for name in ["sel.csv", "protos.csv", "decisions.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(
            text.starts_with("# tool=fsosr 0.1.0 seed=7 config="),
            "{name}"
        );
    }
    for name in [
        "sel.json",
        "head.log.json",
        "projector.log.json",
        "report.json",
    ] {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap();
        assert_eq!(v["provenance"]["seed"], 7, "{name}");
    }
}

#[test]
fn label_gaps_are_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let emb_path = dir.path().join("gap.emb");
    emb::write_matrix(&emb_path, &Matrix::zeros(2, 3)).unwrap();
    fs::write(
        dir.path().join("gap.csv"),
        "index,label_id,class_name\n0,0,a\n1,2,c\n",
    )
    .unwrap();
    let err = emb::load_embeddings(&emb_path, None, View::Full).unwrap_err();
    assert_eq!(err.category(), "validation");
}

#[test]
fn label_count_must_match_rows() {
    let dir = tempfile::tempdir().unwrap();
    let emb_path = dir.path().join("short.emb");
    emb::write_matrix(&emb_path, &Matrix::zeros(3, 2)).unwrap();
    fs::write(
        dir.path().join("short.csv"),
        "index,label_id,class_name\n0,0,a\n1,0,a\n",
    )
    .unwrap();
    assert!(emb::load_embeddings(&emb_path, None, View::Full).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn label_csv_round_trips(
        names in prop::collection::vec("[a-zA-Z0-9 ,\"#_-]{1,12}", 1..5),
        extra in prop::collection::vec(0usize..5, 0..10),
    ) {
        let mut labels: Vec<u32> = (0..names.len() as u32).collect();
        labels.extend(extra.iter().map(|&e| (e % names.len()) as u32));
        let n = labels.len();
        let ds = EmbeddingDataset::new(Matrix::zeros(n, 2), labels, names, View::Full).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.emb");
        emb::save_embeddings(&ds, &p, None, Some("tool=test")).unwrap();
        let back = emb::load_embeddings(&p, None, View::Full).unwrap();
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(back.class_names(), ds.class_names());
    }
}
