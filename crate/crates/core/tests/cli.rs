use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dwvit::model::{Model, ModelConfig};
use dwvit::tensor::io::{self, DynTensor};
use dwvit::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dwvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dwvit")).args(args).output().expect("binary runs")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_f64(p: &Path) -> Vec<f64> {
    match io::read(p).unwrap() {
        DynTensor::F32(t) => t.data().iter().map(|&v| v as f64).collect(),
        DynTensor::F64(t) => t.data().to_vec(),
    }
}

#[test]
fn trace_lists_dw_t_shapes() {
    let o = dwvit(&["trace", "--preset", "dw-t"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for want in ["224x224x3 -> 56x56x96", "56x56x96 -> 28x28x192", "28x28x192 -> 14x14x384", "14x14x384 -> 7x7x768"] {
        assert!(text.contains(want), "missing {want}");
    }
    assert!(text.contains("windows=[7, 14, 14]"));
    assert!(text.contains("windows=[7, 7, 7]"));
    assert_eq!(text.lines().filter(|l| l.contains("windows=")).count(), 12);
    assert_eq!(dwvit(&["trace", "--preset", "dw-t"]).stdout, o.stdout);
}

#[test]
fn trace_of_one_stage_config_has_two_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("one.json");
    std::fs::write(
        &cfg,
        r#"{"image_size": 16, "num_classes": 5, "dmsw_mode": "dynamic",
            "stages": [{"channels": 16, "heads": 2, "windows": [2, 4], "depth": 2}]}"#,
    )
    .unwrap();
    let o = dwvit(&["trace", "--config", path_str(&cfg), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let blocks = trace.as_array().unwrap().iter().filter(|e| e.get("windows").is_some()).count();
    assert_eq!(blocks, 2);
}

#[test]
fn invalid_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("odd.json");
    std::fs::write(
        &cfg,
        r#"{"image_size": 16, "num_classes": 5, "dmsw_mode": "off",
            "stages": [{"channels": 16, "heads": 2, "windows": [2, 4], "depth": 3}]}"#,
    )
    .unwrap();
    let o = dwvit(&["trace", "--config", path_str(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("depth"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert_eq!(dwvit(&["trace", "--config", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(dwvit(&["analyze", "--preset", "dw-t", "--bogus"]).status.code(), Some(2));
    assert_eq!(dwvit(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn forward_matches_golden_oracle_logits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("logits.dwt");
    let golden = read_f64(&data("toy_golden.dwt"));
    let args = |input: &Path| {
        vec![
            "forward".to_string(),
            "--config".into(),
            data("toy.json").to_str().unwrap().into(),
            "--seed".into(),
            "0".into(),
            "--input".into(),
            input.to_str().unwrap().into(),
            "--output".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let run = |input: &Path| {
        let a = args(input);
        let o = dwvit(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(&out).unwrap()
    };

    let first = run(&data("toy_input.dwt"));
    let logits = read_f64(&out);
    assert_eq!(logits.len(), 10);
    for (a, b) in logits.iter().zip(&golden) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    assert_eq!(run(&data("toy_input.dwt")), first, "bit-identical across runs");

    let input32 = dir.path().join("input32.dwt");
    let img: Tensor<f64> = io::read(data("toy_input.dwt")).unwrap().cast();
    io::write(&input32, &img.cast::<f32>()).unwrap();
    run(&input32);
    assert!(matches!(io::read(&out).unwrap(), DynTensor::F32(_)));
    for (a, b) in read_f64(&out).iter().zip(&golden) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn forward_from_checkpoint_equals_seeded_forward() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("weights");
    Model::<f32>::build(&ModelConfig::toy(), 3).unwrap().save_checkpoint(&weights).unwrap();
    let input = dir.path().join("input32.dwt");
    let img: Tensor<f64> = io::read(data("toy_input.dwt")).unwrap().cast();
    io::write(&input, &img.cast::<f32>()).unwrap();
    let (a, b) = (dir.path().join("a.dwt"), dir.path().join("b.dwt"));
    let base = ["forward", "--preset", "toy", "--input", path_str(&input), "--output"];
    let o = dwvit(&[&base[..], &[path_str(&a), "--seed", "3"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = dwvit(&[&base[..], &[path_str(&b), "--weights", path_str(&weights)]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    std::fs::write(weights.join("head.weight.dwt"), b"DWT0\x07").unwrap();
    let o = dwvit(&[&base[..], &[path_str(&b), "--weights", path_str(&weights)]].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
}

#[test]
fn forward_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.dwt");
    let wrong = dir.path().join("wrong.dwt");
    io::write(&wrong, &Tensor::<f32>::zeros([8, 8, 3]).unwrap()).unwrap();
    let garbage = dir.path().join("garbage.dwt");
    std::fs::write(&garbage, b"not a tensor").unwrap();
    for input in [&wrong, &garbage] {
        let o = dwvit(&["forward", "--preset", "toy", "--seed", "0", "--input", path_str(input), "--output", path_str(&out)]);
        assert_eq!(o.status.code(), Some(2));
        assert!(!stderr(&o).is_empty());
        assert!(!out.exists());
    }
    let o = dwvit(&["forward", "--preset", "toy", "--input", path_str(&wrong), "--output", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2), "needs --seed or --weights");
}

#[test]
fn forward_dw_t_at_224_gives_1000_logits() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("img.dwt"), dir.path().join("logits.dwt"));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    io::write(&input, &Tensor::<f32>::from_fn([224, 224, 3], |_| rng.gen_range(-1.0..1.0)).unwrap()).unwrap();
    let o = dwvit(&["forward", "--preset", "dw-t", "--seed", "0", "--input", path_str(&input), "--output", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(io::read(&out).unwrap().shape(), &[1000]);
}

#[test]
fn analyze_reports_anchors_and_zero_deltas() {
    let o = dwvit(&["analyze", "--preset", "dw-t", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let params = v["params"]["total"].as_f64().unwrap() / 1e6;
    let flops = v["flops"]["counted"].as_f64().unwrap() / 1e9;
    assert!((params - 29.77).abs() / 29.77 < 0.05, "{params}");
    assert!((flops - 5.18).abs() / 5.18 < 0.05, "{flops}");
    assert_eq!(v["comparison"]["all_match"], true);
    for b in v["comparison"]["blocks"].as_array().unwrap() {
        assert_eq!(b["delta_msw"], 0);
        assert_eq!(b["delta_dmsw"], 0);
    }

    let o = dwvit(&["analyze", "--preset", "swin-t", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let params = v["params"]["total"].as_f64().unwrap() / 1e6;
    let flops = v["flops"]["counted"].as_f64().unwrap() / 1e9;
    assert!((params - 28.29).abs() / 28.29 < 0.02, "{params}");
    assert!((flops - 4.49).abs() / 4.49 < 0.02, "{flops}");

    let table = stdout(&dwvit(&["analyze", "--preset", "toy", "--image-size", "32", "32"]));
    assert!(table.contains("flops at 32x32"));
    assert!(table.contains("all matched terms agree: true"));
}

#[test]
fn gradcheck_command() {
    let o = dwvit(&["gradcheck", "--seed", "1", "--samples", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("gradient check: 101 cases passed"));
    let o = dwvit(&["gradcheck", "--samples", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn selftest_passes() {
    let o = dwvit(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).trim_end().ends_with("selftest: PASS"));
    assert!(!stdout(&o).contains("FAIL "));
}

#[test]
fn in_process_runner_reports_exit_codes() {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(dwvit::cli::run(["dwvit", "trace", "--preset", "toy"], &mut out, &mut err), 0);
    assert!(String::from_utf8(out).unwrap().contains("patch_embed"));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(dwvit::cli::run(["dwvit", "trace"], &mut out, &mut err), 2);
    assert!(!err.is_empty());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(dwvit::cli::run(["dwvit", "--help"], &mut out, &mut err), 0);
    assert!(String::from_utf8(out).unwrap().contains("selftest"));
}
