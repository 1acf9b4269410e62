use std::fs;
use std::path::Path;

use prasim::cli::run_cli;
use prasim::cli::trace::{TraceDtype, TraceFile};
use prasim::geometry::Tensor3;

const LAYERS: &str = r#"
[[layers]]
name = "conv1"
nx = 10
ny = 6
i = 3
n = 5
fx = 3
fy = 3
pad = 1
precision = [11, 2]

[[layers]]
name = "conv2"
nx = 9
ny = 9
i = 24
n = 18
fx = 3
fy = 3
stride = 2
act = "relu"
out_shift = 4
precision = { width = 9, lsb = 1 }
"#;

fn config(dir: &Path, name: &str, head: &str, engines: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("{head}\n{LAYERS}\n{engines}")).unwrap();
    path
}

const SYNTH: &str = "seed = 11\n[trace]\nkind = \"synthetic\"\nsigma = 800.0\n";

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["prasim"];
    full.extend_from_slice(args);
    let code = run_cli(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn dadn_only_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a.toml", SYNTH, "[[engines]]\nkind = \"dadn\"\n");
    let csv = dir.path().join("a.csv");
    let (code, out, err) = run(&["simulate", cfg.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("conv1") && out.contains("DaDN"));
    let rows = csv_rows(&csv);
    let per_layer: Vec<_> = rows.iter().filter(|r| r[0] == "conv1" || r[0] == "conv2").collect();
    assert_eq!(per_layer.len(), 2);
    for r in per_layer {
        assert_eq!(r[1], "DaDN");
        assert_eq!(r[3], "1.000000");
        assert!(!r[7].is_empty(), "total terms present");
    }
}

#[test]
fn l_grid_rows_are_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let engines = "[[engines]]\nkind = \"pragmatic\"\nl_bits = [0, 1, 2, 3, 4]\n";
    let cfg = config(dir.path(), "b.toml", SYNTH, engines);
    let csv = dir.path().join("b.csv");
    let (code, _, err) = run(&["simulate", cfg.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let rows = csv_rows(&csv);
    for layer in ["conv1", "conv2"] {
        let cycles: Vec<u64> = rows.iter().filter(|r| r[0] == layer).map(|r| r[2].parse().unwrap()).collect();
        assert_eq!(cycles.len(), 5);
        assert!(cycles.windows(2).all(|w| w[1] <= w[0]), "{layer}: {cycles:?}");
    }
}

#[test]
fn simulate_is_reproducible_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let engines = "[[engines]]\nkind = \"dadn\"\n[[engines]]\nkind = \"stripes\"\n[[engines]]\nkind = \"pragmatic\"\nl_bits = [2, 4]\nsync = [\"pallet\", \"column\"]\nssr = [1, 4, \"inf\"]\ntrim = [\"profile\", \"none\"]\n";
    let cfg = config(dir.path(), "c.toml", SYNTH, engines);
    let paths: Vec<_> = (0..3).map(|k| dir.path().join(format!("c{k}.csv"))).collect();
    for (k, p) in paths.iter().enumerate() {
        let mut args = vec!["simulate", cfg.to_str().unwrap(), "--csv", p.to_str().unwrap()];
        if k == 2 {
            args.extend(["--seed", "12"]);
        }
        let (code, _, err) = run(&args);
        assert_eq!(code, 0, "{err}");
    }
    let bytes: Vec<Vec<u8>> = paths.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], bytes[2]);
}

#[test]
fn malformed_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "d.toml", SYNTH, "[[engines]]\nkind = \"pragmatic\"\nl_bits = [7]\n");
    let (code, _, err) = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("engines[0]"), "{err}");

    let bad = dir.path().join("e.toml");
    fs::write(&bad, "seed = \"x\"\n").unwrap();
    let (code, _, err) = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("seed"), "{err}");

    let (code, _, _) = run(&["simulate"]);
    assert_eq!(code, 1);
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["validate", dir.path().join("none.toml").to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    let head = "[trace]\nkind = \"file\"\npath = \"missing.prgt\"\n";
    let cfg = config(dir.path(), "f.toml", head, "[[engines]]\nkind = \"dadn\"\n");
    let (code, _, err) = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn gen_trace_feeds_file_source() {
    let dir = tempfile::tempdir().unwrap();
    let engines = "[[engines]]\nkind = \"stripes\"\n[[engines]]\nkind = \"pragmatic\"\nl_bits = [2]\n";
    let cfg = config(dir.path(), "g.toml", SYNTH, engines);
    for layer in ["conv1", "conv2"] {
        let out = dir.path().join(format!("{layer}.prgt"));
        let (code, _, err) = run(&["gen-trace", cfg.to_str().unwrap(), "-o", out.to_str().unwrap(), "--layer", layer]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(TraceFile::read(&out).unwrap().dtype, TraceDtype::U16);
    }
    // The same layers read back from disk give the same report.
    let from_file = "seed = 11\n[trace]\nkind = \"file\"\npath = \"conv1.prgt\"\n";
    let layers = LAYERS.replace("precision = { width = 9, lsb = 1 }", "precision = { width = 9, lsb = 1 }\ntrace = \"conv2.prgt\"");
    let cfg2 = dir.path().join("h.toml");
    fs::write(&cfg2, format!("{from_file}\n{layers}\n{engines}")).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(run(&["simulate", cfg.to_str().unwrap(), "--csv", a.to_str().unwrap()]).0, 0);
    let (code, _, err) = run(&["simulate", cfg2.to_str().unwrap(), "--csv", b.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());

    let (code, out, err) = run(&["validate", cfg2.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("2 layers"), "{out}");
}

#[test]
fn trace_dims_must_match_layer() {
    let dir = tempfile::tempdir().unwrap();
    let t = TraceFile::new(TraceDtype::U16, Tensor3::zeros(4, 4, 3)).unwrap();
    t.write(&dir.path().join("t.prgt")).unwrap();
    let head = "[trace]\nkind = \"file\"\npath = \"t.prgt\"\n";
    let cfg = config(dir.path(), "i.toml", head, "[[engines]]\nkind = \"dadn\"\n");
    let (code, _, err) = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("layers[0].trace"), "{err}");
}

#[test]
fn analyze_reports_terms_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "j.toml", SYNTH, "[[engines]]\nkind = \"dadn\"\n");
    let csv = dir.path().join("j.csv");
    let (code, _, err) = run(&["analyze", cfg.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r[1], "-");
        assert!(r[2].is_empty());
        assert_eq!(r[9], "1.000000");
        let pra_red: f64 = r[14].parse().unwrap();
        let pra_fp16: f64 = r[13].parse().unwrap();
        assert!(pra_red <= pra_fp16);
    }
    // First layer defaults to full-cost CVN.
    assert_eq!(rows[0][11], "1.000000");
    assert_ne!(rows[1][11], "1.000000");
}

#[test]
fn quantized_experiment_runs() {
    let dir = tempfile::tempdir().unwrap();
    let layers = LAYERS
        .replace("precision = [11, 2]", "precision = [7, 1]\nquant = { min = -1.0, max = 3.0 }")
        .replace("precision = { width = 9, lsb = 1 }", "precision = [6, 0]");
    let path = dir.path().join("k.toml");
    let engines = "[[engines]]\nkind = \"stripes\"\n[[engines]]\nkind = \"pragmatic\"\nl_bits = [0, 4]\nsync = [\"column\"]\n";
    fs::write(&path, format!("width = 8\n{SYNTH}\n{layers}\n{engines}")).unwrap();
    let csv = dir.path().join("k.csv");
    let (code, _, err) = run(&["simulate", path.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let out = dir.path().join("k.prgt");
    assert_eq!(run(&["gen-trace", path.to_str().unwrap(), "-o", out.to_str().unwrap()]).0, 0);
    assert_eq!(TraceFile::read(&out).unwrap().dtype, TraceDtype::U8);
}

#[test]
fn help_exits_zero() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("simulate"));
}

#[test]
fn bundled_example_validates() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
    let (code, out, err) = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("2 layers"));
}
