use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[geometry]
sod = 100.0
sdd = 200.0
nu = 24
nv = 24
du = 4.0
dv = 4.0
num_views = 30
nx = 16
ny = 16
nz = 16
voxel_size = 2.0
";

fn cbct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbct")).args(args).env("CBCT_THREADS", "2").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = cbct(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup(extra: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("{SMALL}{extra}")).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    (dir, cfg)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn every_subcommand_documents_its_flags() {
    for sub in ["phantom", "project", "backproject", "noise", "enhance", "recon", "pipeline", "eval", "info"] {
        let out = ok(&[sub, "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("Usage: cbct"), "{sub}: {text}");
        if sub != "info" {
            assert!(text.contains("--config") && text.contains("--set"), "{sub}: {text}");
        }
    }
}

#[test]
fn stages_chain_through_files() {
    let (dir, cfg) = setup("");
    let d = dir.path();
    ok(&["phantom", "-c", &cfg, "-o", &p(d, "p.ctarr")]);
    ok(&["project", "-c", &cfg, "-i", &p(d, "p.ctarr"), "-o", &p(d, "s.ctarr")]);
    ok(&["noise", "-c", &cfg, "-i", &p(d, "s.ctarr"), "-o", &p(d, "n.ctarr"), "--dose", "low", "--seed", "4"]);
    ok(&["enhance", "-c", &cfg, "-i", &p(d, "n.ctarr"), "-o", &p(d, "e.ctarr"), "--kind", "median", "--radius", "1"]);
    ok(&["backproject", "-c", &cfg, "-i", &p(d, "e.ctarr"), "-o", &p(d, "b.ctarr")]);
    ok(&["recon", "-c", &cfg, "-i", &p(d, "e.ctarr"), "-o", &p(d, "r.ctarr"), "--method", "sirt", "--max-iters", "5"]);

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "sirt");
    assert_eq!(report["solver"]["iterations_run"], 5);
    assert_eq!(report["solver"]["objective_history"].as_array().unwrap().len(), 6);
    assert_eq!(report["solver"]["terminated_by"], "max_iters");
    assert!(report["wall_time"].as_f64().unwrap() >= 0.0);

    let info = String::from_utf8(ok(&["info", &p(d, "r.ctarr")]).stdout).unwrap();
    assert!(info.contains("volume") && info.contains("f32") && info.contains("16 x 16 x 16"), "{info}");
    let info = String::from_utf8(ok(&["info", &p(d, "n.ctarr")]).stdout).unwrap();
    assert!(info.contains("sinogram") && info.contains("24 x 24 x 30"), "{info}");
}

#[test]
fn precision_flag_sets_the_dtype() {
    let (dir, cfg) = setup("");
    let out = p(dir.path(), "p.ctarr");
    ok(&["phantom", "-c", &cfg, "-o", &out, "--precision", "f64"]);
    assert!(String::from_utf8(ok(&["info", &out]).stdout).unwrap().contains("f64"));
}

#[test]
fn unknown_method_exits_2_and_lists_the_valid_ones() {
    let (dir, cfg) = setup("");
    let out = cbct(&["recon", "-c", &cfg, "-i", "x.ctarr", "-o", &p(dir.path(), "r.ctarr"), "--method", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    for m in ["fdk", "sirt", "gd", "nag"] {
        assert!(err.contains(m), "{err}");
    }
    let out = cbct(&["recon", "-c", &cfg, "-i", "x.ctarr", "-o", "r.ctarr", "--set", "solver.method=bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_and_io_errors_exit_2() {
    let (dir, cfg) = setup("");
    assert_eq!(cbct(&["info", &p(dir.path(), "missing.ctarr")]).status.code(), Some(2));
    assert_eq!(cbct(&["phantom", "-o", "x.ctarr", "--config", "/no/such/config.toml"]).status.code(), Some(2));
    assert_eq!(cbct(&["phantom", "-c", &cfg, "-o", "x.ctarr", "--set", "geometry.bogus=1"]).status.code(), Some(2));
    assert_eq!(cbct(&["nonsense"]).status.code(), Some(2));

    let garbage = p(dir.path(), "garbage.ctarr");
    std::fs::write(&garbage, b"not an array").unwrap();
    let out = cbct(&["info", &garbage]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("garbage.ctarr"));
}

#[test]
fn computational_failure_exits_1() {
    // a step constant far below the true one makes the gradient iteration blow up
    let (dir, cfg) = setup("");
    let d = dir.path();
    ok(&["phantom", "-c", &cfg, "-o", &p(d, "p.ctarr")]);
    ok(&["project", "-c", &cfg, "-i", &p(d, "p.ctarr"), "-o", &p(d, "s.ctarr")]);
    let out = cbct(&[
        "recon", "-c", &cfg, "-i", &p(d, "s.ctarr"), "-o", &p(d, "r.ctarr"), "--method", "gd",
        "--max-iters", "5000", "--set", "solver.lipschitz=1e-3",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_writes_volume_and_report() {
    let (dir, cfg) = setup("[dose]\npreset = \"clinical\"\n[solver]\nmethod = \"fdk\"\n");
    let out = p(dir.path(), "final.ctarr");
    ok(&["pipeline", "-c", &cfg, "-o", &out, "--seed", "9"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("final.json")).unwrap()).unwrap();
    let names: Vec<&str> = report["stages"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["acquire", "sem", "reconstruct", "iem", "write"]);
    assert!(report["final_mse"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_writes_table_and_jsonl() {
    let (dir, cfg) = setup("[solver]\nmax_iters = 5\n");
    let out_dir = p(dir.path(), "eval");
    let out = ok(&["eval", "-c", &cfg, "--methods", "fdk,nag+iem", "--doses", "low", "--seeds", "0,1", "--out-dir", &out_dir]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("FDK") && table.contains("NAG-LS+IEM"), "{table}");
    assert_eq!(std::fs::read_to_string(dir.path().join("eval/table.txt")).unwrap(), table);
    let rows = std::fs::read_to_string(dir.path().join("eval/rows.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 2);
    for line in rows.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["seeds"], 2);
        assert_eq!(row["dose_label"], "low");
    }
}

#[test]
fn thread_count_does_not_change_the_output() {
    let (dir, cfg) = setup("[dose]\npreset = \"low\"\n[solver]\nmethod = \"nag\"\nmax_iters = 5\nlipschitz = 2000.0\n");
    let mut bytes = Vec::new();
    for threads in ["1", "3"] {
        let out = p(dir.path(), &format!("t{threads}.ctarr"));
        let status = Command::new(env!("CARGO_BIN_EXE_cbct"))
            .args(["pipeline", "-c", &cfg, "-o", &out])
            .env("CBCT_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}
