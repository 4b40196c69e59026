//! End-to-end subcommand tests driving the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FIXTURE_MTX: &str = "%%MatrixMarket matrix coordinate real general
4 4 8
1 1 1
1 2 2
1 4 3
2 3 4
3 1 5
3 4 6
4 2 7
4 3 8
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparsespace"))
}

fn tmp_dir(test: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(test);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_fixture(dir: &Path) -> PathBuf {
    let path = dir.join("fixture.mtx");
    std::fs::write(&path, FIXTURE_MTX).unwrap();
    path
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn encode_emits_expected_layout() {
    let dir = tmp_dir("encode_emits_expected_layout");
    let mtx = write_fixture(&dir);
    let out = bin()
        .args(["encode"])
        .arg(&mtx)
        .args(["--design", "cisr", "-m", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_str(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(doc["machines"], 2);
    assert_eq!(doc["stream_length"], 5);
    assert_eq!(doc["structure"]["row_len"][0], serde_json::json!([3, 2]));
    assert_eq!(doc["structure"]["row_len"][1], serde_json::json!([1, 4]));
}

#[test]
fn encode_then_decode_restores_nonzeros() {
    let dir = tmp_dir("encode_then_decode_restores_nonzeros");
    let mtx = write_fixture(&dir);
    let json_path = dir.join("enc.json");
    let out = bin()
        .args(["encode"])
        .arg(&mtx)
        .args(["--design", "blocked", "-k", "4", "-o"])
        .arg(&json_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_str(&out));
    let out = bin().args(["decode"]).arg(&json_path).output().unwrap();
    assert!(out.status.success(), "{}", stderr_str(&out));
    let decoded = stdout_str(&out);
    let mut got: Vec<&str> = decoded.lines().skip(2).map(str::trim).collect();
    let mut want: Vec<&str> = FIXTURE_MTX.lines().skip(2).collect();
    got.sort_unstable();
    want.sort_unstable();
    assert_eq!(got, want);
}

#[test]
fn zero_matrix_encodes_and_decodes() {
    let dir = tmp_dir("zero_matrix_encodes_and_decodes");
    let mtx = dir.join("zero.mtx");
    std::fs::write(&mtx, "%%MatrixMarket matrix coordinate real general\n3 4 0\n").unwrap();
    let json_path = dir.join("zero.json");
    let out = bin()
        .args(["encode"])
        .arg(&mtx)
        .args(["-m", "2", "-o"])
        .arg(&json_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_str(&out));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(doc["stream_length"], 0);
    let out = bin().args(["decode"]).arg(&json_path).output().unwrap();
    assert!(out.status.success(), "{}", stderr_str(&out));
    assert_eq!(
        stdout_str(&out),
        "%%MatrixMarket matrix coordinate real general\n3 4 0\n"
    );
}

#[test]
fn decode_rejects_tampered_encoding() {
    let dir = tmp_dir("decode_rejects_tampered_encoding");
    let mtx = write_fixture(&dir);
    let json_path = dir.join("enc.json");
    bin()
        .args(["encode"])
        .arg(&mtx)
        .args(["-m", "2", "-o"])
        .arg(&json_path)
        .output()
        .unwrap();
    // Duplicate one provenance coordinate.
    let text = std::fs::read_to_string(&json_path).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["provenance"][0][1] = doc["provenance"][0][0].clone();
    std::fs::write(&json_path, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = bin().args(["decode"]).arg(&json_path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_str(&out).contains("both map to"), "{}", stderr_str(&out));
}

#[test]
fn spmv_verify_passes_both_designs() {
    let dir = tmp_dir("spmv_verify_passes_both_designs");
    let mtx = write_fixture(&dir);
    for design in [
        vec!["--design", "cisr", "-m", "2"],
        vec!["--design", "blocked", "-k", "4"],
    ] {
        let out = bin()
            .args(["spmv"])
            .arg(&mtx)
            .args(["--ones", "--verify"])
            .args(&design)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr_str(&out));
        assert_eq!(stdout_str(&out), "i,y\n0,6\n1,4\n2,11\n3,15\n");
    }
}

#[test]
fn spmv_reads_x_file() {
    let dir = tmp_dir("spmv_reads_x_file");
    let mtx = write_fixture(&dir);
    let x_path = dir.join("x.txt");
    std::fs::write(&x_path, "1\n2\n3\n4\n").unwrap();
    let out = bin()
        .args(["spmv"])
        .arg(&mtx)
        .args(["--x"])
        .arg(&x_path)
        .args(["--verify", "-m", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr_str(&out));
    // Row sums with x = [1,2,3,4]: 1+4+12=17, 12, 5+24=29, 14+24=38.
    assert_eq!(stdout_str(&out), "i,y\n0,17\n1,12\n2,29\n3,38\n");
}

#[test]
fn spmv_wrong_length_x_exits_1() {
    let dir = tmp_dir("spmv_wrong_length_x_exits_1");
    let mtx = write_fixture(&dir);
    let x_path = dir.join("x.txt");
    std::fs::write(&x_path, "1\n2\n").unwrap();
    let out = bin()
        .args(["spmv"])
        .arg(&mtx)
        .args(["--x"])
        .arg(&x_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_str(&out).contains("length 2"));
}

#[test]
fn malformed_matrix_exits_1_naming_line() {
    let dir = tmp_dir("malformed_matrix_exits_1_naming_line");
    let path = dir.join("bad.mtx");
    std::fs::write(
        &path,
        "%%MatrixMarket matrix coordinate real general\n2 2 1\n5 1 1.0\n",
    )
    .unwrap();
    let out = bin().args(["encode"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_str(&out).contains("line 3"), "{}", stderr_str(&out));
}

#[test]
fn unknown_design_exits_1() {
    let dir = tmp_dir("unknown_design_exits_1");
    let mtx = write_fixture(&dir);
    let out = bin()
        .args(["encode"])
        .arg(&mtx)
        .args(["--design", "csr5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_str(&out).contains("unknown design"));
}

#[test]
fn usage_error_exits_1() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_rows_are_deterministic_and_sorted() {
    let run = || {
        let out = bin()
            .args([
                "bench",
                "--rows",
                "16",
                "--cols",
                "16",
                "--densities",
                "0.1,0.3",
                "--machines",
                "1,2",
                "--seed",
                "11",
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr_str(&out));
        stdout_str(&out)
    };
    let a = run();
    assert_eq!(a, run());
    // Single-machine line-scheduled rows carry no padding.
    for line in a.lines().filter(|l| l.contains(",cisr,1,")) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[5], "0", "padded_slots in {line}");
        assert_eq!(fields[6], "1", "utilization in {line}");
    }
}

#[test]
fn bench_flags_degenerate_rows() {
    let out = bin()
        .args([
            "bench",
            "--rows",
            "8",
            "--cols",
            "8",
            "--densities",
            "0",
            "--machines",
            "1,2",
            "--designs",
            "cisr",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    for line in stdout_str(&out).lines().skip(1) {
        assert!(line.ends_with(",0,0,0,true"), "{line}");
    }
}

#[test]
fn log_env_var_enables_stderr_diagnostics() {
    let dir = tmp_dir("log_env_var_enables_stderr_diagnostics");
    let mtx = write_fixture(&dir);
    let quiet = bin()
        .args(["encode"])
        .arg(&mtx)
        .args(["-m", "2"])
        .env_remove("SPARSESPACE_LOG")
        .output()
        .unwrap();
    assert!(stderr_str(&quiet).is_empty());
    let chatty = bin()
        .args(["encode"])
        .arg(&mtx)
        .args(["-m", "2"])
        .env("SPARSESPACE_LOG", "1")
        .output()
        .unwrap();
    assert!(stderr_str(&chatty).contains("sparsespace: read 4x4 matrix"));
    // Diagnostics never leak into the data stream.
    assert_eq!(quiet.stdout, chatty.stdout);
}

#[test]
fn inspect_prints_streams_and_rows() {
    let dir = tmp_dir("inspect_prints_streams_and_rows");
    let mtx = write_fixture(&dir);
    let out = bin()
        .args(["inspect"])
        .arg(&mtx)
        .args(["-m", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("machine 0:"));
    assert!(text.contains("structure row_len[1]: [1, 4]"));
    assert!(text.contains("pad"));
}

#[test]
fn spmv_json_format_carries_stats() {
    let dir = tmp_dir("spmv_json_format_carries_stats");
    let mtx = write_fixture(&dir);
    let out = bin()
        .args(["spmv"])
        .arg(&mtx)
        .args(["--ones", "--verify", "-m", "2", "--format", "json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_str(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(doc["y"], serde_json::json!([6.0, 4.0, 11.0, 15.0]));
    assert_eq!(doc["stats"]["utilization"], 0.8);
    assert_eq!(doc["verified"], true);
}
