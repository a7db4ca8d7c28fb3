//! End-to-end tests that drive the `uvq` binary as a subprocess.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const FAMILY: &str = "kind mixture\n\
                      dim 1\n\
                      support 0 1\n\
                      component uniform 0 0.5\n\
                      component uniform 0.5 1\n";

const BASE_CONFIG: &str = "version = 1\n\
                           family = test.family\n\
                           output = out\n\
                           seed = 7\n\
                           rate = 1/1\n\
                           grid.j = 1\n\
                           net.denom = 8\n\
                           distortion.bound = auto\n\
                           design.training-blocks = 256\n";

fn uvq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uvq"))
}

fn write_fixture(dir: &Path, name: &str, contents: &str) {
    fs::write(dir.join(name), contents).expect("write fixture");
}

fn setup(extra_config: &str) -> TempDir {
    let dir = TempDir::new().expect("tempdir");
    write_fixture(dir.path(), "test.family", FAMILY);
    write_fixture(dir.path(), "test.cfg", &format!("{BASE_CONFIG}{extra_config}"));
    dir
}

fn run(dir: &TempDir, args: &[&str]) -> Output {
    uvq()
        .current_dir(dir.path())
        .args(args)
        .output()
        .expect("spawn uvq")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn sample_blocks(dir: &TempDir, blocks: &str, block_len: &str) {
    let out = run(
        dir,
        &[
            "sample",
            "--config",
            "test.cfg",
            "--theta",
            "0.25,0.75",
            "--blocks",
            blocks,
            "--block-len",
            block_len,
            "--output",
            "data.bin",
        ],
    );
    assert_success(&out);
}

#[test]
fn round_trip_is_byte_identical() {
    let dir = setup("");
    sample_blocks(&dir, "6", "4");

    let out = run(
        &dir,
        &[
            "encode",
            "--config",
            "test.cfg",
            "--input",
            "data.bin",
            "--output",
            "stream.uvq",
            "--reproduction",
            "enc_rep.bin",
            "--trace",
            "trace.csv",
        ],
    );
    assert_success(&out);

    let out = run(
        &dir,
        &[
            "decode",
            "--config",
            "test.cfg",
            "--input",
            "stream.uvq",
            "--output",
            "dec_rep.bin",
        ],
    );
    assert_success(&out);

    let enc = fs::read(dir.path().join("enc_rep.bin")).expect("encoder reproduction");
    let dec = fs::read(dir.path().join("dec_rep.bin")).expect("decoder reproduction");
    assert_eq!(enc, dec, "encoder and decoder reproductions differ");
    let enc_dims = fs::read(dir.path().join("enc_rep.bin.dims")).expect("encoder dims");
    let dec_dims = fs::read(dir.path().join("dec_rep.bin.dims")).expect("decoder dims");
    assert_eq!(enc_dims, dec_dims);

    let trace = fs::read_to_string(dir.path().join("trace.csv")).expect("trace");
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("block,cell,theta"));
    assert_eq!(lines.count(), 6, "one trace row per block");
}

#[test]
fn identification_experiment_is_deterministic() {
    let extra = "identification.schedule = 4 16\n\
                 identification.trials = 8\n\
                 identification.theta = 0.25 0.75\n";
    let dir = setup(extra);
    let records_path = dir.path().join("out/identification/records.csv");

    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let out = run(&dir, &["experiment", "identification", "--config", "test.cfg"]);
        assert_success(&out);
        let text = fs::read_to_string(&records_path).expect("records.csv");
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# uvq records schema v1"));
        assert_eq!(
            lines.next(),
            Some("experiment,n,metric,value,stderr,trials,wall_ms")
        );
        // Two block lengths with three metrics each.
        assert_eq!(lines.clone().count(), 6);
        // Keep everything except the wall-clock column.
        let stripped: Vec<String> = lines
            .map(|line| {
                line.rsplit_once(',')
                    .map(|(rest, _wall)| rest.to_string())
                    .expect("seven columns")
            })
            .collect();
        snapshots.push(stripped);
    }
    assert_eq!(snapshots[0], snapshots[1], "records differ between reruns");

    let plots = dir.path().join("out/identification/plots");
    assert!(plots.join("identification_d_v_mean.svg").exists());
    let manifest = fs::read_to_string(dir.path().join("out/identification/manifest.txt"))
        .expect("manifest");
    assert!(manifest.contains("experiment = identification"));
    assert!(manifest.contains("config-sha256 = "));
}

#[test]
fn malformed_config_exits_one_with_field_path() {
    let dir = setup("bogus = 1\n");
    let out = run(&dir, &["experiment", "identification", "--config", "test.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus"), "stderr should name the key: {stderr}");
    assert!(stderr.contains("unknown key"), "stderr: {stderr}");
    assert!(
        stderr.contains("uvq configuration reference"),
        "usage errors should print the schema reference"
    );
}

#[test]
fn identify_prints_block_estimates() {
    let dir = setup("");
    sample_blocks(&dir, "5", "4");
    let out = run(
        &dir,
        &["identify", "--config", "test.cfg", "--input", "data.bin"],
    );
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("block,cell,theta"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        assert_eq!(row.split(',').count(), 3, "row: {row}");
    }
}

#[test]
fn quick_bounds_audit_reports_zero_violations() {
    let extra = "audit.block-len = 2\n\
                 audit.trials = 8\n\
                 audit.pairs = 2\n\
                 audit.theta = 0.25 0.75\n";
    let dir = setup(extra);
    let out = run(&dir, &["experiment", "bounds-audit", "--config", "test.cfg"]);
    assert_success(&out);
    let text = fs::read_to_string(dir.path().join("out/bounds-audit/records.csv"))
        .expect("records.csv");
    let mut violation_rows = 0;
    for line in text.lines().skip(2) {
        let fields: Vec<&str> = line.split(',').collect();
        let metric = fields[2];
        if metric.ends_with("violations") {
            violation_rows += 1;
            assert_eq!(fields[3], "0", "nonzero {metric}: {line}");
        }
    }
    assert_eq!(violation_rows, 3, "mindist, mismatch, and lipschitz rows");
}

#[test]
fn invalid_theta_is_a_usage_error() {
    let dir = setup("");
    let out = run(
        &dir,
        &[
            "sample",
            "--config",
            "test.cfg",
            "--theta",
            "0.5,0.6",
            "--blocks",
            "2",
            "--block-len",
            "4",
            "--output",
            "data.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_stream_is_a_runtime_error() {
    let dir = setup("");
    fs::write(dir.path().join("stream.uvq"), b"not a stream").expect("write");
    let out = run(
        &dir,
        &[
            "decode",
            "--config",
            "test.cfg",
            "--input",
            "stream.uvq",
            "--output",
            "dec.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
