use std::process::{Command, Output};

use cablas::bench::parse_csv;
use cablas::MachineDescriptor;

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cablas-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn csv_to_stdout() {
    let out = bench(&["--kernel", "gemv-col", "--sizes", "8,33", "--threads", "1,3", "--reps", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = parse_csv(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.kernel == "gemv-col" && r.reps == 3 && r.bounds.is_none()));
    assert!(records.iter().all(|r| r.min_s <= r.median_s));
}

#[test]
fn bound_columns_follow_level() {
    let out = bench(&["--kernel", "dot", "--sizes", "4096", "--threads", "1", "--reps", "3", "--bounds", "--bound-level", "1"]);
    assert!(out.status.success());
    let records = parse_csv(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    let b = records[0].bounds.unwrap();
    assert_eq!(b.fast_elements, 65536);
    assert_eq!(b.predicted_reads, Some(4.0));
}

#[test]
fn custom_machine_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    let text = "element_bytes = 8\ncores = 2\n\n[[levels]]\nline_bytes = 64\nassociativity = 4\nnum_sets = 16\n\n\
                [[levels]]\nline_bytes = 64\nassociativity = 8\nnum_sets = 128\nshared = true\n";
    std::fs::write(&path, text).unwrap();
    assert_eq!(MachineDescriptor::from_file(&path).unwrap().cores(), 2);
    let out = bench(&["--machine", path.to_str().unwrap(), "--kernel", "ger", "--sizes", "100", "--reps", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = parse_csv(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    let threads: Vec<usize> = records.iter().map(|r| r.threads).collect();
    assert_eq!(threads, vec![1, 2]);
}

#[test]
fn bad_input_exits_with_2() {
    for args in [
        &["--kernel", "gemm"][..],
        &["--sizes", "10..2"],
        &["--reps", "2"],
        &["--threads", "0"],
        &["--machine", "/nonexistent/machine.toml"],
        &["--bounds", "--bound-level", "7", "--sizes", "16", "--reps", "3"],
    ] {
        let out = bench(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}
