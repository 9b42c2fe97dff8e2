use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use samesum::collision::pool::ipc_pool;
use samesum_cli::Cli;

fn samesum(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_samesum"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Every flag appears in its subcommand's help, and none is hidden.
#[test]
fn help_lists_every_flag() {
    fn walk(cmd: &mut clap::Command, path: &str) {
        let help = cmd.render_long_help().to_string();
        for arg in cmd.get_arguments() {
            assert!(!arg.is_hide_set(), "{path}: {} is hidden", arg.get_id());
            let shown = match (arg.get_long(), arg.get_short()) {
                (Some(l), _) => help.contains(&format!("--{l}")),
                (None, Some(s)) => help.contains(&format!("-{s}")),
                (None, None) => help.contains(&format!("<{}>", arg.get_id().as_str().to_uppercase())),
            };
            assert!(shown, "{path}: {} missing from help:\n{help}", arg.get_id());
        }
        for sub in cmd.get_subcommands_mut() {
            let name = format!("{path} {}", sub.get_name());
            walk(sub, &name);
        }
    }
    let mut cmd = Cli::command();
    cmd.build();
    walk(&mut cmd, "samesum");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(samesum(&[], d).status.code(), Some(2));
    assert_eq!(samesum(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(samesum(&["theory", "birthday", "--n", "x"], d).status.code(), Some(2));
    assert_eq!(samesum(&["--help"], d).status.code(), Some(0));
    assert_eq!(samesum(&["md5sum", "missing.bin"], d).status.code(), Some(1));

    let e = &ipc_pool()[1];
    std::fs::write(d.join("a"), [&e.prefix[..], &e.s_a].concat()).unwrap();
    std::fs::write(d.join("b"), [&e.prefix[..], &e.s_b].concat()).unwrap();
    std::fs::write(d.join("c"), [&e.prefix[..], &e.s_a[..127]].concat()).unwrap();
    let ok = samesum(&["collide", "verify", "a", "b"], d);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).starts_with("# md5_equal\t"));
    assert_eq!(samesum(&["collide", "verify", "a", "c"], d).status.code(), Some(1));
    assert_eq!(samesum(&["collide", "verify", "a", "a"], d).status.code(), Some(1));
}

#[test]
fn md5sum_matches_the_usual_format() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("abc"), "abc").unwrap();
    let o = samesum(&["md5sum", "abc"], dir.path());
    assert_eq!(stdout(&o), "900150983cd24fb0d6963f7d28e17f72  abc\n");
}

#[test]
fn quantize_writes_file_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let w = samesum::stealth::ToyWeightFile::synthetic(3, 2, 768);
    std::fs::write(d.join("w.bin"), w.to_bytes()).unwrap();
    let o = samesum(&["stealth", "quantize", "--in", "w.bin", "--out", "q.bin", "--free", "1536"], d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("# converted_elements=768"));
    let q = std::fs::read(d.join("q.bin")).unwrap();
    assert_eq!(q.len() as u64, w.byte_len() - 1536);
    let manifest = std::fs::read_to_string(d.join("q.bin.manifest")).unwrap();
    assert!(manifest.contains("bytes_freed=1536"));
    assert!(manifest.contains("quantized="));
}

#[test]
fn pool_entry_regenerates_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let o = samesum(&["collide", "pool", "--start", "3", "--count", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let line = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(line, ipc_pool()[3].to_string());
}

#[test]
fn theory_tables_are_tab_separated() {
    let dir = tempfile::tempdir().unwrap();
    let o = samesum(&["theory", "birthday", "--trials", "20000"], dir.path());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# n\ts\t"));
    let row: Vec<f64> = lines.next().unwrap().split('\t').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row.len(), 8);
    assert!((row[4] - 0.5073).abs() < 1e-4);
    assert!((row[6] - 0.5073).abs() < 0.02);

    let o = samesum(&["theory", "discrepancy", "--trials", "20000"], dir.path());
    let text = stdout(&o);
    assert!(text.contains("out_of_range=true"));
    assert!(text.contains("ordering_holds=true"));
}

#[test]
fn detect_pipeline_on_a_small_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = samesum(args, d);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    run(&["detect", "corpus", "--out", "c", "--size", "1048576", "--harness-size", "2097152", "--regions", "8"]);
    for f in ["source.bin", "suffixes.txt", "test.bin", "test_suffixes.txt", "harness.bin", "harness.truth"] {
        assert!(d.join("c").join(f).exists(), "{f}");
    }
    run(&["detect", "train", "--corpus", "c", "--kind", "bayes", "--out", "b.cdm", "--per-class", "300"]);
    let test = run(&["detect", "test", "--model", "b.cdm", "--corpus", "c", "--per-class", "100"]);
    let acc: f64 = test.lines().find(|l| l.starts_with("training\t")).unwrap().split('\t').nth(2).unwrap().parse().unwrap();
    assert!(acc >= 0.9, "{test}");
    run(&["detect", "scan", "--model", "b.cdm", "--file", "c/harness.bin", "--tau", "0.01", "--out", "r.txt"]);
    run(&["detect", "scan", "--model", "b.cdm", "--file", "c/harness.bin", "--tau", "1", "--out", "full.txt"]);
    let eval = run(&["detect", "eval", "--report", "r.txt", "--truth", "c/harness.truth", "--baseline", "full.txt"]);
    let rows: Vec<Vec<&str>> = eval.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "tau=0.01");
    assert_eq!(rows[1][0], "tau=1");
    let (with_js, without): (usize, usize) = (rows[0][2].parse().unwrap(), rows[1][2].parse().unwrap());
    assert!(with_js * 10 <= without, "{eval}");
    assert_eq!(samesum(&["detect", "scan", "--model", "b.cdm", "--file", "c/harness.bin", "--tau", "2"], d).status.code(), Some(1));
}
