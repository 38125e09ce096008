//! Drives the built binary over the standard fixture set.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_taxgraph");

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/standard")
}

pub fn run(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(BIN)
        .args(args.iter().map(|a| a.as_ref()))
        .env_remove("TAXGRAPH_ENDPOINT")
        .env_remove("TAXGRAPH_TIMEOUT")
        .output()
        .unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    o
}

pub fn ingest_from(input: &Path, out: &Path) -> Output {
    run(&[
        &"ingest",
        &"--entities",
        &input.join("entities.csv"),
        &"--relationships",
        &input.join("relationships.csv"),
        &"--indicators",
        &input.join("indicators.csv"),
        &"--legalforms",
        &input.join("legalforms.csv"),
        &"--out",
        &out,
    ])
}

/// Full pipeline from `input` into `work`; returns the output directory.
pub fn pipeline(input: &Path, work: &Path) -> PathBuf {
    let graph = work.join("graph");
    let out = work.join("out");
    fs::create_dir_all(&out).unwrap();
    ok(ingest_from(input, &graph));
    ok(run(&[
        &"link-cities",
        &"--graph",
        &graph,
        &"--candidates",
        &fixtures().join("candidates.csv"),
    ]));
    ok(run(&[
        &"fetch-areas",
        &"--graph",
        &graph,
        &"--offline",
        &fixtures().join("areas_sparql.json"),
        &"--out",
        &out.join("areas.csv"),
    ]));
    ok(run(&[
        &"detect",
        &"double-irish",
        &"--relaxed",
        &"--graph",
        &graph,
        &"--out",
        &out.join("double_irish.csv"),
    ]));
    ok(run(&[
        &"detect",
        &"duck-rabbit",
        &"--graph",
        &graph,
        &"--out",
        &out.join("duck_rabbit.csv"),
    ]));
    ok(run(&[
        &"stats",
        &"tax-delta-hq-legal",
        &"--graph",
        &graph,
        &"--out",
        &out.join("tax_delta.csv"),
    ]));
    ok(run(&[
        &"export",
        &"--graph",
        &graph,
        &"--areas",
        &out.join("areas.csv"),
        &"--min",
        &"1",
        &"--country",
        &"US",
        &"--region",
        &"DE",
        &"--out",
        &out.join("tables"),
    ]));
    out
}

/// Every CSV under `dir`, relative path -> contents.
pub fn csv_files(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read_to_string(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

pub fn permuted_copy(dir: &Path) {
    for name in [
        "entities.csv",
        "relationships.csv",
        "indicators.csv",
        "legalforms.csv",
    ] {
        let text = fs::read_to_string(fixtures().join(name)).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let body = &mut lines[1..];
        body.reverse();
        body.rotate_left(body.len() / 3);
        fs::write(dir.join(name), lines.join("\n") + "\n").unwrap();
    }
}
