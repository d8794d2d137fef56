use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
[data]
path = "corpus.csv"
[windows]
stride = 4
[adapter]
epochs = 2
branch_dim = 8
hidden_dim = 16
[ablate]
seeds = [0, 1]
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
        let ws = Self { dir };
        let out = ws.raw(&["synth", "--kind", "planted", "--out", ws.path("corpus.csv").to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        ws
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn raw(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_topoprior"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn run(&self, args: &[&str]) -> String {
        let mut full = vec!["--config", "c.toml"];
        full.extend_from_slice(args);
        let out = self.raw(&full);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn artifact(&self, name: &str) -> serde_json::Value {
        let text = std::fs::read_to_string(self.path("artifacts").join(name)).unwrap();
        serde_json::from_str(&text).unwrap()
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn fingerprint_artifact_has_125_values_and_provenance() {
    let ws = Workspace::new();
    ws.run(&["fingerprint"]);
    let fp = ws.artifact("fingerprint.json");
    assert_eq!(fp["kind"], "fingerprint");
    for key in ["tool_version", "config_hash", "seed"] {
        assert!(fp.get(key).is_some(), "missing {key}");
    }
    assert_eq!(fp["body"]["population"]["fingerprint"]["values"].as_array().unwrap().len(), 125);
    assert_eq!(fp["body"]["groups"].as_object().unwrap().len(), 3);
}

#[test]
fn seed_flag_is_recorded() {
    let ws = Workspace::new();
    ws.run(&["--seed", "7", "fingerprint"]);
    assert_eq!(ws.artifact("fingerprint.json")["seed"], 7);
}

#[test]
fn screen_prints_a_row() {
    let ws = Workspace::new();
    ws.run(&["fingerprint"]);
    let out = ws.run(&["screen", "--name", "planted"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("H1/N"));
    assert!(lines[1].starts_with("planted"));
    let screen = ws.artifact("screen.json");
    assert_eq!(screen["body"]["report"]["n"], 60);
}

#[test]
fn missing_upstream_names_the_command_to_run() {
    let ws = Workspace::new();
    let out = ws.raw(&["--config", "c.toml", "screen"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run `topoprior fingerprint` first"), "{err}");

    let out = ws.raw(&["--config", "c.toml", "adapt", "--variant", "vanilla"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("build-cache"));
}

#[test]
fn bad_config_exits_with_config_code() {
    let ws = Workspace::new();
    std::fs::write(ws.path("bad.toml"), "[data]\nunknown_key = 1\n").unwrap();
    let out = ws.raw(&["--config", "bad.toml", "fingerprint"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ws.raw(&["--config", "absent.toml", "fingerprint"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn json_config_is_accepted() {
    let ws = Workspace::new();
    std::fs::write(ws.path("c.json"), r#"{"data": {"path": "corpus.csv"}, "output_dir": "out"}"#).unwrap();
    let out = ws.raw(&["--config", "c.json", "fingerprint"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ws.path("out/fingerprint.json").exists());
}

#[test]
fn adapt_then_eval_produces_metric_report() {
    let ws = Workspace::new();
    ws.run(&["build-cache"]);
    ws.run(&["adapt", "--variant", "vanilla"]);
    let text = ws.run(&["eval", "--variant", "vanilla"]);
    assert!(text.lines().any(|l| l.starts_with("all")));
    let eval = ws.artifact("eval-adapter-vanilla.json");
    let all = &eval["body"]["reports"][0];
    assert_eq!(all["slice"], "all");
    assert!(all["mae"].as_f64().unwrap().is_finite());
    assert!(ws.path("artifacts/eval-adapter-vanilla.csv").exists());
}

#[test]
fn ablate_prints_five_rows() {
    let ws = Workspace::new();
    for c in ["fingerprint", "sheaf", "build-cache"] {
        ws.run(&[c]);
    }
    let text = ws.run(&["ablate", "--variants", "vanilla,rand,shuffle,tda,tda+sheaf"]);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for (row, name) in rows.iter().zip(["vanilla", "rand", "shuffle", "tda", "tda+sheaf"]) {
        assert_eq!(row.split_whitespace().next(), Some(name));
    }
    let table = ws.artifact("ablation.json");
    assert_eq!(table["body"]["table"]["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn unknown_control_is_a_config_error() {
    let ws = Workspace::new();
    ws.run(&["build-cache"]);
    let out = ws.raw(&["--config", "c.toml", "ablate", "--variants", "vanilla,bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let ws = Workspace::new();
    let steps: [&[&str]; 6] = [
        &["fingerprint"],
        &["sheaf"],
        &["screen"],
        &["build-cache"],
        &["adapt", "--variant", "tda+sheaf"],
        &["eval", "--variant", "tda+sheaf"],
    ];
    for s in steps {
        ws.run(s);
    }
    let first = read_dir_bytes(&ws.path("artifacts"));
    for s in steps {
        ws.run(s);
    }
    assert_eq!(first, read_dir_bytes(&ws.path("artifacts")));
}
