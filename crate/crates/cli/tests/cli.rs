use std::path::Path;
use std::process::{Command, Output};

fn tglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tglab"))
        .args(args)
        .output()
        .expect("spawn tglab")
}

fn scenario_file(id: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/scenarios")
        .join(format!("{id}.json"))
        .to_string_lossy()
        .into_owned()
}

#[test]
fn lists_every_builtin() {
    let out = tglab(&["list-scenarios"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = text
        .lines()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(
        ids,
        [
            "green",
            "winding",
            "green_x_winding",
            "green_x_trivial",
            "translation"
        ]
    );
}

#[test]
fn validates_files_and_ids() {
    for arg in [scenario_file("winding"), "green".to_string()] {
        let out = tglab(&["validate", &arg]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("valid"));
        assert!(text.contains("orbit-locally-closed"));
    }
}

#[test]
fn broken_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"id\": 1}").unwrap();
    assert_eq!(
        tglab(&["validate", bad.to_str().unwrap()]).status.code(),
        Some(3)
    );
    assert_eq!(
        tglab(&["run", "no-such-scenario", "--k", "1"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        tglab(&["run", "translation", "--k", "1", "--step", "-1"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn exit_codes_follow_the_hypothesis() {
    let file = scenario_file("translation");
    assert_eq!(tglab(&["run", &file, "--k", "1"]).status.code(), Some(0));
    assert_eq!(tglab(&["run", &file, "--k", "2"]).status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    for format in ["json", "csv"] {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let out = tglab(&[
                "run",
                "green",
                "--k",
                "2",
                "--format",
                format,
                "--out",
                d.path().to_str().unwrap(),
            ]);
            assert_eq!(out.status.code(), Some(0));
        }
        let name = format!("green_k2.{format}");
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{format} differs");
    }
}

#[test]
fn stdout_report_parses() {
    let out = tglab(&["run", "translation", "--k", "1", "--windows", "1,2,4"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "consistent");
    let w: Vec<f64> = v["config"]["windows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert_eq!(w, [1.0, 2.0, 4.0]);
}
