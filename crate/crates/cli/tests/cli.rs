use std::path::Path;
use std::process::{Command, Output};

use endolift_cli::format::{parse_instance, to_pretty_json};

fn endolift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_endolift")).args(args).output().expect("binary runs")
}

fn gen(dir: &Path, kind: &str, seed: u64) -> String {
    let out = dir.join(format!("{kind}-{seed}.json"));
    let o = endolift(&["generate", "--kind", kind, "--seed", &seed.to_string(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_owned()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generation_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["surjective-obfuscated", "endomorphism", "dilation"] {
        let a = std::fs::read(gen(dir.path(), kind, 4)).unwrap();
        let sub = dir.path().join("again");
        std::fs::create_dir_all(&sub).unwrap();
        let b = std::fs::read(gen(&sub, kind, 4)).unwrap();
        assert_eq!(a, b, "{kind}");
        assert!(Path::new(&(gen(dir.path(), kind, 4) + ".witness.json")).exists());
    }
}

#[test]
fn instances_survive_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["surjective-obfuscated", "endomorphism", "dilation"] {
        let text = std::fs::read_to_string(gen(dir.path(), kind, 2)).unwrap();
        let inst = parse_instance(&text).unwrap();
        assert_eq!(parse_instance(&to_pretty_json(&inst)).unwrap(), inst);
    }
}

#[test]
fn commands_write_passing_reports() {
    let dir = tempfile::tempdir().unwrap();
    let surj = gen(dir.path(), "surjective-obfuscated", 1);
    let dil = gen(dir.path(), "dilation", 1);
    let runs: [(&str, &str, &[&str]); 8] = [
        ("validate", &surj, &[]),
        ("decompose", &surj, &[]),
        ("tail", &surj, &[]),
        ("lift", &surj, &[]),
        ("reduce", &surj, &[]),
        ("convergence", &surj, &["--nmax", "6"]),
        ("ucp-lift", &dil, &["--nmax", "6"]),
        ("promote", &dil, &["--level", "2", "--nmax", "4"]),
    ];
    for (cmd, inst, extra) in runs {
        let out = dir.path().join(format!("{cmd}.report.json"));
        let mut args = vec![cmd, "--instance", inst, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = endolift(&args);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let r = report(&out);
        assert_eq!(r["verdict"], "pass", "{cmd}");
        assert_eq!(r["command"], cmd);
        assert_eq!(r["schema_version"], 1);
    }
}

#[test]
fn junk_summands_are_reduced_away() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "endomorphism", 0);
    let mut inst: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    inst["junk"] = serde_json::json!([{ "kind": "fin", "dims": [2] }, { "kind": "seq", "base": [1], "side": "two-sided" }]);
    std::fs::write(&path, inst.to_string()).unwrap();
    let out = dir.path().join("reduce.json");
    let o = endolift(&["reduce", "--instance", &path, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["verdict"], "pass");
    assert_eq!(r["result"]["padded"].as_array().unwrap().len(), r["result"]["reduced"].as_array().unwrap().len() + 2);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_owned()
    };
    let bad_json = write("bad.json", "{ \"schema_version\": 1, ");
    assert_eq!(endolift(&["lift", "--instance", &bad_json]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(endolift(&["lift", "--instance", missing.to_str().unwrap()]).status.code(), Some(2));

    let good = std::fs::read_to_string(gen(dir.path(), "endomorphism", 5)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["surprise"] = serde_json::json!(1);
    assert_eq!(endolift(&["lift", "--instance", &write("extra.json", &v.to_string())]).status.code(), Some(2));
    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["schema_version"] = serde_json::json!(9);
    let o = endolift(&["lift", "--instance", &write("version.json", &v.to_string())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema_version"));

    let no_projection = write("plain.json", &good);
    assert_eq!(endolift(&["ucp-lift", "--instance", &no_projection]).status.code(), Some(3));
    let collapse = write(
        "collapse.json",
        r#"{"schema_version":1,"algebra":[{"kind":"fin","dims":[1,1]}],"morphism":{"atom":"fin-dim-hom","multiplicity":[[0,1],[0,1]]}}"#,
    );
    assert_eq!(endolift(&["decompose", "--instance", &collapse]).status.code(), Some(3));
    assert_eq!(endolift(&["lift", "--instance", &collapse]).status.code(), Some(0));
    let shape = write(
        "shape.json",
        r#"{"schema_version":1,"algebra":[{"kind":"fin","dims":[1,1]}],"morphism":{"atom":"fin-dim-hom","multiplicity":[[0,2],[0,1]]}}"#,
    );
    assert_eq!(endolift(&["lift", "--instance", &shape]).status.code(), Some(3));
    assert_eq!(endolift(&["lift"]).status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("selftest.json");
    let o = endolift(&["selftest", "--seeds", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&out)["verdict"], "pass");
}
