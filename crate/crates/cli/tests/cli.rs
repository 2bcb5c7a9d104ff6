use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splatcache"))
}

#[test]
fn reference_render_metrics_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = bin().args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let p = |s: &str| d.join(s).to_str().unwrap().to_owned();
    run(&["reference", "-o", &p("ref"), "--spp", "4", "--resolution", "12", "10"]);
    run(&["render", "--mode", "nee", "-o", &p("nee"), "--resolution", "12", "10", "--reference", &p("ref")]);
    let m = run(&["metrics", &p("nee/frame_0000.pfm"), &p("ref/reference_0000.pfm")]);
    assert!(m.contains("psnr_db"));
    let s = run(&["summarize", &p("nee/metrics.csv"), "--out", &p("report")]);
    assert!(s.contains("nee"));
    assert!(d.join("report/summary.csv").exists());
    run(&["init-cache", "-o", &p("cache"), "--cache-size", "64"]);
    assert!(d.join("cache/manifest.toml").exists());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.pfm");
    assert!(!bin().args(["metrics", missing.to_str().unwrap(), missing.to_str().unwrap()]).status().unwrap().success());
    let out = dir.path().join("o");
    let status = bin()
        .args(["render", "--mode", "nee", "-o", out.to_str().unwrap(), "--resolution", "8", "8", "--reference"])
        .arg(&missing)
        .status()
        .unwrap();
    assert!(!status.success());
    assert!(!bin().args(["render", "--frames", "0"]).status().unwrap().success());
    assert!(!bin().arg("bogus").status().unwrap().success());
}
