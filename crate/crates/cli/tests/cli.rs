use std::fs;
use std::path::Path;
use std::process::Command;

fn tlens() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tlens"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"[experiment]
kind = "approx-error"
seeds = [1, 2]
output_dir = {:?}
steps = 20
log_every = 5
checkpoint_steps = [10]

[dataset]
source = "synthetic-digits"
n_train = 40
n_test = 20

[arch]
hidden = [8, 8]

[optim]
gamma = 0.01
batch_size = 10

[tracking]
telescope = true
{extra}"#,
        dir.join("out").display().to_string()
    );
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_accepts_and_rejects() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = write_config(tmp.path(), "");
    let out = tlens()
        .args(["validate", ok.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!tmp.path().join("out").exists());

    let bad = write_config(tmp.path(), "typo_key = 3\n");
    let out = tlens()
        .args(["validate", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo_key"));
}

#[test]
fn run_then_resume_produces_matching_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tlens()
        .args(["run", "--quiet", "--emit-gnuplot", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = tmp.path().join("out");
    for f in [
        "metrics-seed-1.jsonl",
        "metrics-seed-2.jsonl",
        "summary.csv",
        "plot.gp",
        "config.toml",
    ] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let strip = |p: &Path| -> Vec<serde_json::Value> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_s");
                v
            })
            .collect()
    };
    let before = strip(&dir.join("metrics-seed-2.jsonl"));
    let summary = fs::read(dir.join("summary.csv")).unwrap();
    let ck = dir.join("ckpt-seed-2-cell-0-step-10.tlck");
    let out = tlens()
        .args(["resume", "-q", ck.to_str().unwrap(), cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(strip(&dir.join("metrics-seed-2.jsonl")), before);
    assert_eq!(fs::read(dir.join("summary.csv")).unwrap(), summary);
}

#[test]
fn relative_idx_paths_use_the_data_dir_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "").to_str().unwrap().to_string();
    let text = fs::read_to_string(&cfg).unwrap().replace(
        "source = \"synthetic-digits\"",
        "source = \"idx\"\nimages = \"imgs.idx\"\nlabels = \"labels.idx\"",
    );
    fs::write(&cfg, text).unwrap();
    let out = tlens()
        .args(["validate", &cfg])
        .env("TLENS_DATA_DIR", tmp.path().join("nowhere"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere") && err.contains("imgs.idx"), "{err}");

    let raw = tlens_core::data::synthetic_digit_images(&[3, 5], 40, 0);
    tlens_core::data::write_idx_images(&tmp.path().join("imgs.idx"), &raw).unwrap();
    tlens_core::data::write_idx_labels(&tmp.path().join("labels.idx"), &raw.labels).unwrap();
    let out = tlens()
        .args(["run", "-q", &cfg])
        .env("TLENS_DATA_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
