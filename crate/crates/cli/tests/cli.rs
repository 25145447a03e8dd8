use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn vcmlab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcmlab"))
        .args(args)
        .current_dir(root)
        .env("VCMLAB_OUTPUT", root.join("runs"))
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = vcmlab(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Dataset, annotation-free copy, task net, config and a short pretrain,
/// built once and shared by the tests below.
struct Fixture {
    dir: PathBuf,
}

impl Fixture {
    fn path(&self, p: &str) -> String {
        self.dir.join(p).to_string_lossy().into_owned()
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli_fixture");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        ok(&dir, &["shapes-dataset", "--out", "data", "--sequences", "4", "--frames", "3", "--size", "64", "--labeled-index", "2"]);

        // same frames, no label files
        for seq in std::fs::read_dir(dir.join("data")).unwrap() {
            let seq = seq.unwrap().path();
            let target = dir.join("noann").join(seq.file_name().unwrap());
            std::fs::create_dir_all(&target).unwrap();
            for f in std::fs::read_dir(&seq).unwrap() {
                let f = f.unwrap().path();
                if !f.file_stem().unwrap().to_string_lossy().ends_with("_labels") {
                    std::fs::copy(&f, target.join(f.file_name().unwrap())).unwrap();
                }
            }
        }

        let cfg = ok(&dir, &["config-init", "--preset", "toy"])
            .replace("root = \"data/train\"", "root = \"data\"")
            .replace("pretrain_iterations = 500", "pretrain_iterations = 5")
            .replace("finetune_epochs = 10", "finetune_epochs = 1");
        std::fs::write(dir.join("cfg.toml"), cfg).unwrap();
        ok(&dir, &["train-task-net", "--dataset", "data", "--out", "task.json", "--iterations", "5"]);
        ok(&dir, &["pretrain", "--config", "cfg.toml"]);
        ok(
            &dir,
            &[
                "finetune", "--config", "cfg.toml", "--pretrained", "runs/pretrain/pretrain.ckpt", "--task-net",
                "task.json", "--strategy", "pseudo_gt", "--lambda-ladder", "16,8,4,2", "--dataset", "noann",
                "--name", "ladder",
            ],
        );
        Fixture { dir }
    })
}

fn ladder(f: &Fixture) -> Vec<String> {
    [16, 8, 4, 2]
        .iter()
        .map(|l| f.path(&format!("runs/ladder/pseudo_gt_lambda_{l}.ckpt")))
        .collect()
}

#[test]
fn config_init_writes_full_preset() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["config-init", "--preset", "full", "--out", "full.toml"]);
    let text = std::fs::read_to_string(dir.path().join("full.toml")).unwrap();
    assert!(text.contains("[training]") && text.contains("[dataset]"));
    assert!(text.contains("crop_size = 256"), "{text}");
}

#[test]
fn pretrain_writes_checkpoint_and_manifest() {
    let f = fixture();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.dir.join("runs/pretrain/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "pretrain");
    assert_eq!(manifest["dataset_fingerprint"].as_str().unwrap().len(), 64);
    for c in manifest["checkpoints"].as_array().unwrap() {
        assert!(f.dir.join("runs/pretrain").join(c.as_str().unwrap()).is_file());
    }
}

#[test]
fn missing_dataset_fails_without_a_run_directory() {
    let f = fixture();
    let out = vcmlab(&f.dir, &["pretrain", "--config", "cfg.toml", "--dataset", "nowhere", "--name", "missing"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!f.dir.join("runs/missing").exists());
}

#[test]
fn reruns_get_fresh_directories() {
    let dir = TempDir::new().unwrap();
    let f = fixture();
    std::fs::write(
        dir.path().join("cfg.toml"),
        std::fs::read_to_string(f.dir.join("cfg.toml")).unwrap().replace("root = \"data\"", &format!("root = {:?}", f.path("data"))),
    )
    .unwrap();
    ok(dir.path(), &["pretrain", "--config", "cfg.toml"]);
    ok(dir.path(), &["pretrain", "--config", "cfg.toml"]);
    let a = std::fs::read(dir.path().join("runs/pretrain/pretrain.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("runs/pretrain-2/pretrain.ckpt")).unwrap();
    assert_eq!(a, b, "same config and seed give the same checkpoint");
    assert!(dir.path().join("runs/pretrain-2/manifest.json").is_file());
}

#[test]
fn compress_decompress_round_trip() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let ckpt = f.path("runs/ladder/pseudo_gt_lambda_8.ckpt");
    let img = f.path("data/seq_000/frame_0002_labeled.png");
    let a = dir.path().join("a.bin").to_string_lossy().into_owned();
    let b = dir.path().join("b.bin").to_string_lossy().into_owned();
    let png = dir.path().join("out.png").to_string_lossy().into_owned();
    ok(dir.path(), &["compress", "--checkpoint", &ckpt, &img, &a]);
    ok(dir.path(), &["compress", "--checkpoint", &ckpt, &img, &b]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let stdout = ok(dir.path(), &["decompress", "--checkpoint", &ckpt, &a, &png]);
    assert!(stdout.starts_with("64x64"), "{stdout}");

    // a checkpoint with another architecture cannot read the stream
    let cfg = std::fs::read_to_string(f.dir.join("cfg.toml"))
        .unwrap()
        .replace("latent_channels = 32", "latent_channels = 16")
        .replace("root = \"data\"", &format!("root = {:?}", f.path("data")));
    std::fs::write(dir.path().join("other.toml"), cfg).unwrap();
    ok(dir.path(), &["pretrain", "--config", "other.toml", "--name", "other"]);
    let other = dir.path().join("runs/other/pretrain.ckpt").to_string_lossy().into_owned();
    let out = vcmlab(dir.path(), &["decompress", "--checkpoint", &other, &a, &png]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));

    let mut junk = std::fs::read(&a).unwrap();
    junk.truncate(5);
    std::fs::write(&b, junk).unwrap();
    assert_eq!(vcmlab(dir.path(), &["decompress", "--checkpoint", &ckpt, &b, &png]).status.code(), Some(5));
}

#[test]
fn pseudo_gt_ladder_on_unlabeled_data() {
    let f = fixture();
    assert_eq!(ladder(f).iter().filter(|p| Path::new(p).is_file()).count(), 4);
    let manifest = std::fs::read_to_string(f.dir.join("runs/ladder/manifest.json")).unwrap();
    assert!(manifest.contains("pseudo_gt"));

    for mode in ["labeled-only", "random-frame"] {
        let name = format!("rand-{mode}");
        ok(
            &f.dir,
            &[
                "finetune", "--config", "cfg.toml", "--pretrained", "runs/pretrain/pretrain.ckpt", "--task-net",
                "task.json", "--strategy", "pseudo_gt", "--lambda-ladder", "4", "--frame-mode", mode, "--dataset",
                "noann", "--name", &name,
            ],
        );
        assert!(f.dir.join("runs").join(&name).join("pseudo_gt_lambda_4.ckpt").is_file());
    }
}

#[test]
fn gt_strategy_needs_annotations() {
    let f = fixture();
    let out = vcmlab(
        &f.dir,
        &[
            "finetune", "--config", "cfg.toml", "--pretrained", "runs/pretrain/pretrain.ckpt", "--task-net",
            "task.json", "--strategy", "gt", "--dataset", "noann", "--name", "gt-noann",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!f.dir.join("runs/gt-noann").exists());
}

#[test]
fn bad_lambda_is_a_usage_error() {
    let f = fixture();
    let out = vcmlab(
        &f.dir,
        &[
            "finetune", "--config", "cfg.toml", "--pretrained", "runs/pretrain/pretrain.ckpt", "--task-net",
            "task.json", "--strategy", "mse", "--lambda-ladder", "4,-1", "--name", "neg",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(vcmlab(&f.dir, &["finetune", "--strategy", "nonsense"]).status.code(), Some(2));
}

#[test]
fn evaluate_report_and_bd() {
    let f = fixture();
    let ckpts = ladder(f);
    let mut args = vec!["evaluate", "--dataset", "data", "--task-net", "task.json", "--name", "pg"];
    args.extend(ckpts.iter().map(String::as_str));
    ok(&f.dir, &args);
    let run = f.dir.join("runs/pg");
    let curve = std::fs::read_to_string(run.join("pg.jsonl")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(curve.contains("\"miou\""));
    assert!(!run.join("bd.csv").exists());

    // regenerating from records gives the same files
    let out = f.path("regen");
    ok(&f.dir, &["report", &run.to_string_lossy(), "--out", &out]);
    for file in ["results.csv", "rd_miou.svg", "rd_psnr.svg", "pg.jsonl"] {
        assert_eq!(
            std::fs::read(run.join(file)).unwrap(),
            std::fs::read(f.dir.join("regen").join(file)).unwrap(),
            "{file}"
        );
    }

    let anchor = run.join("pg.jsonl").to_string_lossy().into_owned();
    let mut args = vec!["evaluate", "--dataset", "data", "--task-net", "task.json", "--name", "pg-anchored", "--anchor", &anchor];
    args.extend(ckpts.iter().map(String::as_str));
    ok(&f.dir, &args);
    let bd = std::fs::read_to_string(f.dir.join("runs/pg-anchored/bd.csv")).unwrap();
    assert!(bd.starts_with("test,anchor,BD mIOU"), "{bd}");
    let regen = f.path("regen-anchored");
    ok(&f.dir, &["report", &f.path("runs/pg-anchored"), "--out", &regen]);
    assert_eq!(bd, std::fs::read_to_string(f.dir.join("regen-anchored/bd.csv")).unwrap());

    // a run manifest with RD points works as an anchor too
    let manifest = run.join("manifest.json").to_string_lossy().into_owned();
    let stdout = ok(&f.dir, &["bd-report", "--anchor", &manifest, &anchor, "--name", "from-manifest"]);
    assert!(stdout.contains("0.00 pp"), "{stdout}");

    let stdout = ok(&f.dir, &["bd-report", "--anchor", &anchor, &anchor, "--name", "self"]);
    assert!(stdout.contains("0.00 pp"), "{stdout}");
    let table = std::fs::read_to_string(f.dir.join("runs/self/bd.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.contains(",0.0000,0.0000,")), "{table}");
}

#[test]
fn unknown_config_fields_are_rejected() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(f.dir.join("cfg.toml")).unwrap().replace("seed = 0", "seed = 0\nsede = 1");
    std::fs::write(dir.path().join("bad.toml"), text).unwrap();
    assert_eq!(vcmlab(dir.path(), &["pretrain", "--config", "bad.toml"]).status.code(), Some(2));
}
