//! End-to-end checks of the `gsavatar` binary: determinism of scene
//! generation, error reporting, config plumbing, and the full
//! fit/render/metrics loop on a tiny synthetic scene.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gsavatar_core::io::PipelineConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gsavatar"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawning gsavatar")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "gsavatar {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout should be utf-8")
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("paths in this test are utf-8")
}

fn tiny_scene(dir: &Path) {
    run_ok(&[
        "make-scene",
        "--out",
        path_str(dir),
        "--shape",
        "sphere",
        "--n",
        "6",
        "--views",
        "2",
        "--frames",
        "2",
        "--width",
        "16",
        "--height",
        "16",
        "--seed",
        "7",
    ]);
}

/// Relative path and content of every file under `dir`, sorted.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn file_names(files: &[(String, Vec<u8>)]) -> Vec<&str> {
    files.iter().map(|(name, _)| name.as_str()).collect()
}

#[test]
fn make_scene_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    tiny_scene(&a);
    tiny_scene(&b);

    let tree_a = tree(&a);
    let names = file_names(&tree_a);
    for expected in [
        "frames/0000.png",
        "frames/0001.png",
        "masks/0000.png",
        "prior.obj",
        "scene.json",
        "tracks.csv",
        "truth.avatar.json",
    ] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    assert_eq!(tree_a, tree(&b), "same seed must produce identical bytes");
}

#[test]
fn metrics_on_identical_directories_hit_the_caps() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    tiny_scene(&scene);
    let frames = scene.join("frames");

    let stdout = run_ok(&["metrics", "--a", path_str(&frames), "--b", path_str(&frames)]);
    let rows: Vec<&str> = stdout.lines().collect();
    assert!(rows[0].contains("psnr_db") && rows[0].contains("ssim"));
    for row in &rows[1..] {
        assert!(row.contains("99.0000"), "psnr not capped in {row:?}");
        assert!(row.contains("1.000000"), "ssim not 1 in {row:?}");
    }
    assert!(rows.last().unwrap().starts_with("average"));
}

#[test]
fn metrics_rejects_mismatched_frame_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    tiny_scene(&scene);
    let frames = scene.join("frames");
    let partial = tmp.path().join("partial");
    fs::create_dir(&partial).unwrap();
    fs::copy(frames.join("0000.png"), partial.join("0000.png")).unwrap();

    let out = run(&["metrics", "--a", path_str(&frames), "--b", path_str(&partial)]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("0001.png"), "stderr was {stderr:?}");
}

#[test]
fn render_with_a_missing_avatar_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    tiny_scene(&scene);
    let missing = tmp.path().join("nope.avatar.json");

    let out = run(&[
        "render",
        "--avatar",
        path_str(&missing),
        "--scene",
        path_str(&scene),
        "--out",
        path_str(&tmp.path().join("out")),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: "), "stderr was {stderr:?}");
    assert!(stderr.contains("nope.avatar.json"), "stderr was {stderr:?}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "stderr was {stderr:?}");
}

#[test]
fn print_config_round_trips_and_honors_overrides() {
    let defaults = run_ok(&["--print-config"]);
    let parsed = PipelineConfig::from_toml_str(&defaults).unwrap();
    assert_eq!(parsed, PipelineConfig::default());

    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("pipeline.toml");
    fs::write(&config_path, "[optim]\nstage2_iters = 2\n").unwrap();
    let effective = run_ok(&[
        "fit-avatar",
        "--scene",
        "unused",
        "--out",
        "unused",
        "--config",
        path_str(&config_path),
        "--print-config",
    ]);
    let parsed = PipelineConfig::from_toml_str(&effective).unwrap();
    assert_eq!(parsed.optim.stage2_iters, 2);
    assert_eq!(parsed.control, PipelineConfig::default().control);

    fs::write(&config_path, "[optim]\nstage2_iter = 2\n").unwrap();
    let out = run(&[
        "fit-avatar",
        "--scene",
        "unused",
        "--out",
        "unused",
        "--config",
        path_str(&config_path),
        "--print-config",
    ]);
    assert!(!out.status.success(), "unknown config keys must be rejected");
}

#[test]
fn bad_invocations_fail_with_nonzero_exit() {
    assert!(!run(&[]).status.success());
    assert!(!run(&["definitely-not-a-subcommand"]).status.success());
    assert!(!run(&["metrics", "--a", "x", "--b", "y", "--bogus"]).status.success());
}

#[test]
fn fit_render_metrics_loop_on_a_tiny_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    tiny_scene(&scene);
    let scene_before = tree(&scene);

    let config_path = tmp.path().join("pipeline.toml");
    fs::write(
        &config_path,
        "[optim]\nstage1_iters = 2\nstage2_iters = 3\npsnr_every = 1\n",
    )
    .unwrap();
    let config = path_str(&config_path);

    let fit: PathBuf = tmp.path().join("fit");
    run_ok(&[
        "fit-avatar",
        "--scene",
        path_str(&scene),
        "--out",
        path_str(&fit),
        "--n",
        "8",
        "--config",
        config,
    ]);
    for name in ["avatar.json", "trace.csv", "trace.json"] {
        assert!(fit.join(name).exists(), "{name} missing after fit-avatar");
    }

    let geo = tmp.path().join("geo");
    run_ok(&[
        "fit-geometry",
        "--scene",
        path_str(&scene),
        "--out",
        path_str(&geo),
        "--resolution",
        "8",
        "--config",
        config,
    ]);
    assert!(geo.join("mesh.obj").exists());
    assert!(geo.join("trace.csv").exists());

    let avatar = fit.join("avatar.json");
    let rendered = tmp.path().join("rendered");
    run_ok(&[
        "render",
        "--avatar",
        path_str(&avatar),
        "--scene",
        path_str(&scene),
        "--out",
        path_str(&rendered),
    ]);
    assert!(rendered.join("0000.png").exists());
    assert!(rendered.join("0001.png").exists());

    let reenacted = tmp.path().join("reenacted");
    run_ok(&[
        "reenact",
        "--avatar",
        path_str(&avatar),
        "--track",
        path_str(&scene),
        "--out",
        path_str(&reenacted),
    ]);
    assert_eq!(
        fs::read(rendered.join("0000.png")).unwrap(),
        fs::read(reenacted.join("0000.png")).unwrap(),
        "reenacting a scene with its own track must match render"
    );

    let stdout = run_ok(&[
        "metrics",
        "--a",
        path_str(&scene.join("frames")),
        "--b",
        path_str(&rendered),
    ]);
    assert!(stdout.lines().last().unwrap().starts_with("average"));

    let report = run_ok(&[
        "split-report",
        "--avatar",
        path_str(&scene.join("truth.avatar.json")),
        "--scene",
        path_str(&scene),
    ]);
    assert_eq!(report.lines().count(), 3, "header plus one row per frame");

    assert_eq!(scene_before, tree(&scene), "scene inputs must stay untouched");
}
