use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[pipeline]
sequences = 1
steps = 150
generations = 2
[augment]
n_noisy = 1
theta3 = 10
[train]
max_epochs = 2
[neat]
pop_size = 6
[task]
step_cap = 60
";

fn stemflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stemflow"))
        .current_dir(dir)
        .env("STEMFLOW_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn stemflow")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) {
    std::fs::write(dir.join("small.conf"), SMALL).unwrap();
}

#[test]
fn out_of_range_config_exits_2_with_located_message() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "[tracker]\ntheta1 = 1.5\n").unwrap();
    let o = stemflow(dir.path(), &["--config", "bad.conf", "synth", "--steps", "5", "--out", "f"]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("line 2") && e.contains("theta1 ∈ (0,1)"), "{e}");
    assert!(!dir.path().join("f").exists());
}

#[test]
fn misspelled_key_suggests_the_nearest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "[neat]\npop_sise = 10\n").unwrap();
    let o = stemflow(dir.path(), &["--config", "bad.conf", "pipeline", "--out", "run"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("did you mean `pop_size`"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&stemflow(dir.path(), &["nonsense"])), 2);
    assert_eq!(code(&stemflow(dir.path(), &["synth", "--schedule", "sideways", "--out", "f"])), 2);
    assert_eq!(code(&stemflow(dir.path(), &["pipeline", "--out", "run", "--stages", "synth,trian"])), 2);
}

#[test]
fn missing_input_exits_3_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = stemflow(dir.path(), &["train", "--data", "absent.txt", "--out", "m.lstm"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("absent.txt"));
}

#[test]
fn failed_pipeline_stage_exits_3_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let o = stemflow(dir.path(), &["--config", "small.conf", "pipeline", "--out", "run", "--stages", "train"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("train"));
    let manifest = std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap();
    assert!(manifest.contains(r#""status": "failed""#), "{manifest}");
}

#[test]
fn individual_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    let ok = |args: &[&str]| {
        let o = stemflow(d, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        o
    };
    ok(&["synth", "--steps", "150", "--out", "open.frames"]);
    ok(&["synth", "--steps", "150", "--schedule", "random", "--seed", "3", "--out", "rand.frames"]);
    ok(&["--config", "small.conf", "augment", "--frames", "open.frames", "rand.frames", "--out", "data.txt"]);
    ok(&["--config", "small.conf", "train", "--data", "data.txt", "--out", "m.lstm", "--seed", "1", "--losses", "l.csv"]);
    ok(&[
        "--config", "small.conf", "evolve", "--scenario-set", "middle", "--model", "m.lstm", "--gens", "2", "--pop", "6",
        "--seed", "1", "--out", "c.genome", "--stats", "s.csv",
    ]);
    let o = ok(&[
        "--config", "small.conf", "simulate", "--genome", "c.genome", "--model", "m.lstm", "--scenario", "middle:1",
        "--trace", "t.csv", "--svg", "t.svg",
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("fitness"));
    ok(&["--config", "small.conf", "plot", "--trace", "t.csv", "--scenario", "middle:1", "--out", "p.svg"]);
    ok(&["plot", "--frames", "open.frames", "--out", "f.svg"]);

    let header = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(header.starts_with("step,light,c_t,x0,y0"));
    let svg = std::fs::read_to_string(d.join("p.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<rect"));
    assert!(std::fs::read_to_string(d.join("c.genome")).unwrap().starts_with("# stemflow genome"));
}

#[test]
fn rendered_frames_track_back_close_to_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = stemflow(
        d,
        &["synth", "--steps", "120", "--out", "truth.frames", "--render", "r", "--render-every", "30", "--px-per-cm", "40"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = stemflow(
        d,
        &[
            "--config", "r/tracker.conf", "track", "--images", "r/images", "--setup", "r/setup", "--lights", "r/lights.log",
            "--out", "tracked.frames",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let truth = stemflow_core::io::read_frames_file(&d.join("truth.frames")).unwrap();
    let tracked = stemflow_core::io::read_frames_file(&d.join("tracked.frames")).unwrap();
    assert_eq!(tracked.len(), 4);
    for (k, f) in tracked.iter().enumerate() {
        let t = &truth[30 * k];
        assert_eq!(f.light, t.light);
        // one sampled pixel at 40 px/cm and downsample 4 is 0.1 cm
        let err = f.stem.tip().distance(&t.stem.tip());
        assert!(err < 0.5, "frame {k}: tip error {err}");
    }
}

#[test]
fn pipeline_runs_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let o = stemflow(dir.path(), &["--config", "small.conf", "pipeline", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = stemflow(dir.path(), &["pipeline", "--out", "run", "--verify"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    std::fs::write(dir.path().join("run/augment/dataset.txt"), "tampered\n").unwrap();
    let o = stemflow(dir.path(), &["pipeline", "--out", "run", "--verify"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("dataset.txt"), "{}", stderr(&o));
}
