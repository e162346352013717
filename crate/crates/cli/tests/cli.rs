use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
width = 40
height = 40
n_bands = 3
region_grid = 2,2
feature_size = 16
gedi_along = 20
gedi_across = 60
entry_widths = 4,4,4
num_blocks = 1
branches = 1,3
patch = 8
step = 4
predict_step = 4
epochs = 2
iters_per_epoch = 20
batch_size = 4
lr = 1e-3
k = 3
";

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
        Work { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_canopyfuse"))
            .current_dir(self.dir.path())
            .env("CANOPYFUSE_LOG", "warn")
            .arg("--config")
            .arg("small.cfg")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let o = self.run(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    /// Synthetic scene, fused labels and a trained checkpoint under `prefix`.
    fn pipeline(&self, prefix: &str) {
        let p = |s: &str| format!("{prefix}{s}");
        self.ok(&["--out", &p("s"), "synth"]);
        self.ok(&["--out", &p("f"), "fuse", "--bands", &p("s/bands.chmr"), "--footprints", &p("s/footprints.csv")]);
        self.ok(&["--out", &p("t"), "train", "--bands", &p("s/bands.chmr"), "--labels", &p("f/labels.chmr")]);
    }
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = match fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => Vec::new(),
    };
    v.sort();
    v
}

#[test]
fn synth_fuse_train_evaluate_smoke() {
    let w = Work::new();
    w.pipeline("");
    w.ok(&["--out", "e", "evaluate", "--checkpoint", "t/model.prfx", "--bands", "s/bands.chmr", "--set", "reference=s/true_chm.chmr"]);
    let metrics = fs::read_to_string(w.path("e/metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\nrmse,"), "{metrics}");
    for f in ["binned_mae.csv", "height_cdf.csv", "interval_accuracy.csv", "chm.chmr", "evaluate.manifest.json"] {
        assert!(w.path("e").join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(w.path("e/evaluate.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "evaluate");
    assert_eq!(manifest["config"]["patch"], "8");
    assert!(manifest["inputs"].as_object().unwrap().len() >= 3);
}

#[test]
fn reruns_are_byte_identical() {
    let w = Work::new();
    w.pipeline("a/");
    w.pipeline("b/");
    for sub in ["s", "f", "t"] {
        let (a, b) = (w.path(&format!("a/{sub}")), w.path(&format!("b/{sub}")));
        let names = files(&a);
        assert_eq!(names, files(&b));
        for n in names {
            let (x, y) = (fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
            if n.ends_with(".manifest.json") {
                // Input paths differ only in their run prefix.
                let x = String::from_utf8(x).unwrap().replace("a/", "b/");
                assert_eq!(x, String::from_utf8(y).unwrap(), "{sub}/{n}");
            } else {
                assert!(x == y, "{sub}/{n} differs between runs");
            }
        }
    }
}

#[test]
fn predict_with_wrong_band_count_is_a_validation_error() {
    let w = Work::new();
    w.pipeline("");
    w.ok(&["--out", "two", "synth", "--n-bands", "2"]);
    let o = w.run(&["--out", "p", "predict", "--checkpoint", "t/model.prfx", "--bands", "two/bands.chmr"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("expects 3") && err.contains("2 bands"), "{err}");
    assert!(files(&w.path("p")).is_empty(), "partial outputs left behind: {:?}", files(&w.path("p")));
}

#[test]
fn transfer_with_shared_region_is_a_validation_error() {
    let w = Work::new();
    w.ok(&["--out", "s", "synth"]);
    w.ok(&["--out", "f", "fuse", "--bands", "s/bands.chmr", "--footprints", "s/footprints.csv"]);
    let o = w.run(&[
        "--out", "g", "cv-geo", "--bands", "s/bands.chmr", "--labels", "f/labels.chmr", "--region-map", "s/regions.chmr",
        "--mode", "transfer", "--train-regions", "0", "--test-regions", "0",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("region 0"));
    assert!(files(&w.path("g")).is_empty());
}

#[test]
fn cross_validation_commands_write_fold_tables() {
    let w = Work::new();
    w.ok(&["--out", "s", "synth"]);
    w.ok(&["--out", "f", "fuse", "--bands", "s/bands.chmr", "--footprints", "s/footprints.csv"]);
    w.ok(&["--out", "r", "cv-random", "--bands", "s/bands.chmr", "--labels", "f/labels.chmr"]);
    let folds = fs::read_to_string(w.path("r/cv_random_folds.csv")).unwrap();
    assert_eq!(folds.lines().count(), 4, "{folds}");
    w.ok(&["--out", "g", "cv-geo", "--bands", "s/bands.chmr", "--labels", "f/labels.chmr", "--region-map", "s/regions.chmr"]);
    let runs = fs::read_to_string(w.path("g/cv_geo_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5, "{runs}");
}

#[test]
fn photon_and_waveform_commands() {
    let w = Work::new();
    w.ok(&["--out", "s", "synth"]);
    w.ok(&["--out", "d", "denoise", "--photons", "s/photons.csv"]);
    w.ok(&["--out", "c", "steps", "--photons", "d/photons_labeled.csv"]);
    let steps = fs::read_to_string(w.path("c/canopy_steps.csv")).unwrap();
    assert!(steps.starts_with("step_center,canopy_top,ground,canopy_height\n"));
    assert!(steps.lines().count() > 1);

    let mut pts = String::from("x,y,z\n");
    for i in 0..20 {
        for j in 0..20 {
            pts.push_str(&format!("{},{},{}\n", i, j, if (i + j) % 2 == 0 { 30.0 } else { 0.0 }));
        }
    }
    fs::write(w.path("pts.csv"), pts).unwrap();
    fs::write(w.path("ctr.csv"), "x,y\n10,10\n500,500\n").unwrap();
    w.ok(&["--out", "h", "waveform-rh", "--points", "pts.csv", "--centers", "ctr.csv"]);
    let rh = fs::read_to_string(w.path("h/rh.csv")).unwrap();
    assert_eq!(rh.lines().count(), 2, "empty footprint is skipped: {rh}");
    assert!(rh.starts_with("x,y,rh10,"));
}

#[test]
fn usage_errors_exit_two() {
    let w = Work::new();
    assert_eq!(w.run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(w.run(&["train", "--no-such-flag", "1"]).status.code(), Some(2));
}

#[test]
fn bad_configuration_exits_three() {
    let w = Work::new();
    assert_eq!(w.run(&["--set", "no_such_key=1", "synth"]).status.code(), Some(3));
    assert_eq!(w.run(&["--set", "lr=-1", "train", "--bands", "x", "--labels", "y"]).status.code(), Some(3));
    let o = w.run(&["--out", "p", "predict", "--checkpoint", "missing.prfx", "--bands", "missing.chmr"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(files(&w.path("p")).is_empty());
}
