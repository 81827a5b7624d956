use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn endosim(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_endosim"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

fn assert_single_error_line(o: &Output) -> String {
    assert_eq!(o.status.code(), Some(1), "{}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert_eq!(lines[0].split('\t').count(), 3, "{err}");
    assert!(lines[0].starts_with("error\t"), "{err}");
    lines[0].to_string()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Every file below `dir` with its bytes, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const MODEL: &str = "[model]\nvariant = \"shallow_unet\"\nbase_channels = 4\ninput_size = 32\ndisc_base_channels = 4\n";

/// Renders a small toy dataset and returns its two manifests.
fn toy(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, "toy.toml", "[render]\ntoy = true\ntoy_count = 6\ntoy_size = 32\n");
    let out = dir.join("data");
    assert_ok(&endosim(&["render"], Some(&cfg), &out));
    (out.join("toy/virtual/manifest.tsv"), out.join("toy/real/manifest.tsv"))
}

fn train_config(dir: &Path, v: &Path, r: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "seed = 3\n{MODEL}[data]\nvirtual_manifest = {v:?}\nreal_manifest = {r:?}\n[train]\nepochs = 1\nbatch_size = 3\nfake_buffer_size = 4\n{extra}"
    );
    write_config(dir, "train.toml", &text)
}

#[test]
fn unknown_keys_are_named_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[train]\nepochz = 1\n[nonsense]\nx = 2\n");
    let line = assert_single_error_line(&endosim(&["train"], Some(&cfg), &dir.path().join("out")));
    assert!(line.starts_with("error\tconfig\t"), "{line}");
    assert!(line.contains("train.epochz") && line.contains("nonsense"), "{line}");
}

#[test]
fn invalid_values_are_listed_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[train]\nbatch_size = 0\nbeta1 = 1.5\n[loss]\nlambda_cyc = -1.0\n");
    let line = assert_single_error_line(&endosim(&["bench"], Some(&cfg), &dir.path().join("out")));
    for key in ["train.batch_size", "train.beta1", "loss.lambda_cyc"] {
        assert!(line.contains(key), "{line}");
    }
    let typed = write_config(dir.path(), "t.toml", "[train]\nepochs = \"many\"\n");
    let line = assert_single_error_line(&endosim(&["bench"], Some(&typed), &dir.path().join("out")));
    assert!(line.contains("train.epochs"), "{line}");
}

#[test]
fn missing_paths_fail_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let line = assert_single_error_line(&endosim(&["train"], None, &dir.path().join("out")));
    assert!(line.contains("data.virtual_manifest"), "{line}");
    let cfg = write_config(dir.path(), "c.toml", "[translate]\ncheckpoint = \"/nonexistent/model.safetensors\"\ninput = \"x\"\n");
    assert_single_error_line(&endosim(&["translate"], Some(&cfg), &dir.path().join("out")));
}

#[test]
fn train_translate_and_eval_on_the_toy_set() {
    let dir = tempfile::tempdir().unwrap();
    let (v, r) = toy(dir.path());
    let cfg = train_config(dir.path(), &v, &r, "");
    let run = dir.path().join("run");
    assert_ok(&endosim(&["train"], Some(&cfg), &run));
    let ck = run.join("model.safetensors");
    assert!(ck.exists());
    let log = fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");
    assert!(log.starts_with("step,epoch,"));
    assert!(run.join("effective_config.toml").exists());

    let again = dir.path().join("again");
    assert_ok(&endosim(&["train"], Some(&cfg), &again));
    assert_eq!(snapshot(&run), snapshot(&again));

    let translate = write_config(
        dir.path(),
        "translate.toml",
        &format!("{MODEL}[translate]\ncheckpoint = {ck:?}\ninput = {v:?}\n"),
    );
    let (t1, t2) = (dir.path().join("t1"), dir.path().join("t2"));
    assert_ok(&endosim(&["translate"], Some(&translate), &t1));
    assert_ok(&endosim(&["translate"], Some(&translate), &t1));
    assert_ok(&endosim(&["translate"], Some(&translate), &t2));
    let snap = snapshot(&t1);
    assert_eq!(snap.keys().filter(|p| p.starts_with("translated")).count(), 6);
    let rewrite = |s: BTreeMap<PathBuf, Vec<u8>>| -> BTreeMap<PathBuf, Vec<u8>> {
        // per_image.csv lists absolute output paths, which differ by directory
        s.into_iter().filter(|(p, _)| p != Path::new("per_image.csv")).collect()
    };
    assert_eq!(rewrite(snap), rewrite(snapshot(&t2)));

    let eval = write_config(
        dir.path(),
        "eval.toml",
        &format!("{MODEL}[eval]\ncheckpoint = {ck:?}\ninput = {v:?}\nreference = {r:?}\n"),
    );
    let e1 = dir.path().join("e1");
    assert_ok(&endosim(&["eval"], Some(&eval), &e1));
    let report = fs::read_to_string(e1.join("report.txt")).unwrap();
    assert!(report.contains("temporal_smoothness") && report.contains("color_histogram_distance"), "{report}");
    assert!(e1.join("grid.png").exists());
    let before = snapshot(&e1);
    assert_ok(&endosim(&["eval"], Some(&eval), &e1));
    assert_eq!(before, snapshot(&e1));
}

#[test]
fn variant_mismatch_names_both_variants() {
    let dir = tempfile::tempdir().unwrap();
    let (v, r) = toy(dir.path());
    let run = dir.path().join("run");
    assert_ok(&endosim(&["train"], Some(&train_config(dir.path(), &v, &r, "")), &run));
    let ck = run.join("model.safetensors");
    let cfg = write_config(
        dir.path(),
        "mismatch.toml",
        &format!("[model]\nvariant = \"residual_unet\"\ninput_size = 32\n[translate]\ncheckpoint = {ck:?}\ninput = {v:?}\n"),
    );
    let line = assert_single_error_line(&endosim(&["translate"], Some(&cfg), &dir.path().join("t")));
    assert!(line.contains("shallow_unet") && line.contains("residual_unet"), "{line}");
}

#[test]
fn resume_continues_to_the_requested_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let (v, r) = toy(dir.path());
    let straight = dir.path().join("straight");
    let two = train_config(dir.path(), &v, &r, "checkpoint_every = 1\n");
    let two = fs::read_to_string(&two).unwrap().replace("epochs = 1", "epochs = 2");
    let two = write_config(dir.path(), "two.toml", &two);
    assert_ok(&endosim(&["train"], Some(&two), &straight));

    let split = dir.path().join("split");
    let one = train_config(dir.path(), &v, &r, "checkpoint_every = 1\n");
    assert_ok(&endosim(&["train"], Some(&one), &split));
    let ck = split.join("checkpoints/epoch_0001.safetensors");
    let resume = fs::read_to_string(&two).unwrap() + &format!("resume = {ck:?}\n");
    let resume = write_config(dir.path(), "resume.toml", &resume);
    assert_ok(&endosim(&["train"], Some(&resume), &split));

    assert_eq!(fs::read(straight.join("losses.csv")).unwrap(), fs::read(split.join("losses.csv")).unwrap());
    assert_eq!(
        fs::read(straight.join("model.safetensors")).unwrap(),
        fs::read(split.join("model.safetensors")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "seed = 5\n[render]\ntoy = true\ntoy_count = 2\ntoy_size = 32\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&endosim(&["render", "--seed", "9"], Some(&cfg), &a));
    assert_ok(&endosim(&["render"], Some(&cfg), &b));
    let eff = fs::read_to_string(a.join("effective_config.toml")).unwrap();
    assert!(eff.lines().any(|l| l == "seed = 9"), "{eff}");
    assert_ne!(
        fs::read(a.join("toy/real/frame_00000.png")).unwrap(),
        fs::read(b.join("toy/real/frame_00000.png")).unwrap()
    );
}

#[test]
fn phantom_render_and_cleanse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "render.toml",
        "[render]\nphantom = \"tube\"\nphantom_dims = [24, 24, 64]\nphantom_radius = 8.0\nsamples_per_segment = 2\nwidth = 16\nheight = 16\n",
    );
    let out = dir.path().join("render");
    assert_ok(&endosim(&["render"], Some(&cfg), &out));
    let manifest = out.join("frames/manifest.tsv");
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 4);
    let before = snapshot(&out);
    assert_ok(&endosim(&["render"], Some(&cfg), &out));
    assert_eq!(before, snapshot(&out));

    // relabel the rendered frames as real ones and exclude one of them
    let real = fs::read_to_string(&manifest).unwrap().replace("\tvirtual\t", "\treal\t");
    let real_manifest = out.join("frames/real.tsv");
    fs::write(&real_manifest, real).unwrap();
    let excl = write_config(dir.path(), "excl.tsv", "frame_00002.png\tfluid\n");
    let cfg = write_config(
        dir.path(),
        "cleanse.toml",
        &format!("[cleanse]\nrecords = {real_manifest:?}\nexclusions = {excl:?}\n"),
    );
    let c = dir.path().join("cleanse");
    assert_ok(&endosim(&["cleanse"], Some(&cfg), &c));
    assert_eq!(fs::read_to_string(c.join("kept.tsv")).unwrap().lines().count(), 3);
    let report = fs::read_to_string(c.join("report.txt")).unwrap();
    assert!(report.contains("removed = 1") && report.contains("fluid = 1"), "{report}");
    let removed = fs::read_to_string(c.join("removed.tsv")).unwrap();
    assert!(removed.contains("frame_00002.png\tfluid\tmanifest"), "{removed}");
}

#[test]
fn bench_reports_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bench.toml", "[bench]\nsize = 32\nbase_channels = 2\n");
    let out = dir.path().join("bench");
    assert_ok(&endosim(&["bench"], Some(&cfg), &out));
    let text = fs::read_to_string(out.join("bench.txt")).unwrap();
    for v in ["shallow_unet", "unet", "deep_unet", "residual_unet"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{v} = "))), "{text}");
    }
}
