mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use endosim::checkpoint::load_translator;
use endosim::cleansing::{apply_cleansing, ExclusionManifest, HeuristicRules, HueRule};
use endosim::dataset::{export_frames, read_manifest, write_manifest, Domain, DomainDataset, ImageRecord};
use endosim::eval::{benchmark_inference, color_histogram_distance, export_grid, temporal_smoothness, translate, EvalReport};
use endosim::image::{load_image, save_image, ImageTensor};
use endosim::nn::{build_translator, init_parameters, ArchitectureSpec, Variant};
use endosim::path::{fly_through, FlyThroughPath, Intrinsics, Keyframe};
use endosim::render::TransferFunction;
use endosim::session::{resume_to_dir, train_to_dir};
use endosim::toy::{toy_flythrough, write_toy_dataset, ToyConfig};
use endosim::volume::{load_volume, make_phantom, CtVolume, PhantomKind, PhantomParams};
use endosim::{Error, Result};

use config::{load_config, path_opt, require_path, RunConfig};

#[derive(Parser)]
#[command(name = "endosim", version, about = "Virtual-to-real colonoscopy image translation toolkit")]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed everywhere.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Render a fly-through of a CT volume or phantom, or the toy dataset.
    Render,
    /// Remove excluded real frames from a dataset manifest.
    Cleanse,
    /// Train the cycle-consistent translators.
    Train,
    /// Translate a manifest of images with a trained checkpoint.
    Translate,
    /// Compute histogram distance and temporal smoothness for a checkpoint.
    Eval,
    /// Time single-image inference for each translator variant.
    Bench,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn domain_dataset(path: &Path, domain: Domain) -> Result<DomainDataset> {
    DomainDataset::new(domain, read_manifest(path)?)
}

fn load_all(records: &[ImageRecord], side: usize) -> Result<Vec<ImageTensor>> {
    records.iter().map(|r| load_image(&r.path, Some(side))).collect()
}

fn default_keyframes(vol: &CtVolume) -> Vec<Keyframe> {
    let (lo, hi) = vol.bounds();
    let c = vol.center();
    let (z0, z1) = (lo[2] + 0.1 * (hi[2] - lo[2]), lo[2] + 0.8 * (hi[2] - lo[2]));
    (0..3)
        .map(|i| {
            let z = z0 + (z1 - z0) * i as f64 / 2.0;
            Keyframe {
                position: [c[0], c[1], z],
                target: [c[0], c[1], z + 10.0],
            }
        })
        .collect()
}

fn cmd_render(cfg: &RunConfig, out: &Path) -> Result<String> {
    let rc = &cfg.render;
    if rc.toy {
        let toy = ToyConfig {
            size: rc.toy_size,
            count: rc.toy_count,
            seed: cfg.seed,
        };
        let (v, r) = write_toy_dataset(&out.join("toy"), &toy)?;
        return Ok(format!("toy dataset: {} and {}", v.display(), r.display()));
    }
    let vol = match path_opt(&rc.volume) {
        Some(p) => load_volume(&p)?,
        None => {
            let kind: PhantomKind = rc.phantom.parse()?;
            let dims = [rc.phantom_dims[0], rc.phantom_dims[1], rc.phantom_dims[2]];
            let params = PhantomParams {
                radius: rc.phantom_radius,
                fold_amplitude: rc.fold_amplitude,
                fold_period: rc.fold_period,
                spacing_mm: rc.spacing_mm,
                ..Default::default()
            };
            make_phantom(kind, dims, params)?.volume
        }
    };
    let keyframes = if rc.keyframes.is_empty() {
        default_keyframes(&vol)
    } else {
        rc.keyframes
            .iter()
            .map(|k| Keyframe {
                position: [k[0], k[1], k[2]],
                target: [k[3], k[4], k[5]],
            })
            .collect()
    };
    let path = FlyThroughPath::new(keyframes, rc.samples_per_segment)?;
    let intr = Intrinsics {
        vertical_fov_deg: rc.fov_deg,
        width: rc.width,
        height: rc.height,
    };
    let frames = fly_through(&vol, &path, &intr, &TransferFunction::colon(), &rc.render_params())?;
    let manifest = export_frames(&frames, &out.join("frames"), Domain::Virtual, "render")?;
    Ok(format!("{} frames, manifest {}", frames.len(), manifest.display()))
}

fn cmd_cleanse(cfg: &RunConfig, out: &Path) -> Result<String> {
    let cc = &cfg.cleanse;
    let mut records = read_manifest(&require_path(&cc.records, "cleanse.records")?)?;
    for r in &mut records {
        r.path = fs::canonicalize(&r.path).map_err(|e| Error::io(format!("resolving {}", r.path.display()), e))?;
    }
    let manifest = match path_opt(&cc.exclusions) {
        Some(p) => ExclusionManifest::read(&p)?,
        None => ExclusionManifest::default(),
    };
    let rules = HeuristicRules {
        narrow_band: cc.narrow_band_rule.then_some(HueRule::NARROW_BAND),
        surgical_tool: cc.surgical_tool_rule.then_some(HueRule::SURGICAL_TOOL),
    };
    let outcome = apply_cleansing(records, &manifest, &rules, |r| load_image(&r.path, None))?;
    write_manifest(&out.join("kept.tsv"), outcome.kept.records())?;
    let mut removed = String::from("id\tlabels\tsources\n");
    for r in &outcome.removed {
        let sources: Vec<_> = r.source_flags.iter().map(|s| format!("{s:?}").to_lowercase()).collect();
        removed.push_str(&format!("{}\t{}\t{}\n", r.id, r.labels_string(), sources.join(",")));
    }
    write_text(&out.join("removed.tsv"), &removed)?;
    write_text(&out.join("report.txt"), &outcome.report.to_text())?;
    Ok(format!("kept {} of {}", outcome.report.kept, outcome.report.total))
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<String> {
    let v = domain_dataset(&require_path(&cfg.data.virtual_manifest, "data.virtual_manifest")?, Domain::Virtual)?;
    let r = domain_dataset(&require_path(&cfg.data.real_manifest, "data.real_manifest")?, Domain::Real)?;
    let w = cfg.loss_weights()?;
    let outcome = match path_opt(&cfg.train.resume) {
        Some(ck) => resume_to_dir(&ck, &v, &r, cfg.training(), w, out)?,
        None => train_to_dir(&v, &r, cfg.model.spec()?, cfg.model.disc_spec(), cfg.training(), w, out)?,
    };
    let last = outcome.records.last().map(|r| r.to_string()).unwrap_or_default();
    Ok(format!("checkpoint {}; {last}", outcome.final_checkpoint.display()))
}

fn cmd_translate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let tc = &cfg.translate;
    let ck = require_path(&tc.checkpoint, "translate.checkpoint")?;
    let (spec, net) = load_translator(&ck, &tc.direction, Some(cfg.model.variant()?))?;
    let records = read_manifest(&require_path(&tc.input, "translate.input")?)?;
    let outputs = translate(&net, &load_all(&records, spec.height)?)?;
    let dir = out.join("translated");
    create_dir(&dir)?;
    let mut report = EvalReport {
        variant: spec.variant.to_string(),
        ..Default::default()
    };
    for (rec, img) in records.iter().zip(&outputs) {
        let stem = Path::new(&rec.id).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| rec.id.clone());
        let path = dir.join(format!("{stem}.png"));
        save_image(img, &path)?;
        report.translations.push((rec.id.clone(), path));
    }
    write_text(&out.join("per_image.csv"), &report.per_image_csv())?;
    Ok(format!("translated {} images", outputs.len()))
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<String> {
    let ec = &cfg.eval;
    let ck = require_path(&ec.checkpoint, "eval.checkpoint")?;
    let (spec, g) = load_translator(&ck, "G", Some(cfg.model.variant()?))?;
    let side = spec.height;
    let inputs_rec = read_manifest(&require_path(&ec.input, "eval.input")?)?;
    let reference = load_all(&read_manifest(&require_path(&ec.reference, "eval.reference")?)?, side)?;
    let inputs = load_all(&inputs_rec, side)?;
    let outputs = translate(&g, &inputs)?;
    let sequence = match path_opt(&ec.sequence) {
        Some(p) => load_all(&read_manifest(&p)?, side)?,
        None => toy_flythrough(side, ec.sequence_frames)?,
    };
    let seq_out = translate(&g, &sequence)?;
    let dir = out.join("translated");
    create_dir(&dir)?;
    let mut report = EvalReport {
        variant: spec.variant.to_string(),
        temporal_smoothness: Some(temporal_smoothness(&sequence, &seq_out)?),
        color_histogram_distance: Some(color_histogram_distance(&outputs, &reference, ec.bins)?),
        baseline_histogram_distance: Some(color_histogram_distance(&inputs, &reference, ec.bins)?),
        ..Default::default()
    };
    for (rec, img) in inputs_rec.iter().zip(&outputs) {
        let path = dir.join(&rec.id).with_extension("png");
        save_image(img, &path)?;
        report.translations.push((rec.id.clone(), path));
    }
    let rows: Vec<Vec<ImageTensor>> = inputs
        .iter()
        .zip(&outputs)
        .take(ec.grid_rows.max(1))
        .map(|(a, b)| vec![a.clone(), b.clone()])
        .collect();
    export_grid(&rows, &out.join("grid.png"))?;
    write_text(&out.join("report.txt"), &report.to_text())?;
    write_text(&out.join("per_image.csv"), &report.per_image_csv())?;
    Ok(report.to_text().trim_end().replace('\n', "; "))
}

fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<String> {
    let bc = &cfg.bench;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let image = ImageTensor::from_fn(bc.size, bc.size, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    let mut lines = Vec::new();
    for name in &bc.variants {
        let variant: Variant = name.parse()?;
        let spec = ArchitectureSpec::new(variant, bc.base_channels, bc.size, bc.size);
        spec.validate()?;
        let net = init_parameters::<f32, _>(build_translator(&spec)?.into(), &mut rng);
        let res = benchmark_inference(&net, &image, bc.runs)?;
        lines.push(format!("{variant} = {:.6}", res.median_seconds));
    }
    let text = format!("size = {}\nbase_channels = {}\nruns = {}\n{}\n", bc.size, bc.base_channels, bc.runs, lines.join("\n"));
    write_text(&out.join("bench.txt"), &text)?;
    Ok(lines.join("; "))
}

fn run(cli: &Cli) -> Result<String> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    create_dir(&cli.out)?;
    write_text(&cli.out.join("effective_config.toml"), &cfg.to_toml())?;
    match cli.command {
        Command::Render => cmd_render(&cfg, &cli.out),
        Command::Cleanse => cmd_cleanse(&cfg, &cli.out),
        Command::Train => cmd_train(&cfg, &cli.out),
        Command::Translate => cmd_translate(&cfg, &cli.out),
        Command::Eval => cmd_eval(&cfg, &cli.out),
        Command::Bench => cmd_bench(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error\t{}\t{}", e.kind(), e.to_string().replace(['\n', '\t'], " "));
            ExitCode::FAILURE
        }
    }
}
