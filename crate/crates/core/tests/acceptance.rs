//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use common::oracles;
use endosim::checkpoint::{save_checkpoint, Checkpoint};
use endosim::cleansing::{apply_cleansing, ExclusionManifest, HeuristicRules};
use endosim::dataset::{Domain, ExclusionLabel, ImageRecord};
use endosim::eval::{benchmark_inference, color_histogram_distance, temporal_smoothness, translate, DEFAULT_BINS, MIN_TIMED_RUNS};
use endosim::gradcheck::numeric_gradient_check;
use endosim::image::ImageTensor;
use endosim::losses::{cycle_loss, gan_value, total_loss, LossWeights};
use endosim::nn::{build_translator, init_parameters, ArchitectureSpec, DiscriminatorSpec, GraphBuilder, NetRole, Network, Variant};
use endosim::tensor::Tensor;
use endosim::toy::{toy_flythrough, toy_real_frames, toy_virtual_frames, ToyConfig};
use endosim::train::{LossRecord, Trainer, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_trainer(t: &mut Trainer, v: &[Tensor<f32>], r: &[Tensor<f32>]) -> Result<Vec<LossRecord>, String> {
    let mut recs = Vec::new();
    t.run(
        v,
        r,
        |rec| {
            recs.push(*rec);
            Ok(())
        },
        |_| Ok(()),
    )
    .map_err(|e| e.to_string())?;
    Ok(recs)
}

fn loss_identities() -> Outcome {
    let half = gan_value(&[0.5f64], &[0.5], 0.0).map_err(|e| e.to_string())?;
    let perfect = gan_value(&[1.0f64], &[0.0], 0.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = Tensor::from_vec([2, 3, 8, 8], (0..384).map(|_| rng.gen_range(-1.0f64..1.0)).collect()).unwrap();
    let cyc = cycle_loss(&t, &t, &t, &t).map_err(|e| e.to_string())?;
    let (g, f, c) = (-1.3, -0.9, 0.37);
    let base = total_loss(g, f, c, &LossWeights { lambda_cyc: 0.0, ..Default::default() });
    let affine = [0.5, 1.0, 10.0, 25.0]
        .iter()
        .map(|&l| (total_loss(g, f, c, &LossWeights { lambda_cyc: l, ..Default::default() }) - (base + l * c)).abs())
        .fold(0.0, f64::max);
    check(
        (half + 1.386294).abs() < 1e-6 && perfect == 0.0 && cyc.abs() < 1e-9 && affine < 1e-9,
        format!("gan(0.5,0.5)={half:.7} gan(1,0)={perfect} cyc(identity)={cyc:e} affine gap={affine:e}"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for variant in Variant::ALL {
        let spec = ArchitectureSpec::new(variant, 4, 32, 32);
        let err = numeric_gradient_check(&spec, &LossWeights::default(), 3).map_err(|e| e.to_string())?;
        worst = worst.max(err);
        parts.push(format!("{variant}={err:.1e}"));
    }
    check(worst < 1e-3, format!("32x32 base 4 f64, max rel error {}", parts.join(" ")))
}

fn architecture_invariants() -> Outcome {
    let mut problems = Vec::new();
    for side in [128, 256] {
        for variant in Variant::ALL {
            let desc = build_translator(&ArchitectureSpec::new(variant, 64, side, side)).map_err(|e| e.to_string())?;
            if desc.output_shape() != [3, side, side] {
                problems.push(format!("{variant} at {side} outputs {:?}", desc.output_shape()));
            }
            let small = Arc::new(build_translator(&ArchitectureSpec::new(variant, 2, side, side)).unwrap());
            let net = init_parameters::<f32, _>(small, &mut ChaCha8Rng::seed_from_u64(0));
            let y = net.forward(&Tensor::full([1, 3, side, side], 0.5)).map_err(|e| e.to_string())?;
            if y.shape() != [1, 3, side, side] {
                problems.push(format!("{variant} at {side} executes to {:?}", y.shape()));
            }
            if variant == Variant::ResidualUnet && desc.count_kind("residual_add") != 2 * variant.depth() {
                problems.push(format!("{} residual adds", desc.count_kind("residual_add")));
            }
        }
    }
    for base in [8, 16, 64] {
        let count = |v| build_translator(&ArchitectureSpec::new(v, base, 256, 256)).unwrap().parameter_count();
        let (s, u, d) = (count(Variant::ShallowUnet), count(Variant::Unet), count(Variant::DeepUnet));
        if !(s < u && u < d) {
            problems.push(format!("base {base} ladder {s} {u} {d}"));
        }
    }
    let mut b = GraphBuilder::new(8, 32, 32);
    let x = b.input();
    let n = b.instance_norm("norm", x);
    let net: Network<f32> = init_parameters(Arc::new(b.finish(NetRole::Generator, n)), &mut ChaCha8Rng::seed_from_u64(1));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = Tensor::from_vec([2, 8, 32, 32], (0..2 * 8 * 1024).map(|_| rng.gen_range(-3.0f32..5.0)).collect()).unwrap();
    let y = net.forward(&input).map_err(|e| e.to_string())?;
    let (mut max_mu, mut max_var) = (0.0f64, 0.0f64);
    for plane in y.data().chunks(1024) {
        let mu = plane.iter().map(|&v| v as f64).sum::<f64>() / 1024.0;
        let var = plane.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / 1024.0;
        max_mu = max_mu.max(mu.abs());
        max_var = max_var.max((var - 1.0).abs());
    }
    if max_mu >= 1e-4 || max_var >= 1e-3 {
        problems.push(format!("instance norm |mu|={max_mu:e} |var-1|={max_var:e}"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("shapes, ladders and residual adds hold; IN |mu|<={max_mu:.1e} |var-1|<={max_var:.1e}")
        } else {
            problems.join("; ")
        },
    )
}

fn renderer_oracle() -> Outcome {
    let (area, row, analytic) = oracles::sphere_silhouette();
    let gap = oracles::opaque_first_sample_gap();
    let change = oracles::step_halving_change();
    check(
        (area - analytic).abs() < 1.0 && (row - analytic).abs() < 1.0 && gap == 0.0 && change < 0.02,
        format!(
            "silhouette {area:.2}px (row {row:.1}) vs analytic {analytic:.2}px; opaque gap {gap}; step halving change {change:.4}"
        ),
    )
}

fn cleansing() -> Outcome {
    let total = 18775;
    let records: Vec<ImageRecord> =
        (0..total).map(|i| ImageRecord::new(format!("img{i:05}"), format!("img{i:05}.png"), Domain::Real)).collect();
    let mut ids: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    rand::seq::SliceRandom::shuffle(&mut ids[..], &mut rng);
    let entries = ids[..5369]
        .iter()
        .enumerate()
        .map(|(k, &i)| (format!("img{i:05}"), ExclusionLabel::ALL[k % ExclusionLabel::ALL.len()]))
        .collect();
    let out = apply_cleansing(records, &ExclusionManifest { entries }, &HeuristicRules::disabled(), |_| unreachable!())
        .map_err(|e| e.to_string())?;

    let labels = [None, Some(ExclusionLabel::NarrowBand), Some(ExclusionLabel::SurgicalTool)];
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    for k in 0..60 {
        let label = labels[k % 3];
        frames.push(common::constructed_frame(&mut rng, 32, label));
        truth.push(label);
    }
    let recs: Vec<ImageRecord> = (0..60).map(|i| ImageRecord::new(format!("c{i}"), format!("c{i}.png"), Domain::Real)).collect();
    let flagged = apply_cleansing(recs, &ExclusionManifest::default(), &HeuristicRules::default(), |r| {
        Ok(frames[r.id[1..].parse::<usize>().unwrap()].clone())
    })
    .map_err(|e| e.to_string())?;
    let mut agree = 0;
    for rec in flagged.kept.records().iter().chain(&flagged.removed) {
        let i: usize = rec.id[1..].parse().unwrap();
        if rec.exclusion_labels.iter().copied().collect::<Vec<_>>() == truth[i].into_iter().collect::<Vec<_>>() {
            agree += 1;
        }
    }
    check(
        out.report.kept == 13406 && out.report.removed == 5369 && agree == 60,
        format!(
            "{} records, {} removed, {} kept; constructed frames {agree}/60 labelled as built",
            out.report.total, out.report.removed, out.report.kept
        ),
    )
}

const TOY_STEPS: u64 = 400;
const TOY_BATCH: usize = 4;

fn toy_convergence(toy_g: &mut Option<Network<f32>>) -> Outcome {
    let cfg = ToyConfig::default();
    let v = toy_virtual_frames(&cfg).map_err(|e| e.to_string())?;
    let r = toy_real_frames(&cfg).map_err(|e| e.to_string())?;
    let spec = ArchitectureSpec::new(Variant::Unet, 8, cfg.size, cfg.size);
    let dspec = DiscriminatorSpec::new(cfg.size, cfg.size).with_base(8);
    let steps_per_epoch = cfg.count.div_ceil(TOY_BATCH) as u64;
    let tc = TrainingConfig {
        epochs: TOY_STEPS / steps_per_epoch,
        batch_size: TOY_BATCH,
        learning_rate: 1e-3,
        seed: 1,
        ..Default::default()
    };
    let mut trainer = Trainer::new(spec, dspec, tc, LossWeights::default()).map_err(|e| e.to_string())?;
    let vt: Vec<_> = v.iter().map(|i| i.to_network()).collect();
    let rt: Vec<_> = r.iter().map(|i| i.to_network()).collect();
    let recs = run_trainer(&mut trainer, &vt, &rt)?;
    let mean = |rs: &[LossRecord]| rs.iter().map(|r| r.cyc).sum::<f64>() / rs.len() as f64;
    let early = mean(&recs[..10]);
    let late = mean(&recs[recs.len() - 10..]);
    let translated = translate(&trainer.model.g, &v).map_err(|e| e.to_string())?;
    let before = color_histogram_distance(&v, &r, DEFAULT_BINS).map_err(|e| e.to_string())?;
    let after = color_histogram_distance(&translated, &r, DEFAULT_BINS).map_err(|e| e.to_string())?;
    *toy_g = Some(trainer.model.g.clone());
    check(
        late < 0.5 * early && after <= 0.8 * before,
        format!(
            "{} steps, L_cyc {early:.4} -> {late:.4} (ratio {:.3}); histogram distance {before:.3} -> {after:.3} ({:.0}% lower)",
            recs.len(),
            late / early,
            100.0 * (1.0 - after / before)
        ),
    )
}

fn smoothness(toy_g: &Option<Network<f32>>) -> Outcome {
    let g = toy_g.as_ref().ok_or("no toy-trained model")?;
    let frames = toy_flythrough(g.desc().input_shape()[1], 10).map_err(|e| e.to_string())?;
    let out = translate(g, &frames).map_err(|e| e.to_string())?;
    let s = temporal_smoothness(&frames, &out).map_err(|e| e.to_string())?;
    let identity = temporal_smoothness(&frames, &frames).map_err(|e| e.to_string())?;
    check(
        frames.len() == 10 && s > 0.0 && s < 3.0 && identity == 1.0,
        format!("10-frame fly-through smoothness {s:.3}, identity {identity}"),
    )
}

const TIMED_RUNS: usize = 2 * MIN_TIMED_RUNS;

fn timing() -> Outcome {
    let side = 128;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let image = ImageTensor::from_fn(side, side, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    let mut medians = Vec::new();
    for variant in [Variant::ShallowUnet, Variant::Unet, Variant::DeepUnet, Variant::ResidualUnet] {
        let desc = Arc::new(build_translator(&ArchitectureSpec::new(variant, 16, side, side)).unwrap());
        let net = init_parameters::<f32, _>(desc, &mut ChaCha8Rng::seed_from_u64(6));
        let b = benchmark_inference(&net, &image, TIMED_RUNS).map_err(|e| e.to_string())?;
        medians.push((variant, b.median_seconds));
    }
    let ordered = medians.windows(2).all(|w| w[0].1 <= 1.1 * w[1].1);
    let shown: Vec<String> = medians.iter().map(|(v, s)| format!("{v}={:.2}ms", s * 1e3)).collect();
    check(ordered, format!("{side}x{side} base 16 medians of {TIMED_RUNS}: {}", shown.join(" ")))
}

fn determinism_and_resume() -> Outcome {
    let toy = ToyConfig { size: 32, count: 20, seed: 3 };
    let v: Vec<_> = toy_virtual_frames(&toy).map_err(|e| e.to_string())?.iter().map(|i| i.to_network()).collect();
    let r: Vec<_> = toy_real_frames(&toy).map_err(|e| e.to_string())?.iter().map(|i| i.to_network()).collect();
    let spec = ArchitectureSpec::new(Variant::Unet, 4, 32, 32);
    let dspec = DiscriminatorSpec::new(32, 32).with_base(4);
    let w = LossWeights::default();
    let cfg = |epochs, batch_size| TrainingConfig {
        epochs,
        batch_size,
        fake_buffer_size: 6,
        seed: 11,
        ..Default::default()
    };
    let new = |c| Trainer::new(spec, dspec, c, w).map_err(|e| e.to_string());

    let a = run_trainer(&mut new(cfg(1, 2))?, &v, &r)?;
    let b = run_trainer(&mut new(cfg(1, 2))?, &v, &r)?;
    let log_gap = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| [x.gan_g - y.gan_g, x.gan_f - y.gan_f, x.cyc - y.cyc, x.total - y.total])
        .fold(0.0f64, |m, d| m.max(d.abs()));

    let (v6, r6) = (&v[..6], &r[..6]);
    let mut whole = new(cfg(3, 2))?;
    let full = run_trainer(&mut whole, v6, r6)?;
    let mut first = new(cfg(1, 2))?;
    let mut split = run_trainer(&mut first, v6, r6)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("epoch1.safetensors");
    save_checkpoint(&first, &path).map_err(|e| e.to_string())?;
    let mut resumed = Checkpoint::read(&path)
        .and_then(|c| c.trainer(cfg(3, 2), w))
        .map_err(|e| e.to_string())?;
    split.extend(run_trainer(&mut resumed, v6, r6)?);
    let loss_gap = full.iter().zip(&split).map(|(x, y)| (x.total - y.total).abs()).fold(0.0f64, f64::max);
    let mut param_gap = 0.0f64;
    for ((_, x), (_, y)) in whole.model.networks().iter().zip(resumed.model.networks().iter()) {
        for (p, q) in x.params().iter().zip(y.params()) {
            for (s, t) in p.iter().zip(q) {
                param_gap = param_gap.max((s - t).abs() as f64);
            }
        }
    }
    check(
        a.len() == 10 && log_gap <= 1e-6 && full.len() == split.len() && loss_gap <= 1e-5 && param_gap <= 1e-5,
        format!(
            "10-step log gap {log_gap:e}; resume after epoch 1 of 3: loss gap {loss_gap:e}, parameter gap {param_gap:e}"
        ),
    )
}

fn main() -> ExitCode {
    let mut toy_g = None;
    let mut failures = 0;
    let mut report = |index: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{index}] {name}: {detail} ({secs:.1}s)");
    };
    report(1, "loss identities", &mut loss_identities);
    report(2, "gradient correctness", &mut gradient_correctness);
    report(3, "architecture invariants", &mut architecture_invariants);
    report(4, "renderer oracle", &mut renderer_oracle);
    report(5, "cleansing", &mut cleansing);
    report(6, "toy convergence", &mut || toy_convergence(&mut toy_g));
    report(7, "temporal smoothness", &mut || smoothness(&toy_g));
    report(8, "timing methodology", &mut timing);
    report(9, "determinism and resume", &mut determinism_and_resume);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
