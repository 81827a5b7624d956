mod common;

use std::collections::{BTreeMap, BTreeSet};

use endosim::cleansing::{apply_cleansing, heuristic_flag, ExclusionManifest, HeuristicRules};
use endosim::dataset::{Domain, ExclusionLabel, ImageRecord, SamplerState, UnpairedSampler};
use endosim::image::ImageTensor;
use endosim::Result;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn records(n: usize) -> Vec<ImageRecord> {
    (0..n).map(|i| ImageRecord::new(format!("r{i:05}"), format!("r{i:05}.png"), Domain::Real)).collect()
}

fn no_images(_: &ImageRecord) -> Result<ImageTensor> {
    unreachable!("heuristics are disabled")
}

fn label_strategy() -> impl Strategy<Value = ExclusionLabel> {
    prop::sample::select(ExclusionLabel::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cleansing_partitions_the_records(
        n in 1usize..80,
        picks in prop::collection::vec((0usize..1000, label_strategy()), 0..60),
    ) {
        let entries: Vec<(String, ExclusionLabel)> = picks.iter().map(|&(i, l)| (format!("r{:05}", i % n), l)).collect();
        let manifest = ExclusionManifest { entries: entries.clone() };
        let out = apply_cleansing(records(n), &manifest, &HeuristicRules::disabled(), no_images).unwrap();

        let excluded: BTreeSet<&str> = entries.iter().map(|(id, _)| id.as_str()).collect();
        prop_assert_eq!(out.report.total, n);
        prop_assert_eq!(out.report.kept + out.report.removed, n);
        prop_assert_eq!(out.report.removed, excluded.len());
        prop_assert_eq!(out.kept.count(), out.report.kept);

        let kept: Vec<&str> = out.kept.records().iter().map(|r| r.id.as_str()).collect();
        let removed: Vec<&str> = out.removed.iter().map(|r| r.id.as_str()).collect();
        prop_assert!(kept.iter().all(|id| !excluded.contains(id)));
        prop_assert!(removed.iter().all(|id| excluded.contains(id)));
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(removed.windows(2).all(|w| w[0] < w[1]));

        let mut per_label: BTreeMap<ExclusionLabel, BTreeSet<&str>> = BTreeMap::new();
        for (id, l) in &entries {
            per_label.entry(*l).or_default().insert(id.as_str());
        }
        for (l, ids) in &per_label {
            prop_assert_eq!(out.report.per_label.get(l).copied().unwrap_or(0), ids.len());
        }
    }

    #[test]
    fn cleansing_is_idempotent(n in 1usize..50, picks in prop::collection::vec(0usize..1000, 0..30)) {
        let manifest = ExclusionManifest {
            entries: picks.iter().map(|i| (format!("r{:05}", i % n), ExclusionLabel::Fluid)).collect(),
        };
        let once = apply_cleansing(records(n), &manifest, &HeuristicRules::disabled(), no_images).unwrap();
        let again = apply_cleansing(
            once.kept.records().to_vec(),
            &ExclusionManifest::default(),
            &HeuristicRules::disabled(),
            no_images,
        ).unwrap();
        prop_assert_eq!(again.kept.records(), once.kept.records());
    }

    #[test]
    fn each_epoch_draws_the_larger_domain_once(i in 1usize..60, j in 1usize..60, batch in 1usize..9, seed in any::<u64>(), epoch in 0u64..5) {
        let s = UnpairedSampler::new(i, j, batch).unwrap();
        let steps = s.steps_per_epoch();
        prop_assert_eq!(steps as usize, i.max(j).div_ceil(batch));
        let mut vc = vec![0usize; i];
        let mut rc = vec![0usize; j];
        for step in 0..steps {
            let (v, r) = s.batch(&SamplerState { seed, epoch, step });
            prop_assert_eq!(v.len(), batch);
            prop_assert_eq!(r.len(), batch);
            v.iter().for_each(|&k| vc[k] += 1);
            r.iter().for_each(|&k| rc[k] += 1);
        }
        // every index appears, and counts never differ by more than one
        for counts in [&vc, &rc] {
            let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
            prop_assert!(lo >= 1);
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn sampler_batches_are_a_function_of_their_state(seed in any::<u64>(), epoch in 0u64..10, step in 0u64..10) {
        let s = UnpairedSampler::new(37, 23, 4).unwrap();
        let st = SamplerState { seed, epoch, step };
        prop_assert_eq!(s.batch(&st), s.batch(&st));
    }

    #[test]
    fn constructed_frames_get_their_labels(seed in any::<u64>(), kind in 0usize..3) {
        let label = [None, Some(ExclusionLabel::NarrowBand), Some(ExclusionLabel::SurgicalTool)][kind];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = common::constructed_frame(&mut rng, 24, label);
        let flags = heuristic_flag(&img, &HeuristicRules::default()).unwrap();
        prop_assert_eq!(flags, label.into_iter().collect::<BTreeSet<_>>());
    }
}

#[test]
fn sampler_marginals_are_uniform_over_many_epochs() {
    let s = UnpairedSampler::new(10, 7, 3).unwrap();
    let mut counts = vec![0usize; 7];
    let epochs = 300;
    for epoch in 0..epochs {
        for step in 0..s.steps_per_epoch() {
            let (_, r) = s.batch(&SamplerState { seed: 5, epoch, step });
            r.iter().for_each(|&k| counts[k] += 1);
        }
    }
    let expected = (epochs as usize * 12) as f64 / 7.0;
    for c in counts {
        assert!((c as f64 / expected - 1.0).abs() < 0.05, "{c} vs {expected}");
    }
}
