mod common;

use adaptlab::toy::config::{MixtureEntry, TaskKind};
use adaptlab::toy::corpus::stratified_counts;
use adaptlab::toy::{run_pipeline, StagePlan, SyntheticWorld, ToyModel};
use proptest::prelude::*;

proptest! {
    #[test]
    fn stratified_counts_sum_and_stay_close(weights in prop::collection::vec(0.01f64..10.0, 1..6), total in 0usize..500) {
        let counts = stratified_counts(&weights, total);
        prop_assert_eq!(counts.iter().sum::<usize>(), total);
        let sum: f64 = weights.iter().sum();
        for (c, w) in counts.iter().zip(&weights) {
            let exact = w / sum * total as f64;
            prop_assert!((*c as f64 - exact).abs() < 1.0, "count {} for exact {}", c, exact);
        }
    }

    #[test]
    fn transition_rows_are_distributions(seed in any::<u64>()) {
        let cfg = common::tiny_config(seed);
        let world = SyntheticWorld::new(&cfg.corpus, cfg.model.vocab_size).unwrap();
        for lang in [world.base(), world.target()] {
            for row in lang.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), cfg.corpus.branching);
            }
        }
    }

    #[test]
    fn target_language_is_the_bijection_image(seed in any::<u64>()) {
        let cfg = common::tiny_config(seed);
        let world = SyntheticWorld::new(&cfg.corpus, cfg.model.vocab_size).unwrap();
        let [lo, hi] = cfg.corpus.base_range;
        for a in lo..hi {
            for b in lo..hi {
                for c in lo..hi {
                    let base = world.base().prob(&[a, b], c);
                    let target = world.target().prob(&world.translate(&[a, b]), world.bijection().translate(c));
                    prop_assert_eq!(base, target);
                }
            }
            prop_assert_eq!(world.bijection().invert(world.bijection().translate(a)), a);
        }
    }

    #[test]
    fn corpus_mixture_counts_are_exact(seed in any::<u64>(), w in prop::collection::vec(0.05f64..1.0, 3)) {
        let cfg = common::tiny_config(seed);
        let world = SyntheticWorld::new(&cfg.corpus, cfg.model.vocab_size).unwrap();
        let sum: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / sum).collect();
        let tasks = [TaskKind::TargetInstruction, TaskKind::CrossTranslation, TaskKind::AnchorGeneral];
        let plan = StagePlan {
            mixture: tasks.iter().zip(&w).map(|(&task, &weight)| MixtureEntry { task, weight }).collect(),
            ..cfg.sft.clone()
        };
        let data = world.generate_corpus(&plan).unwrap();
        let want = stratified_counts(&w, cfg.corpus.sft_size);
        for (task, n) in tasks.iter().zip(want) {
            prop_assert_eq!(data.count(*task), n);
        }
        prop_assert_eq!(&data, &world.generate_corpus(&plan).unwrap());
    }

    #[test]
    fn samples_respect_their_languages(seed in any::<u64>()) {
        let cfg = common::tiny_config(seed);
        let world = SyntheticWorld::new(&cfg.corpus, cfg.model.vocab_size).unwrap();
        let data = world.generate_corpus(&cfg.cpt).unwrap();
        prop_assert_eq!(data.len(), cfg.corpus.cpt_size);
        for s in &data.samples {
            let content = &s.tokens[1..s.tokens.len() - 1];
            prop_assert!((cfg.corpus.min_len..=cfg.corpus.max_len).contains(&content.len()));
            prop_assert!(content.iter().all(|&t| world.target().contains(t)));
            for w in content.windows(3) {
                prop_assert!(world.target().prob(&w[..2], w[2]) > 0.0);
            }
        }
    }
}

#[test]
fn data_generation_is_seeded() {
    let gen = |seed| {
        let cfg = common::tiny_config(seed);
        let world = SyntheticWorld::new(&cfg.corpus, cfg.model.vocab_size).unwrap();
        (world.generate_corpus(&cfg.cpt).unwrap(), world.generate_corpus(&cfg.sft).unwrap(), world.translation_test())
    };
    assert_eq!(gen(5), gen(5));
    assert_ne!(gen(5).0, gen(6).0);
}

#[test]
fn trained_models_do_not_beat_the_generating_process() {
    let mut cfg = common::tiny_config(11);
    cfg.corpus.heldout_size = 300;
    let out = run_pipeline(&cfg).unwrap();
    let world = SyntheticWorld::new(&cfg.corpus, cfg.model.vocab_size).unwrap();
    let docs = world.heldout_target();
    for (stage, ckpt) in out.stages() {
        let model = ToyModel::<f64>::from_checkpoint(&cfg.model, ckpt).unwrap();
        // per-document excess loss over the true process: non-negative in expectation
        let excess: Vec<f64> = docs
            .iter()
            .map(|d| {
                let truth = world.true_token_logliks(d);
                let ours = model.token_logliks(d);
                assert_eq!(truth.len(), ours.len());
                truth.iter().sum::<f64>() - ours.iter().sum::<f64>()
            })
            .collect();
        let n = excess.len() as f64;
        let mean = excess.iter().sum::<f64>() / n;
        let sd = (excess.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean >= -3.0 * sd / n.sqrt(), "{stage}: mean excess {mean} sd {sd}");
    }
}

#[test]
fn pipeline_is_reproducible_and_seed_sensitive() {
    let a = run_pipeline(&common::tiny_config(4)).unwrap();
    let b = run_pipeline(&common::tiny_config(4)).unwrap();
    let c = run_pipeline(&common::tiny_config(5)).unwrap();
    for ((_, x), (_, y)) in a.stages().iter().zip(b.stages().iter()) {
        assert_eq!(x.to_bytes(), y.to_bytes());
    }
    assert_eq!(a.cpt_losses, b.cpt_losses);
    assert_eq!(a.bundle, b.bundle);
    assert_ne!(a.sft.to_bytes(), c.sft.to_bytes());
}

#[test]
fn bundle_round_trips_through_disk() {
    let out = run_pipeline(&common::tiny_config(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let back = adaptlab::toy::EvalBundle::read(&dir.path().join("eval")).unwrap();
    assert_eq!(back, out.bundle);
    for (name, ckpt) in out.stages() {
        let path = dir.path().join(format!("{name}.safetensors"));
        assert_eq!(&adaptlab::load_checkpoint(path).unwrap(), ckpt);
    }
}
