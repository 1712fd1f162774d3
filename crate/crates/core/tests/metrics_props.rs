use adaptlab::metrics::{
    corpus_bleu, corpus_chrf, perplexity, pooled_perplexity, sentence_chrf, BleuOptions, ChrfOptions, EvalCorpus,
    LogLikStream, Segment, Smoothing, Tokenizer,
};
use proptest::prelude::*;

fn words(min: usize, max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "ab", "ka", "ཀ", "ཁ", "é"]), min..max)
        .prop_map(|w| w.into_iter().map(String::from).collect())
}

fn text() -> impl Strategy<Value = String> {
    words(0, 10).prop_map(|w| w.join(" "))
}

fn segments() -> impl Strategy<Value = Vec<Segment>> {
    prop::collection::vec(
        (text(), prop::collection::vec(text(), 1..3))
            .prop_map(|(hypothesis, references)| Segment { hypothesis, references }),
        1..5,
    )
}

fn bleu_opts() -> impl Strategy<Value = BleuOptions> {
    (1usize..5, any::<bool>(), any::<bool>()).prop_map(|(max_n, ws, exp)| BleuOptions {
        max_n,
        tokenizer: if ws { Tokenizer::Whitespace } else { Tokenizer::Char },
        smoothing: if exp { Smoothing::Exp } else { Smoothing::None },
    })
}

fn chrf_opts() -> impl Strategy<Value = ChrfOptions> {
    (1usize..7, 0.5f64..3.0).prop_map(|(char_n, beta)| ChrfOptions { char_n, beta })
}

fn logliks() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-12.0f64..0.0, 1..40)
}

proptest! {
    #[test]
    fn scores_stay_in_range(segs in segments(), b in bleu_opts(), c in chrf_opts()) {
        let corpus = EvalCorpus::new(segs).unwrap();
        let bleu = corpus_bleu(&corpus, &b).unwrap().value;
        let chrf = corpus_chrf(&corpus, &c).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&bleu), "bleu {}", bleu);
        prop_assert!((0.0..=100.0).contains(&chrf), "chrf {}", chrf);
    }

    #[test]
    fn identity_is_perfect(lines in prop::collection::vec(words(4, 12), 1..5), c in chrf_opts()) {
        let texts: Vec<String> = lines.iter().map(|w| w.join(" ")).collect();
        let corpus = EvalCorpus::from_pairs(texts.iter().map(|t| (t, t)));
        prop_assert_eq!(corpus_bleu(&corpus, &BleuOptions::default()).unwrap().value, 1.0);
        prop_assert_eq!(corpus_chrf(&corpus, &c).unwrap().value, 100.0);
    }

    #[test]
    fn brevity_penalty_grows_with_length(reference in words(8, 16), max_n in 1usize..4) {
        let opts = BleuOptions { max_n, tokenizer: Tokenizer::Whitespace, smoothing: Smoothing::Exp };
        let full = reference.join(" ");
        let mut last = 0.0;
        for m in max_n..=reference.len() {
            let hyp = reference[..m].join(" ");
            let v = corpus_bleu(&EvalCorpus::from_pairs([(hyp.as_str(), full.as_str())]), &opts).unwrap().value;
            let bp = (1.0 - reference.len() as f64 / m as f64).exp().min(1.0);
            prop_assert!((v - bp).abs() <= 1e-12, "m={} bleu={} bp={}", m, v, bp);
            prop_assert!(v >= last);
            last = v;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn chrf_with_beta_one_is_symmetric(a in text(), b in text(), char_n in 1usize..7) {
        let opts = ChrfOptions { char_n, beta: 1.0 };
        let ab = sentence_chrf(&a, &[b.clone()], &opts);
        let ba = sentence_chrf(&b, &[a.clone()], &opts);
        prop_assert!((ab - ba).abs() <= 1e-9, "{} vs {}", ab, ba);
    }

    #[test]
    fn chrf_takes_the_best_reference(h in text(), refs in prop::collection::vec(text(), 1..4), c in chrf_opts()) {
        let best = refs.iter().map(|r| sentence_chrf(&h, &[r.clone()], &c)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(sentence_chrf(&h, &refs, &c), best);
    }

    #[test]
    fn perplexity_ignores_token_order(mut ll in logliks(), rot in 0usize..40) {
        let a = perplexity(&LogLikStream::new(ll.clone()).unwrap()).value;
        let k = rot % ll.len();
        ll.rotate_left(k);
        ll.reverse();
        let b = perplexity(&LogLikStream::new(ll).unwrap()).value;
        prop_assert!((a - b).abs() <= 1e-12 * a);
        prop_assert!(a >= 1.0);
    }

    #[test]
    fn pooling_equals_concatenation(a in logliks(), b in logliks()) {
        let pooled = pooled_perplexity(&[LogLikStream::new(a.clone()).unwrap(), LogLikStream::new(b.clone()).unwrap()])
            .unwrap()
            .value;
        let joined = perplexity(&LogLikStream::new([a, b].concat()).unwrap()).value;
        prop_assert!((pooled - joined).abs() <= 1e-12 * joined);
    }

    #[test]
    fn perplexity_is_exp_of_mean_nll(ll in logliks()) {
        let want = (-ll.iter().sum::<f64>() / ll.len() as f64).exp();
        let got = perplexity(&LogLikStream::new(ll).unwrap()).value;
        prop_assert!((got - want).abs() <= 1e-12 * want);
    }
}

#[test]
fn uniform_models_give_their_support_size() {
    for k in [2usize, 16, 64, 1024] {
        let ll = vec![(1.0 / k as f64).ln(); 37];
        assert_eq!(perplexity(&LogLikStream::new(ll).unwrap()).value, k as f64);
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(LogLikStream::new(vec![]).is_err());
    assert!(LogLikStream::new(vec![0.5]).is_err());
    assert!(LogLikStream::new(vec![f64::NAN]).is_err());
    let empty = EvalCorpus::new(vec![]).unwrap();
    assert!(corpus_bleu(&empty, &BleuOptions::default()).is_err());
    assert!(corpus_chrf(&empty, &ChrfOptions::default()).is_err());
    assert!(EvalCorpus::new(vec![Segment { hypothesis: "a".into(), references: vec![] }]).is_err());
    let c = EvalCorpus::from_pairs([("a", "a")]);
    let bad = BleuOptions { max_n: 0, ..BleuOptions::default() };
    assert!(corpus_bleu(&c, &bad).is_err());
    assert!(corpus_chrf(&c, &ChrfOptions { char_n: 0, beta: 2.0 }).is_err());
}
