//! Acceptance criteria, one line per criterion. Runs as a plain binary so the
//! lines are always visible; exits non-zero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use adaptlab::delta::{correlate, delta_l2, row_delta_norms, top_k, DeltaProfile};
use adaptlab::metrics::{
    corpus_bleu, corpus_chrf, perplexity, BleuOptions, ChrfOptions, EvalCorpus, LogLikStream, Segment, Smoothing,
    Tokenizer,
};
use adaptlab::report::{build_experiment_report, ExperimentInputs, Report, RunManifest, EXPERIMENT_SCHEMA};
use adaptlab::toy::gradcheck::{gradcheck, test_matrix};
use adaptlab::toy::model::EMBED_NAME;
use adaptlab::toy::{run_pipeline, ExperimentConfig, PipelineOutput};
use adaptlab::{Checkpoint, TensorRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

// 1

fn format_round_trip() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut replay = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    for i in 0..1000 {
        let c = common::random_checkpoint(&mut rng);
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).map_err(|e| format!("checkpoint {i}: {e}"))?;
        if back != c {
            failures.push(format!("{i}: reload differs"));
        }
        if back.to_bytes() != bytes {
            failures.push(format!("{i}: resave differs"));
        }
        // the same seed must regenerate byte-identical files
        if common::random_checkpoint(&mut replay).to_bytes() != bytes {
            failures.push(format!("{i}: second run differs"));
        }
        if i % 50 == 0 {
            let path = dir.path().join(format!("{i}.safetensors"));
            adaptlab::save_checkpoint(&c, &path).unwrap();
            if std::fs::read(&path).unwrap() != bytes || adaptlab::load_checkpoint(&path).unwrap() != c {
                failures.push(format!("{i}: file round-trip differs"));
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(
        failures.is_empty() && elapsed < Duration::from_secs(30),
        format!("1000 checkpoints, {} mismatches, {}", failures.len(), secs(elapsed)),
    )
}

// 2

fn oracle_norm(a: &TensorRecord, b: &TensorRecord) -> f64 {
    let (va, vb) = (common::decode(a), common::decode(b));
    let mut sum = 0.0;
    for i in 0..va.len() {
        let d = vb[i] - va[i];
        sum += d * d;
    }
    sum.sqrt()
}

fn delta_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for _ in 0..100 {
        let (a, b) = common::random_pair(&mut rng);
        let profile = delta_l2(&a, &b).map_err(|e| e.to_string())?;
        for e in &profile.entries {
            let want = oracle_norm(a.get(&e.name).unwrap(), b.get(&e.name).unwrap());
            let err = if want == 0.0 { e.norm.abs() } else { (e.norm - want).abs() / want };
            worst = worst.max(err);
            compared += 1;
        }
    }
    let mut a = Checkpoint::new();
    let mut b = Checkpoint::new();
    let base: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 1.0).collect();
    let shifted: Vec<f64> = base.iter().map(|v| v + 0.5).collect();
    a.insert(TensorRecord::new("w", vec![4, 4], &base).unwrap()).unwrap();
    b.insert(TensorRecord::new("w", vec![4, 4], &shifted).unwrap()).unwrap();
    let analytic = delta_l2(&a, &b).map_err(|e| e.to_string())?.entries[0].norm;
    ensure(
        worst <= 1e-9 && analytic == 2.0,
        format!("{compared} tensors over 100 pairs, max rel error {worst:.2e}, analytic case {analytic}"),
    )
}

// 3

fn tokens(text: &str, tok: Tokenizer) -> Vec<String> {
    match tok {
        Tokenizer::Whitespace => text.split_whitespace().map(String::from).collect(),
        Tokenizer::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
    }
}

fn count_gram(seq: &[String], gram: &[String]) -> u64 {
    let n = gram.len();
    if seq.len() < n {
        return 0;
    }
    (0..=seq.len() - n).filter(|&i| seq[i..i + n] == *gram).count() as u64
}

fn oracle_bleu(segments: &[Segment], opts: &BleuOptions) -> f64 {
    let n_max = opts.max_n;
    let mut matches = vec![0u64; n_max];
    let mut totals = vec![0u64; n_max];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for seg in segments {
        let h = tokens(&seg.hypothesis, opts.tokenizer);
        let refs: Vec<Vec<String>> = seg.references.iter().map(|r| tokens(r, opts.tokenizer)).collect();
        for n in 1..=n_max {
            if h.len() < n {
                continue;
            }
            let mut seen: Vec<&[String]> = Vec::new();
            for i in 0..=h.len() - n {
                let gram = &h[i..i + n];
                if seen.contains(&gram) {
                    continue;
                }
                seen.push(gram);
                let in_hyp = count_gram(&h, gram);
                let in_ref = refs.iter().map(|r| count_gram(r, gram)).max().unwrap();
                matches[n - 1] += in_hyp.min(in_ref);
            }
            totals[n - 1] += (h.len() - n + 1) as u64;
        }
        let hl = h.len() as i64;
        let mut best = refs[0].len() as i64;
        for r in &refs {
            let rl = r.len() as i64;
            if (rl - hl).abs() < (best - hl).abs() || ((rl - hl).abs() == (best - hl).abs() && rl < best) {
                best = rl;
            }
        }
        hyp_len += hl as u64;
        ref_len += best as u64;
    }
    let mut product = 1.0f64;
    let mut k = 0;
    for n in 0..n_max {
        let p = if totals[n] == 0 {
            0.0
        } else if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else if opts.smoothing == Smoothing::Exp {
            k += 1;
            1.0 / (2f64.powi(k) * totals[n] as f64)
        } else {
            0.0
        };
        product *= p.powf(1.0 / n_max as f64);
    }
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    bp * product
}

fn char_grams(s: &[char], n: usize) -> Vec<&[char]> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| &s[i..i + n]).collect()
}

fn oracle_chrf_pair(hyp: &str, reference: &str, opts: &ChrfOptions) -> f64 {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    if h.is_empty() && r.is_empty() {
        return 100.0;
    }
    let (mut ps, mut rs) = (Vec::new(), Vec::new());
    for n in 1..=opts.char_n {
        let hg = char_grams(&h, n);
        let rg = char_grams(&r, n);
        let mut matched = 0usize;
        let mut seen: Vec<&[char]> = Vec::new();
        for g in &hg {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let ch = hg.iter().filter(|x| x == &g).count();
            let cr = rg.iter().filter(|x| x == &g).count();
            matched += ch.min(cr);
        }
        if !hg.is_empty() {
            ps.push(matched as f64 / hg.len() as f64);
        }
        if !rg.is_empty() {
            rs.push(matched as f64 / rg.len() as f64);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (p, rc) = (mean(&ps), mean(&rs));
    let b2 = opts.beta * opts.beta;
    if b2 * p + rc == 0.0 {
        0.0
    } else {
        100.0 * (1.0 + b2) * p * rc / (b2 * p + rc)
    }
}

fn oracle_chrf(segments: &[Segment], opts: &ChrfOptions) -> f64 {
    let mut total = 0.0;
    for seg in segments {
        let mut best = f64::NEG_INFINITY;
        for r in &seg.references {
            best = best.max(oracle_chrf_pair(&seg.hypothesis, r, opts));
        }
        total += best;
    }
    total / segments.len() as f64
}

fn random_text(rng: &mut impl Rng) -> String {
    const WORDS: &[&str] = &["a", "b", "ab", "ba", "c", "aa", "ཀ", "ཁ"];
    let len = rng.gen_range(0..=8);
    (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        (got - want).abs() / want.abs()
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_bleu, mut worst_chrf) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let segments: Vec<Segment> = (0..rng.gen_range(1..=4))
            .map(|_| Segment {
                hypothesis: random_text(&mut rng),
                references: (0..rng.gen_range(1..=3)).map(|_| random_text(&mut rng)).collect(),
            })
            .collect();
        let corpus = EvalCorpus::new(segments.clone()).unwrap();
        let bleu_opts = BleuOptions {
            max_n: rng.gen_range(1..=4),
            tokenizer: if rng.gen() { Tokenizer::Whitespace } else { Tokenizer::Char },
            smoothing: if rng.gen() { Smoothing::Exp } else { Smoothing::None },
        };
        let chrf_opts = ChrfOptions { char_n: rng.gen_range(1..=6), beta: [1.0, 2.0, 3.0][rng.gen_range(0..3)] };
        let bleu = corpus_bleu(&corpus, &bleu_opts).map_err(|e| e.to_string())?.value;
        let chrf = corpus_chrf(&corpus, &chrf_opts).map_err(|e| e.to_string())?.value;
        worst_bleu = worst_bleu.max(rel_err(bleu, oracle_bleu(&segments, &bleu_opts)));
        worst_chrf = worst_chrf.max(rel_err(chrf, oracle_chrf(&segments, &chrf_opts)));
    }
    let same = EvalCorpus::from_pairs([("the cat sat on the mat", "the cat sat on the mat"), ("ཀ ཁ ག", "ཀ ཁ ག")]);
    let bleu_id = corpus_bleu(&same, &BleuOptions::default()).unwrap().value;
    let chrf_id = corpus_chrf(&same, &ChrfOptions::default()).unwrap().value;
    let ppl = perplexity(&LogLikStream::new(vec![(1.0f64 / 16.0).ln(); 50]).unwrap()).value;
    ensure(
        worst_bleu <= 1e-9 && worst_chrf <= 1e-9 && bleu_id == 1.0 && chrf_id == 100.0 && ppl == 16.0,
        format!(
            "1000 corpora, max rel error BLEU {worst_bleu:.2e} chrF {worst_chrf:.2e}; identity BLEU {bleu_id} chrF {chrf_id}; uniform-16 perplexity {ppl}"
        ),
    )
}

// 4

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let matrix = test_matrix();
    for cfg in &matrix {
        worst = worst.max(gradcheck(cfg).map_err(|e| e.to_string())?.max_rel_error);
    }
    let elapsed = start.elapsed();
    ensure(
        worst < 1e-6 && elapsed < Duration::from_secs(60),
        format!("{} architectures, max rel error {worst:.2e}, {}", matrix.len(), secs(elapsed)),
    )
}

// 5 to 8 share the pinned desk run

struct Run {
    out: PipelineOutput,
    elapsed: Duration,
}

fn pinned_run_single_threaded() -> Run {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let out = pool.install(|| run_pipeline(&ExperimentConfig::default())).expect("pinned pipeline runs");
    Run { out, elapsed: start.elapsed() }
}

fn metric_values(out: &PipelineOutput) -> Vec<(String, Vec<(String, f64)>)> {
    out.bundle
        .stage_metrics()
        .unwrap()
        .into_iter()
        .map(|(s, reps)| (s, reps.into_iter().map(|r| (r.name, r.value)).collect()))
        .collect()
}

fn direction_of_effect(run: &Run) -> Outcome {
    let m = metric_values(&run.out);
    let get = |stage: usize, name: &str| m[stage].1.iter().find(|(n, _)| n == name).unwrap().1;
    let (ppl, bleu, chrf) = (
        [get(0, "perplexity"), get(1, "perplexity"), get(2, "perplexity")],
        [get(0, "bleu"), get(1, "bleu"), get(2, "bleu")],
        [get(0, "chrf"), get(1, "chrf"), get(2, "chrf")],
    );
    let ok = ppl[2] <= ppl[1]
        && ppl[1] < ppl[0]
        && bleu[2] > bleu[1]
        && bleu[1] > bleu[0]
        && chrf[2] > chrf[1]
        && chrf[1] > chrf[0]
        && run.elapsed < Duration::from_secs(300);
    ensure(
        ok,
        format!(
            "perplexity {:.3} / {:.3} / {:.3}, BLEU {:.4} / {:.4} / {:.4}, chrF {:.2} / {:.2} / {:.2} (base / cpt / sft), single-threaded {}",
            ppl[0], ppl[1], ppl[2], bleu[0], bleu[1], bleu[2], chrf[0], chrf[1], chrf[2], secs(run.elapsed)
        ),
    )
}

fn rank_of(profile: &DeltaProfile, name: &str) -> usize {
    top_k(profile, profile.entries.len()).iter().position(|e| e.name == name).unwrap() + 1
}

fn localization(run: &Run) -> Outcome {
    let out = &run.out;
    let profile = delta_l2(&out.base, &out.cpt).map_err(|e| e.to_string())?;
    let top3: Vec<&str> = top_k(&profile, 3).iter().map(|e| e.name.as_str()).collect();
    let embed_rank = rank_of(&profile, EMBED_NAME);
    let head_rank = rank_of(&profile, "lm_head.weight");
    let rows = row_delta_norms(out.base.get(EMBED_NAME).unwrap(), out.cpt.get(EMBED_NAME).unwrap());
    let mean_rows = |[lo, hi]: [u32; 2]| {
        let r = &rows[lo as usize..hi as usize];
        r.iter().sum::<f64>() / r.len() as f64
    };
    let target = mean_rows(out.config.corpus.target_range);
    let base = mean_rows(out.config.corpus.base_range);
    let in_top3 = top3.contains(&EMBED_NAME) && top3.contains(&"lm_head.weight");
    ensure(
        in_top3 && target > base,
        format!(
            "top-3 {top3:?}; embedding rank {embed_rank}, lm_head rank {head_rank} of {}; mean embedding row delta target {target:.4} vs base {base:.4}",
            profile.entries.len()
        ),
    )
}

fn consolidation(run: &Run) -> Outcome {
    let out = &run.out;
    let p1 = delta_l2(&out.base, &out.cpt).map_err(|e| e.to_string())?;
    let p2 = delta_l2(&out.cpt, &out.sft).map_err(|e| e.to_string())?;
    let r = correlate(&p1, &p2).map_err(|e| e.to_string())?.r.ok_or("r undefined")?;
    let identity = correlate(&p1, &p1).map_err(|e| e.to_string())?.r.ok_or("identity r undefined")?;
    ensure(
        r >= 0.5 && (identity - 1.0).abs() <= 1e-12,
        format!("r(Base→CPT, CPT→SFT) = {r:.4} over {} components; identity r = {identity}", p1.entries.len()),
    )
}

fn report_without_timestamp(out: &PipelineOutput) -> String {
    let checkpoints = out.stages().iter().map(|(s, c)| (s.to_string(), Some(*c))).collect();
    let inputs = ExperimentInputs {
        checkpoints,
        bundle: Some(&out.bundle),
        top_k: 5,
        taxonomy: None,
        log_correlation: false,
    };
    let mut manifest = RunManifest::new(vec!["acceptance".into()]).with_seed(Some(out.config.seed));
    for (s, c) in out.stages() {
        manifest.add_input_bytes(s, &c.to_bytes());
    }
    let report = Report::new(EXPERIMENT_SCHEMA, manifest, build_experiment_report(&inputs).unwrap());
    let mut value = serde_json::to_value(&report).unwrap();
    value["manifest"].as_object_mut().unwrap().remove("timestamp");
    serde_json::to_string(&value).unwrap()
}

fn determinism(run: &Run) -> Outcome {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let again = pool.install(|| run_pipeline(&ExperimentConfig::default())).map_err(|e| e.to_string())?;
    let first = &run.out;
    let mut diffs = Vec::new();
    for ((name, a), (_, b)) in first.stages().iter().zip(again.stages().iter()) {
        if a.to_bytes() != b.to_bytes() {
            diffs.push(format!("{name} checkpoint"));
        }
    }
    if first.cpt_losses != again.cpt_losses || first.sft_losses != again.sft_losses {
        diffs.push("loss curves".into());
    }
    if first.bundle != again.bundle {
        diffs.push("eval bundle".into());
    }
    if report_without_timestamp(first) != report_without_timestamp(&again) {
        diffs.push("experiment report".into());
    }
    ensure(
        diffs.is_empty(),
        if diffs.is_empty() {
            format!(
                "checkpoints, loss curves, eval bundle and report identical across 1 and {threads} worker threads"
            )
        } else {
            format!("differs: {}", diffs.join(", "))
        },
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n} {name}: {tag}: {detail}");
        results.push((n, name, outcome));
    };

    record(1, "format round-trip", guarded(format_round_trip));
    record(2, "delta oracle equivalence", guarded(delta_oracle));
    record(3, "metric oracle equivalence", guarded(metric_oracles));
    record(4, "gradient check", guarded(gradient_check));
    match catch_unwind(pinned_run_single_threaded) {
        Ok(run) => {
            record(5, "direction of effect", guarded(|| direction_of_effect(&run)));
            record(6, "localization", guarded(|| localization(&run)));
            record(7, "consolidation", guarded(|| consolidation(&run)));
            record(8, "determinism", guarded(|| determinism(&run)));
        }
        Err(_) => {
            for (n, name) in [(5, "direction of effect"), (6, "localization"), (7, "consolidation"), (8, "determinism")] {
                record(n, name, Err("pinned pipeline run failed".into()));
            }
        }
    }

    let passed = results.iter().filter(|r| r.2.is_ok()).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
