//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::thread;
use std::time::Instant;

use car_core::corpus::{generate_corpus, load_corpus, save_corpus, AnnotatedCorpus, CorpusConfig, Split};
use car_core::evalsuite::{
    car, corrupted_m2t, dissimilar_subset, evaluate, leakage_classifier_train_eval, protocol_all,
    protocol_threshold, rank_all, report, subset, Direction, EmbeddedSet, EvalConfig, LeakageConfig, Protocol,
};
use car_core::events::{shuffle_events, RectifyMode};
use car_core::model::{forward_backward, init_params, EncoderParams, Model, ModelConfig, NegativeTokens, PairBatch};
use car_core::objective::{contrastive_loss, LossConfig};
use car_core::rng;
use car_core::trainer::{build_vocabulary, resume, train, Scenario, TrainConfig, TrainOutcome};
use ndarray::{Array1, Array2};
use rand::Rng as _;

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u8, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

// Desk-scale training settings shared by the experimental criteria.
const EPOCHS: usize = 60;
const LR: f64 = 2e-3;
const EVAL_SEED: u64 = 5;

fn desk_corpus() -> AnnotatedCorpus {
    generate_corpus(&CorpusConfig::default()).expect("default corpus")
}

fn desk_train(corpus: &AnnotatedCorpus, scenario: Scenario, use_negatives: bool, rectify: RectifyMode) -> TrainOutcome {
    let tc = TrainConfig {
        epochs: EPOCHS,
        lr: LR,
        scenario,
        use_negatives,
        rectify,
        ..TrainConfig::default()
    };
    train(corpus, &ModelConfig::default(), &tc).expect("training run")
}

fn grad_fixture(vae: bool, rec: bool) -> (ModelConfig, EncoderParams, Vec<Array2<f64>>, Vec<Vec<usize>>, Vec<NegativeTokens>) {
    let config = ModelConfig {
        use_vae: vae,
        use_reconstruction: rec,
        embed_dim: 6,
        hidden_dim: 5,
        latent_dim: 4,
        pos_dim: 4,
        vocab_size: 10,
        feature_dim: 3,
        ..ModelConfig::default()
    };
    let mut params = init_params(&config, 3).unwrap();
    let mut r = rng::seeded(40, &[vae as u64, rec as u64]);
    for (_, t) in params.tensors_mut() {
        t.mapv_inplace(|v| v + r.random_range(-0.2..0.2));
    }
    let motions = (0..4).map(|i| Array2::from_shape_simple_fn((2 + i, 3), || r.random_range(-1.0..1.0))).collect();
    let texts = vec![vec![2, 3, 0, 4], vec![5, 6], vec![7, 8, 9], vec![3, 2]];
    let negs = vec![
        NegativeTokens { tokens: vec![4, 3, 2], origin: 0 },
        NegativeTokens { tokens: vec![9, 8, 7], origin: 2 },
    ];
    (config, params, motions, texts, negs)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (vae, rec) in [(false, false), (true, false), (false, true), (true, true)] {
        let (config, params, motions, texts, negs) = grad_fixture(vae, rec);
        let loss = LossConfig::for_flags(vae, rec);
        let batch = PairBatch {
            texts,
            motions: motions.iter().map(|m| m.view()).collect(),
        };
        let eval = |p: &EncoderParams| forward_backward(p, &config, &batch, &negs, &loss, 17).unwrap();
        let grads = eval(&params).grads;
        let h = 1e-5;
        for ti in 0..params.tensors().len() {
            let g = grads.tensors()[ti].1.clone();
            for idx in 0..g.len() {
                let (rows, cols) = g.dim();
                let (i, j) = (idx / cols, idx % cols);
                debug_assert!(i < rows);
                let mut plus = params.clone();
                plus.tensors_mut()[ti].1[[i, j]] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].1[[i, j]] -= h;
                let num = (eval(&plus).loss - eval(&minus).loss) / (2.0 * h);
                let a = g[[i, j]];
                worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-3));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        1,
        "gradient exactness",
        worst < 1e-4 && secs < 10.0,
        format!("max rel err {worst:.2e} over 4 flag combinations in {secs:.2}s"),
    )
}

struct Trained {
    models: HashMap<(Scenario, bool, RectifyMode), Model>,
    corpus: AnnotatedCorpus,
    secs: f64,
}

fn train_all() -> Trained {
    let start = Instant::now();
    let corpus = desk_corpus();
    let runs = [
        (Scenario::OrigToEvent, true, RectifyMode::None),
        (Scenario::OrigToEvent, false, RectifyMode::None),
        (Scenario::EventToEvent, true, RectifyMode::None),
        (Scenario::EventToEvent, false, RectifyMode::None),
        (Scenario::EventToEvent, true, RectifyMode::Pronoun),
    ];
    let models = thread::scope(|s| {
        let handles: Vec<_> = runs
            .iter()
            .map(|&(sc, neg, rect)| {
                let c = &corpus;
                s.spawn(move || ((sc, neg, rect), desk_train(c, sc, neg, rect).best_model().unwrap()))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    Trained {
        models,
        corpus,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn criterion_2(t: &Trained) -> Outcome {
    let test = t.corpus.split(Split::Test);
    let multi = test.iter().filter(|s| s.is_multi_event()).count() as f64 / test.len() as f64;
    let mut pass = multi >= 0.6 && t.corpus.split(Split::Train).len() >= 800 && test.len() >= 200 && t.secs <= 600.0;
    let mut parts = vec![format!("multi-event {:.0}%", 100.0 * multi)];
    for (sc, label) in [(Scenario::OrigToEvent, "orig->event"), (Scenario::EventToEvent, "event->event")] {
        let with = car(&t.models[&(sc, true, RectifyMode::None)], &test, sc, RectifyMode::None, EVAL_SEED).unwrap().car;
        let without = car(&t.models[&(sc, false, RectifyMode::None)], &test, sc, RectifyMode::None, EVAL_SEED).unwrap().car;
        pass &= with >= 0.90 && without <= 0.75;
        parts.push(format!("{label} CAR with {with:.3} / without {without:.3}"));
    }
    parts.push(format!("training {:.0}s", t.secs));
    outcome(2, "CAR separation", pass, parts.join("; "))
}

fn criterion_3(t: &Trained) -> Outcome {
    let test = t.corpus.split(Split::Test);
    let sc = Scenario::OrigToEvent;
    let with = corrupted_m2t(&t.models[&(sc, true, RectifyMode::None)], &test, sc, RectifyMode::None, EVAL_SEED).unwrap();
    let without = corrupted_m2t(&t.models[&(sc, false, RectifyMode::None)], &test, sc, RectifyMode::None, EVAL_SEED).unwrap();
    let (rw, ro) = (report(&with.ranks).unwrap().r1, report(&without.ranks).unwrap().r1);
    outcome(
        3,
        "corrupted motion-to-text retrieval",
        rw > ro && with.sibling_win_rate >= 0.9,
        format!(
            "R@1 with {rw:.2} vs without {ro:.2}; sibling win rate {:.3}; pool {}",
            with.sibling_win_rate, with.pool_size
        ),
    )
}

fn brute_ranks(sim: &Array2<f64>, correct: &[usize]) -> Vec<usize> {
    (0..sim.nrows())
        .map(|q| {
            let mut order: Vec<usize> = (0..sim.ncols()).collect();
            order.sort_by(|&a, &b| sim[[q, b]].partial_cmp(&sim[[q, a]]).unwrap().then(a.cmp(&b)));
            1 + order.iter().position(|&c| c == correct[q]).unwrap()
        })
        .collect()
}

fn brute_report(ranks: &[usize]) -> [f64; 6] {
    let n = ranks.len() as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let m = sorted.len();
    let med = if m % 2 == 1 { sorted[m / 2] as f64 } else { (sorted[m / 2 - 1] + sorted[m / 2]) as f64 / 2.0 };
    let at = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    [at(1), at(2), at(3), at(5), at(10), med]
}

fn unit_vecs(r: &mut rng::Rng, n: usize, d: usize) -> Vec<Array1<f64>> {
    (0..n)
        .map(|_| {
            let v: Array1<f64> = Array1::from_shape_simple_fn(d, || r.random_range(-1.0..1.0));
            let norm = v.dot(&v).sqrt();
            v / norm
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let mut r = rng::seeded(404, &[]);
    let mut mismatches = 0;
    for trial in 0..100usize {
        let n = 5 + (trial * 195) / 99;
        let quantised = trial % 3 == 0;
        let sim = Array2::from_shape_simple_fn((n, n), || {
            let v: f64 = r.random_range(-1.0..1.0);
            if quantised {
                (v * 4.0).round() / 4.0
            } else {
                v
            }
        });
        let correct: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let ranks = rank_all(&sim, &correct).unwrap();
        let rep = report(&ranks).unwrap();
        let oracle = brute_ranks(&sim, &correct);
        let o = brute_report(&oracle);
        if ranks != oracle || [rep.r1, rep.r2, rep.r3, rep.r5, rep.r10, rep.medr] != o {
            mismatches += 1;
        }
    }
    let mut threshold_mismatch = 0;
    for trial in 0..20 {
        let n = 5 + trial * 3;
        let set = EmbeddedSet {
            texts: (0..n).map(|i| format!("t{i}")).collect(),
            text: unit_vecs(&mut r, n, 8),
            motion: unit_vecs(&mut r, n, 8),
        };
        for d in [Direction::T2m, Direction::M2t] {
            if protocol_threshold(&set, d, 1.0).unwrap() != protocol_all(&set, d).unwrap() {
                threshold_mismatch += 1;
            }
        }
    }
    outcome(
        4,
        "metric oracles",
        mismatches == 0 && threshold_mismatch == 0,
        format!("{mismatches}/100 rank/report mismatches; {threshold_mismatch}/40 threshold-vs-all mismatches"),
    )
}

fn criterion_5() -> Outcome {
    let id = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let c = contrastive_loss(&id, 1.0).unwrap();
    let spot = c.t2m + c.m2t;
    let closed = 2.0 * (1.0 + (-1.0f64).exp()).ln();
    let mut r = rng::seeded(505, &[]);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let n = 1 + trial % 12;
        let s = Array2::from_shape_simple_fn((n, n), || r.random_range(-1.0..1.0));
        let tau = r.random_range(0.05..1.0);
        let t = contrastive_loss(&s, tau).unwrap();
        let mut acc = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| (s[[i, j]] / tau).exp()).sum();
            let col: f64 = (0..n).map(|j| (s[[j, i]] / tau).exp()).sum();
            let e = (s[[i, i]] / tau).exp();
            acc += (e / row).ln() + (e / col).ln();
        }
        let eq1 = -acc / (2.0 * n as f64);
        worst = worst.max(((t.t2m + t.m2t) / 2.0 - eq1).abs());
    }
    outcome(
        5,
        "loss spot values",
        (spot - 0.626523).abs() <= 1e-6 && (spot - closed).abs() < 1e-12 && worst <= 1e-12,
        format!("identity total {spot:.6}; max |K=0 - direct| {worst:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut r = rng::seeded(606, &[]);
    let (mut worst_ratio, mut not_local) = (f64::INFINITY, 0);
    for _ in 0..50 {
        let n = r.random_range(4..=10usize);
        let m = r.random_range(2..=5usize.min(n));
        let emb = unit_vecs(&mut r, n, 5);
        let pick = dissimilar_subset(&emb, m, 8, 0).unwrap();
        let dis = subset::dissimilarity_matrix(&emb).unwrap();
        let obj = subset::subset_objective(&dis, &pick);
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == m {
                let s: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
                best = best.max(subset::subset_objective(&dis, &s));
            }
        }
        worst_ratio = worst_ratio.min(if best > 0.0 { obj / best } else { 1.0 });
        if subset::best_swap_gain(&dis, &pick) > 1e-12 {
            not_local += 1;
        }
    }
    outcome(
        6,
        "dissimilar-subset quality",
        worst_ratio >= 0.95 && not_local == 0,
        format!("worst objective ratio {worst_ratio:.4}; {not_local}/50 not 1-swap optimal"),
    )
}

fn criterion_7() -> Outcome {
    let corpus = generate_corpus(&CorpusConfig {
        n_train: 10,
        n_val: 0,
        n_test: 720,
        ..CorpusConfig::default()
    })
    .unwrap();
    let test = corpus.split(Split::Test);
    let vocab = build_vocabulary(&corpus);
    let dim = test[0].motion.dim();
    let mut parts = Vec::new();
    let mut pass = true;
    for seed in [11u64, 12, 13] {
        let model = Model::new(ModelConfig { seed, ..ModelConfig::default() }, vocab.clone(), dim).unwrap();
        let c = car(&model, &test, Scenario::EventToEvent, RectifyMode::Pronoun, seed).unwrap();
        pass &= c.n >= 500 && (0.45..=0.55).contains(&c.car);
        parts.push(format!("seed {seed}: {:.3} over {}", c.car, c.n));
    }
    outcome(7, "chance-level control", pass, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let events: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let mut r = rng::seeded(808, &[]);
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut identity = 0;
    let draws = 10_000;
    for _ in 0..draws {
        let neg = shuffle_events(&events, "x", &mut r).unwrap();
        if neg.permutation == vec![0, 1, 2] {
            identity += 1;
        }
        *counts.entry(neg.permutation).or_default() += 1;
    }
    let longer: Vec<String> = (0..5).map(|i| format!("e{i}")).collect();
    for _ in 0..draws {
        if shuffle_events(&longer, "y", &mut r).unwrap().permutation == (0..5).collect::<Vec<_>>() {
            identity += 1;
        }
    }
    let freqs: Vec<f64> = counts.values().map(|&c| c as f64 / draws as f64).collect();
    let within = freqs.iter().all(|f| (f - 0.2).abs() <= 0.02);
    outcome(
        8,
        "shuffle correctness",
        identity == 0 && counts.len() == 5 && within,
        format!(
            "identity draws {identity}; {} permutations seen; frequencies {:?}",
            counts.len(),
            freqs.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_9(t: &Trained) -> Outcome {
    let cfg = LeakageConfig::default();
    let accs: Vec<f64> = thread::scope(|s| {
        let hs: Vec<_> = [RectifyMode::None, RectifyMode::Article, RectifyMode::Pronoun]
            .into_iter()
            .map(|m| {
                let (c, cfg) = (&t.corpus, &cfg);
                s.spawn(move || leakage_classifier_train_eval(c, cfg, m).unwrap().accuracy)
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let (none, article, pronoun) = (accs[0], accs[1], accs[2]);
    let test = t.corpus.split(Split::Test);
    let sc = Scenario::EventToEvent;
    let model = &t.models[&(sc, true, RectifyMode::Pronoun)];
    let c = car(model, &test, sc, RectifyMode::Pronoun, EVAL_SEED).unwrap().car;
    outcome(
        9,
        "rectification leakage direction",
        pronoun <= article + 0.02 && article + 0.02 <= none + 0.04 && c > pronoun,
        format!("classifier accuracy none {none:.3} / article {article:.3} / pronoun {pronoun:.3}; CAR under pronoun {c:.3}"),
    )
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cc = CorpusConfig {
        n_train: 60,
        n_val: 12,
        n_test: 20,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&cc).unwrap();
    save_corpus(&corpus, &dir.path().join("c")).unwrap();
    let loaded = load_corpus(&dir.path().join("c")).unwrap();
    let corpus_ok = loaded == corpus;

    let tc = TrainConfig {
        epochs: 4,
        lr: LR,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mc = ModelConfig {
        use_vae: true,
        use_reconstruction: true,
        ..ModelConfig::default()
    };
    let run = || {
        let out = train(&loaded, &mc, &tc).unwrap();
        let bytes = out.checkpoint.to_bytes().unwrap();
        let model = out.best_model().unwrap();
        let rep = evaluate(&model, &loaded, Split::Test, Protocol::Car, Direction::M2t, &EvalConfig::default()).unwrap();
        (bytes, serde_json::to_vec(&rep).unwrap(), out)
    };
    let (b1, r1, first) = run();
    let (b2, r2, _) = run();
    let identical = b1 == b2 && r1 == r2;

    let path = dir.path().join("m.carc");
    first.checkpoint.save(&path).unwrap();
    let back = car_core::model::Checkpoint::load(&path).unwrap();
    let ck_ok = back.to_bytes().unwrap() == b1 && back == first.checkpoint;

    let half = train(&loaded, &mc, &TrainConfig { epochs: 2, ..tc.clone() }).unwrap();
    let resumed = resume(&loaded, &half.checkpoint, &tc).unwrap();
    let resume_ok = resumed.checkpoint.to_bytes().unwrap() == b1;

    let wide = generate_corpus(&CorpusConfig {
        n_train: 2,
        n_val: 0,
        n_test: 0,
        joint_count: 22,
        ..CorpusConfig::default()
    })
    .unwrap();
    let width = wide.samples[0].motion.dim();
    outcome(
        10,
        "determinism and persistence",
        corpus_ok && identical && ck_ok && resume_ok && width == 263,
        format!(
            "corpus round trip {corpus_ok}; rerun identical {identical}; checkpoint round trip {ck_ok}; resume identical {resume_ok}; J=22 width {width}"
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results = thread::scope(|s| {
        let trained = s.spawn(train_all);
        let quick = [criterion_1, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_10];
        let mut out: Vec<Outcome> = quick.iter().map(|f| f()).collect();
        let t = trained.join().expect("training thread");
        out.push(criterion_2(&t));
        out.push(criterion_3(&t));
        out.push(criterion_9(&t));
        out
    });
    results.sort_by_key(|o| o.id);
    let failed = results.iter().filter(|o| !o.pass).count();
    for o in &results {
        println!("criterion {:>2} [{}] {}: {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    println!("acceptance: {}/{} passed in {:.1}s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
