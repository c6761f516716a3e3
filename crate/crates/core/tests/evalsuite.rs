use car_core::corpus::{feature_dim, generate_corpus, AnnotatedCorpus, CorpusConfig, Split};
use car_core::evalsuite::leakage::{leakage_classifier_train_eval, LeakageConfig};
use car_core::evalsuite::metrics::{car_from_similarities, rank_all, report, RECALL_KS};
use car_core::evalsuite::subset::{best_swap_gain, dissimilar_subset, dissimilarity_matrix, subset_objective};
use car_core::evalsuite::{corrupted_m2t, embed_samples, protocol_all, protocol_small_batches, protocol_threshold, Direction, EmbeddedSet};
use car_core::events::RectifyMode;
use car_core::model::{Model, ModelConfig};
use car_core::trainer::{build_vocabulary, Scenario};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn unit_vectors(n: usize, d: usize, seed: u64) -> Vec<Array1<f64>> {
    let mut r = rand::rngs::StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Array1<f64> = Array1::from_shape_fn(d, |_| r.random_range(-1.0..1.0));
            let norm = v.dot(&v).sqrt();
            v / norm
        })
        .collect()
}

fn random_set(n: usize, seed: u64) -> EmbeddedSet {
    let text = unit_vectors(n, 6, seed);
    let noise = unit_vectors(n, 6, seed ^ 0x5eed);
    let motion = text
        .iter()
        .zip(&noise)
        .map(|(t, e)| {
            let v = t + &(e * 0.8);
            let norm = v.dot(&v).sqrt();
            v / norm
        })
        .collect();
    EmbeddedSet {
        texts: (0..n).map(|i| format!("t{i}")).collect(),
        text,
        motion,
    }
}

fn oracle_rank(row: &[f64], c: usize) -> usize {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    1 + order.iter().position(|&j| j == c).unwrap()
}

fn small_corpus(max_events: usize, seed: u64) -> AnnotatedCorpus {
    generate_corpus(&CorpusConfig {
        n_train: 64,
        n_val: 8,
        n_test: 40,
        joint_count: 4,
        max_events_per_sample: max_events,
        seed,
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn untrained(corpus: &AnnotatedCorpus) -> Model {
    Model::new(ModelConfig::default(), build_vocabulary(corpus), feature_dim(4)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recall_is_monotone_and_bounded(ranks in prop::collection::vec(1usize..50, 1..80)) {
        let r = report(&ranks).unwrap();
        let mut prev = 0.0;
        for k in RECALL_KS {
            let v = r.recall(k).unwrap();
            prop_assert!((0.0..=100.0).contains(&v));
            prop_assert!(v >= prev);
            prev = v;
        }
        prop_assert!(r.medr >= 1.0);
        prop_assert_eq!(r.n_queries, ranks.len());
    }

    #[test]
    fn rank_all_matches_sorting_oracle(
        rows in 1usize..40,
        cols in 1usize..40,
        seed in any::<u64>(),
        coarse in any::<bool>(),
    ) {
        let mut r = rand::rngs::StdRng::seed_from_u64(seed);
        let sim = Array2::from_shape_fn((rows, cols), |_| {
            let v: f64 = r.random_range(-1.0..1.0);
            if coarse { (v * 3.0).round() / 3.0 } else { v }
        });
        let correct: Vec<usize> = (0..rows).map(|_| r.random_range(0..cols)).collect();
        let got = rank_all(&sim, &correct).unwrap();
        for q in 0..rows {
            let row: Vec<f64> = sim.row(q).to_vec();
            prop_assert_eq!(got[q], oracle_rank(&row, correct[q]));
        }
    }

    #[test]
    fn car_invariant_under_monotone_maps(pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..60)) {
        let base = car_from_similarities(&pairs).unwrap();
        let mapped: Vec<(f64, f64)> = pairs.iter().map(|&(t, s)| ((3.0 * t).exp() + 2.0, (3.0 * s).exp() + 2.0)).collect();
        prop_assert_eq!(base, car_from_similarities(&mapped).unwrap());
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn threshold_above_one_equals_all(n in 2usize..30, seed in any::<u64>()) {
        let set = random_set(n, seed);
        for dir in [Direction::T2m, Direction::M2t] {
            let all = protocol_all(&set, dir).unwrap();
            let strict = protocol_threshold(&set, dir, 1.0 + 1e-9).unwrap();
            prop_assert_eq!(&all, &strict);
            let loose = protocol_threshold(&set, dir, 0.5).unwrap();
            prop_assert!(loose.iter().zip(&all).all(|(l, a)| l <= a));
        }
    }

    #[test]
    fn dissimilar_subset_is_one_swap_optimal(n in 3usize..20, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let emb = unit_vectors(n, 5, seed);
        let m = ((n as f64 * frac) as usize).clamp(1, n - 1);
        let idx = dissimilar_subset(&emb, m, 3, seed).unwrap();
        prop_assert_eq!(idx.len(), m);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let dis = dissimilarity_matrix(&emb).unwrap();
        prop_assert!(best_swap_gain(&dis, &idx) <= 1e-9);
    }
}

fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == m)
        .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).collect())
        .collect()
}

#[test]
fn dissimilar_subset_near_exhaustive_optimum() {
    for seed in 0..20 {
        let emb = unit_vectors(8, 4, seed);
        let dis = dissimilarity_matrix(&emb).unwrap();
        let best = combinations(8, 4).iter().map(|c| subset_objective(&dis, c)).fold(f64::NEG_INFINITY, f64::max);
        let got = subset_objective(&dis, &dissimilar_subset(&emb, 4, 8, seed).unwrap());
        assert!(got >= 0.95 * best, "seed {seed}: {got} vs {best}");
    }
}

#[test]
fn oversized_subset_is_rejected() {
    let emb = unit_vectors(4, 3, 0);
    assert!(dissimilar_subset(&emb, 5, 1, 0).is_err());
}

#[test]
fn small_batch_spread_shrinks_with_trials() {
    let set = random_set(120, 7);
    let spread = |trials: usize| {
        let means: Vec<f64> = (0..30).map(|s| protocol_small_batches(&set, Direction::M2t, 16, trials, s).unwrap().mean.r1).collect();
        let mu = means.iter().sum::<f64>() / means.len() as f64;
        means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / means.len() as f64
    };
    let (few, many) = (spread(2), spread(50));
    assert!(many < few, "{many} vs {few}");
}

#[test]
fn small_batch_of_full_size_equals_all() {
    let set = random_set(20, 3);
    let st = protocol_small_batches(&set, Direction::T2m, 20, 3, 9).unwrap();
    let all = report(&protocol_all(&set, Direction::T2m).unwrap()).unwrap();
    assert_eq!(st.mean, all);
}

#[test]
fn corrupted_pool_holds_one_variant_per_multi_event_sample() {
    let corpus = small_corpus(3, 21);
    let model = untrained(&corpus);
    let test = corpus.split(Split::Test);
    let k = test.iter().filter(|s| s.descriptions[0].events.len() >= 2).count();
    assert!(k > 0);
    let c = corrupted_m2t(&model, &test, Scenario::OrigToEvent, RectifyMode::None, 4).unwrap();
    assert_eq!(c.pool_size, test.len() + k);
    assert_eq!(c.ranks.len(), test.len());
}

#[test]
fn corrupted_on_single_event_corpus_equals_all() {
    let corpus = small_corpus(1, 22);
    let model = untrained(&corpus);
    let test = corpus.split(Split::Test);
    let c = corrupted_m2t(&model, &test, Scenario::OrigToEvent, RectifyMode::None, 4).unwrap();
    let set = embed_samples(&model, &test, Scenario::OrigToEvent, RectifyMode::None).unwrap();
    assert_eq!(c.pool_size, test.len());
    assert_eq!(c.ranks, protocol_all(&set, Direction::M2t).unwrap());
}

#[test]
fn leakage_with_shuffled_labels_is_chance() {
    let corpus = generate_corpus(&CorpusConfig {
        n_train: 400,
        n_val: 20,
        n_test: 400,
        joint_count: 4,
        ..CorpusConfig::default()
    })
    .unwrap();
    let cfg = LeakageConfig {
        shuffle_labels: true,
        epochs: 5,
        ..LeakageConfig::default()
    };
    let r = leakage_classifier_train_eval(&corpus, &cfg, RectifyMode::Pronoun).unwrap();
    assert!((r.accuracy - 0.5).abs() <= 0.05, "{}", r.accuracy);
}

#[test]
fn rank_all_matches_oracle_at_full_size() {
    let mut r = rand::rngs::StdRng::seed_from_u64(200);
    let sim = Array2::from_shape_fn((200, 200), |_| (r.random_range(-1.0f64..1.0) * 20.0).round() / 20.0);
    let correct: Vec<usize> = (0..200).collect();
    let got = rank_all(&sim, &correct).unwrap();
    for q in 0..200 {
        assert_eq!(got[q], oracle_rank(&sim.row(q).to_vec(), q));
    }
}
