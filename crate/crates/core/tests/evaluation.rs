use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tastr_core::association::{CandidatePair, MatchSet, PairMatches};
use tastr_core::data::{CameraPair, Frame, Tracklet, TrackletDataset};
use tastr_core::embedding::{Architecture, EmbeddingModel};
use tastr_core::evaluation::{
    association_pr, cmc_map, evaluate_retrieval, fragmentation_rematch_eval, RetrievalProtocol,
};
use tastr_core::simulator::{generate, GroundTruth, SimConfig};

/// `n` identities with one query on camera 0 and one gallery entry on camera 1.
fn one_positive_protocol(n: usize) -> RetrievalProtocol {
    let queries = (0..n as u64).map(|i| (i, 0, i)).collect();
    let gallery = (0..n as u64).map(|i| (100 + i, 1, i)).collect();
    RetrievalProtocol::new(queries, gallery).unwrap()
}

#[test]
fn perfect_ranking_scores_one() {
    let p = one_positive_protocol(6);
    let dist: Vec<Vec<f64>> = (0..6)
        .map(|q| {
            (0..6)
                .map(|g| if q == g { 0.1 } else { 1.0 + g as f64 })
                .collect()
        })
        .collect();
    let m = cmc_map(&dist, &p).unwrap();
    assert_eq!(m.rank(1), 1.0);
    assert_eq!(m.map, 1.0);
    assert!(m.cmc.iter().all(|&c| c == 1.0));
}

#[test]
fn random_ranking_matches_expected_average_precision() {
    let g = 20;
    let p = one_positive_protocol(g);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut aps = Vec::new();
    let mut rank1 = 0.0;
    let trials = 300;
    for _ in 0..trials {
        let dist: Vec<Vec<f64>> = (0..g)
            .map(|_| (0..g).map(|_| rng.random::<f64>()).collect())
            .collect();
        let m = cmc_map(&dist, &p).unwrap();
        aps.push(m.map);
        rank1 += m.rank(1) / trials as f64;
    }
    let harmonic: f64 = (1..=g).map(|r| 1.0 / r as f64).sum();
    let expected = harmonic / g as f64;
    let n = aps.len() as f64;
    let mean = aps.iter().sum::<f64>() / n;
    let var = aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(
        (mean - expected).abs() <= 3.0 * se,
        "{mean} vs {expected} (se {se})"
    );
    assert!((rank1 - 1.0 / g as f64).abs() < 0.02);
}

#[test]
fn hand_computed_average_precision() {
    // positives land at ranks 1 and 3 of 4
    let queries = vec![(0, 0, 7)];
    let gallery = vec![(1, 1, 7), (2, 1, 8), (3, 2, 7), (4, 2, 9)];
    let p = RetrievalProtocol::new(queries, gallery).unwrap();
    let m = cmc_map(&[vec![0.1, 0.2, 0.3, 0.4]], &p).unwrap();
    assert!((m.map - 5.0 / 6.0).abs() < 1e-15);
    assert_eq!(m.cmc, vec![1.0; 4]);
}

#[test]
fn same_camera_same_identity_is_ignored() {
    let queries = vec![(0, 0, 7)];
    // entry 1 is the same person on the query's camera
    let gallery = vec![(1, 0, 7), (2, 1, 8), (3, 1, 7)];
    let p = RetrievalProtocol::new(queries, gallery).unwrap();
    let m = cmc_map(&[vec![0.0, 0.5, 0.6]], &p).unwrap();
    assert_eq!(m.rank(1), 0.0);
    assert_eq!(m.rank(2), 1.0);
    assert!((m.map - 0.5).abs() < 1e-15);
}

#[test]
fn query_without_positive_is_a_protocol_error() {
    let r = RetrievalProtocol::new(vec![(0, 0, 1)], vec![(1, 0, 1), (2, 1, 2)]);
    assert!(matches!(r, Err(tastr_core::Error::Protocol(_))));
}

fn random_protocol(rng: &mut impl Rng) -> (RetrievalProtocol, Vec<Vec<f64>>) {
    let ids = rng.random_range(2..8u64);
    let queries: Vec<_> = (0..ids).map(|i| (i, 0, i)).collect();
    let mut gallery = Vec::new();
    let mut next = 100;
    for i in 0..ids {
        for _ in 0..rng.random_range(1..4) {
            gallery.push((next, rng.random_range(0..3u32).max(1), i));
            next += 1;
        }
        if rng.random::<bool>() {
            gallery.push((next, 0, i));
            next += 1;
        }
    }
    let dist = (0..queries.len())
        .map(|_| {
            (0..gallery.len())
                .map(|_| f64::from(rng.random_range(0..5u8)))
                .collect()
        })
        .collect();
    (RetrievalProtocol::new(queries, gallery).unwrap(), dist)
}

proptest! {
    #[test]
    fn cmc_is_monotone_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, dist) = random_protocol(&mut rng);
        let m = cmc_map(&dist, &p).unwrap();
        prop_assert!(m.cmc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(m.cmc.iter().all(|&c| (0.0..=1.0).contains(&c)));
        prop_assert_eq!(*m.cmc.last().unwrap(), 1.0);
        prop_assert!((0.0..=1.0).contains(&m.map));
    }

    #[test]
    fn metrics_invariant_under_increasing_transform(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, dist) = random_protocol(&mut rng);
        let warped: Vec<Vec<f64>> = dist
            .iter()
            .map(|r| r.iter().map(|d| d.powi(3) + (0.5 * d).exp()).collect())
            .collect();
        let a = cmc_map(&dist, &p).unwrap();
        let b = cmc_map(&warped, &p).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn association_pr_ignores_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = (0..20u64).map(|t| (t, t % 5)).collect();
        let mut truth = GroundTruth { labels, pairs: Default::default() };
        let pair = CameraPair::new(0, 1);
        truth.pairs.insert(pair, vec![(0, 5), (1, 6), (2, 7)]);
        let mut cands: Vec<(CandidatePair, bool)> = (0..10u64)
            .map(|i| {
                (
                    CandidatePair { pair, i, j: 10 + (i * 3) % 10, euclid: 1.0, delta_t: 0.0, joint: 1.0 },
                    rng.random::<bool>(),
                )
            })
            .collect();
        let build = |c: &[(CandidatePair, bool)]| {
            let mut ms = MatchSet::default();
            ms.pairs.insert(pair, PairMatches {
                candidates: c.iter().map(|x| x.0).collect(),
                accepted: c.iter().map(|x| x.1).collect(),
            });
            ms
        };
        let before = association_pr(&build(&cands), &truth);
        cands.shuffle(&mut rng);
        prop_assert_eq!(before, association_pr(&build(&cands), &truth));
    }
}

#[test]
fn association_pr_arithmetic() {
    let pair = CameraPair::new(0, 1);
    let labels = (0..40u64).map(|t| (t, t % 20)).collect();
    let mut truth = GroundTruth {
        labels,
        pairs: Default::default(),
    };
    truth
        .pairs
        .insert(pair, (0..12u64).map(|i| (i, 20 + i)).collect());
    let cand = |i: u64, j: u64| CandidatePair {
        pair,
        i,
        j,
        euclid: 0.0,
        delta_t: 0.0,
        joint: 0.0,
    };
    // 6 correct and 2 wrong
    let mut candidates: Vec<CandidatePair> = (0..6).map(|i| cand(i, 20 + i)).collect();
    candidates.push(cand(6, 21));
    candidates.push(cand(7, 22));
    let mut ms = MatchSet::default();
    ms.pairs.insert(
        pair,
        PairMatches {
            accepted: vec![true; 8],
            candidates,
        },
    );
    let pr = association_pr(&ms, &truth);
    assert_eq!((pr.precision, pr.recall), (0.75, 0.5));

    let empty = association_pr(&MatchSet::default(), &truth);
    assert!(empty.degenerate);
    assert_eq!((empty.precision, empty.recall), (1.0, 0.0));
}

#[test]
fn rematch_is_perfect_on_constant_tracklets() {
    let mut ts = Vec::new();
    for id in 0..12u64 {
        let frames = (0..9)
            .map(|k| Frame {
                time: id as f64 * 100.0 + k as f64,
                feature: vec![id as f64, (id * id) as f64],
            })
            .collect();
        ts.push(Tracklet::new(id, (id % 3) as u32, frames, Some(id)).unwrap());
    }
    ts.push(
        Tracklet::new(
            50,
            0,
            vec![Frame {
                time: 5000.0,
                feature: vec![0.0, 0.0],
            }],
            Some(50),
        )
        .unwrap(),
    );
    let ds = TrackletDataset::new(ts).unwrap();
    let model = EmbeddingModel::identity(2, 2);
    let r = fragmentation_rematch_eval(&ds, &model).unwrap();
    assert_eq!((r.rank1, r.evaluated, r.skipped), (1.0, 12, 1));
}

#[test]
fn rematch_with_constant_model_hits_first_index_only() {
    let w = generate(&SimConfig {
        num_identities: 40,
        ..SimConfig::default()
    })
    .unwrap();
    let model = EmbeddingModel::zeros(Architecture::Linear, w.dataset.d_raw(), 4);
    let r = fragmentation_rematch_eval(&w.dataset, &model).unwrap();
    let cams_with_usable = w
        .dataset
        .by_camera()
        .values()
        .filter(|ts| ts.iter().any(|t| t.len() >= 3))
        .count();
    assert!((r.rank1 - cams_with_usable as f64 / r.evaluated as f64).abs() < 1e-12);
}

#[test]
fn cross_camera_protocol_on_simulated_world() {
    let w = generate(&SimConfig::default()).unwrap();
    let p = RetrievalProtocol::cross_camera(&w.dataset).unwrap();
    assert_eq!(p.queries.len() + p.gallery.len(), w.dataset.len());
    let model = EmbeddingModel::identity(w.dataset.d_raw(), 16);
    let m = evaluate_retrieval(&model, &w.dataset, &p).unwrap();
    assert!(m.cmc.windows(2).all(|x| x[0] <= x[1]));
    assert_eq!(m.num_queries, p.queries.len());
}
