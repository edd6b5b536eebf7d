use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tastr_core::association::{
    estimate_pair_stats, kmeans_1d, log_joint_distance, mutual_nearest, reciprocal_nn_candidates,
    select_cluster, str_weight, CameraPairStats, CandidatePair, MatchSet, PairMatches, SigmaForm,
    DEFAULT_MAX_ITERS,
};
use tastr_core::data::{CameraPair, Frame, Tracklet};
use tastr_core::simulator::{true_pair_stats, SimConfig};

fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum()
}

/// Cheapest split of sorted values into three nonempty runs.
fn best_contiguous_3(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let mut best = f64::INFINITY;
    for i in 1..n - 1 {
        for j in i + 1..n {
            best = best.min(sse(&sorted[..i]) + sse(&sorted[i..j]) + sse(&sorted[j..]));
        }
    }
    best
}

fn uniform_instance(rng: &mut impl Rng) -> Vec<f64> {
    let n = rng.random_range(3..=12);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Three groups of 1 to 4 points, spaced well beyond their spread.
fn separated_instance(rng: &mut impl Rng) -> Vec<f64> {
    let mut v = Vec::new();
    for g in 0..3 {
        for _ in 0..rng.random_range(1..=4) {
            let z: f64 = rng.sample(StandardNormal);
            v.push(3.0 * g as f64 + 0.5 * z);
        }
    }
    v
}

fn within_cluster_sse(values: &[f64], assignments: &[usize]) -> f64 {
    (0..3)
        .map(|c| {
            let members: Vec<f64> = values
                .iter()
                .zip(assignments)
                .filter(|(_, &a)| a == c)
                .map(|(&v, _)| v)
                .collect();
            sse(&members)
        })
        .sum()
}

fn sorted_values(values: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted = order.iter().map(|&i| values[i]).collect();
    (order, sorted)
}

#[test]
fn kmeans_clusters_are_contiguous_fixpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let values = uniform_instance(&mut rng);
        let km = kmeans_1d(&values, 3, DEFAULT_MAX_ITERS).unwrap();
        let (order, _) = sorted_values(&values);
        let labels: Vec<usize> = order.iter().map(|&i| km.assignments[i]).collect();
        let mut seen = BTreeSet::new();
        for (x, &l) in labels.iter().enumerate() {
            if x == 0 || labels[x - 1] != l {
                assert!(seen.insert(l), "cluster {l} not contiguous in {labels:?}");
            }
        }
        for (&v, &a) in values.iter().zip(&km.assignments) {
            for (j, &c) in km.centers.iter().enumerate() {
                let here = (v - km.centers[a]).abs();
                let there = (v - c).abs();
                assert!(here < there || here == there && a <= j);
            }
        }
        for (c, &center) in km.centers.iter().enumerate() {
            let members: Vec<f64> = values
                .iter()
                .zip(&km.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(&v, _)| v)
                .collect();
            if !members.is_empty() {
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                assert!((mean - center).abs() <= 1e-12 * (1.0 + mean.abs()));
            }
        }
    }
}

#[test]
fn kmeans_finds_optimum_on_separated_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut optimal = 0;
    for _ in 0..1000 {
        let values = separated_instance(&mut rng);
        let km = kmeans_1d(&values, 3, DEFAULT_MAX_ITERS).unwrap();
        let (_, sorted) = sorted_values(&values);
        if (within_cluster_sse(&values, &km.assignments) - best_contiguous_3(&sorted)).abs() <= 1e-9
        {
            optimal += 1;
        }
    }
    assert!(optimal >= 900, "optimal on {optimal} of 1000");
}

#[test]
fn kmeans_cost_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..500 {
        let values = uniform_instance(&mut rng);
        let km = kmeans_1d(&values, 3, DEFAULT_MAX_ITERS).unwrap();
        for w in km.cost_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}

#[test]
fn kmeans_rejects_bad_input() {
    assert!(kmeans_1d(&[1.0, 2.0], 3, 10).is_err());
    assert!(kmeans_1d(&[1.0, f64::NAN, 2.0], 3, 10).is_err());
    assert!(kmeans_1d(&[1.0], 0, 10).is_err());
}

fn random_stats(rng: &mut impl Rng) -> CameraPairStats {
    let t_bar = rng.random_range(5.0..500.0);
    CameraPairStats::new(t_bar, rng.random_range(0.1..1.5) * t_bar).unwrap()
}

#[test]
fn str_weight_peak_symmetry_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let s = random_stats(&mut rng);
        assert_eq!(str_weight(s.t_bar, &s), 1.0);
        // keep the exponent well above underflow
        let half_width = 20.0 * (2.0 * s.sigma).sqrt();
        let n = 10_000;
        let step = half_width / n as f64;
        let mut prev_hi = 1.0;
        let mut prev_lo = 1.0;
        for i in 1..=n {
            let x = i as f64 * step;
            let hi = str_weight(s.t_bar + x, &s);
            let lo = str_weight(s.t_bar - x, &s);
            assert!(
                (hi - lo).abs() <= 1e-9 * hi.max(lo),
                "asymmetric at {x}: {hi} vs {lo}"
            );
            assert!(
                hi < prev_hi && lo < prev_lo,
                "not strictly decreasing at {x}"
            );
            assert!(hi > 0.0);
            prev_hi = hi;
            prev_lo = lo;
        }
    }
}

#[test]
fn literal_and_squared_forms_differ_by_sigma() {
    let s = CameraPairStats::new(100.0, 10.0).unwrap();
    let lit = SigmaForm::Literal.neg_log_weight(130.0, &s);
    let sq = SigmaForm::Squared.neg_log_weight(130.0, &s);
    assert!((lit - 900.0 / 20.0).abs() < 1e-12);
    assert!((sq - 900.0 / 200.0).abs() < 1e-12);
}

#[test]
fn estimated_means_agree_with_generative_law() {
    let cfg = SimConfig::default();
    let topology = cfg.resolve_topology().unwrap();
    let cams: BTreeSet<u32> = (0..cfg.num_cameras as u32).collect();
    let est = estimate_pair_stats(&topology, &cams, 0.7).unwrap();
    let truth = true_pair_stats(&cfg).unwrap();
    assert_eq!(est.len(), truth.len());
    for (pair, s) in &est {
        let t = truth[pair];
        assert!((s.t_bar - t.t_bar).abs() < 1e-9);
        assert!((s.sigma - 0.7 * t.t_bar).abs() < 1e-9);
    }
}

fn tracklet(id: u64, camera: u32, start: f64, feature: Vec<f64>) -> Tracklet {
    let frames = (0..3)
        .map(|k| Frame {
            time: start + k as f64,
            feature: feature.clone(),
        })
        .collect();
    Tracklet::new(id, camera, frames, None).unwrap()
}

fn random_camera(
    rng: &mut impl Rng,
    camera: u32,
    first_id: u64,
    n: usize,
) -> (Vec<Tracklet>, Vec<Vec<f64>>) {
    let mut ts = Vec::new();
    let mut feats = Vec::new();
    for x in 0..n {
        let f: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        ts.push(tracklet(
            first_id + x as u64,
            camera,
            rng.random_range(0.0..600.0),
            f.clone(),
        ));
        feats.push(f);
    }
    (ts, feats)
}

fn candidate_set(cands: &[CandidatePair]) -> Vec<(u64, u64)> {
    cands.iter().map(|c| (c.i, c.j)).collect()
}

#[test]
fn candidates_invariant_under_feature_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pair = CameraPair::new(0, 1);
    for _ in 0..50 {
        let (na, nb) = (rng.random_range(2..15), rng.random_range(2..15));
        let (ta, fa) = random_camera(&mut rng, 0, 0, na);
        let (tb, fb) = random_camera(&mut rng, 1, 100, nb);
        let ra: Vec<&Tracklet> = ta.iter().collect();
        let rb: Vec<&Tracklet> = tb.iter().collect();
        let stats = random_stats(&mut rng);
        for form in [SigmaForm::Literal, SigmaForm::Squared] {
            let base = reciprocal_nn_candidates(pair, &ra, &rb, &fa, &fb, Some((&stats, form)));
            for c in [0.1, 1.0, 10.0] {
                let scale = |f: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                    f.iter()
                        .map(|v| v.iter().map(|x| x * c).collect())
                        .collect()
                };
                let scaled = reciprocal_nn_candidates(
                    pair,
                    &ra,
                    &rb,
                    &scale(&fa),
                    &scale(&fb),
                    Some((&stats, form)),
                );
                assert_eq!(candidate_set(&base), candidate_set(&scaled), "scale {c}");
            }
        }
    }
}

#[test]
fn temporal_prior_overrides_appearance_when_gap_is_implausible() {
    let stats = CameraPairStats::new(100.0, 70.0).unwrap();
    let pair = CameraPair::new(0, 1);
    let a = [tracklet(0, 0, 0.0, vec![0.0])];
    // appearance prefers tracklet 11, timing prefers 10
    let b = [
        tracklet(10, 1, 102.0, vec![0.5]),
        tracklet(11, 1, 900.0, vec![0.1]),
    ];
    let ra: Vec<&Tracklet> = a.iter().collect();
    let rb: Vec<&Tracklet> = b.iter().collect();
    let fa = vec![vec![0.0]];
    let fb = vec![vec![0.5], vec![0.1]];
    let plain = reciprocal_nn_candidates(pair, &ra, &rb, &fa, &fb, None);
    assert_eq!(candidate_set(&plain), vec![(0, 11)]);
    let timed =
        reciprocal_nn_candidates(pair, &ra, &rb, &fa, &fb, Some((&stats, SigmaForm::Literal)));
    assert_eq!(candidate_set(&timed), vec![(0, 10)]);
    assert!((timed[0].delta_t - 100.0).abs() < 1e-12);
    assert_eq!(timed[0].joint, timed[0].euclid);
}

#[test]
fn zero_distance_ranks_first_under_prior() {
    let s = CameraPairStats::new(50.0, 35.0).unwrap();
    assert_eq!(
        log_joint_distance(0.0, 1e6, &s, SigmaForm::Literal),
        f64::NEG_INFINITY
    );
}

fn candidate(i: u64, euclid: f64) -> CandidatePair {
    CandidatePair {
        pair: CameraPair::new(0, 1),
        i,
        j: 100 + i,
        euclid,
        delta_t: 0.0,
        joint: euclid,
    }
}

#[test]
fn cluster_selection_keeps_lowest_group() {
    let cands: Vec<CandidatePair> = [0.1, 0.12, 0.11, 0.5, 0.52, 0.9, 0.95]
        .iter()
        .enumerate()
        .map(|(i, &d)| candidate(i as u64, d))
        .collect();
    assert_eq!(
        select_cluster(&cands, 3).unwrap(),
        vec![true, true, true, false, false, false, false]
    );
    // fewer candidates than clusters: accept everything
    assert_eq!(select_cluster(&cands[3..5], 3).unwrap(), vec![true, true]);
    // all equal distances: one nonempty cluster holding everything
    let flat: Vec<CandidatePair> = (0..5).map(|i| candidate(i, 0.3)).collect();
    assert_eq!(select_cluster(&flat, 3).unwrap(), vec![true; 5]);
}

#[test]
fn match_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut ms = MatchSet::default();
    ms.pairs.insert(
        CameraPair::new(0, 1),
        PairMatches {
            candidates: vec![candidate(1, 0.25), candidate(2, 0.1 + 0.2)],
            accepted: vec![true, false],
        },
    );
    ms.write_csv(&path).unwrap();
    let back = MatchSet::read_csv(&path).unwrap();
    assert_eq!(back, ms);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("pair_a,pair_b,tracklet_i,tracklet_j,euclid,delta_t,joint,accepted"));
}

fn brute_mutual(scores: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (r, row) in scores.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let row_min = row
                .iter()
                .enumerate()
                .all(|(c2, &w)| v < w || (v == w && c <= c2));
            let col_min = scores
                .iter()
                .enumerate()
                .all(|(r2, row2)| v < row2[c] || (v == row2[c] && r <= r2));
            if row_min && col_min {
                out.push((r, c));
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn mutual_nearest_matches_brute_force(
        rows in 1usize..8,
        cols in 1usize..8,
        cells in prop::collection::vec(0u8..6, 64),
    ) {
        // small integer scores force plenty of ties
        let scores: Vec<Vec<f64>> = (0..rows)
            .map(|r| (0..cols).map(|c| f64::from(cells[r * 8 + c])).collect())
            .collect();
        let got = mutual_nearest(&scores);
        prop_assert_eq!(&got, &brute_mutual(&scores));
        let rs: BTreeSet<usize> = got.iter().map(|p| p.0).collect();
        let cs: BTreeSet<usize> = got.iter().map(|p| p.1).collect();
        prop_assert_eq!(rs.len(), got.len());
        prop_assert_eq!(cs.len(), got.len());
    }

    #[test]
    fn kmeans_invariant_under_affine_maps(
        values in prop::collection::vec(-100.0f64..100.0, 3..12),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let a = kmeans_1d(&values, 3, DEFAULT_MAX_ITERS).unwrap();
        let moved: Vec<f64> = values.iter().map(|v| v * scale + shift).collect();
        let b = kmeans_1d(&moved, 3, DEFAULT_MAX_ITERS).unwrap();
        let near_boundary = values.iter().any(|&v| {
            let mut d: Vec<f64> = a.centers.iter().map(|c| (v - c).abs()).collect();
            d.sort_by(f64::total_cmp);
            d[1] - d[0] < 1e-6 * (1.0 + v.abs())
        });
        prop_assume!(!near_boundary);
        prop_assert_eq!(a.assignments, b.assignments);
    }
}
