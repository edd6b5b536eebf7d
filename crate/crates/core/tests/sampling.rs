use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tastr_core::association::{CandidatePair, MatchSet, PairMatches};
use tastr_core::data::{
    temporal_separation, CameraPair, Frame, Tracklet, TrackletDataset, TrainingView,
};
use tastr_core::embedding::Provenance;
use tastr_core::sampling::{
    max_separated_set, pairwise_separated, SamplerConfig, TccpcSampler, TcsccSampler,
};
use tastr_core::Error;

fn tracklet(id: u64, camera: u32, start: f64, len: usize) -> Tracklet {
    let frames = (0..len)
        .map(|k| Frame {
            time: start + k as f64,
            feature: vec![id as f64, k as f64],
        })
        .collect();
    Tracklet::new(id, camera, frames, None).unwrap()
}

fn random_camera(
    rng: &mut impl Rng,
    camera: u32,
    first_id: u64,
    n: usize,
    horizon: f64,
) -> Vec<Tracklet> {
    (0..n)
        .map(|x| {
            tracklet(
                first_id + x as u64,
                camera,
                rng.random_range(0.0..horizon),
                rng.random_range(1..30),
            )
        })
        .collect()
}

fn brute_max_separated(ts: &[&Tracklet], gap: f64) -> usize {
    let n = ts.len();
    (0u32..1 << n)
        .filter(|mask| {
            let sel: Vec<&Tracklet> = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ts[i])
                .collect();
            pairwise_separated(&sel, Some(gap))
        })
        .map(u32::count_ones)
        .max()
        .unwrap_or(0) as usize
}

#[test]
fn max_separated_set_is_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let n = rng.random_range(1..=10);
        let gap = rng.random_range(0.0..150.0);
        let ts = random_camera(&mut rng, 0, 0, n, 800.0);
        let refs: Vec<&Tracklet> = ts.iter().collect();
        let set = max_separated_set(&refs, Some(gap));
        let chosen: Vec<&Tracklet> = set.iter().map(|&i| refs[i]).collect();
        assert!(pairwise_separated(&chosen, Some(gap)));
        assert_eq!(set.len(), brute_max_separated(&refs, gap));
    }
}

#[test]
fn feasibility_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SamplerConfig {
        p: 3,
        k: 2,
        ..SamplerConfig::default()
    };
    let mut seen = [0usize; 2];
    for _ in 0..200 {
        let mut all = Vec::new();
        for cam in 0..2 {
            let n = rng.random_range(1..=8);
            all.extend(random_camera(&mut rng, cam, 100 * u64::from(cam), n, 600.0));
        }
        let ds = TrackletDataset::new(all).unwrap();
        let view = TrainingView::unsupervised(&ds);
        let by_camera = view.by_camera();
        let expected: Vec<u32> = by_camera
            .iter()
            .filter(|(_, ts)| brute_max_separated(ts, cfg.time_gap) >= cfg.p)
            .map(|(&c, _)| c)
            .collect();
        match TcsccSampler::new(&view, cfg, Some(cfg.time_gap), &mut rng) {
            Ok(s) => {
                seen[0] += 1;
                assert_eq!(s.feasible_cameras(), expected.as_slice());
            }
            Err(Error::SamplingInfeasible(_)) => {
                seen[1] += 1;
                assert!(expected.is_empty());
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    assert!(
        seen[0] > 0 && seen[1] > 0,
        "both outcomes exercised: {seen:?}"
    );
}

fn dense_view(rng: &mut impl Rng) -> TrainingView {
    let mut all = Vec::new();
    for cam in 0..3 {
        all.extend(random_camera(rng, cam, 1000 * u64::from(cam), 25, 3000.0));
    }
    TrainingView::unsupervised(&TrackletDataset::new(all).unwrap())
}

#[test]
fn single_camera_batches_respect_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let view = dense_view(&mut rng);
    let cfg = SamplerConfig {
        max_images: 5,
        ..SamplerConfig::default()
    };
    let sampler = TcsccSampler::new(&view, cfg, Some(cfg.time_gap), &mut rng).unwrap();
    let mut pool_use: BTreeMap<u64, BTreeSet<Vec<u64>>> = BTreeMap::new();
    for _ in 0..500 {
        let batch = sampler.sample(&mut rng);
        batch.validate().unwrap();
        let Provenance::SingleCamera(cam) = batch.provenance else {
            panic!("wrong provenance")
        };
        let mut per_label: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
        for (&l, &src) in batch.labels.iter().zip(&batch.sources) {
            per_label.entry(l).or_default().insert(src);
        }
        assert_eq!(per_label.len(), cfg.p);
        assert!(per_label.values().all(|s| s.len() == 1));
        let chosen: Vec<&Tracklet> = per_label
            .values()
            .map(|s| view.get(*s.iter().next().unwrap()).unwrap())
            .collect();
        assert!(chosen.iter().all(|t| t.camera == cam));
        for (i, a) in chosen.iter().enumerate() {
            for b in &chosen[i + 1..] {
                assert!(temporal_separation(a, b) > cfg.time_gap);
            }
        }
        for (item, &src) in batch.items.iter().zip(&batch.sources) {
            let t = view.get(src).unwrap();
            assert!(t.frames().iter().any(|f| &f.feature == item));
            pool_use
                .entry(src)
                .or_default()
                .insert(vec![item[1] as u64]);
        }
    }
    // frame pools are fixed per sampler and capped at max_images
    assert!(pool_use
        .values()
        .all(|frames| frames.len() <= cfg.max_images));
}

#[test]
fn weak_mode_drops_time_constraint() {
    let ts = vec![
        tracklet(0, 0, 0.0, 5),
        tracklet(1, 0, 10.0, 5),
        tracklet(2, 0, 20.0, 5),
    ];
    let view = TrainingView::unsupervised(&TrackletDataset::new(ts).unwrap());
    let cfg = SamplerConfig {
        p: 3,
        k: 2,
        ..SamplerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    assert!(matches!(
        TcsccSampler::new(&view, cfg, Some(cfg.time_gap), &mut rng),
        Err(Error::SamplingInfeasible(_))
    ));
    let s = TcsccSampler::new(&view, cfg, None, &mut rng).unwrap();
    assert_eq!(s.sample(&mut rng).items.len(), 6);
}

fn matches_for(view: &TrainingView, pairs: &[(u32, u32)], per_pair: usize) -> MatchSet {
    let by_camera = view.by_camera();
    let mut ms = MatchSet::default();
    for &(a, b) in pairs {
        let pair = CameraPair::new(a, b);
        let candidates: Vec<CandidatePair> = by_camera[&a]
            .iter()
            .zip(&by_camera[&b])
            .take(per_pair)
            .map(|(x, y)| CandidatePair {
                pair,
                i: x.id,
                j: y.id,
                euclid: 1.0,
                delta_t: 0.0,
                joint: 1.0,
            })
            .collect();
        let accepted = vec![true; candidates.len()];
        ms.pairs.insert(
            pair,
            PairMatches {
                candidates,
                accepted,
            },
        );
    }
    ms
}

#[test]
fn camera_pair_batches_respect_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let view = dense_view(&mut rng);
    // pair (0, 2) has too few matches to host a batch
    let mut ms = matches_for(&view, &[(0, 1), (1, 2)], 10);
    ms.pairs.extend(matches_for(&view, &[(0, 2)], 2).pairs);
    let cfg = SamplerConfig::default();
    let sampler = TccpcSampler::new(&view, &ms, cfg, &mut rng).unwrap();
    assert_eq!(
        sampler.feasible_pairs(),
        &[CameraPair::new(0, 1), CameraPair::new(1, 2)]
    );
    let matched: BTreeSet<(u64, u64)> = ms
        .accepted()
        .map(|c| (c.i.min(c.j), c.i.max(c.j)))
        .collect();
    for _ in 0..500 {
        let batch = sampler.sample(&mut rng);
        batch.validate().unwrap();
        let Provenance::CameraPair(pair) = batch.provenance else {
            panic!("wrong provenance")
        };
        let mut per_label: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
        for (&l, &src) in batch.labels.iter().zip(&batch.sources) {
            assert!(pair.contains(view.get(src).unwrap().camera));
            per_label.entry(l).or_default().insert(src);
        }
        let mut used = BTreeSet::new();
        for srcs in per_label.values() {
            // both sides of the match are represented
            assert_eq!(srcs.len(), 2);
            let v: Vec<u64> = srcs.iter().copied().collect();
            assert!(matched.contains(&(v[0], v[1])));
            assert!(used.insert(v[0]) && used.insert(v[1]));
        }
    }
}

#[test]
fn camera_pair_sampler_needs_enough_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let view = dense_view(&mut rng);
    let ms = matches_for(&view, &[(0, 1)], 3);
    assert!(matches!(
        TccpcSampler::new(&view, &ms, SamplerConfig::default(), &mut rng),
        Err(Error::SamplingInfeasible(_))
    ));
}
