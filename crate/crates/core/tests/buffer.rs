//! Replay buffer against a naive oracle, and sampling uniformity.

use ibrl::data::{ReplayBuffer, Source, Trajectory, Transition};
use ibrl::rng;
use proptest::prelude::*;

fn episode(first_tag: u64, len: usize, success: bool) -> Trajectory {
    let ts = (0..len)
        .map(|i| {
            let last = i + 1 == len;
            Transition {
                s: vec![(first_tag + i as u64) as f64],
                a: vec![0.0],
                r: if last && success { 1.0 } else { 0.0 },
                s_next: vec![0.0],
                done: last && success,
                source: Source::Online,
            }
        })
        .collect();
    Trajectory::new(ts)
}

/// Everything ever inserted, with the success flag of its episode.
#[derive(Default)]
struct Oracle {
    all: Vec<(u64, bool)>,
}

impl Oracle {
    fn live(&self, capacity: usize) -> &[(u64, bool)] {
        &self.all[self.all.len().saturating_sub(capacity)..]
    }
}

proptest! {
    #[test]
    fn eviction_and_success_index_match_oracle(
        capacity in 1usize..40,
        episodes in prop::collection::vec((1usize..15, any::<bool>()), 1..30),
    ) {
        let mut buf = ReplayBuffer::new(capacity);
        let mut oracle = Oracle::default();
        let mut tag = 0u64;
        for (len, success) in episodes {
            let ids = buf.register_episode(&episode(tag, len, success));
            prop_assert_eq!(ids.len(), len);
            for _ in 0..len {
                oracle.all.push((tag, success));
                tag += 1;
            }
            let live = oracle.live(capacity);
            prop_assert_eq!(buf.len(), live.len());
            let stored: Vec<u64> = buf.iter().map(|t| t.s[0] as u64).collect();
            let expected: Vec<u64> = live.iter().map(|&(t, _)| t).collect();
            prop_assert_eq!(stored, expected);
            let indexed: Vec<u64> = buf.success_ids().map(|id| buf.get(id).unwrap().s[0] as u64).collect();
            let expected_success: Vec<u64> = live.iter().filter(|&&(_, s)| s).map(|&(t, _)| t).collect();
            prop_assert_eq!(indexed, expected_success);
            prop_assert_eq!(buf.success_len(), live.iter().filter(|&&(_, s)| s).count());
        }
    }

    #[test]
    fn oversampled_batch_split(n in 2usize..64, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut buf = ReplayBuffer::new(500);
        buf.register_episode(&episode(0, 100, false));
        buf.register_episode(&episode(100, 7, true));
        let m = ((n as f64) * frac) as usize;
        let ids = buf.sample_ids(n, m, &mut rng::stream(seed, 0)).unwrap();
        prop_assert_eq!(ids.len(), n);
        let from_success = ids.iter().filter(|&&id| buf.get(id).unwrap().s[0] >= 100.0).count();
        // The uniform part may also land on successful transitions.
        prop_assert!(from_success >= m);
    }
}

/// Pearson chi-square statistic against a uniform expectation.
fn chi_square(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

#[test]
fn uniform_sampling_chi_square() {
    let mut buf = ReplayBuffer::new(50);
    // Wrap the ring several times so uniformity covers live slots only.
    buf.register_episode(&episode(0, 170, false));
    let mut counts = vec![0usize; 50];
    let mut r = rng::stream(1, 0);
    for _ in 0..1000 {
        for id in buf.sample_ids(50, 0, &mut r).unwrap() {
            counts[(buf.get(id).unwrap().s[0] as usize) - 120] += 1;
        }
    }
    // 49 degrees of freedom; 85.35 is the 0.999 quantile.
    let stat = chi_square(&counts);
    assert!(stat < 85.35, "chi-square {stat}");
}

#[test]
fn success_set_sampling_chi_square() {
    let mut buf = ReplayBuffer::new(200);
    buf.register_episode(&episode(0, 40, false));
    buf.register_episode(&episode(40, 10, true));
    let mut counts = vec![0usize; 10];
    let mut r = rng::stream(2, 0);
    for _ in 0..2000 {
        for id in buf.sample_ids(10, 10, &mut r).unwrap() {
            let tag = buf.get(id).unwrap().s[0] as usize;
            assert!(tag >= 40, "oversampled draw outside the success set");
            counts[tag - 40] += 1;
        }
    }
    // 9 degrees of freedom; 27.88 is the 0.999 quantile.
    let stat = chi_square(&counts);
    assert!(stat < 27.88, "chi-square {stat}");
}

#[test]
fn failed_episode_never_indexed() {
    let mut buf = ReplayBuffer::new(1000);
    let mut successful_tags = std::collections::BTreeSet::new();
    let mut tag = 0u64;
    for k in 0..200u64 {
        let len = 1 + (k % 11) as usize;
        let success = k % 3 == 0;
        buf.register_episode(&episode(tag, len, success));
        if success {
            successful_tags.extend(tag..tag + len as u64);
        }
        tag += len as u64;
    }
    assert!(buf.success_len() > 0);
    for id in buf.success_ids() {
        let t = buf.get(id).unwrap().s[0] as u64;
        assert!(
            successful_tags.contains(&t),
            "transition {t} from a failed episode was indexed"
        );
    }
    assert!(buf.seed_with_demos(&[episode(tag, 3, false)]).is_err());
}

#[test]
fn sampling_is_reproducible_per_seed() {
    let mut buf = ReplayBuffer::new(100);
    buf.register_episode(&episode(0, 60, true));
    let a = buf.sample_ids(32, 16, &mut rng::stream(4, 0)).unwrap();
    let b = buf.sample_ids(32, 16, &mut rng::stream(4, 0)).unwrap();
    assert_eq!(a, b);
}
