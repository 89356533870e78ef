use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Source, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Ring buffer of transitions with an index over transitions that belong to
/// successful episodes (demonstrations included).
///
/// Every inserted transition gets a monotonically increasing id; the slot is
/// `id % capacity`. The success index holds ids in increasing order and is
/// trimmed from the front as the ring evicts.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next_id: u64,
    success: VecDeque<u64>,
}

/// Minibatch laid out as matrices.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let states: Vec<&[f64]> = ts.iter().map(|t| t.s.as_slice()).collect();
        let actions: Vec<&[f64]> = ts.iter().map(|t| t.a.as_slice()).collect();
        let next: Vec<&[f64]> = ts.iter().map(|t| t.s_next.as_slice()).collect();
        Ok(Self {
            states: Tensor::from_rows(&states)?,
            actions: Tensor::from_rows(&actions)?,
            rewards: ts.iter().map(|t| t.r).collect(),
            next_states: Tensor::from_rows(&next)?,
            dones: ts.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: Vec::new(),
            next_id: 0,
            success: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn success_len(&self) -> usize {
        self.success.len()
    }

    /// Id of the oldest live transition.
    pub fn oldest_id(&self) -> u64 {
        self.next_id - self.storage.len() as u64
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn get(&self, id: u64) -> Option<&Transition> {
        if id < self.oldest_id() || id >= self.next_id {
            return None;
        }
        Some(&self.storage[(id % self.capacity as u64) as usize])
    }

    /// Live ids in the success index, oldest first.
    pub fn success_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.success.iter().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (self.oldest_id()..self.next_id).map(move |id| self.get(id).expect("live id"))
    }

    /// Appends one transition and returns its id.
    pub fn push(&mut self, t: Transition) -> u64 {
        let id = self.next_id;
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[(id % self.capacity as u64) as usize] = t;
        }
        self.next_id += 1;
        let oldest = self.oldest_id();
        while self.success.front().is_some_and(|&f| f < oldest) {
            self.success.pop_front();
        }
        id
    }

    /// Adds live ids to the success index. Evicted or duplicate ids are ignored.
    pub fn mark_success(&mut self, ids: impl IntoIterator<Item = u64>) {
        let oldest = self.oldest_id();
        for id in ids {
            if id < oldest || id >= self.next_id {
                continue;
            }
            match self.success.back() {
                None => self.success.push_back(id),
                Some(&b) if id > b => self.success.push_back(id),
                Some(_) => {
                    if let Err(pos) = self.success.binary_search(&id) {
                        self.success.insert(pos, id);
                    }
                }
            }
        }
    }

    /// Inserts every demo transition and indexes it as successful. All demos
    /// are validated before anything is inserted.
    pub fn seed_with_demos(&mut self, demos: &[Trajectory]) -> Result<()> {
        if let Some(index) = demos.iter().position(|d| !d.success()) {
            return Err(Error::UnsuccessfulDemo { index });
        }
        for demo in demos {
            let ids: Vec<u64> = demo
                .transitions
                .iter()
                .map(|t| {
                    self.push(Transition {
                        source: Source::Demo,
                        ..t.clone()
                    })
                })
                .collect();
            self.mark_success(ids);
        }
        Ok(())
    }

    /// Appends a finished episode, indexing it when it ended in success.
    pub fn register_episode(&mut self, trajectory: &Trajectory) -> Vec<u64> {
        let ids: Vec<u64> = trajectory
            .transitions
            .iter()
            .map(|t| self.push(t.clone()))
            .collect();
        if trajectory.success() {
            self.mark_success(ids.iter().copied());
        }
        ids
    }

    /// `n - m` transitions uniformly from all storage and `m` uniformly from
    /// the success index, shuffled together.
    pub fn sample_ids(&self, n: usize, m: usize, rng: &mut impl Rng) -> Result<Vec<u64>> {
        if m > n {
            return Err(Error::InvalidArgument(format!(
                "oversample count {m} exceeds batch size {n}"
            )));
        }
        let uniform = n - m;
        if uniform > 0 && self.storage.len() < uniform {
            return Err(Error::InsufficientData {
                what: "uniform minibatch",
                required: uniform,
                available: self.storage.len(),
            });
        }
        // Draws are with replacement, so one indexed transition suffices.
        if m > 0 && self.success.is_empty() {
            return Err(Error::InsufficientData {
                what: "success-set minibatch",
                required: 1,
                available: self.success.len(),
            });
        }
        let oldest = self.oldest_id();
        let len = self.storage.len() as u64;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..uniform {
            ids.push(oldest + rng.random_range(0..len));
        }
        for _ in 0..m {
            ids.push(self.success[rng.random_range(0..self.success.len())]);
        }
        ids.shuffle(rng);
        Ok(ids)
    }

    pub fn sample_minibatch(&self, n: usize, m: usize, rng: &mut impl Rng) -> Result<Batch> {
        let ids = self.sample_ids(n, m, rng)?;
        let ts: Vec<&Transition> = ids.iter().map(|&id| self.get(id).expect("live id")).collect();
        Batch::from_transitions(&ts)
    }

    /// Whether a batch of `n` with `m` oversampled transitions can be drawn.
    pub fn can_sample(&self, n: usize, m: usize) -> bool {
        self.storage.len() >= n - m.min(n) && (m == 0 || !self.success.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tr(tag: f64, r: f64) -> Transition {
        Transition {
            s: vec![tag],
            a: vec![0.0],
            r,
            s_next: vec![tag + 1.0],
            done: r == 1.0,
            source: Source::Online,
        }
    }

    fn episode(start: f64, len: usize, success: bool) -> Trajectory {
        let mut ts: Vec<Transition> = (0..len).map(|i| tr(start + i as f64, 0.0)).collect();
        if success {
            let last = ts.last_mut().unwrap();
            last.r = 1.0;
            last.done = true;
        }
        Trajectory::new(ts)
    }

    #[test]
    fn seeding_counts() {
        let mut b = ReplayBuffer::new(1000);
        b.seed_with_demos(&[episode(0.0, 37, true)]).unwrap();
        assert_eq!(b.len(), 37);
        assert_eq!(b.success_len(), 37);
        assert!(b.iter().all(|t| t.source == Source::Demo));
    }

    #[test]
    fn empty_demo_list_is_fine() {
        let mut b = ReplayBuffer::new(10);
        b.seed_with_demos(&[]).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn failed_demo_rejected_with_index() {
        let mut b = ReplayBuffer::new(100);
        let demos = [episode(0.0, 3, true), episode(10.0, 3, false)];
        assert!(matches!(
            b.seed_with_demos(&demos),
            Err(Error::UnsuccessfulDemo { index: 1 })
        ));
        assert!(b.is_empty());
    }

    #[test]
    fn register_episode_indexing() {
        let mut b = ReplayBuffer::new(100);
        b.register_episode(&episode(0.0, 5, false));
        assert_eq!(b.success_len(), 0);
        b.register_episode(&episode(10.0, 20, true));
        assert_eq!(b.success_len(), 20);
        assert_eq!(b.len(), 25);
    }

    #[test]
    fn sampling_errors_name_counts() {
        let mut b = ReplayBuffer::new(100);
        b.register_episode(&episode(0.0, 5, false));
        match b.sample_minibatch(8, 0, &mut rng::stream(0, 0)) {
            Err(Error::InsufficientData {
                required: 8,
                available: 5,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            b.sample_minibatch(4, 2, &mut rng::stream(0, 0)),
            Err(Error::InsufficientData {
                required: 1,
                available: 0,
                ..
            })
        ));
    }

    #[test]
    fn half_batch_from_success_set() {
        let mut b = ReplayBuffer::new(10_000);
        b.register_episode(&episode(0.0, 1000, false));
        b.seed_with_demos(&[episode(5000.0, 10, true)]).unwrap();
        let ids = b.sample_ids(256, 128, &mut rng::stream(1, 0)).unwrap();
        let success: std::collections::HashSet<u64> = b.success_ids().collect();
        let from_success = ids.iter().filter(|id| success.contains(id)).count();
        // 128 forced plus whatever the uniform half happened to hit.
        assert!(from_success >= 128);
        let uniform_only = b.sample_ids(256, 0, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(uniform_only.len(), 256);
    }

    #[test]
    fn sampling_reproducible() {
        let mut b = ReplayBuffer::new(100);
        b.register_episode(&episode(0.0, 50, true));
        let a = b.sample_ids(16, 4, &mut rng::stream(9, 3)).unwrap();
        let c = b.sample_ids(16, 4, &mut rng::stream(9, 3)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn eviction_drops_success_ids() {
        let mut b = ReplayBuffer::new(10);
        b.seed_with_demos(&[episode(0.0, 4, true)]).unwrap();
        b.register_episode(&episode(100.0, 8, false));
        assert_eq!(b.len(), 10);
        assert_eq!(b.oldest_id(), 2);
        assert_eq!(b.success_ids().collect::<Vec<_>>(), vec![2, 3]);
        assert!(b.get(0).is_none());
        assert_eq!(b.get(2).unwrap().s, vec![2.0]);
    }
}
