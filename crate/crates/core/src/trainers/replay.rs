use rand::Rng;

use crate::error::{Error, Result};

/// Fixed-capacity ring of transitions; once full, new entries overwrite the
/// oldest ones.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cannot sample {n} transitions from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&T>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(2);
        b.push(1);
        b.push(2);
        b.push(3);
        let mut items: Vec<_> = b.iter().copied().collect();
        items.sort();
        assert_eq!(items, vec![2, 3]);
        assert!(b.is_full());
    }

    #[test]
    fn undersized_sample_is_an_error() {
        let mut b = ReplayBuffer::new(10);
        b.push(1);
        let mut rng = stream_rng(0, 0);
        assert!(b.sample(2, &mut rng).is_err());
        assert_eq!(b.sample(1, &mut rng).unwrap(), vec![&1]);
    }

    #[test]
    fn full_sample_stays_in_range() {
        let mut b = ReplayBuffer::new(50);
        for i in 0..50 {
            b.push(i);
        }
        let mut rng = stream_rng(1, 0);
        let idx = b.sample_indices(50, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| i < 50));
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..100 {
            b.push(i);
        }
        let mut rng = stream_rng(2, 0);
        let n = 100_000;
        let mut counts = [0usize; 100];
        for _ in 0..n / 100 {
            for i in b.sample_indices(100, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p: f64 = 0.01;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 5.0 * sd, "count {c}");
        }
    }

    proptest! {
        #[test]
        fn size_never_exceeds_capacity(cap in 1usize..20, pushes in 0usize..100) {
            let mut b = ReplayBuffer::new(cap);
            for i in 0..pushes {
                b.push(i);
                prop_assert!(b.len() <= cap);
            }
            prop_assert_eq!(b.len(), pushes.min(cap));
            // the newest min(cap, pushes) items are kept
            let mut kept: Vec<_> = b.iter().copied().collect();
            kept.sort();
            let expected: Vec<_> = (pushes.saturating_sub(cap)..pushes).collect();
            prop_assert_eq!(kept, expected);
        }
    }
}
