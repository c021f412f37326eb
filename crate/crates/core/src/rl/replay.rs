//! Fixed-capacity experience replay with uniform sampling.

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 10_000;
pub const DEFAULT_BATCH: usize = 32;

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        })
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

    /// Overwrites the oldest entry once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::State(format!(
                "cannot sample {batch} from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&T>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    /// Items in storage order.
    pub fn items(&self) -> &[T] {
        &self.items
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ring_eviction() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..4 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        assert!(!b.items().contains(&0));
        assert_eq!(b.items(), &[3, 1, 2]);
    }

    #[test]
    fn underfilled_sample_errors() {
        let mut b = ReplayBuffer::new(DEFAULT_CAPACITY).unwrap();
        b.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(DEFAULT_BATCH, &mut rng), Err(Error::State(_))));
        assert_eq!(DEFAULT_BATCH, 32);
    }

    #[test]
    fn seeded_sampling_repeats() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            b.push(i);
        }
        let a = b.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = b.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, c);
        assert!(a.iter().all(|&i| i < 100));
    }
}
