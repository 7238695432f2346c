use rand::seq::index::sample;
use rand::Rng;

use crate::env::Transition;
use crate::error::{Error, Result};

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.len() < batch {
            return Err(Error::BufferUnderflow {
                have: self.items.len(),
                need: batch,
            });
        }
        Ok(sample(rng, self.items.len(), batch)
            .into_iter()
            .map(|k| &self.items[k])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(r: f64) -> Transition {
        Transition {
            state: vec![r],
            action: vec![0],
            reward: r,
            next_state: vec![r],
            done: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..5 {
            b.push(t(k as f64));
        }
        assert_eq!(b.len(), 3);
        let mut r: Vec<f64> = b.items().iter().map(|x| x.reward).collect();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sample_is_distinct_and_checks_size() {
        let mut b = ReplayBuffer::new(10);
        for k in 0..10 {
            b.push(t(k as f64));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(10, &mut rng).unwrap();
        let mut r: Vec<f64> = s.iter().map(|x| x.reward).collect();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, (0..10).map(|k| k as f64).collect::<Vec<_>>());
        assert!(matches!(
            b.sample(11, &mut rng),
            Err(Error::BufferUnderflow { have: 10, need: 11 })
        ));
    }
}
