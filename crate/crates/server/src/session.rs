use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// One queued comparison, already in presentation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct QueuedPair {
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Answer {
    pub pair_id: usize,
    pub winner: usize,
    pub loser: usize,
}

/// One participant pass over every unordered pair of a scene.
#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    pub scene_id: String,
    pub seed: u64,
    pub queue: Vec<QueuedPair>,
    pub answers: Vec<Answer>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum ChoiceError {
    /// `pair_id` is not the pair currently shown.
    Stale { expected: Option<usize> },
    /// The winner is not one of the two shown images.
    NotInPair,
}

impl Session {
    /// Queues all `n * (n - 1) / 2` pairs in seeded order with seeded sides.
    pub fn new(id: String, scene_id: String, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut queue: Vec<QueuedPair> = (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| QueuedPair { left: a, right: b }))
            .collect();
        queue.shuffle(&mut rng);
        for p in &mut queue {
            if rng.random_bool(0.5) {
                std::mem::swap(&mut p.left, &mut p.right);
            }
        }
        Self {
            id,
            scene_id,
            seed,
            queue,
            answers: Vec::new(),
        }
    }

    pub fn cursor(&self) -> usize {
        self.answers.len()
    }

    pub fn current(&self) -> Option<(usize, QueuedPair)> {
        let c = self.cursor();
        self.queue.get(c).map(|&p| (c, p))
    }

    pub fn is_done(&self) -> bool {
        self.cursor() == self.queue.len()
    }

    /// Checks a choice against the current pair without changing anything.
    pub fn check(&self, pair_id: usize, winner: Option<usize>) -> Result<Answer, ChoiceError> {
        let current = self.current();
        let Some((cursor, pair)) = current.filter(|&(c, _)| c == pair_id) else {
            return Err(ChoiceError::Stale {
                expected: current.map(|(c, _)| c),
            });
        };
        match winner {
            Some(w) if w == pair.left => Ok(Answer {
                pair_id: cursor,
                winner: pair.left,
                loser: pair.right,
            }),
            Some(w) if w == pair.right => Ok(Answer {
                pair_id: cursor,
                winner: pair.right,
                loser: pair.left,
            }),
            _ => Err(ChoiceError::NotInPair),
        }
    }

    pub fn commit(&mut self, answer: Answer) {
        debug_assert_eq!(answer.pair_id, self.cursor());
        self.answers.push(answer);
    }
}
