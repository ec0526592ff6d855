use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Draws scan batches without replacement, reshuffling once the scan set is
/// exhausted. The last batch of an epoch may be shorter than requested.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(scan_count: usize, seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..scan_count).collect(),
            cursor: scan_count,
        }
    }

    /// Next batch of at most `size` distinct scan indices, sorted ascending.
    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let n = self.order.len();
        if n == 0 {
            return Vec::new();
        }
        if size >= n {
            return (0..n).collect();
        }
        if self.cursor >= n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + size.max(1)).min(n);
        let mut batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch.sort_unstable();
        batch
    }
}
