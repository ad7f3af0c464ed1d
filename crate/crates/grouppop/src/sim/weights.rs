//! Binary indexed tree over channel propensities.
//!
//! Supports O(log n) point updates and O(log n) sampling of an index
//! proportional to its weight. Slots are append-only between rebuilds;
//! the owner rebuilds periodically to compact and to bound drift in the
//! running totals.

#[derive(Debug, Clone, Default)]
pub struct WeightTree {
    tree: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// Append a slot and return its index.
    pub fn push(&mut self, w: f64) -> usize {
        let idx = self.weights.len();
        self.weights.push(0.0);
        self.tree.push(0.0);
        // fold the lower partial sums into the new node
        let pos = idx + 1;
        let lsb = pos & pos.wrapping_neg();
        let mut sum = 0.0;
        let mut j = pos - 1;
        let stop = pos - lsb;
        while j > stop {
            sum += self.tree[j - 1];
            j -= j & j.wrapping_neg();
        }
        self.tree[idx] = sum;
        self.set(idx, w);
        idx
    }

    pub fn set(&mut self, idx: usize, w: f64) {
        debug_assert!(w >= 0.0, "negative propensity {w}");
        let delta = w - self.weights[idx];
        if delta == 0.0 {
            return;
        }
        self.weights[idx] = w;
        let mut pos = idx + 1;
        while pos <= self.tree.len() {
            self.tree[pos - 1] += delta;
            pos += pos & pos.wrapping_neg();
        }
    }

    pub fn total(&self) -> f64 {
        let mut sum = 0.0;
        let mut pos = self.weights.len();
        while pos > 0 {
            sum += self.tree[pos - 1];
            pos -= pos & pos.wrapping_neg();
        }
        sum
    }

    /// Smallest index whose prefix sum exceeds `target`. Skips
    /// zero-weight slots that a stale running total may land on.
    pub fn select(&self, target: f64) -> usize {
        let mut pos = 0usize;
        let mut remaining = target;
        let mut mask = self.weights.len().next_power_of_two();
        while mask > 0 {
            let next = pos + mask;
            if next <= self.weights.len() && self.tree[next - 1] < remaining {
                remaining -= self.tree[next - 1];
                pos = next;
            }
            mask >>= 1;
        }
        // `pos` is now the 0-based index of the selected slot
        let mut idx = pos.min(self.weights.len() - 1);
        while idx + 1 < self.weights.len() && self.weights[idx] == 0.0 {
            idx += 1;
        }
        while idx > 0 && self.weights[idx] == 0.0 {
            idx -= 1;
        }
        idx
    }
}
