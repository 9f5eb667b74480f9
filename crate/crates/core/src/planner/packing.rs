//! One-dimensional bin packing over small item sets.
//!
//! Bins are returned as lists of item indices. Items keep their input
//! order inside a bin and bins are ordered by their first item.

/// Largest instance solved exactly; bigger inputs use first-fit-decreasing.
pub const EXACT_LIMIT: usize = 20;

/// Largest instance accepted by [`optimal_bin_count_oracle`].
pub const ORACLE_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PackingError {
    #[error("item weight {weight} exceeds bin capacity {capacity}")]
    WeightTooLarge { weight: u32, capacity: u32 },
    #[error("oracle accepts at most {ORACLE_LIMIT} items, got {0}")]
    InstanceTooBig(usize),
}

/// Minimum-bin packing. Exact (branch and bound) up to [`EXACT_LIMIT`]
/// items; among optimal packings the one whose assignment vector, with
/// bins labelled by first appearance, is lexicographically smallest.
pub fn pack(weights: &[u32], capacity: u32) -> Result<Vec<Vec<usize>>, PackingError> {
    check_weights(weights, capacity)?;
    if weights.is_empty() {
        return Ok(Vec::new());
    }
    let ffd = first_fit_decreasing(weights, capacity);
    if weights.len() > EXACT_LIMIT {
        return Ok(ffd);
    }
    let total: u64 = weights.iter().map(|&w| u64::from(w)).sum();
    let lower = total.div_ceil(u64::from(capacity)).max(1) as usize;
    for bins in lower..=ffd.len() {
        if let Some(assignment) = Search::new(weights, capacity, bins).run() {
            return Ok(group(&assignment, bins));
        }
    }
    unreachable!("first-fit-decreasing packing is a feasible witness")
}

pub fn first_fit_decreasing(weights: &[u32], capacity: u32) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].cmp(&weights[a]).then(a.cmp(&b)));
    let mut loads: Vec<u32> = Vec::new();
    let mut bins: Vec<Vec<usize>> = Vec::new();
    for item in order {
        let w = weights[item];
        match loads.iter().position(|&load| load + w <= capacity) {
            Some(b) => {
                loads[b] += w;
                bins[b].push(item);
            }
            None => {
                loads.push(w);
                bins.push(vec![item]);
            }
        }
    }
    for bin in &mut bins {
        bin.sort_unstable();
    }
    bins.sort_by_key(|bin| bin[0]);
    bins
}

/// Exact minimum bin count by exhaustive search over feasible subsets.
/// Kept independent of [`pack`] so it can validate it.
pub fn optimal_bin_count_oracle(weights: &[u32], capacity: u32) -> Result<usize, PackingError> {
    check_weights(weights, capacity)?;
    let n = weights.len();
    if n > ORACLE_LIMIT {
        return Err(PackingError::InstanceTooBig(n));
    }
    let full = (1usize << n) - 1;
    let fits: Vec<bool> = (0..=full)
        .map(|mask| {
            let sum: u32 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| weights[i])
                .sum();
            sum <= capacity
        })
        .collect();
    // best[mask] = fewest bins covering exactly the items in mask
    let mut best = vec![usize::MAX; full + 1];
    best[0] = 0;
    for mask in 1..=full {
        let low = mask & mask.wrapping_neg();
        let rest = mask ^ low;
        // every subset of `rest`, joined with the lowest item, as one bin
        let mut sub = rest;
        loop {
            let bin = sub | low;
            if fits[bin] && best[mask ^ bin] != usize::MAX {
                best[mask] = best[mask].min(best[mask ^ bin] + 1);
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    Ok(best[full])
}

fn check_weights(weights: &[u32], capacity: u32) -> Result<(), PackingError> {
    for &weight in weights {
        if weight == 0 || weight > capacity {
            return Err(PackingError::WeightTooLarge { weight, capacity });
        }
    }
    Ok(())
}

fn group(assignment: &[usize], bins: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); bins];
    for (item, &bin) in assignment.iter().enumerate() {
        out[bin].push(item);
    }
    out.retain(|b| !b.is_empty());
    out
}

struct Search<'a> {
    weights: &'a [u32],
    capacity: u32,
    bins: usize,
    loads: Vec<u32>,
    assignment: Vec<usize>,
    suffix: Vec<u32>,
}

impl<'a> Search<'a> {
    fn new(weights: &'a [u32], capacity: u32, bins: usize) -> Self {
        let mut suffix = vec![0; weights.len() + 1];
        for i in (0..weights.len()).rev() {
            suffix[i] = suffix[i + 1] + weights[i];
        }
        Self {
            weights,
            capacity,
            bins,
            loads: Vec::with_capacity(bins),
            assignment: vec![0; weights.len()],
            suffix,
        }
    }

    fn run(mut self) -> Option<Vec<usize>> {
        self.descend(0).then_some(self.assignment)
    }

    fn descend(&mut self, item: usize) -> bool {
        if item == self.weights.len() {
            return true;
        }
        let open = self.loads.len();
        let free = self.capacity as usize * (self.bins - open)
            + self
                .loads
                .iter()
                .map(|&l| (self.capacity - l) as usize)
                .sum::<usize>();
        if (self.suffix[item] as usize) > free {
            return false;
        }
        let w = self.weights[item];
        for bin in 0..open {
            let load = self.loads[bin];
            if load + w > self.capacity {
                continue;
            }
            // a bin with the same load as an earlier one leads to a mirrored subtree
            if self.loads[..bin].contains(&load) {
                continue;
            }
            self.loads[bin] += w;
            self.assignment[item] = bin;
            if self.descend(item + 1) {
                return true;
            }
            self.loads[bin] -= w;
        }
        if open < self.bins {
            self.loads.push(w);
            self.assignment[item] = open;
            if self.descend(item + 1) {
                return true;
            }
            self.loads.pop();
        }
        false
    }
}
