//! Running mean/variance with deterministic merging.

/// Welford accumulator; `merge` follows Chan et al.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Stats {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Stats) -> Stats {
        if self.count == 0.0 {
            return *other;
        }
        if other.count == 0.0 {
            return *self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Stats {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }

    pub fn count(&self) -> usize {
        self.count as usize
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count > 1.0 {
            (self.m2 / (self.count - 1.0)).max(0.0)
        } else {
            0.0
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count > 0.0 {
            (self.variance() / self.count).sqrt()
        } else {
            0.0
        }
    }
}

/// Reduces `items` by merging halves recursively, so the association order
/// depends only on the number of items.
pub fn tree_reduce<T, F>(mut items: Vec<T>, merge: &F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    match items.len() {
        0 => None,
        1 => items.pop(),
        n => {
            let right = items.split_off(n / 2);
            let l = tree_reduce(items, merge)?;
            let r = tree_reduce(right, merge)?;
            Some(merge(l, r))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_matches_single_pass() {
        let data: Vec<f64> = (0..101).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut all = Stats::default();
        data.iter().for_each(|x| all.push(*x));
        let parts: Vec<Stats> = data
            .chunks(7)
            .map(|c| {
                let mut s = Stats::default();
                c.iter().for_each(|x| s.push(*x));
                s
            })
            .collect();
        let merged = tree_reduce(parts, &|a: Stats, b: Stats| a.merge(&b)).unwrap();
        assert_eq!(merged.count(), 101);
        assert!((merged.mean() - all.mean()).abs() < 1e-15);
        assert!((merged.variance() - all.variance()).abs() < 1e-14);
    }
}
