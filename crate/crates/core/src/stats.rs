//! Deterministic reductions shared by the normalizers and diagnostics.
//!
//! Every reduction here has a fixed summation order (blocked, then a
//! balanced binary merge), so results never depend on how the caller
//! splits work across threads.

const BLOCK: usize = 64;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Running mean and sum of squared deviations (Welford), mergeable with
/// the Chan et al. parallel update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / n as f64;
        Moments {
            count: n,
            mean: self.mean + delta * w,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * w,
        }
    }

    /// Population variance (divide by n). Zero for empty input.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Blocked Welford accumulation over `xs` followed by a balanced merge.
    pub fn of_slice(xs: &[f64]) -> Moments {
        if xs.len() <= BLOCK {
            let mut m = Moments::default();
            for &x in xs {
                m.push(x);
            }
            return m;
        }
        let mid = xs.len() / 2;
        Moments::of_slice(&xs[..mid]).merge(Moments::of_slice(&xs[mid..]))
    }
}

/// Mean and population variance by two passes of pairwise summation.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    (mean, pairwise_sum(&dev) / n)
}

/// Mean of squares by pairwise summation.
pub fn mean_square(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let sq: Vec<f64> = xs.iter().map(|&x| x * x).collect();
    pairwise_sum(&sq) / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-10);
    }

    #[test]
    fn welford_merge_matches_two_pass() {
        let xs: Vec<f64> = (0..777).map(|i| (i as f64 * 0.37).cos() * 3.0 + 1.0).collect();
        let m = Moments::of_slice(&xs);
        let (mean, var) = mean_var(&xs);
        assert!((m.mean - mean).abs() < 1e-12);
        assert!((m.variance() - var).abs() < 1e-12);
        assert_eq!(m.count, 777);
    }

    #[test]
    fn empty_moments_are_zero() {
        let m = Moments::of_slice(&[]);
        assert_eq!(m.variance(), 0.0);
        assert_eq!(mean_var(&[]), (0.0, 0.0));
    }
}
