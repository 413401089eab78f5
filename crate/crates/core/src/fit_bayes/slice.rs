//! Univariate slice sampling with stepping out and shrinkage.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SliceStats {
    /// Coordinate updates performed.
    pub updates: usize,
    /// Log-density evaluations spent.
    pub evals: usize,
    /// Updates whose bracket hit the step-out limit.
    pub capped: usize,
}

impl SliceStats {
    pub fn merge(&mut self, other: SliceStats) {
        self.updates += other.updates;
        self.evals += other.evals;
        self.capped += other.capped;
    }

    pub fn evals_per_update(&self) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.evals as f64 / self.updates as f64
        }
    }
}

const MAX_STEPS: usize = 1000;
const MAX_SHRINK: usize = 200;

/// One slice update of `x0` with current log density `lp0`. Returns the new
/// point and its log density.
pub fn slice_step<R, F>(rng: &mut R, x0: f64, lp0: f64, width: f64, mut logp: F, stats: &mut SliceStats) -> (f64, f64)
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    stats.updates += 1;
    let e: f64 = Exp1.sample(rng);
    let level = lp0 - e;
    let mut eval = |x: f64, stats: &mut SliceStats| {
        stats.evals += 1;
        let v = logp(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut lo = x0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    let mut left = (MAX_STEPS as f64 * rng.random::<f64>()) as usize;
    let mut right = MAX_STEPS - 1 - left;
    let mut capped = false;
    while eval(lo, stats) > level {
        if left == 0 {
            capped = true;
            break;
        }
        lo -= width;
        left -= 1;
    }
    while eval(hi, stats) > level {
        if right == 0 {
            capped = true;
            break;
        }
        hi += width;
        right -= 1;
    }
    if capped {
        stats.capped += 1;
    }

    for _ in 0..MAX_SHRINK {
        let x1 = lo + (hi - lo) * rng.random::<f64>();
        let lp1 = eval(x1, stats);
        if lp1 > level {
            return (x1, lp1);
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
    }
    (x0, lp0)
}
