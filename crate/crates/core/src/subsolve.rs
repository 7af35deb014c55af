//! Bookkeeping shared by the PDHG and ADMM subproblem solvers.

use crate::error::{Error, Result};
use crate::grid::EnergyTrace;

/// Outcome of one call to a subproblem solver.
#[derive(Clone, Debug, Default)]
pub struct SubReport {
    pub iterations: usize,
    /// Subproblem energy at the starting point.
    pub initial_energy: f64,
    /// Subproblem energy of the returned (best seen) iterate.
    pub best_energy: f64,
    /// `(iteration, best energy so far)` at every energy check.
    pub history: Vec<(usize, f64)>,
}

/// Tracks the best iterate and watches for divergence.
pub(crate) struct BestTracker<T: Clone> {
    pub best: T,
    pub report: SubReport,
    label: &'static str,
}

/// Energy growth factor over the starting value that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

impl<T: Clone> BestTracker<T> {
    pub fn new(start: T, energy: f64, label: &'static str) -> Self {
        BestTracker {
            best: start,
            report: SubReport {
                iterations: 0,
                initial_energy: energy,
                best_energy: energy,
                history: vec![(0, energy)],
            },
            label,
        }
    }

    /// Records the energy of iterate `k`; `make` is only called when the
    /// iterate improves on the best so far.
    pub fn check(&mut self, k: usize, energy: f64, make: impl FnOnce() -> T) -> Result<()> {
        let e0 = self.report.initial_energy;
        if !energy.is_finite() || (e0 > 0.0 && energy > DIVERGENCE_FACTOR * e0) {
            let mut trace = EnergyTrace::new();
            for &(_, e) in &self.report.history {
                trace.push(self.label, e);
            }
            trace.push(self.label, energy);
            return Err(Error::solver(
                format!("{} diverged at iteration {k} (energy {energy:e}, initial {e0:e})", self.label),
                Some(trace),
            ));
        }
        if energy < self.report.best_energy {
            self.report.best_energy = energy;
            self.best = make();
        }
        self.report.iterations = k;
        self.report.history.push((k, self.report.best_energy));
        Ok(())
    }

    pub fn finish(mut self, k: usize) -> (T, SubReport) {
        self.report.iterations = k;
        (self.best, self.report)
    }
}

/// Whether energy should be evaluated after iteration `k` (1-based).
pub(crate) fn due(k: usize, stride: usize, max_iters: usize) -> bool {
    k == max_iters || k % stride.max(1) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_best_and_flags_divergence() {
        let mut t = BestTracker::new(0u32, 10.0, "test");
        t.check(1, 12.0, || 1).unwrap();
        t.check(2, 4.0, || 2).unwrap();
        t.check(3, 5.0, || 3).unwrap();
        assert_eq!(t.best, 2);
        assert_eq!(t.report.history.iter().map(|h| h.1).collect::<Vec<_>>(), vec![10.0, 10.0, 4.0, 4.0]);
        assert!(matches!(t.check(4, 1e5, || 4), Err(Error::Solver { trace: Some(_), .. })));
        assert!(t.check(5, f64::NAN, || 5).is_err());
        let (best, rep) = t.finish(5);
        assert_eq!((best, rep.best_energy), (2, 4.0));
    }

    #[test]
    fn stride_schedule() {
        let hits: Vec<usize> = (1..=25).filter(|&k| due(k, 10, 25)).collect();
        assert_eq!(hits, vec![10, 20, 25]);
    }
}
