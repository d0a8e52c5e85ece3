use std::collections::VecDeque;

use rand::Rng;

use crate::domain::{Histogram, KGrid, KLevel};
use crate::error::Result;
use crate::metrics::l2_hist_error;
use crate::rng;

/// Sliding-window forecaster of the optimal-K distribution: the forecast is
/// the empirical histogram of the last `window` observed optimal levels.
#[derive(Debug, Clone, PartialEq)]
pub struct HkPredictor {
    history: VecDeque<KLevel>,
    window: usize,
    grid: KGrid,
}

impl HkPredictor {
    pub fn new(grid: KGrid, window: usize) -> Self {
        assert!(window > 0, "predictor window must be positive");
        Self {
            history: VecDeque::with_capacity(window.min(1 << 16)),
            window,
            grid,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn grid(&self) -> &KGrid {
        &self.grid
    }

    pub fn record(&mut self, k: KLevel) {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(k);
    }

    /// Forecast H_K; uniform over the grid until anything has been observed.
    pub fn predict(&self) -> Histogram {
        let counts = self.grid.levels().iter().map(|&k| {
            let c = self.history.iter().filter(|&&h| h == k).count() as u64;
            (k, c)
        });
        Histogram::from_counts(counts).unwrap_or_else(|| Histogram::uniform(&self.grid))
    }
}

/// Forecast H_K from the predictor's window.
pub fn predict_hk(predictor: &HkPredictor) -> Histogram {
    predictor.predict()
}

/// Mean L2 error between a `window`-sized forecast and `truth` when optimal
/// levels are drawn i.i.d. from `truth`, over `trials` independent streams.
pub fn window_prediction_error(
    truth: &Histogram,
    grid: &KGrid,
    window: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let dense = truth.to_dense(grid);
    let mut total = 0.0;
    for trial in 0..trials {
        let mut r = rng::stream(seed.wrapping_add(trial as u64), rng::POLICY);
        let mut p = HkPredictor::new(grid.clone(), window);
        for _ in 0..window {
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut pick = grid.levels()[grid.len() - 1];
            for (&k, &m) in grid.levels().iter().zip(&dense) {
                acc += m;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            p.record(pick);
        }
        total += l2_hist_error(&p.predict(), truth, grid)?;
    }
    Ok(total / trials.max(1) as f64)
}
