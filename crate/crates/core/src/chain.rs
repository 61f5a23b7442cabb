//! The lattice particle process: a reversible Markov chain whose one-step
//! matrix is the exact semigroup e^{-dt L} of the ground-state transform.
//! Rows are normalized against the semigroup's own action on the ground
//! vector, negative ringing is clipped under a hard budget, and paths are
//! drawn by inverse-CDF sampling from keyed streams. Two-sided stationary
//! ensembles start from the reversible weights and run independent forward
//! and backward halves.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ground::TransformedGenerator;
use crate::rng::{path_rng, Direction};

/// Hard budget on the pre-normalization row-sum defect of the exact
/// semigroup; beyond this the spectral data cannot be trusted as a chain.
pub const ROW_DEFECT_BUDGET: f64 = 1e-9;
/// Hard budget on negative ringing mass per row before clipping.
pub const NEGATIVE_MASS_BUDGET: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TransitionKernel {
    pub grid: Grid,
    pub dt: f64,
    /// Row-stochastic transition matrix.
    pub matrix: DMatrix<f64>,
    /// Per-row cumulative sums for inverse-CDF sampling.
    cdf: Vec<Vec<f64>>,
    /// Stationary weights mu = psi^2 (left eigenvector).
    pub weights: Vec<f64>,
    /// Cumulative stationary weights for initial-state draws.
    weight_cdf: Vec<f64>,
    /// max_x |sum_y G[x,y] psi(y)/psi(x) - 1| before normalization.
    pub row_defect: f64,
    /// Largest clipped negative mass in any row.
    pub clipped_mass: f64,
}

/// Build the one-step kernel P[x, y] = G[x, y] psi(y) / (G psi)(x) with
/// G = e^{-dt (K - E0)}. Normalizing against the computed (G psi) makes rows
/// stochastic to rounding; the defect |(G psi)/psi - 1| is the honest error
/// and is gated, not hidden.
pub fn build_transition_kernel(tg: &TransformedGenerator, dt: f64) -> Result<TransitionKernel> {
    if dt <= 0.0 {
        return Err(Error::Config("chain step must be positive".into()));
    }
    let n = tg.len();
    let g = tg.symmetric_heat(dt);
    let psi = &tg.ground.psi;

    let mut matrix = DMatrix::<f64>::zeros(n, n);
    let mut row_defect = 0.0f64;
    let mut clipped_mass = 0.0f64;
    for x in 0..n {
        let mut gpsi = 0.0;
        for y in 0..n {
            gpsi += g[(x, y)] * psi[y];
        }
        row_defect = row_defect.max((gpsi / psi[x] - 1.0).abs());
        let mut negative = 0.0;
        for y in 0..n {
            let p = g[(x, y)] * psi[y] / gpsi;
            if p < 0.0 {
                negative -= p;
            }
            matrix[(x, y)] = p.max(0.0);
        }
        clipped_mass = clipped_mass.max(negative);
        if negative > 0.0 {
            let rescale = 1.0 / (1.0 + negative);
            for y in 0..n {
                matrix[(x, y)] *= rescale;
            }
        }
    }
    if row_defect > ROW_DEFECT_BUDGET {
        return Err(Error::KernelConstruction(format!(
            "semigroup row defect {row_defect:.3e} exceeds budget {ROW_DEFECT_BUDGET:.0e}; \
             the ground vector's dynamic range is too large for this grid"
        )));
    }
    if clipped_mass > NEGATIVE_MASS_BUDGET {
        return Err(Error::KernelConstruction(format!(
            "negative ringing mass {clipped_mass:.3e} exceeds budget {NEGATIVE_MASS_BUDGET:.0e}"
        )));
    }

    let cdf: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let mut acc = 0.0;
            let mut row: Vec<f64> = (0..n)
                .map(|y| {
                    acc += matrix[(x, y)];
                    acc
                })
                .collect();
            row[n - 1] = 1.0;
            row
        })
        .collect();
    let weights: Vec<f64> = tg.ground.weights.iter().cloned().collect();
    let mut acc = 0.0;
    let mut weight_cdf: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    weight_cdf[n - 1] = 1.0;

    Ok(TransitionKernel {
        grid: tg.grid,
        dt,
        matrix,
        cdf,
        weights,
        weight_cdf,
        row_defect,
        clipped_mass,
    })
}

fn search_cdf(cdf: &[f64], u: f64) -> usize {
    match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) => i + 1,
        Err(i) => i,
    }
    .min(cdf.len() - 1)
}

impl TransitionKernel {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// One inverse-CDF step from `state`.
    pub fn step<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        search_cdf(&self.cdf[state], rng.gen::<f64>())
    }

    /// Draw an initial state from the stationary weights.
    pub fn sample_stationary<R: Rng>(&self, rng: &mut R) -> usize {
        search_cdf(&self.weight_cdf, rng.gen::<f64>())
    }

    /// Walk `steps` transitions from `start`, returning all visited states
    /// (length steps + 1).
    pub fn sample_path<R: Rng>(&self, start: usize, steps: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(start);
        let mut s = start;
        for _ in 0..steps {
            s = self.step(s, rng);
            out.push(s);
        }
        out
    }
}

/// A stationary two-sided ensemble: each path starts from mu and extends
/// independently forward and backward (reversibility makes the backward leg
/// another copy of the same chain).
#[derive(Debug, Clone)]
pub struct TwoSidedPaths {
    pub dt: f64,
    /// forward[p][j] = state at time +j dt; forward[p][0] is the start.
    pub forward: Vec<Vec<usize>>,
    /// backward[p][j] = state at time -j dt; backward[p][0] equals the start.
    pub backward: Vec<Vec<usize>>,
}

impl TwoSidedPaths {
    pub fn n_paths(&self) -> usize {
        self.forward.len()
    }

    /// State at signed step index (negative = backward half).
    pub fn state(&self, path: usize, signed_step: i64) -> usize {
        if signed_step >= 0 {
            self.forward[path][signed_step as usize]
        } else {
            self.backward[path][(-signed_step) as usize]
        }
    }
}

/// Sample a stationary two-sided ensemble with `steps` transitions per half.
pub fn sample_stationary_two_sided(
    kernel: &TransitionKernel,
    paths: usize,
    steps: usize,
    seed: u64,
) -> TwoSidedPaths {
    let halves: Vec<(Vec<usize>, Vec<usize>)> = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let start = kernel.sample_stationary(&mut path_rng(seed, Direction::Initial, p));
            let fwd = kernel.sample_path(start, steps, &mut path_rng(seed, Direction::Forward, p));
            let bwd = kernel.sample_path(start, steps, &mut path_rng(seed, Direction::Backward, p));
            (fwd, bwd)
        })
        .collect();
    let mut forward = Vec::with_capacity(paths);
    let mut backward = Vec::with_capacity(paths);
    for (f, b) in halves {
        forward.push(f);
        backward.push(b);
    }
    TwoSidedPaths { dt: kernel.dt, forward, backward }
}

/// Stationary-law diagnostics for a two-sided ensemble.
///
/// Every budget is an explicit mean-plus-3-sigma bound: the mean term bounds
/// E[TV] coordinatewise by binomial standard deviations, and the sigma term
/// comes from bounded differences (changing one path moves each empirical
/// total-variation statistic by at most 2/M).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LawReport {
    /// Signed step indices at which the marginal was checked (all of them).
    pub steps: Vec<i64>,
    /// Total variation between the empirical marginal and mu at each step.
    pub marginal_tv: Vec<f64>,
    pub marginal_budget: f64,
    /// Lag used for the pair-law checks.
    pub lag: usize,
    /// TV between the empirical (X_0, X_lag) law and the exact mu_x P^lag.
    pub pair_tv: f64,
    pub pair_budget: f64,
    /// Transpose asymmetry of the empirical pair counts; zero in law for a
    /// reversible stationary chain.
    pub reversal_tv: f64,
    pub reversal_budget: f64,
    /// TV between the pair law sampled at the start of the forward half and
    /// at its far end; zero in law for a stationary chain.
    pub shift_tv: f64,
    pub shift_budget: f64,
    pub pass: bool,
}

/// Check stationarity, reversibility, and shift invariance of a sampled
/// two-sided ensemble against its generating kernel.
pub fn stationary_law_checks(
    kernel: &TransitionKernel,
    ens: &TwoSidedPaths,
    lag: usize,
) -> Result<LawReport> {
    let n = kernel.len();
    let paths = ens.n_paths();
    if paths == 0 {
        return Err(Error::Config("law checks need a nonempty ensemble".into()));
    }
    let steps_per_half = ens.forward[0].len() - 1;
    if lag == 0 || lag > steps_per_half {
        return Err(Error::Config(format!(
            "pair lag {lag} outside 1..={steps_per_half}"
        )));
    }
    let m = paths as f64;

    // Marginal TV at every signed step.
    let mean_term: f64 =
        kernel.weights.iter().map(|&w| (w * (1.0 - w) / m).sqrt()).sum::<f64>() / 2.0;
    let marginal_budget = mean_term + 1.5 / m.sqrt();
    let steps: Vec<i64> = (-(steps_per_half as i64)..=steps_per_half as i64).collect();
    let marginal_tv: Vec<f64> = steps
        .iter()
        .map(|&s| {
            let mut counts = vec![0.0f64; n];
            for p in 0..paths {
                counts[ens.state(p, s)] += 1.0;
            }
            (0..n).map(|x| (counts[x] / m - kernel.weights[x]).abs()).sum::<f64>() / 2.0
        })
        .collect();

    // Exact lag-step pair law pi[x, y] = mu_x P^lag[x, y].
    let mut p_lag = kernel.matrix.clone();
    for _ in 1..lag {
        p_lag = &p_lag * &kernel.matrix;
    }
    let mut pair_mean_term = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            let pi = kernel.weights[x] * p_lag[(x, y)];
            pair_mean_term += (pi * (1.0 - pi) / m).sqrt();
        }
    }
    pair_mean_term /= 2.0;

    let pair_counts = |s0: i64| -> DMatrix<f64> {
        let mut c = DMatrix::<f64>::zeros(n, n);
        for p in 0..paths {
            c[(ens.state(p, s0), ens.state(p, s0 + lag as i64))] += 1.0 / m;
        }
        c
    };
    let head = pair_counts(0);
    let tail = pair_counts((steps_per_half - lag) as i64);

    let mut pair_tv = 0.0f64;
    let mut reversal_tv = 0.0f64;
    let mut shift_tv = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            let pi = kernel.weights[x] * p_lag[(x, y)];
            pair_tv += (head[(x, y)] - pi).abs();
            reversal_tv += (head[(x, y)] - head[(y, x)]).abs();
            shift_tv += (head[(x, y)] - tail[(x, y)]).abs();
        }
    }
    pair_tv /= 2.0;
    reversal_tv /= 2.0;
    shift_tv /= 2.0;

    let pair_budget = pair_mean_term + 1.5 / m.sqrt();
    let reversal_budget = 2.0 * pair_mean_term + 3.0 / m.sqrt();
    let shift_budget = 2.0 * pair_mean_term + 3.0 / m.sqrt();

    let pass = marginal_tv.iter().all(|&tv| tv <= marginal_budget)
        && pair_tv <= pair_budget
        && reversal_tv <= reversal_budget
        && shift_tv <= shift_budget;

    Ok(LawReport {
        steps,
        marginal_tv,
        marginal_budget,
        lag,
        pair_tv,
        pair_budget,
        reversal_tv,
        reversal_budget,
        shift_tv,
        shift_budget,
        pass,
    })
}

/// Chapman-Kolmogorov defect: max entry of |P(dt)^2 - P(2 dt)| over the raw
/// (unclipped) kernels.
pub fn chapman_kolmogorov_defect(tg: &TransformedGenerator, dt: f64) -> f64 {
    let p1 = tg.heat(dt);
    let p2 = tg.heat(2.0 * dt);
    let sq = &p1 * &p1;
    let mut worst = 0.0f64;
    for x in 0..sq.nrows() {
        for y in 0..sq.ncols() {
            worst = worst.max((sq[(x, y)] - p2[(x, y)]).abs());
        }
    }
    worst
}
