//! Consistency checks tying the sampled processes back to the operators that
//! generate them: finite-dimensional distributions against exact semigroup
//! contractions, increment-moment growth, a maximal-inequality exit bound,
//! and a two-sided stopping-time estimate. Each check returns a report with
//! the two sides and a pass flag at the 3-sigma level; reports are data, not
//! assertions.

use serde::{Deserialize, Serialize};

use crate::chain::TwoSidedPaths;
use crate::error::{Error, Result};
use crate::ground::TransformedGenerator;
use crate::sde::ContinuumPaths;
use crate::stats::{mean_and_se, BATCHES};

// ---------------------------------------------------------------------------
// Finite-dimensional distributions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteDimReport {
    /// Signed step indices of the marginal times.
    pub times: Vec<i64>,
    pub exact: f64,
    pub monte_carlo: f64,
    pub se: f64,
    pub pass: bool,
}

/// Compare E[prod_j f_j(X_{t_j})] between the stationary two-sided ensemble
/// and the exact contraction mu^T f_1 e^{-dt_1 L} f_2 ... f_m. Times are
/// signed multiples of the chain step; stationarity and reversibility reduce
/// the two-sided law to forward propagation between ordered times.
pub fn finite_dim_distribution_check(
    tg: &TransformedGenerator,
    ens: &TwoSidedPaths,
    times: &[i64],
    observables: &[Vec<f64>],
) -> Result<FiniteDimReport> {
    if times.is_empty() || times.len() != observables.len() {
        return Err(Error::Config("need one observable per marginal time".into()));
    }
    let n = tg.len();
    for f in observables {
        if f.len() != n {
            return Err(Error::Incompatible(format!("observable length {} vs {}", f.len(), n)));
        }
    }
    let half = ens.forward[0].len() as i64 - 1;
    if times.iter().any(|t| t.abs() > half) {
        return Err(Error::Config(format!("marginal time outside the sampled window +-{half}")));
    }

    // Order times; keep the observable association.
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by_key(|&i| times[i]);

    // Exact side: start from mu-weighted f_(1), propagate and multiply.
    let mut state: Vec<f64> = (0..n)
        .map(|x| tg.ground.weights[x] * observables[order[0]][x])
        .collect();
    for w in order.windows(2) {
        let gap_steps = (times[w[1]] - times[w[0]]) as f64;
        if gap_steps > 0.0 {
            let p = tg.heat(gap_steps * ens.dt);
            // state^T P, the stationary law pushed forward.
            let mut next = vec![0.0; n];
            for x in 0..n {
                let sx = state[x];
                if sx == 0.0 {
                    continue;
                }
                for y in 0..n {
                    next[y] += sx * p[(x, y)];
                }
            }
            state = next;
        }
        for (x, s) in state.iter_mut().enumerate() {
            *s *= observables[w[1]][x];
        }
    }
    let exact: f64 = state.iter().sum();

    // Monte Carlo side.
    let products: Vec<f64> = (0..ens.n_paths())
        .map(|p| {
            times
                .iter()
                .zip(observables)
                .map(|(&t, f)| f[ens.state(p, t)])
                .product()
        })
        .collect();
    let (mc, se) = mean_and_se(&products, BATCHES.min(products.len()));
    let pass = (mc - exact).abs() <= 3.0 * se + 1e-12;
    Ok(FiniteDimReport { times: times.to_vec(), exact, monte_carlo: mc, se, pass })
}

// ---------------------------------------------------------------------------
// Increment moments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub order: u32,
    /// sup over sampled lags of E|X_t - X_s|^{2 order} / |t-s|^order.
    pub c_fit: f64,
    /// c_fit on the full grid over c_fit on the 2-decimated grid.
    pub refinement_ratio: f64,
    pub pass_refinement: bool,
    pub lags_used: usize,
}

fn moment_constant(paths: &[Vec<[f64; 3]>], d: usize, dt: f64, stride: usize, order: u32) -> (f64, usize) {
    let len = (paths[0].len() - 1) / stride; // transitions on the decimated grid
    let mut c = 0.0f64;
    let mut lags = 0usize;
    let mut lag = 1usize;
    while lag <= len / 2 {
        let start_stride = (lag / 2).max(1);
        let mut total = 0.0;
        let mut count = 0usize;
        for p in paths {
            let mut i = 0;
            while i + lag <= len {
                let a = &p[i * stride];
                let b = &p[(i + lag) * stride];
                let mut r2 = 0.0;
                for k in 0..d {
                    r2 += (b[k] - a[k]) * (b[k] - a[k]);
                }
                total += r2.powi(order as i32);
                count += 1;
                i += start_stride;
            }
        }
        let mean = total / count as f64;
        let tau = (lag * stride) as f64 * dt;
        c = c.max(mean / tau.powi(order as i32));
        lags += 1;
        lag *= 2;
    }
    (c, lags)
}

/// Fit the best constant in E|X_t - X_s|^{2n} <= C |t-s|^n over dyadic lags
/// and verify it is stable under grid refinement (ratio close to 1 means the
/// bound is a property of the process, not of the step size).
pub fn moment_bound_check(paths: &ContinuumPaths, order: u32) -> Result<MomentReport> {
    if paths.paths.is_empty() || paths.t_grid.len() < 9 {
        return Err(Error::Config("moment check needs paths with at least 8 steps".into()));
    }
    let dt = paths.t_grid[1] - paths.t_grid[0];
    let (fine, lags) = moment_constant(&paths.paths, paths.d, dt, 1, order);
    let (coarse, _) = moment_constant(&paths.paths, paths.d, dt, 2, order);
    let ratio = fine / coarse;
    Ok(MomentReport {
        order,
        c_fit: fine,
        refinement_ratio: ratio,
        pass_refinement: ratio <= 1.2,
        lags_used: lags,
    })
}

// ---------------------------------------------------------------------------
// Exit probability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitReport {
    pub threshold: f64,
    pub horizon: f64,
    pub empirical: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Maximal inequality: P( sup_{s <= T} |f(X_s)| >= lambda ) is bounded by
/// (e / lambda) sqrt( (f|f)_mu + T (f|Lf)_mu ) for the stationary chain.
/// The left side runs over the forward halves of the ensemble.
pub fn exit_probability_check(
    tg: &TransformedGenerator,
    ens: &TwoSidedPaths,
    f: &[f64],
    lambda: f64,
    steps: usize,
) -> Result<ExitReport> {
    if f.len() != tg.len() {
        return Err(Error::Incompatible(format!("observable length {} vs {}", f.len(), tg.len())));
    }
    if lambda <= 0.0 {
        return Err(Error::Config("threshold must be positive".into()));
    }
    if steps + 1 > ens.forward[0].len() {
        return Err(Error::Config("horizon exceeds the sampled path length".into()));
    }
    let horizon = steps as f64 * ens.dt;
    let hits: Vec<f64> = ens
        .forward
        .iter()
        .map(|path| {
            let exceeded = path[..=steps].iter().any(|&x| f[x].abs() >= lambda);
            if exceeded { 1.0 } else { 0.0 }
        })
        .collect();
    let (empirical, se) = mean_and_se(&hits, BATCHES.min(hits.len()));
    let energy = tg.weighted_inner(f, f) + horizon * tg.dirichlet_form(f);
    let bound = std::f64::consts::E / lambda * energy.max(0.0).sqrt();
    let pass = empirical <= bound + 3.0 * se + 1e-12;
    Ok(ExitReport { threshold: lambda, horizon, empirical, se, bound, pass })
}

// ---------------------------------------------------------------------------
// Two-sided stopping time
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoppingReport {
    pub rho: f64,
    pub steps: usize,
    pub empirical: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Two-sided hitting estimate: with tau the first grid time (step multiples
/// of dt, up to `steps`) at which the path sits in the target set, and
/// rho in (0,1), the product rho^{tau_+} rho^{tau_-} over independent
/// forward/backward halves satisfies
///   E[rho^{tau_+} rho^{tau_-}] <= (g|g)_mu + rho^dt/(1-rho^dt) (g|(1-e^{-dt L})g)_mu
/// with g the indicator of the target set. Paths that never hit contribute 0.
pub fn stopping_time_check(
    tg: &TransformedGenerator,
    ens: &TwoSidedPaths,
    in_target: &[bool],
    rho: f64,
    steps: usize,
) -> Result<StoppingReport> {
    if in_target.len() != tg.len() {
        return Err(Error::Incompatible(format!("target length {} vs {}", in_target.len(), tg.len())));
    }
    if !(0.0 < rho && rho < 1.0) {
        return Err(Error::Config("rho must lie in (0, 1)".into()));
    }
    if steps + 1 > ens.forward[0].len() {
        return Err(Error::Config("horizon exceeds the sampled path length".into()));
    }
    let dt = ens.dt;
    let log_rho = rho.ln();
    let hit_factor = |half: &[usize]| -> f64 {
        for (j, &x) in half[..=steps].iter().enumerate() {
            if in_target[x] {
                return (log_rho * j as f64 * dt).exp();
            }
        }
        0.0
    };
    let products: Vec<f64> = (0..ens.n_paths())
        .map(|p| hit_factor(&ens.forward[p]) * hit_factor(&ens.backward[p]))
        .collect();
    let (empirical, se) = mean_and_se(&products, BATCHES.min(products.len()));

    let g: Vec<f64> = in_target.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let p1 = tg.heat(dt);
    let n = tg.len();
    // (g | (1 - e^{-dt L}) g)_mu.
    let mut dissipation = 0.0;
    for x in 0..n {
        if !in_target[x] {
            continue;
        }
        let mut pg = 0.0;
        for y in 0..n {
            pg += p1[(x, y)] * g[y];
        }
        dissipation += tg.ground.weights[x] * (g[x] - pg);
    }
    let rho_dt = (log_rho * dt).exp();
    let mass = tg.weighted_inner(&g, &g);
    let bound = mass + rho_dt / (1.0 - rho_dt) * dissipation.max(0.0);
    let pass = empirical <= bound + 3.0 * se + 1e-12;
    Ok(StoppingReport { rho, steps, empirical, se, bound, pass })
}
