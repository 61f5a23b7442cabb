//! Monte Carlo machinery for the normalized overlap curve
//! gamma(T) = (1 | e^{-T H} 1)^2 / (1 | e^{-2T H} 1)
//! over the stationary lattice ensemble. A positive plateau of gamma(T)
//! signals a ground state for the field-coupled Hamiltonian; decay to zero
//! signals absence. At finite horizon the module estimates the curve, the
//! reweighted upper bound split over the confinement event, and the tail
//! estimate that controls the escaping part.
//!
//! Path functionals: with W the pair-potential table and trapezoid weights on
//! the time grid, every two-sided path carries four double time integrals
//!   S_plus  = int_0^T int_0^T       W(X_t, X_s, |t-s|) dt ds   (forward block)
//!   S_minus = the mirrored backward block over [-T, 0]^2,
//!   S_cross = int_{-T}^0 int_0^T    W(X_t, X_s, |t-s|) dt ds,
//!   S_full  = int_{-T}^T int_{-T}^T W(X_t, X_s, |t-s|) dt ds.
//! Trapezoid weights over [-T, T] split exactly into the two half-grids, so
//! S_full = S_plus + S_minus + 2 S_cross holds per path to rounding. All four
//! sums are computed independently and the identity is checked in tests.
//!
//! Estimators (exponential means in log domain, batch-means errors):
//! numerator (1|e^{-TH}1) is the mean of e^{(q^2/2) S_plus} over forward
//! halves, Z_T = (1|e^{-2TH}1) the mean of e^{(q^2/2) S_full}, and
//! gamma(T) = numerator^2 / Z_T — the forward and backward halves are
//! conditionally independent given the shared anchor, which is exactly the
//! Cauchy-Schwarz structure that also yields the upper bound
//! gamma(T) <= E_{mu_T}[e^{-q^2 S_cross}], where mu_T reweights the ensemble
//! by e^{(q^2/2) S_full}. That bound is split over the confinement event
//! A_T = { sup_{|s| <= T} |X_s| <= T^lambda }.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{sample_stationary_two_sided, TransitionKernel, TwoSidedPaths};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ground::TransformedGenerator;
use crate::pairpot::PairPotentialTable;
use crate::stats::{
    batch_log_means, effective_sample_size, log_domain_se, log_mean_exp, logsumexp, mean_and_se,
    BATCHES,
};

/// Exponential-weight estimates whose effective sample size falls below this
/// floor are flagged unreliable.
pub const ESS_FLOOR: f64 = 30.0;

// ---------------------------------------------------------------------------
// Path weights
// ---------------------------------------------------------------------------

/// Double time integrals of the pair potential along each two-sided path,
/// plus the confinement flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathWeights {
    /// Horizon T of one half (steps * dt).
    pub horizon: f64,
    pub dt: f64,
    /// Confinement exponent: sup |X| is compared against T^lambda.
    pub lambda: f64,
    pub s_plus: Vec<f64>,
    pub s_minus: Vec<f64>,
    pub s_cross: Vec<f64>,
    pub s_full: Vec<f64>,
    /// confined[p] = (sup over grid times |s| <= T of |X_s|) <= T^lambda.
    pub confined: Vec<bool>,
}

/// Check that a pair-potential table lives on the ensemble's grid and covers
/// lags 0, dt, ..., max_lag * dt.
fn validate_table(table: &PairPotentialTable, states: usize, dt: f64, max_lag: usize) -> Result<()> {
    let table_states = table.values.first().map_or(0, |m| m.nrows());
    if table_states != states {
        return Err(Error::Incompatible(format!(
            "pair-potential table is over {table_states} states, ensemble grid has {states}"
        )));
    }
    if table.t_grid.len() <= max_lag {
        return Err(Error::Incompatible(format!(
            "table covers {} time lags, paths need {}",
            table.t_grid.len(),
            max_lag + 1
        )));
    }
    for (k, &t) in table.t_grid.iter().enumerate().take(max_lag + 1) {
        let want = k as f64 * dt;
        if (t - want).abs() > 1e-9 * want.max(1.0) {
            return Err(Error::Incompatible(format!(
                "table lag {k} sits at t = {t}, paths need {want}"
            )));
        }
    }
    Ok(())
}

/// Trapezoid weights for a grid of `n + 1` points with spacing dt.
fn trapezoid_weights(n: usize, dt: f64) -> Vec<f64> {
    (0..=n).map(|j| if j == 0 || j == n { 0.5 * dt } else { dt }).collect()
}

/// Compute the four double time integrals and the confinement flag for every
/// path of a two-sided ensemble.
pub fn path_weights(
    ens: &TwoSidedPaths,
    grid: &Grid,
    table: &PairPotentialTable,
    lambda: f64,
) -> Result<PathWeights> {
    if ens.n_paths() == 0 {
        return Err(Error::Incompatible("empty ensemble".into()));
    }
    let n = ens.forward[0].len() - 1;
    validate_table(table, grid.len(), ens.dt, 2 * n)?;

    let horizon = n as f64 * ens.dt;
    let threshold = horizon.powf(lambda);
    let wh = trapezoid_weights(n, ens.dt);
    let m = 2 * n;
    let wf = trapezoid_weights(m, ens.dt);

    let rows: Vec<(f64, f64, f64, f64, bool)> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            // Signed states: all[u] = X at step u - n, u = 0..=2n.
            let all: Vec<usize> = (-(n as i64)..=n as i64).map(|k| ens.state(p, k)).collect();
            let fwd = &all[n..=m];
            // Backward states in positive-lag order: bwd[i] = X at step -i.
            let bwd: Vec<usize> = (0..=n).map(|i| all[n - i]).collect();

            let mut s_plus = 0.0;
            let mut s_minus = 0.0;
            let mut s_cross = 0.0;
            for i in 0..=n {
                for j in 0..=n {
                    let lag = i.abs_diff(j);
                    let w = wh[i] * wh[j];
                    s_plus += w * table.values[lag][(fwd[i], fwd[j])];
                    s_minus += w * table.values[lag][(bwd[i], bwd[j])];
                    // t = -i dt, s = +j dt, so |t - s| = (i + j) dt.
                    s_cross += w * table.values[i + j][(bwd[i], fwd[j])];
                }
            }
            let mut s_full = 0.0;
            for u in 0..=m {
                for v in 0..=m {
                    s_full += wf[u] * wf[v] * table.values[u.abs_diff(v)][(all[u], all[v])];
                }
            }
            let confined = all.iter().all(|&x| {
                let c = grid.state_coord(x);
                let r2: f64 = c[..grid.d].iter().map(|v| v * v).sum();
                r2.sqrt() <= threshold
            });
            (s_plus, s_minus, s_cross, s_full, confined)
        })
        .collect();

    let mut out = PathWeights {
        horizon,
        dt: ens.dt,
        lambda,
        s_plus: Vec::with_capacity(rows.len()),
        s_minus: Vec::with_capacity(rows.len()),
        s_cross: Vec::with_capacity(rows.len()),
        s_full: Vec::with_capacity(rows.len()),
        confined: Vec::with_capacity(rows.len()),
    };
    for (a, b, c, d, e) in rows {
        out.s_plus.push(a);
        out.s_minus.push(b);
        out.s_cross.push(c);
        out.s_full.push(d);
        out.confined.push(e);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Log-domain estimators
// ---------------------------------------------------------------------------

/// A log-domain exponential-mean estimate with batch-means error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogEstimate {
    /// Estimate of log E[e^X].
    pub log_value: f64,
    /// Batch-means standard error of log_value.
    pub se_log: f64,
    /// Effective sample size of the exponential weights.
    pub ess: f64,
    /// ess >= ESS_FLOOR.
    pub reliable: bool,
}

fn log_estimate(exponents: &[f64]) -> (LogEstimate, Vec<f64>) {
    let batches = BATCHES.min(exponents.len());
    let batch_logs = batch_log_means(exponents, batches);
    let ess = effective_sample_size(exponents);
    let est = LogEstimate {
        log_value: log_mean_exp(exponents),
        se_log: if batches >= 2 { log_domain_se(&batch_logs) } else { 0.0 },
        ess,
        reliable: ess >= ESS_FLOOR,
    };
    (est, batch_logs)
}

/// Estimate the numerator (1 | e^{-TH} 1) from the forward-half weights.
pub fn estimate_numerator(weights: &PathWeights, q: f64) -> LogEstimate {
    let expo: Vec<f64> = weights.s_plus.iter().map(|s| 0.5 * q * q * s).collect();
    log_estimate(&expo).0
}

/// Estimate Z_T = (1 | e^{-2TH} 1) from the full two-sided weights.
pub fn estimate_z(weights: &PathWeights, q: f64) -> LogEstimate {
    let expo: Vec<f64> = weights.s_full.iter().map(|s| 0.5 * q * q * s).collect();
    log_estimate(&expo).0
}

// ---------------------------------------------------------------------------
// The gamma curve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GammaPoint {
    pub horizon: f64,
    pub log_numerator: f64,
    pub log_z: f64,
    pub gamma: f64,
    /// Batch-means standard error of log gamma; the per-batch statistic is
    /// 2 log numerator - log Z, so the numerator/normalizer correlation is
    /// kept.
    pub se_log_gamma: f64,
    pub ess_numerator: f64,
    pub ess_z: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaCurve {
    pub coupling: f64,
    pub lambda: f64,
    pub paths: usize,
    pub seed: u64,
    pub points: Vec<GammaPoint>,
}

/// Convert a horizon to a step count, requiring it to be a positive multiple
/// of dt.
fn horizon_steps(dt: f64, horizon: f64) -> Result<usize> {
    let steps_f = horizon / dt;
    let steps = steps_f.round();
    if steps < 1.0 || (steps_f - steps).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "horizon {horizon} is not a positive multiple of dt = {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Estimate gamma(T) over a grid of horizons. The same seed is reused across
/// horizons, so shorter-horizon paths are prefixes of longer ones (common
/// random numbers); that correlates the points and sharpens trend
/// comparisons, and a fixed seed makes the whole curve bit-identical.
pub fn estimate_gamma(
    kernel: &TransitionKernel,
    table: &PairPotentialTable,
    q: f64,
    lambda: f64,
    horizons: &[f64],
    paths: usize,
    seed: u64,
) -> Result<GammaCurve> {
    if paths < BATCHES {
        return Err(Error::Config(format!("need at least {BATCHES} paths, got {paths}")));
    }
    let mut points = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let steps = horizon_steps(kernel.dt, t)?;
        let ens = sample_stationary_two_sided(kernel, paths, steps, seed);
        let w = path_weights(&ens, &kernel.grid, table, lambda)?;
        let expo_num: Vec<f64> = w.s_plus.iter().map(|s| 0.5 * q * q * s).collect();
        let expo_z: Vec<f64> = w.s_full.iter().map(|s| 0.5 * q * q * s).collect();
        let (num, num_batches) = log_estimate(&expo_num);
        let (z, z_batches) = log_estimate(&expo_z);
        let gamma_batches: Vec<f64> =
            num_batches.iter().zip(&z_batches).map(|(a, b)| 2.0 * a - b).collect();
        let log_gamma = 2.0 * num.log_value - z.log_value;
        points.push(GammaPoint {
            horizon: w.horizon,
            log_numerator: num.log_value,
            log_z: z.log_value,
            gamma: log_gamma.exp(),
            se_log_gamma: if gamma_batches.len() >= 2 { log_domain_se(&gamma_batches) } else { 0.0 },
            ess_numerator: num.ess,
            ess_z: z.ess,
            reliable: num.reliable && z.reliable,
        });
    }
    Ok(GammaCurve { coupling: q, lambda, paths, seed, points })
}

// ---------------------------------------------------------------------------
// Upper-bound decomposition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UpperBoundReport {
    /// E_{mu_T}[ 1_{A_T} e^{-q^2 S_cross} ]: confined-path contribution.
    pub confined_term: f64,
    /// E_{mu_T}[ 1_{A_T^c} e^{-q^2 S_cross} ]: escaping-path contribution.
    pub escaped_term: f64,
    /// Their sum — the reweighted upper bound for gamma.
    pub bound: f64,
    /// gamma estimated from the same weights.
    pub gamma: f64,
    /// Batch-means standard error of (bound - gamma).
    pub se_margin: f64,
    /// Effective sample size of the mu_T importance weights e^{(q^2/2) S_full}.
    pub ess: f64,
    pub reliable: bool,
    /// gamma <= bound + 3 se.
    pub holds: bool,
}

/// Split the upper bound E_{mu_T}[e^{-q^2 S_cross}] over the confinement
/// event by self-normalized importance reweighting of the stationary
/// ensemble, and verify it dominates the gamma estimate from the same
/// weights. Per path the reweighted integrand collapses to
/// e^{(q^2/2)(S_plus + S_minus)} — exactly the Cauchy-Schwarz majorant of the
/// squared numerator.
pub fn upper_bound_decomposition(weights: &PathWeights, q: f64) -> UpperBoundReport {
    let n = weights.s_full.len();
    let lw: Vec<f64> = weights.s_full.iter().map(|s| 0.5 * q * q * s).collect();
    let integrand: Vec<f64> =
        lw.iter().zip(&weights.s_cross).map(|(l, c)| l - q * q * c).collect();
    let expo_num: Vec<f64> = weights.s_plus.iter().map(|s| 0.5 * q * q * s).collect();

    let log_denom = logsumexp(&lw);
    let split = |keep: bool| -> f64 {
        let part: Vec<f64> = integrand
            .iter()
            .zip(&weights.confined)
            .filter(|(_, &c)| c == keep)
            .map(|(v, _)| *v)
            .collect();
        if part.is_empty() {
            0.0
        } else {
            (logsumexp(&part) - log_denom).exp()
        }
    };
    let confined_term = split(true);
    let escaped_term = split(false);
    let bound = confined_term + escaped_term;
    let gamma = (2.0 * log_mean_exp(&expo_num) - log_mean_exp(&lw)).exp();

    // Per-batch margins keep the bound/gamma correlation.
    let batches = BATCHES.min(n);
    let margins: Vec<f64> = (0..batches)
        .map(|b| {
            let lo = b * n / batches;
            let hi = (b + 1) * n / batches;
            let bound_b = (logsumexp(&integrand[lo..hi]) - logsumexp(&lw[lo..hi])).exp();
            let gamma_b =
                (2.0 * log_mean_exp(&expo_num[lo..hi]) - log_mean_exp(&lw[lo..hi])).exp();
            bound_b - gamma_b
        })
        .collect();
    let se_margin = if batches >= 2 {
        let mean = margins.iter().sum::<f64>() / batches as f64;
        let var =
            margins.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (batches - 1) as f64;
        (var / batches as f64).sqrt()
    } else {
        0.0
    };
    let ess = effective_sample_size(&lw);
    UpperBoundReport {
        confined_term,
        escaped_term,
        bound,
        gamma,
        se_margin,
        ess,
        reliable: ess >= ESS_FLOOR,
        holds: bound - gamma >= -3.0 * se_margin - 1e-12,
    }
}

// ---------------------------------------------------------------------------
// Tail estimate for the escape probability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailPoint {
    pub horizon: f64,
    /// Escape threshold T^lambda.
    pub threshold: f64,
    /// Empirical P(sup over grid times |s| <= T of |X_s| > T^lambda).
    pub empirical: f64,
    pub se: f64,
    /// Fitted-form bound T^{-lambda} sqrt(a + b T) e^{-T^{lambda (delta+1)}}.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailReport {
    pub lambda: f64,
    pub delta: f64,
    /// Envelope constants: a = max over horizons of (2e)^2 (f|f)_mu
    /// e^{2 T^{lambda(delta+1)}}, b the same with the Dirichlet form.
    pub a: f64,
    pub b: f64,
    /// Raw per-horizon envelope contributions (before taking the max).
    pub a_profile: Vec<f64>,
    pub b_profile: Vec<f64>,
    pub points: Vec<TailPoint>,
    pub pass: bool,
}

/// Radial shell cutoff: 0 inside radius threshold - 1, equal to |x| outside
/// radius threshold, linear radial ramp in the unit shell between. Its
/// super-level set { f >= threshold } is exactly { |x| >= threshold }.
fn shell_cutoff(grid: &Grid, threshold: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|x| {
            let c = grid.state_coord(x);
            let r = c[..grid.d].iter().map(|v| v * v).sum::<f64>().sqrt();
            r * (r - (threshold - 1.0)).clamp(0.0, 1.0)
        })
        .collect()
}

/// Compare the empirical escape probability P(A_T^c) against the bound
/// T^{-lambda} sqrt(a + b T) e^{-T^{lambda (delta+1)}}, with a and b fitted as
/// the envelope of the maximal-inequality machinery: the two-sided maximal
/// bound gives P(sup |f(X)| > T^lambda) <= (2e / T^lambda)
/// sqrt((f|f)_mu + T (f|Lf)_mu) for the shell cutoff f, and the envelope
/// constants absorb the quadratic forms' decay into the stated form.
pub fn tail_probability_check(
    tg: &TransformedGenerator,
    kernel: &TransitionKernel,
    lambda: f64,
    delta: f64,
    horizons: &[f64],
    paths: usize,
    seed: u64,
) -> Result<TailReport> {
    if !(0.0..1.0).contains(&lambda) || lambda <= 1.0 / (delta + 1.0) {
        return Err(Error::Config(format!(
            "lambda = {lambda} outside (1/(delta+1), 1) = ({}, 1)",
            1.0 / (delta + 1.0)
        )));
    }
    let four_e_sq = 4.0 * std::f64::consts::E * std::f64::consts::E;
    let mut a_profile = Vec::with_capacity(horizons.len());
    let mut b_profile = Vec::with_capacity(horizons.len());
    let mut raw = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let steps = horizon_steps(kernel.dt, t)?;
        let threshold = t.powf(lambda);
        let f = shell_cutoff(&tg.grid, threshold);
        let q0 = tg.weighted_inner(&f, &f);
        let q1 = tg.dirichlet_form(&f);
        let grow = (2.0 * t.powf(lambda * (delta + 1.0))).exp();
        a_profile.push(if q0 > 0.0 { four_e_sq * q0 * grow } else { 0.0 });
        b_profile.push(if q1 > 0.0 { four_e_sq * q1 * grow } else { 0.0 });

        let ens = sample_stationary_two_sided(kernel, paths, steps, seed);
        let escapes: Vec<f64> = (0..ens.n_paths())
            .into_par_iter()
            .map(|p| {
                let escaped = (-(steps as i64)..=steps as i64).any(|k| {
                    let c = tg.grid.state_coord(ens.state(p, k));
                    let r2: f64 = c[..tg.grid.d].iter().map(|v| v * v).sum();
                    r2.sqrt() > threshold
                });
                if escaped {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let (empirical, se) = mean_and_se(&escapes, BATCHES.min(escapes.len()));
        raw.push((t, threshold, empirical, se));
    }
    let a = a_profile.iter().copied().fold(0.0f64, f64::max);
    let b = b_profile.iter().copied().fold(0.0f64, f64::max);
    let points: Vec<TailPoint> = raw
        .into_iter()
        .map(|(t, threshold, empirical, se)| {
            let bound =
                t.powf(-lambda) * (a + b * t).sqrt() * (-t.powf(lambda * (delta + 1.0))).exp();
            let pass = empirical <= bound + 3.0 * se + 1e-12;
            TailPoint { horizon: t, threshold, empirical, se, bound, pass }
        })
        .collect();
    let pass = points.iter().all(|p| p.pass);
    Ok(TailReport { lambda, delta, a, b, a_profile, b_profile, points, pass })
}

// ---------------------------------------------------------------------------
// Stationarity and refinement diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Window half-width T = window_steps * dt.
    pub window: f64,
    /// Shift offsets in time units.
    pub shifts: Vec<f64>,
    pub log_z: Vec<f64>,
    pub se_log: Vec<f64>,
    /// Every shifted estimate within 3 combined SE of the centered one.
    pub pass: bool,
}

/// Estimate Z over the centered window [-T, T] and over time-shifted copies
/// [-T + s, T + s] carved out of a single longer stationary ensemble.
/// Stationarity makes every window an estimate of the same quantity.
pub fn z_shift_invariance_check(
    kernel: &TransitionKernel,
    table: &PairPotentialTable,
    q: f64,
    window_steps: usize,
    shift_steps: &[usize],
    paths: usize,
    seed: u64,
) -> Result<ShiftReport> {
    if window_steps == 0 {
        return Err(Error::Config("window must cover at least one step".into()));
    }
    if paths < BATCHES {
        return Err(Error::Config(format!("need at least {BATCHES} paths, got {paths}")));
    }
    let max_shift = shift_steps.iter().copied().max().unwrap_or(0);
    let half = window_steps + max_shift;
    let m = 2 * window_steps;
    validate_table(table, kernel.grid.len(), kernel.dt, m)?;
    let ens = sample_stationary_two_sided(kernel, paths, half, seed);
    let wf = trapezoid_weights(m, kernel.dt);

    let mut shifts = Vec::with_capacity(shift_steps.len() + 1);
    let mut log_z = Vec::with_capacity(shift_steps.len() + 1);
    let mut se_log = Vec::with_capacity(shift_steps.len() + 1);
    for &shift in std::iter::once(&0).chain(shift_steps.iter().filter(|&&s| s != 0)) {
        let base = shift as i64 - window_steps as i64;
        let expo: Vec<f64> = (0..ens.n_paths())
            .into_par_iter()
            .map(|p| {
                let states: Vec<usize> =
                    (0..=m).map(|u| ens.state(p, base + u as i64)).collect();
                let mut s_full = 0.0;
                for u in 0..=m {
                    for v in 0..=m {
                        s_full += wf[u] * wf[v] * table.values[u.abs_diff(v)][(states[u], states[v])];
                    }
                }
                0.5 * q * q * s_full
            })
            .collect();
        let (est, _) = log_estimate(&expo);
        shifts.push(shift as f64 * kernel.dt);
        log_z.push(est.log_value);
        se_log.push(est.se_log);
    }
    let pass = (1..log_z.len()).all(|i| {
        let combined = (se_log[0] * se_log[0] + se_log[i] * se_log[i]).sqrt();
        (log_z[i] - log_z[0]).abs() <= 3.0 * combined
    });
    Ok(ShiftReport { window: window_steps as f64 * kernel.dt, shifts, log_z, se_log, pass })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: LogEstimate,
    pub fine: LogEstimate,
    /// fine - coarse in log Z.
    pub difference: f64,
    pub combined_se: f64,
}

/// Trapezoid-refinement diagnostic: estimate log Z_T at step dt and dt/2 and
/// report the difference against the combined Monte Carlo error. The chain is
/// exact at every dt, so the difference isolates the time-quadrature and
/// path-resolution effect of the double integral.
pub fn trapezoid_refinement(
    coarse_kernel: &TransitionKernel,
    coarse_table: &PairPotentialTable,
    fine_kernel: &TransitionKernel,
    fine_table: &PairPotentialTable,
    q: f64,
    horizon: f64,
    paths: usize,
    seed: u64,
) -> Result<RefinementReport> {
    if (coarse_kernel.dt - 2.0 * fine_kernel.dt).abs() > 1e-9 * coarse_kernel.dt {
        return Err(Error::Config(format!(
            "refinement wants dt halved: coarse {} vs fine {}",
            coarse_kernel.dt, fine_kernel.dt
        )));
    }
    let run = |kernel: &TransitionKernel, table: &PairPotentialTable| -> Result<LogEstimate> {
        let steps = horizon_steps(kernel.dt, horizon)?;
        let ens = sample_stationary_two_sided(kernel, paths, steps, seed);
        let w = path_weights(&ens, &kernel.grid, table, 1.0)?;
        Ok(estimate_z(&w, q))
    };
    let coarse = run(coarse_kernel, coarse_table)?;
    let fine = run(fine_kernel, fine_table)?;
    Ok(RefinementReport {
        coarse,
        fine,
        difference: fine.log_value - coarse.log_value,
        combined_se: (coarse.se_log * coarse.se_log + fine.se_log * fine.se_log).sqrt(),
    })
}
