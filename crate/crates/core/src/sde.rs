//! Euler-Maruyama integration of the diffusion generated by the divergence
//! form operator (1/2) div(A grad): drift b_k = (1/2) sum_j d_j A^{jk},
//! diffusion matrix sigma with sigma sigma^T = A, specular reflection at the
//! box walls, and the Feynman-Kac estimator built on top of it.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::coeff::{matrix_sqrt, CoefficientSpec};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{path_rng, Direction};
use crate::stats::mean_and_se;

/// Step size for the central differences that evaluate metric derivatives in
/// the drift. The preset metrics are analytic, so this is far inside the
/// smooth regime.
const DRIFT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct SdeConfig {
    pub dt: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ContinuumPaths {
    pub d: usize,
    /// Times 0, dt, ..., steps*dt.
    pub t_grid: Vec<f64>,
    /// paths[p][j] = position after j steps (padded to 3 components).
    pub paths: Vec<Vec<[f64; 3]>>,
    /// Total wall reflections across the ensemble.
    pub reflections: u64,
}

/// Drift of the divergence-form diffusion at x: b_k = (1/2) sum_j d_j A^{jk}.
pub fn drift(spec: &CoefficientSpec, grid: &Grid, x: &[f64]) -> Vector3<f64> {
    let d = grid.d;
    let mut b = Vector3::zeros();
    let mut xp = [0.0f64; 3];
    let mut xm = [0.0f64; 3];
    xp[..d].copy_from_slice(&x[..d]);
    xm[..d].copy_from_slice(&x[..d]);
    for j in 0..d {
        xp[j] += DRIFT_FD_STEP;
        xm[j] -= DRIFT_FD_STEP;
        let ap = spec.particle_metric.eval(&xp[..d], grid);
        let am = spec.particle_metric.eval(&xm[..d], grid);
        for k in 0..d {
            b[k] += 0.5 * (ap[(j, k)] - am[(j, k)]) / (2.0 * DRIFT_FD_STEP);
        }
        xp[j] = x[j];
        xm[j] = x[j];
    }
    b
}

/// Diffusion matrix sigma(x) with sigma sigma^T = A(x).
pub fn diffusion_matrix(spec: &CoefficientSpec, grid: &Grid, x: &[f64]) -> Matrix3<f64> {
    matrix_sqrt(&spec.particle_metric.eval(x, grid), grid.d)
}

/// Reflect a coordinate into [-r, r], counting bounces.
fn reflect(mut v: f64, r: f64, bounces: &mut u64) -> f64 {
    while v < -r || v > r {
        if v > r {
            v = 2.0 * r - v;
        } else {
            v = -2.0 * r - v;
        }
        *bounces += 1;
    }
    v
}

/// Integrate the ensemble from a common start point. Flat metrics skip the
/// drift and matrix square root entirely (b = 0, sigma = 1).
pub fn simulate_diffusion(
    spec: &CoefficientSpec,
    grid: &Grid,
    x0: &[f64],
    cfg: &SdeConfig,
) -> Result<ContinuumPaths> {
    let d = grid.d;
    if x0.len() < d {
        return Err(Error::Config(format!("start point has {} coords, need {d}", x0.len())));
    }
    for &c in &x0[..d] {
        if c.abs() > grid.r {
            return Err(Error::Config(format!("start coordinate {c} outside the box [-{}, {}]", grid.r, grid.r)));
        }
    }
    let flat = spec.flat_metric();
    let sqrt_dt = cfg.dt.sqrt();

    let results: Vec<(Vec<[f64; 3]>, u64)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, Direction::Forward, p);
            let mut x = [0.0f64; 3];
            x[..d].copy_from_slice(&x0[..d]);
            let mut out = Vec::with_capacity(cfg.steps + 1);
            out.push(x);
            let mut bounces = 0u64;
            for _ in 0..cfg.steps {
                let mut z = [0.0f64; 3];
                for zk in z.iter_mut().take(d) {
                    *zk = rng.sample(StandardNormal);
                }
                if flat {
                    for k in 0..d {
                        x[k] = reflect(x[k] + sqrt_dt * z[k], grid.r, &mut bounces);
                    }
                } else {
                    let b = drift(spec, grid, &x[..d]);
                    let sigma = diffusion_matrix(spec, grid, &x[..d]);
                    for k in 0..d {
                        let mut noise = 0.0;
                        for j in 0..d {
                            noise += sigma[(k, j)] * z[j];
                        }
                        x[k] = reflect(x[k] + b[k] * cfg.dt + sqrt_dt * noise, grid.r, &mut bounces);
                    }
                }
                out.push(x);
            }
            (out, bounces)
        })
        .collect();

    let mut paths = Vec::with_capacity(cfg.paths);
    let mut reflections = 0u64;
    for (p, b) in results {
        paths.push(p);
        reflections += b;
    }
    let t_grid = (0..=cfg.steps).map(|j| j as f64 * cfg.dt).collect();
    Ok(ContinuumPaths { d, t_grid, paths, reflections })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FkEstimate {
    pub value: f64,
    pub se: f64,
    pub paths: usize,
    pub batches: usize,
    pub reflections: u64,
}

/// Fraction of the classical path used as a drift tilt. Full recentering
/// (1.0) would make the weights of a quadratic potential nearly
/// deterministic; damping keeps the log-weights at O(1) spread so the
/// reported standard error stays an informative yardstick for the estimate.
const TILT_FRACTION: f64 = 0.8;

/// Gradient of the potential by central differences. The shipped potentials
/// are smooth closed forms, so a fixed small step is accurate to ~1e-10.
fn potential_gradient(spec: &CoefficientSpec, grid: &Grid, x: &[f64], g: &mut [f64; 3]) {
    let d = grid.d;
    let h = 1e-5;
    let mut probe = [0.0f64; 3];
    probe[..d].copy_from_slice(x);
    for k in 0..d {
        probe[k] = x[k] + h;
        let vp = spec.potential.eval(&probe[..d], grid);
        probe[k] = x[k] - h;
        let vm = spec.potential.eval(&probe[..d], grid);
        probe[k] = x[k];
        g[k] = (vp - vm) / (2.0 * h);
    }
}

/// Minimizer of the Euclidean action int (|x'|^2/2 + V(x)) ds from x0 with a
/// free right endpoint, i.e. the solution of x'' = grad V(x), x(0) = x0,
/// x'(T) = 0, found by Newton shooting on the initial velocity (RK4 on the
/// step grid, finite-difference Jacobian). Returns the positions at the
/// step-grid nodes, or None when the metric is not flat, the potential is
/// flat at this start point, or the shooting does not converge — callers
/// fall back to the untilted sampler, so only variance depends on success.
fn classical_path(
    spec: &CoefficientSpec,
    grid: &Grid,
    x0: &[f64],
    cfg: &SdeConfig,
) -> Option<Vec<[f64; 3]>> {
    if !spec.flat_metric() {
        return None;
    }
    let d = grid.d;
    let dt = cfg.dt;
    let horizon = cfg.steps as f64 * dt;

    let integrate = |v0: &[f64; 3], store: bool| -> (Option<Vec<[f64; 3]>>, [f64; 3]) {
        let mut x = [0.0f64; 3];
        x[..d].copy_from_slice(&x0[..d]);
        let mut v = *v0;
        let mut path = if store { Some(vec![x]) } else { None };
        let mut g = [0.0f64; 3];
        let mut xs = [0.0f64; 3];
        for _ in 0..cfg.steps {
            // RK4 on (x, v) with v' = grad V(x).
            potential_gradient(spec, grid, &x[..d], &mut g);
            let (k1x, k1v) = (v, g);
            for k in 0..d {
                xs[k] = x[k] + 0.5 * dt * k1x[k];
            }
            potential_gradient(spec, grid, &xs[..d], &mut g);
            let mut k2x = [0.0f64; 3];
            for k in 0..d {
                k2x[k] = v[k] + 0.5 * dt * k1v[k];
            }
            let k2v = g;
            for k in 0..d {
                xs[k] = x[k] + 0.5 * dt * k2x[k];
            }
            potential_gradient(spec, grid, &xs[..d], &mut g);
            let mut k3x = [0.0f64; 3];
            for k in 0..d {
                k3x[k] = v[k] + 0.5 * dt * k2v[k];
            }
            let k3v = g;
            for k in 0..d {
                xs[k] = x[k] + dt * k3x[k];
            }
            potential_gradient(spec, grid, &xs[..d], &mut g);
            let mut k4x = [0.0f64; 3];
            for k in 0..d {
                k4x[k] = v[k] + dt * k3v[k];
            }
            let k4v = g;
            for k in 0..d {
                x[k] += dt / 6.0 * (k1x[k] + 2.0 * k2x[k] + 2.0 * k3x[k] + k4x[k]);
                v[k] += dt / 6.0 * (k1v[k] + 2.0 * k2v[k] + 2.0 * k3v[k] + k4v[k]);
            }
            if let Some(p) = path.as_mut() {
                p.push(x);
            }
        }
        (path, v)
    };

    let norm = |r: &[f64; 3]| r[..d].iter().map(|c| c * c).sum::<f64>().sqrt();
    let x0_norm = norm(&{
        let mut t = [0.0f64; 3];
        t[..d].copy_from_slice(&x0[..d]);
        t
    });
    let scale = 1.0 + x0_norm / horizon.max(1e-3);
    let tol = 1e-8 * scale;

    let mut v0 = [0.0f64; 3];
    for k in 0..d {
        v0[k] = -x0[k] / horizon.max(1e-3);
    }
    let mut residual = integrate(&v0, false).1;
    let mut converged = norm(&residual) <= tol;
    for _ in 0..50 {
        if converged {
            break;
        }
        // Finite-difference Jacobian of v(T) in the initial velocity.
        let fd = 1e-6 * scale;
        let mut jac = [[0.0f64; 3]; 3];
        for col in 0..d {
            let mut vp = v0;
            vp[col] += fd;
            let rp = integrate(&vp, false).1;
            for row in 0..d {
                jac[row][col] = (rp[row] - residual[row]) / fd;
            }
        }
        let delta = solve_small(&jac, &residual, d)?;
        // Damped Newton: halve the step until the residual shrinks.
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let mut trial = v0;
            for k in 0..d {
                trial[k] -= alpha * delta[k];
            }
            let r = integrate(&trial, false).1;
            if norm(&r) < norm(&residual) {
                v0 = trial;
                residual = r;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            return None;
        }
        converged = norm(&residual) <= tol;
    }
    if !converged {
        return None;
    }
    let path = integrate(&v0, true).0?;
    let moved = path
        .iter()
        .map(|p| (0..d).map(|k| (p[k] - x0[k]).abs()).fold(0.0f64, f64::max))
        .fold(0.0f64, f64::max);
    if moved <= 1e-10 * (1.0 + x0_norm) {
        return None;
    }
    Some(path)
}

/// Solve jac * delta = rhs for a d x d system (d <= 3) by Gaussian
/// elimination with partial pivoting; None on a (near-)singular matrix.
fn solve_small(jac: &[[f64; 3]; 3], rhs: &[f64; 3], d: usize) -> Option<[f64; 3]> {
    let mut a = [[0.0f64; 4]; 3];
    for r in 0..d {
        a[r][..d].copy_from_slice(&jac[r][..d]);
        a[r][3] = rhs[r];
    }
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..d {
            let m = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= m * a[col][c];
            }
        }
    }
    let mut delta = [0.0f64; 3];
    for col in (0..d).rev() {
        let mut s = a[col][3];
        for c in col + 1..d {
            s -= a[col][c] * delta[c];
        }
        delta[col] = s / a[col][col];
    }
    Some(delta)
}

/// Feynman-Kac functional E[ f(X_t) exp(-int_0^t V(X_s) ds) ] started at x0,
/// with the time integral on the trapezoid rule over the step grid and the
/// error from 32 batch means. On a flat metric the Brownian paths are
/// recentered on a damped classical least-action path and compensated by the
/// exact Girsanov factor — an importance-sampling tilt that leaves the mean
/// untouched for any tilt path while flattening the survival-weight spread
/// from starts far out in the potential. Deterministic in (spec, grid, x0,
/// cfg).
pub fn feynman_kac<F>(
    spec: &CoefficientSpec,
    grid: &Grid,
    x0: &[f64],
    cfg: &SdeConfig,
    f: F,
) -> Result<FkEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = grid.d;
    if x0.len() < d {
        return Err(Error::Config(format!("start point has {} coords, need {d}", x0.len())));
    }
    let flat = spec.flat_metric();
    let sqrt_dt = cfg.dt.sqrt();

    // Damped tilt increments and their Girsanov coefficients a_j, so that a
    // step moves by m_j + sqrt(dt) z_j and the weight picks up
    // exp(-a_j . z_j - |a_j|^2 / 2) with a_j = m_j / sqrt(dt).
    let tilt: Option<(Vec<[f64; 3]>, Vec<[f64; 3]>, f64)> =
        classical_path(spec, grid, x0, cfg).map(|path| {
            let mut m = Vec::with_capacity(cfg.steps);
            let mut a = Vec::with_capacity(cfg.steps);
            let mut half_a2 = 0.0;
            for j in 0..cfg.steps {
                let mut mj = [0.0f64; 3];
                let mut aj = [0.0f64; 3];
                for k in 0..d {
                    mj[k] = TILT_FRACTION * (path[j + 1][k] - path[j][k]);
                    aj[k] = mj[k] / sqrt_dt;
                    half_a2 += 0.5 * aj[k] * aj[k];
                }
                m.push(mj);
                a.push(aj);
            }
            (m, a, half_a2)
        });

    let results: Vec<(f64, u64)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, Direction::Forward, p);
            let mut x = [0.0f64; 3];
            x[..d].copy_from_slice(&x0[..d]);
            let mut bounces = 0u64;
            // Trapezoid accumulation of int V: half weight at both ends.
            let mut action = 0.5 * spec.potential.eval(&x[..d], grid);
            let mut log_w = match &tilt {
                Some((_, _, half_a2)) => -half_a2,
                None => 0.0,
            };
            for step in 0..cfg.steps {
                let mut z = [0.0f64; 3];
                for zk in z.iter_mut().take(d) {
                    *zk = rng.sample(StandardNormal);
                }
                if flat {
                    match &tilt {
                        Some((m, a, _)) => {
                            for k in 0..d {
                                log_w -= a[step][k] * z[k];
                                x[k] = reflect(
                                    x[k] + m[step][k] + sqrt_dt * z[k],
                                    grid.r,
                                    &mut bounces,
                                );
                            }
                        }
                        None => {
                            for k in 0..d {
                                x[k] = reflect(x[k] + sqrt_dt * z[k], grid.r, &mut bounces);
                            }
                        }
                    }
                } else {
                    let b = drift(spec, grid, &x[..d]);
                    let sigma = diffusion_matrix(spec, grid, &x[..d]);
                    for k in 0..d {
                        let mut noise = 0.0;
                        for j in 0..d {
                            noise += sigma[(k, j)] * z[j];
                        }
                        x[k] = reflect(x[k] + b[k] * cfg.dt + sqrt_dt * noise, grid.r, &mut bounces);
                    }
                }
                let v = spec.potential.eval(&x[..d], grid);
                action += if step + 1 == cfg.steps { 0.5 * v } else { v };
            }
            ((-cfg.dt * action + log_w).exp() * f(&x[..d]), bounces)
        })
        .collect();

    let weights: Vec<f64> = results.iter().map(|(w, _)| *w).collect();
    let reflections = results.iter().map(|(_, b)| *b).sum();
    let batches = 32.min(cfg.paths.max(2));
    let (value, se) = mean_and_se(&weights, batches);
    Ok(FkEstimate { value, se, paths: cfg.paths, batches, reflections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{presets, ScalarField};
    use approx::assert_relative_eq;

    #[test]
    fn free_motion_spreads_at_the_diffusive_rate() {
        // Flat metric, no potential: E|X_t - x0|^2 = d t.
        let (_, spec) = presets::flat(2);
        let grid = Grid::dirichlet(2, 8.0, 9).unwrap();
        let cfg = SdeConfig { dt: 1e-3, steps: 500, paths: 2000, seed: 11 };
        let ens = simulate_diffusion(&spec, &grid, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(ens.reflections, 0, "R=8 box should not be hit in t=0.5");
        let sq: Vec<f64> = ens
            .paths
            .iter()
            .map(|p| {
                let v = p.last().unwrap();
                v[0] * v[0] + v[1] * v[1]
            })
            .collect();
        let (mean, se) = mean_and_se(&sq, 32);
        let want = 2.0 * 0.5;
        assert!(
            (mean - want).abs() < 3.0 * se + 0.01,
            "E|X|^2 = {mean} +- {se}, want {want}"
        );
    }

    #[test]
    fn drift_matches_analytic_metric_gradient() {
        // A = a(r) I with a = base + amp exp(-r^2/w^2):
        // b_k = (1/2) da/dx_k = -amp e^{-r^2/w^2} x_k / w^2.
        let (_, spec) = presets::bump(2, 0.8, 1.25);
        let grid = Grid::dirichlet(2, 4.0, 9).unwrap();
        let x = [0.7, -1.3];
        let b = drift(&spec, &grid, &x);
        let (amp, w) = (0.8 - 1.25, 1.5f64);
        let r2 = x[0] * x[0] + x[1] * x[1];
        let scale = -amp * (-r2 / (w * w)).exp() / (w * w);
        for k in 0..2 {
            assert_relative_eq!(b[k], scale * x[k], epsilon = 1e-8);
        }
        // sigma sigma^T = A at the same point.
        let sigma = diffusion_matrix(&spec, &grid, &x);
        let a = spec.particle_metric.eval(&x, &grid);
        let back = sigma * sigma.transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(back[(i, j)], a[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn constant_potential_factorizes_exactly() {
        let (_, mut spec) = presets::flat(1);
        let grid = Grid::dirichlet(1, 6.0, 9).unwrap();
        let cfg = SdeConfig { dt: 1e-3, steps: 400, paths: 512, seed: 23 };
        let free = feynman_kac(&spec, &grid, &[0.2], &cfg, |_| 1.0).unwrap();
        spec.potential = ScalarField::Const(0.9);
        let damped = feynman_kac(&spec, &grid, &[0.2], &cfg, |_| 1.0).unwrap();
        // Same seed, same increments: weights scale by exp(-v0 t) path by path.
        let t = cfg.dt * cfg.steps as f64;
        assert_relative_eq!(damped.value, free.value * (-0.9 * t).exp(), epsilon = 1e-13);
    }

    #[test]
    fn reflections_are_counted_in_a_tight_box() {
        let (_, spec) = presets::flat(1);
        let grid = Grid::dirichlet(1, 0.05, 9).unwrap();
        let cfg = SdeConfig { dt: 1e-3, steps: 200, paths: 16, seed: 5 };
        let ens = simulate_diffusion(&spec, &grid, &[0.0], &cfg).unwrap();
        assert!(ens.reflections > 0);
        for p in &ens.paths {
            for x in p {
                assert!(x[0].abs() <= 0.05 + 1e-12);
            }
        }
    }

    #[test]
    fn harmonic_survival_matches_spectral_semigroup() {
        // E[e^{-int V}] for V = x^2 equals (e^{-tK} 1)(x0) on a matching grid.
        let (_, spec) = presets::fk_harmonic();
        let grid = Grid::dirichlet(1, 6.0, 97).unwrap();
        let k = crate::operator::assemble_k(&grid, &spec).unwrap();
        let sd = crate::spectral::eigendecompose(&k, crate::spectral::DENSE_CAP).unwrap();
        let t = 0.5;
        let g = sd.heat_matrix(t);
        let x0 = grid.nearest_state(&[0.0]);
        let oracle: f64 = (0..grid.len()).map(|y| g[(x0, y)]).sum();

        let cfg = SdeConfig { dt: 1e-3, steps: 500, paths: 4000, seed: 31 };
        let est = feynman_kac(&spec, &grid, &grid.state_coord(x0)[..1], &cfg, |_| 1.0).unwrap();
        assert!(
            (est.value - oracle).abs() < 3.0 * est.se + 0.025 * oracle,
            "FK {} +- {} vs spectral {}",
            est.value,
            est.se,
            oracle
        );
    }

    #[test]
    fn ensembles_are_deterministic_across_worker_counts() {
        let (_, spec) = presets::bump(1, 0.8, 1.25);
        let grid = Grid::dirichlet(1, 4.0, 9).unwrap();
        let cfg = SdeConfig { dt: 1e-3, steps: 50, paths: 64, seed: 97 };
        let a = simulate_diffusion(&spec, &grid, &[0.1], &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_diffusion(&spec, &grid, &[0.1], &cfg).unwrap());
        assert_eq!(a.paths, b.paths);
    }
}
