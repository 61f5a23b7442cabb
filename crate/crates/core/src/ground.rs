//! Ground state of the particle Hamiltonian and the ground-state transform
//! L = psi^{-1} (K - E0) psi, the generator of the stationary particle
//! process. The transform turns the Schroedinger semigroup into a Markov
//! semigroup: e^{-tL} 1 = 1 exactly, with reversible stationary weights
//! mu = psi^2.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spectral::SpectralDecomposition;

/// Minimal admissible spectral gap; below this the transform divides by an
/// ill-determined eigenvector.
pub const MIN_GAP: f64 = 1e-12;
/// Positivity floor for the Perron eigenvector.
pub const POSITIVITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct GroundState {
    pub grid: Grid,
    /// Lowest eigenvalue E0.
    pub energy: f64,
    /// Spectral gap lambda_1 - lambda_0.
    pub gap: f64,
    /// Ground eigenvector in the matrix convention (unit l2 norm, positive).
    pub psi: DVector<f64>,
    /// Kernel-convention eigenfunction psi / dx^{d/2} (approximates the
    /// continuum ground state, L2(dx)-normalized).
    pub psi_kernel: DVector<f64>,
    /// Stationary weights mu(x) = psi(x)^2; they sum to 1.
    pub weights: DVector<f64>,
}

/// Extract the ground state from a decomposition, enforcing a positive gap
/// and strict entrywise positivity of the Perron eigenvector.
pub fn ground_state(spec: &SpectralDecomposition) -> Result<GroundState> {
    let n = spec.len();
    if n < 2 {
        return Err(Error::Incompatible("ground-state transform needs at least 2 states".into()));
    }
    let energy = spec.eigenvalues[0];
    let gap = spec.eigenvalues[1] - energy;
    if gap <= MIN_GAP {
        return Err(Error::DegenerateGround { gap, min: MIN_GAP });
    }
    let mut psi = DVector::from_iterator(n, (0..n).map(|i| spec.basis[(i, 0)]));
    // Perron orientation: make the dominant component positive, then demand
    // every entry clear the floor.
    let (imax, _) = psi.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| {
        if v.abs() > acc.1 { (i, v.abs()) } else { acc }
    });
    if psi[imax] < 0.0 {
        psi.neg_mut();
    }
    for (i, v) in psi.iter().enumerate() {
        if *v <= POSITIVITY_FLOOR {
            return Err(Error::GroundNotPositive { node: i, value: *v });
        }
    }
    let vol = spec.grid.cell_volume();
    let psi_kernel = psi.map(|v| v / vol.sqrt());
    let weights = psi.map(|v| v * v);
    Ok(GroundState { grid: spec.grid, energy, gap, psi, psi_kernel, weights })
}

// ---------------------------------------------------------------------------
// Decay diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    /// Envelope exponent 1 + delta used for the fit.
    pub exponent: f64,
    /// Fitted coefficient: log psi ~ alpha - beta |x|^{1+delta}.
    pub beta: f64,
    pub alpha: f64,
    /// Mean residual of the inner-half fit evaluated on the outer half; a
    /// non-positive value means the tail decays at least as fast as the
    /// fitted envelope.
    pub outer_mean_residual: f64,
    /// Regression slope of log(-log(psi/psi_max)) on log|x| (2 for a
    /// Gaussian ground state).
    pub envelope_slope: f64,
    pub nodes_used: usize,
    pub pass: bool,
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Fit the stretched-exponential envelope exp(alpha - beta |x|^{1+delta}) to
/// the ground state on an outer radius window and check that the tail keeps
/// falling below the chord fitted on the window's inner half.
pub fn decay_check(gs: &GroundState, delta: f64) -> Result<DecayReport> {
    let exponent = 1.0 + delta;
    let r_max = (0..gs.grid.len()).map(|i| gs.grid.state_radius(i)).fold(0.0f64, f64::max);
    let mut pts: Vec<(f64, f64)> = Vec::new(); // (r, log psi_kernel)
    for i in 0..gs.grid.len() {
        let r = gs.grid.state_radius(i);
        let v = gs.psi_kernel[i];
        if r >= 0.35 * r_max && v > 1e-250 {
            pts.push((r, v.ln()));
        }
    }
    if pts.len() < 8 {
        return Err(Error::Config(format!(
            "decay window holds only {} usable nodes; refine the grid",
            pts.len()
        )));
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let xs: Vec<f64> = pts.iter().map(|(r, _)| r.powf(exponent)).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, l)| *l).collect();
    let (alpha, slope) = linear_fit(&xs, &ys);
    let beta = -slope;

    // Chord on the inner half, residual trend on the outer half.
    let half = pts.len() / 2;
    let (a_in, s_in) = linear_fit(&xs[..half], &ys[..half]);
    let outer_mean_residual = xs[half..]
        .iter()
        .zip(&ys[half..])
        .map(|(x, y)| y - (a_in + s_in * x))
        .sum::<f64>()
        / (pts.len() - half) as f64;

    // Envelope exponent from states already suppressed below half maximum.
    let psi_max = gs.psi_kernel.iter().cloned().fold(0.0f64, f64::max);
    let mut lr = Vec::new();
    let mut ll = Vec::new();
    for i in 0..gs.grid.len() {
        let r = gs.grid.state_radius(i);
        let v = gs.psi_kernel[i];
        if r >= 0.3 * r_max && v > 1e-250 && v < 0.5 * psi_max {
            lr.push(r.ln());
            ll.push((-(v / psi_max).ln()).ln());
        }
    }
    let envelope_slope = if lr.len() >= 4 { linear_fit(&lr, &ll).1 } else { f64::NAN };

    let pass = beta > 0.0 && outer_mean_residual <= 1e-9;
    Ok(DecayReport {
        exponent,
        beta,
        alpha,
        outer_mean_residual,
        envelope_slope,
        nodes_used: pts.len(),
        pass,
    })
}

// ---------------------------------------------------------------------------
// Ground-state transform
// ---------------------------------------------------------------------------

/// The transformed generator L[x, y] = (K - E0)[x, y] psi(y) / psi(x) and its
/// exact semigroup. L annihilates constants and is reversible for mu = psi^2.
#[derive(Debug, Clone)]
pub struct TransformedGenerator {
    pub grid: Grid,
    pub energy: f64,
    pub gap: f64,
    pub ground: GroundState,
    pub matrix: DMatrix<f64>,
    spec: SpectralDecomposition,
}

impl TransformedGenerator {
    pub fn new(spec: SpectralDecomposition) -> Result<Self> {
        let gs = ground_state(&spec)?;
        let n = spec.len();
        let mut matrix = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                let mut v = spec.matrix[(x, y)] * gs.psi[y] / gs.psi[x];
                if x == y {
                    v -= gs.energy;
                }
                matrix[(x, y)] = v;
            }
        }
        Ok(TransformedGenerator {
            grid: spec.grid,
            energy: gs.energy,
            gap: gs.gap,
            ground: gs,
            matrix,
            spec,
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// e^{-tL}[x, y] = sum_n e^{-t(lambda_n - E0)} e_n(x) e_n(y) psi(y)/psi(x):
    /// the similarity transform of the exactly symmetric heat matrix, so
    /// detailed balance holds to rounding.
    pub fn heat(&self, t: f64) -> DMatrix<f64> {
        let g = self.spec.apply_fn(|lam| (-t * (lam - self.energy)).exp());
        let n = self.len();
        let psi = &self.ground.psi;
        let mut p = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                p[(x, y)] = g[(x, y)] * psi[y] / psi[x];
            }
        }
        p
    }

    /// Symmetric heat matrix e^{-t(K - E0)} underlying `heat`.
    pub fn symmetric_heat(&self, t: f64) -> DMatrix<f64> {
        self.spec.apply_fn(|lam| (-t * (lam - self.energy)).exp())
    }

    /// Relaxation eigenvalues of L (nonnegative, first one zero).
    pub fn relaxation_rates(&self) -> Vec<f64> {
        self.spec.eigenvalues.iter().map(|l| l - self.energy).collect()
    }

    /// Stationary expectation sum_x mu(x) f(x).
    pub fn expectation(&self, f: &[f64]) -> f64 {
        f.iter().zip(self.ground.weights.iter()).map(|(a, m)| a * m).sum()
    }

    /// Weighted inner product (f | g)_mu.
    pub fn weighted_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(self.ground.weights.iter())
            .map(|((a, b), m)| a * b * m)
            .sum()
    }

    /// Dirichlet form (f | L f)_mu.
    pub fn dirichlet_form(&self, f: &[f64]) -> f64 {
        let n = self.len();
        let mut total = 0.0;
        for x in 0..n {
            let mut lf = 0.0;
            for y in 0..n {
                lf += self.matrix[(x, y)] * f[y];
            }
            total += self.ground.weights[x] * f[x] * lf;
        }
        total
    }
}
