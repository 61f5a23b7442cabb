//! Coefficient bundles: particle metric A, field metric a, conformal factor c,
//! variable mass m, confining potential V, smeared charge profile, coupling q.
//!
//! A bundle is validated against a grid before any operator is assembled:
//! symmetry of the metric at every node, an ellipticity window
//! c0·1 <= A(x) <= c1·1 (same window for a and c), nonnegative mass and
//! potential. Optional certificates record the decay law of the mass
//! (m <= m0·<x>^-mu with mu > 1) and the growth law of the potential
//! (V >= b0·<x>^(2 delta) with delta > 0); operations that need those laws
//! check for the certificate instead of re-deriving it.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, MAX_DIM};

/// Japanese-bracket weight <x> = sqrt(1 + |x|^2).
pub fn bracket(x: &[f64]) -> f64 {
    (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// Scalar coefficient profiles, evaluable at any continuum point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalarField {
    Const(f64),
    /// scale * <x>^exponent (exponent may be negative: decaying mass).
    BracketPower { scale: f64, exponent: f64 },
    /// scale * |x|^2 — the bare harmonic well.
    Harmonic { scale: f64 },
    /// base + amp * exp(-|x|^2 / width^2); amp may be negative (a dip).
    RadialBump { base: f64, amp: f64, width: f64 },
    /// Values on the full grid (walls included), lexicographic. Continuum
    /// evaluation snaps to the nearest node; meant for assembly-level tests,
    /// not for diffusion drift.
    Tabulated { values: Vec<f64> },
}

impl ScalarField {
    pub fn eval(&self, x: &[f64], grid: &Grid) -> f64 {
        match self {
            ScalarField::Const(v) => *v,
            ScalarField::BracketPower { scale, exponent } => scale * bracket(x).powf(*exponent),
            ScalarField::Harmonic { scale } => scale * x.iter().map(|v| v * v).sum::<f64>(),
            ScalarField::RadialBump { base, amp, width } => {
                let r2 = x.iter().map(|v| v * v).sum::<f64>();
                base + amp * (-r2 / (width * width)).exp()
            }
            ScalarField::Tabulated { values } => values[full_node_near(grid, x)],
        }
    }
}

/// Matrix coefficient profiles (the metrics A and a). `Scalar` means f(x)·1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MatrixField {
    Scalar(ScalarField),
    /// Row-major d*d block per full-grid node.
    Tabulated { entries: Vec<f64> },
}

impl MatrixField {
    /// Evaluate as a 3x3 matrix; axes beyond the grid dimension are padded
    /// with the identity so square roots stay well defined.
    pub fn eval(&self, x: &[f64], grid: &Grid) -> Matrix3<f64> {
        let mut m = Matrix3::identity();
        match self {
            MatrixField::Scalar(f) => {
                let v = f.eval(x, grid);
                for ax in 0..grid.d {
                    m[(ax, ax)] = v;
                }
            }
            MatrixField::Tabulated { entries } => {
                let d = grid.d;
                let node = full_node_near(grid, x);
                for j in 0..d {
                    for k in 0..d {
                        m[(j, k)] = entries[node * d * d + j * d + k];
                    }
                }
            }
        }
        m
    }

    pub fn is_scalar_constant(&self) -> Option<f64> {
        match self {
            MatrixField::Scalar(ScalarField::Const(v)) => Some(*v),
            _ => None,
        }
    }
}

/// Nearest full-grid node to a continuum point (for tabulated fields).
fn full_node_near(grid: &Grid, x: &[f64]) -> usize {
    let mut idx = 0usize;
    for ax in 0..grid.d {
        let i = ((x[ax] + grid.r) / grid.dx()).round().clamp(0.0, (grid.n - 1) as f64) as usize;
        idx = idx * grid.n + i;
    }
    idx
}

/// Full-grid node coordinates (walls included), lexicographic.
pub fn full_coord(grid: &Grid, idx: usize) -> [f64; MAX_DIM] {
    let mut out = [0.0; MAX_DIM];
    let mut rem = idx;
    for ax in (0..grid.d).rev() {
        out[ax] = grid.axis_coord(rem % grid.n);
        rem /= grid.n;
    }
    out
}

/// Smeared, nonnegative, normalized charge profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChargeProfile {
    /// (2 pi w^2)^(-d/2) exp(-|y|^2 / (2 w^2)); normalized on the continuum.
    Gaussian { width: f64 },
}

impl ChargeProfile {
    /// Continuum density at displacement y from the charge center.
    pub fn density(&self, y: &[f64], d: usize) -> f64 {
        match self {
            ChargeProfile::Gaussian { width } => {
                let w2 = width * width;
                let r2 = y.iter().map(|v| v * v).sum::<f64>();
                (2.0 * std::f64::consts::PI * w2).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * w2)).exp()
            }
        }
    }

    /// |rho_hat(k)|^2 as a radial profile, with the convention
    /// rho_hat(k) = (2 pi)^(-d/2) * Int rho(y) e^{-i k.y} dy.
    pub fn fourier_sq_radial(&self, k: f64, d: usize) -> f64 {
        match self {
            ChargeProfile::Gaussian { width } => {
                (2.0 * std::f64::consts::PI).powi(-(d as i32)) * (-(width * width) * k * k).exp()
            }
        }
    }

    pub fn width(&self) -> f64 {
        match self {
            ChargeProfile::Gaussian { width } => *width,
        }
    }
}

/// Decay certificate for the mass: m(x) <= m0 <x>^-mu with mu > 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassDecayCert {
    pub m0: f64,
    pub mu: f64,
}

/// Growth certificate for the potential: V(x) >= b0 <x>^(2 delta), delta > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCert {
    pub b0: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub name: String,
    /// Particle-side metric A in -1/2 div(A grad).
    pub particle_metric: MatrixField,
    /// Field-side metric a in -c^-1 div(a grad) c^-1.
    pub field_metric: MatrixField,
    /// Conformal factor c.
    pub conformal: ScalarField,
    /// Variable boson mass m >= 0 (enters as m^2).
    pub mass: ScalarField,
    /// Confining particle potential V >= 0.
    pub potential: ScalarField,
    /// Smeared charge profile rho.
    pub charge: ChargeProfile,
    /// Coupling strength q.
    pub coupling: f64,
    /// Ellipticity window [c0, c1] for A, a and c.
    pub ellipticity: (f64, f64),
    pub mass_decay: Option<MassDecayCert>,
    pub growth: Option<GrowthCert>,
}

const WINDOW_SLACK: f64 = 1e-10;

impl CoefficientSpec {
    /// Stable content hash (hex) for provenance headers.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("coefficient spec serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Gate the bundle against a grid: symmetry and the ellipticity window at
    /// every full-grid node, nonnegative mass and potential, positive charge
    /// width, and the recorded decay/growth certificates.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let (c0, c1) = self.ellipticity;
        if !(c0 > 0.0) || !(c1 >= c0) {
            return Err(Error::Config(format!(
                "ellipticity window [{c0}, {c1}] must satisfy 0 < c0 <= c1"
            )));
        }
        if let Some(g) = &self.growth {
            if !(g.delta > 0.0) {
                return Err(Error::Config(format!(
                    "growth certificate needs delta > 0, got {}",
                    g.delta
                )));
            }
        }
        if let Some(mdc) = &self.mass_decay {
            if !(mdc.mu > 1.0) {
                return Err(Error::Config(format!(
                    "mass decay certificate needs mu > 1, got {}",
                    mdc.mu
                )));
            }
        }
        if self.charge.width() <= 0.0 {
            return Err(Error::Config("charge width must be positive".into()));
        }
        for node in 0..grid.len_full() {
            let x = full_coord(grid, node);
            let x = &x[..grid.d];
            for (label, field) in [("A", &self.particle_metric), ("a", &self.field_metric)] {
                let m = field.eval(x, grid);
                check_matrix_window(label, &m, grid.d, node, c0, c1)?;
            }
            let c = self.conformal.eval(x, grid);
            if c < c0 - WINDOW_SLACK || c > c1 + WINDOW_SLACK {
                return Err(Error::EllipticityViolation { node, value: c, lo: c0, hi: c1 });
            }
            let m = self.mass.eval(x, grid);
            if m < 0.0 {
                return Err(Error::NegativeField { field: "mass", node, value: m });
            }
            let v = self.potential.eval(x, grid);
            if v < 0.0 {
                return Err(Error::NegativeField { field: "potential", node, value: v });
            }
            if let Some(gc) = &self.growth {
                let bound = gc.b0 * bracket(x).powf(2.0 * gc.delta);
                if v < bound - 1e-12 {
                    return Err(Error::GrowthGate { node, value: v, bound });
                }
            }
            if let Some(mdc) = &self.mass_decay {
                let bound = mdc.m0 * bracket(x).powf(-mdc.mu);
                if m > bound + 1e-12 {
                    return Err(Error::Config(format!(
                        "mass decay certificate violated at node {node}: m = {m:.6e} > {bound:.6e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when both metrics and the conformal factor are identically 1
    /// (lets the diffusion skip drift evaluation).
    pub fn flat_metric(&self) -> bool {
        self.particle_metric.is_scalar_constant() == Some(1.0)
            && self.field_metric.is_scalar_constant() == Some(1.0)
            && self.conformal == ScalarField::Const(1.0)
    }
}

fn check_matrix_window(
    label: &str,
    m: &Matrix3<f64>,
    d: usize,
    node: usize,
    c0: f64,
    c1: f64,
) -> Result<()> {
    // Symmetry gate.
    for j in 0..d {
        for k in (j + 1)..d {
            let defect = (m[(j, k)] - m[(k, j)]).abs();
            if defect > 1e-12 {
                return Err(Error::NonSymmetricCoefficient { node, defect });
            }
        }
    }
    // Eigenvalues of the d x d block.
    let evs = block_eigenvalues(m, d);
    for ev in evs.iter().take(d) {
        if *ev < c0 - WINDOW_SLACK || *ev > c1 + WINDOW_SLACK {
            return Err(Error::EllipticityViolation { node, value: *ev, lo: c0, hi: c1 });
        }
    }
    let _ = label;
    Ok(())
}

/// Eigenvalues of the leading d x d block of a symmetric 3x3 matrix.
pub fn block_eigenvalues(m: &Matrix3<f64>, d: usize) -> [f64; 3] {
    let mut out = [0.0; 3];
    match d {
        1 => out[0] = m[(0, 0)],
        2 => {
            let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            let tr = a + c;
            let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
            out[0] = 0.5 * (tr - disc);
            out[1] = 0.5 * (tr + disc);
        }
        _ => {
            let sym = nalgebra::SymmetricEigen::new(*m);
            for (i, ev) in sym.eigenvalues.iter().enumerate() {
                out[i] = *ev;
            }
            out.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
        }
    }
    out
}

/// Symmetric square root of the leading d x d block (axes beyond d untouched).
pub fn matrix_sqrt(m: &Matrix3<f64>, d: usize) -> Matrix3<f64> {
    match d {
        1 => {
            let mut out = Matrix3::identity();
            out[(0, 0)] = m[(0, 0)].max(0.0).sqrt();
            out
        }
        _ => {
            let sym = nalgebra::SymmetricEigen::new(*m);
            let mut diag = Matrix3::zeros();
            for i in 0..3 {
                diag[(i, i)] = sym.eigenvalues[i].max(0.0).sqrt();
            }
            sym.eigenvectors * diag * sym.eigenvectors.transpose()
        }
    }
}

// ---------------------------------------------------------------------------
// Named presets. Each returns (grid, spec); the grid is the scale the preset
// was tuned at, callers may override.
// ---------------------------------------------------------------------------

pub mod presets {
    use super::*;

    fn base(name: &str) -> CoefficientSpec {
        CoefficientSpec {
            name: name.to_string(),
            particle_metric: MatrixField::Scalar(ScalarField::Const(1.0)),
            field_metric: MatrixField::Scalar(ScalarField::Const(1.0)),
            conformal: ScalarField::Const(1.0),
            mass: ScalarField::Const(0.0),
            potential: ScalarField::Const(0.0),
            charge: ChargeProfile::Gaussian { width: 0.5 },
            coupling: 0.0,
            ellipticity: (1.0, 1.0),
            mass_decay: None,
            growth: None,
        }
    }

    /// Flat metrics, zero mass and potential: the free lattice Laplacian.
    pub fn flat(d: usize) -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(d, 4.0, if d == 1 { 65 } else { 17 }).unwrap();
        (grid, base("flat"))
    }

    /// 1-d harmonic well V = |x|^2 on a wide box; the continuum ground energy
    /// of -1/2 d^2/dx^2 + x^2 is sqrt(2)/2.
    pub fn fk_harmonic() -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(1, 6.0, 128).unwrap();
        let mut s = base("fk-harmonic");
        s.potential = ScalarField::Harmonic { scale: 1.0 };
        s.mass = ScalarField::Const(1.0);
        (grid, s)
    }

    /// Certified confining well V = b0 <x>^(2 delta).
    pub fn confining(d: usize, b0: f64, delta: f64) -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(d, 4.0, if d == 1 { 65 } else { 17 }).unwrap();
        let mut s = base("confining");
        s.potential = ScalarField::BracketPower { scale: b0, exponent: 2.0 * delta };
        s.mass = ScalarField::Const(1.0);
        s.growth = Some(GrowthCert { b0, delta });
        (grid, s)
    }

    /// Isotropic metric dip: eigenvalues of A = a sweep [lo, hi].
    pub fn bump(d: usize, lo: f64, hi: f64) -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(d, 4.0, if d == 1 { 49 } else { 13 }).unwrap();
        let mut s = base("bump");
        let f = ScalarField::RadialBump { base: hi, amp: lo - hi, width: 1.5 };
        s.particle_metric = MatrixField::Scalar(f.clone());
        s.field_metric = MatrixField::Scalar(f);
        s.mass = ScalarField::BracketPower { scale: 1.0, exponent: -1.5 };
        s.ellipticity = (lo, hi);
        s.mass_decay = Some(MassDecayCert { m0: 1.0 + 1e-9, mu: 1.5 });
        (grid, s)
    }

    /// Conformal-factor bump with flat metrics.
    pub fn conformal_bump(d: usize) -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(d, 4.0, if d == 1 { 49 } else { 13 }).unwrap();
        let mut s = base("conformal-bump");
        s.conformal = ScalarField::RadialBump { base: 1.0, amp: 0.25, width: 1.5 };
        s.mass = ScalarField::BracketPower { scale: 1.0, exponent: -1.5 };
        s.ellipticity = (1.0, 1.25);
        s.mass_decay = Some(MassDecayCert { m0: 1.0 + 1e-9, mu: 1.5 });
        (grid, s)
    }

    /// Power-decaying mass m = m0 <x>^-mu (mu > 1), flat metrics.
    pub fn power_mass(d: usize, m0: f64, mu: f64) -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(d, 4.0, if d == 1 { 49 } else { 13 }).unwrap();
        let mut s = base("power-mass");
        s.mass = ScalarField::BracketPower { scale: m0, exponent: -mu };
        s.mass_decay = Some(MassDecayCert { m0: m0 + 1e-9, mu });
        (grid, s)
    }

    /// 3-d box for pair-potential studies: decaying mass mu = 2, certified
    /// confining well, Gaussian charge.
    pub fn pairpot3d() -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(3, 3.0, 8).unwrap();
        let mut s = base("pairpot3d");
        s.mass = ScalarField::BracketPower { scale: 1.0, exponent: -2.0 };
        s.mass_decay = Some(MassDecayCert { m0: 1.0 + 1e-9, mu: 2.0 });
        s.potential = ScalarField::BracketPower { scale: 1.0, exponent: 2.0 };
        s.growth = Some(GrowthCert { b0: 1.0, delta: 1.0 });
        s.charge = ChargeProfile::Gaussian { width: 0.6 };
        s.coupling = 1.0;
        (grid, s)
    }

    /// Shared tiny 4-node chain for exact-diagonalization cross checks.
    pub fn tiny_chain() -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(1, 2.5, 6).unwrap();
        let mut s = base("tiny-chain");
        s.mass = ScalarField::Const(1.0);
        s.potential = ScalarField::BracketPower { scale: 0.5, exponent: 2.0 };
        s.growth = Some(GrowthCert { b0: 0.5, delta: 1.0 });
        s.charge = ChargeProfile::Gaussian { width: 0.8 };
        s.coupling = 0.6;
        (grid, s)
    }

    /// 3-d massive branch of the overlap dichotomy: m = 1 everywhere.
    pub fn gamma_massive() -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(3, 5.0, 8).unwrap();
        let mut s = base("gamma-massive");
        s.mass = ScalarField::Const(1.0);
        s.potential = ScalarField::BracketPower { scale: 0.1, exponent: 2.0 };
        s.growth = Some(GrowthCert { b0: 0.1, delta: 1.0 });
        s.charge = ChargeProfile::Gaussian { width: 1.0 };
        s.coupling = 1.0;
        (grid, s)
    }

    /// 3-d decaying-mass branch (mu = 2) on a wide box so the field's
    /// infrared floor sits well below 1/T over the probed horizons.
    pub fn gamma_decaying() -> (Grid, CoefficientSpec) {
        let grid = Grid::dirichlet(3, 18.0, 8).unwrap();
        let mut s = base("gamma-decaying");
        s.mass = ScalarField::BracketPower { scale: 1.0, exponent: -2.0 };
        s.mass_decay = Some(MassDecayCert { m0: 1.0 + 1e-9, mu: 2.0 });
        s.potential = ScalarField::BracketPower { scale: 0.001, exponent: 2.0 };
        s.growth = Some(GrowthCert { b0: 0.001, delta: 1.0 });
        s.charge = ChargeProfile::Gaussian { width: 3.0 };
        s.coupling = 1.0;
        (grid, s)
    }

    /// Lookup table for the CLI.
    pub fn by_name(name: &str) -> Option<(Grid, CoefficientSpec)> {
        Some(match name {
            "flat" => flat(1),
            "flat2d" => flat(2),
            "flat3d" => flat(3),
            "fk-harmonic" => fk_harmonic(),
            "confining" => confining(1, 1.0, 1.0),
            "bump" => bump(1, 0.8, 1.25),
            "bump2d" => bump(2, 0.8, 1.25),
            "conformal-bump" => conformal_bump(1),
            "power-mass" => power_mass(1, 1.0, 2.0),
            "pairpot3d" => pairpot3d(),
            "tiny-chain" => tiny_chain(),
            "gamma-massive" => gamma_massive(),
            "gamma-decaying" => gamma_decaying(),
            _ => return None,
        })
    }

    pub const NAMES: &[&str] = &[
        "flat",
        "flat2d",
        "flat3d",
        "fk-harmonic",
        "confining",
        "bump",
        "bump2d",
        "conformal-bump",
        "power-mass",
        "pairpot3d",
        "tiny-chain",
        "gamma-massive",
        "gamma-decaying",
    ];
}

/// Periodic twin of a grid (same d, r, n) for conservation tests.
pub fn periodic_twin(grid: &Grid) -> Grid {
    Grid::new(grid.d, grid.r, grid.n, Boundary::Periodic).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn presets_all_validate() {
        for name in presets::NAMES {
            let (grid, spec) = presets::by_name(name).unwrap();
            spec.validate(&grid)
                .unwrap_or_else(|e| panic!("preset {name} failed validation: {e}"));
        }
    }

    #[test]
    fn growth_gate_accepts_certified_well_and_rejects_flat_exponent() {
        let (grid, spec) = presets::confining(1, 1.0, 1.0);
        assert!(spec.validate(&grid).is_ok());

        // delta = 0 is not a growth law.
        let mut bad = spec.clone();
        bad.growth = Some(GrowthCert { b0: 1.0, delta: 0.0 });
        assert!(bad.validate(&grid).is_err());

        // A potential below the certified floor is rejected with a node index.
        let mut lying = spec;
        lying.potential = ScalarField::Const(0.5);
        match lying.validate(&grid) {
            Err(Error::GrowthGate { .. }) => {}
            other => panic!("expected growth gate failure, got {other:?}"),
        }
    }

    #[test]
    fn ellipticity_window_rejects_escaping_eigenvalue() {
        let (grid, mut spec) = presets::flat(1);
        spec.particle_metric = MatrixField::Scalar(ScalarField::Const(3.0));
        match spec.validate(&grid) {
            Err(Error::EllipticityViolation { value, .. }) => {
                assert_relative_eq!(value, 3.0);
            }
            other => panic!("expected ellipticity violation, got {other:?}"),
        }
    }

    #[test]
    fn tabulated_matrix_symmetry_gate() {
        let grid = Grid::dirichlet(2, 1.0, 3).unwrap();
        let d = grid.d;
        let mut entries = vec![0.0; grid.len_full() * d * d];
        for node in 0..grid.len_full() {
            entries[node * 4] = 1.0;
            entries[node * 4 + 3] = 1.0;
        }
        entries[4 * 4 + 1] = 0.3; // break symmetry at node 4 only
        let mut spec = presets::flat(2).1;
        spec.particle_metric = MatrixField::Tabulated { entries };
        match spec.validate(&grid) {
            Err(Error::NonSymmetricCoefficient { node, .. }) => assert_eq!(node, 4),
            other => panic!("expected symmetry failure at node 4, got {other:?}"),
        }
    }

    #[test]
    fn gaussian_charge_is_normalized_on_continuum() {
        // 1-d quadrature of the width-0.5 profile.
        let profile = ChargeProfile::Gaussian { width: 0.5 };
        let h = 1e-3;
        let total: f64 = (-8000..8000)
            .map(|i| profile.density(&[i as f64 * h], 1) * h)
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn block_eigenvalues_match_hand_computation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.25;
        m[(0, 1)] = 0.75;
        m[(1, 0)] = 0.75;
        m[(1, 1)] = 1.25;
        let ev = block_eigenvalues(&m, 2);
        assert_relative_eq!(ev[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn matrix_sqrt_squares_back() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 2.0;
        m[(0, 1)] = 0.5;
        m[(1, 0)] = 0.5;
        m[(1, 1)] = 1.5;
        m[(2, 2)] = 0.75;
        let s = matrix_sqrt(&m, 3);
        let back = s * s.transpose();
        for j in 0..3 {
            for k in 0..3 {
                assert_relative_eq!(back[(j, k)], m[(j, k)], epsilon = 1e-10);
            }
        }
    }
}
