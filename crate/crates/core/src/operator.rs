//! Divergence-form lattice operators.
//!
//! The raw assembler discretizes -sum_jk d_j(M^jk d_k .) on the state nodes:
//! diagonal terms with the symmetric flux stencil (arithmetic face-averaged
//! coefficient), mixed terms with the symmetric centered-difference form.
//! The combination is exactly symmetric and positive semidefinite for any
//! per-node symmetric M >= 0: the centered gradient is the mean of the two
//! face gradients, so Jensen's inequality puts every cross term under the
//! face-averaged flux terms.
//!
//! On top of the raw assembler:
//!   K0 = 1/2 * divform(A)                      (particle kinetic part)
//!   K  = K0 + diag(V)                          (confined particle)
//!   h0 = D_{1/c} * divform(a) * D_{1/c}        (field kinetic part, no 1/2)
//!   h  = h0 + diag(m^2)                        (field operator; omega = h^{1/2})

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coeff::{full_coord, CoefficientSpec, MatrixField, ScalarField};
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    K0,
    K,
    FieldH0,
    FieldH,
    Omega,
    GeneratorL,
    /// Particle-field Hamiltonian on a truncated product basis.
    Coupled,
}

#[derive(Debug, Clone)]
pub struct LatticeOperator {
    pub kind: OperatorKind,
    pub grid: Grid,
    pub matrix: DMatrix<f64>,
    /// Content hash of the coefficient bundle that produced the operator.
    pub spec_hash: String,
}

impl LatticeOperator {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Largest |M - M^T| entry, for the symmetry certificate.
    pub fn symmetry_defect(&self) -> f64 {
        let m = &self.matrix;
        let mut worst = 0.0f64;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Full-grid node index for a state node shifted by `shift` along each axis.
/// Returns the full index (always valid: states sit strictly inside the
/// walls) — used for coefficient evaluation at stencil points.
fn full_index_shifted(grid: &Grid, state: usize, shift: &[isize]) -> usize {
    let mi = grid.state_multi_index(state);
    let off = match grid.bc {
        Boundary::Dirichlet => 1isize,
        Boundary::Periodic => 0,
    };
    let mut idx = 0usize;
    for ax in 0..grid.d {
        let pos = (mi[ax] as isize + off + shift[ax]).rem_euclid(grid.n as isize) as usize;
        idx = idx * grid.n + pos;
    }
    idx
}

/// State index for a state node shifted by `shift`; `None` when it exits
/// through a Dirichlet wall.
fn state_shifted(grid: &Grid, state: usize, shift: &[isize]) -> Option<usize> {
    let m = grid.states_per_axis() as isize;
    let mi = grid.state_multi_index(state);
    let mut out = 0usize;
    for ax in 0..grid.d {
        let pos = mi[ax] as isize + shift[ax];
        let pos = match grid.bc {
            Boundary::Dirichlet => {
                if pos < 0 || pos >= m {
                    return None;
                }
                pos
            }
            Boundary::Periodic => pos.rem_euclid(m),
        };
        out = out * grid.states_per_axis() + pos as usize;
    }
    Some(out)
}

/// Coefficient entry M^{jk} at a full-grid node.
fn coeff_entry(grid: &Grid, field: &MatrixField, full_idx: usize, j: usize, k: usize) -> f64 {
    match field {
        MatrixField::Scalar(f) => {
            if j == k {
                let x = full_coord(grid, full_idx);
                f.eval(&x[..grid.d], grid)
            } else {
                0.0
            }
        }
        MatrixField::Tabulated { entries } => entries[full_idx * grid.d * grid.d + j * grid.d + k],
    }
}

/// Assemble -sum_jk d_j (M^jk d_k .) on the state nodes.
pub fn assemble_div_form(grid: &Grid, field: &MatrixField) -> Result<DMatrix<f64>> {
    let n = grid.len();
    if n == 0 {
        return Err(Error::Config("grid has no state nodes".into()));
    }
    if let MatrixField::Tabulated { entries } = field {
        let want = grid.len_full() * grid.d * grid.d;
        if entries.len() != want {
            return Err(Error::Incompatible(format!(
                "tabulated matrix field has {} entries, grid wants {}",
                entries.len(),
                want
            )));
        }
    }
    let dx2 = grid.dx() * grid.dx();
    let mut m = DMatrix::<f64>::zeros(n, n);

    for i in 0..n {
        // Diagonal terms: flux stencil with arithmetic face averages.
        for ax in 0..grid.d {
            for step in [-1isize, 1] {
                let mut shift = [0isize; 3];
                shift[ax] = step;
                let here = coeff_entry(grid, field, full_index_shifted(grid, i, &[0; 3]), ax, ax);
                let there = coeff_entry(grid, field, full_index_shifted(grid, i, &shift), ax, ax);
                let face = 0.5 * (here + there);
                m[(i, i)] += face / dx2;
                if let Some(nb) = state_shifted(grid, i, &shift) {
                    m[(i, nb)] -= face / dx2;
                }
            }
        }
        // Mixed terms: -d_j (M^jk d_k .), centered differences both levels.
        for j in 0..grid.d {
            for k in 0..grid.d {
                if j == k {
                    continue;
                }
                for sj in [-1isize, 1] {
                    let mut shift = [0isize; 3];
                    shift[j] = sj;
                    let a_mid = coeff_entry(grid, field, full_index_shifted(grid, i, &shift), j, k);
                    if a_mid == 0.0 {
                        continue;
                    }
                    for sk in [-1isize, 1] {
                        let mut shift = [0isize; 3];
                        shift[j] = sj;
                        shift[k] = sk;
                        if let Some(tgt) = state_shifted(grid, i, &shift) {
                            // -(sj * sk) * M^jk(i + sj e_j) / (4 dx^2)
                            m[(i, tgt)] -= (sj * sk) as f64 * a_mid / (4.0 * dx2);
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

fn diag_values(grid: &Grid, f: &ScalarField) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let x = grid.state_coord(i);
            f.eval(&x[..grid.d], grid)
        })
        .collect()
}

fn check_symmetry(kind: OperatorKind, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let defect = (m[(i, j)] - m[(j, i)]).abs();
            if defect > 1e-12 * scale {
                return Err(Error::OperatorInvariant(format!(
                    "{kind:?} symmetry defect {defect:.3e} at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// K0 = -1/2 sum_jk d_j A^jk d_k.
pub fn assemble_k0(grid: &Grid, spec: &CoefficientSpec) -> Result<LatticeOperator> {
    spec.validate(grid)?;
    let mut m = assemble_div_form(grid, &spec.particle_metric)?;
    m *= 0.5;
    check_symmetry(OperatorKind::K0, &m)?;
    Ok(LatticeOperator { kind: OperatorKind::K0, grid: *grid, matrix: m, spec_hash: spec.content_hash() })
}

/// K = K0 + diag(V).
pub fn assemble_k(grid: &Grid, spec: &CoefficientSpec) -> Result<LatticeOperator> {
    let mut op = assemble_k0(grid, spec)?;
    for (i, v) in diag_values(grid, &spec.potential).into_iter().enumerate() {
        op.matrix[(i, i)] += v;
    }
    op.kind = OperatorKind::K;
    Ok(op)
}

/// h0 = -c^-1 (sum_jk d_j a^jk d_k) c^-1 — note: no factor 1/2.
pub fn assemble_h0(grid: &Grid, spec: &CoefficientSpec) -> Result<LatticeOperator> {
    spec.validate(grid)?;
    let core = assemble_div_form(grid, &spec.field_metric)?;
    let cinv: Vec<f64> = diag_values(grid, &spec.conformal).iter().map(|c| 1.0 / c).collect();
    let n = core.nrows();
    let mut m = core;
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= cinv[i] * cinv[j];
        }
    }
    check_symmetry(OperatorKind::FieldH0, &m)?;
    Ok(LatticeOperator {
        kind: OperatorKind::FieldH0,
        grid: *grid,
        matrix: m,
        spec_hash: spec.content_hash(),
    })
}

/// h = h0 + diag(m^2).
pub fn assemble_h(grid: &Grid, spec: &CoefficientSpec) -> Result<LatticeOperator> {
    let mut op = assemble_h0(grid, spec)?;
    for (i, mv) in diag_values(grid, &spec.mass).into_iter().enumerate() {
        op.matrix[(i, i)] += mv * mv;
    }
    op.kind = OperatorKind::FieldH;
    Ok(op)
}

/// Potential values on the state nodes (used by the path-integral weight).
pub fn potential_on_states(grid: &Grid, spec: &CoefficientSpec) -> Vec<f64> {
    diag_values(grid, &spec.potential)
}

/// Flat Dirichlet Laplacian -Delta (no 1/2) on the same grid: the comparison
/// generator for Gaussian sandwich fits.
pub fn flat_laplacian(grid: &Grid) -> DMatrix<f64> {
    assemble_div_form(grid, &MatrixField::Scalar(ScalarField::Const(1.0)))
        .expect("flat assembly cannot fail on a validated grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::presets;
    use approx::assert_relative_eq;

    #[test]
    fn single_interior_node_flat_chain() {
        // d=1, A == 1, n=3, dx=1: one interior node, K0 = [1.0].
        let grid = Grid::dirichlet(1, 1.0, 3).unwrap();
        let spec = presets::flat(1).1;
        let op = assemble_k0(&grid, &spec).unwrap();
        assert_eq!(op.matrix.nrows(), 1);
        assert_relative_eq!(op.matrix[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn flat_chain_matches_tridiagonal() {
        let grid = Grid::dirichlet(1, 2.5, 6).unwrap(); // dx = 1, 4 interior
        let spec = presets::flat(1).1;
        let op = assemble_k0(&grid, &spec).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = match (i as isize - j as isize).abs() {
                    0 => 1.0,
                    1 => -0.5,
                    _ => 0.0,
                };
                assert_relative_eq!(op.matrix[(i, j)], want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn identity_metric_gives_five_point_laplacian() {
        let grid = Grid::dirichlet(2, 2.0, 5).unwrap(); // dx = 1, 3x3 interior
        let spec = presets::flat(2).1;
        let op = assemble_k0(&grid, &spec).unwrap();
        let n = grid.len();
        for i in 0..n {
            for j in 0..n {
                let mi = grid.state_multi_index(i);
                let mj = grid.state_multi_index(j);
                let dr = (mi[0] as isize - mj[0] as isize).abs()
                    + (mi[1] as isize - mj[1] as isize).abs();
                let want = match dr {
                    0 => 2.0,  // 1/2 * 4 / dx^2
                    1 => -0.5, // 1/2 * (-1) / dx^2
                    _ => 0.0,
                };
                assert_relative_eq!(op.matrix[(i, j)], want, epsilon = 1e-14);
            }
        }
    }

    /// Random per-node symmetric metric with eigenvalues in [0.5, 2]:
    /// assembled matrix must be symmetric and PSD up to ringing.
    #[test]
    fn random_metric_assembly_is_symmetric_psd() {
        use rand::{Rng, SeedableRng};
        let grid = Grid::dirichlet(2, 2.0, 7).unwrap();
        let d = grid.d;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut entries = vec![0.0; grid.len_full() * d * d];
        for node in 0..grid.len_full() {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (l1, l2): (f64, f64) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let (c, s) = (theta.cos(), theta.sin());
            // R diag(l1, l2) R^T
            entries[node * 4] = c * c * l1 + s * s * l2;
            entries[node * 4 + 1] = c * s * (l1 - l2);
            entries[node * 4 + 2] = c * s * (l1 - l2);
            entries[node * 4 + 3] = s * s * l1 + c * c * l2;
        }
        let mut spec = presets::flat(2).1;
        spec.particle_metric = MatrixField::Tabulated { entries };
        spec.ellipticity = (0.5, 2.0);
        let op = assemble_k0(&grid, &spec).unwrap();
        assert!(op.symmetry_defect() <= 1e-12);
        let eig = nalgebra::SymmetricEigen::new(op.matrix.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10, "min eigenvalue {min} below -1e-10");
    }

    #[test]
    fn harmonic_ground_energy_near_continuum() {
        // -1/2 d^2/dx^2 + x^2 has ground energy sqrt(2)/2.
        let (grid, spec) = presets::fk_harmonic();
        let op = assemble_k(&grid, &spec).unwrap();
        let eig = nalgebra::SymmetricEigen::new(op.matrix.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let want = std::f64::consts::SQRT_2 / 2.0;
        assert!((min - want).abs() / want < 0.02, "ground energy {min} vs {want}");
    }

    #[test]
    fn conformal_factor_conjugates_the_field_operator() {
        // c == 2 constant: h0 = divform(a) / 4.
        let grid = Grid::dirichlet(1, 2.5, 6).unwrap();
        let mut spec = presets::flat(1).1;
        spec.conformal = ScalarField::Const(2.0);
        spec.ellipticity = (1.0, 2.0);
        let h0 = assemble_h0(&grid, &spec).unwrap();
        let raw = assemble_div_form(&grid, &spec.field_metric).unwrap();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                assert_relative_eq!(h0.matrix[(i, j)], raw[(i, j)] / 4.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn field_operator_adds_mass_squared() {
        let (grid, spec) = presets::power_mass(1, 1.0, 2.0);
        let h0 = assemble_h0(&grid, &spec).unwrap();
        let h = assemble_h(&grid, &spec).unwrap();
        for i in 0..grid.len() {
            let x = grid.state_coord(i);
            let m = spec.mass.eval(&x[..1], &grid);
            assert_relative_eq!(h.matrix[(i, i)] - h0.matrix[(i, i)], m * m, epsilon = 1e-13);
        }
    }

    #[test]
    fn periodic_rows_sum_to_zero() {
        let grid = Grid::new(2, 2.0, 6, Boundary::Periodic).unwrap();
        let spec = presets::bump(2, 0.8, 1.25).1;
        let m = assemble_div_form(&grid, &spec.field_metric).unwrap();
        for i in 0..grid.len() {
            let s: f64 = (0..grid.len()).map(|j| m[(i, j)]).sum();
            assert!(s.abs() < 1e-12, "periodic row {i} sums to {s}");
        }
    }

    #[test]
    fn dirichlet_chain_eigenvalues_match_closed_form() {
        // K0 on 4 interior nodes: 1/2 * 2(1 - cos(k pi / 5)) / dx^2.
        let grid = Grid::dirichlet(1, 2.5, 6).unwrap();
        let spec = presets::flat(1).1;
        let op = assemble_k0(&grid, &spec).unwrap();
        let mut evs: Vec<f64> = nalgebra::SymmetricEigen::new(op.matrix.clone())
            .eigenvalues
            .iter()
            .cloned()
            .collect();
        evs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let dx2 = grid.dx() * grid.dx();
        for (k, ev) in evs.iter().enumerate() {
            let want = (1.0 - ((k + 1) as f64 * std::f64::consts::PI / 5.0).cos()) / dx2;
            assert_relative_eq!(*ev, want, epsilon = 1e-10);
        }
    }
}
