//! Error type shared across the crate.
//!
//! Numerical *check* outcomes (verified / not-verified, pass / fail) are data,
//! not errors; `Error` is reserved for violated preconditions, malformed
//! inputs, and resource caps.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A coefficient matrix failed the symmetry gate at a node.
    #[error("coefficient matrix not symmetric at node {node}: |A - A^T| = {defect:.3e}")]
    NonSymmetricCoefficient { node: usize, defect: f64 },

    /// Ellipticity window violated: an eigenvalue of A (or a value of c)
    /// left [c0, c1] at a node.
    #[error("ellipticity violated at node {node}: value {value:.6e} outside [{lo:.6e}, {hi:.6e}]")]
    EllipticityViolation {
        node: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A field that must be nonnegative (mass, potential, charge density)
    /// dipped below zero at a node.
    #[error("{field} negative at node {node}: {value:.6e}")]
    NegativeField {
        field: &'static str,
        node: usize,
        value: f64,
    },

    /// Growth gate for the confining potential failed.
    #[error("potential growth gate failed at node {node}: V = {value:.6e} < {bound:.6e}")]
    GrowthGate { node: usize, value: f64, bound: f64 },

    /// Dense spectral work refused above the configured size cap.
    #[error("dense operator of size {size} exceeds cap {cap}")]
    DenseCapExceeded { size: usize, cap: usize },

    /// Assembled matrix failed an exact structural invariant (symmetry,
    /// positive semidefiniteness beyond ringing tolerance, ...).
    #[error("operator invariant violated: {0}")]
    OperatorInvariant(String),

    /// Eigendecomposition certificate failed (residual or orthonormality
    /// defect beyond tolerance).
    #[error("spectral certificate failed: {0}")]
    SpectralCertificate(String),

    /// Spectral gap too small to define the ground-state transform.
    #[error("spectral gap {gap:.3e} below {min:.3e}; ground state not isolated")]
    DegenerateGround { gap: f64, min: f64 },

    /// Ground-state positivity floor violated.
    #[error("ground state not positive at node {node}: {value:.6e}")]
    GroundNotPositive { node: usize, value: f64 },

    /// Negative eigenvalue beyond tolerance where a nonnegative operator was
    /// required (square roots, subordination).
    #[error("negative eigenvalue {value:.6e} beyond tolerance {tol:.1e} in {context}")]
    NegativeEigenvalue {
        value: f64,
        tol: f64,
        context: &'static str,
    },

    /// Transition-kernel construction failed (negative mass beyond ringing,
    /// or row normalization drifted too far before forcing).
    #[error("transition kernel invalid: {0}")]
    KernelConstruction(String),

    /// Configuration / input parsing problems.
    #[error("config error: {0}")]
    Config(String),

    /// Mismatched shapes, grids, or conventions between inputs.
    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    /// I/O wrapper.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Artifact refused: its recorded config hash differs from the expected one.
    #[error("config hash mismatch: artifact carries {found}, expected {expected}")]
    HashMismatch { found: String, expected: String },

    /// Malformed binary container.
    #[error("container format error: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, Error>;
