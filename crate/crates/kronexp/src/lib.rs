//! Tensor-oriented directional splitting for exponential integrators.
//!
//! The crate provides:
//!
//! * dense order-`d` tensors with the three core kernels of Kronecker-sum
//!   linear algebra: the μ-mode product, the Tucker operator and the action
//!   of a Kronecker sum ([`tensor`]);
//! * small dense matrix φ-functions (φ₀ = exp, φ₁, φ₂) via Padé scaling and
//!   squaring plus a slow series oracle ([`phi`]);
//! * second- and third-order directional splittings of φ-functions of
//!   Kronecker sums, with their coefficient tables and defining order
//!   conditions ([`splitting`]);
//! * the exponential Runge–Kutta integrators built on those splittings,
//!   together with dense small-system reference integrators
//!   ([`integrators`]);
//! * finite-difference Neumann discretizations of two reaction–diffusion
//!   models that develop Turing patterns, plus cosine-mode diagnostics
//!   ([`models`]).

pub mod integrators;
pub mod models;
pub mod phi;
pub mod scalar;
pub mod splitting;
pub mod tensor;

pub use integrators::{Method, ProblemSpec, RunOptions, RunReport};
pub use scalar::Scalar;
pub use splitting::{Branch, PhiSplitOperator, SplitScheme, SplitTerm, SplitVariant};
pub use tensor::{DirectionMatrix, Tensor};

pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;

use std::sync::atomic::{AtomicU64, Ordering};

/// Default size cap for the dense assembly oracles ([`tensor::assemble_kronprod`],
/// [`tensor::assemble_kronsum`], [`phi::phi_action_dense`] and the dense
/// reference integrators). Configurable via the `*_with_cap` variants.
pub const DEFAULT_ORACLE_CAP: usize = 4096;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("direction {mu}: matrix is {rows}x{cols} but tensor extent is {extent}")]
    DimensionMismatch {
        mu: usize,
        rows: usize,
        cols: usize,
        extent: usize,
    },
    #[error("direction index {mu} outside 1..={d}")]
    BadDirection { mu: usize, d: usize },
    #[error("expected {expected} direction matrices, got {got}")]
    DirectionCount { expected: usize, got: usize },
    #[error("assembled size {n} exceeds the dense oracle cap {cap}")]
    OracleCapExceeded { n: usize, cap: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("phi order {ell} outside supported range 0..={max}")]
    UnsupportedPhiOrder { ell: usize, max: usize },
    #[error("splitting variant {variant} does not support d={d} (target phi order {ell})")]
    UnsupportedScheme {
        variant: &'static str,
        d: usize,
        ell: usize,
    },
    #[error("phi series did not converge within {max_terms} terms")]
    SeriesDivergence { max_terms: usize },
    #[error("state became non-finite at step {step}")]
    NumericalBlowup { step: usize },
    #[error("invalid tensor blob: {0}")]
    BadBlob(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Running tally of the tensor-algebra operations performed by an
/// integration, matching the per-step cost accounting of the split schemes
/// (Tucker operators per step and one Kronecker-sum action per component).
///
/// Counters are atomic so a single tally can be shared across worker
/// threads; all increments use relaxed ordering (they are statistics, not
/// synchronization).
#[derive(Debug, Default)]
pub struct OpCounters {
    mu_mode: AtomicU64,
    tucker: AtomicU64,
    kronsum: AtomicU64,
    phi_builds: AtomicU64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            mu_mode: self.mu_mode.load(Ordering::Relaxed),
            tucker: self.tucker.load(Ordering::Relaxed),
            kronsum: self.kronsum.load(Ordering::Relaxed),
            phi_builds: self.phi_builds.load(Ordering::Relaxed),
        }
    }

    pub(crate) fn bump_mu_mode(&self, by: u64) {
        self.mu_mode.fetch_add(by, Ordering::Relaxed);
    }

    pub(crate) fn bump_tucker(&self) {
        self.tucker.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn bump_kronsum(&self) {
        self.kronsum.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn bump_phi_builds(&self, by: u64) {
        self.phi_builds.fetch_add(by, Ordering::Relaxed);
    }
}

/// Plain-value snapshot of [`OpCounters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mu_mode: u64,
    pub tucker: u64,
    pub kronsum: u64,
    pub phi_builds: u64,
}
