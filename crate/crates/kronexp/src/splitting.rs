//! Directional splittings of φ-functions of Kronecker sums.
//!
//! A split scheme approximates φ_ℓ(τ(A_d ⊕ ⋯ ⊕ A_1)) by a short sum of
//! Kronecker products of small φ-matrices,
//!
//! ```text
//! Σ_i η_i · φ_{ℓ_i}(τ α_{i,d} A_d) ⊗ ⋯ ⊗ φ_{ℓ_i}(τ α_{i,1} A_1),
//! ```
//!
//! whose action on a tensor costs one Tucker operator per term. The
//! single-term choice η = ℓ!^{d−1}, α = 1 is second-order accurate (exact
//! for d = 1); the tabulated two- and three-term schemes reach third order
//! by solving the moment conditions implemented in
//! [`order_condition_residuals`].
//!
//! Coefficients are stored as exact radicals (rational plus rational
//! multiple of an integer square root) and evaluated on demand, so the
//! tables carry no decimal rounding of their own.

use crate::phi::{factorial, phi_matrix};
use crate::scalar::Scalar;
use crate::tensor::{DirectionMatrix, Tensor};
use crate::{Error, OpCounters, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::io::Write;

/// Sign choice inside the coefficient radicals. The two branches give
/// mirror-image schemes of identical order; [`Branch::Plus`] is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

/// The tabulated third-order splitting families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitVariant {
    /// Two real-coefficient terms; only exists in dimension 2.
    TwoTermReal2D,
    /// Two complex-coefficient terms, any d ≥ 2.
    TwoTermComplex,
    /// Three real-coefficient terms, any d ≥ 2.
    ThreeTermReal,
}

impl SplitVariant {
    pub fn name(self) -> &'static str {
        match self {
            SplitVariant::TwoTermReal2D => "TwoTermReal2D",
            SplitVariant::TwoTermComplex => "TwoTermComplex",
            SplitVariant::ThreeTermReal => "ThreeTermReal",
        }
    }
}

/// One term of a split scheme: weight η_i, inner order ℓ_i and the
/// per-direction arguments α_{i,1},…,α_{i,d}.
#[derive(Debug, Clone)]
pub struct SplitTerm {
    pub eta: Complex64,
    pub inner_ell: usize,
    pub alphas: Vec<Complex64>,
}

/// A fully instantiated splitting: target order ℓ, dimension d and terms.
#[derive(Debug, Clone)]
pub struct SplitScheme {
    /// Table family, or `None` for the generic second-order scheme.
    pub variant: Option<SplitVariant>,
    pub branch: Branch,
    /// Target φ order.
    pub ell: usize,
    pub d: usize,
    pub terms: Vec<SplitTerm>,
}

impl SplitScheme {
    /// True when any coefficient has a nonzero imaginary part; drives the
    /// storage type of the precomputed operator.
    pub fn is_complex(&self) -> bool {
        self.terms.iter().any(|t| {
            t.eta.im != 0.0 || t.alphas.iter().any(|a| a.im != 0.0)
        })
    }

    /// Formal approximation order in τ of φ_ℓ(τK) minus the scheme action.
    pub fn order(&self) -> usize {
        if self.variant.is_some() {
            3
        } else {
            2
        }
    }
}

/// Exact coefficient value `rat_num/rat_den + root_num·√radicand/root_den`.
/// The branch flip negates the root term only.
#[derive(Debug, Clone, Copy)]
struct Radical {
    rat_num: i64,
    rat_den: i64,
    root_num: i64,
    root_den: i64,
    radicand: i64,
}

impl Radical {
    const ZERO: Radical = Radical::rat(0, 1);

    const fn rat(num: i64, den: i64) -> Self {
        Self {
            rat_num: num,
            rat_den: den,
            root_num: 0,
            root_den: 1,
            radicand: 0,
        }
    }

    const fn root(num: i64, den: i64, radicand: i64) -> Self {
        Self {
            rat_num: 0,
            rat_den: 1,
            root_num: num,
            root_den: den,
            radicand,
        }
    }

    const fn sum(rat: (i64, i64), root: (i64, i64), radicand: i64) -> Self {
        Self {
            rat_num: rat.0,
            rat_den: rat.1,
            root_num: root.0,
            root_den: root.1,
            radicand,
        }
    }

    fn value(self, branch: Branch) -> f64 {
        let sign = match branch {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        };
        self.rat_num as f64 / self.rat_den as f64
            + sign * self.root_num as f64 * (self.radicand as f64).sqrt()
                / self.root_den as f64
    }
}

/// Complex coefficient as a pair of radicals.
#[derive(Debug, Clone, Copy)]
struct Coeff {
    re: Radical,
    im: Radical,
}

impl Coeff {
    const fn real(re: Radical) -> Self {
        Self {
            re,
            im: Radical::ZERO,
        }
    }

    fn value(self, branch: Branch) -> Complex64 {
        Complex64::new(self.re.value(branch), self.im.value(branch))
    }
}

/// Table term before dimension instantiation. `alphas_2d` carries the two
/// distinct per-direction values of the 2-d real table; the d-dimensional
/// tables use one α for every direction. `eta_pow2_shift` is the exponent
/// offset k in the η factor 2^{d+k}.
struct TableTerm {
    eta: Coeff,
    eta_pow2_shift: Option<i64>,
    inner_ell: usize,
    alpha: Coeff,
    alpha_second: Option<Coeff>,
}

impl TableTerm {
    fn instantiate(&self, branch: Branch, d: usize) -> SplitTerm {
        let mut eta = self.eta.value(branch);
        if let Some(shift) = self.eta_pow2_shift {
            eta *= 2f64.powi(d as i32 + shift as i32);
        }
        let alphas = match self.alpha_second {
            None => vec![self.alpha.value(branch); d],
            Some(second) => {
                debug_assert_eq!(d, 2);
                vec![self.alpha.value(branch), second.value(branch)]
            }
        };
        SplitTerm {
            eta,
            inner_ell: self.inner_ell,
            alphas,
        }
    }
}

fn table_terms(variant: SplitVariant, ell: usize) -> Vec<TableTerm> {
    use Radical as R;
    match (variant, ell) {
        (SplitVariant::TwoTermReal2D, 1) => vec![
            TableTerm {
                eta: Coeff::real(R::rat(-5, 4)),
                eta_pow2_shift: None,
                inner_ell: 1,
                alpha: Coeff::real(R::sum((4, 3), (4, 15), 10)),
                alpha_second: Some(Coeff::real(R::sum((4, 3), (-4, 15), 10))),
            },
            TableTerm {
                eta: Coeff::real(R::rat(9, 1)),
                eta_pow2_shift: None,
                inner_ell: 2,
                alpha: Coeff::real(R::sum((16, 9), (2, 9), 10)),
                alpha_second: Some(Coeff::real(R::sum((16, 9), (-2, 9), 10))),
            },
        ],
        (SplitVariant::TwoTermReal2D, 2) => vec![
            TableTerm {
                eta: Coeff::real(R::rat(-4, 3)),
                eta_pow2_shift: None,
                inner_ell: 1,
                alpha: Coeff::real(R::sum((9, 8), (1, 8), 33)),
                alpha_second: Some(Coeff::real(R::sum((9, 8), (-1, 8), 33))),
            },
            TableTerm {
                eta: Coeff::real(R::rat(22, 3)),
                eta_pow2_shift: None,
                inner_ell: 2,
                alpha: Coeff::real(R::sum((3, 2), (3, 22), 33)),
                alpha_second: Some(Coeff::real(R::sum((3, 2), (-3, 22), 33))),
            },
        ],
        (SplitVariant::TwoTermComplex, 1) => vec![
            TableTerm {
                eta: Coeff {
                    re: R::rat(7, 4),
                    im: R::root(3, 2, 2),
                },
                eta_pow2_shift: None,
                inner_ell: 1,
                alpha: Coeff {
                    re: R::rat(12, 11),
                    im: R::root(-4, 11, 2),
                },
                alpha_second: None,
            },
            TableTerm {
                eta: Coeff {
                    re: R::rat(-3, 1),
                    im: R::root(-6, 1, 2),
                },
                eta_pow2_shift: Some(-2),
                inner_ell: 2,
                alpha: Coeff {
                    re: R::rat(4, 3),
                    im: R::root(-2, 3, 2),
                },
                alpha_second: None,
            },
        ],
        (SplitVariant::TwoTermComplex, 2) => vec![
            TableTerm {
                eta: Coeff {
                    re: R::rat(2, 3),
                    im: R::root(2, 3, 3),
                },
                eta_pow2_shift: None,
                inner_ell: 1,
                alpha: Coeff {
                    re: R::rat(3, 4),
                    im: R::root(-1, 4, 3),
                },
                alpha_second: None,
            },
            TableTerm {
                eta: Coeff {
                    re: R::rat(-2, 3),
                    im: R::root(-8, 3, 3),
                },
                eta_pow2_shift: Some(-2),
                inner_ell: 2,
                alpha: Coeff {
                    re: R::rat(6, 7),
                    im: R::root(-3, 7, 3),
                },
                alpha_second: None,
            },
        ],
        // Three terms, ℓ-pattern (1, 2, 1); the third term is the first
        // with the root sign flipped, and the middle term carries the
        // dimension factor 2^{d−3}. Radicands: 2991111 and 2391; the η
        // root denominators are pre-rationalized (675·2991111, 27·2391).
        (SplitVariant::ThreeTermReal, 1) => {
            let eta1 = Coeff::real(R::sum((2243, 1350), (440521, 2018999925), 2991111));
            let eta3 = Coeff::real(R::sum((2243, 1350), (-440521, 2018999925), 2991111));
            let alpha1 = Coeff::real(R::sum((15483, 15869), (3, 15869), 2991111));
            let alpha3 = Coeff::real(R::sum((15483, 15869), (-3, 15869), 2991111));
            vec![
                TableTerm {
                    eta: eta1,
                    eta_pow2_shift: None,
                    inner_ell: 1,
                    alpha: alpha1,
                    alpha_second: None,
                },
                TableTerm {
                    eta: Coeff::real(R::rat(-12544, 675)),
                    eta_pow2_shift: Some(-3),
                    inner_ell: 2,
                    alpha: Coeff::real(R::rat(45, 28)),
                    alpha_second: None,
                },
                TableTerm {
                    eta: eta3,
                    eta_pow2_shift: None,
                    inner_ell: 1,
                    alpha: alpha3,
                    alpha_second: None,
                },
            ]
        }
        (SplitVariant::ThreeTermReal, 2) => {
            let eta1 = Coeff::real(R::sum((19, 27), (151, 64557), 2391));
            let eta3 = Coeff::real(R::sum((19, 27), (-151, 64557), 2391));
            let alpha1 = Coeff::real(R::sum((363, 490), (3, 490), 2391));
            let alpha3 = Coeff::real(R::sum((363, 490), (-3, 490), 2391));
            vec![
                TableTerm {
                    eta: eta1,
                    eta_pow2_shift: None,
                    inner_ell: 1,
                    alpha: alpha1,
                    alpha_second: None,
                },
                TableTerm {
                    eta: Coeff::real(R::rat(-196, 27)),
                    eta_pow2_shift: Some(-3),
                    inner_ell: 2,
                    alpha: Coeff::real(R::rat(9, 7)),
                    alpha_second: None,
                },
                TableTerm {
                    eta: eta3,
                    eta_pow2_shift: None,
                    inner_ell: 1,
                    alpha: alpha3,
                    alpha_second: None,
                },
            ]
        }
        _ => Vec::new(),
    }
}

/// Tabulated third-order coefficients, [`Branch::Plus`] by default.
pub fn coefficients(variant: SplitVariant, ell: usize, d: usize) -> Result<SplitScheme> {
    coefficients_with_branch(variant, Branch::Plus, ell, d)
}

pub fn coefficients_with_branch(
    variant: SplitVariant,
    branch: Branch,
    ell: usize,
    d: usize,
) -> Result<SplitScheme> {
    let d_ok = match variant {
        SplitVariant::TwoTermReal2D => d == 2,
        SplitVariant::TwoTermComplex | SplitVariant::ThreeTermReal => d >= 2,
    };
    let ell_ok = ell == 1 || ell == 2;
    if !d_ok || !ell_ok {
        return Err(Error::UnsupportedScheme {
            variant: variant.name(),
            d,
            ell,
        });
    }
    let terms = table_terms(variant, ell)
        .iter()
        .map(|t| t.instantiate(branch, d))
        .collect();
    Ok(SplitScheme {
        variant: Some(variant),
        branch,
        ell,
        d,
        terms,
    })
}

/// Single-term second-order splitting: η = ℓ!^{d−1}, all α = 1. Exact for
/// d = 1, O(τ²) otherwise.
pub fn second_order_scheme(ell: usize, d: usize) -> Result<SplitScheme> {
    if ell == 0 || d == 0 {
        return Err(Error::UnsupportedScheme {
            variant: "SecondOrder",
            d,
            ell,
        });
    }
    let eta = factorial(ell).powi(d as i32 - 1);
    Ok(SplitScheme {
        variant: None,
        branch: Branch::Plus,
        ell,
        d,
        terms: vec![SplitTerm {
            eta: Complex64::new(eta, 0.0),
            inner_ell: ell,
            alphas: vec![Complex64::new(1.0, 0.0); d],
        }],
    })
}

/// Residuals |LHS − RHS| of every moment condition the scheme is supposed
/// to satisfy, in the order: degree 0; degree 1 per direction; squared
/// degree 2 per direction; mixed pairs μ < ν; and for three-term schemes
/// the cubic conditions (cubes per direction, then triples μ < ν < ξ).
///
/// A third-order scheme must zero all of them; the second-order scheme
/// zeros the degree-0/1 block only.
pub fn order_condition_residuals(scheme: &SplitScheme) -> Vec<f64> {
    let d = scheme.d;
    let ell = scheme.ell;
    let di = d as i32;
    let mut res = Vec::new();

    // Each condition has the form Σ_i η_i·w_i(term) = rhs, with w_i built
    // from the α monomial and factorial weights of the inner order.
    let sum_over_terms = |f: &dyn Fn(&SplitTerm) -> Complex64| -> Complex64 {
        scheme.terms.iter().map(|t| t.eta * f(t)).sum()
    };

    let deg0 = sum_over_terms(&|t| {
        Complex64::new(factorial(t.inner_ell).powi(-di), 0.0)
    });
    res.push((deg0 - 1.0 / factorial(ell)).norm());

    for mu in 0..d {
        let lhs = sum_over_terms(&|t| {
            t.alphas[mu]
                / (factorial(t.inner_ell).powi(di - 1) * factorial(t.inner_ell + 1))
        });
        res.push((lhs - 1.0 / factorial(ell + 1)).norm());
    }

    for mu in 0..d {
        let lhs = sum_over_terms(&|t| {
            t.alphas[mu] * t.alphas[mu]
                / (factorial(t.inner_ell).powi(di - 1) * factorial(t.inner_ell + 2))
        });
        res.push((lhs - 1.0 / factorial(ell + 2)).norm());
    }

    for mu in 0..d {
        for nu in mu + 1..d {
            let lhs = sum_over_terms(&|t| {
                t.alphas[mu] * t.alphas[nu]
                    / (factorial(t.inner_ell).powi(di - 2)
                        * factorial(t.inner_ell + 1).powi(2))
            });
            res.push((lhs - 2.0 / factorial(ell + 2)).norm());
        }
    }

    if scheme.terms.len() == 3 {
        for mu in 0..d {
            let lhs = sum_over_terms(&|t| {
                t.alphas[mu] * t.alphas[mu] * t.alphas[mu]
                    / (factorial(t.inner_ell).powi(di - 1) * factorial(t.inner_ell + 3))
            });
            res.push((lhs - 1.0 / factorial(ell + 3)).norm());
        }
        for mu in 0..d {
            for nu in mu + 1..d {
                for xi in nu + 1..d {
                    let lhs = sum_over_terms(&|t| {
                        t.alphas[mu] * t.alphas[nu] * t.alphas[xi]
                            / (factorial(t.inner_ell).powi(di - 3)
                                * factorial(t.inner_ell + 1).powi(3))
                    });
                    res.push((lhs - 6.0 / factorial(ell + 3)).norm());
                }
            }
        }
    }
    res
}

/// Every (variant, branch, ℓ, d) combination the library vouches for, up to
/// d = 4. The coefficient verification gate runs the full list.
pub fn exposed_schemes() -> Vec<SplitScheme> {
    let mut out = Vec::new();
    for branch in [Branch::Plus, Branch::Minus] {
        for ell in [1, 2] {
            out.push(
                coefficients_with_branch(SplitVariant::TwoTermReal2D, branch, ell, 2)
                    .expect("table scheme"),
            );
            for d in 2..=4 {
                for variant in [SplitVariant::TwoTermComplex, SplitVariant::ThreeTermReal] {
                    out.push(
                        coefficients_with_branch(variant, branch, ell, d)
                            .expect("table scheme"),
                    );
                }
            }
        }
    }
    out
}

/// Writes one scheme's coefficients as CSV rows with 30 significant digits:
/// `variant,branch,ell,d,term,inner_ell,coeff,mu,re,im`.
pub fn dump_coefficients_csv<W: Write>(scheme: &SplitScheme, w: &mut W) -> Result<()> {
    let variant = scheme.variant.map_or("SecondOrder", SplitVariant::name);
    let branch = match scheme.branch {
        Branch::Plus => "plus",
        Branch::Minus => "minus",
    };
    for (i, term) in scheme.terms.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},eta,,{:.29e},{:.29e}",
            variant,
            branch,
            scheme.ell,
            scheme.d,
            i + 1,
            term.inner_ell,
            term.eta.re,
            term.eta.im
        )?;
        for (mu, alpha) in term.alphas.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},alpha,{},{:.29e},{:.29e}",
                variant,
                branch,
                scheme.ell,
                scheme.d,
                i + 1,
                term.inner_ell,
                mu + 1,
                alpha.re,
                alpha.im
            )?;
        }
    }
    Ok(())
}

enum OperatorTerms {
    Real(Vec<OperatorTerm<f64>>),
    Complex(Vec<OperatorTerm<Complex64>>),
}

struct OperatorTerm<S: Scalar> {
    eta: S,
    mats: Vec<DMatrix<S>>,
}

/// Precomputed split operator: per term and direction the small matrices
/// φ_{ℓ_i}(τ α_{i,μ} A_μ), ready to apply to tensors by Tucker operators.
///
/// Storage is complex exactly when the scheme coefficients are; in that
/// case applying to a real tensor discards the imaginary part of the sum
/// (the terms are designed to cancel it to the order of the scheme) and
/// reports the largest magnitude discarded.
pub struct PhiSplitOperator {
    dims: Vec<usize>,
    terms: OperatorTerms,
    realify: bool,
}

impl PhiSplitOperator {
    pub fn precompute(
        scheme: &SplitScheme,
        tau: f64,
        as_: &[DirectionMatrix<f64>],
    ) -> Result<Self> {
        Self::precompute_with(scheme, tau, as_, &OpCounters::new())
    }

    pub fn precompute_with(
        scheme: &SplitScheme,
        tau: f64,
        as_: &[DirectionMatrix<f64>],
        counters: &OpCounters,
    ) -> Result<Self> {
        if as_.len() != scheme.d {
            return Err(Error::DirectionCount {
                expected: scheme.d,
                got: as_.len(),
            });
        }
        for (k, a) in as_.iter().enumerate() {
            if a.mu != k + 1 {
                return Err(Error::Invalid(format!(
                    "direction matrices out of order: position {} holds mu {}",
                    k + 1,
                    a.mu
                )));
            }
            if a.entries.nrows() != a.entries.ncols() {
                return Err(Error::NonSquare {
                    rows: a.entries.nrows(),
                    cols: a.entries.ncols(),
                });
            }
        }
        if !(tau >= 0.0) {
            return Err(Error::Invalid(format!("time step {tau} must be >= 0")));
        }
        let dims: Vec<usize> = as_.iter().map(|a| a.entries.nrows()).collect();
        counters.bump_phi_builds((scheme.terms.len() * scheme.d) as u64);

        let terms = if scheme.is_complex() {
            let mut terms = Vec::with_capacity(scheme.terms.len());
            for term in &scheme.terms {
                let mut mats = Vec::with_capacity(scheme.d);
                for (mu, a) in as_.iter().enumerate() {
                    let arg = a
                        .entries
                        .map(|x| Complex64::new(x, 0.0) * term.alphas[mu] * tau);
                    mats.push(phi_matrix(term.inner_ell, &arg)?);
                }
                terms.push(OperatorTerm {
                    eta: term.eta,
                    mats,
                });
            }
            OperatorTerms::Complex(terms)
        } else {
            let mut terms = Vec::with_capacity(scheme.terms.len());
            for term in &scheme.terms {
                let mut mats = Vec::with_capacity(scheme.d);
                for (mu, a) in as_.iter().enumerate() {
                    let arg = a.entries.map(|x| x * term.alphas[mu].re * tau);
                    mats.push(phi_matrix(term.inner_ell, &arg)?);
                }
                terms.push(OperatorTerm {
                    eta: term.eta.re,
                    mats,
                });
            }
            OperatorTerms::Real(terms)
        };
        Ok(Self {
            dims,
            terms,
            realify: scheme.is_complex(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn term_count(&self) -> usize {
        match &self.terms {
            OperatorTerms::Real(t) => t.len(),
            OperatorTerms::Complex(t) => t.len(),
        }
    }

    pub fn is_complex_storage(&self) -> bool {
        self.realify
    }

    /// Applies the operator: Σ_i η_i · tucker(T, P_i). Returns the result
    /// and the largest imaginary magnitude discarded (zero for real
    /// storage). Costs exactly one Tucker operator per term.
    pub fn apply(&self, t: &Tensor<f64>) -> Result<(Tensor<f64>, f64)> {
        self.apply_with(t, &OpCounters::new())
    }

    pub fn apply_with(
        &self,
        t: &Tensor<f64>,
        counters: &OpCounters,
    ) -> Result<(Tensor<f64>, f64)> {
        if t.dims() != self.dims.as_slice() {
            return Err(Error::Invalid(format!(
                "tensor extents {:?} do not match operator extents {:?}",
                t.dims(),
                self.dims
            )));
        }
        match &self.terms {
            OperatorTerms::Real(terms) => {
                let mut acc = Tensor::<f64>::zeros(&self.dims)?;
                for term in terms {
                    let part = t.tucker_with(&term.mats, counters)?;
                    acc.add_scaled(term.eta, &part);
                }
                Ok((acc, 0.0))
            }
            OperatorTerms::Complex(terms) => {
                let tc = t.promote();
                let mut acc = Tensor::<Complex64>::zeros(&self.dims)?;
                for term in terms {
                    let part = tc.tucker_with(&term.mats, counters)?;
                    acc.add_scaled(term.eta, &part);
                }
                let (re, imag) = acc.realify();
                Ok((re, imag))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::{one_norm, phi_action_dense};
    use crate::tensor::assemble_kronsum;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn max_residual(scheme: &SplitScheme) -> f64 {
        order_condition_residuals(scheme)
            .into_iter()
            .fold(0.0, f64::max)
    }

    #[test]
    fn two_term_real_2d_values() {
        let s = coefficients(SplitVariant::TwoTermReal2D, 1, 2).unwrap();
        assert_eq!(s.terms[0].eta, Complex64::new(-1.25, 0.0));
        assert_eq!(s.terms[1].eta, Complex64::new(9.0, 0.0));
        assert_eq!(s.terms[0].inner_ell, 1);
        assert_eq!(s.terms[1].inner_ell, 2);
        let r10 = 10f64.sqrt();
        assert!((s.terms[0].alphas[0].re - (4.0 / 3.0 + 4.0 * r10 / 15.0)).abs() < 1e-15);
        assert!((s.terms[0].alphas[1].re - (4.0 / 3.0 - 4.0 * r10 / 15.0)).abs() < 1e-15);
        assert!((s.terms[1].alphas[0].re - (16.0 / 9.0 + 2.0 * r10 / 9.0)).abs() < 1e-15);

        // The other branch swaps the two directions within each term.
        let m = coefficients_with_branch(SplitVariant::TwoTermReal2D, Branch::Minus, 1, 2)
            .unwrap();
        assert_eq!(m.terms[0].alphas[0], s.terms[0].alphas[1]);
        assert_eq!(m.terms[0].alphas[1], s.terms[0].alphas[0]);
    }

    #[test]
    fn two_term_complex_values_carry_dimension_factor() {
        let r3 = 3f64.sqrt();
        let s = coefficients(SplitVariant::TwoTermComplex, 2, 3).unwrap();
        assert!((s.terms[0].eta - Complex64::new(2.0 / 3.0, 2.0 * r3 / 3.0)).norm() < 1e-15);
        let eta2_expect = Complex64::new(-2.0 / 3.0, -8.0 * r3 / 3.0) * 2.0;
        assert!((s.terms[1].eta - eta2_expect).norm() < 1e-14);
        for mu in 0..3 {
            assert!(
                (s.terms[1].alphas[mu] - Complex64::new(6.0 / 7.0, -3.0 * r3 / 7.0)).norm()
                    < 1e-15
            );
        }

        // Opposite branch is the elementwise conjugate.
        let m = coefficients_with_branch(SplitVariant::TwoTermComplex, Branch::Minus, 2, 3)
            .unwrap();
        assert_eq!(m.terms[0].eta, s.terms[0].eta.conj());
        assert_eq!(m.terms[1].alphas[0], s.terms[1].alphas[0].conj());

        // The two terms are not conjugates of each other.
        assert!((s.terms[0].alphas[0].conj() - s.terms[1].alphas[0]).norm() > 0.1);
    }

    #[test]
    fn three_term_real_values() {
        let s = coefficients(SplitVariant::ThreeTermReal, 1, 3).unwrap();
        assert_eq!(
            s.terms.iter().map(|t| t.inner_ell).collect::<Vec<_>>(),
            vec![1, 2, 1]
        );
        assert_eq!(s.terms[1].alphas[0], Complex64::new(45.0 / 28.0, 0.0));
        assert!((s.terms[1].eta.re - (-12544.0 / 675.0)).abs() < 1e-12);
        // Terms 1 and 3 are the two roots of the same quadratic: their sum
        // is the rational part doubled.
        assert!(
            (s.terms[0].eta.re + s.terms[2].eta.re - 2.0 * 2243.0 / 1350.0).abs() < 1e-14
        );
        assert!(s.is_complex() == false);

        // d = 4 doubles the middle weight relative to d = 3.
        let s4 = coefficients(SplitVariant::ThreeTermReal, 1, 4).unwrap();
        assert!((s4.terms[1].eta.re - 2.0 * s.terms[1].eta.re).abs() < 1e-12);
    }

    #[test]
    fn unsupported_combinations_are_rejected() {
        assert!(coefficients(SplitVariant::TwoTermReal2D, 1, 3).is_err());
        assert!(coefficients(SplitVariant::TwoTermComplex, 3, 3).is_err());
        assert!(coefficients(SplitVariant::TwoTermComplex, 1, 1).is_err());
        assert!(coefficients(SplitVariant::ThreeTermReal, 1, 1).is_err());
    }

    #[test]
    fn all_exposed_schemes_satisfy_their_conditions() {
        let schemes = exposed_schemes();
        assert_eq!(schemes.len(), 28);
        for s in &schemes {
            let r = max_residual(s);
            assert!(
                r <= 1e-12,
                "{:?} branch {:?} ell {} d {}: residual {r:e}",
                s.variant,
                s.branch,
                s.ell,
                s.d
            );
        }
    }

    #[test]
    fn residual_count_matches_condition_system() {
        // Two-term, d = 3: 1 + 3 + 3 + 3 pair conditions.
        let s = coefficients(SplitVariant::TwoTermComplex, 1, 3).unwrap();
        assert_eq!(order_condition_residuals(&s).len(), 10);
        // Three-term, d = 3 adds 3 cubes and 1 triple.
        let t = coefficients(SplitVariant::ThreeTermReal, 1, 3).unwrap();
        assert_eq!(order_condition_residuals(&t).len(), 14);
        // Three-term, d = 2: 1 + 2 + 2 + 1 pairs + 2 cubes, no triples.
        let t2 = coefficients(SplitVariant::ThreeTermReal, 1, 2).unwrap();
        assert_eq!(order_condition_residuals(&t2).len(), 8);
    }

    #[test]
    fn perturbed_weight_shows_in_degree_zero_residual() {
        let mut s = coefficients(SplitVariant::TwoTermComplex, 1, 3).unwrap();
        s.terms[0].eta += Complex64::new(1e-3, 0.0);
        let res = order_condition_residuals(&s);
        // Degree-0 responds linearly: ε/ℓ₁!^d = 1e-3 here.
        assert!((res[0] - 1e-3).abs() < 1e-6, "res[0] = {:e}", res[0]);
    }

    #[test]
    fn second_order_scheme_weights_and_partial_conditions() {
        assert_eq!(
            second_order_scheme(1, 2).unwrap().terms[0].eta,
            Complex64::new(1.0, 0.0)
        );
        assert_eq!(
            second_order_scheme(2, 3).unwrap().terms[0].eta,
            Complex64::new(4.0, 0.0)
        );
        assert_eq!(
            second_order_scheme(2, 1).unwrap().terms[0].eta,
            Complex64::new(1.0, 0.0)
        );

        let s = second_order_scheme(1, 2).unwrap();
        let res = order_condition_residuals(&s);
        // Degree 0 and degree 1 hold exactly; the mixed pair condition
        // fails with residual |1/4 − 1/3| = 1/12.
        assert_eq!(res[0], 0.0);
        assert_eq!(res[1], 0.0);
        assert_eq!(res[2], 0.0);
        let mixed = res[5];
        assert!((mixed - 1.0 / 12.0).abs() < 1e-15);

        // d = 1 satisfies the whole system: the scheme is exact there.
        let exact = second_order_scheme(2, 1).unwrap();
        assert!(max_residual(&exact) <= 1e-15);
    }

    fn random_directions(dims: &[usize], rng: &mut impl Rng) -> Vec<DirectionMatrix<f64>> {
        dims.iter()
            .enumerate()
            .map(|(k, &n)| {
                DirectionMatrix::new(
                    k + 1,
                    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)),
                )
            })
            .collect()
    }

    #[test]
    fn precompute_at_tau_zero_gives_inverse_factorials() {
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let as_ = random_directions(&[3, 4], &mut rng);
        let scheme = coefficients(SplitVariant::TwoTermReal2D, 1, 2).unwrap();
        let op = PhiSplitOperator::precompute(&scheme, 0.0, &as_).unwrap();
        match &op.terms {
            OperatorTerms::Real(terms) => {
                for (term, spec_term) in terms.iter().zip(&scheme.terms) {
                    for (mu, m) in term.mats.iter().enumerate() {
                        let n = as_[mu].entries.nrows();
                        let want =
                            DMatrix::<f64>::identity(n, n) / factorial(spec_term.inner_ell);
                        assert!(one_norm(&(m - want)) <= f64::EPSILON);
                    }
                }
            }
            OperatorTerms::Complex(_) => panic!("real table must precompute real storage"),
        }
    }

    #[test]
    fn precompute_alpha_one_reduces_to_plain_phi() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let as_ = random_directions(&[3, 3], &mut rng);
        let scheme = second_order_scheme(1, 2).unwrap();
        let op = PhiSplitOperator::precompute(&scheme, 0.1, &as_).unwrap();
        match &op.terms {
            OperatorTerms::Real(terms) => {
                for (mu, m) in terms[0].mats.iter().enumerate() {
                    let direct = phi_matrix(1, &(&as_[mu].entries * 0.1)).unwrap();
                    assert_eq!(m, &direct);
                }
            }
            OperatorTerms::Complex(_) => panic!("second-order scheme is real"),
        }
    }

    #[test]
    fn apply_at_tau_zero_is_identity_for_ell_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let as_ = random_directions(&[3, 2, 2], &mut rng);
        let t = Tensor::from_fn(&[3, 2, 2], |_| rng.gen_range(-1.0..1.0)).unwrap();
        for variant in [SplitVariant::TwoTermComplex, SplitVariant::ThreeTermReal] {
            let scheme = coefficients(variant, 1, 3).unwrap();
            let op = PhiSplitOperator::precompute(&scheme, 0.0, &as_).unwrap();
            let (out, _) = op.apply(&t).unwrap();
            assert!(
                out.max_abs_diff(&t) < 1e-13,
                "{}: diff {}",
                variant.name(),
                out.max_abs_diff(&t)
            );
        }
        // Target order 2: the τ → 0 limit is T/2.
        let scheme = coefficients(SplitVariant::ThreeTermReal, 2, 3).unwrap();
        let op = PhiSplitOperator::precompute(&scheme, 0.0, &as_).unwrap();
        let (out, imag) = op.apply(&t).unwrap();
        let mut half = t.clone();
        half.scale(0.5);
        assert!(out.max_abs_diff(&half) < 1e-13);
        assert_eq!(imag, 0.0);
    }

    #[test]
    fn apply_counts_one_tucker_per_term() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let as_ = random_directions(&[3, 3], &mut rng);
        let t = Tensor::from_fn(&[3, 3], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let scheme = coefficients(SplitVariant::TwoTermComplex, 1, 2).unwrap();
        let counters = OpCounters::new();
        let op = PhiSplitOperator::precompute_with(&scheme, 0.05, &as_, &counters).unwrap();
        let _ = op.apply_with(&t, &counters).unwrap();
        let counts = counters.snapshot();
        assert_eq!(counts.tucker, 2);
        assert_eq!(counts.mu_mode, 4);
        assert_eq!(counts.phi_builds, 4);
    }

    #[test]
    fn split_error_shrinks_at_third_order() {
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let dims = [4usize, 4];
        let as_ = random_directions(&dims, &mut rng);
        let t = Tensor::from_fn(&dims, |_| rng.gen_range(-1.0..1.0)).unwrap();
        let k = assemble_kronsum(&as_.iter().map(|a| a.entries.clone()).collect::<Vec<_>>())
            .unwrap();
        let scheme = coefficients(SplitVariant::TwoTermComplex, 1, 2).unwrap();

        let err_at = |tau: f64| -> f64 {
            let op = PhiSplitOperator::precompute(&scheme, tau, &as_).unwrap();
            let (split, _) = op.apply(&t).unwrap();
            let dense = phi_action_dense(1, &(&k * tau), &t.vec()).unwrap();
            (split.vec() - dense).amax()
        };
        let e1 = err_at(0.1);
        let e2 = err_at(0.05);
        let ratio = e1 / e2;
        assert!(
            (5.0..12.0).contains(&ratio),
            "expected ~8x shrink per halving, got {ratio}"
        );
    }

    #[test]
    fn complex_scheme_imag_residual_shrinks_cubically() {
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        let dims = [4usize, 4, 4];
        let as_ = random_directions(&dims, &mut rng);
        let t = Tensor::from_fn(&dims, |_| rng.gen_range(-1.0..1.0)).unwrap();
        let scheme = coefficients(SplitVariant::TwoTermComplex, 1, 3).unwrap();
        let imag_at = |tau: f64| {
            let op = PhiSplitOperator::precompute(&scheme, tau, &as_).unwrap();
            op.apply(&t).unwrap().1
        };
        let i1 = imag_at(0.1);
        let i2 = imag_at(0.05);
        assert!(i1 > 0.0);
        let ratio = i1 / i2;
        assert!(
            (5.0..12.0).contains(&ratio),
            "imag residual should shrink ~8x, got {ratio}"
        );
    }

    #[test]
    fn csv_dump_round_trips_at_full_precision() {
        let scheme = coefficients(SplitVariant::ThreeTermReal, 1, 3).unwrap();
        let mut buf = Vec::new();
        dump_coefficients_csv(&scheme, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // 3 terms × (1 eta row + 3 alpha rows).
        assert_eq!(text.lines().count(), 12);
        let first = text.lines().next().unwrap();
        let fields: Vec<_> = first.split(',').collect();
        assert_eq!(fields[0], "ThreeTermReal");
        assert_eq!(fields[6], "eta");
        let re: f64 = fields[8].parse().unwrap();
        assert_eq!(re, scheme.terms[0].eta.re);
    }
}
