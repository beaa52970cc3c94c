//! Dense small-matrix φ-functions.
//!
//! φ₀ = exp and φ_ℓ(z) = Σ_{k≥0} z^k/(k+ℓ)! for ℓ ≥ 1. The production
//! kernels are [`expm`] (diagonal Padé of degree 13 with scaling and
//! squaring) and [`phi_matrix`] (one exp of a block-augmented matrix per
//! order). [`phi_taylor`] is a deliberately slow, independently coded
//! oracle: scaled Taylor summation undone by the φ doubling recurrence.
//! Production and oracle share no code path past the scalar type.

use crate::scalar::Scalar;
use crate::{Error, Result, DEFAULT_ORACLE_CAP};
use nalgebra::{DMatrix, DVector};

/// Highest φ order the augmented kernel accepts. The integrators need
/// ℓ ≤ 2; the headroom is for experiments with higher-order remainders.
pub const MAX_PHI_ORDER: usize = 4;

/// Padé degree-13 scaling threshold on ‖A‖₁.
const THETA_13: f64 = 5.37;

/// Validated φ order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PhiOrder(usize);

impl PhiOrder {
    pub fn new(ell: usize) -> Result<Self> {
        if ell > MAX_PHI_ORDER {
            return Err(Error::UnsupportedPhiOrder {
                ell,
                max: MAX_PHI_ORDER,
            });
        }
        Ok(Self(ell))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl From<PhiOrder> for usize {
    fn from(p: PhiOrder) -> usize {
        p.0
    }
}

/// Maximum absolute column sum.
pub fn one_norm<S: Scalar>(a: &DMatrix<S>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.modulus()).sum())
        .fold(0.0, f64::max)
}

fn check_square_finite<S: Scalar>(a: &DMatrix<S>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.iter().any(|x| !x.is_finite_scalar()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Matrix exponential: diagonal Padé of degree 13 on A/2^s with
/// s = max(0, ceil(log2(‖A‖₁/θ))), θ = 5.37, then s squarings.
pub fn expm<S: Scalar>(a: &DMatrix<S>) -> Result<DMatrix<S>> {
    check_square_finite(a)?;
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm <= THETA_13 {
        0u32
    } else {
        (norm / THETA_13).log2().ceil() as u32
    };
    let b = a.map(|x| x * S::from_real(0.5f64.powi(s as i32)));

    // Numerator coefficients of the [13/13] Padé approximant to exp; the
    // denominator uses the same values with alternating signs.
    const PADE13: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let c = |k: usize| S::from_real(PADE13[k]);

    let id = DMatrix::<S>::identity(n, n);
    let b2 = &b * &b;
    let b4 = &b2 * &b2;
    let b6 = &b2 * &b4;

    let u_inner = &b6 * (&b6 * c(13) + &b4 * c(11) + &b2 * c(9))
        + &b6 * c(7)
        + &b4 * c(5)
        + &b2 * c(3)
        + &id * c(1);
    let u = &b * u_inner;
    let v = &b6 * (&b6 * c(12) + &b4 * c(10) + &b2 * c(8))
        + &b6 * c(6)
        + &b4 * c(4)
        + &b2 * c(2)
        + &id * c(0);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut f = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Invalid("Padé denominator is singular".into()))?;
    for _ in 0..s {
        f = &f * &f;
    }
    Ok(f)
}

/// φ_ℓ(A) for ℓ ≤ [`MAX_PHI_ORDER`] via the block-augmented exponential:
/// with N = ℓ+1 blocks of size n, W has A in block (1,1) and identities on
/// the block superdiagonal; exp(W) carries φ_ℓ(A) in block (1,N). ℓ = 0
/// falls through to [`expm`].
///
/// The augmented part of W is nilpotent, so φ_ℓ(0) = I/ℓ! holds to machine
/// precision (the Padé approximant is exact on nilpotents of index ≤ 26).
pub fn phi_matrix<S: Scalar>(ell: usize, a: &DMatrix<S>) -> Result<DMatrix<S>> {
    if ell == 0 {
        return expm(a);
    }
    if ell > MAX_PHI_ORDER {
        return Err(Error::UnsupportedPhiOrder {
            ell,
            max: MAX_PHI_ORDER,
        });
    }
    check_square_finite(a)?;
    let n = a.nrows();
    let m = (ell + 1) * n;
    let mut w = DMatrix::<S>::zeros(m, m);
    w.view_mut((0, 0), (n, n)).copy_from(a);
    for blk in 0..ell {
        for i in 0..n {
            w[(blk * n + i, (blk + 1) * n + i)] = S::one();
        }
    }
    let e = expm(&w)?;
    Ok(e.view((0, ell * n), (n, n)).into_owned())
}

/// Series oracle for φ_ℓ(A): scales A by 2^{-s} until ‖A‖₁ ≤ 1/2, sums the
/// Taylor series of φ₀,…,φ_ℓ there, then undoes the scaling with
///
/// ```text
/// φ_ℓ(2B) = 2^{-ℓ} ( φ₀(B) φ_ℓ(B) + Σ_{j=1}^{ℓ} φ_j(B)/(ℓ−j)! ).
/// ```
///
/// Slow but simple; exists to cross-check the Padé kernels.
pub fn phi_taylor<S: Scalar>(ell: usize, a: &DMatrix<S>, tol: f64) -> Result<DMatrix<S>> {
    if tol < 1e-15 {
        return Err(Error::Invalid(format!(
            "phi_taylor tolerance {tol:e} below the attainable 1e-15"
        )));
    }
    check_square_finite(a)?;
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm <= 0.5 {
        0u32
    } else {
        (norm / 0.5).log2().ceil() as u32
    };
    let b = a.map(|x| x * S::from_real(0.5f64.powi(s as i32)));

    // φ_j(B) by direct summation; terms decay at least geometrically with
    // ratio ‖B‖₁ ≤ 1/2, so the 200-term guard is generous.
    const MAX_TERMS: usize = 200;
    let mut phis: Vec<DMatrix<S>> = Vec::with_capacity(ell + 1);
    for j in 0..=ell {
        let mut term = DMatrix::<S>::identity(n, n) * S::from_real(1.0 / factorial(j));
        let mut acc = term.clone();
        let mut converged = false;
        for k in 1..=MAX_TERMS {
            term = (&term * &b) * S::from_real(1.0 / (k + j) as f64);
            acc += &term;
            if one_norm(&term) <= tol * one_norm(&acc).max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::SeriesDivergence {
                max_terms: MAX_TERMS,
            });
        }
        phis.push(acc);
    }

    for _ in 0..s {
        let mut next: Vec<DMatrix<S>> = Vec::with_capacity(ell + 1);
        next.push(&phis[0] * &phis[0]);
        for l in 1..=ell {
            let mut acc = &phis[0] * &phis[l];
            for j in 1..=l {
                acc += &phis[j] * S::from_real(1.0 / factorial(l - j));
            }
            next.push(acc * S::from_real(0.5f64.powi(l as i32)));
        }
        phis = next;
    }
    Ok(phis.pop().expect("ell+1 orders computed"))
}

/// φ_ℓ(K)·v on an assembled dense matrix. Reference backend for the dense
/// baseline integrators; refuses matrices larger than the oracle cap.
pub fn phi_action_dense<S: Scalar>(
    ell: usize,
    k: &DMatrix<S>,
    v: &DVector<S>,
) -> Result<DVector<S>> {
    phi_action_dense_with_cap(ell, k, v, DEFAULT_ORACLE_CAP)
}

pub fn phi_action_dense_with_cap<S: Scalar>(
    ell: usize,
    k: &DMatrix<S>,
    v: &DVector<S>,
    cap: usize,
) -> Result<DVector<S>> {
    if k.nrows() > cap {
        return Err(Error::OracleCapExceeded {
            n: k.nrows(),
            cap,
        });
    }
    if v.len() != k.ncols() {
        return Err(Error::Invalid(format!(
            "vector length {} does not match matrix size {}",
            v.len(),
            k.ncols()
        )));
    }
    Ok(phi_matrix(ell, k)? * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_real(n: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = one_norm(&raw);
        raw * (scale / norm)
    }

    fn random_complex(n: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<Complex64> {
        let raw = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let norm = one_norm(&raw);
        raw * Complex64::new(scale / norm, 0.0)
    }

    fn rel_diff<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>) -> f64 {
        one_norm(&(a - b)) / one_norm(b).max(1.0)
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(4, 4);
        let e = expm(&z).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4));
    }

    #[test]
    fn expm_scalar_matches_exp() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let e = expm(&a).unwrap();
        assert!((e[(0, 0)] - 1.0f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn expm_matches_series_oracle_up_to_norm_20() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for &scale in &[0.3, 2.0, 8.0, 20.0] {
            let a = random_real(6, scale, &mut rng);
            let e = expm(&a).unwrap();
            let t = phi_taylor(0, &a, 1e-15).unwrap();
            assert!(
                rel_diff(&e, &t) < 1e-12,
                "scale {scale}: rel diff {}",
                rel_diff(&e, &t)
            );
        }
    }

    #[test]
    fn expm_complex_matches_series_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let a = random_complex(6, 10.0, &mut rng);
        let e = expm(&a).unwrap();
        let t = phi_taylor(0, &a, 1e-15).unwrap();
        assert!(rel_diff(&e, &t) < 1e-12);
    }

    #[test]
    fn expm_times_expm_of_negation_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let a = random_real(5, 5.0, &mut rng);
        let prod = expm(&a).unwrap() * expm(&(-&a)).unwrap();
        assert!(one_norm(&(prod - DMatrix::identity(5, 5))) < 1e-12);
    }

    #[test]
    fn expm_rejects_nonsquare_and_nonfinite() {
        let r = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(expm(&r), Err(Error::NonSquare { .. })));
        let mut a = DMatrix::<f64>::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(expm(&a), Err(Error::NonFinite)));
    }

    #[test]
    fn phi_at_zero_is_inverse_factorial_exactly() {
        let z = DMatrix::<f64>::zeros(3, 3);
        for ell in 1..=MAX_PHI_ORDER {
            let p = phi_matrix(ell, &z).unwrap();
            let expect = DMatrix::<f64>::identity(3, 3) / factorial(ell);
            let diff = one_norm(&(p - expect));
            assert!(diff <= f64::EPSILON, "ell {ell}: diff {diff:e}");
        }
    }

    #[test]
    fn phi1_scalar_matches_closed_form() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let p = phi_matrix(1, &a).unwrap();
        assert!((p[(0, 0)] - (1.0f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn phi_matrix_matches_series_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        for ell in 1..=2 {
            let a = random_real(5, 3.0, &mut rng);
            let p = phi_matrix(ell, &a).unwrap();
            let t = phi_taylor(ell, &a, 1e-15).unwrap();
            assert!(rel_diff(&p, &t) < 1e-12, "ell {ell}");

            let c = random_complex(5, 3.0, &mut rng);
            let pc = phi_matrix(ell, &c).unwrap();
            let tc = phi_taylor(ell, &c, 1e-15).unwrap();
            assert!(rel_diff(&pc, &tc) < 1e-12, "complex ell {ell}");
        }
    }

    #[test]
    fn phi_taylor_terminates_on_nilpotent() {
        // φ₁ of the 2×2 shift: series stops at the linear term, I + A/2.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let p = phi_taylor(1, &a, 1e-15).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(p, expect);
    }

    #[test]
    fn phi_matrix_exact_on_nilpotent() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let p = phi_matrix(1, &a).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(one_norm(&(p - expect)) <= 1e-15);
    }

    #[test]
    fn recurrence_ties_orders_together() {
        // φ_ℓ(A)·A = φ_{ℓ−1}(A) − I/(ℓ−1)! lifted to matrices.
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let a = random_real(5, 4.0, &mut rng);
        let id = DMatrix::<f64>::identity(5, 5);
        for ell in 1..=MAX_PHI_ORDER {
            let hi = phi_matrix(ell, &a).unwrap();
            let lo = phi_matrix(ell - 1, &a).unwrap();
            let resid = &hi * &a - &lo + &id / factorial(ell - 1);
            assert!(
                one_norm(&resid) <= 1e-12 * one_norm(&lo),
                "ell {ell}: residual {}",
                one_norm(&resid)
            );
        }
    }

    #[test]
    fn phi_order_bounds_enforced() {
        let a = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            phi_matrix(MAX_PHI_ORDER + 1, &a),
            Err(Error::UnsupportedPhiOrder { .. })
        ));
        assert!(PhiOrder::new(MAX_PHI_ORDER).is_ok());
        assert!(PhiOrder::new(MAX_PHI_ORDER + 1).is_err());
    }

    #[test]
    fn action_oracle_basics() {
        let k = DMatrix::<f64>::zeros(3, 3);
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let zero = DVector::<f64>::zeros(3);

        let out = phi_action_dense(1, &k, &zero).unwrap();
        assert_eq!(out, zero);

        // φ₁(0) = I.
        let out = phi_action_dense(1, &k, &v).unwrap();
        assert_eq!(out, v);

        let big = DMatrix::<f64>::zeros(5000, 5000);
        let bigv = DVector::<f64>::zeros(5000);
        assert!(matches!(
            phi_action_dense(1, &big, &bigv),
            Err(Error::OracleCapExceeded { .. })
        ));
    }

    #[test]
    fn taylor_rejects_unattainable_tolerance() {
        let a = DMatrix::<f64>::identity(2, 2);
        assert!(phi_taylor(0, &a, 1e-16).is_err());
    }
}
