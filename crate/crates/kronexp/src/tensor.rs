//! Dense order-`d` tensors and the Kronecker-sum tensor kernels.
//!
//! A [`Tensor`] stores its entries with the first index fastest, so the flat
//! buffer *is* the column-stacked vectorization: `vec(T)[i₁ + n₁(i₂ + n₂(…))]
//! = t_{i₁…i_d}`. With that convention the Tucker operator applied along all
//! directions equals the action of the Kronecker product with the matrix
//! order reversed,
//!
//! ```text
//! (L_d ⊗ ⋯ ⊗ L_1) vec(T) = vec(T ×₁ L_1 ×₂ ⋯ ×_d L_d),
//! ```
//!
//! and the Kronecker sum A_d ⊕ ⋯ ⊕ A_1 acts as Σ_μ T ×_μ A_μ.
//!
//! The μ-mode product is realized as one dense matrix-matrix multiply per
//! contiguous slab of the buffer (a GEMM-shaped inner loop), never by a
//! global transposition. Directions are 1-based throughout, matching the
//! μ = 1,…,d convention of the splitting coefficient tables.

use crate::scalar::Scalar;
use crate::{Error, OpCounters, Result, DEFAULT_ORACLE_CAP};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::io::{Read, Write};

const BLOB_MAGIC: &[u8; 8] = b"KXTNSR01";

/// Dense order-`d` tensor with first-index-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    dims: Vec<usize>,
    data: Vec<S>,
}

/// One direction factor of a Kronecker sum: the matrix `A_μ` acting on the
/// μ-fibers of a tensor.
#[derive(Debug, Clone)]
pub struct DirectionMatrix<S: Scalar = f64> {
    pub mu: usize,
    pub entries: DMatrix<S>,
}

impl<S: Scalar> DirectionMatrix<S> {
    pub fn new(mu: usize, entries: DMatrix<S>) -> Self {
        Self { mu, entries }
    }

    pub fn extent(&self) -> usize {
        self.entries.nrows()
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::Invalid("tensor order d must be >= 1".into()));
    }
    if dims.iter().any(|&n| n == 0) {
        return Err(Error::Invalid("every tensor extent must be >= 1".into()));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let len = dims.iter().product();
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![S::zero(); len],
        })
    }

    pub fn from_data(dims: &[usize], data: Vec<S>) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::Invalid(format!(
                "data length {} does not match dims product {}",
                data.len(),
                len
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Builds a tensor by evaluating `f` on every multi-index, first index
    /// fastest.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> S) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (i, n) in idx.iter_mut().zip(dims) {
                *i += 1;
                if *i < *n {
                    break;
                }
                *i = 0;
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn get(&self, index: &[usize]) -> S {
        self.data[self.linear_index(index)]
    }

    pub fn linear_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        let mut lin = 0usize;
        let mut stride = 1usize;
        for (i, n) in index.iter().zip(&self.dims) {
            debug_assert!(i < n);
            lin += i * stride;
            stride *= n;
        }
        lin
    }

    /// Column-stacked vectorization; the storage order already is the vec
    /// convention, so this is a copy.
    pub fn vec(&self) -> DVector<S> {
        DVector::from_column_slice(&self.data)
    }

    pub fn unvec(dims: &[usize], v: &DVector<S>) -> Result<Self> {
        Self::from_data(dims, v.as_slice().to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite_scalar())
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().map(|x| x.modulus()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "tensor shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).modulus())
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, alpha: S) {
        for x in &mut self.data {
            *x *= alpha;
        }
    }

    /// `self += alpha * other`, elementwise in storage order.
    pub fn add_scaled(&mut self, alpha: S, other: &Self) {
        assert_eq!(self.dims, other.dims, "tensor shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += alpha * *y;
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.add_scaled(S::one(), other);
    }

    pub fn sub(&mut self, other: &Self) {
        self.add_scaled(-S::one(), other);
    }

    fn check_direction(&self, l: &DMatrix<S>, mu: usize) -> Result<()> {
        let d = self.dims.len();
        if mu == 0 || mu > d {
            return Err(Error::BadDirection { mu, d });
        }
        let extent = self.dims[mu - 1];
        if l.nrows() != l.ncols() || l.nrows() != extent {
            return Err(Error::DimensionMismatch {
                mu,
                rows: l.nrows(),
                cols: l.ncols(),
                extent,
            });
        }
        Ok(())
    }

    fn check_direction_list(&self, ls: &[DMatrix<S>]) -> Result<()> {
        if ls.len() != self.dims.len() {
            return Err(Error::DirectionCount {
                expected: self.dims.len(),
                got: ls.len(),
            });
        }
        for (nu, l) in ls.iter().enumerate() {
            self.check_direction(l, nu + 1)?;
        }
        Ok(())
    }

    /// μ-mode product `self ×_μ l`: multiplies `l` onto every μ-fiber.
    ///
    /// Cost O(N·n_μ), realized as one GEMM-shaped multiply per contiguous
    /// slab of the buffer.
    pub fn mu_mode_product(&self, l: &DMatrix<S>, mu: usize) -> Result<Self> {
        self.check_direction(l, mu)?;
        let mut out = vec![S::zero(); self.data.len()];
        mu_mode_acc(&self.dims, &self.data, l, mu, &mut out);
        Ok(Self {
            dims: self.dims.clone(),
            data: out,
        })
    }

    /// Tucker operator `self ×₁ ls[0] ×₂ ⋯ ×_d ls[d-1]`.
    ///
    /// Modes are applied in ascending order; μ-mode products along distinct
    /// directions commute, so the order does not affect the result.
    pub fn tucker(&self, ls: &[DMatrix<S>]) -> Result<Self> {
        self.tucker_with(ls, &OpCounters::new())
    }

    /// [`Self::tucker`] with cost accounting: bumps the Tucker counter by 1
    /// and the μ-mode counter by `d`.
    pub fn tucker_with(&self, ls: &[DMatrix<S>], counters: &OpCounters) -> Result<Self> {
        self.check_direction_list(ls)?;
        counters.bump_tucker();
        counters.bump_mu_mode(self.dims.len() as u64);
        let mut cur = self.data.clone();
        let mut next = vec![S::zero(); self.data.len()];
        for (nu, l) in ls.iter().enumerate() {
            next.iter_mut().for_each(|x| *x = S::zero());
            mu_mode_acc(&self.dims, &cur, l, nu + 1, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: cur,
        })
    }

    /// Action of the Kronecker sum: `Σ_μ self ×_μ as_[μ-1]`, equal to
    /// `(A_d ⊕ ⋯ ⊕ A_1) vec(self)` without assembling the matrix.
    pub fn kronsum_apply(&self, as_: &[DMatrix<S>]) -> Result<Self> {
        self.kronsum_apply_with(as_, &OpCounters::new())
    }

    /// [`Self::kronsum_apply`] with cost accounting: bumps the Kronecker-sum
    /// counter by 1 and the μ-mode counter by `d`.
    pub fn kronsum_apply_with(&self, as_: &[DMatrix<S>], counters: &OpCounters) -> Result<Self> {
        self.check_direction_list(as_)?;
        counters.bump_kronsum();
        counters.bump_mu_mode(self.dims.len() as u64);
        let mut out = vec![S::zero(); self.data.len()];
        for (nu, a) in as_.iter().enumerate() {
            mu_mode_acc(&self.dims, &self.data, a, nu + 1, &mut out);
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: out,
        })
    }

    /// Serializes to the flat little-endian blob: 16-byte header (magic,
    /// scalar kind, d), then the extents as u64, then the entries in storage
    /// order (complex entries as re, im pairs).
    pub fn write_blob<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(BLOB_MAGIC)?;
        w.write_all(&(S::COMPLEX as u32).to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &n in &self.dims {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.real().to_le_bytes())?;
            if S::COMPLEX {
                w.write_all(&x.imaginary().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_blob<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BLOB_MAGIC {
            return Err(Error::BadBlob("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let kind = u32::from_le_bytes(word);
        if kind != S::COMPLEX as u32 {
            return Err(Error::BadBlob(format!(
                "scalar kind {} does not match requested storage",
                kind
            )));
        }
        r.read_exact(&mut word)?;
        let d = u32::from_le_bytes(word) as usize;
        if d == 0 || d > 64 {
            return Err(Error::BadBlob(format!("implausible order {}", d)));
        }
        let mut dims = Vec::with_capacity(d);
        let mut qword = [0u8; 8];
        for _ in 0..d {
            r.read_exact(&mut qword)?;
            dims.push(u64::from_le_bytes(qword) as usize);
        }
        check_dims(&dims).map_err(|e| Error::BadBlob(e.to_string()))?;
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut qword)?;
            let re = f64::from_le_bytes(qword);
            let im = if S::COMPLEX {
                r.read_exact(&mut qword)?;
                f64::from_le_bytes(qword)
            } else {
                0.0
            };
            data.push(S::from_re_im(re, im));
        }
        Ok(Self { dims, data })
    }
}

impl Tensor<f64> {
    /// Promotes real storage to complex (zero imaginary parts).
    pub fn promote(&self) -> Tensor<Complex64> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    /// CSV form used by the experiment CLI: one line per fastest-index
    /// fiber, fibers in storage order.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let n1 = self.dims[0];
        for fiber in self.data.chunks(n1) {
            let mut first = true;
            for x in fiber {
                if !first {
                    write!(w, ",")?;
                }
                write!(w, "{:.16e}", x)?;
                first = false;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

impl Tensor<Complex64> {
    /// Discards imaginary parts, reporting the largest one discarded.
    pub fn realify(&self) -> (Tensor<f64>, f64) {
        let mut max_imag = 0.0f64;
        let data = self
            .data
            .iter()
            .map(|z| {
                max_imag = max_imag.max(z.im.abs());
                z.re
            })
            .collect();
        (
            Tensor {
                dims: self.dims.clone(),
                data,
            },
            max_imag,
        )
    }
}

/// Accumulates `out += T ×_μ L` for the slab decomposition of the
/// first-index-fastest layout. With P = n₁⋯n_{μ−1} and Q = n_{μ+1}⋯n_d the
/// buffer factors as Q contiguous slabs of shape P×n_μ (column-major); for
/// μ = 1 the whole buffer is one n₁×(N/n₁) matrix and the slab multiply
/// degenerates to a single GEMM from the left.
fn mu_mode_acc<S: Scalar>(dims: &[usize], data: &[S], l: &DMatrix<S>, mu: usize, out: &mut [S]) {
    let n = dims[mu - 1];
    let p: usize = dims[..mu - 1].iter().product();
    let ld = l.as_slice(); // column-major: ld[i + n*j] = l(i, j)

    if p == 1 {
        // out_mat += L * data_mat, data_mat is n×(N/n) column-major.
        for (ccol, bcol) in out.chunks_mut(n).zip(data.chunks(n)) {
            for (j, &bj) in bcol.iter().enumerate() {
                let lcol = &ld[j * n..(j + 1) * n];
                for (c, &a) in ccol.iter_mut().zip(lcol) {
                    *c += a * bj;
                }
            }
        }
    } else {
        // Per slab: C_q += M_q * Lᵀ, M_q is P×n column-major.
        let slab = p * n;
        for (cs, ms) in out.chunks_mut(slab).zip(data.chunks(slab)) {
            for i in 0..n {
                let ccol = &mut cs[i * p..(i + 1) * p];
                for j in 0..n {
                    let w = ld[i + n * j];
                    let mcol = &ms[j * p..(j + 1) * p];
                    for (c, &m) in ccol.iter_mut().zip(mcol) {
                        *c += m * w;
                    }
                }
            }
        }
    }
}

/// Explicit Kronecker product `L_d ⊗ ⋯ ⊗ L_1`, consistent with the vec
/// convention of [`Tensor`]. Oracle for cross-validation; refuses to
/// assemble more than `cap` rows.
pub fn assemble_kronprod_with_cap<S: Scalar>(
    ls: &[DMatrix<S>],
    cap: usize,
) -> Result<DMatrix<S>> {
    if ls.is_empty() {
        return Err(Error::DirectionCount {
            expected: 1,
            got: 0,
        });
    }
    for l in ls {
        if l.nrows() != l.ncols() {
            return Err(Error::NonSquare {
                rows: l.nrows(),
                cols: l.ncols(),
            });
        }
    }
    let n: usize = ls.iter().map(|l| l.nrows()).product();
    if n > cap {
        return Err(Error::OracleCapExceeded { n, cap });
    }
    let mut acc = ls[ls.len() - 1].clone();
    for l in ls[..ls.len() - 1].iter().rev() {
        acc = acc.kronecker(l);
    }
    Ok(acc)
}

pub fn assemble_kronprod<S: Scalar>(ls: &[DMatrix<S>]) -> Result<DMatrix<S>> {
    assemble_kronprod_with_cap(ls, DEFAULT_ORACLE_CAP)
}

/// Explicit Kronecker sum `A_d ⊕ ⋯ ⊕ A_1 = Σ_μ I ⊗ ⋯ ⊗ A_μ ⊗ ⋯ ⊗ I`.
pub fn assemble_kronsum_with_cap<S: Scalar>(
    as_: &[DMatrix<S>],
    cap: usize,
) -> Result<DMatrix<S>> {
    if as_.is_empty() {
        return Err(Error::DirectionCount {
            expected: 1,
            got: 0,
        });
    }
    let mut sum: Option<DMatrix<S>> = None;
    for (nu, a) in as_.iter().enumerate() {
        let factors: Vec<DMatrix<S>> = as_
            .iter()
            .enumerate()
            .map(|(k, b)| {
                if k == nu {
                    a.clone()
                } else {
                    DMatrix::identity(b.nrows(), b.nrows())
                }
            })
            .collect();
        let term = assemble_kronprod_with_cap(&factors, cap)?;
        sum = Some(match sum {
            None => term,
            Some(s) => s + term,
        });
    }
    Ok(sum.expect("nonempty"))
}

pub fn assemble_kronsum<S: Scalar>(as_: &[DMatrix<S>]) -> Result<DMatrix<S>> {
    assemble_kronsum_with_cap(as_, DEFAULT_ORACLE_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_tensor(dims: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn random_matrix(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn vec_unvec_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let t = random_tensor(&[3, 4, 2], &mut rng);
        let v = t.vec();
        let u = Tensor::unvec(&[3, 4, 2], &v).unwrap();
        assert_eq!(t, u);
    }

    #[test]
    fn mu_mode_identity_is_noop() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let t = random_tensor(&[3, 4, 5], &mut rng);
        for mu in 1..=3 {
            let id = DMatrix::<f64>::identity(t.dims()[mu - 1], t.dims()[mu - 1]);
            let s = t.mu_mode_product(&id, mu).unwrap();
            assert_eq!(s, t);
        }
    }

    #[test]
    fn order2_reduces_to_matrix_products() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let t = random_tensor(&[2, 2], &mut rng);
        let l = random_matrix(2, &mut rng);
        let tm = DMatrix::from_column_slice(2, 2, t.data());

        let s1 = t.mu_mode_product(&l, 1).unwrap();
        let m1 = &l * &tm;
        assert!((DMatrix::from_column_slice(2, 2, s1.data()) - m1).norm() < 1e-15);

        let s2 = t.mu_mode_product(&l, 2).unwrap();
        let m2 = &tm * l.transpose();
        assert!((DMatrix::from_column_slice(2, 2, s2.data()) - m2).norm() < 1e-15);
    }

    /// Naive elementwise-sum oracle for the μ-mode product.
    fn mu_mode_bruteforce(t: &Tensor<f64>, l: &DMatrix<f64>, mu: usize) -> Tensor<f64> {
        let dims = t.dims().to_vec();
        Tensor::from_fn(&dims, |idx| {
            let mut acc = 0.0;
            let mut j_idx = idx.to_vec();
            for j in 0..dims[mu - 1] {
                j_idx[mu - 1] = j;
                acc += t.get(&j_idx) * l[(idx[mu - 1], j)];
            }
            acc
        })
        .unwrap()
    }

    #[test]
    fn mu_mode_matches_bruteforce() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let t = random_tensor(&[3, 4, 5], &mut rng);
        let l = random_matrix(4, &mut rng);
        let fast = t.mu_mode_product(&l, 2).unwrap();
        let slow = mu_mode_bruteforce(&t, &l, 2);
        assert!(fast.max_abs_diff(&slow) < 1e-14);
    }

    #[test]
    fn mu_mode_dimension_mismatch_reports_mu() {
        let t = Tensor::<f64>::zeros(&[3, 4]).unwrap();
        let l = DMatrix::<f64>::identity(3, 3);
        match t.mu_mode_product(&l, 2) {
            Err(Error::DimensionMismatch { mu, rows, extent, .. }) => {
                assert_eq!((mu, rows, extent), (2, 3, 4));
            }
            other => panic!("expected dimension mismatch, got {:?}", other),
        }
    }

    #[test]
    fn tucker_identity_and_counters() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let t = random_tensor(&[2, 3, 2], &mut rng);
        let ids: Vec<_> = t
            .dims()
            .iter()
            .map(|&n| DMatrix::<f64>::identity(n, n))
            .collect();
        let counters = OpCounters::new();
        let s = t.tucker_with(&ids, &counters).unwrap();
        assert_eq!(s, t);
        let counts = counters.snapshot();
        assert_eq!(counts.tucker, 1);
        assert_eq!(counts.mu_mode, 3);
    }

    #[test]
    fn tucker_matches_kronprod_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let dims = [2, 2, 2];
        let t = random_tensor(&dims, &mut rng);
        let ls: Vec<_> = dims.iter().map(|&n| random_matrix(n, &mut rng)).collect();
        let s = t.tucker(&ls).unwrap();
        let k = assemble_kronprod(&ls).unwrap();
        let expect = &k * t.vec();
        let got = s.vec();
        let scale = expect.amax().max(1.0);
        assert!((got - expect).amax() / scale < 1e-13);
    }

    #[test]
    fn kronsum_apply_matches_assembled() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let dims = [3, 3];
        let t = random_tensor(&dims, &mut rng);
        let as_: Vec<_> = dims.iter().map(|&n| random_matrix(n, &mut rng)).collect();
        let s = t.kronsum_apply(&as_).unwrap();
        let k = assemble_kronsum(&as_).unwrap();
        let expect = &k * t.vec();
        let scale = expect.amax().max(1.0);
        assert!((s.vec() - expect).amax() / scale < 1e-13);
    }

    #[test]
    fn kronsum_of_zero_matrices_is_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let t = random_tensor(&[2, 3], &mut rng);
        let zs: Vec<_> = t
            .dims()
            .iter()
            .map(|&n| DMatrix::<f64>::zeros(n, n))
            .collect();
        let s = t.kronsum_apply(&zs).unwrap();
        assert_eq!(s.norm_inf(), 0.0);
    }

    #[test]
    fn kronprod_matches_hand_computed_2x2() {
        // (B ⊗ A) with A = [[1,2],[3,4]] (direction 1), B = [[0,1],[1,0]]
        // (direction 2): the block pattern is B[i,j]·A.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let k = assemble_kronprod(&[a.clone(), b.clone()]).unwrap();
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 1.0, 2.0, //
                0.0, 0.0, 3.0, 4.0, //
                1.0, 2.0, 0.0, 0.0, //
                3.0, 4.0, 0.0, 0.0,
            ],
        );
        assert_eq!(k, expect);
    }

    #[test]
    fn kronprod_d1_is_identity_map() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = assemble_kronprod(&[a.clone()]).unwrap();
        assert_eq!(k, a);
    }

    #[test]
    fn kronsum_equals_sum_of_embedded_terms() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let as_: Vec<_> = [2usize, 3, 2]
            .iter()
            .map(|&n| random_matrix(n, &mut rng))
            .collect();
        let ks = assemble_kronsum(&as_).unwrap();
        let mut sum = DMatrix::<f64>::zeros(12, 12);
        for (nu, a) in as_.iter().enumerate() {
            let factors: Vec<_> = as_
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    if k == nu {
                        a.clone()
                    } else {
                        DMatrix::identity(b.nrows(), b.nrows())
                    }
                })
                .collect();
            sum += assemble_kronprod(&factors).unwrap();
        }
        assert!((ks - sum).amax() < 1e-15);
    }

    #[test]
    fn oracle_cap_is_enforced() {
        let a = DMatrix::<f64>::identity(70, 70);
        match assemble_kronprod(&[a.clone(), a]) {
            Err(Error::OracleCapExceeded { n, cap }) => {
                assert_eq!(n, 4900);
                assert_eq!(cap, DEFAULT_ORACLE_CAP);
            }
            other => panic!("expected cap error, got {:?}", other),
        }
    }

    #[test]
    fn blob_roundtrip_real_and_complex() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let t = random_tensor(&[3, 2, 2], &mut rng);
        let mut buf = Vec::new();
        t.write_blob(&mut buf).unwrap();
        // magic(8) + kind(4) + d(4) + dims(3*8) + data(12*8)
        assert_eq!(buf.len(), 16 + 24 + 96);
        let u = Tensor::<f64>::read_blob(&mut buf.as_slice()).unwrap();
        assert_eq!(t, u);

        let c = t.promote();
        let mut cbuf = Vec::new();
        c.write_blob(&mut cbuf).unwrap();
        let cu = Tensor::<Complex64>::read_blob(&mut cbuf.as_slice()).unwrap();
        assert_eq!(c, cu);

        // Reading complex blob as real storage must fail.
        assert!(Tensor::<f64>::read_blob(&mut cbuf.as_slice()).is_err());
    }

    #[test]
    fn csv_has_one_line_per_fiber() {
        let t = Tensor::from_fn(&[3, 2], |idx| (idx[0] + 10 * idx[1]) as f64).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 3);
    }

    #[test]
    fn realify_reports_largest_imaginary_part() {
        let c = Tensor::from_data(
            &[2],
            vec![Complex64::new(1.0, 1e-3), Complex64::new(-2.0, -5e-3)],
        )
        .unwrap();
        let (r, imag) = c.realify();
        assert_eq!(r.data(), &[1.0, -2.0]);
        assert_eq!(imag, 5e-3);
    }
}
