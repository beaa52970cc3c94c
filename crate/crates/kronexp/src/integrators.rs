//! Exponential time-stepping on Kronecker-sum structured systems.
//!
//! The state is a list of component tensors U_c evolving under
//! dU_c/dt = K_c U_c + g_c(t, U) with K_c a Kronecker sum of per-direction
//! matrices. The split integrators never assemble K_c: the linear part is
//! applied through [`Tensor::kronsum_apply_with`] and every φ-action is a
//! precomputed [`PhiSplitOperator`]. The dense variants assemble K_c and
//! use exact small-matrix φ-functions instead; they exist as oracles for
//! the split methods on problems small enough to assemble.
//!
//! All φ-matrices are built once before stepping (the step size is
//! constant), so the per-step cost is pure tensor algebra: one
//! Kronecker-sum action plus a fixed number of Tucker operators per
//! component, tallied in the run report.

use crate::phi::phi_matrix;
use crate::splitting::{
    coefficients, second_order_scheme, PhiSplitOperator, SplitVariant,
};
use crate::tensor::{assemble_kronsum_with_cap, DirectionMatrix, Tensor};
use crate::{Error, OpCounters, OpCounts, Result, DEFAULT_ORACLE_CAP};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use std::time::Instant;

/// Nonlinear coupling: maps (t, all component states) to the per-component
/// reaction terms.
pub type NonlinearFn = dyn Fn(f64, &[Tensor<f64>]) -> Vec<Tensor<f64>> + Send + Sync;

/// A fixed-horizon initial value problem with Kronecker-sum linear parts.
pub struct ProblemSpec {
    /// Per component, the d direction matrices of its Kronecker sum.
    pub directions: Vec<Vec<DirectionMatrix<f64>>>,
    pub g: Box<NonlinearFn>,
    pub initial: Vec<Tensor<f64>>,
    pub t_end: f64,
    /// PRNG seed used to build the initial data, if any; carried into run
    /// reports so artifacts are attributable.
    pub seed: Option<u64>,
}

impl ProblemSpec {
    pub fn new(
        directions: Vec<Vec<DirectionMatrix<f64>>>,
        g: Box<NonlinearFn>,
        initial: Vec<Tensor<f64>>,
        t_end: f64,
    ) -> Result<Self> {
        if initial.is_empty() || directions.len() != initial.len() {
            return Err(Error::Invalid(format!(
                "{} direction sets for {} components",
                directions.len(),
                initial.len()
            )));
        }
        if !(t_end > 0.0) {
            return Err(Error::Invalid(format!("final time {t_end} must be > 0")));
        }
        let dims = initial[0].dims().to_vec();
        for u in &initial {
            if u.dims() != dims {
                return Err(Error::Invalid(
                    "all components must share the same extents".into(),
                ));
            }
        }
        for (c, as_) in directions.iter().enumerate() {
            if as_.len() != dims.len() {
                return Err(Error::DirectionCount {
                    expected: dims.len(),
                    got: as_.len(),
                });
            }
            for (k, a) in as_.iter().enumerate() {
                if a.mu != k + 1 {
                    return Err(Error::Invalid(format!(
                        "component {c}: direction matrices out of order at position {}",
                        k + 1
                    )));
                }
                if a.entries.nrows() != a.entries.ncols()
                    || a.entries.nrows() != dims[k]
                {
                    return Err(Error::DimensionMismatch {
                        mu: k + 1,
                        rows: a.entries.nrows(),
                        cols: a.entries.ncols(),
                        extent: dims[k],
                    });
                }
            }
        }
        Ok(Self {
            directions,
            g,
            initial,
            t_end,
            seed: None,
        })
    }

    /// Problem with no nonlinearity (pure Kronecker-sum dynamics).
    pub fn linear(
        directions: Vec<Vec<DirectionMatrix<f64>>>,
        initial: Vec<Tensor<f64>>,
        t_end: f64,
    ) -> Result<Self> {
        let dims: Vec<usize> = initial
            .first()
            .map(|u| u.dims().to_vec())
            .unwrap_or_default();
        let m = initial.len();
        Self::new(
            directions,
            Box::new(move |_, _| {
                (0..m)
                    .map(|_| Tensor::zeros(&dims).expect("validated dims"))
                    .collect()
            }),
            initial,
            t_end,
        )
    }

    pub fn components(&self) -> usize {
        self.initial.len()
    }

    pub fn dims(&self) -> &[usize] {
        self.initial[0].dims()
    }

    pub fn d(&self) -> usize {
        self.dims().len()
    }
}

/// Time-stepping engine selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Etd2rkDs,
    Exprk3Ds(SplitVariant),
    Etd2rkDense,
    Exprk3Dense,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Etd2rkDs => "etd2rkds",
            Method::Exprk3Ds(SplitVariant::TwoTermComplex) => "exprk3ds_cplx",
            Method::Exprk3Ds(_) => "exprk3ds_real",
            Method::Etd2rkDense => "etd2rk_dense",
            Method::Exprk3Dense => "exprk3_dense",
        }
    }
}

/// Splitting family the real-coefficient third-order method uses in
/// dimension `d`: the two-term table in 2-d, the three-term table above.
pub fn real_variant_for(d: usize) -> SplitVariant {
    if d == 2 {
        SplitVariant::TwoTermReal2D
    } else {
        SplitVariant::ThreeTermReal
    }
}

/// Everything a finished integration reports. The digest covers the
/// numerical content (method, discretization, seed, counters, final
/// states) and deliberately excludes wall time.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub method: &'static str,
    pub steps: usize,
    pub tau: f64,
    pub seed: Option<u64>,
    pub tucker_ops: u64,
    pub kronsum_actions: u64,
    pub phi_matrix_builds: u64,
    pub max_imag_residual: f64,
    pub wall_time: f64,
    pub final_states: Vec<Tensor<f64>>,
}

impl RunReport {
    /// SHA-256 over the numerical content, hex encoded. Bit-identical
    /// states and counters give identical digests regardless of timing.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.method.as_bytes());
        h.update((self.steps as u64).to_le_bytes());
        h.update(self.tau.to_le_bytes());
        h.update(self.seed.unwrap_or(u64::MAX).to_le_bytes());
        h.update(self.tucker_ops.to_le_bytes());
        h.update(self.kronsum_actions.to_le_bytes());
        h.update(self.phi_matrix_builds.to_le_bytes());
        h.update(self.max_imag_residual.to_le_bytes());
        for state in &self.final_states {
            let mut blob = Vec::new();
            state.write_blob(&mut blob).expect("in-memory write");
            h.update(&blob);
        }
        let bytes = h.finalize();
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Observation handed to the snapshot hook.
pub struct Snapshot<'s> {
    pub step: usize,
    pub t: f64,
    pub states: &'s [Tensor<f64>],
    pub counts: OpCounts,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Invoke the hook every this many steps (and after the final step).
    pub snapshot_every: Option<usize>,
    pub hook: Option<Box<dyn FnMut(&Snapshot) + 'a>>,
}

/// Infinity norm of the difference over all components.
pub fn error_inf(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "component count mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| x.max_abs_diff(y))
        .fold(0.0, f64::max)
}

pub fn etd2rkds_integrate(p: &ProblemSpec, steps: usize) -> Result<RunReport> {
    integrate(p, steps, Method::Etd2rkDs, RunOptions::default())
}

pub fn exprk3ds_integrate(
    p: &ProblemSpec,
    steps: usize,
    variant: SplitVariant,
) -> Result<RunReport> {
    integrate(p, steps, Method::Exprk3Ds(variant), RunOptions::default())
}

pub fn etd2rk_dense_integrate(p: &ProblemSpec, steps: usize) -> Result<RunReport> {
    integrate(p, steps, Method::Etd2rkDense, RunOptions::default())
}

pub fn exprk3_dense_integrate(p: &ProblemSpec, steps: usize) -> Result<RunReport> {
    integrate(p, steps, Method::Exprk3Dense, RunOptions::default())
}

/// Baseline states at `factor × base_steps` with the real-coefficient
/// third-order method, the error reference for convergence ladders.
pub fn reference_solution(p: &ProblemSpec, base_steps: usize) -> Result<Vec<Tensor<f64>>> {
    reference_solution_with(p, Method::Exprk3Ds(real_variant_for(p.d())), 8, base_steps)
}

pub fn reference_solution_with(
    p: &ProblemSpec,
    method: Method,
    factor: usize,
    base_steps: usize,
) -> Result<Vec<Tensor<f64>>> {
    if factor == 0 || base_steps == 0 {
        return Err(Error::Invalid("reference needs factor, steps >= 1".into()));
    }
    let report = integrate(p, factor * base_steps, method, RunOptions::default())?;
    Ok(report.final_states)
}

pub fn integrate(
    p: &ProblemSpec,
    steps: usize,
    method: Method,
    opts: RunOptions,
) -> Result<RunReport> {
    if steps == 0 {
        return Err(Error::Invalid("steps must be >= 1".into()));
    }
    let start = Instant::now();
    let counters = OpCounters::new();
    let tau = p.t_end / steps as f64;
    let driver = Driver::prepare(p, tau, method, &counters)?;

    let mut states = p.initial.clone();
    let mut max_imag = 0.0f64;
    let mut opts = opts;
    for n in 0..steps {
        let t = n as f64 * tau;
        driver.step(p, t, tau, &mut states, &counters, &mut max_imag)?;
        for u in &states {
            if !u.is_finite() {
                return Err(Error::NumericalBlowup { step: n + 1 });
            }
        }
        if let (Some(every), Some(hook)) = (opts.snapshot_every, opts.hook.as_mut()) {
            if (n + 1) % every == 0 || n + 1 == steps {
                hook(&Snapshot {
                    step: n + 1,
                    t: (n + 1) as f64 * tau,
                    states: &states,
                    counts: counters.snapshot(),
                });
            }
        }
    }

    let counts = counters.snapshot();
    Ok(RunReport {
        method: method.name(),
        steps,
        tau,
        seed: p.seed,
        tucker_ops: counts.tucker,
        kronsum_actions: counts.kronsum,
        phi_matrix_builds: counts.phi_builds,
        max_imag_residual: max_imag,
        wall_time: start.elapsed().as_secs_f64(),
        final_states: states,
    })
}

/// Per-method precomputed state: split operators per component, or the
/// assembled matrix and its dense φ-matrices.
enum Driver {
    Etd2rkDs {
        // Per component: φ₁ and φ₂ split operators at the full step.
        s1: Vec<PhiSplitOperator>,
        s2: Vec<PhiSplitOperator>,
    },
    Exprk3Ds {
        // Per component, the operators of the three stage times: ℓ = 1 at
        // τ/3, ℓ = 1,2 at 2τ/3 and at τ.
        s1_third: Vec<PhiSplitOperator>,
        s1_two_thirds: Vec<PhiSplitOperator>,
        s2_two_thirds: Vec<PhiSplitOperator>,
        s1_full: Vec<PhiSplitOperator>,
        s2_full: Vec<PhiSplitOperator>,
    },
    Etd2rkDense {
        k: Vec<DMatrix<f64>>,
        phi1: Vec<DMatrix<f64>>,
        phi2: Vec<DMatrix<f64>>,
    },
    Exprk3Dense {
        k: Vec<DMatrix<f64>>,
        phi1_third: Vec<DMatrix<f64>>,
        phi1_two_thirds: Vec<DMatrix<f64>>,
        phi2_two_thirds: Vec<DMatrix<f64>>,
        phi1_full: Vec<DMatrix<f64>>,
        phi2_full: Vec<DMatrix<f64>>,
    },
}

impl Driver {
    fn prepare(
        p: &ProblemSpec,
        tau: f64,
        method: Method,
        counters: &OpCounters,
    ) -> Result<Self> {
        match method {
            Method::Etd2rkDs => {
                let d = p.d();
                let sch1 = second_order_scheme(1, d)?;
                let sch2 = second_order_scheme(2, d)?;
                let mut s1 = Vec::new();
                let mut s2 = Vec::new();
                for as_ in &p.directions {
                    s1.push(PhiSplitOperator::precompute_with(&sch1, tau, as_, counters)?);
                    s2.push(PhiSplitOperator::precompute_with(&sch2, tau, as_, counters)?);
                }
                Ok(Driver::Etd2rkDs { s1, s2 })
            }
            Method::Exprk3Ds(variant) => {
                let d = p.d();
                let sch1 = coefficients(variant, 1, d)?;
                let sch2 = coefficients(variant, 2, d)?;
                let mut s1_third = Vec::new();
                let mut s1_two_thirds = Vec::new();
                let mut s2_two_thirds = Vec::new();
                let mut s1_full = Vec::new();
                let mut s2_full = Vec::new();
                for as_ in &p.directions {
                    s1_third.push(PhiSplitOperator::precompute_with(
                        &sch1,
                        tau / 3.0,
                        as_,
                        counters,
                    )?);
                    s1_two_thirds.push(PhiSplitOperator::precompute_with(
                        &sch1,
                        2.0 * tau / 3.0,
                        as_,
                        counters,
                    )?);
                    s2_two_thirds.push(PhiSplitOperator::precompute_with(
                        &sch2,
                        2.0 * tau / 3.0,
                        as_,
                        counters,
                    )?);
                    s1_full.push(PhiSplitOperator::precompute_with(&sch1, tau, as_, counters)?);
                    s2_full.push(PhiSplitOperator::precompute_with(&sch2, tau, as_, counters)?);
                }
                Ok(Driver::Exprk3Ds {
                    s1_third,
                    s1_two_thirds,
                    s2_two_thirds,
                    s1_full,
                    s2_full,
                })
            }
            Method::Etd2rkDense => {
                let (k, phis) = dense_phis(p, &[(1, tau), (2, tau)], counters)?;
                let mut it = phis.into_iter();
                Ok(Driver::Etd2rkDense {
                    k,
                    phi1: it.next().unwrap(),
                    phi2: it.next().unwrap(),
                })
            }
            Method::Exprk3Dense => {
                let (k, phis) = dense_phis(
                    p,
                    &[
                        (1, tau / 3.0),
                        (1, 2.0 * tau / 3.0),
                        (2, 2.0 * tau / 3.0),
                        (1, tau),
                        (2, tau),
                    ],
                    counters,
                )?;
                let mut it = phis.into_iter();
                Ok(Driver::Exprk3Dense {
                    k,
                    phi1_third: it.next().unwrap(),
                    phi1_two_thirds: it.next().unwrap(),
                    phi2_two_thirds: it.next().unwrap(),
                    phi1_full: it.next().unwrap(),
                    phi2_full: it.next().unwrap(),
                })
            }
        }
    }

    fn step(
        &self,
        p: &ProblemSpec,
        t: f64,
        tau: f64,
        states: &mut Vec<Tensor<f64>>,
        counters: &OpCounters,
        max_imag: &mut f64,
    ) -> Result<()> {
        let m = states.len();
        match self {
            Driver::Etd2rkDs { s1, s2 } => {
                let g0 = eval_g(p, t, states)?;
                // Half-way state per component, then the correction with
                // the nonlinearity increment at t + τ.
                let mut mid = Vec::with_capacity(m);
                for c in 0..m {
                    let mut f = states[c].kronsum_apply_with(
                        &direction_entries(&p.directions[c]),
                        counters,
                    )?;
                    f.add(&g0[c]);
                    let (sf, imag) = s1[c].apply_with(&f, counters)?;
                    *max_imag = max_imag.max(imag);
                    let mut u = states[c].clone();
                    u.add_scaled(tau, &sf);
                    mid.push(u);
                }
                let g1 = eval_g(p, t + tau, &mid)?;
                for c in 0..m {
                    let mut dg = g1[c].clone();
                    dg.sub(&g0[c]);
                    let (sd, imag) = s2[c].apply_with(&dg, counters)?;
                    *max_imag = max_imag.max(imag);
                    mid[c].add_scaled(tau, &sd);
                }
                *states = mid;
                Ok(())
            }
            Driver::Exprk3Ds {
                s1_third,
                s1_two_thirds,
                s2_two_thirds,
                s1_full,
                s2_full,
            } => {
                let g0 = eval_g(p, t, states)?;
                let mut f = Vec::with_capacity(m);
                for c in 0..m {
                    let mut fc = states[c].kronsum_apply_with(
                        &direction_entries(&p.directions[c]),
                        counters,
                    )?;
                    fc.add(&g0[c]);
                    f.push(fc);
                }

                let mut u2 = Vec::with_capacity(m);
                for c in 0..m {
                    let (sf, imag) = s1_third[c].apply_with(&f[c], counters)?;
                    *max_imag = max_imag.max(imag);
                    let mut u = states[c].clone();
                    u.add_scaled(tau / 3.0, &sf);
                    u2.push(u);
                }

                let g2 = eval_g(p, t + tau / 3.0, &u2)?;
                let mut u3 = Vec::with_capacity(m);
                for c in 0..m {
                    let mut d2 = g2[c].clone();
                    d2.sub(&g0[c]);
                    let (sf, imag) = s1_two_thirds[c].apply_with(&f[c], counters)?;
                    *max_imag = max_imag.max(imag);
                    let (sd, imag) = s2_two_thirds[c].apply_with(&d2, counters)?;
                    *max_imag = max_imag.max(imag);
                    let mut u = states[c].clone();
                    u.add_scaled(2.0 * tau / 3.0, &sf);
                    u.add_scaled(4.0 * tau / 3.0, &sd);
                    u3.push(u);
                }

                let g3 = eval_g(p, t + 2.0 * tau / 3.0, &u3)?;
                for c in 0..m {
                    let mut d3 = g3[c].clone();
                    d3.sub(&g0[c]);
                    let (sf, imag) = s1_full[c].apply_with(&f[c], counters)?;
                    *max_imag = max_imag.max(imag);
                    let (sd, imag) = s2_full[c].apply_with(&d3, counters)?;
                    *max_imag = max_imag.max(imag);
                    states[c].add_scaled(tau, &sf);
                    states[c].add_scaled(3.0 * tau / 2.0, &sd);
                }
                Ok(())
            }
            Driver::Etd2rkDense { k, phi1, phi2 } => {
                let g0 = eval_g(p, t, states)?;
                let mut mid = Vec::with_capacity(m);
                for c in 0..m {
                    let u = states[c].vec();
                    let f = &k[c] * &u + g0[c].vec();
                    let unew = &u + (&phi1[c] * f) * tau;
                    mid.push(Tensor::unvec(p.dims(), &unew)?);
                }
                let g1 = eval_g(p, t + tau, &mid)?;
                for c in 0..m {
                    let dg = g1[c].vec() - g0[c].vec();
                    let unew = mid[c].vec() + (&phi2[c] * dg) * tau;
                    mid[c] = Tensor::unvec(p.dims(), &unew)?;
                }
                *states = mid;
                Ok(())
            }
            Driver::Exprk3Dense {
                k,
                phi1_third,
                phi1_two_thirds,
                phi2_two_thirds,
                phi1_full,
                phi2_full,
            } => {
                let g0 = eval_g(p, t, states)?;
                let mut f = Vec::with_capacity(m);
                for c in 0..m {
                    f.push(&k[c] * states[c].vec() + g0[c].vec());
                }
                let mut u2 = Vec::with_capacity(m);
                for c in 0..m {
                    let unew = states[c].vec() + (&phi1_third[c] * &f[c]) * (tau / 3.0);
                    u2.push(Tensor::unvec(p.dims(), &unew)?);
                }
                let g2 = eval_g(p, t + tau / 3.0, &u2)?;
                let mut u3 = Vec::with_capacity(m);
                for c in 0..m {
                    let d2 = g2[c].vec() - g0[c].vec();
                    let unew = states[c].vec()
                        + (&phi1_two_thirds[c] * &f[c]) * (2.0 * tau / 3.0)
                        + (&phi2_two_thirds[c] * d2) * (4.0 * tau / 3.0);
                    u3.push(Tensor::unvec(p.dims(), &unew)?);
                }
                let g3 = eval_g(p, t + 2.0 * tau / 3.0, &u3)?;
                for c in 0..m {
                    let d3 = g3[c].vec() - g0[c].vec();
                    let unew = states[c].vec()
                        + (&phi1_full[c] * &f[c]) * tau
                        + (&phi2_full[c] * d3) * (3.0 * tau / 2.0);
                    states[c] = Tensor::unvec(p.dims(), &unew)?;
                }
                Ok(())
            }
        }
    }
}

fn direction_entries(as_: &[DirectionMatrix<f64>]) -> Vec<DMatrix<f64>> {
    as_.iter().map(|a| a.entries.clone()).collect()
}

fn eval_g(p: &ProblemSpec, t: f64, states: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
    let out = (p.g)(t, states);
    if out.len() != states.len() {
        return Err(Error::Invalid(format!(
            "nonlinearity returned {} components for {}",
            out.len(),
            states.len()
        )));
    }
    for o in &out {
        if o.dims() != p.dims() {
            return Err(Error::Invalid(
                "nonlinearity output extents do not match the state".into(),
            ));
        }
    }
    Ok(out)
}

/// Assembles K_c for every component and the requested dense φ-matrices
/// (one entry per (ℓ, scaled step) pair, each a per-component list).
#[allow(clippy::type_complexity)]
fn dense_phis(
    p: &ProblemSpec,
    wanted: &[(usize, f64)],
    counters: &OpCounters,
) -> Result<(Vec<DMatrix<f64>>, Vec<Vec<DMatrix<f64>>>)> {
    let mut k = Vec::with_capacity(p.components());
    for as_ in &p.directions {
        k.push(assemble_kronsum_with_cap(
            &direction_entries(as_),
            DEFAULT_ORACLE_CAP,
        )?);
    }
    let mut phis = Vec::with_capacity(wanted.len());
    for &(ell, scale) in wanted {
        let mut per_component = Vec::with_capacity(k.len());
        for kc in &k {
            per_component.push(phi_matrix(ell, &(kc * scale))?);
            counters.bump_phi_builds(1);
        }
        phis.push(per_component);
    }
    Ok((k, phis))
}
