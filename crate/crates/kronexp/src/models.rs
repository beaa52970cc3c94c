//! Reaction-diffusion benchmark problems on tensor-product grids.
//!
//! Both models diffuse two species on a box with homogeneous Neumann
//! boundaries, discretized by second-order centered differences on a
//! uniform grid that includes the boundary nodes. The Neumann condition
//! is eliminated through ghost points, which keeps constants exactly in
//! the null space of every direction matrix. Initial data is a seeded
//! uniform perturbation of the kinetic equilibrium, drawn from one PRNG
//! stream per component so the two fields are independent yet jointly
//! reproducible from a single seed.

use crate::integrators::ProblemSpec;
use crate::tensor::{DirectionMatrix, Tensor};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Uniform tensor-product grid on a box, boundary nodes included:
/// x_i = i·h with h = L/(n−1), the same n in every direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
    pub lengths: Vec<f64>,
}

impl GridSpec {
    pub fn new(d: usize, n: usize, lengths: Vec<f64>) -> Result<Self> {
        if d == 0 || lengths.len() != d {
            return Err(Error::Invalid(format!(
                "{} lengths for {d} directions",
                lengths.len()
            )));
        }
        if n < 3 {
            return Err(Error::Invalid(format!(
                "grid needs n >= 3 nodes per direction, got {n}"
            )));
        }
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Invalid("domain lengths must be positive".into()));
        }
        Ok(Self { d, n, lengths })
    }

    /// Mesh width along direction `mu` (1-based).
    pub fn h(&self, mu: usize) -> f64 {
        self.lengths[mu - 1] / (self.n - 1) as f64
    }

    pub fn nodes(&self, mu: usize) -> Vec<f64> {
        let h = self.h(mu);
        (0..self.n).map(|i| i as f64 * h).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.n; self.d]
    }
}

/// Parameters for both benchmark models, plus the initial-data knobs.
/// The diffusion block (`delta_u`, `delta_v`, `rho`) is shared; the
/// kinetic constants split into the activator-depletion group
/// (`a_u`, `a_v`) and the excitable group (`a1_v`, `a2_v`), and each
/// model reads only its own group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub delta_u: f64,
    pub delta_v: f64,
    pub rho: f64,
    pub a_u: f64,
    pub a_v: f64,
    pub a1_v: f64,
    pub a2_v: f64,
    pub seed: u64,
    /// Scale of the uniform perturbation added to the equilibrium.
    pub amplitude: f64,
}

impl ModelParams {
    /// Activator-depletion defaults on the unit square.
    pub fn schnakenberg() -> Self {
        Self {
            delta_u: 1.0,
            delta_v: 10.0,
            rho: 1000.0,
            a_u: 0.1,
            a_v: 0.9,
            a1_v: 11.0,
            a2_v: 0.1,
            seed: 0,
            amplitude: 1e-5,
        }
    }

    /// Excitable-medium defaults on the π-cube.
    pub fn fitzhugh_nagumo() -> Self {
        Self {
            delta_u: 1.0,
            delta_v: 42.1887,
            rho: 24.649,
            a_u: 0.1,
            a_v: 0.9,
            a1_v: 11.0,
            a2_v: 0.1,
            seed: 0,
            amplitude: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_u > 0.0) || !(self.delta_v > 0.0) {
            return Err(Error::Invalid(format!(
                "diffusivities must be positive, got ({}, {})",
                self.delta_u, self.delta_v
            )));
        }
        if self.amplitude < 0.0 || !self.amplitude.is_finite() {
            return Err(Error::Invalid(format!(
                "perturbation amplitude {} must be finite and >= 0",
                self.amplitude
            )));
        }
        Ok(())
    }

    /// Overrides one named parameter, the hook for key-value config files.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        match key {
            "delta_u" => self.delta_u = value,
            "delta_v" => self.delta_v = value,
            "rho" => self.rho = value,
            "a_u" => self.a_u = value,
            "a_v" => self.a_v = value,
            "a1_v" => self.a1_v = value,
            "a2_v" => self.a2_v = value,
            "amplitude" => self.amplitude = value,
            "seed" => {
                if value < 0.0 || value.fract() != 0.0 || value > u64::MAX as f64 {
                    return Err(Error::Invalid(format!(
                        "seed must be a nonnegative integer, got {value}"
                    )));
                }
                self.seed = value as u64;
            }
            other => {
                return Err(Error::Invalid(format!("unknown parameter \"{other}\"")));
            }
        }
        Ok(())
    }
}

/// One-dimensional Neumann Laplacian scaled by a diffusivity:
/// (δ/h²)·tridiag(1, −2, 1) with ghost-point boundary rows [−2, 2] and
/// [2, −2]. Every row sums to zero exactly, so constants are in the
/// null space to the last bit. Returned with `mu = 1`; rewrap for other
/// directions.
pub fn laplacian_1d_neumann(n: usize, length: f64, delta: f64) -> Result<DirectionMatrix<f64>> {
    if n < 3 {
        return Err(Error::Invalid(format!(
            "Neumann stencil needs n >= 3, got {n}"
        )));
    }
    if !(length > 0.0) || !(delta > 0.0) {
        return Err(Error::Invalid(format!(
            "length {length} and diffusivity {delta} must be positive"
        )));
    }
    let h = length / (n - 1) as f64;
    let c = delta / (h * h);
    let mut m = DMatrix::zeros(n, n);
    m[(0, 0)] = -2.0 * c;
    m[(0, 1)] = 2.0 * c;
    for i in 1..n - 1 {
        m[(i, i - 1)] = c;
        m[(i, i)] = -2.0 * c;
        m[(i, i + 1)] = c;
    }
    m[(n - 1, n - 2)] = 2.0 * c;
    m[(n - 1, n - 1)] = -2.0 * c;
    Ok(DirectionMatrix::new(1, m))
}

/// Isotropic Laplacian directions for one component: the same 1-d
/// stencil in every direction, scaled by that component's diffusivity.
fn diffusion_directions(grid: &GridSpec, delta: f64) -> Result<Vec<DirectionMatrix<f64>>> {
    let mut out = Vec::with_capacity(grid.d);
    for mu in 1..=grid.d {
        let lap = laplacian_1d_neumann(grid.n, grid.lengths[mu - 1], delta)?;
        out.push(DirectionMatrix::new(mu, lap.entries));
    }
    Ok(out)
}

/// Equilibrium plus a seeded uniform perturbation, one PRNG stream per
/// component so the fields are independent but jointly reproducible.
fn perturbed_initial(
    grid: &GridSpec,
    equilibria: &[f64],
    seed: u64,
    amplitude: f64,
) -> Vec<Tensor<f64>> {
    let dims = grid.dims();
    equilibria
        .iter()
        .enumerate()
        .map(|(c, &eq)| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            Tensor::from_fn(&dims, |_| eq + amplitude * rng.gen_range(0.0..1.0))
                .expect("grid dims validated")
        })
        .collect()
}

/// Activator-depletion system on (0,1)²: two diffusing species with
/// kinetics g¹ = ρ(aᵘ − u + u²v), g² = ρ(aᵛ − u²v), started as a small
/// seeded perturbation of the equilibrium (aᵘ+aᵛ, aᵛ/(aᵘ+aᵛ)²). The
/// default parameters sit in the Turing-unstable regime and develop a
/// cosine pattern with mode pair (3,5)/(5,3) by time 2. The caller picks
/// the horizon via the returned problem's `t_end` (default 1).
pub fn schnakenberg_2d(n: usize, params: &ModelParams) -> Result<ProblemSpec> {
    params.validate()?;
    let grid = GridSpec::new(2, n, vec![1.0, 1.0])?;
    let directions = vec![
        diffusion_directions(&grid, params.delta_u)?,
        diffusion_directions(&grid, params.delta_v)?,
    ];
    let u_e = params.a_u + params.a_v;
    let v_e = params.a_v / (u_e * u_e);
    let initial = perturbed_initial(&grid, &[u_e, v_e], params.seed, params.amplitude);
    let (rho, a_u, a_v) = (params.rho, params.a_u, params.a_v);
    let g = Box::new(move |_t: f64, s: &[Tensor<f64>]| {
        let (u, v) = (s[0].data(), s[1].data());
        let g1 = u
            .iter()
            .zip(v)
            .map(|(&u, &v)| rho * (a_u - u + u * u * v))
            .collect();
        let g2 = u.iter().zip(v).map(|(&u, &v)| rho * (a_v - u * u * v)).collect();
        let dims = s[0].dims();
        vec![
            Tensor::from_data(dims, g1).expect("same dims as state"),
            Tensor::from_data(dims, g2).expect("same dims as state"),
        ]
    });
    let mut p = ProblemSpec::new(directions, g, initial, 1.0)?;
    p.seed = Some(params.seed);
    Ok(p)
}

/// Excitable two-species system on (0,π)³ with cubic kinetics
/// g¹ = ρ(−u(u²−1) − v), g² = ρa₁ᵛ(u − a₂ᵛv), started as a small seeded
/// perturbation of the (0,0) equilibrium. The defaults form a stationary
/// square pattern with mode triple (2,2,2) on long horizons. The caller
/// picks the horizon via the returned problem's `t_end` (default 1).
pub fn fitzhugh_nagumo_3d(n: usize, params: &ModelParams) -> Result<ProblemSpec> {
    params.validate()?;
    let grid = GridSpec::new(3, n, vec![std::f64::consts::PI; 3])?;
    let directions = vec![
        diffusion_directions(&grid, params.delta_u)?,
        diffusion_directions(&grid, params.delta_v)?,
    ];
    let initial = perturbed_initial(&grid, &[0.0, 0.0], params.seed, params.amplitude);
    let (rho, a1_v, a2_v) = (params.rho, params.a1_v, params.a2_v);
    let g = Box::new(move |_t: f64, s: &[Tensor<f64>]| {
        let (u, v) = (s[0].data(), s[1].data());
        let g1 = u
            .iter()
            .zip(v)
            .map(|(&u, &v)| rho * (-u * (u * u - 1.0) - v))
            .collect();
        let g2 = u
            .iter()
            .zip(v)
            .map(|(&u, &v)| rho * a1_v * (u - a2_v * v))
            .collect();
        let dims = s[0].dims();
        vec![
            Tensor::from_data(dims, g1).expect("same dims as state"),
            Tensor::from_data(dims, g2).expect("same dims as state"),
        ]
    });
    let mut p = ProblemSpec::new(directions, g, initial, 1.0)?;
    p.seed = Some(params.seed);
    Ok(p)
}

/// One detected spatial mode: per-direction cosine wavenumbers and the
/// magnitude of the projection coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct DominantMode {
    pub indices: Vec<usize>,
    pub magnitude: f64,
}

/// Detects the strongest cosine modes of a field by projecting the
/// mean-free part onto cos(k₁πx₁/L₁)···cos(k_dπx_d/L_d) for k_μ ≤ 10,
/// with a magnitude threshold of 1e-9·(‖U‖∞ + 1).
pub fn dominant_modes(u: &Tensor<f64>, grid: &GridSpec) -> Result<Vec<DominantMode>> {
    dominant_modes_with(u, grid, 10, 1e-9 * (u.norm_inf() + 1.0))
}

/// As [`dominant_modes`] with an explicit wavenumber cap and threshold.
/// Modes are sorted by descending magnitude, ties by ascending indices;
/// the all-zero (constant) mode is never reported.
pub fn dominant_modes_with(
    u: &Tensor<f64>,
    grid: &GridSpec,
    k_max: usize,
    threshold: f64,
) -> Result<Vec<DominantMode>> {
    if u.dims() != grid.dims() {
        return Err(Error::Invalid(format!(
            "field extents {:?} do not match the {}^{} grid",
            u.dims(),
            grid.n,
            grid.d
        )));
    }
    let n = grid.n;
    // Wavenumbers n−1 and above alias on n nodes.
    let k_max = k_max.min(n - 2);
    let mean = u.data().iter().sum::<f64>() / u.len() as f64;
    let mut data: Vec<f64> = u.data().iter().map(|&x| x - mean).collect();
    let mut dims = u.dims().to_vec();

    // Trapezoid-weighted cosine analysis along each direction. With the
    // half weights at the two boundary nodes the sampled cosines are
    // exactly orthogonal on the grid, so a pure product mode yields a
    // single coefficient and no leakage into its neighbors.
    let w = analysis_matrix(n, k_max);
    for mu in 1..=grid.d {
        data = mode_contract(&mut dims, &data, &w, mu);
    }

    let mut found = Vec::new();
    let mut idx = vec![0usize; grid.d];
    for &coeff in &data {
        if idx.iter().any(|&k| k > 0) && coeff.abs() > threshold {
            found.push(DominantMode {
                indices: idx.clone(),
                magnitude: coeff.abs(),
            });
        }
        // First index fastest, matching the coefficient tensor layout.
        for k in idx.iter_mut() {
            *k += 1;
            if *k <= k_max {
                break;
            }
            *k = 0;
        }
    }
    found.sort_by(|a, b| {
        b.magnitude
            .partial_cmp(&a.magnitude)
            .expect("finite magnitudes")
            .then_with(|| a.indices.cmp(&b.indices))
    });
    Ok(found)
}

/// Rows are normalized analysis functionals: W[k,i] = w_i·cos(kπi/(n−1))/s_k
/// with trapezoid weights w and the diagonal normalization s_k making
/// W·samples recover unit coefficients for pure cosine samples.
fn analysis_matrix(n: usize, k_max: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(k_max + 1, n);
    for k in 0..=k_max {
        let s_k = if k == 0 {
            (n - 1) as f64
        } else {
            (n - 1) as f64 / 2.0
        };
        for i in 0..n {
            let weight = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let angle = std::f64::consts::PI * (k * i) as f64 / (n - 1) as f64;
            w[(k, i)] = weight * angle.cos() / s_k;
        }
    }
    w
}

/// Contracts mode `mu` (1-based) of a first-index-fastest tensor with a
/// rectangular matrix: out[..,r,..] = Σ_i W[r,i]·in[..,i,..]. Updates
/// `dims` in place to the new extent.
fn mode_contract(dims: &mut [usize], data: &[f64], w: &DMatrix<f64>, mu: usize) -> Vec<f64> {
    let n_in = dims[mu - 1];
    let n_out = w.nrows();
    let p: usize = dims[..mu - 1].iter().product();
    let s: usize = dims[mu..].iter().product();
    let mut out = vec![0.0; p * n_out * s];
    for j in 0..s {
        for i in 0..n_in {
            for r in 0..n_out {
                let wri = w[(r, i)];
                let src = &data[(j * n_in + i) * p..][..p];
                let dst = &mut out[(j * n_out + r) * p..][..p];
                for q in 0..p {
                    dst[q] += wri * src[q];
                }
            }
        }
    }
    dims[mu - 1] = n_out;
    out
}
