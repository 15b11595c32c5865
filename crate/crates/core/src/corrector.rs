//! Divergence removal and boundary homogenization: build U = ∇Ψ with
//! ∇·U = F₂, then a divergence-free V = V₁ + V₂ and surface pressure P₁
//! that absorb the inhomogeneous stress data, leaving the homogeneous
//! free-boundary Stokes problem with forcing (f̃₀, f̃₁) and initial W₀.
//!
//! Everything runs per horizontal mode. The surface trace system for Φ is
//! integrated exactly (matrix exponentials, piecewise-linear forcing); the
//! vector-potential heat problem is stepped by backward Euler with a
//! prefactored vertical solve per mode; the closed-form frequency response
//! is kept as an independent oracle.

use crate::btensors::euclidean_div_sym_grad;
use crate::elliptic::{solve_poisson, Bc, BvpSpec, EllipticError, PoissonLayout, solve_vertical_bvp};
use crate::grid::{
    self, d1_boundary, Grid, GridError, ScalarField, SurfaceField, VectorField, C0,
};
use crate::linalg::{BandedLu, LinalgError};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorrectorError {
    #[error("corrector/{stage}: reflection index {index} out of range 0..={max} (horizon too short for the extension stencil)")]
    ReflectionOutOfRange {
        stage: &'static str,
        index: i64,
        max: usize,
    },
    #[error("corrector/{stage}: series length {got} does not match time grid ({want})")]
    GridMismatch {
        stage: &'static str,
        got: usize,
        want: usize,
    },
    #[error("corrector/frequency_oracle: (τ, ς_h) = (0, 0) is singular")]
    SingularFrequency,
    #[error("corrector/{stage}: {source}")]
    Elliptic {
        stage: &'static str,
        source: EllipticError,
    },
    #[error("corrector/{stage}: {source}")]
    Linalg {
        stage: &'static str,
        source: LinalgError,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Uniform time grid t_k = k·dt for k = 0..=nt (so T = nt·dt).
#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    pub dt: f64,
    pub nt: usize,
}

impl TimeGrid {
    pub fn t_final(&self) -> f64 {
        self.dt * self.nt as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.nt).map(|k| k as f64 * self.dt).collect()
    }
}

/// C² quintic smoothstep on [0, 1].
pub fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    }
}

/// χ₀: 1 on [−T/4, 0], smooth drop on [−T/2, −T/4], 0 for t ≤ −T/2.
pub fn chi_0(t: f64, t_final: f64) -> f64 {
    smoothstep((t + t_final / 2.0) / (t_final / 4.0))
}

/// χ_T: 1 on [T, 5T/4], smooth drop on [5T/4, 3T/2], 0 for t ≥ 3T/2.
pub fn chi_t(t: f64, t_final: f64) -> f64 {
    smoothstep((1.5 * t_final - t) / (t_final / 4.0))
}

/// χ_b: 1 on [−b, −2b/3], smooth drop on (−2b/3, −b/3], 0 on (−b/3, 0].
pub fn chi_b(x1: f64, b: f64) -> f64 {
    1.0 - smoothstep((x1 + 2.0 * b / 3.0) / (b / 3.0))
}

/// χ_f: 0 on [−b, −5b/6), smooth rise on [−5b/6, −2b/3], 1 on (−2b/3, 0].
pub fn chi_f(x1: f64, b: f64) -> f64 {
    smoothstep((x1 + 5.0 * b / 6.0) / (b / 6.0))
}

/// Bottom bump ρ with ρ(−b) = 0, ρ′(−b) = 1, ρ ≡ 0 on [−2b/3, 0]; used to
/// cancel ∂₁V̂₂¹ at the bottom so the (3.4) tangential trace rows close.
pub fn rho_profile(x1: f64, b: f64) -> f64 {
    (x1 + b) * (1.0 - smoothstep((x1 + 5.0 * b / 6.0) / (b / 6.0)))
}

/// Values that the Ξ extension can combine linearly.
pub trait Extendable: Clone {
    fn lin(c1: f64, a: &Self, c2: f64, b: &Self) -> Self;
    fn zero_like(&self) -> Self;
}

impl Extendable for f64 {
    fn lin(c1: f64, a: &Self, c2: f64, b: &Self) -> Self {
        c1 * a + c2 * b
    }
    fn zero_like(&self) -> Self {
        0.0
    }
}

impl Extendable for Complex64 {
    fn lin(c1: f64, a: &Self, c2: f64, b: &Self) -> Self {
        a * c1 + b * c2
    }
    fn zero_like(&self) -> Self {
        C0
    }
}

impl Extendable for Vec<Complex64> {
    fn lin(c1: f64, a: &Self, c2: f64, b: &Self) -> Self {
        a.iter().zip(b).map(|(x, y)| x * c1 + y * c2).collect()
    }
    fn zero_like(&self) -> Self {
        vec![C0; self.len()]
    }
}

/// Time series on the extended grid; `at(k)` addresses t = k·dt with k
/// possibly negative.
#[derive(Debug, Clone)]
pub struct ExtendedSeries<V> {
    pub lo: i64,
    pub samples: Vec<V>,
}

impl<V> ExtendedSeries<V> {
    pub fn at(&self, k: i64) -> &V {
        &self.samples[(k - self.lo) as usize]
    }
    pub fn hi(&self) -> i64 {
        self.lo + self.samples.len() as i64 - 1
    }
}

/// Ξ extension of a series given on k = 0..=nt:
///   t < 0: (3A(−t) − 2A(−2t))·χ₀(t), evaluated by index reflection;
///   t > T: (3A(2T−t) − 2A(3T−2t))·χ_T(t).
/// Samples where the cutoff vanishes are exactly zero. Requesting a
/// reflection outside 0..=nt with a live cutoff is an error.
pub fn time_extend<V: Extendable>(
    samples: &[V],
    tg: &TimeGrid,
    ext_lo: usize,
    ext_hi: usize,
) -> Result<ExtendedSeries<V>, CorrectorError> {
    let nt = tg.nt;
    if samples.len() != nt + 1 {
        return Err(CorrectorError::GridMismatch {
            stage: "time_extend",
            got: samples.len(),
            want: nt + 1,
        });
    }
    let t_final = tg.t_final();
    let zero = samples[0].zero_like();
    let mut out = Vec::with_capacity(nt + 1 + ext_lo + ext_hi);
    for k in -(ext_lo as i64)..=(nt + ext_hi) as i64 {
        let t = k as f64 * tg.dt;
        let v = if k < 0 {
            let chi = chi_0(t, t_final);
            if chi == 0.0 {
                zero.clone()
            } else {
                let i1 = -k;
                let i2 = -2 * k;
                if i2 > nt as i64 {
                    return Err(CorrectorError::ReflectionOutOfRange {
                        stage: "time_extend",
                        index: i2,
                        max: nt,
                    });
                }
                V::lin(
                    3.0 * chi,
                    &samples[i1 as usize],
                    -2.0 * chi,
                    &samples[i2 as usize],
                )
            }
        } else if k <= nt as i64 {
            samples[k as usize].clone()
        } else {
            let chi = chi_t(t, t_final);
            if chi == 0.0 {
                zero.clone()
            } else {
                let m = k - nt as i64;
                let i1 = nt as i64 - m;
                let i2 = nt as i64 - 2 * m;
                if i1 < 0 || i2 < 0 {
                    return Err(CorrectorError::ReflectionOutOfRange {
                        stage: "time_extend",
                        index: i1.min(i2),
                        max: nt,
                    });
                }
                V::lin(
                    3.0 * chi,
                    &samples[i1 as usize],
                    -2.0 * chi,
                    &samples[i2 as usize],
                )
            }
        };
        out.push(v);
    }
    Ok(ExtendedSeries {
        lo: -(ext_lo as i64),
        samples: out,
    })
}

/// Step 1: U = ∇Ψ with ΔΨ = F₂, Ψ|Σ₀ = 0, ∂₁Ψ|Σ_b = 0. The bottom Neumann
/// row shares the D₁ stencil, so U¹|Σ_b vanishes exactly.
pub fn remove_divergence(
    grid: &Grid,
    f2: &ScalarField,
) -> Result<(ScalarField, VectorField), CorrectorError> {
    let psi = solve_poisson(
        grid,
        f2,
        &SurfaceField::zeros_spectral(grid),
        &SurfaceField::zeros_spectral(grid),
        PoissonLayout::MixedTopDirichlet,
    )
    .map_err(|source| CorrectorError::Elliptic {
        stage: "remove_divergence",
        source,
    })?;
    let u = grid::gradient(grid, &psi)?;
    Ok((psi, u))
}

/// Surface trace system output: Φ = (0, Φ², Φ³) and the Helmholtz–Hodge
/// potential π, per extended time step, as surface coefficient arrays.
pub struct SurfaceHeat {
    pub phi2: ExtendedSeries<Vec<Complex64>>,
    pub phi3: ExtendedSeries<Vec<Complex64>>,
    pub pi: ExtendedSeries<Vec<Complex64>>,
}

/// Integrate the 2×2 trace system ∂_tΦ̂ = M(ς)Φ̂ + G exactly per mode, with
/// M = −2|ς|²I + ςςᵀ and G = ((−1/ν)F̂₃³, (1/ν)F̂₃²), starting from Φ ≡ 0 at
/// the left end of the extension. π̂ = −iς·Φ̂_h/|ς|² (zero mode: 0).
pub fn surface_heat_solve(
    grid: &Grid,
    tg: &TimeGrid,
    f3_2: &ExtendedSeries<Vec<Complex64>>,
    f3_3: &ExtendedSeries<Vec<Complex64>>,
    march_hi: i64,
) -> SurfaceHeat {
    let nu = grid.config.nu;
    let ns = grid.surface_len();
    let lo = f3_2.lo;
    let steps = (march_hi - lo) as usize;
    let dt = tg.dt;
    let mut phi2 = vec![vec![C0; ns]];
    let mut phi3 = vec![vec![C0; ns]];
    for step in 0..steps {
        let k0 = lo + step as i64;
        let k1 = k0 + 1;
        let mut next2 = vec![C0; ns];
        let mut next3 = vec![C0; ns];
        let cur2 = &phi2[step];
        let cur3 = &phi3[step];
        for k2 in 0..grid.n2 {
            for k3 in 0..grid.n3 {
                let m = grid.sidx(k2, k3);
                let s2 = grid.sigma2[k2];
                let s3 = grid.sigma3[k3];
                let ss = s2 * s2 + s3 * s3;
                let g0 = [-f3_3.at(k0)[m] / nu, f3_2.at(k0)[m] / nu];
                let g1 = [-f3_3.at(k1)[m] / nu, f3_2.at(k1)[m] / nu];
                let cur = [cur2[m], cur3[m]];
                let next = if ss == 0.0 {
                    // M = 0: exact integral of linear forcing = trapezoid
                    [
                        cur[0] + dt * 0.5 * (g0[0] + g1[0]),
                        cur[1] + dt * 0.5 * (g0[1] + g1[1]),
                    ]
                } else {
                    // eigenbasis: e = ς/|ς| (λ = −|ς|²), e⊥ (λ = −2|ς|²)
                    let inv = 1.0 / ss.sqrt();
                    let e = [s2 * inv, s3 * inv];
                    let dec = |v: [Complex64; 2]| {
                        let par = v[0] * e[0] + v[1] * e[1];
                        let perp = -v[0] * e[1] + v[1] * e[0];
                        (par, perp)
                    };
                    let (c_par, c_perp) = dec(cur);
                    let (g0_par, g0_perp) = dec(g0);
                    let (g1_par, g1_perp) = dec(g1);
                    let step_eig = |c: Complex64, ga: Complex64, gb: Complex64, lam: f64| {
                        let z = lam * dt;
                        let ez = z.exp();
                        let (p1, p2) = phi_functions(z);
                        c * ez + (ga * p1 + (gb - ga) * p2) * dt
                    };
                    let n_par = step_eig(c_par, g0_par, g1_par, -ss);
                    let n_perp = step_eig(c_perp, g0_perp, g1_perp, -2.0 * ss);
                    [n_par * e[0] - n_perp * e[1], n_par * e[1] + n_perp * e[0]]
                };
                next2[m] = next[0];
                next3[m] = next[1];
            }
        }
        phi2.push(next2);
        phi3.push(next3);
    }
    // π̂ recovery per retained sample
    let mut pi = Vec::with_capacity(phi2.len());
    for step in 0..phi2.len() {
        let mut p = vec![C0; ns];
        for k2 in 0..grid.n2 {
            for k3 in 0..grid.n3 {
                let m = grid.sidx(k2, k3);
                let ss = grid.sigma_sq(k2, k3);
                if ss > 0.0 {
                    let i = Complex64::new(0.0, 1.0);
                    p[m] = -(i * grid.sigma2[k2] * phi2[step][m]
                        + i * grid.sigma3[k3] * phi3[step][m])
                        / ss;
                }
            }
        }
        pi.push(p);
    }
    SurfaceHeat {
        phi2: ExtendedSeries { lo, samples: phi2 },
        phi3: ExtendedSeries { lo, samples: phi3 },
        pi: ExtendedSeries { lo, samples: pi },
    }
}

/// φ₁(z) = (e^z − 1)/z and φ₂(z) = (e^z − 1 − z)/z², series for small |z|.
fn phi_functions(z: f64) -> (f64, f64) {
    if z.abs() < 1e-5 {
        let p1 = 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0;
        let p2 = 0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0;
        (p1, p2)
    } else {
        let ez = z.exp();
        ((ez - 1.0) / z, (ez - 1.0 - z) / (z * z))
    }
}

/// Prefactored backward-Euler vertical heat solves, one banded LU per mode:
/// −φ'' + (1/dt + |ς|²)φ = φ_old/dt, Dirichlet top, Neumann bottom.
pub struct VerticalHeatSolver {
    lus: Vec<BandedLu>,
    dt: f64,
}

impl VerticalHeatSolver {
    pub fn new(grid: &Grid, dt: f64) -> Result<Self, CorrectorError> {
        let nv = grid.nv;
        let h = grid.h;
        let ih2 = 1.0 / (h * h);
        let i2h = 1.0 / (2.0 * h);
        let (kl, ku) = (3usize, 3usize);
        let modes: Vec<(usize, usize)> = (0..grid.n2)
            .flat_map(|k2| (0..grid.n3).map(move |k3| (k2, k3)))
            .collect();
        let lus = modes
            .par_iter()
            .map(|&(k2, k3)| {
                let ss = grid.sigma_sq(k2, k3);
                let mut band = BandedLu::new_store(nv, kl, ku);
                let re = |x: f64| Complex64::new(x, 0.0);
                // bottom Neumann row (matches the D₁ boundary stencil)
                for (col, &c) in grid::D1_BOUNDARY_BOTTOM.iter().enumerate() {
                    BandedLu::add(&mut band, nv, kl, ku, 0, col, re(c * i2h));
                }
                for j in 1..nv - 1 {
                    BandedLu::add(&mut band, nv, kl, ku, j, j - 1, re(-ih2));
                    BandedLu::add(&mut band, nv, kl, ku, j, j, re(2.0 * ih2 + 1.0 / dt + ss));
                    BandedLu::add(&mut band, nv, kl, ku, j, j + 1, re(-ih2));
                }
                BandedLu::add(&mut band, nv, kl, ku, nv - 1, nv - 1, re(1.0));
                BandedLu::factor(band, nv, kl, ku)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| CorrectorError::Linalg {
                stage: "vector_potential_solve",
                source,
            })?;
        Ok(Self { lus, dt })
    }

    /// One backward-Euler step for one mode profile. `top` is the Dirichlet
    /// value, `bottom` the Neumann value; `state` is overwritten.
    fn step_mode(
        &self,
        grid: &Grid,
        mode: usize,
        state: &mut [Complex64],
        top: Complex64,
        bottom: Complex64,
    ) -> Result<(), LinalgError> {
        let nv = grid.nv;
        let mut rhs = vec![C0; nv];
        rhs[0] = bottom;
        for j in 1..nv - 1 {
            rhs[j] = state[j] / self.dt;
        }
        rhs[nv - 1] = top;
        self.lus[mode].solve(&mut rhs)?;
        state.copy_from_slice(&rhs);
        Ok(())
    }
}

/// Output of the vector-potential march, retained on k = 0..=nt.
pub struct VectorPotential {
    /// φ² and φ³ volume series (spectral)
    pub phi: Vec<[ScalarField; 2]>,
    /// V₁ = ∇×φ series
    pub v1: Vec<VectorField>,
}

/// March ∂_tφ = Δφ by backward Euler from zero at the extension start, with
/// Dirichlet top φ = Φ and Neumann bottom ∂₁φ = (−U³, U²)|Σ_b.
/// V₁ is assembled by the curl formula (iς₂φ̂³ − iς₃φ̂², −∂₁φ̂³, ∂₁φ̂²).
pub fn vector_potential_solve(
    grid: &Grid,
    tg: &TimeGrid,
    heat: &SurfaceHeat,
    bottom2: &ExtendedSeries<Vec<Complex64>>,
    bottom3: &ExtendedSeries<Vec<Complex64>>,
) -> Result<VectorPotential, CorrectorError> {
    let solver = VerticalHeatSolver::new(grid, tg.dt)?;
    let nv = grid.nv;
    let n = grid.len();
    let lo = heat.phi2.lo;
    let nt = tg.nt as i64;
    let mut state2 = vec![C0; n];
    let mut state3 = vec![C0; n];
    let mut phi_out = Vec::new();
    let mut v1_out = Vec::new();
    let mut k = lo;
    while k <= nt {
        if k > lo {
            // step k−1 → k in parallel over modes
            let phi2_top = heat.phi2.at(k);
            let phi3_top = heat.phi3.at(k);
            let bot2 = bottom2.at(k);
            let bot3 = bottom3.at(k);
            let results: Vec<Result<(), LinalgError>> = state2
                .par_chunks_mut(nv)
                .zip(state3.par_chunks_mut(nv))
                .enumerate()
                .map(|(m, (s2, s3))| {
                    solver.step_mode(grid, m, s2, phi2_top[m], bot2[m])?;
                    solver.step_mode(grid, m, s3, phi3_top[m], bot3[m])
                })
                .collect();
            for r in results {
                r.map_err(|source| CorrectorError::Linalg {
                    stage: "vector_potential_solve",
                    source,
                })?;
            }
        }
        if k >= 0 {
            let f2 = ScalarField::Spectral(state2.clone());
            let f3 = ScalarField::Spectral(state3.clone());
            let v1 = curl_of_potential(grid, &f2, &f3)?;
            phi_out.push([f2, f3]);
            v1_out.push(v1);
        }
        k += 1;
    }
    Ok(VectorPotential {
        phi: phi_out,
        v1: v1_out,
    })
}

/// V₁ = ∇×(0, φ², φ³) = (∂₂φ³ − ∂₃φ², −∂₁φ³, ∂₁φ²).
pub fn curl_of_potential(
    grid: &Grid,
    phi2: &ScalarField,
    phi3: &ScalarField,
) -> Result<VectorField, GridError> {
    let d2p3 = grid::d2(grid, phi3)?;
    let d3p2 = grid::d3(grid, phi2)?;
    let d1p3 = grid::vertical_derivative(grid, phi3, 1)?;
    let d1p2 = grid::vertical_derivative(grid, phi2, 1)?;
    Ok(VectorField {
        comps: [
            grid::sub_spectral(&d2p3, &d3p2),
            grid::scale(&d1p3, -1.0),
            d1p2,
        ],
    })
}

/// Closed-form frequency response of the φ heat problem (oracle): for data
/// Φ̂e^{iτt}, Ψ̂|₋ᵦe^{iτt} the response profile is φ̂₁ + φ̂₂ with
///   φ̂₁ = (e^{−rx₁} + e^{r(2b+x₁)})/(e^{2rb} + 1)·(0, Φ̂², Φ̂³)
///   φ̂₂ = (e^{rx₁} − e^{−rx₁})/(r(e^{rb} + e^{−rb}))·(0, −iς₃Ψ̂, iς₂Ψ̂)
/// with r² = iτ + |ς|², arg r ∈ [−π/4, π/4]. Exponentials are evaluated in
/// scaled form to avoid overflow for large Re(r)·b.
pub fn frequency_oracle(
    grid: &Grid,
    tau: f64,
    sigma: (f64, f64),
    phi_hat: (Complex64, Complex64),
    psi_hat_bottom: Complex64,
) -> Result<[Vec<Complex64>; 2], CorrectorError> {
    let (s2, s3) = sigma;
    let ss = s2 * s2 + s3 * s3;
    if tau == 0.0 && ss == 0.0 {
        return Err(CorrectorError::SingularFrequency);
    }
    let r = r_symbol(tau, ss);
    let b = grid.config.depth_b;
    let i = Complex64::new(0.0, 1.0);
    let data2 = -i * s3 * psi_hat_bottom;
    let data3 = i * s2 * psi_hat_bottom;
    let mut out2 = Vec::with_capacity(grid.nv);
    let mut out3 = Vec::with_capacity(grid.nv);
    for &x1 in &grid.x1 {
        // (e^{−rx₁} + e^{r(2b+x₁)})/(e^{2rb}+1), scaled by e^{−2rb}
        let f1 = ((-r * (x1 + 2.0 * b)).exp() + (r * x1).exp()) / (1.0 + (-2.0 * r * b).exp());
        // (e^{rx₁} − e^{−rx₁})/(r(e^{rb}+e^{−rb})), scaled by e^{−rb}
        let f2 = ((r * (x1 - b)).exp() - (-r * (x1 + b)).exp())
            / (r * (1.0 + (-2.0 * r * b).exp()));
        out2.push(f1 * phi_hat.0 + f2 * data2);
        out3.push(f1 * phi_hat.1 + f2 * data3);
    }
    Ok([out2, out3])
}

/// r(τ, |ς|²) from the quadratic r² = iτ + |ς|² with arg r ∈ [−π/4, π/4].
pub fn r_symbol(tau: f64, sigma_sq: f64) -> Complex64 {
    let mag = (tau * tau + sigma_sq * sigma_sq).sqrt();
    let re = ((mag + sigma_sq) / 2.0).sqrt();
    let im = tau.signum() * ((mag - sigma_sq) / 2.0).sqrt();
    Complex64::new(re, if tau == 0.0 { 0.0 } else { im })
}

/// Bottom correction V₂: V̂₂¹ = −χ_b V̂₁¹ + c·ρ with c chosen per mode so
/// the one-sided FD ∂₁V̂₂¹ vanishes at Σ_b, then V̂₂^β = iς_βφ̂ −
/// (iς_β/|ς|²)∂₁²φ̂ where φ̂ solves the (Neumann-top, Dirichlet-bottom) BVP
/// with rhs −∂₁V̂₂¹; evaluating ∂₁²φ̂ through the BVP identity collapses
/// this to V̂₂^β = (iς_β/|ς|²)∂₁V̂₂¹. Zero mode: V̂₂ = 0.
///
/// Every derived quantity uses the shared grid stencils, so the discrete
/// divergence of V₂ and the Σ_b trace rows vanish identically.
pub struct BottomCorrection {
    pub v2: Vec<VectorField>,
    /// ∂₁V̂₂¹ through the grid D₁ stencil (so iς·V̂₂^h + g₁ = 0 identically)
    pub g1: Vec<ScalarField>,
}

pub fn bottom_correction(
    grid: &Grid,
    v1: &[VectorField],
) -> Result<BottomCorrection, CorrectorError> {
    let nv = grid.nv;
    let b = grid.config.depth_b;
    let h = grid.h;
    let chi: Vec<f64> = grid.x1.iter().map(|&x| chi_b(x, b)).collect();
    let rho: Vec<f64> = grid.x1.iter().map(|&x| rho_profile(x, b)).collect();
    let d1_rho_bottom = d1_boundary(h, &rho, false);
    let mut v2_out = Vec::with_capacity(v1.len());
    let mut g1_out = Vec::with_capacity(v1.len());
    for v1k in v1 {
        let w = v1k.comps[0].spectral()?;
        let n = grid.len();
        let mut v21 = vec![C0; n];
        let mut v22 = vec![C0; n];
        let mut v23 = vec![C0; n];
        let mut g1f = vec![C0; n];
        for k2 in 0..grid.n2 {
            for k3 in 0..grid.n3 {
                if grid.is_zero_mode(k2, k3) {
                    continue;
                }
                let base = grid.idx(k2, k3, 0);
                let profile = &w[base..base + nv];
                let mut v21_profile: Vec<Complex64> =
                    (0..nv).map(|j| -chi[j] * profile[j]).collect();
                let slope = d1_boundary(h, &v21_profile, false);
                let c = -slope / d1_rho_bottom;
                for j in 0..nv {
                    v21_profile[j] += c * rho[j];
                }
                let dv21 = d1_profile(h, &v21_profile);
                let ss = grid.sigma_sq(k2, k3);
                let i = Complex64::new(0.0, 1.0);
                let s2 = grid.sigma2[k2];
                let s3 = grid.sigma3[k3];
                for j in 0..nv {
                    v21[base + j] = v21_profile[j];
                    g1f[base + j] = dv21[j];
                    v22[base + j] = i * s2 / ss * dv21[j];
                    v23[base + j] = i * s3 / ss * dv21[j];
                }
            }
        }
        v2_out.push(VectorField {
            comps: [
                ScalarField::Spectral(v21),
                ScalarField::Spectral(v22),
                ScalarField::Spectral(v23),
            ],
        });
        g1_out.push(ScalarField::Spectral(g1f));
    }
    Ok(BottomCorrection {
        v2: v2_out,
        g1: g1_out,
    })
}

/// Drive the time-domain heat march with single-frequency boundary data on
/// one mode and compare the post-transient response against the closed-form
/// frequency response. Returns the relative L² profile error over the last
/// quarter of [0, T].
pub fn oracle_time_domain_comparison(
    grid: &Grid,
    tau: f64,
    mode: (usize, usize),
    t_final: f64,
    nt: usize,
) -> Result<f64, CorrectorError> {
    let (k2, k3) = mode;
    let m = grid.sidx(k2, k3);
    let ns = grid.surface_len();
    let dt = t_final / nt as f64;
    let tg = TimeGrid { dt, nt };
    let phi2_amp = Complex64::new(0.7, -0.2);
    let phi3_amp = Complex64::new(-0.4, 0.5);
    let psi_b = Complex64::new(0.3, 0.6);
    let i = Complex64::new(0.0, 1.0);
    let s2 = grid.sigma2[k2];
    let s3 = grid.sigma3[k3];
    let osc = |k: usize, amp: Complex64| amp * (i * tau * (k as f64 * dt)).exp();
    let series = |amp: Complex64| -> ExtendedSeries<Vec<Complex64>> {
        let samples: Vec<Vec<Complex64>> = (0..=nt)
            .map(|k| {
                let mut v = vec![C0; ns];
                v[m] = osc(k, amp);
                v
            })
            .collect();
        ExtendedSeries { lo: 0, samples }
    };
    let heat = SurfaceHeat {
        phi2: series(phi2_amp),
        phi3: series(phi3_amp),
        pi: series(C0),
    };
    let bot2 = series(-i * s3 * psi_b);
    let bot3 = series(i * s2 * psi_b);
    let vp = vector_potential_solve(grid, &tg, &heat, &bot2, &bot3)?;
    let oracle = frequency_oracle(grid, tau, (s2, s3), (phi2_amp, phi3_amp), psi_b)?;
    let nv = grid.nv;
    let mut err_sq = 0.0;
    let mut ref_sq = 0.0;
    for k in (3 * nt / 4)..=nt {
        let phase = (i * tau * (k as f64 * dt)).exp();
        for (c, orc) in oracle.iter().enumerate() {
            let num = vp.phi[k][c].spectral()?;
            for j in 0..nv {
                let exact = orc[j] * phase;
                let got = num[m * nv + j];
                err_sq += (got - exact).norm_sqr();
                ref_sq += exact.norm_sqr();
            }
        }
    }
    Ok((err_sq / ref_sq.max(1e-300)).sqrt())
}

/// D₁ applied to one vertical profile (same stencils as `vertical_derivative`).
fn d1_profile(h: f64, s: &[Complex64]) -> Vec<Complex64> {
    let nv = s.len();
    let i2h = 1.0 / (2.0 * h);
    let mut out = Vec::with_capacity(nv);
    out.push(d1_boundary(h, s, false));
    for j in 1..nv - 1 {
        out.push((s[j + 1] - s[j - 1]) * i2h);
    }
    out.push(d1_boundary(h, s, true));
    out
}

/// Solve the auxiliary φ̂ BVP of the bottom correction for one mode profile;
/// exposed for the closed-form check in tests.
pub fn bottom_correction_phi(
    grid: &Grid,
    sigma_sq: f64,
    g_profile: &[Complex64],
) -> Result<Vec<Complex64>, CorrectorError> {
    let rhs: Vec<Complex64> = g_profile.iter().map(|&g| -g).collect();
    solve_vertical_bvp(
        grid,
        &BvpSpec {
            reaction: Complex64::new(sigma_sq, 0.0),
            rhs: &rhs,
            bc_bottom: Bc::Dirichlet(C0),
            bc_top: Bc::Neumann(C0),
        },
    )
    .map_err(|source| CorrectorError::Elliptic {
        stage: "bottom_correction",
        source,
    })
}

/// The assembled corrector: all series retained on k = 0..=nt.
pub struct CorrectorBundle {
    pub psi: Vec<ScalarField>,
    pub u: Vec<VectorField>,
    /// surface trace Φ = (0, Φ², Φ³) on the extended grid
    pub phi_surface: SurfaceHeat,
    /// vector potential (φ², φ³) volume series
    pub phi: Vec<[ScalarField; 2]>,
    pub v1: Vec<VectorField>,
    pub v2: Vec<VectorField>,
    pub v: Vec<VectorField>,
    pub p1: Vec<ScalarField>,
    /// f̃₀ = (U¹ + V¹)|Σ₀
    pub f0_tilde: Vec<SurfaceField>,
    /// f̃₁ = F₁ − (U+V)_t + ν∇·𝔻(U+V) − ∇P₁, defined for k = 1..=nt
    /// (index 0 unused, kept zero)
    pub f1_tilde: Vec<VectorField>,
    pub w0: VectorField,
    /// F̃₃ = F₃ + ν𝔻(U)n₀ as volume fields (trace on Σ₀ is the data)
    pub f3_tilde: Vec<[ScalarField; 3]>,
    pub report: CorrectorReport,
}

/// Per-time residual maxima of the construction.
#[derive(Debug, Clone, Default)]
pub struct CorrectorReport {
    /// ‖∇·(U+V) − F₂‖_∞ per retained time
    pub div_residual: Vec<f64>,
    /// max_β ‖−ν(∂₁V^β + ∂_βV¹) − F̃₃^β‖_∞ on Σ₀
    pub stress_residual: Vec<f64>,
    /// max over the three bottom rows (V¹, V²+U², V³+U³ at Σ_b)
    pub bottom_residual: Vec<f64>,
    /// ‖W₀‖ trace at Σ_b
    pub w0_bottom_trace: f64,
}

impl CorrectorReport {
    pub fn max_div(&self) -> f64 {
        self.div_residual.iter().fold(0.0f64, |m, &x| m.max(x))
    }
    pub fn max_stress(&self) -> f64 {
        self.stress_residual.iter().fold(0.0f64, |m, &x| m.max(x))
    }
    pub fn max_bottom(&self) -> f64 {
        self.bottom_residual.iter().fold(0.0f64, |m, &x| m.max(x))
    }
}

/// Full assembly of the corrector pipeline. `f2`, `f3` (volume, three
/// components), `f1` are series on k = 0..=nt; `u0` the initial velocity.
pub fn assemble_corrector(
    grid: &Grid,
    tg: &TimeGrid,
    f2: &[ScalarField],
    f3: &[[ScalarField; 3]],
    f1: &[VectorField],
    u0: &VectorField,
) -> Result<CorrectorBundle, CorrectorError> {
    let nt = tg.nt;
    for (name, len) in [
        ("assemble_corrector(F2)", f2.len()),
        ("assemble_corrector(F3)", f3.len()),
        ("assemble_corrector(F1)", f1.len()),
    ] {
        if len != nt + 1 {
            return Err(CorrectorError::GridMismatch {
                stage: name,
                got: len,
                want: nt + 1,
            });
        }
    }
    let nu = grid.config.nu;
    // Step 1: divergence removal per time
    let mut psi = Vec::with_capacity(nt + 1);
    let mut u = Vec::with_capacity(nt + 1);
    for f2k in f2 {
        let (p, uk) = remove_divergence(grid, f2k)?;
        psi.push(p);
        u.push(uk);
    }
    // F̃₃ = F₃ + ν𝔻(U)n₀ as volume fields:
    //   comp 1: F₃¹ + 2ν∂₁U¹, comp β: F₃^β + ν(∂₁U^β + ∂_βU¹)
    let mut f3t = Vec::with_capacity(nt + 1);
    for k in 0..=nt {
        let d1u1 = grid::vertical_derivative(grid, &u[k].comps[0], 1)?;
        let d1u2 = grid::vertical_derivative(grid, &u[k].comps[1], 1)?;
        let d1u3 = grid::vertical_derivative(grid, &u[k].comps[2], 1)?;
        let d2u1 = grid::d2(grid, &u[k].comps[0])?;
        let d3u1 = grid::d3(grid, &u[k].comps[0])?;
        let c1 = grid::axpy(grid, Complex64::new(2.0 * nu, 0.0), &d1u1, &f3[k][0]);
        let c2 = grid::axpy(
            grid,
            Complex64::new(nu, 0.0),
            &grid::add_spectral(&d1u2, &d2u1),
            &f3[k][1],
        );
        let c3 = grid::axpy(
            grid,
            Complex64::new(nu, 0.0),
            &grid::add_spectral(&d1u3, &d3u1),
            &f3[k][2],
        );
        f3t.push([c1, c2, c3]);
    }
    // surface traces of F̃₃², F̃₃³ and bottom traces of U², U³, extended
    let trace_top = |f: &ScalarField| -> Result<Vec<Complex64>, GridError> {
        Ok(grid::surface_trace(grid, f)?.spectral()?.clone())
    };
    let trace_bottom = |f: &ScalarField| -> Result<Vec<Complex64>, GridError> {
        let d = f.spectral()?;
        let mut out = vec![C0; grid.surface_len()];
        for k2 in 0..grid.n2 {
            for k3 in 0..grid.n3 {
                out[grid.sidx(k2, k3)] = d[grid.idx(k2, k3, 0)];
            }
        }
        Ok(out)
    };
    let f3t2_trace: Vec<Vec<Complex64>> = f3t
        .iter()
        .map(|f| trace_top(&f[1]))
        .collect::<Result<_, _>>()?;
    let f3t3_trace: Vec<Vec<Complex64>> = f3t
        .iter()
        .map(|f| trace_top(&f[2]))
        .collect::<Result<_, _>>()?;
    // bottom Neumann data for φ: ∂₁φ² = −U³|₋ᵦ, ∂₁φ³ = U²|₋ᵦ
    let neg_u3_bottom: Vec<Vec<Complex64>> = u
        .iter()
        .map(|uk| trace_bottom(&uk.comps[2]).map(|v| v.iter().map(|c| -c).collect::<Vec<_>>()))
        .collect::<Result<_, _>>()?;
    let u2_bottom: Vec<Vec<Complex64>> = u
        .iter()
        .map(|uk| trace_bottom(&uk.comps[1]))
        .collect::<Result<_, _>>()?;
    let ext_lo = nt / 2 + 1;
    let f3t2_ext = time_extend(&f3t2_trace, tg, ext_lo, 0)?;
    let f3t3_ext = time_extend(&f3t3_trace, tg, ext_lo, 0)?;
    let bot2_ext = time_extend(&neg_u3_bottom, tg, ext_lo, 0)?;
    let bot3_ext = time_extend(&u2_bottom, tg, ext_lo, 0)?;
    // Step 2: surface system, vector potential, bottom correction
    let heat = surface_heat_solve(grid, tg, &f3t2_ext, &f3t3_ext, nt as i64);
    let vp = vector_potential_solve(grid, tg, &heat, &bot2_ext, &bot3_ext)?;
    let bc = bottom_correction(grid, &vp.v1)?;
    let v2 = bc.v2;
    let v: Vec<VectorField> = vp
        .v1
        .iter()
        .zip(&v2)
        .map(|(a, b)| grid::vec_add(a, b))
        .collect();
    // P₁ = 2ν∂₁V¹ + F̃₃¹ on the whole slab
    let mut p1 = Vec::with_capacity(nt + 1);
    for k in 0..=nt {
        let d1v1 = grid::vertical_derivative(grid, &v[k].comps[0], 1)?;
        p1.push(grid::axpy(
            grid,
            Complex64::new(2.0 * nu, 0.0),
            &d1v1,
            &f3t[k][0],
        ));
    }
    // f̃₀ = (U¹ + V¹)|Σ₀
    let mut f0_tilde = Vec::with_capacity(nt + 1);
    for k in 0..=nt {
        let sum = grid::add_spectral(&u[k].comps[0], &v[k].comps[0]);
        f0_tilde.push(SurfaceField::Spectral(trace_top(&sum)?));
    }
    // f̃₁ = F₁ − (U+V)_t + ν∇·𝔻(U+V) − ∇P₁ at step ends k ≥ 1
    let mut f1_tilde = Vec::with_capacity(nt + 1);
    f1_tilde.push(VectorField::zeros_spectral(grid));
    for k in 1..=nt {
        let uv_k = grid::vec_add(&u[k], &v[k]);
        let uv_km = grid::vec_add(&u[k - 1], &v[k - 1]);
        let dudt = grid::vec_scale(&grid::vec_sub(&uv_k, &uv_km), 1.0 / tg.dt);
        let visc = euclidean_div_sym_grad(grid, &uv_k)?;
        let gp1 = grid::gradient(grid, &p1[k])?;
        let mut comps = Vec::with_capacity(3);
        for c in 0..3 {
            let mut acc = grid::sub_spectral(&f1[k].comps[c], &dudt.comps[c]);
            acc = grid::axpy(grid, Complex64::new(nu, 0.0), &visc.comps[c], &acc);
            acc = grid::sub_spectral(&acc, &gp1.comps[c]);
            comps.push(acc);
        }
        f1_tilde.push(VectorField {
            comps: [comps.remove(0), comps.remove(0), comps.remove(0)],
        });
    }
    // W₀ = u₀ − U₀ − V₀
    let w0 = grid::vec_sub(
        &grid::vec_to_spectral(grid, u0)?,
        &grid::vec_add(&u[0], &v[0]),
    );
    // residual report
    let mut report = CorrectorReport::default();
    for k in 0..=nt {
        let uv = grid::vec_add(&u[k], &v[k]);
        let div = grid::divergence(grid, &uv)?;
        let err = grid::sub_spectral(&div, &f2[k]);
        report.div_residual.push(grid::max_abs_physical(grid, &err)?);
        // stress rows on Σ₀: −ν(∂₁V^β + ∂_βV¹) − F̃₃^β
        let d1v2 = grid::vertical_derivative(grid, &v[k].comps[1], 1)?;
        let d1v3 = grid::vertical_derivative(grid, &v[k].comps[2], 1)?;
        let d2v1 = grid::d2(grid, &v[k].comps[0])?;
        let d3v1 = grid::d3(grid, &v[k].comps[0])?;
        let row2 = grid::sub_spectral(
            &grid::scale(&grid::add_spectral(&d1v2, &d2v1), -nu),
            &f3t[k][1],
        );
        let row3 = grid::sub_spectral(
            &grid::scale(&grid::add_spectral(&d1v3, &d3v1), -nu),
            &f3t[k][2],
        );
        let mut worst = 0.0f64;
        for row in [&row2, &row3] {
            let tr = trace_top(row)?;
            let srf = grid::surface_to_physical(grid, &SurfaceField::Spectral(tr))?;
            if let SurfaceField::Physical(vals) = srf {
                worst = worst.max(vals.iter().fold(0.0f64, |m, x| m.max(x.abs())));
            }
        }
        report.stress_residual.push(worst);
        // bottom rows: V¹ = 0, V^β = −U^β
        let mut worstb = 0.0f64;
        let rows = [
            v[k].comps[0].clone(),
            grid::add_spectral(&v[k].comps[1], &u[k].comps[1]),
            grid::add_spectral(&v[k].comps[2], &u[k].comps[2]),
        ];
        for row in &rows {
            let tr = trace_bottom(row)?;
            let srf = grid::surface_to_physical(grid, &SurfaceField::Spectral(tr))?;
            if let SurfaceField::Physical(vals) = srf {
                worstb = worstb.max(vals.iter().fold(0.0f64, |m, x| m.max(x.abs())));
            }
        }
        report.bottom_residual.push(worstb);
    }
    // W₀ bottom compatibility
    let mut w0b = 0.0f64;
    for c in &w0.comps {
        let tr = trace_bottom(c)?;
        let srf = grid::surface_to_physical(grid, &SurfaceField::Spectral(tr))?;
        if let SurfaceField::Physical(vals) = srf {
            w0b = w0b.max(vals.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }
    }
    report.w0_bottom_trace = w0b;

    Ok(CorrectorBundle {
        psi,
        u,
        phi_surface: heat,
        phi: vp.phi,
        v1: vp.v1,
        v2,
        v,
        p1,
        f0_tilde,
        f1_tilde,
        w0,
        f3_tilde: f3t,
        report,
    })
}
