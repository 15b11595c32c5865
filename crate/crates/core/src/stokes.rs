//! The homogeneous free-boundary Stokes evolution: per horizontal mode, one
//! implicit backward-Euler solve couples the velocity profile Ŵ, a staggered
//! pressure profile Q̂ (midpoints, no checkerboard), and the surface
//! elevation ξ̂¹ through the stress boundary rows. Leray projection and the
//! harmonic pressure split are kept as independently tested diagnostics.

use crate::elliptic::{cosh_profile, harmonic_extension};
use crate::grid::{
    self, d1_boundary, Grid, GridError, ScalarField, SurfaceField, VectorField, C0,
    D1_BOUNDARY_TOP,
};
use crate::linalg::{BandedLu, LinalgError};
use crate::norms;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StokesError {
    #[error("stokes: singular mode system at (k2, k3) = {mode:?}: {source}")]
    SingularMode {
        mode: (usize, usize),
        source: LinalgError,
    },
    #[error("stokes: dt must be positive (got {0})")]
    BadDt(f64),
    #[error("stokes: {0}")]
    Solve(#[from] LinalgError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("stokes: {0}")]
    Elliptic(#[from] crate::elliptic::EllipticError),
}

/// Evolved state: surface elevation, velocity, and the recovered pressure
/// (interpolated to nodes from the staggered solve).
#[derive(Debug, Clone)]
pub struct StokesState {
    pub eta1: SurfaceField,
    pub w: VectorField,
    pub q: ScalarField,
}

impl StokesState {
    pub fn zero(grid: &Grid) -> Self {
        Self {
            eta1: SurfaceField::zeros_spectral(grid),
            w: VectorField::zeros_spectral(grid),
            q: ScalarField::zeros_spectral(grid),
        }
    }
}

/// Prefactored per-mode implicit systems for a fixed (grid, dt).
///
/// Unknown layout per mode (n = 4·nv): slot 4j+c = Ŵ^{c+1} at node j,
/// slot 4j+3 = Q̂ at midpoint j+½ (j < nv−1), last slot = ξ̂¹.
pub struct ModeStokesSolver {
    lus: Vec<BandedLu>,
    pub dt: f64,
    n: usize,
}

const KL: usize = 12;
const KU: usize = 4;

impl ModeStokesSolver {
    pub fn new(grid: &Grid, dt: f64) -> Result<Self, StokesError> {
        if dt <= 0.0 {
            return Err(StokesError::BadDt(dt));
        }
        let nv = grid.nv;
        let n = 4 * nv;
        let nu = grid.config.nu;
        let gcst = grid.config.g;
        let h = grid.h;
        let ih2 = 1.0 / (h * h);
        let i2h = 1.0 / (2.0 * h);
        let modes: Vec<(usize, usize)> = (0..grid.n2)
            .flat_map(|k2| (0..grid.n3).map(move |k3| (k2, k3)))
            .collect();
        let lus = modes
            .par_iter()
            .map(|&(k2, k3)| {
                let s2 = grid.sigma2[k2];
                let s3 = grid.sigma3[k3];
                let ss = s2 * s2 + s3 * s3;
                let re = |x: f64| Complex64::new(x, 0.0);
                let im = |x: f64| Complex64::new(0.0, x);
                let mut band = BandedLu::new_store(n, KL, KU);
                let mut add = |r: usize, c: usize, v: Complex64| {
                    BandedLu::add(&mut band, n, KL, KU, r, c, v);
                };
                let w_slot = |j: usize, c: usize| 4 * j + c;
                let q_slot = |j: usize| 4 * j + 3; // midpoint j+1/2
                let xi_slot = n - 1;
                // bottom Dirichlet rows
                for c in 0..3 {
                    add(w_slot(0, c), w_slot(0, c), re(1.0));
                }
                // interior momentum rows
                for j in 1..nv - 1 {
                    for c in 0..3 {
                        let r = w_slot(j, c);
                        add(r, w_slot(j, c), re(1.0 / dt + nu * ss + 2.0 * nu * ih2));
                        add(r, w_slot(j - 1, c), re(-nu * ih2));
                        add(r, w_slot(j + 1, c), re(-nu * ih2));
                        match c {
                            0 => {
                                // d1 of Q at node j = (Q_{j+1/2} - Q_{j-1/2})/h
                                add(r, q_slot(j), re(1.0 / h));
                                add(r, q_slot(j - 1), re(-1.0 / h));
                            }
                            1 => {
                                add(r, q_slot(j), im(s2 * 0.5));
                                add(r, q_slot(j - 1), im(s2 * 0.5));
                            }
                            _ => {
                                add(r, q_slot(j), im(s3 * 0.5));
                                add(r, q_slot(j - 1), im(s3 * 0.5));
                            }
                        }
                    }
                }
                // continuity at midpoints
                for j in 0..nv - 1 {
                    let r = q_slot(j);
                    add(r, w_slot(j + 1, 0), re(1.0 / h));
                    add(r, w_slot(j, 0), re(-1.0 / h));
                    add(r, w_slot(j, 1), im(s2 * 0.5));
                    add(r, w_slot(j + 1, 1), im(s2 * 0.5));
                    add(r, w_slot(j, 2), im(s3 * 0.5));
                    add(r, w_slot(j + 1, 2), im(s3 * 0.5));
                }
                // top rows at node nv-1
                let jn = nv - 1;
                // normal stress: Q_top - g xi - 2 nu d1 W1 = 0 with
                // Q_top = (3Q_{nv-3/2} - Q_{nv-5/2})/2
                {
                    let r = w_slot(jn, 0);
                    add(r, q_slot(nv - 2), re(1.5));
                    add(r, q_slot(nv - 3), re(-0.5));
                    add(r, xi_slot, re(-gcst));
                    for (off, &c) in D1_BOUNDARY_TOP.iter().enumerate() {
                        add(r, w_slot(jn - off, 0), re(-2.0 * nu * c * i2h));
                    }
                }
                // tangential stress: d1 W^beta + i sigma_beta W1 = 0
                for (c, sb) in [(1usize, s2), (2usize, s3)] {
                    let r = w_slot(jn, c);
                    for (off, &cc) in D1_BOUNDARY_TOP.iter().enumerate() {
                        add(r, w_slot(jn - off, c), re(cc * i2h));
                    }
                    add(r, w_slot(jn, 0), im(sb));
                }
                // surface evolution: xi/dt - W1_top = rhs
                {
                    add(xi_slot, xi_slot, re(1.0 / dt));
                    add(xi_slot, w_slot(jn, 0), re(-1.0));
                }
                BandedLu::factor(band, n, KL, KU).map_err(|source| StokesError::SingularMode {
                    mode: (k2, k3),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { lus, dt, n })
    }

    /// One backward-Euler step. Forcing is sampled at the step end:
    /// `f1` the interior forcing field, `f0` the surface kinematic forcing.
    pub fn step(
        &self,
        grid: &Grid,
        state: &StokesState,
        f0: &SurfaceField,
        f1: &VectorField,
    ) -> Result<StokesState, StokesError> {
        let nv = grid.nv;
        let n = self.n;
        let dt = self.dt;
        let eta = state.eta1.spectral()?;
        let w1 = state.w.comps[0].spectral()?;
        let w2 = state.w.comps[1].spectral()?;
        let w3 = state.w.comps[2].spectral()?;
        let f0s = f0.spectral()?;
        let f11 = f1.comps[0].spectral()?;
        let f12 = f1.comps[1].spectral()?;
        let f13 = f1.comps[2].spectral()?;
        let ns = grid.surface_len();
        let results: Vec<Result<Vec<Complex64>, StokesError>> = (0..ns)
            .into_par_iter()
            .map(|m| {
                let base = m * nv;
                let mut rhs = vec![C0; n];
                for j in 1..nv - 1 {
                    rhs[4 * j] = f11[base + j] + w1[base + j] / dt;
                    rhs[4 * j + 1] = f12[base + j] + w2[base + j] / dt;
                    rhs[4 * j + 2] = f13[base + j] + w3[base + j] / dt;
                }
                rhs[n - 1] = eta[m] / dt + f0s[m];
                self.lus[m].solve(&mut rhs).map_err(|source| {
                    StokesError::SingularMode {
                        mode: (m / grid.n3, m % grid.n3),
                        source,
                    }
                })?;
                Ok(rhs)
            })
            .collect();
        let mut eta_new = vec![C0; ns];
        let mut w_new = [
            vec![C0; grid.len()],
            vec![C0; grid.len()],
            vec![C0; grid.len()],
        ];
        let mut q_new = vec![C0; grid.len()];
        for (m, r) in results.into_iter().enumerate() {
            let sol = r?;
            eta_new[m] = sol[n - 1];
            let base = m * nv;
            for j in 0..nv {
                for c in 0..3 {
                    w_new[c][base + j] = sol[4 * j + c];
                }
            }
            // node pressure from midpoints: second-order interpolation,
            // linear extrapolation at the two boundary nodes
            let qm = |j: usize| sol[4 * j + 3];
            q_new[base] = qm(0) * 1.5 - qm(1) * 0.5;
            for j in 1..nv - 1 {
                q_new[base + j] = (qm(j - 1) + qm(j)) * 0.5;
            }
            q_new[base + nv - 1] = qm(nv - 2) * 1.5 - qm(nv - 3) * 0.5;
        }
        let [wa, wb, wc] = w_new;
        Ok(StokesState {
            eta1: SurfaceField::Spectral(eta_new),
            w: VectorField {
                comps: [
                    ScalarField::Spectral(wa),
                    ScalarField::Spectral(wb),
                    ScalarField::Spectral(wc),
                ],
            },
            q: ScalarField::Spectral(q_new),
        })
    }
}

/// Leray projection Pw = w - grad theta with Delta theta = div w,
/// theta|top = 0, d1 theta|bottom = w1|bottom. The output is
/// divergence-free with vanishing bottom normal trace.
///
/// The interior rows use the composed operator D1(D1 theta) - |s|^2 theta
/// (the same stencils that later measure the divergence of the output), so
/// the node divergence of Pw vanishes exactly at interior nodes and a
/// second application solves a zero problem: P is idempotent to roundoff.
pub fn leray_project(grid: &Grid, w: &VectorField) -> Result<VectorField, StokesError> {
    let ws = grid::vec_to_spectral(grid, w)?;
    let div = grid::divergence(grid, &ws)?;
    let divs = div.spectral()?;
    let w1 = ws.comps[0].spectral()?;
    let nv = grid.nv;
    let h = grid.h;
    let i2h = 1.0 / (2.0 * h);
    let (kl, ku) = (3usize, 3usize);
    // D1 row coefficients as (start_col, stencil/2h)
    let d1_row = |j: usize| -> (usize, Vec<f64>) {
        if j == 0 {
            (0, grid::D1_BOUNDARY_BOTTOM.iter().map(|c| c * i2h).collect())
        } else if j == nv - 1 {
            (
                nv - 4,
                grid::D1_BOUNDARY_TOP.iter().rev().map(|c| c * i2h).collect(),
            )
        } else {
            (j - 1, vec![-i2h, 0.0, i2h])
        }
    };
    let mut theta = vec![C0; grid.len()];
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let base = grid.idx(k2, k3, 0);
            let ss = grid.sigma_sq(k2, k3);
            let re = |x: f64| Complex64::new(x, 0.0);
            let mut band = BandedLu::new_store(nv, kl, ku);
            let mut rhs = vec![C0; nv];
            // bottom Neumann row: D1 theta (boundary stencil) = w1 bottom
            let (c0, st) = d1_row(0);
            for (off, &c) in st.iter().enumerate() {
                BandedLu::add(&mut band, nv, kl, ku, 0, c0 + off, re(c));
            }
            rhs[0] = w1[base];
            // interior rows: sum_k D1[j,k] (D1 theta)_k - ss theta_j = div_j
            for j in 1..nv - 1 {
                for (kk, wgt) in [(j - 1, -i2h), (j + 1, i2h)] {
                    let (cs, st) = d1_row(kk);
                    for (off, &c) in st.iter().enumerate() {
                        BandedLu::add(&mut band, nv, kl, ku, j, cs + off, re(wgt * c));
                    }
                }
                BandedLu::add(&mut band, nv, kl, ku, j, j, re(-ss));
                rhs[j] = divs[base + j];
            }
            // top Dirichlet row
            BandedLu::add(&mut band, nv, kl, ku, nv - 1, nv - 1, re(1.0));
            let lu = BandedLu::factor(band, nv, kl, ku).map_err(|source| {
                StokesError::SingularMode {
                    mode: (k2, k3),
                    source,
                }
            })?;
            lu.solve(&mut rhs)?;
            theta[base..base + nv].copy_from_slice(&rhs);
        }
    }
    let gtheta = grid::gradient(grid, &ScalarField::Spectral(theta))?;
    Ok(grid::vec_sub(&ws, &gtheta))
}

/// Harmonic pressure split: pi1, pi2 harmonic with Dirichlet traces g*xi1
/// and -2 nu (d2 W2 + d3 W3) on the top and zero Neumann at the bottom
/// (cosh profiles per mode).
pub struct PressureParts {
    pub pi1: ScalarField,
    pub pi2: ScalarField,
}

pub fn pressure_harmonics(grid: &Grid, state: &StokesState) -> Result<PressureParts, StokesError> {
    let gcst = grid.config.g;
    let nu = grid.config.nu;
    let eta = state.eta1.spectral()?;
    let w2 = state.w.comps[1].spectral()?;
    let w3 = state.w.comps[2].spectral()?;
    let b = grid.config.depth_b;
    let nv = grid.nv;
    let mut pi1 = vec![C0; grid.len()];
    let mut pi2 = vec![C0; grid.len()];
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let m = grid.sidx(k2, k3);
            let base = grid.idx(k2, k3, 0);
            let s = grid.sigma_sq(k2, k3).sqrt();
            let trace1 = gcst * eta[m];
            let i = Complex64::new(0.0, 1.0);
            let div_h = i * grid.sigma2[k2] * w2[base + nv - 1]
                + i * grid.sigma3[k3] * w3[base + nv - 1];
            let trace2 = -2.0 * nu * div_h;
            for j in 0..nv {
                let prof = cosh_profile(s, b, grid.x1[j]);
                pi1[base + j] = trace1 * prof;
                pi2[base + j] = trace2 * prof;
            }
        }
    }
    Ok(PressureParts {
        pi1: ScalarField::Spectral(pi1),
        pi2: ScalarField::Spectral(pi2),
    })
}

/// Boundary-adapted combinations that vanish on the top surface for states
/// satisfying the stress conditions.
pub struct GoodUnknowns {
    pub gq: ScalarField,
    /// GW^beta = d1 W^beta + d_beta W1 for beta = 2, 3
    pub gw: [ScalarField; 2],
}

pub fn good_unknowns(grid: &Grid, state: &StokesState) -> Result<GoodUnknowns, StokesError> {
    let nu = grid.config.nu;
    let gcst = grid.config.g;
    let hx = harmonic_extension(grid, &state.eta1)?;
    let d2w2 = grid::d2(grid, &state.w.comps[1])?;
    let d3w3 = grid::d3(grid, &state.w.comps[2])?;
    let div_h = grid::add_spectral(&d2w2, &d3w3);
    let mut gq = grid::sub_spectral(&state.q, &grid::scale(&hx, gcst));
    gq = grid::axpy(grid, Complex64::new(2.0 * nu, 0.0), &div_h, &gq);
    let d1w2 = grid::vertical_derivative(grid, &state.w.comps[1], 1)?;
    let d1w3 = grid::vertical_derivative(grid, &state.w.comps[2], 1)?;
    let d2w1 = grid::d2(grid, &state.w.comps[0])?;
    let d3w1 = grid::d3(grid, &state.w.comps[0])?;
    Ok(GoodUnknowns {
        gq,
        gw: [
            grid::add_spectral(&d1w2, &d2w1),
            grid::add_spectral(&d1w3, &d3w1),
        ],
    })
}

/// Discrete energy ||W||^2_{L2} + g ||xi1||^2_{L2(top)}.
pub fn discrete_energy(grid: &Grid, state: &StokesState) -> Result<f64, StokesError> {
    let nw = norms::l2_norm_vector(grid, &state.w)?;
    let ne = norms::surface_sobolev_norm(grid, &state.eta1, 0.0)?;
    Ok(nw * nw + grid.config.g * ne * ne)
}

/// ||D(W)||^2_{L2} (twice the symmetric gradient, squared).
pub fn sym_grad_energy(grid: &Grid, w: &VectorField) -> Result<f64, StokesError> {
    let ws = grid::vec_to_spectral(grid, w)?;
    let mut grads = Vec::with_capacity(3);
    for c in 0..3 {
        grads.push(grid::gradient(grid, &ws.comps[c])?);
    }
    let mut total = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dij = grid::add_spectral(&grads[j].comps[i], &grads[i].comps[j]);
            let nrm = norms::l2_norm(grid, &dij)?;
            total += nrm * nrm;
        }
    }
    Ok(total)
}

/// Per-step energy diagnostics over a state history with zero forcing:
/// residual_k = (E_{k+1} - E_k)/dt + (nu/2)||D W_{k+1}||^2 (non-positive for
/// a dissipative step) and the GW surface trace norms.
#[derive(Debug, Clone)]
pub struct EnergyIdentityReport {
    pub energies: Vec<f64>,
    pub residuals: Vec<f64>,
    pub gw_trace_norms: Vec<f64>,
}

pub fn energy_identity_check(
    grid: &Grid,
    history: &[StokesState],
    dt: f64,
) -> Result<EnergyIdentityReport, StokesError> {
    let mut energies = Vec::with_capacity(history.len());
    for s in history {
        energies.push(discrete_energy(grid, s)?);
    }
    let mut residuals = Vec::new();
    for k in 1..history.len() {
        let diss = sym_grad_energy(grid, &history[k].w)?;
        residuals.push((energies[k] - energies[k - 1]) / dt + 0.5 * grid.config.nu * diss);
    }
    let mut gw_trace_norms = Vec::with_capacity(history.len());
    for s in history {
        let gu = good_unknowns(grid, s)?;
        let mut worst = 0.0f64;
        for g in &gu.gw {
            let tr = grid::surface_trace(grid, g)?;
            let n = norms::surface_sobolev_norm(grid, &tr, 0.0)?;
            worst = worst.max(n);
        }
        gw_trace_norms.push(worst);
    }
    Ok(EnergyIdentityReport {
        energies,
        residuals,
        gw_trace_norms,
    })
}

/// Measured constant of the uniform estimate for the homogeneous evolution:
/// [sup_k(||xi1||^2_{H^s} + ||L^{s-1}W||^2_{H1}) + sum_k dt ||L^{s-1}(grad W, Q)||^2_{H1}]
/// divided by the data norms
/// [||xi1_0||^2_{H^s} + ||L^{s-1}W_0||^2_{H1} + ||f0||^2_{L2 H^s} + ||L^{s-1}f1||^2_{L2 L2}].
pub fn uniform_estimate_ratio(
    grid: &Grid,
    history: &[StokesState],
    f0: &[SurfaceField],
    f1: &[VectorField],
    dt: f64,
) -> Result<f64, StokesError> {
    let s = grid.config.s;
    let s1 = s - 1.0;
    let mut sup = 0.0f64;
    let mut diss = 0.0f64;
    for (k, st) in history.iter().enumerate() {
        let ne = norms::surface_sobolev_norm(grid, &st.eta1, s)?;
        let nw = norms::anisotropic_norm_vector(grid, &st.w, s1, norms::Space::H1)?;
        sup = sup.max(ne * ne + nw * nw);
        if k > 0 {
            let mut gw_sq = 0.0;
            for c in 0..3 {
                let gc = grid::gradient(grid, &st.w.comps[c])?;
                let n = norms::anisotropic_norm_vector(grid, &gc, s1, norms::Space::H1)?;
                gw_sq += n * n;
            }
            let nq = norms::anisotropic_norm(grid, &st.q, s1, norms::Space::H1)?;
            diss += dt * (gw_sq + nq * nq);
        }
    }
    let ne0 = norms::surface_sobolev_norm(grid, &history[0].eta1, s)?;
    let nw0 = norms::anisotropic_norm_vector(grid, &history[0].w, s1, norms::Space::H1)?;
    let mut data = ne0 * ne0 + nw0 * nw0;
    for k in 1..history.len().min(f0.len()).min(f1.len()) {
        let nf0 = norms::surface_sobolev_norm(grid, &f0[k], s)?;
        let nf1 = norms::anisotropic_norm_vector(grid, &f1[k], s1, norms::Space::L2)?;
        data += dt * (nf0 * nf0 + nf1 * nf1);
    }
    Ok((sup + diss) / data.max(1e-300))
}

/// Max discrete divergence (midpoint form) and boundary-condition residuals
/// of a state: membership in the discrete domain of the evolution operator.
pub struct StateResiduals {
    pub divergence_midpoint: f64,
    pub bottom_trace: f64,
    pub tangential_stress_top: f64,
}

pub fn state_residuals(grid: &Grid, state: &StokesState) -> Result<StateResiduals, StokesError> {
    let nv = grid.nv;
    let h = grid.h;
    let w1 = state.w.comps[0].spectral()?;
    let w2 = state.w.comps[1].spectral()?;
    let w3 = state.w.comps[2].spectral()?;
    let mut div_worst = 0.0f64;
    let mut bottom = 0.0f64;
    let mut stress = 0.0f64;
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let base = grid.idx(k2, k3, 0);
            let i = Complex64::new(0.0, 1.0);
            let s2 = grid.sigma2[k2];
            let s3 = grid.sigma3[k3];
            for j in 0..nv - 1 {
                let d = (w1[base + j + 1] - w1[base + j]) / h
                    + i * s2 * 0.5 * (w2[base + j] + w2[base + j + 1])
                    + i * s3 * 0.5 * (w3[base + j] + w3[base + j + 1]);
                div_worst = div_worst.max(d.norm());
            }
            for c in [w1, w2, w3] {
                bottom = bottom.max(c[base].norm());
            }
            let prof2 = &w2[base..base + nv];
            let prof3 = &w3[base..base + nv];
            let t2 = d1_boundary(h, prof2, true) + i * s2 * w1[base + nv - 1];
            let t3 = d1_boundary(h, prof3, true) + i * s3 * w1[base + nv - 1];
            stress = stress.max(t2.norm()).max(t3.norm());
        }
    }
    Ok(StateResiduals {
        divergence_midpoint: div_worst,
        bottom_trace: bottom,
        tangential_stress_top: stress,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Config};
    use crate::synth;

    fn test_grid(nv: usize) -> Grid {
        make_grid(Config {
            modes: (8, 8),
            nv,
            ..Config::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_state_zero_forcing_stays_zero() {
        let g = test_grid(9);
        let solver = ModeStokesSolver::new(&g, 0.01).unwrap();
        let s0 = StokesState::zero(&g);
        let s1 = solver
            .step(
                &g,
                &s0,
                &SurfaceField::zeros_spectral(&g),
                &VectorField::zeros_spectral(&g),
            )
            .unwrap();
        for c in &s1.w.comps {
            assert!(grid::max_coeff(c) < 1e-13);
        }
        assert!(grid::max_coeff(&s1.q) < 1e-12);
        match &s1.eta1 {
            SurfaceField::Spectral(v) => {
                for c in v {
                    assert!(c.norm() < 1e-13);
                }
            }
            _ => panic!(),
        }
    }

    #[test]
    fn bad_dt_is_rejected() {
        let g = test_grid(9);
        assert!(matches!(
            ModeStokesSolver::new(&g, 0.0),
            Err(StokesError::BadDt(_))
        ));
    }

    #[test]
    fn step_output_satisfies_discrete_constraints() {
        // output lies in the discrete domain: continuity at midpoints,
        // zero bottom trace, tangential stress rows are exact solve rows
        let g = test_grid(17);
        let solver = ModeStokesSolver::new(&g, 0.01).unwrap();
        let s0 = StokesState::zero(&g);
        let f1 = grid::vec_to_spectral(&g, &synth::random_vector(&g, 3, 3, 2, 1.0)).unwrap();
        let f0 = synth::random_surface(&g, 4, 3, 1.0);
        let s1 = solver.step(&g, &s0, &f0, &f1).unwrap();
        let r = state_residuals(&g, &s1).unwrap();
        assert!(
            r.divergence_midpoint < 1e-10,
            "div {:.3e}",
            r.divergence_midpoint
        );
        assert!(r.bottom_trace < 1e-12, "bottom {:.3e}", r.bottom_trace);
        assert!(
            r.tangential_stress_top < 1e-10,
            "stress {:.3e}",
            r.tangential_stress_top
        );
    }

    #[test]
    fn energy_decays_with_zero_forcing() {
        let g = test_grid(17);
        let dt = 0.02;
        let solver = ModeStokesSolver::new(&g, dt).unwrap();
        // admissible initial state: Leray-projected random field pushed
        // through one warm-up step
        let w_raw = synth::random_vector_zero_bottom(&g, 11, 3, 1.0);
        let w_proj = leray_project(&g, &w_raw).unwrap();
        let seed_state = StokesState {
            eta1: synth::random_surface(&g, 12, 3, 1.0),
            w: w_proj,
            q: ScalarField::zeros_spectral(&g),
        };
        let zero_f0 = SurfaceField::zeros_spectral(&g);
        let zero_f1 = VectorField::zeros_spectral(&g);
        let s0 = solver.step(&g, &seed_state, &zero_f0, &zero_f1).unwrap();
        let mut history = vec![s0];
        for _ in 0..50 {
            let next = solver
                .step(&g, history.last().unwrap(), &zero_f0, &zero_f1)
                .unwrap();
            history.push(next);
        }
        let report = energy_identity_check(&g, &history, dt).unwrap();
        for k in 1..report.energies.len() {
            assert!(
                report.energies[k] <= report.energies[k - 1] + 1e-12,
                "energy increased at step {k}: {} -> {}",
                report.energies[k - 1],
                report.energies[k]
            );
        }
        // dissipation-residual sign: dE/dt + (nu/2)||DW||^2 <= 0 + roundoff
        for (k, r) in report.residuals.iter().enumerate() {
            assert!(*r <= 1e-10, "residual {r:.3e} at step {k}");
        }
        // states satisfy BCs: GW traces small
        for n in &report.gw_trace_norms {
            assert!(*n < 1e-9, "GW trace {n:.3e}");
        }
    }

    #[test]
    fn steady_forcing_converges_to_steady_solve() {
        // constant forcing: iterates converge to the fixed point of the
        // one-step map, which is the steady solution of the same system
        let g = test_grid(17);
        let dt = 0.5;
        let solver = ModeStokesSolver::new(&g, dt).unwrap();
        let f1 = grid::vec_to_spectral(&g, &synth::random_vector(&g, 21, 2, 2, 0.1)).unwrap();
        let f0 = SurfaceField::zeros_spectral(&g);
        let mut state = StokesState::zero(&g);
        for _ in 0..400 {
            state = solver.step(&g, &state, &f0, &f1).unwrap();
        }
        let next = solver.step(&g, &state, &f0, &f1).unwrap();
        // fixed point: step leaves the state unchanged
        for c in 0..3 {
            let d = grid::sub_spectral(&next.w.comps[c], &state.w.comps[c]);
            let scale = grid::max_coeff(&state.w.comps[c]).max(1e-10);
            assert!(
                grid::max_coeff(&d) <= 1e-8 * scale,
                "component {c} not steady: {:.3e} vs {:.3e}",
                grid::max_coeff(&d),
                scale
            );
        }
    }

    #[test]
    fn leray_projection_properties() {
        let g = test_grid(17);
        // complement member: w = grad theta0 with theta0|top = 0 -> Pw ~ 0
        let theta0 = grid::to_spectral(
            &g,
            &ScalarField::from_fn(&g, |x1, x2, x3| {
                -x1 * (x1 + 1.0) * (x2.sin() + (x3 * 2.0).cos())
            }),
        )
        .unwrap();
        let w = grid::gradient(&g, &theta0).unwrap();
        let pw = leray_project(&g, &w).unwrap();
        let mut worst = 0.0f64;
        for c in &pw.comps {
            worst = worst.max(grid::max_abs_physical(&g, c).unwrap());
        }
        let scale = grid::max_abs_physical(&g, &w.comps[0]).unwrap();
        assert!(worst <= 2e-2 * scale.max(1.0), "P grad theta0 = {worst:.3e}");

        // divergence-free with zero bottom normal trace: fixed point
        let wdf = {
            let raw = synth::random_vector(&g, 5, 2, 2, 1.0);
            leray_project(&g, &raw).unwrap()
        };
        let pwdf = leray_project(&g, &wdf).unwrap();
        let mut dmax = 0.0f64;
        let mut smax = 0.0f64;
        for c in 0..3 {
            let d = grid::sub_spectral(&pwdf.comps[c], &wdf.comps[c]);
            dmax = dmax.max(grid::max_coeff(&d));
            smax = smax.max(grid::max_coeff(&wdf.comps[c]));
        }
        // idempotence
        assert!(dmax <= 1e-10 * smax.max(1.0), "idempotence {dmax:.3e}");
        // projected field has small divergence and zero bottom normal trace
        let div = grid::divergence(&g, &pwdf).unwrap();
        let dres = grid::max_abs_physical(&g, &div).unwrap();
        assert!(dres <= 2e-2 * smax.max(1.0), "div Pw = {dres:.3e}");
        let w1 = pwdf.comps[0].spectral().unwrap();
        for k2 in 0..g.n2 {
            for k3 in 0..g.n3 {
                assert!(w1[g.idx(k2, k3, 0)].norm() < 1e-10);
            }
        }
    }

    #[test]
    fn uniform_estimate_ratio_bounded_under_refinement() {
        // the measured estimate constant stays bounded and stable when
        // dt and h refine together
        let run = |nv: usize, nt: usize| {
            let g = test_grid(nv);
            let dt = 0.16 / nt as f64;
            let solver = ModeStokesSolver::new(&g, dt).unwrap();
            let w0 = leray_project(&g, &synth::random_vector_zero_bottom(&g, 8, 2, 0.1)).unwrap();
            let f0: Vec<SurfaceField> = (0..=nt)
                .map(|_| synth::random_surface(&g, 9, 2, 0.05))
                .collect();
            let f1: Vec<VectorField> = (0..=nt)
                .map(|_| {
                    grid::vec_to_spectral(&g, &synth::random_vector(&g, 10, 2, 2, 0.05)).unwrap()
                })
                .collect();
            let mut history = vec![StokesState {
                eta1: synth::random_surface(&g, 11, 2, 0.1),
                w: w0,
                q: ScalarField::zeros_spectral(&g),
            }];
            for k in 1..=nt {
                let next = solver
                    .step(&g, history.last().unwrap(), &f0[k], &f1[k])
                    .unwrap();
                history.push(next);
            }
            uniform_estimate_ratio(&g, &history, &f0, &f1, dt).unwrap()
        };
        let c1 = run(13, 8);
        let c2 = run(25, 16);
        assert!(c1.is_finite() && c2.is_finite() && c1 > 0.0);
        assert!(
            c2 <= 3.0 * c1 && c1 <= 3.0 * c2,
            "estimate constant unstable: {c1:.3} vs {c2:.3}"
        );
    }

    #[test]
    fn pressure_harmonics_closed_form() {
        let g = test_grid(17);
        // xi1 = single mode: pi1 = g cosh(|s|(x1+b))/cosh(|s|b) xi1
        let mut eta = vec![C0; g.surface_len()];
        let m = g.sidx(1, 0);
        let mc = g.sidx(g.n2 - 1, 0);
        eta[m] = Complex64::new(0.4, 0.2);
        eta[mc] = Complex64::new(0.4, -0.2);
        let state = StokesState {
            eta1: SurfaceField::Spectral(eta.clone()),
            w: VectorField::zeros_spectral(&g),
            q: ScalarField::zeros_spectral(&g),
        };
        let parts = pressure_harmonics(&g, &state).unwrap();
        let pi1 = parts.pi1.spectral().unwrap();
        let b = g.config.depth_b;
        for j in 0..g.nv {
            let expect = g.config.g * eta[m] * ((g.x1[j] + b).cosh() / b.cosh());
            let got = pi1[g.idx(1, 0, j)];
            assert!((got - expect).norm() < 1e-12, "j={j}");
        }
        // zero mode of pi1 is the constant g xi1(0)
        let mut eta0 = vec![C0; g.surface_len()];
        eta0[g.sidx(0, 0)] = Complex64::new(0.7, 0.0);
        let state0 = StokesState {
            eta1: SurfaceField::Spectral(eta0),
            w: VectorField::zeros_spectral(&g),
            q: ScalarField::zeros_spectral(&g),
        };
        let parts0 = pressure_harmonics(&g, &state0).unwrap();
        let pi10 = parts0.pi1.spectral().unwrap();
        for j in 0..g.nv {
            assert!(
                (pi10[g.idx(0, 0, j)] - Complex64::new(0.7 * g.config.g, 0.0)).norm() < 1e-13
            );
        }
        // zero state gives zero split
        let z = pressure_harmonics(&g, &StokesState::zero(&g)).unwrap();
        assert!(grid::max_coeff(&z.pi1) < 1e-15);
        assert!(grid::max_coeff(&z.pi2) < 1e-15);
    }
}
