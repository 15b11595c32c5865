//! Anisotropic Sobolev norms, the X_T solution ledger, and the energy
//! functionals. All reductions run in fixed index order.

use crate::elliptic::harmonic_extension;
use crate::grid::{self, Grid, GridError, ScalarField, SurfaceField, VectorField};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    L2,
    H1,
    H2,
}

/// ‖Λ_h^{s_exp} f‖ in the requested space. Parseval sum over modes with
/// trapezoid vertical quadrature; H¹/H² add gradient terms (∂₁ by FD).
pub fn anisotropic_norm(
    grid: &Grid,
    field: &ScalarField,
    s_exp: f64,
    space: Space,
) -> Result<f64, GridError> {
    let f = grid::to_spectral(grid, field)?;
    let mut sq = l2_sq_weighted(grid, &f, s_exp)?;
    if space == Space::H1 || space == Space::H2 {
        let gradf = grid::gradient(grid, &f)?;
        for c in &gradf.comps {
            sq += l2_sq_weighted(grid, c, s_exp)?;
        }
        if space == Space::H2 {
            for c in &gradf.comps {
                let g2 = grid::gradient(grid, c)?;
                for cc in &g2.comps {
                    sq += l2_sq_weighted(grid, cc, s_exp)?;
                }
            }
        }
    }
    Ok(sq.sqrt())
}

pub fn anisotropic_norm_vector(
    grid: &Grid,
    field: &VectorField,
    s_exp: f64,
    space: Space,
) -> Result<f64, GridError> {
    let mut sq = 0.0;
    for c in &field.comps {
        let n = anisotropic_norm(grid, c, s_exp, space)?;
        sq += n * n;
    }
    Ok(sq.sqrt())
}

fn l2_sq_weighted(grid: &Grid, f: &ScalarField, s_exp: f64) -> Result<f64, GridError> {
    let data = f.spectral()?;
    let area = grid.surface_area();
    let mut total = 0.0;
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let w = (1.0 + grid.sigma_sq(k2, k3)).powf(s_exp);
            let mut line = 0.0;
            for j in 0..grid.nv {
                line += data[grid.idx(k2, k3, j)].norm_sqr() * grid.trapz_weight(j);
            }
            total += w * line;
        }
    }
    Ok(total * area)
}

/// ‖f‖_{H^s(Σ₀)} = (Σ ⟨ς⟩^{2s}|f̂|²·L₂L₃)^{1/2} for a surface field.
pub fn surface_sobolev_norm(grid: &Grid, f: &SurfaceField, s: f64) -> Result<f64, GridError> {
    let data = f.spectral()?;
    let area = grid.surface_area();
    let mut total = 0.0;
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let w = (1.0 + grid.sigma_sq(k2, k3)).powf(s);
            total += w * data[grid.sidx(k2, k3)].norm_sqr();
        }
    }
    Ok((total * area).sqrt())
}

/// Plain L² norm of a volume field.
pub fn l2_norm(grid: &Grid, f: &ScalarField) -> Result<f64, GridError> {
    anisotropic_norm(grid, f, 0.0, Space::L2)
}

pub fn l2_norm_vector(grid: &Grid, f: &VectorField) -> Result<f64, GridError> {
    anisotropic_norm_vector(grid, f, 0.0, Space::L2)
}

/// One trajectory slice: surface elevation, velocity, pressure at given times.
pub struct TrajectorySlice<'a> {
    pub times: &'a [f64],
    pub eta1: &'a [SurfaceField],
    pub v: &'a [VectorField],
    pub q: &'a [ScalarField],
}

/// The X_T ledger: ‖ξ¹‖_{L^∞H^s} + ‖Λ^{s−1}v‖_{L^∞H¹} + ‖Λ^{s−1}v‖_{L²H²}
/// + ‖Λ^{s−1}v_t‖_{L²L²} + ‖Λ^{s−1}q‖_{L²H¹}, with backward differences for
/// v_t and right-endpoint rectangles for the time integrals.
pub fn xt_norm(grid: &Grid, slice: &TrajectorySlice) -> Result<f64, GridError> {
    assert!(!slice.times.is_empty(), "xt_norm needs a nonempty slice");
    let s1 = grid.config.s - 1.0;
    let mut sup_eta = 0.0f64;
    let mut sup_v = 0.0f64;
    for k in 0..slice.times.len() {
        sup_eta = sup_eta.max(surface_sobolev_norm(grid, &slice.eta1[k], grid.config.s)?);
        sup_v = sup_v.max(anisotropic_norm_vector(grid, &slice.v[k], s1, Space::H1)?);
    }
    let mut int_v_h2 = 0.0;
    let mut int_vt = 0.0;
    let mut int_q = 0.0;
    for k in 1..slice.times.len() {
        let dt = slice.times[k] - slice.times[k - 1];
        let vh2 = anisotropic_norm_vector(grid, &slice.v[k], s1, Space::H2)?;
        int_v_h2 += dt * vh2 * vh2;
        let vt = grid::vec_scale(
            &grid::vec_sub(
                &grid::vec_to_spectral(grid, &slice.v[k])?,
                &grid::vec_to_spectral(grid, &slice.v[k - 1])?,
            ),
            1.0 / dt,
        );
        let nvt = anisotropic_norm_vector(grid, &vt, s1, Space::L2)?;
        int_vt += dt * nvt * nvt;
        let nq = anisotropic_norm(grid, &slice.q[k], s1, Space::H1)?;
        int_q += dt * nq * nq;
    }
    Ok(sup_eta + sup_v + int_v_h2.sqrt() + int_vt.sqrt() + int_q.sqrt())
}

/// Energy functional report mirroring the main estimate: LHS/RHS of the
/// energy inequality, plus the Ē/D̄ pair and its positivity margin.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub sup_terms: f64,
    pub dissipation_terms: f64,
    pub data_norms: f64,
    pub ratio: f64,
    pub ebar: f64,
    pub ebar_lower_bound_const: f64,
    pub ebar_positive: bool,
}

/// 𝓔̃_{s−1} at one state: ‖Λ^{s−1}∇W‖² + 2‖Λ^{s−1}∂₁W¹‖²
/// + (2/ν)∫Λ^{s−1}W·gΛ^{s−1}∇ℋ(ξ¹) + 2∫Λ^{s−1}∂₁W^h·Λ^{s−1}∇_hW¹.
pub fn e_tilde(
    grid: &Grid,
    w: &VectorField,
    eta1: &SurfaceField,
) -> Result<f64, GridError> {
    let s1 = grid.config.s - 1.0;
    let nu = grid.config.nu;
    let gcst = grid.config.g;
    let ws = grid::vec_to_spectral(grid, w)?;
    let mut total = 0.0;
    for c in &ws.comps {
        let g = grid::gradient(grid, c)?;
        for gc in &g.comps {
            let n = anisotropic_norm(grid, gc, s1, Space::L2)?;
            total += n * n;
        }
    }
    let d1w1 = grid::vertical_derivative(grid, &ws.comps[0], 1)?;
    let n = anisotropic_norm(grid, &d1w1, s1, Space::L2)?;
    total += 2.0 * n * n;
    // cross term (2/ν) g ∫ Λ^{s−1}W · Λ^{s−1}∇ℋ(ξ¹)
    let hx = harmonic_extension(grid, eta1).map_err(|e| match e {
        crate::elliptic::EllipticError::Grid(g) => g,
        other => GridError::Invalid(other.to_string()),
    })?;
    let ghx = grid::gradient(grid, &hx)?;
    let mut cross = 0.0;
    for c in 0..3 {
        cross += weighted_inner(grid, &ws.comps[c], &ghx.comps[c], s1)?;
    }
    total += 2.0 / nu * gcst * cross;
    // 2 ∫ Λ^{s−1}∂₁W^h · Λ^{s−1}∇_h W¹
    let d1w2 = grid::vertical_derivative(grid, &ws.comps[1], 1)?;
    let d1w3 = grid::vertical_derivative(grid, &ws.comps[2], 1)?;
    let d2w1 = grid::d2(grid, &ws.comps[0])?;
    let d3w1 = grid::d3(grid, &ws.comps[0])?;
    total += 2.0 * (weighted_inner(grid, &d1w2, &d2w1, s1)? + weighted_inner(grid, &d1w3, &d3w1, s1)?);
    Ok(total)
}

/// Real part of the Λ²-weighted L² inner product Σ⟨ς⟩^{2σ}⟨f̂, ĝ⟩.
fn weighted_inner(grid: &Grid, f: &ScalarField, g: &ScalarField, sigma: f64) -> Result<f64, GridError> {
    let fd = f.spectral()?;
    let gd = g.spectral()?;
    let area = grid.surface_area();
    let mut total = 0.0;
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let w = (1.0 + grid.sigma_sq(k2, k3)).powf(sigma);
            let mut line = Complex64::new(0.0, 0.0);
            for j in 0..grid.nv {
                let i = grid.idx(k2, k3, j);
                line += fd[i].conj() * gd[i] * grid.trapz_weight(j);
            }
            total += w * line.re;
        }
    }
    Ok(total * area)
}

/// Ē_{s−1} = ‖Λ^sW‖² + ‖ξ¹‖²_{H^s} + κν𝓔̃_{s−1} + κ²‖∇_hξ¹‖²_{H^{s−1}}.
pub fn e_bar(grid: &Grid, w: &VectorField, eta1: &SurfaceField) -> Result<f64, GridError> {
    let s = grid.config.s;
    let kappa = grid.config.kappa;
    let nu = grid.config.nu;
    let nw = anisotropic_norm_vector(grid, w, s, Space::L2)?;
    let neta = surface_sobolev_norm(grid, eta1, s)?;
    let et = e_tilde(grid, w, eta1)?;
    // ‖∇_hξ¹‖_{H^{s−1}(Σ₀)}
    let es = eta1.spectral()?;
    let mut gh = 0.0;
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let s2 = grid.sigma_sq(k2, k3);
            let w2 = (1.0 + s2).powf(s - 1.0);
            gh += w2 * s2 * es[grid.sidx(k2, k3)].norm_sqr();
        }
    }
    gh *= grid.surface_area();
    Ok(nw * nw + neta * neta + kappa * nu * et + kappa * kappa * gh)
}

/// Full energy report for a trajectory against the initial data.
pub fn energy_report(
    grid: &Grid,
    slice: &TrajectorySlice,
    grad_xi: &[VectorField],
    xi0_grad: &VectorField,
) -> Result<EnergyReport, GridError> {
    let s1 = grid.config.s - 1.0;
    let s = grid.config.s;
    let mut sup = 0.0f64;
    for k in 0..slice.times.len() {
        let mut term = 0.0;
        let gx = anisotropic_norm_vector(grid, &grad_xi[k], s1, Space::H1)?;
        term += gx * gx;
        let nv = anisotropic_norm_vector(grid, &slice.v[k], s1, Space::H1)?;
        term += nv * nv;
        let ne = surface_sobolev_norm(grid, &slice.eta1[k], s)?;
        term += ne * ne;
        sup = sup.max(term);
    }
    let mut diss = 0.0;
    for k in 1..slice.times.len() {
        let dt = slice.times[k] - slice.times[k - 1];
        let mut gv_sq = 0.0;
        let vs = grid::vec_to_spectral(grid, &slice.v[k])?;
        for c in &vs.comps {
            let g = grid::gradient(grid, c)?;
            let n = anisotropic_norm_vector(grid, &g, s1, Space::H1)?;
            gv_sq += n * n;
        }
        let nq = anisotropic_norm(grid, &slice.q[k], s1, Space::H1)?;
        diss += dt * (gv_sq + nq * nq);
    }
    let gx0 = anisotropic_norm_vector(grid, xi0_grad, s1, Space::H1)?;
    let nv0 = anisotropic_norm_vector(grid, &slice.v[0], s1, Space::H1)?;
    let ne0 = surface_sobolev_norm(grid, &slice.eta1[0], s)?;
    let data = gx0 * gx0 + nv0 * nv0 + ne0 * ne0;
    let lhs = sup + diss;
    let ratio = if data > 0.0 { lhs / data } else { 0.0 };
    // Ē at the final state with its positivity margin
    let kf = slice.times.len() - 1;
    let ebar = e_bar(grid, &slice.v[kf], &slice.eta1[kf])?;
    let nw = anisotropic_norm_vector(grid, &slice.v[kf], s1, Space::H1)?;
    let ne = surface_sobolev_norm(grid, &slice.eta1[kf], s)?;
    let denom = nw * nw + ne * ne;
    let c1 = if denom > 0.0 { ebar / denom } else { 0.0 };
    Ok(EnergyReport {
        sup_terms: sup,
        dissipation_terms: diss,
        data_norms: data,
        ratio,
        ebar,
        ebar_lower_bound_const: c1,
        ebar_positive: ebar >= 0.0,
    })
}

/// Measured Korn-type constant ‖u‖_{H¹}/‖𝔻u‖_{L²} for a field vanishing on Σ_b.
pub fn korn_ratio(grid: &Grid, u: &VectorField) -> Result<f64, GridError> {
    let us = grid::vec_to_spectral(grid, u)?;
    let h1 = anisotropic_norm_vector(grid, &us, 0.0, Space::H1)?;
    let mut dsq = 0.0;
    let mut grads = Vec::with_capacity(3);
    for c in 0..3 {
        grads.push(grid::gradient(grid, &us.comps[c])?);
    }
    for i in 0..3 {
        for j in 0..3 {
            let dij = grid::add_spectral(&grads[j].comps[i], &grads[i].comps[j]);
            let n = l2_norm(grid, &dij)?;
            dsq += n * n;
        }
    }
    Ok(h1 / dsq.sqrt())
}
