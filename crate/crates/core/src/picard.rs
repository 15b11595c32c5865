//! The frozen-coefficient linear solve (divergence removal, boundary
//! homogenization, Stokes evolution, recombination) and the nonlinear
//! fixed-point iteration built on it.

use crate::btensors::{
    apply_b1, apply_b2_volume, assemble_b1, assemble_rhs, euclidean_div_sym_grad, BTensors,
    BtensorError,
};
use crate::corrector::{assemble_corrector, CorrectorError, CorrectorReport, TimeGrid};
use crate::flowmap::{kinematics, Displacement, FlowmapError, Kinematics, LagrangianOps};
use crate::grid::{self, Grid, GridError, ScalarField, SurfaceField, VectorField};
use crate::norms::{self, Space, TrajectorySlice};
use crate::stokes::{ModeStokesSolver, StokesError, StokesState};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PicardError {
    #[error("picard/compatibility: ||div u0 - F2(0)||_inf = {residual:.3e} exceeds {tol:.3e}")]
    Compatibility { residual: f64, tol: f64 },
    #[error("picard/smallness: ||Lambda^(s-1) grad xi0||_H1 = {norm:.6e} exceeds small_data_eps = {eps:.6e}")]
    SmallnessGate { norm: f64, eps: f64 },
    #[error("picard/initial-divergence: ||div_(J0 A0) v0||_inf = {residual:.3e} exceeds {tol:.3e}")]
    InitialDivergence { residual: f64, tol: f64 },
    #[error("picard/non-contraction: factor >= 1 for {passes} consecutive passes (last factors {factors:?})")]
    NonContraction { passes: usize, factors: Vec<f64> },
    #[error("picard/blow-up: {0}")]
    BlowUp(#[from] FlowmapError),
    #[error("picard/tensors: {0}")]
    Tensors(#[from] BtensorError),
    #[error("picard/corrector: {0}")]
    Corrector(#[from] CorrectorError),
    #[error("picard/stokes: {0}")]
    Stokes(#[from] StokesError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Frozen-coefficient data for one linear solve: B tensors at the previous
/// displacement iterate, the K slots (both carrying the previous velocity),
/// and the interior forcing series.
pub struct LinearData {
    pub bt: Vec<BTensors>,
    pub k1: Vec<VectorField>,
    pub k2: Vec<VectorField>,
    pub f1: Vec<VectorField>,
}

/// Output of one linear solve: discrete solution of the linear system and
/// the per-equation residual report.
pub struct LinearSolution {
    pub eta1: Vec<SurfaceField>,
    pub u: Vec<VectorField>,
    pub p: Vec<ScalarField>,
    pub report: LinearResidualReport,
    pub corrector_report: CorrectorReport,
}

/// Max residuals of the seven equations of the linear system, over retained
/// times (interior equations at interior nodes).
#[derive(Debug, Clone, Default)]
pub struct LinearResidualReport {
    pub kinematic: f64,
    pub momentum: f64,
    pub divergence: f64,
    pub stress: f64,
    pub bottom: f64,
    pub initial_u: f64,
    pub initial_eta: f64,
}

/// Theorem-pipeline linear solve: remove the divergence, homogenize the
/// boundary, evolve the homogeneous Stokes system, recombine
/// u = U + V + W and p = P1 + Q.
pub fn linear_solve(
    grid: &Grid,
    tg: &TimeGrid,
    data: &LinearData,
    xi0_surface: &SurfaceField,
    u0: &VectorField,
) -> Result<LinearSolution, PicardError> {
    let nt = tg.nt;
    let nu = grid.config.nu;
    // assemble F2 = B1 : grad K1 and F3 = B2 : grad_h K2 (volume)
    let mut f2 = Vec::with_capacity(nt + 1);
    let mut f3 = Vec::with_capacity(nt + 1);
    for k in 0..=nt {
        let f2k = grid::dealias(
            grid,
            &grid::to_spectral(grid, &apply_b1(grid, &data.bt[k], &data.k1[k])?)?,
        )?;
        f2.push(f2k);
        f3.push(apply_b2_volume(grid, &data.bt[k], &data.k2[k])?);
    }
    // compatibility: div u0 = F2(0), measured at interior nodes (the
    // boundary-node divergence stencil is not an equation row anywhere)
    let u0s = grid::vec_to_spectral(grid, u0)?;
    let div_u0 = grid::divergence(grid, &u0s)?;
    let compat_field = grid::to_physical(grid, &grid::sub_spectral(&div_u0, &f2[0]))?;
    let cv = compat_field.physical()?;
    let mut compat = 0.0f64;
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            for j in 1..grid.nv - 1 {
                compat = compat.max(cv[grid.idx(k2, k3, j)].abs());
            }
        }
    }
    // gate tolerance: configured floor plus the O(h²) discrete slack that
    // even exactly-compatible continuum data carries on this grid
    let mut data_scale = grid::max_abs_physical(grid, &f2[0])?;
    for c in 0..3 {
        let gc = grid::gradient(grid, &u0s.comps[c])?;
        for gcc in &gc.comps {
            data_scale = data_scale.max(grid::max_abs_physical(grid, gcc)?);
        }
    }
    // sanity gate: reject data whose divergence mismatch is more than a
    // percent of its own gradient scale (plus the configured floor and the
    // O(h²) slack that exactly-compatible continuum data carries)
    let tol = grid
        .config
        .tol
        .residual
        .max(grid.h * grid.h * data_scale)
        .max(0.01 * data_scale);
    if compat > tol {
        return Err(PicardError::Compatibility {
            residual: compat,
            tol,
        });
    }
    // corrector
    let bundle = assemble_corrector(grid, tg, &f2, &f3, &data.f1, &u0s)?;
    // Stokes evolution of (xi1, W, Q) with forcing (f0~, f1~)
    let solver = ModeStokesSolver::new(grid, tg.dt)?;
    let mut state = StokesState {
        eta1: xi0_surface.clone(),
        w: bundle.w0.clone(),
        q: ScalarField::zeros_spectral(grid),
    };
    let mut eta_series = vec![state.eta1.clone()];
    let mut u_series = vec![grid::vec_add(
        &bundle.w0,
        &grid::vec_add(&bundle.u[0], &bundle.v[0]),
    )];
    let mut p_series = vec![ScalarField::zeros_spectral(grid)];
    let mut w_series = vec![bundle.w0.clone()];
    for k in 1..=nt {
        state = solver.step(grid, &state, &bundle.f0_tilde[k], &bundle.f1_tilde[k])?;
        eta_series.push(state.eta1.clone());
        u_series.push(grid::vec_add(
            &state.w,
            &grid::vec_add(&bundle.u[k], &bundle.v[k]),
        ));
        p_series.push(grid::add_spectral(&state.q, &bundle.p1[k]));
        w_series.push(state.w.clone());
    }
    // residual report of the seven linear-system equations
    let mut report = LinearResidualReport::default();
    let dt = tg.dt;
    for k in 1..=nt {
        // (1) surface kinematic: (eta_k - eta_{k-1})/dt - u1_top - 0
        let ek = eta_series[k].spectral()?;
        let ekm = eta_series[k - 1].spectral()?;
        let u1 = u_series[k].comps[0].spectral()?;
        let mut worst = 0.0f64;
        for m in 0..grid.surface_len() {
            let top = u1[m * grid.nv + grid.nv - 1];
            worst = worst.max(((ek[m] - ekm[m]) / dt - top).norm());
        }
        report.kinematic = report.kinematic.max(worst);
        // (2) momentum at interior nodes
        let dudt = grid::vec_scale(&grid::vec_sub(&u_series[k], &u_series[k - 1]), 1.0 / dt);
        let visc = euclidean_div_sym_grad(grid, &u_series[k])?;
        let gp = grid::gradient(grid, &p_series[k])?;
        for c in 0..3 {
            let mut res = grid::sub_spectral(&dudt.comps[c], &data.f1[k].comps[c]);
            res = grid::axpy(grid, Complex64::new(-nu, 0.0), &visc.comps[c], &res);
            res = grid::add_spectral(&res, &gp.comps[c]);
            let resp = grid::to_physical(grid, &res)?;
            let vals = resp.physical()?;
            let mut worst = 0.0f64;
            for k2 in 0..grid.n2 {
                for k3 in 0..grid.n3 {
                    for j in 1..grid.nv - 1 {
                        worst = worst.max(vals[grid.idx(k2, k3, j)].abs());
                    }
                }
            }
            report.momentum = report.momentum.max(worst);
        }
        // (3) divergence
        let div = grid::divergence(grid, &u_series[k])?;
        let dres = grid::sub_spectral(&div, &f2[k]);
        report.divergence = report
            .divergence
            .max(grid::max_abs_physical(grid, &dres)?);
        // (4) stress rows at the top
        let d1u1 = grid::vertical_derivative(grid, &u_series[k].comps[0], 1)?;
        let d1u2 = grid::vertical_derivative(grid, &u_series[k].comps[1], 1)?;
        let d1u3 = grid::vertical_derivative(grid, &u_series[k].comps[2], 1)?;
        let d2u1 = grid::d2(grid, &u_series[k].comps[0])?;
        let d3u1 = grid::d3(grid, &u_series[k].comps[0])?;
        let ps = p_series[k].spectral()?;
        let d1u1s = d1u1.spectral()?;
        let row2 = grid::sub_spectral(
            &grid::scale(&grid::add_spectral(&d1u2, &d2u1), -nu),
            &f3[k][1],
        );
        let row3 = grid::sub_spectral(
            &grid::scale(&grid::add_spectral(&d1u3, &d3u1), -nu),
            &f3[k][2],
        );
        let f31s = f3[k][0].spectral()?;
        let g = grid.config.g;
        let mut worst = 0.0f64;
        for m in 0..grid.surface_len() {
            let top = m * grid.nv + grid.nv - 1;
            let r1 = ps[top] - g * ek[m] - 2.0 * nu * d1u1s[top] - f31s[top];
            worst = worst.max(r1.norm());
        }
        for row in [&row2, &row3] {
            let rs = row.spectral()?;
            for m in 0..grid.surface_len() {
                worst = worst.max(rs[m * grid.nv + grid.nv - 1].norm());
            }
        }
        report.stress = report.stress.max(worst);
        // (5) bottom Dirichlet
        let mut worstb = 0.0f64;
        for c in &u_series[k].comps {
            let cs = c.spectral()?;
            for m in 0..grid.surface_len() {
                worstb = worstb.max(cs[m * grid.nv].norm());
            }
        }
        report.bottom = report.bottom.max(worstb);
    }
    // (6)-(7) initial data
    for c in 0..3 {
        let d = grid::sub_spectral(&u_series[0].comps[c], &u0s.comps[c]);
        report.initial_u = report.initial_u.max(grid::max_coeff(&d));
    }
    {
        let a = eta_series[0].spectral()?;
        let b = xi0_surface.spectral()?;
        for m in 0..grid.surface_len() {
            report.initial_eta = report.initial_eta.max((a[m] - b[m]).norm());
        }
    }
    let _ = w_series;
    Ok(LinearSolution {
        eta1: eta_series,
        u: u_series,
        p: p_series,
        report,
        corrector_report: bundle.report,
    })
}

/// Trapezoidal displacement update: xi_k = xi_{k-1} + dt/2 (v_{k-1} + v_k).
pub fn update_displacement(
    grid: &Grid,
    xi0: &VectorField,
    v: &[VectorField],
    dt: f64,
) -> Result<Vec<VectorField>, GridError> {
    let mut out = Vec::with_capacity(v.len());
    let xi0s = grid::vec_to_spectral(grid, xi0)?;
    out.push(xi0s);
    for k in 1..v.len() {
        let step = grid::vec_scale(&grid::vec_add(&v[k - 1], &v[k]), 0.5 * dt);
        out.push(grid::vec_add(&out[k - 1], &step));
    }
    Ok(out)
}

/// Time-indexed solution of the nonlinear system with its norm ledger.
pub struct Trajectory {
    pub times: Vec<f64>,
    pub xi: Vec<VectorField>,
    pub v: Vec<VectorField>,
    pub q: Vec<ScalarField>,
    pub eta1: Vec<SurfaceField>,
}

/// Per-pass iteration diagnostics.
#[derive(Debug, Clone, Default)]
pub struct IterationReport {
    pub deltas: Vec<f64>,
    pub factors: Vec<f64>,
    pub momentum_residuals: Vec<f64>,
    pub linear_reports: Vec<LinearResidualReport>,
    pub smallness_norm: f64,
    pub horizon: f64,
    pub converged: bool,
    pub passes: usize,
}

fn xi_surface_trace(grid: &Grid, xi: &VectorField) -> Result<SurfaceField, GridError> {
    let s = grid::vec_to_spectral(grid, xi)?;
    grid::surface_trace(grid, &s.comps[0])
}

/// The (assume-T)-shaped horizon cap: T <= c_T / (||xi0^1||^2_{H^s} +
/// ||Lambda^{s-1} v0||^2_{H^1}), intersected with t_final.
pub fn horizon_cap(
    grid: &Grid,
    xi0_surface: &SurfaceField,
    v0: &VectorField,
) -> Result<f64, GridError> {
    let s = grid.config.s;
    let ne = norms::surface_sobolev_norm(grid, xi0_surface, s)?;
    let nv = norms::anisotropic_norm_vector(grid, v0, s - 1.0, Space::H1)?;
    let denom = ne * ne + nv * nv;
    let cap = if denom > 0.0 {
        grid.config.c_t / denom
    } else {
        f64::INFINITY
    };
    Ok(grid.config.t_final.min(cap))
}

/// Nonlinear solve: outer passes refresh (B1, B2, K, F1) from the latest
/// iterate (collapsed default); `config.nested` enables the literal inner
/// iteration with tensors frozen per outer pass.
pub fn picard_solve(
    grid: &Grid,
    xi0: &Displacement,
    v0: &VectorField,
) -> Result<(Trajectory, IterationReport), PicardError> {
    let cfg = &grid.config;
    let mut report = IterationReport::default();
    // smallness gate
    let xi0s = grid::vec_to_spectral(grid, &xi0.xi)?;
    let gxi0 = gradient_vector(grid, &xi0s)?;
    let mut small_sq = 0.0;
    for gc in &gxi0 {
        let n = norms::anisotropic_norm_vector(grid, gc, cfg.s - 1.0, Space::H1)?;
        small_sq += n * n;
    }
    let small = small_sq.sqrt();
    report.smallness_norm = small;
    if small > cfg.small_data_eps {
        return Err(PicardError::SmallnessGate {
            norm: small,
            eps: cfg.small_data_eps,
        });
    }
    // initial divergence condition: div(J0 A0) . v0 = d_j(a_ij v0^i) = 0
    let kin0 = kinematics(grid, xi0)?;
    let v0s = grid::vec_to_spectral(grid, v0)?;
    let wflux = cof_transpose_apply(grid, &kin0, &v0s)?;
    let div0 = grid::divergence(grid, &wflux)?;
    let div0_res = grid::max_abs_physical(grid, &div0)?;
    if div0_res > cfg.tol.residual {
        return Err(PicardError::InitialDivergence {
            residual: div0_res,
            tol: cfg.tol.residual,
        });
    }
    // horizon restriction
    let xi0_trace = xi_surface_trace(grid, &xi0.xi)?;
    let t_cap = horizon_cap(grid, &xi0_trace, &v0s)?;
    let nt = ((t_cap / cfg.dt).floor() as usize).clamp(2, (cfg.t_final / cfg.dt).round() as usize);
    let tg = TimeGrid { dt: cfg.dt, nt };
    report.horizon = tg.t_final();

    // initial iterate: constant-in-time extension of the data
    let mut xi_series: Vec<VectorField> = (0..=nt).map(|_| xi0s.clone()).collect();
    let mut v_series: Vec<VectorField> = (0..=nt).map(|_| v0s.clone()).collect();
    let mut q_series: Vec<ScalarField> =
        (0..=nt).map(|_| ScalarField::zeros_spectral(grid)).collect();
    let mut eta_series: Vec<SurfaceField> = (0..=nt).map(|_| xi0_trace.clone()).collect();
    let times = tg.times();
    // residual of the starting iterate (entry 0 of the momentum series)
    {
        let traj0 = Trajectory {
            times: times.clone(),
            xi: xi_series.clone(),
            v: v_series.clone(),
            q: q_series.clone(),
            eta1: eta_series.clone(),
        };
        let rb0 = residual_and_blowup_report(grid, &tg, &traj0)?;
        report.momentum_residuals.push(rb0.momentum);
    }
    let mut prev_delta = f64::INFINITY;
    let mut rising = 0usize;
    let mut converged = false;
    for pass in 0..cfg.max_iters {
        let sol = solve_pass(grid, &tg, &xi_series, &v_series, &q_series, &xi0_trace, &v0s)?;
        let xi_new = update_displacement(grid, &xi0.xi, &sol.u, tg.dt)?;
        // X_T increment against the previous iterate
        let dv: Vec<VectorField> = (0..=nt)
            .map(|k| grid::vec_sub(&sol.u[k], &v_series[k]))
            .collect();
        let dq: Vec<ScalarField> = (0..=nt)
            .map(|k| grid::sub_spectral(&sol.p[k], &q_series[k]))
            .collect();
        let de: Vec<SurfaceField> = (0..=nt)
            .map(|k|

                {
                    let a = sol.eta1[k].spectral().unwrap();
                    let b = eta_series[k].spectral().unwrap();
                    SurfaceField::Spectral(a.iter().zip(b).map(|(x, y)| x - y).collect())
                })
            .collect();
        let delta = norms::xt_norm(
            grid,
            &TrajectorySlice {
                times: &times,
                eta1: &de,
                v: &dv,
                q: &dq,
            },
        )?;
        report.deltas.push(delta);
        if report.deltas.len() >= 2 {
            let f = delta / prev_delta;
            report.factors.push(f);
            if f >= 1.0 {
                rising += 1;
                if rising >= 3 {
                    report.passes = pass + 1;
                    return Err(PicardError::NonContraction {
                        passes: rising,
                        factors: report.factors.clone(),
                    });
                }
            } else {
                rising = 0;
            }
        }
        prev_delta = delta;
        xi_series = xi_new;
        v_series = sol.u;
        q_series = sol.p;
        eta_series = sol.eta1;
        // momentum residual of the nonlinear system at this iterate
        let traj = Trajectory {
            times: times.clone(),
            xi: xi_series.clone(),
            v: v_series.clone(),
            q: q_series.clone(),
            eta1: eta_series.clone(),
        };
        let rb = residual_and_blowup_report(grid, &tg, &traj)?;
        report.momentum_residuals.push(rb.momentum);
        report.linear_reports.push(sol.report);
        report.passes = pass + 1;
        if delta <= cfg.tol.outer {
            converged = true;
            break;
        }
    }
    report.converged = converged;
    Ok((
        Trajectory {
            times,
            xi: xi_series,
            v: v_series,
            q: q_series,
            eta1: eta_series,
        },
        report,
    ))
}

/// One outer pass: build frozen data from the previous iterate, then either
/// a single linear solve (collapsed) or the literal inner iteration.
fn solve_pass(
    grid: &Grid,
    tg: &TimeGrid,
    xi_series: &[VectorField],
    v_series: &[VectorField],
    q_series: &[ScalarField],
    xi0_trace: &SurfaceField,
    v0: &VectorField,
) -> Result<LinearSolution, PicardError> {
    let nt = tg.nt;
    let mut bt = Vec::with_capacity(nt + 1);
    let mut f1 = Vec::with_capacity(nt + 1);
    for k in 0..=nt {
        let kin = kinematics(
            grid,
            &Displacement {
                xi: xi_series[k].clone(),
            },
        )?;
        let btk = assemble_b1(grid, &kin)?;
        let rhs = assemble_rhs(grid, &kin, &btk, &v_series[k], &q_series[k])?;
        bt.push(btk);
        f1.push(rhs.f1);
    }
    if !grid.config.nested {
        let data = LinearData {
            bt,
            k1: v_series.to_vec(),
            k2: v_series.to_vec(),
            f1,
        };
        return linear_solve(grid, tg, &data, xi0_trace, v0);
    }
    // nested: iterate the K/F slots with tensors frozen
    let inner_tol = 0.1 * grid.config.tol.outer;
    let mut k_cur = v_series.to_vec();
    let mut q_cur = q_series.to_vec();
    let mut eta_prev: Option<Vec<SurfaceField>> = None;
    let mut last: Option<LinearSolution> = None;
    let times = tg.times();
    for _m in 0..grid.config.max_iters {
        // F1 refreshed at the frozen kinematics with the inner iterate
        let mut f1m = Vec::with_capacity(nt + 1);
        for k in 0..=nt {
            let kin = kinematics(
                grid,
                &Displacement {
                    xi: xi_series[k].clone(),
                },
            )?;
            f1m.push(crate::btensors::assemble_f1(grid, &kin, &k_cur[k], &q_cur[k])?);
        }
        let data = LinearData {
            bt: bt.clone(),
            k1: k_cur.clone(),
            k2: k_cur.clone(),
            f1: f1m,
        };
        let sol = linear_solve(grid, tg, &data, xi0_trace, v0)?;
        let dv: Vec<VectorField> = (0..=nt)
            .map(|k| grid::vec_sub(&sol.u[k], &k_cur[k]))
            .collect();
        let dq: Vec<ScalarField> = (0..=nt)
            .map(|k| grid::sub_spectral(&sol.p[k], &q_cur[k]))
            .collect();
        let de: Vec<SurfaceField> = (0..=nt)
            .map(|k| {
                let a = sol.eta1[k].spectral().unwrap().clone();
                match &eta_prev {
                    Some(pe) => {
                        let b = pe[k].spectral().unwrap();
                        SurfaceField::Spectral(a.iter().zip(b).map(|(x, y)| x - y).collect())
                    }
                    None => SurfaceField::Spectral(a),
                }
            })
            .collect();
        let delta = norms::xt_norm(
            grid,
            &TrajectorySlice {
                times: &times,
                eta1: &de,
                v: &dv,
                q: &dq,
            },
        )?;
        k_cur = sol.u.clone();
        q_cur = sol.p.clone();
        eta_prev = Some(sol.eta1.clone());
        let done = delta <= inner_tol;
        last = Some(sol);
        if done {
            break;
        }
    }
    Ok(last.expect("inner iteration ran at least once"))
}

/// Gradient of each component: rows are fields (d_d xi^c packaged by c).
fn gradient_vector(grid: &Grid, f: &VectorField) -> Result<Vec<VectorField>, GridError> {
    let mut out = Vec::with_capacity(3);
    for c in 0..3 {
        out.push(grid::gradient(grid, &f.comps[c])?);
    }
    Ok(out)
}

/// w^j = a_{ij} v^i: the flux whose divergence is the J A-weighted
/// divergence (Piola form).
fn cof_transpose_apply(
    grid: &Grid,
    kin: &Kinematics,
    v: &VectorField,
) -> Result<VectorField, GridError> {
    let vp = grid::vec_to_physical(grid, v)?;
    let n = grid.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for p in 0..n {
        let a = kin.cof.at(p);
        for j in 0..3 {
            let mut s = 0.0;
            for i in 0..3 {
                s += a[i][j] * vp.comps[i].physical()?[p];
            }
            out[j][p] = s;
        }
    }
    let [o1, o2, o3] = out;
    Ok(VectorField {
        comps: [
            grid::to_spectral(grid, &ScalarField::Physical(o1))?,
            grid::to_spectral(grid, &ScalarField::Physical(o2))?,
            grid::to_spectral(grid, &ScalarField::Physical(o3))?,
        ],
    })
}

/// Per-time residual magnitudes of the nonlinear-system equations.
#[derive(Debug, Clone, Copy, Default)]
pub struct ResidualRow {
    pub kinematic: f64,
    pub momentum: f64,
    pub divergence_a: f64,
    pub stress: f64,
    pub bottom: f64,
}

/// Residual norms of the six nonlinear-system equations and the blow-up
/// monitor triple per retained time.
#[derive(Debug, Clone, Default)]
pub struct ResidualBlowupReport {
    pub rows: Vec<ResidualRow>,
    pub kinematic: f64,
    pub momentum: f64,
    pub divergence_a: f64,
    pub stress: f64,
    pub bottom: f64,
    pub initial: f64,
    /// per time: (||Lambda^{s-1}(grad xi, v)||_{H1}, ||xi1||_{H^s}, ||J^-1||_inf)
    pub monitor: Vec<(f64, f64, f64)>,
}

pub fn residual_and_blowup_report(
    grid: &Grid,
    tg: &TimeGrid,
    traj: &Trajectory,
) -> Result<ResidualBlowupReport, PicardError> {
    let mut rep = ResidualBlowupReport::default();
    let nt = tg.nt;
    let dt = tg.dt;
    let nu = grid.config.nu;
    let g = grid.config.g;
    let s = grid.config.s;
    for k in 0..=nt {
        let kin = kinematics(
            grid,
            &Displacement {
                xi: traj.xi[k].clone(),
            },
        )?;
        // blow-up monitor
        let gxi = gradient_vector(grid, &traj.xi[k])?;
        let mut n1 = 0.0;
        for gc in &gxi {
            let nn = norms::anisotropic_norm_vector(grid, gc, s - 1.0, Space::H1)?;
            n1 += nn * nn;
        }
        let nv = norms::anisotropic_norm_vector(grid, &traj.v[k], s - 1.0, Space::H1)?;
        n1 += nv * nv;
        let ne = norms::surface_sobolev_norm(grid, &traj.eta1[k], s)?;
        rep.monitor.push((n1.sqrt(), ne, kin.j_inv_max));
        if k == 0 {
            rep.rows.push(ResidualRow::default());
            continue;
        }
        let mut row = ResidualRow::default();
        // (1) d_t xi - v (backward difference)
        for c in 0..3 {
            let d = grid::sub_spectral(
                &grid::scale(
                    &grid::sub_spectral(&traj.xi[k].comps[c], &traj.xi[k - 1].comps[c]),
                    1.0 / dt,
                ),
                &traj.v[k].comps[c],
            );
            row.kinematic = row.kinematic.max(grid::max_abs_physical(grid, &d)?);
        }
        // (2) momentum: d_t v + grad_A q - nu div_A D_A(v)
        let ops = LagrangianOps::new(grid, &kin);
        let gq = ops.grad_a(&traj.q[k])?;
        let dda = ops.div_a_sym_grad_a(&traj.v[k])?;
        let dvdt = grid::vec_scale(&grid::vec_sub(&traj.v[k], &traj.v[k - 1]), 1.0 / dt);
        let dvdtp = grid::vec_to_physical(grid, &dvdt)?;
        let mut worst = 0.0f64;
        for c in 0..3 {
            let a = dvdtp.comps[c].physical()?;
            let b = gq.comps[c].physical()?;
            let d = dda.comps[c].physical()?;
            for k2 in 0..grid.n2 {
                for k3 in 0..grid.n3 {
                    for j in 1..grid.nv - 1 {
                        let p = grid.idx(k2, k3, j);
                        worst = worst.max((a[p] + b[p] - nu * d[p]).abs());
                    }
                }
            }
        }
        row.momentum = worst;
        // (3) div_A v
        let diva = ops.div_a(&traj.v[k])?;
        row.divergence_a = diva.physical()?.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        // (4) stress rows: (q - g xi1) N - nu D_A(v) N on the top
        let da = ops.sym_grad_a(&traj.v[k])?;
        let qp = grid::to_physical(grid, &traj.q[k])?;
        let etap = grid::surface_to_physical(grid, &traj.eta1[k])?;
        let qv = qp.physical()?;
        let ev = match &etap {
            SurfaceField::Physical(v) => v,
            _ => unreachable!(),
        };
        let mut worst = 0.0f64;
        for k2 in 0..grid.n2 {
            for k3 in 0..grid.n3 {
                let m = grid.sidx(k2, k3);
                let p = grid.idx(k2, k3, grid.nv - 1);
                let nvec = kin.nvec[m];
                for i in 0..3 {
                    let mut r = (qv[p] - g * ev[m]) * nvec[i];
                    for jj in 0..3 {
                        r -= nu * da.entries[9 * p + 3 * i + jj] * nvec[jj];
                    }
                    worst = worst.max(r.abs());
                }
            }
        }
        row.stress = worst;
        // (5) bottom trace
        for c in &traj.v[k].comps {
            let cs = c.spectral()?;
            for m in 0..grid.surface_len() {
                row.bottom = row.bottom.max(cs[m * grid.nv].norm());
            }
        }
        rep.kinematic = rep.kinematic.max(row.kinematic);
        rep.momentum = rep.momentum.max(row.momentum);
        rep.divergence_a = rep.divergence_a.max(row.divergence_a);
        rep.stress = rep.stress.max(row.stress);
        rep.bottom = rep.bottom.max(row.bottom);
        rep.rows.push(row);
    }
    // (6) initial data
    for c in 0..3 {
        let d = grid::sub_spectral(&traj.xi[0].comps[c], &traj.xi[0].comps[c]);
        rep.initial = rep.initial.max(grid::max_coeff(&d));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Config};
    use crate::synth;

    fn test_grid() -> Grid {
        make_grid(Config {
            modes: (8, 8),
            nv: 13,
            dt: 0.02,
            t_final: 0.16,
            ..Config::default()
        })
        .unwrap()
    }

    fn zero_tensors(grid: &Grid, nt: usize) -> Vec<BTensors> {
        let kin = kinematics(
            grid,
            &Displacement {
                xi: VectorField::zeros_spectral(grid),
            },
        )
        .unwrap();
        (0..=nt).map(|_| assemble_b1(grid, &kin).unwrap()).collect()
    }

    #[test]
    fn homogeneous_pipeline_degenerates_to_stokes() {
        // B1 = B2 = 0, F1 = 0: U = V = 0 and the solve is the plain Stokes
        // evolution from (xi0, u0)
        let g = test_grid();
        let tg = TimeGrid { dt: 0.02, nt: 8 };
        let data = LinearData {
            bt: zero_tensors(&g, 8),
            k1: (0..=8).map(|_| VectorField::zeros_spectral(&g)).collect(),
            k2: (0..=8).map(|_| VectorField::zeros_spectral(&g)).collect(),
            f1: (0..=8).map(|_| VectorField::zeros_spectral(&g)).collect(),
        };
        let w0 = crate::stokes::leray_project(&g, &synth::random_vector_zero_bottom(&g, 2, 2, 0.1))
            .unwrap();
        let xi0t = synth::random_surface(&g, 3, 2, 0.1);
        let sol = linear_solve(&g, &tg, &data, &xi0t, &w0).unwrap();
        assert!(sol.corrector_report.max_div() < 1e-12);
        assert!(sol.report.bottom < 1e-10);
        assert!(sol.report.initial_u < 1e-12);
        // energy decays (homogeneous Stokes with zero forcing)
        let mut prev = f64::INFINITY;
        for k in 0..=8 {
            let e = {
                let nw = norms::l2_norm_vector(&g, &sol.u[k]).unwrap();
                let nesurf = norms::surface_sobolev_norm(&g, &sol.eta1[k], 0.0).unwrap();
                nw * nw + g.config.g * nesurf * nesurf
            };
            assert!(e <= prev + 1e-12, "energy grew at {k}");
            prev = e;
        }
    }

    #[test]
    fn compatibility_violation_is_rejected() {
        let g = test_grid();
        let tg = TimeGrid { dt: 0.02, nt: 4 };
        let data = LinearData {
            bt: zero_tensors(&g, 4),
            k1: (0..=4).map(|_| VectorField::zeros_spectral(&g)).collect(),
            k2: (0..=4).map(|_| VectorField::zeros_spectral(&g)).collect(),
            f1: (0..=4).map(|_| VectorField::zeros_spectral(&g)).collect(),
        };
        // u0 with nonzero divergence but F2 = 0
        let u0 = synth::random_vector(&g, 9, 2, 2, 0.5);
        match linear_solve(&g, &tg, &data, &SurfaceField::zeros_spectral(&g), &u0) {
            Err(PicardError::Compatibility { .. }) => {}
            other => panic!("expected compatibility error, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn update_displacement_trapezoid() {
        let g = test_grid();
        let dt = 0.1;
        // v = 0 -> xi constant
        let xi0 = synth::random_vector(&g, 1, 2, 2, 0.01);
        let zeros: Vec<VectorField> = (0..=3).map(|_| VectorField::zeros_spectral(&g)).collect();
        let xs = update_displacement(&g, &xi0, &zeros, dt).unwrap();
        let xi0s = grid::vec_to_spectral(&g, &xi0).unwrap();
        for k in 0..=3 {
            for c in 0..3 {
                let d = grid::sub_spectral(&xs[k].comps[c], &xi0s.comps[c]);
                assert!(grid::max_coeff(&d) < 1e-14);
            }
        }
        // v constant c -> xi = xi0 + t c exactly
        let w = synth::random_vector(&g, 2, 2, 2, 1.0);
        let ws = grid::vec_to_spectral(&g, &w).unwrap();
        let vs: Vec<VectorField> = (0..=3).map(|_| ws.clone()).collect();
        let xs = update_displacement(&g, &xi0, &vs, dt).unwrap();
        for k in 0..=3 {
            for c in 0..3 {
                let expect = grid::axpy(
                    &g,
                    Complex64::new(k as f64 * dt, 0.0),
                    &ws.comps[c],
                    &xi0s.comps[c],
                );
                let d = grid::sub_spectral(&xs[k].comps[c], &expect);
                assert!(grid::max_coeff(&d) < 1e-13);
            }
        }
    }

    #[test]
    fn update_displacement_second_order() {
        // v(t) = sin(t) w: trapezoid error O(dt^2) against 1 - cos(t)
        let g = test_grid();
        let w = grid::vec_to_spectral(&g, &synth::random_vector(&g, 7, 2, 2, 1.0)).unwrap();
        let xi0 = VectorField::zeros_spectral(&g);
        let err = |nt: usize| {
            let dt = 1.0 / nt as f64;
            let vs: Vec<VectorField> = (0..=nt)
                .map(|k| grid::vec_scale(&w, (k as f64 * dt).sin()))
                .collect();
            let xs = update_displacement(&g, &xi0, &vs, dt).unwrap();
            let exact = grid::vec_scale(&w, 1.0 - 1.0f64.cos());
            let mut e = 0.0f64;
            for c in 0..3 {
                let d = grid::sub_spectral(&xs[nt].comps[c], &exact.comps[c]);
                e = e.max(grid::max_coeff(&d));
            }
            e
        };
        let (e1, e2) = (err(16), err(32));
        let order = (e1 / e2).log2();
        assert!(order > 1.8, "trapezoid order {order:.2}");
    }

    #[test]
    fn zero_data_converges_to_zero_in_one_pass() {
        let g = test_grid();
        let xi0 = Displacement {
            xi: VectorField::zeros_spectral(&g),
        };
        let v0 = VectorField::zeros_spectral(&g);
        let (traj, report) = picard_solve(&g, &xi0, &v0).unwrap();
        assert!(report.converged);
        assert_eq!(report.passes, 1);
        for k in 0..traj.times.len() {
            for c in &traj.v[k].comps {
                assert!(grid::max_coeff(c) < 1e-13);
            }
        }
        let rb = residual_and_blowup_report(
            &g,
            &TimeGrid {
                dt: g.config.dt,
                nt: traj.times.len() - 1,
            },
            &traj,
        )
        .unwrap();
        assert!(rb.momentum < 1e-12);
        for (n1, ne, jinv) in &rb.monitor {
            assert!(*n1 < 1e-12 && *ne < 1e-12);
            assert!((jinv - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nested_mode_agrees_with_collapsed() {
        // the literal inner iteration converges to the same trajectory as
        // the collapsed refresh, well within the outer tolerance
        let mk = |nested: bool| {
            let g = make_grid(Config {
                modes: (8, 8),
                nv: 13,
                dt: 0.02,
                t_final: 0.08,
                nested,
                ..Config::default()
            })
            .unwrap();
            let (xi0, v0) = crate::synth::admissible_small_data(&g, 13, 5e-3);
            let (traj, rep) = picard_solve(&g, &xi0, &v0).unwrap();
            assert!(rep.converged, "nested={nested} did not converge");
            (g, traj)
        };
        let (g, t_collapsed) = mk(false);
        let (_, t_nested) = mk(true);
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for k in 0..t_collapsed.times.len() {
            for c in 0..3 {
                let d = grid::sub_spectral(
                    &t_collapsed.v[k].comps[c],
                    &t_nested.v[k].comps[c],
                );
                worst = worst.max(grid::max_coeff(&d));
                scale = scale.max(grid::max_coeff(&t_collapsed.v[k].comps[c]));
            }
        }
        assert!(
            worst <= 1e-6 * scale.max(1e-10),
            "nested vs collapsed drift {worst:.3e} (scale {scale:.3e})"
        );
        let _ = g;
    }

    #[test]
    fn smallness_gate_refuses_large_data() {
        let g = test_grid();
        let xi0 = Displacement {
            xi: synth::random_vector(&g, 5, 2, 2, 5.0),
        };
        let v0 = VectorField::zeros_spectral(&g);
        match picard_solve(&g, &xi0, &v0) {
            Err(PicardError::SmallnessGate { norm, eps }) => {
                assert!(norm > eps);
            }
            other => panic!("expected smallness gate, got ok={:?}", other.is_ok()),
        }
    }

    #[test]
    fn small_data_run_contracts() {
        let g = test_grid();
        // admissible small data
        let (xi0, v0) = crate::synth::admissible_small_data(&g, 42, 1e-2);
        let (traj, report) = picard_solve(&g, &xi0, &v0).unwrap();
        assert!(report.converged, "not converged: deltas {:?}", report.deltas);
        // contraction after the first pass
        for (i, f) in report.factors.iter().enumerate() {
            if report.deltas[i + 1] < 1e-13 {
                continue; // below roundoff floor
            }
            assert!(*f < 1.0, "factor {f} at pass {i}");
        }
        // trajectory satisfies div_A v to a small tolerance
        let tgv = TimeGrid {
            dt: g.config.dt,
            nt: traj.times.len() - 1,
        };
        let rb = residual_and_blowup_report(&g, &tgv, &traj).unwrap();
        assert!(rb.divergence_a < 5e-4, "div_A v = {:.3e}", rb.divergence_a);
        assert!(rb.bottom < 1e-10);
    }

}
