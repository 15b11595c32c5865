//! The nonlinearity tensors B¹, B² and the right-hand sides F₁, F₂, F₃ that
//! cast the Lagrangian system in its linearized form.
//!
//! B¹ = I − a₁₁⁻¹ J𝒜 contracts against ∇v so that
//!   ∇·v − B¹:∇v = a₁₁⁻¹ J ∇_𝒜·v   (pointwise algebraic identity).
//! B² is the 3×2×3 boundary tensor with (B²:∇_h v)^j = B^{2,j}_{α,i} ∂_α v^i
//! assembled from the 𝓑₁…𝓑₄, B_h blocks.

use crate::flowmap::{gradient_tensor, Kinematics, LagrangianOps, MatrixField};
use crate::grid::{self, Grid, GridError, ScalarField, SurfaceField, VectorField, C0};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BtensorError {
    #[error("btensors: a₁₁ below floor: min a₁₁ = {min:.6e} < {floor:.6e}")]
    A11Floor { min: f64, floor: f64 },
    #[error("btensors: |a⃗₁| below floor: min |a⃗₁| = {min:.6e} < {floor:.6e}")]
    A1NormFloor { min: f64, floor: f64 },
    #[error("btensors: J below floor: min J = {min:.6e} < {floor:.6e}")]
    JFloor { min: f64, floor: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// B¹ (3×3 matrix field), B² (3×2×3 tensor field), and the column a⃗₁.
#[derive(Debug, Clone)]
pub struct BTensors {
    /// b1[9p + 3d + c]: contraction Σ b1[d][c] ∂_d v^c
    pub b1: MatrixField,
    /// b2[18p + 6j + 2i + α]: (B²:∇_h v)^j = Σ_{α,i} b2[j][i][α] ∂_α v^i
    /// with α ∈ {0,1} ↔ {∂₂, ∂₃}
    pub b2: Vec<f64>,
    /// a⃗₁ = (a₁₁, a₂₁, a₃₁) per point
    pub a1vec: Vec<[f64; 3]>,
    pub min_a11: f64,
    pub min_a1norm: f64,
}

/// Right-hand sides of the linearized form: F₁ interior 3-vector, F₂ interior
/// scalar (= B¹:∇v), F₃ surface 3-vector data (= B²:∇_h v on Σ₀).
#[derive(Debug)]
pub struct RhsBundle {
    pub f1: VectorField,
    pub f2: ScalarField,
    pub f3: [SurfaceField; 3],
}

fn check_floors(grid: &Grid, kin: &Kinematics) -> Result<(f64, f64), BtensorError> {
    let floor = grid.config.j_min;
    let mut min_a11 = f64::INFINITY;
    let mut min_norm = f64::INFINITY;
    for p in 0..grid.len() {
        let a11 = kin.cof.entries[9 * p];
        let a21 = kin.cof.entries[9 * p + 3];
        let a31 = kin.cof.entries[9 * p + 6];
        min_a11 = min_a11.min(a11);
        min_norm = min_norm.min((a11 * a11 + a21 * a21 + a31 * a31).sqrt());
    }
    if min_a11 < floor {
        return Err(BtensorError::A11Floor {
            min: min_a11,
            floor,
        });
    }
    if min_norm < floor {
        return Err(BtensorError::A1NormFloor {
            min: min_norm,
            floor,
        });
    }
    Ok((min_a11, min_norm))
}

/// B¹ = I − a₁₁⁻¹ J𝒜, stored to contract against ∂_d v^c:
/// b1[d][c] = δ_dc − a₁₁⁻¹ a_{cd}.
pub fn assemble_b1(grid: &Grid, kin: &Kinematics) -> Result<BTensors, BtensorError> {
    let (min_a11, min_a1norm) = check_floors(grid, kin)?;
    let n = grid.len();
    let mut b1 = vec![0.0; 9 * n];
    let mut a1vec = Vec::with_capacity(n);
    for p in 0..n {
        let a = kin.cof.at(p);
        let inv_a11 = 1.0 / a[0][0];
        for d in 0..3 {
            for c in 0..3 {
                let delta = if d == c { 1.0 } else { 0.0 };
                b1[9 * p + 3 * d + c] = delta - inv_a11 * a[c][d];
            }
        }
        a1vec.push([a[0][0], a[1][0], a[2][0]]);
    }
    let b2 = assemble_b2_entries(grid, kin)?;
    Ok(BTensors {
        b1: MatrixField { entries: b1 },
        b2,
        a1vec,
        min_a11,
        min_a1norm,
    })
}

/// The 𝓑_k blocks (k = 1..4) as 3×2 matrices Bk[i][α] contracted against
/// ∂_α v^i, and B_h. `a` is the cofactor matrix at one point.
fn cal_b(k: usize, a: &[[f64; 3]; 3]) -> [[f64; 2]; 3] {
    if k == 4 {
        return [
            [-a[0][1], -a[0][2]],
            [-a[1][1] + 1.0, -a[1][2]],
            [-a[2][1], -a[2][2] + 1.0],
        ];
    }
    // pattern: Bk[i][α] = a_{kα} a_{i1} + δ_{ik} ⟨a_α, a_1⟩ − δ_{i1} δ_{αk}
    let col_dot = |c: usize| a[0][c] * a[0][0] + a[1][c] * a[1][0] + a[2][c] * a[2][0];
    let mut out = [[0.0; 2]; 3];
    for i in 0..3 {
        for al in 0..2 {
            let ac = al + 1; // column of 'a' for α = 2, 3
            let mut v = a[k - 1][ac] * a[i][0];
            if i == k - 1 {
                v += col_dot(ac);
            }
            if i == 0 && ac == k - 1 {
                v -= 1.0;
            }
            out[i][al] = v;
        }
    }
    out
}

fn b_h(a: &[[f64; 3]; 3]) -> [[f64; 2]; 3] {
    let inv = -1.0 / a[0][0];
    [
        [inv * a[0][1], inv * a[0][2]],
        [inv * (a[1][1] - a[0][0]), inv * a[1][2]],
        [inv * a[2][1], inv * (a[2][2] - a[0][0])],
    ]
}

/// Coefficient tensor b2[j][i][α] at one point: apply the closed formulas to
/// the six unit gradients. The contraction path `b2_apply` is the primary
/// transcription; this extraction inherits it exactly.
pub fn b2_tensor_at(a: &[[f64; 3]; 3], jdet: f64, nu: f64) -> [[[f64; 2]; 3]; 3] {
    let mut out = [[[0.0; 2]; 3]; 3];
    for i in 0..3 {
        for al in 0..2 {
            let mut g = [[0.0; 3]; 2];
            g[al][i] = 1.0;
            let f = b2_apply(a, jdet, nu, &g);
            for j in 0..3 {
                out[j][i][al] = f[j];
            }
        }
    }
    out
}

/// Evaluate (B²:∇_h v)^j for j = 1..3 at a point, with g[α][i] = ∂_α v^i.
pub fn b2_apply(a: &[[f64; 3]; 3], jdet: f64, nu: f64, g: &[[f64; 3]; 2]) -> [f64; 3] {
    let (a11, a21, a31) = (a[0][0], a[1][0], a[2][0]);
    let n2 = a11 * a11 + a21 * a21 + a31 * a31; // |a⃗₁|²
    let b1c = cal_b(1, a);
    let b2c = cal_b(2, a);
    let b3c = cal_b(3, a);
    let b4c = cal_b(4, a);
    let bhc = b_h(a);
    let contract = |m: &[[f64; 2]; 3]| -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for al in 0..2 {
                s += m[i][al] * g[al][i];
            }
        }
        s
    };
    let d2v1 = g[0][0];
    let d3v1 = g[1][0];
    let div_h_vh = g[0][1] + g[1][2];
    let cb1 = contract(&b1c);
    let cb2 = contract(&b2c);
    let cb3 = contract(&b3c);
    let cb4 = contract(&b4c);
    let cbh = contract(&bhc);

    let f2 = -nu / (a11 * n2 * n2)
        * (-a11 * (a11 * a11 + a31 * a31 - n2 * n2) * d2v1
            + (a11 * a11 + a31 * a31) * (a21 * cb1 - a11 * cb2)
            + n2 * a21 * a11 * a11 * (-div_h_vh + cbh)
            - a21 * a31 * (-a11 * d3v1 + a31 * cb1 - a11 * cb3));
    let f3 = -nu / (a11 * n2 * n2)
        * (-a11 * (a11 * a11 + a21 * a21 - n2 * n2) * d3v1
            + (a11 * a11 + a21 * a21) * (a31 * cb1 - a11 * cb3)
            + n2 * a31 * a11 * a11 * (-div_h_vh + cbh)
            - a21 * a31 * (-a11 * d2v1 + a21 * cb1 - a11 * cb2));
    // normal component; the nested B^{2,β} enter scaled by 1/ν and the
    // leading ∂_β v¹ terms with + sign (reading fixed against the
    // boundary-equivalence oracle)
    let f1 = -nu / (a11 * n2 * jdet)
        * (2.0 * a21 * n2 * jdet * d2v1
            + 2.0 * a31 * n2 * jdet * d3v1
            + 2.0 * jdet * (a21 * n2 * f2 / nu + a31 * n2 * f3 / nu + a11 * n2 * cbh)
            + 2.0 * a11 * n2 * ((1.0 - jdet) * div_h_vh - cb4)
            - a11 * (a21 * d2v1 + a31 * d3v1 + a11 * cb1 + a21 * cb2 + a31 * cb3));
    [f1, f2, f3]
}

fn assemble_b2_entries(grid: &Grid, kin: &Kinematics) -> Result<Vec<f64>, BtensorError> {
    let floor = grid.config.j_min;
    let n = grid.len();
    let mut min_j = f64::INFINITY;
    for p in 0..n {
        min_j = min_j.min(kin.jdet[p]);
    }
    if min_j < floor {
        return Err(BtensorError::JFloor { min: min_j, floor });
    }
    let nu = grid.config.nu;
    let mut b2 = vec![0.0; 18 * n];
    for p in 0..n {
        let a = kin.cof.at(p);
        let t = b2_tensor_at(&a, kin.jdet[p], nu);
        for j in 0..3 {
            for i in 0..3 {
                for al in 0..2 {
                    b2[18 * p + 6 * j + 2 * i + al] = t[j][i][al];
                }
            }
        }
    }
    Ok(b2)
}

/// F₂ = B¹:∇v as a pointwise physical field.
pub fn apply_b1(grid: &Grid, bt: &BTensors, v: &VectorField) -> Result<ScalarField, GridError> {
    let gv = gradient_tensor(grid, v)?;
    let n = grid.len();
    let mut out = vec![0.0; n];
    for p in 0..n {
        let g = gv.at(p);
        let mut s = 0.0;
        for d in 0..3 {
            for c in 0..3 {
                s += bt.b1.entries[9 * p + 3 * d + c] * g[d][c];
            }
        }
        out[p] = s;
    }
    Ok(ScalarField::Physical(out))
}

/// B²:∇_h v evaluated on the whole slab (three scalar components, spectral,
/// dealiased). The Σ₀ trace is the boundary data; the interior extension
/// feeds the corrector's P₁.
pub fn apply_b2_volume(
    grid: &Grid,
    bt: &BTensors,
    v: &VectorField,
) -> Result<[ScalarField; 3], GridError> {
    let gv = gradient_tensor(grid, v)?;
    let n = grid.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for p in 0..n {
        let g = gv.at(p);
        for j in 0..3 {
            let mut s = 0.0;
            for i in 0..3 {
                for al in 0..2 {
                    s += bt.b2[18 * p + 6 * j + 2 * i + al] * g[al + 1][i];
                }
            }
            out[j][p] = s;
        }
    }
    let [o1, o2, o3] = out;
    let mk = |v: Vec<f64>| -> Result<ScalarField, GridError> {
        grid::dealias(grid, &grid::to_spectral(grid, &ScalarField::Physical(v))?)
    };
    Ok([mk(o1)?, mk(o2)?, mk(o3)?])
}

/// F₃ = B²:∇_h v on Σ₀ (three surface components). The tensor is stored on
/// the whole slab; the trace is taken here.
pub fn apply_b2_surface(
    grid: &Grid,
    bt: &BTensors,
    v: &VectorField,
) -> Result<[SurfaceField; 3], GridError> {
    let gv = gradient_tensor(grid, v)?;
    let ns = grid.surface_len();
    let mut out = [vec![0.0; ns], vec![0.0; ns], vec![0.0; ns]];
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let sp = grid.sidx(k2, k3);
            let p = grid.idx(k2, k3, grid.nv - 1);
            let g = gv.at(p);
            for j in 0..3 {
                let mut s = 0.0;
                for i in 0..3 {
                    for al in 0..2 {
                        // g[d][c]: derivative rows 1..2 are ∂₂, ∂₃
                        s += bt.b2[18 * p + 6 * j + 2 * i + al] * g[al + 1][i];
                    }
                }
                out[j][sp] = s;
            }
        }
    }
    let [o1, o2, o3] = out;
    let mk = |v: Vec<f64>| -> Result<SurfaceField, GridError> {
        grid::surface_to_spectral(grid, &SurfaceField::Physical(v))
    };
    Ok([mk(o1)?, mk(o2)?, mk(o3)?])
}

/// F₁ = −ν(∇·𝔻(v) − ∇_𝒜·𝔻_𝒜(v)) + ∇_{I−𝒜} q, spectral output, dealiased.
/// Both divergence terms go through the same pointwise path so the
/// difference vanishes identically at ξ = 0.
pub fn assemble_f1(
    grid: &Grid,
    kin: &Kinematics,
    v: &VectorField,
    q: &ScalarField,
) -> Result<VectorField, GridError> {
    let nu = grid.config.nu;
    let ops = LagrangianOps::new(grid, kin);
    let kin_id = crate::flowmap::kinematics_from_gradient(
        grid,
        &MatrixField {
            entries: vec![0.0; 9 * grid.len()],
        },
    )
    .map_err(|e| GridError::Invalid(e.to_string()))?;
    let ops_id = LagrangianOps::new(grid, &kin_id);
    let div_d = ops_id.div_a_sym_grad_a(v)?;
    let div_da = ops.div_a_sym_grad_a(v)?;
    // ∇_{I−𝒜} q: components (δ_i^j − 𝒜_i^j)∂_j q
    let qs = grid::to_spectral(grid, q)?;
    let gq = grid::vec_to_physical(grid, &grid::gradient(grid, &qs)?)?;
    let n = grid.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let dd = grid::vec_to_physical(grid, &grid::vec_to_spectral(grid, &div_d)?)?;
    let dda = grid::vec_to_physical(grid, &grid::vec_to_spectral(grid, &div_da)?)?;
    for p in 0..n {
        let a = kin.amat.at(p);
        let gq_p = [
            gq.comps[0].physical()?[p],
            gq.comps[1].physical()?[p],
            gq.comps[2].physical()?[p],
        ];
        for i in 0..3 {
            let mut grad_ia = 0.0;
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                grad_ia += (delta - a[i][j]) * gq_p[j];
            }
            out[i][p] = -nu * (dd.comps[i].physical()?[p] - dda.comps[i].physical()?[p]) + grad_ia;
        }
    }
    let [o1, o2, o3] = out;
    let dealias = |v: Vec<f64>| -> Result<ScalarField, GridError> {
        grid::dealias(grid, &grid::to_spectral(grid, &ScalarField::Physical(v))?)
    };
    Ok(VectorField {
        comps: [dealias(o1)?, dealias(o2)?, dealias(o3)?],
    })
}

/// (∇·𝔻(v))_j = Δv^j + ∂_j(∇·v) with spectral horizontal and FD vertical parts.
pub fn euclidean_div_sym_grad(grid: &Grid, v: &VectorField) -> Result<VectorField, GridError> {
    let vs = grid::vec_to_spectral(grid, v)?;
    let div = grid::divergence(grid, &vs)?;
    let gdiv = grid::gradient(grid, &div)?;
    let mut comps = Vec::with_capacity(3);
    for c in 0..3 {
        let lap_v = laplacian(grid, &vs.comps[c])?;
        comps.push(grid::add_spectral(&lap_v, &gdiv.comps[c]));
    }
    Ok(VectorField {
        comps: [comps.remove(0), comps.remove(0), comps.remove(0)],
    })
}

/// Δf = D₂f − |ς|²f (spectral)
pub fn laplacian(grid: &Grid, f: &ScalarField) -> Result<ScalarField, GridError> {
    let d2v = grid::vertical_derivative(grid, f, 2)?;
    let hor = grid::apply_horizontal_multiplier(
        grid,
        f,
        |s2, s3| Complex64::new(-(s2 * s2 + s3 * s3), 0.0),
        grid::ZeroModeRule::Evaluate,
    )?;
    Ok(grid::add_spectral(&d2v, &hor))
}

/// Assemble the full right-hand-side bundle for given (kin, tensors, v, q).
/// F₂ and F₃ are dealiased spectral outputs.
pub fn assemble_rhs(
    grid: &Grid,
    kin: &Kinematics,
    bt: &BTensors,
    v: &VectorField,
    q: &ScalarField,
) -> Result<RhsBundle, GridError> {
    let f1 = assemble_f1(grid, kin, v, q)?;
    let f2_phys = apply_b1(grid, bt, v)?;
    let f2 = grid::dealias(grid, &grid::to_spectral(grid, &f2_phys)?)?;
    let f3 = apply_b2_surface(grid, bt, v)?;
    Ok(RhsBundle { f1, f2, f3 })
}

/// Solve the 4×4 boundary system for (∂₁v, q − gξ¹) from the tangential
/// derivatives, then return F₃ = q̃n₀ − ν𝔻(v)n₀. Independent oracle for B².
pub fn boundary_oracle_f3(
    amat: &[[f64; 3]; 3],
    cof: &[[f64; 3]; 3],
    nu: f64,
    g: &[[f64; 3]; 2],
) -> [f64; 3] {
    let m = [cof[0][0], cof[1][0], cof[2][0]];
    // unknowns x = (d1, d2, d3, qt)
    let mut mat = [[0.0f64; 4]; 4];
    let mut rhs = [0.0f64; 4];
    for i in 0..3 {
        mat[i][3] = m[i];
        for j in 0..3 {
            mat[i][j] += -nu * amat[i][0] * m[j];
            mat[i][i] += -nu * amat[j][0] * m[j];
            let mut c = 0.0;
            for al in 0..2 {
                c += amat[i][al + 1] * g[al][j] + amat[j][al + 1] * g[al][i];
            }
            rhs[i] += nu * c * m[j];
        }
    }
    for i in 0..3 {
        mat[3][i] = amat[i][0];
        for al in 0..2 {
            rhs[3] -= amat[i][al + 1] * g[al][i];
        }
    }
    // 4×4 Gaussian elimination with partial pivoting
    let mut aug = [[0.0f64; 5]; 4];
    for i in 0..4 {
        aug[i][..4].copy_from_slice(&mat[i]);
        aug[i][4] = rhs[i];
    }
    for k in 0..4 {
        let mut p = k;
        for i in k + 1..4 {
            if aug[i][k].abs() > aug[p][k].abs() {
                p = i;
            }
        }
        aug.swap(k, p);
        let piv = aug[k][k];
        for i in k + 1..4 {
            let f = aug[i][k] / piv;
            for j in k..5 {
                aug[i][j] -= f * aug[k][j];
            }
        }
    }
    let mut x = [0.0f64; 4];
    for k in (0..4).rev() {
        let mut s = aug[k][4];
        for j in k + 1..4 {
            s -= aug[k][j] * x[j];
        }
        x[k] = s / aug[k][k];
    }
    let (d, qt) = ([x[0], x[1], x[2]], x[3]);
    [
        qt - 2.0 * nu * d[0],
        -nu * (d[1] + g[0][0]),
        -nu * (d[2] + g[1][0]),
    ]
}

/// Max over points of |(∇·v − B¹:∇v) − a₁₁⁻¹J∇_𝒜·v|: the F₂ equivalence
/// identity, exact in pointwise arithmetic.
pub fn f2_equivalence_residual(
    grid: &Grid,
    kin: &Kinematics,
    bt: &BTensors,
    v: &VectorField,
) -> Result<f64, GridError> {
    let gv = gradient_tensor(grid, v)?;
    let ops = LagrangianOps::new(grid, kin);
    let diva = ops.div_a(v)?;
    let diva_p = diva.physical()?;
    let mut worst = 0.0f64;
    for p in 0..grid.len() {
        let g = gv.at(p);
        let div = g[0][0] + g[1][1] + g[2][2];
        let mut b1v = 0.0;
        for d in 0..3 {
            for c in 0..3 {
                b1v += bt.b1.entries[9 * p + 3 * d + c] * g[d][c];
            }
        }
        let a11 = kin.cof.entries[9 * p];
        let rhs = kin.jdet[p] / a11 * diva_p[p];
        worst = worst.max(((div - b1v) - rhs).abs());
    }
    Ok(worst)
}

/// Evaluate the stress data (q − gξ¹)𝒩 − ν𝔻_𝒜(v)𝒩 against
/// qn₀ − gξ¹n₀ − ν𝔻(v)n₀ − B²:∇_h v at a surface point; used by tests.
pub fn surface_zero(grid: &Grid) -> SurfaceField {
    SurfaceField::Spectral(vec![C0; grid.surface_len()])
}
