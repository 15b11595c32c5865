//! Lagrangian kinematics: displacement ξ → flow-map gradient Dη = I + ∇ξ,
//! inverse-transpose matrix 𝒜, Jacobian J, cofactor matrix a = J𝒜, and the
//! ∇_𝒜 differential operators.
//!
//! Matrix layout convention: m[d][c] pairs the derivative index d with the
//! component index c, so Deta[d][c] = ∂_d η^c and A[i][j] = 𝒜_i^j satisfies
//! Σ_k A[i][k]·Deta[k][j] = δ_ij. The normal is 𝒩_i = a[i][0] on Σ₀.

use crate::grid::{
    self, d_vertical, to_physical, vec_to_physical, Grid, GridError, ScalarField, VectorField,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowmapError {
    #[error("flowmap: degenerate flow map: min J = {min_j:.6e} < j_min = {j_min:.6e} (‖J⁻¹‖_∞ = {j_inv_max:.6e})")]
    DegenerateFlowMap {
        min_j: f64,
        j_min: f64,
        j_inv_max: f64,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Displacement field and optional surface trace of its vertical component.
#[derive(Debug, Clone)]
pub struct Displacement {
    pub xi: VectorField,
}

/// Pointwise 3×3 matrices stored row-major per grid point (physical space).
#[derive(Debug, Clone)]
pub struct MatrixField {
    /// entries[9*p + 3*d + c] = M[d][c] at point p
    pub entries: Vec<f64>,
}

impl MatrixField {
    #[inline]
    pub fn at(&self, p: usize) -> [[f64; 3]; 3] {
        let e = &self.entries[9 * p..9 * p + 9];
        [
            [e[0], e[1], e[2]],
            [e[3], e[4], e[5]],
            [e[6], e[7], e[8]],
        ]
    }
}

/// Flow-map package {Dη, 𝒜, J, a, 𝒩} in pointwise physical representation.
#[derive(Debug)]
pub struct Kinematics {
    pub deta: MatrixField,
    pub amat: MatrixField,
    pub jdet: Vec<f64>,
    pub cof: MatrixField,
    /// 𝒩 = (a₁₁, a₂₁, a₃₁) on the top plane, indexed by surface point
    pub nvec: Vec<[f64; 3]>,
    pub j_inv_max: f64,
    pub min_j: f64,
}

/// Gradient tensor ∇ξ in pointwise physical representation,
/// grad[d][c] = ∂_d ξ^c. Horizontal derivatives spectral, vertical FD.
pub fn gradient_tensor(grid: &Grid, xi: &VectorField) -> Result<MatrixField, GridError> {
    let n = grid.len();
    let mut entries = vec![0.0; 9 * n];
    for c in 0..3 {
        let comp = grid::to_spectral(grid, &xi.comps[c])?;
        let dx1 = to_physical(grid, &grid::vertical_derivative(grid, &comp, 1)?)?;
        let dx2 = to_physical(grid, &grid::d2(grid, &comp)?)?;
        let dx3 = to_physical(grid, &grid::d3(grid, &comp)?)?;
        let (d1, d2, d3) = (dx1.physical()?, dx2.physical()?, dx3.physical()?);
        for p in 0..n {
            entries[9 * p + c] = d1[p];
            entries[9 * p + 3 + c] = d2[p];
            entries[9 * p + 6 + c] = d3[p];
        }
    }
    Ok(MatrixField { entries })
}

#[inline]
fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[inline]
fn inv3(m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let id = 1.0 / det;
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * id,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * id,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * id,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * id,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * id,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * id,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * id,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * id,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * id,
        ],
    ]
}

/// Build the kinematics package from a displacement. Errors with the blow-up
/// monitor value when min J falls below the configured floor.
pub fn kinematics(grid: &Grid, xi: &Displacement) -> Result<Kinematics, FlowmapError> {
    let gt = gradient_tensor(grid, &xi.xi)?;
    kinematics_from_gradient(grid, &gt)
}

pub fn kinematics_from_gradient(
    grid: &Grid,
    gt: &MatrixField,
) -> Result<Kinematics, FlowmapError> {
    let n = grid.len();
    let mut deta = vec![0.0; 9 * n];
    let mut amat = vec![0.0; 9 * n];
    let mut cof = vec![0.0; 9 * n];
    let mut jdet = vec![0.0; n];
    let mut min_j = f64::INFINITY;
    for p in 0..n {
        let mut d = gt.at(p);
        for i in 0..3 {
            d[i][i] += 1.0;
        }
        let det = det3(&d);
        jdet[p] = det;
        if det < min_j {
            min_j = det;
        }
        if det.abs() > 0.0 {
            let a = inv3(&d, det);
            for r in 0..3 {
                for c in 0..3 {
                    deta[9 * p + 3 * r + c] = d[r][c];
                    amat[9 * p + 3 * r + c] = a[r][c];
                    cof[9 * p + 3 * r + c] = det * a[r][c];
                }
            }
        } else {
            for r in 0..3 {
                for c in 0..3 {
                    deta[9 * p + 3 * r + c] = d[r][c];
                }
            }
        }
    }
    let j_min = grid.config.j_min;
    if min_j < j_min {
        let j_inv_max = jdet
            .iter()
            .fold(0.0f64, |m, &j| if j.abs() > 0.0 { m.max(1.0 / j.abs()) } else { f64::INFINITY });
        return Err(FlowmapError::DegenerateFlowMap {
            min_j,
            j_min,
            j_inv_max,
        });
    }
    let j_inv_max = jdet.iter().fold(0.0f64, |m, &j| m.max(1.0 / j));
    // normal 𝒩_i = a[i][0] on the top plane
    let nv = grid.nv;
    let mut nvec = Vec::with_capacity(grid.surface_len());
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let p = grid.idx(k2, k3, nv - 1);
            nvec.push([
                cof[9 * p],
                cof[9 * p + 3],
                cof[9 * p + 6],
            ]);
        }
    }
    Ok(Kinematics {
        deta: MatrixField { entries: deta },
        amat: MatrixField { entries: amat },
        jdet,
        cof: MatrixField { entries: cof },
        nvec,
        j_inv_max,
        min_j,
    })
}

/// J = 1 + ∇·ξ + 𝓑₀₀ + 𝓑₀₀₀ evaluated as the cubic polynomial in ∇ξ:
///   𝓑₀₀  = ∂₁ξ¹ ∇_h·ξ^h − ∂₁ξ^h·∇_hξ¹ + ∇_h^⊥ξ²·∇_hξ³
///   𝓑₀₀₀ = ∂₁ξ¹ ∇_h^⊥ξ²·∇_hξ³ + ∂₁ξ² ∇_h^⊥ξ³·∇_hξ¹ + ∂₁ξ³ ∇_h^⊥ξ¹·∇_hξ²
/// with ∇_h^⊥ = (−∂₃, ∂₂)ᵀ. Equals det(I + ∇ξ) identically.
pub fn jacobian_expansion(grid: &Grid, xi: &Displacement) -> Result<ScalarField, GridError> {
    let gt = gradient_tensor(grid, &xi.xi)?;
    let n = grid.len();
    let mut out = vec![0.0; n];
    for p in 0..n {
        let g = gt.at(p);
        // g[d][c] = ∂_d ξ^c; 0-based: d,c ∈ {0,1,2} ↔ {1,2,3}
        let div = g[0][0] + g[1][1] + g[2][2];
        let perp = |a: usize, b: usize| -> f64 {
            // ∇_h^⊥ξ^a · ∇_hξ^b = −∂₃ξ^a ∂₂ξ^b + ∂₂ξ^a ∂₃ξ^b
            -g[2][a] * g[1][b] + g[1][a] * g[2][b]
        };
        let b00 = g[0][0] * (g[1][1] + g[2][2]) - (g[0][1] * g[1][0] + g[0][2] * g[2][0])
            + perp(1, 2);
        let b000 = g[0][0] * perp(1, 2) + g[0][1] * perp(2, 0) + g[0][2] * perp(0, 1);
        out[p] = 1.0 + div + b00 + b000;
    }
    Ok(ScalarField::Physical(out))
}

/// The Lagrangian differential operators at a kinematics state:
/// (∇_𝒜 f)_i = 𝒜_i^j ∂_j f, div_𝒜, symmetric gradient 𝔻_𝒜, and Δ_𝒜.
pub struct LagrangianOps<'a> {
    pub grid: &'a Grid,
    pub kin: &'a Kinematics,
}

impl<'a> LagrangianOps<'a> {
    pub fn new(grid: &'a Grid, kin: &'a Kinematics) -> Self {
        Self { grid, kin }
    }

    /// pointwise physical gradient of a scalar (rows = derivative index)
    fn point_gradient(&self, f: &ScalarField) -> Result<[Vec<f64>; 3], GridError> {
        let fs = grid::to_spectral(self.grid, f)?;
        let d1 = to_physical(self.grid, &grid::vertical_derivative(self.grid, &fs, 1)?)?;
        let d2 = to_physical(self.grid, &grid::d2(self.grid, &fs)?)?;
        let d3 = to_physical(self.grid, &grid::d3(self.grid, &fs)?)?;
        Ok([
            d1.physical()?.clone(),
            d2.physical()?.clone(),
            d3.physical()?.clone(),
        ])
    }

    /// ∇_𝒜 f as a physical vector field
    pub fn grad_a(&self, f: &ScalarField) -> Result<VectorField, GridError> {
        let g = self.point_gradient(f)?;
        let n = self.grid.len();
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for p in 0..n {
            let a = self.kin.amat.at(p);
            for i in 0..3 {
                out[i][p] = a[i][0] * g[0][p] + a[i][1] * g[1][p] + a[i][2] * g[2][p];
            }
        }
        let [o1, o2, o3] = out;
        Ok(VectorField {
            comps: [
                ScalarField::Physical(o1),
                ScalarField::Physical(o2),
                ScalarField::Physical(o3),
            ],
        })
    }

    /// ∇_𝒜·v = 𝒜_i^j ∂_j v^i as a physical scalar field
    pub fn div_a(&self, v: &VectorField) -> Result<ScalarField, GridError> {
        let n = self.grid.len();
        let mut out = vec![0.0; n];
        for i in 0..3 {
            let g = self.point_gradient(&v.comps[i])?;
            for p in 0..n {
                let a = self.kin.amat.at(p);
                out[p] += a[i][0] * g[0][p] + a[i][1] * g[1][p] + a[i][2] * g[2][p];
            }
        }
        Ok(ScalarField::Physical(out))
    }

    /// 𝔻_𝒜(v)_{ij} = 𝒜_i^k∂_k v^j + 𝒜_j^k∂_k v^i, pointwise
    pub fn sym_grad_a(&self, v: &VectorField) -> Result<MatrixField, GridError> {
        let n = self.grid.len();
        let mut grads = Vec::with_capacity(3);
        for c in 0..3 {
            grads.push(self.point_gradient(&v.comps[c])?);
        }
        let mut entries = vec![0.0; 9 * n];
        for p in 0..n {
            let a = self.kin.amat.at(p);
            for i in 0..3 {
                for j in 0..3 {
                    let mut v_ij = 0.0;
                    for k in 0..3 {
                        v_ij += a[i][k] * grads[j][k][p] + a[j][k] * grads[i][k][p];
                    }
                    entries[9 * p + 3 * i + j] = v_ij;
                }
            }
        }
        Ok(MatrixField { entries })
    }

    /// Δ_𝒜 f = ∇_𝒜·(∇_𝒜 f)
    pub fn lap_a(&self, f: &ScalarField) -> Result<ScalarField, GridError> {
        let ga = self.grad_a(f)?;
        self.div_a(&ga)
    }

    /// (∇_𝒜·𝔻_𝒜(v))_j = 𝒜_i^k ∂_k (𝔻_𝒜(v)_{ij})
    pub fn div_a_sym_grad_a(&self, v: &VectorField) -> Result<VectorField, GridError> {
        let d = self.sym_grad_a(v)?;
        let n = self.grid.len();
        // extract the 9 entry fields, differentiate, contract
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..3 {
            for j in 0..3 {
                let mut comp = vec![0.0; n];
                for p in 0..n {
                    comp[p] = d.entries[9 * p + 3 * i + j];
                }
                let g = self.point_gradient(&ScalarField::Physical(comp))?;
                for p in 0..n {
                    let a = self.kin.amat.at(p);
                    out[j][p] += a[i][0] * g[0][p] + a[i][1] * g[1][p] + a[i][2] * g[2][p];
                }
            }
        }
        let [o1, o2, o3] = out;
        Ok(VectorField {
            comps: [
                ScalarField::Physical(o1),
                ScalarField::Physical(o2),
                ScalarField::Physical(o3),
            ],
        })
    }
}

/// Residual report for the kinematic identities: the Piola identity
/// ∂_j(J𝒜_i^j) = 0, the 𝒜-evolution ∂_t𝒜 = −𝒜∇v𝒜 contraction, and the
/// Jacobian evolution ∂_tJ = J𝒜_i^j∂_j v^i, measured on a displacement pair.
#[derive(Debug, Clone)]
pub struct KinematicResiduals {
    pub piola_max: f64,
    pub amat_evolution_max: f64,
    pub jdet_evolution_max: f64,
}

pub fn piola_residual(grid: &Grid, kin: &Kinematics) -> Result<f64, GridError> {
    let n = grid.len();
    let mut worst = 0.0f64;
    for i in 0..3 {
        let mut row = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for p in 0..n {
            for jj in 0..3 {
                row[jj][p] = kin.cof.entries[9 * p + 3 * i + jj];
            }
        }
        let mut div = vec![0.0; n];
        // ∂₁ of the first column entry a[i][0]
        let d1 = d_vertical(grid, &row[0], 1);
        let s2 = grid::to_spectral(grid, &ScalarField::Physical(row[1].clone()))?;
        let d2f = to_physical(grid, &grid::d2(grid, &s2)?)?;
        let s3 = grid::to_spectral(grid, &ScalarField::Physical(row[2].clone()))?;
        let d3f = to_physical(grid, &grid::d3(grid, &s3)?)?;
        for p in 0..n {
            div[p] = d1[p] + d2f.physical()?[p] + d3f.physical()?[p];
        }
        worst = worst.max(div.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }
    Ok(worst)
}

/// v must be the discrete ∂_tξ of the pair ((ξ₁, t₁), (ξ₂, t₂)).
pub fn kinematic_identity_residuals(
    grid: &Grid,
    xi_pair: (&Displacement, &Displacement),
    delta_t: f64,
    v: &VectorField,
) -> Result<KinematicResiduals, FlowmapError> {
    let (xi_a, xi_b) = xi_pair;
    let kin_a = kinematics(grid, xi_a)?;
    let kin_b = kinematics(grid, xi_b)?;
    // midpoint kinematics for the right-hand sides
    let mid = Displacement {
        xi: grid::vec_scale(
            &grid::vec_add(
                &grid::vec_to_spectral(grid, &xi_a.xi)?,
                &grid::vec_to_spectral(grid, &xi_b.xi)?,
            ),
            0.5,
        ),
    };
    let kin_m = kinematics(grid, &mid)?;
    let piola_max = piola_residual(grid, &kin_m)?;

    let n = grid.len();
    let vp = vec_to_physical(grid, v)?;
    // pointwise ∇v (rows = derivative index)
    let ops = LagrangianOps::new(grid, &kin_m);
    let mut gradv = Vec::with_capacity(3);
    for c in 0..3 {
        gradv.push(ops.point_gradient(&vp.comps[c])?);
    }
    let mut amat_res = 0.0f64;
    let mut j_res = 0.0f64;
    for p in 0..n {
        let am = kin_m.amat.at(p);
        let aa = kin_a.amat.at(p);
        let ab = kin_b.amat.at(p);
        // ∂_t𝒜_i^j + 𝒜_k^j 𝒜_i^m ∂_m v^k
        for i in 0..3 {
            for j in 0..3 {
                let dt_a = (ab[i][j] - aa[i][j]) / delta_t;
                let mut rhs = 0.0;
                for k in 0..3 {
                    for m in 0..3 {
                        rhs += am[k][j] * am[i][m] * gradv[k][m][p];
                    }
                }
                amat_res = amat_res.max((dt_a + rhs).abs());
            }
        }
        // ∂_tJ − J𝒜_i^j∂_j v^i
        let dt_j = (kin_b.jdet[p] - kin_a.jdet[p]) / delta_t;
        let mut rhs = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                rhs += kin_m.jdet[p] * am[i][j] * gradv[i][j][p];
            }
        }
        j_res = j_res.max((dt_j - rhs).abs());
    }
    Ok(KinematicResiduals {
        piola_max,
        amat_evolution_max: amat_res,
        jdet_evolution_max: j_res,
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

    fn zero_displacement(grid: &Grid) -> Displacement {
        Displacement {
            xi: VectorField::zeros_spectral(grid),
        }
    }

    #[test]
    fn identity_kinematics_at_zero_displacement() {
        let g = test_grid(9);
        let kin = kinematics(&g, &zero_displacement(&g)).unwrap();
        for p in 0..g.len() {
            let a = kin.amat.at(p);
            let d = kin.deta.at(p);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((a[i][j] - expect).abs() < 1e-14);
                    assert!((d[i][j] - expect).abs() < 1e-14);
                }
            }
            assert!((kin.jdet[p] - 1.0).abs() < 1e-14);
        }
        for nv in &kin.nvec {
            assert!((nv[0] - 1.0).abs() < 1e-14 && nv[1].abs() < 1e-14 && nv[2].abs() < 1e-14);
        }
        assert!((kin.j_inv_max - 1.0).abs() < 1e-13);
    }

    #[test]
    fn shear_displacement_matches_closed_form_inverse() {
        // ξ = (ε sin x₂, 0, 0): Dη = I + ε cos x₂ · e₂⊗e₁, J = 1,
        // 𝒜 = (Dη)⁻¹ has 𝒜[1][0] = −ε cos x₂, everything else identity.
        let g = test_grid(9);
        let eps = 0.05;
        let xi1 = ScalarField::from_fn(&g, |_, x2, _| eps * x2.sin());
        let xi = Displacement {
            xi: VectorField {
                comps: [
                    xi1,
                    ScalarField::zeros_physical(&g),
                    ScalarField::zeros_physical(&g),
                ],
            },
        };
        let kin = kinematics(&g, &xi).unwrap();
        for k2 in 0..g.n2 {
            for k3 in 0..g.n3 {
                for j in 0..g.nv {
                    let p = g.idx(k2, k3, j);
                    let a = kin.amat.at(p);
                    let expect = -eps * g.x2(k2).cos();
                    assert!((kin.jdet[p] - 1.0).abs() < 1e-12);
                    assert!((a[1][0] - expect).abs() < 1e-11, "A[1][0]");
                    assert!((a[0][0] - 1.0).abs() < 1e-12);
                    assert!((a[1][1] - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn amat_is_inverse_of_deta() {
        let g = test_grid(9);
        let xi = Displacement {
            xi: synth::random_vector(&g, 12, 3, 2, 0.02),
        };
        let kin = kinematics(&g, &xi).unwrap();
        for p in 0..g.len() {
            let a = kin.amat.at(p);
            let d = kin.deta.at(p);
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        s += a[i][k] * d[k][j];
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((s - expect).abs() <= 1e-12, "A·Dη ≠ I at p={p}");
                }
            }
        }
    }

    #[test]
    fn jacobian_expansion_equals_determinant() {
        let g = test_grid(9);
        for seed in 0..5u64 {
            let xi = Displacement {
                xi: synth::random_vector(&g, seed, 3, 2, 0.05),
            };
            let kin = kinematics(&g, &xi).unwrap();
            let exp = jacobian_expansion(&g, &xi).unwrap();
            let e = exp.physical().unwrap();
            for p in 0..g.len() {
                assert!(
                    (e[p] - kin.jdet[p]).abs() <= 1e-12,
                    "expansion - det = {:.3e}",
                    e[p] - kin.jdet[p]
                );
            }
        }
    }

    #[test]
    fn jacobian_expansion_trivial_cases() {
        let g = test_grid(5);
        let z = zero_displacement(&g);
        let e = jacobian_expansion(&g, &z).unwrap();
        for v in e.physical().unwrap() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        // constant displacement → ∇ξ = 0 → J = 1
        let c = Displacement {
            xi: VectorField {
                comps: [
                    ScalarField::Physical(vec![0.3; g.len()]),
                    ScalarField::Physical(vec![-0.1; g.len()]),
                    ScalarField::Physical(vec![0.2; g.len()]),
                ],
            },
        };
        let e = jacobian_expansion(&g, &c).unwrap();
        for v in e.physical().unwrap() {
            assert!((v - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn degenerate_flow_map_is_rejected() {
        let g = test_grid(9);
        // fold the map: ξ¹ = −2 x₁ makes ∂₁η¹ = −1 < 0
        let xi1 = ScalarField::from_fn(&g, |x1, _, _| -2.0 * x1 - 1.0);
        let xi = Displacement {
            xi: VectorField {
                comps: [
                    xi1,
                    ScalarField::zeros_physical(&g),
                    ScalarField::zeros_physical(&g),
                ],
            },
        };
        match kinematics(&g, &xi) {
            Err(FlowmapError::DegenerateFlowMap { min_j, .. }) => {
                assert!(min_j < g.config.j_min);
            }
            other => panic!("expected degenerate flow map, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn lagrangian_ops_reduce_to_euclidean_at_identity() {
        let g = test_grid(9);
        let kin = kinematics(&g, &zero_displacement(&g)).unwrap();
        let ops = LagrangianOps::new(&g, &kin);
        let f = synth::random_scalar(&g, 4, 3, 2, 1.0);
        let ga = ops.grad_a(&f).unwrap();
        let ge = grid::gradient(&g, &f).unwrap();
        let gep = vec_to_physical(&g, &ge).unwrap();
        for c in 0..3 {
            let a = ga.comps[c].physical().unwrap();
            let b = gep.comps[c].physical().unwrap();
            for p in 0..g.len() {
                assert!((a[p] - b[p]).abs() < 1e-10);
            }
        }
        // Δ_𝒜(constant) = 0
        let cst = ScalarField::Physical(vec![2.0; g.len()]);
        let lap = ops.lap_a(&cst).unwrap();
        for v in lap.physical().unwrap() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn piola_identity_for_affine_displacement_is_exact() {
        // ξ affine in x ⟹ 𝒜, J constant ⟹ Piola residual exactly 0
        let g = test_grid(9);
        let xi = Displacement {
            xi: VectorField {
                comps: [
                    ScalarField::from_fn(&g, |x1, _, _| 0.07 * x1),
                    ScalarField::from_fn(&g, |x1, _, _| -0.03 * x1),
                    ScalarField::from_fn(&g, |x1, _, _| 0.02 * x1),
                ],
            },
        };
        let kin = kinematics(&g, &xi).unwrap();
        let res = piola_residual(&g, &kin).unwrap();
        assert!(res < 1e-10, "affine Piola residual = {res:.3e}");
    }

    #[test]
    fn piola_residual_second_order_under_vertical_refinement() {
        let res = |nv: usize| {
            let g = test_grid(nv);
            // vertical-dependent displacement so the residual is FD-limited
            let xi = Displacement {
                xi: VectorField {
                    comps: [
                        ScalarField::from_fn(&g, |x1, x2, _| 0.05 * (x1 * 2.1).sin() * x2.cos()),
                        ScalarField::from_fn(&g, |x1, _, x3| 0.05 * (x1 * 1.7).cos() * x3.sin()),
                        ScalarField::from_fn(&g, |x1, x2, x3| {
                            0.05 * (x1 * 1.3).sin() * (x2 + x3).cos()
                        }),
                    ],
                },
            };
            let kin = kinematics(&g, &xi).unwrap();
            piola_residual(&g, &kin).unwrap()
        };
        let e1 = res(17);
        let e2 = res(33);
        let order = (e1 / e2).log2();
        assert!(order >= 1.8, "observed order {order:.2} (e17={e1:.3e}, e33={e2:.3e})");
    }

    #[test]
    fn zero_pair_has_zero_residuals() {
        let g = test_grid(9);
        let z1 = zero_displacement(&g);
        let z2 = zero_displacement(&g);
        let v = VectorField::zeros_spectral(&g);
        let r = kinematic_identity_residuals(&g, (&z1, &z2), 0.1, &v).unwrap();
        assert!(r.piola_max < 1e-13);
        assert!(r.amat_evolution_max < 1e-13);
        assert!(r.jdet_evolution_max < 1e-13);
    }

    #[test]
    fn linear_in_time_displacement_satisfies_evolution_identities() {
        let g = test_grid(17);
        let w = synth::random_vector(&g, 21, 2, 2, 0.02);
        let dt = 1e-3;
        let xi_a = Displacement {
            xi: grid::vec_scale(&w, 1.0),
        };
        let xi_b = Displacement {
            xi: grid::vec_scale(&w, 1.0 + dt),
        };
        // v = ∂_tξ = w exactly
        let r = kinematic_identity_residuals(&g, (&xi_a, &xi_b), dt, &w).unwrap();
        // centered-in-time errors O(dt²) plus FD O(h²); loose envelope
        assert!(
            r.jdet_evolution_max < 5e-4,
            "J evolution residual = {:.3e}",
            r.jdet_evolution_max
        );
        assert!(
            r.amat_evolution_max < 5e-4,
            "𝒜 evolution residual = {:.3e}",
            r.amat_evolution_max
        );
    }
}
