//! Discretization of the slab Ω = {−b < x₁ < 0} × torus and the
//! spectral/physical transform layer everything else builds on.
//!
//! Fields are stored indexed (k₂-major, k₃, j) with j the vertical node.
//! Horizontal directions are spectral (full complex FFT, conjugate symmetry
//! for real data); the vertical is a uniform grid with second-order finite
//! differences. Fields are immutable values: every operation returns a new
//! field.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

pub const C0: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid: {0}")]
    Invalid(String),
    #[error("grid: insufficient vertical resolution (nv = {0}, need ≥ {1})")]
    VerticalResolution(usize, usize),
    #[error("grid: representation mismatch: expected {expected} field")]
    Representation { expected: &'static str },
    #[error("grid: singular multiplier at the zero mode with no zero-mode rule")]
    SingularZeroMode,
    #[error("grid: field dump i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Physical and solver parameters. Invariants are enforced by [`Config::validate`].
#[derive(Debug, Clone)]
pub struct Config {
    /// viscosity ν > 0
    pub nu: f64,
    /// gravity g ≥ 0
    pub g: f64,
    /// slab depth b > 0
    pub depth_b: f64,
    /// regularity index s > 2 (dimensionless)
    pub s: f64,
    /// horizontal period lengths (L₂, L₃)
    pub period: (f64, f64),
    /// horizontal mode counts (N₂, N₃), even, ≥ 4
    pub modes: (usize, usize),
    /// vertical grid points ≥ 3
    pub nv: usize,
    /// time step
    pub dt: f64,
    /// horizon T
    pub t_final: f64,
    /// solver tolerances
    pub tol: Tolerances,
    /// smallness threshold for ‖Λ_h^{s−1}∇ξ₀‖_{H¹}
    pub small_data_eps: f64,
    /// Jacobian floor shared by J, a₁₁, |a⃗₁|
    pub j_min: f64,
    /// κ used in the Ē_{s−1} energy functional
    pub kappa: f64,
    /// constant in the T ≤ c_T/‖data‖² horizon restriction
    pub c_t: f64,
    /// outer Picard iteration cap
    pub max_iters: usize,
    /// enable the literal nested inner iteration
    pub nested: bool,
}

#[derive(Debug, Clone)]
pub struct Tolerances {
    /// outer Picard stopping tolerance on the X_T increment
    pub outer: f64,
    /// generic residual tolerance for corrector/projection checks
    pub residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            outer: 1e-9,
            residual: 1e-6,
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            nu: 1.0,
            g: 1.0,
            depth_b: 1.0,
            s: 2.5,
            period: (2.0 * PI, 2.0 * PI),
            modes: (16, 16),
            nv: 17,
            dt: 0.01,
            t_final: 0.16,
            tol: Tolerances::default(),
            small_data_eps: 1.0,
            j_min: 0.1,
            kappa: 0.05,
            c_t: 1.0,
            max_iters: 25,
            nested: false,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: String| Err(GridError::Invalid(m));
        if !(self.nu > 0.0) {
            return bad(format!("nu must be > 0 (got {})", self.nu));
        }
        if !(self.g >= 0.0) {
            return bad(format!("g must be ≥ 0 (got {})", self.g));
        }
        if !(self.depth_b > 0.0) {
            return bad(format!("depth_b must be > 0 (got {})", self.depth_b));
        }
        if !(self.s > 2.0) {
            return bad(format!("s must exceed 2 (got {})", self.s));
        }
        if !(self.period.0 > 0.0 && self.period.1 > 0.0) {
            return bad("period lengths must be positive".into());
        }
        let (n2, n3) = self.modes;
        if n2 < 4 || n3 < 4 {
            return bad(format!("mode counts must be ≥ 4 (got {n2}, {n3})"));
        }
        if n2 % 2 != 0 || n3 % 2 != 0 {
            return bad(format!("mode counts must be even (got {n2}, {n3})"));
        }
        if self.nv < 3 {
            return Err(GridError::VerticalResolution(self.nv, 3));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be > 0 (got {})", self.dt));
        }
        if !(self.t_final > 0.0) {
            return bad(format!("t_final must be > 0 (got {})", self.t_final));
        }
        if self.dt > self.t_final {
            return bad(format!(
                "dt must not exceed t_final ({} > {})",
                self.dt, self.t_final
            ));
        }
        if !(self.j_min > 0.0) {
            return bad("j_min must be > 0".into());
        }
        Ok(())
    }
}

/// The discrete slab: wavenumber lattice × uniform vertical nodes on [−b, 0].
pub struct Grid {
    pub config: Config,
    pub n2: usize,
    pub n3: usize,
    pub nv: usize,
    /// horizontal wavenumbers ς₂(k₂), ς₃(k₃) in FFT order
    pub sigma2: Vec<f64>,
    pub sigma3: Vec<f64>,
    /// vertical nodes, x[0] = −b, x[nv−1] = 0
    pub x1: Vec<f64>,
    /// vertical spacing
    pub h: f64,
    fft2_fwd: Arc<dyn Fft<f64>>,
    fft2_inv: Arc<dyn Fft<f64>>,
    fft3_fwd: Arc<dyn Fft<f64>>,
    fft3_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Grid({}x{}x{})", self.n2, self.n3, self.nv)
    }
}

fn fft_wavenumbers(n: usize, period: f64) -> Vec<f64> {
    let base = 2.0 * PI / period;
    (0..n)
        .map(|k| {
            let m = if k <= n / 2 - 1 {
                k as i64
            } else {
                k as i64 - n as i64
            };
            base * m as f64
        })
        .collect()
}

/// Construct the discrete slab. Rejects nv < 3, odd mode counts, nonpositive dimensions.
pub fn make_grid(config: Config) -> Result<Grid, GridError> {
    config.validate()?;
    let (n2, n3) = config.modes;
    let nv = config.nv;
    let b = config.depth_b;
    let h = b / (nv - 1) as f64;
    let x1: Vec<f64> = (0..nv)
        .map(|j| {
            if j == nv - 1 {
                0.0
            } else {
                -b + j as f64 * h
            }
        })
        .collect();
    let mut planner = FftPlanner::new();
    Ok(Grid {
        sigma2: fft_wavenumbers(n2, config.period.0),
        sigma3: fft_wavenumbers(n3, config.period.1),
        x1,
        h,
        n2,
        n3,
        nv,
        fft2_fwd: planner.plan_fft_forward(n2),
        fft2_inv: planner.plan_fft_inverse(n2),
        fft3_fwd: planner.plan_fft_forward(n3),
        fft3_inv: planner.plan_fft_inverse(n3),
        config,
    })
}

impl Grid {
    #[inline]
    pub fn idx(&self, k2: usize, k3: usize, j: usize) -> usize {
        (k2 * self.n3 + k3) * self.nv + j
    }

    pub fn len(&self) -> usize {
        self.n2 * self.n3 * self.nv
    }

    pub fn surface_len(&self) -> usize {
        self.n2 * self.n3
    }

    #[inline]
    pub fn sidx(&self, k2: usize, k3: usize) -> usize {
        k2 * self.n3 + k3
    }

    /// physical node coordinates
    pub fn x2(&self, i2: usize) -> f64 {
        self.config.period.0 * i2 as f64 / self.n2 as f64
    }

    pub fn x3(&self, i3: usize) -> f64 {
        self.config.period.1 * i3 as f64 / self.n3 as f64
    }

    /// trapezoid weights over the vertical
    pub fn trapz_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.nv - 1 {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// horizontal cell area L₂L₃/(N₂N₃)
    pub fn cell_area(&self) -> f64 {
        self.config.period.0 * self.config.period.1 / (self.n2 * self.n3) as f64
    }

    /// surface area L₂L₃ of the torus
    pub fn surface_area(&self) -> f64 {
        self.config.period.0 * self.config.period.1
    }

    /// Is the (k₂, k₃) pair the zero horizontal mode?
    #[inline]
    pub fn is_zero_mode(&self, k2: usize, k3: usize) -> bool {
        k2 == 0 && k3 == 0
    }

    /// |ς_h|² for a mode pair
    #[inline]
    pub fn sigma_sq(&self, k2: usize, k3: usize) -> f64 {
        let s2 = self.sigma2[k2];
        let s3 = self.sigma3[k3];
        s2 * s2 + s3 * s3
    }

    /// Keep-mask of the 2/3 dealiasing rule for a mode index.
    #[inline]
    pub fn dealias_keep(&self, k2: usize, k3: usize) -> bool {
        let m2 = if k2 <= self.n2 / 2 {
            k2 as i64
        } else {
            self.n2 as i64 - k2 as i64
        };
        let m3 = if k3 <= self.n3 / 2 {
            k3 as i64
        } else {
            self.n3 as i64 - k3 as i64
        };
        3 * m2 <= self.n2 as i64 && 3 * m3 <= self.n3 as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Physical,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToSpectral,
    ToPhysical,
}

/// Scalar function on the slab: real values per node (physical) or complex
/// horizontal-mode coefficients per vertical node (spectral).
#[derive(Debug, Clone)]
pub enum ScalarField {
    Physical(Vec<f64>),
    Spectral(Vec<Complex64>),
}

impl ScalarField {
    pub fn zeros_physical(grid: &Grid) -> Self {
        ScalarField::Physical(vec![0.0; grid.len()])
    }

    pub fn zeros_spectral(grid: &Grid) -> Self {
        ScalarField::Spectral(vec![C0; grid.len()])
    }

    pub fn representation(&self) -> Representation {
        match self {
            ScalarField::Physical(_) => Representation::Physical,
            ScalarField::Spectral(_) => Representation::Spectral,
        }
    }

    pub fn physical(&self) -> Result<&Vec<f64>, GridError> {
        match self {
            ScalarField::Physical(v) => Ok(v),
            _ => Err(GridError::Representation {
                expected: "physical",
            }),
        }
    }

    pub fn spectral(&self) -> Result<&Vec<Complex64>, GridError> {
        match self {
            ScalarField::Spectral(v) => Ok(v),
            _ => Err(GridError::Representation {
                expected: "spectral",
            }),
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut v = vec![0.0; grid.len()];
        for k2 in 0..grid.n2 {
            for k3 in 0..grid.n3 {
                for j in 0..grid.nv {
                    v[grid.idx(k2, k3, j)] = f(grid.x1[j], grid.x2(k2), grid.x3(k3));
                }
            }
        }
        ScalarField::Physical(v)
    }
}

/// 3-vector function on the slab (component 1 = vertical).
#[derive(Debug, Clone)]
pub struct VectorField {
    pub comps: [ScalarField; 3],
}

impl VectorField {
    pub fn zeros_spectral(grid: &Grid) -> Self {
        VectorField {
            comps: [
                ScalarField::zeros_spectral(grid),
                ScalarField::zeros_spectral(grid),
                ScalarField::zeros_spectral(grid),
            ],
        }
    }

    pub fn zeros_physical(grid: &Grid) -> Self {
        VectorField {
            comps: [
                ScalarField::zeros_physical(grid),
                ScalarField::zeros_physical(grid),
                ScalarField::zeros_physical(grid),
            ],
        }
    }
}

/// Scalar on the top surface Σ₀: one value (or mode coefficient) per (k₂, k₃).
#[derive(Debug, Clone)]
pub enum SurfaceField {
    Physical(Vec<f64>),
    Spectral(Vec<Complex64>),
}

impl SurfaceField {
    pub fn zeros_spectral(grid: &Grid) -> Self {
        SurfaceField::Spectral(vec![C0; grid.surface_len()])
    }

    pub fn spectral(&self) -> Result<&Vec<Complex64>, GridError> {
        match self {
            SurfaceField::Spectral(v) => Ok(v),
            _ => Err(GridError::Representation {
                expected: "spectral",
            }),
        }
    }
}

/// Horizontal FFT per vertical line, both directions. `to_spectral` of real
/// data normalizes by 1/(N₂N₃) so the zero mode carries the mean.
pub fn transform(grid: &Grid, field: &ScalarField, direction: Direction) -> Result<ScalarField, GridError> {
    match (field, direction) {
        (ScalarField::Physical(v), Direction::ToSpectral) => {
            let data: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let mut data = fft2d(grid, data, true);
            let scale = 1.0 / (grid.n2 * grid.n3) as f64;
            for c in data.iter_mut() {
                *c *= scale;
            }
            Ok(ScalarField::Spectral(data))
        }
        (ScalarField::Spectral(v), Direction::ToPhysical) => {
            let data = fft2d(grid, v.clone(), false);
            Ok(ScalarField::Physical(data.iter().map(|c| c.re).collect()))
        }
        (ScalarField::Physical(_), Direction::ToPhysical) => Err(GridError::Representation {
            expected: "spectral",
        }),
        (ScalarField::Spectral(_), Direction::ToSpectral) => Err(GridError::Representation {
            expected: "physical",
        }),
    }
}

pub fn to_spectral(grid: &Grid, field: &ScalarField) -> Result<ScalarField, GridError> {
    match field {
        ScalarField::Spectral(_) => Ok(field.clone()),
        _ => transform(grid, field, Direction::ToSpectral),
    }
}

pub fn to_physical(grid: &Grid, field: &ScalarField) -> Result<ScalarField, GridError> {
    match field {
        ScalarField::Physical(_) => Ok(field.clone()),
        _ => transform(grid, field, Direction::ToPhysical),
    }
}

fn fft2d(grid: &Grid, mut data: Vec<Complex64>, forward: bool) -> Vec<Complex64> {
    let (n2, n3, nv) = (grid.n2, grid.n3, grid.nv);
    let fft2 = if forward {
        &grid.fft2_fwd
    } else {
        &grid.fft2_inv
    };
    let fft3 = if forward {
        &grid.fft3_fwd
    } else {
        &grid.fft3_inv
    };
    // transform along k3 (contiguous stride nv) for each (k2, j)
    let mut line = vec![C0; n3];
    for k2 in 0..n2 {
        for j in 0..nv {
            for k3 in 0..n3 {
                line[k3] = data[(k2 * n3 + k3) * nv + j];
            }
            fft3.process(&mut line);
            for k3 in 0..n3 {
                data[(k2 * n3 + k3) * nv + j] = line[k3];
            }
        }
    }
    // transform along k2
    let mut line2 = vec![C0; n2];
    for k3 in 0..n3 {
        for j in 0..nv {
            for k2 in 0..n2 {
                line2[k2] = data[(k2 * n3 + k3) * nv + j];
            }
            fft2.process(&mut line2);
            for k2 in 0..n2 {
                data[(k2 * n3 + k3) * nv + j] = line2[k2];
            }
        }
    }
    data
}

/// Surface transforms (one horizontal plane).
pub fn surface_to_spectral(grid: &Grid, f: &SurfaceField) -> Result<SurfaceField, GridError> {
    match f {
        SurfaceField::Spectral(_) => Ok(f.clone()),
        SurfaceField::Physical(v) => {
            let mut data: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let mut line = vec![C0; grid.n3];
            for k2 in 0..grid.n2 {
                line.copy_from_slice(&data[k2 * grid.n3..(k2 + 1) * grid.n3]);
                grid.fft3_fwd.process(&mut line);
                data[k2 * grid.n3..(k2 + 1) * grid.n3].copy_from_slice(&line);
            }
            let mut line2 = vec![C0; grid.n2];
            for k3 in 0..grid.n3 {
                for k2 in 0..grid.n2 {
                    line2[k2] = data[k2 * grid.n3 + k3];
                }
                grid.fft2_fwd.process(&mut line2);
                for k2 in 0..grid.n2 {
                    data[k2 * grid.n3 + k3] = line2[k2];
                }
            }
            let scale = 1.0 / (grid.n2 * grid.n3) as f64;
            for c in data.iter_mut() {
                *c *= scale;
            }
            Ok(SurfaceField::Spectral(data))
        }
    }
}

pub fn surface_to_physical(grid: &Grid, f: &SurfaceField) -> Result<SurfaceField, GridError> {
    match f {
        SurfaceField::Physical(_) => Ok(f.clone()),
        SurfaceField::Spectral(v) => {
            let mut data = v.clone();
            let mut line = vec![C0; grid.n3];
            for k2 in 0..grid.n2 {
                line.copy_from_slice(&data[k2 * grid.n3..(k2 + 1) * grid.n3]);
                grid.fft3_inv.process(&mut line);
                data[k2 * grid.n3..(k2 + 1) * grid.n3].copy_from_slice(&line);
            }
            let mut line2 = vec![C0; grid.n2];
            for k3 in 0..grid.n3 {
                for k2 in 0..grid.n2 {
                    line2[k2] = data[k2 * grid.n3 + k3];
                }
                grid.fft2_inv.process(&mut line2);
                for k2 in 0..grid.n2 {
                    data[k2 * grid.n3 + k3] = line2[k2];
                }
            }
            Ok(SurfaceField::Physical(data.iter().map(|c| c.re).collect()))
        }
    }
}

/// Rule for a multiplier that is singular at ς_h = 0.
#[derive(Debug, Clone, Copy)]
pub enum ZeroModeRule {
    /// multiplier value to use at the zero mode
    Value(Complex64),
    /// multiplier is regular at zero; evaluate it there
    Evaluate,
}

/// Coefficient-wise product with a horizontal symbol m(ς₂, ς₃).
/// `zero_mode_rule` must be supplied whenever the symbol is singular at 0.
pub fn apply_horizontal_multiplier(
    grid: &Grid,
    field: &ScalarField,
    multiplier: impl Fn(f64, f64) -> Complex64,
    zero_mode_rule: ZeroModeRule,
) -> Result<ScalarField, GridError> {
    let data = field.spectral()?;
    let mut out = data.clone();
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            let m = if grid.is_zero_mode(k2, k3) {
                match zero_mode_rule {
                    ZeroModeRule::Value(v) => v,
                    ZeroModeRule::Evaluate => {
                        let v = multiplier(0.0, 0.0);
                        if !v.re.is_finite() || !v.im.is_finite() {
                            return Err(GridError::SingularZeroMode);
                        }
                        v
                    }
                }
            } else {
                multiplier(grid.sigma2[k2], grid.sigma3[k3])
            };
            for j in 0..grid.nv {
                out[grid.idx(k2, k3, j)] *= m;
            }
        }
    }
    Ok(ScalarField::Spectral(out))
}

/// ∂₂ via iς₂
pub fn d2(grid: &Grid, f: &ScalarField) -> Result<ScalarField, GridError> {
    apply_horizontal_multiplier(grid, f, |s2, _| Complex64::new(0.0, s2), ZeroModeRule::Evaluate)
}

/// ∂₃ via iς₃
pub fn d3(grid: &Grid, f: &ScalarField) -> Result<ScalarField, GridError> {
    apply_horizontal_multiplier(grid, f, |_, s3| Complex64::new(0.0, s3), ZeroModeRule::Evaluate)
}

/// Λ_h^σ = ⟨ς_h⟩^σ = (1 + |ς_h|²)^{σ/2}
pub fn lambda_h(grid: &Grid, f: &ScalarField, sigma: f64) -> Result<ScalarField, GridError> {
    apply_horizontal_multiplier(
        grid,
        f,
        |s2, s3| Complex64::new((1.0 + s2 * s2 + s3 * s3).powf(sigma / 2.0), 0.0),
        ZeroModeRule::Evaluate,
    )
}

/// Centered second-order vertical derivative; one-sided second-order at the
/// two boundary nodes. `order` ∈ {1, 2}.
///
/// The order-1 boundary stencil (−4, 7, −4, 1)/(2h) is chosen so its leading
/// truncation term +h²/6·f''' matches the centered stencil; the error field
/// is then smooth across nodes and composed derivatives (divergence of a
/// gradient, Piola sums) stay second order up to the boundary.
pub fn vertical_derivative(
    grid: &Grid,
    field: &ScalarField,
    order: usize,
) -> Result<ScalarField, GridError> {
    let min_nv = 4;
    if grid.nv < min_nv {
        return Err(GridError::VerticalResolution(grid.nv, min_nv));
    }
    match field {
        ScalarField::Physical(v) => Ok(ScalarField::Physical(d_vertical(grid, v, order))),
        ScalarField::Spectral(v) => Ok(ScalarField::Spectral(d_vertical(grid, v, order))),
    }
}

/// The vertical stencils, generic over real/complex values. These exact
/// stencils are shared by the elliptic boundary rows so that enforced
/// Neumann data and measured derivatives agree to machine precision.
pub fn d_vertical<T>(grid: &Grid, v: &[T], order: usize) -> Vec<T>
where
    T: Copy
        + std::ops::Add<Output = T>
        + std::ops::Sub<Output = T>
        + std::ops::Mul<f64, Output = T>,
{
    let nv = grid.nv;
    let h = grid.h;
    let lines = v.len() / nv;
    let mut out = Vec::with_capacity(v.len());
    match order {
        1 => {
            let i2h = 1.0 / (2.0 * h);
            for l in 0..lines {
                let s = &v[l * nv..(l + 1) * nv];
                out.push((s[1] * 7.0 - s[0] * 4.0 - s[2] * 4.0 + s[3]) * i2h);
                for j in 1..nv - 1 {
                    out.push((s[j + 1] - s[j - 1]) * i2h);
                }
                out.push(
                    (s[nv - 1] * 4.0 - s[nv - 2] * 7.0 + s[nv - 3] * 4.0 - s[nv - 4]) * i2h,
                );
            }
        }
        2 => {
            let ih2 = 1.0 / (h * h);
            for l in 0..lines {
                let s = &v[l * nv..(l + 1) * nv];
                out.push((s[0] * 2.0 - s[1] * 5.0 + s[2] * 4.0 - s[3]) * ih2);
                for j in 1..nv - 1 {
                    out.push((s[j - 1] - s[j] * 2.0 + s[j + 1]) * ih2);
                }
                out.push((s[nv - 1] * 2.0 - s[nv - 2] * 5.0 + s[nv - 3] * 4.0 - s[nv - 4]) * ih2);
            }
        }
        _ => panic!("vertical_derivative order must be 1 or 2"),
    }
    out
}

/// First-derivative boundary stencil applied to one vertical profile,
/// at the bottom (j = 0) or top (j = nv−1). Matches `d_vertical` order 1.
pub fn d1_boundary<T>(h: f64, profile: &[T], top: bool) -> T
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let n = profile.len();
    let i2h = 1.0 / (2.0 * h);
    if top {
        (profile[n - 1] * 4.0 - profile[n - 2] * 7.0 + profile[n - 3] * 4.0 - profile[n - 4])
            * i2h
    } else {
        (profile[1] * 7.0 - profile[0] * 4.0 - profile[2] * 4.0 + profile[3]) * i2h
    }
}

/// Coefficients of the boundary D₁ stencil, scaled by 1/(2h): at the bottom
/// they multiply nodes (0, 1, 2, 3); at the top, (n−1, n−2, n−3, n−4).
pub const D1_BOUNDARY_BOTTOM: [f64; 4] = [-4.0, 7.0, -4.0, 1.0];
pub const D1_BOUNDARY_TOP: [f64; 4] = [4.0, -7.0, 4.0, -1.0];

/// Zero every mode outside the 2/3 dealias band.
pub fn dealias(grid: &Grid, f: &ScalarField) -> Result<ScalarField, GridError> {
    let data = f.spectral()?;
    let mut out = data.clone();
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            if !grid.dealias_keep(k2, k3) {
                for j in 0..grid.nv {
                    out[grid.idx(k2, k3, j)] = C0;
                }
            }
        }
    }
    Ok(ScalarField::Spectral(out))
}

/// Trace of a volume field on Σ₀ (top surface).
pub fn surface_trace(grid: &Grid, f: &ScalarField) -> Result<SurfaceField, GridError> {
    let data = f.spectral()?;
    let mut out = vec![C0; grid.surface_len()];
    for k2 in 0..grid.n2 {
        for k3 in 0..grid.n3 {
            out[grid.sidx(k2, k3)] = data[grid.idx(k2, k3, grid.nv - 1)];
        }
    }
    Ok(SurfaceField::Spectral(out))
}

/// Binary field dump: ASCII header "SLAB <N2> <N3> <NV> <rank>\n" then
/// little-endian f64 in (k₂-major, k₃, j) order for physical data.
pub fn dump_scalar(grid: &Grid, f: &ScalarField, w: &mut impl Write) -> Result<(), GridError> {
    let phys = to_physical(grid, f)?;
    let v = phys.physical()?;
    writeln!(w, "SLAB {} {} {} 1", grid.n2, grid.n3, grid.nv)?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn dump_vector(grid: &Grid, f: &VectorField, w: &mut impl Write) -> Result<(), GridError> {
    writeln!(w, "SLAB {} {} {} 3", grid.n2, grid.n3, grid.nv)?;
    for c in &f.comps {
        let phys = to_physical(grid, c)?;
        for x in phys.physical()? {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

// ----- small field arithmetic helpers (spectral) -----

pub fn axpy(grid: &Grid, alpha: Complex64, x: &ScalarField, y: &ScalarField) -> ScalarField {
    let xv = x.spectral().expect("axpy needs spectral");
    let yv = y.spectral().expect("axpy needs spectral");
    let mut out = vec![C0; grid.len()];
    for i in 0..out.len() {
        out[i] = alpha * xv[i] + yv[i];
    }
    ScalarField::Spectral(out)
}

pub fn scale(f: &ScalarField, alpha: f64) -> ScalarField {
    match f {
        ScalarField::Physical(v) => ScalarField::Physical(v.iter().map(|x| alpha * x).collect()),
        ScalarField::Spectral(v) => ScalarField::Spectral(v.iter().map(|x| alpha * x).collect()),
    }
}

pub fn sub_spectral(x: &ScalarField, y: &ScalarField) -> ScalarField {
    let xv = x.spectral().expect("sub needs spectral");
    let yv = y.spectral().expect("sub needs spectral");
    ScalarField::Spectral(xv.iter().zip(yv).map(|(a, b)| a - b).collect())
}

pub fn add_spectral(x: &ScalarField, y: &ScalarField) -> ScalarField {
    let xv = x.spectral().expect("add needs spectral");
    let yv = y.spectral().expect("add needs spectral");
    ScalarField::Spectral(xv.iter().zip(yv).map(|(a, b)| a + b).collect())
}

pub fn vec_to_spectral(grid: &Grid, f: &VectorField) -> Result<VectorField, GridError> {
    Ok(VectorField {
        comps: [
            to_spectral(grid, &f.comps[0])?,
            to_spectral(grid, &f.comps[1])?,
            to_spectral(grid, &f.comps[2])?,
        ],
    })
}

pub fn vec_to_physical(grid: &Grid, f: &VectorField) -> Result<VectorField, GridError> {
    Ok(VectorField {
        comps: [
            to_physical(grid, &f.comps[0])?,
            to_physical(grid, &f.comps[1])?,
            to_physical(grid, &f.comps[2])?,
        ],
    })
}

pub fn vec_sub(x: &VectorField, y: &VectorField) -> VectorField {
    VectorField {
        comps: [
            sub_spectral(&x.comps[0], &y.comps[0]),
            sub_spectral(&x.comps[1], &y.comps[1]),
            sub_spectral(&x.comps[2], &y.comps[2]),
        ],
    }
}

pub fn vec_add(x: &VectorField, y: &VectorField) -> VectorField {
    VectorField {
        comps: [
            add_spectral(&x.comps[0], &y.comps[0]),
            add_spectral(&x.comps[1], &y.comps[1]),
            add_spectral(&x.comps[2], &y.comps[2]),
        ],
    }
}

pub fn vec_scale(x: &VectorField, alpha: f64) -> VectorField {
    VectorField {
        comps: [
            scale(&x.comps[0], alpha),
            scale(&x.comps[1], alpha),
            scale(&x.comps[2], alpha),
        ],
    }
}

/// max |coefficient| over all modes/nodes, a cheap spectral sup-norm proxy
pub fn max_coeff(f: &ScalarField) -> f64 {
    match f {
        ScalarField::Physical(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        ScalarField::Spectral(v) => v.iter().fold(0.0, |m, x| m.max(x.norm())),
    }
}

/// max |value| in physical space
pub fn max_abs_physical(grid: &Grid, f: &ScalarField) -> Result<f64, GridError> {
    let p = to_physical(grid, f)?;
    Ok(p.physical()?.iter().fold(0.0, |m, x| m.max(x.abs())))
}

/// Discrete divergence D₁f¹ + iς₂f² + iς₃f³ of a spectral vector field.
pub fn divergence(grid: &Grid, f: &VectorField) -> Result<ScalarField, GridError> {
    let d1 = vertical_derivative(grid, &f.comps[0], 1)?;
    let d2f = d2(grid, &f.comps[1])?;
    let d3f = d3(grid, &f.comps[2])?;
    Ok(add_spectral(&add_spectral(&d1, &d2f), &d3f))
}

/// Spectral gradient (D₁f, iς₂f, iς₃f).
pub fn gradient(grid: &Grid, f: &ScalarField) -> Result<VectorField, GridError> {
    Ok(VectorField {
        comps: [
            vertical_derivative(grid, f, 1)?,
            d2(grid, f)?,
            d3(grid, f)?,
        ],
    })
}
