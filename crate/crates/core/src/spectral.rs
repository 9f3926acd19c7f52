//! Two-component velocity fields on the periodic torus `[0, 2π)²`.
//!
//! Coefficients follow the convention
//!
//! ```text
//! u(x) = Σ_k û(k) e^{i k·x},      û(k) = n⁻² Σ_j u(x_j) e^{-i k·x_j}
//! ```
//!
//! stored row-major with `ky` outer and `kx` inner, in FFT ordering. Only modes
//! with `|k_x|, |k_y| <= floor(n/3)` are ever populated, which makes every
//! quadratic product computed on the `n × n` grid alias-free on the retained
//! band.
//!
//! [`VectorField`] carries no constraint; [`SpectralField`] is the
//! divergence-free, dealiased subset produced by [`project_divergence_free`].

use crate::error::{Error, Result};
use crate::noise::{NoiseStream, INITIAL_CONDITION_STREAM};
use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::ops::Deref;
use std::sync::{Arc, Mutex, OnceLock};

pub type Point = Vector2<f64>;
/// Velocity gradient, `(∇u)_ij = ∂u_i/∂x_j`.
pub type Tensor = Matrix2<f64>;

/// Coefficients smaller than this fraction of the largest one are skipped by
/// [`EvalPlan`]. Their total contribution is below double-precision roundoff
/// of the evaluated value.
pub const PRUNE_REL: f64 = 1e-13;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: usize,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(n));
        }
        Ok(Self { n })
    }

    pub fn n(self) -> usize {
        self.n
    }

    /// Number of coefficients (or grid nodes) per component.
    pub fn len(self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// Largest retained wavenumber per axis.
    pub fn cutoff(self) -> i64 {
        (self.n / 3) as i64
    }

    pub fn spacing(self) -> f64 {
        TAU / self.n as f64
    }

    /// Signed wavenumber of FFT index `idx`.
    pub fn wavenumber(self, idx: usize) -> i64 {
        if idx <= self.n / 2 {
            idx as i64
        } else {
            idx as i64 - self.n as i64
        }
    }

    pub fn index(self, kx: i64, ky: i64) -> usize {
        let n = self.n as i64;
        (ky.rem_euclid(n) * n + kx.rem_euclid(n)) as usize
    }

    pub fn is_retained(self, kx: i64, ky: i64) -> bool {
        let c = self.cutoff();
        kx.abs() <= c && ky.abs() <= c
    }

    /// Physical coordinates of grid node `(i, j)` (x index `i`, y index `j`).
    pub fn node(self, i: usize, j: usize) -> Point {
        Point::new(i as f64 * self.spacing(), j as f64 * self.spacing())
    }

    /// `(storage index, kx, ky)` for every coefficient slot.
    pub fn modes(self) -> impl Iterator<Item = (usize, i64, i64)> {
        let n = self.n;
        (0..n * n).map(move |idx| {
            let g = GridSpec { n };
            (idx, g.wavenumber(idx % n), g.wavenumber(idx / n))
        })
    }

    fn transform(self) -> Arc<Fft2> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft2>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("fft cache poisoned");
        guard
            .entry(self.n)
            .or_insert_with(|| Arc::new(Fft2::new(self.n)))
            .clone()
    }
}

struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn transpose(&self, data: &mut [Complex64]) {
        let n = self.n;
        for j in 0..n {
            for i in (j + 1)..n {
                data.swap(j * n + i, i * n + j);
            }
        }
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        plan.process(data);
        self.transpose(data);
        plan.process(data);
        self.transpose(data);
    }

    /// Grid values to normalized coefficients.
    fn forward(&self, data: &mut [Complex64]) {
        self.run(&self.forward, data);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }

    fn inverse(&self, data: &mut [Complex64]) {
        self.run(&self.inverse, data);
    }
}

/// Unconstrained two-component spectral field.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    u: Vec<Complex64>,
    v: Vec<Complex64>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            u: vec![ZERO; grid.len()],
            v: vec![ZERO; grid.len()],
        }
    }

    pub fn from_coefficients(grid: GridSpec, u: Vec<Complex64>, v: Vec<Complex64>) -> Result<Self> {
        if u.len() != grid.len() || v.len() != grid.len() {
            return Err(Error::InvalidParameter {
                name: "coefficients",
                reason: format!("expected {} per component", grid.len()),
            });
        }
        Ok(Self { grid, u, v })
    }

    /// Builds a field from physical grid values, row-major `y` outer, `x` inner.
    pub fn from_grid_values(grid: GridSpec, u: &[f64], v: &[f64]) -> Result<Self> {
        if u.len() != grid.len() || v.len() != grid.len() {
            return Err(Error::InvalidParameter {
                name: "grid values",
                reason: format!("expected {} per component", grid.len()),
            });
        }
        let fft = grid.transform();
        let mut cu: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let mut cv: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft.forward(&mut cu);
        fft.forward(&mut cv);
        Ok(Self { grid, u: cu, v: cv })
    }

    /// Adds `(cu, cv)` at `k` and the conjugate at `-k`; a real field results.
    pub fn add_mode(&mut self, kx: i64, ky: i64, cu: Complex64, cv: Complex64) {
        let i = self.grid.index(kx, ky);
        if kx == 0 && ky == 0 {
            self.u[i] += Complex64::new(cu.re, 0.0);
            self.v[i] += Complex64::new(cv.re, 0.0);
            return;
        }
        let j = self.grid.index(-kx, -ky);
        self.u[i] += cu;
        self.v[i] += cv;
        self.u[j] += cu.conj();
        self.v[j] += cv.conj();
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn u_coeffs(&self) -> &[Complex64] {
        &self.u
    }

    pub fn v_coeffs(&self) -> &[Complex64] {
        &self.v
    }

    pub fn coeff(&self, kx: i64, ky: i64) -> [Complex64; 2] {
        let i = self.grid.index(kx, ky);
        [self.u[i], self.v[i]]
    }

    /// Physical grid values `(u, v)`, row-major `y` outer, `x` inner.
    pub fn grid_values(&self) -> (Vec<f64>, Vec<f64>) {
        let fft = self.grid.transform();
        let mut cu = self.u.clone();
        let mut cv = self.v.clone();
        fft.inverse(&mut cu);
        fft.inverse(&mut cv);
        (
            cu.iter().map(|c| c.re).collect(),
            cv.iter().map(|c| c.re).collect(),
        )
    }

    fn map_modes(&self, f: impl Fn(i64, i64, Complex64, Complex64) -> (Complex64, Complex64)) -> Self {
        let mut out = Self::zeros(self.grid);
        for (idx, kx, ky) in self.grid.modes() {
            let (a, b) = f(kx, ky, self.u[idx], self.v[idx]);
            out.u[idx] = a;
            out.v[idx] = b;
        }
        out
    }

    /// Zeroes every mode outside the retained band.
    pub fn dealiased(&self) -> Self {
        let g = self.grid;
        self.map_modes(|kx, ky, a, b| if g.is_retained(kx, ky) { (a, b) } else { (ZERO, ZERO) })
    }

    pub fn laplacian(&self) -> Self {
        self.map_modes(|kx, ky, a, b| {
            let k2 = -((kx * kx + ky * ky) as f64);
            (a * k2, b * k2)
        })
    }

    /// Spectral derivative along `axis` (0 = x, 1 = y).
    pub fn derivative(&self, axis: usize) -> Self {
        self.map_modes(|kx, ky, a, b| {
            let ik = Complex64::new(0.0, if axis == 0 { kx } else { ky } as f64);
            (a * ik, b * ik)
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_modes(|_, _, a, b| (a * s, b * s))
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &VectorField, s: f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let mut out = self.clone();
        for i in 0..self.u.len() {
            out.u[i] += other.u[i] * s;
            out.v[i] += other.v[i] * s;
        }
        out
    }

    /// Largest coefficient magnitude over both components.
    pub fn max_coeff(&self) -> f64 {
        self.u
            .iter()
            .chain(self.v.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// `max_k |k·û(k)|`.
    pub fn divergence_defect(&self) -> f64 {
        self.grid
            .modes()
            .map(|(i, kx, ky)| (self.u[i] * kx as f64 + self.v[i] * ky as f64).norm())
            .fold(0.0, f64::max)
    }

    /// `max_k |û(-k) - conj(û(k))|`.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        self.grid
            .modes()
            .map(|(i, kx, ky)| {
                let j = self.grid.index(-kx, -ky);
                (self.u[j] - self.u[i].conj())
                    .norm()
                    .max((self.v[j] - self.v[i].conj()).norm())
            })
            .fold(0.0, f64::max)
    }

    /// `L²` inner product over the torus.
    pub fn inner(&self, other: &VectorField) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let s: f64 = self
            .u
            .iter()
            .zip(&other.u)
            .chain(self.v.iter().zip(&other.v))
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        TAU * TAU * s
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// `½ ∫ |u|²` by Parseval.
    pub fn energy(&self) -> f64 {
        0.5 * self.inner(self)
    }

    /// `(a·∇) self`, dealiased.
    pub fn advected_by(&self, a: &VectorField) -> VectorField {
        assert_eq!(self.grid, a.grid, "grid mismatch");
        let grid = self.grid;
        let fft = grid.transform();
        let to_grid = |c: &[Complex64]| {
            let mut buf = c.to_vec();
            fft.inverse(&mut buf);
            buf
        };
        let dx = self.derivative(0);
        let dy = self.derivative(1);
        let au = to_grid(&a.u);
        let av = to_grid(&a.v);
        let ux = to_grid(&dx.u);
        let uy = to_grid(&dy.u);
        let vx = to_grid(&dx.v);
        let vy = to_grid(&dy.v);
        let mut nu: Vec<Complex64> = (0..grid.len())
            .map(|i| Complex64::new(au[i].re * ux[i].re + av[i].re * uy[i].re, 0.0))
            .collect();
        let mut nv: Vec<Complex64> = (0..grid.len())
            .map(|i| Complex64::new(au[i].re * vx[i].re + av[i].re * vy[i].re, 0.0))
            .collect();
        fft.forward(&mut nu);
        fft.forward(&mut nv);
        VectorField { grid, u: nu, v: nv }.dealiased()
    }

    pub fn eval_plan(&self) -> EvalPlan {
        EvalPlan::new(self)
    }

    /// Exact trigonometric-polynomial values at arbitrary points.
    pub fn evaluate_at(&self, pts: &[Point]) -> Vec<Point> {
        self.eval_plan().evaluate(pts)
    }

    pub fn gradient_at(&self, pts: &[Point]) -> Vec<Tensor> {
        self.eval_plan().gradient(pts)
    }
}

/// Leray projection onto the retained, divergence-free band.
///
/// `û ← û − k (k·û)/|k|²` for every retained `k ≠ 0`; the mean mode is kept and
/// everything outside the band is zeroed.
pub fn project_divergence_free(f: &VectorField) -> SpectralField {
    let g = f.grid;
    let projected = f.map_modes(|kx, ky, a, b| {
        if !g.is_retained(kx, ky) {
            return (ZERO, ZERO);
        }
        if kx == 0 && ky == 0 {
            return (a, b);
        }
        let (kxf, kyf) = (kx as f64, ky as f64);
        let kdot = (a * kxf + b * kyf) / (kxf * kxf + kyf * kyf);
        (a - kdot * kxf, b - kdot * kyf)
    });
    SpectralField {
        field: projected,
        time_tag: None,
    }
}

/// Divergence-free, dealiased velocity field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    field: VectorField,
    time_tag: Option<f64>,
}

impl Deref for SpectralField {
    type Target = VectorField;
    fn deref(&self) -> &VectorField {
        &self.field
    }
}

impl SpectralField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            field: VectorField::zeros(grid),
            time_tag: None,
        }
    }

    pub fn constant(grid: GridSpec, c: Point) -> Self {
        let mut f = VectorField::zeros(grid);
        f.add_mode(0, 0, Complex64::new(c.x, 0.0), Complex64::new(c.y, 0.0));
        project_divergence_free(&f)
    }

    /// `e^{-2νt} (sin x cos y, −cos x sin y)`, with coefficients set exactly.
    pub fn taylor_green(grid: GridSpec, t: f64, nu: f64) -> Self {
        let q = 0.25 * (-2.0 * nu * t).exp();
        let mut f = VectorField::zeros(grid);
        f.add_mode(1, 1, Complex64::new(0.0, -q), Complex64::new(0.0, q));
        f.add_mode(1, -1, Complex64::new(0.0, -q), Complex64::new(0.0, -q));
        Self {
            field: f,
            time_tag: Some(t),
        }
    }

    /// Field with stream function `ψ = Σ ψ̂(k) e^{ik·x} + c.c.`; `u = ∂_y ψ`,
    /// `v = −∂_x ψ`.
    pub fn from_stream_modes(grid: GridSpec, modes: &[(i64, i64, Complex64)]) -> Result<Self> {
        let mut f = VectorField::zeros(grid);
        for &(kx, ky, psi) in modes {
            if !grid.is_retained(kx, ky) {
                return Err(Error::InvalidParameter {
                    name: "stream mode",
                    reason: format!("k=({kx},{ky}) outside retained band |k_i| <= {}", grid.cutoff()),
                });
            }
            if kx == 0 && ky == 0 {
                continue;
            }
            let i = Complex64::new(0.0, 1.0);
            f.add_mode(kx, ky, i * ky as f64 * psi, -i * kx as f64 * psi);
        }
        Ok(project_divergence_free(&f))
    }

    /// Smooth random field on modes `1 <= |k|_∞ <= max_mode`, stream-function
    /// spectrum `∝ |k|⁻³`, scaled to root-mean-square speed `amplitude`.
    pub fn random_lowmode(grid: GridSpec, seed: u64, max_mode: u32, amplitude: f64) -> Result<Self> {
        let m = max_mode as i64;
        if m < 1 || m > grid.cutoff() {
            return Err(Error::InvalidParameter {
                name: "max_mode",
                reason: format!("must lie in [1, {}]", grid.cutoff()),
            });
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "amplitude",
                reason: "must be finite and >= 0".into(),
            });
        }
        let mut stream = NoiseStream::new(seed, INITIAL_CONDITION_STREAM);
        let mut modes = Vec::new();
        for ky in 0..=m {
            for kx in -m..=m {
                if ky == 0 && kx <= 0 {
                    continue;
                }
                let xi = stream.next_pair();
                let k = ((kx * kx + ky * ky) as f64).sqrt();
                modes.push((kx, ky, Complex64::new(xi.x, xi.y) / k.powi(3)));
            }
        }
        let f = Self::from_stream_modes(grid, &modes)?;
        let rms = (2.0 * f.energy()).sqrt() / TAU;
        if amplitude == 0.0 || rms == 0.0 {
            return Ok(Self::zeros(grid));
        }
        Ok(Self {
            field: f.field.scaled(amplitude / rms),
            time_tag: None,
        })
    }

    /// Grid-value constructor; the result is dealiased and projected.
    pub fn from_grid_values(grid: GridSpec, u: &[f64], v: &[f64]) -> Result<Self> {
        Ok(project_divergence_free(&VectorField::from_grid_values(grid, u, v)?))
    }

    pub fn time_tag(&self) -> Option<f64> {
        self.time_tag
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time_tag = Some(t);
        self
    }

    pub fn as_vector(&self) -> &VectorField {
        &self.field
    }

    pub fn into_vector(self) -> VectorField {
        self.field
    }

    pub fn laplacian(&self) -> SpectralField {
        Self {
            field: self.field.laplacian(),
            time_tag: self.time_tag,
        }
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        Self {
            field: self.field.scaled(s),
            time_tag: self.time_tag,
        }
    }

    /// Linear combination of divergence-free fields stays divergence-free.
    pub fn add_scaled(&self, other: &SpectralField, s: f64) -> SpectralField {
        Self {
            field: self.field.add_scaled(&other.field, s),
            time_tag: None,
        }
    }
}

/// Sparse evaluation plan for direct Fourier summation at off-grid points.
///
/// Built once per field; holds the half-plane of retained modes with the
/// conjugate-pair factor folded in.
#[derive(Clone, Debug)]
pub struct EvalPlan {
    mean: Point,
    kx: Vec<i32>,
    ky: Vec<i32>,
    cu: Vec<Complex64>,
    cv: Vec<Complex64>,
    kx_max: usize,
    ky_max: usize,
}

impl EvalPlan {
    pub fn new(f: &VectorField) -> Self {
        let g = f.grid;
        let threshold = PRUNE_REL * f.max_coeff();
        let mut plan = EvalPlan {
            mean: Point::new(f.u[0].re, f.v[0].re),
            kx: Vec::new(),
            ky: Vec::new(),
            cu: Vec::new(),
            cv: Vec::new(),
            kx_max: 0,
            ky_max: 0,
        };
        for (idx, kx, ky) in g.modes() {
            let upper = ky > 0 || (ky == 0 && kx > 0);
            if !upper || !g.is_retained(kx, ky) {
                continue;
            }
            let (a, b) = (f.u[idx], f.v[idx]);
            if a.norm() <= threshold && b.norm() <= threshold {
                continue;
            }
            plan.kx.push(kx as i32);
            plan.ky.push(ky as i32);
            plan.cu.push(a * 2.0);
            plan.cv.push(b * 2.0);
            plan.kx_max = plan.kx_max.max(kx.unsigned_abs() as usize);
            plan.ky_max = plan.ky_max.max(ky as usize);
        }
        plan
    }

    /// Number of retained (half-plane) modes after pruning.
    pub fn mode_count(&self) -> usize {
        self.kx.len()
    }

    /// Upper bound on `max |u|` from the coefficient magnitudes.
    pub fn speed_bound(&self) -> f64 {
        let s: f64 = self
            .cu
            .iter()
            .zip(&self.cv)
            .map(|(a, b)| (a.norm_sqr() + b.norm_sqr()).sqrt())
            .sum();
        s + self.mean.norm()
    }

    fn fill_phases(&self, p: &Point, ex: &mut Vec<Complex64>, ey: &mut Vec<Complex64>) {
        let (sx, cx) = p.x.sin_cos();
        let (sy, cy) = p.y.sin_cos();
        let (bx, by) = (Complex64::new(cx, sx), Complex64::new(cy, sy));
        // ex holds exponents -kx_max..=kx_max, ey holds 0..=ky_max
        let kxm = self.kx_max;
        ex.clear();
        ex.resize(2 * kxm + 1, ZERO);
        ex[kxm] = Complex64::new(1.0, 0.0);
        for m in 1..=kxm {
            let z = ex[kxm + m - 1] * bx;
            ex[kxm + m] = z;
            ex[kxm - m] = z.conj();
        }
        ey.clear();
        ey.push(Complex64::new(1.0, 0.0));
        for m in 1..=self.ky_max {
            let z = ey[m - 1] * by;
            ey.push(z);
        }
    }

    /// Velocity at each point.
    pub fn evaluate(&self, pts: &[Point]) -> Vec<Point> {
        let mut out = Vec::with_capacity(pts.len());
        self.evaluate_into(pts, &mut out);
        out
    }

    /// Writes velocities into `out` (cleared first).
    pub fn evaluate_into(&self, pts: &[Point], out: &mut Vec<Point>) {
        out.clear();
        let (mut ex, mut ey) = (Vec::new(), Vec::new());
        let kxm = self.kx_max as i32;
        for p in pts {
            self.fill_phases(p, &mut ex, &mut ey);
            let (mut su, mut sv) = (0.0, 0.0);
            for m in 0..self.kx.len() {
                let e = ex[(self.kx[m] + kxm) as usize] * ey[self.ky[m] as usize];
                su += self.cu[m].re * e.re - self.cu[m].im * e.im;
                sv += self.cv[m].re * e.re - self.cv[m].im * e.im;
            }
            out.push(Point::new(self.mean.x + su, self.mean.y + sv));
        }
    }

    /// Velocity gradient at each point.
    pub fn gradient(&self, pts: &[Point]) -> Vec<Tensor> {
        let (mut ex, mut ey) = (Vec::new(), Vec::new());
        let kxm = self.kx_max as i32;
        pts.iter()
            .map(|p| {
                self.fill_phases(p, &mut ex, &mut ey);
                let mut g = Tensor::zeros();
                for m in 0..self.kx.len() {
                    let e = ex[(self.kx[m] + kxm) as usize] * ey[self.ky[m] as usize];
                    // Re(i k c e) = -k Im(c e)
                    let iu = (self.cu[m] * e).im;
                    let iv = (self.cv[m] * e).im;
                    let (kx, ky) = (self.kx[m] as f64, self.ky[m] as f64);
                    g[(0, 0)] -= kx * iu;
                    g[(0, 1)] -= ky * iu;
                    g[(1, 0)] -= kx * iv;
                    g[(1, 1)] -= ky * iv;
                }
                g
            })
            .collect()
    }
}

/// Wraps a coordinate into `[0, 2π)`.
pub fn wrap_coordinate(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

pub fn wrap_point(p: &Point) -> Point {
    Point::new(wrap_coordinate(p.x), wrap_coordinate(p.y))
}
