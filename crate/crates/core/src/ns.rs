//! Pseudo-spectral Navier-Stokes solver and time-resolved velocity histories.
//!
//! The semi-discrete system is `du/dt = −P[(u·∇)u] + νΔu` on the retained band,
//! advanced with classical RK4. Pressure never appears: the Leray projector
//! removes the gradient part of the nonlinear term.

use crate::error::{Error, Result};
use crate::spectral::{project_divergence_free, GridSpec, SpectralField, VectorField};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Relative slack when matching times against snapshot times and interval ends.
const TIME_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NsParams {
    pub nu: f64,
    pub dt: f64,
    pub t0: f64,
    pub tf: f64,
    /// Snapshots are retained every `snap_stride` steps (plus the endpoint).
    pub snap_stride: usize,
}

impl NsParams {
    pub fn new(nu: f64, dt: f64, t0: f64, tf: f64, snap_stride: usize) -> Result<Self> {
        let p = Self {
            nu,
            dt,
            t0,
            tf,
            snap_stride,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad("nu", "must be finite and >= 0");
        }
        if !(self.t0.is_finite() && self.tf.is_finite() && self.tf > self.t0) {
            return bad("tf", "need finite t0 < tf");
        }
        if !(self.dt > 0.0 && self.dt <= self.tf - self.t0) {
            return bad("dt", "need 0 < dt <= tf - t0");
        }
        if self.snap_stride == 0 {
            return bad("snap_stride", "must be >= 1");
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.tf - self.t0
    }

    /// Number of RK4 steps covering `[t0, tf]`.
    pub fn step_count(&self) -> usize {
        ((self.span() / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// Uniform step actually taken, `span / step_count <= dt`.
    pub fn effective_dt(&self) -> f64 {
        self.span() / self.step_count() as f64
    }

    /// Time of step boundary `k`.
    pub fn step_time(&self, k: usize) -> f64 {
        if k == self.step_count() {
            self.tf
        } else {
            self.t0 + k as f64 * self.effective_dt()
        }
    }

    /// Step indices at which [`solve`] stores snapshots.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let n = self.step_count();
        let mut steps: Vec<usize> = (0..=n).step_by(self.snap_stride).collect();
        if *steps.last().unwrap() != n {
            steps.push(n);
        }
        steps
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        self.snapshot_steps()
            .into_iter()
            .map(|k| self.step_time(k))
            .collect()
    }
}

/// Time-ordered snapshots of a divergence-free velocity field on `[t0, tf]`.
#[derive(Clone, Debug)]
pub struct VelocityHistory {
    params: NsParams,
    times: Vec<f64>,
    fields: Vec<SpectralField>,
}

impl VelocityHistory {
    pub fn new(params: NsParams, snapshots: Vec<(f64, SpectralField)>) -> Result<Self> {
        params.validate()?;
        if snapshots.len() < 2 {
            return Err(Error::InvalidHistory("need at least two snapshots".into()));
        }
        let tol = TIME_EPS * params.span().max(1.0);
        let grid = snapshots[0].1.grid();
        for w in snapshots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidHistory(format!(
                    "snapshot times not strictly increasing at t={}",
                    w[1].0
                )));
            }
        }
        let (first, last) = (snapshots[0].0, snapshots[snapshots.len() - 1].0);
        if (first - params.t0).abs() > tol || (last - params.tf).abs() > tol {
            return Err(Error::InvalidHistory(format!(
                "snapshots span [{first}, {last}] but interval is [{}, {}]",
                params.t0, params.tf
            )));
        }
        for (t, f) in &snapshots {
            if f.grid() != grid {
                return Err(Error::GridMismatch {
                    expected: grid.n(),
                    found: f.grid().n(),
                });
            }
            let scale = f.max_coeff();
            if f.divergence_defect() > 1e-10 * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
                return Err(Error::InvalidHistory(format!("snapshot at t={t} is not divergence-free")));
            }
        }
        let (times, fields): (Vec<f64>, Vec<SpectralField>) = snapshots
            .into_iter()
            .map(|(t, f)| {
                let f = f.with_time(t);
                (t, f)
            })
            .unzip();
        Ok(Self {
            params,
            times,
            fields,
        })
    }

    /// History sampled from a closed-form `u(·, t)` at the snapshot times
    /// [`solve`] would use.
    pub fn from_fn(params: NsParams, f: impl Fn(f64) -> SpectralField) -> Result<Self> {
        params.validate()?;
        let snaps = params.snapshot_times().into_iter().map(|t| (t, f(t))).collect();
        Self::new(params, snaps)
    }

    /// The field held fixed in time. Not a Navier-Stokes solution unless the
    /// field is steady (e.g. `ν = 0` Taylor-Green, constants).
    pub fn frozen(field: &SpectralField, params: NsParams) -> Result<Self> {
        Self::from_fn(params, |_| field.clone())
    }

    pub fn params(&self) -> &NsParams {
        &self.params
    }

    pub fn nu(&self) -> f64 {
        self.params.nu
    }

    pub fn t0(&self) -> f64 {
        self.params.t0
    }

    pub fn tf(&self) -> f64 {
        self.params.tf
    }

    pub fn grid(&self) -> GridSpec {
        self.fields[0].grid()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> impl Iterator<Item = (f64, &SpectralField)> {
        self.times.iter().copied().zip(self.fields.iter())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> &SpectralField {
        &self.fields[0]
    }

    pub fn last(&self) -> &SpectralField {
        &self.fields[self.fields.len() - 1]
    }

    /// `ũ(r, s) = −u(r, t0 + tf − s)` on the same interval.
    pub fn time_reversed(&self) -> VelocityHistory {
        let (t0, tf) = (self.params.t0, self.params.tf);
        let n = self.times.len();
        let mut times = Vec::with_capacity(n);
        let mut fields = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let s = if i == n - 1 {
                t0
            } else if i == 0 {
                tf
            } else {
                t0 + tf - self.times[i]
            };
            times.push(s);
            fields.push(self.fields[i].scaled(-1.0).with_time(s));
        }
        VelocityHistory {
            params: self.params,
            times,
            fields,
        }
    }

    fn check_range(&self, t: f64) -> Result<f64> {
        let tol = TIME_EPS * self.params.span().max(1.0);
        let (lo, hi) = (self.params.t0, self.params.tf);
        if !(t >= lo - tol && t <= hi + tol) {
            return Err(Error::TimeOutOfRange { t, lo, hi });
        }
        Ok(t.clamp(lo, hi))
    }

    /// Finite-difference time derivative of the coefficients at snapshot `i`
    /// (second order, exact for quadratics in time).
    fn snapshot_derivative(&self, i: usize) -> VectorField {
        let n = self.times.len();
        let t = &self.times;
        let f = |j: usize| self.fields[j].as_vector();
        if n == 2 {
            return f(1).add_scaled(f(0), -1.0).scaled(1.0 / (t[1] - t[0]));
        }
        let (a, b, c, w) = if i == 0 {
            let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
            (
                0,
                1,
                2,
                [
                    -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
                    (h1 + h2) / (h1 * h2),
                    -h1 / (h2 * (h1 + h2)),
                ],
            )
        } else if i == n - 1 {
            let (h1, h2) = (t[n - 2] - t[n - 3], t[n - 1] - t[n - 2]);
            (
                n - 3,
                n - 2,
                n - 1,
                [
                    h2 / (h1 * (h1 + h2)),
                    -(h1 + h2) / (h1 * h2),
                    (h1 + 2.0 * h2) / (h2 * (h1 + h2)),
                ],
            )
        } else {
            let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
            (
                i - 1,
                i,
                i + 1,
                [
                    -h2 / (h1 * (h1 + h2)),
                    (h2 - h1) / (h1 * h2),
                    h1 / (h2 * (h1 + h2)),
                ],
            )
        };
        f(a).scaled(w[0])
            .add_scaled(f(b), w[1])
            .add_scaled(f(c), w[2])
    }

    /// Index `i` with `times[i] <= t <= times[i + 1]`.
    fn bracket(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&s| s <= t);
        i.clamp(1, self.times.len() - 1) - 1
    }

    /// Velocity at time `t`: the snapshot itself at snapshot times, otherwise
    /// cubic Hermite interpolation per coefficient, re-projected.
    pub fn sample_velocity(&self, t: f64) -> Result<SpectralField> {
        let t = self.check_range(t)?;
        let i = self.bracket(t);
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        if t == ta {
            return Ok(self.fields[i].clone());
        }
        if t == tb {
            return Ok(self.fields[i + 1].clone());
        }
        let dt = tb - ta;
        let s = (t - ta) / dt;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let ma = self.snapshot_derivative(i);
        let mb = self.snapshot_derivative(i + 1);
        let v = self.fields[i]
            .as_vector()
            .scaled(h00)
            .add_scaled(&ma, h10 * dt)
            .add_scaled(self.fields[i + 1].as_vector(), h01)
            .add_scaled(&mb, h11 * dt);
        Ok(project_divergence_free(&v).with_time(t))
    }

    /// Exact time derivative of the interpolant returned by
    /// [`sample_velocity`](Self::sample_velocity), continuous across
    /// snapshots.
    pub fn interpolant_derivative(&self, t: f64) -> Result<SpectralField> {
        let t = self.check_range(t)?;
        let i = self.bracket(t);
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let dt = tb - ta;
        let s = (t - ta) / dt;
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / dt;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * s2 - 2.0 * s;
        let ma = self.snapshot_derivative(i);
        let mb = self.snapshot_derivative(i + 1);
        let v = self.fields[i]
            .as_vector()
            .scaled(d00)
            .add_scaled(&ma, d10)
            .add_scaled(self.fields[i + 1].as_vector(), d01)
            .add_scaled(&mb, d11);
        Ok(project_divergence_free(&v).with_time(t))
    }

    /// Snapshot spacing that governs difference stencils around `t`.
    pub fn local_spacing(&self, t: f64) -> f64 {
        let n = self.times.len();
        let i = self.bracket(t);
        let mut h = self.times[i + 1] - self.times[i];
        // at a snapshot, the shorter of the two neighbouring spacings
        if t == self.times[i] && i > 0 {
            h = h.min(self.times[i] - self.times[i - 1]);
        }
        if t == self.times[i + 1] && i + 2 < n {
            h = h.min(self.times[i + 2] - self.times[i + 1]);
        }
        h
    }

    /// Centered time derivative of the history at `t`, step = local snapshot
    /// spacing; fourth order when the wide stencil fits, second order when
    /// only the narrow one does.
    pub fn time_derivative(&self, t: f64) -> Result<VectorField> {
        let t = self.check_range(t)?;
        let h = self.local_spacing(t);
        let (lo, hi) = (self.params.t0, self.params.tf);
        let tol = TIME_EPS * self.params.span().max(1.0);
        let fits = |d: f64| t - d >= lo - tol && t + d <= hi + tol;
        let at = |s: f64| self.sample_velocity(s).map(SpectralField::into_vector);
        if fits(2.0 * h) {
            let (p1, m1) = (at(t + h)?, at(t - h)?);
            let (p2, m2) = (at(t + 2.0 * h)?, at(t - 2.0 * h)?);
            let d1 = p1.add_scaled(&m1, -1.0);
            let d2 = p2.add_scaled(&m2, -1.0);
            Ok(d1.scaled(8.0).add_scaled(&d2, -1.0).scaled(1.0 / (12.0 * h)))
        } else if fits(h) {
            let (p1, m1) = (at(t + h)?, at(t - h)?);
            Ok(p1.add_scaled(&m1, -1.0).scaled(0.5 / h))
        } else {
            Err(Error::TimeOutOfRange {
                t,
                lo: lo + h,
                hi: hi - h,
            })
        }
    }
}

/// `−P[(u·∇)u] + νΔu`.
fn rhs(u: &SpectralField, nu: f64) -> SpectralField {
    let nl = u.advected_by(u.as_vector());
    let lin = u.as_vector().laplacian();
    project_divergence_free(&lin.scaled(nu).add_scaled(&nl, -1.0))
}

fn max_speed(u: &SpectralField) -> f64 {
    let (a, b) = u.grid_values();
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x * x + y * y).sqrt())
        .fold(0.0, f64::max)
}

fn rk4(u: &SpectralField, nu: f64, dt: f64, t: f64) -> Result<SpectralField> {
    let n = u.grid().n() as f64;
    let speed = max_speed(u);
    let courant = dt * speed * n / TAU;
    if courant > 0.5 {
        return Err(Error::Cfl {
            t,
            courant,
            max_speed: speed,
        });
    }
    let k1 = rhs(u, nu);
    let k2 = rhs(&u.add_scaled(&k1, 0.5 * dt), nu);
    let k3 = rhs(&u.add_scaled(&k2, 0.5 * dt), nu);
    let k4 = rhs(&u.add_scaled(&k3, dt), nu);
    let incr = k1.add_scaled(&k2, 2.0).add_scaled(&k3, 2.0).add_scaled(&k4, 1.0);
    Ok(u.add_scaled(&incr, dt / 6.0))
}

/// One RK4 step of size `params.dt`.
pub fn step(f: &SpectralField, params: &NsParams) -> Result<SpectralField> {
    params.validate()?;
    rk4(f, params.nu, params.dt, f.time_tag().unwrap_or(params.t0))
}

/// Integrates from `t0` to `tf` with uniform steps of
/// [`NsParams::effective_dt`].
pub fn solve(initial: &SpectralField, params: &NsParams) -> Result<VelocityHistory> {
    params.validate()?;
    let scale = initial.max_coeff();
    if scale > 0.0 && initial.divergence_defect() > 1e-10 * scale {
        return Err(Error::InvalidParameter {
            name: "initial",
            reason: "initial field is not divergence-free".into(),
        });
    }
    let dt = params.effective_dt();
    let keep = params.snapshot_steps();
    let mut next_keep = 0usize;
    let mut snaps = Vec::with_capacity(keep.len());
    let mut u = initial.clone();
    for k in 0..=params.step_count() {
        if next_keep < keep.len() && keep[next_keep] == k {
            snaps.push((params.step_time(k), u.clone()));
            next_keep += 1;
        }
        if k < params.step_count() {
            u = rk4(&u, params.nu, dt, params.step_time(k))?;
        }
    }
    VelocityHistory::new(*params, snaps)
}

/// `½ ∫ |u|²`.
pub fn energy(f: &VectorField) -> f64 {
    f.energy()
}

/// `½ ∫ ω²` with `ω = ∂_x v − ∂_y u`.
pub fn enstrophy(f: &VectorField) -> f64 {
    let s: f64 = f
        .grid()
        .modes()
        .map(|(i, kx, ky)| {
            let w = f.v_coeffs()[i] * kx as f64 - f.u_coeffs()[i] * ky as f64;
            w.norm_sqr()
        })
        .sum();
    0.5 * TAU * TAU * s
}

/// Projected material residual `P[∂t u + (u·∇)u − νΔu]` at interior time `t`.
///
/// Zero for a Navier-Stokes history; the unprojected residual is `−∇p`.
pub fn ns_residual(h: &VelocityHistory, t: f64) -> Result<SpectralField> {
    let du = h.time_derivative(t)?;
    let u = h.sample_velocity(t)?;
    let nl = u.advected_by(u.as_vector());
    let lap = u.as_vector().laplacian();
    let r = du.add_scaled(&nl, 1.0).add_scaled(&lap, -h.nu());
    Ok(project_divergence_free(&r).with_time(t))
}
