//! The kinetic-energy action of a velocity history and its first variation
//! along divergence-free, separable perturbations.

use crate::error::{Error, Result};
use crate::ns::VelocityHistory;
use crate::spectral::{project_divergence_free, SpectralField, VectorField};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

/// Endpoint tolerance for envelopes.
pub const ENDPOINT_TOL: f64 = 1e-12;
/// Step sizes for the finite-difference check, largest first.
pub const FD_EPS: [f64; 2] = [1e-3, 1e-4];
/// Default stationarity tolerance relative to the action.
pub const STATIONARITY_REL: f64 = 1e-3;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Time profile of a perturbation. The built-in shapes are functions of the
/// normalized time `τ = (t − t0)/(tf − t0)`; `Custom` takes absolute time.
#[derive(Clone)]
pub enum Envelope {
    /// `sin(mπτ)`
    Sine { m: u32 },
    /// `sin²(mπτ)`
    SineSquared { m: u32 },
    Custom {
        name: String,
        value: ScalarFn,
        derivative: ScalarFn,
    },
}

impl fmt::Debug for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl Envelope {
    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Envelope::Custom {
            name: name.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Envelope::Sine { m } => format!("sin({m}πτ)"),
            Envelope::SineSquared { m } => format!("sin²({m}πτ)"),
            Envelope::Custom { name, .. } => name.clone(),
        }
    }

    /// Value and time derivative at `t` on `[t0, tf]`.
    pub fn eval(&self, t: f64, t0: f64, tf: f64) -> (f64, f64) {
        let span = tf - t0;
        let tau = (t - t0) / span;
        match self {
            Envelope::Sine { m } => {
                let w = *m as f64 * PI;
                let (s, c) = (w * tau).sin_cos();
                (s, w * c / span)
            }
            Envelope::SineSquared { m } => {
                let w = *m as f64 * PI;
                let (s, c) = (w * tau).sin_cos();
                (s * s, 2.0 * w * s * c / span)
            }
            Envelope::Custom { value, derivative, .. } => (value(t), derivative(t)),
        }
    }
}

/// `δx̄(r, t) = envelope(t)·shape(r)` on `[t0, tf]`.
#[derive(Clone, Debug)]
pub struct PerturbationField {
    envelope: Envelope,
    shape: SpectralField,
    t0: f64,
    tf: f64,
}

impl PerturbationField {
    pub fn new(envelope: Envelope, shape: SpectralField, t0: f64, tf: f64) -> Result<Self> {
        if !(tf > t0) || !t0.is_finite() || !tf.is_finite() {
            return Err(Error::InvalidPerturbation(format!("bad interval [{t0}, {tf}]")));
        }
        let scale = shape.max_coeff();
        if scale > 0.0 && shape.divergence_defect() > 1e-10 * scale {
            return Err(Error::InvalidPerturbation("shape is not divergence-free".into()));
        }
        for t in [t0, tf] {
            let (e, _) = envelope.eval(t, t0, tf);
            if !(e.abs() <= ENDPOINT_TOL) {
                return Err(Error::InvalidPerturbation(format!(
                    "envelope {} is {e} at t={t}, must vanish at both endpoints",
                    envelope.label()
                )));
            }
        }
        Ok(Self {
            envelope,
            shape,
            t0,
            tf,
        })
    }

    /// Perturbation on the interval of `h`.
    pub fn for_history(envelope: Envelope, shape: SpectralField, h: &VelocityHistory) -> Result<Self> {
        Self::new(envelope, shape, h.t0(), h.tf())
    }

    pub fn envelope(&self) -> &Envelope {
        &self.envelope
    }

    pub fn shape(&self) -> &SpectralField {
        &self.shape
    }

    pub fn label(&self) -> String {
        self.envelope.label()
    }

    /// Envelope value and derivative at `t`.
    pub fn profile(&self, t: f64) -> (f64, f64) {
        self.envelope.eval(t, self.t0, self.tf)
    }

    pub fn at(&self, t: f64) -> SpectralField {
        self.shape.scaled(self.profile(t).0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ActionValue {
    pub value: f64,
    pub interval: (f64, f64),
    pub quadrature_dt: f64,
}

/// Five-point Gauss-Legendre rule on `[-1, 1]`.
const GAUSS5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Gauss nodes and weights, five per snapshot interval. The interpolated
/// history is smooth inside each interval, so the rule is accurate to
/// rounding for snapshot spacings used in practice.
fn quadrature_nodes(h: &VelocityHistory) -> Vec<(f64, f64)> {
    h.times()
        .windows(2)
        .flat_map(|w| {
            let (c, r) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            GAUSS5.iter().map(move |(x, wt)| (c + r * x, r * wt))
        })
        .collect()
}

fn panel_width(h: &VelocityHistory) -> f64 {
    h.times().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// `∫ f(t) dt` over the history interval; terms are summed in node order.
fn integrate<F>(h: &VelocityHistory, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let nodes = quadrature_nodes(h);
    let values = nodes
        .par_iter()
        .map(|&(t, w)| Ok(w * f(t)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum())
}

/// `S = ∫ ½‖u(·,t)‖² dt`.
pub fn action(h: &VelocityHistory) -> Result<ActionValue> {
    let value = integrate(h, |t| Ok(h.sample_velocity(t)?.energy()))?;
    Ok(ActionValue {
        value,
        interval: (h.t0(), h.tf()),
        quadrature_dt: panel_width(h),
    })
}

/// `δu = (δx̄·∇)u − ∂t δx̄ − (u·∇)δx̄ − νΔδx̄`, not projected.
///
/// With this orientation `∫⟨u, δu⟩ dt = ∫⟨∂t u + (u·∇)u − νΔu, δx̄⟩ dt`
/// holds identically for any history once `δx̄` vanishes at both ends.
pub fn variation_velocity(h: &VelocityHistory, p: &PerturbationField, t: f64) -> Result<VectorField> {
    let u = h.sample_velocity(t)?;
    let (e, de) = p.profile(t);
    let s = p.shape.as_vector();
    let transport = u
        .advected_by(s)
        .add_scaled(&s.advected_by(u.as_vector()), -1.0)
        .add_scaled(&s.laplacian(), -h.nu());
    Ok(transport.scaled(e).add_scaled(s, -de))
}

/// `δS = ∫ ⟨u, δu⟩ dt`.
pub fn gateaux_derivative(h: &VelocityHistory, p: &PerturbationField) -> Result<f64> {
    integrate(h, |t| {
        let u = h.sample_velocity(t)?;
        Ok(u.inner(&variation_velocity(h, p, t)?))
    })
}

/// `P[∂t u + (u·∇)u − νΔu]` with the exact time derivative of the
/// interpolated history.
fn interpolant_residual(h: &VelocityHistory, t: f64) -> Result<SpectralField> {
    let du = h.interpolant_derivative(t)?;
    let u = h.sample_velocity(t)?;
    let r = du
        .as_vector()
        .add_scaled(&u.advected_by(u.as_vector()), 1.0)
        .add_scaled(&u.as_vector().laplacian(), -h.nu());
    Ok(project_divergence_free(&r))
}

/// `∫ ⟨P[∂t u + (u·∇)u − νΔu], δx̄⟩ dt`.
pub fn residual_pairing(h: &VelocityHistory, p: &PerturbationField) -> Result<f64> {
    integrate(h, |t| Ok(interpolant_residual(h, t)?.inner(p.at(t).as_vector())))
}

/// `S[u + εδu]` at the quadrature nodes of [`action`].
pub fn perturbed_action(h: &VelocityHistory, p: &PerturbationField, eps: f64) -> Result<f64> {
    integrate(h, |t| {
        let u = h.sample_velocity(t)?;
        Ok(u.as_vector().add_scaled(&variation_velocity(h, p, t)?, eps).energy())
    })
}

/// `½ ∫ ‖δu‖² dt`, the exact second-order term of the action.
pub fn second_variation(h: &VelocityHistory, p: &PerturbationField) -> Result<f64> {
    integrate(h, |t| Ok(variation_velocity(h, p, t)?.energy()))
}

/// `S[u + εδu] − S[u]`, differenced per Fourier coefficient and node before
/// summation so the large common part cancels exactly.
pub fn action_increment(h: &VelocityHistory, p: &PerturbationField, eps: f64) -> Result<f64> {
    integrate(h, |t| {
        let u = h.sample_velocity(t)?;
        let du = variation_velocity(h, p, t)?;
        let comp = |a: &[num_complex::Complex64], b: &[num_complex::Complex64]| -> f64 {
            a.iter().zip(b).map(|(a, b)| (a + b * eps).norm_sqr() - a.norm_sqr()).sum()
        };
        let d = comp(u.u_coeffs(), du.u_coeffs()) + comp(u.v_coeffs(), du.v_coeffs());
        Ok(0.5 * TAU * TAU * d)
    })
}

/// Richardson-extrapolated forward difference `(S(ε) − S(0))/ε` over
/// [`FD_EPS`].
pub fn finite_difference_gateaux(h: &VelocityHistory, p: &PerturbationField) -> Result<f64> {
    let [e1, e2] = FD_EPS;
    let d1 = action_increment(h, p, e1)? / e1;
    let d2 = action_increment(h, p, e2)? / e2;
    Ok((e1 * d2 - e2 * d1) / (e1 - e2))
}

/// Relative difference with floor `1e-6` on the scale.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Five perturbations on the interval of `h`: the initial field under a
/// single sine bump, then low-mode stream-function shapes under distinct
/// envelopes.
pub fn standard_family(h: &VelocityHistory) -> Result<Vec<PerturbationField>> {
    use num_complex::Complex64;
    let g = h.grid();
    let mut out = Vec::with_capacity(5);
    let first = h.sample_velocity(h.t0())?;
    let canonical = if first.max_coeff() > 0.0 {
        first
    } else {
        SpectralField::taylor_green(g, 0.0, 0.0)
    };
    out.push(PerturbationField::for_history(Envelope::Sine { m: 1 }, canonical, h)?);
    let stream = [
        ((1, 0), Envelope::SineSquared { m: 1 }),
        ((1, 2), Envelope::Sine { m: 2 }),
        ((2, 1), Envelope::SineSquared { m: 2 }),
        ((0, 2), Envelope::Sine { m: 3 }),
    ];
    for ((kx, ky), env) in stream {
        let shape = SpectralField::from_stream_modes(g, &[(kx, ky, Complex64::new(0.3, -0.2))])?;
        out.push(PerturbationField::for_history(env, shape, h)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationReport {
    pub label: String,
    pub gateaux: f64,
    pub pairing: f64,
    pub difference: f64,
    pub finite_difference: f64,
    pub fd_relative_error: f64,
    /// `½∫‖δu‖² dt`, informational.
    pub second_order: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    pub action: ActionValue,
    pub tolerance: f64,
    pub max_abs_gateaux: f64,
    pub members: Vec<PerturbationReport>,
    pub pass: bool,
}

/// Per-member first-variation diagnostics; passes iff every `|δS|` is at
/// most `tolerance` (default `1e-3·S`).
pub fn stationarity_report(
    h: &VelocityHistory,
    family: &[PerturbationField],
    tolerance: Option<f64>,
) -> Result<StationarityReport> {
    let s = action(h)?;
    let tol = tolerance.unwrap_or(STATIONARITY_REL * s.value);
    let members = family
        .par_iter()
        .map(|p| {
            let gateaux = gateaux_derivative(h, p)?;
            let pairing = residual_pairing(h, p)?;
            let fd = finite_difference_gateaux(h, p)?;
            Ok(PerturbationReport {
                label: p.label(),
                gateaux,
                pairing,
                difference: (gateaux - pairing).abs(),
                finite_difference: fd,
                fd_relative_error: relative_gap(gateaux, fd),
                second_order: second_variation(h, p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_abs_gateaux = members.iter().map(|m| m.gateaux.abs()).fold(0.0, f64::max);
    Ok(StationarityReport {
        action: s,
        tolerance: tol,
        max_abs_gateaux,
        pass: max_abs_gateaux <= tol,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ns::{solve, NsParams};
    use crate::spectral::{GridSpec, Point};
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    fn params(nu: f64) -> NsParams {
        NsParams::new(nu, 1e-3, 0.0, 1.0, 10).unwrap()
    }

    fn frozen_tg(nu: f64) -> VelocityHistory {
        VelocityHistory::frozen(&SpectralField::taylor_green(grid(16), 0.0, 0.0), params(nu)).unwrap()
    }

    fn solved_tg(nu: f64) -> VelocityHistory {
        solve(&SpectralField::taylor_green(grid(16), 0.0, nu), &params(nu)).unwrap()
    }

    /// Composite Gauss-Legendre, independent of the Simpson nodes.
    fn gauss(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let nodes = [
            (-0.861_136_311_594_053, 0.347_854_845_137_454),
            (-0.339_981_043_584_856, 0.652_145_154_862_546),
            (0.339_981_043_584_856, 0.652_145_154_862_546),
            (0.861_136_311_594_053, 0.347_854_845_137_454),
        ];
        let panels = 64;
        let hw = (b - a) / panels as f64 / 2.0;
        (0..panels)
            .map(|i| {
                let c = a + (2 * i + 1) as f64 * hw;
                nodes.iter().map(|(x, w)| w * hw * f(c + hw * x)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn action_examples() {
        let z = VelocityHistory::frozen(&SpectralField::zeros(grid(16)), params(0.1)).unwrap();
        assert_eq!(action(&z).unwrap().value, 0.0);
        let c = VelocityHistory::frozen(&SpectralField::constant(grid(16), Point::new(1.0, 0.0)), params(0.0)).unwrap();
        assert_abs_diff_eq!(action(&c).unwrap().value, 2.0 * PI * PI, epsilon = 1e-10);
        let nu = 0.1;
        let h = VelocityHistory::from_fn(params(nu), |t| SpectralField::taylor_green(grid(16), t, nu)).unwrap();
        let exact = PI * PI * (1.0 - (-0.4f64).exp()) / 0.4;
        assert_abs_diff_eq!(exact, gauss(|t| PI * PI * (-4.0 * nu * t).exp(), 0.0, 1.0), epsilon = 1e-12);
        let s = action(&h).unwrap();
        assert_abs_diff_eq!(s.value, exact, epsilon = 1e-6);
        assert_abs_diff_eq!(s.quadrature_dt, 0.01, epsilon = 1e-9);
        assert_eq!(s.interval, (0.0, 1.0));
    }

    #[test]
    fn nonuniform_snapshots_are_integrated() {
        let p = NsParams::new(0.1, 1e-3, 0.0, 0.95, 100).unwrap();
        let nu = 0.1;
        let h = VelocityHistory::from_fn(p, |t| SpectralField::taylor_green(grid(16), t, nu)).unwrap();
        assert!(h.times().len() == 11);
        let s = action(&h).unwrap();
        assert_abs_diff_eq!(s.quadrature_dt, 0.1, epsilon = 1e-9);
        let exact = PI * PI * (1.0 - (-0.38f64).exp()) / 0.4;
        assert_abs_diff_eq!(s.value, exact, epsilon = 1e-6);
    }

    #[test]
    fn endpoint_constraint_is_enforced() {
        let s = SpectralField::taylor_green(grid(16), 0.0, 0.0);
        assert!(PerturbationField::new(Envelope::Sine { m: 1 }, s.clone(), 0.0, 1.0).is_ok());
        let ramp = Envelope::custom("t", |t| t, |_| 1.0);
        assert!(matches!(
            PerturbationField::new(ramp, s.clone(), 0.0, 1.0),
            Err(Error::InvalidPerturbation(_))
        ));
        let tail = Envelope::custom("1-t", |t| 1.0 - t, |_| -1.0);
        assert!(PerturbationField::new(tail, s.clone(), 0.0, 1.0).is_err());
        let bump = Envelope::custom("t(1-t)", |t| t * (1.0 - t), |t| 1.0 - 2.0 * t);
        assert!(PerturbationField::new(bump, s.clone(), 0.0, 1.0).is_ok());
        assert!(PerturbationField::new(Envelope::Sine { m: 1 }, s, 1.0, 1.0).is_err());
    }

    #[test]
    fn variation_velocity_simple_cases() {
        let g = grid(16);
        let shape = SpectralField::random_lowmode(g, 3, 3, 1.0).unwrap();
        let z = VelocityHistory::frozen(&SpectralField::zeros(g), params(0.0)).unwrap();
        let p = PerturbationField::for_history(Envelope::SineSquared { m: 1 }, shape.clone(), &z).unwrap();
        let t = 0.3;
        let (_, de) = p.profile(t);
        let du = variation_velocity(&z, &p, t).unwrap();
        assert!(du.add_scaled(&shape.scaled(de), 1.0).max_coeff() < 1e-14);

        let c = Point::new(0.7, 0.0);
        let ch = VelocityHistory::frozen(&SpectralField::constant(g, c), params(0.0)).unwrap();
        let (e, de) = p.profile(t);
        let expected = shape.as_vector().scaled(-de).add_scaled(&shape.derivative(0), -c.x * e);
        let du = variation_velocity(&ch, &p, t).unwrap();
        assert!(du.add_scaled(&expected, -1.0).max_coeff() < 1e-14);
    }

    #[test]
    fn variation_velocity_matches_pointwise_brute_force() {
        let g = grid(128);
        let nu = 0.05;
        let tg = SpectralField::taylor_green(g, 0.0, 0.0);
        let h = VelocityHistory::frozen(&tg, params(nu)).unwrap();
        let p = PerturbationField::for_history(Envelope::Sine { m: 1 }, tg.clone(), &h).unwrap();
        let t = 0.4;
        let (e, de) = p.profile(t);
        let du = variation_velocity(&h, &p, t).unwrap();
        let (gu, gv) = du.grid_values();
        let mut worst = 0.0f64;
        for j in 0..g.n() {
            for i in 0..g.n() {
                let r = g.node(i, j);
                let (sx, cx) = r.x.sin_cos();
                let (sy, cy) = r.y.sin_cos();
                let u = Point::new(sx * cy, -cx * sy);
                let grad = [[cx * cy, -sx * sy], [sx * sy, -cx * cy]];
                let adv = Point::new(
                    u.x * grad[0][0] + u.y * grad[0][1],
                    u.x * grad[1][0] + u.y * grad[1][1],
                );
                let lap = u * -2.0;
                // shape = u, so (u·∇)s and (s·∇)u coincide
                let exact = (adv - adv - lap * nu) * e - u * de;
                let k = j * g.n() + i;
                worst = worst.max((gu[k] - exact.x).abs()).max((gv[k] - exact.y).abs());
            }
        }
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn frozen_taylor_green_canonical_variation() {
        let nu = 0.05;
        let h = frozen_tg(nu);
        let fam = standard_family(&h).unwrap();
        let target = 8.0 * nu * PI;
        let oracle = gauss(|t| 2.0 * nu * (PI * t).sin() * 2.0 * PI * PI, 0.0, 1.0);
        assert_abs_diff_eq!(oracle, target, epsilon = 1e-12);
        let g = gateaux_derivative(&h, &fam[0]).unwrap();
        let r = residual_pairing(&h, &fam[0]).unwrap();
        assert!(relative_gap(g, target) <= 1e-3, "gateaux {g}");
        assert!(relative_gap(r, target) <= 1e-3, "pairing {r}");
        assert!(relative_gap(g, r) <= 1e-3);
        let rep = stationarity_report(&h, &fam, None).unwrap();
        assert!(!rep.pass);
        assert!(relative_gap(rep.members[0].gateaux, target) <= 1e-3);
    }

    #[test]
    fn solved_history_is_stationary() {
        let h = solved_tg(0.05);
        let fam = standard_family(&h).unwrap();
        let rep = stationarity_report(&h, &fam, None).unwrap();
        assert!(rep.pass);
        for m in &rep.members {
            assert!(m.gateaux.abs() <= 1e-4 * rep.action.value, "{m:?}");
            assert!(m.difference <= 1e-3 * m.gateaux.abs().max(m.pairing.abs()).max(1e-6), "{m:?}");
            assert!(m.fd_relative_error <= 1e-3, "{m:?}");
        }
    }

    #[test]
    fn zero_and_constant_histories() {
        let g = grid(16);
        let z = VelocityHistory::frozen(&SpectralField::zeros(g), params(0.1)).unwrap();
        for p in standard_family(&z).unwrap() {
            assert_eq!(gateaux_derivative(&z, &p).unwrap(), 0.0);
        }
        let c = VelocityHistory::frozen(&SpectralField::constant(g, Point::new(0.3, -0.2)), params(0.1)).unwrap();
        for p in standard_family(&c).unwrap() {
            assert!(residual_pairing(&c, &p).unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn action_is_exactly_quadratic() {
        let h = frozen_tg(0.05);
        let p = &standard_family(&h).unwrap()[2];
        let eps = 0.5;
        let s0 = action(&h).unwrap().value;
        let lhs = perturbed_action(&h, p, eps).unwrap() - s0 - eps * gateaux_derivative(&h, p).unwrap();
        let rhs = eps * eps * second_variation(&h, p).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs(), "{lhs} vs {rhs}");
    }

    fn non_solutions() -> Vec<VelocityHistory> {
        let g = grid(16);
        let nu = 0.05;
        let noise = SpectralField::random_lowmode(g, 17, 3, 0.3).unwrap();
        vec![
            frozen_tg(nu),
            VelocityHistory::from_fn(params(nu), |t| SpectralField::taylor_green(g, 2.0 * t, nu)).unwrap(),
            VelocityHistory::from_fn(params(nu), |t| {
                SpectralField::taylor_green(g, t, nu).add_scaled(&noise, 1.0)
            })
            .unwrap(),
            VelocityHistory::new(params(nu), solved_tg(0.2).snapshots().map(|(t, f)| (t, f.clone())).collect()).unwrap(),
            VelocityHistory::frozen(&SpectralField::random_lowmode(g, 5, 3, 1.0).unwrap(), params(nu)).unwrap(),
        ]
    }

    #[test]
    fn non_solutions_are_detected() {
        for (i, h) in non_solutions().iter().enumerate() {
            let rep = stationarity_report(h, &standard_family(h).unwrap(), None).unwrap();
            assert!(rep.max_abs_gateaux > 10.0 * rep.tolerance, "history {i}: {rep:?}");
            for m in &rep.members {
                assert!(m.difference <= 1e-3 * m.gateaux.abs().max(m.pairing.abs()).max(1e-6), "history {i}: {m:?}");
                assert!(m.fd_relative_error <= 1e-3, "history {i}: {m:?}");
            }
        }
    }
}
