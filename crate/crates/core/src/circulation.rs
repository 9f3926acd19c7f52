//! Material loops, circulations and the stochastic Kelvin theorem.
//!
//! A loop is a closed polyline of markers. Circulation is the line integral of
//! the velocity along the polyline, Simpson's rule on each straight segment.
//! Advected loops are refined adaptively: when two advected neighbours drift
//! more than `h_max` apart, the midpoint of their labels is inserted on the
//! original loop and pushed through the same sample's Brownian path.

use crate::error::{Error, Result};
use crate::flow::{Direction, DriftSchedule, EnsembleSpec};
use crate::ns::VelocityHistory;
use crate::spectral::{EvalPlan, Point, Tensor, VectorField};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

pub const MIN_MARKERS: usize = 16;
/// Refinement gives up beyond this many markers.
pub const MARKER_CAP: usize = 100_000;
/// Flow-map offset for the finite-difference Jacobian.
pub const JACOBIAN_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct LoopState {
    markers: Vec<Point>,
    h_max: f64,
    anchor_time: f64,
}

fn check_h_max(h_max: f64) -> Result<()> {
    if !(h_max > 0.0 && h_max.is_finite()) {
        return Err(Error::InvalidLoop(format!("h_max must be finite and > 0, got {h_max}")));
    }
    Ok(())
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let orient = |a: Point, b: Point, c: Point| (b - a).perp(&(c - a));
    let (d1, d2) = (orient(q1, q2, p1), orient(q1, q2, p2));
    let (d3, d4) = (orient(p1, p2, q1), orient(p1, p2, q2));
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

impl LoopState {
    /// Closed polygon through `vertices`, each edge split into equal pieces no
    /// longer than `h_max` (and at least [`MIN_MARKERS`] markers overall).
    pub fn polygon(vertices: &[Point], h_max: f64, anchor_time: f64) -> Result<Self> {
        check_h_max(h_max)?;
        if vertices.len() < 3 {
            return Err(Error::InvalidLoop("a polygon needs at least 3 vertices".into()));
        }
        let n = vertices.len();
        let lengths: Vec<f64> = (0..n).map(|i| (vertices[(i + 1) % n] - vertices[i]).norm()).collect();
        if lengths.contains(&0.0) {
            return Err(Error::InvalidLoop("repeated consecutive vertex".into()));
        }
        let mut pieces: Vec<usize> = lengths.iter().map(|&l| (l / h_max - 1e-9).ceil().max(1.0) as usize).collect();
        while pieces.iter().sum::<usize>() < MIN_MARKERS {
            pieces.iter_mut().for_each(|p| *p *= 2);
        }
        let mut markers = Vec::with_capacity(pieces.iter().sum());
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            for j in 0..pieces[i] {
                markers.push(a + (b - a) * (j as f64 / pieces[i] as f64));
            }
        }
        Self::from_markers(markers, h_max, anchor_time)
    }

    /// Axis-aligned square with lower-left corner `corner`, counter-clockwise.
    pub fn square(corner: Point, side: f64, h_max: f64, anchor_time: f64) -> Result<Self> {
        let v = [
            corner,
            corner + Point::new(side, 0.0),
            corner + Point::new(side, side),
            corner + Point::new(0.0, side),
        ];
        Self::polygon(&v, h_max, anchor_time)
    }

    /// Inscribed regular polygon approximating a circle, counter-clockwise.
    pub fn circle(center: Point, radius: f64, h_max: f64, anchor_time: f64) -> Result<Self> {
        check_h_max(h_max)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidLoop(format!("radius must be > 0, got {radius}")));
        }
        let m = ((TAU * radius / h_max).ceil() as usize).max(MIN_MARKERS);
        let markers = (0..m)
            .map(|i| {
                let th = TAU * i as f64 / m as f64;
                center + Point::new(th.cos(), th.sin()) * radius
            })
            .collect();
        Self::from_markers(markers, h_max, anchor_time)
    }

    /// Validates an explicit marker list; segments longer than `h_max` are
    /// subdivided.
    pub fn from_markers(markers: Vec<Point>, h_max: f64, anchor_time: f64) -> Result<Self> {
        check_h_max(h_max)?;
        if markers.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidLoop("non-finite marker".into()));
        }
        let n = markers.len();
        let mut refined = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (markers[i], markers[(i + 1) % n]);
            let pieces = ((b - a).norm() / h_max - 1e-9).ceil().max(1.0) as usize;
            for j in 0..pieces {
                refined.push(a + (b - a) * (j as f64 / pieces as f64));
            }
        }
        if refined.len() < MIN_MARKERS {
            return Err(Error::InvalidLoop(format!(
                "need at least {MIN_MARKERS} markers, got {}",
                refined.len()
            )));
        }
        let m = refined.len();
        for i in 0..m {
            for j in (i + 2)..m {
                if i == 0 && j == m - 1 {
                    continue;
                }
                if segments_cross(refined[i], refined[i + 1], refined[j], refined[(j + 1) % m]) {
                    return Err(Error::InvalidLoop(format!("self-intersection between segments {i} and {j}")));
                }
            }
        }
        Ok(Self {
            markers: refined,
            h_max,
            anchor_time,
        })
    }

    pub fn markers(&self) -> &[Point] {
        &self.markers
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn anchor_time(&self) -> f64 {
        self.anchor_time
    }

    /// Same loop traversed the other way.
    pub fn reversed(&self) -> Self {
        let mut markers = self.markers.clone();
        markers.reverse();
        Self {
            markers,
            h_max: self.h_max,
            anchor_time: self.anchor_time,
        }
    }

    pub fn max_spacing(&self) -> f64 {
        let n = self.markers.len();
        (0..n)
            .map(|i| (self.markers[(i + 1) % n] - self.markers[i]).norm())
            .fold(0.0, f64::max)
    }

    /// Signed enclosed area (positive for counter-clockwise loops).
    pub fn signed_area(&self) -> f64 {
        let p = &self.markers;
        0.5 * (0..p.len())
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % p.len()]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
    }
}

fn midpoints(p: &[Point]) -> Vec<Point> {
    let n = p.len();
    (0..n).map(|i| 0.5 * (p[i] + p[(i + 1) % n])).collect()
}

/// `∮ w·dr` along the closed polyline `p`, given `w` at the markers and at the
/// segment midpoints.
fn simpson_line_integral(p: &[Point], at_markers: &[Point], at_mids: &[Point]) -> f64 {
    let n = p.len();
    let terms = (0..n).map(|i| {
        let j = (i + 1) % n;
        let w = ((at_markers[i] + at_markers[j]) + at_mids[i] * 4.0) / 6.0;
        w.dot(&(p[j] - p[i]))
    });
    orientation_exact_sum(terms)
}

/// Sum that is exactly negated when every term is negated, whatever the
/// order: positive and negative parts are accumulated separately by
/// increasing magnitude.
fn orientation_exact_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut pos, mut neg): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    for t in terms {
        if t >= 0.0 {
            pos.push(t);
        } else {
            neg.push(-t);
        }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    pos.iter().sum::<f64>() - neg.iter().sum::<f64>()
}

/// Circulation of a field along the closed polyline through `markers`.
pub fn circulation_of_polyline(plan: &EvalPlan, markers: &[Point]) -> f64 {
    let mids = midpoints(markers);
    let um = plan.evaluate(markers);
    let uc = plan.evaluate(&mids);
    simpson_line_integral(markers, &um, &uc)
}

/// `∮_C u·dr`.
pub fn circulation(f: &VectorField, lp: &LoopState) -> f64 {
    circulation_of_polyline(&f.eval_plan(), &lp.markers)
}

/// Labels and advected positions of one sample's refined loop.
#[derive(Clone, Debug)]
pub struct AdvectedLoop {
    /// Points on the original loop, refined where the image stretched.
    pub labels: Vec<Point>,
    /// Unwrapped images of `labels`.
    pub positions: Vec<Point>,
}

/// Adaptive loop advection over a fixed drift schedule.
pub struct LoopAdvector {
    schedule: DriftSchedule,
    base_seed: u64,
    cap: usize,
}

impl LoopAdvector {
    pub fn new(h: &VelocityHistory, t_from: f64, t_to: f64, ens: &EnsembleSpec, direction: Direction) -> Result<Self> {
        ens.validate()?;
        Ok(Self {
            schedule: DriftSchedule::new(h, t_from, t_to, ens.sde_dt, direction)?,
            base_seed: ens.base_seed,
            cap: MARKER_CAP,
        })
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn schedule(&self) -> &DriftSchedule {
        &self.schedule
    }

    fn increments(&self, sample: u64) -> Vec<Point> {
        self.schedule.brownian_increments(self.base_seed, sample)
    }

    pub fn advect(&self, lp: &LoopState, sample: u64) -> Result<AdvectedLoop> {
        let dw = self.increments(sample);
        self.advect_with(lp, sample, &dw)
    }

    fn advect_with(&self, lp: &LoopState, sample: u64, dw: &[Point]) -> Result<AdvectedLoop> {
        let h_max = lp.h_max;
        let mut labels = lp.markers.clone();
        let mut positions = self.schedule.advect(&labels, dw);
        loop {
            let n = labels.len();
            let long: Vec<usize> = (0..n)
                .filter(|&i| (positions[(i + 1) % n] - positions[i]).norm() > h_max)
                .collect();
            if long.is_empty() {
                break;
            }
            if n + long.len() > self.cap {
                return Err(Error::MarkerCap { cap: self.cap, sample });
            }
            let new_labels: Vec<Point> = long.iter().map(|&i| 0.5 * (labels[i] + labels[(i + 1) % n])).collect();
            let new_positions = self.schedule.advect(&new_labels, dw);
            let mut l = Vec::with_capacity(n + long.len());
            let mut p = Vec::with_capacity(n + long.len());
            let mut k = 0;
            for i in 0..n {
                l.push(labels[i]);
                p.push(positions[i]);
                if k < long.len() && long[k] == i {
                    l.push(new_labels[k]);
                    p.push(new_positions[k]);
                    k += 1;
                }
            }
            labels = l;
            positions = p;
        }
        Ok(AdvectedLoop { labels, positions })
    }
}

/// Image of `lp` at `t_to` under sample `sample` of the flow.
pub fn advect_loop(
    h: &VelocityHistory,
    lp: &LoopState,
    t_to: f64,
    sample: u64,
    ens: &EnsembleSpec,
    direction: Direction,
) -> Result<LoopState> {
    let adv = LoopAdvector::new(h, lp.anchor_time, t_to, ens, direction)?;
    let out = adv.advect(lp, sample)?;
    Ok(LoopState {
        markers: out.positions,
        h_max: lp.h_max,
        anchor_time: t_to,
    })
}

/// Monte Carlo estimate of a circulation average against a deterministic
/// target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirculationEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√n`; NaN for a single sample.
    pub stderr: f64,
    pub n_samples: usize,
    pub target: f64,
    pub z_score: f64,
}

impl CirculationEstimate {
    /// Reduction in sample-index order.
    pub fn from_samples(target: f64, samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n >= 2 {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        let diff = mean - target;
        let z_score = if diff == 0.0 { 0.0 } else { diff / stderr };
        Self {
            mean,
            stderr,
            n_samples: n,
            target,
            z_score,
        }
    }

    /// `|mean − target| <= k·stderr + rel·|target|`.
    pub fn within_band(&self, k_sigma: f64, rel: f64) -> bool {
        let se = if self.stderr.is_nan() { 0.0 } else { self.stderr };
        (self.mean - self.target).abs() <= k_sigma * se + rel * self.target.abs()
    }

    /// The acceptance band for martingale checks: 3 standard errors plus 1%.
    pub fn passes(&self) -> bool {
        self.within_band(3.0, 0.01)
    }
}

#[derive(Clone, Debug)]
pub struct MartingaleCheck {
    pub estimate: CirculationEstimate,
    /// Per-sample circulations, indexed by sample.
    pub samples: Vec<f64>,
}

fn martingale_run(
    h: &VelocityHistory,
    lp: &LoopState,
    t: f64,
    ens: &EnsembleSpec,
    direction: Direction,
) -> Result<MartingaleCheck> {
    let t_anchor = lp.anchor_time;
    let target = circulation(h.sample_velocity(t_anchor)?.as_vector(), lp);
    let plan = h.sample_velocity(t)?.eval_plan();
    let adv = LoopAdvector::new(h, t_anchor, t, ens, direction)?;
    let samples = (0..ens.n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let out = adv.advect(lp, s)?;
            Ok(circulation_of_polyline(&plan, &out.positions))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MartingaleCheck {
        estimate: CirculationEstimate::from_samples(target, &samples),
        samples,
    })
}

/// Backward-martingale check: circulation on the loop at its anchor time `t'`
/// against the ensemble mean of circulations at `t <= t'` on backward images.
pub fn kelvin_martingale_check(
    h: &VelocityHistory,
    lp: &LoopState,
    t: f64,
    ens: &EnsembleSpec,
) -> Result<MartingaleCheck> {
    martingale_run(h, lp, t, ens, Direction::Backward)
}

/// Forward-martingale check for the time-reversed field
/// `ũ(r, s) = −u(r, t0 + tf − s)`, with the loop anchored at `t' <= t` in
/// reversed time.
pub fn anti_kelvin_check(
    h: &VelocityHistory,
    lp: &LoopState,
    t: f64,
    ens: &EnsembleSpec,
) -> Result<MartingaleCheck> {
    martingale_run(&h.time_reversed(), lp, t, ens, Direction::Forward)
}

fn jacobian_offsets(labels: &[Point]) -> Vec<Point> {
    let e = JACOBIAN_EPS;
    labels
        .iter()
        .flat_map(|a| {
            [
                a + Point::new(e, 0.0),
                a - Point::new(e, 0.0),
                a + Point::new(0.0, e),
                a - Point::new(0.0, e),
            ]
        })
        .collect()
}

fn weber_at(adv: &LoopAdvector, plan: &EvalPlan, labels: &[Point], dw: &[Point]) -> (Vec<Point>, Vec<Tensor>) {
    let x = adv.schedule.advect(labels, dw);
    let off = adv.schedule.advect(&jacobian_offsets(labels), dw);
    let u = plan.evaluate(&x);
    let mut w = Vec::with_capacity(labels.len());
    let mut jac = Vec::with_capacity(labels.len());
    for (i, ui) in u.iter().enumerate() {
        let o = &off[4 * i..4 * i + 4];
        let cx = (o[0] - o[1]) / (2.0 * JACOBIAN_EPS);
        let cy = (o[2] - o[3]) / (2.0 * JACOBIAN_EPS);
        let j = Tensor::from_columns(&[cx, cy]);
        w.push(j.transpose() * ui);
        jac.push(j);
    }
    (w, jac)
}

/// Weber velocity `w = (∇_a x)ᵀ u(x(a, t), t)` at each marker, and the
/// finite-difference Jacobians `∇_a x`.
pub fn weber_velocity(
    h: &VelocityHistory,
    lp: &LoopState,
    t: f64,
    sample: u64,
    ens: &EnsembleSpec,
) -> Result<(Vec<Point>, Vec<Tensor>)> {
    let adv = LoopAdvector::new(h, lp.anchor_time, t, ens, Direction::Backward)?;
    let plan = h.sample_velocity(t)?.eval_plan();
    let dw = adv.increments(sample);
    Ok(weber_at(&adv, &plan, &lp.markers, &dw))
}

fn identity_for(adv: &LoopAdvector, plan: &EvalPlan, lp: &LoopState, sample: u64) -> Result<(f64, f64)> {
    let dw = adv.increments(sample);
    let img = adv.advect_with(lp, sample, &dw)?;
    let rhs = circulation_of_polyline(plan, &img.positions);
    let (w_markers, _) = weber_at(adv, plan, &img.labels, &dw);
    let (w_mids, _) = weber_at(adv, plan, &midpoints(&img.labels), &dw);
    let lhs = simpson_line_integral(&img.labels, &w_markers, &w_mids);
    Ok((lhs, rhs))
}

/// `(∮_C w·da, ∮_{x(C)} u·dr)` for one sample. Both sides use the same
/// refined label set; the left integrates along the original loop, the right
/// along the advected polyline.
pub fn weber_circulation_identity(
    h: &VelocityHistory,
    lp: &LoopState,
    t: f64,
    sample: u64,
    ens: &EnsembleSpec,
) -> Result<(f64, f64)> {
    let adv = LoopAdvector::new(h, lp.anchor_time, t, ens, Direction::Backward)?;
    let plan = h.sample_velocity(t)?.eval_plan();
    identity_for(&adv, &plan, lp, sample)
}

/// [`weber_circulation_identity`] for samples `0..ens.n_samples`, in sample
/// order.
pub fn weber_identities(h: &VelocityHistory, lp: &LoopState, t: f64, ens: &EnsembleSpec) -> Result<Vec<(f64, f64)>> {
    let adv = LoopAdvector::new(h, lp.anchor_time, t, ens, Direction::Backward)?;
    let plan = h.sample_velocity(t)?.eval_plan();
    (0..ens.n_samples as u64)
        .into_par_iter()
        .map(|s| identity_for(&adv, &plan, lp, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ns::{solve, NsParams};
    use crate::spectral::{GridSpec, SpectralField};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::new(16).unwrap()
    }

    fn cell(h_max: f64, anchor: f64) -> LoopState {
        LoopState::square(Point::new(0.0, 0.0), PI, h_max, anchor).unwrap()
    }

    fn frozen(f: &SpectralField, nu: f64, tf: f64) -> VelocityHistory {
        VelocityHistory::frozen(f, NsParams::new(nu, 1e-2, 0.0, tf, 1).unwrap()).unwrap()
    }

    /// Vorticity integral over the square by tensor-product Gauss-Legendre,
    /// the Stokes-theorem side of the circulation.
    fn vorticity_integral_tg(t: f64, nu: f64) -> f64 {
        let nodes = [
            (-0.906_179_845_938_664, 0.236_926_885_056_189),
            (-0.538_469_310_105_683, 0.478_628_670_499_366),
            (0.0, 0.568_888_888_888_889),
            (0.538_469_310_105_683, 0.478_628_670_499_366),
            (0.906_179_845_938_664, 0.236_926_885_056_189),
        ];
        let panels = 16;
        let hw = PI / panels as f64 / 2.0;
        let mut s = 0.0;
        for pi in 0..panels {
            for pj in 0..panels {
                let (cx, cy) = ((2 * pi + 1) as f64 * hw, (2 * pj + 1) as f64 * hw);
                for (xi, wi) in nodes {
                    for (yj, wj) in nodes {
                        let (x, y) = (cx + hw * xi, cy + hw * yj);
                        s += wi * wj * hw * hw * 2.0 * x.sin() * y.sin();
                    }
                }
            }
        }
        s * (-2.0 * nu * t).exp()
    }

    #[test]
    fn loop_construction() {
        let sq = cell(0.1, 1.0);
        assert!(sq.max_spacing() <= 0.1 + 1e-15);
        assert!(sq.len() >= MIN_MARKERS);
        assert_abs_diff_eq!(sq.signed_area(), PI * PI, epsilon = 1e-12);
        let tiny = LoopState::square(Point::new(1.0, 1.0), 0.1, 1.0, 0.0).unwrap();
        assert!(tiny.len() >= MIN_MARKERS);
        let c = LoopState::circle(Point::new(3.0, 3.0), 1.0, 0.05, 0.0).unwrap();
        assert!(c.max_spacing() <= 0.05);
        let bowtie = [Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        assert!(LoopState::polygon(&bowtie, 0.1, 0.0).is_err());
        assert!(LoopState::from_markers(vec![Point::new(0.0, 0.0)], 0.1, 0.0).is_err());
        assert!(LoopState::square(Point::new(0.0, 0.0), 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn constant_field_has_zero_circulation() {
        let f = SpectralField::constant(grid(), Point::new(0.8, -0.3));
        let c = LoopState::circle(Point::new(1.0, 2.0), 0.7, 0.05, 0.0).unwrap();
        assert!(circulation(&f, &c).abs() <= 1e-10);
        assert!(circulation(&f, &cell(0.2, 0.0)).abs() <= 1e-10);
    }

    #[test]
    fn taylor_green_square_matches_stokes_oracle() {
        let oracle = vorticity_integral_tg(0.0, 0.0);
        assert_abs_diff_eq!(oracle, 8.0, epsilon = 1e-9);
        let tg = SpectralField::taylor_green(GridSpec::new(32).unwrap(), 0.0, 0.0);
        let gamma = circulation(&tg, &cell(TAU / 256.0, 0.0));
        assert_abs_diff_eq!(gamma, oracle, epsilon = 1e-6);
        let later = SpectralField::taylor_green(GridSpec::new(32).unwrap(), 0.7, 0.05);
        assert_abs_diff_eq!(
            circulation(&later, &cell(TAU / 256.0, 0.0)),
            vorticity_integral_tg(0.7, 0.05),
            epsilon = 1e-6
        );
    }

    #[test]
    fn orientation_reversal_negates() {
        let f = SpectralField::random_lowmode(grid(), 4, 3, 1.0).unwrap();
        let c = LoopState::circle(Point::new(2.0, 2.0), 1.0, 0.1, 0.0).unwrap();
        assert_eq!(circulation(&f, &c.reversed()), -circulation(&f, &c));
    }

    #[test]
    fn quadrature_converges_second_order_on_curved_loops() {
        let f = SpectralField::random_lowmode(grid(), 6, 3, 1.0).unwrap();
        let g = |h: f64| circulation(&f, &LoopState::circle(Point::new(3.0, 2.0), 1.2, h, 0.0).unwrap());
        let (a, b, c) = (g(0.2), g(0.1), g(0.05));
        let ratio = (a - b) / (b - c);
        assert!((ratio - 4.0).abs() < 0.2, "Richardson ratio {ratio}");
    }

    #[test]
    fn inviscid_constant_flow_translates_loop() {
        let f = SpectralField::constant(grid(), Point::new(0.5, 0.25));
        let h = frozen(&f, 0.0, 1.0);
        let lp = cell(0.2, 1.0);
        let ens = EnsembleSpec::new(1, 0, 1e-2).unwrap();
        let out = advect_loop(&h, &lp, 0.6, 0, &ens, Direction::Backward).unwrap();
        assert_eq!(out.len(), lp.len());
        for (a, b) in lp.markers().iter().zip(out.markers()) {
            assert!((b - a - Point::new(-0.2, -0.1)).amax() < 1e-12);
        }
    }

    #[test]
    fn pure_diffusion_shifts_loop_rigidly() {
        let h = frozen(&SpectralField::zeros(grid()), 0.1, 1.0);
        let lp = cell(0.2, 1.0);
        let ens = EnsembleSpec::new(1, 3, 1e-2).unwrap();
        let out = advect_loop(&h, &lp, 0.0, 5, &ens, Direction::Backward).unwrap();
        let shift = out.markers()[0] - lp.markers()[0];
        assert!(shift.norm() > 1e-3);
        for (a, b) in lp.markers().iter().zip(out.markers()) {
            assert!((b - a - shift).amax() < 1e-12);
        }
    }

    #[test]
    fn steady_euler_kelvin_theorem() {
        let tg = SpectralField::taylor_green(grid(), 0.0, 0.0);
        let h = frozen(&tg, 0.0, 0.5);
        let lp = cell(0.1, 0.5);
        let ens = EnsembleSpec::new(1, 0, 1e-3).unwrap();
        let out = advect_loop(&h, &lp, 0.0, 0, &ens, Direction::Backward).unwrap();
        let (g0, g1) = (circulation(&tg, &lp), circulation(&tg, &out));
        assert!((g1 - g0).abs() <= 1e-4, "drift {}", (g1 - g0).abs());
        assert!(out.max_spacing() <= 0.1);
    }

    #[test]
    fn refinement_respects_the_cap() {
        let f = SpectralField::random_lowmode(grid(), 2, 3, 2.0).unwrap();
        let h = frozen(&f, 0.0, 1.0);
        let lp = LoopState::circle(Point::new(2.0, 2.0), 0.5, 0.05, 1.0).unwrap();
        let ens = EnsembleSpec::new(1, 0, 1e-2).unwrap();
        let adv = LoopAdvector::new(&h, 1.0, 0.0, &ens, Direction::Backward).unwrap().with_cap(lp.len() + 1);
        assert!(matches!(adv.advect(&lp, 0), Err(Error::MarkerCap { .. })));
        let fine = LoopAdvector::new(&h, 1.0, 0.0, &ens, Direction::Backward).unwrap();
        let out = fine.advect(&lp, 0).unwrap();
        assert!(out.labels.len() > lp.len());
        let n = out.positions.len();
        assert!((0..n).all(|i| (out.positions[(i + 1) % n] - out.positions[i]).norm() <= 0.05));
    }

    #[test]
    fn estimate_statistics() {
        let e = CirculationEstimate::from_samples(1.0, &[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(e.mean, 2.5);
        assert_abs_diff_eq!(e.stderr, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(e.z_score, 1.5 / e.stderr, epsilon = 1e-12);
        let one = CirculationEstimate::from_samples(0.0, &[0.5]);
        assert!(one.stderr.is_nan());
        let same = CirculationEstimate::from_samples(2.0, &[2.0, 2.0]);
        assert_eq!((same.stderr, same.z_score), (0.0, 0.0));
        assert!(same.passes());
    }

    #[test]
    fn zero_span_kelvin_is_exact() {
        let g = GridSpec::new(16).unwrap();
        let h = frozen(&SpectralField::taylor_green(g, 0.0, 0.0), 0.05, 1.0);
        let ens = EnsembleSpec::new(8, 1, 1e-2).unwrap();
        let r = kelvin_martingale_check(&h, &cell(0.2, 0.6), 0.6, &ens).unwrap();
        assert!((r.estimate.mean - r.estimate.target).abs() <= 1e-12);
        assert!(r.estimate.stderr <= 1e-12);
    }

    #[test]
    fn inviscid_kelvin_check_is_deterministic() {
        let g = GridSpec::new(16).unwrap();
        let h = solve(&SpectralField::taylor_green(g, 0.0, 0.0), &NsParams::new(0.0, 1e-2, 0.0, 1.0, 1).unwrap()).unwrap();
        let ens = EnsembleSpec::new(16, 1, 1e-3).unwrap();
        let r = kelvin_martingale_check(&h, &cell(0.1, 1.0), 0.5, &ens).unwrap();
        assert!(r.estimate.stderr <= 1e-8);
        assert!((r.estimate.mean - r.estimate.target).abs() <= 1e-4);
    }

    #[test]
    fn weber_velocity_at_final_time_and_for_translations() {
        let g = grid();
        let tg = SpectralField::taylor_green(g, 0.0, 0.0);
        let h = frozen(&tg, 0.05, 1.0);
        let lp = cell(0.3, 1.0);
        let ens = EnsembleSpec::new(1, 0, 1e-2).unwrap();
        let (w, jac) = weber_velocity(&h, &lp, 1.0, 0, &ens).unwrap();
        let u = tg.evaluate_at(lp.markers());
        for ((wi, ui), j) in w.iter().zip(&u).zip(&jac) {
            assert!((wi - ui).amax() < 1e-10);
            assert!((j - Tensor::identity()).amax() < 1e-10);
        }
        let c = SpectralField::constant(g, Point::new(0.4, 0.0));
        let hc = frozen(&c, 0.0, 1.0);
        let (w, jac) = weber_velocity(&hc, &lp, 0.3, 0, &ens).unwrap();
        for (wi, j) in w.iter().zip(&jac) {
            assert!((wi - Point::new(0.4, 0.0)).amax() < 1e-10);
            assert!((j - Tensor::identity()).amax() < 1e-10);
        }
    }

    #[test]
    fn weber_jacobian_is_volume_preserving() {
        let g = grid();
        let p = NsParams::new(0.05, 1e-2, 0.0, 1.0, 1).unwrap();
        let h = solve(&SpectralField::random_lowmode(g, 8, 3, 0.7).unwrap(), &p).unwrap();
        let lp = LoopState::circle(Point::new(2.0, 3.0), 1.0, 0.2, 1.0).unwrap();
        let ens = EnsembleSpec::new(1, 4, 1e-3).unwrap();
        let (_, jac) = weber_velocity(&h, &lp, 0.5, 2, &ens).unwrap();
        for j in jac {
            assert!((j.determinant() - 1.0).abs() <= 1e-3, "det {}", j.determinant());
        }
    }

    #[test]
    fn weber_identity_per_sample() {
        let g = GridSpec::new(32).unwrap();
        let tg = SpectralField::taylor_green(g, 0.0, 0.0);
        let lp = cell(0.1, 1.0);
        let ens = EnsembleSpec::new(1, 7, 1e-3).unwrap();
        let steady = frozen(&tg, 0.0, 1.0);
        let (l, r) = weber_circulation_identity(&steady, &lp, 1.0, 0, &ens).unwrap();
        assert!((l - r).abs() <= 1e-10);
        let (l, r) = weber_circulation_identity(&steady, &lp, 0.75, 0, &ens).unwrap();
        assert!((l - r).abs() <= 1e-3 * r.abs(), "lhs {l} rhs {r}");
        let p = NsParams::new(0.05, 1e-3, 0.0, 1.0, 10).unwrap();
        let ns = VelocityHistory::from_fn(p, |t| SpectralField::taylor_green(g, t, 0.05)).unwrap();
        for s in 0..3 {
            let (l, r) = weber_circulation_identity(&ns, &lp, 0.75, s, &ens).unwrap();
            assert!((l - r).abs() <= 1e-2 * l.abs().max(1.0), "sample {s}: lhs {l} rhs {r}");
        }
    }

    fn tg_history(nu: f64) -> VelocityHistory {
        let g = grid();
        let p = NsParams::new(nu, 1e-2, 0.0, 1.0, 1).unwrap();
        VelocityHistory::from_fn(p, |t| SpectralField::taylor_green(g, t, nu)).unwrap()
    }

    #[test]
    fn taylor_green_backward_martingale() {
        let h = tg_history(0.05);
        let ens = EnsembleSpec::new(4096, 11, 1e-3).unwrap();
        let r = kelvin_martingale_check(&h, &cell(TAU / 16.0, 1.0), 0.5, &ens).unwrap();
        assert_abs_diff_eq!(r.estimate.target, 8.0 * (-0.1f64).exp(), epsilon = 1e-4);
        assert!(r.estimate.passes(), "{:?}", r.estimate);
        assert_eq!(r.samples.len(), 4096);
    }

    #[test]
    fn frozen_field_breaks_the_martingale() {
        let g = grid();
        let h = frozen(&SpectralField::taylor_green(g, 0.0, 0.1), 0.1, 1.0);
        let ens = EnsembleSpec::new(4096, 2, 1e-3).unwrap();
        let r = kelvin_martingale_check(&h, &cell(TAU / 16.0, 1.0), 0.0, &ens).unwrap();
        let e = r.estimate;
        assert!((e.mean - e.target).abs() >= 5.0 * e.stderr, "{e:?}");
        assert!(!e.passes());
    }

    #[test]
    fn anti_kelvin_examples() {
        let h = tg_history(0.05);
        let ens = EnsembleSpec::new(4096, 5, 1e-3).unwrap();
        let r = anti_kelvin_check(&h, &cell(TAU / 16.0, 0.0), 0.5, &ens).unwrap();
        assert_abs_diff_eq!(r.estimate.target, -8.0 * (-0.1f64).exp(), epsilon = 1e-4);
        assert!(r.estimate.passes(), "{:?}", r.estimate);

        let zero = frozen(&SpectralField::zeros(grid()), 0.05, 1.0);
        let z = anti_kelvin_check(&zero, &cell(0.2, 0.0), 0.5, &EnsembleSpec::new(64, 5, 1e-2).unwrap()).unwrap();
        assert_eq!(z.estimate.target, 0.0);
        assert!(z.estimate.mean.abs() <= 3.0 * z.estimate.stderr + 1e-12);

        let g = grid();
        let euler = solve(&SpectralField::taylor_green(g, 0.0, 0.0), &NsParams::new(0.0, 1e-2, 0.0, 1.0, 1).unwrap()).unwrap();
        let d = anti_kelvin_check(&euler, &cell(0.1, 0.2), 0.7, &EnsembleSpec::new(8, 5, 1e-3).unwrap()).unwrap();
        assert!(d.estimate.stderr <= 1e-8);
        assert!((d.estimate.mean - d.estimate.target).abs() <= 1e-4);
    }
}
