//! Backward and forward stochastic Lagrangian flows.
//!
//! Backward flows solve `x(s − Δ) = x(s) − u(x(s), s) Δ + √(2νΔ) ξ` from the
//! anchoring time down to the target time; forward flows use
//! `x(s + Δ) = x(s) + u(x(s), s) Δ + √(2νΔ) ξ`. In both cases the drift is taken
//! at the step's starting time, and every label in a call shares one Brownian
//! path per sample. The noise is additive, so Itô and Stratonovich forms agree
//! and plain Euler-Maruyama is strong order one.

use crate::error::{Error, Result};
use crate::noise::brownian_path;
use crate::ns::VelocityHistory;
use crate::spectral::{wrap_point, EvalPlan, Point};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_samples: usize,
    pub base_seed: u64,
    pub sde_dt: f64,
}

impl EnsembleSpec {
    pub fn new(n_samples: usize, base_seed: u64, sde_dt: f64) -> Result<Self> {
        let e = Self {
            n_samples,
            base_seed,
            sde_dt,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter {
                name: "n_samples",
                reason: "must be >= 1".into(),
            });
        }
        if !(self.sde_dt > 0.0 && self.sde_dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sde_dt",
                reason: "must be finite and > 0".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Backward,
    Forward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Backward => -1.0,
            Direction::Forward => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
struct Step {
    /// Length of the step (positive).
    dt: f64,
    plan: EvalPlan,
}

/// Drift fields along the time grid of one integration span, shared by all
/// samples of an ensemble.
#[derive(Clone, Debug)]
pub struct DriftSchedule {
    direction: Direction,
    t_from: f64,
    t_to: f64,
    nu: f64,
    steps: Vec<Step>,
}

impl DriftSchedule {
    /// Time grid from `t_from` toward `t_to` in steps of `sde_dt`, the last one
    /// possibly partial. Zero span yields the identity flow.
    pub fn new(h: &VelocityHistory, t_from: f64, t_to: f64, sde_dt: f64, direction: Direction) -> Result<Self> {
        if !(sde_dt > 0.0 && sde_dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sde_dt",
                reason: "must be finite and > 0".into(),
            });
        }
        let (lo, hi) = (h.t0(), h.tf());
        for t in [t_from, t_to] {
            if !(t >= lo && t <= hi) {
                return Err(Error::TimeOutOfRange { t, lo, hi });
            }
        }
        let ordered = match direction {
            Direction::Backward => t_to <= t_from,
            Direction::Forward => t_to >= t_from,
        };
        if !ordered {
            let (lo, hi) = match direction {
                Direction::Backward => (lo, t_from),
                Direction::Forward => (t_from, hi),
            };
            return Err(Error::TimeOutOfRange { t: t_to, lo, hi });
        }
        let span = (t_to - t_from).abs();
        let n_steps = if span == 0.0 {
            0
        } else {
            ((span / sde_dt) - 1e-9).ceil().max(1.0) as usize
        };
        let sign = direction.sign();
        let half_cell = 0.5 * h.grid().spacing();
        let mut steps = Vec::with_capacity(n_steps);
        let mut warned = false;
        for k in 0..n_steps {
            let start = t_from + sign * k as f64 * sde_dt;
            let end = if k + 1 == n_steps {
                t_to
            } else {
                t_from + sign * (k + 1) as f64 * sde_dt
            };
            let plan = h.sample_velocity(start)?.eval_plan();
            let dt = (end - start).abs();
            if !warned && plan.speed_bound() * dt > half_cell {
                log::warn!(
                    "drift step exceeds half a grid cell at t={start}: max|u|*dt <= {:.3e} > {:.3e}",
                    plan.speed_bound() * dt,
                    half_cell
                );
                warned = true;
            }
            steps.push(Step { dt, plan });
        }
        Ok(Self {
            direction,
            t_from,
            t_to,
            nu: h.nu(),
            steps,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn t_from(&self) -> f64 {
        self.t_from
    }

    pub fn t_to(&self) -> f64 {
        self.t_to
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Brownian increments `ΔW_k = √Δ_k ξ_k` of one sample.
    pub fn brownian_increments(&self, base_seed: u64, sample: u64) -> Vec<Point> {
        if self.nu == 0.0 {
            return vec![Point::zeros(); self.steps.len()];
        }
        brownian_path(base_seed, sample, self.steps.len())
            .into_iter()
            .zip(&self.steps)
            .map(|(xi, s)| xi * s.dt.sqrt())
            .collect()
    }

    /// Advances `labels` through the whole schedule under the given Brownian
    /// increments. Positions are not wrapped.
    pub fn advect(&self, labels: &[Point], dw: &[Point]) -> Vec<Point> {
        assert_eq!(dw.len(), self.steps.len(), "one Brownian increment per step");
        let sign = self.direction.sign();
        let amp = (2.0 * self.nu).sqrt();
        let mut x = labels.to_vec();
        let mut vel = Vec::with_capacity(x.len());
        for (step, w) in self.steps.iter().zip(dw) {
            step.plan.evaluate_into(&x, &mut vel);
            let kick = w * amp;
            for (p, u) in x.iter_mut().zip(&vel) {
                *p += u * (sign * step.dt) + kick;
            }
        }
        x
    }

    fn advect_sample(&self, labels: &[Point], base_seed: u64, sample: u64) -> Vec<Point> {
        let dw = self.brownian_increments(base_seed, sample);
        self.advect(labels, &dw)
    }
}

/// Final tracer positions for every sample of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowEnsemble {
    pub labels: Vec<Point>,
    pub t_start: f64,
    pub t_end: f64,
    /// `positions[sample][label]`, wrapped into `[0, 2π)²`.
    pub positions: Vec<Vec<Point>>,
    pub nu: f64,
}

fn run_ensemble(schedule: &DriftSchedule, labels: &[Point], ens: &EnsembleSpec) -> Result<FlowEnsemble> {
    ens.validate()?;
    let positions = (0..ens.n_samples as u64)
        .into_par_iter()
        .map(|s| {
            schedule
                .advect_sample(labels, ens.base_seed, s)
                .iter()
                .map(wrap_point)
                .collect()
        })
        .collect();
    Ok(FlowEnsemble {
        labels: labels.to_vec(),
        t_start: schedule.t_from,
        t_end: schedule.t_to,
        positions,
        nu: schedule.nu,
    })
}

/// Backward flow from labels anchored at `t_from` down to `t <= t_from`.
pub fn backward_flow(
    h: &VelocityHistory,
    labels: &[Point],
    t_from: f64,
    t: f64,
    ens: &EnsembleSpec,
) -> Result<FlowEnsemble> {
    let schedule = DriftSchedule::new(h, t_from, t, ens.sde_dt, Direction::Backward)?;
    run_ensemble(&schedule, labels, ens)
}

/// Forward flow from labels anchored at `t_from` up to `t >= t_from`.
pub fn forward_flow(
    h: &VelocityHistory,
    labels: &[Point],
    t_from: f64,
    t: f64,
    ens: &EnsembleSpec,
) -> Result<FlowEnsemble> {
    let schedule = DriftSchedule::new(h, t_from, t, ens.sde_dt, Direction::Forward)?;
    run_ensemble(&schedule, labels, ens)
}
