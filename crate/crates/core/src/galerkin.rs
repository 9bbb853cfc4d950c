//! Galerkin truncation in y, convergence in the number of sine modes and
//! manufactured solutions for temporal order.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{snapshot, WeightParams};
use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::integrator::{integrate, integrate_forced, LedgerSettings, SimConfig};
use crate::spectral::{Equation, RhsOptions};

/// Zeroes every sine mode `j > modes`.
pub fn truncate_modes(u0: &SpectralField, modes: usize) -> Result<SpectralField> {
    let ny = u0.geometry().ny;
    if modes == 0 || modes > ny {
        return Err(Error::Parameter(format!(
            "mode count must satisfy 1 <= N <= Ny = {ny} (got {modes})"
        )));
    }
    Ok(u0.truncated(modes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub ns: Vec<usize>,
    /// Weighted `L^2` distance between terminal states of consecutive `N`,
    /// relative to the finer one.
    pub errors: Vec<f64>,
    /// `-ln(e_{i+1} / e_i) / (N_{i+2} - N_{i+1})`, reported above the floor.
    pub rates: Vec<f64>,
    /// Terminal weighted energy in the upper half of the active modes.
    pub tails: Vec<f64>,
    /// Temporal orders at the largest `N` from `dt, dt/2, dt/4`.
    pub dt_orders: Vec<f64>,
}

/// Relative error below which convergence rates are not reported.
pub const CONVERGENCE_FLOOR: f64 = 1e-13;

fn weighted_norm(eq: &Equation, u: &SpectralField, weight: WeightParams) -> Result<f64> {
    Ok(snapshot(eq, u, weight)?.w_u.max(0.0).sqrt())
}

fn run_terminal(eq: &Equation, u0: &SpectralField, config: &SimConfig, weight: WeightParams) -> Result<SpectralField> {
    let settings = LedgerSettings {
        weight,
        chi: 0.0,
        residuals: false,
    };
    let ledger = integrate(eq, u0, config, &settings, &mut [])?;
    Ok(ledger.final_state.expect("completed run"))
}

/// Runs the `N`-mode Galerkin system for each `N` in `ns` (increasing,
/// at most `Ny`) from the projected data.
pub fn convergence_study(
    eq: &Equation,
    u0: &SpectralField,
    config: &SimConfig,
    ns: &[usize],
    weight: WeightParams,
    temporal: bool,
) -> Result<ConvergenceReport> {
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("mode counts must be non-empty and increasing".into()));
    }
    let ny = eq.geometry().ny;
    let base = *eq.options();
    let terminals: Vec<Result<SpectralField>> = ns
        .par_iter()
        .map(|&n| {
            let start = truncate_modes(u0, n)?;
            let opts = RhsOptions {
                active_modes: if n == ny { None } else { Some(n) },
                ..base
            };
            let sub = eq.with_rhs_options(opts)?;
            run_terminal(&sub, &start, config, weight)
        })
        .collect();
    let terminals = terminals.into_iter().collect::<Result<Vec<_>>>()?;

    let mut errors = Vec::new();
    for w in terminals.windows(2) {
        let diff = weighted_norm(eq, &w[1].sub(&w[0])?, weight)?;
        let scale = weighted_norm(eq, &w[1], weight)?;
        errors.push(if scale > 0.0 { diff / scale } else { diff });
    }
    let mut rates = Vec::new();
    for i in 1..errors.len() {
        if errors[i] > CONVERGENCE_FLOOR && errors[i - 1] > CONVERGENCE_FLOOR {
            rates.push(-(errors[i] / errors[i - 1]).ln() / (ns[i + 1] - ns[i]) as f64);
        }
    }
    let mut tails = Vec::new();
    for (u, &n) in terminals.iter().zip(ns) {
        let energies = u.mode_energies();
        tails.push(energies[n / 2..n].iter().sum());
    }
    let dt_orders = if temporal {
        let n = *ns.last().expect("non-empty");
        let opts = RhsOptions {
            active_modes: if n == ny { None } else { Some(n) },
            ..base
        };
        let sub = eq.with_rhs_options(opts)?;
        let start = truncate_modes(u0, n)?;
        let levels: Vec<Result<SpectralField>> = [1.0, 0.5, 0.25]
            .par_iter()
            .map(|f| {
                let c = SimConfig {
                    dt: config.dt * f,
                    sample_every: usize::MAX / 4,
                    ..*config
                };
                run_terminal(&sub, &start, &c, weight)
            })
            .collect();
        let levels = levels.into_iter().collect::<Result<Vec<_>>>()?;
        let d1 = levels[0].sub(&levels[1])?.l2_norm_sq().sqrt();
        let d2 = levels[1].sub(&levels[2])?.l2_norm_sq().sqrt();
        if d1 > 0.0 && d2 > 0.0 {
            vec![(d1 / d2).log2()]
        } else {
            Vec::new()
        }
    } else {
        Vec::new()
    };
    Ok(ConvergenceReport {
        ns: ns.to_vec(),
        errors,
        rates,
        tails,
        dt_orders,
    })
}

/// Closed-form space-time function vanishing on both walls.
pub trait ManufacturedTarget: Sync {
    fn value(&self, x: f64, y: f64, t: f64) -> f64;
    fn time_derivative(&self, x: f64, y: f64, t: f64) -> f64;
}

/// `e^{-x^2} sin(pi y / B) e^{-t}`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayingGaussianSine {
    pub width: f64,
}

impl ManufacturedTarget for DecayingGaussianSine {
    fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        (-x * x - t).exp() * (PI * y / self.width).sin()
    }

    fn time_derivative(&self, x: f64, y: f64, t: f64) -> f64 {
        -self.value(x, y, t)
    }
}

/// `e^{-(x - c t)^2} sin(pi y / B)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TravelingPulse {
    pub width: f64,
    pub speed: f64,
}

impl ManufacturedTarget for TravelingPulse {
    fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        let s = x - self.speed * t;
        (-s * s).exp() * (PI * y / self.width).sin()
    }

    fn time_derivative(&self, x: f64, y: f64, t: f64) -> f64 {
        let s = x - self.speed * t;
        2.0 * self.speed * s * (-s * s).exp() * (PI * y / self.width).sin()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZeroTarget;

impl ManufacturedTarget for ZeroTarget {
    fn value(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }

    fn time_derivative(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedReport {
    pub dts: Vec<f64>,
    /// Terminal `L^2` error against the projected target at each `dt`.
    pub errors: Vec<f64>,
    /// Orders from the two consecutive error ratios.
    pub orders: Vec<f64>,
    /// Order from the finest pair; `None` when the errors vanish.
    pub observed_order: Option<f64>,
    /// False when the two orders differ by more than 0.5.
    pub accepted: bool,
}

/// Largest disagreement between the two Richardson orders.
pub const ORDER_AGREEMENT: f64 = 0.5;

/// Integrates `u_t = sigma u + N(u) + F` with `F` chosen so the projected
/// target is the exact discrete solution, at `dt`, `dt/2`, `dt/4`.
pub fn manufactured_run(
    eq: &Equation,
    config: &SimConfig,
    target: &dyn ManufacturedTarget,
    weight: WeightParams,
) -> Result<ManufacturedReport> {
    let basis = eq.basis();
    let project = |t: f64| basis.project(|x, y| target.value(x, y, t)).map(|u| u.with_time(t));
    let forcing = |t: f64| -> Result<SpectralField> {
        let s = project(t)?;
        let st = basis.project(|x, y| target.time_derivative(x, y, t))?;
        let mut f = st.sub(&eq.linear_rhs(&s))?;
        if config.nonlinearity_on {
            f = f.sub(&eq.nonlinear_rhs(&s)?)?;
        }
        Ok(f.with_time(t))
    };
    let u0 = project(0.0)?;
    let t_end = u0.time() + config.t_final;
    let exact = project(t_end)?;
    let settings = LedgerSettings {
        weight,
        chi: 0.0,
        residuals: false,
    };
    let dts = vec![config.dt, config.dt / 2.0, config.dt / 4.0];
    let errors = dts
        .par_iter()
        .map(|&dt| {
            let c = SimConfig {
                dt,
                sample_every: usize::MAX / 4,
                ..*config
            };
            let ledger = integrate_forced(eq, &u0, &c, &settings, Some(&forcing), &mut [])?;
            let fin = ledger.final_state.expect("completed run");
            Ok(fin.sub(&exact)?.l2_norm_sq().sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let orders: Vec<f64> = errors
        .windows(2)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| (w[0] / w[1]).log2())
        .collect();
    let observed_order = if orders.len() == 2 { Some(orders[1]) } else { None };
    let accepted = match orders.as_slice() {
        [a, b] => (a - b).abs() <= ORDER_AGREEMENT,
        _ => errors.iter().all(|&e| e == 0.0),
    };
    Ok(ManufacturedReport {
        dts,
        errors,
        orders,
        observed_order,
        accepted,
    })
}
