//! Fixed-step time integration of `u_t = sigma u + N(u)` with a stiffly
//! accurate fourth-order exponential Runge-Kutta scheme or second-order IMEX
//! backward differences.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::energy::{snapshot_with_residuals, IdentityId, WeightParams};
use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::ledger::{ContaminationWarning, EnergyLedger, LedgerRow};
use crate::spectral::Equation;

/// Default `|z|` below which the phi-functions use their Taylor series.
pub const PHI_TAYLOR_RADIUS: f64 = 0.5;
const TAYLOR_DEGREE: usize = 12;
/// Coefficient magnitude treated as blow-up even while still finite.
const BLOW_UP_LIMIT: f64 = 1e100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorKind {
    Etdrk4,
    ImexBdf2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub sample_every: usize,
    pub integrator: IntegratorKind,
    pub nonlinearity_on: bool,
    pub phi_taylor_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_final: 1.0,
            sample_every: 10,
            integrator: IntegratorKind::Etdrk4,
            nonlinearity_on: true,
            phi_taylor_radius: PHI_TAYLOR_RADIUS,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must satisfy dt > 0 (got {})", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt) {
            return Err(Error::Config(format!(
                "T must satisfy T >= dt (got T = {}, dt = {})",
                self.t_final, self.dt
            )));
        }
        if self.sample_every == 0 {
            return Err(Error::Config("sample_every must satisfy sample_every >= 1".into()));
        }
        if !(self.phi_taylor_radius.is_finite() && self.phi_taylor_radius >= 0.0) {
            return Err(Error::Config("phi_taylor_radius must be finite and >= 0".into()));
        }
        self.steps().map(|_| ())
    }

    /// Number of steps, `T / dt`, which must be an integer.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.t_final / self.dt).round();
        if (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::Config(format!(
                "T must be an integer multiple of dt (got T = {}, dt = {})",
                self.t_final, self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// `(phi1, phi2, phi3)` with the default series radius.
pub fn phi_functions(z: Complex64) -> (Complex64, Complex64, Complex64) {
    phi_functions_with(z, PHI_TAYLOR_RADIUS)
}

pub fn phi_functions_with(z: Complex64, radius: f64) -> (Complex64, Complex64, Complex64) {
    if z.norm() < radius {
        // phi_k(z) = sum_n z^n / (n + k)!
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let k = k + 1;
            let mut fact = (1..=k).map(|v| v as f64).product::<f64>();
            let mut pow = Complex64::new(1.0, 0.0);
            let mut sum = Complex64::new(0.0, 0.0);
            for n in 0..=TAYLOR_DEGREE {
                sum += pow / fact;
                pow *= z;
                fact *= (n + k + 1) as f64;
            }
            *slot = sum;
        }
        return (out[0], out[1], out[2]);
    }
    let e = z.exp();
    let one = Complex64::new(1.0, 0.0);
    let phi1 = (e - one) / z;
    let phi2 = (e - one - z) / (z * z);
    let phi3 = (e - one - z - z * z * 0.5) / (z * z * z);
    (phi1, phi2, phi3)
}

/// Per-mode coefficients of the five-stage ETDRK4 scheme of Hochbruck and
/// Ostermann, which keeps order four for stiff linear parts. Stage weights
/// already include the factor `h`.
struct EtdCoefficients {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    a21: Vec<Complex64>,
    a31: Vec<Complex64>,
    a32: Vec<Complex64>,
    a41: Vec<Complex64>,
    a42: Vec<Complex64>,
    a51: Vec<Complex64>,
    a52: Vec<Complex64>,
    a54: Vec<Complex64>,
    b1: Vec<Complex64>,
    b4: Vec<Complex64>,
    b5: Vec<Complex64>,
}

impl EtdCoefficients {
    fn new(symbol: &[Complex64], h: f64, radius: f64) -> Self {
        let n = symbol.len();
        let v = || Vec::with_capacity(n);
        let mut c = EtdCoefficients {
            e: v(),
            e2: v(),
            a21: v(),
            a31: v(),
            a32: v(),
            a41: v(),
            a42: v(),
            a51: v(),
            a52: v(),
            a54: v(),
            b1: v(),
            b4: v(),
            b5: v(),
        };
        for &s in symbol {
            let z = s * h;
            let (p1, p2, p3) = phi_functions_with(z, radius);
            let (h1, h2, h3) = phi_functions_with(z * 0.5, radius);
            let a52 = (h2 * 0.5 - p3 + p2 * 0.25 - h3 * 0.5) * h;
            let a54 = h2 * (0.25 * h) - a52;
            c.e.push(z.exp());
            c.e2.push((z * 0.5).exp());
            c.a21.push(h1 * (0.5 * h));
            c.a31.push((h1 * 0.5 - h2) * h);
            c.a32.push(h2 * h);
            c.a41.push((p1 - p2 * 2.0) * h);
            c.a42.push(p2 * h);
            c.a51.push(h1 * (0.5 * h) - a52 * 2.0 - a54);
            c.a52.push(a52);
            c.a54.push(a54);
            c.b1.push((p1 - p2 * 3.0 + p3 * 4.0) * h);
            c.b4.push((p3 * 4.0 - p2) * h);
            c.b5.push((p2 * 4.0 - p3 * 8.0) * h);
        }
        c
    }
}

/// External forcing `F(t)` added to the right-hand side.
pub type Forcing<'a> = dyn Fn(f64) -> Result<SpectralField> + Sync + 'a;

/// Fixed-step propagator. IMEX-BDF2 keeps one step of history.
pub struct Stepper<'a> {
    eq: &'a Equation,
    config: SimConfig,
    forcing: Option<&'a Forcing<'a>>,
    etd: Option<EtdCoefficients>,
    history: Option<(SpectralField, SpectralField)>,
}

impl<'a> Stepper<'a> {
    pub fn new(eq: &'a Equation, config: SimConfig) -> Result<Self> {
        config.validate()?;
        let etd = match config.integrator {
            IntegratorKind::Etdrk4 => Some(EtdCoefficients::new(eq.symbol(), config.dt, config.phi_taylor_radius)),
            IntegratorKind::ImexBdf2 => None,
        };
        Ok(Stepper {
            eq,
            config,
            forcing: None,
            etd,
            history: None,
        })
    }

    pub fn with_forcing(mut self, forcing: &'a Forcing<'a>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    /// Nonlinear term plus forcing at time `t`.
    pub fn explicit_part(&self, u: &SpectralField, t: f64) -> Result<SpectralField> {
        let mut n = if self.config.nonlinearity_on {
            self.eq.nonlinear_rhs(u)?
        } else {
            SpectralField::zeros(*u.geometry())
        };
        if let Some(f) = self.forcing {
            let f = f(t)?;
            for (a, b) in n.coeffs_mut().iter_mut().zip(f.coeffs()) {
                *a += b;
            }
        }
        Ok(n.with_time(t))
    }

    /// Advances `u` by one step given `nu = explicit_part(u)`.
    pub fn advance(&mut self, u: &SpectralField, nu: &SpectralField) -> Result<SpectralField> {
        let h = self.config.dt;
        let t = u.time();
        let out = match &self.etd {
            Some(c) => {
                // scale * u + sum of coef * N
                let combine = |scale: &[Complex64], terms: &[(&[Complex64], &SpectralField)]| {
                    let mut out = u.clone();
                    for (i, o) in out.coeffs_mut().iter_mut().enumerate() {
                        let mut v = scale[i] * *o;
                        for (coef, f) in terms {
                            v += coef[i] * f.coeffs()[i];
                        }
                        *o = v;
                    }
                    out
                };
                let half = t + 0.5 * h;
                let u2 = combine(&c.e2, &[(&c.a21, nu)]).with_time(half);
                let n2 = self.explicit_part(&u2, half)?;
                let u3 = combine(&c.e2, &[(&c.a31, nu), (&c.a32, &n2)]).with_time(half);
                let n3 = self.explicit_part(&u3, half)?;
                let u4 = combine(&c.e, &[(&c.a41, nu), (&c.a42, &n2), (&c.a42, &n3)]).with_time(t + h);
                let n4 = self.explicit_part(&u4, t + h)?;
                let u5 = combine(&c.e2, &[(&c.a51, nu), (&c.a52, &n2), (&c.a52, &n3), (&c.a54, &n4)]).with_time(half);
                let n5 = self.explicit_part(&u5, half)?;
                combine(&c.e, &[(&c.b1, nu), (&c.b4, &n4), (&c.b5, &n5)])
            }
            None => {
                let sym = self.eq.symbol();
                let mut out = u.clone();
                match &self.history {
                    None => {
                        for (i, o) in out.coeffs_mut().iter_mut().enumerate() {
                            *o = (*o + nu.coeffs()[i] * h) / (Complex64::new(1.0, 0.0) - sym[i] * h);
                        }
                    }
                    Some((prev, nprev)) => {
                        for (i, o) in out.coeffs_mut().iter_mut().enumerate() {
                            let explicit = nu.coeffs()[i] * 2.0 - nprev.coeffs()[i];
                            let num = *o * 4.0 - prev.coeffs()[i] + explicit * (2.0 * h);
                            *o = num / (Complex64::new(3.0, 0.0) - sym[i] * (2.0 * h));
                        }
                    }
                }
                self.history = Some((u.clone(), nu.clone()));
                out
            }
        };
        Ok(out.with_time(t + h))
    }
}

/// One step from `u`.
pub fn step(eq: &Equation, u: &SpectralField, config: &SimConfig) -> Result<SpectralField> {
    let mut stepper = Stepper::new(eq, *config)?;
    let nu = stepper.explicit_part(u, u.time())?;
    let next = stepper.advance(u, &nu)?;
    if !next.is_finite() {
        return Err(Error::BlowUp {
            time: next.time(),
            ledger: Box::default(),
        });
    }
    Ok(next)
}

/// Hook invoked at every sampling instant.
pub trait Observer {
    fn observe(&mut self, eq: &Equation, u: &SpectralField) -> Result<()>;
}

/// Keeps a copy of every sampled state.
#[derive(Clone, Debug, Default)]
pub struct StateRecorder {
    pub states: Vec<SpectralField>,
}

impl Observer for StateRecorder {
    fn observe(&mut self, _: &Equation, u: &SpectralField) -> Result<()> {
        self.states.push(u.clone());
        Ok(())
    }
}

/// What the built-in ledger records at each sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedgerSettings {
    pub weight: WeightParams,
    /// Decay rate used for `env_ratio`.
    pub chi: f64,
    /// Evaluate the weighted identity residuals at every sample.
    pub residuals: bool,
}

/// Runs to `T`, sampling every `sample_every` steps and at the final step.
pub fn integrate(
    eq: &Equation,
    u0: &SpectralField,
    config: &SimConfig,
    settings: &LedgerSettings,
    observers: &mut [&mut dyn Observer],
) -> Result<EnergyLedger> {
    integrate_forced(eq, u0, config, settings, None, observers)
}

pub fn integrate_forced(
    eq: &Equation,
    u0: &SpectralField,
    config: &SimConfig,
    settings: &LedgerSettings,
    forcing: Option<&Forcing<'_>>,
    observers: &mut [&mut dyn Observer],
) -> Result<EnergyLedger> {
    let steps = config.steps()?;
    config.validate()?;
    let mut stepper = Stepper::new(eq, *config)?;
    if let Some(f) = forcing {
        stepper = stepper.with_forcing(f);
    }
    let t0 = u0.time();
    let h = config.dt;
    let mut ledger = EnergyLedger::default();
    let mut u = u0.clone();
    let mut nu = stepper.explicit_part(&u, t0)?;
    let mut w0 = 0.0;
    let mut cum = 0.0;
    let (mut f, mut fp) = dissipation_rate(eq, &u, &nu);

    let mut record =
        |ledger: &mut EnergyLedger, u: &SpectralField, cum: f64, w0: &mut f64, first: bool| -> Result<()> {
            let ids: &[IdentityId] = if settings.residuals {
                &[IdentityId::E2, IdentityId::E3, IdentityId::E4, IdentityId::Elev]
            } else {
                &[]
            };
            let (mut snap, res) = snapshot_with_residuals(eq, u, settings.weight, ids)?;
            snap.cum_ux = cum;
            if first {
                *w0 = snap.w_u;
            }
            let rel = |i: usize| res.get(i).map(|r| r.relative()).unwrap_or(f64::NAN);
            let env_ratio = if *w0 > 0.0 {
                snap.w_u / ((-settings.chi * (u.time() - t0)).exp() * *w0)
            } else {
                0.0
            };
            if snap.is_contaminated() {
                ledger.warnings.push(ContaminationWarning {
                    t: u.time(),
                    ratio: snap.contamination_ratio(),
                });
            }
            ledger.rows.push(LedgerRow {
                snapshot: snap,
                res_e2: rel(0),
                res_e3: rel(1),
                res_e4: rel(2),
                res_elev: rel(3),
                env_ratio,
            });
            for o in observers.iter_mut() {
                o.observe(eq, u)?;
            }
            Ok(())
        };

    record(&mut ledger, &u, cum, &mut w0, true)?;
    for i in 1..=steps {
        let next = stepper.advance(&u, &nu)?.with_time(t0 + h * i as f64);
        if !next.is_finite() || next.max_abs() > BLOW_UP_LIMIT {
            ledger.failed = true;
            ledger.final_state = Some(u);
            return Err(Error::BlowUp {
                time: next.time(),
                ledger: Box::new(ledger),
            });
        }
        u = next;
        nu = stepper.explicit_part(&u, u.time())?;
        let (g, gp) = dissipation_rate(eq, &u, &nu);
        // end-corrected trapezoid, fourth order for smooth integrands
        cum += 0.5 * h * (f + g) - h * h / 12.0 * (gp - fp);
        f = g;
        fp = gp;
        if i % config.sample_every == 0 || i == steps {
            record(&mut ledger, &u, cum, &mut w0, false)?;
        }
    }
    ledger.final_state = Some(u);
    Ok(ledger)
}

/// `||u_x||^2` and its time derivative `2 (u_x, u_xt)` given the explicit part.
fn dissipation_rate(eq: &Equation, u: &SpectralField, nu: &SpectralField) -> (f64, f64) {
    let g = eq.geometry();
    let sym = eq.symbol();
    let mut f = 0.0;
    let mut fp = 0.0;
    for j in 1..=g.ny {
        for n in 0..g.nx {
            let idx = (j - 1) * g.nx + n;
            let k2 = g.wavenumber(n).powi(2);
            if k2 == 0.0 {
                continue;
            }
            let c = u.coeffs()[idx];
            let ut = sym[idx] * c + nu.coeffs()[idx];
            f += k2 * c.norm_sqr();
            fp += k2 * (c.conj() * ut).re;
        }
    }
    let two_l = 2.0 * g.half_length;
    (two_l * f, 2.0 * two_l * fp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::StripGeometry;
    use crate::spectral::RhsOptions;
    use std::f64::consts::PI;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol * b.norm().max(1e-300)
    }

    #[test]
    fn phi_values() {
        let (p1, p2, p3) = phi_functions(Complex64::new(0.0, 0.0));
        assert_eq!(p1, Complex64::new(1.0, 0.0));
        assert_eq!(p2, Complex64::new(0.5, 0.0));
        assert!((p3.re - 1.0 / 6.0).abs() < 1e-16);
        let (p1, _, _) = phi_functions(Complex64::new(1.0, 0.0));
        assert!((p1.re - 1.718_281_828_459_045).abs() < 1e-14);
        let (p1, _, _) = phi_functions(Complex64::new(-10.0, 0.0));
        assert!((p1.re - 0.099_995_460_007_023_75).abs() < 1e-15);
    }

    #[test]
    fn phi_branches_agree_on_switch_circle() {
        for k in 0..16 {
            let theta = 2.0 * PI * k as f64 / 16.0;
            let z = Complex64::from_polar(0.5, theta);
            let s = phi_functions_with(z, 1.0);
            let d = phi_functions_with(z, 0.0);
            assert!(close(s.0, d.0, 1e-14));
            assert!(close(s.1, d.1, 1e-14));
            assert!(close(s.2, d.2, 2e-13));
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.steps().unwrap(), 1000);
        c.t_final = 1.0005;
        assert!(c.validate().is_err());
        c.t_final = 1e-4;
        assert!(c.validate().is_err());
        let c = SimConfig {
            sample_every: 0,
            ..SimConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn exact_linear_propagation() {
        let g = StripGeometry::new(PI, 10.0, 32, 5, 0.1).unwrap();
        let eq = Equation::with_options(
            g,
            RhsOptions {
                nonlinear: false,
                ..RhsOptions::default()
            },
        )
        .unwrap();
        let mut u = SpectralField::zeros(g);
        u.add_real_mode(3, 2, Complex64::new(0.4, 0.1));
        let config = SimConfig {
            dt: 0.01,
            t_final: 0.5,
            nonlinearity_on: false,
            ..SimConfig::default()
        };
        let one = step(&eq, &u, &config).unwrap();
        let n = g.slot(3);
        let sigma = eq.symbol()[g.nx + n];
        let expect = u.get(n, 2) * (sigma * 0.01).exp();
        assert!(close(one.get(n, 2), expect, 1e-13));
        assert!((one.time() - 0.01).abs() < 1e-15);
        let settings = LedgerSettings {
            weight: WeightParams::new(0.1).unwrap(),
            chi: 0.025,
            residuals: false,
        };
        let ledger = integrate(&eq, &u, &config, &settings, &mut []).unwrap();
        let fin = ledger.final_state.unwrap();
        let expect = u.get(n, 2) * (sigma * 0.5).exp();
        assert!((fin.get(n, 2) - expect).norm() < 1e-10 * u.get(n, 2).norm());
    }

    #[test]
    fn zero_data_and_bookkeeping() {
        let g = StripGeometry::new(PI, 10.0, 32, 4, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let z = SpectralField::zeros(g);
        let config = SimConfig {
            dt: 0.01,
            t_final: 0.01,
            sample_every: 1,
            ..SimConfig::default()
        };
        assert_eq!(step(&eq, &z, &config).unwrap().max_abs(), 0.0);
        let settings = LedgerSettings {
            weight: WeightParams::new(0.1).unwrap(),
            chi: 0.025,
            residuals: true,
        };
        let ledger = integrate(&eq, &z, &config, &settings, &mut []).unwrap();
        assert_eq!(ledger.rows.len(), 2);
        assert!(ledger.rows.iter().all(|r| r.record()[1..].iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sample_count_includes_final_step() {
        let g = StripGeometry::new(PI, 10.0, 32, 4, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let z = SpectralField::zeros(g);
        let config = SimConfig {
            dt: 0.1,
            t_final: 1.0,
            sample_every: 3,
            ..SimConfig::default()
        };
        let settings = LedgerSettings {
            weight: WeightParams::new(0.1).unwrap(),
            chi: 0.0,
            residuals: false,
        };
        let mut rec = StateRecorder::default();
        let ledger = integrate(&eq, &z, &config, &settings, &mut [&mut rec]).unwrap();
        let times: Vec<f64> = ledger.rows.iter().map(|r| r.snapshot.t).collect();
        assert_eq!(times.len(), 5);
        assert!((times[4] - 1.0).abs() < 1e-15);
        assert_eq!(rec.states.len(), 5);
    }
}
