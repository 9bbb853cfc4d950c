//! The equation in coefficient space: linear symbol, derivatives and the
//! dealiased quadratic term.
//!
//! The quadratic term is formed pointwise in x (after a 2/3-rule cutoff)
//! and projected exactly onto the sine modes in y: at each x node the
//! product of two sine series is expanded as a cosine series and integrated
//! against every retained `w_l` in closed form.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::field::{Grid, PhysicalField, SpectralField};
use crate::geometry::StripGeometry;

/// Highest total derivative order exposed by [`Equation::derivative`].
pub const MAX_DERIVATIVE_ORDER: usize = 5;

/// Fourier image of `u_xx - u_xxx - u_xyy + d_x^5 u` on `exp(ikx) w_j`:
/// `-k^2 + i (k^3 + lambda k + k^5)`.
pub fn linear_symbol(k: f64, lambda: f64) -> Complex64 {
    let k2 = k * k;
    Complex64::new(-k2, k2 * k + lambda * k + k2 * k2 * k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearForm {
    /// `-1/2 (u^2)_x`
    Divergence,
    /// `-u u_x`
    Convective,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhsOptions {
    pub nonlinear: bool,
    pub form: NonlinearForm,
    pub dealias: bool,
    /// Galerkin truncation: only sine modes `1..=N` enter and receive the
    /// quadratic term.
    pub active_modes: Option<usize>,
}

impl Default for RhsOptions {
    fn default() -> Self {
        RhsOptions {
            nonlinear: true,
            form: NonlinearForm::Divergence,
            dealias: true,
            active_modes: None,
        }
    }
}

#[derive(Debug)]
pub struct Equation {
    basis: Arc<Basis>,
    options: RhsOptions,
    /// Linear symbol in coefficient layout.
    symbol: Vec<Complex64>,
    /// `(2/B)^{3/2} (B/pi) 2l / (l^2 - n^2)` for `l + n` odd, `table[(l-1) * (2ny+1) + n]`.
    projection: Vec<f64>,
}

impl Equation {
    pub fn new(geometry: StripGeometry) -> Result<Self> {
        Self::with_options(geometry, RhsOptions::default())
    }

    pub fn with_options(geometry: StripGeometry, options: RhsOptions) -> Result<Self> {
        Self::from_basis(Arc::new(Basis::new(geometry)?), options)
    }

    pub fn from_basis(basis: Arc<Basis>, options: RhsOptions) -> Result<Self> {
        let g = *basis.geometry();
        if let Some(n) = options.active_modes {
            if n == 0 || n > g.ny {
                return Err(Error::Parameter(format!(
                    "active mode count must satisfy 1 <= N <= Ny = {} (got {n})",
                    g.ny
                )));
            }
        }
        let mut symbol = Vec::with_capacity(g.nx * g.ny);
        for j in 1..=g.ny {
            let lambda = g.lambda(j);
            for n in 0..g.nx {
                let s = linear_symbol(g.wavenumber(n), lambda);
                // the Nyquist line is a cosine: odd derivatives vanish
                symbol.push(if 2 * n == g.nx { Complex64::new(s.re, 0.0) } else { s });
            }
        }
        let width = 2 * g.ny + 1;
        let c3 = (2.0 / g.width).powf(1.5) * g.width / PI;
        let mut projection = vec![0.0; g.ny * width];
        for l in 1..=g.ny {
            for n in 0..width {
                if (l + n) % 2 == 1 {
                    let (lf, nf) = (l as f64, n as f64);
                    projection[(l - 1) * width + n] = c3 * 2.0 * lf / (lf * lf - nf * nf);
                }
            }
        }
        Ok(Equation {
            basis,
            options,
            symbol,
            projection,
        })
    }

    /// Same basis, different right-hand-side options.
    pub fn with_rhs_options(&self, options: RhsOptions) -> Result<Self> {
        Self::from_basis(self.basis.clone(), options)
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn shared_basis(&self) -> Arc<Basis> {
        self.basis.clone()
    }

    pub fn geometry(&self) -> &StripGeometry {
        self.basis.geometry()
    }

    pub fn options(&self) -> &RhsOptions {
        &self.options
    }

    /// Linear symbol in coefficient layout (`(j-1) * nx + n`).
    pub fn symbol(&self) -> &[Complex64] {
        &self.symbol
    }

    fn check_order(mx: usize, my: usize) -> Result<()> {
        if mx + my > MAX_DERIVATIVE_ORDER {
            return Err(Error::Capability(format!(
                "derivative order mx + my = {} exceeds {}",
                mx + my,
                MAX_DERIVATIVE_ORDER
            )));
        }
        Ok(())
    }

    /// Samples of `d^mx/dx^mx d^my/dy^my u` on the standard grid.
    pub fn derivative(&self, u: &SpectralField, mx: usize, my: usize) -> Result<PhysicalField> {
        self.derivative_on(u, mx, my, self.basis.grid())
    }

    pub fn derivative_on(&self, u: &SpectralField, mx: usize, my: usize, grid: Grid) -> Result<PhysicalField> {
        Self::check_order(mx, my)?;
        self.basis.check_hermitian(u)?;
        Ok(self.basis.synthesize(u, mx, my, grid)?.0)
    }

    /// `sigma * u`.
    pub fn linear_rhs(&self, u: &SpectralField) -> SpectralField {
        let mut out = u.clone();
        for (c, s) in out.coeffs_mut().iter_mut().zip(&self.symbol) {
            *c *= s;
        }
        out
    }

    /// Coefficients of the quadratic term, dealias-clean when dealiasing is on.
    pub fn nonlinear_rhs(&self, u: &SpectralField) -> Result<SpectralField> {
        let g = *self.geometry();
        if *u.geometry() != g {
            return Err(Error::Shape("field geometry does not match the equation".into()));
        }
        let mut out = SpectralField::zeros(g).with_time(u.time());
        if !self.options.nonlinear {
            return Ok(out);
        }
        let nx = g.nx;
        let active = self.options.active_modes.unwrap_or(g.ny);
        let dealias = self.options.dealias;
        let mut a = vec![0.0; active * nx];
        self.basis.rows_to_x(u, 0, dealias, active, &mut a);
        let convective = self.options.form == NonlinearForm::Convective;
        let mut ax = Vec::new();
        if convective {
            ax = vec![0.0; active * nx];
            self.basis.rows_to_x(u, 1, dealias, active, &mut ax);
        }

        let width = 2 * g.ny + 1;
        let mut cos = vec![0.0; width];
        let mut proj = vec![0.0; active * nx];
        for i in 0..nx {
            cos.iter_mut().for_each(|c| *c = 0.0);
            if convective {
                for j in 1..=active {
                    let aj = a[(j - 1) * nx + i];
                    if aj == 0.0 {
                        continue;
                    }
                    for m in 1..=active {
                        let p = 0.5 * aj * ax[(m - 1) * nx + i];
                        cos[j.abs_diff(m)] += p;
                        cos[j + m] -= p;
                    }
                }
            } else {
                for j in 1..=active {
                    let aj = a[(j - 1) * nx + i];
                    if aj == 0.0 {
                        continue;
                    }
                    let sq = 0.5 * aj * aj;
                    cos[0] += sq;
                    cos[2 * j] -= sq;
                    for m in j + 1..=active {
                        let p = aj * a[(m - 1) * nx + i];
                        cos[m - j] += p;
                        cos[j + m] -= p;
                    }
                }
            }
            for l in 1..=active {
                let row = &self.projection[(l - 1) * width..l * width];
                let mut s = 0.0;
                let mut n = (l % 2) ^ 1;
                while n <= 2 * active {
                    s += cos[n] * row[n];
                    n += 2;
                }
                proj[(l - 1) * nx + i] = s;
            }
        }

        for l in 1..=active {
            let dst = &mut out.coeffs_mut()[(l - 1) * nx..l * nx];
            self.basis.x_to_row(&proj[(l - 1) * nx..l * nx], dst);
            for (n, c) in dst.iter_mut().enumerate() {
                if dealias && !g.is_retained(n) {
                    *c = Complex64::new(0.0, 0.0);
                    continue;
                }
                if convective {
                    *c = -*c;
                } else if n == nx / 2 {
                    *c = Complex64::new(0.0, 0.0);
                } else {
                    *c *= Complex64::new(0.0, -0.5 * g.wavenumber(n));
                }
            }
        }
        Ok(out)
    }

    /// `sigma * u + N(u)`, the coefficients of `u_t`.
    pub fn full_rhs(&self, u: &SpectralField) -> Result<SpectralField> {
        let mut out = self.nonlinear_rhs(u)?;
        for ((o, c), s) in out.coeffs_mut().iter_mut().zip(u.coeffs()).zip(&self.symbol) {
            *o += c * s;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::YParity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: StripGeometry, seed: u64, kmax: i64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = SpectralField::zeros(g);
        for j in 1..=g.ny {
            for s in 0..=kmax {
                let decay = (-0.3 * (s as f64) - 0.4 * j as f64).exp();
                let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * decay;
                u.add_real_mode(s, j, a);
            }
        }
        u
    }

    #[test]
    fn symbol_values() {
        assert_eq!(linear_symbol(0.0, 4.0), Complex64::new(0.0, 0.0));
        assert_eq!(linear_symbol(1.0, 1.0), Complex64::new(-1.0, 3.0));
        assert_eq!(linear_symbol(2.0, 1.0), Complex64::new(-4.0, 42.0));
    }

    #[test]
    fn derivative_single_mode() {
        let g = StripGeometry::new(2.0, 5.0, 32, 6, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let mut u = SpectralField::zeros(g);
        u.add_real_mode(3, 1, Complex64::new(0.7, -0.2));
        let base = eq.derivative(&u, 0, 0).unwrap();
        let uyy = eq.derivative(&u, 0, 2).unwrap();
        let expect = base.scaled(-(PI / g.width).powi(2));
        assert!(uyy.axpy(-1.0, &expect).unwrap().max_abs() < 1e-13);

        // x-derivative of a single real mode against the closed form
        let k = g.wavenumber(3);
        let ux = eq.derivative(&u, 1, 0).unwrap();
        for m in 0..ux.grid().rows() {
            let w = g.norm_const() * (PI * g.y(m) / g.width).sin();
            for i in 0..g.nx {
                let z = Complex64::new(0.7, -0.2) * Complex64::new(0.0, k * g.x(i)).exp();
                let expect = 2.0 * (Complex64::new(0.0, k) * z).re * w;
                assert!((ux.at(i, m) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixed_derivative_closed_form() {
        let g = StripGeometry::new(PI, PI, 32, 4, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let u = eq.basis().project(|x, y| y.sin() * x.cos()).unwrap();
        let d = eq.derivative(&u, 1, 1).unwrap();
        assert_eq!(d.parity(), YParity::Cosine);
        for m in 0..d.grid().rows() {
            for i in 0..g.nx {
                let expect = -(g.x(i)).sin() * g.y(m).cos();
                assert!((d.at(i, m) - expect).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn derivative_order_capability() {
        let g = StripGeometry::new(PI, PI, 16, 4, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let u = SpectralField::zeros(g);
        assert!(eq.derivative(&u, 5, 0).is_ok());
        assert!(matches!(eq.derivative(&u, 3, 3), Err(Error::Capability(_))));
    }

    #[test]
    fn nonlinear_trivial_cases() {
        let g = StripGeometry::new(PI, 8.0, 32, 6, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let zero = SpectralField::zeros(g);
        assert_eq!(eq.nonlinear_rhs(&zero).unwrap().max_abs(), 0.0);
        let mut u = SpectralField::zeros(g);
        u.add_real_mode(0, 1, Complex64::new(0.8, 0.0));
        u.add_real_mode(0, 3, Complex64::new(-0.3, 0.0));
        assert!(eq.nonlinear_rhs(&u).unwrap().max_abs() < 1e-15);
        assert_eq!(eq.full_rhs(&zero).unwrap().max_abs(), 0.0);
    }

    /// `u = sin(y) cos(x)`, `B = L = pi`: `-1/2 (u^2)_x = sin^2(y) sin(x) cos(x)`,
    /// whose y-projection onto `w_l` is `sqrt(2/pi) * 4 / (l (4 - l^2))` for odd `l`.
    #[test]
    fn nonlinear_closed_form_product() {
        let g = StripGeometry::new(PI, PI, 32, 12, 0.1).unwrap();
        for form in [NonlinearForm::Divergence, NonlinearForm::Convective] {
            let opts = RhsOptions {
                form,
                ..RhsOptions::default()
            };
            let eq = Equation::with_options(g, opts).unwrap();
            let u = eq.basis().project(|x, y| y.sin() * x.cos()).unwrap();
            let n = eq.nonlinear_rhs(&u).unwrap();
            let mut expect = SpectralField::zeros(g);
            for l in (1..=g.ny).step_by(2) {
                let lf = l as f64;
                let p = (2.0 / PI).sqrt() * 4.0 / (lf * (4.0 - lf * lf));
                // sin(x) cos(x) = sin(2x) / 2 = (e^{2ix} - e^{-2ix}) / 4i
                expect.add_real_mode(2, l, Complex64::new(0.0, -p / 4.0));
            }
            let err = n.sub(&expect).unwrap().max_abs() / expect.max_abs();
            assert!(err < 1e-10, "{form:?}: {err}");
        }
    }

    #[test]
    fn energy_neutral_and_dissipative_law() {
        let g = StripGeometry::new(1.7, 12.0, 64, 10, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let u = random_field(g, 4, 12);
        let n = eq.nonlinear_rhs(&u).unwrap();
        let full = eq.full_rhs(&u).unwrap();
        let two_l = 2.0 * g.half_length;
        let inner = |a: &SpectralField| -> f64 {
            two_l
                * u.coeffs()
                    .iter()
                    .zip(a.coeffs())
                    .map(|(p, q)| (p.conj() * q).re)
                    .sum::<f64>()
        };
        let scale = n.l2_norm_sq().sqrt() * u.l2_norm_sq().sqrt();
        assert!(inner(&n).abs() < 1e-13 * scale, "{}", inner(&n));
        let ux_sq: f64 = (1..=g.ny)
            .flat_map(|j| (0..g.nx).map(move |n| (j, n)))
            .map(|(j, n)| two_l * g.wavenumber(n).powi(2) * u.get(n, j).norm_sqr())
            .sum();
        let rel = (2.0 * inner(&full) + 2.0 * ux_sq).abs() / (2.0 * ux_sq);
        assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn linear_action_only() {
        let g = StripGeometry::new(PI, 6.0, 32, 5, 0.1).unwrap();
        let opts = RhsOptions {
            nonlinear: false,
            ..RhsOptions::default()
        };
        let eq = Equation::with_options(g, opts).unwrap();
        let mut u = SpectralField::zeros(g);
        u.add_real_mode(4, 2, Complex64::new(0.3, 0.1));
        let r = eq.full_rhs(&u).unwrap();
        let n = g.slot(4);
        let expect = linear_symbol(g.wavenumber(n), g.lambda(2)) * u.get(n, 2);
        assert_eq!(r.get(n, 2), expect);
    }

    #[test]
    fn galerkin_truncation_restricts_modes() {
        let g = StripGeometry::new(PI, 6.0, 32, 8, 0.1).unwrap();
        let u = random_field(g, 9, 6);
        let opts = RhsOptions {
            active_modes: Some(3),
            ..RhsOptions::default()
        };
        let eq = Equation::with_options(g, opts).unwrap();
        let n = eq.nonlinear_rhs(&u).unwrap();
        let full = Equation::new(g).unwrap().nonlinear_rhs(&u.truncated(3)).unwrap();
        assert_eq!(n.truncated(3), full.truncated(3));
        assert!(n.coeffs()[3 * g.nx..].iter().all(|c| c.norm() == 0.0));
        let bad = RhsOptions {
            active_modes: Some(9),
            ..RhsOptions::default()
        };
        assert!(Equation::with_options(g, bad).is_err());
    }
}
