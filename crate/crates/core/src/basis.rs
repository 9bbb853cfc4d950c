//! Transforms between samples on the tensor grid and Fourier x sine
//! coefficients, plus y-quadrature rules for diagnostics.
//!
//! The x grid starts at `-L`, so the DFT of the samples picks up a factor
//! `(-1)^n` relative to the coefficients of `exp(i k_n x)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{Grid, PhysicalField, SpectralField, YParity};
use crate::geometry::StripGeometry;

/// Relative size of wall samples tolerated by [`Basis::to_spectral`].
pub const WALL_TOLERANCE: f64 = 1e-12;
/// Relative Hermitian defect tolerated by [`Basis::to_physical`].
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

type Plan = Arc<dyn Fft<f64>>;

pub struct Basis {
    geometry: StripGeometry,
    forward: Plan,
    inverse: Plan,
    /// `sqrt(2/B) sin(j pi m / M)` on the standard grid, `table[m * ny + j - 1]`.
    sine_table: Vec<f64>,
    padded: Mutex<HashMap<usize, Plan>>,
}

impl std::fmt::Debug for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Basis").field("geometry", &self.geometry).finish()
    }
}

/// `+-(j pi / B)^my` times `sin` or `cos` of `j pi m / M`, the y-factor of
/// the `my`-th derivative of `w_j`.
fn y_factor(width: f64, j: usize, my: usize, m: usize, intervals: usize) -> f64 {
    let q = j as f64 * PI / width;
    let scale = (2.0 / width).sqrt() * q.powi(my as i32);
    // reduce the angle exactly before calling sin/cos
    let r = (j * m) % (2 * intervals);
    let angle = PI * r as f64 / intervals as f64;
    match my % 4 {
        0 => scale * angle.sin(),
        1 => scale * angle.cos(),
        2 => -scale * angle.sin(),
        _ => -scale * angle.cos(),
    }
}

/// Table of y-factors, `out[m * ny + j - 1]`, with wall rows of sine-type
/// output forced to exact zero.
fn y_table(width: f64, ny: usize, my: usize, intervals: usize) -> Vec<f64> {
    let mut out = vec![0.0; (intervals + 1) * ny];
    let sine = my.is_multiple_of(2);
    for m in 0..=intervals {
        if sine && (m == 0 || m == intervals) {
            continue;
        }
        for j in 1..=ny {
            out[m * ny + j - 1] = y_factor(width, j, my, m, intervals);
        }
    }
    out
}

/// `(i k)^mx` with the Nyquist line treated as a cosine (odd orders vanish).
fn x_factor(k: f64, mx: usize, nyquist: bool) -> Complex64 {
    if nyquist && mx % 2 == 1 {
        return Complex64::new(0.0, 0.0);
    }
    let ik = Complex64::new(0.0, k);
    let mut f = Complex64::new(1.0, 0.0);
    for _ in 0..mx {
        f *= ik;
    }
    f
}

impl Basis {
    pub fn new(geometry: StripGeometry) -> Result<Self> {
        geometry.validate()?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(geometry.nx);
        let inverse = planner.plan_fft_inverse(geometry.nx);
        let mut padded = HashMap::new();
        padded.insert(geometry.nx, inverse.clone());
        Ok(Basis {
            geometry,
            forward,
            inverse,
            sine_table: y_table(geometry.width, geometry.ny, 0, geometry.y_intervals()),
            padded: Mutex::new(padded),
        })
    }

    pub fn geometry(&self) -> &StripGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> Grid {
        Grid::standard(&self.geometry)
    }

    fn inverse_plan(&self, n: usize) -> Plan {
        let mut cache = self.padded.lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry(n)
            .or_insert_with(|| FftPlanner::new().plan_fft_inverse(n))
            .clone()
    }

    fn check_geometry(&self, u: &SpectralField) -> Result<()> {
        if *u.geometry() != self.geometry {
            return Err(Error::Shape("field geometry does not match the basis".into()));
        }
        Ok(())
    }

    /// Coefficients to samples on the standard grid.
    pub fn to_physical(&self, u: &SpectralField) -> Result<PhysicalField> {
        self.check_hermitian(u)?;
        Ok(self.synthesize(u, 0, 0, self.grid())?.0)
    }

    pub fn check_hermitian(&self, u: &SpectralField) -> Result<()> {
        self.check_geometry(u)?;
        let residue = u.hermitian_residue();
        if residue > HERMITIAN_TOLERANCE * u.max_abs() {
            return Err(Error::Representation { residue });
        }
        Ok(())
    }

    /// Samples of `d^mx/dx^mx d^my/dy^my u` on `grid`, plus the largest
    /// imaginary part discarded. `grid` must share `B` and `L` with the
    /// basis and have at least `nx` points in x.
    pub fn synthesize(&self, u: &SpectralField, mx: usize, my: usize, grid: Grid) -> Result<(PhysicalField, f64)> {
        self.check_geometry(u)?;
        let g = &self.geometry;
        if grid.width != g.width || grid.half_length != g.half_length {
            return Err(Error::Shape("synthesis grid spans a different box".into()));
        }
        if grid.nx < g.nx || !grid.nx.is_multiple_of(2) || grid.y_intervals == 0 {
            return Err(Error::Shape(format!(
                "synthesis grid {}x{} is coarser than the basis",
                grid.nx, grid.y_intervals
            )));
        }
        let nxo = grid.nx;
        let rows = grid.rows();
        let table = if my == 0 && grid.y_intervals == g.y_intervals() {
            None
        } else {
            Some(y_table(g.width, g.ny, my, grid.y_intervals))
        };
        let table = table.as_deref().unwrap_or(&self.sine_table);
        let plan = self.inverse_plan(nxo);

        let mut re = vec![0.0; rows * nxo];
        let mut im = vec![0.0; rows * nxo];
        let mut buf = vec![Complex64::new(0.0, 0.0); nxo];
        let half = g.nx / 2;
        for j in 1..=g.ny {
            let row = u.row(j);
            if row.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                continue;
            }
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (n, &c) in row.iter().enumerate() {
                let s = g.signed_index(n);
                let nyquist = n == half;
                let phase = if s % 2 == 0 { 1.0 } else { -1.0 };
                let v = c * x_factor(g.wavenumber(n), mx, nyquist) * phase;
                if nyquist && nxo != g.nx {
                    buf[half] += v * 0.5;
                    buf[nxo - half] += v * 0.5;
                } else {
                    buf[s.rem_euclid(nxo as i64) as usize] += v;
                }
            }
            plan.process(&mut buf);
            for m in 0..rows {
                let w = table[m * g.ny + j - 1];
                if w == 0.0 {
                    continue;
                }
                let r = &mut re[m * nxo..(m + 1) * nxo];
                let q = &mut im[m * nxo..(m + 1) * nxo];
                for i in 0..nxo {
                    r[i] += w * buf[i].re;
                    q[i] += w * buf[i].im;
                }
            }
        }
        let residue = im.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok((PhysicalField::new(grid, YParity::of_order(my), re)?, residue))
    }

    /// Samples on the standard grid to coefficients. Exact inverse of
    /// [`Basis::to_physical`] on band-limited data.
    pub fn to_spectral(&self, field: &PhysicalField) -> Result<SpectralField> {
        let g = &self.geometry;
        if *field.grid() != self.grid() || field.parity() != YParity::Sine {
            return Err(Error::Shape(
                "to_spectral needs sine-type samples on the standard grid".into(),
            ));
        }
        let m_int = g.y_intervals();
        let wall = field
            .row(0)
            .iter()
            .chain(field.row(m_int))
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if wall > WALL_TOLERANCE * field.max_abs() {
            return Err(Error::BoundaryViolation { max_abs: wall });
        }
        let nx = g.nx;
        let h = g.width / m_int as f64;
        let mut out = SpectralField::zeros(*g);
        let mut buf = vec![Complex64::new(0.0, 0.0); nx];
        for j in 1..=g.ny {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for m in 1..m_int {
                let w = h * self.sine_table[m * g.ny + j - 1];
                for (b, v) in buf.iter_mut().zip(field.row(m)) {
                    b.re += w * v;
                }
            }
            self.forward.process(&mut buf);
            let dst = &mut out.coeffs_mut()[(j - 1) * nx..j * nx];
            for (n, (d, b)) in dst.iter_mut().zip(&buf).enumerate() {
                let phase = if g.signed_index(n) % 2 == 0 { 1.0 } else { -1.0 };
                *d = b * (phase / nx as f64);
            }
            enforce_hermitian(dst);
        }
        Ok(out)
    }

    /// Projects a closed-form function onto the basis by sampling it on the
    /// standard grid.
    pub fn project(&self, f: impl Fn(f64, f64) -> f64) -> Result<SpectralField> {
        let field = PhysicalField::from_fn(self.grid(), YParity::Sine, f);
        self.to_spectral(&field)
    }

    /// Inverse FFT of each active row (dealiased if `dealias`) times
    /// `(ik)^mx`, returned real and j-major: `out[(j-1) * nx + i]`.
    pub(crate) fn rows_to_x(&self, u: &SpectralField, mx: usize, dealias: bool, active: usize, out: &mut [f64]) {
        let g = &self.geometry;
        let nx = g.nx;
        let mut buf = vec![Complex64::new(0.0, 0.0); nx];
        for j in 1..=active {
            let row = u.row(j);
            for (n, (b, &c)) in buf.iter_mut().zip(row).enumerate() {
                if dealias && !g.is_retained(n) {
                    *b = Complex64::new(0.0, 0.0);
                    continue;
                }
                let phase = if g.signed_index(n) % 2 == 0 { 1.0 } else { -1.0 };
                *b = c * x_factor(g.wavenumber(n), mx, n == nx / 2) * phase;
            }
            self.inverse.process(&mut buf);
            for (o, b) in out[(j - 1) * nx..j * nx].iter_mut().zip(&buf) {
                *o = b.re;
            }
        }
    }

    /// Forward FFT of the real row `values` into coefficient row `dst`.
    pub(crate) fn x_to_row(&self, values: &[f64], dst: &mut [Complex64]) {
        let g = &self.geometry;
        let nx = g.nx;
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (n, (d, b)) in dst.iter_mut().zip(&buf).enumerate() {
            let phase = if g.signed_index(n) % 2 == 0 { 1.0 } else { -1.0 };
            *d = b * (phase / nx as f64);
        }
        enforce_hermitian(dst);
    }
}

/// Replaces a transformed real row by its Hermitian part, so round-off in
/// the FFT is not amplified by stiff symbols into a complex field.
fn enforce_hermitian(row: &mut [Complex64]) {
    let nx = row.len();
    row[0].im = 0.0;
    row[nx / 2].im = 0.0;
    for n in 1..nx / 2 {
        let a = 0.5 * (row[n] + row[nx - n].conj());
        row[n] = a;
        row[nx - n] = a.conj();
    }
}

/// y-quadrature weights on `intervals + 1` equispaced nodes of `[0, B]`.
///
/// Cosine-type integrands (even number of sine factors) use the trapezoid
/// rule, exact for cosine polynomials of degree `< 2 * intervals`. Sine-type
/// integrands use the interpolatory sine rule, exact for sine polynomials
/// of degree `< intervals`.
pub fn y_weights(width: f64, intervals: usize, parity: YParity) -> Vec<f64> {
    let h = width / intervals as f64;
    match parity {
        YParity::Cosine => {
            let mut w = vec![h; intervals + 1];
            w[0] = 0.5 * h;
            w[intervals] = 0.5 * h;
            w
        }
        YParity::Sine => {
            let mut w = vec![0.0; intervals + 1];
            for (m, wm) in w.iter_mut().enumerate().take(intervals).skip(1) {
                let mut s = 0.0;
                for n in (1..intervals).step_by(2) {
                    let r = (n * m) % (2 * intervals);
                    s += (PI * r as f64 / intervals as f64).sin() * 2.0 * width / (n as f64 * PI);
                }
                *wm = 2.0 / intervals as f64 * s;
            }
            w
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(b: f64, l: f64, nx: usize, ny: usize) -> Basis {
        Basis::new(StripGeometry::new(b, l, nx, ny, 0.1).unwrap()).unwrap()
    }

    fn random_field(g: StripGeometry, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = SpectralField::zeros(g);
        let kmax = g.dealias_cutoff() as i64;
        for j in 1..=g.ny {
            for s in 0..=kmax {
                let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                u.add_real_mode(s, j, a);
            }
        }
        u
    }

    #[test]
    fn zero_round_trip() {
        let b = basis(PI, 5.0, 32, 6);
        let u = SpectralField::zeros(*b.geometry());
        let p = b.to_physical(&u).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
        let back = b.to_spectral(&p).unwrap();
        assert!(back.coeffs().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn single_tensor_mode() {
        let b = basis(2.0, 3.0, 32, 6);
        let g = *b.geometry();
        let u = b
            .project(|x, y| (PI * y / g.width).sin() * (2.0 * PI * x / (2.0 * g.half_length)).cos())
            .unwrap();
        let mut nonzero = 0;
        for j in 1..=g.ny {
            for n in 0..g.nx {
                let c = u.get(n, j);
                if c.norm() > 1e-13 {
                    nonzero += 1;
                    assert_eq!(j, 1);
                    assert_eq!(g.signed_index(n).abs(), 1);
                }
            }
        }
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn constant_in_x_unit_mode() {
        let b = basis(1.5, 4.0, 16, 4);
        let g = *b.geometry();
        let mut u = SpectralField::zeros(g);
        u.set(0, 1, Complex64::new(1.0, 0.0));
        let p = b.to_physical(&u).unwrap();
        for m in 0..p.grid().rows() {
            let expect = g.norm_const() * (PI * g.y(m) / g.width).sin();
            for i in 0..g.nx {
                assert!((p.at(i, m) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn round_trip_random() {
        let b = basis(1.3, 7.0, 64, 9);
        let u = random_field(*b.geometry(), 3);
        let p = b.to_physical(&u).unwrap();
        let back = b.to_spectral(&p).unwrap();
        let p2 = b.to_physical(&back).unwrap();
        let err = p.axpy(-1.0, &p2).unwrap().max_abs() / p.max_abs();
        assert!(err < 1e-12, "{err}");
        let cerr = back.sub(&u).unwrap().max_abs() / u.max_abs();
        assert!(cerr < 1e-12, "{cerr}");
    }

    #[test]
    fn imaginary_residue_small() {
        let b = basis(PI, 10.0, 64, 8);
        let u = random_field(*b.geometry(), 11);
        let (_, residue) = b.synthesize(&u, 0, 0, b.grid()).unwrap();
        assert!(residue < 1e-13, "{residue}");
    }

    #[test]
    fn broken_symmetry_rejected() {
        let b = basis(PI, 10.0, 32, 4);
        let mut u = SpectralField::zeros(*b.geometry());
        u.set(1, 1, Complex64::new(1.0, 0.0));
        assert!(matches!(b.to_physical(&u), Err(Error::Representation { .. })));
    }

    #[test]
    fn wall_samples_rejected() {
        let b = basis(PI, 10.0, 32, 4);
        let f = PhysicalField::from_fn(b.grid(), YParity::Sine, |x, _| (-x * x).exp());
        assert!(matches!(b.to_spectral(&f), Err(Error::BoundaryViolation { .. })));
    }

    #[test]
    fn walls_exactly_zero() {
        let b = basis(2.7, 10.0, 32, 7);
        let u = random_field(*b.geometry(), 5);
        let p = b.to_physical(&u).unwrap();
        let last = p.grid().y_intervals;
        assert!(p.row(0).iter().chain(p.row(last)).all(|&v| v == 0.0));
        let fine = Grid::refined(b.geometry(), 2, 24);
        let (p, _) = b.synthesize(&u, 2, 2, fine).unwrap();
        assert!(p.row(0).iter().chain(p.row(24)).all(|&v| v == 0.0));
    }

    #[test]
    fn parseval() {
        let b = basis(1.9, 6.0, 64, 8);
        let u = random_field(*b.geometry(), 8);
        let p = b.to_physical(&u).unwrap();
        let grid = p.grid();
        let wy = y_weights(grid.width, grid.y_intervals, YParity::Cosine);
        let sum: f64 = (0..grid.rows())
            .map(|m| wy[m] * p.row(m).iter().map(|v| v * v).sum::<f64>() * grid.dx())
            .sum();
        let rel = (sum - u.l2_norm_sq()).abs() / u.l2_norm_sq();
        assert!(rel < 1e-12, "{rel}");
    }

    #[test]
    fn gram_matrix_is_identity() {
        let g = StripGeometry::new(1.7, 1.0, 16, 10, 0.1).unwrap();
        let m_int = g.y_intervals();
        let wy = y_weights(g.width, m_int, YParity::Cosine);
        for a in 1..=g.ny {
            for c in 1..=g.ny {
                let s: f64 = (0..=m_int)
                    .map(|m| wy[m] * y_factor(g.width, a, 0, m, m_int) * y_factor(g.width, c, 0, m, m_int))
                    .sum();
                let expect = if a == c { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_rule_exact() {
        // int_0^B sin(n pi y / B) dy = 2B / (n pi) for odd n, 0 for even n
        let width = 2.2;
        let intervals = 12;
        let w = y_weights(width, intervals, YParity::Sine);
        for n in 1..intervals {
            let s: f64 = (0..=intervals)
                .map(|m| w[m] * (n as f64 * PI * m as f64 / intervals as f64).sin())
                .sum();
            let expect = if n % 2 == 1 { 2.0 * width / (n as f64 * PI) } else { 0.0 };
            assert!((s - expect).abs() < 1e-13, "{n} {s} {expect}");
        }
    }

    #[test]
    fn padded_synthesis_matches_closed_form() {
        let b = basis(PI, PI, 32, 4);
        let u = b.project(|x, y| y.sin() * x.cos()).unwrap();
        let grid = Grid::refined(b.geometry(), 3, 17);
        let (p, _) = b.synthesize(&u, 1, 1, grid).unwrap();
        assert_eq!(p.parity(), YParity::Cosine);
        for m in 0..grid.rows() {
            for i in 0..grid.nx {
                let expect = -grid.x(i).sin() * grid.y(m).cos();
                assert!((p.at(i, m) - expect).abs() < 1e-12);
            }
        }
    }
}
