//! Spectral and physical field containers.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::StripGeometry;

/// Symmetry of a field's y-dependence about the walls.
///
/// `Sine` fields are odd about `y = 0` and vanish on both walls; `Cosine`
/// fields (odd y-derivatives of sine fields) are even.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum YParity {
    Sine,
    Cosine,
}

impl YParity {
    pub fn of_order(my: usize) -> Self {
        if my.is_multiple_of(2) {
            YParity::Sine
        } else {
            YParity::Cosine
        }
    }

    /// Parity of a pointwise product.
    pub fn times(self, other: YParity) -> YParity {
        if self == other {
            YParity::Cosine
        } else {
            YParity::Sine
        }
    }
}

/// Coefficient tensor `u(k, j)` on the Fourier x Dirichlet-sine basis.
///
/// `u(x, y) = sum_{n, j} u[n, j] exp(i k_n x) w_j(y)` with orthonormal
/// `w_j`, so that `||u||^2 = 2L sum |u[n, j]|^2`. Storage is j-major: row
/// `j - 1` holds the `nx` Fourier coefficients in FFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    geometry: StripGeometry,
    coeffs: Vec<Complex64>,
    time: f64,
}

impl SpectralField {
    pub fn zeros(geometry: StripGeometry) -> Self {
        SpectralField {
            geometry,
            coeffs: vec![Complex64::new(0.0, 0.0); geometry.nx * geometry.ny],
            time: 0.0,
        }
    }

    pub fn from_coeffs(geometry: StripGeometry, coeffs: Vec<Complex64>, time: f64) -> Result<Self> {
        if coeffs.len() != geometry.nx * geometry.ny {
            return Err(Error::Shape(format!(
                "expected {} coefficients, got {}",
                geometry.nx * geometry.ny,
                coeffs.len()
            )));
        }
        Ok(SpectralField { geometry, coeffs, time })
    }

    pub fn geometry(&self) -> &StripGeometry {
        &self.geometry
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient at storage slot `n`, sine mode `j` (1-based).
    #[inline]
    pub fn get(&self, n: usize, j: usize) -> Complex64 {
        self.coeffs[(j - 1) * self.geometry.nx + n]
    }

    #[inline]
    pub fn set(&mut self, n: usize, j: usize, value: Complex64) {
        let nx = self.geometry.nx;
        self.coeffs[(j - 1) * nx + n] = value;
    }

    /// Adds `amp` at signed index `s` and its conjugate at `-s`, keeping the
    /// physical field real.
    pub fn add_real_mode(&mut self, s: i64, j: usize, amp: Complex64) {
        let g = self.geometry;
        if s == 0 || (s.unsigned_abs() as usize) * 2 == g.nx {
            let n = g.slot(s);
            let v = self.get(n, j) + Complex64::new(amp.re, 0.0);
            self.set(n, j, v);
        } else {
            let n = g.slot(s);
            let v = self.get(n, j) + amp;
            self.set(n, j, v);
            let m = g.slot(-s);
            let v = self.get(m, j) + amp.conj();
            self.set(m, j, v);
        }
    }

    pub fn row(&self, j: usize) -> &[Complex64] {
        let nx = self.geometry.nx;
        &self.coeffs[(j - 1) * nx..j * nx]
    }

    /// Unweighted `||u||^2` over the box by Parseval.
    pub fn l2_norm_sq(&self) -> f64 {
        2.0 * self.geometry.half_length * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest violation of `u[-n, j] = conj(u[n, j])`.
    pub fn hermitian_residue(&self) -> f64 {
        let g = &self.geometry;
        let mut worst = 0.0f64;
        for j in 1..=g.ny {
            for n in 0..g.nx {
                let m = g.slot(-g.signed_index(n));
                worst = worst.max((self.get(n, j) - self.get(m, j).conj()).norm());
            }
        }
        worst
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= factor);
        out
    }

    /// `self + factor * other`.
    pub fn axpy(&self, factor: f64, other: &SpectralField) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * factor;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    fn check_same(&self, other: &SpectralField) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::Shape("spectral fields live on different geometries".into()));
        }
        Ok(())
    }

    /// Copy with every x-mode above the 2/3 cutoff set to zero.
    pub fn dealiased(&self) -> Self {
        let g = self.geometry;
        let mut out = self.clone();
        for j in 1..=g.ny {
            for n in 0..g.nx {
                if !g.is_retained(n) {
                    out.set(n, j, Complex64::new(0.0, 0.0));
                }
            }
        }
        out
    }

    pub fn is_dealiased(&self) -> bool {
        let g = self.geometry;
        (1..=g.ny).all(|j| (0..g.nx).all(|n| g.is_retained(n) || self.get(n, j) == Complex64::new(0.0, 0.0)))
    }

    /// Copy with all sine modes `j > modes` removed.
    pub fn truncated(&self, modes: usize) -> Self {
        let mut out = self.clone();
        let start = modes.min(self.geometry.ny) * self.geometry.nx;
        out.coeffs[start..]
            .iter_mut()
            .for_each(|c| *c = Complex64::new(0.0, 0.0));
        out
    }

    /// Energy `2L sum |u|^2` carried by each sine mode.
    pub fn mode_energies(&self) -> Vec<f64> {
        let two_l = 2.0 * self.geometry.half_length;
        (1..=self.geometry.ny)
            .map(|j| two_l * self.row(j).iter().map(|c| c.norm_sqr()).sum::<f64>())
            .collect()
    }
}

/// Tensor sampling grid `x_i = -L + 2L i / nx`, `y_m = B m / intervals`,
/// `m = 0..=intervals` (wall rows included).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub width: f64,
    pub half_length: f64,
    pub nx: usize,
    pub y_intervals: usize,
}

impl Grid {
    pub fn standard(g: &StripGeometry) -> Self {
        Grid {
            width: g.width,
            half_length: g.half_length,
            nx: g.nx,
            y_intervals: g.y_intervals(),
        }
    }

    /// Grid refined by `x_factor` in x with `y_intervals` intervals in y.
    pub fn refined(g: &StripGeometry, x_factor: usize, y_intervals: usize) -> Self {
        Grid {
            width: g.width,
            half_length: g.half_length,
            nx: g.nx * x_factor.max(1),
            y_intervals,
        }
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        -self.half_length + 2.0 * self.half_length * i as f64 / self.nx as f64
    }

    #[inline]
    pub fn y(&self, m: usize) -> f64 {
        self.width * m as f64 / self.y_intervals as f64
    }

    pub fn rows(&self) -> usize {
        self.y_intervals + 1
    }

    pub fn len(&self) -> usize {
        self.nx * self.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_length / self.nx as f64
    }
}

/// Real samples on a [`Grid`], stored row-major by y (`values[m * nx + i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    grid: Grid,
    parity: YParity,
    values: Vec<f64>,
}

impl PhysicalField {
    pub fn new(grid: Grid, parity: YParity, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(PhysicalField { grid, parity, values })
    }

    pub fn zeros(grid: Grid, parity: YParity) -> Self {
        PhysicalField {
            grid,
            parity,
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f(x, y)` on the grid.
    pub fn from_fn(grid: Grid, parity: YParity, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for m in 0..grid.rows() {
            let y = grid.y(m);
            for i in 0..grid.nx {
                values.push(f(grid.x(i), y));
            }
        }
        PhysicalField { grid, parity, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn parity(&self) -> YParity {
        self.parity
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, m: usize) -> f64 {
        self.values[m * self.grid.nx + i]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.grid.nx..(m + 1) * self.grid.nx]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Pointwise product; the parity follows the product rule.
    pub fn product(&self, other: &PhysicalField) -> Result<PhysicalField> {
        if self.grid != other.grid {
            return Err(Error::Shape("fields sampled on different grids".into()));
        }
        Ok(PhysicalField {
            grid: self.grid,
            parity: self.parity.times(other.parity),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        })
    }

    /// `self + factor * other`; both must share grid and parity.
    pub fn axpy(&self, factor: f64, other: &PhysicalField) -> Result<PhysicalField> {
        if self.grid != other.grid || self.parity != other.parity {
            return Err(Error::Shape("sum of fields with different grid or parity".into()));
        }
        Ok(PhysicalField {
            grid: self.grid,
            parity: self.parity,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + factor * b)
                .collect(),
        })
    }

    pub fn scaled(&self, factor: f64) -> PhysicalField {
        PhysicalField {
            grid: self.grid,
            parity: self.parity,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}
