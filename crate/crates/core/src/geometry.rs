//! Strip geometry, the Dirichlet eigenbasis in y and the x wavenumber grid.
//!
//! The whole line in x is replaced by the periodic box `[-L, L)` sampled at
//! `nx` uniform points. In y the solution is expanded on the eigenfunctions
//! `w_j(y) = sqrt(2/B) sin(j pi y / B)`, `j = 1..=ny`, which are collocated
//! on the interior grid `y_m = B m / (ny + 1)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripGeometry {
    /// Channel width `B`.
    pub width: f64,
    /// Half-length `L` of the x box.
    pub half_length: f64,
    pub nx: usize,
    /// Number of interior sine modes.
    pub ny: usize,
    /// Fraction of the box at each x-edge monitored for contamination.
    pub buffer_frac: f64,
}

impl StripGeometry {
    pub fn new(width: f64, half_length: f64, nx: usize, ny: usize, buffer_frac: f64) -> Result<Self> {
        let g = StripGeometry {
            width,
            half_length,
            nx,
            ny,
            buffer_frac,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::Config(format!("B must satisfy B > 0 (got {})", self.width)));
        }
        if !(self.half_length.is_finite() && self.half_length > 0.0) {
            return Err(Error::Config(format!(
                "L must satisfy L > 0 (got {})",
                self.half_length
            )));
        }
        if self.nx < 16 || !self.nx.is_multiple_of(2) {
            return Err(Error::Config(format!("Nx must be even and >= 16 (got {})", self.nx)));
        }
        if self.ny < 4 {
            return Err(Error::Config(format!("Ny must satisfy Ny >= 4 (got {})", self.ny)));
        }
        if !(self.buffer_frac > 0.0 && self.buffer_frac < 0.25) {
            return Err(Error::Config(format!(
                "buffer_frac must lie in (0, 0.25) (got {})",
                self.buffer_frac
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        -self.half_length + 2.0 * self.half_length * i as f64 / self.nx as f64
    }

    /// Number of y intervals of the collocation grid, `ny + 1`.
    #[inline]
    pub fn y_intervals(&self) -> usize {
        self.ny + 1
    }

    #[inline]
    pub fn y(&self, m: usize) -> f64 {
        self.width * m as f64 / self.y_intervals() as f64
    }

    /// Signed Fourier index of storage slot `n` (FFT ordering).
    #[inline]
    pub fn signed_index(&self, n: usize) -> i64 {
        if n < self.nx / 2 {
            n as i64
        } else {
            n as i64 - self.nx as i64
        }
    }

    /// Storage slot of signed Fourier index `s`.
    #[inline]
    pub fn slot(&self, s: i64) -> usize {
        s.rem_euclid(self.nx as i64) as usize
    }

    #[inline]
    pub fn wavenumber(&self, n: usize) -> f64 {
        PI * self.signed_index(n) as f64 / self.half_length
    }

    /// Largest retained |index| under the 2/3 rule; quadratic products of
    /// retained modes never alias back onto retained modes.
    #[inline]
    pub fn dealias_cutoff(&self) -> usize {
        (self.nx - 1) / 3
    }

    #[inline]
    pub fn is_retained(&self, n: usize) -> bool {
        self.signed_index(n).unsigned_abs() as usize <= self.dealias_cutoff()
    }

    pub fn in_buffer(&self, x: f64) -> bool {
        let band = self.buffer_frac * 2.0 * self.half_length;
        x < -self.half_length + band || x >= self.half_length - band
    }

    pub fn lambda(&self, j: usize) -> f64 {
        let q = j as f64 * PI / self.width;
        q * q
    }

    pub fn norm_const(&self) -> f64 {
        (2.0 / self.width).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenPair {
    pub j: usize,
    pub lambda: f64,
    pub norm_const: f64,
}

impl EigenPair {
    pub fn eval(&self, width: f64, y: f64) -> f64 {
        self.norm_const * (self.j as f64 * PI * y / width).sin()
    }
}

/// Dirichlet eigenpairs `w_jyy + lambda_j w_j = 0`, `w_j(0) = w_j(B) = 0`.
pub fn eigenpairs(geometry: &StripGeometry) -> Result<Vec<EigenPair>> {
    geometry.validate()?;
    Ok((1..=geometry.ny)
        .map(|j| EigenPair {
            j,
            lambda: geometry.lambda(j),
            norm_const: geometry.norm_const(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(b: f64) -> StripGeometry {
        StripGeometry::new(b, 10.0, 32, 8, 0.1).unwrap()
    }

    #[test]
    fn eigenvalues() {
        let e = eigenpairs(&geom(PI)).unwrap();
        assert_eq!(e[0].lambda, 1.0);
        let e = eigenpairs(&geom(1.0)).unwrap();
        assert!((e[0].lambda - 9.869_604_401_089_358).abs() < 1e-12);
        let e = eigenpairs(&geom(2.0)).unwrap();
        assert!((e[2].lambda - 22.206_609_902_451_056).abs() < 1e-12);
        assert!(e.windows(2).all(|w| w[0].lambda < w[1].lambda));
        assert_eq!(e.len(), 8);
    }

    #[test]
    fn eigenfunctions_vanish_at_walls() {
        let g = geom(1.7);
        for p in eigenpairs(&g).unwrap() {
            assert!(p.eval(g.width, 0.0).abs() < 1e-15);
            assert!(p.eval(g.width, g.width).abs() < 1e-14);
        }
    }

    #[test]
    fn discrete_orthonormality() {
        let g = geom(2.3);
        let pairs = eigenpairs(&g).unwrap();
        let h = g.width / g.y_intervals() as f64;
        for a in &pairs {
            for b in &pairs {
                let s: f64 = (1..g.y_intervals())
                    .map(|m| h * a.eval(g.width, g.y(m)) * b.eval(g.width, g.y(m)))
                    .sum();
                let expect = if a.j == b.j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12, "{} {} {}", a.j, b.j, s);
            }
        }
    }

    #[test]
    fn invalid_geometry_names_bound() {
        let err = StripGeometry::new(-1.0, 1.0, 32, 8, 0.1).unwrap_err();
        assert!(err.to_string().contains("B > 0"));
        let err = StripGeometry::new(1.0, 1.0, 33, 8, 0.1).unwrap_err();
        assert!(err.to_string().contains("Nx"));
        let err = StripGeometry::new(1.0, 1.0, 32, 3, 0.1).unwrap_err();
        assert!(err.to_string().contains("Ny"));
        let err = StripGeometry::new(1.0, 1.0, 32, 8, 0.3).unwrap_err();
        assert!(err.to_string().contains("buffer_frac"));
    }

    #[test]
    fn dealias_cutoff_prevents_aliasing() {
        for nx in [16usize, 64, 512, 1000] {
            let g = StripGeometry::new(1.0, 1.0, nx, 4, 0.1).unwrap();
            let k = g.dealias_cutoff();
            assert!(3 * k < nx);
            assert!(3 * (k + 1) >= nx);
        }
    }
}
