//! Plain-text spectral field files.
//!
//! ```text
//! kbstrip-field 1
//! B = 3.141592653589793
//! L = 30
//! Nx = 256
//! Ny = 16
//! t = 0
//! # n j re im
//! 1 1 1.5e-1 0
//! -1 1 1.5e-1 0
//! ```
//!
//! `n` is the signed Fourier index. Missing coefficients are zero.

use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::basis::HERMITIAN_TOLERANCE;
use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::geometry::StripGeometry;

pub const MAGIC: &str = "kbstrip-field 1";

/// Buffer fraction assigned to geometries read from field files.
pub const FILE_BUFFER_FRAC: f64 = 0.1;

pub fn write_field_string(u: &SpectralField) -> String {
    let g = u.geometry();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "B = {:?}", g.width);
    let _ = writeln!(s, "L = {:?}", g.half_length);
    let _ = writeln!(s, "Nx = {}", g.nx);
    let _ = writeln!(s, "Ny = {}", g.ny);
    let _ = writeln!(s, "t = {:?}", u.time());
    let _ = writeln!(s, "# n j re im");
    for j in 1..=g.ny {
        for n in 0..g.nx {
            let c = u.get(n, j);
            if c.re != 0.0 || c.im != 0.0 {
                let _ = writeln!(s, "{} {} {:?} {:?}", g.signed_index(n), j, c.re, c.im);
            }
        }
    }
    s
}

pub fn write_field(u: &SpectralField, path: &Path) -> Result<()> {
    std::fs::write(path, write_field_string(u))?;
    Ok(())
}

fn err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Parses a field file; every failure is a positioned diagnostic.
pub fn parse_field(text: &str) -> Result<SpectralField> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim().starts_with('#'));
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        Some((no, _)) => return Err(err(no, 1, format!("expected `{MAGIC}`"))),
        None => return Err(err(1, 1, "empty field file")),
    }
    let mut take = |key: &str| -> Result<(usize, usize, String)> {
        let Some((no, raw)) = lines.next() else {
            return Err(err(0, 0, format!("missing header `{key}`")));
        };
        let Some((k, v)) = raw.split_once('=') else {
            return Err(err(no, 1, format!("expected `{key} = <value>`")));
        };
        if k.trim() != key {
            return Err(err(no, 1, format!("expected key `{key}`, found `{}`", k.trim())));
        }
        let lead = v.len() - v.trim_start().len();
        Ok((no, k.len() + 2 + lead, v.trim().to_string()))
    };
    let (bl, bc, b) = take("B")?;
    let (ll, lc, l) = take("L")?;
    let (xl, xc, nx) = take("Nx")?;
    let (yl, yc, ny) = take("Ny")?;
    let (tl, tc, t) = take("t")?;
    let num = |line, col, key: &str, v: &str| {
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| err(line, col, format!("`{key}` must be a finite number (got `{v}`)")))
    };
    let int = |line, col, key: &str, v: &str| {
        v.parse::<usize>()
            .map_err(|_| err(line, col, format!("`{key}` must be a non-negative integer (got `{v}`)")))
    };
    let width = num(bl, bc, "B", &b)?;
    let half_length = num(ll, lc, "L", &l)?;
    let nx = int(xl, xc, "Nx", &nx)?;
    let ny = int(yl, yc, "Ny", &ny)?;
    let time = num(tl, tc, "t", &t)?;
    let geometry =
        StripGeometry::new(width, half_length, nx, ny, FILE_BUFFER_FRAC).map_err(|e| err(bl, 1, e.to_string()))?;

    let mut u = SpectralField::zeros(geometry).with_time(time);
    let mut seen = vec![false; nx * ny];
    for (no, raw) in lines {
        let mut fields = Vec::with_capacity(4);
        let mut rest = raw;
        let mut offset = 0;
        while let Some(start) = rest.find(|c: char| !c.is_whitespace()) {
            let tail = &rest[start..];
            let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
            fields.push((offset + start + 1, &tail[..len]));
            offset += start + len;
            rest = &tail[len..];
        }
        if fields.len() != 4 {
            return Err(err(
                no,
                1,
                format!("expected `n j re im`, found {} fields", fields.len()),
            ));
        }
        let (c0, s) = fields[0];
        let s: i64 = s
            .parse()
            .map_err(|_| err(no, c0, format!("Fourier index must be an integer (got `{s}`)")))?;
        let half = (nx / 2) as i64;
        if s < -half || s >= half {
            return Err(err(
                no,
                c0,
                format!("Fourier index must satisfy -Nx/2 <= n < Nx/2 (got {s})"),
            ));
        }
        let (c1, j) = fields[1];
        let j: usize = j
            .parse()
            .map_err(|_| err(no, c1, format!("sine mode must be a positive integer (got `{j}`)")))?;
        if j == 0 || j > ny {
            return Err(err(
                no,
                c1,
                format!("sine mode must satisfy 1 <= j <= Ny = {ny} (got {j})"),
            ));
        }
        let (c2, re) = fields[2];
        let re = num(no, c2, "re", re)?;
        let (c3, im) = fields[3];
        let im = num(no, c3, "im", im)?;
        let slot = geometry.slot(s);
        let idx = (j - 1) * nx + slot;
        if seen[idx] {
            return Err(err(no, c0, format!("duplicate coefficient ({s}, {j})")));
        }
        seen[idx] = true;
        u.set(slot, j, Complex64::new(re, im));
    }
    let residue = u.hermitian_residue();
    if residue > HERMITIAN_TOLERANCE * u.max_abs().max(1.0) {
        return Err(Error::Representation { residue });
    }
    Ok(u)
}

pub fn read_field(path: &Path) -> Result<SpectralField> {
    parse_field(&std::fs::read_to_string(path)?)
}
