//! Norms, weighted functionals, instantaneous identity residuals, the
//! inequality suite and the weak-form residual.
//!
//! All weighted integrals are taken on a diagnostic grid with twice the x
//! resolution (so quartic integrands of dealiased fields are integrated
//! exactly in x) and `3 (ny + 1)` y intervals (so cubic and quartic
//! integrands are integrated exactly in y).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::basis::y_weights;
use crate::error::{Error, Result};
use crate::field::{Grid, PhysicalField, SpectralField, YParity};
use crate::spectral::Equation;

/// Largest admissible weight rate, `sqrt(0.6) / 2`.
pub fn max_weight_rate() -> f64 {
    0.6f64.sqrt() / 2.0
}

/// Relative buffer peak above which the box is flagged as contaminated.
pub const CONTAMINATION_FLOOR: f64 = 1e-10;
/// Floor for residual normalisation; zero fields pass by convention.
pub const EPS_FLOOR: f64 = 1e-300;

/// Exponential weight `e^{2bx}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub b: f64,
}

impl WeightParams {
    pub fn new(b: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Config(format!("b must satisfy b > 0 (got {b})")));
        }
        if 6.0 * b - 40.0 * b * b * b < 0.0 {
            return Err(Error::Config(format!(
                "b must satisfy 6b - 40b^3 >= 0, i.e. b <= sqrt(0.6)/2 (got {b})"
            )));
        }
        Ok(WeightParams { b })
    }

    /// `2 + 6b - 40b^3`
    pub fn dissipation(&self) -> f64 {
        let b = self.b;
        2.0 + 6.0 * b - 40.0 * b.powi(3)
    }

    /// `4b^2 + 8b^3 - 32b^5`
    pub fn growth(&self) -> f64 {
        let b = self.b;
        4.0 * b * b + 8.0 * b.powi(3) - 32.0 * b.powi(5)
    }
}

/// `int int e^{rate x} prod(factors) dx dy` on the factors' common grid.
pub fn weighted_integral(factors: &[&PhysicalField], rate: f64) -> Result<f64> {
    let first = factors.first().ok_or_else(|| Error::Shape("empty integrand".into()))?;
    let grid = *first.grid();
    if factors.iter().any(|f| *f.grid() != grid) {
        return Err(Error::Shape("integrand factors sampled on different grids".into()));
    }
    let wy = y_weights(grid.width, grid.y_intervals, integrand_rule(factors));
    let dx = grid.dx();
    let wx: Vec<f64> = (0..grid.nx).map(|i| (rate * grid.x(i)).exp() * dx).collect();
    let mut total = 0.0;
    for (m, &w) in wy.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (i, &wxi) in wx.iter().enumerate() {
            let mut p = wxi;
            for f in factors {
                p *= f.at(i, m);
            }
            row += p;
        }
        total += w * row;
    }
    Ok(total)
}

/// The y-rule for a product: an odd count of sine-type factors gives a
/// sine-type integrand.
fn integrand_rule(factors: &[&PhysicalField]) -> YParity {
    let sines = factors.iter().filter(|f| f.parity() == YParity::Sine).count();
    if sines % 2 == 1 {
        YParity::Sine
    } else {
        YParity::Cosine
    }
}

/// `(e^{2bx} f, g)` over the box.
pub fn weighted_inner(f: &PhysicalField, g: &PhysicalField, weight: WeightParams) -> Result<f64> {
    weighted_integral(&[f, g], 2.0 * weight.b)
}

/// Diagnostic grid used by every weighted functional.
pub fn diagnostic_grid(eq: &Equation) -> Grid {
    let g = eq.geometry();
    Grid::refined(g, 2, 3 * g.y_intervals())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Source {
    State,
    Rate,
}

/// Lazily synthesised derivatives of a state and of its time derivative.
struct Probe<'a> {
    eq: &'a Equation,
    u: &'a SpectralField,
    ut: Option<SpectralField>,
    grid: Grid,
    rate: f64,
    fields: HashMap<(Source, usize, usize), PhysicalField>,
}

impl<'a> Probe<'a> {
    fn new(eq: &'a Equation, u: &'a SpectralField, weight: WeightParams) -> Result<Self> {
        eq.basis().check_hermitian(u)?;
        Ok(Probe {
            eq,
            u,
            ut: None,
            grid: diagnostic_grid(eq),
            rate: 2.0 * weight.b,
            fields: HashMap::new(),
        })
    }

    fn load(&mut self, src: Source, orders: &[(usize, usize)]) -> Result<()> {
        if src == Source::Rate && self.ut.is_none() {
            self.ut = Some(self.eq.full_rhs(self.u)?);
        }
        for &(mx, my) in orders {
            if self.fields.contains_key(&(src, mx, my)) {
                continue;
            }
            let v = match src {
                Source::State => self.u,
                Source::Rate => self.ut.as_ref().expect("rate loaded"),
            };
            let f = self.eq.derivative_on(v, mx, my, self.grid)?;
            self.fields.insert((src, mx, my), f);
        }
        Ok(())
    }

    fn u(&self, mx: usize, my: usize) -> &PhysicalField {
        &self.fields[&(Source::State, mx, my)]
    }

    fn ut(&self, mx: usize, my: usize) -> &PhysicalField {
        &self.fields[&(Source::Rate, mx, my)]
    }

    /// `(e^{2bx}, prod)`
    fn w(&self, factors: &[&PhysicalField]) -> f64 {
        weighted_integral(factors, self.rate).expect("probe fields share a grid")
    }

    fn sq(&self, mx: usize, my: usize) -> f64 {
        let f = self.u(mx, my);
        self.w(&[f, f])
    }
}

/// Norms and weighted functionals of one state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormSnapshot {
    pub t: f64,
    pub l2_sq: f64,
    /// `||u_x||^2`
    pub ux_sq: f64,
    /// `int_0^t ||u_x||^2 ds`, filled in by the integrator.
    pub cum_ux: f64,
    pub w_u: f64,
    pub w_ux: f64,
    pub w_uy: f64,
    pub w_uxx: f64,
    pub w_uxy: f64,
    pub w_uyy: f64,
    pub w_uxxx: f64,
    pub w_uxxy: f64,
    /// Max of `e^{bx} |u|` over the buffer zones.
    pub buffer_peak: f64,
    /// Max of `e^{bx} |u|` over the whole box.
    pub global_peak: f64,
}

impl NormSnapshot {
    /// Ratio of the buffer peak to the global peak (0 for zero data).
    pub fn contamination_ratio(&self) -> f64 {
        if self.global_peak > 0.0 {
            self.buffer_peak / self.global_peak
        } else {
            0.0
        }
    }

    pub fn is_contaminated(&self) -> bool {
        self.contamination_ratio() > CONTAMINATION_FLOOR
    }

    /// `(e^{2bx}, u^2 + |grad u|^2 + u_xx^2)`
    pub fn elevated(&self) -> f64 {
        self.w_u + self.w_ux + self.w_uy + self.w_uxx
    }
}

/// Unweighted `||u_x||^2` by Parseval.
pub fn ux_norm_sq(u: &SpectralField) -> f64 {
    let g = u.geometry();
    let mut s = 0.0;
    for j in 1..=g.ny {
        for (n, c) in u.row(j).iter().enumerate() {
            s += g.wavenumber(n).powi(2) * c.norm_sqr();
        }
    }
    2.0 * g.half_length * s
}

/// Unweighted `||grad u||^2` by Parseval.
pub fn grad_norm_sq(u: &SpectralField) -> f64 {
    let g = u.geometry();
    let mut s = 0.0;
    for j in 1..=g.ny {
        let lambda = g.lambda(j);
        for (n, c) in u.row(j).iter().enumerate() {
            s += (g.wavenumber(n).powi(2) + lambda) * c.norm_sqr();
        }
    }
    2.0 * g.half_length * s
}

/// Unweighted `(u, v)` by Parseval.
pub fn l2_inner(u: &SpectralField, v: &SpectralField) -> f64 {
    2.0 * u.geometry().half_length
        * u.coeffs()
            .iter()
            .zip(v.coeffs())
            .map(|(a, b)| (a.conj() * b).re)
            .sum::<f64>()
}

fn peaks(eq: &Equation, u: &PhysicalField, b: f64) -> (f64, f64) {
    let g = eq.geometry();
    let grid = u.grid();
    let mut buffer = 0.0f64;
    let mut global = 0.0f64;
    for i in 0..grid.nx {
        let x = grid.x(i);
        let w = (b * x).exp();
        let mut col = 0.0f64;
        for m in 0..grid.rows() {
            col = col.max(u.at(i, m).abs());
        }
        let v = w * col;
        global = global.max(v);
        if g.in_buffer(x) {
            buffer = buffer.max(v);
        }
    }
    (buffer, global)
}

fn snapshot_from(probe: &mut Probe<'_>, weight: WeightParams) -> Result<NormSnapshot> {
    probe.load(
        Source::State,
        &[(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1)],
    )?;
    let (buffer_peak, global_peak) = peaks(probe.eq, probe.u(0, 0), weight.b);
    Ok(NormSnapshot {
        t: probe.u.time(),
        l2_sq: probe.u.l2_norm_sq(),
        ux_sq: ux_norm_sq(probe.u),
        cum_ux: 0.0,
        w_u: probe.sq(0, 0),
        w_ux: probe.sq(1, 0),
        w_uy: probe.sq(0, 1),
        w_uxx: probe.sq(2, 0),
        w_uxy: probe.sq(1, 1),
        w_uyy: probe.sq(0, 2),
        w_uxxx: probe.sq(3, 0),
        w_uxxy: probe.sq(2, 1),
        buffer_peak,
        global_peak,
    })
}

pub fn snapshot(eq: &Equation, u: &SpectralField, weight: WeightParams) -> Result<NormSnapshot> {
    let mut probe = Probe::new(eq, u, weight)?;
    snapshot_from(&mut probe, weight)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IdentityId {
    /// `d/dt ||u||^2 + 2 ||u_x||^2 = 0`
    E1Sharp,
    /// weighted `L^2` balance
    E2,
    /// weighted `u_x` balance
    E3,
    /// weighted `u_y` balance
    E4,
    /// weighted `|grad u|^2 + u_xx^2` balance
    Elev,
}

impl IdentityId {
    pub const ALL: [IdentityId; 5] = [
        IdentityId::E1Sharp,
        IdentityId::E2,
        IdentityId::E3,
        IdentityId::E4,
        IdentityId::Elev,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            IdentityId::E1Sharp => "E1-sharp",
            IdentityId::E2 => "E2",
            IdentityId::E3 => "E3",
            IdentityId::E4 => "E4",
            IdentityId::Elev => "ELEV",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub identity: IdentityId,
    pub terms: Vec<(String, f64)>,
    pub residual: f64,
    pub scale: f64,
}

impl IdentityResidual {
    fn from_terms(identity: IdentityId, terms: Vec<(&str, f64)>) -> Self {
        let residual = terms.iter().map(|t| t.1).sum();
        let scale = terms.iter().fold(0.0f64, |a, t| a.max(t.1.abs()));
        IdentityResidual {
            identity,
            terms: terms.into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
            residual,
            scale,
        }
    }

    /// `|residual| / max(scale, EPS_FLOOR)`
    pub fn relative(&self) -> f64 {
        self.residual.abs() / self.scale.max(EPS_FLOOR)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.relative() < tolerance
    }
}

fn residual_from(probe: &mut Probe<'_>, weight: WeightParams, id: IdentityId) -> Result<IdentityResidual> {
    let b = weight.b;
    let a = weight.dissipation();
    let c = weight.growth();
    // cubic terms come from the quadratic nonlinearity
    let q = if probe.eq.options().nonlinear { 1.0 } else { 0.0 };
    let terms = match id {
        IdentityId::E1Sharp => {
            let ut = probe.eq.full_rhs(probe.u)?;
            vec![
                ("d/dt ||u||^2", 2.0 * l2_inner(probe.u, &ut)),
                ("2 ||u_x||^2", 2.0 * ux_norm_sq(probe.u)),
            ]
        }
        IdentityId::E2 => {
            probe.load(Source::State, &[(0, 0), (1, 0), (0, 1), (2, 0)])?;
            probe.load(Source::Rate, &[(0, 0)])?;
            let u = probe.u(0, 0);
            vec![
                ("d/dt (w, u^2)", 2.0 * probe.w(&[u, probe.ut(0, 0)])),
                ("(2+6b-40b^3)(w, u_x^2)", a * probe.sq(1, 0)),
                ("2b (w, u_y^2)", 2.0 * b * probe.sq(0, 1)),
                ("10b (w, u_xx^2)", 10.0 * b * probe.sq(2, 0)),
                ("-4b/3 (w, u^3)", -q * 4.0 * b / 3.0 * probe.w(&[u, u, u])),
                ("-(4b^2+8b^3-32b^5)(w, u^2)", -c * probe.sq(0, 0)),
            ]
        }
        IdentityId::E3 => {
            probe.load(Source::State, &[(0, 0), (1, 0), (2, 0), (1, 1), (3, 0)])?;
            probe.load(Source::Rate, &[(1, 0)])?;
            let (u, ux) = (probe.u(0, 0), probe.u(1, 0));
            vec![
                ("d/dt (w, u_x^2)", 2.0 * probe.w(&[ux, probe.ut(1, 0)])),
                ("(2+6b-40b^3)(w, u_xx^2)", a * probe.sq(2, 0)),
                ("2b (w, u_xy^2)", 2.0 * b * probe.sq(1, 1)),
                ("10b (w, u_xxx^2)", 10.0 * b * probe.sq(3, 0)),
                ("-(4b^2+8b^3-32b^5)(w, u_x^2)", -c * probe.sq(1, 0)),
                ("(w, u_x^3)", q * probe.w(&[ux, ux, ux])),
                ("-2b (w, u u_x^2)", -q * 2.0 * b * probe.w(&[u, ux, ux])),
            ]
        }
        IdentityId::E4 => {
            probe.load(Source::State, &[(0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (2, 1)])?;
            probe.load(Source::Rate, &[(0, 1)])?;
            let (u, ux, uy) = (probe.u(0, 0), probe.u(1, 0), probe.u(0, 1));
            vec![
                ("d/dt (w, u_y^2)", 2.0 * probe.w(&[uy, probe.ut(0, 1)])),
                ("(2+6b-40b^3)(w, u_xy^2)", a * probe.sq(1, 1)),
                ("2b (w, u_yy^2)", 2.0 * b * probe.sq(0, 2)),
                ("10b (w, u_xxy^2)", 10.0 * b * probe.sq(2, 1)),
                ("-(4b^2+8b^3-32b^5)(w, u_y^2)", -c * probe.sq(0, 1)),
                ("(w, u_x u_y^2)", q * probe.w(&[ux, uy, uy])),
                ("-2b (w, u u_y^2)", -q * 2.0 * b * probe.w(&[u, uy, uy])),
            ]
        }
        IdentityId::Elev => {
            probe.load(
                Source::State,
                &[(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (4, 0)],
            )?;
            probe.load(Source::Rate, &[(1, 0), (0, 1), (2, 0)])?;
            let (u, ux) = (probe.u(0, 0), probe.u(1, 0));
            let (uxx, uyy, uxxx, uxxxx) = (probe.u(2, 0), probe.u(0, 2), probe.u(3, 0), probe.u(4, 0));
            let dt = 2.0 * probe.w(&[ux, probe.ut(1, 0)])
                + 2.0 * probe.w(&[probe.u(0, 1), probe.ut(0, 1)])
                + 2.0 * probe.w(&[uxx, probe.ut(2, 0)]);
            let mixed = uyy.axpy(-4.0 * b * b, uxx)?.axpy(-4.0 * b, uxxx)?.axpy(-1.0, uxxxx)?;
            let cubic = uxxx.axpy(2.0 * b, uxx)?;
            let (sxx, sxy, syy) = (probe.sq(2, 0), probe.sq(1, 1), probe.sq(0, 2));
            let (sxxx, sxxy, sxxxx) = (probe.sq(3, 0), probe.sq(2, 1), probe.sq(4, 0));
            vec![
                ("d/dt (w, |grad u|^2 + u_xx^2)", dt),
                (
                    "2(1+3b-20b^3)(w, |grad u_x|^2 + u_xxx^2)",
                    2.0 * (1.0 + 3.0 * b - 20.0 * b.powi(3)) * (sxx + sxy + sxxx),
                ),
                ("2b (w, |grad u_y|^2 + u_xxy^2)", 2.0 * b * (sxy + syy + sxxy)),
                ("10b (w, |grad u_xx|^2 + u_xxxx^2)", 10.0 * b * (sxxx + sxxy + sxxxx)),
                (
                    "-(4b^2+8b^3-32b^5)(w, |grad u|^2 + u_xx^2)",
                    -c * (probe.sq(1, 0) + probe.sq(0, 1) + sxx),
                ),
                (
                    "-2(w u u_x, u_yy - 4b^2 u_xx - 4b u_xxx - u_xxxx)",
                    -q * 2.0 * probe.w(&[u, ux, &mixed]),
                ),
                ("(w u^2, u_xxx + 2b u_xx)", q * probe.w(&[u, u, &cubic])),
                ("-4b (w, u u_x^2)", -q * 4.0 * b * probe.w(&[u, ux, ux])),
            ]
        }
    };
    Ok(IdentityResidual::from_terms(id, terms))
}

/// Evaluates one identity with every time derivative replaced through the
/// equation. Zero in exact arithmetic on the whole line.
pub fn identity_residual(
    eq: &Equation,
    u: &SpectralField,
    weight: WeightParams,
    id: IdentityId,
) -> Result<IdentityResidual> {
    let mut probe = Probe::new(eq, u, weight)?;
    residual_from(&mut probe, weight, id)
}

/// Snapshot and a set of identity residuals sharing one derivative cache.
pub fn snapshot_with_residuals(
    eq: &Equation,
    u: &SpectralField,
    weight: WeightParams,
    ids: &[IdentityId],
) -> Result<(NormSnapshot, Vec<IdentityResidual>)> {
    let mut probe = Probe::new(eq, u, weight)?;
    let snap = snapshot_from(&mut probe, weight)?;
    let res = ids
        .iter()
        .map(|&id| residual_from(&mut probe, weight, id))
        .collect::<Result<Vec<_>>>()?;
    Ok((snap, res))
}

/// `max_t |l2_sq(t) + 2 cum_ux(t) - l2_sq(0)| / l2_sq(0)`, 0 for zero data.
pub fn sharp_energy_check(rows: &[NormSnapshot]) -> f64 {
    let Some(first) = rows.first() else {
        return 0.0;
    };
    let e0 = first.l2_sq;
    if e0 == 0.0 {
        return 0.0;
    }
    rows.iter()
        .map(|r| (r.l2_sq + 2.0 * r.cum_ux - e0).abs() / e0)
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

impl InequalityCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        InequalityCheck {
            lhs,
            rhs,
            margin: rhs - lhs,
        }
    }

    /// `margin >= -tolerance * rhs`
    pub fn holds(&self, tolerance: f64) -> bool {
        self.margin >= -tolerance * self.rhs.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupBoundProbe {
    pub delta: f64,
    pub delta1: f64,
    pub check: InequalityCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    /// `(w, u^2) <= (B^2 / pi^2) (w, u_y^2)`
    pub steklov: InequalityCheck,
    /// `||u||_{L^4}^2 <= 2 ||u|| ||grad u||` for the zero extension.
    pub ladyzhenskaya: InequalityCheck,
    /// `||u||_{L^4}^2 / (||u|| ||grad u||)`, the constant this field needs.
    pub ladyzhenskaya_constant: f64,
    /// Weighted sup bound for each `(delta, delta1)`.
    pub sup_bound: Vec<SupBoundProbe>,
}

impl InequalityReport {
    pub fn all_hold(&self, tolerance: f64) -> bool {
        self.steklov.holds(tolerance)
            && self.ladyzhenskaya.holds(tolerance)
            && self.sup_bound.iter().all(|p| p.check.holds(tolerance))
    }
}

/// Oversampling factor for the sup in the weighted sup bound.
pub const SUP_OVERSAMPLING: usize = 8;

pub fn inequality_suite(
    eq: &Equation,
    u: &SpectralField,
    weight: WeightParams,
    probes: &[(f64, f64)],
) -> Result<InequalityReport> {
    for &(d, d1) in probes {
        if !(d > 0.0 && d1 > 0.0 && d.is_finite() && d1.is_finite()) {
            return Err(Error::Parameter(format!(
                "probe values must be positive (got delta = {d}, delta1 = {d1})"
            )));
        }
    }
    let b = weight.b;
    let g = *eq.geometry();
    let mut probe = Probe::new(eq, u, weight)?;
    probe.load(Source::State, &[(0, 0), (1, 0), (0, 1), (1, 1)])?;
    let (w_u, w_ux, w_uy, w_uxy) = (probe.sq(0, 0), probe.sq(1, 0), probe.sq(0, 1), probe.sq(1, 1));

    let steklov = InequalityCheck::new(w_u, g.width * g.width / (std::f64::consts::PI.powi(2)) * w_uy);

    let f = probe.u(0, 0);
    let l4_sq = weighted_integral(&[f, f, f, f], 0.0)?.max(0.0).sqrt();
    let norm = u.l2_norm_sq().sqrt();
    let grad = grad_norm_sq(u).sqrt();
    let ladyzhenskaya = InequalityCheck::new(l4_sq, 2.0 * norm * grad);
    let ladyzhenskaya_constant = if norm * grad > 0.0 { l4_sq / (norm * grad) } else { 0.0 };

    let fine = Grid::refined(&g, SUP_OVERSAMPLING, SUP_OVERSAMPLING * g.y_intervals());
    let dense = eq.derivative_on(u, 0, 0, fine)?;
    let mut sup = 0.0f64;
    for m in 0..fine.rows() {
        for (i, v) in dense.row(m).iter().enumerate() {
            sup = sup.max((2.0 * b * fine.x(i)).exp() * v * v);
        }
    }
    let sup_bound = probes
        .iter()
        .map(|&(d, d1)| {
            let rhs = d * (1.0 + 2.0 * b * b) * w_uy
                + 2.0 * d * w_uxy
                + 2.0 * d1 / d * w_ux
                + (1.0 / d) * (1.0 / d1 + 2.0 * d1 * b * b) * w_u;
            SupBoundProbe {
                delta: d,
                delta1: d1,
                check: InequalityCheck::new(sup, rhs),
            }
        })
        .collect();
    Ok(InequalityReport {
        steklov,
        ladyzhenskaya,
        ladyzhenskaya_constant,
        sup_bound,
    })
}

/// `||u0||^2 + (w, u0^2 + |grad u0|^2 + |grad u0x|^2 + u0^2 u0x^2
/// + |lap u0x|^2 + |d_x^5 u0|^2)`.
pub fn compute_j0(eq: &Equation, u0: &SpectralField, weight: WeightParams) -> Result<f64> {
    let mut probe = Probe::new(eq, u0, weight)?;
    probe.load(
        Source::State,
        &[(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (3, 0), (1, 2), (5, 0)],
    )?;
    let (u, ux) = (probe.u(0, 0), probe.u(1, 0));
    let lap_x = probe.u(3, 0).axpy(1.0, probe.u(1, 2))?;
    let quadratic = probe.sq(0, 0)
        + probe.sq(1, 0)
        + probe.sq(0, 1)
        + probe.sq(2, 0)
        + probe.sq(1, 1)
        + probe.w(&[&lap_x, &lap_x])
        + probe.sq(5, 0);
    let quartic = probe.w(&[u, u, ux, ux]);
    Ok(u0.l2_norm_sq() + quadratic + quartic)
}

/// Values of a closed-form test function and the derivatives the weak form
/// needs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TestValues {
    pub v: f64,
    pub vt: f64,
    pub vx: f64,
    pub vxx: f64,
    pub vxxx: f64,
    pub vy: f64,
    pub vxy: f64,
}

/// Smooth test function vanishing on both walls.
pub trait TestFunction: Sync {
    fn eval(&self, x: f64, y: f64, t: f64) -> TestValues;
}

/// `v = e^{-x^2} sin(pi y / B) (1 + t)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSineTest {
    pub width: f64,
}

impl TestFunction for GaussianSineTest {
    fn eval(&self, x: f64, y: f64, t: f64) -> TestValues {
        let q = std::f64::consts::PI / self.width;
        let e = (-x * x).exp();
        let (s, c) = (q * y).sin_cos();
        let time = 1.0 + t;
        // derivatives of e^{-x^2}: -2x, 4x^2 - 2, 12x - 8x^3
        let g = e * time;
        TestValues {
            v: g * s,
            vt: e * s,
            vx: -2.0 * x * g * s,
            vxx: (4.0 * x * x - 2.0) * g * s,
            vxxx: (12.0 * x - 8.0 * x.powi(3)) * g * s,
            vy: q * g * c,
            vxy: -2.0 * x * q * g * c,
        }
    }
}

/// Zero test function.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZeroTest;

impl TestFunction for ZeroTest {
    fn eval(&self, _: f64, _: f64, _: f64) -> TestValues {
        TestValues::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakFormResidual {
    pub terms: Vec<(String, f64)>,
    pub residual: f64,
    pub scale: f64,
    /// `|residual| / max(scale, EPS_FLOOR)`
    pub relative: f64,
}

/// Composite Simpson weights for `n >= 3` uniform samples; an even count
/// closes with the 3/8 rule on the last three intervals.
pub fn simpson_weights(n: usize, h: f64) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::Sampling(format!(
            "time quadrature needs at least 3 stored samples (got {n})"
        )));
    }
    let mut w = vec![0.0; n];
    let simpson_end = if n % 2 == 1 { n - 1 } else { n - 4 };
    let mut i = 0;
    while i + 2 <= simpson_end {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if n.is_multiple_of(2) {
        let s = n - 4;
        for (k, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
            w[s + k] += 3.0 * h / 8.0 * c;
        }
    }
    Ok(w)
}

/// Weak-form residual along a stored trajectory. `states` must be uniformly
/// spaced in time starting at the initial state. The quadratic term is
/// dropped when `eq` is linear.
pub fn weak_form_residual(
    eq: &Equation,
    states: &[SpectralField],
    v: &dyn TestFunction,
    weight: WeightParams,
) -> Result<WeakFormResidual> {
    if states.len() < 3 {
        return Err(Error::Sampling(format!(
            "weak form needs at least 3 stored states (got {})",
            states.len()
        )));
    }
    let t0 = states[0].time();
    let h = (states[states.len() - 1].time() - t0) / (states.len() - 1) as f64;
    for (i, s) in states.iter().enumerate() {
        let expect = t0 + h * i as f64;
        if h.is_nan() || h <= 0.0 || (s.time() - expect).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::Sampling("stored states are not uniformly spaced".into()));
        }
    }
    let b = weight.b;
    let nonlinear = eq.options().nonlinear;
    let grid = diagnostic_grid(eq);
    let weights = simpson_weights(states.len(), h)?;
    let test_fields = |t: f64| {
        let mut vals: Vec<TestValues> = Vec::with_capacity(grid.len());
        for m in 0..grid.rows() {
            for i in 0..grid.nx {
                vals.push(v.eval(grid.x(i), grid.y(m), t));
            }
        }
        let make = |parity: YParity, f: &dyn Fn(&TestValues) -> f64| {
            PhysicalField::new(grid, parity, vals.iter().map(f).collect()).expect("grid sized")
        };
        let v0 = make(YParity::Sine, &|p| p.v);
        let vt = make(YParity::Sine, &|p| p.vt);
        let flux = make(YParity::Sine, &|p| b * p.v + p.vx);
        let high = make(YParity::Sine, &|p| {
            p.vxxx + 3.0 * b * p.vxx + (3.0 * b * b - 1.0) * p.vx + (b.powi(3) - b - 1.0) * p.v
        });
        let cross = make(YParity::Cosine, &|p| b * p.vy + p.vxy);
        (v0, vt, flux, high, cross)
    };

    let mut time_term = 0.0;
    let mut flux_term = 0.0;
    let mut high_term = 0.0;
    let mut cross_term = 0.0;
    for (s, w) in states.iter().zip(&weights) {
        let (_, vt, flux, high, cross) = test_fields(s.time());
        let u = eq.derivative_on(s, 0, 0, grid)?;
        let uxx = eq.derivative_on(s, 2, 0, grid)?;
        let uy = eq.derivative_on(s, 0, 1, grid)?;
        time_term += w * -weighted_integral(&[&u, &vt], b)?;
        if nonlinear {
            flux_term += w * -0.5 * weighted_integral(&[&u, &u, &flux], b)?;
        }
        high_term += w * weighted_integral(&[&uxx, &high], b)?;
        cross_term += w * weighted_integral(&[&uy, &cross], b)?;
    }
    let last = &states[states.len() - 1];
    let (v_end, ..) = test_fields(last.time());
    let (v_start, ..) = test_fields(t0);
    let end = weighted_integral(&[&eq.derivative_on(last, 0, 0, grid)?, &v_end], b)?;
    let start = weighted_integral(&[&eq.derivative_on(&states[0], 0, 0, grid)?, &v_start], b)?;
    let terms = vec![
        ("(e^{bx} u, v)(T)".to_string(), end),
        ("-int (e^{bx} u, v_t)".to_string(), time_term),
        ("-1/2 int (e^{bx} u^2, bv + v_x)".to_string(), flux_term),
        ("int (e^{bx} u_xx, ...)".to_string(), high_term),
        ("int (e^{bx} u_y, b v_y + v_xy)".to_string(), cross_term),
        ("-(e^{bx} u0, v(0))".to_string(), -start),
    ];
    let residual: f64 = terms.iter().map(|t| t.1).sum();
    let scale = terms.iter().fold(0.0f64, |a, t| a.max(t.1.abs()));
    Ok(WeakFormResidual {
        terms,
        residual,
        scale,
        relative: residual.abs() / scale.max(EPS_FLOOR),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::StripGeometry;
    use rustfft::num_complex::Complex64;
    use std::f64::consts::PI;

    fn weight(b: f64) -> WeightParams {
        WeightParams::new(b).unwrap()
    }

    fn gaussian(eq: &Equation, amp: f64, xc: f64, width: f64, j: usize) -> SpectralField {
        let g = *eq.geometry();
        eq.basis()
            .project(|x, y| amp * (-((x - xc) / width).powi(2)).exp() * (j as f64 * PI * y / g.width).sin())
            .unwrap()
            .dealiased()
    }

    #[test]
    fn weight_bounds() {
        assert!(WeightParams::new(0.1).is_ok());
        assert!(WeightParams::new(max_weight_rate()).is_ok());
        let e = WeightParams::new(0.5).unwrap_err();
        assert!(e.to_string().contains("6b - 40b^3 >= 0"));
        assert!(WeightParams::new(0.0).is_err());
    }

    #[test]
    fn weighted_inner_gaussian() {
        // f = g = e^{-x^2} sin(y): sqrt(pi/2) e^{b^2/2} * pi/2
        let grid = Grid {
            width: PI,
            half_length: 12.0,
            nx: 256,
            y_intervals: 24,
        };
        let f = PhysicalField::from_fn(grid, YParity::Sine, |x, y| (-x * x).exp() * y.sin());
        let b = 0.1;
        let got = weighted_inner(&f, &f, weight(b)).unwrap();
        let expect = (PI / 2.0).sqrt() * (b * b / 2.0).exp() * PI / 2.0;
        assert!((got - expect).abs() < 1e-12, "{got} {expect}");
        assert!((expect - 1.978_637_987_9).abs() < 1e-3);
        let small = weighted_inner(&f, &f, weight(1e-15)).unwrap();
        let plain = (PI / 2.0).sqrt() * PI / 2.0;
        assert!((small - plain).abs() < 1e-12);
        let zero = PhysicalField::zeros(grid, YParity::Sine);
        assert_eq!(weighted_inner(&zero, &zero, weight(b)).unwrap(), 0.0);
        let other = PhysicalField::zeros(Grid { nx: 128, ..grid }, YParity::Sine);
        assert!(matches!(weighted_inner(&f, &other, weight(b)), Err(Error::Shape(_))));
    }

    #[test]
    fn snapshot_closed_forms() {
        let g = StripGeometry::new(PI, 12.0, 128, 8, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let zero = snapshot(&eq, &SpectralField::zeros(g), weight(0.1)).unwrap();
        assert_eq!(zero.l2_sq, 0.0);
        assert_eq!(zero.w_uxxy, 0.0);
        assert_eq!(zero.buffer_peak, 0.0);

        let u = eq.basis().project(|x, y| (-x * x).exp() * y.sin()).unwrap();
        let s = snapshot(&eq, &u, weight(0.1)).unwrap();
        let expect = (PI / 2.0).sqrt() * PI / 2.0;
        assert!((s.l2_sq - expect).abs() < 1e-10, "{}", s.l2_sq);
        assert!((expect - 1.9687).abs() < 1e-4);

        let mut c = SpectralField::zeros(g);
        c.add_real_mode(0, 1, Complex64::new(0.5, 0.0));
        let s = snapshot(&eq, &c, weight(0.1)).unwrap();
        assert!((s.w_uy - s.w_u).abs() < 1e-12 * s.w_u);
    }

    #[test]
    fn residuals_vanish_for_zero_state() {
        let g = StripGeometry::new(PI, 10.0, 32, 4, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let z = SpectralField::zeros(g);
        for id in IdentityId::ALL {
            let r = identity_residual(&eq, &z, weight(0.1), id).unwrap();
            assert_eq!(r.residual, 0.0);
            assert!(r.passes(1e-8));
        }
    }

    #[test]
    fn identities_hold_on_smooth_state() {
        let g = StripGeometry::new(PI, 30.0, 256, 16, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let u = gaussian(&eq, 0.3, 0.0, 1.0, 1)
            .axpy(1.0, &gaussian(&eq, 0.2, 1.0, 1.3, 2))
            .unwrap();
        for id in IdentityId::ALL {
            let r = identity_residual(&eq, &u, weight(0.1), id).unwrap();
            assert!(r.relative() < 1e-8, "{:?}: {} {:?}", id, r.relative(), r.terms);
        }
    }

    #[test]
    fn steklov_equality_and_second_mode() {
        let g = StripGeometry::new(2.0, 10.0, 64, 6, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let u1 = gaussian(&eq, 0.5, 0.0, 1.0, 1);
        let r = inequality_suite(&eq, &u1, weight(0.2), &[(1.0, 1.0)]).unwrap();
        assert!(r.steklov.margin.abs() < 1e-12 * r.steklov.rhs);
        let u2 = gaussian(&eq, 0.5, 0.0, 1.0, 2);
        let r = inequality_suite(&eq, &u2, weight(0.2), &[(1.0, 1.0)]).unwrap();
        assert!(r.steklov.margin > 0.0);
        assert!((r.steklov.lhs / r.steklov.rhs - 0.25).abs() < 1e-12);
        assert!(r.all_hold(1e-10));
        assert!(inequality_suite(&eq, &u2, weight(0.2), &[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn j0_single_mode_closed_form() {
        let g = StripGeometry::new(1.5, 4.0, 64, 4, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let c = Complex64::new(0.3, -0.4);
        let s = 2;
        let j = 2;
        let mut u = SpectralField::zeros(g);
        u.add_real_mode(s, j, c);
        let k = g.wavenumber(g.slot(s));
        let lambda = g.lambda(j);
        let c2 = c.norm_sqr();
        // each quadratic term: 2 |c|^2 * 2L * symbol
        let quad = 2.0 * c2 * 2.0 * g.half_length;
        let poly = 1.0 + k * k + lambda + k.powi(4) + k * k * lambda + k * k * (k * k + lambda).powi(2) + k.powi(10);
        let quartic = 6.0 * c2 * c2 * k * k * g.half_length / g.width;
        let expect = quad + quad * poly + quartic;
        let got = compute_j0(&eq, &u, weight(1e-15)).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect, "{got} {expect}");
        assert_eq!(compute_j0(&eq, &SpectralField::zeros(g), weight(0.1)).unwrap(), 0.0);
        let half = compute_j0(&eq, &u.scaled(0.5), weight(0.1)).unwrap();
        let full = compute_j0(&eq, &u, weight(0.1)).unwrap();
        assert!(half >= full / 16.0 && half <= full / 4.0);
    }

    #[test]
    fn simpson_rules() {
        assert!(simpson_weights(2, 0.1).is_err());
        for n in 3..9 {
            let h = 1.0 / (n - 1) as f64;
            let w = simpson_weights(n, h).unwrap();
            let cubic: f64 = (0..n).map(|i| w[i] * (i as f64 * h).powi(3)).sum();
            assert!((cubic - 0.25).abs() < 1e-14, "{n}");
        }
    }

    #[test]
    fn weak_form_trivial_cases() {
        let g = StripGeometry::new(PI, 10.0, 32, 4, 0.1).unwrap();
        let eq = Equation::new(g).unwrap();
        let zeros: Vec<_> = (0..3)
            .map(|i| SpectralField::zeros(g).with_time(0.1 * i as f64))
            .collect();
        let r = weak_form_residual(&eq, &zeros, &GaussianSineTest { width: PI }, weight(0.1)).unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.relative, 0.0);
        let u = gaussian(&eq, 0.3, 0.0, 1.0, 1);
        let states: Vec<_> = (0..3).map(|i| u.clone().with_time(0.1 * i as f64)).collect();
        let r = weak_form_residual(&eq, &states, &ZeroTest, weight(0.1)).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(matches!(
            weak_form_residual(&eq, &states[..2], &ZeroTest, weight(0.1)),
            Err(Error::Sampling(_))
        ));
    }
}
