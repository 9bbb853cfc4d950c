//! Line-oriented `key = value` experiment configuration.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::decay::Regime;
use crate::energy::WeightParams;
use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::field_file::read_field;
use crate::galerkin::{DecayingGaussianSine, ManufacturedTarget, TravelingPulse, ZeroTarget};
use crate::geometry::StripGeometry;
use crate::integrator::{IntegratorKind, SimConfig};
use crate::spectral::{NonlinearForm, RhsOptions};

/// Accepted keys and their defaults, as shown by `--help`.
pub const KEY_HELP: &str = "\
Config format: one `key = value` per line, `#` starts a comment.

  name              = \"default\"
  B                 = 3.141592653589793   strip width, B > 0
  L                 = 30                  half box length, L > 0
  Nx                = 256                 even, >= 16
  Ny                = 16                  >= 4
  buffer_frac       = 0.1                 0 < buffer_frac < 0.25
  b                 = 0.1                 weight exponent, 0 < b <= sqrt(0.6)/2
  dt                = 0.001
  T                 = 1                   integer multiple of dt
  sample_every      = 10                  steps between ledger samples
  integrator        = etdrk4              etdrk4 | imex-bdf2
  nonlinearity      = on                  on | off
  phi_taylor_radius = 0.5
  form              = divergence          divergence | convective
  dealias           = on
  initial_condition = gaussian_sine(0.3, 0, 1, 1)
                      gaussian_sine(amplitude, x_center, x_width, y_mode)
                      mode_sum((n, j, re, im), ...)   n is the signed Fourier index
                      file(\"path\")                    relative to the config file
                      zero
  initial_norm      = none                rescale u0 to this L2 norm
  experiment        = evolve              evolve | decay_cert | identity_suite |
                                          convergence | continuous_dependence |
                                          manufactured
  output_dir        = \"out\"
  residuals         = off                 identity residual columns in the ledger
  regime            = regular             regular | weak (decay_cert)
  override_threshold = off                (decay_cert)
  modes             = [Ny/2, Ny]          increasing mode counts (convergence)
  temporal          = off                 dt refinement at the largest N (convergence)
  scales            = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]   (continuous_dependence)
  perturbation      = gaussian_sine(1, 0, 1, 1)        (continuous_dependence)
  target            = decaying_gaussian_sine           | traveling_pulse(speed) | zero
  random_fields     = 0                   random states for the inequality suite
  seed              = 0                   overridden by --seed
";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeTerm {
    pub index: i64,
    pub mode: usize,
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    GaussianSine {
        amplitude: f64,
        x_center: f64,
        x_width: f64,
        y_mode: usize,
    },
    ModeSum(Vec<ModeTerm>),
    File(PathBuf),
    Zero,
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::GaussianSine {
            amplitude: 0.3,
            x_center: 0.0,
            x_width: 1.0,
            y_mode: 1,
        }
    }
}

impl InitialCondition {
    /// Builds the spectral data; relative file paths resolve against `base_dir`.
    pub fn build(&self, basis: &Basis, base_dir: &Path) -> Result<SpectralField> {
        let g = *basis.geometry();
        match self {
            InitialCondition::GaussianSine {
                amplitude,
                x_center,
                x_width,
                y_mode,
            } => {
                let k = *y_mode as f64 * PI / g.width;
                basis.project(|x, y| {
                    let s = (x - x_center) / x_width;
                    amplitude * (-s * s).exp() * (k * y).sin()
                })
            }
            InitialCondition::ModeSum(terms) => {
                let mut u = SpectralField::zeros(g);
                for t in terms {
                    u.add_real_mode(t.index, t.mode, Complex64::new(t.re, t.im));
                }
                Ok(u)
            }
            InitialCondition::File(path) => {
                let u = read_field(&base_dir.join(path))?;
                let h = u.geometry();
                if h.width != g.width || h.half_length != g.half_length || h.nx != g.nx || h.ny != g.ny {
                    return Err(Error::Config(format!(
                        "field file {} has B = {}, L = {}, Nx = {}, Ny = {}; the config requires B = {}, L = {}, Nx = {}, Ny = {}",
                        path.display(),
                        h.width,
                        h.half_length,
                        h.nx,
                        h.ny,
                        g.width,
                        g.half_length,
                        g.nx,
                        g.ny
                    )));
                }
                SpectralField::from_coeffs(g, u.coeffs().to_vec(), u.time())
            }
            InitialCondition::Zero => Ok(SpectralField::zeros(g)),
        }
    }

    fn validate(&self, g: &StripGeometry) -> std::result::Result<(), String> {
        match self {
            InitialCondition::GaussianSine {
                amplitude,
                x_center,
                x_width,
                y_mode,
            } => {
                if !amplitude.is_finite() || !x_center.is_finite() {
                    return Err("amplitude and x_center must be finite".into());
                }
                if !(x_width.is_finite() && *x_width > 0.0) {
                    return Err(format!("x_width must satisfy x_width > 0 (got {x_width})"));
                }
                if *y_mode == 0 || *y_mode > g.ny {
                    return Err(format!("y_mode must satisfy 1 <= j <= Ny = {} (got {y_mode})", g.ny));
                }
            }
            InitialCondition::ModeSum(terms) => {
                let half = (g.nx / 2) as i64;
                for t in terms {
                    if t.index <= -half || t.index >= half {
                        return Err(format!("mode index must satisfy |n| < Nx/2 = {half} (got {})", t.index));
                    }
                    if t.mode == 0 || t.mode > g.ny {
                        return Err(format!(
                            "sine mode must satisfy 1 <= j <= Ny = {} (got {})",
                            g.ny, t.mode
                        ));
                    }
                    if !t.re.is_finite() || !t.im.is_finite() {
                        return Err("mode amplitudes must be finite".into());
                    }
                }
            }
            InitialCondition::File(_) | InitialCondition::Zero => {}
        }
        Ok(())
    }

    fn write(&self, out: &mut String) {
        match self {
            InitialCondition::GaussianSine {
                amplitude,
                x_center,
                x_width,
                y_mode,
            } => {
                let _ = write!(out, "gaussian_sine({amplitude:?}, {x_center:?}, {x_width:?}, {y_mode})");
            }
            InitialCondition::ModeSum(terms) => {
                out.push_str("mode_sum(");
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    let _ = write!(out, "({}, {}, {:?}, {:?})", t.index, t.mode, t.re, t.im);
                }
                out.push(')');
            }
            InitialCondition::File(p) => {
                out.push_str("file(");
                write_string(out, &p.to_string_lossy());
                out.push(')');
            }
            InitialCondition::Zero => out.push_str("zero"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Evolve,
    DecayCert,
    IdentitySuite,
    Convergence,
    ContinuousDependence,
    Manufactured,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Evolve,
        ExperimentKind::DecayCert,
        ExperimentKind::IdentitySuite,
        ExperimentKind::Convergence,
        ExperimentKind::ContinuousDependence,
        ExperimentKind::Manufactured,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Evolve => "evolve",
            ExperimentKind::DecayCert => "decay_cert",
            ExperimentKind::IdentitySuite => "identity_suite",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::ContinuousDependence => "continuous_dependence",
            ExperimentKind::Manufactured => "manufactured",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    DecayingGaussianSine,
    TravelingPulse { speed: f64 },
    Zero,
}

impl TargetSpec {
    pub fn build(&self, width: f64) -> Box<dyn ManufacturedTarget> {
        match *self {
            TargetSpec::DecayingGaussianSine => Box::new(DecayingGaussianSine { width }),
            TargetSpec::TravelingPulse { speed } => Box::new(TravelingPulse { width, speed }),
            TargetSpec::Zero => Box::new(ZeroTarget),
        }
    }
}

/// Settings that only some experiments read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub residuals: bool,
    pub form: NonlinearForm,
    pub dealias: bool,
    pub regime: Regime,
    pub override_threshold: bool,
    pub modes: Vec<usize>,
    pub temporal: bool,
    pub scales: Vec<f64>,
    pub perturbation: InitialCondition,
    pub target: TargetSpec,
    pub random_fields: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub geometry: StripGeometry,
    pub weight: WeightParams,
    pub sim: SimConfig,
    pub initial_condition: InitialCondition,
    pub initial_norm: Option<f64>,
    pub experiment: ExperimentKind,
    pub output_dir: PathBuf,
    pub options: ExperimentOptions,
    /// Directory that relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        parse_config("").expect("defaults are valid")
    }
}

impl ExperimentSpec {
    pub fn rhs_options(&self) -> RhsOptions {
        RhsOptions {
            nonlinear: self.sim.nonlinearity_on,
            form: self.options.form,
            dealias: self.options.dealias,
            active_modes: None,
        }
    }

    /// Initial data, rescaled to `initial_norm` when set.
    pub fn initial_state(&self, basis: &Basis) -> Result<SpectralField> {
        let u = self.initial_condition.build(basis, &self.base_dir)?;
        match self.initial_norm {
            Some(target) => {
                let norm = u.l2_norm_sq().sqrt();
                if norm == 0.0 {
                    if target == 0.0 {
                        return Ok(u);
                    }
                    return Err(Error::Config("initial_norm cannot rescale zero initial data".into()));
                }
                Ok(u.scaled(target / norm))
            }
            None => Ok(u),
        }
    }

    pub fn perturbation_state(&self, basis: &Basis) -> Result<SpectralField> {
        self.options.perturbation.build(basis, &self.base_dir)
    }

    /// Serializes to the config format; `parse_config` inverts it exactly.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let g = &self.geometry;
        let sim = &self.sim;
        let o = &self.options;
        let onoff = |b: bool| if b { "on" } else { "off" };
        s.push_str("name = ");
        write_string(&mut s, &self.name);
        s.push('\n');
        let _ = writeln!(s, "B = {:?}", g.width);
        let _ = writeln!(s, "L = {:?}", g.half_length);
        let _ = writeln!(s, "Nx = {}", g.nx);
        let _ = writeln!(s, "Ny = {}", g.ny);
        let _ = writeln!(s, "buffer_frac = {:?}", g.buffer_frac);
        let _ = writeln!(s, "b = {:?}", self.weight.b);
        let _ = writeln!(s, "dt = {:?}", sim.dt);
        let _ = writeln!(s, "T = {:?}", sim.t_final);
        let _ = writeln!(s, "sample_every = {}", sim.sample_every);
        let _ = writeln!(
            s,
            "integrator = {}",
            match sim.integrator {
                IntegratorKind::Etdrk4 => "etdrk4",
                IntegratorKind::ImexBdf2 => "imex-bdf2",
            }
        );
        let _ = writeln!(s, "nonlinearity = {}", onoff(sim.nonlinearity_on));
        let _ = writeln!(s, "phi_taylor_radius = {:?}", sim.phi_taylor_radius);
        let _ = writeln!(
            s,
            "form = {}",
            match o.form {
                NonlinearForm::Divergence => "divergence",
                NonlinearForm::Convective => "convective",
            }
        );
        let _ = writeln!(s, "dealias = {}", onoff(o.dealias));
        s.push_str("initial_condition = ");
        self.initial_condition.write(&mut s);
        s.push('\n');
        match self.initial_norm {
            Some(v) => {
                let _ = writeln!(s, "initial_norm = {v:?}");
            }
            None => s.push_str("initial_norm = none\n"),
        }
        let _ = writeln!(s, "experiment = {}", self.experiment.name());
        s.push_str("output_dir = ");
        write_string(&mut s, &self.output_dir.to_string_lossy());
        s.push('\n');
        let _ = writeln!(s, "residuals = {}", onoff(o.residuals));
        let _ = writeln!(
            s,
            "regime = {}",
            match o.regime {
                Regime::Regular => "regular",
                Regime::Weak => "weak",
            }
        );
        let _ = writeln!(s, "override_threshold = {}", onoff(o.override_threshold));
        let modes: Vec<String> = o.modes.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "modes = [{}]", modes.join(", "));
        let _ = writeln!(s, "temporal = {}", onoff(o.temporal));
        let scales: Vec<String> = o.scales.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "scales = [{}]", scales.join(", "));
        s.push_str("perturbation = ");
        o.perturbation.write(&mut s);
        s.push('\n');
        match o.target {
            TargetSpec::DecayingGaussianSine => s.push_str("target = decaying_gaussian_sine\n"),
            TargetSpec::TravelingPulse { speed } => {
                let _ = writeln!(s, "target = traveling_pulse({speed:?})");
            }
            TargetSpec::Zero => s.push_str("target = zero\n"),
        }
        let _ = writeln!(s, "random_fields = {}", o.random_fields);
        let _ = writeln!(s, "seed = {}", o.seed);
        s
    }
}

fn write_string(out: &mut String, text: &str) {
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

#[derive(Clone, Debug, PartialEq)]
enum Value {
    Number(String),
    Word(String),
    Text(String),
    Call(String, Vec<Node>),
    Tuple(Vec<Node>),
    List(Vec<Node>),
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    column: usize,
    value: Value,
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Lexer {
    fn new(text: &str, line: usize) -> Self {
        Lexer {
            chars: text.chars().collect(),
            pos: 0,
            line,
        }
    }

    fn err(&self, column: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn value(&mut self) -> Result<Node> {
        self.skip_ws();
        let column = self.column();
        let Some(c) = self.peek() else {
            return Err(self.err(column, "expected a value"));
        };
        let value = if c == '"' {
            self.pos += 1;
            let mut s = String::new();
            loop {
                match self.peek() {
                    None => return Err(self.err(column, "unterminated string")),
                    Some('"') => {
                        self.pos += 1;
                        break;
                    }
                    Some('\\') => {
                        self.pos += 1;
                        let esc = match self.peek() {
                            Some('"') => '"',
                            Some('\\') => '\\',
                            Some('n') => '\n',
                            Some('t') => '\t',
                            _ => return Err(self.err(self.column(), "invalid escape")),
                        };
                        s.push(esc);
                        self.pos += 1;
                    }
                    Some(d) => {
                        s.push(d);
                        self.pos += 1;
                    }
                }
            }
            Value::Text(s)
        } else if c == '(' || c == '[' {
            self.pos += 1;
            let close = if c == '(' { ')' } else { ']' };
            let items = self.items(close)?;
            if c == '(' {
                Value::Tuple(items)
            } else {
                Value::List(items)
            }
        } else if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' {
            let start = self.pos;
            while let Some(d) = self.peek() {
                if d.is_ascii_alphanumeric() || matches!(d, '-' | '+' | '.') {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            Value::Number(self.chars[start..self.pos].iter().collect())
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = self.pos;
            while let Some(d) = self.peek() {
                if d.is_ascii_alphanumeric() || matches!(d, '_' | '-' | '.' | '/') {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            let word: String = self.chars[start..self.pos].iter().collect();
            self.skip_ws();
            if self.peek() == Some('(') {
                self.pos += 1;
                Value::Call(word, self.items(')')?)
            } else {
                Value::Word(word)
            }
        } else {
            return Err(self.err(column, format!("unexpected character `{c}`")));
        };
        Ok(Node { column, value })
    }

    fn items(&mut self, close: char) -> Result<Vec<Node>> {
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(close) {
            self.pos += 1;
            return Ok(items);
        }
        loop {
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(d) if d == close => {
                    self.pos += 1;
                    return Ok(items);
                }
                Some(d) => return Err(self.err(self.column(), format!("expected `,` or `{close}`, found `{d}`"))),
                None => return Err(self.err(self.column(), format!("expected `{close}`"))),
            }
        }
    }

    fn finish(&mut self) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            None => Ok(()),
            Some(c) => Err(self.err(self.column(), format!("unexpected trailing `{c}`"))),
        }
    }
}

/// Line and column of a value, for diagnostics.
#[derive(Clone, Copy, Debug)]
struct Pos {
    line: usize,
    column: usize,
}

fn fail(pos: Pos, message: impl Into<String>) -> Error {
    Error::Parse {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn at(pos: Pos, node: &Node) -> Pos {
    Pos {
        line: pos.line,
        column: node.column,
    }
}

fn describe(v: &Value) -> String {
    match v {
        Value::Number(s) | Value::Word(s) => format!("`{s}`"),
        Value::Text(s) => format!("\"{s}\""),
        Value::Call(name, _) => format!("`{name}(...)`"),
        Value::Tuple(_) => "a tuple".into(),
        Value::List(_) => "a list".into(),
    }
}

fn as_f64(pos: Pos, node: &Node, key: &str) -> Result<f64> {
    match &node.value {
        Value::Number(s) => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(fail(
                at(pos, node),
                format!("`{key}` must be a finite number (got `{s}`)"),
            )),
        },
        Value::Word(w) if w == "pi" => Ok(PI),
        v => Err(fail(
            at(pos, node),
            format!("`{key}` must be a number (got {})", describe(v)),
        )),
    }
}

fn as_usize(pos: Pos, node: &Node, key: &str) -> Result<usize> {
    match &node.value {
        Value::Number(s) => s.parse::<usize>().map_err(|_| {
            fail(
                at(pos, node),
                format!("`{key}` must be a non-negative integer (got `{s}`)"),
            )
        }),
        v => Err(fail(
            at(pos, node),
            format!("`{key}` must be an integer (got {})", describe(v)),
        )),
    }
}

fn as_u64(pos: Pos, node: &Node, key: &str) -> Result<u64> {
    match &node.value {
        Value::Number(s) => s.parse::<u64>().map_err(|_| {
            fail(
                at(pos, node),
                format!("`{key}` must be a non-negative integer (got `{s}`)"),
            )
        }),
        v => Err(fail(
            at(pos, node),
            format!("`{key}` must be an integer (got {})", describe(v)),
        )),
    }
}

fn as_i64(pos: Pos, node: &Node, key: &str) -> Result<i64> {
    match &node.value {
        Value::Number(s) => s
            .parse::<i64>()
            .map_err(|_| fail(at(pos, node), format!("`{key}` must be an integer (got `{s}`)"))),
        v => Err(fail(
            at(pos, node),
            format!("`{key}` must be an integer (got {})", describe(v)),
        )),
    }
}

fn as_word<'n>(pos: Pos, node: &'n Node, key: &str, choices: &[&str]) -> Result<&'n str> {
    match &node.value {
        Value::Word(w) if choices.contains(&w.as_str()) => Ok(w),
        v => Err(fail(
            at(pos, node),
            format!("`{key}` must be one of {} (got {})", choices.join(" | "), describe(v)),
        )),
    }
}

fn as_bool(pos: Pos, node: &Node, key: &str) -> Result<bool> {
    let w = as_word(pos, node, key, &["on", "off", "true", "false", "yes", "no"])?;
    Ok(matches!(w, "on" | "true" | "yes"))
}

fn as_text(pos: Pos, node: &Node, key: &str) -> Result<String> {
    match &node.value {
        Value::Text(s) | Value::Word(s) => Ok(s.clone()),
        v => Err(fail(
            at(pos, node),
            format!("`{key}` must be a string (got {})", describe(v)),
        )),
    }
}

fn as_list<'n>(pos: Pos, node: &'n Node, key: &str) -> Result<&'n [Node]> {
    let items: &[Node] = match &node.value {
        Value::List(items) | Value::Tuple(items) => items,
        _ => std::slice::from_ref(node),
    };
    if items.is_empty() {
        return Err(fail(at(pos, node), format!("`{key}` must not be empty")));
    }
    Ok(items)
}

fn arity(pos: Pos, node: &Node, name: &str, args: &[Node], n: usize) -> Result<()> {
    if args.len() != n {
        return Err(fail(
            at(pos, node),
            format!("`{name}` takes {n} arguments (got {})", args.len()),
        ));
    }
    Ok(())
}

fn as_initial(pos: Pos, node: &Node, key: &str) -> Result<InitialCondition> {
    match &node.value {
        Value::Word(w) if w == "zero" => Ok(InitialCondition::Zero),
        Value::Call(name, args) if name == "gaussian_sine" => {
            arity(pos, node, name, args, 4)?;
            Ok(InitialCondition::GaussianSine {
                amplitude: as_f64(pos, &args[0], "amplitude")?,
                x_center: as_f64(pos, &args[1], "x_center")?,
                x_width: as_f64(pos, &args[2], "x_width")?,
                y_mode: as_usize(pos, &args[3], "y_mode")?,
            })
        }
        Value::Call(name, args) if name == "mode_sum" => {
            let mut terms = Vec::with_capacity(args.len());
            for a in args {
                let Value::Tuple(t) = &a.value else {
                    return Err(fail(at(pos, a), "mode_sum terms are tuples `(n, j, re, im)`"));
                };
                arity(pos, a, "mode_sum term", t, 4)?;
                terms.push(ModeTerm {
                    index: as_i64(pos, &t[0], "n")?,
                    mode: as_usize(pos, &t[1], "j")?,
                    re: as_f64(pos, &t[2], "re")?,
                    im: as_f64(pos, &t[3], "im")?,
                });
            }
            Ok(InitialCondition::ModeSum(terms))
        }
        Value::Call(name, args) if name == "file" => {
            arity(pos, node, name, args, 1)?;
            Ok(InitialCondition::File(PathBuf::from(as_text(
                pos,
                &args[0],
                "file path",
            )?)))
        }
        v => Err(fail(
            at(pos, node),
            format!(
                "`{key}` must be gaussian_sine(...), mode_sum(...), file(...) or zero (got {})",
                describe(v)
            ),
        )),
    }
}

fn as_target(pos: Pos, node: &Node) -> Result<TargetSpec> {
    match &node.value {
        Value::Word(w) if w == "decaying_gaussian_sine" => Ok(TargetSpec::DecayingGaussianSine),
        Value::Word(w) if w == "zero" => Ok(TargetSpec::Zero),
        Value::Call(name, args) if name == "traveling_pulse" => {
            arity(pos, node, name, args, 1)?;
            Ok(TargetSpec::TravelingPulse {
                speed: as_f64(pos, &args[0], "speed")?,
            })
        }
        v => Err(fail(
            at(pos, node),
            format!(
                "`target` must be decaying_gaussian_sine, traveling_pulse(speed) or zero (got {})",
                describe(v)
            ),
        )),
    }
}

const KEYS: [&str; 29] = [
    "name",
    "B",
    "L",
    "Nx",
    "Ny",
    "buffer_frac",
    "b",
    "dt",
    "T",
    "sample_every",
    "integrator",
    "nonlinearity",
    "phi_taylor_radius",
    "form",
    "dealias",
    "initial_condition",
    "initial_norm",
    "experiment",
    "output_dir",
    "residuals",
    "regime",
    "override_threshold",
    "modes",
    "temporal",
    "scales",
    "perturbation",
    "target",
    "random_fields",
    "seed",
];

/// Parses with relative paths resolved against the current directory.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    parse_config_in(text, Path::new("."))
}

/// Parses and fully validates a config; every failure is an
/// [`Error::Parse`] carrying the offending line and column (line 0 when the
/// violated bound involves only defaults).
pub fn parse_config_in(text: &str, base_dir: &Path) -> Result<ExperimentSpec> {
    let mut entries: HashMap<&'static str, (Pos, Node)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = strip_comment(raw);
        if body.trim().is_empty() {
            continue;
        }
        let Some(eq) = body.find('=') else {
            let column = body.len() - body.trim_start().len() + 1;
            return Err(Error::Parse {
                line,
                column,
                message: "expected `key = value`".into(),
            });
        };
        let key = body[..eq].trim();
        let key_col = body.len() - body.trim_start().len() + 1;
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            return Err(Error::Parse {
                line,
                column: key_col,
                message: if key.is_empty() {
                    "missing key before `=`".into()
                } else {
                    format!("unknown key `{key}`")
                },
            });
        };
        let prefix: String = body[..=eq].chars().collect();
        let offset = prefix.chars().count();
        let mut lex = Lexer::new(&body[eq + 1..], line);
        let mut node = lex.value().map_err(|e| shift(e, offset))?;
        lex.finish().map_err(|e| shift(e, offset))?;
        shift_node(&mut node, offset);
        let pos = Pos {
            line,
            column: node.column,
        };
        if let Some((prev, _)) = entries.get(known) {
            return Err(Error::Parse {
                line,
                column: key_col,
                message: format!("duplicate key `{key}` (first set on line {})", prev.line),
            });
        }
        entries.insert(known, (pos, node));
    }
    build(&entries, base_dir)
}

fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            '\\' if in_string && !escaped => {
                escaped = true;
                continue;
            }
            '"' if !escaped => in_string = !in_string,
            '#' if !in_string => return &line[..i],
            _ => {}
        }
        escaped = false;
    }
    line
}

fn shift(e: Error, offset: usize) -> Error {
    match e {
        Error::Parse { line, column, message } => Error::Parse {
            line,
            column: column + offset,
            message,
        },
        e => e,
    }
}

fn shift_node(node: &mut Node, offset: usize) {
    node.column += offset;
    match &mut node.value {
        Value::Call(_, items) | Value::Tuple(items) | Value::List(items) => {
            for n in items {
                shift_node(n, offset);
            }
        }
        _ => {}
    }
}

fn build(entries: &HashMap<&'static str, (Pos, Node)>, base_dir: &Path) -> Result<ExperimentSpec> {
    let get = |key: &str| entries.get(key);
    let pos_of = |key: &str| get(key).map(|(p, _)| *p).unwrap_or(Pos { line: 0, column: 0 });

    macro_rules! read {
        ($key:literal, $conv:ident, $default:expr) => {
            match get($key) {
                Some((p, n)) => $conv(*p, n, $key)?,
                None => $default,
            }
        };
    }

    let name = read!("name", as_text, "default".to_string());
    let width = read!("B", as_f64, PI);
    let half_length = read!("L", as_f64, 30.0);
    let nx = read!("Nx", as_usize, 256);
    let ny = read!("Ny", as_usize, 16);
    let buffer_frac = read!("buffer_frac", as_f64, 0.1);
    let geometry = StripGeometry {
        width,
        half_length,
        nx,
        ny,
        buffer_frac,
    };
    if let Err(e) = geometry.validate() {
        let msg = bare_message(e);
        let key = ["buffer_frac", "B", "L", "Nx", "Ny"]
            .into_iter()
            .find(|k| msg.starts_with(&format!("{k} ")))
            .unwrap_or("B");
        return Err(fail(pos_of(key), msg));
    }

    let b = read!("b", as_f64, 0.1);
    let weight = WeightParams::new(b).map_err(|e| fail(pos_of("b"), bare_message(e)))?;

    let integrator = match get("integrator") {
        Some((p, n)) => match as_word(*p, n, "integrator", &["etdrk4", "imex-bdf2", "imex_bdf2"])? {
            "etdrk4" => IntegratorKind::Etdrk4,
            _ => IntegratorKind::ImexBdf2,
        },
        None => IntegratorKind::Etdrk4,
    };
    let sim = SimConfig {
        dt: read!("dt", as_f64, 1e-3),
        t_final: read!("T", as_f64, 1.0),
        sample_every: read!("sample_every", as_usize, 10),
        integrator,
        nonlinearity_on: read!("nonlinearity", as_bool, true),
        phi_taylor_radius: read!("phi_taylor_radius", as_f64, 0.5),
    };
    if let Err(e) = sim.validate().and_then(|_| sim.steps().map(|_| ())) {
        let msg = bare_message(e);
        let key = ["sample_every", "phi_taylor_radius", "dt", "T"]
            .into_iter()
            .find(|k| msg.starts_with(&format!("{k} ")))
            .unwrap_or("T");
        return Err(fail(pos_of(key), msg));
    }

    let form = match get("form") {
        Some((p, n)) => match as_word(*p, n, "form", &["divergence", "convective"])? {
            "divergence" => NonlinearForm::Divergence,
            _ => NonlinearForm::Convective,
        },
        None => NonlinearForm::Divergence,
    };
    let dealias = read!("dealias", as_bool, true);

    let initial_condition = read!("initial_condition", as_initial, InitialCondition::default());
    let ic_pos = pos_of("initial_condition");
    initial_condition.validate(&geometry).map_err(|m| fail(ic_pos, m))?;
    check_file(&initial_condition, &geometry, base_dir, ic_pos)?;

    let initial_norm = match get("initial_norm") {
        Some((
            _,
            Node {
                value: Value::Word(w), ..
            },
        )) if w == "none" => None,
        Some((p, n)) => {
            let v = as_f64(*p, n, "initial_norm")?;
            if v < 0.0 {
                return Err(fail(
                    *p,
                    format!("initial_norm must satisfy initial_norm >= 0 (got {v})"),
                ));
            }
            Some(v)
        }
        None => None,
    };

    let experiment = match get("experiment") {
        Some((p, n)) => {
            let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            let w = as_word(*p, n, "experiment", &names)?;
            *ExperimentKind::ALL.iter().find(|k| k.name() == w).expect("listed")
        }
        None => ExperimentKind::Evolve,
    };
    let output_dir = PathBuf::from(read!("output_dir", as_text, "out".to_string()));

    let regime = match get("regime") {
        Some((p, n)) => match as_word(*p, n, "regime", &["regular", "weak"])? {
            "regular" => Regime::Regular,
            _ => Regime::Weak,
        },
        None => Regime::Regular,
    };

    let modes = match get("modes") {
        Some((p, n)) => {
            let items = as_list(*p, n, "modes")?;
            let mut modes = Vec::with_capacity(items.len());
            for item in items {
                let m = as_usize(*p, item, "modes")?;
                if m == 0 || m > ny {
                    return Err(fail(
                        at(*p, item),
                        format!("modes must satisfy 1 <= N <= Ny = {ny} (got {m})"),
                    ));
                }
                if modes.last().is_some_and(|&last| m <= last) {
                    return Err(fail(at(*p, item), "modes must be strictly increasing"));
                }
                modes.push(m);
            }
            modes
        }
        None => {
            let half = (ny / 2).max(1);
            if half == ny {
                vec![ny]
            } else {
                vec![half, ny]
            }
        }
    };

    let scales = match get("scales") {
        Some((p, n)) => {
            let items = as_list(*p, n, "scales")?;
            items
                .iter()
                .map(|item| {
                    let s = as_f64(*p, item, "scales")?;
                    if s < 0.0 {
                        Err(fail(at(*p, item), format!("scales must be non-negative (got {s})")))
                    } else {
                        Ok(s)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
    };

    let perturbation = read!(
        "perturbation",
        as_initial,
        InitialCondition::GaussianSine {
            amplitude: 1.0,
            x_center: 0.0,
            x_width: 1.0,
            y_mode: 1,
        }
    );
    let p_pos = pos_of("perturbation");
    perturbation.validate(&geometry).map_err(|m| fail(p_pos, m))?;
    check_file(&perturbation, &geometry, base_dir, p_pos)?;

    let target = match get("target") {
        Some((p, n)) => as_target(*p, n)?,
        None => TargetSpec::DecayingGaussianSine,
    };

    let options = ExperimentOptions {
        residuals: read!("residuals", as_bool, false),
        form,
        dealias,
        regime,
        override_threshold: read!("override_threshold", as_bool, false),
        modes,
        temporal: read!("temporal", as_bool, false),
        scales,
        perturbation,
        target,
        random_fields: read!("random_fields", as_usize, 0),
        seed: read!("seed", as_u64, 0),
    };

    Ok(ExperimentSpec {
        name,
        geometry,
        weight,
        sim,
        initial_condition,
        initial_norm,
        experiment,
        output_dir,
        options,
        base_dir: base_dir.to_path_buf(),
    })
}

fn bare_message(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        e => e.to_string(),
    }
}

fn check_file(ic: &InitialCondition, g: &StripGeometry, base_dir: &Path, pos: Pos) -> Result<()> {
    if let InitialCondition::File(path) = ic {
        let full = base_dir.join(path);
        if !full.is_file() {
            return Err(fail(pos, format!("referenced file {} does not exist", full.display())));
        }
        let basis = Basis::new(*g).map_err(|e| fail(pos, e.to_string()))?;
        ic.build(&basis, base_dir).map_err(|e| match e {
            Error::Parse { line, column, message } => {
                fail(pos, format!("{}:{line}:{column}: {message}", full.display()))
            }
            e => fail(pos, e.to_string()),
        })?;
    }
    Ok(())
}
