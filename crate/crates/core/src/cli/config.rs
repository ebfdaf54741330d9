//! Run configuration files.
//!
//! ```toml
//! [problem]
//! domain = "interval"
//! length = 1.0
//! horizon = 0.1
//! alpha = 0.5
//! boundary = "dirichlet_strong"
//!
//! [problem.operator]
//! kind = "laplacian"
//! diffusion = 1.0
//!
//! [problem.u0]
//! kind = "sin_mode"
//!
//! [grid]
//! nt = 400
//! nx = 200
//!
//! [study]
//! kind = "solve"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fracops::{FractionalOrder, MultiTermOrder, TimeGrid, TimeOrder};
use crate::geometry::{BoundaryKind, DomainGeometry};
use crate::operators::EllipticOperator;
use crate::oracles::EigenMode;
use crate::solver::{ProblemSpec, Stepping};

use super::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub grid: GridSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Interval,
    Rectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub domain: DomainKind,
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub lengths: Option<[f64; 2]>,
    #[serde(alias = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// `[[λ, α], ...]` pairs.
    #[serde(default)]
    pub multi_term: Option<Vec<[f64; 2]>>,
    pub operator: EllipticOperator,
    pub u0: InitialData,
    pub boundary: BoundaryKind,
}

fn unit() -> f64 {
    1.0
}

fn fundamental() -> [u32; 2] {
    [1, 1]
}

/// Catalog of initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `A Π sin(k_i π x_i / L_i)`.
    SinMode {
        #[serde(default = "fundamental")]
        modes: [u32; 2],
        #[serde(default = "unit")]
        amplitude: f64,
    },
    /// `A Π cos(k_i π x_i / L_i)`.
    CosMode {
        #[serde(default = "fundamental")]
        modes: [u32; 2],
        #[serde(default = "unit")]
        amplitude: f64,
    },
    /// `A exp(1 - 1/(1 - r²))` for `r = |x - c| / R < 1`, zero outside.
    Bump {
        #[serde(default)]
        center: Option<[f64; 2]>,
        radius: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
    Zero,
    /// Node values, one per line (comments with `#`), in node order.
    Table {
        path: PathBuf,
    },
}

impl InitialData {
    pub fn sample(&self, geom: &DomainGeometry, base: &Path) -> Result<Vec<f64>, CliError> {
        let dim = geom.dim();
        let center_default = [
            0.5 * geom.length(0),
            if dim == 2 { 0.5 * geom.length(1) } else { 0.0 },
        ];
        Ok(match self {
            InitialData::SinMode { modes, amplitude } => geom.sample(|x| {
                amplitude
                    * (0..dim)
                        .map(|a| {
                            (modes[a] as f64 * std::f64::consts::PI * x[a] / geom.length(a)).sin()
                        })
                        .product::<f64>()
            }),
            InitialData::CosMode { modes, amplitude } => geom.sample(|x| {
                amplitude
                    * (0..dim)
                        .map(|a| {
                            (modes[a] as f64 * std::f64::consts::PI * x[a] / geom.length(a)).cos()
                        })
                        .product::<f64>()
            }),
            InitialData::Bump {
                center,
                radius,
                amplitude,
            } => {
                let c = center.unwrap_or(center_default);
                geom.sample(|x| {
                    let r2 =
                        (0..dim).map(|a| (x[a] - c[a]).powi(2)).sum::<f64>() / (radius * radius);
                    if r2 < 1.0 {
                        amplitude * (1.0 - 1.0 / (1.0 - r2)).exp()
                    } else {
                        0.0
                    }
                })
            }
            InitialData::Zero => vec![0.0; geom.node_count()],
            InitialData::Table { path } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    CliError::Config(format!(
                        "problem.u0.path: cannot read {}: {e}",
                        full.display()
                    ))
                })?;
                let mut values = Vec::new();
                for (line_no, line) in text.lines().enumerate() {
                    let line = line.split('#').next().unwrap_or("").trim();
                    if line.is_empty() {
                        continue;
                    }
                    let v: f64 = line.parse().map_err(|e| {
                        CliError::Config(format!("{}:{}: {e}", full.display(), line_no + 1))
                    })?;
                    values.push(v);
                }
                if values.len() != geom.node_count() {
                    return Err(CliError::Config(format!(
                        "{}: {} values for a grid of {} nodes",
                        full.display(),
                        values.len(),
                        geom.node_count()
                    )));
                }
                values
            }
        })
    }

    /// The Laplacian eigenmode this data is a multiple of, if any.
    pub fn eigenmode(
        &self,
        geom: &DomainGeometry,
        boundary: BoundaryKind,
    ) -> Option<(EigenMode, f64)> {
        match (self, boundary) {
            (InitialData::SinMode { modes, amplitude }, BoundaryKind::DirichletStrong)
            | (InitialData::CosMode { modes, amplitude }, BoundaryKind::NeumannViscosity) => {
                EigenMode::new(*geom, *modes, boundary)
                    .ok()
                    .map(|m| (m, *amplitude))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cells {
    Uniform(usize),
    PerAxis([usize; 2]),
}

fn implicit() -> Stepping {
    Stepping::ImplicitFixedPoint
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nt: usize,
    pub nx: Cells,
    #[serde(default = "implicit")]
    pub stepping: Stepping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    #[default]
    Solve,
    Convergence,
    Verify,
    Compare,
    Envelope,
    Oracle,
}

fn three() -> usize {
    3
}

fn two() -> usize {
    2
}

fn members() -> usize {
    32
}

fn pairs() -> usize {
    20
}

fn eps_default() -> Vec<f64> {
    vec![0.02, 0.05, 0.1]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCall {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default)]
    pub kind: StudyKind,
    /// Convergence levels (`≥ 3`).
    #[serde(default = "three")]
    pub levels: usize,
    /// Time refinement factor per level; space always doubles.
    #[serde(default = "two")]
    pub time_factor: usize,
    /// Orders for the `α → 1` study run by `verify`.
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// Random test quadratics for viscosity checks.
    #[serde(default = "members")]
    pub members: usize,
    /// Randomized ordered pairs for `compare`.
    #[serde(default = "pairs")]
    pub pairs: usize,
    /// Envelope parameters.
    #[serde(default = "eps_default")]
    pub eps: Vec<f64>,
    /// Build and check barriers in `verify`.
    #[serde(default = "yes")]
    pub barriers: bool,
    #[serde(default)]
    pub oracle: Option<OracleCall>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            kind: StudyKind::Solve,
            levels: three(),
            time_factor: two(),
            alphas: Vec::new(),
            members: members(),
            pairs: pairs(),
            eps: eps_default(),
            barriers: true,
            oracle: None,
        }
    }
}

fn out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn seventeen() -> usize {
    17
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "out_dir")]
    pub directory: PathBuf,
    #[serde(default = "yes")]
    pub emit_csv: bool,
    #[serde(default = "yes")]
    pub emit_svg: bool,
    /// Significant digits in CSV output, `1..=17`.
    #[serde(default = "seventeen")]
    pub precision: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: out_dir(),
            emit_csv: true,
            emit_svg: true,
            precision: seventeen(),
        }
    }
}

fn range_error(field: &str, value: impl std::fmt::Display, expected: &str) -> CliError {
    CliError::Config(format!(
        "{field} = {value} is out of range: expected {expected}"
    ))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        match p.domain {
            DomainKind::Interval => {
                if p.lengths.is_some() {
                    return Err(CliError::Config(
                        "problem.lengths applies to rectangles; use problem.length".into(),
                    ));
                }
                let l = p.length.unwrap_or(1.0);
                if !(l.is_finite() && l > 0.0) {
                    return Err(range_error("problem.length", l, "a positive length"));
                }
                if let Cells::PerAxis(_) = self.grid.nx {
                    return Err(CliError::Config(
                        "grid.nx must be a single integer on an interval".into(),
                    ));
                }
            }
            DomainKind::Rectangle => {
                if p.length.is_some() {
                    return Err(CliError::Config(
                        "problem.length applies to intervals; use problem.lengths".into(),
                    ));
                }
                for l in p.lengths.unwrap_or([1.0, 1.0]) {
                    if !(l.is_finite() && l > 0.0) {
                        return Err(range_error("problem.lengths", l, "positive lengths"));
                    }
                }
            }
        }
        if !(p.horizon.is_finite() && p.horizon > 0.0) {
            return Err(range_error(
                "problem.horizon",
                p.horizon,
                "a positive horizon",
            ));
        }
        match (&p.alpha, &p.multi_term) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "give either problem.alpha or problem.multi_term, not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "missing problem.alpha (or problem.multi_term)".into(),
                ))
            }
            (Some(a), None) => {
                if !(*a > 0.0 && *a <= 1.0) {
                    return Err(range_error("problem.alpha", a, "0 < alpha <= 1"));
                }
            }
            (None, Some(terms)) => {
                if terms.is_empty() {
                    return Err(CliError::Config(
                        "problem.multi_term must list at least one [lambda, alpha] pair".into(),
                    ));
                }
                for [lambda, a] in terms {
                    if !(lambda.is_finite() && *lambda > 0.0) {
                        return Err(range_error(
                            "problem.multi_term lambda",
                            lambda,
                            "lambda > 0",
                        ));
                    }
                    if !(*a > 0.0 && *a <= 1.0) {
                        return Err(range_error("problem.multi_term alpha", a, "0 < alpha <= 1"));
                    }
                }
            }
        }
        p.operator
            .validate()
            .map_err(|e| CliError::Config(format!("problem.operator: {e}")))?;
        if let InitialData::Bump { radius, .. } = p.u0 {
            if !(radius.is_finite() && radius > 0.0) {
                return Err(range_error(
                    "problem.u0.radius",
                    radius,
                    "a positive radius",
                ));
            }
        }
        if self.grid.nt < 2 {
            return Err(range_error("grid.nt", self.grid.nt, "at least 2"));
        }
        let cells = match self.grid.nx {
            Cells::Uniform(n) => [n, n],
            Cells::PerAxis(c) => c,
        };
        if cells.iter().any(|&c| c < 2) {
            return Err(range_error(
                "grid.nx",
                format!("{cells:?}"),
                "at least 2 cells per axis",
            ));
        }
        let s = &self.study;
        if s.kind == StudyKind::Convergence && s.levels < 3 {
            return Err(range_error("study.levels", s.levels, "at least 3"));
        }
        if s.time_factor < 1 {
            return Err(range_error(
                "study.time_factor",
                s.time_factor,
                "at least 1",
            ));
        }
        if s.alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0))
            || s.alphas.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(range_error(
                "study.alphas",
                format!("{:?}", s.alphas),
                "increasing values in (0, 1]",
            ));
        }
        if s.eps.is_empty() || s.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(range_error(
                "study.eps",
                format!("{:?}", s.eps),
                "positive values",
            ));
        }
        if s.kind == StudyKind::Oracle && s.oracle.is_none() {
            return Err(CliError::Config(
                "study.kind = \"oracle\" needs a [study.oracle] table".into(),
            ));
        }
        if !(1..=17).contains(&self.output.precision) {
            return Err(range_error(
                "output.precision",
                self.output.precision,
                "1..=17",
            ));
        }
        Ok(())
    }

    pub fn order(&self) -> Result<TimeOrder, CliError> {
        let cfg = |e: crate::fracops::FracError| CliError::Config(format!("problem: {e}"));
        match (&self.problem.alpha, &self.problem.multi_term) {
            (Some(a), _) => Ok(FractionalOrder::new(*a).map_err(cfg)?.into()),
            (None, Some(terms)) => {
                let terms = terms
                    .iter()
                    .map(|[l, a]| Ok((*l, FractionalOrder::new(*a)?)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(cfg)?;
                Ok(MultiTermOrder::new(terms).map_err(cfg)?.into())
            }
            (None, None) => Err(CliError::Config("missing problem.alpha".into())),
        }
    }

    /// Problem template; `base` resolves relative table paths.
    pub fn template(&self, base: &Path) -> Result<ProblemTemplate, CliError> {
        let p = &self.problem;
        let (lengths, cells) = match (p.domain, self.grid.nx) {
            (DomainKind::Interval, Cells::Uniform(n)) => ([p.length.unwrap_or(1.0), 0.0], [n, 0]),
            (DomainKind::Rectangle, Cells::Uniform(n)) => (p.lengths.unwrap_or([1.0, 1.0]), [n, n]),
            (DomainKind::Rectangle, Cells::PerAxis(c)) => (p.lengths.unwrap_or([1.0, 1.0]), c),
            (DomainKind::Interval, Cells::PerAxis(_)) => {
                return Err(CliError::Config(
                    "grid.nx must be a single integer on an interval".into(),
                ))
            }
        };
        Ok(ProblemTemplate {
            domain: p.domain,
            lengths,
            cells,
            horizon: p.horizon,
            nt: self.grid.nt,
            order: self.order()?,
            operator: p.operator.clone(),
            u0: p.u0.clone(),
            boundary: p.boundary,
            stepping: self.grid.stepping,
            base: base.to_path_buf(),
        })
    }
}

/// Everything needed to build a [`ProblemSpec`] at any refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemTemplate {
    pub domain: DomainKind,
    pub lengths: [f64; 2],
    pub cells: [usize; 2],
    pub horizon: f64,
    pub nt: usize,
    pub order: TimeOrder,
    pub operator: EllipticOperator,
    pub u0: InitialData,
    pub boundary: BoundaryKind,
    pub stepping: Stepping,
    pub base: PathBuf,
}

impl ProblemTemplate {
    pub fn geometry(&self, space_factor: usize) -> Result<DomainGeometry, CliError> {
        let g = match self.domain {
            DomainKind::Interval => {
                DomainGeometry::interval(self.lengths[0], self.cells[0] * space_factor)
            }
            DomainKind::Rectangle => DomainGeometry::rectangle(
                self.lengths,
                [self.cells[0] * space_factor, self.cells[1] * space_factor],
            ),
        };
        g.map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    /// Problem with space refined by `space_factor` and time by `time_factor`.
    pub fn build(&self, space_factor: usize, time_factor: usize) -> Result<ProblemSpec, CliError> {
        let geom = self.geometry(space_factor)?;
        let time = TimeGrid::new(self.horizon, self.nt * time_factor)
            .map_err(|e| CliError::Config(format!("grid: {e}")))?;
        let u0 = self.u0.sample(&geom, &self.base)?;
        ProblemSpec::new(
            geom,
            time,
            self.order.clone(),
            self.operator.clone(),
            u0,
            self.boundary,
            self.stepping,
        )
        .map_err(|e| CliError::Config(format!("problem: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
domain = "interval"
horizon = 0.1
alpha = 0.5
boundary = "dirichlet_strong"
operator = { kind = "laplacian", diffusion = 1.0 }
u0 = { kind = "sin_mode" }

[grid]
nt = 20
nx = 10
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.study.kind, StudyKind::Solve);
        assert_eq!(cfg.output.precision, 17);
        let spec = cfg.template(Path::new(".")).unwrap().build(1, 1).unwrap();
        assert_eq!(spec.geometry.node_count(), 11);
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let text = MINIMAL.replace("alpha = 0.5", "alpha = 1.5");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(
            err.contains("problem.alpha") && err.contains("out of range"),
            "{err}"
        );
    }

    #[test]
    fn unknown_field_is_reported_with_location() {
        let text = MINIMAL.replace("nt = 20", "nt = 20\nnz = 3");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("nz") && err.contains("line"), "{err}");
    }

    #[test]
    fn small_grid_rejected() {
        let text = MINIMAL.replace("nx = 10", "nx = 1");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn dirichlet_cosine_rejected_at_build() {
        let text = MINIMAL.replace("sin_mode", "cos_mode");
        let cfg = RunConfig::parse(&text).unwrap();
        assert!(matches!(
            cfg.template(Path::new(".")).unwrap().build(1, 1),
            Err(CliError::Config(_))
        ));
    }
}
