//! Study dispatch and run metadata.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::envelopes::{
    envelope_brute, inf_convolution, sup_convolution, EnvelopeKind, SpatialGridFunction,
};
use crate::fracops::{gamma, l1_weights, FractionalOrder, TimeOrder};
use crate::geometry::{BoundaryKind, GridFunction};
use crate::operators::{cfl_bound, EllipticOperator};
use crate::oracles::{mittag_leffler, power_rule_caputo, psi_bracket, psi_lambda_kernel_value};
use crate::solver::{
    build_barriers_dirichlet, build_barriers_neumann, solve, BarrierOptions, ProblemSpec, Solution,
};
use crate::verify::{
    alpha_limit_study, calibrate_tolerance, check_comparison, check_history_maximum_sign,
    check_viscosity_residuals, Side, TestFunctionFamily,
};

use super::config::{InitialData, ProblemTemplate, RunConfig, StudyKind};
use super::output::{emit_csv, emit_plot, Artifact, Table};
use super::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: u64,
}

/// Metadata written to `run.json` next to the artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub version: String,
    pub config_path: PathBuf,
    /// SHA-256 of the configuration file bytes.
    pub config_hash: String,
    pub config: RunConfig,
    pub study: StudyKind,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub metrics: Value,
    pub violations: usize,
    pub artifacts: Vec<PathBuf>,
    pub summary: Vec<String>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the study named in the configuration file.
pub fn run_config(path: &Path, opts: &RunOptions) -> Result<RunRecord, CliError> {
    run_config_as(path, None, opts)
}

/// Runs `kind` (or the configured study) and writes `run.json`.
pub fn run_config_as(
    path: &Path,
    kind: Option<StudyKind>,
    opts: &RunOptions,
) -> Result<RunRecord, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg = RunConfig::parse(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out_dir = opts.out.clone().unwrap_or_else(|| {
        if cfg.output.directory.is_absolute() {
            cfg.output.directory.clone()
        } else {
            base.join(&cfg.output.directory)
        }
    });
    let study = kind.unwrap_or(cfg.study.kind);
    let started = unix_now();
    let mut ctx = Context {
        cfg: &cfg,
        template: cfg.template(&base)?,
        out: out_dir.clone(),
        seed: opts.seed,
        artifacts: Vec::new(),
        summary: Vec::new(),
        violations: 0,
    };
    let metrics = match study {
        StudyKind::Solve => ctx.solve()?,
        StudyKind::Convergence => ctx.convergence()?,
        StudyKind::Verify => ctx.verify()?,
        StudyKind::Compare => ctx.compare()?,
        StudyKind::Envelope => ctx.envelope()?,
        StudyKind::Oracle => ctx.oracle()?,
    };
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: path.to_path_buf(),
        config_hash: hex(&Sha256::digest(text.as_bytes())),
        config: cfg.clone(),
        study,
        seed: opts.seed,
        started_unix: started,
        finished_unix: unix_now(),
        metrics,
        violations: ctx.violations,
        artifacts: ctx.artifacts,
        summary: ctx.summary,
    };
    let json =
        serde_json::to_string_pretty(&record).map_err(|e| CliError::Numerical(e.to_string()))?;
    super::output::write_atomic(&out_dir.join("run.json"), json.as_bytes())?;
    Ok(record)
}

struct Context<'a> {
    cfg: &'a RunConfig,
    template: ProblemTemplate,
    out: PathBuf,
    seed: u64,
    artifacts: Vec<PathBuf>,
    summary: Vec<String>,
    violations: usize,
}

impl Context<'_> {
    fn csv(&mut self, artifact: Artifact<'_>, name: &str) -> Result<(), CliError> {
        if self.cfg.output.emit_csv {
            let path = self.out.join(name);
            emit_csv(artifact, &path, self.cfg.output.precision)?;
            self.artifacts.push(path);
        }
        Ok(())
    }

    fn svg(&mut self, artifact: Artifact<'_>, name: &str) -> Result<(), CliError> {
        if self.cfg.output.emit_svg {
            let path = self.out.join(name);
            emit_plot(artifact, &path)?;
            self.artifacts.push(path);
        }
        Ok(())
    }

    fn solve(&mut self) -> Result<Value, CliError> {
        let spec = self.template.build(1, 1)?;
        let sol = solve(&spec)?;
        self.csv(Artifact::Solution(&sol.values), "solution.csv")?;
        self.svg(Artifact::Solution(&sol.values), "solution.svg")?;
        let mut metrics = solution_metrics(&spec, &sol);
        if let Some(exact) = exact_solution(&self.template) {
            let (fin, st) = errors(&sol.values, &exact)?;
            metrics["error_final"] = json!(fin);
            metrics["error_spacetime"] = json!(st);
            self.summary.push(format!(
                "sup error at T {fin:.3e}, over space-time {st:.3e}"
            ));
        }
        self.summary.push(format!(
            "solved {} steps on {} nodes in {:.3}s",
            spec.time.steps(),
            spec.geometry.node_count(),
            sol.wall_time.as_secs_f64()
        ));
        Ok(metrics)
    }

    fn convergence(&mut self) -> Result<Value, CliError> {
        let s = &self.cfg.study;
        let table = convergence_study(&self.template, s.levels, s.time_factor)?;
        let t = table.to_table();
        self.csv(Artifact::Table(&t), "convergence.csv")?;
        self.svg(Artifact::Table(&t), "convergence.svg")?;
        for row in &table.rows {
            self.summary.push(format!(
                "nt {:>6} nx {:>5}  error {:.3e}  order {}",
                row.nt,
                row.nx,
                row.error_final,
                row.order.map_or("-".into(), |o| format!("{o:.3}"))
            ));
        }
        Ok(serde_json::to_value(&table).unwrap_or(Value::Null))
    }

    fn verify(&mut self) -> Result<Value, CliError> {
        let spec = self.template.build(1, 1)?;
        let sol = solve(&spec)?;
        let dim = spec.geometry.dim();
        let family = TestFunctionFamily::sampled(dim, self.cfg.study.members, 4.0, 20.0, self.seed);
        let model = calibrate_tolerance(&spec, &family)?;
        let tol = model.tol(&spec);
        let mut table = Table::new(
            "viscosity touching points",
            &[
                "target", "side", "member", "step", "node", "t", "residual", "passed",
            ],
        );
        let mut metrics = json!({ "tolerance": { "constant": model.constant, "tol": tol } });

        let mut check = |name: &str,
                         target: f64,
                         u: &GridFunction,
                         side: Side,
                         this: &mut Self|
         -> Result<Value, CliError> {
            let rep = check_viscosity_residuals(u, &spec, &family, side, tol)?;
            let side_code = if side == Side::Sub { 0.0 } else { 1.0 };
            for p in &rep.points {
                table.push(vec![
                    target,
                    side_code,
                    p.member as f64,
                    p.step as f64,
                    p.node as f64,
                    p.t,
                    p.residual,
                    if p.passed { 1.0 } else { 0.0 },
                ]);
            }
            let bad = rep.violations().count();
            this.violations += bad;
            this.summary.push(format!("{name}: {rep}"));
            Ok(json!({ "points": rep.points.len(), "violations": bad, "worst": rep.worst() }))
        };
        metrics["solution_sub"] = check("solution", 0.0, &sol.values, Side::Sub, self)?;
        metrics["solution_super"] = check("solution", 0.0, &sol.values, Side::Super, self)?;

        if self.cfg.study.barriers {
            let barriers = match spec.boundary {
                BoundaryKind::DirichletStrong => {
                    build_barriers_dirichlet(&spec, &BarrierOptions::default())?
                }
                BoundaryKind::NeumannViscosity => build_barriers_neumann(&spec)?,
            };
            metrics["lower_sub"] = check("lower barrier", 1.0, &barriers.lower, Side::Sub, self)?;
            metrics["upper_super"] =
                check("upper barrier", 2.0, &barriers.upper, Side::Super, self)?;
            let below = check_comparison(&barriers.lower, &sol.values, &spec.order, 1e-12)?;
            let above = check_comparison(&sol.values, &barriers.upper, &spec.order, 1e-12)?;
            let sandwich = below.holds && below.hypothesis && above.holds && above.hypothesis;
            if !sandwich {
                self.violations += 1;
            }
            self.summary.push(format!(
                "barrier sandwich lower <= u <= upper: {}",
                if sandwich { "holds" } else { "VIOLATED" }
            ));
            metrics["barriers"] = json!({ "report": barriers.report, "sandwich": sandwich });
        }

        if !self.cfg.study.alphas.is_empty() {
            let alphas = self.cfg.study.alphas.clone();
            let study = alpha_limit_study(&spec, &alphas, None)?;
            let mut t = Table::new("alpha limit", &["alpha", "distance", "final_distance"]);
            for r in &study.rows {
                t.push(vec![r.alpha, r.distance, r.final_distance]);
            }
            let monotone = study.tail_non_increasing(3);
            if !monotone {
                self.violations += 1;
            }
            self.summary.push(format!(
                "alpha limit: distances {}, tail non-increasing: {monotone}",
                study
                    .rows
                    .iter()
                    .map(|r| format!("{:.3e}", r.distance))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
            self.csv(Artifact::Table(&t), "alpha_limit.csv")?;
            metrics["alpha_limit"] = json!({ "rows": study.rows, "tail_non_increasing": monotone });
        }
        self.csv(Artifact::Table(&table), "viscosity.csv")?;
        Ok(metrics)
    }

    fn compare(&mut self) -> Result<Value, CliError> {
        let spec = self.template.build(1, 1)?;
        let pairs = self.cfg.study.pairs;
        let results = comparison_pairs(&spec, pairs, self.seed)?;
        let mut t = Table::new(
            "comparison pairs",
            &[
                "pair",
                "max_gap",
                "holds",
                "hmax_checked",
                "hmax_violations",
            ],
        );
        let mut failures = 0;
        for r in &results {
            t.push(vec![
                r.pair as f64,
                r.max_gap,
                if r.holds { 1.0 } else { 0.0 },
                r.hmax_checked as f64,
                r.hmax_violations as f64,
            ]);
            if !r.holds {
                failures += 1;
            }
            failures += r.hmax_violations;
        }
        self.violations += failures;
        self.summary.push(format!(
            "{} ordered pairs, {} comparison failures; max(u - v) over all pairs {:.3e}",
            results.len(),
            results.iter().filter(|r| !r.holds).count(),
            results
                .iter()
                .map(|r| r.max_gap)
                .fold(f64::NEG_INFINITY, f64::max)
        ));
        self.csv(Artifact::Table(&t), "comparison.csv")?;
        Ok(serde_json::to_value(&results).unwrap_or(Value::Null))
    }

    fn envelope(&mut self) -> Result<Value, CliError> {
        let spec = self.template.build(1, 1)?;
        let sol = solve(&spec)?;
        let geom = spec.geometry;
        let f = SpatialGridFunction::new(geom, sol.final_slice().to_vec())
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let mut headers: Vec<String> = if geom.dim() == 1 {
            vec!["x".into()]
        } else {
            vec!["x".into(), "y".into()]
        };
        headers.push("f".into());
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut checks = Vec::new();
        for &eps in &self.cfg.study.eps {
            let env = |e| CliError::Numerical(format!("envelope: {e}"));
            let sup = sup_convolution(&f, eps).map_err(env)?;
            let inf = inf_convolution(&f, eps).map_err(env)?;
            let brute = envelope_brute(&f, eps, EnvelopeKind::Sup).map_err(env)?;
            let c = envelope_checks(&f, &sup, &inf, &brute, eps);
            if !c.all() {
                self.violations += 1;
            }
            self.summary.push(format!("eps {eps}: {c:?}"));
            checks.push(json!({ "eps": eps, "checks": c }));
            headers.push(format!("sup_{eps}"));
            headers.push(format!("inf_{eps}"));
            columns.push(sup.into_values());
            columns.push(inf.into_values());
        }
        let header_refs: Vec<&str> = headers.iter().map(|s| s.as_str()).collect();
        let mut t = Table::new("envelopes", &header_refs);
        for node in 0..geom.node_count() {
            let x = geom.coords(node);
            let mut row = vec![x[0]];
            if geom.dim() == 2 {
                row.push(x[1]);
            }
            row.push(f.values()[node]);
            row.extend(columns.iter().map(|c| c[node]));
            t.push(row);
        }
        self.csv(Artifact::Table(&t), "envelope.csv")?;
        Ok(json!({ "checks": checks }))
    }

    fn oracle(&mut self) -> Result<Value, CliError> {
        let call = self
            .cfg
            .study
            .oracle
            .clone()
            .ok_or_else(|| CliError::Config("missing [study.oracle]".into()))?;
        let value = evaluate_oracle(&call.name, &call.params)?;
        self.summary
            .push(format!("{}({:?}) = {value:.17e}", call.name, call.params));
        Ok(json!({ "name": call.name, "params": call.params, "value": value }))
    }
}

fn solution_metrics(spec: &ProblemSpec, sol: &Solution) -> Value {
    let mut m = json!({
        "steps": spec.time.steps(),
        "nodes": spec.geometry.node_count(),
        "operator": spec.operator.name(),
        "max_step_residual": sol.residuals.iter().copied().fold(0.0, f64::max),
        "total_iterations": sol.iterations.iter().sum::<usize>(),
        "factorizations": sol.factorizations,
        "wall_time_s": sol.wall_time.as_secs_f64(),
        "weights_head": &sol.weights[..sol.weights.len().min(4)],
    });
    if let Some(cfl) = &sol.cfl {
        m["cfl"] = serde_json::to_value(cfl).unwrap_or(Value::Null);
    }
    if let Some(last) = sol.boundary_diagnostics.last() {
        m["neumann_boundary"] = serde_json::to_value(last).unwrap_or(Value::Null);
    }
    m
}

type Exact = Box<dyn Fn(f64, [f64; 2]) -> Result<f64, CliError> + Sync>;

/// Closed-form solution when one is known: a Laplacian eigenmode with a single
/// order, or zero data for an operator that annihilates zero.
pub fn exact_solution(template: &ProblemTemplate) -> Option<Exact> {
    if matches!(template.u0, InitialData::Zero) && template.operator.annihilates_zero() {
        return Some(Box::new(|_, _| Ok(0.0)));
    }
    let EllipticOperator::Laplacian { diffusion } = template.operator else {
        return None;
    };
    let TimeOrder::Single(order) = template.order else {
        return None;
    };
    let geom = template.geometry(1).ok()?;
    let (mode, amplitude) = template.u0.eigenmode(&geom, template.boundary)?;
    let lambda = diffusion * mode.eigenvalue();
    Some(Box::new(move |t, x| {
        let decay = if t == 0.0 {
            1.0
        } else {
            mittag_leffler(order, -lambda * t.powf(order.alpha()))
                .map_err(|e| CliError::Numerical(e.to_string()))?
        };
        Ok(amplitude * decay * mode.phi(x))
    }))
}

/// `(final-time sup error, space-time sup error)`.
fn errors(u: &GridFunction, exact: &Exact) -> Result<(f64, f64), CliError> {
    let geom = u.geometry();
    let time = u.time();
    let per_step: Vec<f64> = (0..time.len())
        .into_par_iter()
        .map(|n| {
            let t = time.node(n);
            let mut e = 0.0f64;
            for node in 0..geom.node_count() {
                e = e.max((u.at(n, node) - exact(t, geom.coords(node))?).abs());
            }
            Ok(e)
        })
        .collect::<Result<_, CliError>>()?;
    Ok((
        *per_step.last().unwrap_or(&0.0),
        per_step.iter().copied().fold(0.0, f64::max),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub nt: usize,
    pub nx: usize,
    pub tau: f64,
    pub h: f64,
    pub error_final: f64,
    pub error_spacetime: f64,
    /// `log2` ratio of consecutive final-time errors.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            "convergence",
            &[
                "level",
                "nt",
                "nx",
                "tau",
                "h",
                "error_final",
                "error_spacetime",
                "order",
            ],
        );
        t.loglog = Some((4, 5));
        for r in &self.rows {
            t.push(vec![
                r.level as f64,
                r.nt as f64,
                r.nx as f64,
                r.tau,
                r.h,
                r.error_final,
                r.error_spacetime,
                r.order.unwrap_or(f64::NAN),
            ]);
        }
        t
    }
}

/// Errors against the closed-form solution as space doubles and time refines
/// by `time_factor` per level.
pub fn convergence_study(
    template: &ProblemTemplate,
    levels: usize,
    time_factor: usize,
) -> Result<ConvergenceTable, CliError> {
    if levels < 3 {
        return Err(CliError::Config(format!(
            "study.levels = {levels}: need at least 3"
        )));
    }
    let exact = exact_solution(template).ok_or_else(|| {
        CliError::Config("convergence needs a closed-form solution: laplacian operator, single order and a sin_mode (Dirichlet) or cos_mode (Neumann) initial datum, or zero data".into())
    })?;
    let rows: Vec<Result<ConvergenceRow, CliError>> = (0..levels)
        .into_par_iter()
        .map(|level| {
            let spec = template.build(1 << level, time_factor.pow(level as u32))?;
            let sol = solve(&spec)?;
            let (error_final, error_spacetime) = errors(&sol.values, &exact)?;
            Ok(ConvergenceRow {
                level,
                nt: spec.time.steps(),
                nx: spec.geometry.cells(0),
                tau: spec.time.tau(),
                h: spec.geometry.max_spacing(),
                error_final,
                error_spacetime,
                order: None,
            })
        })
        .collect();
    let mut rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    for k in 1..rows.len() {
        let (a, b) = (rows[k - 1].error_final, rows[k].error_final);
        if a > 0.0 && b > 0.0 {
            rows[k].order = Some((a / b).log2());
        }
    }
    Ok(ConvergenceTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairResult {
    pub pair: usize,
    pub holds: bool,
    pub hypothesis: bool,
    pub max_gap: f64,
    pub hmax_checked: usize,
    pub hmax_violations: usize,
}

/// Random initial data `u₀ = base + noise`, `v₀ = u₀ + δ` with `δ ≥ 0`
/// (zero on Dirichlet boundary nodes); both are solved and compared.
pub fn comparison_pairs(
    spec: &ProblemSpec,
    pairs: usize,
    seed: u64,
) -> Result<Vec<PairResult>, CliError> {
    let geom = spec.geometry;
    let dirichlet = spec.boundary == BoundaryKind::DirichletStrong;
    let samples_per_run = 10_000usize.div_ceil(pairs.max(1) * 2);
    let results: Vec<Result<PairResult, CliError>> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(k as u64),
            );
            let mut u0 = spec.initial().to_vec();
            let mut v0 = u0.clone();
            for node in 0..geom.node_count() {
                if dirichlet && geom.is_boundary(node) {
                    continue;
                }
                u0[node] += rng.gen_range(-0.5..0.5);
                v0[node] = u0[node] + rng.gen_range(0.0..0.5);
            }
            let u = solve(&spec.with_initial(u0)?)?;
            let v = solve(&spec.with_initial(v0)?)?;
            let out = check_comparison(&u.values, &v.values, &spec.order, 1e-12)?;
            let max_gap = u
                .values
                .values()
                .iter()
                .zip(v.values.values())
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut checked = 0;
            let mut bad = 0;
            for (run, s) in [(&u, 2 * k as u64), (&v, 2 * k as u64 + 1)] {
                let rep =
                    check_history_maximum_sign(&run.values, &spec.order, samples_per_run, seed ^ s);
                checked += rep.checked;
                bad += rep.violations;
            }
            Ok(PairResult {
                pair: k,
                holds: out.holds,
                hypothesis: out.hypothesis,
                max_gap,
                hmax_checked: checked,
                hmax_violations: bad,
            })
        })
        .collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeChecks {
    pub ordering: bool,
    pub bounded: bool,
    pub duality: bool,
    pub semiconvex: bool,
    pub fast_matches_brute: bool,
}

impl EnvelopeChecks {
    pub fn all(&self) -> bool {
        self.ordering && self.bounded && self.duality && self.semiconvex && self.fast_matches_brute
    }
}

fn envelope_checks(
    f: &SpatialGridFunction,
    sup: &SpatialGridFunction,
    inf: &SpatialGridFunction,
    brute: &SpatialGridFunction,
    eps: f64,
) -> EnvelopeChecks {
    let geom = f.geometry();
    let fmax = f.max_abs();
    let ordering = f
        .values()
        .iter()
        .zip(sup.values())
        .zip(inf.values())
        .all(|((v, s), i)| i <= v && v <= s);
    let bounded = sup.values().iter().all(|s| *s <= fmax);
    let neg = SpatialGridFunction::new(*geom, f.values().iter().map(|v| -v).collect())
        .expect("finite values");
    let duality = sup_convolution(&neg, eps)
        .map(|s| s.values().iter().zip(inf.values()).all(|(a, b)| -a == *b))
        .unwrap_or(false);
    let mut semiconvex = true;
    for node in 0..geom.node_count() {
        for axis in 0..geom.dim() {
            let mut off = [0isize; 2];
            off[axis] = 1;
            let plus = geom.neighbor(node, off, false);
            off[axis] = -1;
            let minus = geom.neighbor(node, off, false);
            if let (Some(p), Some(m)) = (plus, minus) {
                let h = geom.spacing(axis);
                let d2 = (sup.values()[p] - 2.0 * sup.values()[node] + sup.values()[m]) / (h * h);
                semiconvex &= d2 >= -2.0 / eps - 1e-9;
            }
        }
    }
    EnvelopeChecks {
        ordering,
        bounded,
        duality,
        semiconvex,
        fast_matches_brute: sup.values() == brute.values(),
    }
}

fn want(name: &str, params: &[f64], n: usize, usage: &str) -> Result<(), CliError> {
    if params.len() == n {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "oracle {name} expects {n} parameters: {usage}"
        )))
    }
}

fn order(a: f64) -> Result<FractionalOrder, CliError> {
    FractionalOrder::new(a).map_err(|e| CliError::Config(e.to_string()))
}

/// Reference values by name. Names accept `-` or `_`.
///
/// * `gamma x`
/// * `mittag-leffler alpha z`
/// * `power-rule alpha beta t`: Caputo derivative of `t^β`
/// * `eigen-decay alpha lambda t`: `E_α(-λ t^α)`
/// * `psi-kernel a lambda alpha`
/// * `psi-bracket alpha`
/// * `l1-weight alpha tau k`
/// * `cfl alpha h`: explicit bound for the 1D Laplacian
pub fn evaluate_oracle(name: &str, params: &[f64]) -> Result<f64, CliError> {
    let key = name.replace('_', "-").to_ascii_lowercase();
    let num = |e: crate::oracles::OracleError| CliError::Numerical(e.to_string());
    match key.as_str() {
        "gamma" => {
            want(name, params, 1, "x")?;
            gamma(params[0]).map_err(|e| CliError::Config(e.to_string()))
        }
        "mittag-leffler" => {
            want(name, params, 2, "alpha z")?;
            mittag_leffler(order(params[0])?, params[1]).map_err(num)
        }
        "power-rule" => {
            want(name, params, 3, "alpha beta t")?;
            power_rule_caputo(order(params[0])?, params[1], params[2], 0.0).map_err(num)
        }
        "eigen-decay" => {
            want(name, params, 3, "alpha lambda t")?;
            let o = order(params[0])?;
            mittag_leffler(o, -params[1] * params[2].powf(o.alpha())).map_err(num)
        }
        "psi-kernel" => {
            want(name, params, 3, "a lambda alpha")?;
            psi_lambda_kernel_value(params[0], params[1], order(params[2])?).map_err(num)
        }
        "psi-bracket" => {
            want(name, params, 1, "alpha")?;
            Ok(psi_bracket(order(params[0])?))
        }
        "l1-weight" => {
            want(name, params, 3, "alpha tau k")?;
            let k = params[2];
            if !(k >= 0.0 && k.fract() == 0.0) {
                return Err(CliError::Config(format!("oracle {name}: k must be a non-negative integer")));
            }
            if !(params[1].is_finite() && params[1] > 0.0) {
                return Err(CliError::Config(format!("oracle {name}: tau must be positive")));
            }
            let w = l1_weights(order(params[0])?, params[1], k as usize + 1);
            Ok(w.weights[k as usize])
        }
        "cfl" => {
            want(name, params, 2, "alpha h")?;
            let h = params[1];
            if !(h > 0.0 && h <= 0.5) {
                return Err(CliError::Config(format!("oracle {name}: need 0 < h <= 0.5")));
            }
            let cells = (1.0 / h).round() as usize;
            let geom = crate::geometry::DomainGeometry::interval(cells as f64 * h, cells).map_err(|e| CliError::Config(e.to_string()))?;
            let stencil = crate::operators::build_monotone_stencil(&EllipticOperator::laplacian(), &geom)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(cfl_bound(&stencil, &TimeOrder::from(order(params[0])?)).tau_max)
        }
        _ => Err(CliError::Config(format!(
            "unknown oracle {name}; known: gamma, mittag-leffler, power-rule, eigen-decay, psi-kernel, psi-bracket, l1-weight, cfl"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    const HEAT: &str = r#"
[problem]
domain = "interval"
horizon = 0.1
alpha = 0.5
boundary = "dirichlet_strong"
operator = { kind = "laplacian", diffusion = 1.0 }
u0 = { kind = "sin_mode" }

[grid]
nt = 20
nx = 16
"#;

    #[test]
    fn solve_emits_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), HEAT);
        let rec = run_config(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(rec.study, StudyKind::Solve);
        assert!(rec.artifacts.iter().all(|p| p.exists()));
        assert!(dir.path().join("out/run.json").exists());
        assert!(rec.metrics["error_final"].as_f64().unwrap() < 1e-2);
    }

    #[test]
    fn convergence_errors_decrease() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::parse(HEAT).unwrap();
        let table = convergence_study(&cfg.template(dir.path()).unwrap(), 3, 2).unwrap();
        let e: Vec<f64> = table.rows.iter().map(|r| r.error_final).collect();
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    }

    #[test]
    fn classical_spatial_order_two() {
        let text = HEAT
            .replace("alpha = 0.5", "alpha = 1.0")
            .replace("nt = 20", "nt = 4")
            .replace("nx = 16", "nx = 8");
        let cfg = RunConfig::parse(&text).unwrap();
        let table = convergence_study(&cfg.template(Path::new(".")).unwrap(), 3, 4).unwrap();
        let order = table.rows[2].order.unwrap();
        assert!((order - 2.0).abs() < 0.3, "{order}");
    }

    #[test]
    fn zero_data_has_zero_error() {
        let text = HEAT.replace("u0 = { kind = \"sin_mode\" }", "u0 = { kind = \"zero\" }");
        let cfg = RunConfig::parse(&text).unwrap();
        let table = convergence_study(&cfg.template(Path::new(".")).unwrap(), 3, 2).unwrap();
        assert!(table
            .rows
            .iter()
            .all(|r| r.error_final == 0.0 && r.error_spacetime == 0.0));
    }

    #[test]
    fn oracles_by_name() {
        assert!(
            (evaluate_oracle("mittag-leffler", &[0.5, -1.0]).unwrap() - 0.4275836).abs() < 1e-6
        );
        assert!((evaluate_oracle("gamma", &[5.0]).unwrap() - 24.0).abs() < 1e-12);
        assert!(evaluate_oracle("nope", &[]).is_err());
        assert!(evaluate_oracle("gamma", &[]).is_err());
    }
}
