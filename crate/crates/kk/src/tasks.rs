//! Task runners. Each writes its artifacts into the output directory and
//! returns summary metrics for the manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use kinetic_core::coefficients::{audit_assumptions, AuditPlan, Model};
use kinetic_core::control::{equivalence_batch, solve_control_with, ControlOptions};
use kinetic_core::flow::tilde_flow;
use kinetic_core::frozen::{proxy_gaussian, Deriv, Proxy};
use kinetic_core::montecarlo::{
    bound_audit_with, default_bandwidth, kde, rate_fit, simulate_with, AuditOptions, AuditPoint, FlowChoice, KdeOptions,
};
use kinetic_core::parametrix::density_series_with;
use kinetic_core::PhasePoint;
use serde_json::{json, Map, Value};

use crate::config::{self, ExperimentConfig, FlowName, Task};
use crate::io::{self, columns, jnum, num};
use crate::{KkError, Pool};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: PathBuf,
    pub metrics: Map<String, Value>,
    pub artifacts: Vec<String>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    model: Box<dyn Model>,
    out: &'a Path,
    pool: &'a Pool,
    metrics: Map<String, Value>,
    artifacts: Vec<String>,
}

impl Ctx<'_> {
    fn path(&mut self, name: String) -> PathBuf {
        let p = self.out.join(&name);
        self.artifacts.push(name);
        p
    }

    fn metric(&mut self, key: &str, v: Value) {
        self.metrics.insert(key.to_string(), v);
    }

    fn d(&self) -> usize {
        self.model.dim()
    }

    fn queries(&self) -> Result<Vec<(f64, PhasePoint, f64, PhasePoint)>, KkError> {
        if self.cfg.queries.is_empty() {
            return Err(KkError::validation("queries", "at least one query is required"));
        }
        let d = self.d();
        self.cfg
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| config::query(i, q, d).map(|(x, y)| (q.s, x, q.t, y)))
            .collect()
    }

    fn point_header(&self) -> Vec<String> {
        let d = self.d();
        let mut h: Vec<String> = ["query", "s", "t"].iter().map(|s| s.to_string()).collect();
        h.extend(columns("x1", d));
        h.extend(columns("x2", d));
        h.extend(columns("y1", d));
        h.extend(columns("y2", d));
        h
    }
}

fn point_row(i: usize, s: f64, x: &PhasePoint, t: f64, y: &PhasePoint) -> Vec<String> {
    let mut r = vec![i.to_string(), num(s), num(t)];
    r.extend(x.to_vec().into_iter().map(num));
    r.extend(y.to_vec().into_iter().map(num));
    r
}

/// Validates `cfg` against `task`, runs it and writes `manifest.json` into `out`.
pub fn run_experiment(task: Task, cfg: &ExperimentConfig, out: &Path, pool: &Pool) -> Result<RunOutcome, KkError> {
    if let Some(t) = cfg.task {
        if t != task {
            return Err(KkError::validation("task", format!("config is for `{}` but `{}` was requested", t.name(), task.name())));
        }
    }
    let model = cfg.model.build()?;
    if task.stochastic() {
        cfg.require_seed()?;
    }
    std::fs::create_dir_all(out).map_err(|e| KkError::io(out, e))?;
    let start = Instant::now();
    let mut ctx = Ctx { cfg, model, out, pool, metrics: Map::new(), artifacts: Vec::new() };
    match task {
        Task::Simulate => simulate(&mut ctx)?,
        Task::Density => density(&mut ctx)?,
        Task::Parametrix => parametrix(&mut ctx)?,
        Task::Control => control(&mut ctx)?,
        Task::AuditBounds => audit_bounds(&mut ctx)?,
        Task::AuditRates => audit_rates(&mut ctx)?,
        Task::AuditAssumptions => assumptions(&mut ctx)?,
    }
    let mut echo = cfg.clone();
    echo.task = Some(task);
    let manifest = json!({
        "version": VERSION,
        "task": task.name(),
        "config": echo,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "threads": pool.threads(),
        "metrics": ctx.metrics,
        "artifacts": ctx.artifacts,
    });
    let path = out.join("manifest.json");
    io::write_json(&path, &manifest)?;
    Ok(RunOutcome { manifest: path, metrics: ctx.metrics, artifacts: ctx.artifacts })
}

fn kde_options(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<KdeOptions, KkError> {
    let k = cfg.kde.clone().unwrap_or_default();
    let h = k.h.unwrap_or_else(|| default_bandwidth(n));
    if !(h > 0.0 && h.is_finite()) {
        return Err(KkError::validation("kde.h", "must be positive"));
    }
    Ok(KdeOptions { h, replicates: k.replicates.unwrap_or(200), seed })
}

fn simulate(ctx: &mut Ctx) -> Result<(), KkError> {
    let seed = ctx.cfg.require_seed()?;
    let section = ctx.cfg.sim()?.clone();
    let queries = ctx.queries()?;
    let mut header = ctx.point_header();
    header.extend(["value", "stderr", "h1", "h2", "effective_samples", "flagged_paths", "reference", "provenance"].map(String::from));
    let mut rows = Vec::new();
    let mut flagged = 0;
    for (i, (s, x, t, y)) in queries.iter().enumerate() {
        let sim = section.build(t - s, seed)?;
        let batch = simulate_with(&*ctx.model, *s, x, *t, &sim, ctx.pool)?;
        let path = ctx.path(format!("samples_{i}.kkmc"));
        io::write_samples(&path, &batch)?;
        flagged += batch.flagged;
        if batch.is_empty() {
            return Err(KkError::Numeric(kinetic_core::Error::Numeric(format!("query {i}: every path diverged"))));
        }
        let opts = kde_options(ctx.cfg, batch.len(), seed)?;
        let e = kde(&batch, &opts, std::slice::from_ref(y))?[0];
        let reference = if ctx.model.is_frozen_exact() {
            num(proxy_gaussian(&*ctx.model, Proxy::Forward, *s, x, *t, y)?.density(&x.to_vec(), &y.to_vec()))
        } else {
            String::new()
        };
        let mut r = point_row(i, *s, x, *t, y);
        r.extend([
            num(e.value),
            num(e.stderr),
            num(e.bandwidth.0),
            num(e.bandwidth.1),
            num(e.effective_samples),
            batch.flagged.to_string(),
            reference,
            "kde".to_string(),
        ]);
        rows.push(r);
    }
    let path = ctx.path("estimates.csv".into());
    io::write_csv(&path, &header, &rows)?;
    ctx.metric("queries", json!(queries.len()));
    ctx.metric("flagged_paths", json!(flagged));
    Ok(())
}

fn density(ctx: &mut Ctx) -> Result<(), KkError> {
    let queries = ctx.queries()?;
    let order = ctx.cfg.order.unwrap_or(3);
    if order == 0 {
        return Err(KkError::validation("order", "must be at least 1"));
    }
    let quad = ctx.cfg.quad()?;
    let exact = ctx.model.is_frozen_exact();
    let mut header = ctx.point_header();
    header.extend(["value", "remainder", "provenance"].map(String::from));
    let mut rows = Vec::new();
    for (i, (s, x, t, y)) in queries.iter().enumerate() {
        let (value, remainder, prov) = if exact {
            let g = proxy_gaussian(&*ctx.model, Proxy::Forward, *s, x, *t, y)?;
            (g.density(&x.to_vec(), &y.to_vec()), 0.0, "closed-form")
        } else {
            let r = density_series_with(&*ctx.model, *s, x, *t, y, order, &quad, ctx.pool)?;
            (r.value, r.remainder, "parametrix")
        };
        let mut r = point_row(i, *s, x, *t, y);
        r.extend([num(value), num(remainder), prov.to_string()]);
        rows.push(r);
    }
    let path = ctx.path("density.csv".into());
    io::write_csv(&path, &header, &rows)?;
    ctx.metric("queries", json!(queries.len()));
    ctx.metric("provenance", json!(if exact { "closed-form" } else { "parametrix" }));
    Ok(())
}

fn parametrix(ctx: &mut Ctx) -> Result<(), KkError> {
    let queries = ctx.queries()?;
    let order = ctx.cfg.order.unwrap_or(3);
    if order == 0 {
        return Err(KkError::validation("order", "must be at least 1"));
    }
    let quad = ctx.cfg.quad()?;
    let mut records = Vec::new();
    let mut worst: f64 = 0.0;
    for (s, x, t, y) in &queries {
        let r = density_series_with(&*ctx.model, *s, x, *t, y, order, &quad, ctx.pool)?;
        worst = worst.max(r.remainder);
        records.push(json!({
            "query": { "s": s, "x": x.to_vec(), "t": t, "y": y.to_vec() },
            "value": jnum(r.value),
            "terms": r.terms.iter().map(|&v| jnum(v)).collect::<Vec<_>>(),
            "remainder": jnum(r.remainder),
            "meta": {
                "order": r.orders,
                "provenance": if ctx.model.is_frozen_exact() { "closed-form" } else { "parametrix" },
                "warnings": r.warnings,
            },
        }));
    }
    let path = ctx.path("parametrix.json".into());
    io::write_json(&path, &Value::Array(records))?;
    ctx.metric("queries", json!(queries.len()));
    ctx.metric("max_remainder", jnum(worst));
    Ok(())
}

fn control(ctx: &mut Ctx) -> Result<(), KkError> {
    let queries = ctx.queries()?;
    let mut opts = ControlOptions::default();
    if let Some(c) = &ctx.cfg.control {
        opts.tol = c.tol.unwrap_or(opts.tol);
        opts.steps = c.steps.unwrap_or(opts.steps);
        opts.max_iter = c.max_iter.unwrap_or(opts.max_iter);
        opts.max_depth = c.max_depth.unwrap_or(opts.max_depth);
    }
    opts.validate().map_err(|e| KkError::validation("control", e.to_string()))?;
    let d = ctx.d();
    let mut header: Vec<String> = vec!["time".into()];
    header.extend(columns("phi", d));
    header.extend(columns("x1", d));
    header.extend(columns("x2", d));
    let mut summary = Vec::new();
    for (i, (s, x, t, y)) in queries.iter().enumerate() {
        let sol = solve_control_with(&*ctx.model, *s, x, *t, y, &opts)?;
        let rows: Vec<Vec<String>> = sol
            .times
            .iter()
            .zip(&sol.control)
            .zip(&sol.state)
            .map(|((r, phi), z)| std::iter::once(num(*r)).chain(phi.iter().map(|&v| num(v))).chain(z.iter().map(|&v| num(v))).collect())
            .collect();
        let path = ctx.path(format!("control_{i}.csv"));
        io::write_csv(&path, &header, &rows)?;
        let mut r = point_row(i, *s, x, *t, y);
        r.extend([
            num(sol.energy),
            num(sol.terminal_error),
            sol.iterations.to_string(),
            sol.pieces.to_string(),
            sol.warnings.join("; "),
        ]);
        summary.push(r);
    }
    let mut h = ctx.point_header();
    h.extend(["energy", "terminal_error", "iterations", "pieces", "warnings"].map(String::from));
    let path = ctx.path("control.csv".into());
    io::write_csv(&path, &h, &summary)?;
    let batch = equivalence_batch(&*ctx.model, &queries, &opts)?;
    ctx.metric("queries", json!(queries.len()));
    ctx.metric("kappa5", jnum(batch.kappa5));
    ctx.metric("kappa6", jnum(batch.kappa6));
    ctx.metric("violations", json!(batch.violations));
    Ok(())
}

fn audit_bounds(ctx: &mut Ctx) -> Result<(), KkError> {
    let seed = ctx.cfg.require_seed()?;
    let b = ctx.cfg.bounds.clone().ok_or_else(|| KkError::validation("bounds", "missing section"))?;
    let d = ctx.d();
    if b.starts.is_empty() || b.spans.is_empty() || b.offsets.is_empty() {
        return Err(KkError::validation("bounds", "starts, spans and offsets must be non-empty"));
    }
    if let Some(k) = b.spans.iter().position(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(KkError::validation(format!("bounds.spans[{k}]"), "must be positive"));
    }
    let mut grid = Vec::new();
    for (i, x) in b.starts.iter().enumerate() {
        let x = config::point(&format!("bounds.starts[{i}]"), x, d)?;
        for &span in &b.spans {
            let t = b.s + span;
            let centre = tilde_flow(&*ctx.model, b.s, t, &x)?.end().to_vec();
            for (k, o) in b.offsets.iter().enumerate() {
                let o = config::point(&format!("bounds.offsets[{k}]"), o, d)?.to_vec();
                let y: Vec<f64> = (0..2 * d)
                    .map(|j| centre[j] + o[j] * if j < d { span.sqrt() } else { span * span.sqrt() })
                    .collect();
                grid.push(AuditPoint { s: b.s, x: x.clone(), t, y: PhasePoint::from_slice(&y) });
            }
        }
    }
    let longest = b.spans.iter().cloned().fold(0.0, f64::max);
    let sim = ctx.cfg.sim()?.build(longest, seed)?;
    let mut opts = AuditOptions {
        flow: match b.flow {
            FlowName::Tilde => FlowChoice::Tilde,
            FlowName::Identity => FlowChoice::Identity,
            FlowName::Mollified { eps } => FlowChoice::Mollified { eps },
        },
        ..AuditOptions::default()
    };
    if let Some(k) = &ctx.cfg.kde {
        opts.h = k.h;
        opts.replicates = k.replicates.unwrap_or(opts.replicates);
    }
    opts.c_cap = b.c_cap.unwrap_or(opts.c_cap);
    opts.lambda_cap = b.lambda_cap.unwrap_or(opts.lambda_cap);
    opts.nsigma = b.nsigma.unwrap_or(opts.nsigma);
    let a = bound_audit_with(&*ctx.model, &grid, &sim, &opts, ctx.pool)?;
    let mut header = ctx.point_header();
    header.extend(["value", "stderr", "distance", "upper_ratio", "lower_ratio", "flagged", "violation"].map(String::from));
    let rows: Vec<Vec<String>> = grid
        .iter()
        .zip(&a.rows)
        .enumerate()
        .map(|(i, (p, r))| {
            let mut row = point_row(i, p.s, &p.x, p.t, &p.y);
            row.extend([
                num(r.estimate.value),
                num(r.estimate.stderr),
                num(r.distance),
                num(r.upper_ratio),
                num(r.lower_ratio),
                r.flagged.to_string(),
                r.violation.to_string(),
            ]);
            row
        })
        .collect();
    let path = ctx.path("bounds.csv".into());
    io::write_csv(&path, &header, &rows)?;
    ctx.metric("points", json!(grid.len()));
    ctx.metric("c0", jnum(a.c0));
    ctx.metric("lambda0", jnum(a.lambda0));
    ctx.metric("capped", json!(a.capped));
    ctx.metric("violations", json!(a.violations));
    ctx.metric("flagged", json!(a.flagged));
    Ok(())
}

/// Derivatives whose decay in `t−s` is fitted.
const RATE_DERIVS: [(&str, usize, usize); 3] = [("grad_x1", 1, 0), ("hess_x1", 2, 0), ("grad_x2", 0, 1)];

fn audit_rates(ctx: &mut Ctx) -> Result<(), KkError> {
    let r = ctx.cfg.rates.clone().ok_or_else(|| KkError::validation("rates", "missing section"))?;
    let d = ctx.d();
    let x = config::point("rates.x", &r.x, d)?;
    let spans = r.spans.clone().unwrap_or_else(|| (1..=6).map(|k| 0.5f64.powi(k)).collect());
    if let Some(k) = spans.iter().position(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(KkError::validation(format!("rates.spans[{k}]"), "must be positive"));
    }
    let prov = if ctx.model.is_frozen_exact() { "closed-form" } else { "frozen-proxy" };
    let mut values = Vec::new();
    let mut slopes = Vec::new();
    for (name, j1, j2) in RATE_DERIVS {
        let deriv = Deriv::new(j1, j2)?;
        let mut pairs = Vec::new();
        for &span in &spans {
            let t = r.s + span;
            let y = tilde_flow(&*ctx.model, r.s, t, &x)?.end();
            let v = proxy_gaussian(&*ctx.model, Proxy::Forward, r.s, &x, t, &y)?.sup_abs(deriv)?;
            values.push(vec![name.to_string(), num(span), num(v), prov.to_string()]);
            pairs.push((span, v));
        }
        let fit = rate_fit(&pairs).map_err(|e| KkError::validation("rates.spans", e.to_string()))?;
        let expected = -2.0 * d as f64 - 0.5 * j1 as f64 - 1.5 * j2 as f64;
        slopes.push(vec![name.to_string(), num(fit.slope), num(fit.intercept), num(fit.r2), num(expected)]);
        ctx.metric(&format!("slope_{name}"), jnum(fit.slope));
    }
    let path = ctx.path("rates.csv".into());
    io::write_csv(&path, &["derivative", "span", "sup_abs", "provenance"].map(String::from), &values)?;
    let path = ctx.path("slopes.csv".into());
    io::write_csv(&path, &["derivative", "slope", "intercept", "r2", "expected"].map(String::from), &slopes)?;
    Ok(())
}

fn assumptions(ctx: &mut Ctx) -> Result<(), KkError> {
    let seed = ctx.cfg.require_seed()?;
    let mut plan = AuditPlan { seed, ..AuditPlan::default() };
    if let Some(a) = &ctx.cfg.assumptions {
        plan.samples = a.samples.unwrap_or(plan.samples);
        plan.half_width = a.half_width.unwrap_or(plan.half_width);
        if let Some(t) = &a.times {
            plan.times = t.clone();
        }
    }
    if plan.samples == 0 {
        return Err(KkError::validation("assumptions.samples", "must be at least 1"));
    }
    if !(plan.half_width > 0.0) {
        return Err(KkError::validation("assumptions.half_width", "must be positive"));
    }
    if plan.times.is_empty() {
        return Err(KkError::validation("assumptions.times", "must be non-empty"));
    }
    let rep = audit_assumptions(&*ctx.model, &plan);
    let join = |v: &[f64]| v.iter().map(|&a| num(a)).collect::<Vec<_>>().join(" ");
    let rows: Vec<Vec<String>> = [
        ("sigma_holder", &rep.sigma_holder),
        ("f1_oscillation", &rep.f1_oscillation),
        ("f2_taylor", &rep.f2_taylor),
        ("eig_min", &rep.eig_min),
        ("eig_max", &rep.eig_max),
        ("grad_sv_min", &rep.grad_sv_min),
    ]
    .iter()
    .map(|(name, w)| vec![name.to_string(), num(w.value), num(w.t), join(&w.x), join(&w.y)])
    .collect();
    let path = ctx.path("assumptions.csv".into());
    io::write_csv(&path, &["quantity", "value", "t", "x", "y"].map(String::from), &rows)?;
    ctx.metric("pairs", json!(rep.pairs));
    ctx.metric("passed", json!(rep.passed));
    ctx.metric("failures", json!(rep.failures));
    Ok(())
}
