//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use kinetic_core::coefficients::{Holder, Kolmogorov};
use kinetic_core::control::{equivalence_batch, solve_control, ControlOptions};
use kinetic_core::exec::{Executor, Serial};
use kinetic_core::flow::{flow_gap, integrate_flow_with, tilde_flow};
use kinetic_core::frozen::{frozen_density, frozen_mean, gram, proxy_gaussian, resolvent, Deriv, Proxy};
use kinetic_core::linalg::{Mat, Vector};
use kinetic_core::montecarlo::{
    bound_audit, bound_audit_with, kde, rate_fit, simulate, simulate_with, AuditOptions, AuditPoint, FlowChoice, KdeOptions, PathRng,
    Scheme, SimConfig,
};
use kinetic_core::ode::OdeOptions;
use kinetic_core::parametrix::{ck_residual, density_series, reproduction_sandwich, QuadratureSpec};
use kinetic_core::PhasePoint;
use kk::{ExperimentConfig, Pool, Task};

type Outcome = Result<String, String>;

fn pt(v: &[f64]) -> PhasePoint {
    PhasePoint::from_slice(v)
}

/// Reproducible uniforms on `[lo, hi)`.
struct Draws(PathRng, u64);

impl Draws {
    fn new(seed: u64) -> Self {
        Draws(PathRng::new(seed, 0, 1), 0)
    }
    fn next(&mut self, lo: f64, hi: f64) -> f64 {
        self.1 += 1;
        lo + (hi - lo) * self.0.uniform_at(self.1)
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn kolmogorov_exactness() -> Outcome {
    let m = Kolmogorov::new(1);
    let o = pt(&[0.0, 0.0]);
    let want = 3f64.sqrt() / PI;
    let v = frozen_density(&m, 0.0, &o, 0.0, &o, 1.0, &o, Deriv::VALUE).map_err(e)?[0];
    let mut worst: f64 = (v - want).abs();
    for n in 1..=5 {
        let r = density_series(&m, 0.0, &o, 1.0, &o, n, &QuadratureSpec::default()).map_err(e)?;
        worst = worst.max((r.value - want).abs());
    }
    check(worst < 1e-10, format!("max error {worst:.2e}"))
}

fn gram_anchor() -> Outcome {
    let m = Kolmogorov::new(1);
    let k = gram(&m, 0.0, &pt(&[0.0, 0.0]), 0.0, 1.0).map_err(e)?;
    let want = [[1.0, 0.5], [0.5, 1.0 / 3.0]];
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            worst = worst.max((k[(i, j)] - want[i][j]).abs());
        }
    }
    check(worst < 1e-10, format!("max entry error {worst:.2e}"))
}

fn group_laws() -> Outcome {
    let m = Holder::new(1, 0.5);
    let mut u = Draws::new(3);
    let id = Mat::identity(2, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let xi = pt(&[u.next(-2.0, 2.0), u.next(-2.0, 2.0)]);
        let s = u.next(0.0, 0.5);
        let r = s + u.next(0.01, 0.5);
        let t = r + u.next(0.01, 0.5);
        let tau = u.next(0.0, 1.0);
        let rts = resolvent(&m, tau, &xi, s, t).map_err(e)?;
        let rtr = resolvent(&m, tau, &xi, r, t).map_err(e)?;
        let rrs = resolvent(&m, tau, &xi, s, r).map_err(e)?;
        let rst = resolvent(&m, tau, &xi, t, s).map_err(e)?;
        worst = worst.max((&rtr * &rrs - &rts).amax()).max((&rst * &rts - &id).amax()).max((&rts * &rst - &id).amax());
    }
    check(worst < 1e-10, format!("max error {worst:.2e} over 100 triples"))
}

fn mean_identities() -> Outcome {
    let m = Holder::new(1, 0.5);
    let mut u = Draws::new(4);
    let tight = OdeOptions::with_tol(1e-13);
    let (mut first, mut second): (f64, f64) = (0.0, 0.0);
    let s = 0.1;
    for _ in 0..50 {
        let x = pt(&[u.next(-2.0, 2.0), u.next(-2.0, 2.0)]);
        let y = pt(&[u.next(-2.0, 2.0), u.next(-2.0, 2.0)]);
        let t = s + u.next(0.05, 1.0);
        let fwd = integrate_flow_with(&m, s, t, &x, &[], &tight).map_err(e)?.end();
        first = first.max(frozen_mean(&m, s, &x, s, t, &x).map_err(e)?.sub(&fwd).norm());
        let back = integrate_flow_with(&m, t, s, &y, &[], &tight).map_err(e)?.end();
        let lhs = frozen_mean(&m, t, &y, s, t, &x).map_err(e)?.sub(&y).to_vec();
        let rhs = resolvent(&m, t, &y, s, t).map_err(e)? * Vector::from_column_slice(&x.sub(&back).to_vec());
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            second = second.max((a - b).abs());
        }
    }
    check(first < 1e-8 && second < 1e-7, format!("forward-frozen mean error {first:.2e}, backward identity error {second:.2e}"))
}

fn reproduction() -> Outcome {
    let k = Kolmogorov::new(1);
    let pairs = [(pt(&[0.0, 0.0]), pt(&[0.2, 0.1])), (pt(&[0.5, 0.0]), pt(&[0.5, 0.5])), (pt(&[-0.3, 0.2]), pt(&[0.4, -0.6]))];
    let q = QuadratureSpec { space_nodes: 41, ..QuadratureSpec::default() };
    let ck = ck_residual(&k, 0.0, 0.4, 1.0, &pairs, 1.0, 2, &q).map_err(e)?;
    let m = Holder::new(1, 0.5);
    let mut pts = Vec::new();
    for x1 in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        for y2 in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            for r in [0.1, 0.3, 0.5, 0.7, 0.9] {
                pts.push((pt(&[x1, 0.0]), pt(&[0.0, y2]), r));
            }
        }
    }
    let sw = reproduction_sandwich(&m, 1.0, 0.0, 1.0, &pts, &QuadratureSpec::default()).map_err(e)?;
    check(
        ck < 1e-6 && sw.c.is_finite() && sw.kappa.is_finite(),
        format!("CK residual {ck:.2e}; sandwich C3 = {:.3}, kappa7 = {:.3} on {} points", sw.c, sw.kappa, pts.len()),
    )
}

fn control_energies() -> Outcome {
    let k = Kolmogorov::new(1);
    let o = pt(&[0.0, 0.0]);
    let a = solve_control(&k, 0.0, &o, 1.0, &pt(&[1.0, 0.0]), 1e-9).map_err(e)?;
    let b = solve_control(&k, 0.0, &o, 1.0, &pt(&[0.0, 1.0]), 1e-9).map_err(e)?;
    let energy_err = (a.energy - 2.0).abs().max((b.energy - 12f64.sqrt()).abs());
    let terminal = a.terminal_error.max(b.terminal_error);
    let m = Holder::new(1, 0.5);
    let mut u = Draws::new(6);
    let cases: Vec<_> = (0..100)
        .map(|_| {
            let x = pt(&[u.next(-1.0, 1.0), u.next(-1.0, 1.0)]);
            let t = u.next(0.25, 1.0);
            let y = pt(&[u.next(-1.5, 1.5), u.next(-1.5, 1.5)]);
            (0.0, x, t, y)
        })
        .collect();
    let batch = equivalence_batch(&m, &cases, &ControlOptions::default()).map_err(e)?;
    check(
        energy_err < 1e-4 && terminal < 1e-6 && batch.kappa5.is_finite() && batch.kappa6.is_finite() && batch.violations == 0,
        format!(
            "energies {:.8} and {:.8} (error {energy_err:.1e}), terminal {terminal:.1e}; holder kappa5 = {:.3}, kappa6 = {:.3}, {} violations",
            a.energy, b.energy, batch.kappa5, batch.kappa6, batch.violations
        ),
    )
}

fn gradient_rates() -> Outcome {
    let k = Kolmogorov::new(1);
    let o = pt(&[0.0, 0.0]);
    let mut slopes = Vec::new();
    let mut ok = true;
    for (deriv, want) in [(Deriv::X1, -2.5), (Deriv::X1X1, -3.0), (Deriv::X2, -3.5)] {
        let pairs: Vec<(f64, f64)> = (1..=6)
            .map(|j| {
                let t = 0.5f64.powi(j);
                let g = proxy_gaussian(&k, Proxy::Forward, 0.0, &o, t, &o).map_err(e)?;
                Ok((t, g.sup_abs(deriv).map_err(e)?))
            })
            .collect::<Result<_, String>>()?;
        let f = rate_fit(&pairs).map_err(e)?;
        ok &= (f.slope - want).abs() <= 0.05;
        slopes.push(f.slope);
    }
    check(ok, format!("slopes {:.4} {:.4} {:.4}", slopes[0], slopes[1], slopes[2]))
}

fn monte_carlo_anchor() -> Outcome {
    let k = Kolmogorov::new(1);
    let o = pt(&[0.0, 0.0]);
    let n = 1_000_000;
    let b = simulate(&k, 0.0, &o, 1.0, &SimConfig { nsteps: 1, npaths: n, seed: 2024, scheme: Scheme::ExactLinearSubstep }).map_err(e)?;
    let est = kde(&b, &KdeOptions::for_samples(n, 2024), &[o]).map_err(e)?[0];
    let want = 3f64.sqrt() / PI;
    let rel = (est.value - want).abs() / want;
    let z = (est.value - want).abs() / est.stderr;
    check(rel < 0.03 && z < 4.0, format!("estimate {:.6} ± {:.1e} (h = {:.4}); relative error {:.2}%, {z:.2} stderr", est.value, est.stderr, est.bandwidth.0, 100.0 * rel))
}

fn audit_grid(m: &Holder, starts: &[f64], spans: &[f64], offsets: &[(f64, f64)]) -> Result<Vec<AuditPoint>, String> {
    let mut g = Vec::new();
    for &x1 in starts {
        let x = pt(&[x1, 0.0]);
        for &span in spans {
            let c = tilde_flow(m, 0.0, span, &x).map_err(e)?.end();
            for &(a, b) in offsets {
                let y = pt(&[c.x1[0] + a * span.sqrt(), c.x2[0] + b * span.powf(1.5)]);
                g.push(AuditPoint { s: 0.0, x: x.clone(), t: span, y });
            }
        }
    }
    Ok(g)
}

fn bound_audit_criterion() -> Outcome {
    let m = Holder::new(1, 0.5);
    let offsets = [(0.0, 0.0), (1.0, 0.5), (-1.0, -0.5), (2.0, 1.0), (-2.0, -1.0)];
    let grid = audit_grid(&m, &[-2.0, -1.0, 0.0, 1.0, 2.0], &[0.5, 0.25, 0.125], &offsets)?;
    let mut worst: f64 = 0.0;
    for p in &grid {
        let c = tilde_flow(&m, p.s, p.t, &p.x).map_err(e)?.end();
        worst = worst.max(kinetic_core::geometry::ScaleParams::new(p.t - p.s, 1).map_err(e)?.inverse_norm(&c.sub(&p.y).to_vec()));
    }
    let sim = SimConfig { nsteps: 200, npaths: 40_000, seed: 9, scheme: Scheme::Euler };
    let a = bound_audit(&m, &grid, &sim, &AuditOptions::default()).map_err(e)?;
    let neg_grid = audit_grid(&m, &[4.0], &[0.125], &[(0.0, 0.0), (1.0, 0.5)])?;
    let neg_sim = SimConfig { nsteps: 50, npaths: 20_000, seed: 3, scheme: Scheme::Euler };
    let neg = bound_audit(&m, &neg_grid, &neg_sim, &AuditOptions { flow: FlowChoice::Identity, ..AuditOptions::default() }).map_err(e)?;
    check(
        grid.len() == 75 && worst <= 4.0 && a.c0.is_finite() && a.lambda0.is_finite() && a.violations == 0 && neg.violations >= 1,
        format!(
            "{} points (max scaled offset {worst:.2}): C0 = {:.3}, lambda0 = {:.3}, {} violations, {} flagged; negative control {} violations",
            grid.len(),
            a.c0,
            a.lambda0,
            a.violations,
            a.flagged,
            neg.violations
        ),
    )
}

/// Least-squares slope of `ln v` against `ln h`.
fn loglog_slope(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().map(|&(h, v)| (h.ln(), v.ln())).unzip();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn term_decay() -> Outcome {
    let gamma = 0.5;
    let m = Holder { a: 0.0, b: 0.0, c: 0.1, ..Holder::new(1, gamma) };
    let o = pt(&[0.0, 0.0]);
    let spans = [0.5, 0.25, 0.125];
    let mut ratios = [Vec::new(), Vec::new()];
    for &h in &spans {
        let r = density_series(&m, 0.0, &o, h, &o, 3, &QuadratureSpec::default()).map_err(e)?;
        for j in 1..=2 {
            ratios[j - 1].push((h, (r.terms[j] / r.terms[0]).abs()));
        }
    }
    let s1 = loglog_slope(&ratios[0]);
    let s2 = loglog_slope(&ratios[1]);
    check(
        (s1 - gamma / 2.0).abs() <= 0.15 && (s2 - gamma).abs() <= 0.15,
        format!("term slopes {s1:.3} (target {:.2}), {s2:.3} (target {:.2})", gamma / 2.0, gamma),
    )
}

fn flow_gap_uniformity() -> Outcome {
    let m = Holder::new(1, 0.5);
    let mut maxima = Vec::new();
    for k in 1..=10 {
        let h = 0.5f64.powi(k);
        let mut mx: f64 = 0.0;
        for i in 0..10 {
            let x = pt(&[-2.0 + 4.0 * i as f64 / 9.0, 0.5]);
            mx = mx.max(flow_gap(&m, 0.0, h, &x, h.powf(1.5)).map_err(e)?);
        }
        maxima.push(mx);
    }
    let worst = maxima.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    check(
        maxima.iter().all(|v| v.is_finite()) && worst <= 1.2,
        format!("maxima {:?}; largest successive ratio {worst:.3}", maxima.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()),
    )
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn run_files(task: Task, cfg: &ExperimentConfig, dir: &Path, pool: &Pool) -> Result<Vec<(String, Vec<u8>)>, String> {
    let out = kk::run_experiment(task, cfg, dir, pool).map_err(e)?;
    out.artifacts.iter().map(|a| Ok((a.clone(), std::fs::read(dir.join(a)).map_err(e)?))).collect()
}

fn determinism() -> Outcome {
    let m = Holder::new(1, 0.5);
    let x = pt(&[0.3, -0.2]);
    let pools = [Pool::new(1).map_err(e)?, Pool::new(3).map_err(e)?];
    let execs: [&dyn Executor; 3] = [&Serial, &pools[0], &pools[1]];
    for seed in [1, 77] {
        let sim = SimConfig { nsteps: 40, npaths: 5000, seed, scheme: Scheme::Euler };
        let mut reference: Option<(Vec<u64>, u64, usize)> = None;
        for exec in execs {
            let b = simulate_with(&m, 0.0, &x, 0.5, &sim, exec).map_err(e)?;
            let est = kde(&b, &KdeOptions { h: 0.2, replicates: 50, seed }, std::slice::from_ref(&x)).map_err(e)?[0];
            let grid = audit_grid(&m, &[0.3], &[0.5], &[(0.0, 0.0), (1.0, 0.5)])?;
            let a = bound_audit_with(&m, &grid, &SimConfig { npaths: 4000, ..sim }, &AuditOptions::default(), exec).map_err(e)?;
            let key = (bits(&b.samples), est.value.to_bits() ^ est.stderr.to_bits() ^ a.c0.to_bits() ^ a.lambda0.to_bits(), a.violations);
            match &reference {
                None => reference = Some(key),
                Some(r) if *r != key => return Err(format!("seed {seed}: outputs differ between executors")),
                _ => {}
            }
        }
    }
    let cfg = ExperimentConfig::from_json(
        r#"{"model": {"id": "holder"}, "seed": 5, "sim": {"npaths": 3000, "nsteps": 30},
            "queries": [{"x": [0.3, -0.2], "t": 0.5, "y": [0.3, 0.0]}],
            "bounds": {"starts": [[0, 0]], "spans": [0.5], "offsets": [[0, 0], [1, 0.5]]}}"#,
    )
    .map_err(e)?;
    let tmp = std::env::temp_dir().join(format!("kk-acceptance-{}", std::process::id()));
    let mut files = 0;
    for task in [Task::Simulate, Task::AuditBounds] {
        let a = run_files(task, &cfg, &tmp.join("a"), &pools[0])?;
        let b = run_files(task, &cfg, &tmp.join("b"), &pools[1])?;
        if a != b {
            return Err(format!("{} artifacts differ between worker counts", task.name()));
        }
        files += a.len();
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok(format!("samples, estimates and audits bit-identical for seeds 1 and 77 across 3 executors; {files} CLI artifacts identical"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 12] = [
        ("kolmogorov exactness", kolmogorov_exactness, Duration::from_secs(1)),
        ("gram anchor", gram_anchor, Duration::from_secs(1)),
        ("resolvent group laws", group_laws, Duration::from_secs(10)),
        ("frozen mean identities", mean_identities, Duration::from_secs(30)),
        ("reproduction property", reproduction, Duration::from_secs(120)),
        ("control energies", control_energies, Duration::from_secs(120)),
        ("gradient rate exponents", gradient_rates, Duration::from_secs(60)),
        ("monte carlo anchor", monte_carlo_anchor, Duration::from_secs(300)),
        ("two-sided bound audit", bound_audit_criterion, Duration::from_secs(900)),
        ("parametrix term decay", term_decay, Duration::from_secs(600)),
        ("flow-gap uniformity", flow_gap_uniformity, Duration::from_secs(120)),
        ("determinism", determinism, Duration::from_secs(600)),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let r = f();
        let took = start.elapsed();
        let (status, detail) = match r {
            Ok(d) if took <= *limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took longer than {limit:?}")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {status} {name}: {detail} [{:.2}s]", i + 1, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
