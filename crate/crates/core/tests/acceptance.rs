//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Runs every preset under `$FRONTLAB_ACCEPTANCE_ROOT` (default: cargo's target tmpdir),
//! then the property and oracle suites. Exit status is nonzero when a required
//! criterion fails; E10 is optional and reported only.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use frontlab::analysis::{self, LagMode, Verdict};
use frontlab::front;
use frontlab::pde::{self, Boundary, Domain, Field, SolverConfig};
use frontlab::reaction::ReactionSpec;
use frontlab::scenario::{self, PresetReport};
use frontlab::support::{self, GammaSpec, SupportSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    id: &'static str,
    pass: bool,
    optional: bool,
    text: String,
}

fn line(id: &'static str, pass: bool, text: String) -> Line {
    let l = Line {
        id,
        pass,
        optional: false,
        text,
    };
    print_line(&l);
    l
}

fn print_line(l: &Line) {
    let status = if l.pass { "PASS" } else { "FAIL" };
    let opt = if l.optional { " (optional)" } else { "" };
    println!("{status} {}{opt}: {}", l.id, l.text);
}

fn describe(vs: &[&Verdict]) -> String {
    vs.iter()
        .map(|v| {
            format!(
                "{}[{}] {:.4} vs {:.4}±{:.2e}{}",
                v.theorem.split(" | ").next().unwrap_or(""),
                v.scenario,
                v.measured,
                v.expected,
                v.tolerance,
                if v.pass { "" } else { " ✗" }
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Criterion line from the verdicts whose tag is in `tags`, plus the runtime budget.
fn from_preset(id: &'static str, rep: &PresetReport, tags: &[&str], budget_s: f64) -> Line {
    let vs: Vec<&Verdict> = rep
        .verdicts
        .iter()
        .filter(|v| tags.iter().any(|t| v.theorem.split(" | ").next() == Some(*t)))
        .collect();
    let in_budget = rep.wall_seconds <= budget_s;
    let pass = !vs.is_empty() && vs.iter().all(|v| v.pass) && in_budget;
    line(id, pass, format!("{} | {:.1}s (budget {budget_s:.0}s)", describe(&vs), rep.wall_seconds))
}

fn root() -> PathBuf {
    std::env::var_os("FRONTLAB_ACCEPTANCE_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn run(id: &str, root: &Path, runs: &mut BTreeMap<String, PresetReport>) -> Option<()> {
    match scenario::run_preset(id, root) {
        Ok(r) => {
            runs.insert(id.to_string(), r);
            Some(())
        }
        Err(e) => {
            println!("ERROR {id}: {e}");
            None
        }
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn byte_identical(a: &Path, b: &Path) -> Result<usize, String> {
    let fa = files_under(a);
    let fb = files_under(b);
    let rel = |root: &Path, v: &[PathBuf]| -> Vec<PathBuf> { v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect() };
    let (ra, rb) = (rel(a, &fa), rel(b, &fb));
    if ra != rb {
        return Err("file sets differ".into());
    }
    let mut n = 0;
    for r in ra.iter().filter(|r| r.file_name().is_some_and(|f| f != "timings.json")) {
        if fs::read(a.join(r)).ok() != fs::read(b.join(r)).ok() {
            return Err(format!("{} differs", r.display()));
        }
        n += 1;
    }
    Ok(n)
}

// -- P1 ---------------------------------------------------------------------

fn comparison_pairs() -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(20240917);
    let reactions = [
        ReactionSpec::logistic(),
        ReactionSpec::bistable(0.3).unwrap(),
        ReactionSpec::ignition(0.2).unwrap(),
        ReactionSpec::logistic(),
        ReactionSpec::bistable(0.25).unwrap(),
    ];
    let mut worst = f64::NEG_INFINITY;
    for (k, spec) in reactions.iter().enumerate() {
        let domain = if k % 2 == 0 {
            Domain::plane((-8.0, 8.0), (-8.0, 8.0), 0.5, [Boundary::NeumannZero; 2], [Boundary::ONE, Boundary::ZERO]).unwrap()
        } else {
            Domain::line(-20.0, 20.0, 0.25, [Boundary::ONE, Boundary::ZERO]).unwrap()
        };
        let mut u = Field::zeros(domain.clone());
        for x in u.values.iter_mut() {
            *x = rng.random::<f64>();
        }
        let mut v = u.clone();
        for x in v.values.iter_mut() {
            *x = (*x + 0.3 * rng.random::<f64>()).min(1.0);
        }
        let cfg = SolverConfig::explicit(5.0, 1.0);
        let ru = pde::advance(u, spec, &cfg, &mut []).unwrap();
        let rv = pde::advance(v, spec, &cfg, &mut []).unwrap();
        let excess = ru
            .final_field
            .values
            .iter()
            .zip(&rv.final_field.values)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(excess);
    }
    (worst, reactions.len())
}

fn reflection_asymmetry() -> f64 {
    let d = Domain::plane((-30.0, 30.0), (-60.0, 40.0), 0.5, [Boundary::NeumannZero; 2], [Boundary::ONE, Boundary::ZERO]).unwrap();
    let s = SupportSpec::subgraph(GammaSpec::Conical { ell: 1.0, core: 1.0 }).unwrap();
    let f = pde::init_from_support(&s, &d).unwrap();
    let rec = pde::advance(f, &ReactionSpec::logistic(), &SolverConfig::explicit(10.0, 1.0), &mut []).unwrap();
    let out = &rec.final_field;
    let n = out.n_perp();
    let mut worst = 0.0f64;
    for i in 0..n {
        for (a, b) in out.column(i).iter().zip(out.column(n - 1 - i)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

// -- P2 ---------------------------------------------------------------------

fn heat_kernel_error() -> f64 {
    let f = ReactionSpec::logistic().scaled(0.0).unwrap();
    let d = Domain::line(-12.0, 12.0, 0.02, [Boundary::ZERO, Boundary::ZERO]).unwrap();
    let s0 = 0.25;
    let g = |x: f64, s: f64| (-(x * x) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s).sqrt();
    let field = Field::from_fn(d, |_, x| 0.5 * g(x, s0));
    let rec = pde::advance(field, &f, &SolverConfig::explicit(1.0, 1.0), &mut []).unwrap();
    let out = &rec.final_field;
    (0..out.n_prop())
        .map(|j| (out.values[j] - 0.5 * g(out.prop_coord(j), s0 + 2.0)).abs())
        .fold(0.0, f64::max)
}

fn fit_recovery_error() -> f64 {
    let mut worst = 0.0f64;
    for &(c, k, b, t1) in &[(2.0, 1.5, 0.7, 1000.0), (2.0, 2.0, -3.0, 2000.0), (0.35, 2.8, 1.0, 400.0)] {
        let n = 400;
        let t: Vec<f64> = (0..n).map(|i| 10.0 * (t1 / 10.0f64).powf(i as f64 / (n - 1) as f64)).collect();
        let x: Vec<f64> = t.iter().map(|t| c * t - k * t.ln() - b).collect();
        for mode in [LagMode::FixSpeed, LagMode::FitAll] {
            let fit = analysis::fit_lag_xy(&t, &x, mode, c, (10.0, t1)).unwrap();
            worst = worst.max((fit.c - c).abs()).max((fit.k - k).abs()).max((fit.b - b).abs());
        }
    }
    worst
}

fn hausdorff_axioms() -> (bool, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ok = true;
    let mut worst_slack = f64::INFINITY;
    let triples = 25;
    for _ in 0..triples {
        let mut cloud = |n: usize| -> Vec<[f64; 2]> {
            let (cx, cy) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            (0..n).map(|_| [cx + rng.random_range(-3.0..3.0), cy + rng.random_range(-3.0..3.0)]).collect()
        };
        let (a, b, c) = (cloud(60), cloud(80), cloud(40));
        let ab = support::hausdorff(&a, &b);
        let bc = support::hausdorff(&b, &c);
        let ac = support::hausdorff(&a, &c);
        ok &= support::hausdorff(&a, &a) == 0.0;
        ok &= ab == support::hausdorff(&b, &a) && ab > 0.0;
        ok &= (ab - support::hausdorff_brute(&a, &b)).abs() <= 1e-12;
        ok &= ac <= ab + bc + 1e-12;
        worst_slack = worst_slack.min(ab + bc - ac);
    }
    (ok, worst_slack, triples)
}

fn shooting_residual() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for a in [0.1, 0.25, 0.4] {
        let spec = ReactionSpec::bistable(a).unwrap();
        let (_, p) = front::shoot_front_speed(&spec, 1e-10).map_err(|e| e.to_string())?;
        worst = worst.max(front::ode_residual(&p, &spec));
    }
    let spec = ReactionSpec::logistic();
    let p = front::front_profile(&spec, 2.0, (-40.0, 60.0), 10_001).map_err(|e| e.to_string())?;
    Ok(worst.max(front::ode_residual(&p, &spec)))
}

fn main() {
    let root = root();
    let _ = fs::create_dir_all(&root);
    println!("acceptance root: {}", root.display());
    let start = Instant::now();
    let mut runs = BTreeMap::new();
    let mut lines = vec![];
    let budgets = [
        ("E1", 60.0),
        ("E2", 300.0),
        ("E3", 120.0),
        ("E4", 300.0),
        ("E5", 300.0),
        ("E6", 1200.0),
        ("E7", 900.0),
        ("E8", 900.0),
        ("E9", 1200.0),
        ("E10", 1800.0),
        ("P5", 300.0),
    ];
    let tags: BTreeMap<&str, &[&str]> = BTreeMap::from([
        ("E1", &["speed"][..]),
        ("E2", &["lag_k"][..]),
        ("E3", &["speed", "shooting_refinement"][..]),
        ("E4", &["lag_k"][..]),
        ("E5", &["lag_k"][..]),
        ("E6", &["lag_k", "lateral_spread", "lag_doubling"][..]),
        ("E7", &["envelope_local_dh", "envelope_monotone"][..]),
        ("E8", &["flattening"][..]),
        ("E9", &["lag_k"][..]),
        ("E10", &["flattening"][..]),
        ("P5", &["stage_order", "terrace_plateaus", "threshold_bracket"][..]),
    ]);
    for (id, budget) in budgets {
        let label: &'static str = id;
        if run(id, &root, &mut runs).is_none() {
            let mut l = line(label, false, "preset did not complete".into());
            l.optional = id == "E10";
            lines.push(l);
            continue;
        }
        if id == "P5" {
            continue; // reported after the property suites
        }
        let rep = &runs[id];
        let mut l = if id == "E10" {
            let l = Line {
                id: label,
                pass: false,
                optional: true,
                text: String::new(),
            };
            l
        } else {
            from_preset(label, rep, tags[id], budget)
        };
        if id == "E10" {
            let vs: Vec<&Verdict> = rep.find("flattening");
            l.pass = !vs.is_empty() && vs.iter().all(|v| v.pass);
            l.text = format!("{} | {:.1}s", describe(&vs), rep.wall_seconds);
            print_line(&l);
        }
        if id == "E9" {
            let ks: Vec<String> = rep
                .runs
                .iter()
                .filter_map(|r| {
                    let d = r.details.get("lag_report")?;
                    Some(format!(
                        "{}: k={:.3} (conjectured sharp {:.3})",
                        r.name,
                        d["k"].as_f64()?,
                        d["conjectured"].as_f64()?
                    ))
                })
                .collect();
            println!("     E9 exploratory: {}", ks.join("; "));
        }
        lines.push(l);
    }

    // P1: properties on every run plus dedicated pairs
    let mut p1 = vec![];
    let range: Vec<&Verdict> = runs.values().flat_map(|r| r.find("range")).collect();
    let mono: Vec<&Verdict> = runs.values().flat_map(|r| r.find("monotone_xn")).collect();
    let range_ok = !range.is_empty() && range.iter().all(|v| v.pass);
    let mono_ok = !mono.is_empty() && mono.iter().all(|v| v.pass);
    let worst_range = range.iter().map(|v| v.measured).fold(0.0, f64::max);
    let worst_mono = mono.iter().map(|v| v.measured).fold(0.0, f64::max);
    p1.push(format!("range excursion max {worst_range:.1e} over {} runs", range.len()));
    p1.push(format!("x_N monotonicity max rise {worst_mono:.1e} over {} runs", mono.len()));
    let (cmp_excess, pairs) = comparison_pairs();
    let cmp_ok = cmp_excess <= 1e-10;
    p1.push(format!("comparison max(u−v) {cmp_excess:.1e} on {pairs} seeded pairs"));
    let asym = reflection_asymmetry();
    let sym_ok = asym <= 1e-12;
    p1.push(format!("reflection asymmetry {asym:.1e}"));
    let rerun_root = root.join("rerun");
    let det = scenario::run_preset("E3", &rerun_root)
        .map_err(|e| e.to_string())
        .and_then(|_| byte_identical(&root.join("E3"), &rerun_root.join("E3")));
    let det_ok = det.is_ok();
    p1.push(match &det {
        Ok(n) => format!("E3 rerun byte-identical ({n} files)"),
        Err(e) => format!("E3 rerun: {e}"),
    });
    lines.push(line("P1", range_ok && mono_ok && cmp_ok && sym_ok && det_ok, p1.join("; ")));

    // P2: oracles
    let heat = heat_kernel_error();
    let fit = fit_recovery_error();
    let (axioms, slack, triples) = hausdorff_axioms();
    let resid = shooting_residual();
    let resid_ok = matches!(resid, Ok(r) if r <= 1e-7);
    lines.push(line(
        "P2",
        heat <= 1e-4 && fit <= 1e-10 && axioms && resid_ok,
        format!(
            "heat kernel sup error {heat:.2e}; fit_lag recovery error {fit:.1e}; hausdorff axioms on {triples} triples {} (min triangle slack {slack:.3}); shooting residual {}",
            if axioms { "hold" } else { "violated" },
            match &resid {
                Ok(r) => format!("{r:.1e}"),
                Err(e) => e.clone(),
            }
        ),
    ));

    // P3: inclusion and log-order gap on E6/E7
    let p3: Vec<&Verdict> = ["E6", "E7"]
        .iter()
        .filter_map(|id| runs.get(*id))
        .flat_map(|r| r.verdicts.iter().filter(|v| v.theorem.starts_with("inclusion_R") || v.theorem.starts_with("gap_log_growth")))
        .collect();
    let gap_ratios: Vec<String> = ["E6", "E7"]
        .iter()
        .filter_map(|id| runs.get(*id))
        .flat_map(|r| r.runs.iter())
        .filter_map(|o| o.details.get("gap_ratio").map(|d| format!("{} max gap/log t {:.2}", o.name, d["max_ratio"].as_f64().unwrap_or(f64::NAN))))
        .collect();
    lines.push(line(
        "P3",
        p3.len() == 4 && p3.iter().all(|v| v.pass),
        format!("{}; {}", describe(&p3), gap_ratios.join("; ")),
    ));

    // P4: supersolution audit on E6
    let p4: Vec<&Verdict> = runs.get("E6").map_or(vec![], |r| {
        r.verdicts.iter().filter(|v| v.theorem.starts_with("covering") || v.theorem.starts_with("sum_supersolution")).collect()
    });
    lines.push(line("P4", p4.len() == 2 && p4.iter().all(|v| v.pass), describe(&p4)));

    // P5
    if let Some(rep) = runs.get("P5") {
        lines.push(from_preset("P5", rep, tags["P5"], 300.0));
    }

    let required_fail: Vec<&str> = lines.iter().filter(|l| !l.pass && !l.optional).map(|l| l.id).collect();
    let optional_fail: Vec<&str> = lines.iter().filter(|l| !l.pass && l.optional).map(|l| l.id).collect();
    println!(
        "acceptance: {} criteria, {} required failing {:?}, optional failing {:?}, {:.0}s",
        lines.len(),
        required_fail.len(),
        required_fail,
        optional_fail,
        start.elapsed().as_secs_f64()
    );
    if !required_fail.is_empty() {
        std::process::exit(1);
    }
}
