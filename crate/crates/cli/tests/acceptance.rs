//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use genfam::catalog::{CatalogEntry, CatalogId};
use genfam::hessian::{family_hessian, Classification, HessianOptions};
use genfam::solver::{self, SolveConfig};
use genfam::symplin::{self, SubspaceBasis, SubspaceKind, SymplecticSpace};
use genfam::{expr, FamilySpec};
use genfam_cli::{run_problem, ProblemFile, RunOptions, RunReport};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn run_json(json: &str) -> Result<(RunReport, Duration), String> {
    let problem = ProblemFile::from_json(json).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = run_problem(&problem, &RunOptions::default()).map_err(|e| e.to_string())?;
    Ok((report, start.elapsed()))
}

fn points_json(points: &[Vec<f64>]) -> String {
    serde_json::to_string(points).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn samples(r: &RunReport) -> &[genfam::verify::SampleVerification] {
    r.verification.as_ref().map(|v| v.samples.as_slice()).unwrap_or(&[])
}

fn classification(r: &RunReport) -> Option<Classification> {
    r.classification.as_ref().map(|c| c.classification)
}

struct Runs {
    two_springs: Option<RunReport>,
    rod: Option<RunReport>,
    lambda: Option<RunReport>,
}

// Two springs, k1 = 2, k2 = 5, a = 1, g = I, q0 = 0.
fn criterion_1(runs: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let bases: Vec<Vec<f64>> = (0..20)
        .map(|_| vec![rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0)])
        .collect();
    let json = format!(
        r#"{{"catalog":{{"id":"two_springs","params":{{"k1":2,"k2":5,"a":1}}}},
            "base_points":{{"explicit":{}}},"solve":{{"seeds":8}}}}"#,
        points_json(&bases)
    );
    let (report, elapsed) = run_json(&json)?;
    let mut worst = 0.0_f64;
    let mut count = 0;
    for bp in &report.base_points {
        ensure!(!bp.critical_points.is_empty(), "no critical point over {:?}", bp.q);
        for c in &bp.critical_points {
            let expected: Vec<f64> = bp.q.iter().map(|x| 2.0 * x).collect();
            worst = worst.max(dist(&c.f, &expected));
            count += 1;
        }
    }
    let class = classification(&report);
    let ranks = report.hessian.ranks.clone();
    runs.two_springs = Some(report);
    ensure!(worst <= 1e-8, "max |f - k1 q| = {worst:e}");
    ensure!(class == Some(Classification::Regular), "classified {class:?}");
    ensure!(ranks == vec![1], "ranks {ranks:?}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "{count} critical points, max |f - k1 q| = {worst:.1e}, regular, rank 1, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

// Rod and spring, defaults k = 1, a = 1, g = I, q0 = 0.
fn criterion_2(runs: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let bases: Vec<Vec<f64>> = (0..20)
        .map(|_| {
            let r: f64 = rng.random_range(0.5..=3.0);
            let t: f64 = rng.random_range(-PI..PI);
            vec![r * t.cos(), r * t.sin()]
        })
        .collect();
    let json = format!(
        r#"{{"catalog":{{"id":"rod_spring"}},"base_points":{{"explicit":{}}},"solve":{{"seeds":16}}}}"#,
        points_json(&bases)
    );
    let (report, elapsed) = run_json(&json)?;
    let mut worst = 0.0_f64;
    for bp in &report.base_points {
        let cps = &bp.critical_points;
        ensure!(cps.len() == 2, "{} branches over {:?}", cps.len(), bp.q);
        let r = (bp.q[0].powi(2) + bp.q[1].powi(2)).sqrt();
        let closed: Vec<Vec<f64>> = [1.0 - 1.0 / r, 1.0 + 1.0 / r]
            .iter()
            .map(|s| bp.q.iter().map(|x| s * x).collect())
            .collect();
        // Each computed covector matches one closed-form covector, and both are hit.
        for c in cps {
            let e = closed.iter().map(|o| dist(o, &c.f)).fold(f64::INFINITY, f64::min);
            worst = worst.max(e);
        }
        for o in &closed {
            let e = cps.iter().map(|c| dist(o, &c.f)).fold(f64::INFINITY, f64::min);
            worst = worst.max(e);
        }
    }
    let class = classification(&report);
    runs.rod = Some(report);
    ensure!(worst <= 1e-8, "max oracle error {worst:e}");
    ensure!(class == Some(Classification::Morse), "classified {class:?}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "2 branches at each of 20 points, max oracle error {worst:.1e}, morse, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_3(runs: &mut Runs) -> Outcome {
    let mut worst = 0.0_f64;
    let mut count = 0;
    for report in [&runs.two_springs, &runs.rod] {
        let report = report.as_ref().ok_or("criteria 1-2 produced no samples")?;
        let n = report.family.n;
        for s in samples(report) {
            ensure!(s.dim_im_tkappa == n, "dim im Tκ = {} != n = {n}", s.dim_im_tkappa);
            worst = worst.max(s.isotropy_max_violation);
            count += 1;
        }
    }
    ensure!(count > 0, "no samples");
    ensure!(worst <= 1e-6, "isotropy violation {worst:e}");
    Ok(format!("{count} samples, dim im Tκ = n, max isotropy violation {worst:.1e}"))
}

fn criterion_4(runs: &mut Runs) -> Outcome {
    let json = r#"{"catalog":{"id":"lambda_x2"},"mode":"joint",
        "base_points":{"grid":{"from":[-1],"to":[1],"steps":5}},
        "solve":{"seeds":8,"seed_box":[[0.5,2.0]]}}"#;
    let (report, _) = run_json(json)?;
    let cps: Vec<_> = report.base_points.iter().flat_map(|b| &b.critical_points).collect();
    ensure!(!cps.is_empty(), "no critical points");
    let max_x = cps.iter().map(|c| c.q[0].abs()).fold(0.0, f64::max);
    let class = classification(&report);
    let ss = samples(&report).to_vec();
    let noted = report.notes.iter().any(|n| n.contains("isotropic"));
    let exit = if report.passed() { 0 } else { 2 };
    runs.lambda = Some(report);
    ensure!(max_x <= 1e-8, "critical points off x = 0: max |x| = {max_x:e}");
    ensure!(class == Some(Classification::Degenerate), "classified {class:?}");
    for s in &ss {
        ensure!(s.rank == 0, "rank {}", s.rank);
        ensure!(s.cr_codim == 1, "codim {}", s.cr_codim);
        ensure!(s.dim_im_tkappa == 0, "dim im Tκ = {}", s.dim_im_tkappa);
        ensure!(s.isotropic, "isotropy violation {:e}", s.isotropy_max_violation);
        ensure!(!s.clean_flag, "clean flag set");
    }
    ensure!(noted, "missing isotropic note");
    ensure!(exit == 0, "run status not ok");
    Ok(format!(
        "{} samples on x = 0 (max |x| {max_x:.1e}), rank 0, codim 1, degenerate, dim im 0, isotropic, not clean",
        ss.len()
    ))
}

fn criterion_5(runs: &mut Runs) -> Outcome {
    let mut total = 0;
    for report in [&runs.two_springs, &runs.rod, &runs.lambda] {
        let report = report.as_ref().ok_or("earlier criteria produced no samples")?;
        let (n, k) = (report.family.n, report.family.k);
        let ss = samples(report);
        let ranks: std::collections::BTreeSet<usize> = ss.iter().map(|s| s.rank).collect();
        let constant = ranks.len() == 1;
        for s in ss {
            let regular = constant && s.rank == s.cr_codim;
            ensure!(s.clean_flag == regular, "{}: clean {} vs regular {regular}", report.family.description, s.clean_flag);
            ensure!(
                s.transverse_flag == (s.rank == k),
                "{}: transverse {} with rank {} and k {k}",
                report.family.description,
                s.transverse_flag,
                s.rank
            );
            ensure!(
                s.dim_ts_cap_tv == n + k - s.rank,
                "{}: dim(TS ∩ TV°) = {} != {}",
                report.family.description,
                s.dim_ts_cap_tv,
                n + k - s.rank
            );
            total += 1;
        }
    }
    Ok(format!("{total} samples over 3 families"))
}

fn criterion_6(runs: &mut Runs) -> Outcome {
    let mut total = 0;
    for report in [&runs.two_springs, &runs.rod, &runs.lambda] {
        let report = report.as_ref().ok_or("earlier criteria produced no samples")?;
        let k = report.family.k;
        for s in samples(report) {
            ensure!(
                s.dim_kernel_cap_ts == k - s.rank,
                "{}: dim(ker ∩ TS) = {} != k - rank = {}",
                report.family.description,
                s.dim_kernel_cap_ts,
                k - s.rank
            );
            total += 1;
        }
    }
    Ok(format!("{total} samples"))
}

/// Random expression tree, printed to source and evaluated over complex numbers
/// independently of the crate's parser and dual numbers.
#[derive(Debug, Clone)]
enum Gen {
    Const(f64),
    Var(usize),
    Add(Box<Gen>, Box<Gen>),
    Sub(Box<Gen>, Box<Gen>),
    Mul(Box<Gen>, Box<Gen>),
    /// `a / (2 + b^2)`
    Div(Box<Gen>, Box<Gen>),
    Pow(Box<Gen>, i32),
    Sin(Box<Gen>),
    Cos(Box<Gen>),
    /// `exp(a / 2)`
    Exp(Box<Gen>),
    /// `sqrt(1 + a^2)`
    Sqrt(Box<Gen>),
    /// `log(2 + a^2)`
    Log(Box<Gen>),
}

impl Gen {
    fn random(rng: &mut ChaCha8Rng, depth: u32, vars: usize) -> Gen {
        if depth == 0 || rng.random_bool(0.2) {
            return if rng.random_bool(0.75) {
                Gen::Var(rng.random_range(0..vars))
            } else {
                Gen::Const((rng.random_range(-3.0..3.0_f64) * 100.0).round() / 100.0)
            };
        }
        let choice = rng.random_range(0..11);
        let exponent = rng.random_range(2..=3);
        let mut sub = || Box::new(Gen::random(rng, depth - 1, vars));
        match choice {
            0 => Gen::Add(sub(), sub()),
            1 => Gen::Sub(sub(), sub()),
            2 | 3 => Gen::Mul(sub(), sub()),
            4 => Gen::Div(sub(), sub()),
            5 => Gen::Pow(sub(), exponent),
            6 => Gen::Sin(sub()),
            7 => Gen::Cos(sub()),
            8 => Gen::Exp(sub()),
            9 => Gen::Sqrt(sub()),
            _ => Gen::Log(sub()),
        }
    }

    fn source(&self, n: usize) -> String {
        let var = |i: usize| if i < n { format!("q{}", i + 1) } else { format!("l{}", i - n + 1) };
        match self {
            Gen::Const(c) if *c < 0.0 => format!("(0 - {})", -c),
            Gen::Const(c) => format!("{c}"),
            Gen::Var(i) => var(*i),
            Gen::Add(a, b) => format!("({} + {})", a.source(n), b.source(n)),
            Gen::Sub(a, b) => format!("({} - {})", a.source(n), b.source(n)),
            Gen::Mul(a, b) => format!("({} * {})", a.source(n), b.source(n)),
            Gen::Div(a, b) => format!("({} / (2 + ({})^2))", a.source(n), b.source(n)),
            Gen::Pow(a, e) => format!("(({})^{e})", a.source(n)),
            Gen::Sin(a) => format!("sin({})", a.source(n)),
            Gen::Cos(a) => format!("cos({})", a.source(n)),
            Gen::Exp(a) => format!("exp({} / 2)", a.source(n)),
            Gen::Sqrt(a) => format!("sqrt(1 + ({})^2)", a.source(n)),
            Gen::Log(a) => format!("log(2 + ({})^2)", a.source(n)),
        }
    }

    fn eval(&self, x: &[Complex64]) -> Complex64 {
        match self {
            Gen::Const(c) => Complex64::new(*c, 0.0),
            Gen::Var(i) => x[*i],
            Gen::Add(a, b) => a.eval(x) + b.eval(x),
            Gen::Sub(a, b) => a.eval(x) - b.eval(x),
            Gen::Mul(a, b) => a.eval(x) * b.eval(x),
            Gen::Div(a, b) => {
                let d = b.eval(x);
                a.eval(x) / (2.0 + d * d)
            }
            Gen::Pow(a, e) => a.eval(x).powi(*e),
            Gen::Sin(a) => a.eval(x).sin(),
            Gen::Cos(a) => a.eval(x).cos(),
            Gen::Exp(a) => (a.eval(x) / 2.0).exp(),
            Gen::Sqrt(a) => {
                let v = a.eval(x);
                (1.0 + v * v).sqrt()
            }
            Gen::Log(a) => {
                let v = a.eval(x);
                (2.0 + v * v).ln()
            }
        }
    }

    /// Gradient by complex step: exact to rounding, no subtractive cancellation.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = 1e-30;
        (0..x.len())
            .map(|i| {
                let z: Vec<Complex64> = x
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| Complex64::new(v, if i == j { h } else { 0.0 }))
                    .collect();
                self.eval(&z).im / h
            })
            .collect()
    }
}

/// Central differences of the complex-step gradient.
fn fd_hessian(g: &Gen, x: &[f64], step: f64) -> DMatrix<f64> {
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += step;
        xm[i] -= step;
        let (gp, gm) = (g.gradient(&xp), g.gradient(&xm));
        for j in 0..d {
            h[(i, j)] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    h
}

fn criterion_7(_: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let no_params = BTreeMap::new();
    let (mut worst_rel, mut worst_sym) = (0.0_f64, 0.0_f64);
    for case in 0..50 {
        let n = rng.random_range(1..=2);
        let k = rng.random_range(1..=2);
        let g = Gen::random(&mut rng, 4, n + k);
        let src = g.source(n);
        let fam = FamilySpec::from_expression(n, k, &src, &no_params).map_err(|e| format!("case {case}: `{src}`: {e}"))?;
        let x: Vec<f64> = (0..n + k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let jet = fam.jet(&x[..n], &x[n..]).map_err(|e| format!("case {case}: {e}"))?;
        let value = g.eval(&x.iter().map(|v| Complex64::new(*v, 0.0)).collect::<Vec<_>>()).re;
        ensure!(
            (jet.value() - value).abs() <= 1e-12 * (1.0 + value.abs()),
            "case {case}: value {} vs {value} for `{src}`",
            jet.value()
        );
        let ad = jet.hess_matrix(n + k);
        let fd = fd_hessian(&g, &x, 1e-5);
        let scale = ad.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let rel = (&ad - &fd).iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale;
        let sym = (&ad - ad.transpose()).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        ensure!(rel <= 1e-6, "case {case}: AD vs FD relative error {rel:e} for `{src}`");
        ensure!(sym <= 1e-12, "case {case}: asymmetry {sym:e} for `{src}`");
        worst_rel = worst_rel.max(rel);
        worst_sym = worst_sym.max(sym);
    }

    // Subtracting any F(q) leaves the vertical rows of the family Hessian unchanged.
    let opts = HessianOptions::default();
    let cfg = SolveConfig::default();
    let mut blocks = 0;
    for id in CatalogId::ALL {
        let entry = CatalogEntry::with_defaults(id);
        let fam = entry.family();
        let n = fam.n();
        let points: Vec<(Vec<f64>, Vec<f64>)> = match id {
            CatalogId::LambdaX2 => vec![(vec![0.0], vec![0.7]), (vec![0.0], vec![-2.0])],
            _ => {
                let q = vec![1.3, -0.4];
                solver::multistart(fam, &q, &cfg)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|p| (p.q, p.lambda))
                    .collect()
            }
        };
        ensure!(!points.is_empty(), "{id}: no critical points");
        for _ in 0..5 {
            let reference = Gen::random(&mut rng, 3, n);
            let src = reference.source(n);
            let ast = expr::parse(&src, n, 0, &no_params).map_err(|e| format!("`{src}`: {e}"))?;
            let rel = fam.relative_to(ast).map_err(|e| e.to_string())?;
            for (q, l) in &points {
                let a = family_hessian(fam, q, l, &opts).map_err(|e| e.to_string())?;
                let b = family_hessian(&rel, q, l, &opts).map_err(|e| e.to_string())?;
                ensure!(a.m == b.m, "{id}: vertical rows differ with reference `{src}`");
                blocks += 1;
            }
        }
    }
    Ok(format!(
        "50 expressions: max AD/FD rel error {worst_rel:.1e}, max asymmetry {worst_sym:.1e}; {blocks} vertical blocks identical under 5 references per family"
    ))
}

fn random_subspace(rng: &mut ChaCha8Rng, dim: usize) -> SubspaceBasis {
    let count = rng.random_range(0..=dim);
    let base: Vec<Vec<f64>> = (0..count).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    // Sometimes add a dependent vector so rank < number of vectors.
    let mut vectors = base.clone();
    if count >= 2 && rng.random_bool(0.3) {
        vectors.push(base[0].iter().zip(&base[1]).map(|(a, b)| a - 2.0 * b).collect());
    }
    SubspaceBasis::new(dim, vectors, 1e-10).unwrap()
}

/// ω written out directly, independent of the crate.
fn omega(u: &[f64], v: &[f64]) -> f64 {
    let m = u.len() / 2;
    (0..m).map(|i| u[m + i] * v[i] - v[m + i] * u[i]).sum()
}

fn criterion_8(_: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut double, mut dims, mut lagr) = (0, 0, 0);
    for case in 0..200 {
        let m = rng.random_range(1..=4);
        let space = SymplecticSpace::new(m).map_err(|e| e.to_string())?;
        let v = random_subspace(&mut rng, 2 * m);
        let p = symplin::polar(&space, &v).map_err(|e| e.to_string())?;
        let pp = symplin::polar(&space, &p).map_err(|e| e.to_string())?;
        ensure!(pp.same_subspace(&v), "case {case}: polar of polar differs from V (m = {m}, dim {})", v.dim());
        double += 1;

        ensure!(v.dim() + p.dim() == 2 * m, "case {case}: dim V {} + dim polar {} != {}", v.dim(), p.dim(), 2 * m);
        for a in v.vectors() {
            for b in p.basis().column_iter() {
                let w = omega(a, b.as_slice());
                ensure!(w.abs() <= 1e-10, "case {case}: polar vector not ω-orthogonal ({w:e})");
            }
        }
        dims += 1;

        let mut s = DMatrix::from_fn(m, m, |_, _| rng.random_range(-2.0..2.0));
        s = &s + s.transpose();
        let g = symplin::graph(&s, 1e-10);
        let kind = symplin::classify(&space, &g).map_err(|e| e.to_string())?;
        ensure!(kind == SubspaceKind::Lagrangian, "case {case}: graph classified {kind:?}");
        lagr += 1;
    }
    Ok(format!("{double} double-polar, {dims} dimension, {lagr} symmetric-graph cases"))
}

fn criterion_9(_: &mut Runs) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let problem = dir.path().join("problem.json");
    std::fs::write(
        &problem,
        r#"{"catalog":{"id":"rod_spring"},"base_points":{"grid":{"from":[-2,-2],"to":[2,2],"steps":4}},"solve":{"seeds":12}}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut tables = Vec::new();
    for (i, threads) in ["1", "4", "4"].iter().enumerate() {
        let out = dir.path().join(format!("samples{i}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_genfam"))
            .args(["run", problem.to_str().unwrap(), "--seed", "42", "--report"])
            .arg(dir.path().join(format!("report{i}.json")))
            .arg("--samples")
            .arg(&out)
            .env("GENFAM_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.code() == Some(0), "run {i} exited {:?}", status.status.code());
        tables.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure!(tables[0].len() > 100, "sample table is nearly empty");
    ensure!(tables.iter().all(|t| *t == tables[0]), "sample tables differ between runs");
    Ok(format!("3 runs (1, 4, 4 threads), {} identical bytes", tables[0].len()))
}

fn main() {
    let criteria: [(&str, fn(&mut Runs) -> Outcome); 9] = [
        ("two springs constitutive set and regular classification", criterion_1),
        ("rod and spring: two branches, closed form, Morse", criterion_2),
        ("generated set Lagrangian-immersed at samples of 1-2", criterion_3),
        ("degenerate λx² family", criterion_4),
        ("clean / transverse equivalences and intersection dimension", criterion_5),
        ("reduction kernel bookkeeping", criterion_6),
        ("Hessian correctness and reference independence", criterion_7),
        ("symplectic linear algebra properties", criterion_8),
        ("deterministic sample tables", criterion_9),
    ];
    let mut runs = Runs { two_springs: None, rod: None, lambda: None };
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut runs)))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>().map(String::as_str).or(e.downcast_ref::<&str>().copied()))));
        match outcome {
            Ok(detail) => println!("[PASS] criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
