use std::path::{Path, PathBuf};

use genfam::catalog::CatalogEntry;
use genfam::hessian::HessianOptions;
use genfam::solver::{self, CriticalPoint, SolveConfig};
use genfam::verify::{verify_samples, VerifyOptions};
use genfam::{Error, FamilySpec};
use rayon::prelude::*;

use crate::problem::{Mode, ProblemFile};
use crate::report::{
    BasePointReport, CriticalRecord, FamilyInfo, HessianSummary, OracleStatus, RunReport, Status, VerificationSection,
    SCHEMA,
};
use crate::samples::emit_samples;
use crate::RunError;

/// Command-line overrides of the problem file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub report_path: Option<PathBuf>,
    pub samples_path: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub report_path: Option<PathBuf>,
    pub samples_path: Option<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.passed() {
            0
        } else {
            2
        }
    }
}

struct Family {
    spec: FamilySpec,
    entry: Option<CatalogEntry>,
    info: FamilyInfo,
}

fn parse_diagnostic(src: &str, offset: usize, err: &Error) -> String {
    let col = src[..offset.min(src.len())].chars().count();
    format!("custom.expression: {err}\n  {src}\n  {}^", " ".repeat(col))
}

fn build_family(problem: &ProblemFile) -> Result<Family, RunError> {
    if let Some(c) = &problem.catalog {
        let entry = CatalogEntry::new(c.id, &c.params).map_err(|e| RunError::Input(format!("catalog.params: {e}")))?;
        let spec = entry.family().clone();
        let info = FamilyInfo {
            source: "catalog".into(),
            id: Some(c.id.to_string()),
            expression: None,
            n: spec.n(),
            k: spec.k(),
            description: spec.describe(),
        };
        return Ok(Family { spec, entry: Some(entry), info });
    }
    let c = problem.custom.as_ref().expect("validated: catalog or custom");
    let spec = FamilySpec::from_expression(c.n, c.k, &c.expression, &c.params).map_err(|e| match &e {
        Error::Parse(p) => RunError::Input(parse_diagnostic(&c.expression, p.offset, &e)),
        _ => RunError::Input(format!("custom: {e}")),
    })?;
    let info = FamilyInfo {
        source: "custom".into(),
        id: None,
        expression: Some(c.expression.clone()),
        n: c.n,
        k: c.k,
        description: spec.describe(),
    };
    Ok(Family { spec, entry: None, info })
}

type Solved = (Vec<CriticalPoint>, Vec<String>);

fn solve(fam: &FamilySpec, mode: Mode, bases: &[Vec<f64>], cfg: &SolveConfig) -> Result<Vec<Solved>, RunError> {
    Ok(match mode {
        Mode::Fiber => bases
            .par_iter()
            .map(|q| solver::multistart(fam, q, cfg).map(|v| (v, Vec::new())))
            .collect::<Result<_, _>>()?,
        Mode::Joint => bases
            .par_iter()
            .map(|q| solver::joint_multistart(fam, q, cfg).map(|v| (v, Vec::new())))
            .collect::<Result<_, _>>()?,
        Mode::Continuation => {
            let traces = solver::track_branches(fam, bases, cfg)?;
            let mut out: Vec<Solved> = vec![(Vec::new(), Vec::new()); bases.len()];
            for trace in &traces {
                for (i, p) in trace.points.iter().enumerate() {
                    out[i].0.push(p.clone());
                }
                if let (Some(stop), Some(first)) = (&trace.stop, trace.points.first()) {
                    out[stop.index].1.push(format!(
                        "branch {} stopped before base point {}: {:?} ({})",
                        first.branch_id, stop.index, stop.reason, stop.detail
                    ));
                }
            }
            for (pts, _) in &mut out {
                pts.sort_by_key(|p| p.branch_id);
            }
            out
        }
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_oracle(
    entry: &CatalogEntry,
    mode: Mode,
    bases: &[Vec<f64>],
    records: &[Vec<CriticalRecord>],
    classification_matches: bool,
    tol: f64,
) -> Result<OracleStatus, RunError> {
    let (mut checked, mut matched, mut missing, mut excluded) = (0, 0, 0, 0);
    let mut max_error = 0.0_f64;
    for (q, recs) in bases.iter().zip(records) {
        for r in recs {
            match entry.oracle_constitutive(&r.q) {
                Ok(covs) => {
                    checked += 1;
                    let err = covs.iter().map(|c| distance(&c.f, &r.f)).fold(f64::INFINITY, f64::min);
                    if err <= tol {
                        matched += 1;
                    }
                    if err.is_finite() {
                        max_error = max_error.max(err);
                    }
                }
                Err(Error::ExcludedRegion(_)) => excluded += 1,
                Err(e) => return Err(e.into()),
            }
        }
        // Completeness only makes sense when every point lies over `q` itself.
        if mode == Mode::Fiber {
            if let Ok(covs) = entry.oracle_constitutive(q) {
                missing += covs
                    .iter()
                    .filter(|c| !recs.iter().any(|r| distance(&c.f, &r.f) <= tol))
                    .count();
            }
        }
    }
    Ok(OracleStatus {
        catalog_id: entry.id().to_string(),
        expected_classification: entry.expected_classification(),
        classification_matches,
        checked,
        matched,
        missing,
        excluded,
        max_error,
        passed: classification_matches && matched == checked && missing == 0,
    })
}

/// Solve, analyse and verify; no files are touched.
pub fn run_problem(problem: &ProblemFile, opts: &RunOptions) -> Result<RunReport, RunError> {
    problem.validate()?;
    let family = build_family(problem)?;
    let fam = &family.spec;
    let n = fam.n();
    let mut cfg = problem.solve.clone();
    if let Some(seed) = opts.seed {
        cfg.rng_seed = seed;
    }
    let bases = problem.expand_base_points();
    for (i, q) in bases.iter().enumerate() {
        if q.len() != n {
            return Err(RunError::Input(format!(
                "base point {i} has {} coordinates, the family has base dimension {n}",
                q.len()
            )));
        }
    }

    let solved = solve(fam, problem.mode, &bases, &cfg)?;
    let points: Vec<CriticalPoint> = solved.iter().flat_map(|(p, _)| p.iter().cloned()).collect();
    let t = &problem.tolerances;
    let vopts = VerifyOptions {
        hessian: HessianOptions {
            residual_tol: t.residual_tol,
            rank_tol: t.rank_tol,
            probe_step: t.probe_step,
            ..HessianOptions::default()
        },
        isotropy_tol: t.isotropy_tol,
    };
    let verification = if points.is_empty() {
        None
    } else {
        Some(verify_samples(fam, &points, &vopts)?)
    };

    let mut notes = Vec::new();
    let mut cursor = 0;
    let mut records_by_base = Vec::with_capacity(bases.len());
    let mut base_reports = Vec::with_capacity(bases.len());
    for (index, (q, (pts, stops))) in bases.iter().zip(&solved).enumerate() {
        let mut records = Vec::with_capacity(pts.len());
        for p in pts {
            let f = fam.kappa(&p.q, &p.lambda, cfg.newton_tol)?.f;
            let rank = verification.as_ref().map(|v| v.samples[cursor].rank).unwrap_or(0);
            cursor += 1;
            records.push(CriticalRecord {
                q: p.q.clone(),
                lambda: p.lambda.clone(),
                residual_norm: p.residual_norm,
                f,
                branch_id: p.branch_id,
                newton_iters: p.newton_iters,
                rank,
            });
        }
        notes.extend(stops.iter().cloned());
        records_by_base.push(records.clone());
        base_reports.push(BasePointReport {
            index,
            q: q.clone(),
            critical_points: records,
            continuation_stops: stops.clone(),
        });
    }
    let empty = solved.iter().filter(|(p, _)| p.is_empty()).count();
    if empty > 0 {
        notes.push(format!("{empty} of {} base points have no critical points", bases.len()));
    }

    let samples = verification.as_ref().map(|v| v.samples.as_slice()).unwrap_or(&[]);
    let uniq = |f: fn(&genfam::verify::SampleVerification) -> usize| {
        let mut v: Vec<usize> = samples.iter().map(f).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let hessian = HessianSummary {
        samples: samples.len(),
        ranks: uniq(|s| s.rank),
        kernel_dims: uniq(|s| s.kernel_dim),
        cr_codims: uniq(|s| s.cr_codim),
    };

    if let Some(v) = &verification {
        let max_im = v.samples.iter().map(|s| s.dim_im_tkappa).max().unwrap_or(0);
        if v.verdicts.isotropic && max_im < n {
            notes.push(format!("generated set isotropic, dim {max_im} < n = {n}"));
        }
    } else {
        notes.push("no critical points found; nothing to verify".into());
    }

    let oracle = match (&family.entry, &verification) {
        (Some(entry), Some(v)) => Some(check_oracle(
            entry,
            problem.mode,
            &bases,
            &records_by_base,
            v.classification.classification == entry.expected_classification(),
            t.oracle_tol,
        )?),
        _ => None,
    };
    let passed = verification.as_ref().is_some_and(|v| v.verdicts.passed()) && oracle.as_ref().is_none_or(|o| o.passed);

    Ok(RunReport {
        schema: SCHEMA.into(),
        family: family.info,
        mode: problem.mode,
        rng_seed: cfg.rng_seed,
        base_points: base_reports,
        hessian,
        classification: verification.as_ref().map(|v| v.classification.clone()),
        verification: verification.map(|v| VerificationSection {
            samples: v.samples,
            verdicts: v.verdicts,
        }),
        oracle,
        notes,
        status: if passed { Status::Ok } else { Status::VerificationFailed },
    })
}

fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// Load a problem file, run it, and write the report and sample table.
///
/// Output paths from the problem file are relative to its directory;
/// command-line paths are used as given. Without a report path the report
/// is returned but not written.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let problem = ProblemFile::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let report = run_problem(&problem, opts)?;
    let report_path = opts
        .report_path
        .clone()
        .or_else(|| problem.outputs.report_path.as_ref().map(|p| resolve(dir, p)));
    let samples_path = opts
        .samples_path
        .clone()
        .or_else(|| problem.outputs.samples_path.as_ref().map(|p| resolve(dir, p)));
    if let Some(p) = &report_path {
        report.write(p)?;
    }
    if let Some(p) = &samples_path {
        emit_samples(&report, p)?;
    }
    Ok(RunOutcome {
        report,
        report_path,
        samples_path,
    })
}
