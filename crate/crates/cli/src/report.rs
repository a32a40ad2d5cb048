//! The run report: schema, 17-significant-digit JSON output, and re-checking
//! a stored report.

use std::io::{self, Write};
use std::path::Path;

use genfam::hessian::{Classification, ClassificationEvidence};
use genfam::verify::{combine, SampleVerification, Verdicts};
use serde::{Deserialize, Serialize};

use crate::problem::Mode;
use crate::RunError;

pub const SCHEMA: &str = "genfam-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub family: FamilyInfo,
    pub mode: Mode,
    pub rng_seed: u64,
    pub base_points: Vec<BasePointReport>,
    pub hessian: HessianSummary,
    pub classification: Option<ClassificationEvidence>,
    pub verification: Option<VerificationSection>,
    pub oracle: Option<OracleStatus>,
    pub notes: Vec<String>,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    VerificationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyInfo {
    /// `catalog` or `custom`.
    pub source: String,
    pub id: Option<String>,
    pub expression: Option<String>,
    pub n: usize,
    pub k: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePointReport {
    pub index: usize,
    pub q: Vec<f64>,
    pub critical_points: Vec<CriticalRecord>,
    /// Branches whose continuation stopped before reaching this point.
    pub continuation_stops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRecord {
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
    pub residual_norm: f64,
    pub f: Vec<f64>,
    pub branch_id: usize,
    pub newton_iters: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianSummary {
    pub samples: usize,
    pub ranks: Vec<usize>,
    pub kernel_dims: Vec<usize>,
    pub cr_codims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSection {
    /// One entry per critical point, in base-point then branch order.
    pub samples: Vec<SampleVerification>,
    pub verdicts: Verdicts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStatus {
    pub catalog_id: String,
    pub expected_classification: Classification,
    pub classification_matches: bool,
    /// Critical points whose κ was compared against the closed form.
    pub checked: usize,
    pub matched: usize,
    /// Closed-form covectors over a base point that no critical point reproduced.
    pub missing: usize,
    /// Critical points over the excluded region of the closed form.
    pub excluded: usize,
    pub max_error: f64,
    pub passed: bool,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn to_json(&self) -> Result<Vec<u8>, RunError> {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise::default());
        self.serialize(&mut ser)?;
        buf.push(b'\n');
        Ok(buf)
    }

    pub fn write(&self, path: &Path) -> Result<(), RunError> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| RunError::Output(format!("cannot write report {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Input(format!("cannot read report {}: {e}", path.display())))?;
        let r: RunReport = serde_json::from_str(&text).map_err(|e| RunError::Input(format!("report: {e}")))?;
        if r.schema != SCHEMA {
            return Err(RunError::Input(format!("unsupported report schema `{}`", r.schema)));
        }
        Ok(r)
    }

    /// Verdicts recomputed from the stored per-sample data.
    pub fn recompute_verdicts(&self) -> Option<Verdicts> {
        let (v, c) = (self.verification.as_ref()?, self.classification.as_ref()?);
        Some(combine(self.family.n, self.family.k, &v.samples, c))
    }
}

/// Pretty JSON with every float written in `{:.16e}` form (17 significant digits).
#[derive(Default)]
pub struct Precise {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for Precise {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}
