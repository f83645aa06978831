//! Machine-readable verification reports shared by every validity check.

use serde::{Deserialize, Serialize};

/// JSON has no literal for non-finite floats; serde_json writes them as
/// null. Reading maps null back to NaN so that a report carrying a
/// NumericalFailure still parses.
mod nanable {
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer};

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Option<f64>>::deserialize(d)?
                .into_iter()
                .map(|v| v.unwrap_or(f64::NAN))
                .collect())
        }
    }
}

/// One named check: a residual compared against a tolerance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(deserialize_with = "nanable::deserialize")]
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Outcome of a validation or randomized verification run. Carries one entry
/// per checked identity, the seed that drove any sampling, and free-form
/// notes (conventions, rescaling hints, worst-case trials).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Trial index with the largest residual, when trials were run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_trial: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a residual; the check passes when `residual <= tol`.
    pub fn push(&mut self, name: &str, residual: f64, tol: f64) {
        self.checks.push(Check {
            name: name.to_string(),
            residual,
            tol,
            pass: residual.is_finite() && residual <= tol,
        });
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Largest residual across all checks.
    pub fn max_residual(&self) -> f64 {
        self.checks.iter().map(|c| c.residual).fold(0.0, f64::max)
    }

    /// Names of the failing checks.
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }
}

/// Provenance of a report: the command, inputs and parameters that produced
/// it. Reports are deterministic given their manifest.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    pub version: String,
    pub timestamp: String,
}

/// A flat row-major numeric table (probability tables, counts, histograms).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(deserialize_with = "nanable::vec::deserialize")]
    pub values: Vec<f64>,
}

/// The machine-readable document every command emits: manifest, named
/// checks, numeric tables, free-form notes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportDoc {
    pub manifest: RunManifest,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl ReportDoc {
    pub fn new(manifest: RunManifest) -> Self {
        ReportDoc { manifest, checks: Vec::new(), tables: Vec::new(), notes: Vec::new() }
    }

    pub fn attach(&mut self, report: &VerificationReport) {
        self.checks.extend(report.checks.iter().cloned());
        self.notes.extend(report.notes.iter().cloned());
    }

    pub fn push_table(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) {
        self.tables.push(Table { name: name.to_string(), shape, values });
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Every numeric in the document is finite.
    pub fn all_finite(&self) -> bool {
        self.checks.iter().all(|c| c.residual.is_finite() && c.tol.is_finite())
            && self.tables.iter().all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
