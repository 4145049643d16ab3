//! Emitted files. Everything except `metadata.json` is a pure function of
//! the config and the dataset, so reruns are byte-identical.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use wasslip_core::numerics::fmt_f64;
use wasslip_core::verdict::extended_f64;
use wasslip_core::{BoundMode, NormTag};

use crate::Failure;

pub const REPORT_FILE: &str = "report.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const MODEL_FILE: &str = "model.txt";
pub const BOUND_CURVE_FILE: &str = "bound_curve.csv";

/// Identifies the inputs a report was computed from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fingerprint {
    /// SHA-256 of the dataset in canonical CSV form.
    pub dataset_sha256: Option<String>,
    pub seed: u64,
    pub rho: Option<f64>,
    #[serde(serialize_with = "optional_extended")]
    pub kappa: Option<f64>,
    pub norm: Option<NormTag>,
    pub bound_mode: Option<BoundMode>,
}

fn optional_extended<S: serde::Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => extended_f64::serialize(x, s),
        None => s.serialize_none(),
    }
}

impl Fingerprint {
    pub fn new(seed: u64) -> Self {
        Self {
            dataset_sha256: None,
            seed,
            rho: None,
            kappa: None,
            norm: None,
            bound_mode: None,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    passed: bool,
    fingerprint: &'a Fingerprint,
    result: &'a T,
}

pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(root).map_err(|e| {
            Failure::usage(format!(
                "cannot create output directory {}: {e}",
                root.display()
            ))
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.root.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn write_report<T: Serialize>(
        &mut self,
        command: &str,
        passed: bool,
        fingerprint: &Fingerprint,
        result: &T,
    ) -> Result<(), Failure> {
        let env = Envelope {
            command,
            passed,
            fingerprint,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env)
            .map_err(|e| Failure::numerical(format!("cannot serialise report: {e}")))?;
        text.push('\n');
        self.write(REPORT_FILE, &text)
    }

    /// Timestamps and wall clock, kept apart from the deterministic report.
    pub fn write_metadata(
        &mut self,
        command: &str,
        started_unix: f64,
        wall_clock: f64,
    ) -> Result<(), Failure> {
        let meta = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix_seconds": started_unix,
            "wall_clock_seconds": wall_clock,
        });
        let text = serde_json::to_string_pretty(&meta).expect("metadata is plain JSON") + "\n";
        self.write(METADATA_FILE, &text)
    }

    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }
}

/// `epsilon,adversarial_risk,robust_value` rows.
pub fn bound_curve_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("epsilon,adversarial_risk,robust_value\n");
    for (e, a, r) in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(*e),
            fmt_f64(*a),
            fmt_f64(*r)
        ));
    }
    out
}
