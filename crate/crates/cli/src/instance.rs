//! On-disk instance format.

use serde::{Deserialize, Serialize};

use qot_core::synthetic::{make_affine_family, AffineBenchmark, EmpiricalInstance, FamilyParams};
use qot_core::{PointCloud, QotError};

use crate::error::{CliError, CliResult};

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

/// Benchmark provenance of a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyRecord {
    pub d: usize,
    pub base: f64,
    pub corr_weight: f64,
    pub trunc_factor: f64,
    pub seed: u64,
    pub p_pair: f64,
    pub paired_count: usize,
    pub scale: f64,
}

impl FamilyRecord {
    pub fn params(&self) -> FamilyParams {
        FamilyParams {
            base: self.base,
            corr_weight: self.corr_weight,
            trunc_factor: self.trunc_factor,
        }
    }

    pub fn benchmark(&self) -> CliResult<AffineBenchmark> {
        make_affine_family(self.d, &self.params()).map_err(CliError::from)
    }
}

/// Point clouds with optional weights (uniform when absent) and optional
/// benchmark record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    pub y: Vec<Vec<f64>>,
}

impl InstanceFile {
    pub fn from_instance(inst: &EmpiricalInstance) -> Self {
        let bench = &inst.benchmark;
        Self {
            schema_version: INSTANCE_SCHEMA_VERSION,
            family: Some(FamilyRecord {
                d: bench.d,
                base: bench.params.base,
                corr_weight: bench.params.corr_weight,
                trunc_factor: bench.params.trunc_factor,
                seed: inst.seed,
                p_pair: inst.p_pair,
                paired_count: inst.paired_count,
                scale: bench.scale,
            }),
            a: None,
            b: None,
            x: inst.x.rows(),
            y: inst.y.rows(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != INSTANCE_SCHEMA_VERSION {
            return Err(CliError::invalid(format!(
                "schema_version: expected {INSTANCE_SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        Ok(())
    }

    pub fn clouds(&self) -> CliResult<(PointCloud, PointCloud)> {
        let x = PointCloud::from_rows(&self.x).map_err(|e| CliError::from(e).context("X"))?;
        let y = PointCloud::from_rows(&self.y).map_err(|e| CliError::from(e).context("Y"))?;
        if x.dim() != y.dim() {
            return Err(CliError::from(QotError::InvalidInput(format!(
                "X has dimension {}, Y has dimension {}",
                x.dim(),
                y.dim()
            ))));
        }
        Ok((x, y))
    }

    pub fn weights(&self) -> (Vec<f64>, Vec<f64>) {
        let uniform = |k: usize| vec![1.0 / k as f64; k];
        (
            self.a.clone().unwrap_or_else(|| uniform(self.x.len())),
            self.b.clone().unwrap_or_else(|| uniform(self.y.len())),
        )
    }

    /// Fully paired benchmark instances admit a closed-form unregularized optimum.
    pub fn fully_paired(&self) -> bool {
        self.family.as_ref().is_some_and(|f| {
            f.paired_count == self.x.len() && f.paired_count == self.y.len()
        }) && self.a.is_none()
            && self.b.is_none()
    }
}
