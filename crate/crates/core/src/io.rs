//! Versioned JSON documents for instances and certificates.
//!
//! Floats are written with shortest round-trip formatting and parsed with
//! `float_roundtrip`, so every `f64` survives a write/read cycle bit-exactly.

use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::admm::{RunRecord, RunStatus, SolverConfig, StepsizeMode, Variant};
use crate::error::IoError;
use crate::generate::{FamilyPayload, GeneratedInstance, InstanceSpec};
use crate::linalg::BlockVector;
use crate::problem::{
    inclusion_gap, inclusion_scale, matrix_serde, BlockProblem, ProxTerm, SmoothTerm, StationarityMode,
    StationaryCertificate,
};

pub const INSTANCE_SCHEMA: &str = "aadmm.instance.v1";
pub const CERTIFICATE_SCHEMA: &str = "aadmm.certificate.v1";
pub const BENCH_SCHEMA: &str = "aadmm.bench.v1";

/// Relative tolerance on the recomputed inclusion gap.
pub const INCLUSION_TOL: f64 = 1e-9;

fn check_schema(found: &str, expected: &str) -> Result<(), IoError> {
    if found == expected {
        Ok(())
    } else {
        Err(IoError::Schema {
            found: found.into(),
            expected: expected.into(),
        })
    }
}

pub fn read_file(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_str(&read_file(path)?)?)
}

/// On-disk instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub schema: String,
    #[serde(rename = "B")]
    pub blocks: usize,
    pub dims: Vec<usize>,
    pub l: usize,
    /// Constraint blocks `A_t`, row-major.
    #[serde(rename = "A", with = "matrix_serde::vec")]
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<f64>,
    pub boxes: Vec<ProxTerm>,
    pub smooth: SmoothTerm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_lipschitz: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<InstanceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<FamilyPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<BlockVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_b: Option<BlockVector>,
}

/// A validated instance read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedInstance {
    pub problem: BlockProblem,
    pub x0: Option<BlockVector>,
    pub x_b: Option<BlockVector>,
    pub generator: Option<InstanceSpec>,
    pub payload: Option<FamilyPayload>,
}

impl LoadedInstance {
    /// Stored start point, or the box-projected origin.
    pub fn start(&self) -> BlockVector {
        match &self.x0 {
            Some(x) => x.clone(),
            None => {
                let mut x = self.problem.zeros();
                for t in 0..self.problem.num_blocks() {
                    self.problem.term(t).prox_in_place(x.block_mut(t));
                }
                x
            }
        }
    }
}

impl From<GeneratedInstance> for LoadedInstance {
    fn from(g: GeneratedInstance) -> Self {
        Self {
            problem: g.problem,
            x0: Some(g.x0),
            x_b: Some(g.x_b),
            generator: Some(g.spec),
            payload: Some(g.payload),
        }
    }
}

impl InstanceFile {
    pub fn from_problem(problem: &BlockProblem) -> Self {
        Self {
            schema: INSTANCE_SCHEMA.into(),
            blocks: problem.num_blocks(),
            dims: problem.dims().to_vec(),
            l: problem.num_rows(),
            a: problem.constraint_blocks().to_vec(),
            b: problem.rhs().to_vec(),
            boxes: problem.terms().to_vec(),
            smooth: problem.smooth().clone(),
            m: problem.weak_convexity().map(<[f64]>::to_vec),
            cross_lipschitz: problem.cross_lipschitz().map(<[f64]>::to_vec),
            seed: None,
            generator: None,
            payload: None,
            x0: None,
            x_b: None,
        }
    }

    pub fn from_loaded(inst: &LoadedInstance) -> Self {
        Self {
            seed: inst.generator.map(|g| g.seed),
            generator: inst.generator,
            payload: inst.payload.clone(),
            x0: inst.x0.clone(),
            x_b: inst.x_b.clone(),
            ..Self::from_problem(&inst.problem)
        }
    }

    pub fn from_generated(inst: &GeneratedInstance) -> Self {
        Self {
            seed: Some(inst.spec.seed),
            generator: Some(inst.spec),
            payload: Some(inst.payload.clone()),
            x0: Some(inst.x0.clone()),
            x_b: Some(inst.x_b.clone()),
            ..Self::from_problem(&inst.problem)
        }
    }

    pub fn into_instance(self) -> Result<LoadedInstance, IoError> {
        check_schema(&self.schema, INSTANCE_SCHEMA)?;
        let dims: Vec<usize> = self.a.iter().map(|a| a.ncols()).collect();
        if self.blocks != self.a.len() || dims != self.dims {
            return Err(IoError::Config(format!(
                "header declares B = {} with dims {:?}, constraint blocks give {:?}",
                self.blocks, self.dims, dims
            )));
        }
        if self.l != self.b.len() {
            return Err(IoError::Config(format!("header declares l = {}, b has {} entries", self.l, self.b.len())));
        }
        let mut problem = BlockProblem::new(self.a, self.b, self.boxes, self.smooth)?;
        if let Some(m) = self.m {
            problem = problem.with_weak_convexity(m)?;
        }
        if let Some(l) = self.cross_lipschitz {
            problem = problem.with_cross_lipschitz(l)?;
        }
        for x in [&self.x0, &self.x_b].into_iter().flatten() {
            problem.check_domain(x)?;
        }
        Ok(LoadedInstance {
            problem,
            x0: self.x0,
            x_b: self.x_b,
            generator: self.generator,
            payload: self.payload,
        })
    }
}

pub fn parse_instance(text: &str) -> Result<LoadedInstance, IoError> {
    serde_json::from_str::<InstanceFile>(text)?.into_instance()
}

pub fn instance_to_string(file: &InstanceFile) -> Result<String, IoError> {
    Ok(serde_json::to_string_pretty(file)?)
}

pub fn read_instance(path: &Path) -> Result<LoadedInstance, IoError> {
    read_json::<InstanceFile>(path)?.into_instance()
}

pub fn write_instance(path: &Path, file: &InstanceFile) -> Result<(), IoError> {
    write_json(path, file)
}

/// On-disk certificate document: the output quadruple of a run and the
/// tolerances it was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub schema: String,
    pub variant: Variant,
    pub stepsize: StepsizeMode,
    pub status: RunStatus,
    pub rho: f64,
    pub eta: f64,
    pub mode: StationarityMode,
    pub certificate: StationaryCertificate,
}

impl CertificateFile {
    /// `None` for runs that produced no certificate.
    pub fn from_run(record: &RunRecord, config: &SolverConfig) -> Option<Self> {
        let cert = record.certificate.clone()?;
        let mode = config.stationarity_mode(&record.tolerances?);
        let (rho, eta) = (config.rho, config.eta);
        Some(Self {
            schema: CERTIFICATE_SCHEMA.into(),
            variant: record.variant,
            stepsize: record.stepsize,
            status: record.status,
            rho,
            eta,
            mode,
            certificate: cert,
        })
    }
}

pub fn parse_certificate(text: &str) -> Result<CertificateFile, IoError> {
    let file: CertificateFile = serde_json::from_str(text)?;
    check_schema(&file.schema, CERTIFICATE_SCHEMA)?;
    let c = &file.certificate;
    if c.v_hat.dims() != c.x_hat.dims() {
        return Err(IoError::Config("certificate x_hat and v_hat have different block shapes".into()));
    }
    Ok(file)
}

pub fn read_certificate(path: &Path) -> Result<CertificateFile, IoError> {
    parse_certificate(&read_file(path)?)
}

pub fn write_certificate(path: &Path, file: &CertificateFile) -> Result<(), IoError> {
    write_json(path, file)
}

/// Outcome of re-checking a certificate against problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub feas_norm: f64,
    pub stat_norm: f64,
    pub inclusion_gap: f64,
    pub inclusion_tol: f64,
    pub inclusion_ok: bool,
    pub tolerances_ok: bool,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.inclusion_ok && self.tolerances_ok
    }
}

/// Recomputes every norm from the stored vectors; the stored norms are not
/// trusted.
pub fn verify_certificate(problem: &BlockProblem, file: &CertificateFile) -> Result<VerifyReport, IoError> {
    let c = &file.certificate;
    if !(c.eps_hat >= 0.0) {
        return Err(IoError::Config(format!("certificate eps {} is negative", c.eps_hat)));
    }
    let cert = StationaryCertificate::new(problem, c.x_hat.clone(), c.p_hat.clone(), c.v_hat.clone(), c.eps_hat);
    let gap = inclusion_gap(problem, &cert)?;
    let inclusion_tol = cert.eps_hat + INCLUSION_TOL * inclusion_scale(problem, &cert);
    let tolerances_ok = crate::problem::check_stationarity(&cert, file.rho, file.eta, file.mode)?;
    Ok(VerifyReport {
        feas_norm: cert.feas_norm,
        stat_norm: cert.stat_norm_sq.sqrt(),
        inclusion_gap: gap,
        inclusion_tol,
        inclusion_ok: gap <= inclusion_tol,
        tolerances_ok,
    })
}
