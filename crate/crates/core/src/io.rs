//! JSON artifacts for channels, codes and synthesis results.
//!
//! Matrices are flat row-major lists of `[re, im]` pairs. Readers validate
//! the same invariants as the in-memory constructors and name the offending
//! field on failure.

use serde::{Deserialize, Serialize};

use crate::channel::{rearrange, ChoiMatrix, KrausChannel, TransferMatrix};
use crate::code::CodeSpace;
use crate::numkernel::{ComplexMatrix, C64};
use crate::sdp::SolveStatus;
use crate::synth::{Formulation, Residuals, SolverSummary, SynthesisResult};
use crate::{Error, Result};

/// Admission tolerance for recoveries read back from a result file.
pub const RESULT_TOL: f64 = 1e-6;

type WireVec = Vec<[f64; 2]>;

fn to_wire(v: &[C64]) -> WireVec {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn from_wire(v: &[[f64; 2]]) -> Vec<C64> {
    v.iter().map(|&[re, im]| C64::new(re, im)).collect()
}

fn square_from_wire(field: &str, side: usize, v: &[[f64; 2]]) -> Result<ComplexMatrix> {
    if v.len() != side * side {
        return Err(Error::Format(format!(
            "field `{field}`: expected {} entries for a {side}x{side} matrix, got {}",
            side * side,
            v.len()
        )));
    }
    if let Some(k) = v.iter().position(|[re, im]| !re.is_finite() || !im.is_finite()) {
        return Err(Error::Format(format!("field `{field}`: entry {k} is not finite")));
    }
    ComplexMatrix::new(side, side, from_wire(v))
}

fn field_err(field: &str, e: Error) -> Error {
    Error::Format(format!("field `{field}`: {e}"))
}

/// A channel in whichever representation the file carried.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelData {
    Kraus(KrausChannel),
    Transfer(TransferMatrix),
    Choi(ChoiMatrix),
}

impl ChannelData {
    pub fn dim(&self) -> usize {
        match self {
            Self::Kraus(k) => k.dim(),
            Self::Transfer(t) => t.dim(),
            Self::Choi(c) => c.dim(),
        }
    }

    pub fn transfer(&self) -> TransferMatrix {
        match self {
            Self::Kraus(k) => k.transfer(),
            Self::Transfer(t) => t.clone(),
            Self::Choi(c) => c.transfer(),
        }
    }

    pub fn kraus(&self) -> Result<KrausChannel> {
        match self {
            Self::Kraus(k) => Ok(k.clone()),
            Self::Transfer(t) => crate::channel::kraus_from_choi(&t.choi()),
            Self::Choi(c) => crate::channel::kraus_from_choi(c),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ChannelFile {
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kraus: Option<Vec<WireVec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transfer: Option<WireVec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choi: Option<WireVec>,
}

pub fn channel_to_json(ch: &ChannelData) -> Result<String> {
    let n = ch.dim();
    let mut file = ChannelFile { dim: n, kraus: None, transfer: None, choi: None };
    match ch {
        ChannelData::Kraus(k) => file.kraus = Some(k.ops().iter().map(|e| to_wire(e.as_slice())).collect()),
        ChannelData::Transfer(t) => file.transfer = Some(to_wire(t.matrix().as_slice())),
        ChannelData::Choi(c) => file.choi = Some(to_wire(c.matrix().as_slice())),
    }
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn channel_from_json(text: &str) -> Result<ChannelData> {
    let file: ChannelFile = serde_json::from_str(text)?;
    let n = file.dim;
    if n == 0 {
        return Err(Error::Format("field `dim`: must be positive".into()));
    }
    match (file.kraus, file.transfer, file.choi) {
        (Some(ops), None, None) => {
            if ops.is_empty() {
                return Err(Error::Format("field `kraus`: empty Kraus set".into()));
            }
            let mats = ops
                .iter()
                .enumerate()
                .map(|(k, v)| square_from_wire(&format!("kraus[{k}]"), n, v))
                .collect::<Result<Vec<_>>>()?;
            KrausChannel::new(mats).map(ChannelData::Kraus).map_err(|e| field_err("kraus", e))
        }
        (None, Some(v), None) => {
            let m = square_from_wire("transfer", n * n, &v)?;
            TransferMatrix::new(m).map(ChannelData::Transfer).map_err(|e| field_err("transfer", e))
        }
        (None, None, Some(v)) => {
            let m = square_from_wire("choi", n * n, &v)?;
            ChoiMatrix::new(m).map(ChannelData::Choi).map_err(|e| field_err("choi", e))
        }
        _ => Err(Error::Format("exactly one of `kraus`, `transfer`, `choi` must be present".into())),
    }
}

#[derive(Serialize, Deserialize)]
struct CodeFile {
    ambient_dim: usize,
    basis: Vec<WireVec>,
}

pub fn code_to_json(c: &CodeSpace) -> Result<String> {
    let file = CodeFile { ambient_dim: c.ambient_dim(), basis: c.basis().iter().map(|v| to_wire(v)).collect() };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn code_from_json(text: &str) -> Result<CodeSpace> {
    let file: CodeFile = serde_json::from_str(text)?;
    for (k, v) in file.basis.iter().enumerate() {
        if v.len() != file.ambient_dim {
            return Err(Error::Format(format!(
                "field `basis[{k}]`: expected {} entries, got {}",
                file.ambient_dim,
                v.len()
            )));
        }
    }
    let basis = file.basis.iter().map(|v| from_wire(v)).collect();
    CodeSpace::new(file.ambient_dim, basis).map_err(|e| field_err("basis", e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverRecord {
    pub status: SolveStatus,
    pub iterations: usize,
    pub gap: f64,
}

/// On-disk form of a [`SynthesisResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub dim: usize,
    pub epsilon: f64,
    pub tau: f64,
    pub guaranteed_fidelity: f64,
    pub formulation: Formulation,
    pub transfer: WireVec,
    pub choi: WireVec,
    pub multiplier: WireVec,
    pub residuals: Residuals,
    pub solver: SolverRecord,
}

impl From<&SynthesisResult> for ResultFile {
    fn from(r: &SynthesisResult) -> Self {
        Self {
            dim: r.recovery.dim(),
            epsilon: r.epsilon,
            tau: r.tau,
            guaranteed_fidelity: r.guaranteed_fidelity,
            formulation: r.formulation,
            transfer: to_wire(r.recovery.matrix().as_slice()),
            choi: to_wire(r.choi.matrix().as_slice()),
            multiplier: to_wire(r.multiplier.as_slice()),
            residuals: r.residuals.clone(),
            solver: SolverRecord { status: r.solver.status, iterations: r.solver.iterations, gap: r.solver.gap },
        }
    }
}

impl ResultFile {
    pub fn into_result(self) -> Result<SynthesisResult> {
        let n2 = self.dim * self.dim;
        let choi_mat = square_from_wire("choi", n2, &self.choi)?;
        let choi = ChoiMatrix::with_tolerance(choi_mat, RESULT_TOL).map_err(|e| field_err("choi", e))?;
        let transfer = square_from_wire("transfer", n2, &self.transfer)?;
        let drift = transfer.max_abs_diff(&rearrange(choi.matrix())?);
        if drift > RESULT_TOL {
            return Err(Error::Format(format!("field `transfer`: disagrees with `choi` by {drift:.3e}")));
        }
        let multiplier = square_from_wire("multiplier", n2, &self.multiplier)?;
        Ok(SynthesisResult {
            recovery: TransferMatrix::new_unchecked(transfer)?,
            choi,
            epsilon: self.epsilon,
            tau: self.tau,
            guaranteed_fidelity: self.guaranteed_fidelity,
            formulation: self.formulation,
            residuals: self.residuals,
            solver: SolverSummary { status: self.solver.status, iterations: self.solver.iterations, gap: self.solver.gap },
            multiplier,
        })
    }
}

pub fn result_to_json(r: &SynthesisResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ResultFile::from(r))?)
}

pub fn result_from_json(text: &str) -> Result<SynthesisResult> {
    let file: ResultFile = serde_json::from_str(text)?;
    file.into_result()
}
