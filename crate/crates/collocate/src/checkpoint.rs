//! Parameter checkpoints: a JSON manifest naming the layout, followed by
//! every network as activation tag, layer shapes and row-major `f64` payloads.

use std::fs;
use std::path::Path;

use collocate_core::aux::{AuxMode, AuxTrajParams};
use collocate_core::linalg::Matrix;
use collocate_core::mlp::{Activation, Layer, MlpParams};
use collocate_core::policy::{NnPolicy, Policy, PolicyClass, RmpPolicy, Subtask, SubtaskMap};
use serde::{Deserialize, Serialize};

use crate::binfmt::{FormatError, Reader, Writer};
use crate::Error;

const MAGIC: &[u8; 4] = b"CLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskManifest {
    pub map: SubtaskMap,
    pub diag_offset: f64,
}

/// What the networks in a checkpoint mean, in file order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifest {
    /// Nn: one network. Rmp: acceleration then Cholesky network per subtask.
    Policy {
        class: PolicyClass,
        dof: usize,
        feature_dim: usize,
        subtasks: Vec<SubtaskManifest>,
    },
    Aux {
        mode: AuxMode,
        dof: usize,
        delta: f64,
    },
    /// Open-loop replay of each trajectory's recorded actions; no networks.
    Replay,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint {
    Policy(Policy),
    Aux(AuxTrajParams),
    Replay,
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Policy(_) => "policy",
            Checkpoint::Aux(_) => "aux",
            Checkpoint::Replay => "replay",
        }
    }

    fn parts(&self) -> (Manifest, Vec<&MlpParams>) {
        match self {
            Checkpoint::Policy(Policy::Nn(p)) => {
                (Manifest::Policy { class: PolicyClass::Nn, dof: p.dof(), feature_dim: p.feature_dim(), subtasks: vec![] }, vec![&p.net])
            }
            Checkpoint::Policy(Policy::Rmp(p)) => (
                Manifest::Policy {
                    class: PolicyClass::Rmp,
                    dof: p.dof(),
                    feature_dim: p.feature_dim(),
                    subtasks: p.subtasks.iter().map(|s| SubtaskManifest { map: s.map, diag_offset: s.diag_offset }).collect(),
                },
                p.subtasks.iter().flat_map(|s| [&s.accel_net, &s.cholesky_net]).collect(),
            ),
            Checkpoint::Aux(a) => (Manifest::Aux { mode: a.mode, dof: a.dof(), delta: a.delta }, a.nets.iter().collect()),
            Checkpoint::Replay => (Manifest::Replay, vec![]),
        }
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let (manifest, nets) = ck.parts();
    let mut w = Writer::new(MAGIC, CHECKPOINT_VERSION);
    w.bytes(serde_json::to_string(&manifest).expect("manifest serializes").as_bytes());
    w.u32(nets.len() as u32);
    for net in nets {
        w.u8(net.activation().tag());
        w.u32(net.layers().len() as u32);
        for layer in net.layers() {
            w.u32(layer.weight.rows() as u32);
            w.u32(layer.weight.cols() as u32);
            w.f64s(layer.weight.as_slice());
            w.f64s(&layer.bias);
        }
    }
    w.finish()
}

fn invalid(e: impl std::fmt::Display) -> FormatError {
    FormatError::Invalid(e.to_string())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let mut r = Reader::open(bytes, MAGIC, "checkpoint", CHECKPOINT_VERSION)?;
    let manifest: Manifest = serde_json::from_slice(r.bytes()?).map_err(invalid)?;
    let n = r.u32()? as usize;
    let mut nets = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = r.u8()?;
        let activation = Activation::from_tag(tag).ok_or_else(|| invalid(format!("activation tag {tag}")))?;
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let weight = Matrix::from_vec(rows, cols, r.f64s(rows.checked_mul(cols).ok_or_else(|| invalid("layer shape"))?)?);
            let bias = r.f64s(rows)?;
            layers.push(Layer { weight, bias });
        }
        nets.push(MlpParams::new(layers, activation).map_err(invalid)?);
    }
    r.finish()?;
    match manifest {
        Manifest::Policy { class: PolicyClass::Nn, dof, feature_dim, .. } => {
            let [net]: [MlpParams; 1] = nets.try_into().map_err(|_| invalid("nn policy needs exactly one network"))?;
            Ok(Checkpoint::Policy(Policy::Nn(NnPolicy::new(net, dof, feature_dim).map_err(invalid)?)))
        }
        Manifest::Policy { class: PolicyClass::Rmp, dof, feature_dim, subtasks } => {
            if nets.len() != 2 * subtasks.len() {
                return Err(invalid("rmp policy needs two networks per subtask"));
            }
            let mut it = nets.into_iter();
            let subtasks = subtasks
                .into_iter()
                .map(|m| Subtask {
                    map: m.map,
                    accel_net: it.next().expect("counted"),
                    cholesky_net: it.next().expect("counted"),
                    diag_offset: m.diag_offset,
                })
                .collect();
            Ok(Checkpoint::Policy(Policy::Rmp(RmpPolicy::new(subtasks, dof, feature_dim).map_err(invalid)?)))
        }
        Manifest::Aux { mode, dof, delta } => Ok(Checkpoint::Aux(AuxTrajParams::new(mode, nets, dof, delta).map_err(invalid)?)),
        Manifest::Replay if nets.is_empty() => Ok(Checkpoint::Replay),
        Manifest::Replay => Err(invalid("replay checkpoint carries networks")),
    }
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<(), Error> {
    crate::write_file(path, &encode(ck))
}

pub fn load(path: &Path) -> Result<Checkpoint, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
