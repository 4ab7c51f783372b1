//! Versioned binary dataset files and their JSON debug export.

use std::fs;
use std::path::Path;

use collocate_core::arm::{ArmSpec, Dataset, Provenance, State, TaskMeta, Trajectory};

use crate::binfmt::{FormatError, Reader, Writer};
use crate::Error;

const MAGIC: &[u8; 4] = b"CLDS";
pub const DATASET_VERSION: u32 = 2;

pub fn encode(ds: &Dataset) -> Vec<u8> {
    let d = ds.arm.dof();
    let mut w = Writer::new(MAGIC, DATASET_VERSION);
    w.f64(ds.ts);
    w.u32(d as u32);
    w.f64s(ds.arm.link_lengths());
    w.u64(ds.provenance.seed);
    w.u64(ds.provenance.config_digest);
    w.u64(ds.trajectories.len() as u64);
    for tr in &ds.trajectories {
        w.u64(tr.id);
        w.u8(tr.expert as u8);
        w.u64(tr.horizon() as u64);
        for s in &tr.states {
            w.f64s(&s.q);
            w.f64s(&s.qd);
        }
        match &tr.actions {
            Some(actions) => {
                w.u8(1);
                actions.iter().for_each(|a| w.f64s(a));
            }
            None => w.u8(0),
        }
        w.f64s(&tr.meta.start_ee);
        w.f64s(&tr.meta.goal_ee);
        w.u64(tr.meta.features.len() as u64);
        w.f64s(&tr.meta.features);
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<Dataset, FormatError> {
    let mut r = Reader::open(bytes, MAGIC, "dataset", DATASET_VERSION)?;
    let ts = r.f64()?;
    let d = r.u32()? as usize;
    let links = r.f64s(d)?;
    let arm = ArmSpec::new(links).map_err(|e| FormatError::Invalid(e.to_string()))?;
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(FormatError::Invalid(format!("sample time {ts}")));
    }
    let provenance = Provenance { seed: r.u64()?, config_digest: r.u64()? };
    let n = r.len(8)?;
    let mut trajectories = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64()?;
        let expert = r.u8()? != 0;
        let horizon = r.len(16 * d)?;
        let mut states = Vec::with_capacity(horizon + 1);
        for _ in 0..=horizon {
            let q = r.f64s(d)?;
            let qd = r.f64s(d)?;
            states.push(State::new(q, qd));
        }
        let actions = match r.u8()? {
            0 => None,
            1 => Some((0..horizon).map(|_| r.f64s(d)).collect::<Result<Vec<_>, _>>()?),
            x => return Err(FormatError::Invalid(format!("action flag {x}"))),
        };
        let start_ee = r.f64s(3)?.try_into().expect("3 values");
        let goal_ee = r.f64s(3)?.try_into().expect("3 values");
        let nf = r.len(8)?;
        let features = r.f64s(nf)?;
        trajectories.push(Trajectory { id, ts, states, actions, meta: TaskMeta { start_ee, goal_ee, features }, expert });
    }
    r.finish()?;
    Ok(Dataset { ts, arm, trajectories, provenance })
}

pub fn save(path: &Path, ds: &Dataset) -> Result<(), Error> {
    crate::write_file(path, &encode(ds))
}

pub fn load(path: &Path) -> Result<Dataset, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Human-readable export for debugging.
pub fn to_json(ds: &Dataset) -> String {
    serde_json::to_string_pretty(ds).expect("dataset serializes")
}
