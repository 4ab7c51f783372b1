//! CSV and JSON outputs: training history, evaluation reports, sweep tables.

use std::path::Path;

use collocate_core::eval::{quartiles, BoundAudit, EvalReport, LipschitzKind, RMSE_NORMALIZATION};
use collocate_core::train::EpochRecord;
use serde::Serialize;

use crate::{write_file, Error};

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<impl ToString>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub const HISTORY_COLUMNS: [&str; 5] = ["epoch", "total", "state_term", "action_term", "lr"];

pub fn write_history(path: &Path, epochs: &[EpochRecord]) -> Result<(), Error> {
    let rows = epochs.iter().map(|e| vec![e.epoch.to_string(), num(e.total), num(e.state_term), num(e.action_term), num(e.lr)]);
    write_file(path, &csv_bytes(&HISTORY_COLUMNS, rows))
}

#[derive(Serialize)]
struct ReportFile<'a> {
    policy: &'a str,
    checkpoint_sha256: &'a str,
    data_sha256: &'a str,
    rmse_normalization: &'static str,
    deviation_norm: &'static str,
    median_rmse: Option<f64>,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub struct ReportMeta<'a> {
    pub policy: &'a str,
    pub checkpoint_sha256: &'a str,
    pub data_sha256: &'a str,
}

pub const DEVIATION_COLUMNS: [&str; 7] = ["step", "full_q25", "full_q50", "full_q75", "joint_q25", "joint_q50", "joint_q75"];

/// Writes `report.json`, `rmse.csv`, `deviation.csv` and, when audited, `audit.csv`.
///
/// Non-finite numbers (diverged rollouts) appear as `null` in JSON and `inf` in CSV.
pub fn write_eval(dir: &Path, report: &EvalReport, meta: &ReportMeta) -> Result<(), Error> {
    let median = report.median_rmse();
    let file = ReportFile {
        policy: meta.policy,
        checkpoint_sha256: meta.checkpoint_sha256,
        data_sha256: meta.data_sha256,
        rmse_normalization: RMSE_NORMALIZATION,
        deviation_norm: "full: ||(q,qd)_hat - (q,qd)||_2; joint: ||q_hat - q||_2 / sqrt(d)",
        median_rmse: median.is_finite().then_some(median),
        report,
    };
    let mut json = serde_json::to_string_pretty(&file).expect("report serializes");
    json.push('\n');
    write_file(&dir.join("report.json"), json.as_bytes())?;

    let rows = (0..report.rmse.len()).map(|i| {
        vec![
            report.trajectory_ids[i].to_string(),
            num(report.rmse[i]),
            opt(report.diverged_at[i]),
            num(report.deviation_quarter[i]),
            num(report.deviation_final[i]),
        ]
    });
    write_file(&dir.join("rmse.csv"), &csv_bytes(&["trajectory_id", "rmse", "diverged_at", "deviation_quarter", "deviation_final"], rows))?;
    write_deviation(&dir.join("deviation.csv"), report)?;
    if let Some(a) = &report.audit {
        write_audit(&dir.join("audit.csv"), a)?;
    }
    Ok(())
}

pub fn write_deviation(path: &Path, report: &EvalReport) -> Result<(), Error> {
    let (f, j) = (&report.deviation.full_state, &report.deviation.per_joint);
    let rows =
        (0..f.q50.len()).map(|t| vec![t.to_string(), num(f.q25[t]), num(f.q50[t]), num(f.q75[t]), num(j.q25[t]), num(j.q50[t]), num(j.q75[t])]);
    write_file(path, &csv_bytes(&DEVIATION_COLUMNS, rows))
}

fn write_audit(path: &Path, a: &BoundAudit) -> Result<(), Error> {
    let kind = match a.kind {
        LipschitzKind::Certified => "certified",
        LipschitzKind::Estimated => "estimated",
    };
    let rows = a.trajectories.iter().map(|t| {
        vec![
            t.id.to_string(),
            kind.to_string(),
            num(a.lipschitz),
            t.horizon.to_string(),
            opt(t.diverged_at),
            num(t.recursion_margin),
            num(t.cumulative_margin),
            opt(t.split_margin),
            opt(t.aux_recursion_margin),
            opt(t.aux_bound_margin),
        ]
    });
    let header = [
        "trajectory_id",
        "lipschitz_kind",
        "lipschitz",
        "horizon",
        "diverged_at",
        "recursion_margin",
        "cumulative_margin",
        "split_margin",
        "aux_recursion_margin",
        "aux_bound_margin",
    ];
    write_file(path, &csv_bytes(&header, rows))
}

/// One sweep run. Column order is the CSV schema.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub run_id: String,
    pub method: String,
    pub class: String,
    pub size: usize,
    pub seed: u64,
    /// `ok`, or the failure message.
    pub status: String,
    pub epochs: usize,
    pub final_loss: f64,
    pub rmse_q25: f64,
    pub rmse_median: f64,
    pub rmse_q75: f64,
    pub success_rate: f64,
    pub deviation_quarter_median: f64,
    pub deviation_final_median: f64,
    pub diverged: usize,
}

pub const SWEEP_COLUMNS: [&str; 15] = [
    "run_id",
    "method",
    "class",
    "size",
    "seed",
    "status",
    "epochs",
    "final_loss",
    "rmse_q25",
    "rmse_median",
    "rmse_q75",
    "success_rate",
    "deviation_quarter_median",
    "deviation_final_median",
    "diverged",
];

impl SweepRow {
    #[allow(clippy::too_many_arguments)]
    pub fn from_report(run_id: String, method: &str, class: &str, size: usize, seed: u64, epochs: usize, final_loss: f64, r: &EvalReport) -> Self {
        let q = quartiles(&r.rmse);
        Self {
            run_id,
            method: method.into(),
            class: class.into(),
            size,
            seed,
            status: "ok".into(),
            epochs,
            final_loss,
            rmse_q25: q[0],
            rmse_median: q[1],
            rmse_q75: q[2],
            success_rate: r.success_rate,
            deviation_quarter_median: quartiles(&r.deviation_quarter)[1],
            deviation_final_median: quartiles(&r.deviation_final)[1],
            diverged: r.diverged_at.iter().filter(|d| d.is_some()).count(),
        }
    }

    pub fn failed(run_id: String, method: &str, class: &str, size: usize, seed: u64, why: String) -> Self {
        Self {
            run_id,
            method: method.into(),
            class: class.into(),
            size,
            seed,
            status: why,
            epochs: 0,
            final_loss: f64::NAN,
            rmse_q25: f64::NAN,
            rmse_median: f64::NAN,
            rmse_q75: f64::NAN,
            success_rate: f64::NAN,
            deviation_quarter_median: f64::NAN,
            deviation_final_median: f64::NAN,
            diverged: 0,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.run_id.clone(),
            self.method.clone(),
            self.class.clone(),
            self.size.to_string(),
            self.seed.to_string(),
            self.status.clone(),
            self.epochs.to_string(),
            num(self.final_loss),
            num(self.rmse_q25),
            num(self.rmse_median),
            num(self.rmse_q75),
            num(self.success_rate),
            num(self.deviation_quarter_median),
            num(self.deviation_final_median),
            self.diverged.to_string(),
        ]
    }
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), Error> {
    write_file(path, &csv_bytes(&SWEEP_COLUMNS, rows.iter().map(SweepRow::record)))
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>, Error> {
    let data = |e: &dyn std::fmt::Display| Error::Data(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| data(&e))?;
    let header: Vec<String> = r.headers().map_err(|e| data(&e))?.iter().map(String::from).collect();
    if header != SWEEP_COLUMNS {
        return Err(data(&"unexpected sweep columns"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| data(&e))?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| data(&e));
        let u = |i: usize| rec[i].parse::<u64>().map_err(|e| data(&e));
        out.push(SweepRow {
            run_id: rec[0].into(),
            method: rec[1].into(),
            class: rec[2].into(),
            size: u(3)? as usize,
            seed: u(4)?,
            status: rec[5].into(),
            epochs: u(6)? as usize,
            final_loss: f(7)?,
            rmse_q25: f(8)?,
            rmse_median: f(9)?,
            rmse_q75: f(10)?,
            success_rate: f(11)?,
            deviation_quarter_median: f(12)?,
            deviation_final_median: f(13)?,
            diverged: u(14)? as usize,
        });
    }
    Ok(out)
}

pub const RMSE_TABLE_COLUMNS: [&str; 7] = ["run_id", "method", "class", "size", "seed", "trajectory_id", "rmse"];

/// Long-format per-trajectory RMSE across sweep runs, for box plots.
pub fn write_rmse_table(path: &Path, rows: &[(SweepRow, Vec<(u64, f64)>)]) -> Result<(), Error> {
    let recs = rows.iter().flat_map(|(r, v)| {
        v.iter().map(move |(id, x)| {
            vec![r.run_id.clone(), r.method.clone(), r.class.clone(), r.size.to_string(), r.seed.to_string(), id.to_string(), num(*x)]
        })
    });
    write_file(path, &csv_bytes(&RMSE_TABLE_COLUMNS, recs))
}
