//! The `collocate` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use collocate_core::arm::{Dataset, Trajectory};
use collocate_core::aux::AuxDemo;
use collocate_core::eval::{evaluate, evaluate_replay, EvalReport};
use collocate_core::expert::generate_dataset;
use collocate_core::policy::{Policy, PolicyClass};
use collocate_core::train::{Method, TrainError};
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::pipeline::{audit, feature_dim, init_models, train_error, train_models};
use crate::report::{self, ReportMeta};
use crate::svg::{self, BandSeries, BoxGroup};
use crate::{dataset, sha256_hex, sweep, write_file, Error};

#[derive(Parser, Debug)]
#[command(name = "collocate", version, about = "Imitation learning with collocated auxiliary trajectories on a planar arm")]
pub struct Cli {
    /// TOML run configuration; every section is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root; each command writes to `<root>/<command>` unless `--out` is given.
    #[arg(long, global = true, env = "COLLOCATE_OUT")]
    pub out_root: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "COLLOCATE_JOBS", default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate expert demonstrations.
    Gen(GenArgs),
    /// Train a policy on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Data-efficiency sweep over methods, classes, sizes and seeds.
    Sweep(SweepArgs),
    /// Render SVG figures from deviation and RMSE tables.
    Plot(PlotArgs),
    /// Write a dataset (or auxiliary trajectories) as JSON for inspection.
    Export(ExportArgs),
    /// Write a checkpoint that replays each trajectory's recorded actions.
    Replay(OutArg),
}

#[derive(Args, Debug)]
pub struct OutArg {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Bc,
    #[value(name = "bc_noise")]
    BcNoise,
    Code,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bc => Method::Bc,
            MethodArg::BcNoise => Method::BcNoise,
            MethodArg::Code => Method::Code,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    Nn,
    Rmp,
}

impl From<ClassArg> for PolicyClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Nn => PolicyClass::Nn,
            ClassArg::Rmp => PolicyClass::Rmp,
        }
    }
}

/// Half-open trajectory index range `a..b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Range(pub usize, pub usize);

fn parse_range(s: &str) -> Result<Range, String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let a = a.parse().map_err(|e| format!("{e}"))?;
    let b = b.parse().map_err(|e| format!("{e}"))?;
    if a >= b {
        return Err("empty range".into());
    }
    Ok(Range(a, b))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "code")]
    pub method: MethodArg,
    #[arg(long = "policy", value_enum)]
    pub policy: Option<ClassArg>,
    #[arg(long)]
    pub data: PathBuf,
    /// Train on trajectories `a..b` only.
    #[arg(long, value_parser = parse_range)]
    pub range: Option<Range>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Auxiliary checkpoint to include in the bound audit.
    #[arg(long)]
    pub aux: Option<PathBuf>,
    /// Run the bound audit.
    #[arg(long)]
    pub audit: bool,
    #[arg(long, value_parser = parse_range)]
    pub range: Option<Range>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodArg>>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub classes: Option<Vec<ClassArg>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hold out the last N trajectories for validation.
    #[arg(long)]
    pub validation: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// `deviation.csv` files from `eval`; one curve each.
    #[arg(long)]
    pub deviation: Vec<PathBuf>,
    /// `rmse_table.csv` from `sweep`.
    #[arg(long)]
    pub rmse_table: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Export the auxiliary trajectories of this checkpoint instead.
    #[arg(long)]
    pub aux: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out_dir(cli: &Cli, arg: &OutArg, name: &str) -> PathBuf {
    match (&arg.out, &cli.out_root) {
        (Some(p), _) => p.clone(),
        (None, Some(root)) => root.join(name),
        (None, None) => PathBuf::from("runs").join(name),
    }
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct ProvenanceFile {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config_sha256: String,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

/// Writes `config.toml` and `provenance.json` into `dir`. Output digests are
/// taken from the files already written there.
fn finish_outputs(dir: &Path, command: &'static str, cfg: &RunConfig, inputs: &[&Path], outputs: &[&str]) -> Result<(), Error> {
    let text = cfg.to_toml();
    write_file(&dir.join("config.toml"), text.as_bytes())?;
    let digest = |p: &Path, label: String| -> Result<FileDigest, Error> {
        let bytes = std::fs::read(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
        Ok(FileDigest { path: label, sha256: sha256_hex(&bytes) })
    };
    let prov = ProvenanceFile {
        tool: "collocate",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        config_sha256: sha256_hex(text.as_bytes()),
        inputs: inputs.iter().map(|p| digest(p, p.display().to_string())).collect::<Result<_, _>>()?,
        outputs: outputs.iter().map(|f| digest(&dir.join(f), f.to_string())).collect::<Result<_, _>>()?,
    };
    let mut json = serde_json::to_string_pretty(&prov).expect("provenance serializes");
    json.push('\n');
    write_file(&dir.join("provenance.json"), json.as_bytes())
}

fn select(ds: &Dataset, range: Option<Range>) -> Result<Dataset, Error> {
    match range {
        None => Ok(ds.clone()),
        Some(Range(a, b)) if b <= ds.len() => Ok(ds.select(&(a..b).collect::<Vec<_>>())),
        Some(Range(a, b)) => Err(Error::Usage(format!("range {a}..{b} exceeds the {} trajectories in the dataset", ds.len()))),
    }
}

pub fn run(cli: &Cli) -> Result<(), Error> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, &mut cfg, a),
        Command::Train(a) => cmd_train(cli, &mut cfg, a),
        Command::Eval(a) => cmd_eval(cli, &mut cfg, a),
        Command::Sweep(a) => cmd_sweep(cli, &mut cfg, a),
        Command::Plot(a) => cmd_plot(cli, a),
        Command::Export(a) => cmd_export(cli, &cfg, a),
        Command::Replay(a) => {
            let dir = out_dir(cli, a, "replay");
            checkpoint::save(&dir.join("replay.ckpt"), &Checkpoint::Replay)?;
            finish_outputs(&dir, "replay", &cfg, &[], &["replay.ckpt"])?;
            println!("wrote {}", dir.join("replay.ckpt").display());
            Ok(())
        }
    }
}

fn cmd_gen(cli: &Cli, cfg: &mut RunConfig, a: &GenArgs) -> Result<(), Error> {
    if let Some(n) = a.n {
        cfg.gen.n = n as usize;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if cfg.gen.n == 0 {
        return Err(Error::Usage("gen.n must be at least 1".into()));
    }
    let arm = cfg.arm_spec()?;
    let ds = generate_dataset(cfg.gen.n, &cfg.sampler, &arm, &cfg.expert, cfg.gen.ts, cfg.seed)
        .map_err(|e| Error::Data(format!("generation failed: {e}")))?;
    let dir = out_dir(cli, &a.out, "gen");
    dataset::save(&dir.join("dataset.bin"), &ds)?;
    cfg.resolve(ds.ts);
    finish_outputs(&dir, "gen", cfg, &[], &["dataset.bin"])?;
    let h: Vec<usize> = ds.trajectories.iter().map(Trajectory::horizon).collect();
    let reached = ds
        .trajectories
        .iter()
        .filter(|t| {
            let g = t.meta.goal_position();
            arm.fk_position(&t.states.last().expect("non-empty").q).is_ok_and(|p| (p[0] - g[0]).hypot(p[1] - g[1]) < cfg.expert.eps_goal)
        })
        .count();
    println!(
        "n={} ts={} horizon min={} mean={:.1} max={} reached={}/{} -> {}",
        ds.len(),
        ds.ts,
        h.iter().min().expect("n >= 1"),
        h.iter().sum::<usize>() as f64 / h.len() as f64,
        h.iter().max().expect("n >= 1"),
        reached,
        ds.len(),
        dir.join("dataset.bin").display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, cfg: &mut RunConfig, a: &TrainArgs) -> Result<(), Error> {
    let method: Method = a.method.into();
    if let Some(c) = a.policy {
        cfg.model.class = c.into();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    cfg.train.method = method;
    let full = dataset::load(&a.data)?;
    let ds = select(&full, a.range)?;
    cfg.resolve(ds.ts);
    cfg.validate()?;
    let class = cfg.model.class;
    let dir = out_dir(cli, &a.out, "train");
    let models = init_models(cfg, method, class, &ds)?;
    let outcome = match train_models(cfg, method, &ds, models, &mut |_| {}) {
        Ok(o) => o,
        Err(TrainError::NonFinite { epoch, last }) => {
            let (p, aux) = *last;
            checkpoint::save(&dir.join("policy.last_finite.ckpt"), &Checkpoint::Policy(p))?;
            if let Some(aux) = aux {
                checkpoint::save(&dir.join("aux.last_finite.ckpt"), &Checkpoint::Aux(aux))?;
            }
            return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}; last finite parameters saved in {}", dir.display())));
        }
        Err(e) => return Err(train_error(e)),
    };
    checkpoint::save(&dir.join("policy.ckpt"), &Checkpoint::Policy(outcome.policy.clone()))?;
    let mut outputs = vec!["policy.ckpt", "history.csv"];
    if let Some(aux) = &outcome.aux {
        checkpoint::save(&dir.join("aux.ckpt"), &Checkpoint::Aux(aux.clone()))?;
        outputs.push("aux.ckpt");
    }
    report::write_history(&dir.join("history.csv"), &outcome.history.epochs)?;
    finish_outputs(&dir, "train", cfg, &[&a.data], &outputs)?;
    let last = outcome.history.epochs.last();
    println!(
        "{} {} on {} trajectories: {} epochs ({:?}), final loss {} -> {}",
        method.name(),
        class.name(),
        ds.len(),
        outcome.history.epochs.len(),
        outcome.history.stop,
        last.map_or(f64::NAN, |e| e.total),
        dir.display()
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, cfg: &mut RunConfig, a: &EvalArgs) -> Result<(), Error> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let full = dataset::load(&a.data)?;
    let ds = select(&full, a.range)?;
    let aux = match &a.aux {
        None => None,
        Some(p) => match checkpoint::load(p)? {
            Checkpoint::Aux(x) => Some(x),
            other => return Err(Error::Data(format!("{}: expected an aux checkpoint, found {}", p.display(), other.kind()))),
        },
    };
    if let Some(x) = &aux {
        if x.dof() != ds.arm.dof() || x.demo_count().is_some_and(|n| n != ds.len()) {
            return Err(Error::Data("aux checkpoint does not match the evaluation data".into()));
        }
    }
    let (report, label): (EvalReport, String) = match &ck {
        Checkpoint::Policy(p) => {
            check_policy(p, &ds)?;
            let mut r = evaluate(p, &ds.arm, &ds, cfg.eval.radius);
            if a.audit {
                r.audit = Some(audit(cfg, p, aux.as_ref(), &ds)?);
            }
            (r, p.class().name().to_string())
        }
        Checkpoint::Replay => {
            if a.audit {
                return Err(Error::Usage("--audit needs a policy checkpoint".into()));
            }
            (evaluate_replay(&ds.arm, &ds, cfg.eval.radius), "replay".into())
        }
        Checkpoint::Aux(_) => return Err(Error::Data(format!("{}: expected a policy checkpoint, found aux", a.checkpoint.display()))),
    };
    let dir = out_dir(cli, &a.out, "eval");
    let ck_bytes = std::fs::read(&a.checkpoint).map_err(|e| Error::Data(e.to_string()))?;
    let meta = ReportMeta { policy: &label, checkpoint_sha256: &sha256_hex(&ck_bytes), data_sha256: &format!("{:016x}", ds.digest()) };
    report::write_eval(&dir, &report, &meta)?;
    let mut outputs = vec!["report.json", "rmse.csv", "deviation.csv"];
    if report.audit.is_some() {
        outputs.push("audit.csv");
    }
    cfg.resolve(ds.ts);
    let mut inputs: Vec<&Path> = vec![&a.checkpoint, &a.data];
    if let Some(p) = &a.aux {
        inputs.push(p);
    }
    finish_outputs(&dir, "eval", cfg, &inputs, &outputs)?;
    print!("{label}: median rmse {} success {} over {} trajectories", report.median_rmse(), report.success_rate, ds.len());
    if let Some(au) = &report.audit {
        print!(
            "; audit L={} ({:?}) recursion {} split {}",
            au.lipschitz,
            au.kind,
            if au.recursion_holds() { "holds" } else { "violated" },
            if au.split_holds() { "holds" } else { "violated" }
        );
    }
    println!(" -> {}", dir.display());
    Ok(())
}

fn check_policy(p: &Policy, ds: &Dataset) -> Result<(), Error> {
    let fdim = feature_dim(ds)?;
    if p.dof() != ds.arm.dof() || p.feature_dim() != fdim {
        return Err(Error::Data(format!(
            "{} checkpoint expects d={} with {} task features; data has d={} with {}",
            p.class().name(),
            p.dof(),
            p.feature_dim(),
            ds.arm.dof(),
            fdim
        )));
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, cfg: &mut RunConfig, a: &SweepArgs) -> Result<(), Error> {
    if let Some(s) = &a.sizes {
        cfg.sweep.sizes = s.clone();
    }
    if let Some(s) = &a.seeds {
        cfg.sweep.seeds = s.clone();
    }
    if let Some(m) = &a.methods {
        cfg.sweep.methods = m.iter().map(|&x| x.into()).collect();
    }
    if let Some(c) = &a.classes {
        cfg.sweep.classes = c.iter().map(|&x| x.into()).collect();
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(v) = a.validation {
        cfg.sweep.validation = v;
    }
    let ds = dataset::load(&a.data)?;
    cfg.resolve(ds.ts);
    cfg.validate()?;
    let dir = out_dir(cli, &a.out, "sweep");
    let out = sweep::run(cfg, &ds, cli.jobs as usize, Some(&dir))?;
    report::write_sweep(&dir.join("sweep.csv"), &out.rows)?;
    let table: Vec<_> = out.rows.iter().cloned().zip(out.rmse).collect();
    report::write_rmse_table(&dir.join("rmse_table.csv"), &table)?;
    finish_outputs(&dir, "sweep", cfg, &[&a.data], &["sweep.csv", "rmse_table.csv"])?;
    let failed = out.rows.iter().filter(|r| !r.ok()).count();
    println!("{} runs ({} failed) -> {}", out.rows.len(), failed, dir.join("sweep.csv").display());
    Ok(())
}

fn read_deviation(path: &Path) -> Result<Vec<[f64; 3]>, Error> {
    let data = |e: &dyn std::fmt::Display| Error::Data(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| data(&e))?;
    let header: Vec<String> = r.headers().map_err(|e| data(&e))?.iter().map(String::from).collect();
    if header != report::DEVIATION_COLUMNS {
        return Err(data(&"unexpected deviation columns"));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| data(&e))?;
            let f = |i: usize| rec[i].parse::<f64>().map_err(|e| data(&e));
            Ok([f(1)?, f(2)?, f(3)?])
        })
        .collect()
}

fn read_rmse_table(path: &Path) -> Result<Vec<BoxGroup>, Error> {
    let data = |e: &dyn std::fmt::Display| Error::Data(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| data(&e))?;
    let header: Vec<String> = r.headers().map_err(|e| data(&e))?.iter().map(String::from).collect();
    if header != report::RMSE_TABLE_COLUMNS {
        return Err(data(&"unexpected rmse table columns"));
    }
    let mut groups: std::collections::BTreeMap<String, std::collections::BTreeMap<usize, Vec<f64>>> = Default::default();
    for rec in r.records() {
        let rec = rec.map_err(|e| data(&e))?;
        let size: usize = rec[3].parse().map_err(|e| data(&e))?;
        let v: f64 = rec[6].parse().map_err(|e| data(&e))?;
        groups.entry(format!("{} {}", &rec[1], &rec[2])).or_default().entry(size).or_default().push(v);
    }
    Ok(groups.into_iter().map(|(label, m)| BoxGroup { label, by_size: m.into_iter().collect() }).collect())
}

fn cmd_plot(cli: &Cli, a: &PlotArgs) -> Result<(), Error> {
    let inputs: Vec<&PathBuf> = a.deviation.iter().chain(&a.rmse_table).collect();
    if inputs.is_empty() {
        return Err(Error::Usage("nothing to plot: pass --deviation and/or --rmse-table".into()));
    }
    let missing: Vec<String> = inputs.iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing input files: {}", missing.join(", "))));
    }
    let dir = out_dir(cli, &a.out, "plot");
    let mut outputs = Vec::new();
    if !a.deviation.is_empty() {
        let series = a
            .deviation
            .iter()
            .map(|p| {
                let label = p.parent().and_then(Path::file_name).map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
                Ok(BandSeries { label, quartiles: read_deviation(p)? })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        write_file(&dir.join("deviation.svg"), svg::deviation_chart("Per-step state deviation (median, IQR)", &series).as_bytes())?;
        outputs.push("deviation.svg");
    }
    if let Some(p) = &a.rmse_table {
        let groups = read_rmse_table(p)?;
        write_file(&dir.join("rmse_boxes.svg"), svg::rmse_box_chart("Validation rollout RMSE vs training-set size", &groups).as_bytes())?;
        outputs.push("rmse_boxes.svg");
    }
    let paths: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
    finish_outputs(&dir, "plot", &RunConfig::default(), &paths, &outputs)?;
    println!("wrote {} -> {}", outputs.join(", "), dir.display());
    Ok(())
}

fn cmd_export(cli: &Cli, cfg: &RunConfig, a: &ExportArgs) -> Result<(), Error> {
    let ds = dataset::load(&a.data)?;
    let dir = out_dir(cli, &a.out, "export");
    let Some(aux_path) = &a.aux else {
        write_file(&dir.join("dataset.json"), dataset::to_json(&ds).as_bytes())?;
        finish_outputs(&dir, "export", cfg, &[&a.data], &["dataset.json"])?;
        println!("wrote {}", dir.join("dataset.json").display());
        return Ok(());
    };
    let aux = match checkpoint::load(aux_path)? {
        Checkpoint::Aux(x) => x,
        other => return Err(Error::Data(format!("{}: expected an aux checkpoint, found {}", aux_path.display(), other.kind()))),
    };
    if aux.demo_count().is_some_and(|n| n != ds.len()) || aux.dof() != ds.arm.dof() {
        return Err(Error::Data("aux checkpoint does not match the dataset".into()));
    }
    let mut out = ds.clone();
    for (i, tr) in out.trajectories.iter_mut().enumerate() {
        let demo = AuxDemo::from_trajectory(&ds.arm, tr).map_err(|e| Error::Data(e.to_string()))?;
        let (states, actions) = aux.sample_trajectory(&demo, i, ds.ts).map_err(|e| Error::Numeric(e.to_string()))?;
        tr.states = states;
        tr.actions = Some(actions);
        tr.expert = false;
    }
    dataset::save(&dir.join("aux_trajectories.bin"), &out)?;
    write_file(&dir.join("aux_trajectories.json"), dataset::to_json(&out).as_bytes())?;
    finish_outputs(&dir, "export", cfg, &[&a.data, aux_path], &["aux_trajectories.bin", "aux_trajectories.json"])?;
    println!("wrote auxiliary trajectories -> {}", dir.display());
    Ok(())
}
