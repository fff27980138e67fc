//! SNR sweeps over the detector methods.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Method, ScenarioConfig};
use crate::channels::{Constellation, ChannelModel};
use crate::deepsic::{train_deepsic, DeepSicNet, LabeledBatch};
use crate::detect::{ser_estimate, Detector, MapDetector, SerResult, SicDetector};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, Rng};
use crate::online::{joint_loop, online_loop, OnlineState, StaticStream, TraceRow};

/// One (method, SNR) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub channel: String,
    pub snr_db: f64,
    pub ser: f64,
    pub errors: u64,
    pub symbols: u64,
    pub seed: u64,
    pub wallclock_ms: Option<u64>,
}

impl SweepRow {
    pub fn result(&self) -> SerResult {
        SerResult {
            ser: self.ser,
            errors: self.errors,
            symbols: self.symbols,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn get(&self, method: Method, snr_db: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.method == method.name() && r.snr_db == snr_db)
    }

    /// Rows of one method in SNR order of appearance.
    pub fn series(&self, method: &str) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }

    /// Method names in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }
}

pub fn snr_label(snr_db: f64) -> String {
    format!("{snr_db}")
}

/// Seed of a (method, SNR) cell.
pub fn cell_seed(master: u64, method: Method, snr_db: f64) -> u64 {
    derive_seed(master, &[method.name(), &snr_label(snr_db)])
}

pub fn channel_at(cfg: &ScenarioConfig, snr_db: f64) -> Result<ChannelModel> {
    ChannelModel::standard(cfg.channel.kind, cfg.channel.users, cfg.channel.antennas, snr_db)
}

/// `n` uniformly drawn transmissions through `model`, labeled.
pub fn labeled_pairs(model: &ChannelModel, n: usize, rng: &mut Rng) -> Result<LabeledBatch> {
    let pairs = (0..n)
        .map(|_| {
            let s = model.constellation().random_vector(model.users(), rng);
            model.transmit(&s, rng).map(|y| (y, s))
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledBatch::from_pairs(&pairs, model.constellation())
}

fn fresh_deepsic(cfg: &ScenarioConfig, rng: &mut Rng) -> Result<DeepSicNet> {
    DeepSicNet::new(
        cfg.deepsic.layers,
        cfg.channel.users,
        cfg.channel.antennas,
        cfg.deepsic.hidden,
        Constellation::bpsk(),
        rng,
    )
}

fn row(
    cfg: &ScenarioConfig,
    method: Method,
    snr_db: f64,
    result: SerResult,
    started: Instant,
) -> SweepRow {
    SweepRow {
        method: method.name().into(),
        channel: cfg.channel.kind.name().into(),
        snr_db,
        ser: result.ser,
        errors: result.errors,
        symbols: result.symbols,
        seed: cell_seed(cfg.seed, method, snr_db),
        wallclock_ms: cfg
            .record_wallclock
            .then(|| started.elapsed().as_millis() as u64),
    }
}

fn evaluate(
    cfg: &ScenarioConfig,
    detector: &impl Detector,
    model: &ChannelModel,
    method: Method,
    snr_db: f64,
) -> Result<SerResult> {
    let mut rng = Rng::new(cell_seed(cfg.seed, method, snr_db)).fork("eval");
    ser_estimate(detector, model, cfg.eval_budget(), &mut rng)
}

/// A method that trains and tests on each SNR separately.
fn static_cell(cfg: &ScenarioConfig, method: Method, snr_db: f64) -> Result<SweepRow> {
    let started = Instant::now();
    let model = channel_at(cfg, snr_db)?;
    let result = match method {
        Method::Map => evaluate(cfg, &MapDetector::new(&model)?, &model, method, snr_db)?,
        Method::Sic => evaluate(cfg, &SicDetector::new(&model, cfg.sic)?, &model, method, snr_db)?,
        Method::DeepsicStatic => {
            let mut rng = Rng::new(cell_seed(cfg.seed, method, snr_db)).fork("train");
            let data = labeled_pairs(&model, cfg.train_pairs_per_snr, &mut rng)?;
            let net = fresh_deepsic(cfg, &mut rng)?;
            let (net, _) = train_deepsic(net, &data, &cfg.deepsic_train(), &mut rng)?;
            evaluate(cfg, &net, &model, method, snr_db)?
        }
        other => {
            return Err(Error::Config(format!(
                "method {other} needs the dynamic scenario"
            )))
        }
    };
    Ok(row(cfg, method, snr_db, result, started))
}

/// Trains one DeepSIC on the pooled data of every SNR and evaluates it at
/// each SNR without telling it which.
fn deepsic_dynamic(cfg: &ScenarioConfig) -> Result<Vec<SweepRow>> {
    let started = Instant::now();
    let mut rng = Rng::new(derive_seed(cfg.seed, &["deepsic_dynamic", "pooled"]));
    let parts = cfg
        .snr_db
        .iter()
        .map(|&snr| labeled_pairs(&channel_at(cfg, snr)?, cfg.train_pairs_per_snr, &mut rng.fork(&snr_label(snr))))
        .collect::<Result<Vec<_>>>()?;
    let data = LabeledBatch::concat(&parts)?;
    let net = fresh_deepsic(cfg, &mut rng)?;
    let (net, _) = train_deepsic(net, &data, &cfg.deepsic_train(), &mut rng)?;
    cfg.snr_db
        .iter()
        .map(|&snr| {
            let model = channel_at(cfg, snr)?;
            let r = evaluate(cfg, &net, &model, Method::DeepsicDynamic, snr)?;
            Ok(row(cfg, Method::DeepsicDynamic, snr, r, started))
        })
        .collect()
}

/// Pooled training-set size of the dynamic DeepSIC baseline.
pub fn pooled_training_pairs(cfg: &ScenarioConfig) -> usize {
    cfg.snr_db.len() * cfg.train_pairs_per_snr
}

/// Output of an online run over the block-cycled SNR schedule.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OnlineRun {
    pub rows: Vec<SweepRow>,
    pub trace: Vec<TraceRow>,
}

/// Runs GANSIC through the SNR blocks. Each block refreshes the pilot and
/// spends the online budgets at that SNR; the detector is then evaluated
/// at the block's SNR on the final cycle.
pub fn gansic_blocks(cfg: &ScenarioConfig, method: Method) -> Result<OnlineRun> {
    gansic_run(cfg, method).map(|(run, _)| run)
}

/// [`gansic_blocks`], also returning the final online state.
pub fn gansic_run(cfg: &ScenarioConfig, method: Method) -> Result<(OnlineRun, OnlineState)> {
    if !matches!(method, Method::GansicInitial | Method::GansicJoint) {
        return Err(Error::Config(format!("{method} is not an online method")));
    }
    let online = cfg.online_config();
    let mut rng = Rng::new(derive_seed(cfg.seed, &[method.name(), "state"]));
    let mut state = OnlineState::new(cfg.gan_shape(), Constellation::bpsk(), &online, &mut rng)?;
    let mut out = OnlineRun::default();
    for cycle in 0..cfg.online.cycles {
        let last = cycle + 1 == cfg.online.cycles;
        for &snr in &cfg.snr_db {
            let started = Instant::now();
            let model = channel_at(cfg, snr)?;
            let tag = [method.name(), &cycle.to_string(), &snr_label(snr)];
            let stream_seed = derive_seed(cfg.seed, &[&tag[..], &["stream"]].concat());
            let mut stream = StaticStream::new(model.clone(), Rng::new(stream_seed), None)?;
            let probe_seed = derive_seed(cfg.seed, &[&tag[..], &["probe"]].concat());
            let probe = (cfg.online.probe_every > 0).then_some((&model, probe_seed));
            let mut block_rng = Rng::new(derive_seed(cfg.seed, &[&tag[..], &["block"]].concat()));
            let report = match method {
                Method::GansicInitial => online_loop(&mut state, &mut stream, &online, &mut block_rng, probe)?,
                _ => joint_loop(
                    &mut state,
                    &mut stream,
                    cfg.online.train_gan_steps,
                    &cfg.joint_config(),
                    &online,
                    &mut block_rng,
                    probe,
                )?,
            };
            out.trace.extend(report.trace);
            if last {
                let r = evaluate(cfg, &state.detector.net, &model, method, snr)?;
                out.rows.push(row(cfg, method, snr, r, started));
            }
        }
    }
    Ok((out, state))
}

enum Job {
    Cell(Method, f64),
    Pooled,
    Online(Method),
}

enum JobOutput {
    Rows(Vec<SweepRow>),
    Online(Method, OnlineRun),
}

/// Runs `jobs` on up to `threads` workers; outputs keep job order.
fn run_jobs<J: Sync, T: Send>(
    jobs: &[J],
    threads: usize,
    work: impl Fn(&J) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let threads = threads.max(1).min(jobs.len().max(1));
    if threads == 1 {
        return jobs.iter().map(&work).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let out = work(&jobs[i]);
                slots.lock().expect("result lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|s| s.expect("every job ran"))
        .collect()
}

fn ordered(cfg: &ScenarioConfig, mut rows: Vec<SweepRow>) -> SweepResult {
    let method_pos = |m: &str| cfg.methods.iter().position(|x| x.name() == m).unwrap_or(usize::MAX);
    let snr_pos = |s: f64| cfg.snr_db.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (method_pos(&r.method), snr_pos(r.snr_db)));
    SweepResult { rows }
}

/// Per SNR: MAP and SIC with the known channel, and a DeepSIC trained on
/// that SNR alone.
pub fn run_static_sweep(cfg: &ScenarioConfig, threads: usize) -> Result<SweepResult> {
    cfg.validate()?;
    if let Some(m) = cfg
        .methods
        .iter()
        .find(|m| !matches!(m, Method::Map | Method::Sic | Method::DeepsicStatic))
    {
        return Err(Error::Config(format!("method {m} needs the dynamic scenario")));
    }
    let jobs: Vec<(Method, f64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.snr_db.iter().map(move |&s| (m, s)))
        .collect();
    let rows = run_jobs(&jobs, threads, |&(m, s)| static_cell(cfg, m, s))?;
    Ok(ordered(cfg, rows))
}

/// Online traces keyed by the method that produced them.
pub type MethodTraces = Vec<(Method, Vec<TraceRow>)>;

/// The dynamic scenario: the pooled DeepSIC baseline and GANSIC tracking
/// the SNR blocks, alongside any per-SNR methods requested.
pub fn run_dynamic_sweep(cfg: &ScenarioConfig, threads: usize) -> Result<(SweepResult, MethodTraces)> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &m in &cfg.methods {
        match m {
            Method::Map | Method::Sic | Method::DeepsicStatic => {
                jobs.extend(cfg.snr_db.iter().map(|&s| Job::Cell(m, s)));
            }
            Method::DeepsicDynamic => jobs.push(Job::Pooled),
            Method::GansicInitial | Method::GansicJoint => jobs.push(Job::Online(m)),
        }
    }
    let outputs = run_jobs(&jobs, threads, |job| match job {
        Job::Cell(m, s) => static_cell(cfg, *m, *s).map(|r| JobOutput::Rows(vec![r])),
        Job::Pooled => deepsic_dynamic(cfg).map(JobOutput::Rows),
        Job::Online(m) => gansic_blocks(cfg, *m).map(|run| JobOutput::Online(*m, run)),
    })?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for out in outputs {
        match out {
            JobOutput::Rows(r) => rows.extend(r),
            JobOutput::Online(m, run) => {
                rows.extend(run.rows);
                traces.push((m, run.trace));
            }
        }
    }
    Ok((ordered(cfg, rows), traces))
}
