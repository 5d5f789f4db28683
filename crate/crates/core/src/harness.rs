//! Scenario generation, closed-loop episodes, paired MPC/PID comparison and
//! aggregation.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::crowd::{step_crowd_traced, ForceTraceRow, PedestrianState};
use crate::error::{Error, Result};
use crate::pid::PidState;
use crate::predictor::{Lane, NO_PEDESTRIAN};
use crate::supervisor::{ControllerKind, Supervisor};
use crate::vehicle::{discretize, VehicleState};
use crate::Vec2;

/// Below this speed the vehicle counts as standing still, m/s.
pub const STOP_SPEED: f64 = 0.1;
/// Minimum duration of a standstill that counts as a stop, s.
pub const STOP_DURATION: f64 = 0.5;
/// Histogram bin width, s.
pub const BIN_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_pedestrians: usize,
    pub spawn_x_min: f64,
    pub spawn_x_max: f64,
    pub spawn_y_min: f64,
    pub spawn_y_max: f64,
    /// How far beyond the spawn rectangle the destinations lie, m.
    pub dest_margin: f64,
    /// Minimum spacing between spawned pedestrians, m.
    pub min_spacing: f64,
    pub ped_mass: f64,
    pub ped_radius: f64,
    pub desired_speed_min: f64,
    pub desired_speed_max: f64,
    /// Lateral position of the vehicle path, m.
    pub lane_y: f64,
    pub s0: f64,
    pub v0: f64,
    /// Episode ends when the front bumper passes this position, m.
    pub finish_x: f64,
    pub time_cap: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_pedestrians: 30,
            spawn_x_min: 20.0,
            spawn_x_max: 40.0,
            spawn_y_min: -10.0,
            spawn_y_max: 10.0,
            dest_margin: 2.0,
            min_spacing: 0.8,
            ped_mass: 70.0,
            ped_radius: 0.3,
            desired_speed_min: 1.0,
            desired_speed_max: 1.4,
            lane_y: 0.0,
            s0: 0.0,
            v0: 4.0,
            finish_x: 55.0,
            time_cap: 90.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("scenario: {m}")));
        if !(self.spawn_x_max > self.spawn_x_min) || !(self.spawn_y_max > self.spawn_y_min) {
            return bad("spawn rectangle is empty");
        }
        if !(self.time_cap > 0.0) {
            return bad("time_cap must be > 0");
        }
        if !(self.ped_mass > 0.0) || !(self.ped_radius > 0.0) {
            return bad("pedestrian mass and radius must be > 0");
        }
        if !(self.desired_speed_min >= 0.0) || !(self.desired_speed_max >= self.desired_speed_min) {
            return bad("need 0 <= desired_speed_min <= desired_speed_max");
        }
        if !(self.min_spacing >= 0.0) || !(self.dest_margin >= 0.0) {
            return bad("min_spacing and dest_margin must be >= 0");
        }
        Ok(())
    }

    pub fn lane(&self) -> Lane {
        Lane { origin: Vec2::new(0.0, self.lane_y), heading: Vec2::new(1.0, 0.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub crowd: Vec<PedestrianState>,
    pub vehicle: VehicleState,
    pub lane: Lane,
}

/// Pedestrians uniform in the spawn rectangle, each heading to the far side
/// of the vehicle path; deterministic in `seed`.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crowd: Vec<PedestrianState> = Vec::with_capacity(cfg.n_pedestrians);
    let min_d2 = cfg.min_spacing * cfg.min_spacing;
    for id in 0..cfg.n_pedestrians {
        let mut pos = Vec2::zeros();
        for _ in 0..100 {
            pos = Vec2::new(
                rng.gen_range(cfg.spawn_x_min..=cfg.spawn_x_max),
                rng.gen_range(cfg.spawn_y_min..=cfg.spawn_y_max),
            );
            if crowd.iter().all(|p| (p.position - pos).norm_squared() >= min_d2) {
                break;
            }
        }
        let desired_speed = rng.gen_range(cfg.desired_speed_min..=cfg.desired_speed_max);
        let dest_y = if pos.y >= cfg.lane_y {
            cfg.spawn_y_min - cfg.dest_margin
        } else {
            cfg.spawn_y_max + cfg.dest_margin
        };
        crowd.push(PedestrianState {
            id: id as u32,
            position: pos,
            velocity: Vec2::zeros(),
            destination: Vec2::new(pos.x, dest_y),
            mass: cfg.ped_mass,
            radius: cfg.ped_radius,
            desired_speed,
        });
    }
    Scenario { seed, crowd, vehicle: VehicleState::new(cfg.s0, cfg.v0), lane: cfg.lane() }
}

/// One row of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub u: f64,
    pub source: ControllerKind,
    /// Center gap to the closest pedestrian ahead in the corridor.
    pub front_gap: f64,
    /// Closest pedestrian center to the vehicle body.
    pub min_ped_distance: f64,
    /// `front_gap` minus half the vehicle length.
    pub bumper_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub controller: ControllerKind,
    pub seed: u64,
    pub n_pedestrians: usize,
    pub rows: Vec<EpisodeRow>,
    /// Time the front bumper passed the finish line; `None` on timeout.
    pub completion_time: Option<f64>,
    /// Simulated time, equal to the time cap on timeout.
    pub duration: f64,
    pub longest_wait: f64,
    pub stopped: bool,
    pub collided: bool,
    pub mpc_steps: usize,
    pub pid_steps: usize,
}

impl EpisodeRecord {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Longest run of `|v| < STOP_SPEED`, in seconds, over samples spaced `dt`.
pub fn longest_standstill(speeds: impl IntoIterator<Item = f64>, dt: f64) -> f64 {
    let (mut run, mut best) = (0usize, 0usize);
    for v in speeds {
        if v.abs() < STOP_SPEED {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best as f64 * dt
}

/// Where per-step traces go when enabled.
#[derive(Debug, Clone)]
pub struct TraceSink {
    pub dir: PathBuf,
}

#[derive(Serialize)]
struct DecisionRow {
    t: f64,
    s: f64,
    v: f64,
    u: f64,
    source: ControllerKind,
    front_gap: f64,
    qp_iterations: usize,
}

/// Simulate one closed-loop episode. The crowd evolves under the same force
/// model the predictor uses; the vehicle under the discrete dynamics.
pub fn run_episode(
    cfg: &RunConfig,
    scenario: &Scenario,
    kind: ControllerKind,
    trace: Option<&TraceSink>,
) -> Result<EpisodeRecord> {
    let dt = cfg.mpc.dt;
    let sc = &cfg.scenario;
    let model = discretize(&cfg.vehicle, dt)?;
    let pid = PidState::cruising(cfg.pid.clone(), dt, cfg.vehicle.friction, scenario.vehicle.v);
    let mut sup = Supervisor::new(cfg, kind, scenario.lane, pid)?;

    let mut force_w = None;
    let mut decision_w = None;
    if let Some(t) = trace {
        fs::create_dir_all(t.dir.join("qp"))?;
        force_w = Some(csv::Writer::from_path(t.dir.join("forces.csv"))?);
        decision_w = Some(csv::Writer::from_path(t.dir.join("decisions.csv"))?);
    }

    let mut crowd = scenario.crowd.clone();
    let mut x = scenario.vehicle;
    let max_steps = (sc.time_cap / dt).round() as usize;
    let mut rows = Vec::with_capacity(max_steps.min(4096));
    let mut collided = false;
    let mut completion_time = None;
    let (mut mpc_steps, mut pid_steps) = (0, 0);

    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        let body = scenario.lane.footprint(&cfg.vehicle, &x);
        let min_ped_distance = crowd
            .iter()
            .map(|p| body.distance_to_body(&p.position))
            .fold(f64::INFINITY, f64::min);
        collided |= crowd.iter().any(|p| body.contains(&p.position));

        if cfg.vehicle.front_bumper(x.s) > sc.finish_x {
            completion_time = Some(t);
            break;
        }
        if k >= max_steps {
            break;
        }

        let (decision, detail) = sup.control_step_detailed(&x, &crowd, trace.is_some());
        match decision.source {
            ControllerKind::Mpc => mpc_steps += 1,
            ControllerKind::Pid => pid_steps += 1,
        }
        let bumper_gap = if decision.front_gap >= NO_PEDESTRIAN {
            NO_PEDESTRIAN
        } else {
            decision.front_gap - 0.5 * cfg.vehicle.length
        };
        rows.push(EpisodeRow {
            t,
            s: x.s,
            v: x.v,
            u: decision.u,
            source: decision.source,
            front_gap: decision.front_gap,
            min_ped_distance,
            bumper_gap,
        });

        let (next_crowd, forces) = step_crowd_traced(&crowd, Some(&body), dt, &cfg.crowd);
        if let Some(w) = decision_w.as_mut() {
            w.serialize(DecisionRow {
                t,
                s: x.s,
                v: x.v,
                u: decision.u,
                source: decision.source,
                front_gap: decision.front_gap,
                qp_iterations: decision.qp_iterations,
            })?;
        }
        if let Some(w) = force_w.as_mut() {
            for (p, f) in crowd.iter().zip(&forces) {
                w.serialize(ForceTraceRow::new(t, p.id, f))?;
            }
        }
        if let (Some(t), Some(qp)) = (trace, detail.qp.as_ref()) {
            let f = File::create(t.dir.join("qp").join(format!("step_{k:05}.mtx")))?;
            qp.write_matrix_market(BufWriter::new(f))?;
        }

        crowd = next_crowd;
        x = model.step(x, decision.u);
        k += 1;
    }
    if let Some(mut w) = force_w {
        w.flush()?;
    }
    if let Some(mut w) = decision_w {
        w.flush()?;
    }

    let longest = longest_standstill(rows.iter().map(|r| r.v), dt);
    let stopped = longest + 1e-9 >= STOP_DURATION;
    Ok(EpisodeRecord {
        controller: kind,
        seed: scenario.seed,
        n_pedestrians: scenario.crowd.len(),
        duration: completion_time.unwrap_or(max_steps as f64 * dt),
        completion_time,
        longest_wait: if stopped { longest } else { 0.0 },
        stopped,
        collided,
        rows,
        mpc_steps,
        pid_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Situation {
    /// Exactly one controller stopped; counted only in the general means.
    GeneralOnly,
    StopAndWait,
    NonStop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedResult {
    pub seed: u64,
    pub mpc: EpisodeRecord,
    pub pid: EpisodeRecord,
    pub situation: Situation,
    pub dt_total: f64,
    pub dt_longest_wait: Option<f64>,
}

pub fn classify_pair(mpc: EpisodeRecord, pid: EpisodeRecord) -> Result<PairedResult> {
    if mpc.seed != pid.seed {
        return Err(Error::SeedMismatch { mpc: mpc.seed, pid: pid.seed });
    }
    let situation = match (mpc.stopped, pid.stopped) {
        (true, true) => Situation::StopAndWait,
        (false, false) => Situation::NonStop,
        _ => Situation::GeneralOnly,
    };
    let dt_total = mpc.duration - pid.duration;
    let dt_longest_wait = (situation == Situation::StopAndWait).then_some(mpc.longest_wait - pid.longest_wait);
    Ok(PairedResult { seed: mpc.seed, situation, dt_total, dt_longest_wait, mpc, pid })
}

/// Compact per-pair result kept in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub seed: u64,
    pub situation: Situation,
    pub dt_total: f64,
    pub dt_longest_wait: Option<f64>,
    pub mpc_time: f64,
    pub pid_time: f64,
    pub mpc_timeout: bool,
    pub pid_timeout: bool,
    pub mpc_collided: bool,
    pub pid_collided: bool,
    pub mpc_stopped: bool,
    pub pid_stopped: bool,
    pub mpc_longest_wait: f64,
    pub pid_longest_wait: f64,
    pub mpc_fallback_steps: usize,
}

impl From<&PairedResult> for PairSummary {
    fn from(p: &PairedResult) -> Self {
        Self {
            seed: p.seed,
            situation: p.situation,
            dt_total: p.dt_total,
            dt_longest_wait: p.dt_longest_wait,
            mpc_time: p.mpc.duration,
            pid_time: p.pid.duration,
            mpc_timeout: p.mpc.completion_time.is_none(),
            pid_timeout: p.pid.completion_time.is_none(),
            mpc_collided: p.mpc.collided,
            pid_collided: p.pid.collided,
            mpc_stopped: p.mpc.stopped,
            pid_stopped: p.pid.stopped,
            mpc_longest_wait: p.mpc.longest_wait,
            pid_longest_wait: p.pid.longest_wait,
            mpc_fallback_steps: p.mpc.pid_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMean {
    pub count: usize,
    /// `None` when the category is empty.
    pub mean: Option<f64>,
}

impl CategoryMean {
    fn of(values: &[f64]) -> Self {
        let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
        Self { count: values.len(), mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

/// Contiguous bins of `width` aligned at multiples of `width`.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let index = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|v| index(*v)).min().unwrap();
    let hi = values.iter().map(|v| index(*v)).max().unwrap();
    let mut bins: Vec<HistogramBin> = (lo..=hi)
        .map(|i| HistogramBin { bin_left: i as f64 * width, bin_right: (i + 1) as f64 * width, count: 0 })
        .collect();
    for v in values {
        bins[(index(*v) - lo) as usize].count += 1;
    }
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub n_pedestrians: usize,
    pub pairs: usize,
    /// Mean MPC − PID completion time over all pairs.
    pub general: CategoryMean,
    /// Mean MPC − PID longest wait where both stopped.
    pub stop_and_wait: CategoryMean,
    /// Mean MPC − PID completion time where neither stopped.
    pub non_stop: CategoryMean,
    pub collisions: usize,
    pub mpc_timeouts: usize,
    pub pid_timeouts: usize,
    pub pair_results: Vec<PairSummary>,
}

impl DensitySummary {
    pub fn histograms(&self) -> [(&'static str, Vec<HistogramBin>); 3] {
        let general: Vec<f64> = self.pair_results.iter().map(|p| p.dt_total).collect();
        let stop: Vec<f64> = self.pair_results.iter().filter_map(|p| p.dt_longest_wait).collect();
        let non_stop: Vec<f64> = self
            .pair_results
            .iter()
            .filter(|p| p.situation == Situation::NonStop)
            .map(|p| p.dt_total)
            .collect();
        [
            ("general", histogram(&general, BIN_WIDTH)),
            ("stop_and_wait", histogram(&stop, BIN_WIDTH)),
            ("non_stop", histogram(&non_stop, BIN_WIDTH)),
        ]
    }
}

pub fn aggregate(n_pedestrians: usize, pairs: &[PairedResult]) -> Result<DensitySummary> {
    if pairs.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let general: Vec<f64> = pairs.iter().map(|p| p.dt_total).collect();
    let stop: Vec<f64> = pairs.iter().filter_map(|p| p.dt_longest_wait).collect();
    let non_stop: Vec<f64> = pairs.iter().filter(|p| p.situation == Situation::NonStop).map(|p| p.dt_total).collect();
    Ok(DensitySummary {
        n_pedestrians,
        pairs: pairs.len(),
        general: CategoryMean::of(&general),
        stop_and_wait: CategoryMean::of(&stop),
        non_stop: CategoryMean::of(&non_stop),
        collisions: pairs.iter().filter(|p| p.mpc.collided || p.pid.collided).count(),
        mpc_timeouts: pairs.iter().filter(|p| p.mpc.completion_time.is_none()).count(),
        pid_timeouts: pairs.iter().filter(|p| p.pid.completion_time.is_none()).count(),
        pair_results: pairs.iter().map(PairSummary::from).collect(),
    })
}

/// Seed of the `index`-th episode of a batch.
pub fn episode_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))
}

/// Episode log location inside an output directory.
pub fn episode_log_path(out: &Path, n_pedestrians: usize, seed: u64, kind: ControllerKind) -> PathBuf {
    out.join("episodes")
        .join(format!("n{n_pedestrians}"))
        .join(format!("seed{seed}_{}.csv", kind.as_str()))
}

fn trace_sink(out: Option<&Path>, trace: bool, n: usize, seed: u64, kind: ControllerKind) -> Option<TraceSink> {
    match (out, trace) {
        (Some(out), true) => Some(TraceSink {
            dir: out.join("trace").join(format!("n{n}")).join(format!("seed{seed}_{}", kind.as_str())),
        }),
        _ => None,
    }
}

/// Run `count` independent episodes per controller in `kinds` on a bounded
/// worker pool. Results come back in seed order regardless of scheduling.
/// When `out` is given each episode log is written under it.
pub fn run_batch(
    cfg: &RunConfig,
    n_pedestrians: usize,
    count: usize,
    kinds: &[ControllerKind],
    out: Option<&Path>,
) -> Result<Vec<Vec<EpisodeRecord>>> {
    let mut scen_cfg = cfg.scenario.clone();
    scen_cfg.n_pedestrians = n_pedestrians;
    let run_one = |i: usize| -> Result<Vec<EpisodeRecord>> {
        let seed = episode_seed(cfg.run.seed, i);
        let scenario = generate_scenario(&scen_cfg, seed);
        kinds
            .iter()
            .map(|&kind| {
                let sink = trace_sink(out, cfg.run.trace, n_pedestrians, seed, kind);
                let rec = run_episode(cfg, &scenario, kind, sink.as_ref())?;
                if let Some(out) = out {
                    rec.write_csv(&episode_log_path(out, n_pedestrians, seed, kind))?;
                }
                Ok(rec)
            })
            .collect()
    };
    pool(cfg.run.workers)?.install(|| (0..count).into_par_iter().map(run_one).collect())
}

/// Paired MPC/PID episodes for one crowd size.
pub fn run_pairs(cfg: &RunConfig, n_pedestrians: usize, count: usize, out: Option<&Path>) -> Result<Vec<PairedResult>> {
    run_batch(cfg, n_pedestrians, count, &[ControllerKind::Mpc, ControllerKind::Pid], out)?
        .into_iter()
        .map(|mut pair| {
            let pid = pair.pop().expect("two episodes per pair");
            let mpc = pair.pop().expect("two episodes per pair");
            classify_pair(mpc, pid)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyErrorReport {
    pub v_ref: f64,
    /// Speed error `v_ref - v` at 15 s after starting from rest.
    pub error_at_15s: f64,
    /// Speed error at the end of the run.
    pub error_at_end: f64,
    pub duration: f64,
    /// Reference value the measurement is compared against, m/s.
    pub reference_error: f64,
}

/// Closed-loop PID from rest with a constant reference and zero history.
pub fn pid_steady_error(cfg: &RunConfig, duration: f64) -> Result<SteadyErrorReport> {
    let dt = cfg.mpc.dt;
    let model = discretize(&cfg.vehicle, dt)?;
    let v_ref = cfg.mpc.v_r;
    let mut pid = PidState::new(cfg.pid.clone(), dt);
    let mut x = VehicleState::default();
    let steps = (duration / dt).round() as usize;
    let at_15 = (15.0 / dt).round() as usize;
    let mut error_at_15s = f64::NAN;
    for k in 0..steps {
        if k == at_15 {
            error_at_15s = v_ref - x.v;
        }
        let u = pid.step(x.v, v_ref, cfg.vehicle.u_max);
        x = model.step(x, u);
    }
    Ok(SteadyErrorReport {
        v_ref,
        error_at_15s,
        error_at_end: v_ref - x.v,
        duration,
        reference_error: 0.16,
    })
}
