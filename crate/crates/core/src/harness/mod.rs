//! Config-driven experiments: per-zone source and target buildings,
//! meta-training, adaptation on the targets, baselines, scoring and reports.
//!
//! A run is split into jobs, one per (zone, repeat seed). Every random
//! stream of a job derives from the master seed through named branches, so
//! enabling or disabling a method never changes another method's draws.
//! All learning methods share the targets' exploration and replay streams.

mod config;
mod report;

pub use config::{apply_override, documented_keys, ExperimentConfig, MethodToggles};
pub use report::{
    breakdown, emit_learning_curves, read_breakdown_csv, read_summary_csv, render_summary_text, write_reports, BreakdownRow,
    SUMMARY_CSV_HEADER,
};

use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{train_online, Agent, EpisodeStats, ReplayBuffer};
use crate::baselines::{
    adapt_target_episodic, fit_dynamics_model, maml_episodic_train, pretrained_init, run_no_control, run_rbc,
    run_rl_mpc, BaselineError, RbcRuleTable,
};
use crate::meta::{adapt_target, meta_train, LearnerStreams, MetaError, MetaState, MetaTrainReport};
use crate::metrics::{average_cost, district_series, MetricError, ScoreReport};
use crate::persist::{self, Checkpoint, PersistError};
use crate::seed::SeedTree;
use crate::simulator::{generate_trace, sample_building_config, Action, BuildingEnv, SimError, Transition, ZoneTable};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Rbc,
    NoControl,
    RandomInit,
    Pretrained,
    Maml,
    RlMpc,
    MetaEms,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Rbc,
        Method::NoControl,
        Method::RandomInit,
        Method::Pretrained,
        Method::Maml,
        Method::RlMpc,
        Method::MetaEms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rbc => "rbc",
            Method::NoControl => "no_control",
            Method::RandomInit => "random_init",
            Method::Pretrained => "pretrained",
            Method::Maml => "maml",
            Method::RlMpc => "rl_mpc",
            Method::MetaEms => "metaems",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Methods to run, in report order; the rule-based controller always comes first.
pub fn enabled_methods(t: &MethodToggles) -> Vec<Method> {
    let on = [true, t.no_control, t.random_init, t.pretrained, t.maml, t.rl_mpc, t.metaems];
    Method::ALL.into_iter().zip(on).filter_map(|(m, on)| on.then_some(m)).collect()
}

/// Seed root of one (zone, repeat) job.
pub fn job_seed(master_seed: u64, zone: u8, repeat: usize) -> SeedTree {
    SeedTree::new(master_seed).named("zone").child(zone as u64).named("repeat").child(repeat as u64)
}

#[derive(Debug, Clone)]
pub struct ZoneBuildings {
    pub sources: Vec<BuildingEnv>,
    pub targets: Vec<BuildingEnv>,
}

/// Samples the disjoint source and target buildings of a job. Building `i`
/// (sources first) draws its parameters and trace from its own branch.
pub fn zone_buildings(cfg: &ExperimentConfig, zone: u8, job: SeedTree) -> Result<ZoneBuildings, HarnessError> {
    let table = ZoneTable::builtin();
    let profile = table.zone(zone)?;
    let ranges = cfg.ranges()?;
    let n = cfg.n_source_buildings + cfg.n_target_buildings;
    let mut all = Vec::with_capacity(n);
    for i in 0..n {
        let b = job.named("building").child(i as u64);
        let bc = sample_building_config(&ranges, &mut b.named("config").rng())?;
        let trace =
            generate_trace(profile, cfg.episode_length, bc.solar_scale, bc.load_scale, &mut b.named("trace").rng())?;
        all.push(BuildingEnv::new(bc, cfg.reward.clone(), trace)?);
    }
    let targets = all.split_off(cfg.n_source_buildings);
    for t in &targets {
        if all.iter().any(|s| s.config() == t.config() && s.trace() == t.trace()) {
            return Err(HarnessError::Config("a target building duplicates a source building".into()));
        }
    }
    Ok(ZoneBuildings { sources: all, targets })
}

/// Interaction records of one method: `[target][episode]`.
pub type MethodRecords = Vec<Vec<EpisodeStats>>;

#[derive(Debug, Clone)]
pub struct JobResult {
    pub zone: u8,
    pub repeat: usize,
    pub runs: Vec<(Method, MethodRecords)>,
    pub meta: Option<MetaState>,
    pub meta_report: Option<MetaTrainReport>,
    pub maml_meta: Option<MetaState>,
    pub maml_group_updates: u64,
}

impl JobResult {
    pub fn records(&self, m: Method) -> Option<&MethodRecords> {
        self.runs.iter().find(|(k, _)| *k == m).map(|(_, r)| r)
    }
}

/// Options of a single job beyond the experiment config.
#[derive(Debug, Clone, Default)]
pub struct JobOptions {
    /// Load each job's MetaEMS initialisation from this directory (as
    /// written by [`write_reports`]) instead of meta-training.
    pub checkpoint_dir: Option<std::path::PathBuf>,
    /// Stop after meta-training (no target runs besides the reference).
    pub train_only: bool,
}

pub fn load_rbc_table(cfg: &ExperimentConfig) -> Result<RbcRuleTable, HarnessError> {
    if cfg.rbc_table.is_empty() {
        Ok(RbcRuleTable::default())
    } else {
        RbcRuleTable::load(Path::new(&cfg.rbc_table))
            .map_err(|e| HarnessError::Config(format!("rbc table {}: {e}", cfg.rbc_table)))
    }
}

fn fixed_policy_runs(
    targets: &[BuildingEnv],
    episodes: usize,
    mut run: impl FnMut(&mut BuildingEnv) -> Result<EpisodeStats, BaselineError>,
) -> Result<MethodRecords, HarnessError> {
    targets
        .iter()
        .map(|t| {
            let mut e = t.clone();
            let once = run(&mut e)?;
            Ok(vec![once; episodes])
        })
        .collect()
}

/// Runs every enabled method on one (zone, repeat) job.
pub fn run_job(
    cfg: &ExperimentConfig,
    zone: u8,
    repeat: usize,
    table: &RbcRuleTable,
    opts: &JobOptions,
) -> Result<JobResult, HarnessError> {
    let job = job_seed(cfg.master_seed, zone, repeat);
    let b = zone_buildings(cfg, zone, job)?;
    let eps = cfg.test_episodes;
    let eval = job.named("eval");
    let stream = |i: usize| LearnerStreams::from_tree(eval.child(i as u64));
    let init = MetaState::random(&cfg.agent, cfg.meta.beta_theta, cfg.meta.beta_phi, &mut job.named("init").rng())?;
    let rounds = cfg.meta.resolved_rounds(cfg.n_source_buildings);
    let methods = enabled_methods(&cfg.methods);

    let mut out = JobResult {
        zone,
        repeat,
        runs: Vec::new(),
        meta: None,
        meta_report: None,
        maml_meta: None,
        maml_group_updates: 0,
    };
    // Episodes are deterministic for fixed policies, so one is replicated.
    out.runs.push((Method::Rbc, fixed_policy_runs(&b.targets, eps, |e| run_rbc(e, table))?));

    for &m in &methods {
        if opts.train_only && m != Method::MetaEms {
            continue;
        }
        let records: MethodRecords = match m {
            Method::Rbc => continue,
            Method::NoControl => fixed_policy_runs(&b.targets, eps, run_no_control)?,
            Method::RandomInit => b
                .targets
                .iter()
                .enumerate()
                .map(|(i, t)| Ok(adapt_target(&init.actor, &init.critic, t, eps, &cfg.agent, stream(i))?.episodes))
                .collect::<Result<_, HarnessError>>()?,
            Method::Pretrained => {
                let seed = job.named("pretrained");
                let pool = b
                    .sources
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let mut agent = Agent::from_init(cfg.agent.clone(), &init.actor, &init.critic)
                            .map_err(MetaError::from)?;
                        let mut env = s.clone();
                        let mut buf = ReplayBuffer::new(cfg.agent.buffer_capacity);
                        let mut st = LearnerStreams::from_tree(seed.child(i as u64));
                        let len = env.episode_length();
                        train_online(&mut agent, &mut env, len, &mut buf, &mut st.explore, &mut st.replay)
                            .map_err(MetaError::from)?;
                        Ok(agent)
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()?;
                let mut select = seed.named("select").rng();
                b.targets
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let pick = pretrained_init(&pool, &mut select)?;
                        Ok(adapt_target(&pick.actor, &pick.critic, t, eps, &cfg.agent, stream(i))?.episodes)
                    })
                    .collect::<Result<_, HarnessError>>()?
            }
            Method::Maml => {
                let mut state = init.clone();
                let r = maml_episodic_train(&mut state, &b.sources, &cfg.meta, &cfg.maml, job.named("maml"), rounds)?;
                out.maml_group_updates = r.group_updates;
                let runs = b
                    .targets
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        Ok(adapt_target_episodic(&state.actor, &state.critic, t, eps, &cfg.agent, cfg.maml.epochs, stream(i))?
                            .episodes)
                    })
                    .collect::<Result<_, HarnessError>>()?;
                out.maml_meta = Some(state);
                runs
            }
            Method::RlMpc => run_rl_mpc_method(cfg, &b, job.named("rl_mpc"))?,
            Method::MetaEms => {
                let state = match &opts.checkpoint_dir {
                    Some(dir) => {
                        let path = dir.join(meta_checkpoint_name(Method::MetaEms, zone, repeat));
                        let state: MetaState = persist::load(&path).map_err(|e| {
                            HarnessError::Config(format!("checkpoint {}: {e}", path.display()))
                        })?;
                        if state.agent_config.actor_sizes() != cfg.agent.actor_sizes() {
                            return Err(HarnessError::Config(format!(
                                "checkpoint {} does not match agent.hidden_layers",
                                path.display()
                            )));
                        }
                        state
                    }
                    None => {
                        let mut state = init.clone();
                        let r = meta_train(&mut state, &b.sources, &cfg.meta, job.named("metaems"), rounds)?;
                        log::info!(
                            "zone {zone} seed {repeat}: meta-trained {} rounds, {} group-level updates",
                            state.rounds_completed,
                            r.group_updates
                        );
                        out.meta_report = Some(r);
                        state
                    }
                };
                if opts.train_only {
                    out.meta = Some(state);
                    continue;
                }
                let runs = b
                    .targets
                    .iter()
                    .enumerate()
                    .map(|(i, t)| Ok(adapt_target(&state.actor, &state.critic, t, eps, &cfg.agent, stream(i))?.episodes))
                    .collect::<Result<_, HarnessError>>()?;
                out.meta = Some(state);
                runs
            }
        };
        out.runs.push((m, records));
    }
    Ok(out)
}

fn run_rl_mpc_method(cfg: &ExperimentConfig, b: &ZoneBuildings, seed: SeedTree) -> Result<MethodRecords, HarnessError> {
    use rand::Rng as _;
    let mut data: Vec<Transition> = Vec::new();
    for (i, s) in b.sources.iter().enumerate() {
        let mut env = s.clone();
        let mut rng = seed.named("explore").child(i as u64).rng();
        while !env.is_done() {
            let a = Action::new(rng.random_range(-1.0..=1.0), rng.random_range(0.0..=1.0));
            data.push(env.step(a)?);
        }
    }
    let refs: Vec<&Transition> = data.iter().collect();
    let c = &cfg.rl_mpc;
    let model =
        fit_dynamics_model(&refs, &c.hidden_layers, c.fit_epochs, c.fit_lr, c.fit_batch_size, &mut seed.named("fit").rng())?;
    b.targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut m = model.clone();
            let mut runs = Vec::with_capacity(cfg.test_episodes);
            for ep in 0..cfg.test_episodes {
                let mut env = t.clone();
                let (stats, refit) = run_rl_mpc(&m, &mut env, c, seed.named("target").child(i as u64).child(ep as u64))?;
                m = refit;
                runs.push(stats);
            }
            Ok(runs)
        })
        .collect()
}

/// Metrics of one building in one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingScore {
    pub raw: ScoreReport,
    pub normalized: ScoreReport,
    /// Electricity cost in percent of the rule-based controller's.
    pub cost_pct: f64,
    pub total_reward: f64,
}

/// Metrics of one method in one episode of one job.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeScore {
    pub method: Method,
    pub episode: usize,
    pub buildings: Vec<BuildingScore>,
    /// Metrics of the summed district series, normalised by the district RBC.
    pub district: ScoreReport,
    pub district_normalized: ScoreReport,
    /// Mean over buildings of the per-building normalised metrics.
    pub building_mean_normalized: ScoreReport,
    /// Mean over buildings of `cost_pct`.
    pub average_cost_pct: f64,
    /// Mean over buildings of the episode's total reward.
    pub mean_total_reward: f64,
}

#[derive(Debug, Clone)]
pub struct JobScores {
    pub zone: u8,
    pub repeat: usize,
    pub episodes: Vec<EpisodeScore>,
}

pub fn score_job(job: &JobResult) -> Result<JobScores, HarnessError> {
    let rbc = job.records(Method::Rbc).expect("reference always runs");
    let mut episodes = Vec::new();
    for (m, recs) in &job.runs {
        let n_eps = recs.first().map_or(0, Vec::len);
        for ep in 0..n_eps {
            let mut buildings = Vec::with_capacity(recs.len());
            for (b, r) in recs.iter().zip(rbc) {
                let (s, base) = (&b[ep], &r[ep]);
                let raw = ScoreReport::compute(&s.net_consumption, &s.prices)?;
                let base_raw = ScoreReport::compute(&base.net_consumption, &base.prices)?;
                buildings.push(BuildingScore {
                    normalized: raw.normalize(&base_raw)?,
                    raw,
                    cost_pct: average_cost(&[(&s.net_consumption, &s.prices, &base.net_consumption)])?,
                    total_reward: s.total_reward,
                });
            }
            let series: Vec<&[f64]> = recs.iter().map(|b| b[ep].net_consumption.as_slice()).collect();
            let base_series: Vec<&[f64]> = rbc.iter().map(|b| b[ep].net_consumption.as_slice()).collect();
            let prices = &recs[0][ep].prices;
            let district = ScoreReport::compute(&district_series(&series)?, prices)?;
            let district_base = ScoreReport::compute(&district_series(&base_series)?, prices)?;
            let n = buildings.len() as f64;
            let norms: Vec<ScoreReport> = buildings.iter().map(|b| b.normalized).collect();
            episodes.push(EpisodeScore {
                method: *m,
                episode: ep + 1,
                district_normalized: district.normalize(&district_base)?,
                district,
                building_mean_normalized: ScoreReport::mean(&norms).expect("non-empty"),
                average_cost_pct: buildings.iter().map(|b| b.cost_pct).sum::<f64>() / n,
                mean_total_reward: buildings.iter().map(|b| b.total_reward).sum::<f64>() / n,
                buildings,
            });
        }
    }
    Ok(JobScores { zone: job.zone, repeat: job.repeat, episodes })
}

/// Mean and sample standard deviation over repeat seeds for one
/// (zone, method, episode).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub zone: u8,
    pub method: Method,
    pub episode: usize,
    pub avg_cost_mean: f64,
    pub avg_cost_std: f64,
    pub total_reward_mean: f64,
    pub total_reward_std: f64,
    pub n_seeds: usize,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config_hash: String,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub jobs: Vec<JobResult>,
    pub scores: Vec<JobScores>,
    pub wall_clock_s: f64,
}

impl RunRecord {
    pub fn methods(&self) -> Vec<Method> {
        let mut ms: Vec<Method> = self.jobs.iter().flat_map(|j| j.runs.iter().map(|(m, _)| *m)).collect();
        ms.sort();
        ms.dedup();
        ms
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for &zone in &self.config.zones {
            for m in self.methods() {
                for ep in 1..=self.config.test_episodes {
                    let picked: Vec<&EpisodeScore> = self
                        .scores
                        .iter()
                        .filter(|s| s.zone == zone)
                        .flat_map(|s| s.episodes.iter())
                        .filter(|e| e.method == m && e.episode == ep)
                        .collect();
                    if picked.is_empty() {
                        continue;
                    }
                    let (cm, cs) = mean_std(&picked.iter().map(|e| e.average_cost_pct).collect::<Vec<_>>());
                    let (rm, rs) = mean_std(&picked.iter().map(|e| e.mean_total_reward).collect::<Vec<_>>());
                    rows.push(SummaryRow {
                        zone,
                        method: m,
                        episode: ep,
                        avg_cost_mean: cm,
                        avg_cost_std: cs,
                        total_reward_mean: rm,
                        total_reward_std: rs,
                        n_seeds: picked.len(),
                    });
                }
            }
        }
        rows
    }

    pub fn summary_row(&self, zone: u8, method: Method, episode: usize) -> Option<SummaryRow> {
        self.summary().into_iter().find(|r| r.zone == zone && r.method == method && r.episode == episode)
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Runs all (zone, repeat) jobs on up to `jobs` threads. Results are
/// ordered by zone, then repeat, whatever the scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize, opts: &JobOptions) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let table = load_rbc_table(cfg)?;
    let start = std::time::Instant::now();
    let work: Vec<(u8, usize)> =
        cfg.zones.iter().flat_map(|&z| (0..cfg.n_repeat_seeds).map(move |r| (z, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let results: Vec<JobResult> = pool.install(|| {
        work.par_iter()
            .map(|&(z, r)| {
                log::info!("job zone {z} seed {r} started");
                let res = run_job(cfg, z, r, &table, opts);
                log::info!("job zone {z} seed {r} finished");
                res
            })
            .collect::<Result<_, _>>()
    })?;
    let scores = if opts.train_only {
        Vec::new()
    } else {
        results.iter().map(score_job).collect::<Result<_, _>>()?
    };
    Ok(RunRecord {
        config_hash: config_hash(cfg),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        jobs: results,
        scores,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

pub fn save_checkpoint<T: Checkpoint>(path: &Path, obj: &T) -> Result<(), HarnessError> {
    Ok(persist::save(path, obj)?)
}

pub fn load_checkpoint<T: Checkpoint>(path: &Path) -> Result<T, HarnessError> {
    Ok(persist::load(path)?)
}

/// Checkpoint file name of a job's meta-learner.
pub fn meta_checkpoint_name(method: Method, zone: u8, repeat: usize) -> String {
    format!("{}_zone{zone}_seed{repeat}.ckpt", method.name())
}

#[cfg(test)]
mod tests;
