//! Learned one-step model plus random-shooting planning.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::agent::{EpisodeStats, LossGrad};
use crate::nn::{Adam, AdamConfig, Network, OutputActivation};
use crate::seed::{Rng, SeedTree};
use crate::simulator::{Action, BuildingEnv, Transition, ACTION_DIM, OBS_DIM};

pub const MODEL_INPUT_DIM: usize = OBS_DIM + ACTION_DIM;
pub const MODEL_OUTPUT_DIM: usize = OBS_DIM + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlMpcConfig {
    pub horizon: usize,
    pub candidates: usize,
    pub hidden_layers: Vec<usize>,
    pub fit_epochs: usize,
    pub fit_lr: f64,
    pub fit_batch_size: usize,
    /// Hours between online refits on the controlled building's data; 0 disables.
    pub refit_every: usize,
    pub refit_epochs: usize,
}

impl Default for RlMpcConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            candidates: 256,
            hidden_layers: vec![64, 128, 64],
            fit_epochs: 20,
            fit_lr: 1e-3,
            fit_batch_size: 64,
            refit_every: 24,
            refit_epochs: 2,
        }
    }
}

/// Per-column affine standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Column means and standard deviations; constant columns get scale 1.
    pub fn fit(data: ArrayView2<f64>) -> Self {
        let n = data.nrows().max(1) as f64;
        let mean: Vec<f64> = data.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_else(|| vec![0.0; data.ncols()]);
        let scale = (0..data.ncols())
            .map(|j| {
                let var = data.column(j).iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn normalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    pub fn denormalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.scale[j] + self.mean[j];
            }
        }
        out
    }
}

/// Network mapping `[state, action]` to `[next_state, reward]` in
/// standardised coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub net: Network,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    opt: Adam,
}

/// Model inputs and targets of a transition set, one row each.
pub fn transition_matrices(data: &[&Transition]) -> (Array2<f64>, Array2<f64>) {
    let mut x = Array2::zeros((data.len(), MODEL_INPUT_DIM));
    let mut y = Array2::zeros((data.len(), MODEL_OUTPUT_DIM));
    for (i, t) in data.iter().enumerate() {
        let a = t.action.to_array();
        for (j, v) in t.state.iter().chain(&a).enumerate() {
            x[[i, j]] = *v;
        }
        for (j, v) in t.next_state.iter().chain(std::iter::once(&t.reward)).enumerate() {
            y[[i, j]] = *v;
        }
    }
    (x, y)
}

/// Mean squared error over all entries and its parameter gradient.
pub fn dynamics_loss(net: &Network, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<LossGrad, BaselineError> {
    if inputs.nrows() == 0 {
        return Err(BaselineError::EmptyData);
    }
    let cache = net.forward_cached(inputs)?;
    let diff = cache.output() - &targets;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let d_out = diff.mapv(|d| 2.0 * d / n);
    let mut grad = vec![0.0; net.num_params()];
    net.backward(&cache, d_out.view(), Some(&mut grad))?;
    Ok(LossGrad { loss, grad })
}

impl DynamicsModel {
    pub fn new(hidden: &[usize], data: &[&Transition], lr: f64, rng: &mut Rng) -> Result<Self, BaselineError> {
        if data.is_empty() {
            return Err(BaselineError::EmptyData);
        }
        let (x, y) = transition_matrices(data);
        let mut sizes = vec![MODEL_INPUT_DIM];
        sizes.extend(hidden);
        sizes.push(MODEL_OUTPUT_DIM);
        let net = Network::new(&sizes, OutputActivation::Identity, rng)?;
        Ok(Self {
            opt: Adam::new(net.num_params(), AdamConfig::with_lr(lr)),
            net,
            input_norm: Normalizer::fit(x.view()),
            output_norm: Normalizer::fit(y.view()),
        })
    }

    /// Shuffled minibatch Adam passes; the normalisers stay fixed.
    /// Returns the last epoch's mean loss.
    pub fn train(
        &mut self,
        data: &[&Transition],
        epochs: usize,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<f64, BaselineError> {
        if data.is_empty() {
            return Err(BaselineError::EmptyData);
        }
        let (x, y) = transition_matrices(data);
        let (x, y) = (self.input_norm.normalize(x.view()), self.output_norm.normalize(y.view()));
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut last = f64::NAN;
        for _ in 0..epochs {
            order.shuffle(rng);
            let (mut sum, mut batches) = (0.0, 0);
            for chunk in order.chunks(batch_size.max(1)) {
                let xb = x.select(Axis(0), chunk);
                let yb = y.select(Axis(0), chunk);
                let lg = dynamics_loss(&self.net, xb.view(), yb.view())?;
                self.opt.step(self.net.params_mut(), &lg.grad);
                sum += lg.loss;
                batches += 1;
            }
            last = sum / batches as f64;
        }
        Ok(last)
    }

    /// Mean squared error on standardised targets.
    pub fn normalized_error(&self, data: &[&Transition]) -> Result<f64, BaselineError> {
        let (x, y) = transition_matrices(data);
        let (x, y) = (self.input_norm.normalize(x.view()), self.output_norm.normalize(y.view()));
        Ok(dynamics_loss(&self.net, x.view(), y.view())?.loss)
    }

    /// Predicted next observations and rewards, one row per input pair.
    pub fn predict(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>), BaselineError> {
        let x = concatenate![Axis(1), states, actions];
        let y = self.output_norm.denormalize(self.net.forward(self.input_norm.normalize(x.view()).view())?.view());
        let next = y.slice(s![.., ..OBS_DIM]).to_owned();
        Ok((next, y.column(OBS_DIM).to_vec()))
    }
}

/// Builds a model and fits it for `epochs` passes.
pub fn fit_dynamics_model(
    data: &[&Transition],
    hidden: &[usize],
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<DynamicsModel, BaselineError> {
    let mut m = DynamicsModel::new(hidden, data, lr, rng)?;
    m.train(data, epochs, batch_size, rng)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub action: Action,
    pub best: usize,
    /// Model-predicted undiscounted return of every candidate.
    pub returns: Vec<f64>,
}

/// Scores explicit action sequences (all of equal length) from `obs` under
/// the model and picks the best; ties go to the lowest index.
pub fn plan_with_candidates(model: &DynamicsModel, obs: &[f64], candidates: &[Vec<Action>]) -> Result<Plan, BaselineError> {
    let n = candidates.len();
    let horizon = candidates.first().map_or(0, Vec::len);
    if n == 0 || horizon == 0 || candidates.iter().any(|c| c.len() != horizon) {
        return Err(BaselineError::EmptyData);
    }
    let mut states = Array2::zeros((n, OBS_DIM));
    for mut row in states.rows_mut() {
        row.assign(&ndarray::ArrayView1::from(obs));
    }
    let mut returns = vec![0.0; n];
    for h in 0..horizon {
        let mut actions = Array2::zeros((n, ACTION_DIM));
        for (i, c) in candidates.iter().enumerate() {
            let a = c[h].to_array();
            actions[[i, 0]] = a[0];
            actions[[i, 1]] = a[1];
        }
        let (next, rewards) = model.predict(states.view(), actions.view())?;
        for (ret, r) in returns.iter_mut().zip(rewards) {
            *ret += r;
        }
        states = next;
    }
    let mut best = 0;
    for (i, r) in returns.iter().enumerate() {
        if *r > returns[best] {
            best = i;
        }
    }
    Ok(Plan { action: candidates[best][0], best, returns })
}

/// Random shooting: `candidates` uniformly sampled sequences of length
/// `horizon`.
pub fn rl_mpc_plan(
    model: &DynamicsModel,
    obs: &[f64],
    horizon: usize,
    candidates: usize,
    rng: &mut Rng,
) -> Result<Plan, BaselineError> {
    let seqs: Vec<Vec<Action>> = (0..candidates)
        .map(|_| {
            (0..horizon)
                .map(|_| Action::new(rng.random_range(-1.0..=1.0), rng.random_range(0.0..=1.0)))
                .collect()
        })
        .collect();
    plan_with_candidates(model, obs, &seqs)
}

/// Drives one episode with the planner, refitting the model on the
/// building's own data as it accumulates.
pub fn run_rl_mpc(
    model: &DynamicsModel,
    env: &mut BuildingEnv,
    cfg: &RlMpcConfig,
    seed: SeedTree,
) -> Result<(EpisodeStats, DynamicsModel), BaselineError> {
    let mut model = model.clone();
    let mut plan_rng = seed.named("plan").rng();
    let mut fit_rng = seed.named("fit").rng();
    let mut seen: Vec<Transition> = Vec::with_capacity(env.remaining());
    let mut stats = EpisodeStats::default();
    while !env.is_done() {
        let obs = env.observation();
        let plan = rl_mpc_plan(&model, &obs, cfg.horizon, cfg.candidates, &mut plan_rng)?;
        let t = env.step(plan.action)?;
        stats.record(&t);
        seen.push(t);
        if cfg.refit_every > 0 && seen.len() % cfg.refit_every == 0 {
            let refs: Vec<&Transition> = seen.iter().collect();
            model.train(&refs, cfg.refit_epochs, cfg.fit_batch_size, &mut fit_rng)?;
        }
    }
    Ok((stats, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::env;

    /// Linear dynamics on the first two state components, zero elsewhere;
    /// reward `s0 + 0.5 a0`.
    fn linear_data(n: usize, seed: u64) -> Vec<Transition> {
        let mut rng = SeedTree::new(seed).rng();
        (0..n)
            .map(|i| {
                let mut s = [0.0; OBS_DIM];
                for v in s.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                let a = Action::new(rng.random_range(-1.0..=1.0), rng.random_range(0.0..=1.0));
                let mut next = [0.0; OBS_DIM];
                next[0] = 0.5 * s[0] + 0.3 * a.esu_command - 0.2 * a.hvac_command;
                next[1] = 0.5 * s[1] - 0.4 * a.esu_command;
                Transition {
                    state: s,
                    action: a,
                    reward: s[0] + 0.5 * a.esu_command,
                    next_state: next,
                    done: false,
                    cost_term_c1: 0.0,
                    ramp_term_c2: 0.0,
                    comfort_term: 0.0,
                    net_consumption_e: 0.0,
                    realized_esu_power_c: 0.0,
                    realized_hvac_power_h: 0.0,
                    price: 0.0,
                    hour_index: i,
                }
            })
            .collect()
    }

    fn fitted(seed: u64) -> (DynamicsModel, Vec<Transition>) {
        let data = linear_data(1000, seed);
        let refs: Vec<&Transition> = data.iter().collect();
        let m = fit_dynamics_model(&refs, &[32, 32], 150, 3e-3, 32, &mut SeedTree::new(seed + 1).rng()).unwrap();
        (m, data)
    }

    #[test]
    fn normalizer_round_trip() {
        let data = linear_data(50, 1);
        let (x, _) = transition_matrices(&data.iter().collect::<Vec<_>>());
        let n = Normalizer::fit(x.view());
        let back = n.denormalize(n.normalize(x.view()).view());
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Constant columns (zero states) keep scale 1.
        let z = Array2::<f64>::zeros((4, 3));
        assert_eq!(Normalizer::fit(z.view()).scale, vec![1.0; 3]);
    }

    #[test]
    fn learns_a_linear_system() {
        let (m, data) = fitted(2);
        let held_out = linear_data(300, 99);
        let refs: Vec<&Transition> = held_out.iter().collect();
        let err = m.normalized_error(&refs).unwrap();
        assert!(err < 1e-2, "normalized one-step error {err}");
        // Beats predicting the training mean, whose standardised error is 1
        // on the non-constant outputs and 0 on the constant ones.
        let train: Vec<&Transition> = data.iter().collect();
        assert!(m.normalized_error(&train).unwrap() < 3.0 / 11.0);
        assert!(matches!(fit_dynamics_model(&[], &[4], 1, 1e-3, 8, &mut SeedTree::new(0).rng()), Err(BaselineError::EmptyData)));
    }

    #[test]
    fn horizon_one_grid_matches_exhaustive_argmax() {
        let (m, _) = fitted(3);
        let obs = [0.2; OBS_DIM];
        let grid: Vec<Vec<Action>> = (0..=10)
            .flat_map(|i| (0..=5).map(move |j| vec![Action::new(-1.0 + 0.2 * i as f64, 0.2 * j as f64)]))
            .collect();
        let plan = plan_with_candidates(&m, &obs, &grid).unwrap();
        let mut best = (f64::NEG_INFINITY, Action::default());
        for c in &grid {
            let s = Array2::from_shape_vec((1, OBS_DIM), obs.to_vec()).unwrap();
            let a = Array2::from_shape_vec((1, ACTION_DIM), c[0].to_array().to_vec()).unwrap();
            let r = m.predict(s.view(), a.view()).unwrap().1[0];
            if r > best.0 {
                best = (r, c[0]);
            }
        }
        assert_eq!(plan.action, best.1);
        // Reward rises with the ESU command in the true system.
        assert!(plan.action.esu_command > 0.5);
    }

    #[test]
    fn planner_properties() {
        let (m, _) = fitted(4);
        let obs = [0.1; OBS_DIM];
        let one = rl_mpc_plan(&m, &obs, 3, 1, &mut SeedTree::new(5).rng()).unwrap();
        let again = rl_mpc_plan(&m, &obs, 3, 1, &mut SeedTree::new(5).rng()).unwrap();
        assert_eq!(one, again);
        assert_eq!(one.best, 0);

        let p = rl_mpc_plan(&m, &obs, 4, 64, &mut SeedTree::new(6).rng()).unwrap();
        assert!(p.returns.iter().all(|r| *r <= p.returns[p.best]));
        assert_eq!(p.returns.len(), 64);
    }

    #[test]
    fn drives_a_building_episode() {
        let mut e = env(2, 48, 7);
        let mut warm = e.clone();
        let mut data = Vec::new();
        let mut rng = SeedTree::new(8).rng();
        while !warm.is_done() {
            let a = Action::new(rng.random_range(-1.0..=1.0), rng.random_range(0.0..=1.0));
            data.push(warm.step(a).unwrap());
        }
        let refs: Vec<&Transition> = data.iter().collect();
        let m = fit_dynamics_model(&refs, &[16], 5, 1e-3, 16, &mut rng).unwrap();
        let cfg = RlMpcConfig { horizon: 3, candidates: 16, refit_every: 24, ..RlMpcConfig::default() };
        let (stats, refit) = run_rl_mpc(&m, &mut e, &cfg, SeedTree::new(9)).unwrap();
        assert_eq!(stats.steps(), 48);
        assert_ne!(refit.net, m.net);
    }
}
