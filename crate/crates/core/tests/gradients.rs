//! Analytic gradients against central finite differences.
//!
//! The losses are piecewise smooth: rectifier units and the action clamp
//! switch on and off. A difference stencil that straddles a switch measures a
//! chord across a kink, not a derivative, so such a net is redrawn. The
//! switching pattern is compared exactly at both ends of every stencil.

use metaems::agent::{actor_loss, critic_loss, Batch, LossGrad};
use metaems::baselines::{dynamics_loss, MODEL_INPUT_DIM, MODEL_OUTPUT_DIM};
use metaems::nn::{Network, OutputActivation};
use metaems::seed::{Rng, SeedTree};
use metaems::simulator::{Action, ACTION_DIM, OBS_DIM};
use ndarray::{concatenate, Array2, Axis};
use rand::Rng as _;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const NETS: usize = 24;

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn random_net(input: usize, output: usize, act: OutputActivation, rng: &mut Rng) -> Network {
    let mut s = vec![input];
    for _ in 0..rng.random_range(1..=3) {
        s.push(rng.random_range(3..=9));
    }
    s.push(output);
    Network::new(&s, act, rng).unwrap()
}

fn random_batch(n: usize, rng: &mut Rng) -> Batch {
    let actions = Array2::from_shape_fn((n, ACTION_DIM), |(_, j)| {
        if j == 0 { rng.random_range(-1.0..1.0) } else { rng.random_range(0.0..1.0) }
    });
    Batch {
        states: random_matrix(n, OBS_DIM, rng),
        actions,
        rewards: (0..n).map(|_| rng.random_range(-3.0..1.0)).collect(),
        next_states: random_matrix(n, OBS_DIM, rng),
        dones: (0..n).map(|_| rng.random_bool(0.2)).collect(),
    }
}

fn units(net: &Network, x: &Array2<f64>) -> Vec<bool> {
    net.forward_cached(x.view()).unwrap().active_units()
}

fn clamp(raw: &Array2<f64>) -> Array2<f64> {
    let mut a = raw.clone();
    for mut r in a.rows_mut() {
        let c = Action::new(r[0], r[1]).clamped();
        r[0] = c.esu_command;
        r[1] = c.hvac_command;
    }
    a
}

/// Largest relative error over all parameters, or `None` when some stencil
/// crosses a switch. The denominator is floored so gradients that are zero
/// up to rounding do not blow up.
fn max_rel_error(
    net: &Network,
    analytic: &LossGrad,
    loss: impl Fn(&Network) -> f64,
    pattern: impl Fn(&Network) -> Vec<bool>,
) -> Option<f64> {
    let base = pattern(net);
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for i in 0..net.num_params() {
        let p = net.params()[i];
        probe.params_mut()[i] = p + H;
        let up = loss(&probe);
        let up_ok = pattern(&probe) == base;
        probe.params_mut()[i] = p - H;
        let down = loss(&probe);
        let down_ok = pattern(&probe) == base;
        probe.params_mut()[i] = p;
        if !(up_ok && down_ok) {
            return None;
        }
        let numeric = (up - down) / (2.0 * H);
        let a = analytic.grad[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    Some(worst)
}

/// Checks `NETS` smooth draws; returns how many draws were set aside.
fn check(name: &str, mut draw: impl FnMut(&mut Rng) -> Option<f64>) -> usize {
    let mut rng = SeedTree::new(0).named(name).rng();
    let (mut checked, mut redrawn) = (0, 0);
    while checked < NETS {
        match draw(&mut rng) {
            Some(e) => {
                assert!(e < TOL, "{name} net {checked}: relative error {e}");
                checked += 1;
            }
            None => redrawn += 1,
        }
        assert!(redrawn < NETS, "{name}: too many draws on a kink");
    }
    redrawn
}

#[test]
fn network_output_gradient() {
    let mut k = 0;
    check("net", |rng| {
        k += 1;
        let act = if k % 2 == 0 { OutputActivation::Identity } else { OutputActivation::Tanh };
        let net = random_net(5, 3, act, rng);
        let x = random_matrix(7, 5, rng);
        let w = random_matrix(7, 3, rng);
        let loss = |n: &Network| (n.forward(x.view()).unwrap() * &w).sum();
        let cache = net.forward_cached(x.view()).unwrap();
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&cache, w.view(), Some(&mut grad)).unwrap();
        let g = LossGrad { loss: loss(&net), grad };
        max_rel_error(&net, &g, loss, |n| units(n, &x))
    });
}

#[test]
fn critic_loss_gradient() {
    let mut k = 0;
    check("critic", |rng| {
        k += 1;
        let actor = random_net(OBS_DIM, ACTION_DIM, OutputActivation::Tanh, rng);
        let critic = random_net(OBS_DIM + ACTION_DIM, 1, OutputActivation::Identity, rng);
        let target = random_net(OBS_DIM + ACTION_DIM, 1, OutputActivation::Identity, rng);
        let batch = random_batch(16, rng);
        let scale = [1.0, 0.01][k % 2];
        let x = concatenate![Axis(1), batch.states, batch.actions];
        let g = critic_loss(&actor, &critic, &target, &batch, 0.99, scale).unwrap();
        max_rel_error(
            &critic,
            &g,
            |c| critic_loss(&actor, c, &target, &batch, 0.99, scale).unwrap().loss,
            |c| units(c, &x),
        )
    });
}

#[test]
fn actor_loss_gradient() {
    check("actor", |rng| {
        let actor = random_net(OBS_DIM, ACTION_DIM, OutputActivation::Tanh, rng);
        let critic = random_net(OBS_DIM + ACTION_DIM, 1, OutputActivation::Identity, rng);
        let batch = random_batch(16, rng);
        let g = actor_loss(&actor, &critic, &batch).unwrap();
        // Actor rectifiers, the clamp, and the critic's rectifiers at the
        // clamped action all switch with the actor's parameters.
        let pattern = |a: &Network| {
            let raw = a.forward(batch.states.view()).unwrap();
            let clamped = clamp(&raw);
            let mut p = units(a, &batch.states);
            p.extend(raw.iter().zip(clamped.iter()).map(|(r, c)| r == c));
            p.extend(units(&critic, &concatenate![Axis(1), batch.states, clamped]));
            p
        };
        max_rel_error(&actor, &g, |a| actor_loss(a, &critic, &batch).unwrap().loss, pattern)
    });
}

#[test]
fn dynamics_loss_gradient() {
    check("dynamics", |rng| {
        let net = random_net(MODEL_INPUT_DIM, MODEL_OUTPUT_DIM, OutputActivation::Identity, rng);
        let x = random_matrix(12, MODEL_INPUT_DIM, rng);
        let y = random_matrix(12, MODEL_OUTPUT_DIM, rng);
        let g = dynamics_loss(&net, x.view(), y.view()).unwrap();
        max_rel_error(&net, &g, |n| dynamics_loss(n, x.view(), y.view()).unwrap().loss, |n| units(n, &x))
    });
}

#[test]
fn a_stencil_across_a_kink_is_detected() {
    // One rectifier whose pre-activation sits H/2 from zero.
    let net = Network::from_params(&[1, 1, 1], OutputActivation::Identity, vec![1.0, 0.5 * H, 1.0, 0.0]).unwrap();
    let x = Array2::from_elem((1, 1), 0.0);
    let loss = |n: &Network| n.forward(x.view()).unwrap().sum();
    let cache = net.forward_cached(x.view()).unwrap();
    let mut grad = vec![0.0; net.num_params()];
    net.backward(&cache, Array2::from_elem((1, 1), 1.0).view(), Some(&mut grad)).unwrap();
    let g = LossGrad { loss: loss(&net), grad };
    assert_eq!(max_rel_error(&net, &g, loss, |n| units(n, &x)), None);
}
