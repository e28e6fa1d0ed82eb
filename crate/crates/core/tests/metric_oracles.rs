//! Metrics against brute-force oracles written with plain index loops.

use metaems::baselines::{rbc_policy, RbcRuleTable};
use metaems::metrics::{
    annual_peak, avg_daily_peak, average_cost, electricity_cost, net_consumption_total, one_minus_load_factor,
    ramping, ScoreReport,
};
use metaems::seed::{Rng, SeedTree};
use metaems::simulator::{generate_trace, BuildingConfig, BuildingEnv, RewardConfig, ZoneTable};
use proptest::prelude::*;
use rand::Rng as _;

const TOL: f64 = 1e-9;

fn oracle_ramping(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for t in 1..x.len() {
        let d = x[t] - x[t - 1];
        s += if d < 0.0 { -d } else { d };
    }
    s
}

fn oracle_peak(x: &[f64], from: usize, to: usize) -> f64 {
    let mut m = x[from];
    for v in &x[from + 1..to] {
        if *v > m {
            m = *v;
        }
    }
    m
}

fn oracle_load_factor(x: &[f64]) -> f64 {
    let months = x.len() / 720;
    let mut acc = 0.0;
    for m in 0..months {
        let mut sum = 0.0;
        for v in &x[m * 720..(m + 1) * 720] {
            sum += v;
        }
        let peak = oracle_peak(x, m * 720, (m + 1) * 720);
        acc += if peak > 0.0 { 1.0 - (sum / 720.0) / peak } else { 0.0 };
    }
    acc / months as f64
}

fn oracle_daily_peak(x: &[f64]) -> f64 {
    let days = x.len() / 24;
    let mut acc = 0.0;
    for d in 0..days {
        acc += oracle_peak(x, d * 24, d * 24 + 24);
    }
    acc / days as f64
}

fn oracle_net(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        if *v > 0.0 {
            s += v;
        }
    }
    s
}

fn oracle_cost(x: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for t in 0..x.len() {
        if x[t] > 0.0 {
            s += p[t] * x[t];
        }
    }
    s
}

/// Length of one or more months plus ragged tails; mixed-sign values with
/// occasional flat and all-negative stretches.
fn random_series(rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let len = 720 * rng.random_range(1..4) + rng.random_range(0..700);
    let offset = rng.random_range(-5.0..20.0);
    let mut x: Vec<f64> = (0..len).map(|_| offset + rng.random_range(-10.0..10.0)).collect();
    if rng.random_bool(0.3) {
        let start = rng.random_range(0..len / 2);
        for v in &mut x[start..start + 48] {
            *v = -3.0;
        }
    }
    let p = (0..len).map(|_| rng.random_range(5.0..35.0)).collect();
    (x, p)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn metrics_match_oracles_on_random_series() {
    let mut rng = SeedTree::new(99).named("oracles").rng();
    for i in 0..100 {
        let (x, p) = random_series(&mut rng);
        let checks = [
            ("ramping", ramping(&x).unwrap(), oracle_ramping(&x)),
            ("1-load factor", one_minus_load_factor(&x).unwrap(), oracle_load_factor(&x)),
            ("daily peak", avg_daily_peak(&x).unwrap(), oracle_daily_peak(&x)),
            ("annual peak", annual_peak(&x).unwrap(), oracle_peak(&x, 0, x.len())),
            ("net consumption", net_consumption_total(&x).unwrap(), oracle_net(&x)),
            ("cost", electricity_cost(&x, &p).unwrap(), oracle_cost(&x, &p)),
        ];
        for (name, got, want) in checks {
            assert!(close(got, want), "series {i} {name}: {got} vs {want}");
        }

        // Average cost over a few buildings against a second random reference.
        let (y, _) = random_series(&mut rng);
        let y: Vec<f64> = y.iter().cycle().take(x.len()).map(|v| v.abs() + 0.1).collect();
        let got = average_cost(&[(&x, &p, &y), (&y, &p, &y)]).unwrap();
        let want = (100.0 * oracle_cost(&x, &p) / oracle_cost(&y, &p) + 100.0) / 2.0;
        assert!(close(got, want), "series {i} average cost: {got} vs {want}");
    }
}

fn rbc_series(zone: u8, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let cfg = BuildingConfig::default();
    let trace = generate_trace(ZoneTable::builtin().zone(zone).unwrap(), 720, 1.0, 1.0, &mut SeedTree::new(seed).rng())
        .unwrap();
    let mut env = BuildingEnv::new(cfg.clone(), RewardConfig::default(), trace).unwrap();
    let table = RbcRuleTable::default();
    let (mut e, mut p) = (Vec::new(), Vec::new());
    while !env.is_done() {
        let a = rbc_policy(env.hour(), &table, env.state().indoor_temp_c, &cfg);
        let tr = env.step(a).unwrap();
        e.push(tr.net_consumption_e);
        p.push(tr.price);
    }
    (e, p)
}

#[test]
fn rbc_against_itself_is_exactly_one_hundred() {
    for zone in 1..=4 {
        let (e, p) = rbc_series(zone, zone as u64);
        let r = ScoreReport::compute(&e, &p).unwrap();
        let n = r.normalize(&r).unwrap();
        for v in n.values() {
            assert_eq!(v, 1.0);
            assert_eq!(format!("{:.2}", 100.0 * v), "100.00");
        }
        assert_eq!(average_cost(&[(&e, &p, &e)]).unwrap(), 100.0);
    }
}

fn series_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..3).prop_flat_map(|months| {
        let n = 720 * months;
        (prop::collection::vec(-20.0f64..40.0, n), prop::collection::vec(1.0f64..40.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_the_series_scales_extensive_metrics(
        (x, p) in series_strategy(),
        k in 0.1f64..10.0,
    ) {
        let a = ScoreReport::compute(&x, &p).unwrap();
        let y: Vec<f64> = x.iter().map(|v| k * v).collect();
        let b = ScoreReport::compute(&y, &p).unwrap();
        for (i, (u, v)) in a.values().iter().zip(b.values()).enumerate() {
            // 1 - load factor is a ratio and does not move.
            let want = if i == 1 { *u } else { k * u };
            prop_assert!(close(v, want), "{}: {} vs {}", ScoreReport::NAMES[i], v, want);
        }
    }

    #[test]
    fn permuting_days_within_a_month_changes_nothing_but_ramping(
        (x, p) in series_strategy(),
        seed in any::<u64>(),
    ) {
        let mut rng = SeedTree::new(seed).rng();
        let days = x.len() / 24;
        let mut order: Vec<usize> = (0..days).collect();
        // Shuffle within each 30-day month only.
        for m in order.chunks_mut(30) {
            for i in (1..m.len()).rev() {
                m.swap(i, rng.random_range(0..=i));
            }
        }
        let pick = |s: &[f64]| -> Vec<f64> { order.iter().flat_map(|d| s[d * 24..d * 24 + 24].to_vec()).collect() };
        let (a, b) = (ScoreReport::compute(&x, &p).unwrap(), ScoreReport::compute(&pick(&x), &pick(&p)).unwrap());
        for i in 1..6 {
            prop_assert!(close(a.values()[i], b.values()[i]), "{}", ScoreReport::NAMES[i]);
        }
    }
}
