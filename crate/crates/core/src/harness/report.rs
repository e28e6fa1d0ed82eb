//! CSV and text reports of a run.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::{meta_checkpoint_name, save_checkpoint, HarnessError, Method, RunRecord, SummaryRow};
use crate::meta::META_LOG_HEADER;
use crate::metrics::{daily_totals, district_series, ScoreReport};

pub const SUMMARY_CSV_HEADER: [&str; 8] = [
    "zone",
    "method",
    "episode",
    "avg_cost_mean",
    "avg_cost_std",
    "total_reward_mean",
    "total_reward_std",
    "n_seeds",
];

fn f(v: f64) -> String {
    format!("{v:.6}")
}

/// Shortest text that parses back to the same value, so `report` can
/// re-render a run exactly.
fn exact(v: f64) -> String {
    format!("{v:?}")
}

/// Normalised metrics averaged over repeat seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    /// Zone id, or `all` for the mean over zones.
    pub zone: String,
    pub method: Method,
    pub episode: usize,
    /// `district` (metrics of the summed series) or `building_mean`.
    pub aggregation: &'static str,
    pub values: ScoreReport,
}

pub fn breakdown(record: &RunRecord) -> Vec<BreakdownRow> {
    let mut rows = Vec::new();
    for m in record.methods() {
        for ep in 1..=record.config.test_episodes {
            for aggregation in ["district", "building_mean"] {
                let pick = |zone: Option<u8>| -> Vec<ScoreReport> {
                    record
                        .scores
                        .iter()
                        .filter(|s| zone.is_none_or(|z| s.zone == z))
                        .flat_map(|s| s.episodes.iter())
                        .filter(|e| e.method == m && e.episode == ep)
                        .map(|e| if aggregation == "district" { e.district_normalized } else { e.building_mean_normalized })
                        .collect()
                };
                let zones = record.config.zones.iter().map(|z| (z.to_string(), Some(*z)));
                for (name, zone) in zones.chain(std::iter::once(("all".to_string(), None))) {
                    if let Some(values) = ScoreReport::mean(&pick(zone)) {
                        rows.push(BreakdownRow { zone: name, method: m, episode: ep, aggregation, values });
                    }
                }
            }
        }
    }
    rows
}

fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.zone.to_string(),
            r.method.name().to_string(),
            r.episode.to_string(),
            exact(r.avg_cost_mean),
            exact(r.avg_cost_std),
            exact(r.total_reward_mean),
            exact(r.total_reward_std),
            r.n_seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(SUMMARY_CSV_HEADER) {
        return Err(HarnessError::Config(format!("{}: not a summary.csv file", path.display())));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<(u8, String, usize, f64, f64, f64, f64, usize)>() {
        let (zone, method, episode, cm, cs, rm, rs, n) = rec?;
        let method = Method::parse(&method)
            .ok_or_else(|| HarnessError::Config(format!("{}: unknown method `{method}`", path.display())))?;
        rows.push(SummaryRow {
            zone,
            method,
            episode,
            avg_cost_mean: cm,
            avg_cost_std: cs,
            total_reward_mean: rm,
            total_reward_std: rs,
            n_seeds: n,
        });
    }
    Ok(rows)
}

pub fn read_breakdown_csv(path: &Path) -> Result<Vec<BreakdownRow>, HarnessError> {
    let bad = |m: String| HarnessError::Config(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 4 + ScoreReport::NAMES.len() {
            return Err(bad(format!("expected {} columns, got {}", 4 + ScoreReport::NAMES.len(), rec.len())));
        }
        let method = Method::parse(&rec[1]).ok_or_else(|| bad(format!("unknown method `{}`", &rec[1])))?;
        let episode = rec[2].parse().map_err(|_| bad(format!("bad episode `{}`", &rec[2])))?;
        let aggregation = match &rec[3] {
            "district" => "district",
            "building_mean" => "building_mean",
            other => return Err(bad(format!("unknown aggregation `{other}`"))),
        };
        let mut v = [0.0; 6];
        for (k, x) in v.iter_mut().enumerate() {
            *x = rec[4 + k].parse().map_err(|_| bad(format!("bad number `{}`", &rec[4 + k])))?;
        }
        rows.push(BreakdownRow { zone: rec[0].to_string(), method, episode, aggregation, values: ScoreReport::from_values(v) });
    }
    Ok(rows)
}

fn write_breakdown_csv(rows: &[BreakdownRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["zone", "method", "episode", "aggregation"];
    header.extend(ScoreReport::NAMES);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.zone.clone(), r.method.name().into(), r.episode.to_string(), r.aggregation.into()];
        rec.extend(r.values.values().iter().map(|v| exact(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_buildings_csv(record: &RunRecord, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["zone", "seed", "method", "episode", "building"].map(String::from).to_vec();
    header.extend(ScoreReport::NAMES.iter().map(|n| n.to_string()));
    header.extend(ScoreReport::NAMES.iter().map(|n| format!("normalized_{n}")));
    header.extend(["cost_pct".to_string(), "total_reward".to_string()]);
    w.write_record(&header)?;
    for s in &record.scores {
        for e in &s.episodes {
            let lead = |b: String| vec![s.zone.to_string(), s.repeat.to_string(), e.method.name().into(), e.episode.to_string(), b];
            for (i, b) in e.buildings.iter().enumerate() {
                let mut rec = lead(i.to_string());
                rec.extend(b.raw.values().iter().chain(b.normalized.values().iter()).map(|v| f(*v)));
                rec.extend([f(b.cost_pct), f(b.total_reward)]);
                w.write_record(&rec)?;
            }
            let mut rec = lead("district".into());
            rec.extend(e.district.values().iter().chain(e.district_normalized.values().iter()).map(|v| f(*v)));
            let total: f64 = e.buildings.iter().map(|b| b.total_reward).sum();
            rec.extend([f(100.0 * e.district_normalized.cost), f(total)]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready learning curves with one column per method, in report order.
///
/// `accumulated_reward` rows hold, per zone and episode `k`, the running
/// mean over episodes `1..=k` of the per-building episode reward (averaged
/// over buildings and seeds). `daily_net_consumption` rows hold the
/// district's daily net consumption, averaged over seeds.
pub fn emit_learning_curves<W: Write>(record: &RunRecord, out: W) -> Result<(), HarnessError> {
    let methods = record.methods();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["kind".to_string(), "zone".into(), "episode".into(), "day".into()];
    header.extend(methods.iter().map(|m| m.name().to_string()));
    w.write_record(&header)?;
    let summary = record.summary();
    for &zone in &record.config.zones {
        let mut running = vec![0.0; methods.len()];
        for ep in 1..=record.config.test_episodes {
            let mut rec = vec!["accumulated_reward".to_string(), zone.to_string(), ep.to_string(), String::new()];
            for (k, m) in methods.iter().enumerate() {
                let r = summary.iter().find(|r| r.zone == zone && r.method == *m && r.episode == ep);
                running[k] += r.map_or(f64::NAN, |r| r.total_reward_mean);
                rec.push(f(running[k] / ep as f64));
            }
            w.write_record(&rec)?;
        }
        for ep in 1..=record.config.test_episodes {
            let mut per_method: Vec<Vec<f64>> = Vec::with_capacity(methods.len());
            for m in &methods {
                let mut acc: Vec<f64> = Vec::new();
                let mut n = 0.0;
                for job in record.jobs.iter().filter(|j| j.zone == zone) {
                    if let Some(recs) = job.records(*m) {
                        let series: Vec<&[f64]> = recs.iter().map(|b| b[ep - 1].net_consumption.as_slice()).collect();
                        let days = daily_totals(&district_series(&series)?);
                        if acc.is_empty() {
                            acc = vec![0.0; days.len()];
                        }
                        acc.iter_mut().zip(&days).for_each(|(a, d)| *a += d);
                        n += 1.0;
                    }
                }
                per_method.push(acc.into_iter().map(|a| a / n).collect());
            }
            let n_days = record.config.episode_length / 24;
            for day in 0..n_days {
                let mut rec =
                    vec!["daily_net_consumption".to_string(), zone.to_string(), ep.to_string(), (day + 1).to_string()];
                rec.extend(per_method.iter().map(|s| s.get(day).map_or(String::new(), |v| f(*v))));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Human-readable tables: average cost per zone (first episode), then the
/// normalised district metrics over all zones with the improvement of
/// MetaEMS over the best other method where it beats all of them.
pub fn render_summary_text(summary: &[SummaryRow], breakdown: &[BreakdownRow]) -> String {
    let mut s = String::new();
    let mut zones: Vec<u8> = summary.iter().map(|r| r.zone).collect();
    zones.dedup();
    let mut methods: Vec<Method> = summary.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();

    writeln!(s, "Average cost, % of RBC, first episode (mean +/- std over seeds)").unwrap();
    write!(s, "{:<14}", "method").unwrap();
    for z in &zones {
        write!(s, "{:>20}", format!("zone {z}")).unwrap();
    }
    writeln!(s).unwrap();
    for m in &methods {
        write!(s, "{:<14}", m.name()).unwrap();
        for z in &zones {
            let cell = summary
                .iter()
                .find(|r| r.zone == *z && r.method == *m && r.episode == 1)
                .map_or("-".to_string(), |r| format!("{:.2} +/- {:.2}", r.avg_cost_mean, r.avg_cost_std));
            write!(s, "{cell:>20}").unwrap();
        }
        writeln!(s).unwrap();
    }

    let rows: Vec<&BreakdownRow> =
        breakdown.iter().filter(|r| r.zone == "all" && r.episode == 1 && r.aggregation == "district").collect();
    if rows.is_empty() {
        return s;
    }
    writeln!(s).unwrap();
    writeln!(s, "District metrics normalised by RBC, all zones, first episode").unwrap();
    write!(s, "{:<14}", "method").unwrap();
    for n in ScoreReport::NAMES {
        write!(s, "{n:>22}").unwrap();
    }
    writeln!(s).unwrap();
    for r in &rows {
        write!(s, "{:<14}", r.method.name()).unwrap();
        for v in r.values.values() {
            write!(s, "{:>22}", format!("{:.2}%", 100.0 * v)).unwrap();
        }
        writeln!(s).unwrap();
    }
    if let Some(cand) = rows.iter().find(|r| r.method == Method::MetaEms) {
        let others: Vec<&&BreakdownRow> = rows.iter().filter(|r| r.method != Method::MetaEms).collect();
        write!(s, "{:<14}", "improvement").unwrap();
        for k in 0..6 {
            let best = others.iter().map(|r| r.values.values()[k]).fold(f64::INFINITY, f64::min);
            let v = cand.values.values()[k];
            let cell = if v < best && best.is_finite() && best != 0.0 {
                format!("{:.2}%", 100.0 * (best - v) / best)
            } else {
                "-".to_string()
            };
            write!(s, "{cell:>22}").unwrap();
        }
        writeln!(s).unwrap();
    }
    s
}

/// Writes every report file, the resolved config and the checkpoints into `dir`.
pub fn write_reports(record: &RunRecord, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.resolved.toml"), record.config.to_toml())?;
    std::fs::write(
        dir.join("run_info.toml"),
        format!(
            "config_hash = \"{}\"\nversion = \"{}\"\nwall_clock_seconds = {:.3}\n",
            record.config_hash, record.version, record.wall_clock_s
        ),
    )?;

    let ckpt = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt)?;
    for job in &record.jobs {
        if let Some(m) = &job.meta {
            save_checkpoint(&ckpt.join(meta_checkpoint_name(Method::MetaEms, job.zone, job.repeat)), m)?;
        }
        if let Some(m) = &job.maml_meta {
            save_checkpoint(&ckpt.join(meta_checkpoint_name(Method::Maml, job.zone, job.repeat)), m)?;
        }
    }

    if record.jobs.iter().any(|j| j.meta_report.is_some()) {
        let mut w = csv::Writer::from_path(dir.join("meta_log.csv"))?;
        let mut header = vec!["zone", "seed"];
        header.extend(META_LOG_HEADER);
        w.write_record(&header)?;
        for job in &record.jobs {
            for r in job.meta_report.iter().flat_map(|r| &r.log) {
                w.write_record([
                    job.zone.to_string(),
                    job.repeat.to_string(),
                    r.round.to_string(),
                    r.interval.to_string(),
                    r.building.to_string(),
                    f(r.critic_loss),
                    f(r.actor_loss),
                    f(r.meta_grad_norm_theta),
                    f(r.meta_grad_norm_phi),
                ])?;
            }
        }
        w.flush()?;
    }

    if record.scores.is_empty() {
        return Ok(());
    }
    let summary = record.summary();
    let breakdown = breakdown(record);
    write_summary_csv(&summary, &dir.join("summary.csv"))?;
    write_breakdown_csv(&breakdown, &dir.join("breakdown.csv"))?;
    write_buildings_csv(record, &dir.join("buildings.csv"))?;
    emit_learning_curves(record, std::fs::File::create(dir.join("curves.csv"))?)?;
    std::fs::write(dir.join("summary.txt"), render_summary_text(&summary, &breakdown))?;
    Ok(())
}
