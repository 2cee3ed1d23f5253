//! Monte Carlo campaigns over sweeps of family and loop parameters.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::closed_loop::{
    self, fmt_num, write_file, Classifier, SimParams, TrajectoryMeta, Verdict, GENERATOR_ID,
};
use crate::error::{Error, Result};
use crate::system_functions::FamilySpec;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Odd constant of the seed stream, `2^64 / φ`.
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    pub theta0: f64,
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub parameter: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilySpec,
    pub prior: Prior,
    #[serde(default)]
    pub y0: f64,
    pub horizon: usize,
    pub trials: usize,
    pub base_seed: u64,
    #[serde(default = "default_power_threshold")]
    pub power_threshold: f64,
    #[serde(default = "default_trend_factor")]
    pub trend_factor: f64,
    #[serde(default = "default_overflow_cap")]
    pub overflow_cap: f64,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default = "default_max_trajectories")]
    pub max_trajectories: u64,
    /// Full trajectories kept per cell, from trial 0 upward.
    #[serde(default)]
    pub sample_trajectories: usize,
}

fn default_power_threshold() -> f64 {
    20.0
}
fn default_trend_factor() -> f64 {
    2.0
}
fn default_overflow_cap() -> f64 {
    closed_loop::DEFAULT_OVERFLOW_CAP
}
fn default_max_trajectories() -> u64 {
    10_000_000
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::domain("trials must be >= 1"));
        }
        if self.horizon < 10 {
            return Err(Error::domain(format!("horizon must be >= 10, got {}", self.horizon)));
        }
        if !(self.prior.p0 > 0.0) || !self.prior.theta0.is_finite() {
            return Err(Error::domain("prior needs finite theta0 and p0 > 0"));
        }
        Classifier::new(self.power_threshold, self.trend_factor)?;
        if !(self.overflow_cap > 0.0) || !self.overflow_cap.is_finite() {
            return Err(Error::domain("overflow_cap must be finite and > 0"));
        }
        self.family.build()?;
        for axis in &self.sweep {
            if axis.values.is_empty() {
                return Err(Error::domain(format!("sweep over '{}' has no values", axis.parameter)));
            }
        }
        Ok(())
    }

    fn classifier(&self) -> Classifier {
        Classifier {
            power_threshold: self.power_threshold,
            trend_factor: self.trend_factor,
        }
    }

    /// Resolved single-cell configurations in sweep order (first axis outermost).
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut base = self.clone();
        base.sweep.clear();
        let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
        for axis in &self.sweep {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |v| {
                        let mut next = prefix.clone();
                        next.push((axis.parameter.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .enumerate()
            .map(|(index, overrides)| {
                let mut doc = serde_json::to_value(&base)?;
                for (name, value) in &overrides {
                    apply_override(&mut doc, name, value.clone())?;
                }
                let config: ExperimentConfig = serde_json::from_value(doc)
                    .map_err(|e| Error::domain(format!("sweep values {overrides:?} do not fit the configuration: {e}")))?;
                config.validate()?;
                let seed_key = cell_key(&config)?;
                Ok(Cell {
                    index,
                    overrides,
                    config,
                    seed_key,
                })
            })
            .collect()
    }
}

fn apply_override(doc: &mut Value, name: &str, value: Value) -> Result<()> {
    let root = doc.as_object_mut().expect("config serializes to an object");
    match name {
        "sweep" | "family" | "prior" | "kind" => Err(Error::domain(format!("'{name}' cannot be swept"))),
        "theta0" | "p0" => {
            root["prior"][name] = value;
            Ok(())
        }
        _ if root.contains_key(name) => {
            root.insert(name.to_owned(), value);
            Ok(())
        }
        _ => {
            let family = root["family"].as_object_mut().expect("family serializes to an object");
            let key = if name == "b" && !family.contains_key("b") { "p" } else { name };
            if family.contains_key(key) {
                family.insert(key.to_owned(), value);
                Ok(())
            } else {
                Err(Error::domain(format!("unknown sweep parameter '{name}'")))
            }
        }
    }
}

/// Hash of everything that shapes a trajectory, so seeds follow cell content
/// rather than cell position.
fn cell_key(cfg: &ExperimentConfig) -> Result<u64> {
    let canonical = serde_json::to_string(&serde_json::json!({
        "family": cfg.family,
        "prior": cfg.prior,
        "y0": cfg.y0,
        "horizon": cfg.horizon,
        "overflow_cap": cfg.overflow_cap,
    }))?;
    let mut hasher = Sha256::new();
    hasher.update(cfg.base_seed.to_le_bytes());
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    Ok(u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes")))
}

/// SplitMix64 finalizer, a bijection on `u64`.
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of `trial` in the cell with key `cell_key`: the `trial + 1`-th output
/// of a SplitMix64 stream started at `cell_key`.
pub fn trial_seed(cell_key: u64, trial: u64) -> u64 {
    splitmix64_mix(cell_key.wrapping_add((trial + 1).wrapping_mul(GOLDEN)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub overrides: Vec<(String, Value)>,
    pub config: ExperimentConfig,
    pub seed_key: u64,
}

impl Cell {
    pub fn sim_params(&self, trial: usize) -> Result<SimParams> {
        let cfg = &self.config;
        Ok(SimParams {
            f: cfg.family.build()?,
            theta0: cfg.prior.theta0,
            p0: cfg.prior.p0,
            y0: cfg.y0,
            horizon: cfg.horizon,
            seed: trial_seed(self.seed_key, trial as u64),
            overflow_cap: cfg.overflow_cap,
            classifier: cfg.classifier(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub trial: usize,
    pub meta: TrajectoryMeta,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub valid: bool,
    pub n_stabilized: usize,
    pub n_exploded: usize,
    pub n_inconclusive: usize,
    /// Final `avg_power` quantiles over non-exploded trials.
    pub avg_power_p10: Option<f64>,
    pub avg_power_p50: Option<f64>,
    pub avg_power_p90: Option<f64>,
    /// Median of `avg_power[H/10]` over non-exploded trials.
    pub avg_power_p50_tenth: Option<f64>,
    pub median_explosion_time: Option<f64>,
    /// Mean of `r_H / H` over non-exploded trials.
    pub mean_information_rate: Option<f64>,
    pub samples: Vec<TrajectorySample>,
}

impl CellSummary {
    pub fn trials(&self) -> usize {
        self.n_stabilized + self.n_exploded + self.n_inconclusive
    }

    fn skipped(cell: Cell) -> Self {
        Self {
            cell,
            valid: false,
            n_stabilized: 0,
            n_exploded: 0,
            n_inconclusive: 0,
            avg_power_p10: None,
            avg_power_p50: None,
            avg_power_p90: None,
            avg_power_p50_tenth: None,
            median_explosion_time: None,
            mean_information_rate: None,
            samples: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub generator: String,
    pub version: String,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl CampaignSummary {
    pub fn all_valid(&self) -> bool {
        self.cells.iter().all(|c| c.valid)
    }
}

#[derive(Debug, Clone)]
struct Outcome {
    verdict: Verdict,
    final_avg: f64,
    tenth_avg: f64,
    info_rate: f64,
    sample: Option<TrajectorySample>,
}

fn run_trial(cell: &Cell, trial: usize) -> Result<Outcome> {
    let params = cell.sim_params(trial)?;
    let traj = closed_loop::run(&params)?;
    let h = traj.avg_power.len() - 1;
    let sample = (trial < cell.config.sample_trajectories).then(|| TrajectorySample {
        trial,
        meta: TrajectoryMeta::new(&params, &traj),
        csv: closed_loop::trajectory_csv(&traj),
    });
    Ok(Outcome {
        verdict: traj.verdict,
        final_avg: traj.final_avg_power(),
        tenth_avg: traj.avg_power[(h / 10).max(1).min(h)],
        info_rate: traj.information_rate(),
        sample,
    })
}

/// Linear interpolation between order statistics (`(n-1)q` rule).
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn summarize_cell(cell: Cell, outcomes: Vec<Outcome>) -> CellSummary {
    let mut summary = CellSummary::skipped(cell);
    summary.valid = true;
    let mut finals = Vec::new();
    let mut tenths = Vec::new();
    let mut explosions = Vec::new();
    let mut info = Vec::new();
    for o in outcomes {
        match o.verdict {
            Verdict::Stabilized => summary.n_stabilized += 1,
            Verdict::Inconclusive => summary.n_inconclusive += 1,
            Verdict::Exploded { at } => {
                summary.n_exploded += 1;
                explosions.push(at as f64);
            }
        }
        if !matches!(o.verdict, Verdict::Exploded { .. }) {
            finals.push(o.final_avg);
            tenths.push(o.tenth_avg);
            info.push(o.info_rate);
        }
        summary.samples.extend(o.sample);
    }
    let finals = sorted(finals);
    summary.avg_power_p10 = quantile(&finals, 0.1);
    summary.avg_power_p50 = quantile(&finals, 0.5);
    summary.avg_power_p90 = quantile(&finals, 0.9);
    summary.avg_power_p50_tenth = quantile(&sorted(tenths), 0.5);
    summary.median_explosion_time = quantile(&sorted(explosions), 0.5);
    summary.mean_information_rate = (!info.is_empty()).then(|| info.iter().sum::<f64>() / info.len() as f64);
    summary
}

/// Runs every cell. `workers = None` uses rayon's default pool size.
///
/// When the campaign would exceed `max_trajectories`, cells that fit are
/// still run and the rest are flagged invalid; the result comes back inside
/// [`Error::ResourceCeiling`].
pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<CampaignSummary> {
    let started = Instant::now();
    cfg.validate()?;
    let cells = cfg.cells()?;
    let requested: u64 = cells.iter().map(|c| c.config.trials as u64).sum();

    let mut runnable = Vec::new();
    let mut skipped = Vec::new();
    let mut budget = cfg.max_trajectories;
    for cell in cells {
        let trials = cell.config.trials as u64;
        if trials <= budget {
            budget -= trials;
            runnable.push(cell);
        } else {
            budget = 0;
            skipped.push(cell);
        }
    }

    let jobs: Vec<(usize, usize)> = runnable
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.config.trials).map(move |t| (ci, t)))
        .collect();
    let execute = || -> Result<Vec<Outcome>> { jobs.par_iter().map(|&(ci, t)| run_trial(&runnable[ci], t)).collect() };
    let outcomes = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?
            .install(execute)?,
        None => execute()?,
    };

    let mut outcomes = outcomes.into_iter();
    let mut summaries: Vec<CellSummary> = runnable
        .into_iter()
        .map(|cell| {
            let chunk: Vec<Outcome> = outcomes.by_ref().take(cell.config.trials).collect();
            summarize_cell(cell, chunk)
        })
        .collect();
    let refused = !skipped.is_empty();
    summaries.extend(skipped.into_iter().map(CellSummary::skipped));
    summaries.sort_by_key(|s| s.cell.index);

    let summary = CampaignSummary {
        config: cfg.clone(),
        cells: summaries,
        generator: GENERATOR_ID.to_owned(),
        version: VERSION.to_owned(),
        wall_clock: started.elapsed(),
    };
    if refused {
        return Err(Error::ResourceCeiling {
            requested,
            limit: cfg.max_trajectories,
            partial: Box::new(summary),
        });
    }
    Ok(summary)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn json_scalar(v: &Value) -> String {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => fmt_num(x),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn family_fields(family: &FamilySpec) -> Map<String, Value> {
    match serde_json::to_value(family) {
        Ok(Value::Object(map)) => map,
        _ => Map::new(),
    }
}

/// `summary.csv`: one row per cell, config scalars then counters then quantiles.
pub fn summary_csv(summary: &CampaignSummary) -> String {
    let family_keys: Vec<String> = summary
        .cells
        .first()
        .map(|c| family_fields(&c.cell.config.family).keys().filter(|k| *k != "kind").cloned().collect())
        .unwrap_or_default();
    let mut header = vec!["cell".to_owned(), "family".to_owned()];
    header.extend(family_keys.iter().cloned());
    header.extend(
        [
            "theta0",
            "p0",
            "y0",
            "horizon",
            "trials",
            "base_seed",
            "power_threshold",
            "trend_factor",
            "overflow_cap",
            "valid",
            "n_stabilized",
            "n_exploded",
            "n_inconclusive",
            "avg_power_p10",
            "avg_power_p50",
            "avg_power_p90",
            "avg_power_p50_tenth",
            "median_explosion_time",
            "mean_r_over_h",
        ]
        .map(String::from),
    );
    let mut out = header.join(",");
    out.push('\n');
    for s in &summary.cells {
        let cfg = &s.cell.config;
        let fields = family_fields(&cfg.family);
        let mut row = vec![s.cell.index.to_string(), cfg.family.kind().to_owned()];
        row.extend(family_keys.iter().map(|k| fields.get(k).map(json_scalar).unwrap_or_default()));
        row.extend([
            fmt_num(cfg.prior.theta0),
            fmt_num(cfg.prior.p0),
            fmt_num(cfg.y0),
            cfg.horizon.to_string(),
            cfg.trials.to_string(),
            cfg.base_seed.to_string(),
            fmt_num(cfg.power_threshold),
            fmt_num(cfg.trend_factor),
            fmt_num(cfg.overflow_cap),
            s.valid.to_string(),
            s.n_stabilized.to_string(),
            s.n_exploded.to_string(),
            s.n_inconclusive.to_string(),
            opt(s.avg_power_p10),
            opt(s.avg_power_p50),
            opt(s.avg_power_p90),
            opt(s.avg_power_p50_tenth),
            opt(s.median_explosion_time),
            opt(s.mean_information_rate),
        ]);
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes `summary.csv`, `config.echo.json` and `samples/` under `out_dir`.
pub fn summarize_to_files(summary: &CampaignSummary, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("summary.csv"), summary_csv(summary).as_bytes())?;
    let echo = serde_json::to_string_pretty(&summary.config)? + "\n";
    write_file(&out_dir.join("config.echo.json"), echo.as_bytes())?;
    let samples: Vec<_> = summary
        .cells
        .iter()
        .flat_map(|c| c.samples.iter().map(move |s| (c.cell.index, s)))
        .collect();
    if !samples.is_empty() {
        let dir = out_dir.join("samples");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (cell, s) in samples {
            let path = dir.join(format!("cell{cell}_trial{}.csv", s.trial));
            write_file(&path, s.csv.as_bytes())?;
            let meta = serde_json::to_string_pretty(&s.meta)? + "\n";
            write_file(&closed_loop::meta_path(&path), meta.as_bytes())?;
        }
    }
    Ok(())
}

/// `S_T = Σ_{t=2}^{T} 2∫_{c ln t}^∞ e^{-x²/2} dx` for `T = 2..=t_max`.
pub fn gaussian_tail_partial_sums(c: f64, t_max: usize) -> Result<Vec<f64>> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain(format!("c must be finite and > 0, got {c}")));
    }
    if t_max < 2 {
        return Err(Error::domain(format!("t_max must be >= 2, got {t_max}")));
    }
    let scale = (2.0 * std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    Ok((2..=t_max)
        .map(|t| {
            total += scale * libm::erfc(c * (t as f64).ln() / std::f64::consts::SQRT_2);
            total
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn config(family: FamilySpec, trials: usize, horizon: usize) -> ExperimentConfig {
        ExperimentConfig {
            family,
            prior: Prior { theta0: 0.0, p0: 1.0 },
            y0: 0.0,
            horizon,
            trials,
            base_seed: 2024,
            power_threshold: 20.0,
            trend_factor: 2.0,
            overflow_cap: 1e100,
            sweep: Vec::new(),
            max_trajectories: 10_000_000,
            sample_trajectories: 0,
        }
    }

    /// `2∫_a^{a+40} e^{-x²/2} dx` by composite Simpson.
    fn tail_by_quadrature(a: f64) -> f64 {
        let n = 20_000;
        let h = 40.0 / n as f64;
        let g = |x: f64| (-x * x / 2.0).exp();
        let mut s = g(a) + g(a + 40.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(a + i as f64 * h);
        }
        2.0 * s * h / 3.0
    }

    #[test]
    fn tail_sums_match_quadrature() {
        let sums = gaussian_tail_partial_sums(2.0, 10).unwrap();
        let mut oracle = 0.0;
        for (i, t) in (2..=10).enumerate() {
            oracle += tail_by_quadrature(2.0 * (t as f64).ln());
            assert!((sums[i] - oracle).abs() < 1e-10 * oracle.max(1e-300), "t = {t}");
        }
        assert!(sums.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn tail_sums_are_cauchy() {
        let sums = gaussian_tail_partial_sums(2.0, 10_000).unwrap();
        assert_eq!(sums.len(), 9999);
        assert!((sums[9998] - sums[998]).abs() < 1e-6);
        let large = gaussian_tail_partial_sums(10.0, 10_000).unwrap();
        assert!(large.iter().all(|&s| s < 1e-10));
        assert!(gaussian_tail_partial_sums(0.0, 10).is_err());
        assert!(gaussian_tail_partial_sums(1.0, 1).is_err());
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[], 0.5), None);
        assert_eq!(quantile(&[3.0], 0.9), Some(3.0));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), Some(2.5));
        assert_eq!(quantile(&[0.0, 10.0], 0.1), Some(1.0));
    }

    #[test]
    fn seeds_are_injective() {
        let mut seen = HashSet::new();
        for cell in 0..10u64 {
            let key = splitmix64_mix(cell.wrapping_mul(0xD1B5_4A32_D192_ED03));
            for t in 0..100_000 {
                assert!(seen.insert(trial_seed(key, t)));
            }
        }
    }

    #[test]
    fn zero_family_campaign() {
        let summary = run_experiment(&config(FamilySpec::Zero, 100, 10_000), Some(2)).unwrap();
        let cell = &summary.cells[0];
        assert_eq!(cell.n_stabilized, 100);
        assert_eq!(cell.trials(), 100);
        let mid = cell.avg_power_p50.unwrap();
        assert!((0.9..=1.1).contains(&mid));
    }

    #[test]
    fn sweep_expands_in_order() {
        let mut cfg = config(
            FamilySpec::Islands { p: 3.5, scale: 1.0, epsilon: 0.05, period: 20.0, k1: 1.0, k2: 1.0 },
            3,
            50,
        );
        cfg.sweep = vec![
            SweepAxis { parameter: "b".into(), values: vec![2.into(), 3.into(), 3.5.into()] },
            SweepAxis { parameter: "horizon".into(), values: vec![20.into(), 40.into()] },
        ];
        let cells = cfg.cells().unwrap();
        assert_eq!(cells.len(), 6);
        let FamilySpec::Islands { p, .. } = cells[2].config.family else { panic!() };
        assert_eq!(p, 3.0);
        assert_eq!(cells[2].config.horizon, 20);
        assert_eq!(cells[3].config.horizon, 40);
        let summary = run_experiment(&cfg, None).unwrap();
        let csv = summary_csv(&summary);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().next().unwrap().starts_with("cell,family,"));
    }

    #[test]
    fn bad_sweeps_are_rejected() {
        let mut cfg = config(FamilySpec::PurePower { c: 1.0, p: 2.0 }, 3, 50);
        cfg.sweep = vec![SweepAxis { parameter: "epsilon".into(), values: vec![0.1.into()] }];
        assert!(cfg.cells().is_err());
        cfg.sweep = vec![SweepAxis { parameter: "horizon".into(), values: vec!["long".into()] }];
        assert!(cfg.cells().is_err());
        cfg.sweep = vec![SweepAxis { parameter: "horizon".into(), values: vec![5.into()] }];
        assert!(cfg.cells().is_err());
    }

    #[test]
    fn permuting_the_sweep_permutes_rows() {
        let mut cfg = config(FamilySpec::PurePower { c: 1.0, p: 2.0 }, 5, 200);
        cfg.sweep = vec![SweepAxis { parameter: "c".into(), values: vec![0.5.into(), 1.0.into(), 1.5.into()] }];
        let forward = run_experiment(&cfg, Some(3)).unwrap();
        cfg.sweep[0].values.reverse();
        let backward = run_experiment(&cfg, Some(1)).unwrap();
        for (i, j) in [(0, 2), (1, 1), (2, 0)] {
            let (a, b) = (&forward.cells[i], &backward.cells[j]);
            assert_eq!(a.cell.seed_key, b.cell.seed_key);
            assert_eq!(a.avg_power_p50, b.avg_power_p50);
            assert_eq!(a.n_stabilized, b.n_stabilized);
        }
    }

    #[test]
    fn resource_ceiling_returns_partial_results() {
        let mut cfg = config(FamilySpec::Zero, 10, 20);
        cfg.sweep = vec![SweepAxis { parameter: "y0".into(), values: vec![0.0.into(), 1.0.into()] }];
        cfg.max_trajectories = 15;
        let Err(Error::ResourceCeiling { requested, limit, partial }) = run_experiment(&cfg, None) else {
            panic!("expected a refusal")
        };
        assert_eq!((requested, limit), (20, 15));
        assert!(partial.cells[0].valid);
        assert!(!partial.cells[1].valid);
        assert!(!partial.all_valid());
    }

    #[test]
    fn files_are_byte_stable() {
        let mut cfg = config(FamilySpec::PurePower { c: 1.0, p: 2.0 }, 4, 100);
        cfg.sample_trajectories = 1;
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        summarize_to_files(&run_experiment(&cfg, Some(2)).unwrap(), &a).unwrap();
        summarize_to_files(&run_experiment(&cfg, Some(4)).unwrap(), &b).unwrap();
        for name in ["summary.csv", "config.echo.json", "samples/cell0_trial0.csv", "samples/cell0_trial0.csv.meta.json"] {
            assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
        }
        let echo = fs::read_to_string(a.join("config.echo.json")).unwrap();
        assert_eq!(ExperimentConfig::from_json(&echo).unwrap(), cfg);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let text = r#"{"family":{"kind":"zero"},"prior":{"theta0":0,"p0":1},"horizon":100,"trials":1,"base_seed":1,"colour":3}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
        let ok = text.replace(r#","colour":3"#, "");
        let cfg = ExperimentConfig::from_json(&ok).unwrap();
        assert_eq!(cfg.power_threshold, 20.0);
        assert_eq!(cfg.max_trajectories, 10_000_000);
        let short = ok.replace("\"horizon\":100", "\"horizon\":5");
        assert!(ExperimentConfig::from_json(&short).is_err());
    }
}
