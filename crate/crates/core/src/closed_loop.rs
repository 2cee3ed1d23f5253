//! The certainty-equivalence loop `y_{t+1} = θ f(y_t) + u_t + w_{t+1}` with
//! `u_t = -θ_t f(y_t)` and `θ_t` the least-squares estimate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ls_estimator::LsState;
use crate::system_functions::PiecewiseFunction;

/// Names the stream and the normal sampler; written into every output.
pub const GENERATOR_ID: &str = "chacha20+ziggurat";

pub const DEFAULT_OVERFLOW_CAP: f64 = 1e100;

/// Finite-horizon surrogate for "`(1/t)Σy_i²` stays bounded".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub power_threshold: f64,
    /// Largest tolerated ratio of `avg_power[H]` to `avg_power[H/10]`.
    pub trend_factor: f64,
}

impl Default for Classifier {
    fn default() -> Self {
        Self {
            power_threshold: 20.0,
            trend_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Stabilized,
    /// `at` is the first step whose output (or an intermediate) breached the cap.
    Exploded { at: usize },
    Inconclusive,
}

impl Classifier {
    pub fn new(power_threshold: f64, trend_factor: f64) -> Result<Self> {
        if !(power_threshold > 0.0) || !(trend_factor > 0.0) {
            return Err(Error::domain(format!(
                "classifier needs power_threshold > 0 and trend_factor > 0, got {power_threshold}, {trend_factor}"
            )));
        }
        Ok(Self {
            power_threshold,
            trend_factor,
        })
    }

    /// `avg_power[t] = (1/t)Σ_{i=1}^{t} y_i²`, index 0 unused.
    pub fn classify_series(&self, avg_power: &[f64], exploded_at: Option<usize>) -> Verdict {
        if let Some(at) = exploded_at {
            return Verdict::Exploded { at };
        }
        let horizon = avg_power.len().saturating_sub(1);
        if horizon == 0 {
            return Verdict::Inconclusive;
        }
        let last = avg_power[horizon];
        let early = avg_power[(horizon / 10).max(1)];
        if last <= self.power_threshold && last <= self.trend_factor * early {
            Verdict::Stabilized
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub f: PiecewiseFunction,
    pub theta0: f64,
    pub p0: f64,
    pub y0: f64,
    pub horizon: usize,
    pub seed: u64,
    pub overflow_cap: f64,
    pub classifier: Classifier,
}

impl SimParams {
    pub fn new(f: PiecewiseFunction, theta0: f64, p0: f64, horizon: usize, seed: u64) -> Self {
        Self {
            f,
            theta0,
            p0,
            y0: 0.0,
            horizon,
            seed,
            overflow_cap: DEFAULT_OVERFLOW_CAP,
            classifier: Classifier::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.theta0.is_finite() || !(self.p0 > 0.0) || !self.p0.is_finite() {
            return Err(Error::domain(format!("prior needs finite theta0 and p0 > 0, got ({}, {})", self.theta0, self.p0)));
        }
        if self.horizon == 0 {
            return Err(Error::domain("horizon must be >= 1"));
        }
        if !(self.overflow_cap > 0.0) || !self.overflow_cap.is_finite() {
            return Err(Error::domain(format!("overflow_cap must be finite and > 0, got {}", self.overflow_cap)));
        }
        if !self.y0.is_finite() || self.y0.abs() > self.overflow_cap {
            return Err(Error::domain(format!("y0 must be finite and below the cap, got {}", self.y0)));
        }
        Classifier::new(self.classifier.power_threshold, self.classifier.trend_factor)?;
        Ok(())
    }
}

/// Full record of one run. With `n` completed steps, `y`, `theta_hat`,
/// `theta_tilde` and `avg_power` have `n + 1` entries and the per-step series
/// (`phi`, `u`, `sigma_sq`, `r`, `noise`) have `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub theta_true: f64,
    pub y: Vec<f64>,
    pub phi: Vec<f64>,
    pub u: Vec<f64>,
    /// `w_{t+1}` used at step `t`.
    pub noise: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    /// `r_t` after step `t`.
    pub r: Vec<f64>,
    /// `r_{-1} = 1/P_0`.
    pub r_minus1: f64,
    pub theta_hat: Vec<f64>,
    pub theta_tilde: Vec<f64>,
    pub avg_power: Vec<f64>,
    pub max_abs_y: f64,
    /// `Σ (φ_i θ̃_i)² / (1 + φ_i² P_i)`.
    pub regret_sum: f64,
    pub exploded_at: Option<usize>,
    pub verdict: Verdict,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.phi.len()
    }

    /// `r_H / H` at the last completed step.
    pub fn information_rate(&self) -> f64 {
        match self.r.last() {
            Some(r) => r / self.r.len() as f64,
            None => 0.0,
        }
    }

    pub fn final_avg_power(&self) -> f64 {
        *self.avg_power.last().unwrap_or(&0.0)
    }
}

pub fn run(params: &SimParams) -> Result<Trajectory> {
    params.validate()?;
    let n = params.horizon;
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let theta: f64 = params.theta0 + params.p0.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let ln_cap = params.overflow_cap.ln();

    let mut traj = Trajectory {
        theta_true: theta,
        y: Vec::with_capacity(n + 1),
        phi: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        noise: Vec::with_capacity(n),
        sigma_sq: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
        r_minus1: 1.0 / params.p0,
        theta_hat: Vec::with_capacity(n + 1),
        theta_tilde: Vec::with_capacity(n + 1),
        avg_power: Vec::with_capacity(n + 1),
        max_abs_y: params.y0.abs(),
        regret_sum: 0.0,
        exploded_at: None,
        verdict: Verdict::Inconclusive,
    };
    let mut est = LsState::new(params.theta0, params.p0)?;
    let mut y = params.y0;
    let mut power_sum = 0.0;
    traj.y.push(y);
    traj.theta_hat.push(est.theta_hat);
    traj.theta_tilde.push(theta - est.theta_hat);
    traj.avg_power.push(0.0);

    for t in 0..n {
        let w: f64 = rng.sample(StandardNormal);
        let tilde = theta - est.theta_hat;
        let ln_phi = params.f.ln_abs(y);
        let breach = ln_phi > ln_cap
            || ln_phi + tilde.abs().ln() > ln_cap
            || ln_phi + est.theta_hat.abs().ln() > ln_cap;
        if breach || ln_phi.is_nan() {
            traj.exploded_at = Some(t + 1);
            break;
        }
        let phi = params.f.eval(y);
        let u = -est.theta_hat * phi;
        let y_next = tilde * phi + w;
        if !(y_next.abs() <= params.overflow_cap) {
            traj.exploded_at = Some(t + 1);
            break;
        }
        // innovation z - φθ_t equals θ̃φ + w = y_{t+1}
        let next = match est.update_innovation(phi, y_next) {
            Ok(next) => next,
            Err(_) => {
                traj.exploded_at = Some(t + 1);
                break;
            }
        };
        traj.regret_sum += (phi * tilde).powi(2) * est.gain_factor(phi);
        traj.sigma_sq.push(est.sigma_sq(phi));
        est = next;
        y = y_next;
        power_sum += y * y;

        traj.phi.push(phi);
        traj.u.push(u);
        traj.noise.push(w);
        traj.r.push(est.r_prev);
        traj.y.push(y);
        traj.theta_hat.push(est.theta_hat);
        traj.theta_tilde.push(theta - est.theta_hat);
        traj.avg_power.push(power_sum / (t + 1) as f64);
        traj.max_abs_y = traj.max_abs_y.max(y.abs());
    }
    traj.verdict = classify(&traj, &params.classifier);
    Ok(traj)
}

pub fn classify(traj: &Trajectory, classifier: &Classifier) -> Verdict {
    classifier.classify_series(&traj.avg_power, traj.exploded_at)
}

/// Largest relative deviations from the two closed-loop identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `θ̃_t·r_{t-1} = θ̃_0/P_0 - Σ_{i<t} φ_i w_{i+1}`, scaled by
    /// `(|θ̃_0/P_0| + Σ|φ_i w_{i+1}|) / r_{t-1}`.
    pub max_theta_residual: f64,
    /// `σ_t² = r_t / r_{t-1}`.
    pub max_sigma_residual: f64,
}

pub fn residual_identities(traj: &Trajectory, theta_true: f64, noise: &[f64]) -> Result<IdentityReport> {
    let n = traj.steps();
    if noise.len() < n || traj.theta_hat.len() != n + 1 || traj.r.len() != n || traj.sigma_sq.len() != n {
        return Err(Error::domain(format!(
            "trajectory recordings incomplete: {n} regressors, {} noise values, {} estimates",
            noise.len(),
            traj.theta_hat.len()
        )));
    }
    let r_before = |t: usize| if t == 0 { traj.r_minus1 } else { traj.r[t - 1] };
    let head = (theta_true - traj.theta_hat[0]) * traj.r_minus1;
    let mut signed = 0.0;
    let mut magnitude = 0.0;
    let mut max_theta: f64 = 0.0;
    for t in 0..=n {
        if t > 0 {
            signed += traj.phi[t - 1] * noise[t - 1];
            magnitude += (traj.phi[t - 1] * noise[t - 1]).abs();
        }
        let r = r_before(t);
        let predicted = (head - signed) / r;
        let scale = (head.abs() + magnitude) / r;
        let actual = theta_true - traj.theta_hat[t];
        let dev = (actual - predicted).abs();
        if dev > 0.0 {
            max_theta = max_theta.max(dev / scale.max(f64::MIN_POSITIVE));
        }
    }
    let mut max_sigma: f64 = 0.0;
    for t in 0..n {
        let ratio = traj.r[t] / r_before(t);
        max_sigma = max_sigma.max((traj.sigma_sq[t] - ratio).abs() / ratio);
    }
    Ok(IdentityReport {
        max_theta_residual: max_theta,
        max_sigma_residual: max_sigma,
    })
}

pub(crate) fn fmt_num(x: f64) -> String {
    let mut buf = ryu::Buffer::new();
    buf.format(x).to_owned()
}

pub const CSV_HEADER: &str = "t,y,u,phi,sigma_sq,r,theta_hat,avg_power";

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let cell = |v: Option<&f64>| v.map(|&x| fmt_num(x)).unwrap_or_default();
    let mut out = String::with_capacity(64 * traj.y.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for t in 0..traj.y.len() {
        let row = [
            t.to_string(),
            cell(traj.y.get(t)),
            cell(traj.u.get(t)),
            cell(traj.phi.get(t)),
            cell(traj.sigma_sq.get(t)),
            cell(traj.r.get(t)),
            cell(traj.theta_hat.get(t)),
            cell(traj.avg_power.get(t)),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub generator: String,
    pub seed: u64,
    pub function: String,
    pub theta0: f64,
    pub p0: f64,
    pub y0: f64,
    pub horizon: usize,
    pub overflow_cap: f64,
    pub classifier: Classifier,
    pub theta_true: f64,
    pub verdict: Verdict,
}

impl TrajectoryMeta {
    pub fn new(params: &SimParams, traj: &Trajectory) -> Self {
        Self {
            generator: GENERATOR_ID.to_owned(),
            seed: params.seed,
            function: params.f.label().to_owned(),
            theta0: params.theta0,
            p0: params.p0,
            y0: params.y0,
            horizon: params.horizon,
            overflow_cap: params.overflow_cap,
            classifier: params.classifier,
            theta_true: traj.theta_true,
            verdict: traj.verdict,
        }
    }
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the CSV to `path` and the metadata to `<path>.meta.json`.
pub fn write_trajectory(path: &Path, params: &SimParams, traj: &Trajectory) -> Result<()> {
    write_file(path, trajectory_csv(traj).as_bytes())?;
    let meta = serde_json::to_string_pretty(&TrajectoryMeta::new(params, traj))? + "\n";
    write_file(&meta_path(path), meta.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system_functions::FamilySpec;

    fn params(family: FamilySpec, horizon: usize, seed: u64) -> SimParams {
        SimParams::new(family.build().unwrap(), 0.0, 1.0, horizon, seed)
    }

    fn square() -> FamilySpec {
        FamilySpec::PurePower { c: 1.0, p: 2.0 }
    }

    #[test]
    fn zero_function_is_pure_noise() {
        let traj = run(&params(FamilySpec::Zero, 10_000, 5)).unwrap();
        assert_eq!(traj.verdict, Verdict::Stabilized);
        assert_eq!(&traj.y[1..], &traj.noise[..]);
        assert!(traj.theta_hat.iter().all(|&th| th == 0.0));
        assert!(traj.theta_tilde.iter().all(|&d| d == traj.theta_true));
        assert!(traj.u.iter().all(|&u| u == 0.0));
        let avg = traj.final_avg_power();
        assert!((0.9..=1.1).contains(&avg), "{avg}");
    }

    #[test]
    fn identical_seeds_are_bitwise_identical() {
        let a = run(&params(square(), 2000, 42)).unwrap();
        let b = run(&params(square(), 2000, 42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(trajectory_csv(&a), trajectory_csv(&b));
        let c = run(&params(square(), 2000, 43)).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn exponential_blows_up_from_a_large_start() {
        let mut p = params(FamilySpec::PureExp { k1: 1.0, k2: 1.0 }, 100, 1);
        p.y0 = 60.0;
        let traj = run(&p).unwrap();
        let Verdict::Exploded { at } = traj.verdict else { panic!("{:?}", traj.verdict) };
        assert!(at <= 3, "{at}");
        assert_eq!(traj.y.len(), at);
        assert!(traj.y.iter().all(|y| y.is_finite()));
    }

    #[test]
    fn identities_hold_on_square_runs() {
        for seed in 0..20 {
            let traj = run(&params(square(), 1000, seed)).unwrap();
            let rep = residual_identities(&traj, traj.theta_true, &traj.noise).unwrap();
            assert!(rep.max_theta_residual < 1e-8, "seed {seed}: {rep:?}");
            assert!(rep.max_sigma_residual < 1e-9, "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn one_step_by_hand() {
        let mut p = params(square(), 1, 9);
        p.y0 = 1.0;
        p.p0 = 2.0;
        p.theta0 = 0.5;
        let traj = run(&p).unwrap();
        let (theta, w) = (traj.theta_true, traj.noise[0]);
        assert_eq!(traj.phi[0], 1.0);
        assert_eq!(traj.y[1], (theta - 0.5) + w);
        // θ̃_1 = (θ̃_0/P_0 - φ_0 w_1) / (1/P_0 + φ_0²)
        let expected = ((theta - 0.5) / 2.0 - w) / 1.5;
        assert!((traj.theta_tilde[1] - expected).abs() < 1e-14);
        assert_eq!(traj.r[0], 1.5);
        assert_eq!(traj.sigma_sq[0], 3.0);
    }

    #[test]
    fn standardized_innovation_has_zero_mean() {
        let n = 1000;
        let t = 50;
        let z: Vec<f64> = (0..n)
            .map(|seed| {
                let traj = run(&params(square(), t + 1, 1000 + seed)).unwrap();
                traj.y[t + 1] / traj.sigma_sq[t].sqrt()
            })
            .collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt() * var.sqrt(), "mean {mean}, var {var}");
        assert!((var - 1.0).abs() < 0.2, "{var}");
    }

    #[test]
    fn information_grows_linearly() {
        let seeds = 200;
        let mut good = 0;
        let mut valid = 0;
        for seed in 0..seeds {
            let traj = run(&params(square(), 2000, seed)).unwrap();
            if traj.exploded_at.is_none() {
                valid += 1;
                if traj.information_rate() > 0.01 {
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.95 * valid as f64, "{good}/{valid}");
        assert!(valid >= 190);
    }

    #[test]
    fn classifier_examples() {
        let c = Classifier::default();
        let flat = vec![1.0; 1001];
        assert_eq!(c.classify_series(&flat, None), Verdict::Stabilized);
        assert_eq!(c.classify_series(&flat, Some(37)), Verdict::Exploded { at: 37 });
        let mut growing = vec![15.0; 10_001];
        growing[10_000] = 40.0;
        let loose = Classifier::new(50.0, 2.0).unwrap();
        assert_eq!(loose.classify_series(&growing, None), Verdict::Inconclusive);
        let mut high = vec![25.0; 101];
        high[0] = 0.0;
        assert_eq!(c.classify_series(&high, None), Verdict::Inconclusive);
        assert!(Classifier::new(0.0, 2.0).is_err());
    }

    #[test]
    fn invalid_params() {
        let mut p = params(FamilySpec::Zero, 10, 0);
        p.p0 = 0.0;
        assert!(run(&p).is_err());
        let mut p = params(FamilySpec::Zero, 0, 0);
        p.horizon = 0;
        assert!(run(&p).is_err());
        let mut p = params(FamilySpec::Zero, 10, 0);
        p.overflow_cap = -1.0;
        assert!(run(&p).is_err());
    }

    #[test]
    fn residuals_need_recordings() {
        let traj = run(&params(square(), 10, 0)).unwrap();
        assert!(residual_identities(&traj, traj.theta_true, &traj.noise[..5]).is_err());
    }

    #[test]
    fn csv_and_meta_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let p = params(square(), 10, 7);
        let traj = run(&p).unwrap();
        write_trajectory(&path, &p, &traj).unwrap();
        let csv = fs::read_to_string(&path).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(csv.lines().count(), 12);
        // last row has no step quantities
        assert!(csv.lines().last().unwrap().contains(",,,,"));
        let meta: TrajectoryMeta = serde_json::from_str(&fs::read_to_string(meta_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.generator, GENERATOR_ID);
        assert_eq!(meta.seed, 7);
    }
}
