//! The exponent recursion `a_{i+1} = (1 + a_i)/(b - 1 - a_i) - ε_i`, the roots
//! of `x² - (a-2)x + 1 = 0`, and the regime classifier built on them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::closed_loop::fmt_num;
use crate::error::{Error, Result};
use crate::system_functions::{verify_h_condition, FamilySpec, ThresholdSpec};

/// `(x_min, x_max)` of `x² - (a-2)x + 1 = 0`, or `None` when `a < 4`.
pub fn critical_roots(a: f64) -> Option<(f64, f64)> {
    if !a.is_finite() || a < 4.0 {
        return None;
    }
    let s = a - 2.0;
    let disc = ((s - 2.0) * (s + 2.0)).max(0.0).sqrt();
    let x_max = (s + disc) / 2.0;
    // product form avoids cancellation in (s - disc)/2
    let x_min = 2.0 / (s + disc);
    Some((x_min, x_max))
}

/// `(1 + x_min(a))²`, the largest admissible `b` under a power envelope of degree `a`.
pub fn stabilizability_bound(a: f64) -> Option<f64> {
    critical_roots(a).map(|(x_min, _)| (1.0 + x_min).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum ChainMode {
    /// `b ∈ (1, 4)`, start at 0, must escape past `b - 1`.
    BranchI { b: f64 },
    /// `b >= 4`, start strictly between `x_max` and `b - 1`, must escape.
    BranchII { b: f64, a0: Option<f64> },
    /// `b >= 4`, start at 0, converges up to `x_min`.
    BranchIII { b: f64 },
}

impl ChainMode {
    pub fn b(&self) -> f64 {
        match *self {
            ChainMode::BranchI { b } | ChainMode::BranchII { b, .. } | ChainMode::BranchIII { b } => b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "terminal", rename_all = "snake_case")]
pub enum Terminal {
    /// `a_k > b - 1`; `a_k` is `+∞` when the denominator vanished.
    Escaped { k: usize, a_k: f64 },
    Converged { limit: f64, iters: usize },
    /// Branch III stopped short of the tolerance.
    MaxIters { last: f64, residual: f64, iters: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub mode: ChainMode,
    pub sequence: Vec<f64>,
    /// `ε_i` used to step from `a_i` to `a_{i+1}`.
    pub epsilons: Vec<f64>,
    pub terminal: Terminal,
}

impl ChainResult {
    pub fn csv(&self) -> String {
        let mut out = String::from("i,a_i,eps_i\n");
        for (i, a) in self.sequence.iter().enumerate() {
            let eps = self.epsilons.get(i).map(|&e| fmt_num(e)).unwrap_or_default();
            out.push_str(&format!("{i},{},{eps}\n", fmt_num(*a)));
        }
        out
    }
}

/// `(raw map value, ε_i)` at step `i`; the raw value is `+∞` once `b - 1 - a <= 0`.
fn step(b: f64, a: f64, i: usize) -> (f64, f64) {
    let cap = 1.0 / (2.0 * (i + 1) as f64);
    let denom = b - 1.0 - a;
    if denom <= 0.0 {
        return (f64::INFINITY, cap);
    }
    let raw = (1.0 + a) / denom;
    (raw, (0.5 * (raw - a)).min(cap))
}

pub fn run_chain(mode: ChainMode, max_iters: usize, tol: f64) -> Result<ChainResult> {
    if max_iters == 0 {
        return Err(Error::domain("max_iters must be >= 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tol must be > 0, got {tol}")));
    }
    let b = mode.b();
    if !b.is_finite() {
        return Err(Error::domain(format!("b must be finite, got {b}")));
    }
    let a0 = match mode {
        ChainMode::BranchI { b } => {
            if !(b > 1.0 && b < 4.0) {
                return Err(Error::domain(format!("branch I needs b in (1, 4), got {b}")));
            }
            0.0
        }
        ChainMode::BranchII { b, a0 } => {
            let (_, x_max) = critical_roots(b).ok_or_else(|| Error::domain(format!("branch II needs b >= 4, got {b}")))?;
            let a0 = a0.unwrap_or(x_max + (b - 1.0 - x_max) / 2.0);
            if !(a0 > x_max) {
                return Err(Error::domain(format!("branch II needs a0 > x_max = {x_max}, got {a0}")));
            }
            if !(a0 < b - 1.0) {
                return Err(Error::domain(format!("branch II needs a0 < b - 1 = {}, got {a0}", b - 1.0)));
            }
            a0
        }
        ChainMode::BranchIII { b } => {
            if critical_roots(b).is_none() {
                return Err(Error::domain(format!("branch III needs b >= 4, got {b}")));
            }
            0.0
        }
    };

    let mut sequence = vec![a0];
    let mut epsilons = Vec::new();
    let mut a = a0;
    match mode {
        ChainMode::BranchI { .. } | ChainMode::BranchII { .. } => {
            for i in 0..max_iters {
                let (raw, eps) = step(b, a, i);
                a = raw - eps;
                sequence.push(a);
                epsilons.push(eps);
                if a > b - 1.0 {
                    let terminal = Terminal::Escaped { k: i + 1, a_k: a };
                    return Ok(ChainResult { mode, sequence, epsilons, terminal });
                }
            }
            Err(Error::NonTermination {
                threshold: b - 1.0,
                max_iters,
            })
        }
        ChainMode::BranchIII { .. } => {
            let (x_min, _) = critical_roots(b).expect("checked above");
            let mut iters = 0;
            while iters < max_iters && (a - x_min).abs() >= tol {
                let (raw, eps) = step(b, a, iters);
                if !(eps > 0.0) {
                    // rounding has reached the fixed point
                    break;
                }
                a = raw - eps;
                sequence.push(a);
                epsilons.push(eps);
                iters += 1;
            }
            let residual = (a - x_min).abs();
            let terminal = if residual < tol {
                Terminal::Converged { limit: a, iters }
            } else {
                Terminal::MaxIters { last: a, residual, iters }
            };
            Ok(ChainResult { mode, sequence, epsilons, terminal })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Envelope {
    /// `|f(x)| <= k1·e^{k2|x|}`.
    Exponential { k1: f64, k2: f64 },
    /// `|f(x)| <= C(1 + |x|^a)`.
    Power { a: f64 },
}

/// What is known about the density of `S_b^L` (normalized by `l`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityDescriptor {
    /// `liminf ℓ(S ∩ [-l, l]) / l`, when positive.
    pub positive_liminf: Option<f64>,
    /// Lower bound `c` of `(ℓ(S ∩ [-l, l]) / l)·ln ln l`.
    pub iterated_log_constant: Option<f64>,
    /// `δ > 0` with `sup_x ℓ(S ∩ [x-l, x+l]) / l = O(1/(ln ln l)^{1+δ})`.
    pub sup_decay_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeInput {
    pub envelope: Envelope,
    pub b: f64,
    pub l: f64,
    pub density: DensityDescriptor,
    /// General threshold for the summability criterion; the density
    /// descriptor then refers to `S_h`.
    pub h: Option<ThresholdSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeVerdict {
    StabilizableThm21,
    StabilizableThm22,
    UnstabilizableThm23,
    UnstabilizableThm24,
    Undetermined,
}

impl fmt::Display for RegimeVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

const H_CONDITION_TERMS: usize = 30;

pub fn classify_regime(input: &RegimeInput) -> Result<RegimeVerdict> {
    let d = input.density;
    if d.sup_decay_delta.is_some() && (d.positive_liminf.is_some() || d.iterated_log_constant.is_some()) {
        return Err(Error::domain("density descriptor claims both a positive lower bound and decay"));
    }
    for (name, v) in [
        ("positive_liminf", d.positive_liminf),
        ("iterated_log_constant", d.iterated_log_constant),
        ("sup_decay_delta", d.sup_decay_delta),
    ] {
        if let Some(v) = v {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite and > 0, got {v}")));
            }
        }
    }
    if !input.b.is_finite() || !(input.l > 0.0) {
        return Err(Error::domain(format!("need finite b and L > 0, got b={}, L={}", input.b, input.l)));
    }
    let b = input.b;
    match input.envelope {
        Envelope::Exponential { k1, k2 } => {
            if !(k1 > 0.0 && k2 > 0.0) {
                return Err(Error::domain(format!("envelope needs k1, k2 > 0, got {k1}, {k2}")));
            }
            if b < 4.0 && d.positive_liminf.is_some() {
                return Ok(RegimeVerdict::StabilizableThm21);
            }
        }
        Envelope::Power { a } => {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::domain(format!("power envelope degree must be finite and >= 0, got {a}")));
            }
            // a degree-a envelope with a < 4 is also a degree-4 envelope
            let bound = stabilizability_bound(a.max(4.0)).expect("a >= 4");
            let dense = d.positive_liminf.is_some() || d.iterated_log_constant.is_some();
            if b < bound && dense {
                return Ok(RegimeVerdict::StabilizableThm22);
            }
        }
    }
    if d.sup_decay_delta.is_some() {
        if b >= 4.0 && input.h.is_none() {
            return Ok(RegimeVerdict::UnstabilizableThm23);
        }
        if let Some(h) = &input.h {
            if verify_h_condition(h, H_CONDITION_TERMS)?.converges {
                return Ok(RegimeVerdict::UnstabilizableThm24);
            }
        }
    }
    Ok(RegimeVerdict::Undetermined)
}

impl RegimeInput {
    /// Describes a canonical family against the threshold `L|x|^b`.
    ///
    /// `a` selects a power envelope of that degree; otherwise the family's
    /// exponential envelope is used. `delta` overrides the decay exponent
    /// reported for sets that only occupy a bounded region.
    pub fn from_family(family: &FamilySpec, b: f64, l: f64, a: Option<f64>, delta: Option<f64>) -> Result<Self> {
        family.build()?;
        if !(l > 0.0) || !b.is_finite() {
            return Err(Error::domain(format!("need finite b and L > 0, got b={b}, L={l}")));
        }
        let bounded_decay = DensityDescriptor {
            sup_decay_delta: Some(delta.unwrap_or(1.0)),
            ..Default::default()
        };
        let full = DensityDescriptor {
            positive_liminf: Some(2.0),
            ..Default::default()
        };
        let islands_inside = |p: f64, scale: f64| p < b || (p == b && scale.abs() < l);
        let density = match *family {
            FamilySpec::Zero => full,
            FamilySpec::PurePower { c, p } => {
                if islands_inside(p, c) || c == 0.0 {
                    full
                } else {
                    bounded_decay
                }
            }
            FamilySpec::PureExp { .. } => bounded_decay,
            FamilySpec::Islands { p, scale, epsilon, .. } => {
                if islands_inside(p, scale) {
                    DensityDescriptor {
                        positive_liminf: Some(2.0 * epsilon),
                        ..Default::default()
                    }
                } else {
                    bounded_decay
                }
            }
            FamilySpec::ThinningIslands { delta: own, p, scale, .. } => {
                if islands_inside(p, scale) {
                    DensityDescriptor {
                        sup_decay_delta: Some(own),
                        ..Default::default()
                    }
                } else {
                    bounded_decay
                }
            }
        };
        let envelope = match (a, family) {
            (Some(a), _) => Envelope::Power { a },
            (None, FamilySpec::PurePower { c, p }) => {
                // |c|·u^p <= |c|·(p/e)^p·e^u
                let k1 = (c.abs() * (p / std::f64::consts::E).powf(*p)).max(1.0);
                Envelope::Exponential { k1, k2: 1.0 }
            }
            (None, other) => {
                let (k1, k2) = other.exponential_envelope().unwrap_or((1.0, 1.0));
                Envelope::Exponential { k1, k2 }
            }
        };
        Ok(Self {
            envelope,
            b,
            l,
            density,
            h: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_at_the_boundary_and_beyond() {
        assert_eq!(critical_roots(4.0), Some((1.0, 1.0)));
        assert_eq!(stabilizability_bound(4.0), Some(4.0));
        let (lo, hi) = critical_roots(6.0).unwrap();
        assert!((lo - (2.0 - 3f64.sqrt())).abs() < 1e-15);
        assert!((hi - (2.0 + 3f64.sqrt())).abs() < 1e-14);
        // substitution residual
        for x in [lo, hi] {
            assert!((x * x - 4.0 * x + 1.0).abs() < 1e-12);
        }
        assert!((lo * hi - 1.0).abs() < 1e-12);
        assert_eq!(critical_roots(3.0), None);
        assert_eq!(critical_roots(f64::NAN), None);
    }

    #[test]
    fn root_identities_on_a_grid() {
        let mut prev = f64::INFINITY;
        for k in 0..=192 {
            let a = 4.0 + 0.5 * k as f64;
            let (lo, hi) = critical_roots(a).unwrap();
            assert!((lo * hi - 1.0).abs() < 1e-12, "a = {a}");
            assert!((lo + hi - (a - 2.0)).abs() < 1e-12, "a = {a}");
            let bound = stabilizability_bound(a).unwrap();
            assert!(bound < prev || k == 0);
            prev = bound;
        }
    }

    #[test]
    fn branch_one_b2_by_hand() {
        let res = run_chain(ChainMode::BranchI { b: 2.0 }, 100, 1e-9).unwrap();
        assert_eq!(res.sequence, vec![0.0, 0.5, 2.75]);
        assert_eq!(res.epsilons, vec![0.5, 0.25]);
        assert_eq!(res.terminal, Terminal::Escaped { k: 2, a_k: 2.75 });
        assert_eq!(res.csv(), "i,a_i,eps_i\n0,0.0,0.5\n1,0.5,0.25\n2,2.75,\n");
    }

    #[test]
    fn branch_one_escapes_everywhere_below_four() {
        for k in 11..=39 {
            let b = k as f64 / 10.0;
            let res = run_chain(ChainMode::BranchI { b }, 10_000, 1e-9).unwrap();
            let Terminal::Escaped { k, a_k } = res.terminal else { panic!() };
            assert!(a_k > b - 1.0);
            assert_eq!(k + 1, res.sequence.len());
            let inner = &res.sequence[1..k];
            assert!(inner.iter().all(|&a| a > 0.0 && a < b - 1.0));
            assert!(res.sequence.windows(2).all(|w| w[1] > w[0]));
            for (i, &e) in res.epsilons.iter().enumerate() {
                assert!(e > 0.0 && e < 1.0 / (i + 1) as f64);
            }
        }
        let res = run_chain(ChainMode::BranchI { b: 3.99 }, 100_000, 1e-9).unwrap();
        assert!(matches!(res.terminal, Terminal::Escaped { .. }));
    }

    #[test]
    fn branch_two_escapes_from_above_x_max() {
        let res = run_chain(ChainMode::BranchII { b: 5.0, a0: None }, 1000, 1e-9).unwrap();
        let (_, x_max) = critical_roots(5.0).unwrap();
        assert_eq!(res.sequence[0], x_max + (4.0 - x_max) / 2.0);
        assert!(matches!(res.terminal, Terminal::Escaped { .. }));
        assert!(run_chain(ChainMode::BranchII { b: 5.0, a0: Some(0.5) }, 1000, 1e-9).is_err());
        assert!(run_chain(ChainMode::BranchII { b: 3.0, a0: None }, 1000, 1e-9).is_err());
    }

    #[test]
    fn branch_three_converges_to_x_min() {
        for b in [5.0, 8.0, 16.0] {
            let res = run_chain(ChainMode::BranchIII { b }, 100_000, 1e-6).unwrap();
            let (x_min, _) = critical_roots(b).unwrap();
            let Terminal::Converged { limit, .. } = res.terminal else { panic!("b = {b}: {:?}", res.terminal) };
            assert!((limit - x_min).abs() < 1e-6);
            assert!(res.sequence.iter().all(|&a| a < x_min));
            assert!(res.sequence.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn branch_three_at_four_is_sublinear() {
        // the fixed point is a double root, the gap shrinks like 4/i
        let res = run_chain(ChainMode::BranchIII { b: 4.0 }, 10_000, 1e-6).unwrap();
        let Terminal::MaxIters { last, residual, iters } = res.terminal else { panic!() };
        assert_eq!(iters, 10_000);
        assert!(last < 1.0);
        assert!(residual > 1e-4 && residual < 1e-3, "{residual}");
        assert!(res.sequence.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fixed_point_of_the_raw_map() {
        for b in [4.0, 5.0, 8.0, 16.0] {
            let (x, _) = critical_roots(b).unwrap();
            assert!(((1.0 + x) / (b - 1.0 - x) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn nontermination_is_reported() {
        let err = run_chain(ChainMode::BranchI { b: 3.99 }, 5, 1e-9).unwrap_err();
        assert!(matches!(err, Error::NonTermination { max_iters: 5, .. }));
    }

    #[test]
    fn regime_examples() {
        let islands = FamilySpec::Islands { p: 3.5, scale: 1.0, epsilon: 0.05, period: 20.0, k1: 1.0, k2: 1.0 };
        let input = RegimeInput::from_family(&islands, 3.5, 2.0, None, None).unwrap();
        assert_eq!(classify_regime(&input).unwrap(), RegimeVerdict::StabilizableThm21);

        let power = RegimeInput {
            envelope: Envelope::Power { a: 6.0 },
            b: 1.5,
            l: 1.0,
            density: DensityDescriptor {
                iterated_log_constant: Some(0.1),
                ..Default::default()
            },
            h: None,
        };
        assert!(1.5 < (3.0 - 3f64.sqrt()).powi(2));
        assert_eq!(classify_regime(&power).unwrap(), RegimeVerdict::StabilizableThm22);
        let too_big = RegimeInput { b: 1.7, ..power.clone() };
        assert_eq!(classify_regime(&too_big).unwrap(), RegimeVerdict::Undetermined);

        let exp = RegimeInput::from_family(&FamilySpec::PureExp { k1: 1.0, k2: 1.0 }, 4.0, 1.0, None, None).unwrap();
        assert_eq!(classify_regime(&exp).unwrap(), RegimeVerdict::UnstabilizableThm23);

        let boundary = RegimeInput::from_family(&islands, 4.0, 1.0, None, None).unwrap();
        assert_eq!(classify_regime(&boundary).unwrap(), RegimeVerdict::Undetermined);
    }

    #[test]
    fn regime_with_general_h() {
        let input = RegimeInput {
            envelope: Envelope::Exponential { k1: 1.0, k2: 1.0 },
            b: 2.0,
            l: 1.0,
            density: DensityDescriptor {
                sup_decay_delta: Some(0.5),
                ..Default::default()
            },
            h: Some(ThresholdSpec::power(1.0, 4.0).unwrap()),
        };
        assert_eq!(classify_regime(&input).unwrap(), RegimeVerdict::UnstabilizableThm24);
        let weak = RegimeInput {
            h: Some(ThresholdSpec::power(1.0, 1.0 / 0.35).unwrap()),
            ..input
        };
        assert_eq!(classify_regime(&weak).unwrap(), RegimeVerdict::Undetermined);
    }

    #[test]
    fn inconsistent_descriptor() {
        let input = RegimeInput {
            envelope: Envelope::Exponential { k1: 1.0, k2: 1.0 },
            b: 2.0,
            l: 1.0,
            density: DensityDescriptor {
                positive_liminf: Some(0.1),
                sup_decay_delta: Some(0.5),
                ..Default::default()
            },
            h: None,
        };
        assert!(classify_regime(&input).is_err());
    }

    #[test]
    fn thinning_islands_at_four() {
        let fam = FamilySpec::ThinningIslands { delta: 0.5, period: 20.0, p: 3.5, scale: 1.0, k1: 1.0, k2: 1.0 };
        let input = RegimeInput::from_family(&fam, 4.0, 1.0, None, None).unwrap();
        assert_eq!(input.density.sup_decay_delta, Some(0.5));
        assert_eq!(classify_regime(&input).unwrap(), RegimeVerdict::UnstabilizableThm23);
    }
}
