use serde::{Deserialize, Serialize};

use super::{DutySchedule, IslandTail, Piece, PieceForm, PiecewiseFunction};
use crate::error::{Error, Result};

/// Thinning islands use duty 1 on `|x| < 2^THINNING_FIRST_BLOCK`.
pub const THINNING_FIRST_BLOCK: u32 = 4;

/// Largest number of period cells the explicit core of an island family may hold.
pub const ISLAND_INTERVAL_CAP: usize = 1_000_000;

/// The canonical nonlinearities. Every family is even in `x`.
///
/// The island exponent is named `p` (alias `b`) so that `b` stays free for the
/// threshold exponent of `S_b^L` in queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Zero,
    #[serde(alias = "power")]
    PurePower { c: f64, p: f64 },
    #[serde(alias = "exp")]
    PureExp { k1: f64, k2: f64 },
    /// `scale·|x|^p` on islands `[jT, jT + εT]` (mirrored for `x < 0`),
    /// `k1·e^{k2|x|}` elsewhere.
    Islands {
        #[serde(alias = "b")]
        p: f64,
        scale: f64,
        epsilon: f64,
        period: f64,
        k1: f64,
        k2: f64,
    },
    /// Islands whose duty cycle in `[2^m, 2^{m+1})` decays like
    /// `1/(ln ln 2^m)^{1+delta}`.
    ThinningIslands {
        delta: f64,
        period: f64,
        #[serde(alias = "b")]
        p: f64,
        scale: f64,
        k1: f64,
        k2: f64,
    },
}

impl FamilySpec {
    pub fn kind(&self) -> &'static str {
        match self {
            FamilySpec::Zero => "zero",
            FamilySpec::PurePower { .. } => "pure_power",
            FamilySpec::PureExp { .. } => "pure_exp",
            FamilySpec::Islands { .. } => "islands",
            FamilySpec::ThinningIslands { .. } => "thinning_islands",
        }
    }

    pub fn label(&self) -> String {
        match *self {
            FamilySpec::Zero => "zero".to_string(),
            FamilySpec::PurePower { c, p } => format!("power(c={c},p={p})"),
            FamilySpec::PureExp { k1, k2 } => format!("exp(k1={k1},k2={k2})"),
            FamilySpec::Islands { p, scale, epsilon, period, k1, k2 } => format!(
                "islands(p={p},scale={scale},epsilon={epsilon},period={period},k1={k1},k2={k2})"
            ),
            FamilySpec::ThinningIslands { delta, period, p, scale, k1, k2 } => format!(
                "thinning_islands(delta={delta},period={period},p={p},scale={scale},k1={k1},k2={k2})"
            ),
        }
    }

    /// Exponential envelope constants `(k1, k2)` the construction guarantees, if any.
    pub fn exponential_envelope(&self) -> Option<(f64, f64)> {
        match *self {
            FamilySpec::PureExp { k1, k2 }
            | FamilySpec::Islands { k1, k2, .. }
            | FamilySpec::ThinningIslands { k1, k2, .. } => Some((k1, k2)),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<PiecewiseFunction> {
        let label = self.label();
        match *self {
            FamilySpec::Zero => PiecewiseFunction::even(label, vec![Piece::new(0.0, f64::INFINITY, PieceForm::Zero)]),
            FamilySpec::PurePower { c, p } => {
                if !c.is_finite() || !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::domain(format!("pure power needs finite c and p >= 0, got c={c}, p={p}")));
                }
                PiecewiseFunction::even(label, vec![Piece::new(0.0, f64::INFINITY, PieceForm::Power { c, p })])
            }
            FamilySpec::PureExp { k1, k2 } => {
                check_envelope(k1, k2)?;
                PiecewiseFunction::even(label, vec![Piece::new(0.0, f64::INFINITY, PieceForm::Exp { k1, k2 })])
            }
            FamilySpec::Islands { p, scale, epsilon, period, k1, k2 } => {
                if !(epsilon > 0.0 && epsilon < 1.0) {
                    return Err(Error::domain(format!("island duty cycle must lie in (0, 1), got {epsilon}")));
                }
                build_islands(label, p, scale, period, k1, k2, DutySchedule::Constant { fraction: epsilon })
            }
            FamilySpec::ThinningIslands { delta, period, p, scale, k1, k2 } => {
                if !(delta > 0.0) || !delta.is_finite() {
                    return Err(Error::domain(format!("thinning exponent delta must be > 0, got {delta}")));
                }
                let first = THINNING_FIRST_BLOCK;
                let c = (first as f64 * std::f64::consts::LN_2).ln().powf(1.0 + delta);
                let duty = DutySchedule::IteratedLogThinning { c, delta, first_block: first };
                build_islands(label, p, scale, period, k1, k2, duty)
            }
        }
    }
}

fn check_envelope(k1: f64, k2: f64) -> Result<()> {
    if k1 > 0.0 && k2 > 0.0 && k1.is_finite() && k2.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("envelope needs k1, k2 > 0, got k1={k1}, k2={k2}")))
    }
}

/// The band `[x1, x2)` on `u > 0` where `scale·u^p` exceeds `k1·e^{k2 u}`.
///
/// `ln(power) - ln(envelope)` is concave in `u`, so the band is a single
/// interval. Both ends are returned on the side where the power part stays
/// under the envelope.
pub(crate) fn clamp_band(scale: f64, p: f64, k1: f64, k2: f64) -> Option<(f64, f64)> {
    let d = |u: f64| scale.ln() + if p == 0.0 { 0.0 } else { p * u.ln() } - k1.ln() - k2 * u;
    let peak = p / k2;
    let peak_value = if p == 0.0 { scale.ln() - k1.ln() } else { d(peak) };
    if peak_value <= 0.0 {
        return None;
    }
    let lower = if p == 0.0 {
        0.0
    } else {
        let mut outside = peak;
        while d(outside) > 0.0 {
            outside *= 0.5;
        }
        bisect_boundary(outside, peak, &d)
    };
    let mut outside = peak.max(1.0) * 2.0;
    while d(outside) > 0.0 {
        outside *= 2.0;
    }
    let upper = bisect_boundary(outside, peak, &d);
    Some((lower, upper))
}

/// Bisect between `outside` (d <= 0) and `inside` (d > 0) to full precision;
/// returns the last point with `d <= 0`.
fn bisect_boundary(mut outside: f64, mut inside: f64, d: &impl Fn(f64) -> f64) -> f64 {
    loop {
        let mid = 0.5 * (outside + inside);
        if mid == outside || mid == inside {
            return outside;
        }
        if d(mid) > 0.0 {
            inside = mid;
        } else {
            outside = mid;
        }
    }
}

fn build_islands(
    label: String,
    p: f64,
    scale: f64,
    period: f64,
    k1: f64,
    k2: f64,
    duty: DutySchedule,
) -> Result<PiecewiseFunction> {
    check_envelope(k1, k2)?;
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::domain(format!("island period must be > 0, got {period}")));
    }
    if !(scale > 0.0) || !scale.is_finite() || !(p >= 0.0) || !p.is_finite() {
        return Err(Error::domain(format!("island power needs scale > 0 and p >= 0, got scale={scale}, p={p}")));
    }
    let island = PieceForm::Power { c: scale, p };
    let background = PieceForm::Exp { k1, k2 };
    let band = clamp_band(scale, p, k1, k2);

    // Cells below `core_end` can meet the clamp band and are spelled out.
    let cells = band.map_or(0.0, |(_, hi)| (hi / period).ceil());
    if cells > ISLAND_INTERVAL_CAP as f64 {
        return Err(Error::domain(format!("island core needs {cells} cells; reduce the clamp range or enlarge the period")));
    }
    let cells = cells as usize;
    let core_end = cells as f64 * period;

    let mut core: Vec<Piece> = Vec::new();
    let mut push = |lo: f64, hi: f64, form: PieceForm| {
        if lo < hi {
            match core.last_mut() {
                Some(last) if last.form == form && last.hi == lo => last.hi = hi,
                _ => core.push(Piece::new(lo, hi, form)),
            }
        }
    };
    for j in 0..cells {
        let start = j as f64 * period;
        let end = if j + 1 == cells { core_end } else { (j + 1) as f64 * period };
        let split = (start + duty.at(start) * period).min(end);
        match band {
            Some((b_lo, b_hi)) => {
                push(start, split.min(b_lo).max(start), island);
                push(b_lo.max(start), b_hi.min(split), background);
                push(b_hi.max(start), split, island);
            }
            None => push(start, split, island),
        }
        push(split, end, background);
    }

    let tail = IslandTail {
        start: core_end,
        period,
        duty,
        island,
        background,
    };
    PiecewiseFunction::even_with_tail(label, core, tail)
}
