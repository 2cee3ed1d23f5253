//! The system nonlinearity `f` as a piecewise analytic function.
//!
//! A [`PiecewiseFunction`] is either a tiling of the whole line or an even
//! function described on `[0, ∞)` and evaluated at `|x|`. Even functions may
//! carry an [`IslandTail`]: beyond a finite core they repeat a cell of fixed
//! period made of a polynomial island followed by an exponential background.
//! That is how the island families stay exact at arbitrary `|x|` without an
//! unbounded piece list.

mod audit;
mod family;
mod region;

pub use audit::{verify_growth_envelope, verify_h_condition, HCondition};
pub use family::{FamilySpec, ISLAND_INTERVAL_CAP, THINNING_FIRST_BLOCK};
pub use region::{sublevel_region, ThresholdSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of pieces a single window query may materialize.
pub const MAX_MATERIALIZED_PIECES: usize = 20_000_000;

/// One analytic form. All forms depend on `x` only through `|x|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PieceForm {
    /// `c·|x|^p`, `p >= 0`.
    Power { c: f64, p: f64 },
    /// `k1·e^{k2|x|}`, `k1, k2 > 0`.
    Exp { k1: f64, k2: f64 },
    Const { c: f64 },
    Zero,
}

impl PieceForm {
    pub fn eval(&self, x: f64) -> f64 {
        let u = x.abs();
        match *self {
            PieceForm::Power { c, p } => {
                if c == 0.0 {
                    0.0
                } else {
                    c * u.powf(p)
                }
            }
            PieceForm::Exp { k1, k2 } => k1 * (k2 * u).exp(),
            PieceForm::Const { c } => c,
            PieceForm::Zero => 0.0,
        }
    }

    /// `ln|form(x)|`, `-∞` where the form vanishes. Finite far beyond the
    /// range where `eval` overflows.
    pub fn ln_abs(&self, x: f64) -> f64 {
        match self.log_linear() {
            None => f64::NEG_INFINITY,
            Some((alpha, beta, gamma)) => {
                let u = x.abs();
                let mut v = alpha;
                if beta != 0.0 {
                    v += beta * u;
                }
                if gamma != 0.0 {
                    v += gamma * u.ln();
                }
                v
            }
        }
    }

    /// Coefficients `(α, β, γ)` with `ln|form| = α + β·u + γ·ln u` for `u = |x| > 0`;
    /// `None` when the form is identically zero.
    pub fn log_linear(&self) -> Option<(f64, f64, f64)> {
        match *self {
            PieceForm::Power { c, p } if c != 0.0 => Some((c.abs().ln(), 0.0, p)),
            PieceForm::Exp { k1, k2 } => Some((k1.ln(), k2, 0.0)),
            PieceForm::Const { c } if c != 0.0 => Some((c.abs().ln(), 0.0, 0.0)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PieceForm::Power { c, p } => c.is_finite() && p.is_finite() && p >= 0.0,
            PieceForm::Exp { k1, k2 } => k1.is_finite() && k2.is_finite() && k1 > 0.0 && k2 > 0.0,
            PieceForm::Const { c } => c.is_finite(),
            PieceForm::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid piece form {self:?}")))
        }
    }
}

/// A form on the half-open domain `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub form: PieceForm,
}

impl Piece {
    pub fn new(lo: f64, hi: f64, form: PieceForm) -> Self {
        Self { lo, hi, form }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    /// Pieces tile `(-∞, ∞)`.
    Line,
    /// Pieces tile `[0, ∞)` (or `[0, tail.start)`), evaluated at `|x|`.
    Even,
}

/// Island duty cycle per period cell, keyed by the cell's left end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum DutySchedule {
    Constant { fraction: f64 },
    /// Duty 1 below `2^first_block`; within `[2^m, 2^{m+1})` the duty is
    /// `c / (ln ln 2^m)^{1+delta}`.
    IteratedLogThinning { c: f64, delta: f64, first_block: u32 },
}

impl DutySchedule {
    pub fn at(&self, cell_start: f64) -> f64 {
        match *self {
            DutySchedule::Constant { fraction } => fraction,
            DutySchedule::IteratedLogThinning { c, delta, first_block } => {
                if cell_start < 2f64.powi(first_block as i32) {
                    return 1.0;
                }
                let m = cell_start.log2().floor();
                let loglog = (m * std::f64::consts::LN_2).ln();
                (c / loglog.powf(1.0 + delta)).min(1.0)
            }
        }
    }
}

/// Periodic island pattern on `|x| >= start`; `start` is a multiple of `period`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IslandTail {
    pub start: f64,
    pub period: f64,
    pub duty: DutySchedule,
    pub island: PieceForm,
    pub background: PieceForm,
}

impl IslandTail {
    fn cell_of(&self, u: f64) -> f64 {
        let mut start = (u / self.period).floor() * self.period;
        if start > u {
            start -= self.period;
        }
        start
    }

    fn form_at(&self, u: f64) -> PieceForm {
        let start = self.cell_of(u);
        if u - start < self.duty.at(start) * self.period {
            self.island
        } else {
            self.background
        }
    }

    /// Island and background pieces covering `[u_lo, u_hi]`, clipped.
    fn pieces(&self, u_lo: f64, u_hi: f64, out: &mut Vec<Piece>) -> Result<()> {
        let u_lo = u_lo.max(self.start);
        if u_lo >= u_hi {
            return Ok(());
        }
        let cells = ((u_hi - u_lo) / self.period).ceil() + 2.0;
        if cells * 2.0 + out.len() as f64 > MAX_MATERIALIZED_PIECES as f64 {
            return Err(Error::domain(format!(
                "window [{u_lo}, {u_hi}] spans too many island cells ({cells})"
            )));
        }
        let mut cell = self.cell_of(u_lo);
        while cell < u_hi {
            let next = cell + self.period;
            let split = cell + self.duty.at(cell) * self.period;
            for (a, b, form) in [(cell, split, self.island), (split, next, self.background)] {
                let (a, b) = (a.max(u_lo), b.min(u_hi));
                if a < b {
                    out.push(Piece::new(a, b, form));
                }
            }
            cell = next;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFunction {
    label: String,
    symmetry: Symmetry,
    pieces: Vec<Piece>,
    tail: Option<IslandTail>,
}

impl PiecewiseFunction {
    /// A function whose pieces tile the whole line.
    pub fn on_line(label: impl Into<String>, pieces: Vec<Piece>) -> Result<Self> {
        check_tiling(&pieces, f64::NEG_INFINITY, f64::INFINITY)?;
        Ok(Self {
            label: label.into(),
            symmetry: Symmetry::Line,
            pieces,
            tail: None,
        })
    }

    /// An even function given by pieces tiling `[0, ∞)`.
    pub fn even(label: impl Into<String>, pieces: Vec<Piece>) -> Result<Self> {
        check_tiling(&pieces, 0.0, f64::INFINITY)?;
        Ok(Self {
            label: label.into(),
            symmetry: Symmetry::Even,
            pieces,
            tail: None,
        })
    }

    /// An even function: `core` tiles `[0, tail.start)`, the tail covers the rest.
    pub fn even_with_tail(label: impl Into<String>, core: Vec<Piece>, tail: IslandTail) -> Result<Self> {
        if !(tail.period > 0.0) || !tail.period.is_finite() || !(tail.start >= 0.0) || !tail.start.is_finite() {
            return Err(Error::domain("island tail needs a finite start >= 0 and period > 0"));
        }
        tail.island.validate()?;
        tail.background.validate()?;
        if tail.start > 0.0 {
            check_tiling(&core, 0.0, tail.start)?;
        } else if !core.is_empty() {
            return Err(Error::domain("core pieces given but the tail starts at 0"));
        }
        Ok(Self {
            label: label.into(),
            symmetry: Symmetry::Even,
            pieces: core,
            tail: Some(tail),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn tail(&self) -> Option<&IslandTail> {
        self.tail.as_ref()
    }

    /// The form governing `x`.
    pub fn form_at(&self, x: f64) -> PieceForm {
        let x = match self.symmetry {
            Symmetry::Line => x,
            Symmetry::Even => x.abs(),
        };
        if let Some(tail) = &self.tail {
            if x >= tail.start {
                return tail.form_at(x);
            }
        }
        let idx = self.pieces.partition_point(|p| p.hi <= x);
        self.pieces[idx.min(self.pieces.len() - 1)].form
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.form_at(x).eval(x)
    }

    pub fn ln_abs(&self, x: f64) -> f64 {
        self.form_at(x).ln_abs(x)
    }

    /// Pieces with their true domains, clipped to `[lo, hi]`, ascending.
    /// Even functions contribute mirrored pieces on the negative side.
    pub fn pieces_in(&self, lo: f64, hi: f64) -> Result<Vec<Piece>> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::domain(format!("invalid window ({lo}, {hi})")));
        }
        match self.symmetry {
            Symmetry::Line => Ok(clip_pieces(&self.pieces, lo, hi)),
            Symmetry::Even => {
                let mut out = Vec::new();
                if lo < 0.0 {
                    let mut neg = Vec::new();
                    self.half_line_pieces(hi.min(0.0).abs(), -lo, &mut neg)?;
                    out.extend(neg.into_iter().rev().map(|p| Piece::new(-p.hi, -p.lo, p.form)));
                }
                if hi > 0.0 {
                    self.half_line_pieces(lo.max(0.0), hi, &mut out)?;
                }
                Ok(out)
            }
        }
    }

    fn half_line_pieces(&self, u_lo: f64, u_hi: f64, out: &mut Vec<Piece>) -> Result<()> {
        if u_lo >= u_hi {
            return Ok(());
        }
        out.extend(clip_pieces(&self.pieces, u_lo, u_hi));
        if let Some(tail) = &self.tail {
            tail.pieces(u_lo, u_hi, out)?;
        }
        Ok(())
    }
}

fn clip_pieces(pieces: &[Piece], lo: f64, hi: f64) -> Vec<Piece> {
    let start = pieces.partition_point(|p| p.hi <= lo);
    pieces[start..]
        .iter()
        .take_while(|p| p.lo < hi)
        .map(|p| Piece::new(p.lo.max(lo), p.hi.min(hi), p.form))
        .filter(|p| p.lo < p.hi)
        .collect()
}

fn check_tiling(pieces: &[Piece], lo: f64, hi: f64) -> Result<()> {
    let (Some(first), Some(last)) = (pieces.first(), pieces.last()) else {
        return Err(Error::domain("a piecewise function needs at least one piece"));
    };
    if first.lo != lo || last.hi != hi {
        return Err(Error::domain(format!(
            "pieces must tile [{lo}, {hi}), got [{}, {})",
            first.lo, last.hi
        )));
    }
    for (i, p) in pieces.iter().enumerate() {
        p.form.validate()?;
        if !(p.lo < p.hi) {
            return Err(Error::domain(format!("piece {i} has empty domain [{}, {})", p.lo, p.hi)));
        }
        let interior = i > 0 && i + 1 < pieces.len();
        if interior && (!p.lo.is_finite() || !p.hi.is_finite()) {
            return Err(Error::domain(format!("interior piece {i} is unbounded")));
        }
    }
    for (i, w) in pieces.windows(2).enumerate() {
        if w[0].hi != w[1].lo {
            return Err(Error::domain(format!(
                "gap or overlap between pieces {i} and {}: {} vs {}",
                i + 1,
                w[0].hi,
                w[1].lo
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_form_evaluation() {
        let sq = PiecewiseFunction::even("x^2", vec![Piece::new(0.0, f64::INFINITY, PieceForm::Power { c: 1.0, p: 2.0 })]).unwrap();
        assert_eq!(sq.eval(3.0), 9.0);
        assert_eq!(sq.eval(-3.0), 9.0);
        let ex = PiecewiseFunction::even("e^x", vec![Piece::new(0.0, f64::INFINITY, PieceForm::Exp { k1: 1.0, k2: 1.0 })]).unwrap();
        assert_eq!(ex.eval(0.0), 1.0);
    }

    #[test]
    fn line_tiling_is_half_open() {
        let f = PiecewiseFunction::on_line(
            "step",
            vec![
                Piece::new(f64::NEG_INFINITY, 0.0, PieceForm::Const { c: -1.0 }),
                Piece::new(0.0, 1.0, PieceForm::Zero),
                Piece::new(1.0, f64::INFINITY, PieceForm::Const { c: 2.0 }),
            ],
        )
        .unwrap();
        assert_eq!(f.eval(-0.5), -1.0);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(0.999), 0.0);
        assert_eq!(f.eval(1.0), 2.0);
        assert_eq!(f.eval(1e300), 2.0);
    }

    #[test]
    fn tiling_errors() {
        let gap = vec![
            Piece::new(f64::NEG_INFINITY, 0.0, PieceForm::Zero),
            Piece::new(0.5, f64::INFINITY, PieceForm::Zero),
        ];
        assert!(PiecewiseFunction::on_line("gap", gap).is_err());
        assert!(PiecewiseFunction::even("short", vec![Piece::new(0.0, 5.0, PieceForm::Zero)]).is_err());
        assert!(PiecewiseFunction::even("bad", vec![Piece::new(0.0, f64::INFINITY, PieceForm::Exp { k1: -1.0, k2: 1.0 })]).is_err());
        assert!(PiecewiseFunction::even("empty", vec![]).is_err());
    }

    #[test]
    fn ln_abs_survives_overflow() {
        let e = PieceForm::Exp { k1: 2.0, k2: 3.0 };
        assert!(e.eval(1000.0).is_infinite());
        assert!((e.ln_abs(1000.0) - (2f64.ln() + 3000.0)).abs() < 1e-9);
        assert_eq!(PieceForm::Zero.ln_abs(1.0), f64::NEG_INFINITY);
        assert_eq!(PieceForm::Power { c: 1.0, p: 2.0 }.ln_abs(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn tail_pieces_match_pointwise_forms() {
        let tail = IslandTail {
            start: 20.0,
            period: 20.0,
            duty: DutySchedule::Constant { fraction: 0.05 },
            island: PieceForm::Power { c: 1.0, p: 3.5 },
            background: PieceForm::Exp { k1: 1.0, k2: 1.0 },
        };
        let core = vec![Piece::new(0.0, 20.0, PieceForm::Zero)];
        let f = PiecewiseFunction::even_with_tail("t", core, tail).unwrap();
        let pieces = f.pieces_in(-100.0, 100.0).unwrap();
        for w in pieces.windows(2) {
            assert_eq!(w[0].hi, w[1].lo);
        }
        for p in &pieces {
            let mid = 0.5 * (p.lo + p.hi);
            assert_eq!(f.form_at(mid), p.form, "piece {p:?}");
        }
        assert_eq!(pieces.first().unwrap().lo, -100.0);
        assert_eq!(pieces.last().unwrap().hi, 100.0);
    }

    #[test]
    fn thinning_duty_is_one_below_first_block() {
        let d = DutySchedule::IteratedLogThinning { c: 1.0, delta: 0.5, first_block: 4 };
        assert_eq!(d.at(0.0), 1.0);
        assert_eq!(d.at(15.0), 1.0);
        assert!(d.at(1e6) < d.at(1e3));
    }
}
