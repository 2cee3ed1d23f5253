use super::{Piece, PieceForm, PiecewiseFunction, ThresholdSpec};
use crate::error::{Error, Result};

/// Sampled check of `|f(x)| <= k1·e^{k2|x|}` on `window`.
///
/// Every piece meeting the window is sampled at `samples` evenly spaced points
/// including both of its ends; comparison is done on logarithms so that
/// exponential pieces never overflow.
pub fn verify_growth_envelope(
    f: &PiecewiseFunction,
    k1: f64,
    k2: f64,
    window: (f64, f64),
    samples: usize,
) -> Result<bool> {
    if !(k1 > 0.0) || !(k2 > 0.0) {
        return Err(Error::domain(format!("envelope needs k1, k2 > 0, got k1={k1}, k2={k2}")));
    }
    if samples < 100 {
        return Err(Error::domain(format!("envelope audit needs >= 100 samples per piece, got {samples}")));
    }
    let envelope = |x: f64| k1.ln() + k2 * x.abs();
    let below = |ln_f: f64, x: f64| {
        let bound = envelope(x);
        ln_f <= bound + 1e-12 * bound.abs().max(1.0)
    };
    for piece in f.pieces_in(window.0, window.1)? {
        for i in 0..samples {
            let x = piece.lo + (piece.hi - piece.lo) * i as f64 / (samples - 1) as f64;
            if !below(piece.form.ln_abs(x), x) {
                return Ok(false);
            }
        }
        for x in [piece.lo, piece.hi] {
            if !below(f.ln_abs(x), x) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Outcome of the summability audit for a general threshold `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct HCondition {
    pub converges: bool,
    /// `S_T = Σ_{t=1}^{T} sup_{x >= e^{2^t}} x^{-1/(16t²)} g(x)` for `T = 1..=t_max`.
    pub partial_sums: Vec<f64>,
}

const CAUCHY_TOL: f64 = 1e-9;
const CAUCHY_WINDOW: usize = 5;
const GRID_POINTS: usize = 512;

/// Partial sums of `Σ_t sup_{x ∈ [e^{2^t}, ∞)} x^{-1/(16t²)} g(x)` with
/// `g(x) = x^{-1/4} h^{-1}(x)`.
///
/// Everything runs on `u = ln x`. Each supremum is taken over a uniform grid in
/// `u` on `[2^t, 2^{t+6}]`; beyond that the last piece of `h` governs the
/// inverse and its supremum is found analytically.
pub fn verify_h_condition(threshold: &ThresholdSpec, t_max: usize) -> Result<HCondition> {
    if t_max == 0 || t_max > 60 {
        return Err(Error::domain(format!("t_max must lie in 1..=60, got {t_max}")));
    }
    let pieces = match threshold {
        ThresholdSpec::Power { l, b } => vec![Piece::new(0.0, f64::INFINITY, PieceForm::Power { c: *l, p: *b })],
        ThresholdSpec::GeneralH(h) => {
            if h.tail().is_some() {
                return Err(Error::domain("h with an island tail is not monotone"));
            }
            h.pieces().to_vec()
        }
    };
    let inverse = LogInverse::new(pieces)?;

    let mut partial_sums = Vec::with_capacity(t_max);
    let mut total = 0.0;
    for t in 1..=t_max {
        let ln_term = inverse.ln_sup_term(t);
        total += ln_term.exp();
        partial_sums.push(total);
    }
    let back = partial_sums.len().saturating_sub(CAUCHY_WINDOW + 1);
    let reference = if partial_sums.len() > CAUCHY_WINDOW { partial_sums[back] } else { 0.0 };
    let last = *partial_sums.last().unwrap();
    let converges = last.is_finite() && (last - reference).abs() < CAUCHY_TOL;
    Ok(HCondition { converges, partial_sums })
}

/// `ln h^{-1}(e^v)` for a strictly increasing piecewise `h` on `[0, ∞)`.
struct LogInverse {
    pieces: Vec<Piece>,
    /// `ln h` at each piece's left end.
    ln_lo: Vec<f64>,
    /// `ln h` at each piece's right end (limit from the left).
    ln_hi: Vec<f64>,
}

impl LogInverse {
    fn new(pieces: Vec<Piece>) -> Result<Self> {
        for p in &pieces {
            let strictly_increasing = match p.form {
                PieceForm::Power { c, p } => c > 0.0 && p > 0.0,
                PieceForm::Exp { k1, k2 } => k1 > 0.0 && k2 > 0.0,
                PieceForm::Const { .. } | PieceForm::Zero => false,
            };
            if !strictly_increasing {
                return Err(Error::domain(format!(
                    "h is not invertible: plateau or decreasing form {:?} on [{}, {})",
                    p.form, p.lo, p.hi
                )));
            }
        }
        let ln_lo: Vec<f64> = pieces.iter().map(|p| p.form.ln_abs(p.lo)).collect();
        let ln_hi: Vec<f64> = pieces.iter().map(|p| p.form.ln_abs(p.hi)).collect();
        for i in 1..pieces.len() {
            if ln_lo[i] < ln_hi[i - 1] - 1e-12 * ln_hi[i - 1].abs().max(1.0) {
                return Err(Error::domain(format!("h decreases across the junction at {}", pieces[i].lo)));
            }
        }
        // sampled audit across the finite part of the domain
        let span = pieces.last().map_or(1.0, |p| p.lo.max(1.0)) * 2.0;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=4096 {
            let u = span * i as f64 / 4096.0;
            let idx = pieces.partition_point(|p| p.hi <= u);
            let v = pieces[idx].form.ln_abs(u);
            if v < prev {
                return Err(Error::domain(format!("h is not monotone near {u}")));
            }
            prev = v;
        }
        Ok(Self { pieces, ln_lo, ln_hi })
    }

    fn ln_inverse(&self, v: f64) -> f64 {
        let idx = self.ln_hi.partition_point(|&hi| hi <= v).min(self.pieces.len() - 1);
        let piece = &self.pieces[idx];
        if v <= self.ln_lo[idx] {
            // inside a jump: the generalized inverse sits at the jump
            return piece.lo.ln();
        }
        Self::invert_form(piece.form, v)
    }

    fn invert_form(form: PieceForm, v: f64) -> f64 {
        match form {
            PieceForm::Power { c, p } => (v - c.ln()) / p,
            PieceForm::Exp { k1, k2 } => ((v - k1.ln()) / k2).ln(),
            PieceForm::Const { .. } | PieceForm::Zero => unreachable!("rejected in LogInverse::new"),
        }
    }

    /// `ln sup_{u >= 2^t} F_t(u)` where `F_t(u) = -u(1/4 + 1/(16t²)) + ln h^{-1}(e^u)`.
    fn ln_sup_term(&self, t: usize) -> f64 {
        let kappa = 0.25 + 1.0 / (16.0 * (t * t) as f64);
        let objective = |u: f64| -kappa * u + self.ln_inverse(u);
        let u_start = 2f64.powi(t as i32);
        let last = self.pieces.len() - 1;
        let u_tail = (2f64.powi(t as i32 + 6)).max(self.ln_lo[last]).max(u_start);

        let mut best = f64::NEG_INFINITY;
        for i in 0..=GRID_POINTS {
            let u = u_start + (u_tail - u_start) * i as f64 / GRID_POINTS as f64;
            best = best.max(objective(u));
        }
        best.max(self.tail_sup(self.pieces[last].form, kappa, u_tail))
    }

    /// Supremum of `-κu + ln h_last^{-1}(e^u)` over `u >= from`.
    fn tail_sup(&self, form: PieceForm, kappa: f64, from: f64) -> f64 {
        let value = |u: f64| -kappa * u + Self::invert_form(form, u);
        match form {
            PieceForm::Power { p, .. } => {
                if 1.0 / p - kappa > 0.0 {
                    f64::INFINITY
                } else {
                    value(from)
                }
            }
            PieceForm::Exp { k1, .. } => {
                // derivative 1/(u - ln k1) - κ decreases in u
                let peak = k1.ln() + 1.0 / kappa;
                value(from.max(peak))
            }
            PieceForm::Const { .. } | PieceForm::Zero => unreachable!("rejected in LogInverse::new"),
        }
    }
}
