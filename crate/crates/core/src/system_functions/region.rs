use super::{Piece, PieceForm, PiecewiseFunction, Symmetry};
use crate::error::{Error, Result};
use crate::interval_sets::IntervalSet;

/// The growth threshold defining a sublevel set `{x : |f(x)| < threshold(x)}`.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSpec {
    /// `L·|x|^b`, the threshold of `S_b^L`.
    Power { l: f64, b: f64 },
    /// `h(|x|)` for a nonnegative nondecreasing `h` given on `[0, ∞)`.
    GeneralH(PiecewiseFunction),
}

impl ThresholdSpec {
    pub fn power(l: f64, b: f64) -> Result<Self> {
        if !(l > 0.0) || !(b > 0.0) || !l.is_finite() || !b.is_finite() {
            return Err(Error::domain(format!("power threshold needs L > 0 and b > 0, got L={l}, b={b}")));
        }
        Ok(ThresholdSpec::Power { l, b })
    }

    pub fn general_h(h: PiecewiseFunction) -> Result<Self> {
        if h.symmetry() != Symmetry::Even {
            return Err(Error::domain("h must be given on [0, ∞)"));
        }
        Ok(ThresholdSpec::GeneralH(h))
    }

    /// `ln threshold(x)`.
    pub fn ln_at(&self, x: f64) -> f64 {
        match self {
            ThresholdSpec::Power { l, b } => PieceForm::Power { c: *l, p: *b }.ln_abs(x),
            ThresholdSpec::GeneralH(h) => h.ln_abs(x.abs()),
        }
    }

    /// Threshold pieces over `u ∈ [u_lo, u_hi]`, `0 <= u_lo < u_hi`.
    fn pieces_on(&self, u_lo: f64, u_hi: f64) -> Result<Vec<Piece>> {
        match self {
            ThresholdSpec::Power { l, b } => Ok(vec![Piece::new(u_lo, u_hi, PieceForm::Power { c: *l, p: *b })]),
            ThresholdSpec::GeneralH(h) => h.pieces_in(u_lo, u_hi),
        }
    }
}

/// `{x : |f(x)| < threshold(x)} ∩ window`.
///
/// Each pair of forms gives `ln|f| - ln threshold = α + β·u + γ·ln u` with
/// `u = |x|`. Pure power pairs and pure exponential pairs are solved in closed
/// form. Mixed pairs are monotone on either side of `u = -γ/β`; the sign of the
/// difference is sampled on `grid_n` points per piece plus that turning point,
/// and each sign change is bisected to `1e-10 · (window width)`.
pub fn sublevel_region(
    f: &PiecewiseFunction,
    threshold: &ThresholdSpec,
    window: (f64, f64),
    grid_n: usize,
) -> Result<IntervalSet> {
    let (lo, hi) = window;
    if grid_n < 2 {
        return Err(Error::domain(format!("grid_n must be >= 2, got {grid_n}")));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!("degenerate window ({lo}, {hi})")));
    }
    let tol = 1e-10 * (hi - lo);
    let mut raw = Vec::new();
    for piece in f.pieces_in(lo, hi)? {
        // split at the origin so every segment maps monotonically onto u = |x|
        let halves = [(piece.lo, piece.hi.min(0.0), -1.0), (piece.lo.max(0.0), piece.hi, 1.0)];
        for (a, b, sign) in halves {
            if !(a < b) {
                continue;
            }
            let (u_lo, u_hi) = if sign < 0.0 { (-b, -a) } else { (a, b) };
            for th in threshold.pieces_on(u_lo, u_hi)? {
                for (ua, ub) in included_u(piece.form, th.form, th.lo, th.hi, grid_n, tol) {
                    raw.push(if sign < 0.0 { (-ub, -ua) } else { (ua, ub) });
                }
            }
        }
    }
    IntervalSet::normalize(&raw)
}

/// Subintervals of `[u_lo, u_hi] ⊂ [0, ∞)` where `|f(u)| < h(u)`.
fn included_u(f: PieceForm, h: PieceForm, u_lo: f64, u_hi: f64, grid_n: usize, tol: f64) -> Vec<(f64, f64)> {
    let whole = vec![(u_lo, u_hi)];
    let (fa, fb, fc) = match (f.log_linear(), h.log_linear()) {
        (_, None) => return Vec::new(),
        (None, Some(_)) => return whole,
        (Some(fl), Some(_)) => fl,
    };
    let (ha, hb, hc) = h.log_linear().unwrap();
    let (alpha, beta, gamma) = (fa - ha, fb - hb, fc - hc);
    let clip = |a: f64, b: f64| -> Vec<(f64, f64)> {
        let (a, b) = (a.max(u_lo), b.min(u_hi));
        if a < b {
            vec![(a, b)]
        } else {
            Vec::new()
        }
    };

    if beta == 0.0 && gamma == 0.0 {
        return if alpha < 0.0 { whole } else { Vec::new() };
    }
    if beta == 0.0 {
        // power against power: gamma·ln u < -alpha
        let cross = (-alpha / gamma).exp();
        return if gamma > 0.0 { clip(u_lo, cross) } else { clip(cross, u_hi) };
    }
    if gamma == 0.0 {
        // exponential against exponential or constant: beta·u < -alpha
        let cross = -alpha / beta;
        return if beta > 0.0 { clip(u_lo, cross) } else { clip(cross, u_hi) };
    }

    let inside = |u: f64| {
        let log_term = if u == 0.0 { f64::NEG_INFINITY * gamma } else { gamma * u.ln() };
        alpha + beta * u + log_term < 0.0
    };
    let mut grid: Vec<f64> = (0..grid_n)
        .map(|i| u_lo + (u_hi - u_lo) * i as f64 / (grid_n - 1) as f64)
        .collect();
    let turn = -gamma / beta;
    if turn > u_lo && turn < u_hi {
        let at = grid.partition_point(|&g| g < turn);
        grid.insert(at, turn);
    }
    *grid.last_mut().unwrap() = u_hi;

    let mut out = Vec::new();
    let mut run_start = inside(grid[0]).then_some(grid[0]);
    let mut prev = (grid[0], inside(grid[0]));
    for &u in &grid[1..] {
        let now = inside(u);
        if now != prev.1 {
            let root = bisect(prev.0, u, prev.1, &inside, tol);
            match run_start.take() {
                Some(start) => out.push((start, root)),
                None => run_start = Some(root),
            }
        }
        prev = (u, now);
    }
    if let Some(start) = run_start {
        out.push((start, u_hi));
    }
    out
}

fn bisect(mut a: f64, mut b: f64, a_inside: bool, inside: &impl Fn(f64) -> bool, tol: f64) -> f64 {
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if inside(mid) == a_inside {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system_functions::FamilySpec;

    /// Midpoint rasterization of the defining predicate, evaluated pointwise.
    fn rasterized(f: &PiecewiseFunction, th: &ThresholdSpec, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).round() as usize;
        (0..n)
            .filter(|&i| {
                let x = lo + (i as f64 + 0.5) * step;
                f.ln_abs(x) < th.ln_at(x)
            })
            .count() as f64
            * step
    }

    #[test]
    fn square_below_fourth_power() {
        let f = FamilySpec::PurePower { c: 1.0, p: 2.0 }.build().unwrap();
        let th = ThresholdSpec::power(1.0, 4.0).unwrap();
        let s = sublevel_region(&f, &th, (-10.0, 10.0), 16).unwrap();
        // x^2 < x^4 exactly when |x| > 1
        assert!((s.measure() - 18.0).abs() < 1e-6, "{s:?}");
        assert_eq!(s.intervals(), &[(-10.0, -1.0), (1.0, 10.0)]);
    }

    #[test]
    fn exponential_under_quartic_matches_raster() {
        let f = FamilySpec::PureExp { k1: 1.0, k2: 1.0 }.build().unwrap();
        let th = ThresholdSpec::power(10.0, 4.0).unwrap();
        let s = sublevel_region(&f, &th, (0.0, 50.0), 64).unwrap();
        let oracle = rasterized(&f, &th, 0.0, 50.0, 1e-4);
        assert_eq!(s.len(), 1);
        assert!((s.measure() - oracle).abs() < 1e-3, "{} vs {oracle}", s.measure());
        let (a, b) = s.intervals()[0];
        assert!((a.exp() - 10.0 * a.powi(4)).abs() < 1e-6 * a.exp());
        assert!((b.exp() - 10.0 * b.powi(4)).abs() < 1e-6 * b.exp());
    }

    #[test]
    fn zero_function_fills_window() {
        let f = FamilySpec::Zero.build().unwrap();
        let th = ThresholdSpec::power(1.0, 4.0).unwrap();
        let s = sublevel_region(&f, &th, (-5.0, 5.0), 8).unwrap();
        assert_eq!(s.measure(), 10.0);
    }

    #[test]
    fn sparse_grid_still_finds_thin_region() {
        // the turning point is inserted, so even grid_n = 2 on a huge window sees it
        let f = FamilySpec::PureExp { k1: 1.0, k2: 1.0 }.build().unwrap();
        let th = ThresholdSpec::power(1.0, 4.0).unwrap();
        let s = sublevel_region(&f, &th, (-1e5, 1e5), 2).unwrap();
        let near = sublevel_region(&f, &th, (-20.0, 20.0), 2).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.measure() - near.measure()).abs() < 1e-4);
        assert!((near.measure() - rasterized(&f, &th, -20.0, 20.0, 1e-4)).abs() < 1e-2);
    }

    #[test]
    fn islands_are_inside_doubled_threshold() {
        let f = FamilySpec::Islands { p: 3.5, scale: 1.0, epsilon: 0.05, period: 20.0, k1: 1.0, k2: 1.0 }.build().unwrap();
        let th = ThresholdSpec::power(2.0, 3.5).unwrap();
        let s = sublevel_region(&f, &th, (-4000.0, 4000.0), 16).unwrap();
        for j in 1..200 {
            let lo = 20.0 * j as f64;
            assert!((s.measure_between(lo, lo + 1.0) - 1.0).abs() < 1e-9, "island {j}");
            assert!((s.measure_between(-lo - 1.0, -lo) - 1.0).abs() < 1e-9, "island -{j}");
        }
        for m in [10u32, 50, 200] {
            let l = 20.0 * m as f64;
            let d = s.measure_window(0.0, l).unwrap() / (2.0 * l);
            assert!((d - 0.05).abs() <= 2.0 / m as f64, "m = {m}: {d}");
        }
    }

    #[test]
    fn region_agrees_with_raster_on_desk_windows() {
        let cases = [
            (FamilySpec::Islands { p: 3.5, scale: 1.0, epsilon: 0.3, period: 3.0, k1: 1.0, k2: 1.0 }, ThresholdSpec::power(1.0, 4.0).unwrap(), (-50.0, 50.0)),
            (FamilySpec::PurePower { c: 3.0, p: 2.5 }, ThresholdSpec::power(0.5, 2.0).unwrap(), (-60.0, 40.0)),
            (FamilySpec::PureExp { k1: 0.5, k2: 0.3 }, ThresholdSpec::power(2.0, 3.0).unwrap(), (-100.0, 0.0)),
        ];
        for (spec, th, (lo, hi)) in cases {
            let f = spec.build().unwrap();
            let s = sublevel_region(&f, &th, (lo, hi), 32).unwrap();
            let oracle = rasterized(&f, &th, lo, hi, 1e-4);
            assert!((s.measure() - oracle).abs() < 1e-2, "{spec:?}: {} vs {oracle}", s.measure());
        }
    }

    #[test]
    fn general_h_threshold() {
        // h = u^4 on [0, 2), continued by 16·e^{u-2}
        let e2 = 2f64.exp();
        let h = PiecewiseFunction::even(
            "h",
            vec![
                Piece::new(0.0, 2.0, PieceForm::Power { c: 1.0, p: 4.0 }),
                Piece::new(2.0, f64::INFINITY, PieceForm::Exp { k1: 16.0 / e2, k2: 1.0 }),
            ],
        )
        .unwrap();
        let th = ThresholdSpec::general_h(h).unwrap();
        let f = FamilySpec::PurePower { c: 1.0, p: 5.0 }.build().unwrap();
        let s = sublevel_region(&f, &th, (-30.0, 30.0), 64).unwrap();
        let oracle = rasterized(&f, &th, -30.0, 30.0, 1e-4);
        assert!((s.measure() - oracle).abs() < 1e-2, "{} vs {oracle}", s.measure());
    }

    #[test]
    fn argument_errors() {
        let f = FamilySpec::Zero.build().unwrap();
        let th = ThresholdSpec::power(1.0, 4.0).unwrap();
        assert!(sublevel_region(&f, &th, (0.0, 1.0), 1).is_err());
        assert!(sublevel_region(&f, &th, (1.0, 1.0), 4).is_err());
        assert!(sublevel_region(&f, &th, (2.0, 1.0), 4).is_err());
        assert!(ThresholdSpec::power(0.0, 4.0).is_err());
    }
}
