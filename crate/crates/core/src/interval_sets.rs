//! Finite unions of real intervals and the Lebesgue-measure quotients built on them.
//!
//! Endpoints carry measure-theoretic meaning only: `[a, b]`, `(a, b)` and the
//! half-open variants are the same value here. Every set is kept normalized
//! (sorted, disjoint, no zero-width members), so measure is a plain sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted, pairwise disjoint union of intervals with strictly separated gaps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

/// How a density profile places its window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityMode {
    /// `ℓ(S ∩ [-l, l]) / (2l)`.
    Symmetric,
    /// `sup_x ℓ(S ∩ [x-l, x+l]) / l` over a finite shift grid with step
    /// `step_fraction * l`. The grid covers the hull of `S` plus one window on
    /// each side, so the reported value is a lower bound of the true supremum.
    SupShifted { step_fraction: f64 },
}

impl DensityMode {
    pub const SUP_SHIFTED: DensityMode = DensityMode::SupShifted {
        step_fraction: 0.25,
    };
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Sorts, merges overlapping or touching pairs, and drops zero-width pairs.
    pub fn normalize(raw: &[(f64, f64)]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(raw.len());
        for &(lo, hi) in raw {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::domain(format!(
                    "interval endpoint is not finite: ({lo}, {hi})"
                )));
            }
            if lo > hi {
                return Err(Error::domain(format!("interval has lo > hi: ({lo}, {hi})")));
            }
            if lo < hi {
                pairs.push((lo, hi));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (lo, hi) in pairs {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => {
                    if hi > last.1 {
                        last.1 = hi;
                    }
                }
                _ => merged.push((lo, hi)),
            }
        }
        Ok(Self { intervals: merged })
    }

    /// Single interval `[lo, hi]`; empty when `lo == hi`.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::normalize(&[(lo, hi)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }

    /// Smallest interval containing the set.
    pub fn hull(&self) -> Option<(f64, f64)> {
        Some((self.intervals.first()?.0, self.intervals.last()?.1))
    }

    pub fn contains(&self, x: f64) -> bool {
        let idx = self.intervals.partition_point(|&(_, hi)| hi < x);
        self.intervals
            .get(idx)
            .is_some_and(|&(lo, hi)| lo <= x && x <= hi)
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut raw = self.intervals.clone();
        raw.extend_from_slice(&other.intervals);
        // Both inputs are already finite and well-formed.
        Self::normalize(&raw).expect("union of normalized sets")
    }

    /// `S ∩ [lo, hi]`.
    pub fn clip(&self, lo: f64, hi: f64) -> IntervalSet {
        let start = self.intervals.partition_point(|&(_, b)| b <= lo);
        let intervals = self.intervals[start..]
            .iter()
            .take_while(|&&(a, _)| a < hi)
            .map(|&(a, b)| (a.max(lo), b.min(hi)))
            .filter(|(a, b)| a < b)
            .collect();
        IntervalSet { intervals }
    }

    /// `ℓ(S ∩ [lo, hi])` for any `lo <= hi`.
    pub fn measure_between(&self, lo: f64, hi: f64) -> f64 {
        let start = self.intervals.partition_point(|&(_, b)| b <= lo);
        let mut total = 0.0;
        for &(a, b) in &self.intervals[start..] {
            if a >= hi {
                break;
            }
            let width = b.min(hi) - a.max(lo);
            if width > 0.0 {
                total += width;
            }
        }
        total
    }

    /// `ℓ(S ∩ [center - halfwidth, center + halfwidth])`.
    pub fn measure_window(&self, center: f64, halfwidth: f64) -> Result<f64> {
        if !(halfwidth > 0.0) || !halfwidth.is_finite() || !center.is_finite() {
            return Err(Error::domain(format!(
                "window needs finite center and halfwidth > 0, got center={center}, halfwidth={halfwidth}"
            )));
        }
        Ok(self.measure_between(center - halfwidth, center + halfwidth))
    }

    /// The quotient `ℓ(S ∩ [-l, l]) / l` used by the positive-density conditions.
    pub fn density_quotient(&self, radius: f64) -> Result<f64> {
        Ok(self.measure_window(0.0, radius)? / radius)
    }

    /// Density per radius. Symmetric values lie in `[0, 1]`, sup-shifted in `[0, 2]`.
    pub fn density_profile(&self, radii: &[f64], mode: DensityMode) -> Result<Vec<(f64, f64)>> {
        if radii.is_empty() {
            return Err(Error::domain("density profile needs at least one radius"));
        }
        for pair in radii.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::domain("radii must be strictly ascending"));
            }
        }
        if let Some(&r) = radii.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::domain(format!("radius must be positive and finite, got {r}")));
        }
        radii
            .iter()
            .map(|&l| {
                let value = match mode {
                    DensityMode::Symmetric => self.measure_window(0.0, l)? / (2.0 * l),
                    DensityMode::SupShifted { step_fraction } => {
                        self.sup_shifted_density(l, step_fraction)?
                    }
                };
                Ok((l, value))
            })
            .collect()
    }

    fn sup_shifted_density(&self, l: f64, step_fraction: f64) -> Result<f64> {
        if !(step_fraction > 0.0) || step_fraction > 1.0 {
            return Err(Error::domain(format!(
                "shift step fraction must lie in (0, 1], got {step_fraction}"
            )));
        }
        let Some((lo, hi)) = self.hull() else {
            return Ok(0.0);
        };
        let step = step_fraction * l;
        let first = lo - l;
        let last = hi + l;
        let n = ((last - first) / step).ceil() as u64;
        let mut best = 0.0f64;
        for k in 0..=n {
            let center = (first + k as f64 * step).min(last);
            best = best.max(self.measure_between(center - l, center + l) / l);
        }
        Ok(best)
    }
}
