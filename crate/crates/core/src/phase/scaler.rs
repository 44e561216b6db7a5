use crate::trace::{FeatureVector, NUM_FEATURES};

use super::{PhaseError, Point};

/// Per-feature min-max scaler into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    bounds: [(f64, f64); NUM_FEATURES],
}

impl Scaler {
    /// Builds a scaler from explicit `(min, max)` pairs.
    pub fn from_bounds(bounds: [(f64, f64); NUM_FEATURES]) -> Result<Self, PhaseError> {
        for (id, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(PhaseError::BadScaler {
                    feature: id,
                    lo,
                    hi,
                });
            }
        }
        Ok(Scaler { bounds })
    }

    pub fn bounds(&self) -> &[(f64, f64); NUM_FEATURES] {
        &self.bounds
    }

    /// Scales one feature. Values outside the fitted range clamp to the
    /// nearest endpoint; a constant feature always maps to 0.
    #[inline]
    pub fn scale(&self, feature: usize, value: f64) -> f64 {
        let (lo, hi) = self.bounds[feature];
        if hi <= lo {
            return 0.0;
        }
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn apply(&self, x: &FeatureVector) -> Point {
        std::array::from_fn(|i| self.scale(i, x[i]))
    }
}

/// Fits per-feature minimum and maximum over the given samples.
pub fn fit_scaler<'a, I>(samples: I) -> Result<Scaler, PhaseError>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); NUM_FEATURES];
    let mut n = 0usize;
    for x in samples {
        n += 1;
        for (b, &v) in bounds.iter_mut().zip(x.as_array()) {
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
    }
    if n == 0 {
        return Err(PhaseError::EmptyInput);
    }
    Scaler::from_bounds(bounds)
}
