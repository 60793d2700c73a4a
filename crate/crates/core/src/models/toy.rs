//! Continuous 2-D function whose gradient flips between `(1,0)` and `(0,1)`
//! on unit-width bands of `|a − b|`.
//!
//! ```text
//! f(a,b) = max(a,b) − ⌊|a−b|⌋/2        if ⌊|a−b|⌋ is even
//! f(a,b) = min(a,b) + (⌊|a−b|⌋+1)/2    if ⌊|a−b|⌋ is odd
//! ```

/// Distance to a band boundary below which a gradient is reported as non-smooth.
pub const KINK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ToyFunction;

impl ToyFunction {
    pub fn value(&self, a: f64, b: f64) -> f64 {
        let band = (a - b).abs().floor();
        if band % 2.0 == 0.0 {
            a.max(b) - band / 2.0
        } else {
            a.min(b) + (band + 1.0) / 2.0
        }
    }

    /// Piecewise gradient and whether `(a, b)` lies on a band boundary.
    ///
    /// Even bands follow `max(a,b)`, odd bands follow `min(a,b)`.
    pub fn gradient(&self, a: f64, b: f64) -> ([f64; 2], bool) {
        let gap = (a - b).abs();
        let band = gap.floor();
        let nonsmooth = (gap - gap.round()).abs() <= KINK_TOLERANCE;
        let follow_a = if band % 2.0 == 0.0 { a > b } else { a < b };
        let g = if follow_a { [1.0, 0.0] } else { [0.0, 1.0] };
        (g, nonsmooth)
    }
}
