//! Inverse-distance-weighted interpolation surrogate.

pub const IDW_POWER: f64 = 2.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdwSurrogate {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl IdwSurrogate {
    pub fn fit(points: Vec<Vec<f64>>, values: Vec<f64>) -> Self {
        assert_eq!(points.len(), values.len());
        IdwSurrogate { points, values }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every data site coincides, so the surrogate carries no
    /// spatial information.
    pub fn is_degenerate(&self) -> bool {
        self.points.windows(2).all(|w| w[0] == w[1])
    }

    /// Weighted mean of the data with weights `1/d^p`. At a data site the
    /// recorded value is returned exactly (first site wins on duplicates).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, &v) in self.points.iter().zip(&self.values) {
            let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 == 0.0 {
                return v;
            }
            let w = 1.0 / d2.powf(IDW_POWER / 2.0);
            num += w * v;
            den += w;
        }
        if den == 0.0 {
            return f64::NAN;
        }
        (num / den).clamp(self.min_value(), self.max_value())
    }

    fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
