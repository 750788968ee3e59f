//! Piecewise cubic Hermite record of E[n_R(t) | s, ℬ(t)].

use crate::demod::RateModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub t: f64,
    pub value: f64,
    pub slope: f64,
}

/// Knots sorted by time. Two knots may share a time: the first is the left
/// limit and the second the right limit of a jump.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HermiteTrace {
    knots: Vec<Knot>,
    cumulative: Vec<f64>,
}

fn cubic(k0: &Knot, k1: &Knot, t: f64) -> f64 {
    let h = k1.t - k0.t;
    let s = (t - k0.t) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * k0.value + h10 * h * k0.slope + h01 * k1.value + h11 * h * k1.slope
}

/// ∫ from k0.t to t of the cubic, by two-point Gauss–Legendre (exact).
fn partial_integral(k0: &Knot, k1: &Knot, t: f64) -> f64 {
    let half = 0.5 * (t - k0.t);
    if half <= 0.0 {
        return 0.0;
    }
    let mid = k0.t + half;
    let g = half / 3f64.sqrt();
    half * (cubic(k0, k1, mid - g) + cubic(k0, k1, mid + g))
}

impl HermiteTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a knot; times must be nondecreasing.
    pub fn push(&mut self, knot: Knot) {
        if let Some(last) = self.knots.last() {
            assert!(knot.t >= last.t, "trace knots must be time ordered");
            let c = *self.cumulative.last().unwrap();
            let h = knot.t - last.t;
            let add = if h > 0.0 {
                h * (last.value + knot.value) / 2.0 + h * h * (last.slope - knot.slope) / 12.0
            } else {
                0.0
            };
            self.cumulative.push(c + add);
        } else {
            self.cumulative.push(0.0);
        }
        self.knots.push(knot);
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Index of the segment start for `t` strictly inside the covered span,
    /// or `Err(i)` if `t` equals the time of knot `i` (first such knot).
    fn locate(&self, t: f64) -> Result<usize, usize> {
        let i = self.knots.partition_point(|k| k.t < t);
        if i < self.knots.len() && self.knots[i].t == t {
            return Err(i);
        }
        Ok(i.saturating_sub(1).min(self.knots.len().saturating_sub(2)))
    }

    fn cumulative_at(&self, t: f64) -> f64 {
        if self.knots.len() < 2 || t <= self.knots[0].t {
            return 0.0;
        }
        match self.locate(t) {
            Err(i) => self.cumulative[i],
            Ok(i) => {
                let t = t.min(self.knots.last().unwrap().t);
                self.cumulative[i] + partial_integral(&self.knots[i], &self.knots[i + 1], t)
            }
        }
    }
}

impl RateModel for HermiteTrace {
    fn value(&self, t: f64) -> f64 {
        match self.knots.len() {
            0 => 0.0,
            1 => self.knots[0].value,
            _ => match self.locate(t) {
                Err(i) => self.knots[i].value,
                Ok(i) => {
                    let t = t.clamp(self.knots[0].t, self.knots.last().unwrap().t);
                    cubic(&self.knots[i], &self.knots[i + 1], t)
                }
            },
        }
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        self.cumulative_at(b) - self.cumulative_at(a)
    }

    fn span(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_of(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, times: &[f64]) -> HermiteTrace {
        let mut tr = HermiteTrace::new();
        for &t in times {
            tr.push(Knot {
                t,
                value: f(t),
                slope: df(t),
            });
        }
        tr
    }

    #[test]
    fn cubics_are_reproduced_exactly() {
        let f = |t: f64| 1.0 + 2.0 * t - 3.0 * t * t + 0.5 * t * t * t;
        let df = |t: f64| 2.0 - 6.0 * t + 1.5 * t * t;
        let tr = trace_of(f, df, &[0.0, 0.3, 1.0, 1.1, 2.0]);
        let big_f = |t: f64| t + t * t - t.powi(3) + 0.125 * t.powi(4);
        for &(a, b) in &[(0.0, 2.0), (0.1, 0.2), (0.25, 1.05), (0.7, 1.9)] {
            assert!((tr.integral(a, b) - (big_f(b) - big_f(a))).abs() < 1e-13);
        }
        for &t in &[0.0, 0.15, 0.3, 0.9, 1.7] {
            assert!((tr.value(t) - f(t)).abs() < 1e-13);
        }
    }

    #[test]
    fn jump_reads_left_limit_at_its_time() {
        let mut tr = HermiteTrace::new();
        tr.push(Knot { t: 0.0, value: 1.0, slope: 0.0 });
        tr.push(Knot { t: 1.0, value: 1.0, slope: 0.0 });
        tr.push(Knot { t: 1.0, value: 3.0, slope: 0.0 });
        tr.push(Knot { t: 2.0, value: 3.0, slope: 0.0 });
        assert_eq!(tr.value(1.0), 1.0);
        assert!((tr.value(1.5) - 3.0).abs() < 1e-15);
        assert!((tr.integral(0.0, 2.0) - 4.0).abs() < 1e-14);
        assert!((tr.integral(0.5, 1.5) - 2.0).abs() < 1e-14);
    }
}
