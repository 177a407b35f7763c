//! One-dimensional golden-section minimization.
//!
//! Each iteration shrinks the bracket by `1/phi` and reuses one of the two
//! interior probes, so it costs a single function evaluation.

/// `(sqrt(5) - 1) / 2`
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Copy, Debug)]
pub struct GoldenSection {
    /// Stop when `(hi - lo) <= rel_tol * |midpoint|`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for GoldenSection {
    fn default() -> Self {
        Self {
            rel_tol: 1e-5,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl GoldenSection {
    /// Minimizes `f` on `[lo, hi]`, assuming unimodality.
    ///
    /// The returned point is never worse than either original bracket
    /// endpoint: if an endpoint beats the final interior probe it is
    /// returned instead.
    pub fn minimize<F: FnMut(f64) -> f64>(&self, mut f: F, lo: f64, hi: f64) -> Minimum {
        let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let (fa0, fb0) = (f(a), f(b));
        let (a0, b0) = (a, b);

        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = f(c);
        let mut fd = f(d);
        let mut iterations = 0;
        let width_ok = |a: f64, b: f64, tol: f64| (b - a) <= tol * (0.5 * (a + b)).abs();
        while !width_ok(a, b, self.rel_tol) && iterations < self.max_iter {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = f(d);
            }
            iterations += 1;
        }
        let converged = width_ok(a, b, self.rel_tol);

        let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
        for (x, v) in [(a0, fa0), (b0, fb0)] {
            if v < best.1 {
                best = (x, v);
            }
        }
        Minimum {
            x: best.0,
            value: best.1,
            iterations,
            converged,
        }
    }
}
