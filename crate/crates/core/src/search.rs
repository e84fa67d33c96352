//! Bracketed one-dimensional maximization: a uniform scan followed by
//! golden-section contraction around the best scan point.

/// Scan density and stopping width of [`maximize_1d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSettings {
    pub grid_points: usize,
    /// Golden-section stops once the bracket is narrower than this fraction of
    /// the original search interval.
    pub rel_tol: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            grid_points: 201,
            rel_tol: 1e-10,
        }
    }
}

fn finite_or_low(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximizes `f` over `[lo, hi]`.
///
/// When `current` is given the result is never worse than `f(current)`; ties
/// keep `current`, so an exact optimum is a fixed point.
pub fn maximize_1d<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    current: Option<f64>,
    settings: SearchSettings,
) -> (f64, f64) {
    let mut f = move |x: f64| finite_or_low(f(x));
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let m = settings.grid_points.max(3);
    let step = (hi - lo) / (m - 1) as f64;

    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..m {
        let v = f(lo + step * i as f64);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut best_x = lo + step * best_i as f64;

    if step > 0.0 {
        let mut a = lo + step * best_i.saturating_sub(1) as f64;
        let mut b = (lo + step * (best_i + 1) as f64).min(hi);
        let invphi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - invphi * (b - a);
        let mut d = a + invphi * (b - a);
        let mut fc = f(c);
        let mut fd = f(d);
        let stop = settings.rel_tol * (hi - lo);
        while b - a > stop {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - invphi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + invphi * (b - a);
                fd = f(d);
            }
        }
        let (x, v) = if fc >= fd { (c, fc) } else { (d, fd) };
        if v > best_v {
            best_v = v;
            best_x = x;
        }
    }

    if let Some(x0) = current {
        let v0 = f(x0);
        if v0 >= best_v {
            return (x0, v0);
        }
    }
    (best_x, best_v)
}
