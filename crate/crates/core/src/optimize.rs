//! Derivative-free one-dimensional maximization helpers.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Best point found by a search, with the number of objective evaluations spent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// `n` evenly spaced points from `lo` to `hi` inclusive (`n >= 2`), or `[lo]` when `n == 1`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            // pin the last point exactly so grids stay nested under refinement
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

/// Golden-section search for a maximum of `f` on `[lo, hi]`.
///
/// Endpoints are evaluated too, and the best evaluated point is returned,
/// so the result is never worse than `max(f(lo), f(hi))` even when `f` is
/// not unimodal on the bracket.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Probe {
    let mut best = Probe {
        x: lo,
        value: f(lo),
        evaluations: 1,
    };
    let consider = |x: f64, v: f64, best: &mut Probe| {
        best.evaluations += 1;
        if v > best.value {
            best.x = x;
            best.value = v;
        }
    };
    if hi <= lo {
        return best;
    }
    let fh = f(hi);
    consider(hi, fh, &mut best);

    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    consider(c, fc, &mut best);
    let mut fd = f(d);
    consider(d, fd, &mut best);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            consider(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            consider(d, fd, &mut best);
        }
    }
    best
}
