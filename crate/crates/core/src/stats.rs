//! Goodness-of-fit helpers shared by the statistical checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson chi-square goodness-of-fit p-value of `observed` counts against
/// `expected` probabilities. Cells with zero expected probability must be
/// empty (otherwise the p-value is 0) and do not count toward the degrees of
/// freedom.
pub fn chi_square_p_value(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len(), "cell count mismatch");
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return 1.0;
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(expected) {
        if p <= 0.0 {
            if o > 0 {
                return 0.0;
            }
            continue;
        }
        let e = p * n as f64;
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells < 2 {
        return 1.0;
    }
    ChiSquared::new((cells - 1) as f64).expect("positive dof").sf(stat)
}

/// One binomial standard deviation of an empirical rate over `n` trials.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Total variation between empirical counts and a reference distribution.
pub fn empirical_tv(observed: &[u64], expected: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return 0.0;
    }
    0.5 * observed
        .iter()
        .zip(expected)
        .map(|(&o, &p)| (o as f64 / n as f64 - p).abs())
        .sum::<f64>()
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for i in 0..xs.len() {
        acc += xs[i];
        if i >= w {
            acc -= xs[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
