//! Small summary statistics used when comparing experiment outcomes.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two
/// values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `(max − min) / |mean|`: how far apart a set of outcomes is, relative to
/// their typical magnitude.
pub fn relative_spread(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min) / mean(xs).abs()
}

/// Trailing moving average with the window truncated at the start.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            mean(&xs[lo..=i])
        })
        .collect()
}

/// Mean of the last `fraction` of the series (at least one element).
pub fn tail_mean(xs: &[f64], fraction: f64) -> f64 {
    let n = ((xs.len() as f64 * fraction).ceil() as usize).clamp(1, xs.len());
    mean(&xs[xs.len() - n..])
}

/// The level that counts as "90% of `target`" for a reward that may be
/// negative: `target − 0.1·|target|`.
pub fn fraction_of(target: f64, fraction: f64) -> f64 {
    target - (1.0 - fraction) * target.abs()
}

/// Index of the first element `>= level`.
pub fn first_reaching(xs: &[f64], level: f64) -> Option<usize> {
    xs.iter().position(|&x| x >= level)
}
