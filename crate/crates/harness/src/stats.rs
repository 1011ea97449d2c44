//! Power-law fits over label streams: rank/frequency (Zipf) and
//! vocabulary growth (Heaps).

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Law {
    Zipf,
    Heaps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub law: Law,
    /// `(a, b)` for Zipf, `(K, beta)` for Heaps.
    pub params: (f64, f64),
    /// Coefficient of determination on the log-log data.
    pub r2: f64,
    pub sample_size: usize,
    pub points: usize,
    /// Parameters outside the usual range.
    pub warnings: Vec<String>,
}

/// Least squares `y = c + m x`; returns `(m, c, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let m = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let c = my - m * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - c - m * x).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    (m, c, r2)
}

fn check_stream<T>(items: &[T], distinct: usize) -> Result<(), HarnessError> {
    if items.len() < MIN_SAMPLES {
        return Err(HarnessError::Data(format!(
            "need at least {MIN_SAMPLES} label instances, got {}",
            items.len()
        )));
    }
    if distinct < 2 {
        return Err(HarnessError::Data(
            "degenerate corpus: a single unique label".into(),
        ));
    }
    Ok(())
}

/// Frequencies sorted in decreasing order.
pub fn rank_frequencies<T: Ord>(items: &[T]) -> Vec<usize> {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for it in items {
        *counts.entry(it).or_default() += 1;
    }
    let mut f: Vec<usize> = counts.into_values().collect();
    f.sort_unstable_by(|a, b| b.cmp(a));
    f
}

/// Fits `F(r) ∝ 1/(r+b)^a` to ranked frequencies. `b` runs over
/// 0.0, 0.1, ..., 10.0 and the value with the best R² wins (smallest `b`
/// on ties).
pub fn fit_zipf_frequencies(freqs: &[usize]) -> (f64, f64, f64) {
    let ys: Vec<f64> = freqs.iter().map(|&f| (f as f64).ln()).collect();
    let mut best = (f64::NAN, 0.0, f64::NEG_INFINITY);
    for step in 0..=100 {
        let b = step as f64 / 10.0;
        let xs: Vec<f64> = (1..=freqs.len()).map(|r| (r as f64 + b).ln()).collect();
        let (m, _, r2) = linear_fit(&xs, &ys);
        if r2 > best.2 {
            best = (-m, b, r2);
        }
    }
    best
}

pub fn fit_zipf<T: Ord>(items: &[T]) -> Result<FitResult, HarnessError> {
    let freqs = rank_frequencies(items);
    check_stream(items, freqs.len())?;
    let (a, b, r2) = fit_zipf_frequencies(&freqs);
    let mut warnings = Vec::new();
    if a <= 0.0 {
        warnings.push(format!("exponent a = {a:.4} is not positive"));
    }
    Ok(FitResult {
        law: Law::Zipf,
        params: (a, b),
        r2,
        sample_size: items.len(),
        points: freqs.len(),
        warnings,
    })
}

/// Distinct-count growth `V(n)` at roughly log-spaced prefix lengths.
pub fn heaps_curve<T: Eq + std::hash::Hash>(items: &[T], points: usize) -> Vec<(usize, usize)> {
    let n = items.len();
    let mut marks: Vec<usize> = (0..points)
        .map(|i| {
            let t = i as f64 / (points.max(2) - 1) as f64;
            ((n as f64).powf(t).round() as usize).clamp(1, n)
        })
        .collect();
    marks.dedup();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(marks.len());
    let mut next = marks.iter().peekable();
    for (i, it) in items.iter().enumerate() {
        seen.insert(it);
        while next.peek().is_some_and(|&&m| m == i + 1) {
            out.push((i + 1, seen.len()));
            next.next();
        }
    }
    out
}

/// Fits `V(n) = K n^β` by least squares on `ln V` against `ln n`.
pub fn fit_heaps<T: Eq + std::hash::Hash>(items: &[T]) -> Result<FitResult, HarnessError> {
    let distinct = items.iter().collect::<HashSet<_>>().len();
    check_stream(items, distinct)?;
    let curve = heaps_curve(items, 200);
    let xs: Vec<f64> = curve.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = curve.iter().map(|&(_, v)| (v as f64).ln()).collect();
    let (beta, c, r2) = linear_fit(&xs, &ys);
    let k = c.exp();
    let mut warnings = Vec::new();
    if !(beta > 0.0 && beta <= 1.0) {
        warnings.push(format!("exponent beta = {beta:.4} is outside (0, 1]"));
    }
    Ok(FitResult {
        law: Law::Heaps,
        params: (k, beta),
        r2,
        sample_size: items.len(),
        points: curve.len(),
        warnings,
    })
}

/// Stream of `n` rank indices drawn from `P(r) ∝ 1/r^a` over `ranks` ranks.
pub fn zipf_stream(a: f64, ranks: usize, n: usize, seed: u64) -> Vec<usize> {
    use rand::distributions::{Distribution, WeightedIndex};
    use rand::SeedableRng;
    let w: Vec<f64> = (1..=ranks).map(|r| (r as f64).powf(-a)).collect();
    let dist = WeightedIndex::new(&w).expect("positive weights");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Stream of `n` items whose distinct count after `i` items is
/// `max(1, floor(K i^β))`; repeats are drawn uniformly from earlier items.
pub fn heaps_stream(k: f64, beta: f64, n: usize, seed: u64) -> Vec<usize> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut distinct = 0usize;
    for i in 1..=n {
        let target = ((k * (i as f64).powf(beta)).floor() as usize).clamp(1, i);
        if target > distinct {
            out.push(distinct);
            distinct += 1;
        } else {
            out.push(rng.gen_range(0..distinct));
        }
    }
    out
}

pub fn render_fit(f: &FitResult) -> String {
    let (p, q) = match f.law {
        Law::Zipf => ("a", "b"),
        Law::Heaps => ("K", "beta"),
    };
    let mut s = format!(
        "{:?}: {p} = {:.4}, {q} = {:.4}, R^2 = {:.4} (n = {}, points = {})",
        f.law, f.params.0, f.params.1, f.r2, f.sample_size, f.points
    )
    .to_lowercase();
    for w in &f.warnings {
        s.push_str(&format!("\n  warning: {w}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_zipf_is_recovered() {
        let freqs: Vec<usize> = (1..=300)
            .map(|r| (1e6 / (r as f64).powf(1.1)).round() as usize)
            .collect();
        let (a, b, r2) = fit_zipf_frequencies(&freqs);
        assert!((a - 1.1).abs() < 1e-3, "a = {a}");
        assert_eq!(b, 0.0);
        assert!(r2 > 0.9999);
    }

    #[test]
    fn shifted_zipf_finds_offset() {
        let freqs: Vec<usize> = (1..=300)
            .map(|r| (1e7 / (r as f64 + 3.0).powf(1.3)).round() as usize)
            .collect();
        let (a, b, _) = fit_zipf_frequencies(&freqs);
        assert!((b - 3.0).abs() < 0.11, "b = {b}");
        assert!((a - 1.3).abs() < 0.02, "a = {a}");
    }

    #[test]
    fn linear_fit_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (m, c, r2) = linear_fit(&xs, &ys);
        assert!((m - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heaps_curve_counts_distinct() {
        let items = [1, 1, 2, 3, 3, 3, 4];
        let c = heaps_curve(&items, 7);
        assert_eq!(c.last(), Some(&(7, 4)));
        assert_eq!(c.first(), Some(&(1, 1)));
    }

    #[test]
    fn degenerate_and_small_corpora_rejected() {
        assert!(fit_zipf(&vec!["int"; 500]).is_err());
        assert!(fit_heaps(&vec!["int"; 500]).is_err());
        let small: Vec<usize> = (0..50).collect();
        assert!(fit_zipf(&small).is_err());
    }
}
