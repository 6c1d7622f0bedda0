//! Ranking, correlation and regression routines used by the diagnostics.
//!
//! All functions are generic over [`Scalar`] and pure.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::cmp::Ordering;

/// Values together with their 1-based mid-ranks (ties share the mean rank).
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSeries<T> {
    pub values: Vec<T>,
    pub ranks: Vec<T>,
}

impl<T: Scalar> RankedSeries<T> {
    pub fn new(values: Vec<T>) -> Self {
        let ranks = mid_ranks(&values);
        Self { values, ranks }
    }
}

fn cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// 1-based ranks with ties resolved to the mean of the ranks they span.
pub fn mid_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp(&values[a], &values[b]));
    let mut ranks = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share rank (i+1 + j+1) / 2
        let r = T::from_usize_lossy(i + j + 2) / T::lit(2.0);
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Indices sorted by descending score, ties broken by ascending index.
pub fn descending_order<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp(&scores[b], &scores[a]).then(a.cmp(&b)));
    order
}

/// Average precision of a score ranking against binary relevance.
pub fn average_precision<T: Scalar>(relevance: &[bool], scores: &[T]) -> Result<T> {
    if relevance.len() != scores.len() {
        return Err(Error::LengthMismatch(relevance.len(), scores.len()));
    }
    let positives = relevance.iter().filter(|&&r| r).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut hits = 0usize;
    let mut total = T::zero();
    for (rank, idx) in descending_order(scores).into_iter().enumerate() {
        if relevance[idx] {
            hits += 1;
            total = total + T::from_usize_lossy(hits) / T::from_usize_lossy(rank + 1);
        }
    }
    Ok(total / T::from_usize_lossy(positives))
}

pub fn mean<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::nan();
    }
    v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
}

/// Population standard deviation.
pub fn std_dev<T: Scalar>(v: &[T]) -> T {
    let m = mean(v);
    mean(&v.iter().map(|&x| (x - m) * (x - m)).collect::<Vec<_>>()).sqrt()
}

/// Pearson correlation. Fails on constant input.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        sxy = sxy + (a - mx) * (b - my);
        sxx = sxx + (a - mx) * (a - mx);
        syy = syy + (b - my) * (b - my);
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::ConstantSeries);
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation<T> {
    pub rho: T,
    pub p_value: T,
    pub n: usize,
}

/// Largest sample size for which the p-value is computed by enumerating
/// every permutation.
pub const EXACT_P_MAX_N: usize = 9;

/// Spearman's rank correlation (Pearson correlation of mid-ranks) with a
/// two-sided p-value: exact permutation distribution for small samples,
/// Student-t approximation otherwise.
pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<Correlation<T>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::NotEnoughData(format!(
            "spearman needs at least 3 points, got {n}"
        )));
    }
    let rx = mid_ranks(x);
    let ry = mid_ranks(y);
    let rho = pearson(&rx, &ry)?;
    let p = if n <= EXACT_P_MAX_N {
        exact_permutation_p(&rx, &ry, rho)
    } else {
        t_approx_p(rho.to_f64_lossy(), n)
    };
    Ok(Correlation {
        rho,
        p_value: T::lit(p),
        n,
    })
}

fn t_approx_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let t = rho.abs() * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t))).clamp(0.0, 1.0)
}

fn exact_permutation_p<T: Scalar>(rx: &[T], ry: &[T], rho: T) -> f64 {
    let target = rho.to_f64_lossy().abs() - 1e-12;
    let rx: Vec<f64> = rx.iter().map(|v| v.to_f64_lossy()).collect();
    let mut perm: Vec<f64> = ry.iter().map(|v| v.to_f64_lossy()).collect();
    let n = perm.len();
    // Heap's algorithm over all n! orderings of the y ranks.
    let mut c = vec![0usize; n];
    let mut total = 0u64;
    let mut extreme = 0u64;
    let mut check = |p: &[f64]| {
        total += 1;
        if pearson(&rx, p).map(|r| r.abs() >= target).unwrap_or(false) {
            extreme += 1;
        }
    };
    check(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            check(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Trapezoidal area under `ys(xs)` divided by the x-range.
pub fn auc_trapezoid<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::NotEnoughData("auc needs at least 2 points".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NotAscending);
    }
    let half = T::lit(0.5);
    let area: T = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| half * (y[0] + y[1]) * (x[1] - x[0]))
        .sum();
    Ok(area / (xs[xs.len() - 1] - xs[0]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scaled<T> {
    pub values: Vec<T>,
    /// Input was constant; every output is 0.5.
    pub constant: bool,
}

/// Min-max scaling into [0, 1]; constant input maps to 0.5.
pub fn minmax_scale<T: Scalar>(values: &[T]) -> Scaled<T> {
    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    if values.is_empty() || !(hi > lo) {
        return Scaled {
            values: vec![T::lit(0.5); values.len()],
            constant: true,
        };
    }
    let range = hi - lo;
    Scaled {
        values: values
            .iter()
            .map(|&v| ((v - lo) / range).max(T::zero()).min(T::one()))
            .collect(),
        constant: false,
    }
}

pub fn mae<T: Scalar>(pred: &[T], gold: &[T]) -> Result<T> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    if pred.is_empty() {
        return Err(Error::NotEnoughData("mae of empty series".into()));
    }
    Ok(mean(
        &pred
            .iter()
            .zip(gold)
            .map(|(&a, &b)| (a - b).abs())
            .collect::<Vec<_>>(),
    ))
}

pub fn max_abs_error<T: Scalar>(pred: &[T], gold: &[T]) -> Result<T> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    Ok(pred
        .iter()
        .zip(gold)
        .map(|(&a, &b)| (a - b).abs())
        .fold(T::zero(), T::max))
}

/// Sigmoid regression `σ(w·f + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> LogisticModel<T> {
    pub fn predict(&self, features: &[T]) -> T {
        let z = self.bias
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(&w, &f)| w * f)
                .sum::<T>();
        crate::engine::sigmoid_scalar(z)
    }
}

fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (T::one() + (-z.abs()).exp()).ln()
}

fn logistic_loss<T: Scalar>(features: &[Vec<T>], targets: &[T], l2: T, w: &[T], b: T) -> T {
    let n = T::from_usize_lossy(targets.len());
    let data: T = features
        .iter()
        .zip(targets)
        .map(|(f, &t)| {
            let z = b + w.iter().zip(f).map(|(&a, &x)| a * x).sum::<T>();
            softplus(z) - t * z
        })
        .sum();
    data / n + T::lit(0.5) * l2 * w.iter().map(|&a| a * a).sum::<T>()
}

/// L2-regularised cross-entropy fit of soft targets in [0, 1], by
/// full-batch gradient descent with Armijo backtracking from a zero start.
pub fn logistic_fit<T: Scalar>(
    features: &[Vec<T>],
    targets: &[T],
    l2: T,
    iters: usize,
) -> Result<LogisticModel<T>> {
    if features.len() != targets.len() {
        return Err(Error::LengthMismatch(features.len(), targets.len()));
    }
    if targets.len() < 2 {
        return Err(Error::NotEnoughData("logistic fit needs 2 samples".into()));
    }
    if targets.iter().any(|&t| !(t >= T::zero() && t <= T::one())) {
        return Err(Error::InvalidConfig("logistic targets must lie in [0,1]".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidConfig("ragged feature vectors".into()));
    }
    let n = T::from_usize_lossy(targets.len());
    let mut w = vec![T::zero(); dim];
    let mut b = T::zero();
    let mut loss = logistic_loss(features, targets, l2, &w, b);
    let mut step = T::one();
    let tol = T::lit(1e-12);
    for _ in 0..iters {
        let mut gw = vec![T::zero(); dim];
        let mut gb = T::zero();
        for (f, &t) in features.iter().zip(targets) {
            let z = b + w.iter().zip(f).map(|(&a, &x)| a * x).sum::<T>();
            let r = crate::engine::sigmoid_scalar(z) - t;
            gb = gb + r;
            for (g, &x) in gw.iter_mut().zip(f) {
                *g = *g + r * x;
            }
        }
        gb = gb / n;
        for (g, &a) in gw.iter_mut().zip(&w) {
            *g = *g / n + l2 * a;
        }
        let gnorm2 = gb * gb + gw.iter().map(|&g| g * g).sum::<T>();
        if gnorm2 < tol * tol {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let nw: Vec<T> = w.iter().zip(&gw).map(|(&a, &g)| a - step * g).collect();
            let nb = b - step * gb;
            let nl = logistic_loss(features, targets, l2, &nw, nb);
            if nl.is_finite() && nl <= loss - T::lit(1e-4) * step * gnorm2 {
                w = nw;
                b = nb;
                loss = nl;
                accepted = true;
                break;
            }
            step = step * T::lit(0.5);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite);
        }
        if !accepted {
            break;
        }
        step = (step * T::lit(2.0)).min(T::lit(1e6));
    }
    if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(LogisticModel { weights: w, bias: b })
}

/// Weighted ridge regression with an unpenalised intercept, fitted for
/// several target columns sharing one design.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit<T> {
    /// One intercept per target column.
    pub intercepts: Vec<T>,
    /// `coefficients[t][j]` for target column `t` and feature `j`.
    pub coefficients: Vec<Vec<T>>,
}

/// Minimises `Σ_i w_i (y_i − b − β·x_i)² + λ‖β‖²` for every column of `targets`.
pub fn weighted_ridge<T: Scalar>(
    design: &[Vec<T>],
    targets: &[Vec<T>],
    weights: &[T],
    lambda: T,
) -> Result<RidgeFit<T>> {
    let n = design.len();
    if targets.len() != n || weights.len() != n {
        return Err(Error::LengthMismatch(n, targets.len().min(weights.len())));
    }
    if n == 0 {
        return Err(Error::NotEnoughData("ridge fit of empty design".into()));
    }
    let p = design[0].len() + 1;
    let outputs = targets[0].len();
    // normal equations over [1, x]
    let mut a = vec![T::zero(); p * p];
    let mut rhs = vec![T::zero(); p * outputs];
    let mut row = vec![T::one(); p];
    for i in 0..n {
        row[1..].copy_from_slice(&design[i]);
        let wi = weights[i];
        for r in 0..p {
            let wr = wi * row[r];
            if wr == T::zero() {
                continue;
            }
            for c in 0..p {
                a[r * p + c] = a[r * p + c] + wr * row[c];
            }
            for o in 0..outputs {
                rhs[r * outputs + o] = rhs[r * outputs + o] + wr * targets[i][o];
            }
        }
    }
    for j in 1..p {
        a[j * p + j] = a[j * p + j] + lambda;
    }
    let l = cholesky(&a, p)?;
    let mut intercepts = Vec::with_capacity(outputs);
    let mut coefficients = Vec::with_capacity(outputs);
    for o in 0..outputs {
        let b: Vec<T> = (0..p).map(|r| rhs[r * outputs + o]).collect();
        let beta = cholesky_solve(&l, p, &b);
        intercepts.push(beta[0]);
        coefficients.push(beta[1..].to_vec());
    }
    Ok(RidgeFit {
        intercepts,
        coefficients,
    })
}

fn cholesky<T: Scalar>(a: &[T], n: usize) -> Result<Vec<T>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(T::zero(), T::max);
    let floor = scale * T::lit(1e-13);
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > floor) {
                    return Err(Error::SingularFit);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve<T: Scalar>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s = s - l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}
