//! Scalar-generic statistics: product-moment and rank correlation, the
//! centred moving average, and least squares via Householder QR.

use std::cmp::Ordering;
use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

/// Floating-point scalar accepted by the statistics routines.
pub trait Real: Float + FromPrimitive + Debug + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + Debug + Send + Sync + 'static {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("non-finite input value")]
    NonFinite,
    #[error("moving-average window must be odd and at least 1, got {0}")]
    InvalidWindow(usize),
    #[error("design has {rows} rows for {params} parameters")]
    InsufficientRows { rows: usize, params: usize },
    #[error("design is rank deficient at column {0}")]
    SingularDesign(usize),
    #[error("target has zero variance")]
    DegenerateTarget,
}

fn cast<T: Real>(v: usize) -> T {
    T::from_usize(v).expect("usize fits in float")
}

fn check_finite<T: Real>(xs: &[T]) -> Result<(), StatsError> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

pub fn mean<T: Real>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().fold(T::zero(), |a, &b| a + b) / cast(xs.len()))
}

/// Median of the values; averages the middle pair for even lengths.
pub fn median<T: Real>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / (T::one() + T::one())
    })
}

/// Sample product-moment correlation. `Ok(None)` when either input is
/// constant.
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<Option<T>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewSamples { n: x.len(), min: 3 });
    }
    check_finite(x)?;
    check_finite(y)?;
    let mx = mean(x).unwrap();
    let my = mean(y).unwrap();
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Ok(None);
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(Some(r.max(-T::one()).min(T::one())))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks<T: Real>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = cast::<T>(i + 1 + j) / (T::one() + T::one());
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman<T: Real>(x: &[T], y: &[T]) -> Result<Option<T>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    check_finite(x)?;
    check_finite(y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Centred moving average over sample index. Near the ends the window
/// shrinks to the samples that exist.
pub fn moving_average<T: Real>(values: &[T], window: usize) -> Result<Vec<T>, StatsError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(StatsError::InvalidWindow(window));
    }
    let half = window / 2;
    Ok((0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            mean(&values[lo..hi]).unwrap()
        })
        .collect())
}

/// Least-squares fit of `y` on the given regressors plus an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit<T> {
    /// One coefficient per regressor column, in input order.
    pub coefficients: Vec<T>,
    pub intercept: T,
    pub r_squared: T,
    pub sse: T,
    pub sst: T,
    pub residuals: Vec<T>,
}

impl<T: Real> OlsFit<T> {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn predict(&self, row: &[T]) -> T {
        row.iter()
            .zip(&self.coefficients)
            .fold(self.intercept, |acc, (&x, &b)| acc + x * b)
    }
}

/// Fit `y ≈ intercept + Σ b_k · columns[k]` by Householder QR.
///
/// A column whose component orthogonal to the preceding columns (intercept
/// first) is below `sqrt(eps)` of its own norm is treated as collinear and
/// reported as [`StatsError::SingularDesign`] with its regressor index
/// (0 = intercept, k+1 = `columns[k]`).
pub fn ols_fit<T: Real, C: AsRef<[T]>>(columns: &[C], y: &[T]) -> Result<OlsFit<T>, StatsError> {
    let n = y.len();
    let p = columns.len() + 1;
    for c in columns {
        if c.as_ref().len() != n {
            return Err(StatsError::LengthMismatch(c.as_ref().len(), n));
        }
        check_finite(c.as_ref())?;
    }
    check_finite(y)?;
    if n <= p {
        return Err(StatsError::InsufficientRows { rows: n, params: p });
    }
    let ybar = mean(y).unwrap();
    let sst = y.iter().fold(T::zero(), |a, &v| a + (v - ybar) * (v - ybar));
    if sst == T::zero() {
        return Err(StatsError::DegenerateTarget);
    }

    // column-major working copy: intercept, then regressors
    let mut a: Vec<Vec<T>> = Vec::with_capacity(p);
    a.push(vec![T::one(); n]);
    a.extend(columns.iter().map(|c| c.as_ref().to_vec()));
    let norms: Vec<T> = a.iter().map(|c| norm(c)).collect();
    let mut qty = y.to_vec();
    let tol = T::epsilon().sqrt();

    for j in 0..p {
        let (head, tail) = a.split_at_mut(j + 1);
        let col = &mut head[j];
        let alpha = norm(&col[j..]);
        if norms[j] == T::zero() || alpha <= tol * norms[j] {
            return Err(StatsError::SingularDesign(j));
        }
        // v = x - beta e1 with beta = -sign(x0)·||x||, stored in place
        let beta = if col[j] > T::zero() { -alpha } else { alpha };
        col[j] = col[j] - beta;
        let vnorm2 = col[j..].iter().fold(T::zero(), |s, &v| s + v * v);
        let v = &col[j..];
        let reflect = |target: &mut [T]| {
            let dot = v.iter().zip(target.iter()).fold(T::zero(), |s, (&a, &b)| s + a * b);
            let f = (dot + dot) / vnorm2;
            for (t, &vi) in target.iter_mut().zip(v) {
                *t = *t - f * vi;
            }
        };
        for other in tail.iter_mut() {
            reflect(&mut other[j..]);
        }
        reflect(&mut qty[j..]);
        // R_jj
        col[j] = beta;
    }

    // back substitution on R (upper triangle of `a`)
    let mut coef = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = qty[i];
        for k in i + 1..p {
            s = s - a[k][i] * coef[k];
        }
        coef[i] = s / a[i][i];
    }

    let intercept = coef[0];
    let coefficients = coef[1..].to_vec();
    let residuals: Vec<T> = (0..n)
        .map(|r| {
            let fitted = columns
                .iter()
                .zip(&coefficients)
                .fold(intercept, |acc, (c, &b)| acc + c.as_ref()[r] * b);
            y[r] - fitted
        })
        .collect();
    let sse = residuals.iter().fold(T::zero(), |s, &e| s + e * e);
    let r_squared = (T::one() - sse / sst).max(T::zero()).min(T::one());
    Ok(OlsFit {
        coefficients,
        intercept,
        r_squared,
        sse,
        sst,
        residuals,
    })
}

fn norm<T: Real>(v: &[T]) -> T {
    // scaled to avoid overflow on large-magnitude columns
    let scale = v.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let ss = v.iter().fold(T::zero(), |s, &x| {
        let t = x / scale;
        s + t * t
    });
    scale * ss.sqrt()
}
