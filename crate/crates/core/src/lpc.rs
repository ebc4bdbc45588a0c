//! Linear-prediction helpers shared by the AR envelope prior and the
//! LP-based quality metrics.
//!
//! Polynomial convention: `A(z) = 1 + a[1] z^-1 + ... + a[p] z^-p`, so the
//! returned coefficient vector always starts with `1.0` and the prediction
//! of `x[n]` is `-sum_{i>=1} a[i] x[n-i]`.

/// Result of a Levinson-Durbin recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// `[1, a1, ..., ap]`
    pub poly: Vec<f64>,
    /// Final prediction-error power.
    pub error_power: f64,
    pub reflection: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevinsonError {
    /// Zero-lag autocorrelation is not positive.
    ZeroEnergy,
    /// Prediction-error power became nonpositive at this order.
    Breakdown { order: usize },
}

/// Solve the order-`order` normal equations for the Toeplitz autocorrelation
/// `r[0..=order]`.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<LpSolution, LevinsonError> {
    assert!(r.len() > order, "need {} autocorrelation lags", order + 1);
    if !(r[0] > 0.0) || !r[0].is_finite() {
        return Err(LevinsonError::ZeroEnergy);
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut tmp = vec![0.0; order + 1];
    let mut err = r[0];
    let mut reflection = Vec::with_capacity(order);
    for i in 1..=order {
        let mut acc = r[i];
        for j in 1..i {
            acc += a[j] * r[i - j];
        }
        let k = -acc / err;
        tmp[..=i].copy_from_slice(&a[..=i]);
        for j in 1..i {
            a[j] = tmp[j] + k * tmp[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        reflection.push(k);
        if !(err > 0.0) || !err.is_finite() {
            return Err(LevinsonError::Breakdown { order: i });
        }
    }
    Ok(LpSolution {
        poly: a,
        error_power: err,
        reflection,
    })
}

/// Biased autocorrelation `r[l] = sum_n x[n] x[n+l]` for `l = 0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| {
            if lag >= x.len() {
                0.0
            } else {
                x[..x.len() - lag]
                    .iter()
                    .zip(&x[lag..])
                    .map(|(a, b)| a * b)
                    .sum()
            }
        })
        .collect()
}

/// Cepstrum `c[1..=count]` of the all-pole model `1 / A(z)`.
///
/// Index 0 of the returned vector is the gain-free `c[0] = 0` placeholder.
pub fn lpc_to_cepstrum(poly: &[f64], count: usize) -> Vec<f64> {
    let p = poly.len() - 1;
    let mut c = vec![0.0; count + 1];
    for n in 1..=count {
        let an = if n <= p { poly[n] } else { 0.0 };
        let mut acc = -an;
        for k in 1..n {
            let a_nk = if n - k <= p { poly[n - k] } else { 0.0 };
            acc -= (k as f64 / n as f64) * c[k] * a_nk;
        }
        c[n] = acc;
    }
    c
}
