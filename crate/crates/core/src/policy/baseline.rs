use super::PolicyError;

const MAX_RIDGE_RETRIES: usize = 5;

/// Linear state-value estimate over the features
/// `(s, s², t/T, (t/T)², (t/T)³, 1)`, refit every iteration by ridge regression
/// on observed discounted returns.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueBaseline {
    coeffs: Option<Vec<f64>>,
    ridge: f64,
    horizon: usize,
}

impl ValueBaseline {
    pub fn new(ridge: f64, horizon: usize) -> Self {
        Self {
            coeffs: None,
            ridge: ridge.max(0.0),
            horizon: horizon.max(1),
        }
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        self.coeffs.as_deref()
    }

    pub fn features(&self, s: &[f64], t: usize) -> Vec<f64> {
        let tau = t as f64 / self.horizon as f64;
        let mut f = Vec::with_capacity(2 * s.len() + 4);
        f.extend_from_slice(s);
        f.extend(s.iter().map(|x| x * x));
        f.extend([tau, tau * tau, tau * tau * tau, 1.0]);
        f
    }

    /// Prediction for state `s` at time index `t`; zero before the first fit.
    pub fn predict(&self, s: &[f64], t: usize) -> f64 {
        match &self.coeffs {
            Some(c) => self.features(s, t).iter().zip(c).map(|(f, c)| f * c).sum(),
            None => 0.0,
        }
    }

    /// Minimizes `‖Φc − R‖² + ridge·‖c‖²`. A singular system is retried with
    /// the ridge multiplied by ten, up to five times.
    pub fn fit(&mut self, states: &[&[f64]], times: &[usize], returns: &[f64]) -> Result<(), PolicyError> {
        if states.len() != times.len() || states.len() != returns.len() {
            return Err(PolicyError::Dim {
                what: "baseline samples",
                expected: states.len(),
                got: returns.len(),
            });
        }
        if states.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        let k = self.features(states[0], 0).len();
        let mut gram = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for ((s, &t), &r) in states.iter().zip(times).zip(returns) {
            let f = self.features(s, t);
            for i in 0..k {
                rhs[i] += f[i] * r;
                for j in 0..=i {
                    gram[i * k + j] += f[i] * f[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                gram[j * k + i] = gram[i * k + j];
            }
        }
        let mut ridge = self.ridge;
        for _ in 0..=MAX_RIDGE_RETRIES {
            let mut a = gram.clone();
            for i in 0..k {
                a[i * k + i] += ridge;
            }
            if let Some(c) = cholesky_solve(&mut a, &rhs, k) {
                self.coeffs = Some(c);
                return Ok(());
            }
            ridge = if ridge > 0.0 { ridge * 10.0 } else { 1e-8 };
        }
        Err(PolicyError::Singular)
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major `k x k`),
/// overwriting `a` with its Cholesky factor. `None` if `A` is not numerically
/// positive definite.
pub(crate) fn cholesky_solve(a: &mut [f64], b: &[f64], k: usize) -> Option<Vec<f64>> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut v = a[i * k + j];
            for p in 0..j {
                v -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = v / d;
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut v = b[i];
        for p in 0..i {
            v -= a[i * k + p] * y[p];
        }
        y[i] = v / a[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut v = y[i];
        for p in i + 1..k {
            v -= a[p * k + i] * x[p];
        }
        x[i] = v / a[i * k + i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
