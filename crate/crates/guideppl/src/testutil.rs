//! Shared helpers for numeric tests: central finite differences and
//! tolerance assertions.

/// Central finite-difference gradient of `f` at `x`, step `h` per coordinate.
pub(crate) fn finite_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let step = h * (1.0 + x[i].abs());
        xp[i] = x[i] + step;
        let up = f(&xp);
        xp[i] = x[i] - step;
        let dn = f(&xp);
        xp[i] = x[i];
        g.push((up - dn) / (2.0 * step));
    }
    g
}

pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

pub(crate) fn assert_rel(got: f64, want: f64, tol: f64) {
    assert!(
        rel_err(got, want) < tol,
        "relative error {} exceeds {tol}: got {got}, want {want}",
        rel_err(got, want)
    );
}

/// Composite Simpson's rule with `n` panels (n even).
pub(crate) fn simpson(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0, "simpson needs an even panel count");
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Sample mean and unbiased variance.
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn ln_norm(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * 1.8378770664093453
}

/// Streaming mean/variance (Welford).
pub(crate) struct Stats {
    pub n: f64,
    pub mean: f64,
    m2: f64,
}

impl Stats {
    pub fn new() -> Stats {
        Stats { n: 0.0, mean: 0.0, m2: 0.0 }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn var(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        (self.var() / self.n).sqrt()
    }
}
