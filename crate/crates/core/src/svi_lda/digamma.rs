use crate::error::{Error, Result};

/// Shift point above which the asymptotic series is used.
const ASYMPTOTIC_FROM: f64 = 10.0;

/// The digamma function for `x > 0`.
///
/// Shifts `x` up with `psi(x) = psi(x + 1) - 1/x` and then evaluates the
/// asymptotic expansion in `1/x^2` with Bernoulli coefficients through
/// `B_14`, which at `x >= 10` is accurate to well below 1e-15.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma needs x > 0, got {x}");
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift += 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // B_2k / (2k) for k = 1..7.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    x.ln() - 0.5 / x - series - shift
}

/// `E[log X_k]` for `X ~ Dirichlet(param)`: `psi(param_k) - psi(sum param)`.
pub fn dirichlet_expectation(param: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = param.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::Domain(format!(
            "Dirichlet parameters must be positive and finite, got {bad}"
        )));
    }
    if param.is_empty() {
        return Err(Error::Empty("Dirichlet parameter"));
    }
    let total = digamma(param.iter().sum());
    Ok(param.iter().map(|&p| digamma(p) - total).collect())
}
