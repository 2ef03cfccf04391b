/// Log-ratio magnitude beyond which the estimator is clamped.
pub const KL_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlTerm {
    pub value: f64,
    /// Set when the log-ratio was clamped to avoid overflow.
    pub clamped: bool,
}

fn log_ratio(logp_ref: f64, logp_theta: f64) -> (f64, bool) {
    let d = logp_ref - logp_theta;
    if d.abs() > KL_CLAMP {
        (d.clamp(-KL_CLAMP, KL_CLAMP), true)
    } else {
        (d, false)
    }
}

/// `rho - ln(rho) - 1` with `rho = exp(logp_ref - logp_theta)`.
pub fn kl_term(logp_ref: f64, logp_theta: f64) -> KlTerm {
    let (d, clamped) = log_ratio(logp_ref, logp_theta);
    // expm1(d) - d cancels badly near zero; use the series there
    let value = if d.abs() < 1e-4 { d * d * (0.5 + d * (1.0 / 6.0 + d / 24.0)) } else { d.exp_m1() - d };
    KlTerm { value: value.max(0.0), clamped }
}

/// Derivative of [`kl_term`] with respect to `logp_theta`.
pub fn kl_grad_theta(logp_ref: f64, logp_theta: f64) -> f64 {
    let (d, clamped) = log_ratio(logp_ref, logp_theta);
    if clamped {
        0.0
    } else {
        -d.exp_m1()
    }
}
