use serde::{Deserialize, Serialize};

use crate::entropy::Probability;
use crate::error::{Error, Result};

/// Failure probabilities of every estimation step.
///
/// The per-set Chernoff triple (`eps_ab`, `eps_ab_hat`, `eps_ab_mu`) is shared
/// by all nine intensity pairs of a basis; the composite budgets are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub eps_pe: Probability,
    /// Smoothing parameter of the min-entropy bound, used in the forging term.
    pub eps_k: Probability,
    pub eps_k_prime: Probability,
    pub eps_k_hat: Probability,
    pub eps_0: Probability,
    pub eps_1: Probability,
    /// Lower Chernoff deviation `ε_{a,b}`.
    pub eps_ab: Probability,
    /// Upper Chernoff deviation `ε̂_{a,b}`.
    pub eps_ab_hat: Probability,
    /// Validity parameter `ϵ_{a,b}` entering `μ_{k,L}`.
    pub eps_ab_mu: Probability,
    /// Serfling step for `n_{k,0}`.
    pub eps_k0_serfling: Probability,
    /// Serfling step for `n_{k,1}`.
    pub eps_k1_serfling: Probability,
    /// Random-sampling step for `e_{k,1}`.
    pub eps_ke_sampling: Probability,
    pub g: Probability,
}

impl ErrorBudget {
    /// Every ε at `eps`, with separate parameter-estimation and Markov terms.
    pub fn uniform(eps: f64, eps_pe: f64, g: f64) -> Result<Self> {
        let e = Probability::new(eps)?;
        let b = ErrorBudget {
            eps_pe: Probability::new(eps_pe)?,
            eps_k: e,
            eps_k_prime: e,
            eps_k_hat: e,
            eps_0: e,
            eps_1: e,
            eps_ab: e,
            eps_ab_hat: e,
            eps_ab_mu: e,
            eps_k0_serfling: e,
            eps_k1_serfling: e,
            eps_ke_sampling: e,
            g: Probability::new(g)?,
        };
        b.validate()?;
        Ok(b)
    }

    /// All ε = 1e-10, ε_PE = g = 1e-5.
    pub fn standard() -> Self {
        Self::uniform(1e-10, 1e-5, 1e-5).expect("standard budget is valid")
    }

    /// Budget aimed at an overall security level `t`: ε_PE = g = t and every
    /// estimation ε = t².
    pub fn for_target(t: f64) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::domain(format!("security target {t} outside (0, 1)")));
        }
        Self::uniform(t * t, t, t)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("eps_pe", self.eps_pe),
            ("eps_k", self.eps_k),
            ("eps_k_prime", self.eps_k_prime),
            ("eps_k_hat", self.eps_k_hat),
            ("eps_0", self.eps_0),
            ("eps_1", self.eps_1),
            ("eps_ab", self.eps_ab),
            ("eps_ab_hat", self.eps_ab_hat),
            ("eps_ab_mu", self.eps_ab_mu),
            ("eps_k0_serfling", self.eps_k0_serfling),
            ("eps_k1_serfling", self.eps_k1_serfling),
            ("eps_ke_sampling", self.eps_ke_sampling),
            ("g", self.g),
        ];
        for (name, p) in all {
            if p.value() <= 0.0 {
                return Err(Error::config(format!("budget.{name}"), "must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// `γ_{a,b} = ϵ_{a,b} + ε_{a,b} + ε̂_{a,b}`.
    pub fn gamma_ab(&self) -> f64 {
        self.eps_ab_mu.value() + self.eps_ab.value() + self.eps_ab_hat.value()
    }

    /// Nine Chernoff statements, one per intensity pair.
    fn nine_gamma(&self) -> f64 {
        9.0 * self.gamma_ab()
    }

    pub fn eps_k0(&self) -> f64 {
        self.eps_0.value() + self.nine_gamma() + self.eps_k0_serfling.value()
    }

    pub fn eps_k1(&self) -> f64 {
        self.eps_1.value() + self.nine_gamma() + self.eps_k1_serfling.value()
    }

    /// X-basis yield and X-basis error bounds each rest on nine Chernoff
    /// statements, plus the sampling step.
    pub fn eps_ke(&self) -> f64 {
        2.0 * self.nine_gamma() + self.eps_ke_sampling.value()
    }

    /// Total failure probability of the parameter estimation.
    pub fn estimation_total(&self) -> f64 {
        self.eps_pe.value() + self.eps_k0() + self.eps_k1() + self.eps_ke()
    }
}

impl Default for ErrorBudget {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composites() {
        let b = ErrorBudget::standard();
        assert!((b.gamma_ab() - 3e-10).abs() < 1e-24);
        assert!((b.eps_k0() - 29e-10).abs() < 1e-22);
        assert!((b.eps_ke() - 55e-10).abs() < 1e-22);
        assert!(b.estimation_total() > 1e-5);
        assert!(ErrorBudget::uniform(0.0, 1e-5, 1e-5).is_err());
        assert!(ErrorBudget::for_target(1.0).is_err());
    }

    #[test]
    fn roundtrips_json() {
        let b = ErrorBudget::for_target(1e-4).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("\"eps_pe\":0.0001"));
        let back: ErrorBudget = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }
}
