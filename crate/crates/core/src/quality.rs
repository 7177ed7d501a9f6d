//! Closed-form reasoning-quality model.
//!
//! The residual error `1 - q0` of a single expert without CoT decays
//! geometrically with every extra expert (`rho_k`) and every CoT step
//! (`rho_d`), where `q0 = q_hi - q_span * complexity`.

use crate::config::SystemConfig;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityModel<T> {
    pub q_hi: T,
    pub q_span: T,
    pub rho_k: T,
    pub rho_d: T,
    pub theta: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityVerdict<T> {
    pub score: T,
    pub threshold: T,
    pub satisfied: bool,
}

impl<T: Scalar> QualityModel<T> {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            q_hi: T::of(cfg.q_hi),
            q_span: T::of(cfg.q_span),
            rho_k: T::of(cfg.rho_k),
            rho_d: T::of(cfg.rho_d),
            theta: T::of(cfg.theta),
        }
    }

    pub fn score(&self, complexity: T, k: usize, depth: u32) -> T {
        let q0 = self.q_hi - self.q_span * complexity;
        let residual = (T::one() - q0) * self.rho_k.powi(k.saturating_sub(1) as i32) * self.rho_d.powi(depth as i32);
        (T::one() - residual).max(T::zero()).min(T::one())
    }

    pub fn verdict(&self, score: T) -> QualityVerdict<T> {
        QualityVerdict {
            score,
            threshold: self.theta,
            satisfied: score >= self.theta,
        }
    }

    /// Smallest depth reaching the threshold with `k` experts, from the
    /// closed form `d >= ln(tol / r) / ln(rho_d)`. `None` when the score can
    /// only reach the threshold in the limit (`theta == 1`).
    pub fn min_depth(&self, complexity: T, k: usize) -> Option<u32> {
        let tol = T::one() - self.theta;
        let r = (T::one() - (self.q_hi - self.q_span * complexity)) * self.rho_k.powi(k.saturating_sub(1) as i32);
        if r <= tol {
            return Some(0);
        }
        if tol <= T::zero() {
            return None;
        }
        let bound = (tol / r).ln() / self.rho_d.ln();
        // a bound within rounding of an integer is that integer
        let nearest = bound.round();
        let d = if (bound - nearest).abs() < T::of(1e-9) { nearest } else { bound.ceil() };
        d.to_u32()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> QualityModel<f64> {
        QualityModel::from_config(&SystemConfig::default())
    }

    #[test]
    fn score_examples() {
        let m = model();
        assert_relative_eq!(m.score(0.0, 1, 0), 0.9, max_relative = 1e-12);
        // 1 - 0.4 * 0.75^2
        assert_relative_eq!(m.score(1.0, 1, 2), 0.775, max_relative = 1e-12);
        assert!(m.score(1.0, 1, 200) > 1.0 - 1e-12);
    }

    #[test]
    fn verdict_boundary_is_inclusive() {
        let m = model();
        assert!(m.verdict(0.9).satisfied);
        assert!(m.verdict(0.85).satisfied);
        assert!(!m.verdict(0.8499).satisfied);
    }

    #[test]
    fn hardest_single_expert_task_needs_depth_four() {
        let m = model();
        let brute = (0..=10).find(|&d| m.verdict(m.score(1.0, 1, d)).satisfied);
        assert_eq!(brute, Some(4));
        assert_eq!(m.min_depth(1.0, 1), Some(4));
    }

    #[test]
    fn works_in_f32() {
        let m = QualityModel::<f32>::from_config(&SystemConfig::default());
        assert_relative_eq!(m.score(1.0, 1, 2), 0.775, max_relative = 1e-6);
        assert_eq!(m.min_depth(1.0, 1), Some(4));
    }

    #[test]
    fn perfect_threshold_is_unreachable() {
        let m = QualityModel { theta: 1.0, ..model() };
        assert_eq!(m.min_depth(0.5, 1), None);
    }
}
