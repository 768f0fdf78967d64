//! Step-size schedules for the inner (sampling) and outer (parameter) updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `(γ, ε) = (gamma_base, eps_base)`.
    Constant,
    /// `γ_k = gamma_base / √(k+offset)`, `ε_k = eps_base`.
    InverseSqrt,
    /// `γ_k = gamma_base`, `ε_k = min(1, 1/√(k+offset))`.
    Thm1,
    /// `γ_k = gamma_base / √(k+offset)`, `ε_k = 1/√(k+offset)`.
    Thm2,
}

/// Pair of step sizes `(γ_k, ε_k)`: γ drives sampling, `γ_k ε_k` the parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub gamma_base: f64,
    pub eps_base: f64,
    pub offset: u64,
}

impl StepSchedule {
    pub fn new(kind: ScheduleKind, gamma_base: f64, eps_base: f64, offset: u64) -> Result<Self> {
        if !(gamma_base > 0.0 && gamma_base.is_finite()) {
            return Err(Error::invalid("gamma_base must be positive and finite"));
        }
        if !(eps_base > 0.0 && eps_base <= 1.0) {
            return Err(Error::invalid("eps_base must lie in (0, 1]"));
        }
        Ok(Self {
            kind,
            gamma_base,
            eps_base,
            offset,
        })
    }

    pub fn constant(gamma: f64) -> Result<Self> {
        Self::new(ScheduleKind::Constant, gamma, 1.0, 1)
    }

    /// `γ_k = c1/√k`, `ε_k = 1/√k` with the default offset of one.
    pub fn thm2(c1: f64) -> Result<Self> {
        Self::new(ScheduleKind::Thm2, c1, 1.0, 1)
    }

    pub fn values(&self, k: u64) -> (f64, f64) {
        // k + offset = 0 only happens with offset 0 at k = 0; treat it as 1.
        let root = ((k + self.offset).max(1) as f64).sqrt();
        match self.kind {
            ScheduleKind::Constant => (self.gamma_base, self.eps_base),
            ScheduleKind::InverseSqrt => (self.gamma_base / root, self.eps_base),
            ScheduleKind::Thm1 => {
                let eps = if k + self.offset == 0 { 1.0 } else { (1.0 / root).min(1.0) };
                (self.gamma_base, eps)
            }
            ScheduleKind::Thm2 => (self.gamma_base / root, 1.0 / root),
        }
    }
}

pub fn schedule_values(sched: &StepSchedule, k: u64) -> (f64, f64) {
    sched.values(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thm2_examples() {
        let s = StepSchedule::new(ScheduleKind::Thm2, 0.1, 1.0, 0).unwrap();
        assert_eq!(s.values(1), (0.1, 1.0));
        assert_eq!(s.values(4), (0.05, 0.5));
    }

    #[test]
    fn thm1_caps_at_one() {
        let s = StepSchedule::new(ScheduleKind::Thm1, 0.1, 1.0, 0).unwrap();
        assert_eq!(s.values(0).1, 1.0);
        assert_eq!(s.values(4).1, 0.5);
    }

    #[test]
    fn constant_returns_bases() {
        let s = StepSchedule::new(ScheduleKind::Constant, 0.05, 0.3, 1).unwrap();
        assert_eq!(s.values(0), (0.05, 0.3));
        assert_eq!(s.values(1000), (0.05, 0.3));
    }

    #[test]
    fn rejects_bad_bases() {
        assert!(StepSchedule::new(ScheduleKind::Constant, 0.0, 1.0, 1).is_err());
        assert!(StepSchedule::new(ScheduleKind::Constant, 0.1, 1.5, 1).is_err());
        assert!(StepSchedule::new(ScheduleKind::Constant, 0.1, 0.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn eps_in_unit_interval_and_monotone(
            kind in prop_oneof![Just(ScheduleKind::Thm1), Just(ScheduleKind::Thm2)],
            gamma in 1e-4f64..10.0,
            offset in 0u64..5,
            k in 0u64..100_000,
        ) {
            let s = StepSchedule::new(kind, gamma, 1.0, offset).unwrap();
            let (g0, e0) = s.values(k);
            let (_, e1) = s.values(k + 1);
            prop_assert!(g0 > 0.0 && g0.is_finite());
            prop_assert!(e0 > 0.0 && e0 <= 1.0);
            prop_assert!(e1 <= e0);
        }
    }
}
