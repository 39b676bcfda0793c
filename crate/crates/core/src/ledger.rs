//! Privacy-budget arithmetic: basic and parallel composition, group privacy.
//!
//! This is bookkeeping only. Parallel composition is valid only when the
//! composed mechanisms read disjoint parts of the input, which cannot be
//! checked here; each caller states the partition it relies on.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyBudget {
    pub eps: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::param("eps", eps, "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::param("delta", delta, "must lie in [0, 1]"));
        }
        Ok(PrivacyBudget { eps, delta })
    }

    pub fn pure(eps: f64) -> Result<Self> {
        Self::new(eps, 0.0)
    }
}

/// Sequential composition: budgets add, delta saturates at 1.
pub fn compose_basic(budgets: &[PrivacyBudget]) -> Result<PrivacyBudget> {
    if budgets.is_empty() {
        return Err(Error::Empty("budget list"));
    }
    let eps = budgets.iter().map(|b| b.eps).sum();
    let delta = budgets.iter().map(|b| b.delta).sum::<f64>().min(1.0);
    Ok(PrivacyBudget { eps, delta })
}

/// Composition over disjoint inputs: component-wise maximum.
pub fn compose_parallel(budgets: &[PrivacyBudget]) -> Result<PrivacyBudget> {
    if budgets.is_empty() {
        return Err(Error::Empty("budget list"));
    }
    Ok(budgets.iter().fold(
        PrivacyBudget {
            eps: 0.0,
            delta: 0.0,
        },
        |acc, b| PrivacyBudget {
            eps: acc.eps.max(b.eps),
            delta: acc.delta.max(b.delta),
        },
    ))
}

/// Guarantee between inputs at L1 distance `k`. Delta is not capped: it is
/// reported as-is for the attack analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupBound {
    pub eps: f64,
    pub delta: f64,
}

pub fn group_privacy_factor(budget: PrivacyBudget, k: u32) -> Result<GroupBound> {
    if k == 0 {
        return Err(Error::param("k", 0.0, "group size must be at least 1"));
    }
    let k = k as f64;
    // (e^{k eps} - 1) / (e^eps - 1), which tends to k as eps -> 0.
    let factor = if budget.eps == 0.0 {
        k
    } else {
        (k * budget.eps).exp_m1() / budget.eps.exp_m1()
    };
    Ok(GroupBound {
        eps: k * budget.eps,
        delta: budget.delta * factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(eps: f64, delta: f64) -> PrivacyBudget {
        PrivacyBudget::new(eps, delta).unwrap()
    }

    #[test]
    fn basic() {
        assert_eq!(compose_basic(&[b(1.0, 0.0), b(1.0, 0.0)]).unwrap(), b(2.0, 0.0));
        assert_eq!(compose_basic(&[b(0.0, 0.0)]).unwrap(), b(0.0, 0.0));
        let s = compose_basic(&[b(0.5, 0.1), b(0.5, 0.2), b(1.0, 0.0)]).unwrap();
        assert!((s.eps - 2.0).abs() < 1e-12 && (s.delta - 0.3).abs() < 1e-12);
        assert_eq!(compose_basic(&[b(1.0, 0.7), b(1.0, 0.7)]).unwrap().delta, 1.0);
        assert!(compose_basic(&[]).is_err());
    }

    #[test]
    fn parallel() {
        assert_eq!(
            compose_parallel(&[b(1.0, 0.1), b(2.0, 0.05)]).unwrap(),
            b(2.0, 0.1)
        );
        assert_eq!(compose_parallel(&[b(1.0, 0.0)]).unwrap(), b(1.0, 0.0));
        assert_eq!(compose_parallel(&[b(0.0, 0.0), b(0.0, 0.0)]).unwrap(), b(0.0, 0.0));
        assert!(compose_parallel(&[]).is_err());
    }

    #[test]
    fn group() {
        let g = group_privacy_factor(b(1.0, 0.0), 3).unwrap();
        assert_eq!((g.eps, g.delta), (3.0, 0.0));
        let g = group_privacy_factor(b(1.0, 0.01), 1).unwrap();
        assert!((g.eps - 1.0).abs() < 1e-15 && (g.delta - 0.01).abs() < 1e-15);
        let g = group_privacy_factor(b(0.1, 1e-6), 10).unwrap();
        assert!((g.eps - 1.0).abs() < 1e-12);
        assert!((g.delta - 1.634e-5).abs() < 1e-8, "{}", g.delta);
        assert_eq!(group_privacy_factor(b(0.0, 0.1), 4).unwrap().delta, 0.4);
        assert!(group_privacy_factor(b(1.0, 0.0), 0).is_err());
    }

    #[test]
    fn rejects_bad_budgets() {
        assert!(PrivacyBudget::new(-1.0, 0.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.5).is_err());
        assert!(PrivacyBudget::new(f64::INFINITY, 0.0).is_err());
    }

    fn arb_budget() -> impl Strategy<Value = PrivacyBudget> {
        (0.0..10.0f64, 0.0..0.3f64).prop_map(|(e, d)| b(e, d))
    }

    proptest! {
        #[test]
        fn basic_is_order_free(xs in prop::collection::vec(arb_budget(), 1..6)) {
            let fwd = compose_basic(&xs).unwrap();
            let mut rev = xs.clone();
            rev.reverse();
            let back = compose_basic(&rev).unwrap();
            prop_assert!((fwd.eps - back.eps).abs() < 1e-9);
            prop_assert!((fwd.delta - back.delta).abs() < 1e-9);
            // Associativity: fold pairwise.
            let nested = xs[1..].iter().fold(xs[0], |acc, x| compose_basic(&[acc, *x]).unwrap());
            prop_assert!((fwd.eps - nested.eps).abs() < 1e-9);
        }

        #[test]
        fn parallel_idempotent(x in arb_budget(), n in 1usize..5) {
            prop_assert_eq!(compose_parallel(&vec![x; n]).unwrap(), x);
        }

        #[test]
        fn group_of_one_is_identity(x in arb_budget()) {
            let g = group_privacy_factor(x, 1).unwrap();
            prop_assert!((g.eps - x.eps).abs() < 1e-12);
            prop_assert!((g.delta - x.delta).abs() <= 1e-12 * x.delta.max(1e-300));
        }
    }
}
