//! Cost-aware stopping.
//!
//! With cumulative cost `C(k) = Σ_{i≤k} c_i` and loss `f(w_k)`, the stopping
//! objective is `G(k) = β·C(k) + (1−β)·f(w_k)` for `k = 0..=K`, where
//! `C(0) = 0`. The non-causal rule minimises `G` over a recorded trace; the
//! causal rule stops at the first `k ≥ 1` with `G(k+1) ≥ G(k)`.
//!
//! Everything here is generic over [`CostValue`], so traces can be checked in
//! exact rational arithmetic as well as in floating point.

use crate::error::{Error, Result};
use crate::scalar::CostValue;

/// `G(0..=K)` from `f(w_0..=w_K)` and `c_1..=c_K`.
pub fn objective_sequence<T: CostValue>(losses: &[T], costs: &[T], beta: T) -> Result<Vec<T>> {
    if losses.is_empty() {
        return Err(Error::config("empty trace"));
    }
    if losses.len() != costs.len() + 1 {
        return Err(Error::config(format!(
            "trace has {} losses but {} costs; expected one more loss than costs",
            losses.len(),
            costs.len()
        )));
    }
    let keep = T::one() - beta;
    let mut cumulative = T::zero();
    let mut g = Vec::with_capacity(losses.len());
    g.push(keep * losses[0]);
    for (c, &f) in costs.iter().zip(&losses[1..]) {
        cumulative = cumulative + *c;
        g.push(beta * cumulative + keep * f);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    /// Stop and return `w_k`.
    Stop {
        k: usize,
    },
}

/// Online rule on `G(0..=k+1)`: stop at `k` once `G(k+1) ≥ G(k)`.
pub fn causal_stop<T: CostValue>(prefix: &[T]) -> Decision {
    match prefix {
        [.., prev, last] if last >= prev => Decision::Stop { k: prefix.len() - 2 },
        _ => Decision::Continue,
    }
}

/// Replays [`causal_stop`] over `G(0..=K)`; returns `K` if it never fires.
pub fn causal_stop_index<T: CostValue>(g: &[T]) -> usize {
    (2..=g.len())
        .find_map(|n| match causal_stop(&g[..n]) {
            Decision::Stop { k } => Some(k),
            Decision::Continue => None,
        })
        .unwrap_or(g.len().saturating_sub(1))
}

/// Smallest minimiser of `G(0..=K)`.
pub fn argmin_first<T: CostValue>(g: &[T]) -> Result<usize> {
    let (first, rest) = g.split_first().ok_or_else(|| Error::config("empty trace"))?;
    let mut best = (0, *first);
    for (i, &v) in rest.iter().enumerate() {
        if v < best.1 {
            best = (i + 1, v);
        }
    }
    Ok(best.0)
}

/// Exhaustive search for `k*` over a complete trace.
pub fn noncausal_oracle<T: CostValue>(losses: &[T], costs: &[T], beta: T) -> Result<usize> {
    argmin_first(&objective_sequence(losses, costs, beta)?)
}

/// `2·s(k) ≤ s(k−1) + s(k+1)` at every interior point, up to the scalar's slack.
/// Sequences shorter than three are vacuously convex.
pub fn is_discrete_convex<T: CostValue>(s: &[T]) -> bool {
    s.windows(3).all(|w| {
        let lhs = w[1] + w[1];
        let rhs = w[0] + w[2];
        lhs <= rhs + T::slack(w[0].abs() + w[2].abs())
    })
}

/// First `k` whose gradient norm falls below a constant threshold `eps`.
pub fn threshold_stop<T: CostValue>(grad_norms: &[T], eps: T) -> Option<usize> {
    grad_norms.iter().position(|n| *n < eps)
}

/// Outcome of checking the causal rule against the non-causal optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop2Report<T> {
    pub k_star: usize,
    pub k_star_c: usize,
    pub g_at_kstar: T,
    pub g_at_kstarc: T,
    pub f_at_kstar: T,
    pub f_at_kstarc: T,
    /// `G(k_c*) − G(k*)`, never negative.
    pub g_gap: T,
    /// Whether `G(0..=K)` is discretely convex; the bounds are only guaranteed if so.
    pub convex_g: bool,
    /// `k* ≤ k_c* ≤ k*+1`, `f(w_{k_c*}) ≥ f(w_{k*})` and `G(k_c*) ≥ G(k*)`.
    pub bounds_hold: bool,
}

impl<T: CostValue> Prop2Report<T> {
    /// The trace violates convexity, so failing bounds are not a contradiction.
    pub fn exempt(&self) -> bool {
        !self.convex_g
    }

    /// Bounds hold, or the trace is exempt.
    pub fn consistent(&self) -> bool {
        self.bounds_hold || self.exempt()
    }
}

pub fn check_prop2<T: CostValue>(losses: &[T], costs: &[T], beta: T) -> Result<Prop2Report<T>> {
    let g = objective_sequence(losses, costs, beta)?;
    let k_star = argmin_first(&g)?;
    let k_star_c = causal_stop_index(&g);
    let g_gap = g[k_star_c] - g[k_star];
    let bounds_hold =
        k_star <= k_star_c && k_star_c <= k_star + 1 && losses[k_star_c] >= losses[k_star] && g_gap >= T::zero();
    Ok(Prop2Report {
        k_star,
        k_star_c,
        g_at_kstar: g[k_star],
        g_at_kstarc: g[k_star_c],
        f_at_kstar: losses[k_star],
        f_at_kstarc: losses[k_star_c],
        g_gap,
        convex_g: is_discrete_convex(&g),
        bounds_hold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    fn q(n: i64, d: i64) -> Q {
        Ratio::new(n, d)
    }

    /// `f(w_k) = 2^{3−k}`, `c_k = 1`, `β = 1/2`, `K = 4`.
    fn hand_trace() -> (Vec<Q>, Vec<Q>) {
        let losses = (0..=4).map(|k| q(8, 1 << k)).collect();
        (losses, vec![q(1, 1); 4])
    }

    #[test]
    fn hand_trace_objective_is_exact() {
        let (f, c) = hand_trace();
        let g = objective_sequence(&f, &c, q(1, 2)).unwrap();
        assert_eq!(g, vec![q(4, 1), q(5, 2), q(2, 1), q(2, 1), q(9, 4)]);
    }

    #[test]
    fn causal_examples() {
        assert_eq!(causal_stop_index(&[4.0, 2.5, 2.0, 2.0]), 2);
        assert_eq!(causal_stop(&[4.0, 2.5, 2.0, 2.0]), Decision::Stop { k: 2 });
        assert_eq!(causal_stop(&[4.0, 2.5, 2.0]), Decision::Continue);
        assert_eq!(causal_stop(&[4.0]), Decision::Continue);
        assert_eq!(causal_stop_index(&[6.0, 5.0, 4.0, 3.0, 2.0]), 4);
        assert_eq!(causal_stop_index(&[3.0, 1.0, 1.5, 0.1]), 1);
        assert_eq!(causal_stop_index(&[1.0, 1.2, 0.1]), 0);
    }

    #[test]
    fn oracle_picks_first_of_tie() {
        let (f, c) = hand_trace();
        assert_eq!(noncausal_oracle(&f, &c, q(1, 2)).unwrap(), 2);
    }

    #[test]
    fn degenerate_weights() {
        let (f, c) = hand_trace();
        assert_eq!(noncausal_oracle(&f, &c, q(0, 1)).unwrap(), 4);
        assert_eq!(noncausal_oracle(&f, &c, q(1, 1)).unwrap(), 0);
    }

    #[test]
    fn empty_trace_is_error() {
        let none: [f64; 0] = [];
        assert!(noncausal_oracle(&none, &none, 0.5).unwrap_err().is_config());
        assert!(objective_sequence(&[1.0, 2.0], &[1.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn convexity_examples() {
        let sq: Vec<f64> = (0..10).map(|k| (k * k) as f64).collect();
        let neg: Vec<f64> = sq.iter().map(|v| -v).collect();
        assert!(is_discrete_convex(&sq));
        assert!(!is_discrete_convex(&neg));
        assert!(is_discrete_convex(&[2.5, 2.0, 2.0, 2.25]));
        assert!(is_discrete_convex(&[q(5, 2), q(2, 1), q(2, 1), q(9, 4)]));
    }

    #[test]
    fn prop2_on_hand_trace() {
        let (f, c) = hand_trace();
        let r = check_prop2(&f, &c, q(1, 2)).unwrap();
        assert_eq!((r.k_star, r.k_star_c), (2, 2));
        assert_eq!(r.g_gap, q(0, 1));
        assert!(r.convex_g && r.bounds_hold);
    }

    #[test]
    fn cost_spike_is_flagged() {
        let f = [1.0, 0.5, 0.3, 0.2, 0.15, 0.12];
        let c = [0.01, 0.01, 5.0, 0.01, 0.01];
        let r = check_prop2(&f, &c, 0.5).unwrap();
        assert!(!r.convex_g);
        assert!(r.exempt() && r.consistent());
    }

    #[test]
    fn threshold_rule() {
        let norms = [3.0, 2.0, 1.0, 0.5];
        assert_eq!(threshold_stop(&norms, 1.5), Some(2));
        assert_eq!(threshold_stop(&norms, 0.1), None);
    }
}
