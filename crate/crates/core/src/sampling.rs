//! Per-path random streams and the discrete draws shared by the simulators.
//!
//! Every draw consumes a fixed number of uniforms regardless of its outcome,
//! so two simulations replaying the same stream stay aligned for as long as
//! their states agree. Side decisions go through [`Draws::side_uniform`],
//! which reflects the uniform in mirrored mode; together with the
//! class-then-side order-type draw this makes a mirrored model driven by a
//! mirrored stream reproduce the mirror image of the original path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::events::{OrderKind, OrderType, N_TYPES};

pub struct Draws {
    rng: ChaCha8Rng,
    mirrored: bool,
}

impl Draws {
    /// Independent stream for `(seed, path)`.
    pub fn for_path(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Draws { rng, mirrored: false }
    }

    pub fn mirrored(mut self) -> Self {
        self.mirrored = true;
        self
    }

    pub fn is_mirrored(&self) -> bool {
        self.mirrored
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn side_uniform(&mut self) -> f64 {
        let u = self.uniform();
        if self.mirrored {
            1.0 - u
        } else {
            u
        }
    }

    /// Index drawn from `weights` (not necessarily normalized) by inverse CDF.
    pub fn index(&mut self, weights: &[f64]) -> usize {
        let u = self.uniform();
        inverse_cdf(weights, u)
    }

    /// Order type drawn from a next-type row, restricted to `allowed`.
    /// Returns the type and whether the restriction removed positive mass.
    pub fn order_type(&mut self, p: &[f64; N_TYPES], allowed: impl Fn(OrderType) -> bool) -> (OrderType, bool) {
        let u_class = self.uniform();
        let u_side = self.side_uniform();
        let mut w = [0.0; N_TYPES];
        let mut removed = false;
        for t in OrderType::ALL {
            if allowed(t) {
                w[t.index()] = p[t.index()];
            } else if p[t.index()] > 0.0 {
                removed = true;
            }
        }
        let class = [w[0] + w[1], w[2] + w[3], w[4] + w[5]];
        let c = inverse_cdf(&class, u_class);
        let (buy, sell) = (w[2 * c], w[2 * c + 1]);
        let t = if u_side * (buy + sell) < buy || sell == 0.0 {
            OrderType::from_index(2 * c)
        } else {
            OrderType::from_index(2 * c + 1)
        };
        (t, removed)
    }

    /// Uniform order type, for initial conditions.
    pub fn any_order_type(&mut self) -> OrderType {
        let kinds = [OrderKind::Market, OrderKind::Limit, OrderKind::Cancel];
        let c = ((self.uniform() * 3.0) as usize).min(2);
        let buy = self.side_uniform() < 0.5;
        let base = match kinds[c] {
            OrderKind::Market => 0,
            OrderKind::Limit => 2,
            OrderKind::Cancel => 4,
        };
        OrderType::from_index(if buy { base } else { base + 1 })
    }

    /// `(v_bid, v_ask)` from independent refill distributions on `1..=k`.
    pub fn refill(&mut self, bid: &[f64], ask: &[f64]) -> (u32, u32) {
        let (u1, u2) = (self.uniform(), self.uniform());
        if self.mirrored {
            (inverse_cdf(bid, u2) as u32 + 1, inverse_cdf(ask, u1) as u32 + 1)
        } else {
            (inverse_cdf(bid, u1) as u32 + 1, inverse_cdf(ask, u2) as u32 + 1)
        }
    }
}

pub fn inverse_cdf(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "cannot draw from an empty distribution");
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = (0..5).map({
            let mut d = Draws::for_path(7, 3);
            move |_| d.uniform()
        }).collect();
        let mut d = Draws::for_path(7, 3);
        let b: Vec<f64> = (0..5).map(|_| d.uniform()).collect();
        let mut d = Draws::for_path(7, 4);
        let c: Vec<f64> = (0..5).map(|_| d.uniform()).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn inverse_cdf_skips_zero_mass() {
        assert_eq!(inverse_cdf(&[0.0, 1.0, 0.0], 0.0), 1);
        assert_eq!(inverse_cdf(&[0.0, 1.0, 0.0], 0.999), 1);
        assert_eq!(inverse_cdf(&[0.5, 0.5], 0.5), 1);
        assert_eq!(inverse_cdf(&[0.5, 0.5], 0.49), 0);
    }

    #[test]
    fn order_type_frequencies() {
        let p = [0.05, 0.15, 0.3, 0.2, 0.1, 0.2];
        let mut d = Draws::for_path(1, 0);
        let mut n = [0usize; 6];
        let total = 200_000;
        for _ in 0..total {
            n[d.order_type(&p, |_| true).0.index()] += 1;
        }
        for i in 0..6 {
            assert!((n[i] as f64 / total as f64 - p[i]).abs() < 0.005, "{i}: {n:?}");
        }
    }

    #[test]
    fn restricted_draw_renormalizes() {
        let p = [0.0, 0.0, 0.5, 0.0, 0.5, 0.0];
        let mut d = Draws::for_path(2, 0);
        for _ in 0..1000 {
            let (t, removed) = d.order_type(&p, |t| t != OrderType::CB);
            assert_eq!(t, OrderType::LB);
            assert!(removed);
        }
    }
}
