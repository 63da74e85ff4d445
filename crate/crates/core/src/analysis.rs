//! Elementary truncation functions and the sharp Sobolev embedding
//! constants used by the a-priori bounds.

use crate::error::{Error, Result};
use crate::util;

/// T_k(s) = max(-k, min(s, k)).
pub fn truncate_tk(s: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    s.clamp(-k, k)
}

/// G_k(s) = (|s| - k)^+ sign(s); T_k + G_k is the identity.
pub fn truncate_gk(s: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    (s.abs() - k).max(0.0) * s.signum()
}

/// Piecewise-linear cutoff: 1 on (-inf, delta], 0 on [2 delta, inf),
/// (2 delta - s)/delta in between.
pub fn vdelta(s: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    if s <= delta {
        1.0
    } else if s >= 2.0 * delta {
        0.0
    } else {
        (2.0 * delta - s) / delta
    }
}

/// Dimensional constants: unit-ball volume and the constants of the
/// embeddings BV -> L^{N/(N-1)} and BV -> L^{N/(N-1),1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub n: usize,
    pub omega_n: f64,
    pub s1: f64,
    pub s1_tilde: f64,
}

pub fn sobolev_constants(n: usize) -> Result<Constants> {
    if n < 2 {
        return Err(Error::InvalidInput("dimension must be >= 2".into()));
    }
    let omega_n = util::unit_ball_volume(n);
    let root = omega_n.powf(1.0 / n as f64);
    Ok(Constants {
        n,
        omega_n,
        s1: 1.0 / (n as f64 * root),
        s1_tilde: 1.0 / ((n as f64 - 1.0) * root),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truncation_split_examples() {
        assert_eq!(truncate_tk(3.0, 2.0), 2.0);
        assert_eq!(truncate_gk(3.0, 2.0), 1.0);
        assert_eq!(truncate_tk(3.0, 2.0) + truncate_gk(3.0, 2.0), 3.0);
    }

    #[test]
    fn truncation_identity_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let s = rng.gen_range(-50.0..50.0);
            let k = rng.gen_range(1e-3..20.0);
            let sum = truncate_tk(s, k) + truncate_gk(s, k);
            assert!((sum - s).abs() < 1e-12);
        }
    }

    #[test]
    fn vdelta_branches() {
        assert_eq!(vdelta(1.5, 1.0), 0.5);
        assert_eq!(vdelta(0.2, 1.0), 1.0);
        assert_eq!(vdelta(5.0, 1.0), 0.0);
    }

    #[test]
    fn vdelta_monotone_bounded_and_vanishing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let delta = rng.gen_range(1e-3..2.0);
            let a = rng.gen_range(-3.0..5.0);
            let b = a + rng.gen_range(0.0..3.0);
            let (va, vb) = (vdelta(a, delta), vdelta(b, delta));
            assert!(vb <= va + 1e-15);
            assert!((0.0..=1.0).contains(&va));
        }
        // fixed s > 0: V_delta(s) = 0 once delta < s/2
        let s = 0.8;
        for delta in [0.39, 0.2, 0.05] {
            assert_eq!(vdelta(s, delta), 0.0);
        }
    }

    #[test]
    fn sobolev_constants_2d_3d() {
        let c2 = sobolev_constants(2).unwrap();
        assert!((c2.omega_n - std::f64::consts::PI).abs() < 1e-14);
        assert!((c2.s1 - 1.0 / (2.0 * std::f64::consts::PI.sqrt())).abs() < 1e-14);
        assert!((c2.s1 - 0.28209).abs() < 1e-5);
        let c3 = sobolev_constants(3).unwrap();
        let expected = 1.0 / (2.0 * (4.0 * std::f64::consts::PI / 3.0).powf(1.0 / 3.0));
        assert!((c3.s1_tilde - expected).abs() < 1e-14);
        assert!((c3.s1_tilde - 0.31017).abs() < 1e-5);
    }

    #[test]
    fn sobolev_constant_invariants_up_to_10() {
        for n in 2..=10 {
            let c = sobolev_constants(n).unwrap();
            assert!(c.s1 < c.s1_tilde);
            let ratio = c.s1 / c.s1_tilde;
            assert!((ratio - (n as f64 - 1.0) / n as f64).abs() < 1e-14);
            let root = c.omega_n.powf(1.0 / n as f64);
            assert!((c.s1 - 1.0 / (n as f64 * root)).abs() < 1e-14);
        }
        assert!(sobolev_constants(1).is_err());
    }
}
