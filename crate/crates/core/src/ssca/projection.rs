//! Euclidean projection onto ordered, minimally spaced positions in a box.
//!
//! Per waveguide the feasible set is
//! `{0 <= x_1, x_l - x_{l-1} >= delta, x_L <= s_x}`. Substituting
//! `y_l = x_l - (l - 1) delta` turns it into nondecreasing `y` in
//! `[0, s_x - (L - 1) delta]`, whose projection is the clamped isotonic
//! regression of the shifted target.

use nalgebra::{DMatrix, DVector};

use crate::config::SystemConfig;
use crate::model::PinchingLayout;

/// Least-squares nondecreasing fit (pool adjacent violators, unit weights).
pub fn isotonic_nondecreasing(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 > s1 / c1 as f64 {
                blocks.pop();
                let last = blocks.last_mut().unwrap();
                *last = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (s, c) in blocks {
        let mean = s / c as f64;
        out.extend(std::iter::repeat_n(mean, c));
    }
    out
}

/// Projects one row of target positions onto the feasible set.
pub fn project_row(target: &[f64], delta: f64, s_x: f64) -> Vec<f64> {
    let shifted: Vec<f64> = target
        .iter()
        .enumerate()
        .map(|(l, z)| z - l as f64 * delta)
        .collect();
    let upper = (s_x - (target.len().saturating_sub(1)) as f64 * delta).max(0.0);
    let mut x: Vec<f64> = isotonic_nondecreasing(&shifted)
        .into_iter()
        .enumerate()
        .map(|(l, y)| y.clamp(0.0, upper) + l as f64 * delta)
        .collect();
    repair_row(&mut x, delta, s_x);
    x
}

/// Moves a row that is feasible up to rounding onto the exactly feasible
/// set, changing entries by at most a few ulps when the input is within
/// rounding of feasibility.
pub fn repair_row(x: &mut [f64], delta: f64, s_x: f64) {
    let len = x.len();
    if len == 0 {
        return;
    }
    x[0] = x[0].max(0.0);
    for l in 1..len {
        if x[l] - x[l - 1] < delta {
            x[l] = x[l - 1] + delta;
            while x[l] - x[l - 1] < delta {
                x[l] = x[l].next_up();
            }
        }
    }
    if x[len - 1] > s_x {
        x[len - 1] = s_x;
        for l in (0..len - 1).rev() {
            if x[l + 1] - x[l] < delta {
                x[l] = x[l + 1] - delta;
                while x[l + 1] - x[l] < delta {
                    x[l] = x[l].next_down();
                }
            }
        }
        x[0] = x[0].max(0.0);
    }
}

/// Row-wise projection of an `N x L` target onto the feasible layouts of `cfg`.
pub fn project_layout(cfg: &SystemConfig, target: &DMatrix<f64>) -> PinchingLayout {
    let mut out = target.clone();
    for n in 0..target.nrows() {
        let row: Vec<f64> = target.row(n).iter().copied().collect();
        let projected = project_row(&row, cfg.delta_min, cfg.s_x);
        for (l, v) in projected.into_iter().enumerate() {
            out[(n, l)] = v;
        }
    }
    PinchingLayout::new(out)
}

/// Reference projection by enumerating all `2^(L+1)` active sets of the
/// constraints and keeping the best feasible stationary point. Exponential
/// in `L`; meant for checking [`project_row`] on short rows. `None` when
/// the feasible set is empty.
pub fn project_row_brute_force(target: &[f64], delta: f64, s_x: f64) -> Option<Vec<f64>> {
    let len = target.len();
    if len == 0 {
        return Some(Vec::new());
    }
    // rows of A x >= b
    let mut a = DMatrix::<f64>::zeros(len + 1, len);
    let mut b = vec![0.0; len + 1];
    a[(0, 0)] = 1.0;
    for l in 1..len {
        a[(l, l)] = 1.0;
        a[(l, l - 1)] = -1.0;
        b[l] = delta;
    }
    a[(len, len - 1)] = -1.0;
    b[len] = -s_x;

    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (len + 1)) {
        let active: Vec<usize> = (0..=len).filter(|i| mask & (1 << i) != 0).collect();
        let m = active.len();
        let mut kkt = DMatrix::<f64>::zeros(len + m, len + m);
        let mut rhs = DVector::<f64>::zeros(len + m);
        for i in 0..len {
            kkt[(i, i)] = 2.0;
            rhs[i] = 2.0 * target[i];
        }
        for (j, &c) in active.iter().enumerate() {
            for i in 0..len {
                kkt[(len + j, i)] = a[(c, i)];
                kkt[(i, len + j)] = a[(c, i)];
            }
            rhs[len + j] = b[c];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x: Vec<f64> = sol.iter().take(len).copied().collect();
        let feasible = (0..=len).all(|c| {
            let ax: f64 = (0..len).map(|i| a[(c, i)] * x[i]).sum();
            ax >= b[c] - 1e-10
        });
        if !feasible || x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let cost: f64 = x.iter().zip(target).map(|(p, q)| (p - q).powi(2)).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, x));
        }
    }
    best.map(|(_, x)| x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force_qp() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let len = rng.random_range(2..=4);
            let s_x = rng.random_range(0.5..5.0);
            let delta = rng.random_range(0.0..s_x / (len as f64 - 1.0));
            let target: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5 * s_x..1.5 * s_x)).collect();
            let got = project_row(&target, delta, s_x);
            let want = project_row_brute_force(&target, delta, s_x).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-8, "{target:?} {delta} {s_x}: {got:?} vs {want:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_exactly_feasible(
            target in prop::collection::vec(-30.0f64..50.0, 1..10),
            delta in 0.0f64..1.0,
        ) {
            let s_x = 20.0;
            let x = project_row(&target, delta, s_x);
            prop_assert!(x[0] >= 0.0);
            prop_assert!(*x.last().unwrap() <= s_x);
            prop_assert!(x.windows(2).all(|w| w[1] - w[0] >= delta));
        }

        #[test]
        fn projection_is_idempotent(target in prop::collection::vec(-5.0f64..25.0, 1..8)) {
            let once = project_row(&target, 0.3, 20.0);
            let twice = project_row(&once, 0.3, 20.0);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pava_basic() {
        assert_eq!(isotonic_nondecreasing(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_nondecreasing(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(isotonic_nondecreasing(&[]), Vec::<f64>::new());
    }

    #[test]
    fn spacing_example() {
        let x = project_row(&[5.0, 4.0, 6.0], 1.0, 10.0);
        for (a, b) in x.iter().zip([4.0, 5.0, 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn feasible_point_is_fixed() {
        let row = [0.5, 2.0, 2.7, 9.9];
        assert_eq!(project_row(&row, 0.7, 10.0), row.to_vec());
    }

    #[test]
    fn upper_box_pools() {
        let x = project_row(&[9.0, 12.0, 11.0], 1.0, 10.0);
        assert_eq!(x, vec![8.0, 9.0, 10.0]);
    }

    #[test]
    fn repair_reaches_exact_spacing() {
        let delta = 0.1;
        let mut x = vec![0.3, 0.3 + delta - 1e-17, 0.3 + 2.0 * delta - 3e-17];
        repair_row(&mut x, delta, 1.0);
        assert!(x.windows(2).all(|w| w[1] - w[0] >= delta));
    }
}
