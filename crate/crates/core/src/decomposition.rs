//! Splitting the content axis at barrier levels.
//!
//! Between two consecutive breakpoints every state is either active (its barrier range
//! covers the whole interval), saturated (its range lies entirely below), or not yet
//! reachable (its range lies entirely above). Saturated and unreachable states enter the
//! interval equations only through constants.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MmbmModel, StateClassification};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalPartition {
    /// Strictly increasing levels `l_0 < ... < l_K`.
    pub breakpoints: Vec<f64>,
    /// Active states of each interval `[l_{k}, l_{k+1}]` (0-based `k`).
    pub active_sets: Vec<Vec<usize>>,
}

impl IntervalPartition {
    /// Breakpoints are the sorted distinct levels of `lower ∪ upper`; state `i` is active on
    /// an interval when `lower[i] <= lo` and `hi <= upper[i]`.
    pub fn from_barriers(lower: &[f64], upper: &[f64]) -> Self {
        let mut breakpoints: Vec<f64> = lower.iter().chain(upper).copied().collect();
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        let active_sets = breakpoints
            .windows(2)
            .map(|w| {
                (0..lower.len())
                    .filter(|&i| lower[i] <= w[0] && w[1] <= upper[i])
                    .collect()
            })
            .collect();
        IntervalPartition {
            breakpoints,
            active_sets,
        }
    }

    pub fn n_intervals(&self) -> usize {
        self.active_sets.len()
    }

    pub fn bounds(&self, k: usize) -> (f64, f64) {
        (self.breakpoints[k], self.breakpoints[k + 1])
    }

    pub fn is_active(&self, k: usize, i: usize) -> bool {
        self.active_sets[k].contains(&i)
    }

    /// Intervals on which state `i` is active, in increasing order.
    pub fn intervals_of(&self, i: usize) -> Vec<usize> {
        (0..self.n_intervals())
            .filter(|&k| self.is_active(k, i))
            .collect()
    }

    /// Index of the interval containing `z`; ties at a breakpoint go to the right
    /// interval, except at the top level.
    pub fn locate(&self, z: f64) -> Option<usize> {
        let n = self.n_intervals();
        if n == 0 || z < self.breakpoints[0] || z > self.breakpoints[n] {
            return None;
        }
        let k = self.breakpoints.partition_point(|&l| l <= z);
        Some(k.saturating_sub(1).min(n - 1))
    }
}

/// Partition for the stationary problem.
pub fn compute_partition(model: &MmbmModel) -> Result<IntervalPartition> {
    let p = model.params();
    let part = IntervalPartition::from_barriers(&p.a, &p.b);
    if part.breakpoints.len() < 2 {
        return Err(Error::DegenerateModel(part.breakpoints[0]));
    }
    Ok(part)
}

/// How an inactive state `j` looks from inside interval `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outside {
    /// `b(j) <= l_k`: the whole mass `π_j` lies below the interval.
    Saturated,
    /// `a(j) >= l_{k+1}`: no mass of `j` lies strictly below the interval's top.
    NotReached,
}

pub fn outside_kind(model: &MmbmModel, part: &IntervalPartition, k: usize, j: usize) -> Option<Outside> {
    let (lo, hi) = part.bounds(k);
    if model.b(j) <= lo {
        Some(Outside::Saturated)
    } else if model.a(j) >= hi {
        Some(Outside::NotReached)
    } else {
        None
    }
}

/// Right-hand side of the interval ODE for each active state (ordered as the active set):
/// `rhs(i) = -Σ_{j: b(j) <= l_k} q_ji π_j`.
pub fn forcing_constants(part: &IntervalPartition, model: &MmbmModel, k: usize) -> Vec<f64> {
    let q = model.q().matrix();
    let pi = model.pi();
    let (lo, _) = part.bounds(k);
    part.active_sets[k]
        .iter()
        .map(|&i| {
            -(0..model.n_states())
                .filter(|&j| model.b(j) <= lo)
                .map(|j| q[(j, i)] * pi[j])
                .sum::<f64>()
        })
        .collect()
}

/// `Π_j(a(j) ∨ z ∧ b(j))` for an arbitrary CDF family, with the left-limit convention at
/// `a(j)` (no mass strictly below the lower barrier).
pub fn clamped_eval<F: Fn(usize, f64) -> f64>(model: &MmbmModel, cdf: F, j: usize, z: f64) -> f64 {
    if z < model.a(j) {
        0.0
    } else if z >= model.b(j) {
        model.pi()[j]
    } else {
        cdf(j, z)
    }
}

/// Selector lists at the two ends of each interval.
///
/// Lower end of interval `k`: `d` = states shared with the previous interval, `d_bar` =
/// states that start here; the `_plus` / `_tilde` variants intersect with E+ / E+∩E−.
/// Upper end: `u` = shared with the next interval, `u_bar` = states that end here, with
/// `_minus` / `_tilde` intersecting with E− / E+∩E−.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ProjectionMaps {
    pub d: Vec<Vec<usize>>,
    pub d_plus: Vec<Vec<usize>>,
    pub d_tilde: Vec<Vec<usize>>,
    pub d_bar: Vec<Vec<usize>>,
    pub d_bar_plus: Vec<Vec<usize>>,
    pub u: Vec<Vec<usize>>,
    pub u_minus: Vec<Vec<usize>>,
    pub u_tilde: Vec<Vec<usize>>,
    pub u_bar: Vec<Vec<usize>>,
    pub u_bar_minus: Vec<Vec<usize>>,
}

pub fn projection_maps(part: &IntervalPartition, class: &StateClassification) -> ProjectionMaps {
    let empty: Vec<usize> = Vec::new();
    let n = part.n_intervals();
    let mut maps = ProjectionMaps::default();
    for k in 0..n {
        let cur = &part.active_sets[k];
        let prev = if k > 0 { &part.active_sets[k - 1] } else { &empty };
        let next = if k + 1 < n { &part.active_sets[k + 1] } else { &empty };
        let shared_prev: Vec<usize> = cur.iter().copied().filter(|i| prev.contains(i)).collect();
        let new: Vec<usize> = cur.iter().copied().filter(|i| !prev.contains(i)).collect();
        let shared_next: Vec<usize> = cur.iter().copied().filter(|i| next.contains(i)).collect();
        let ending: Vec<usize> = cur.iter().copied().filter(|i| !next.contains(i)).collect();
        let plus = |v: &[usize]| v.iter().copied().filter(|&i| class.is_plus(i)).collect();
        let minus = |v: &[usize]| v.iter().copied().filter(|&i| class.is_minus(i)).collect();
        let both = |v: &[usize]| {
            v.iter()
                .copied()
                .filter(|&i| class.is_plus(i) && class.is_minus(i))
                .collect()
        };
        maps.d_plus.push(plus(&shared_prev));
        maps.d_tilde.push(both(&shared_prev));
        maps.d_bar_plus.push(plus(&new));
        maps.u_minus.push(minus(&shared_next));
        maps.u_tilde.push(both(&shared_next));
        maps.u_bar_minus.push(minus(&ending));
        maps.d.push(shared_prev);
        maps.d_bar.push(new);
        maps.u.push(shared_next);
        maps.u_bar.push(ending);
    }
    maps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_structure, RawModel};
    use proptest::prelude::*;

    fn model(q: Vec<Vec<f64>>, mu: Vec<f64>, sigma: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> MmbmModel {
        validate_structure(&RawModel { q, mu, sigma, a, b }).unwrap()
    }

    fn two(a: [f64; 2], b: [f64; 2]) -> MmbmModel {
        model(
            vec![vec![-1.0, 1.0], vec![2.0, -2.0]],
            vec![-1.0, 1.0],
            vec![1.0, 1.0],
            a.to_vec(),
            b.to_vec(),
        )
    }

    #[test]
    fn partition_examples() {
        let p = compute_partition(&two([0.0, 0.0], [1.0, 2.0])).unwrap();
        assert_eq!(p.breakpoints, vec![0.0, 1.0, 2.0]);
        assert_eq!(p.active_sets, vec![vec![0, 1], vec![1]]);

        let p = compute_partition(&two([0.0, 1.0], [2.0, 3.0])).unwrap();
        assert_eq!(p.breakpoints, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(p.active_sets, vec![vec![0], vec![0, 1], vec![1]]);

        let single = model(vec![vec![0.0]], vec![-1.0], vec![1.0], vec![0.0], vec![1.0]);
        let p = compute_partition(&single).unwrap();
        assert_eq!(p.breakpoints, vec![0.0, 1.0]);
        assert_eq!(p.active_sets, vec![vec![0]]);
    }

    #[test]
    fn all_barriers_equal_is_degenerate() {
        let m = two([1.0, 1.0], [1.0, 1.0]);
        assert!(matches!(compute_partition(&m), Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn locate_prefers_right_interval() {
        let p = compute_partition(&two([0.0, 0.0], [1.0, 2.0])).unwrap();
        assert_eq!(p.locate(0.0), Some(0));
        assert_eq!(p.locate(1.0), Some(1));
        assert_eq!(p.locate(2.0), Some(1));
        assert_eq!(p.locate(2.5), None);
    }

    #[test]
    fn forcing_examples() {
        let m = two([0.0, 0.0], [1.0, 2.0]);
        let p = compute_partition(&m).unwrap();
        assert_eq!(forcing_constants(&p, &m, 0), vec![0.0, 0.0]);
        let q12 = 1.0;
        let f = forcing_constants(&p, &m, 1);
        assert!((f[0] + q12 * m.pi()[0]).abs() < 1e-15);

        // State 2 is not reached on the first interval, so nothing is forced.
        let m = two([0.0, 1.0], [2.0, 3.0]);
        let p = compute_partition(&m).unwrap();
        assert_eq!(forcing_constants(&p, &m, 0), vec![0.0]);
        assert_eq!(outside_kind(&m, &p, 0, 1), Some(Outside::NotReached));
        assert_eq!(outside_kind(&m, &p, 2, 0), Some(Outside::Saturated));
    }

    #[test]
    fn projection_examples() {
        let m = two([0.0, 0.0], [1.0, 2.0]);
        let p = compute_partition(&m).unwrap();
        let maps = projection_maps(&p, &m.classification());
        assert_eq!(maps.u[0], vec![1]);
        assert_eq!(maps.u_tilde[0], vec![1]);
        assert_eq!(maps.u_bar_minus[0], vec![0]);
        assert_eq!(maps.d_bar[0], p.active_sets[0]);
        assert_eq!(maps.u_bar_minus[1], vec![1]);
        assert!(maps.u[1].is_empty());
    }

    proptest! {
        #[test]
        fn partition_invariants(
            n in 1usize..5,
            lows in proptest::collection::vec(0u8..6, 5),
            widths in proptest::collection::vec(0u8..4, 5),
        ) {
            let a: Vec<f64> = lows[..n].iter().map(|&x| x as f64 * 0.5).collect();
            let b: Vec<f64> = (0..n).map(|i| a[i] + widths[i] as f64 * 0.5).collect();
            let part = IntervalPartition::from_barriers(&a, &b);

            let mut levels: Vec<f64> = a.iter().chain(&b).copied().collect();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            prop_assert_eq!(&part.breakpoints, &levels);
            prop_assert!(part.breakpoints.windows(2).all(|w| w[0] < w[1]));

            let class = crate::model::classify(&vec![0.0; n], &vec![1.0; n]);
            let maps = projection_maps(&part, &class);
            // Each state with a nondegenerate range starts in exactly one interval.
            for i in 0..n {
                let starts = maps.d_bar.iter().filter(|s| s.contains(&i)).count();
                let expected = usize::from(a[i] < b[i]);
                prop_assert_eq!(starts, expected);
                if a[i] < b[i] {
                    let k = maps.d_bar.iter().position(|s| s.contains(&i)).unwrap();
                    prop_assert_eq!(part.breakpoints[k], a[i]);
                }
            }
        }

        #[test]
        fn outside_states_match_clamped_definition(
            lows in proptest::collection::vec(0u8..4, 3),
            widths in proptest::collection::vec(1u8..4, 3),
        ) {
            let a: Vec<f64> = lows.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = (0..3).map(|i| a[i] + widths[i] as f64).collect();
            let m = model(
                vec![vec![-2.0, 1.0, 1.0], vec![1.0, -2.0, 1.0], vec![1.0, 1.0, -2.0]],
                vec![-1.0, 0.5, 0.2],
                vec![1.0, 1.0, 0.5],
                a.clone(),
                b.clone(),
            );
            let part = compute_partition(&m).unwrap();
            // Any CDF with the boundary conventions; linear ramps will do.
            let pi = m.pi().clone();
            let ramp = |j: usize, z: f64| pi[j] * (z - a[j]) / (b[j] - a[j]);
            for k in 0..part.n_intervals() {
                let (lo, hi) = part.bounds(k);
                let z = 0.5 * (lo + hi);
                for j in 0..3 {
                    let v = clamped_eval(&m, ramp, j, z);
                    match outside_kind(&m, &part, k, j) {
                        Some(Outside::Saturated) => prop_assert_eq!(v, pi[j]),
                        Some(Outside::NotReached) => prop_assert_eq!(v, 0.0),
                        None => prop_assert!(part.is_active(k, j)),
                    }
                }
            }
        }
    }
}
