use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Largest `n` accepted by [`brute_force_assignment`].
pub const BRUTE_FORCE_MAX: usize = 9;

/// A permutation `σ` pairing row `i` with column `σ[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    /// Mean assigned cost `(1/n) Σᵢ C[i][σ(i)]`.
    pub cost: f64,
}

impl Assignment {
    fn from_permutation(cost: ArrayView2<'_, f64>, permutation: Vec<usize>) -> Self {
        let cost = mean_cost(cost, &permutation);
        Self { permutation, cost }
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(i, s)| i == *s)
    }
}

/// `(1/n) Σᵢ C[i][σ(i)]`, summed in row order.
pub fn mean_cost(cost: ArrayView2<'_, f64>, permutation: &[usize]) -> f64 {
    let total: f64 = permutation.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    total / permutation.len() as f64
}

fn validate(cost: ArrayView2<'_, f64>) -> Result<usize> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::NotSquare { rows: n, cols: m });
    }
    if n == 0 {
        return Err(Error::Empty("cost matrix"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    Ok(n)
}

/// Minimum-cost perfect matching in `O(n³)`.
///
/// Shortest augmenting paths with row/column potentials (the Jonker–Volgenant
/// form of the Hungarian method): rows are inserted one at a time and each
/// insertion runs a Dijkstra-like scan over reduced costs.
pub fn exact_assignment(cost: ArrayView2<'_, f64>) -> Result<Assignment> {
    let n = validate(cost)?;
    // 1-based bookkeeping; column 0 is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for j in 1..=n {
        permutation[owner[j] - 1] = j - 1;
    }
    Ok(Assignment::from_permutation(cost, permutation))
}

/// Exhaustive minimum over all `n!` permutations; `n ≤ 9`.
///
/// Ties keep the lexicographically first minimizer.
pub fn brute_force_assignment(cost: ArrayView2<'_, f64>) -> Result<Assignment> {
    let n = validate(cost)?;
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge { n, max: BRUTE_FORCE_MAX });
    }
    let mut best = (f64::INFINITY, Vec::new());
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    search(cost, 0.0, &mut current, &mut used, &mut best);
    Ok(Assignment::from_permutation(cost, best.1))
}

fn search(
    cost: ArrayView2<'_, f64>,
    partial: f64,
    current: &mut Vec<usize>,
    used: &mut [bool],
    best: &mut (f64, Vec<usize>),
) {
    let row = current.len();
    if row == used.len() {
        if partial < best.0 {
            *best = (partial, current.clone());
        }
        return;
    }
    for j in 0..used.len() {
        if used[j] {
            continue;
        }
        used[j] = true;
        current.push(j);
        search(cost, partial + cost[[row, j]], current, used, best);
        current.pop();
        used[j] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two() {
        let a = exact_assignment(array![[0.0, 1.0], [1.0, 0.0]].view()).unwrap();
        assert_eq!(a.permutation, vec![0, 1]);
        assert_eq!(a.cost, 0.0);
        let a = exact_assignment(array![[5.0, 1.0], [1.0, 5.0]].view()).unwrap();
        assert_eq!(a.permutation, vec![1, 0]);
        assert_eq!(a.cost, 1.0);
    }

    #[test]
    fn single() {
        let a = brute_force_assignment(array![[3.5]].view()).unwrap();
        assert_eq!(a.permutation, vec![0]);
        assert_eq!(a.cost, 3.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(exact_assignment(Array2::zeros((2, 3)).view()), Err(Error::NotSquare { .. })));
        assert!(matches!(brute_force_assignment(Array2::zeros((10, 10)).view()), Err(Error::TooLarge { .. })));
        assert!(matches!(exact_assignment(array![[f64::INFINITY]].view()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn six_by_six_against_all_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let c = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>());
            let fast = exact_assignment(c.view()).unwrap();
            let slow = brute_force_assignment(c.view()).unwrap();
            assert_eq!(fast.cost, slow.cost);
        }
    }

    #[test]
    fn sweep_5x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let c = Array2::from_shape_fn((5, 5), |_| rng.random_range(-2.0..2.0));
            assert_eq!(exact_assignment(c.view()).unwrap().cost, brute_force_assignment(c.view()).unwrap().cost);
        }
    }

    #[test]
    fn ties_share_the_optimal_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let c = Array2::from_shape_fn((5, 5), |_| rng.random_range(0..3) as f64);
            let a = exact_assignment(c.view()).unwrap();
            let b = brute_force_assignment(c.view()).unwrap();
            assert_eq!(a.cost, b.cost);
        }
    }

    #[test]
    fn permutation_is_bijection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Array2::from_shape_fn((40, 40), |_| rng.random::<f64>());
        let mut p = exact_assignment(c.view()).unwrap().permutation;
        p.sort_unstable();
        assert_eq!(p, (0..40).collect::<Vec<_>>());
    }
}
