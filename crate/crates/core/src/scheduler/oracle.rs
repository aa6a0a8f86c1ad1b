//! Exact solution of the single-allocation MDP for small channel counts.

use ndarray::Array2;

use super::state::{argmax, space_sizes, Action, AgentState};
use crate::channel::{check_matrices, stationary_distribution, TransitionMatrix};
use crate::error::{invalid, Error, Result};

/// Largest channel count enumerated exactly.
pub const MAX_ORACLE_CHANNELS: usize = 10;

fn check_size(m: usize) -> Result<()> {
    if m > MAX_ORACLE_CHANNELS {
        return Err(Error::TooManyChannels {
            m,
            limit: MAX_ORACLE_CHANNELS,
            context: "value iteration",
        });
    }
    Ok(())
}

/// Expected one-step reward `E[r · w]` for every (state, action) of a
/// single UAV with normalized channel weights `weights`. Transmitting on a
/// vacant channel `m` earns `+w_m` if it stays vacant and `-w_m` if it
/// turns busy; anything else earns 0.
pub fn expected_reward_table(matrices: &[TransitionMatrix], weights: &[f64]) -> Result<Array2<f64>> {
    let m = weights.len();
    check_size(m)?;
    check_matrices(matrices, m)?;
    let (states, actions) = space_sizes(m)?;
    let mut r = Array2::zeros((states as usize, actions));
    for s in 0..(1usize << m) {
        for ch in 0..m {
            if (s >> ch) & 1 == 0 {
                let stay = matrices[ch].prob(0, 0);
                r[[s, ch + 1]] = weights[ch] * (stay - (1.0 - stay));
            }
        }
    }
    Ok(r)
}

/// `(Pv)(s) = Σ_s' P(s, s') v(s')` over the `2^M` vector states, using the
/// product structure of the kernel.
fn expect_next(matrices: &[TransitionMatrix], v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for (ch, mat) in matrices.iter().enumerate() {
        let p = mat.rows();
        let bit = 1usize << ch;
        for i in 0..out.len() {
            if i & bit == 0 {
                let (v0, v1) = (out[i], out[i | bit]);
                out[i] = p[0][0] * v0 + p[0][1] * v1;
                out[i | bit] = p[1][0] * v0 + p[1][1] * v1;
            }
        }
    }
    out
}

/// `(dP)(s') = Σ_s d(s) P(s, s')`.
fn propagate(matrices: &[TransitionMatrix], d: &[f64]) -> Vec<f64> {
    let mut out = d.to_vec();
    for (ch, mat) in matrices.iter().enumerate() {
        let p = mat.rows();
        let bit = 1usize << ch;
        for i in 0..out.len() {
            if i & bit == 0 {
                let (d0, d1) = (out[i], out[i | bit]);
                out[i] = d0 * p[0][0] + d1 * p[1][0];
                out[i | bit] = d0 * p[0][1] + d1 * p[1][1];
            }
        }
    }
    out
}

/// Product of the per-channel stationary laws over the `2^M` states.
pub fn stationary_state_distribution(matrices: &[TransitionMatrix]) -> Result<Vec<f64>> {
    let m = matrices.len();
    check_size(m)?;
    let laws = matrices.iter().map(stationary_distribution).collect::<Result<Vec<_>>>()?;
    Ok((0..(1usize << m))
        .map(|s| {
            laws.iter()
                .enumerate()
                .map(|(ch, &(vac, busy))| if (s >> ch) & 1 == 0 { vac } else { busy })
                .product()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub num_channels: usize,
    /// Optimal state values, `2^M + 1` entries (the last is `Initial`).
    pub values: Vec<f64>,
    pub q: Array2<f64>,
    pub policy: Vec<Action>,
    pub iterations: usize,
}

impl OracleSolution {
    pub fn q_values(&self, state: &AgentState) -> Result<Vec<f64>> {
        Ok(self.q.row(state.index(self.num_channels)?).to_vec())
    }

    /// Actions whose value is within `tol` of the best in `state`.
    pub fn optimal_actions(&self, state: &AgentState, tol: f64) -> Result<Vec<Action>> {
        let q = self.q_values(state)?;
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        q.iter()
            .enumerate()
            .filter(|(_, &v)| v >= best - tol)
            .map(|(a, _)| Action::new(a, self.num_channels))
            .collect()
    }
}

/// Bellman iteration on the exact kernel. From `Initial` the next state is
/// drawn from the stationary law; otherwise each channel follows its chain
/// independently of the action.
pub fn value_iteration(
    matrices: &[TransitionMatrix],
    rewards: &Array2<f64>,
    gamma: f64,
    tol: f64,
) -> Result<OracleSolution> {
    let m = matrices.len();
    check_size(m)?;
    check_matrices(matrices, m)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("{gamma} outside [0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let (states, actions) = space_sizes(m)?;
    let states = states as usize;
    if rewards.dim() != (states, actions) {
        return Err(Error::DimensionMismatch {
            context: "reward table",
            expected: states * actions,
            actual: rewards.len(),
        });
    }
    let pi = stationary_state_distribution(matrices)?;
    let initial = states - 1;

    let mut v = vec![0.0; states];
    let mut q = Array2::zeros((states, actions));
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut ev = expect_next(matrices, &v[..initial]);
        ev.push(pi.iter().zip(&v).map(|(p, x)| p * x).sum());
        let mut delta: f64 = 0.0;
        for s in 0..states {
            for a in 0..actions {
                q[[s, a]] = rewards[[s, a]] + gamma * ev[s];
            }
            let best = q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < tol * (1.0 - gamma) / (2.0 * gamma.max(1e-12)) || gamma == 0.0 {
            break;
        }
    }
    let policy = (0..states)
        .map(|s| Action::new(argmax(&q.row(s).to_vec()), m))
        .collect::<Result<_>>()?;
    Ok(OracleSolution {
        num_channels: m,
        values: v,
        q,
        policy,
        iterations,
    })
}

/// Exact expected sum of rewards over an episode of `slots` decisions that
/// starts in `Initial` and follows `policy` (indexed by state).
pub fn episode_utility(
    matrices: &[TransitionMatrix],
    rewards: &Array2<f64>,
    policy: &[Action],
    slots: usize,
) -> Result<f64> {
    let m = matrices.len();
    check_size(m)?;
    let (states, _) = space_sizes(m)?;
    if policy.len() != states as usize || rewards.nrows() != states as usize {
        return Err(Error::DimensionMismatch {
            context: "policy",
            expected: states as usize,
            actual: policy.len(),
        });
    }
    let initial = states as usize - 1;
    if slots == 0 {
        return Ok(0.0);
    }
    let mut total = rewards[[initial, policy[initial].value()]];
    let mut d = stationary_state_distribution(matrices)?;
    for _ in 1..slots {
        total += d
            .iter()
            .enumerate()
            .map(|(s, p)| p * rewards[[s, policy[s].value()]])
            .sum::<f64>();
        d = propagate(matrices, &d);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn always_vacant() -> TransitionMatrix {
        TransitionMatrix::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn geometric_value_of_free_channel() {
        let mats = vec![always_vacant()];
        let r = expected_reward_table(&mats, &[1.0]).unwrap();
        let sol = value_iteration(&mats, &r, 0.9, 1e-10).unwrap();
        let vacant = AgentState::Fused(crate::spectrum::OccupancyVector::vacant(1));
        assert!((sol.values[vacant.index(1).unwrap()] - 10.0).abs() < 1e-8);
        assert_eq!(sol.policy[0], Action::transmit(0));
    }

    #[test]
    fn myopic_when_undiscounted() {
        let mut rng = substream(4, 0, 0);
        let mats: Vec<_> = (0..3)
            .map(|_| TransitionMatrix::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)).unwrap())
            .collect();
        let r = expected_reward_table(&mats, &[1.0, 0.7, 0.4]).unwrap();
        let sol = value_iteration(&mats, &r, 0.0, 1e-9).unwrap();
        for s in 0..9 {
            assert_eq!(sol.policy[s].value(), argmax(r.row(s).as_slice().unwrap()));
        }
    }

    #[test]
    fn reward_table_entries() {
        let mats = vec![TransitionMatrix::new(0.2, 0.3).unwrap(); 2];
        let r = expected_reward_table(&mats, &[1.0, 0.5]).unwrap();
        assert_eq!(r.dim(), (5, 3));
        assert!((r[[0, 1]] - 0.6).abs() < 1e-12);
        assert!((r[[0, 2]] - 0.3).abs() < 1e-12);
        assert_eq!(r[[1, 1]], 0.0);
        assert!((r[[1, 2]] - 0.3).abs() < 1e-12);
        assert_eq!(r.row(4).sum(), 0.0);
        assert!(r.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn refuses_large_state_spaces() {
        let mats = vec![TransitionMatrix::default(); 11];
        assert!(matches!(
            expected_reward_table(&mats, &[1.0; 11]),
            Err(Error::TooManyChannels { .. })
        ));
    }

    #[test]
    fn kernel_helpers_agree_with_dense_kernel() {
        let mats = vec![TransitionMatrix::new(0.2, 0.3).unwrap(), TransitionMatrix::new(0.6, 0.1).unwrap()];
        let dense = |s: usize, t: usize| -> f64 {
            (0..2)
                .map(|ch| mats[ch].prob(((s >> ch) & 1) as u8, ((t >> ch) & 1) as u8))
                .product()
        };
        let v = [1.0, -2.0, 0.5, 3.0];
        let ev = expect_next(&mats, &v);
        let d = propagate(&mats, &v);
        for s in 0..4 {
            let e: f64 = (0..4).map(|t| dense(s, t) * v[t]).sum();
            let p: f64 = (0..4).map(|t| v[t] * dense(t, s)).sum();
            assert!((ev[s] - e).abs() < 1e-12);
            assert!((d[s] - p).abs() < 1e-12);
        }
        let pi = stationary_state_distribution(&mats).unwrap();
        let next = propagate(&mats, &pi);
        for (a, b) in pi.iter().zip(next) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Solves (I - γP_π) v = r_π by Gaussian elimination.
    fn policy_values(p: &[Vec<f64>], r: &[f64], gamma: f64) -> Vec<f64> {
        let n = r.len();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| f64::from(u8::from(i == j)) - gamma * p[i][j]).collect();
                row.push(r[i]);
                row
            })
            .collect();
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, piv);
            for rr in 0..n {
                if rr != c {
                    let f = a[rr][c] / a[c][c];
                    for k in c..=n {
                        a[rr][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }

    #[test]
    fn matches_brute_force_policy_enumeration() {
        for seed in 0..5 {
            let mut rng = substream(seed, 0, 0);
            let mats: Vec<_> = (0..2)
                .map(|_| TransitionMatrix::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)).unwrap())
                .collect();
            let mut r = Array2::zeros((5, 3));
            r.mapv_inplace(|_: f64| rng.random_range(-1.0..1.0));
            let gamma = 0.8;
            let sol = value_iteration(&mats, &r, gamma, 1e-12).unwrap();

            let pi = stationary_state_distribution(&mats).unwrap();
            let p: Vec<Vec<f64>> = (0..5)
                .map(|s| {
                    let mut row = if s == 4 {
                        pi.clone()
                    } else {
                        let mut e = vec![0.0; 4];
                        e[s] = 1.0;
                        propagate(&mats, &e)
                    };
                    row.push(0.0);
                    row
                })
                .collect();
            let mut best = vec![f64::NEG_INFINITY; 5];
            let mut best_policy = 0;
            for code in 0..3usize.pow(5) {
                let acts: Vec<usize> = (0..5).map(|s| (code / 3usize.pow(s as u32)) % 3).collect();
                let rp: Vec<f64> = (0..5).map(|s| r[[s, acts[s]]]).collect();
                let v = policy_values(&p, &rp, gamma);
                if v.iter().zip(&best).all(|(a, b)| *a >= b - 1e-9) {
                    best = v;
                    best_policy = code;
                }
            }
            for s in 0..5 {
                assert!((sol.values[s] - best[s]).abs() < 1e-8, "seed {seed} state {s}");
                assert_eq!(sol.policy[s].value(), (best_policy / 3usize.pow(s as u32)) % 3);
            }
        }
    }

    #[test]
    fn episode_utility_of_free_channel() {
        let mats = vec![always_vacant()];
        let r = expected_reward_table(&mats, &[1.0]).unwrap();
        let sol = value_iteration(&mats, &r, 0.9, 1e-10).unwrap();
        // first decision is made blind, the rest each earn 1
        assert!((episode_utility(&mats, &r, &sol.policy, 100).unwrap() - 99.0).abs() < 1e-12);
    }

    #[test]
    fn episode_utility_matches_stationary_rate() {
        let mats = vec![TransitionMatrix::new(0.2, 0.3).unwrap(); 2];
        let r = expected_reward_table(&mats, &[1.0, 0.5]).unwrap();
        let sol = value_iteration(&mats, &r, 0.9, 1e-10).unwrap();
        let pi = stationary_state_distribution(&mats).unwrap();
        let rate: f64 = (0..4).map(|s| pi[s] * r[[s, sol.policy[s].value()]]).sum();
        let u = episode_utility(&mats, &r, &sol.policy, 50).unwrap();
        assert!((u - 49.0 * rate).abs() < 1e-9);
        // vacant channel 0 (prob 0.6) earns 0.6, else vacant channel 1 earns 0.3
        assert!((rate - (0.6 * 0.6 + 0.4 * 0.6 * 0.3)).abs() < 1e-12);
    }
}
