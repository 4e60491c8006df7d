//! Exact single-controller total-reward solvers on absorbing structure,
//! shared by the value oracles, the recursive-game machinery, and the
//! product-space best responses.

use std::collections::BTreeSet;

use num::{One, Signed, Zero};

use crate::lp;
use crate::{Error, Rational, Result};


/// A single-controller decision problem whose rewards live on terminal
/// nodes only (total reward, zero payoff on nonterminating runs).
#[derive(Debug, Clone)]
pub struct AbsorbingMdp {
    /// Per node: `None` for decision nodes, `Some(value)` for terminals.
    pub terminal: Vec<Option<Rational>>,
    /// Per decision node and action: sparse successor distribution.
    /// Terminal nodes carry an empty action list.
    pub transitions: Vec<Vec<Vec<(usize, Rational)>>>,
}

impl AbsorbingMdp {
    pub fn num_nodes(&self) -> usize {
        self.terminal.len()
    }

    fn check(&self) -> Result<()> {
        for (u, t) in self.terminal.iter().enumerate() {
            if t.is_none() && self.transitions[u].is_empty() {
                return Err(Error::Dimension(format!(
                    "decision node {u} has no actions"
                )));
            }
        }
        Ok(())
    }
}

/// Exact optimal values and a pure optimal policy for the maximizer.
///
/// Terminal rewards must be single-signed: all nonnegative (the maximizer
/// wants absorption) or all nonpositive (the maximizer prefers the zero
/// payoff of nontermination). The two regimes need different machinery.
pub fn solve_absorbing_mdp(mdp: &AbsorbingMdp) -> Result<(Vec<Rational>, Vec<usize>)> {
    mdp.check()?;
    let nonneg = mdp
        .terminal
        .iter()
        .flatten()
        .all(|v| !v.is_negative());
    let nonpos = mdp
        .terminal
        .iter()
        .flatten()
        .all(|v| !v.is_positive());
    if nonneg {
        solve_positive(mdp)
    } else if nonpos {
        solve_negative(mdp)
    } else {
        Err(Error::ValueOracle(
            "absorbing rewards mix signs; total-reward solve needs a single-signed player".into(),
        ))
    }
}

/// Immediate reward of `(node, action)`: mass into terminals weighted by
/// their values; plus the sparse continuation over decision nodes.
fn split_action(
    mdp: &AbsorbingMdp,
    u: usize,
    a: usize,
) -> (Rational, Vec<(usize, Rational)>) {
    let mut reward = Rational::zero();
    let mut cont = Vec::new();
    for (w, p) in &mdp.transitions[u][a] {
        match &mdp.terminal[*w] {
            Some(v) => reward += p * v,
            None => cont.push((*w, p.clone())),
        }
    }
    (reward, cont)
}

/// Positive case: the value is the least nonnegative superharmonic vector;
/// solved by the exact LP `min Σv  s.t.  v ≥ r_a + P_a v, v ≥ 0`.
fn solve_positive(mdp: &AbsorbingMdp) -> Result<(Vec<Rational>, Vec<usize>)> {
    let decision: Vec<usize> = (0..mdp.num_nodes())
        .filter(|&u| mdp.terminal[u].is_none())
        .collect();
    let index: std::collections::BTreeMap<usize, usize> = decision
        .iter()
        .enumerate()
        .map(|(k, &u)| (u, k))
        .collect();
    let n = decision.len();
    if n == 0 {
        return Ok((
            mdp.terminal.iter().map(|t| t.clone().unwrap()).collect(),
            vec![0; mdp.num_nodes()],
        ));
    }
    // max -Σ v  s.t.  P_a v - v_u <= -r_a  for every (u, a); v >= 0.
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (&u, &k) in index.iter() {
        for a in 0..mdp.transitions[u].len() {
            let (r, cont) = split_action(mdp, u, a);
            let mut row = vec![Rational::zero(); n];
            for (w, p) in cont {
                row[index[&w]] += p;
            }
            row[k] -= Rational::one();
            rows.push(row);
            rhs.push(-r);
        }
    }
    let objective = vec![-Rational::one(); n];
    let sol = lp::maximize(&objective, &rows, &rhs)?;
    let mut values: Vec<Rational> = mdp
        .terminal
        .iter()
        .map(|t| t.clone().unwrap_or_else(Rational::zero))
        .collect();
    for (&u, &k) in index.iter() {
        values[u] = sol.x[k].clone();
    }

    // Policy extraction: among one-step-optimal actions, follow those with
    // progress toward terminals or already-marked nodes.
    let mut policy = vec![0usize; mdp.num_nodes()];
    let mut marked: Vec<bool> = (0..mdp.num_nodes())
        .map(|u| mdp.terminal[u].is_some() || values[u].is_zero())
        .collect();
    loop {
        let mut changed = false;
        for &u in &decision {
            if marked[u] {
                continue;
            }
            for a in 0..mdp.transitions[u].len() {
                let (r, cont) = split_action(mdp, u, a);
                let q: Rational =
                    &r + &cont.iter().map(|(w, p)| p * &values[*w]).sum::<Rational>();
                if q != values[u] {
                    continue;
                }
                let progress = r.is_positive()
                    || mdp.transitions[u][a]
                        .iter()
                        .any(|(w, _)| marked[*w] && !values[*w].is_zero())
                    || cont.iter().any(|(w, _)| marked[*w]);
                if progress {
                    policy[u] = a;
                    marked[u] = true;
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for &u in &decision {
        if !marked[u] {
            return Err(Error::ValueOracle(format!(
                "no progressing optimal action at node {u}"
            )));
        }
    }
    Ok((values, policy))
}

/// Negative case: compute the safe region where the maximizer avoids
/// absorption forever (value zero), then run exact policy iteration on the
/// remaining proper stochastic-shortest-path problem.
fn solve_negative(mdp: &AbsorbingMdp) -> Result<(Vec<Rational>, Vec<usize>)> {
    let n_all = mdp.num_nodes();
    // Greatest fixed point: nodes from which some action stays inside.
    let mut safe: BTreeSet<usize> = (0..n_all).filter(|&u| mdp.terminal[u].is_none()).collect();
    let mut safe_action = vec![0usize; n_all];
    loop {
        let mut removed = false;
        let snapshot = safe.clone();
        for &u in &snapshot {
            let ok = (0..mdp.transitions[u].len()).find(|&a| {
                mdp.transitions[u][a]
                    .iter()
                    .all(|(w, _)| snapshot.contains(w))
            });
            match ok {
                Some(a) => safe_action[u] = a,
                None => {
                    safe.remove(&u);
                    removed = true;
                }
            }
        }
        if !removed {
            break;
        }
    }

    let mut values: Vec<Rational> = (0..n_all)
        .map(|u| mdp.terminal[u].clone().unwrap_or_else(Rational::zero))
        .collect();
    let working: Vec<usize> = (0..n_all)
        .filter(|&u| mdp.terminal[u].is_none() && !safe.contains(&u))
        .collect();
    if working.is_empty() {
        let mut policy = vec![0usize; n_all];
        for &u in &safe {
            policy[u] = safe_action[u];
        }
        return Ok((values, policy));
    }
    let index: std::collections::BTreeMap<usize, usize> = working
        .iter()
        .enumerate()
        .map(|(k, &u)| (u, k))
        .collect();
    // Safe nodes act as value-zero terminals for the remaining SSP, on which
    // every policy absorbs almost surely.
    let value_of = |w: usize, v: &[Rational]| -> Rational {
        if safe.contains(&w) {
            Rational::zero()
        } else {
            v[w].clone()
        }
    };
    let mut policy = vec![0usize; n_all];
    for &u in &safe {
        policy[u] = safe_action[u];
    }
    let evaluate = |policy: &[usize]| -> Result<Vec<Rational>> {
        let m = working.len();
        let mut a = vec![vec![Rational::zero(); m]; m];
        let mut b = vec![Rational::zero(); m];
        for (&u, &k) in index.iter() {
            a[k][k] = Rational::one();
            for (w, p) in &mdp.transitions[u][policy[u]] {
                if let Some(&kw) = index.get(w) {
                    a[k][kw] -= p;
                } else if let Some(t) = &mdp.terminal[*w] {
                    b[k] += p * t;
                }
                // Safe nodes contribute zero.
            }
        }
        lp::solve_linear(&a, &b)
            .ok_or_else(|| Error::ValueOracle("improper policy in negative solve".into()))
    };
    // Policy iteration with strict improvement; all policies proper here.
    for &u in &working {
        policy[u] = 0;
    }
    loop {
        let vals = evaluate(&policy)?;
        for (&u, &k) in index.iter() {
            values[u] = vals[k].clone();
        }
        let mut improved = false;
        for &u in &working {
            let current = values[u].clone();
            let mut best = current.clone();
            let mut best_a = policy[u];
            for a in 0..mdp.transitions[u].len() {
                let q: Rational = mdp.transitions[u][a]
                    .iter()
                    .map(|(w, p)| {
                        p * &match &mdp.terminal[*w] {
                            Some(t) => t.clone(),
                            None => value_of(*w, &values),
                        }
                    })
                    .sum();
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            if best_a != policy[u] && best > current {
                policy[u] = best_a;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok((values, policy))
}

