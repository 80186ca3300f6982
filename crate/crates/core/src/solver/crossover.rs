//! Exact finish from an approximate plan.
//!
//! At an optimum every split item is tied: `β_i v_τi` is equal over its
//! support. When the agents linked by split items form a forest, those ties
//! fix the ratios of `β` inside each linked group, leaving one scale per
//! group. The scales minimize a smooth convex function of at most `n`
//! variables, solved here by Newton. The split fractions then follow from a
//! small linear system that matches the utilities `∇ψ(β)` demands. Rows
//! tied on the same ratio as a tree edge (repeated or clamped values) stay
//! split as parallel edges, and the system takes its least-norm solution.
//! Whatever comes out is judged only by the full certificate.

use nalgebra::{DMatrix, DVector};

use super::{Certificate, Program};

/// Plan entries below this fraction count as noise, not support.
const FRACTION_FLOOR: f64 = 1e-7;
/// Give up when more rows than this look split.
const MAX_SPLIT_ROWS: usize = 1024;
/// A split entry that closes a cycle is kept when its value ratio matches
/// the price ratio already implied by the tree to this log tolerance.
const PARALLEL_TOL: f64 = 1e-8;
/// Larger fraction systems are solved through the normal equations.
const SVD_MAX_UNKNOWNS: usize = 64;
const MAX_NEWTON: usize = 60;
/// Support corrections tried before giving up.
const MAX_ROUNDS: usize = 8;
/// Share left on an entry that the prices no longer support, so that the
/// next round can still split the row.
const TOKEN_SHARE: f64 = 1e-6;

pub(crate) fn crossover(program: &Program, x: &[f64], beta_hint: &[f64]) -> Option<(Vec<f64>, Certificate)> {
    let n = program.n;
    let mut x = x.to_vec();
    let mut hint = beta_hint.to_vec();
    let mut best: Option<(Vec<f64>, Certificate)> = None;
    for _ in 0..MAX_ROUNDS {
        match attempt(program, &x, &hint) {
            Attempt::Done(plan, cert) => {
                if cert.kkt_ok {
                    return Some((plan, cert));
                }
                // Wrong support guess: move violating mass to the row
                // maximizer under the new prices, leaving a token share
                // behind so the row may still come out split.
                let thr = program.kkt_threshold(&cert.beta);
                x = plan.clone();
                for (v, xr) in program.rows.chunks_exact(n).zip(x.chunks_exact_mut(n)) {
                    let (top, mx) = super::argmax_scaled(&cert.beta, v);
                    for i in 0..n {
                        if i != top && xr[i] > 0.0 && mx - cert.beta[i] * v[i] > thr {
                            let keep = TOKEN_SHARE.min(xr[i]);
                            xr[top] += xr[i] - keep;
                            xr[i] = keep;
                        }
                    }
                }
                hint.clone_from(&cert.beta);
                if best.as_ref().map_or(true, |(_, b)| cert.gap() < b.gap()) {
                    best = Some((plan, cert));
                }
            }
            Attempt::Drop(entries) => {
                for e in entries {
                    let t = e / n;
                    let xr = &mut x[t * n..(t + 1) * n];
                    let i = e % n;
                    let mass = xr[i];
                    xr[i] = 0.0;
                    let top = (0..n).max_by(|&a, &b| xr[a].total_cmp(&xr[b])).unwrap_or(0);
                    xr[top] += mass;
                }
            }
            Attempt::Fail => break,
        }
    }
    best
}

enum Attempt {
    Done(Vec<f64>, Certificate),
    /// Support entries whose solved fraction came out negative.
    Drop(Vec<usize>),
    Fail,
}

fn attempt(program: &Program, x: &[f64], beta_hint: &[f64]) -> Attempt {
    let n = program.n;
    let m = program.m();
    let rows = &program.rows;

    // Support per row, largest fraction first.
    let mut fixed: Vec<Option<usize>> = vec![None; m];
    let mut split: Vec<(usize, Vec<usize>)> = Vec::new();
    for t in 0..m {
        let xr = &x[t * n..(t + 1) * n];
        let v = &rows[t * n..(t + 1) * n];
        let mut support: Vec<usize> = (0..n).filter(|&i| xr[i] >= FRACTION_FLOOR && v[i] > 0.0).collect();
        if support.is_empty() {
            support.push(super::argmax_scaled(beta_hint, v).0);
        }
        support.sort_by(|&a, &b| xr[b].total_cmp(&xr[a]));
        if support.len() == 1 {
            fixed[t] = Some(support[0]);
        } else {
            split.push((t, support));
        }
    }
    if split.len() > MAX_SPLIT_ROWS {
        return Attempt::Fail;
    }
    // Strongest splits claim tree edges first; an entry that would close a
    // cycle is dropped.
    split.sort_by(|a, b| {
        let second = |(t, s): &(usize, Vec<usize>)| x[t * n + s[1]];
        second(b).total_cmp(&second(a))
    });
    let mut parent: Vec<usize> = (0..n).collect();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut kept: Vec<(usize, Vec<usize>)> = Vec::new();
    for (t, support) in split {
        let v = &rows[t * n..(t + 1) * n];
        let head = support[0];
        let mut members = vec![head];
        for &j in &support[1..] {
            // β_j = β_head · v_head / v_j
            let ratio = (v[head] / v[j]).ln();
            let (a, b) = (find(&mut parent, head), find(&mut parent, j));
            if a != b {
                parent[b] = a;
                adjacency[head].push((j, ratio));
                adjacency[j].push((head, -ratio));
                members.push(j);
            } else if tree_log_ratio(&adjacency, head, j).is_some_and(|r| (r - ratio).abs() <= PARALLEL_TOL) {
                members.push(j);
            }
        }
        if members.len() == 1 {
            fixed[t] = Some(head);
        } else {
            kept.push((t, members));
        }
    }

    // Log-ratios within each group, anchored at the group root.
    let mut group = vec![usize::MAX; n];
    let mut log_ratio = vec![0.0; n];
    let mut roots = Vec::new();
    for start in 0..n {
        if group[start] != usize::MAX {
            continue;
        }
        let g = roots.len();
        roots.push(start);
        group[start] = g;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for &(j, r) in &adjacency[i] {
                if group[j] == usize::MAX {
                    group[j] = g;
                    log_ratio[j] = log_ratio[i] + r;
                    stack.push(j);
                }
            }
        }
    }
    let k = roots.len();
    let ratio: Vec<f64> = log_ratio.iter().map(|l| l.exp()).collect();

    // Φ(s) = Σ_g s_g A_g + ψ(β(s)) with β_i = s_{g(i)} r_i.
    let inv_t = 1.0 / program.t_total;
    let mut a = vec![0.0; k];
    for i in 0..n {
        a[group[i]] += ratio[i] * program.past[i] * inv_t;
    }
    for (t, f) in fixed.iter().enumerate() {
        if let Some(i) = *f {
            a[group[i]] += ratio[i] * rows[t * n + i] * inv_t;
        }
    }
    for (t, members) in &kept {
        let i = members[0];
        a[group[i]] += ratio[i] * rows[t * n + i] * inv_t;
    }
    if a.iter().any(|&ag| !(ag > 0.0)) {
        return Attempt::Fail;
    }

    let mut s: Vec<f64> = roots.iter().map(|&r| beta_hint[r]).collect();
    let mut beta = vec![0.0; n];
    let mut shares = vec![0.0; n];
    let mut converged = false;
    for _ in 0..MAX_NEWTON {
        for i in 0..n {
            beta[i] = s[group[i]] * ratio[i];
        }
        program.spec.conjugate_shares(&beta, &mut shares);
        // In y = ln s the gradient is s_g A_g − Ω_g with Ω_g the group share.
        let mut grad = vec![0.0; k];
        for g in 0..k {
            grad[g] = s[g] * a[g];
        }
        for i in 0..n {
            grad[group[i]] -= shares[i];
        }
        if grad.iter().all(|g| g.abs() <= 1e-15) {
            converged = true;
            break;
        }
        let mut hb = vec![0.0; n * n];
        program.spec.add_conjugate_hessian(&beta, &shares, &mut hb);
        let mut h = DMatrix::zeros(k, k);
        for i in 0..n {
            for j in 0..n {
                h[(group[i], group[j])] += beta[i] * beta[j] * hb[i * n + j];
            }
        }
        for g in 0..k {
            h[(g, g)] += grad[g];
        }
        let step = match h.cholesky() {
            Some(chol) => chol.solve(&DVector::from_column_slice(&grad)),
            None => return Attempt::Fail,
        };
        let longest = step.amax();
        let damp = if longest > 1.0 { 1.0 / longest } else { 1.0 };
        for g in 0..k {
            s[g] *= (-damp * step[g]).exp();
        }
    }
    if !converged {
        return Attempt::Fail;
    }

    // Residual utility each agent still needs from split rows.
    let mut need: Vec<f64> = (0..n).map(|i| program.t_total * shares[i] / beta[i] - program.past[i]).collect();
    for (t, f) in fixed.iter().enumerate() {
        if let Some(i) = *f {
            need[i] -= rows[t * n + i];
        }
    }
    let mut plan = vec![0.0; x.len()];
    for (t, f) in fixed.iter().enumerate() {
        if let Some(i) = *f {
            plan[t * n + i] = 1.0;
        }
    }
    if !kept.is_empty() {
        let unknowns: usize = kept.iter().map(|(_, mem)| mem.len()).sum();
        let fractions = if unknowns <= SVD_MAX_UNKNOWNS {
            let mut lhs = DMatrix::zeros(kept.len() + n, unknowns);
            let mut rhs = DVector::zeros(kept.len() + n);
            let mut col = 0;
            for (r, (t, members)) in kept.iter().enumerate() {
                rhs[r] = 1.0;
                for &i in members {
                    lhs[(r, col)] = 1.0;
                    lhs[(kept.len() + i, col)] = rows[t * n + i];
                    col += 1;
                }
            }
            for i in 0..n {
                rhs[kept.len() + i] = need[i];
            }
            match lhs.svd(true, true).solve(&rhs, 1e-14) {
                Ok(f) => f.as_slice().to_vec(),
                Err(_) => return Attempt::Fail,
            }
        } else {
            match least_norm(&kept, rows, n, &need) {
                Some(f) => f,
                None => return Attempt::Fail,
            }
        };
        let mut negative = Vec::new();
        let mut col = 0;
        for (t, members) in &kept {
            for &i in members {
                if fractions[col] < -1e-9 {
                    negative.push(t * n + i);
                }
                plan[t * n + i] = fractions[col].max(0.0);
                col += 1;
            }
            let xr = &mut plan[t * n..(t + 1) * n];
            let total: f64 = xr.iter().sum();
            for xi in xr.iter_mut() {
                *xi /= total;
            }
        }
        if !negative.is_empty() {
            return Attempt::Drop(negative);
        }
    }
    let cert = program.certificate(&plan);
    Attempt::Done(plan, cert)
}

/// `ln β_to − ln β_from` along the tree path, if the two are connected.
fn tree_log_ratio(adjacency: &[Vec<(usize, f64)>], from: usize, to: usize) -> Option<f64> {
    let mut seen = vec![false; adjacency.len()];
    let mut stack = vec![(from, 0.0)];
    seen[from] = true;
    while let Some((i, acc)) = stack.pop() {
        if i == to {
            return Some(acc);
        }
        for &(j, r) in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push((j, acc + r));
            }
        }
    }
    None
}

/// Least-norm fractions for the split rows.
///
/// Unknown `f_ri` sits in row equation `Σ_i f_ri = 1` and agent equation
/// `Σ_r v_ri f_ri = need_i`, so the least-norm solution has the form
/// `f_ri = λ_r + v_ri μ_i`. Eliminating `λ` leaves an `n × n` system in `μ`.
fn least_norm(kept: &[(usize, Vec<usize>)], rows: &[f64], n: usize, need: &[f64]) -> Option<Vec<f64>> {
    let mut schur = DMatrix::zeros(n, n);
    let mut rhs = DVector::from_column_slice(need);
    for (t, members) in kept {
        let v = &rows[t * n..(t + 1) * n];
        let size = members.len() as f64;
        for &i in members {
            schur[(i, i)] += v[i] * v[i];
            rhs[i] -= v[i] / size;
            for &j in members {
                schur[(i, j)] -= v[i] * v[j] / size;
            }
        }
    }
    let mu = schur.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let mut out = Vec::new();
    for (t, members) in kept {
        let v = &rows[t * n..(t + 1) * n];
        let lambda = (1.0 - members.iter().map(|&i| v[i] * mu[i]).sum::<f64>()) / members.len() as f64;
        out.extend(members.iter().map(|&i| lambda + v[i] * mu[i]));
    }
    Some(out)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}
