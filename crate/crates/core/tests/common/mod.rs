//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tslab_core::{ActivationKind, StudentNet, TeacherNet};

/// Direct Monte-Carlo estimate of `E[(f(x) - f*(x))^2]` and its standard error.
pub fn mc_loss(s: &StudentNet, t: &TeacherNet, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; t.d()];
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..samples {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let e = s.output(&x) - t.output(&x);
        let v = e * e;
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let n = samples as f64;
    (mean, (m2 / (n - 1.0) / n).sqrt())
}

/// Non-increasing sequences of `n` positive parts with sum at most `k`.
pub fn partitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, budget: usize, max_part: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for p in 1..=max_part.min(budget) {
            if budget - p < left - 1 {
                break;
            }
            cur.push(p);
            rec(left - 1, budget - p, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, k, &mut Vec::new(), &mut out);
    out
}

/// Every way to give `n` labeled neurons disjoint non-empty teacher groups out
/// of `k` teacher neurons, as per-neuron index lists.
pub fn labeled_group_assignments(n: usize, k: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let total = (n + 1).pow(k as u32);
    for code in 0..total {
        let mut groups = vec![Vec::new(); n];
        let mut c = code;
        for j in 0..k {
            let slot = c % (n + 1);
            c /= n + 1;
            if slot > 0 {
                groups[slot - 1].push(j);
            }
        }
        if groups.iter().all(|g| !g.is_empty()) {
            out.push(groups);
        }
    }
    out
}

/// Brute-force count of labeled assignments whose group sizes form `partition`.
pub fn brute_force_ca_count(partition: &[usize], k: usize) -> usize {
    let mut target = partition.to_vec();
    target.sort_unstable();
    labeled_group_assignments(partition.len(), k)
        .into_iter()
        .filter(|groups| {
            let mut sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
            sizes.sort_unstable();
            sizes == target
        })
        .count()
}

pub fn random_theta(len: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub const SMOOTH_KINDS: [ActivationKind; 5] = [
    ActivationKind::Erf,
    ActivationKind::Tanh,
    ActivationKind::Sigmoid,
    ActivationKind::Softplus { beta: 1.0 },
    ActivationKind::Gelu,
];
