//! Policy sampling for the stochastic credit-assignment branch.
//!
//! Samples are drawn from the k most probable tokens, either from the
//! renormalized model distribution or uniformly; the REINFORCE surrogate
//! then weights sampled log-probs by the (constant) discriminator verdict.
//! The Gaussian variant instead perturbs the decoder's initial state and
//! differentiates straight through a relaxed discriminator score.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

/// How the policy branch draws its sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    CategoricalTopK,
    UniformTopK,
    Gaussian,
}

/// Indices of the `k` largest probabilities; ties resolve to lower ids.
pub fn top_k_set(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn check_k(p: &[f64], k: usize) -> Result<()> {
    if k == 0 || k > p.len() {
        return Err(Error::Config(format!(
            "top-k must lie in [1, {}], got {k}",
            p.len()
        )));
    }
    Ok(())
}

/// Draws from the top-k set with probabilities renormalized over it.
pub fn sample_top_k_categorical<R: Rng>(p: &[f64], k: usize, rng: &mut R) -> Result<usize> {
    check_k(p, k)?;
    let set = top_k_set(p, k);
    let total: f64 = set.iter().map(|&i| p[i]).sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for &i in &set {
        acc += p[i];
        if u < acc {
            return Ok(i);
        }
    }
    Ok(*set.last().unwrap())
}

/// Draws uniformly from the top-k set.
pub fn sample_top_k_uniform<R: Rng>(p: &[f64], k: usize, rng: &mut R) -> Result<usize> {
    check_k(p, k)?;
    let set = top_k_set(p, k);
    Ok(set[rng.gen_range(0..k)])
}

/// REINFORCE surrogate `-α · q · Σ_j log p_j` for a sampled sequence; its
/// gradient is the score-function estimator. `q` is a plain number, so no
/// gradient reaches the discriminator here.
pub fn reinforce_surrogate(
    g: &mut Graph,
    step_log_probs: &[NodeId],
    q: f64,
    alpha: f64,
) -> NodeId {
    let stacked = g.stack_scalars(step_log_probs);
    let total = g.sum(stacked);
    g.affine(total, -alpha * q, 0.0)
}

/// Deterministic-policy surrogate `-α · Q` where `Q` is a graph node scored
/// on the relaxed decode, so the gradient flows through the discriminator
/// into the generator's logits.
pub fn deterministic_policy_surrogate(g: &mut Graph, q: NodeId, alpha: f64) -> NodeId {
    g.affine(q, -alpha, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamGroup, ParameterSet};
    use crate::streams::stream_rng;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    #[test]
    fn top_k_set_orders_and_breaks_ties_low() {
        assert_eq!(top_k_set(&[0.1, 0.5, 0.4], 2), vec![1, 2]);
        assert_eq!(top_k_set(&[0.3, 0.3, 0.4], 2), vec![2, 0]);
        assert_eq!(top_k_set(&[0.25; 4], 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn k_one_is_argmax_for_both_strategies() {
        let p = [0.2, 0.5, 0.3];
        let mut rng = stream_rng(0, "topk-test", &[]);
        for _ in 0..100 {
            assert_eq!(sample_top_k_categorical(&p, 1, &mut rng).unwrap(), 1);
            assert_eq!(sample_top_k_uniform(&p, 1, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let p = [0.5, 0.5];
        let mut rng = stream_rng(0, "topk-test", &[1]);
        assert!(matches!(sample_top_k_categorical(&p, 0, &mut rng), Err(Error::Config(_))));
        assert!(matches!(sample_top_k_categorical(&p, 3, &mut rng), Err(Error::Config(_))));
        assert!(matches!(sample_top_k_uniform(&p, 0, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn categorical_renormalizes_over_the_set() {
        // p = [0.5, 0.3, 0.2], k=2: expect P(0) = 0.625
        let p = [0.5, 0.3, 0.2];
        let mut rng = stream_rng(0, "topk-test", &[2]);
        let n = 20_000;
        let mut zeros = 0;
        for _ in 0..n {
            match sample_top_k_categorical(&p, 2, &mut rng).unwrap() {
                0 => zeros += 1,
                1 => {}
                other => panic!("token {other} escaped the top-2 set"),
            }
        }
        let freq = zeros as f64 / n as f64;
        let sigma = (0.625 * 0.375 / n as f64).sqrt();
        assert!((freq - 0.625).abs() < 4.0 * sigma, "freq {freq}");
    }

    #[test]
    fn uniform_ignores_the_probabilities() {
        let p = [0.9, 0.05, 0.05];
        let mut rng = stream_rng(0, "topk-test", &[3]);
        let n = 20_000;
        let mut first = 0;
        for _ in 0..n {
            let s = sample_top_k_uniform(&p, 2, &mut rng).unwrap();
            assert!(s == 0 || s == 1);
            if s == 0 {
                first += 1;
            }
        }
        let freq = first as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((freq - 0.5).abs() < 4.0 * sigma, "freq {freq}");
    }

    #[test]
    fn zero_reward_annihilates_the_surrogate() {
        let mut ps = ParameterSet::new();
        ps.insert("x", Tensor::vector(vec![0.4, -0.2, 0.1]), ParamGroup::Generator)
            .unwrap();
        let mut g = Graph::new();
        let x = g.param(&ps, "x").unwrap();
        let lp = g.log_softmax_pick(x, 1.0, 1).unwrap();
        let loss = reinforce_surrogate(&mut g, &[lp], 0.0, 1.0);
        assert_eq!(g.value(loss).item(), 0.0);
        let grads = g.backward(loss).unwrap();
        let gx = g.collect_param_grads(&ps, &grads, None);
        assert!(gx["x"].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn surrogate_scales_with_reward_and_alpha() {
        let mut g = Graph::new();
        let lp1 = g.constant(Tensor::scalar(-1.25));
        let lp2 = g.constant(Tensor::scalar(-0.75));
        let loss = reinforce_surrogate(&mut g, &[lp1, lp2], 0.5, 2.0);
        assert!((g.value(loss).item() - 2.0).abs() < 1e-15);

        let q = g.constant(Tensor::scalar(0.8));
        let dpg = deterministic_policy_surrogate(&mut g, q, 1.0);
        assert!((g.value(dpg).item() + 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn samples_never_leave_the_top_k_set(
            raw in proptest::collection::vec(0.01f64..1.0, 3..8),
            k in 1usize..8,
            seed in 0u64..1000,
        ) {
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let k = k.min(p.len());
            let set = top_k_set(&p, k);
            let mut rng = stream_rng(seed, "topk-prop", &[]);
            for _ in 0..50 {
                let c = sample_top_k_categorical(&p, k, &mut rng).unwrap();
                prop_assert!(set.contains(&c));
                let u = sample_top_k_uniform(&p, k, &mut rng).unwrap();
                prop_assert!(set.contains(&u));
            }
        }
    }
}
