mod common;

use common::*;
use cosformer_core::linear::CausalState;
use cosformer_core::*;
use proptest::prelude::*;

fn inputs(seed: u64, n_q: usize, n_k: usize, d_k: usize, d_v: usize) -> (Matrix, Matrix, Matrix) {
    let mut r = rng(seed);
    (randn(&mut r, n_q, d_k), randn(&mut r, n_k, d_k), randn(&mut r, n_k, d_v))
}

fn non_negative_map() -> impl Strategy<Value = FeatureMapKind> {
    prop_oneof![Just(FeatureMapKind::Relu), Just(FeatureMapKind::EluPlusOne)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_are_row_stochastic_or_zero(
        seed in any::<u64>(), n in 1usize..24, d in 1usize..6,
        causal in any::<bool>(), cosine in any::<bool>(), map in non_negative_map(),
    ) {
        let (q, k, _) = inputs(seed, n, n, d, 1);
        let mut cfg = AttentionConfig::linear(map, causal);
        if cosine {
            cfg.reweight = ReweightScheme::Cosine(Horizon::SequenceLength);
        }
        let w = attention_weights_quadratic(&q, &k, &cfg).unwrap();
        for i in 0..n {
            let sum: f64 = w.row(i).iter().sum();
            prop_assert!(w.row(i).iter().all(|&x| x >= 0.0));
            prop_assert!(sum == 0.0 || (sum - 1.0).abs() <= 1e-9, "row {} sums to {}", i, sum);
        }
    }

    #[test]
    fn softmax_output_in_convex_hull(seed in any::<u64>(), n in 1usize..20, d in 1usize..6, causal in any::<bool>()) {
        let (q, k, v) = inputs(seed, n, n, d, 3);
        let o = softmax_attention(&q, &k, &v, causal, true).unwrap();
        for i in 0..n {
            let limit = if causal { i + 1 } else { n };
            for b in 0..3 {
                let col = (0..limit).map(|j| v.get(j, b));
                let lo = col.clone().fold(f64::INFINITY, f64::min);
                let hi = col.fold(f64::NEG_INFINITY, f64::max);
                let x = o.get(i, b);
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn causal_outputs_ignore_the_future(seed in any::<u64>(), n in 2usize..32, d in 1usize..8, cut in 0usize..31) {
        let cut = cut % (n - 1);
        let (q, k, v) = inputs(seed, n, n, d, d);
        let (mut q2, mut k2, mut v2) = (q.clone(), k.clone(), v.clone());
        let (pq, pk, pv) = inputs(seed ^ 0xabcdef, n, n, d, d);
        for t in cut + 1..n {
            q2.row_mut(t).copy_from_slice(pq.row(t));
            k2.row_mut(t).copy_from_slice(pk.row(t));
            v2.row_mut(t).copy_from_slice(pv.row(t));
        }
        let cfg = AttentionConfig::cosformer(true);
        let runs: [(Matrix, Matrix); 3] = [
            (cosformer_attention(&q, &k, &v, &cfg).unwrap(), cosformer_attention(&q2, &k2, &v2, &cfg).unwrap()),
            (
                linear_attention(&q, &k, &v, FeatureMapKind::Relu, true, 1e-6).unwrap(),
                linear_attention(&q2, &k2, &v2, FeatureMapKind::Relu, true, 1e-6).unwrap(),
            ),
            (softmax_attention(&q, &k, &v, true, true).unwrap(), softmax_attention(&q2, &k2, &v2, true, true).unwrap()),
        ];
        for (a, b) in &runs {
            for i in 0..=cut {
                prop_assert_eq!(a.row(i), b.row(i));
            }
        }
    }

    #[test]
    fn key_permutation_equivariance(seed in any::<u64>(), n in 1usize..16, d in 1usize..6, perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (q, k, v) = inputs(seed, n, n, d, 4);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(perm_seed));
        let kp = Matrix::from_fn(n, d, |i, a| k.get(order[i], a));
        let vp = Matrix::from_fn(n, 4, |i, b| v.get(order[i], b));
        let cfg = AttentionConfig::linear(FeatureMapKind::Relu, false);
        let a = kernel_attention_quadratic(&q, &k, &v, &cfg).unwrap();
        let b = kernel_attention_quadratic(&q, &kp, &vp, &cfg).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
        let a = linear_attention(&q, &k, &v, FeatureMapKind::Relu, false, 1e-6).unwrap();
        let b = linear_attention(&q, &kp, &vp, FeatureMapKind::Relu, false, 1e-6).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn cosformer_equals_quadratic_oracle(
        seed in any::<u64>(), n_q in 1usize..48, n_k in 1usize..48, d_k in 1usize..12, d_v in 1usize..12,
        causal in any::<bool>(), double in any::<bool>(), map in non_negative_map(),
    ) {
        let n_k = if causal { n_q } else { n_k };
        let (q, k, v) = inputs(seed, n_q, n_k, d_k, d_v);
        let m = n_q.max(n_k) * if double { 2 } else { 1 };
        let cfg = AttentionConfig::cosformer(causal).with_horizon(m).with_feature_map(map);
        let lin = cosformer_attention(&q, &k, &v, &cfg).unwrap();
        let quad = kernel_attention_quadratic(&q, &k, &v, &cfg).unwrap();
        prop_assert!(lin.rel_err(&quad) <= 1e-10);
    }

    #[test]
    fn streaming_equals_batch(seed in any::<u64>(), n in 1usize..64, d_k in 1usize..8, d_v in 1usize..8, extra in 0usize..16) {
        let (q, k, v) = inputs(seed, n, n, d_k, d_v);
        let m = n + extra;
        let cfg = AttentionConfig::cosformer(true).with_horizon(m);
        let batch = cosformer_attention(&q, &k, &v, &cfg).unwrap();
        let mut state = CausalState::new(d_k, d_v);
        let mut prev_t = 0;
        for t in 0..n {
            let row = state.step(q.row(t), k.row(t), v.row(t), m, cfg.eps).unwrap();
            prop_assert!(state.t > prev_t);
            prev_t = state.t;
            prop_assert_eq!(row.as_slice(), batch.row(t));
        }
    }
}
