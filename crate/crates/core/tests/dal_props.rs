use dalkit::dal::{compute_mixed_statistics, da_forward, DaLayerState};
use dalkit::oracle::brute_statistics;
use dalkit::Tensor;
use proptest::prelude::*;

fn block(n: usize, c: usize, s: usize) -> impl Strategy<Value = Tensor> {
    let shape = if s == 1 { vec![n, c] } else { vec![n, c, s] };
    proptest::collection::vec(-5.0f64..5.0, n * c * s).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn pair() -> impl Strategy<Value = (Tensor, Tensor, f64)> {
    (1usize..5, 1usize..5, 1usize..4, prop::sample::select(vec![1usize, 4])).prop_flat_map(|(ns, nt, c, s)| {
        (block(ns, c, s), block(nt, c, s), 0.5f64..=1.0)
    })
}

proptest! {
    #[test]
    fn swapping_domains_swaps_paths((xs, xt, a) in pair()) {
        let st = compute_mixed_statistics(&xs, &xt, a, 1e-5).unwrap();
        let ts = compute_mixed_statistics(&xt, &xs, a, 1e-5).unwrap();
        for c in 0..st.channels() {
            prop_assert!((st.mu_st[c] - ts.mu_ts[c]).abs() <= 1e-12);
            prop_assert!((st.var_st[c] - ts.var_ts[c]).abs() <= 1e-11);
        }
    }

    #[test]
    fn mixed_variance_is_nonnegative_and_matches_oracle((xs, xt, a) in pair()) {
        let st = compute_mixed_statistics(&xs, &xt, a, 1e-5).unwrap();
        let oracle = brute_statistics(&xs, &xt, a, 1e-5).unwrap();
        for c in 0..st.channels() {
            prop_assert!(st.var_st[c] >= 0.0 && st.var_ts[c] >= 0.0);
            prop_assert!((st.var_st[c] - oracle.var_st[c]).abs() <= 1e-10);
        }
    }

    #[test]
    fn full_alignment_whitens_each_domain((xs, xt, _) in pair()) {
        prop_assume!(xs.batch() * xs.spatial() > 1 && xt.batch() * xt.spatial() > 1);
        let mut st = DaLayerState::pinned(xs.channels(), 1.0);
        let (ys, yt, _) = da_forward(&xs, &xt, &mut st).unwrap();
        for y in [&ys, &yt] {
            let m = y.reduce_channel(dalkit::tensor::ChannelStat::Mean, 0..y.batch()).unwrap();
            prop_assert!(m.iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn train_forward_keeps_alpha_in_range(alpha in -3.0f64..4.0, (xs, xt, _) in pair()) {
        let mut st = DaLayerState::new(xs.channels(), 0.75);
        st.alpha = alpha;
        da_forward(&xs, &xt, &mut st).unwrap();
        prop_assert!((0.5..=1.0).contains(&st.alpha));
    }
}
