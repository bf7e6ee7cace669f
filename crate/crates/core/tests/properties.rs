use dualpath::autodiff::{Tape, Tensor};
use dualpath::checkpoint::{decode_checkpoint, encode_checkpoint};
use dualpath::data::{
    apply_scaler, chronological_split, fit_scaler, revin_denormalize, revin_normalize, window_count, window_iter,
    SeriesMatrix, Splits,
};
use dualpath::diagnostics::RollingVarTracker;
use dualpath::model::{model_forward, Branch, ModelConfig, Params};
use dualpath::synth::{mixed_gradient, true_gradient, FitOperator, ResidualDecomposition, TrueOperatorSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-50.0..50.0f64, rows * cols).prop_map(move |v| Tensor::new([rows, cols], v).unwrap())
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 2]) -> Tensor {
    Tensor::new(shape, (0..shape[0] * shape[1]).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn revin_roundtrip(x in (1usize..6, 1usize..40).prop_flat_map(|(d, l)| matrix(d, l))) {
        let (n, stats) = revin_normalize(&x);
        let back = revin_denormalize(&n, &stats);
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn window_count_formula(n in 1usize..400, l in 1usize..60, h in 1usize..30) {
        let series = SeriesMatrix::from_channels(vec![(0..n).map(|t| t as f64).collect()]).unwrap();
        let origins = window_iter(&series, l, h, 1).map(|it| it.map(|w| w.origin).collect::<Vec<_>>());
        match origins {
            Ok(origins) => {
                prop_assert!(n >= l + h);
                prop_assert_eq!(origins.len(), n - l - h + 1);
                prop_assert_eq!(window_count(n, l, h, 1), n - l - h + 1);
                prop_assert!(origins.windows(2).all(|p| p[1] == p[0] + 1));
            }
            Err(_) => prop_assert!(n < l + h),
        }
    }

    #[test]
    fn split_bounds_are_floors(t in 10usize..20_000, a in 1u32..20, b in 1u32..20, c in 1u32..20) {
        let ratio = [a as f64, b as f64, c as f64];
        let spec = chronological_split(t, ratio).unwrap();
        let total = (a + b + c) as u128;
        prop_assert_eq!(spec.bounds[1] as u128, t as u128 * a as u128 / total);
        prop_assert_eq!(spec.bounds[2] as u128, t as u128 * (a + b) as u128 / total);
        prop_assert_eq!(spec.lengths().iter().sum::<usize>(), t);
    }

    #[test]
    fn scaler_ignores_val_and_test(seed in any::<u64>(), bump in -100.0..100.0f64, at in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels: Vec<Vec<f64>> = (0..3).map(|_| (0..200).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let spec = chronological_split(200, [7.0, 1.0, 2.0]).unwrap();
        let fit = |ch: &[Vec<f64>]| {
            let s = SeriesMatrix::from_channels(ch.to_vec()).unwrap();
            fit_scaler(&Splits::materialize(&s, &spec, 10, 5).unwrap().train).unwrap()
        };
        let before = fit(&channels);
        let mut perturbed = channels.clone();
        perturbed[at % 3][140 + at] += bump;
        prop_assert_eq!(before, fit(&perturbed));
    }

    #[test]
    fn rolling_variance_matches_recomputation(
        window in 2usize..12,
        stream in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 2..40),
    ) {
        let mut tracker = RollingVarTracker::new(Branch::Cr, 3, window);
        for g in &stream {
            tracker.update(g).unwrap();
        }
        let kept = &stream[stream.len().saturating_sub(window)..];
        let n = kept.len() as f64;
        let got = tracker.variances().unwrap();
        for p in 0..3 {
            let mean = kept.iter().map(|g| g[p]).sum::<f64>() / n;
            let var = kept.iter().map(|g| (g[p] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((got[p] - var).abs() <= 1e-12 * (1.0 + var), "{} vs {var}", got[p]);
        }
        prop_assert_eq!(tracker.updates(), stream.len() as u64);
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x0, w0) = (random_tensor(&mut rng, [4, 5]), random_tensor(&mut rng, [5, 3]));
        let grad = |ca: f64, cb: f64| {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let w = tape.leaf(w0.clone());
            let y = tape.matmul(x, w).unwrap();
            let f = tape.gelu(y).unwrap();
            let f = tape.sum(f).unwrap();
            let g = tape.abs_sum(w).unwrap();
            let f = tape.scale(f, ca).unwrap();
            let g = tape.scale(g, cb).unwrap();
            let loss = tape.add(f, g).unwrap();
            tape.backward(loss, &[x, w]).unwrap().into_tensors()
        };
        let combined = grad(a, b);
        let (only_f, only_g) = (grad(1.0, 0.0), grad(0.0, 1.0));
        for (k, t) in combined.iter().enumerate() {
            for (i, v) in t.data().iter().enumerate() {
                let expect = a * only_f[k].data()[i] + b * only_g[k].data()[i];
                prop_assert!((v - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn residuals_add_up_and_gradients_decompose(seed in any::<u64>(), c in -0.9..0.9f64, s in -0.5..0.5f64) {
        let spec = TrueOperatorSpec::diagonal(3, 6, 3, c, 1.0).with_cross(0, 2, s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fit = FitOperator::zeros(&spec);
        for i in 0..3 {
            for j in 0..3 {
                fit.set(i, j, random_tensor(&mut rng, [3, 6]));
            }
        }
        let x = random_tensor(&mut rng, [3, 6]);
        let y = spec.conditional_mean(&x);
        let r = ResidualDecomposition::compute(&spec, &fit, &x);
        let y_hat = fit.predict(&x);
        for i in 0..3 {
            for (h, v) in r.aggregate(i).iter().enumerate() {
                let direct = y.row(i)[h] - y_hat.row(i)[h];
                prop_assert!((v - direct).abs() < 1e-12);
            }
            // mixed = true − (Σ_{j≠i} r_ij) x_iᵀ
            let mixed = mixed_gradient(&fit, &x, &y, i, i);
            let pure = true_gradient(&fit, &x, &spec, i, i);
            let cross = r.cross_sum(i);
            for h in 0..3 {
                for l in 0..6 {
                    let expect = pure.at(h, l) - cross[h] * x.row(i)[l];
                    prop_assert!((mixed.at(h, l) - expect).abs() < 1e-12);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_diagonal_is_exactly_zero(seed in any::<u64>(), d in 2usize..6) {
        let config = ModelConfig { d_model: 8, heads: 2, layers: 2, d_ff: 8, ..ModelConfig::new(d, 10, 3) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&config, &mut rng).unwrap();
        let x = random_tensor(&mut rng, [d, 10]);
        let f = model_forward(&x, &params, &config).unwrap();
        for a in f.attention.iter().flatten() {
            for i in 0..d {
                prop_assert_eq!(a.at(i, i), 0.0);
                let row: f64 = a.row(i).iter().sum();
                prop_assert!((row - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_identical(seed in any::<u64>()) {
        let config = ModelConfig { d_model: 4, heads: 2, layers: 1, d_ff: 6, ..ModelConfig::new(3, 7, 2) };
        let params = Params::init(&config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let text = encode_checkpoint(&params, &config);
        let (c, p) = decode_checkpoint(&text).unwrap();
        prop_assert_eq!(&p, &params);
        prop_assert_eq!(encode_checkpoint(&p, &c), text);
    }

    #[test]
    fn standardized_train_split_is_zero_mean(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels: Vec<Vec<f64>> = (0..2).map(|_| (0..120).map(|_| rng.random_range(-9.0..9.0)).collect()).collect();
        let series = SeriesMatrix::from_channels(channels).unwrap();
        let spec = chronological_split(120, [6.0, 2.0, 2.0]).unwrap();
        let splits = Splits::materialize(&series, &spec, 8, 4).unwrap();
        let scaled = apply_scaler(&fit_scaler(&splits.train).unwrap(), &splits.train);
        for i in 0..2 {
            let c = scaled.channel(i);
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
            prop_assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
        }
    }
}
