//! Property tests over randomly drawn parameters.

use attx_core::attx::ConnectionType;
use attx_core::dsp::{resample, window_geometry, window_offsets, zscore};
use attx_core::numerics::{Tape, Tensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// conv1d output length follows floor((L + 2p - K)/s) + 1 whenever the
    /// kernel fits the padded input.
    #[test]
    fn conv_length_formula(
        l in 1usize..64,
        k in 1usize..16,
        stride in 1usize..5,
        pad in 0usize..4,
        c_in in 1usize..3,
        c_out in 1usize..3,
    ) {
        prop_assume!(k <= l + 2 * pad);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[c_in, l]), false);
        let kernel = tape.leaf(Tensor::zeros(&[c_out, c_in, k]), false);
        let bias = tape.leaf(Tensor::zeros(&[c_out]), false);
        let y = tape.conv1d(x, kernel, bias, stride, pad).unwrap();
        let expect = (l + 2 * pad - k) / stride + 1;
        prop_assert_eq!(tape.shape(y), &[c_out, expect]);
    }

    /// maxpool1d output length follows floor((L - w)/s) + 1.
    #[test]
    fn maxpool_length_formula(l in 1usize..64, w in 1usize..8, stride in 1usize..5) {
        prop_assume!(w <= l);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, l]), false);
        let y = tape.maxpool1d(x, w, stride).unwrap();
        prop_assert_eq!(tape.shape(y), &[2, (l - w) / stride + 1]);
    }

    /// softmax output sums to one along the chosen axis, even for large
    /// magnitudes.
    #[test]
    fn softmax_normalizes(
        values in prop::collection::vec(-1e4f64..1e4, 2..24),
        rows in 1usize..4,
    ) {
        prop_assume!(values.len() % rows == 0);
        let cols = values.len() / rows;
        prop_assume!(cols >= 1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![rows, cols], values).unwrap(), false);
        let y = tape.softmax(x, 1).unwrap();
        for row in tape.value(y).data().chunks(cols) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            // At magnitudes up to 1e4 the losing exponentials can underflow
            // to exactly 0, so the bounds are closed here; strict (0, 1)
            // holds on the block's operating range and is checked there.
            prop_assert!(row.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        }
    }

    /// Consecutive window offsets advance by the hop and cover the signal
    /// contiguously; the count matches the closed form.
    #[test]
    fn window_coverage(extra in 0usize..5000, overlap in 0.0f64..0.9) {
        let fs = 256u32;
        let (win, hop) = window_geometry(fs, 10.0, overlap).unwrap();
        let len = win + extra;
        let offsets = window_offsets(len, win, hop);
        prop_assert_eq!(offsets.len(), (len - win) / hop + 1);
        for (i, off) in offsets.iter().enumerate() {
            prop_assert_eq!(*off, i * hop);
            prop_assert!(off + win <= len);
        }
        // No further full window fits.
        prop_assert!(offsets.last().unwrap() + hop + win > len);
    }

    /// z-scoring an already z-scored signal changes nothing.
    #[test]
    fn zscore_idempotent(values in prop::collection::vec(-100.0f64..100.0, 4..256)) {
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        let once = zscore(&values);
        let twice = zscore(&once);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    /// Resampled length is round(len * fs_out / fs_in).
    #[test]
    fn resample_length(len in 32usize..2048, fs_in in 1u32..4, fs_out in 1u32..4) {
        let fs_in = fs_in * 128;
        let fs_out = fs_out * 128;
        let x = vec![0.5; len];
        let y = resample(&x, fs_in, fs_out).unwrap();
        let expect = ((len as f64) * fs_out as f64 / fs_in as f64).round() as usize;
        prop_assert_eq!(y.len(), expect);
    }

    /// Connection-type serialization round-trips.
    #[test]
    fn connection_round_trip(mask in 1u32..63, d in 2usize..4) {
        let mut edges = Vec::new();
        let mut bit = 0;
        for s in 1..=d {
            for t in 1..=d {
                if s != t {
                    if mask & (1 << bit) != 0 {
                        edges.push((s, t));
                    }
                    bit += 1;
                }
            }
        }
        prop_assume!(!edges.is_empty());
        let ty = ConnectionType::new(edges).unwrap();
        let text = ty.to_string();
        let back: ConnectionType = text.parse().unwrap();
        prop_assert_eq!(back, ty);
    }

    /// Gradient accumulation: reusing a tensor along two paths matches the
    /// sum of the single-path gradients.
    #[test]
    fn two_path_gradients_add(values in prop::collection::vec(0.1f64..2.0, 2..16)) {
        let n = values.len();
        let tensor = Tensor::new(vec![n], values).unwrap();

        // Path A alone: d sum(x*c) / dx = c
        let scale = Tensor::full(&[n], 3.0);
        let mut t1 = Tape::new();
        let x1 = t1.leaf(tensor.clone(), true);
        let c1 = t1.leaf(scale.clone(), false);
        let p1 = t1.mul(x1, c1).unwrap();
        let s1 = t1.sum(p1);
        t1.backward(s1).unwrap();
        let ga = t1.grad(x1).unwrap().to_vec();

        // Path B alone: d sum(x*x) / dx = 2x
        let mut t2 = Tape::new();
        let x2 = t2.leaf(tensor.clone(), true);
        let p2 = t2.mul(x2, x2).unwrap();
        let s2 = t2.sum(p2);
        t2.backward(s2).unwrap();
        let gb = t2.grad(x2).unwrap().to_vec();

        // Both paths through one shared leaf.
        let mut t3 = Tape::new();
        let x3 = t3.leaf(tensor, true);
        let c3 = t3.leaf(scale, false);
        let pa = t3.mul(x3, c3).unwrap();
        let pb = t3.mul(x3, x3).unwrap();
        let sum_a = t3.sum(pa);
        let sum_b = t3.sum(pb);
        let total = t3.add(sum_a, sum_b).unwrap();
        t3.backward(total).unwrap();
        let gboth = t3.grad(x3).unwrap();

        for i in 0..n {
            prop_assert!((gboth[i] - (ga[i] + gb[i])).abs() < 1e-12);
        }
    }

    /// Batch-norm train mode standardizes each channel over (batch, time).
    #[test]
    fn batchnorm_moments(seed in 0u64..50) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (b, c, l) = (8usize, 3usize, 16usize);
        let data: Vec<f64> = (0..b * c * l).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![b, c, l], data).unwrap(), false);
        let gamma = tape.leaf(Tensor::ones(&[c]), false);
        let beta = tape.leaf(Tensor::zeros(&[c]), false);
        let mut state = attx_core::numerics::BatchNormState::new(c, 0.9, 1e-9);
        let y = tape
            .batchnorm1d(x, gamma, beta, &mut state, attx_core::numerics::Mode::Train)
            .unwrap();
        let out = tape.value(y).data();
        for ci in 0..c {
            let mut vals = Vec::with_capacity(b * l);
            for bi in 0..b {
                vals.extend_from_slice(&out[(bi * c + ci) * l..(bi * c + ci + 1) * l]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
