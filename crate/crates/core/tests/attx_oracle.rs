//! Parity between the attention block and an independent straight-line
//! scalar implementation, plus the block's structural invariants.

mod common;

use attx_core::attx::{
    attx_forward, enumerate_connection_types, stack_modalities, ConnectionType,
};
use attx_core::numerics::{Tape, Tensor, Var};
use common::{attx_scalar_oracle as scalar_oracle, mat_tensor, random_mat, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run_block(
    zs: &[Mat],
    w: &Mat,
    w_u: &[f64],
    ty: &ConnectionType,
) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let mut tape = Tape::new();
    let zvars: Vec<Var> = zs.iter().map(|z| tape.leaf(mat_tensor(z), false)).collect();
    let wvar = tape.leaf(mat_tensor(w), false);
    let wuvar = tape.leaf(Tensor::from_vec(w_u.to_vec()).unwrap(), false);
    let outs = attx_forward(&mut tape, wvar, wuvar, ty, &zvars).unwrap();
    let values = outs.iter().map(|&o| tape.value(o).data().to_vec()).collect();
    let shapes = outs.iter().map(|&o| tape.shape(o).to_vec()).collect();
    (values, shapes)
}

#[test]
fn block_matches_scalar_oracle_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for d in 2..=3usize {
        let types = enumerate_connection_types(d).unwrap();
        for n in 1..=3usize {
            for m in 1..=3usize {
                let zs: Vec<Mat> = (0..d).map(|_| random_mat(&mut rng, n, m)).collect();
                let w = random_mat(&mut rng, d, d);
                let w_u: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.5..=1.5)).collect();
                for ty in &types {
                    let edges: Vec<(usize, usize)> = ty.edges().collect();
                    let expected = scalar_oracle(&zs, &w, &w_u, &edges);
                    let (got, shapes) = run_block(&zs, &w, &w_u, ty);
                    for (k, exp) in expected.iter().enumerate() {
                        assert_eq!(shapes[k], vec![exp.len(), m], "d={d} n={n} m={m} {ty}");
                        let flat: Vec<f64> = exp.iter().flatten().copied().collect();
                        for (a, b) in got[k].iter().zip(&flat) {
                            assert!(
                                (a - b).abs() < 1e-12,
                                "d={d} n={n} m={m} type {ty}: {a} vs {b}"
                            );
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn worked_example_type_ii() {
    // n=1, m=2, d=2, identity W, unit scoring vector.
    // Position 1 weights are softmax(1, 3); position 2 softmax(2, 4);
    // the envelope stream of modality 2 is weighted and concatenated onto
    // modality 1.
    let zs = vec![vec![vec![1.0, 2.0]], vec![vec![3.0, 4.0]]];
    let w = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let w_u = vec![1.0, 1.0];
    let (got, shapes) = run_block(&zs, &w, &w_u, &ConnectionType::type_ii());

    let soft = |a: f64, b: f64| {
        let (ea, eb) = (a.exp(), b.exp());
        eb / (ea + eb)
    };
    let theta2_pos1 = soft(1.0, 3.0);
    let theta2_pos2 = soft(2.0, 4.0);
    assert!((theta2_pos1 - 0.8807970779778823).abs() < 1e-12);

    // Stream 1: own rows then weighted modality-2 rows.
    assert_eq!(shapes[0], vec![2, 2]);
    let expect = [1.0, 2.0, theta2_pos1 * 3.0, theta2_pos2 * 4.0];
    for (a, b) in got[0].iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    // Stream 2 passes through untouched.
    assert_eq!(got[1], vec![3.0, 4.0]);
}

#[test]
fn attention_normalizes_across_modalities() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for d in 2..=4usize {
        for _ in 0..5 {
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(1..=5);
            let mut tape = Tape::new();
            let zs: Vec<Var> = (0..d)
                .map(|_| tape.leaf(mat_tensor(&random_mat(&mut rng, n, m)), false))
                .collect();
            let w = tape.leaf(mat_tensor(&random_mat(&mut rng, d, d)), false);
            let w_u = tape.leaf(
                Tensor::from_vec((0..m).map(|_| rng.gen_range(-3.0..=3.0)).collect()).unwrap(),
                false,
            );
            let stacked = stack_modalities(&mut tape, &zs).unwrap();
            let proj = attx_core::attx::project(&mut tape, stacked, w).unwrap();
            let theta = attx_core::attx::attention_weights(&mut tape, proj, w_u).unwrap();
            let data = tape.value(theta).data();
            // theta is [n, d, m]: weights across d sum to 1 per (row, pos).
            for i in 0..n {
                for j in 0..m {
                    let sum: f64 = (0..d).map(|k| data[(i * d + k) * m + j]).sum();
                    assert!((sum - 1.0).abs() < 1e-9, "d={d}: sum {sum}");
                    for k in 0..d {
                        let v = data[(i * d + k) * m + j];
                        assert!(v > 0.0 && v < 1.0);
                    }
                }
            }
        }
    }
}

#[test]
fn modality_permutation_is_consistent() {
    // Swapping the two modalities while permuting W's rows/columns and the
    // edge labels swaps the outputs and nothing else.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..10 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=3);
        let z1 = random_mat(&mut rng, n, m);
        let z2 = random_mat(&mut rng, n, m);
        let w = random_mat(&mut rng, 2, 2);
        let w_u: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();

        let (orig, _) = run_block(
            &[z1.clone(), z2.clone()],
            &w,
            &w_u,
            &ConnectionType::type_i(),
        );
        // Permuted world: modalities swapped, W conjugated by the swap,
        // and the edge 1->2 becomes 2->1.
        let w_swapped = vec![
            vec![w[1][1], w[1][0]],
            vec![w[0][1], w[0][0]],
        ];
        let (perm, _) = run_block(&[z2, z1], &w_swapped, &w_u, &ConnectionType::type_ii());
        for (a, b) in orig[0].iter().zip(&perm[1]) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in orig[1].iter().zip(&perm[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn pass_through_stream_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let zs: Vec<Mat> = (0..3).map(|_| random_mat(&mut rng, 2, 3)).collect();
    let w = random_mat(&mut rng, 3, 3);
    let w_u: Vec<f64> = vec![0.3, -0.7, 1.1];
    // Only modality 2 receives anything; 1 and 3 pass through bit-exact.
    let ty = ConnectionType::new([(1, 2), (3, 2)]).unwrap();
    let (got, _) = run_block(&zs, &w, &w_u, &ty);
    let flat1: Vec<f64> = zs[0].iter().flatten().copied().collect();
    let flat3: Vec<f64> = zs[2].iter().flatten().copied().collect();
    assert_eq!(got[0], flat1);
    assert_eq!(got[2], flat3);
}

#[test]
fn type_iii_reuses_type_i_and_ii_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    for _ in 0..10 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=4);
        let zs = vec![random_mat(&mut rng, n, m), random_mat(&mut rng, n, m)];
        let w = random_mat(&mut rng, 2, 2);
        let w_u: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();

        let (three, _) = run_block(&zs, &w, &w_u, &ConnectionType::type_iii());
        let (one, _) = run_block(&zs, &w, &w_u, &ConnectionType::type_i());
        let (two, _) = run_block(&zs, &w, &w_u, &ConnectionType::type_ii());
        // Receiver 1 matches Type II's, receiver 2 matches Type I's.
        assert_eq!(three[0], two[0]);
        assert_eq!(three[1], one[1]);
    }
}
