//! Shared test oracles: the central finite-difference gradient checker
//! and the straight-line scalar evaluation of the attention block. Both
//! are independent of the backward pass and tensor ops they verify.

#![allow(dead_code)]

use attx_core::numerics::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Like `random_tensor` but keeps every value away from zero so kinked
/// activations (relu, maxpool argmax) stay on one side under perturbation.
pub fn random_tensor_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    let data: Vec<f64> = (0..numel)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..=1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(0.1..=2.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Evaluate `f` as a scalar: the raw output is contracted against a fixed
/// pseudo-random weighting so gradient errors cannot cancel across output
/// positions.
pub fn scalar_eval(f: &dyn Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor], probe_seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars);
    let mut wrng = ChaCha8Rng::seed_from_u64(probe_seed);
    let weights = Tensor::new(
        tape.shape(out).to_vec(),
        (0..tape.value(out).numel())
            .map(|_| wrng.gen_range(-1.0..=1.0))
            .collect(),
    )
    .unwrap();
    let w = tape.leaf(weights, false);
    let prod = tape.mul(out, w).unwrap();
    let s = tape.sum(prod);
    tape.value(s).item().unwrap()
}

/// Assert analytic gradients of `f` match central differences for every
/// element of every input.
pub fn check_gradients(name: &str, f: &dyn Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor]) {
    let probe_seed = 0xABCD ^ inputs.iter().map(Tensor::numel).sum::<usize>() as u64;

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let mut wrng = ChaCha8Rng::seed_from_u64(probe_seed);
    let weights = Tensor::new(
        tape.shape(out).to_vec(),
        (0..tape.value(out).numel())
            .map(|_| wrng.gen_range(-1.0..=1.0))
            .collect(),
    )
    .unwrap();
    let w = tape.leaf(weights, false);
    let prod = tape.mul(out, w).unwrap();
    let s = tape.sum(prod);
    tape.backward(s).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_default())
        .collect();

    // Numeric pass, element by element.
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            minus[k].data_mut()[j] -= H;
            let numeric =
                (scalar_eval(f, &plus, probe_seed) - scalar_eval(f, &minus, probe_seed)) / (2.0 * H);
            let got = analytic[k][j];
            let denom = numeric.abs().max(1e-8);
            assert!(
                (got - numeric).abs() / denom < REL_TOL,
                "{name}: input {k} element {j}: analytic {got} vs numeric {numeric}"
            );
        }
    }
}


// ---------------------------------------------------------------------------
// Scalar attention-block oracle
// ---------------------------------------------------------------------------

pub type Mat = Vec<Vec<f64>>;

/// Straight-line scalar evaluation of the attention block. zs: d matrices
/// of n x m; w: d x d; w_u: length m. Returns one output matrix per
/// modality, routed by the given edges.
pub fn attx_scalar_oracle(zs: &[Mat], w: &Mat, w_u: &[f64], edges: &[(usize, usize)]) -> Vec<Mat> {
    let d = zs.len();
    let n = zs[0].len();
    let m = zs[0][0].len();

    let mut s = vec![vec![vec![0.0; d]; m]; n];
    for k in 0..d {
        for i in 0..n {
            for j in 0..m {
                s[i][j][k] = zs[k][i][j];
            }
        }
    }

    let mut u = vec![vec![vec![0.0; d]; m]; n];
    for i in 0..n {
        for j in 0..m {
            for k in 0..d {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += s[i][j][l] * w[l][k];
                }
                u[i][j][k] = acc.max(0.0);
            }
        }
    }

    let mut theta = vec![vec![vec![0.0; m]; d]; n];
    for i in 0..n {
        for j in 0..m {
            let logits: Vec<f64> = (0..d).map(|k| u[i][j][k] * w_u[j]).collect();
            let denom: f64 = logits.iter().map(|v| v.exp()).sum();
            for k in 0..d {
                theta[i][k][j] = logits[k].exp() / denom;
            }
        }
    }

    let zhat: Vec<Mat> = (0..d)
        .map(|k| {
            (0..n)
                .map(|i| (0..m).map(|j| theta[i][k][j] * zs[k][i][j]).collect())
                .collect()
        })
        .collect();

    (1..=d)
        .map(|target| {
            let mut out: Mat = zs[target - 1].clone();
            let mut sources: Vec<usize> = edges
                .iter()
                .filter(|&&(_, t)| t == target)
                .map(|&(src, _)| src)
                .collect();
            sources.sort_unstable();
            sources.dedup();
            for src in sources {
                out.extend(zhat[src - 1].iter().cloned());
            }
            out
        })
        .collect()
}

pub fn mat_tensor(mat: &Mat) -> Tensor {
    let n = mat.len();
    let m = mat[0].len();
    Tensor::new(vec![n, m], mat.iter().flatten().copied().collect()).unwrap()
}

pub fn random_mat(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Mat {
    (0..n)
        .map(|_| (0..m).map(|_| rng.gen_range(-2.0..=2.0)).collect())
        .collect()
}
