//! Per-op gradient cases checked against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyalign::bridgeformer::{BridgeFormer, BridgeFormerConfig};
use tinyalign::embedlink::{combined_loss_graph, LossWeights};
use tinyalign::tensor::gradcheck::finite_diff_check;
use tinyalign::{Graph, Result, Tensor, Var};

pub const TOL: f64 = 1e-4;
pub const H: f64 = 1e-5;
pub const TRIALS_PER_OP: u64 = 5;

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduce an op output to a scalar with fixed random weights so every
/// output coordinate contributes a distinct gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub type Builder = fn(&mut Graph<f64>, &[Var], &mut ChaCha8Rng) -> Result<Var>;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
    pub build: Builder,
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=4)
}

pub fn cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul_2d",
            shapes: |r| {
                let (n, k, m) = (dim(r), dim(r), dim(r));
                vec![vec![n, k], vec![k, m]]
            },
            build: |g, v, _| g.matmul(v[0], v[1]),
        },
        OpCase {
            name: "matmul_3d_by_2d",
            shapes: |r| {
                let (b, n, k, m) = (dim(r), dim(r), dim(r), dim(r));
                vec![vec![b, n, k], vec![k, m]]
            },
            build: |g, v, _| g.matmul(v[0], v[1]),
        },
        OpCase {
            name: "matmul_batched",
            shapes: |r| {
                let (b, n, k, m) = (dim(r), dim(r), dim(r), dim(r));
                vec![vec![b, n, k], vec![b, k, m]]
            },
            build: |g, v, _| g.matmul(v[0], v[1]),
        },
        OpCase {
            name: "add",
            shapes: |r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s]
            },
            build: |g, v, _| g.add(v[0], v[1]),
        },
        OpCase {
            name: "sub",
            shapes: |r| {
                let s = vec![dim(r), dim(r), dim(r)];
                vec![s.clone(), s]
            },
            build: |g, v, _| g.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            shapes: |r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s]
            },
            build: |g, v, _| g.mul(v[0], v[1]),
        },
        OpCase {
            name: "add_bias",
            shapes: |r| {
                let (n, c) = (dim(r), dim(r));
                vec![vec![1, n, c], vec![c]]
            },
            build: |g, v, _| g.add_bias(v[0], v[1]),
        },
        OpCase {
            name: "affine",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            build: |g, v, r| Ok(g.affine(v[0], r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0))),
        },
        OpCase {
            name: "scale",
            shapes: |r| vec![vec![dim(r)]],
            build: |g, v, r| Ok(g.scale(v[0], r.gen_range(-2.0..2.0))),
        },
        OpCase {
            name: "linear",
            shapes: |r| {
                let (n, i, o) = (dim(r), dim(r), dim(r));
                vec![vec![1, n, i], vec![i, o], vec![o]]
            },
            build: |g, v, _| g.linear(v[0], v[1], v[2]),
        },
        OpCase {
            name: "gelu",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            build: |g, v, _| Ok(g.gelu(v[0])),
        },
        OpCase {
            name: "softmax",
            shapes: |r| vec![vec![dim(r), dim(r) + 1]],
            build: |g, v, _| g.softmax(v[0]),
        },
        OpCase {
            name: "softmax_causal",
            shapes: |r| {
                let n = dim(r) + 1;
                vec![vec![dim(r), n, n]]
            },
            build: |g, v, _| g.softmax_causal(v[0]),
        },
        OpCase {
            name: "layer_norm",
            shapes: |r| {
                let c = dim(r) + 1;
                vec![vec![1, dim(r), c], vec![c], vec![c]]
            },
            build: |g, v, _| g.layer_norm(v[0], v[1], v[2], 1e-5),
        },
        OpCase {
            name: "permute",
            shapes: |r| vec![vec![dim(r), dim(r), dim(r)]],
            build: |g, v, _| g.permute(v[0], &[2, 0, 1]),
        },
        OpCase {
            name: "reshape",
            shapes: |r| vec![vec![dim(r), 6]],
            build: |g, v, _| {
                let n = g.shape(v[0])[0];
                g.reshape(v[0], &[n, 2, 3])
            },
        },
        OpCase {
            name: "adaptive_pool",
            shapes: |r| vec![vec![1, r.gen_range(1..=9), dim(r)]],
            build: |g, v, r| g.adaptive_pool(v[0], r.gen_range(1..=5)),
        },
        OpCase {
            name: "concat",
            shapes: |r| {
                let (b, c) = (dim(r), dim(r));
                vec![vec![b, dim(r), c], vec![b, dim(r), c]]
            },
            build: |g, v, _| g.concat(v[0], v[1], 1),
        },
        OpCase {
            name: "narrow",
            shapes: |r| vec![vec![2, dim(r) + 2, dim(r)]],
            build: |g, v, r| {
                let n = g.shape(v[0])[1];
                let start = r.gen_range(0..n);
                let len = r.gen_range(1..=n - start);
                g.narrow(v[0], 1, start, len)
            },
        },
        OpCase {
            name: "mse",
            shapes: |r| {
                let s = vec![1, dim(r), dim(r)];
                vec![s.clone(), s]
            },
            build: |g, v, _| g.mse(v[0], v[1]),
        },
        OpCase {
            name: "row_cosine",
            shapes: |r| {
                let s = vec![1, dim(r), dim(r) + 1];
                vec![s.clone(), s]
            },
            build: |g, v, _| g.row_cosine(v[0], v[1]),
        },
        OpCase {
            name: "mean",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            build: |g, v, _| Ok(g.mean(v[0])),
        },
        OpCase {
            name: "sum",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            build: |g, v, _| Ok(g.sum(v[0])),
        },
        OpCase {
            name: "cross_entropy",
            shapes: |r| vec![vec![1, dim(r), dim(r) + 1]],
            build: |g, v, r| {
                let s = g.shape(v[0]).to_vec();
                let targets: Vec<usize> = (0..s[1]).map(|_| r.gen_range(0..s[2])).collect();
                g.cross_entropy(v[0], &targets)
            },
        },
    ]
}

pub fn check_op(case: &OpCase, trial: u64) -> Result<f64> {
    let seed = 1000 * trial + case.name.len() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = (case.shapes)(&mut rng);
    let params: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
    let build = case.build;
    finite_diff_check(&params, H, move |g: &mut Graph<f64>, v: &[Var]| {
        // the op's own random choices replay identically on every call
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let y = build(g, v, &mut r)?;
        project(g, y, seed ^ 0x1234)
    })
}

pub fn small_config(seed: u64) -> BridgeFormerConfig {
    BridgeFormerConfig {
        d_a: 8,
        hidden: 16,
        heads: 2,
        layers: 2,
        token_cast: 4,
        d_l: 8,
        seed,
    }
}

/// Worst relative error of the combined loss through a small projector.
pub fn check_full_loss(trial: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(50 + trial);
    let model = BridgeFormer::<f64>::init(small_config(trial))?;
    let n = rng.gen_range(1..=9);
    let x = rand_tensor(&mut rng, &[1, n, 8]);
    let y = rand_tensor(&mut rng, &[1, 4, 8]);
    let params: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    let w = LossWeights {
        alpha: rng.gen_range(0.1..1.0),
        beta: rng.gen_range(0.1..1.0),
    };
    finite_diff_check(&params, H, |g: &mut Graph<f64>, v: &[Var]| {
        let input = g.constant(x.clone());
        let target = g.constant(y.clone());
        let tr = model.forward_graph(g, v, input)?;
        combined_loss_graph(g, tr.e_out, target, w)
    })
}
