//! Central finite-difference check of every differentiable kernel.
//!
//! Each case builds a small random instance in `f64`, reduces the op output
//! to a scalar through a fixed random projection, and compares the analytic
//! gradient of every input element against `(L(x+h) - L(x-h)) / 2h`.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Finite-difference step for `f64` checks.
pub const STEP: f64 = 1e-5;
/// Relative tolerance for `f64` checks.
pub const TOLERANCE: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

/// Kernels covered by the check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Conv2d,
    Conv2dStrided,
    Upsample2x,
    InstanceNorm,
    Relu,
    LeakyRelu,
    Tanh,
    Add,
    Sub,
    Mul,
    Scale,
    Shift,
    Mean,
    Abs,
    Square,
    Concat,
}

impl Kernel {
    pub const ALL: [Kernel; 16] = [
        Kernel::Conv2d,
        Kernel::Conv2dStrided,
        Kernel::Upsample2x,
        Kernel::InstanceNorm,
        Kernel::Relu,
        Kernel::LeakyRelu,
        Kernel::Tanh,
        Kernel::Add,
        Kernel::Sub,
        Kernel::Mul,
        Kernel::Scale,
        Kernel::Shift,
        Kernel::Mean,
        Kernel::Abs,
        Kernel::Square,
        Kernel::Concat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Conv2d => "conv2d",
            Kernel::Conv2dStrided => "conv2d_stride2",
            Kernel::Upsample2x => "upsample2x",
            Kernel::InstanceNorm => "instance_norm",
            Kernel::Relu => "relu",
            Kernel::LeakyRelu => "leaky_relu",
            Kernel::Tanh => "tanh",
            Kernel::Add => "add",
            Kernel::Sub => "sub",
            Kernel::Mul => "mul",
            Kernel::Scale => "scale",
            Kernel::Shift => "shift",
            Kernel::Mean => "mean",
            Kernel::Abs => "abs",
            Kernel::Square => "square",
            Kernel::Concat => "concat",
        }
    }
}

/// Outcome of one randomized instance.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub kernel: Kernel,
    pub seed: u64,
    pub shapes: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Random values bounded away from zero so kinks of relu/abs are not straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(0.1..1.5);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

#[derive(Default, Clone, Copy)]
struct Knobs {
    stride: usize,
    pad: usize,
    factor: f64,
}

struct Instance {
    inputs: Vec<Tensor<f64>>,
    build: fn(&mut Graph<f64>, &[Var], Knobs) -> Result<Var>,
    knobs: Knobs,
}

fn instance(kernel: Kernel, rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(2..=5);
    let w = rng.random_range(2..=5);
    let img = [n, c, h, w];
    match kernel {
        Kernel::Conv2d | Kernel::Conv2dStrided => {
            let cout = rng.random_range(1..=3);
            let k = if rng.random_bool(0.5) { 3 } else { 1 };
            let pad = if k == 3 { rng.random_range(0..=1) } else { 0 };
            let (h, w) = (h.max(k), w.max(k));
            let stride = if kernel == Kernel::Conv2dStrided { 2 } else { 1 };
            Instance {
                inputs: alloc::vec![
                    uniform(rng, &[n, c, h, w], -1.0, 1.0),
                    uniform(rng, &[cout, c, k, k], -1.0, 1.0),
                    uniform(rng, &[cout], -0.5, 0.5),
                ],
                build: |g, v, k| g.conv2d(v[0], v[1], v[2], k.stride, k.pad),
                knobs: Knobs { stride, pad, factor: 0.0 },
            }
        }
        Kernel::Upsample2x => Instance {
            inputs: alloc::vec![uniform(rng, &img, -1.0, 1.0)],
            build: |g, v, _| g.upsample2x(v[0]),
            knobs: Knobs::default(),
        },
        Kernel::InstanceNorm => Instance {
            inputs: alloc::vec![uniform(rng, &img, -2.0, 2.0)],
            build: |g, v, _| g.instance_norm(v[0]),
            knobs: Knobs::default(),
        },
        Kernel::Relu => Instance {
            inputs: alloc::vec![away_from_zero(rng, &img)],
            build: |g, v, _| g.relu(v[0]),
            knobs: Knobs::default(),
        },
        Kernel::LeakyRelu => Instance {
            inputs: alloc::vec![away_from_zero(rng, &img)],
            build: |g, v, _| g.leaky_relu(v[0]),
            knobs: Knobs::default(),
        },
        Kernel::Tanh => Instance {
            inputs: alloc::vec![uniform(rng, &img, -2.0, 2.0)],
            build: |g, v, _| g.tanh(v[0]),
            knobs: Knobs::default(),
        },
        Kernel::Add | Kernel::Sub | Kernel::Mul => Instance {
            inputs: alloc::vec![uniform(rng, &img, -1.0, 1.0), uniform(rng, &img, -1.0, 1.0)],
            build: match kernel {
                Kernel::Add => |g, v, _| g.add(v[0], v[1]),
                Kernel::Sub => |g, v, _| g.sub(v[0], v[1]),
                _ => |g, v, _| g.mul(v[0], v[1]),
            },
            knobs: Knobs::default(),
        },
        Kernel::Scale => Instance {
            inputs: alloc::vec![uniform(rng, &img, -1.0, 1.0)],
            build: |g, v, k| g.scale(v[0], k.factor),
            knobs: Knobs { factor: rng.random_range(-3.0..3.0), ..Knobs::default() },
        },
        Kernel::Shift => Instance {
            inputs: alloc::vec![uniform(rng, &img, -1.0, 1.0)],
            build: |g, v, k| g.shift(v[0], k.factor),
            knobs: Knobs { factor: rng.random_range(-3.0..3.0), ..Knobs::default() },
        },
        Kernel::Mean => Instance {
            inputs: alloc::vec![uniform(rng, &img, -1.0, 1.0)],
            build: |g, v, _| g.mean(v[0]),
            knobs: Knobs::default(),
        },
        Kernel::Abs => Instance {
            inputs: alloc::vec![away_from_zero(rng, &img)],
            build: |g, v, _| g.abs(v[0]),
            knobs: Knobs::default(),
        },
        Kernel::Square => Instance {
            inputs: alloc::vec![uniform(rng, &img, -1.5, 1.5)],
            build: |g, v, _| g.square(v[0]),
            knobs: Knobs::default(),
        },
        Kernel::Concat => {
            let c2 = rng.random_range(1..=3);
            Instance {
                inputs: alloc::vec![uniform(rng, &img, -1.0, 1.0), uniform(rng, &[n, c2, h, w], -1.0, 1.0)],
                build: |g, v, _| g.concat_channels(v),
                knobs: Knobs::default(),
            }
        }
    }
}

/// Scalar objective `mean(op(inputs) ⊙ projection)`; the returned graph holds
/// gradients for every input when `with_grad` is set.
fn objective(
    inst: &Instance,
    inputs: &[Tensor<f64>],
    projection: &Tensor<f64>,
    with_grad: bool,
) -> Result<(f64, Graph<f64>, Vec<Var>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = (inst.build)(&mut g, &vars, inst.knobs)?;
    let proj = g.constant(projection.clone());
    let out = if g.value(out).rank() == 0 {
        let s = projection.data()[0];
        g.scale(out, s)?
    } else {
        g.mul(out, proj)?
    };
    let loss = g.mean(out)?;
    let value = g.value(loss).item().unwrap();
    if with_grad {
        g.backward(loss)?;
    }
    Ok((value, g, vars))
}

fn output_shape(inst: &Instance) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inst.inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (inst.build)(&mut g, &vars, inst.knobs)?;
    Ok(g.value(out).shape().to_vec())
}

/// Runs one randomized instance of `kernel`.
pub fn check_case(kernel: Kernel, seed: u64) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((kernel as u64) << 32));
    let inst = instance(kernel, &mut rng);
    let out_shape = output_shape(&inst)?;
    let projection = if out_shape.is_empty() {
        Tensor::scalar(rng.random_range(0.5..2.0))
    } else {
        uniform(&mut rng, &out_shape, -1.0, 1.0)
    };
    let (_, graph, vars) = objective(&inst, &inst.inputs, &projection, true)?;
    let mut worst: f64 = 0.0;
    for (i, input) in inst.inputs.iter().enumerate() {
        let analytic = graph.grad(vars[i]).expect("parameter gradient").to_vec();
        for (j, &a) in analytic.iter().enumerate().take(input.numel()) {
            let mut plus = inst.inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inst.inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let (lp, _, _) = objective(&inst, &plus, &projection, false)?;
            let (lm, _, _) = objective(&inst, &minus, &projection, false)?;
            let numeric = (lp - lm) / (2.0 * STEP);
            let denom = a.abs().max(numeric.abs()).max(ABS_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    let shapes = alloc::format!(
        "{:?} -> {:?}",
        inst.inputs.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>(),
        out_shape
    );
    Ok(CaseResult { kernel, seed, shapes, max_rel_error: worst, passed: worst <= TOLERANCE })
}

/// Runs `cases` instances of every kernel.
pub fn check_all(cases: u64, seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for kernel in Kernel::ALL {
        for i in 0..cases {
            out.push(check_case(kernel, seed.wrapping_add(i))?);
        }
    }
    Ok(out)
}
