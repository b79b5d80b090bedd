//! Central finite-difference verification of the tape's backward rules.
//!
//! Every check builds a scalar loss from a set of input tensors, runs the
//! analytic backward pass once, then re-evaluates the forward pass with each
//! input element nudged by ±ε. Only forward values feed the numerical side.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::FeatureMatrix;
use crate::model::{ForwardMode, Tcan, TcanConfig};
use crate::tensor::{OpKind, Result, Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
pub const ERROR_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares analytic and central-difference gradients of `build` with
/// respect to every element of every input.
pub fn check_gradients<F>(
    name: &str,
    inputs: &[Tensor],
    build: F,
    eps: f64,
    fault: Option<OpKind>,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).values()[0])
    };

    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_fault(kind);
    }
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = inputs[k].values()[j];
            probe[k].values_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[k].values_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[k].values_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(a, numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        checked,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteSize {
    Tiny,
    Small,
}

impl SuiteSize {
    fn max_extent(self) -> usize {
        match self {
            SuiteSize::Tiny => 4,
            SuiteSize::Small => 8,
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    // Magnitudes bounded away from zero keep relu kinks out of the ±ε probe.
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape, v).expect("finite random tensor")
}

fn projection(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn project(tape: &mut Tape, v: Var, weights: &[f64]) -> Result<Var> {
    tape.weighted_sum(v, weights.to_vec())
}

/// Checks one op kind on random tensors. The op output is contracted
/// with a fixed random projection so that every output element matters.
pub fn check_op(kind: OpKind, size: SuiteSize, seed: u64, fault: Option<OpKind>) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = size.max_extent();
    let dim = |rng: &mut ChaCha8Rng| rng.random_range(2..=e);
    let name = kind.name();
    match kind {
        OpKind::Conv1d => {
            let (ci, co, t) = (dim(&mut rng), dim(&mut rng), dim(&mut rng) + 2);
            let k = rng.random_range(1..=3);
            let d = rng.random_range(1..=2);
            let inputs = [
                random_tensor(&mut rng, vec![ci, t]),
                random_tensor(&mut rng, vec![co, ci, k]),
                random_tensor(&mut rng, vec![co]),
            ];
            let w = projection(&mut rng, co * t);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.conv1d(v[0], v[1], v[2], d)?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::SoftmaxRows => {
            let (r, c) = (dim(&mut rng), dim(&mut rng));
            let inputs = [random_tensor(&mut rng, vec![r, c])];
            let w = projection(&mut rng, r * c);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.softmax_rows(v[0])?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::Matmul => {
            let (m, k, n) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
            let inputs = [random_tensor(&mut rng, vec![m, k]), random_tensor(&mut rng, vec![k, n])];
            let w = projection(&mut rng, m * n);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.matmul(v[0], v[1])?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::Transpose => {
            let (r, c) = (dim(&mut rng), dim(&mut rng));
            let inputs = [random_tensor(&mut rng, vec![r, c])];
            let w = projection(&mut rng, r * c);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.transpose(v[0])?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::Add => {
            let (r, c) = (dim(&mut rng), dim(&mut rng));
            let inputs = [random_tensor(&mut rng, vec![r, c]), random_tensor(&mut rng, vec![r, c])];
            let w = projection(&mut rng, r * c);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.add(v[0], v[1])?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::Relu => {
            let (r, c) = (dim(&mut rng), dim(&mut rng));
            let inputs = [random_tensor(&mut rng, vec![r, c])];
            let w = projection(&mut rng, r * c);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.relu(v[0])?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::Affine => {
            let (o, i) = (dim(&mut rng), dim(&mut rng));
            let inputs = [
                random_tensor(&mut rng, vec![o, i]),
                random_tensor(&mut rng, vec![i]),
                random_tensor(&mut rng, vec![o]),
            ];
            let w = projection(&mut rng, o);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.affine(v[0], v[1], v[2])?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::GlobalAvgPoolTime => {
            let (c, t) = (dim(&mut rng), dim(&mut rng));
            let inputs = [random_tensor(&mut rng, vec![c, t])];
            let w = projection(&mut rng, c);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.global_avg_pool_time(v[0])?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::CrossEntropy => {
            let m = dim(&mut rng);
            let label = rng.random_range(0..m);
            let inputs = [random_tensor(&mut rng, vec![m])];
            check_gradients(name, &inputs, |tp, v| tp.cross_entropy(v[0], label), DEFAULT_EPS, fault)
        }
        OpKind::Sum => {
            let (r, c) = (dim(&mut rng), dim(&mut rng));
            let inputs = [random_tensor(&mut rng, vec![r, c])];
            check_gradients(name, &inputs, |tp, v| tp.sum(v[0]), DEFAULT_EPS, fault)
        }
        OpKind::WeightedSum => {
            let n = dim(&mut rng) * dim(&mut rng);
            let inputs = [random_tensor(&mut rng, vec![n])];
            let w = projection(&mut rng, n);
            check_gradients(name, &inputs, |tp, v| project(tp, v[0], &w), DEFAULT_EPS, fault)
        }
        OpKind::MaskScale => {
            let (r, c) = (dim(&mut rng), dim(&mut rng));
            let inputs = [random_tensor(&mut rng, vec![r, c])];
            let mask: Vec<f64> = (0..r * c).map(|_| if rng.random_bool(0.7) { 1.0 / 0.7 } else { 0.0 }).collect();
            let w = projection(&mut rng, r * c);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.mask_scale(v[0], mask.clone())?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::WeightNorm => {
            let (o, i, k) = (dim(&mut rng), dim(&mut rng), rng.random_range(1..=3));
            let inputs = [random_tensor(&mut rng, vec![o, i, k]), random_tensor(&mut rng, vec![o])];
            let w = projection(&mut rng, o * i * k);
            check_gradients(name, &inputs, |tp, v| {
                let y = tp.weight_norm(v[0], v[1])?;
                project(tp, y, &w)
            }, DEFAULT_EPS, fault)
        }
        OpKind::Leaf => Ok(GradCheck {
            name: name.to_string(),
            max_rel_error: 0.0,
            checked: 0,
        }),
    }
}

/// Toy TCAN used for the whole-graph check.
pub fn toy_config(size: SuiteSize) -> TcanConfig {
    let (channels, reduced) = match size {
        SuiteSize::Tiny => (4, 2),
        SuiteSize::Small => (8, 2),
    };
    TcanConfig {
        channels,
        attention_reduced_dim: reduced,
        classifier_hidden: channels,
        dilations: vec![1, 2],
        ..TcanConfig::default()
    }
}

pub fn toy_frames(size: SuiteSize) -> usize {
    match size {
        SuiteSize::Tiny => 12,
        SuiteSize::Small => 20,
    }
}

/// Whole-network check: cross-entropy of a randomly initialised toy TCAN
/// with respect to the input features and every parameter.
pub fn check_tcan(size: SuiteSize, seed: u64, fault: Option<OpKind>) -> crate::Result<GradCheck> {
    let config = toy_config(size);
    let frames = toy_frames(size);
    let model = Tcan::init(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let feats: Vec<f64> = (0..frames * config.input_dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let features = FeatureMatrix::from_values(frames, config.input_dim, feats)
        .expect("toy features are well-formed");
    let label = rng.random_range(0..config.n_classes);

    let mut inputs = vec![model.input_tensor(&features)?];
    inputs.extend(model.params().tensors().iter().cloned());
    Ok(check_gradients("tcan", &inputs, |tp, v| {
        let logits = model.forward_with_vars(tp, v[0], &v[1..], ForwardMode::Eval)?.logits;
        tp.cross_entropy(logits, label)
    }, DEFAULT_EPS, fault)?)
}

/// Runs every op check plus the whole-network check.
pub fn run_suite(size: SuiteSize, seed: u64, fault: Option<OpKind>) -> crate::Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (i, kind) in OpKind::DIFFERENTIABLE.into_iter().enumerate() {
        out.push(check_op(kind, size, seed.wrapping_add(i as u64), fault)?);
    }
    out.push(check_tcan(size, seed, fault)?);
    Ok(out)
}
