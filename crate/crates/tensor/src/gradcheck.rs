//! Central finite-difference gradient checking.
//!
//! Everything here uses forward evaluation only, so it stays independent of
//! the backward rules it is used to verify.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::{Attrs, OpKind};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Largest mismatch found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn projection(numel: usize) -> Tensor {
    // Fixed, non-symmetric weights turn any output into a scalar loss.
    Tensor::vector((0..numel).map(|i| 0.5 + ((i * 7 + 3) % 11) as f64 / 10.0).collect())
}

fn scalar_loss<F>(tape: &mut Tape, vars: &[Var], build: &F) -> Result<Var>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let out = build(tape, vars)?;
    let numel = tape.value(out).numel();
    if numel == 1 {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let w = Tensor::new(shape, projection(numel).into_data())?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn eval<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = scalar_loss(&mut tape, &vars, build)?;
    Ok(tape.value(loss).item())
}

/// Compares backward-mode gradients of `build` against central differences
/// with step `h`, over every element of the inputs listed in `differentiable`.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    differentiable: &[usize],
    h: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.leaf(t.clone(), differentiable.contains(&i)))
        .collect();
    let loss = scalar_loss(&mut tape, &vars, &build)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        input: 0,
        element: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut perturbed = inputs.to_vec();
    for &i in differentiable {
        let analytic = grads
            .wrt(&tape, vars[i])
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = orig + h;
            let up = eval(&perturbed, &build)?;
            perturbed[i].data_mut()[j] = orig - h;
            let down = eval(&perturbed, &build)?;
            perturbed[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error {
                report = GradCheckReport { max_rel_error: err, input: i, element: j, analytic: a, numeric };
            }
        }
    }
    Ok(report)
}

/// A randomized instance of one op for gradient checking.
#[derive(Clone, Debug)]
pub struct OpCase {
    pub kind: OpKind,
    pub inputs: Vec<Tensor>,
    pub differentiable: Vec<usize>,
    pub attrs: Attrs,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
        .expect("shape matches data")
}

/// One small (at most 4x4) random case per differentiable op kind.
///
/// `straight_through` is excluded: its backward rule is deliberately not the
/// derivative of its forward value.
pub fn standard_op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let rows = r.random_range(2..=4);
    let cols = r.random_range(2..=4);
    let inner = r.random_range(2..=4);
    let m = |r: &mut ChaCha8Rng, s: &[usize]| random(r, s, -1.5, 1.5);
    let case = |kind, inputs: Vec<Tensor>, differentiable: Vec<usize>, attrs| OpCase {
        kind,
        inputs,
        differentiable,
        attrs,
    };
    let mask: Vec<bool> = (0..rows * cols).map(|i| i % 3 == 1).collect();
    let ids: Vec<usize> = (0..rows + 1).map(|_| r.random_range(0..rows)).collect();
    let targets: Vec<usize> = (0..rows).map(|_| r.random_range(0..cols)).collect();
    let coords: Vec<(usize, usize)> =
        (0..5).map(|_| (r.random_range(0..rows), r.random_range(0..cols))).collect();
    let scatter: Vec<usize> = (0..cols).map(|_| r.random_range(0..cols + 1)).collect();
    vec![
        case(OpKind::MatMul, vec![m(r, &[rows, inner]), m(r, &[inner, cols])], vec![0, 1], Attrs::default()),
        case(OpKind::Transpose, vec![m(r, &[rows, cols])], vec![0], Attrs::default()),
        case(OpKind::Add, vec![m(r, &[rows, cols]), m(r, &[rows, cols])], vec![0, 1], Attrs::default()),
        case(OpKind::Add, vec![m(r, &[rows, cols]), m(r, &[cols])], vec![0, 1], Attrs::default()),
        case(OpKind::Mul, vec![m(r, &[rows, cols]), m(r, &[rows, cols])], vec![0, 1], Attrs::default()),
        case(OpKind::Mul, vec![m(r, &[rows, cols]), m(r, &[rows, 1])], vec![0, 1], Attrs::default()),
        case(OpKind::Scale, vec![m(r, &[rows, cols])], vec![0], Attrs { scalar: Some(-0.7), ..Attrs::default() }),
        case(OpKind::AddScalar, vec![m(r, &[rows, cols])], vec![0], Attrs { scalar: Some(2.0), ..Attrs::default() }),
        case(OpKind::Concat, vec![m(r, &[rows, cols]), m(r, &[inner, cols])], vec![0, 1], Attrs::axis(0)),
        case(OpKind::Concat, vec![m(r, &[rows, cols]), m(r, &[rows, inner])], vec![0, 1], Attrs::axis(1)),
        case(OpKind::Slice, vec![m(r, &[rows, cols])], vec![0], Attrs { axis: Some(1), range: Some((1, cols)), ..Attrs::default() }),
        case(OpKind::Gather, vec![m(r, &[rows, cols])], vec![0], Attrs { indices: ids, ..Attrs::default() }),
        case(OpKind::MaskedFill, vec![m(r, &[rows, cols])], vec![0], Attrs { mask, scalar: Some(-3.0), ..Attrs::default() }),
        case(OpKind::Softmax, vec![m(r, &[rows, cols])], vec![0], Attrs::axis(1)),
        case(OpKind::Softmax, vec![m(r, &[rows, cols])], vec![0], Attrs::axis(0)),
        case(OpKind::LogSoftmax, vec![m(r, &[rows, cols])], vec![0], Attrs::axis(1)),
        case(OpKind::Sigmoid, vec![m(r, &[rows, cols])], vec![0], Attrs::default()),
        case(OpKind::Gelu, vec![m(r, &[rows, cols])], vec![0], Attrs::default()),
        case(OpKind::Log, vec![random(r, &[rows, cols], 0.2, 2.0)], vec![0], Attrs::default()),
        case(
            OpKind::LayerNorm,
            vec![m(r, &[rows, cols]), random(r, &[cols], 0.5, 1.5), m(r, &[cols])],
            vec![0, 1, 2],
            Attrs::default(),
        ),
        case(OpKind::CrossEntropy, vec![m(r, &[rows, cols])], vec![0], Attrs { indices: targets, ..Attrs::default() }),
        case(
            OpKind::BceWithLogits,
            vec![m(r, &[rows])],
            vec![0],
            Attrs { targets: (0..rows).map(|i| (i % 2) as f64).collect(), ..Attrs::default() },
        ),
        case(OpKind::Sum, vec![m(r, &[rows, cols])], vec![0], Attrs::default()),
        case(OpKind::Mean, vec![m(r, &[rows, cols])], vec![0], Attrs::default()),
        case(OpKind::Pick, vec![m(r, &[rows, cols])], vec![0], Attrs { coords, ..Attrs::default() }),
        case(
            OpKind::ScatterCols,
            vec![m(r, &[rows, cols])],
            vec![0],
            Attrs { indices: scatter, width: Some(cols + 1), ..Attrs::default() },
        ),
    ]
}

/// Gradient-checks one case through the generic dispatch.
pub fn check_op_case(case: &OpCase, h: f64) -> Result<GradCheckReport> {
    let attrs = case.attrs.clone();
    let kind = case.kind;
    check_gradients(&case.inputs, &case.differentiable, h, move |tape, vars| {
        tape.forward(kind, vars, &attrs)
    })
}
