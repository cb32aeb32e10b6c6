use std::fmt;
use std::str::FromStr;

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Operation kinds reachable through the generic [`Tape::forward`] entry point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Transpose,
    Add,
    Mul,
    Scale,
    AddScalar,
    Concat,
    Slice,
    Gather,
    MaskedFill,
    Softmax,
    LogSoftmax,
    Sigmoid,
    Gelu,
    Log,
    LayerNorm,
    CrossEntropy,
    BceWithLogits,
    Sum,
    Mean,
    Pick,
    ScatterCols,
    StraightThrough,
}

const NAMES: &[(&str, OpKind)] = &[
    ("matmul", OpKind::MatMul),
    ("transpose", OpKind::Transpose),
    ("add", OpKind::Add),
    ("mul", OpKind::Mul),
    ("scale", OpKind::Scale),
    ("add_scalar", OpKind::AddScalar),
    ("concat", OpKind::Concat),
    ("slice", OpKind::Slice),
    ("gather", OpKind::Gather),
    ("masked_fill", OpKind::MaskedFill),
    ("softmax", OpKind::Softmax),
    ("log_softmax", OpKind::LogSoftmax),
    ("sigmoid", OpKind::Sigmoid),
    ("gelu", OpKind::Gelu),
    ("log", OpKind::Log),
    ("layer_norm", OpKind::LayerNorm),
    ("cross_entropy", OpKind::CrossEntropy),
    ("bce_with_logits", OpKind::BceWithLogits),
    ("sum", OpKind::Sum),
    ("mean", OpKind::Mean),
    ("pick", OpKind::Pick),
    ("scatter_cols", OpKind::ScatterCols),
    ("straight_through", OpKind::StraightThrough),
];

impl OpKind {
    pub fn all() -> impl Iterator<Item = OpKind> {
        NAMES.iter().map(|(_, k)| *k)
    }

    pub fn name(self) -> &'static str {
        NAMES.iter().find(|(_, k)| *k == self).map(|(n, _)| *n).unwrap_or("?")
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        NAMES
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, k)| *k)
            .ok_or_else(|| TensorError::UnknownOp(s.to_string()))
    }
}

/// Non-tensor arguments for [`Tape::forward`]. Each op reads only the fields
/// it needs.
#[derive(Clone, Debug, Default)]
pub struct Attrs {
    pub axis: Option<usize>,
    pub scalar: Option<f64>,
    pub range: Option<(usize, usize)>,
    pub indices: Vec<usize>,
    pub coords: Vec<(usize, usize)>,
    pub mask: Vec<bool>,
    pub targets: Vec<f64>,
    pub width: Option<usize>,
    pub sample: Option<Tensor>,
}

impl Attrs {
    pub fn axis(axis: usize) -> Self {
        Self { axis: Some(axis), ..Self::default() }
    }
}

fn arity(kind: OpKind, inputs: &[Var], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(TensorError::InvalidAttribute {
            op: kind.name(),
            reason: format!("expects {n} inputs, got {}", inputs.len()),
        });
    }
    Ok(())
}

fn need<T: Clone>(kind: OpKind, field: &'static str, v: &Option<T>) -> Result<T> {
    v.clone().ok_or_else(|| TensorError::InvalidAttribute {
        op: kind.name(),
        reason: format!("missing attribute `{field}`"),
    })
}

impl Tape {
    /// Generic dispatch by op kind.
    pub fn forward(&mut self, kind: OpKind, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        use OpKind::*;
        match kind {
            Concat => return self.concat(inputs, need(kind, "axis", &attrs.axis)?),
            MatMul | Add | Mul => arity(kind, inputs, 2)?,
            LayerNorm => arity(kind, inputs, 3)?,
            _ => arity(kind, inputs, 1)?,
        }
        let x = inputs[0];
        match kind {
            MatMul => self.matmul(x, inputs[1]),
            Add => self.add(x, inputs[1]),
            Mul => self.mul(x, inputs[1]),
            Transpose => self.transpose(x),
            Scale => Ok(self.scale(x, need(kind, "scalar", &attrs.scalar)?)),
            AddScalar => Ok(self.add_scalar(x, need(kind, "scalar", &attrs.scalar)?)),
            Slice => {
                let (start, end) = need(kind, "range", &attrs.range)?;
                self.slice(x, need(kind, "axis", &attrs.axis)?, start, end)
            }
            Gather => self.gather(x, &attrs.indices),
            MaskedFill => self.masked_fill(x, &attrs.mask, need(kind, "scalar", &attrs.scalar)?),
            Softmax => self.softmax(x, need(kind, "axis", &attrs.axis)?),
            LogSoftmax => self.log_softmax(x, need(kind, "axis", &attrs.axis)?),
            Sigmoid => Ok(self.sigmoid(x)),
            Gelu => Ok(self.gelu(x)),
            Log => Ok(self.log(x)),
            LayerNorm => self.layer_norm(x, inputs[1], inputs[2], attrs.scalar.unwrap_or(1e-5)),
            CrossEntropy => self.cross_entropy(x, &attrs.indices),
            BceWithLogits => self.bce_with_logits(x, &attrs.targets),
            Sum => Ok(self.sum(x)),
            Mean => Ok(self.mean(x)),
            Pick => self.pick(x, &attrs.coords),
            ScatterCols => self.scatter_cols(x, &attrs.indices, need(kind, "width", &attrs.width)?),
            StraightThrough => self.straight_through(x, need(kind, "sample", &attrs.sample)?),
            Concat => unreachable!(),
        }
    }
}
