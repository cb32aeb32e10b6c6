// Raw numeric kernels shared by the forward and backward rules.

/// `c (+)= op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
/// Operands are row-major; a transposed operand is stored as its untransposed
/// shape (`k x m` / `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above against the logical shapes, and
    // the strides address exactly those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

pub(crate) fn softmax_along(data: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..len {
                let e = (data[idx(j)] - max).exp();
                out[idx(j)] = e;
                sum += e;
            }
            if log {
                let log_sum = sum.ln();
                for j in 0..len {
                    out[idx(j)] = data[idx(j)] - max - log_sum;
                }
            } else {
                for j in 0..len {
                    out[idx(j)] /= sum;
                }
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// For each element of `a_shape`, the flat index of the broadcast `b` element.
/// Returns `None` when `b` cannot broadcast onto `a`.
pub(crate) fn broadcast_map(a_shape: &[usize], b_shape: &[usize]) -> Option<Vec<usize>> {
    if b_shape.len() > a_shape.len() {
        return None;
    }
    let offset = a_shape.len() - b_shape.len();
    let mut b_full = vec![1usize; a_shape.len()];
    b_full[offset..].copy_from_slice(b_shape);
    for (&a, &b) in a_shape.iter().zip(&b_full) {
        if b != 1 && b != a {
            return None;
        }
    }
    let mut b_strides = vec![0usize; a_shape.len()];
    let mut stride = 1;
    for d in (0..a_shape.len()).rev() {
        b_strides[d] = if b_full[d] == 1 { 0 } else { stride };
        stride *= b_full[d];
    }
    let numel: usize = a_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut coord = vec![0usize; a_shape.len()];
    for _ in 0..numel {
        map.push(coord.iter().zip(&b_strides).map(|(c, s)| c * s).sum());
        for d in (0..a_shape.len()).rev() {
            coord[d] += 1;
            if coord[d] < a_shape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    Some(map)
}
