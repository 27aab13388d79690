//! Reverse-mode differentiation over batched tensor operations.
//!
//! A [`Tape`] records every operation of a loss program as a node holding its
//! forward value. [`Tape::backward`] then walks the nodes in reverse order and
//! accumulates adjoints, writing parameter gradients into a flat buffer that
//! is congruent with the [`ParamStore`](super::ParamStore) the tape reads from.
//!
//! Shape mismatches inside a program are programmer errors and panic; only
//! the boundary checks (non-scalar loss) are reported as errors.

use super::tensor::Tensor;
use super::NnError;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param {
        offset: usize,
    },
    Affine {
        x: Var,
        weights: usize,
        bias: usize,
    },
    Elu(Var),
    Relu(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    SumRows(Var),
    Mean(Var),
    Broadcast(Var),
    /// Column-local op producing a `1 x cols` output; `partials[k]` has the
    /// shape of `inputs[k]` and holds d out[c] / d input_k[r][c].
    Columnwise {
        inputs: Vec<Var>,
        partials: Vec<Tensor<T>>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recording of one loss program against a fixed parameter vector.
pub struct Tape<'p, T> {
    params: &'p [T],
    nodes: Vec<Node<T>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p [T]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p [T] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input data; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn constant_scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Trainable block read from `params[offset..offset + rows * cols]`.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Var {
        let data = self.params[offset..offset + rows * cols].to_vec();
        self.push(Tensor::from_vec(rows, cols, data), Op::Param { offset })
    }

    /// `W x + b` with `W` (`out x in`, row-major) at `weights` and `b` (`out`)
    /// at `bias`; `x` is `in x batch`.
    pub fn affine(&mut self, x: Var, weights: usize, bias: usize, out_dim: usize) -> Var {
        let input = &self.nodes[x.0].value;
        let (in_dim, cols) = input.shape();
        let w = &self.params[weights..weights + out_dim * in_dim];
        let b = &self.params[bias..bias + out_dim];
        let mut out = Tensor::zeros(out_dim, cols);
        for j in 0..out_dim {
            let row = out.row_mut(j);
            row.fill(b[j]);
            for k in 0..in_dim {
                let wjk = w[j * in_dim + k];
                for (o, &xv) in row.iter_mut().zip(input.row(k)) {
                    *o = *o + wjk * xv;
                }
            }
        }
        self.push(out, Op::Affine { x, weights, bias })
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let one = T::one();
        let out = self.nodes[x.0]
            .value
            .map(|v| if v > T::zero() { v } else { v.exp() - one });
        self.push(out, Op::Elu(x))
    }

    /// `max(x, 0)`; the derivative at the kink is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        match (va.shape(), vb.shape()) {
            (sa, sb) if sa == sb => Tensor::from_vec(
                sa.0,
                sa.1,
                va.as_slice()
                    .iter()
                    .zip(vb.as_slice())
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
            ),
            (_, (1, 1)) => {
                let y = vb.as_slice()[0];
                va.map(|x| f(x, y))
            }
            ((1, 1), _) => {
                let x = va.as_slice()[0];
                vb.map(|y| f(x, y))
            }
            (sa, sb) => panic!("incompatible shapes {sa:?} and {sb:?}"),
        }
    }

    /// Elementwise sum; either operand may be a 1x1 scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.nodes[x.0].value.map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, shift: T) -> Var {
        let out = self.nodes[x.0].value.map(|v| v + shift);
        self.push(out, Op::AddScalar(x))
    }

    /// Column sums: `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.sum_rows();
        self.push(out, Op::SumRows(x))
    }

    /// Mean of all entries: `r x c -> 1 x 1`.
    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.nodes[x.0].value.mean());
        self.push(out, Op::Mean(x))
    }

    /// Repeats an `r x 1` column across `cols` columns.
    pub fn broadcast(&mut self, x: Var, cols: usize) -> Var {
        let src = &self.nodes[x.0].value;
        assert_eq!(src.cols(), 1, "broadcast source must be a single column");
        let rows = src.rows();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            out.row_mut(r).fill(src.get(r, 0));
        }
        self.push(out, Op::Broadcast(x))
    }

    /// Records a custom column-local operation whose value and local partial
    /// derivatives were computed by the caller.
    ///
    /// `value` must be `1 x cols`, every input must have `cols` columns, and
    /// `partials[k]` must match the shape of `inputs[k]`.
    pub fn columnwise(&mut self, inputs: Vec<Var>, value: Tensor<T>, partials: Vec<Tensor<T>>) -> Var {
        assert_eq!(value.rows(), 1, "columnwise output must be a row vector");
        assert_eq!(inputs.len(), partials.len(), "one partial block per input");
        for (v, p) in inputs.iter().zip(&partials) {
            let shape = self.nodes[v.0].value.shape();
            assert_eq!(shape, p.shape(), "partial shape must match input shape");
            assert_eq!(shape.1, value.cols(), "columnwise inputs must share columns");
        }
        self.push(value, Op::Columnwise { inputs, partials })
    }

    /// Reverse sweep from a scalar `loss`; returns the gradient with respect
    /// to the parameter vector the tape was built on.
    pub fn backward(&self, loss: Var) -> Result<Vec<T>, NnError> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(NnError::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut param_grad = vec![T::zero(); self.params.len()];
        let mut adj: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    for (p, &gv) in param_grad[*offset..*offset + g.len()]
                        .iter_mut()
                        .zip(g.as_slice())
                    {
                        *p = *p + gv;
                    }
                }
                Op::Affine { x, weights, bias } => {
                    let input = &self.nodes[x.0].value;
                    let (in_dim, _) = input.shape();
                    let out_dim = g.rows();
                    let w = &self.params[*weights..*weights + out_dim * in_dim];
                    let mut gx = Tensor::zeros(in_dim, input.cols());
                    for j in 0..out_dim {
                        let gj = g.row(j);
                        param_grad[*bias + j] = param_grad[*bias + j] + lane_sum(gj);
                        for k in 0..in_dim {
                            let dw = lane_dot(gj, input.row(k));
                            param_grad[*weights + j * in_dim + k] =
                                param_grad[*weights + j * in_dim + k] + dw;
                            let wjk = w[j * in_dim + k];
                            for (o, &gv) in gx.row_mut(k).iter_mut().zip(gj) {
                                *o = *o + wjk * gv;
                            }
                        }
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Elu(x) => {
                    let input = &self.nodes[x.0].value;
                    let one = T::one();
                    let gx = zip_map(&g, &node.value, input, |gv, out, inp| {
                        if inp > T::zero() {
                            gv
                        } else {
                            gv * (out + one)
                        }
                    });
                    accumulate(&mut adj, *x, gx);
                }
                Op::Relu(x) => {
                    let input = &self.nodes[x.0].value;
                    let gx = zip_map(&g, input, input, |gv, inp, _| {
                        if inp > T::zero() {
                            gv
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut adj, *x, gx);
                }
                Op::Square(x) => {
                    let input = &self.nodes[x.0].value;
                    let two = T::lit(2.0);
                    let gx = zip_map(&g, input, input, |gv, inp, _| two * inp * gv);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Add(a, b) => {
                    self.reduce_into(&mut adj, *a, g.clone());
                    self.reduce_into(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    self.reduce_into(&mut adj, *b, g.map(|v| -v));
                    self.reduce_into(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let ga = times_broadcast(&g, vb);
                    let gb = times_broadcast(&g, va);
                    self.reduce_into(&mut adj, *a, ga);
                    self.reduce_into(&mut adj, *b, gb);
                }
                Op::Scale(x, factor) => {
                    let f = *factor;
                    accumulate(&mut adj, *x, g.map(|v| v * f));
                }
                Op::AddScalar(x) => accumulate(&mut adj, *x, g),
                Op::SumRows(x) => {
                    let (rows, cols) = self.nodes[x.0].value.shape();
                    let mut gx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        gx.row_mut(r).copy_from_slice(g.row(0));
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Mean(x) => {
                    let (rows, cols) = self.nodes[x.0].value.shape();
                    let gv = g.as_slice()[0] / T::from_count(rows * cols);
                    accumulate(&mut adj, *x, Tensor::full(rows, cols, gv));
                }
                Op::Broadcast(x) => {
                    let sums = (0..g.rows()).map(|r| g.row(r).iter().copied().sum()).collect();
                    accumulate(&mut adj, *x, Tensor::from_vec(g.rows(), 1, sums));
                }
                Op::Columnwise { inputs, partials } => {
                    let gout = g.row(0);
                    for (v, p) in inputs.iter().zip(partials) {
                        let mut gx = p.clone();
                        for r in 0..gx.rows() {
                            for (o, &gv) in gx.row_mut(r).iter_mut().zip(gout) {
                                *o = *o * gv;
                            }
                        }
                        accumulate(&mut adj, *v, gx);
                    }
                }
            }
        }
        Ok(param_grad)
    }

    /// Accumulates `g` into `target`, summing it down to 1x1 when `target`
    /// was broadcast in the forward pass.
    fn reduce_into(&self, adj: &mut [Option<Tensor<T>>], target: Var, g: Tensor<T>) {
        let shape = self.nodes[target.0].value.shape();
        if shape == g.shape() {
            accumulate(adj, target, g);
        } else {
            accumulate(adj, target, Tensor::scalar(g.sum()));
        }
    }
}

const LANES: usize = 8;

/// Dot product with a fixed lane split, so it vectorizes while keeping a
/// deterministic summation order.
fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    acc.iter().copied().sum::<T>() + tail
}

fn lane_sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let mut c = a.chunks_exact(LANES);
    for x in &mut c {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l];
        }
    }
    acc.iter().copied().sum::<T>() + c.remainder().iter().copied().sum::<T>()
}

fn accumulate<T: Scalar>(adj: &mut [Option<Tensor<T>>], target: Var, g: Tensor<T>) {
    match &mut adj[target.0] {
        Some(acc) => acc.axpy(T::one(), &g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<T: Scalar>(g: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T, T) -> T) -> Tensor<T> {
    let data = g
        .as_slice()
        .iter()
        .zip(a.as_slice())
        .zip(b.as_slice())
        .map(|((&gv, &av), &bv)| f(gv, av, bv))
        .collect();
    Tensor::from_vec(g.rows(), g.cols(), data)
}

/// `g * other`, where `other` is either congruent to `g` or a 1x1 scalar.
fn times_broadcast<T: Scalar>(g: &Tensor<T>, other: &Tensor<T>) -> Tensor<T> {
    if other.shape() == g.shape() {
        zip_map(g, other, other, |gv, o, _| gv * o)
    } else {
        let s = other.as_slice()[0];
        g.map(|gv| gv * s)
    }
}

/// Builds a loss program on a fresh tape and returns `(loss, gradient)`.
pub fn grad_scalar<T, F>(params: &[T], program: F) -> Result<(T, Vec<T>), NnError>
where
    T: Scalar,
    F: FnOnce(&mut Tape<'_, T>) -> Var,
{
    let mut tape = Tape::new(params);
    let loss = program(&mut tape);
    let grad = tape.backward(loss)?;
    let value = tape.value(loss).as_slice()[0];
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(params: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut p = params.to_vec();
        (0..p.len())
            .map(|i| {
                let orig = p[i];
                p[i] = orig + h;
                let up = f(&p);
                p[i] = orig - h;
                let down = f(&p);
                p[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn square_of_parameter() {
        let (loss, g) = grad_scalar(&[3.0_f64], |t| {
            let p = t.param(0, 1, 1);
            t.square(p)
        })
        .unwrap();
        assert_eq!(loss, 9.0);
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (_, g) = grad_scalar(&[1.0_f64, -2.0], |t| t.constant_scalar(4.0)).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let params = [1.0_f64, 2.0];
        let mut tape = Tape::new(&params);
        let p = tape.param(0, 1, 2);
        assert!(matches!(
            tape.backward(p),
            Err(NnError::NonScalarLoss { rows: 1, cols: 2 })
        ));
    }

    // Every primitive in one program, checked against central differences.
    fn program(t: &mut Tape<'_, f64>) -> Var {
        let x = t.constant(Tensor::from_vec(2, 3, vec![0.3, -1.2, 0.7, 1.1, -0.4, 0.2]));
        let h = t.affine(x, 0, 4, 2);
        let h = t.elu(h);
        let r = t.relu(h);
        let s = t.param(6, 1, 1);
        let prod = t.mul(r, s);
        let sum = t.add(prod, h);
        let shifted = t.add_scalar(sum, 0.25);
        let col = t.sum_rows(shifted);
        let theta = t.param(7, 1, 1);
        let wide = t.broadcast(theta, 3);
        let diff = t.sub(col, wide);
        let scaled = t.scale(diff, 1.5);
        let sq = t.square(scaled);
        let dw = Tensor::from_vec(2, 3, vec![0.1, 0.2, -0.3, 0.05, -0.15, 0.4]);
        let value: Vec<f64> = (0..3)
            .map(|c| {
                let y = t.value(sq).get(0, c);
                let pi = t.value(h).row(0)[c] + t.value(h).row(1)[c];
                y * y + pi * (dw.get(0, c) + dw.get(1, c))
            })
            .collect();
        let mut dy = Tensor::zeros(1, 3);
        let mut dpi = Tensor::zeros(2, 3);
        for c in 0..3 {
            dy.set(0, c, 2.0 * t.value(sq).get(0, c));
            let coeff = dw.get(0, c) + dw.get(1, c);
            dpi.set(0, c, coeff);
            dpi.set(1, c, coeff);
        }
        let custom = t.columnwise(vec![sq, h], Tensor::row_vector(value), vec![dy, dpi]);
        t.mean(custom)
    }

    #[test]
    fn primitives_match_central_differences() {
        let params = vec![0.4, -0.3, 0.8, 0.5, 0.1, -0.2, 0.9, 0.35];
        let (_, grad) = grad_scalar(&params, program).unwrap();
        let fd = central_diff(&params, 1e-6, |p| {
            let mut t = Tape::new(p);
            let l = program(&mut t);
            t.value(l).as_slice()[0]
        });
        for (i, (a, b)) in grad.iter().zip(&fd).enumerate() {
            let rel = (a - b).abs() / b.abs().max(1e-8);
            assert!(rel < 1e-6, "param {i}: reverse {a} vs fd {b}");
        }
    }
}
