//! A small reverse-mode automatic differentiation tape.
//!
//! Every operation appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients. Only the operations the
//! codec needs are provided.

use crate::conv::{self, Window};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv { x: Var, w: Var, b: Var, win: Window },
    ConvT { x: Var, w: Var, b: Var, win: Window },
    LeakyRelu { x: Var, slope: F },
    Add(Var, Var),
    Sub(Var, Var),
    /// `x + c` with a constant tensor (noise, offsets); identity Jacobian.
    AddConst(Var),
    Scale { x: Var, c: F },
    Abs(Var),
    Softplus(Var),
    ClampMin { x: Var, min: F },
    /// `[N, ...] → [1, ...]` mean over the leading (frame) axis.
    MeanLead(Var),
    /// `[N, ...] → [1, ...]` population standard deviation, `sqrt(var + eps)`.
    StdLead { x: Var },
    /// `[N, ...] - [1, ...]` broadcast over the leading axis.
    SubRow { x: Var, row: Var },
    /// `[N, ...] + [1, ...]` broadcast over the leading axis.
    AddRow { x: Var, row: Var },
    ConcatChannels(Var, Var),
    ConcatLead(Vec<Var>),
    SliceLead { x: Var, start: usize },
    /// Per-element bit cost of a zero-mean Gaussian convolved with a unit box.
    Bits { w: Var, sigma: Var, floor: f64 },
    Sum(Var),
    /// Mean squared error against a constant target.
    Mse { x: Var, target: Vec<F> },
    /// Root mean square of all elements, `[1]`.
    Rms(Var),
    /// `x * s` (or `x / s`) for a `[1]`-shaped node `s`.
    MulScalar { x: Var, s: Var, divide: bool },
}

struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
}

/// Gradients indexed by [`Var`].
pub struct Grads<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Upper-tail probability `1 - Φ(x)`.
fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Probability mass of `N(0, sigma²)` on `[w - 1/2, w + 1/2]`, without flooring.
///
/// Evaluated through the upper tail on `|w|` so that far-tail masses keep
/// their relative precision.
pub fn gaussian_bin_mass(w: f64, sigma: f64) -> f64 {
    let a = w.abs();
    std_normal_sf((a - 0.5) / sigma) - std_normal_sf((a + 0.5) / sigma)
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, win: Window) -> Var {
        let out = conv::conv2d_forward(self.value(x), self.value(w), self.value(b), win);
        self.push(Op::Conv { x, w, b, win }, out)
    }

    pub fn conv_t2d(&mut self, x: Var, w: Var, b: Var, win: Window, out_pad: usize) -> Var {
        let out = conv::conv_t2d_forward(self.value(x), self.value(w), self.value(b), win, out_pad);
        self.push(Op::ConvT { x, w, b, win }, out)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = F::from_f64(slope);
        let out = self.value(x).map(|v| if v > F::zero() { v } else { v * slope });
        self.push(Op::LeakyRelu { x, slope }, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::from_vec(self.shape(a), data);
        self.push(Op::Sub(a, b), out)
    }

    pub fn add_const(&mut self, x: Var, c: &Tensor<F>) -> Var {
        let mut out = self.value(x).clone();
        out.add_assign(c);
        self.push(Op::AddConst(x), out)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = F::from_f64(c);
        let out = self.value(x).map(|v| v * c);
        self.push(Op::Scale { x, c }, out)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let c = Tensor::full(self.shape(x), F::from_f64(c));
        self.add_const(x, &c)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(Op::Abs(x), out)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| {
            let v = v.to_f64();
            F::from_f64(v.max(0.0) + (-v.abs()).exp().ln_1p())
        });
        self.push(Op::Softplus(x), out)
    }

    pub fn clamp_min(&mut self, x: Var, min: f64) -> Var {
        let min = F::from_f64(min);
        let out = self.value(x).map(|v| v.max(min));
        self.push(Op::ClampMin { x, min }, out)
    }

    pub fn mean_lead(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.shape()[0];
        let per = t.len() / n;
        let mut shape = t.shape().to_vec();
        shape[0] = 1;
        let mut acc = vec![F::zero(); per];
        for i in 0..n {
            for (a, &v) in acc.iter_mut().zip(&t.data()[i * per..(i + 1) * per]) {
                *a += v;
            }
        }
        let inv = F::one() / F::from_f64(n as f64);
        acc.iter_mut().for_each(|a| *a *= inv);
        self.push(Op::MeanLead(x), Tensor::from_vec(&shape, acc))
    }

    pub fn std_lead(&mut self, x: Var, eps: f64) -> Var {
        let eps = F::from_f64(eps);
        let t = self.value(x);
        let n = t.shape()[0];
        let per = t.len() / n;
        let mut shape = t.shape().to_vec();
        shape[0] = 1;
        let nf = F::from_f64(n as f64);
        let mut out = vec![F::zero(); per];
        for (j, o) in out.iter_mut().enumerate() {
            let mean = (0..n).map(|i| t.data()[i * per + j]).sum::<F>() / nf;
            let var = (0..n).map(|i| (t.data()[i * per + j] - mean).powi(2)).sum::<F>() / nf;
            *o = (var + eps).sqrt();
        }
        self.push(Op::StdLead { x }, Tensor::from_vec(&shape, out))
    }

    fn row_broadcast(&self, x: Var, row: Var, sign: F) -> Tensor<F> {
        let t = self.value(x);
        let r = self.value(row);
        assert_eq!(&t.shape()[1..], &r.shape()[1..], "row broadcast: shape mismatch");
        assert_eq!(r.shape()[0], 1);
        let per = r.len();
        let mut out = t.clone();
        for chunk in out.data_mut().chunks_mut(per) {
            for (o, &v) in chunk.iter_mut().zip(r.data()) {
                *o += sign * v;
            }
        }
        out
    }

    pub fn sub_row(&mut self, x: Var, row: Var) -> Var {
        let out = self.row_broadcast(x, row, -F::one());
        self.push(Op::SubRow { x, row }, out)
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let out = self.row_broadcast(x, row, F::one());
        self.push(Op::AddRow { x, row }, out)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        assert!(sa[0] == sb[0] && sa[2..] == sb[2..], "concat_channels: shape mismatch");
        let n = sa[0];
        let (pa, pb) = (ta.len() / n, tb.len() / n);
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for i in 0..n {
            data.extend_from_slice(&ta.data()[i * pa..(i + 1) * pa]);
            data.extend_from_slice(&tb.data()[i * pb..(i + 1) * pb]);
        }
        let mut shape = sa.to_vec();
        shape[1] += sb[1];
        self.push(Op::ConcatChannels(a, b), Tensor::from_vec(&shape, data))
    }

    pub fn concat_lead(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<Tensor<F>> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let out = Tensor::stack(&tensors);
        self.push(Op::ConcatLead(parts.to_vec()), out)
    }

    pub fn slice_lead(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        let per = t.len() / t.shape()[0];
        let mut shape = t.shape().to_vec();
        assert!(start + len <= shape[0], "slice_lead out of range");
        shape[0] = len;
        let out = Tensor::from_vec(&shape, t.data()[start * per..(start + len) * per].to_vec());
        self.push(Op::SliceLead { x, start }, out)
    }

    /// `-log2(max(P(w; sigma), floor))` per element.
    pub fn bits(&mut self, w: Var, sigma: Var, floor: f64) -> Var {
        assert_eq!(self.shape(w), self.shape(sigma), "bits: shape mismatch");
        let data = self
            .value(w)
            .data()
            .iter()
            .zip(self.value(sigma).data())
            .map(|(&w, &s)| {
                let p = gaussian_bin_mass(w.to_f64(), s.to_f64()).max(floor);
                F::from_f64(-p.log2())
            })
            .collect();
        let out = Tensor::from_vec(self.shape(w), data);
        self.push(Op::Bits { w, sigma, floor }, out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<F>();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mse(&mut self, x: Var, target: &[F]) -> Var {
        let t = self.value(x);
        assert_eq!(t.len(), target.len(), "mse: length mismatch");
        let s = t.data().iter().zip(target).map(|(&a, &b)| (a - b) * (a - b)).sum::<F>()
            / F::from_f64(t.len() as f64);
        self.push(Op::Mse { x, target: target.to_vec() }, Tensor::scalar(s))
    }

    pub fn rms(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let ms = t.data().iter().map(|&v| v * v).sum::<F>() / F::from_f64(t.len() as f64);
        self.push(Op::Rms(x), Tensor::scalar(ms.sqrt()))
    }

    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        let k = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * k);
        self.push(Op::MulScalar { x, s, divide: false }, out)
    }

    pub fn div_scalar(&mut self, x: Var, s: Var) -> Var {
        let k = self.value(s).data()[0];
        let out = self.value(x).map(|v| v / k);
        self.push(Op::MulScalar { x, s, divide: true }, out)
    }

    /// Reverse pass from a `[1]`-shaped output.
    pub fn backward(&self, output: Var) -> Grads<F> {
        assert_eq!(self.value(output).len(), 1, "backward expects a scalar output");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(F::one()));

        fn acc<F: Scalar>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b, win } => {
                    let (dx, dw, db) = conv::conv2d_backward(self.value(*x), self.value(*w), &g, *win);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::ConvT { x, w, b, win } => {
                    let (dx, dw, db) = conv::conv_t2d_backward(self.value(*x), self.value(*w), &g, *win);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x);
                    let data = g.data().iter().zip(xv.data()).map(|(&gi, &xi)| if xi > F::zero() { gi } else { gi * *slope }).collect();
                    acc(&mut grads, *x, Tensor::from_vec(g.shape(), data));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::AddConst(x) => acc(&mut grads, *x, g),
                Op::Scale { x, c } => acc(&mut grads, *x, g.map(|v| v * *c)),
                Op::Abs(x) => {
                    let xv = self.value(*x);
                    let data = g.data().iter().zip(xv.data()).map(|(&gi, &xi)| gi * xi.signum()).collect();
                    acc(&mut grads, *x, Tensor::from_vec(g.shape(), data));
                }
                Op::Softplus(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gi, &xi)| gi * F::from_f64(1.0 / (1.0 + (-xi.to_f64()).exp())))
                        .collect();
                    acc(&mut grads, *x, Tensor::from_vec(g.shape(), data));
                }
                Op::ClampMin { x, min } => {
                    let xv = self.value(*x);
                    let data = g.data().iter().zip(xv.data()).map(|(&gi, &xi)| if xi >= *min { gi } else { F::zero() }).collect();
                    acc(&mut grads, *x, Tensor::from_vec(g.shape(), data));
                }
                Op::MeanLead(x) => {
                    let shape = self.shape(*x).to_vec();
                    let n = shape[0];
                    let inv = F::one() / F::from_f64(n as f64);
                    let row: Vec<F> = g.data().iter().map(|&v| v * inv).collect();
                    let data = (0..n).flat_map(|_| row.iter().copied()).collect();
                    acc(&mut grads, *x, Tensor::from_vec(&shape, data));
                }
                Op::StdLead { x, .. } => {
                    let xv = self.value(*x);
                    let n = xv.shape()[0];
                    let per = xv.len() / n;
                    let nf = F::from_f64(n as f64);
                    let mut dx = Tensor::zeros(xv.shape());
                    for j in 0..per {
                        let mean = (0..n).map(|i| xv.data()[i * per + j]).sum::<F>() / nf;
                        let sd = node.value.data()[j];
                        let k = g.data()[j] / (nf * sd);
                        for i in 0..n {
                            dx.data_mut()[i * per + j] = k * (xv.data()[i * per + j] - mean);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SubRow { x, row } | Op::AddRow { x, row } => {
                    let sign = if matches!(node.op, Op::SubRow { .. }) { -F::one() } else { F::one() };
                    let per = self.value(*row).len();
                    let mut dr = vec![F::zero(); per];
                    for chunk in g.data().chunks(per) {
                        for (d, &v) in dr.iter_mut().zip(chunk) {
                            *d += sign * v;
                        }
                    }
                    acc(&mut grads, *row, Tensor::from_vec(self.shape(*row), dr));
                    acc(&mut grads, *x, g);
                }
                Op::ConcatChannels(a, b) => {
                    let (la, lb) = (self.value(*a).len(), self.value(*b).len());
                    let n = self.shape(*a)[0];
                    let (pa, pb) = (la / n, lb / n);
                    let mut da = Vec::with_capacity(la);
                    let mut db = Vec::with_capacity(lb);
                    for i in 0..n {
                        let base = i * (pa + pb);
                        da.extend_from_slice(&g.data()[base..base + pa]);
                        db.extend_from_slice(&g.data()[base + pa..base + pa + pb]);
                    }
                    acc(&mut grads, *a, Tensor::from_vec(self.shape(*a), da));
                    acc(&mut grads, *b, Tensor::from_vec(self.shape(*b), db));
                }
                Op::ConcatLead(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        let part = Tensor::from_vec(self.shape(p), g.data()[offset..offset + len].to_vec());
                        acc(&mut grads, p, part);
                        offset += len;
                    }
                }
                Op::SliceLead { x, start } => {
                    let shape = self.shape(*x).to_vec();
                    let per = self.value(*x).len() / shape[0];
                    let mut dx = Tensor::zeros(&shape);
                    dx.data_mut()[start * per..start * per + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *x, dx);
                }
                Op::Bits { w, sigma, floor } => {
                    let (wv, sv) = (self.value(*w), self.value(*sigma));
                    let mut dw = Vec::with_capacity(wv.len());
                    let mut ds = Vec::with_capacity(wv.len());
                    let inv_ln2 = std::f64::consts::LN_2.recip();
                    for ((&gi, &wi), &si) in g.data().iter().zip(wv.data()).zip(sv.data()) {
                        let (w, s) = (wi.to_f64(), si.to_f64());
                        let p = gaussian_bin_mass(w, s);
                        if p <= *floor {
                            dw.push(F::zero());
                            ds.push(F::zero());
                            continue;
                        }
                        let (u, l) = ((w + 0.5) / s, (w - 0.5) / s);
                        let (pu, pl) = (std_normal_pdf(u), std_normal_pdf(l));
                        let dbits_dp = -inv_ln2 / p;
                        let dp_dw = (pu - pl) / s;
                        let dp_ds = (-u * pu + l * pl) / s;
                        let gf = gi.to_f64();
                        dw.push(F::from_f64(gf * dbits_dp * dp_dw));
                        ds.push(F::from_f64(gf * dbits_dp * dp_ds));
                    }
                    acc(&mut grads, *w, Tensor::from_vec(wv.shape(), dw));
                    acc(&mut grads, *sigma, Tensor::from_vec(sv.shape(), ds));
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    acc(&mut grads, *x, Tensor::full(self.shape(*x), gv));
                }
                Op::Mse { x, target } => {
                    let xv = self.value(*x);
                    let k = g.data()[0] * F::from_f64(2.0 / xv.len() as f64);
                    let data = xv.data().iter().zip(target).map(|(&a, &b)| k * (a - b)).collect();
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), data));
                }
                Op::Rms(x) => {
                    let xv = self.value(*x);
                    let r = node.value.data()[0];
                    let k = g.data()[0] / (F::from_f64(xv.len() as f64) * r);
                    acc(&mut grads, *x, xv.map(|v| v * k));
                }
                Op::MulScalar { x, s, divide } => {
                    let xv = self.value(*x);
                    let k = self.value(*s).data()[0];
                    let dot = g.data().iter().zip(xv.data()).map(|(&a, &b)| a * b).sum::<F>();
                    if *divide {
                        acc(&mut grads, *s, Tensor::scalar(-dot / (k * k)));
                        acc(&mut grads, *x, g.map(|v| v / k));
                    } else {
                        acc(&mut grads, *s, Tensor::scalar(dot));
                        acc(&mut grads, *x, g.map(|v| v * k));
                    }
                }
            }
        }
        Grads { grads }
    }
}
