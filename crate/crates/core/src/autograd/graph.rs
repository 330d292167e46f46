use std::cell::RefCell;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;

/// Handle to a value on a [`Graph`]. Cloning is cheap (the value is shared).
///
/// A `Var` without a node id is a constant: gradients never flow into it.
#[derive(Clone)]
pub struct Var {
    id: Option<usize>,
    value: Rc<Tensor>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var {
        Var {
            id: None,
            value: Rc::clone(&self.value),
        }
    }
}

enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar,
    Exp,
    Tanh,
    Sigmoid,
    Relu,
    Sum,
    Dot,
    Conv(ConvGeom),
    Depthwise(ConvGeom),
    UpConv,
    MaxPool(Vec<usize>),
    Concat,
    SliceChannels(usize),
    SliceDepth(usize),
    StackDepth,
    SoftmaxChannels,
    ChannelScale(Vec<f64>),
}

struct Node {
    op: Op,
    inputs: Vec<Var>,
    out: Rc<Tensor>,
}

/// Reverse-mode tape. With recording off every op is evaluated eagerly and
/// nothing is retained beyond the live `Var`s.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    record: bool,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        v.id.and_then(|i| self.grads[i].as_ref())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            record: true,
        }
    }

    pub fn no_grad() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, t: Tensor) -> Var {
        if !self.record {
            return Self::constant(t);
        }
        let out = Rc::new(t);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            out: Rc::clone(&out),
        });
        Var {
            id: Some(nodes.len() - 1),
            value: out,
        }
    }

    pub fn constant(t: Tensor) -> Var {
        Var {
            id: None,
            value: Rc::new(t),
        }
    }

    fn push(&self, op: Op, inputs: Vec<Var>, out: Tensor) -> Var {
        let out = Rc::new(out);
        if !self.record || inputs.iter().all(|v| v.id.is_none()) {
            return Var { id: None, value: out };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            inputs,
            out: Rc::clone(&out),
        });
        Var {
            id: Some(nodes.len() - 1),
            value: out,
        }
    }

    fn zip(a: &Var, b: &Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
        let data = a.value.data().iter().zip(b.value.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(a.shape(), data)
    }

    pub fn add(&self, a: &Var, b: &Var) -> Var {
        let out = Self::zip(a, b, |x, y| x + y);
        self.push(Op::Add, vec![a.clone(), b.clone()], out)
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Var {
        let out = Self::zip(a, b, |x, y| x - y);
        self.push(Op::Sub, vec![a.clone(), b.clone()], out)
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Var {
        let out = Self::zip(a, b, |x, y| x * y);
        self.push(Op::Mul, vec![a.clone(), b.clone()], out)
    }

    pub fn div(&self, a: &Var, b: &Var) -> Var {
        let out = Self::zip(a, b, |x, y| x / y);
        self.push(Op::Div, vec![a.clone(), b.clone()], out)
    }

    pub fn scale(&self, a: &Var, c: f64) -> Var {
        self.push(Op::Scale(c), vec![a.clone()], a.value.map(|v| v * c))
    }

    pub fn add_scalar(&self, a: &Var, c: f64) -> Var {
        self.push(Op::AddScalar, vec![a.clone()], a.value.map(|v| v + c))
    }

    pub fn exp(&self, a: &Var) -> Var {
        self.push(Op::Exp, vec![a.clone()], a.value.map(f64::exp))
    }

    pub fn tanh(&self, a: &Var) -> Var {
        self.push(Op::Tanh, vec![a.clone()], a.value.map(f64::tanh))
    }

    pub fn sigmoid(&self, a: &Var) -> Var {
        self.push(Op::Sigmoid, vec![a.clone()], a.value.map(sigmoid))
    }

    pub fn relu(&self, a: &Var) -> Var {
        self.push(Op::Relu, vec![a.clone()], a.value.map(|v| v.max(0.0)))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self, a: &Var) -> Var {
        self.push(Op::Sum, vec![a.clone()], Tensor::scalar(a.value.sum()))
    }

    /// Inner product of two equally shaped tensors, as a `[1]` tensor.
    pub fn dot(&self, a: &Var, b: &Var) -> Var {
        assert_eq!(a.shape(), b.shape(), "dot shape mismatch");
        let s = a.value.data().iter().zip(b.value.data()).map(|(x, y)| x * y).sum();
        self.push(Op::Dot, vec![a.clone(), b.clone()], Tensor::scalar(s))
    }

    pub fn conv(&self, x: &Var, w: &Var, b: Option<&Var>, geom: ConvGeom) -> Var {
        let out = kernels::conv3d(x.value(), w.value(), b.map(|b| b.value()), &geom);
        let mut inputs = vec![x.clone(), w.clone()];
        inputs.extend(b.cloned());
        self.push(Op::Conv(geom), inputs, out)
    }

    pub fn depthwise(&self, x: &Var, w: &Var, b: Option<&Var>, geom: ConvGeom) -> Var {
        let out = kernels::depthwise3d(x.value(), w.value(), b.map(|b| b.value()), &geom);
        let mut inputs = vec![x.clone(), w.clone()];
        inputs.extend(b.cloned());
        self.push(Op::Depthwise(geom), inputs, out)
    }

    pub fn upconv(&self, x: &Var, w: &Var, b: Option<&Var>) -> Var {
        let out = kernels::upconv2x(x.value(), w.value(), b.map(|b| b.value()));
        let mut inputs = vec![x.clone(), w.clone()];
        inputs.extend(b.cloned());
        self.push(Op::UpConv, inputs, out)
    }

    pub fn maxpool(&self, x: &Var) -> Var {
        let (out, arg) = kernels::maxpool_hw(x.value());
        self.push(Op::MaxPool(arg), vec![x.clone()], out)
    }

    /// Concatenation along the channel axis (axis 0).
    pub fn concat(&self, parts: &[&Var]) -> Var {
        let rest = &parts[0].shape()[1..];
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            assert_eq!(&p.shape()[1..], rest, "concat trailing dims");
            channels += p.shape()[0];
            data.extend_from_slice(p.value.data());
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(rest);
        let out = Tensor::from_vec(&shape, data);
        self.push(Op::Concat, parts.iter().map(|&v| v.clone()).collect(), out)
    }

    pub fn slice_channels(&self, x: &Var, start: usize, len: usize) -> Var {
        let s = x.shape();
        let per: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = len;
        let out = Tensor::from_vec(&shape, x.value.data()[start * per..(start + len) * per].to_vec());
        self.push(Op::SliceChannels(start), vec![x.clone()], out)
    }

    /// One depth plane of a `[C, D, H, W]` tensor, kept as `[C, 1, H, W]`.
    pub fn slice_depth(&self, x: &Var, d: usize) -> Var {
        let [c, depth, h, w] = x.value.dims4();
        let plane = h * w;
        let mut data = Vec::with_capacity(c * plane);
        for ch in 0..c {
            data.extend_from_slice(&x.value.data()[(ch * depth + d) * plane..][..plane]);
        }
        self.push(Op::SliceDepth(d), vec![x.clone()], Tensor::from_vec(&[c, 1, h, w], data))
    }

    /// Inverse of [`Graph::slice_depth`]: stacks `[C, 1, H, W]` planes along depth.
    pub fn stack_depth(&self, planes: &[Var]) -> Var {
        let [c, _, h, w] = planes[0].value.dims4();
        let depth = planes.len();
        let plane = h * w;
        let mut data = vec![0.0; c * depth * plane];
        for (d, p) in planes.iter().enumerate() {
            assert_eq!(p.shape(), &[c, 1, h, w], "stack_depth plane shape");
            for ch in 0..c {
                data[(ch * depth + d) * plane..][..plane]
                    .copy_from_slice(&p.value.data()[ch * plane..][..plane]);
            }
        }
        self.push(Op::StackDepth, planes.to_vec(), Tensor::from_vec(&[c, depth, h, w], data))
    }

    /// Softmax across the channel axis at every voxel.
    pub fn softmax_channels(&self, x: &Var) -> Var {
        let s = x.shape();
        let c = s[0];
        let per: usize = s[1..].iter().product();
        let xd = x.value.data();
        let mut out = vec![0.0; xd.len()];
        for i in 0..per {
            let m = (0..c).map(|ch| xd[ch * per + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for ch in 0..c {
                let e = (xd[ch * per + i] - m).exp();
                out[ch * per + i] = e;
                z += e;
            }
            for ch in 0..c {
                out[ch * per + i] /= z;
            }
        }
        self.push(Op::SoftmaxChannels, vec![x.clone()], Tensor::from_vec(s, out))
    }

    /// Multiplies every channel by a constant factor (used for spatial dropout).
    pub fn channel_scale(&self, x: &Var, factors: Vec<f64>) -> Var {
        let s = x.shape();
        assert_eq!(factors.len(), s[0]);
        let per: usize = s[1..].iter().product();
        let data = x
            .value
            .data()
            .chunks(per)
            .zip(&factors)
            .flat_map(|(row, &f)| row.iter().map(move |v| v * f))
            .collect();
        let out = Tensor::from_vec(s, data);
        self.push(Op::ChannelScale(factors), vec![x.clone()], out)
    }

    /// Gradients of the one-element `root` with respect to every recorded node.
    pub fn backward(&self, root: &Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root_id) = root.id else {
            return Gradients { grads };
        };
        assert_eq!(root.value.len(), 1, "backward root must be a scalar");
        grads[root_id] = Some(Tensor::full(root.shape(), 1.0));
        for id in (0..=root_id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let input_grads = local_grads(node, &g);
            for (inp, ig) in node.inputs.iter().zip(input_grads) {
                if let (Some(iid), Some(ig)) = (inp.id, ig) {
                    match &mut grads[iid] {
                        Some(acc) => acc.add_assign(&ig),
                        slot => *slot = Some(ig),
                    }
                }
            }
        }
        Gradients { grads }
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn elementwise(g: &Tensor, a: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(a.data()).map(|(&gv, &av)| f(gv, av)).collect();
    Tensor::from_vec(g.shape(), data)
}

fn local_grads(node: &Node, g: &Tensor) -> Vec<Option<Tensor>> {
    let inp = &node.inputs;
    let need = |i: usize| inp[i].requires_grad();
    let val = |i: usize| inp[i].value();
    let out = &*node.out;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![need(0).then(|| g.clone()), need(1).then(|| g.clone())],
        Op::Sub => vec![need(0).then(|| g.clone()), need(1).then(|| g.map(|v| -v))],
        Op::Mul => vec![
            need(0).then(|| elementwise(g, val(1), |gv, b| gv * b)),
            need(1).then(|| elementwise(g, val(0), |gv, a| gv * a)),
        ],
        Op::Div => {
            let b = val(1);
            let ga = need(0).then(|| elementwise(g, b, |gv, bv| gv / bv));
            let gb = need(1).then(|| {
                let q = elementwise(out, b, |o, bv| o / bv);
                elementwise(g, &q, |gv, qv| -gv * qv)
            });
            vec![ga, gb]
        }
        Op::Scale(c) => vec![Some(g.map(|v| v * c))],
        Op::AddScalar => vec![Some(g.clone())],
        Op::Exp => vec![Some(elementwise(g, out, |gv, o| gv * o))],
        Op::Tanh => vec![Some(elementwise(g, out, |gv, o| gv * (1.0 - o * o)))],
        Op::Sigmoid => vec![Some(elementwise(g, out, |gv, o| gv * o * (1.0 - o)))],
        Op::Relu => vec![Some(elementwise(g, out, |gv, o| if o > 0.0 { gv } else { 0.0 }))],
        Op::Sum => vec![Some(Tensor::full(val(0).shape(), g.item()))],
        Op::Dot => {
            let s = g.item();
            vec![
                need(0).then(|| val(1).map(|v| v * s)),
                need(1).then(|| val(0).map(|v| v * s)),
            ]
        }
        Op::Conv(geom) => {
            let (gx, gw, gb) =
                kernels::conv3d_backward(val(0), val(1), geom, g, need(0), need(1));
            let mut r = vec![gx, gw];
            if inp.len() == 3 {
                r.push(Some(gb));
            }
            r
        }
        Op::Depthwise(geom) => {
            let (gx, gw, gb) =
                kernels::depthwise3d_backward(val(0), val(1), geom, g, need(0), need(1));
            let mut r = vec![gx, gw];
            if inp.len() == 3 {
                r.push(Some(gb));
            }
            r
        }
        Op::UpConv => {
            let (gx, gw, gb) = kernels::upconv2x_backward(val(0), val(1), g, need(0), need(1));
            let mut r = vec![gx, gw];
            if inp.len() == 3 {
                r.push(Some(gb));
            }
            r
        }
        Op::MaxPool(arg) => {
            let mut gx = Tensor::zeros(val(0).shape());
            let d = gx.data_mut();
            for (&i, &gv) in arg.iter().zip(g.data()) {
                d[i] += gv;
            }
            vec![Some(gx)]
        }
        Op::Concat => {
            let mut offset = 0;
            inp.iter()
                .map(|p| {
                    let n = p.value().len();
                    let piece = p
                        .requires_grad()
                        .then(|| Tensor::from_vec(p.shape(), g.data()[offset..offset + n].to_vec()));
                    offset += n;
                    piece
                })
                .collect()
        }
        Op::SliceChannels(start) => {
            let x = val(0);
            let per: usize = x.shape()[1..].iter().product();
            let mut gx = Tensor::zeros(x.shape());
            gx.data_mut()[start * per..start * per + g.len()].copy_from_slice(g.data());
            vec![Some(gx)]
        }
        Op::SliceDepth(d) => {
            let [c, depth, h, w] = val(0).dims4();
            let plane = h * w;
            let mut gx = Tensor::zeros(&[c, depth, h, w]);
            for ch in 0..c {
                gx.data_mut()[(ch * depth + d) * plane..][..plane]
                    .copy_from_slice(&g.data()[ch * plane..][..plane]);
            }
            vec![Some(gx)]
        }
        Op::StackDepth => {
            let [c, depth, h, w] = g.dims4();
            let plane = h * w;
            (0..depth)
                .map(|d| {
                    inp[d].requires_grad().then(|| {
                        let mut data = Vec::with_capacity(c * plane);
                        for ch in 0..c {
                            data.extend_from_slice(&g.data()[(ch * depth + d) * plane..][..plane]);
                        }
                        Tensor::from_vec(&[c, 1, h, w], data)
                    })
                })
                .collect()
        }
        Op::SoftmaxChannels => {
            let c = out.shape()[0];
            let per = out.len() / c;
            let (od, gd) = (out.data(), g.data());
            let mut gx = vec![0.0; od.len()];
            for i in 0..per {
                let dotp: f64 = (0..c).map(|ch| gd[ch * per + i] * od[ch * per + i]).sum();
                for ch in 0..c {
                    let k = ch * per + i;
                    gx[k] = od[k] * (gd[k] - dotp);
                }
            }
            vec![Some(Tensor::from_vec(out.shape(), gx))]
        }
        Op::ChannelScale(f) => {
            let per = g.len() / f.len();
            let data = g
                .data()
                .chunks(per)
                .zip(f)
                .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
                .collect();
            vec![Some(Tensor::from_vec(g.shape(), data))]
        }
    }
}
