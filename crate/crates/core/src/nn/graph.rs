//! Tape-based reverse-mode differentiation over [`Tensor4`] values.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the reverse sweep in [`Graph::backward`] simply walks
//! the tape from the back.

use super::kernels::{self, ConvGeometry, NormCache, Padding};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geometry: ConvGeometry,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    InstanceNorm {
        x: Var,
        scale: Var,
        shift: Var,
        cache: NormCache,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    /// Scalar function of `x` whose local gradient was computed during the forward pass.
    ScalarFn {
        x: Var,
        local_grad: Tensor4,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a reverse sweep; indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor4>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor4> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor4, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant (non-trainable) leaf. Its gradient is still reported by
    /// [`Graph::backward`], which is what input-gradient checks rely on.
    pub fn input(&mut self, value: Tensor4) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value().clone(), Op::Param(id))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let bias = b.map(|b| self.value(b));
        let (out, geometry) =
            kernels::conv2d_forward(self.value(x), self.value(w), bias, stride, padding)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, geometry }))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2_forward(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }))
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let out = kernels::upsample2_forward(self.value(x));
        self.push(out, Op::Upsample2 { x })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, count)?;
        Ok(self.push(out, Op::SliceChannels { x, start }))
    }

    pub fn instance_norm(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let (out, cache) = kernels::instance_norm_forward(
            self.value(x),
            self.value(scale),
            self.value(shift),
            eps,
        )?;
        Ok(self.push(
            out,
            Op::InstanceNorm {
                x,
                scale,
                shift,
                cache,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::relu);
        self.push(out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        self.push(out, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::config(format!(
                "add needs equal shapes, got {} and {}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor4::from_vec(va.shape(), data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::config(format!(
                "mul needs equal shapes, got {} and {}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor4::from_vec(va.shape(), data)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor4::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor4::scalar(self.value(x).mean());
        self.push(out, Op::Mean { x })
    }

    /// Appends a scalar node `value = f(x)` with a precomputed `df/dx`.
    pub fn scalar_fn(&mut self, x: Var, value: f64, local_grad: Tensor4) -> Result<Var> {
        if local_grad.shape() != self.shape(x) {
            return Err(Error::harness(format!(
                "local gradient shape {} does not match operand {}",
                local_grad.shape(),
                self.shape(x)
            )));
        }
        Ok(self.push(Tensor4::scalar(value), Op::ScalarFn { x, local_grad }))
    }

    /// Reverse sweep seeded with ones at `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor4>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor4::full(self.shape(root), 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            // Leaves keep their gradient so callers can read it afterwards;
            // intermediate gradients are released as soon as they are consumed.
            if matches!(node.op, Op::Input | Op::Param(_)) {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            match &node.op {
                Op::Input | Op::Param(_) => unreachable!(),
                Op::Conv2d { x, w, b, geometry } => {
                    let (dx, dw, db) = kernels::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        geometry,
                        &dy,
                        b.is_some(),
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        let shape = self.shape(*b);
                        let db = db.reshape(shape).expect("bias numel checked at forward");
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let dx = kernels::maxpool2_backward(self.shape(*x), argmax, &dy);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample2 { x } => {
                    let dx = kernels::upsample2_backward(self.shape(*x), &dy);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat { a, b } => {
                    let ca = self.shape(*a).c;
                    let cb = self.shape(*b).c;
                    accumulate(&mut grads, *a, dy.slice_channels(0, ca).expect("in range"));
                    accumulate(&mut grads, *b, dy.slice_channels(ca, cb).expect("in range"));
                }
                Op::SliceChannels { x, start } => {
                    let xs = self.shape(*x);
                    let mut dx = Tensor4::zeros(xs);
                    let count = dy.shape().c;
                    for n in 0..xs.n {
                        for c in 0..count {
                            dx.plane_mut(n, start + c).copy_from_slice(dy.plane(n, c));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::InstanceNorm {
                    x,
                    scale,
                    shift,
                    cache,
                } => {
                    let (dx, dscale, dshift) =
                        kernels::instance_norm_backward(cache, self.value(*scale), &dy);
                    accumulate(&mut grads, *x, dx);
                    let s = self.shape(*scale);
                    accumulate(&mut grads, *scale, dscale.reshape(s).expect("same numel"));
                    let s = self.shape(*shift);
                    accumulate(&mut grads, *shift, dshift.reshape(s).expect("same numel"));
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut dx = dy;
                    for (g, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let mut dx = dy;
                    for (g, &s) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *g *= s * (1.0 - s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::Mul { a, b } => {
                    let mut da = dy.clone();
                    for (g, &v) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *g *= v;
                    }
                    let mut db = dy;
                    for (g, &v) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *g *= v;
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale { x, factor } => {
                    let dx = dy.map(|g| g * factor);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum { x } => {
                    let g = dy.item();
                    accumulate(&mut grads, *x, Tensor4::full(self.shape(*x), g));
                }
                Op::Mean { x } => {
                    let s = self.shape(*x);
                    let g = dy.item() / s.numel() as f64;
                    accumulate(&mut grads, *x, Tensor4::full(s, g));
                }
                Op::ScalarFn { x, local_grad } => {
                    let g = dy.item();
                    accumulate(&mut grads, *x, local_grad.map(|v| v * g));
                }
            }
        }
        Gradients { grads }
    }

    /// Adds parameter gradients from `grads` into the matching store entries.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = &grads.grads[i] {
                    store.get_mut(id).accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor4>], v: Var, g: Tensor4) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
