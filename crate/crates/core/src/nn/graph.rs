//! Layer graphs: a topologically ordered node list evaluated by a small
//! interpreter, with reverse-mode gradients and forward-mode tangents.

use super::ops::{self, Activation, ConvShape};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Named tensor in a parameter table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter values aligned with a layer table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<Vec<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn zeros(specs: Vec<ParamSpec>) -> Self {
        let values = specs.iter().map(|s| vec![T::zero(); s.len()]).collect();
        ParamSet { specs, values }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet::zeros(self.specs.clone())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.index_of(name).map(|k| self.values[k].as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<T>> {
        self.index_of(name).map(|k| &mut self.values[k])
    }

    pub fn trainable_count(&self) -> usize {
        self.specs.iter().filter(|s| s.trainable).map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    /// `self += alpha · other` over every tensor.
    pub fn axpy(&mut self, alpha: T, other: &ParamSet<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            specs: self.specs.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| U::of(x.as_f64())).collect())
                .collect(),
        }
    }

    /// Errors unless `other` has exactly this table (names, shapes, order).
    pub fn check_layout(&self, specs: &[ParamSpec]) -> Result<()> {
        if self.specs.len() != specs.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.specs.len()
            )));
        }
        for (have, want) in self.specs.iter().zip(specs) {
            if have.name != want.name {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "unknown tensor name `{}` (expected `{}`)",
                    have.name, want.name
                )));
            }
            if have.shape != want.shape {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    have.name, have.shape, want.shape
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv {
        shape: ConvShape,
        weight: usize,
        bias: usize,
        act: Activation,
    },
    MaxPool2,
    Upsample2,
    /// Channel concatenation of the node's two inputs, in order.
    Concat,
    GlobalAvgPool,
    Dense {
        in_features: usize,
        out_features: usize,
        weight: usize,
        bias: usize,
        act: Activation,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub tag: String,
    pub op: Op,
    pub inputs: Vec<usize>,
}

/// A network: parameter table plus evaluation order. Node 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub specs: Vec<ParamSpec>,
    pub nodes: Vec<Node>,
}

/// Node outputs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub values: Vec<Tensor<T>>,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.values.last().expect("graph has nodes")
    }
}

/// Incremental builder used by the network definitions.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    specs: Vec<ParamSpec>,
    nodes: Vec<Node>,
    channels: Vec<usize>,
}

impl GraphBuilder {
    pub fn new(input_channels: usize) -> Self {
        GraphBuilder {
            specs: Vec::new(),
            nodes: vec![Node {
                tag: "input".into(),
                op: Op::Input,
                inputs: vec![],
            }],
            channels: vec![input_channels],
        }
    }

    pub fn last(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn channels(&self, node: usize) -> usize {
        self.channels[node]
    }

    fn push(&mut self, tag: &str, op: Op, inputs: Vec<usize>, channels: usize) -> usize {
        self.nodes.push(Node {
            tag: tag.into(),
            op,
            inputs,
        });
        self.channels.push(channels);
        self.last()
    }

    fn param(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.specs.push(ParamSpec {
            name,
            shape,
            trainable: true,
        });
        self.specs.len() - 1
    }

    pub fn conv(
        &mut self,
        tag: &str,
        from: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        act: Activation,
    ) -> usize {
        let c_in = self.channels[from];
        let weight = self.param(format!("{tag}.weight"), vec![c_out, c_in, kernel, kernel]);
        let bias = self.param(format!("{tag}.bias"), vec![c_out]);
        let shape = ConvShape {
            c_in,
            c_out,
            kernel,
            stride,
        };
        self.push(
            tag,
            Op::Conv {
                shape,
                weight,
                bias,
                act,
            },
            vec![from],
            c_out,
        )
    }

    pub fn maxpool(&mut self, tag: &str, from: usize) -> usize {
        let c = self.channels[from];
        self.push(tag, Op::MaxPool2, vec![from], c)
    }

    pub fn upsample(&mut self, tag: &str, from: usize) -> usize {
        let c = self.channels[from];
        self.push(tag, Op::Upsample2, vec![from], c)
    }

    pub fn concat(&mut self, tag: &str, a: usize, b: usize) -> usize {
        let c = self.channels[a] + self.channels[b];
        self.push(tag, Op::Concat, vec![a, b], c)
    }

    pub fn global_avg_pool(&mut self, tag: &str, from: usize) -> usize {
        let c = self.channels[from];
        self.push(tag, Op::GlobalAvgPool, vec![from], c)
    }

    pub fn dense(&mut self, tag: &str, from: usize, out_features: usize, act: Activation) -> usize {
        let in_features = self.channels[from];
        let weight = self.param(format!("{tag}.weight"), vec![out_features, in_features]);
        let bias = self.param(format!("{tag}.bias"), vec![out_features]);
        self.push(
            tag,
            Op::Dense {
                in_features,
                out_features,
                weight,
                bias,
                act,
            },
            vec![from],
            out_features,
        )
    }

    pub fn finish(self) -> Graph {
        Graph {
            specs: self.specs,
            nodes: self.nodes,
        }
    }
}

impl Graph {
    pub fn node_index(&self, tag: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.tag == tag)
            .ok_or_else(|| Error::Lookup {
                tag: tag.into(),
                valid: self.tags(),
            })
    }

    pub fn tags(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.tag.clone()).collect()
    }

    /// Per-node output shape `[c, h, w]` for an input of `[c, h, w]`.
    pub fn infer_shapes(&self, input: [usize; 3]) -> Vec<[usize; 3]> {
        let mut out: Vec<[usize; 3]> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let s = match &node.op {
                Op::Input => input,
                Op::Conv { shape, .. } => {
                    let [_, h, w] = out[node.inputs[0]];
                    let (ho, wo) = shape.out_dims(h, w);
                    [shape.c_out, ho, wo]
                }
                Op::MaxPool2 => {
                    let [c, h, w] = out[node.inputs[0]];
                    [c, h / 2, w / 2]
                }
                Op::Upsample2 => {
                    let [c, h, w] = out[node.inputs[0]];
                    [c, 2 * h, 2 * w]
                }
                Op::Concat => {
                    let [a, h, w] = out[node.inputs[0]];
                    [a + out[node.inputs[1]][0], h, w]
                }
                Op::GlobalAvgPool => [out[node.inputs[0]][0], 1, 1],
                Op::Dense { out_features, .. } => [*out_features, 1, 1],
            };
            out.push(s);
        }
        out
    }

    fn eval_node<T: Real>(
        &self,
        node: &Node,
        params: &ParamSet<T>,
        inputs: &[&Tensor<T>],
    ) -> Tensor<T> {
        match &node.op {
            Op::Input => unreachable!("input is supplied"),
            Op::Conv {
                shape,
                weight,
                bias,
                act,
            } => {
                let mut z = ops::conv2d_forward(
                    inputs[0],
                    shape,
                    &params.values[*weight],
                    Some(&params.values[*bias]),
                );
                if *act != Activation::Linear {
                    z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
                }
                z
            }
            Op::MaxPool2 => ops::maxpool2_forward(inputs[0]),
            Op::Upsample2 => ops::upsample2_forward(inputs[0]),
            Op::Concat => ops::concat_forward(inputs[0], inputs[1]),
            Op::GlobalAvgPool => ops::global_avg_pool_forward(inputs[0]),
            Op::Dense {
                out_features,
                weight,
                bias,
                act,
                ..
            } => {
                let mut z = ops::dense_forward(
                    inputs[0],
                    &params.values[*weight],
                    Some(&params.values[*bias]),
                    *out_features,
                );
                z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
                z
            }
        }
    }

    pub fn forward<T: Real>(&self, params: &ParamSet<T>, input: Tensor<T>) -> Tape<T> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        values.push(input);
        for node in &self.nodes[1..] {
            let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &values[i]).collect();
            let out = self.eval_node(node, params, &ins);
            values.push(out);
        }
        Tape { values }
    }

    /// Forward pass that frees each intermediate after its last use. Returns
    /// the output and, if requested, a copy of node `keep`.
    pub fn forward_lean<T: Real>(
        &self,
        params: &ParamSet<T>,
        input: Tensor<T>,
        keep: Option<usize>,
    ) -> (Tensor<T>, Option<Tensor<T>>) {
        let n = self.nodes.len();
        let mut last_use = vec![0usize; n];
        for (k, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                last_use[i] = k;
            }
        }
        let mut values: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut kept = None;
        values[0] = Some(input);
        if keep == Some(0) {
            kept = values[0].clone();
        }
        for k in 1..n {
            let node = &self.nodes[k];
            let out = {
                let ins: Vec<&Tensor<T>> = node
                    .inputs
                    .iter()
                    .map(|&i| values[i].as_ref().expect("input still live"))
                    .collect();
                self.eval_node(node, params, &ins)
            };
            if keep == Some(k) {
                kept = Some(out.clone());
            }
            values[k] = Some(out);
            for &i in &node.inputs {
                if last_use[i] == k {
                    values[i] = None;
                }
            }
        }
        (values[n - 1].take().expect("output computed"), kept)
    }

    /// Reverse pass from `grad_out` at the output node.
    ///
    /// Weight gradients pair the upstream gradient with `weight_values`
    /// (defaults to the tape); activation slopes and max-pool routing always
    /// come from the tape. Passing tangent values with `bias_grads = false`
    /// differentiates a tangent output with respect to the parameters.
    /// Gradients accumulate into `grads`; returns the input gradient if
    /// requested.
    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        tape: &Tape<T>,
        weight_values: Option<&[Tensor<T>]>,
        grad_out: Tensor<T>,
        grads: &mut ParamSet<T>,
        bias_grads: bool,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let values = weight_values.unwrap_or(&tape.values);
        let n = self.nodes.len();
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; n];
        pending[n - 1] = Some(grad_out);
        for k in (1..n).rev() {
            let Some(mut g) = pending[k].take() else {
                continue;
            };
            let node = &self.nodes[k];
            let need_input = |i: usize| i != 0 || want_input;
            let route = |i: usize, t: Tensor<T>, pending: &mut Vec<Option<Tensor<T>>>| {
                match pending[i].as_mut() {
                    Some(acc) => acc.add_assign(&t),
                    None => pending[i] = Some(t),
                }
            };
            match &node.op {
                Op::Input => unreachable!(),
                Op::Conv {
                    shape,
                    weight,
                    bias,
                    act,
                } => {
                    ops::activation_backward(*act, &tape.values[k], &mut g);
                    let src = node.inputs[0];
                    let (dw, db) = split_two(&mut grads.values, *weight, *bias);
                    let din = ops::conv2d_backward(
                        &values[src],
                        &g,
                        shape,
                        &params.values[*weight],
                        dw,
                        bias_grads.then_some(db),
                        need_input(src),
                    );
                    if let Some(d) = din {
                        route(src, d, &mut pending);
                    }
                }
                Op::Dense {
                    weight, bias, act, ..
                } => {
                    ops::activation_backward(*act, &tape.values[k], &mut g);
                    let src = node.inputs[0];
                    let (dw, db) = split_two(&mut grads.values, *weight, *bias);
                    let din = ops::dense_backward(
                        &values[src],
                        &g,
                        &params.values[*weight],
                        dw,
                        bias_grads.then_some(db),
                        need_input(src),
                    );
                    if let Some(d) = din {
                        route(src, d, &mut pending);
                    }
                }
                Op::MaxPool2 => {
                    let src = node.inputs[0];
                    if need_input(src) {
                        route(src, ops::maxpool2_backward(&tape.values[src], &g), &mut pending);
                    }
                }
                Op::Upsample2 => {
                    let src = node.inputs[0];
                    if need_input(src) {
                        route(src, ops::upsample2_backward(&g), &mut pending);
                    }
                }
                Op::Concat => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let (da, db) = ops::concat_backward(&g, tape.values[a].channels());
                    if need_input(a) {
                        route(a, da, &mut pending);
                    }
                    if need_input(b) {
                        route(b, db, &mut pending);
                    }
                }
                Op::GlobalAvgPool => {
                    let src = node.inputs[0];
                    if need_input(src) {
                        let d = ops::global_avg_pool_backward(&g, tape.values[src].shape());
                        route(src, d, &mut pending);
                    }
                }
            }
        }
        if want_input {
            Some(pending[0].take().unwrap_or_else(|| Tensor::zeros(tape.values[0].shape())))
        } else {
            None
        }
    }

    /// Forward-mode derivative of every node along input direction `v`,
    /// linearized at the taped point.
    pub fn tangent<T: Real>(&self, params: &ParamSet<T>, tape: &Tape<T>, v: Tensor<T>) -> Vec<Tensor<T>> {
        let mut tan: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        tan.push(v);
        for (k, node) in self.nodes.iter().enumerate().skip(1) {
            let x = &tan[node.inputs[0]];
            let t = match &node.op {
                Op::Input => unreachable!(),
                Op::Conv {
                    shape, weight, act, ..
                } => {
                    let mut z = ops::conv2d_forward(x, shape, &params.values[*weight], None);
                    apply_slope(*act, &tape.values[k], &mut z);
                    z
                }
                Op::Dense {
                    out_features,
                    weight,
                    act,
                    ..
                } => {
                    let mut z = ops::dense_forward(x, &params.values[*weight], None, *out_features);
                    apply_slope(*act, &tape.values[k], &mut z);
                    z
                }
                Op::MaxPool2 => ops::gather_pool(&tape.values[node.inputs[0]], x),
                Op::Upsample2 => ops::upsample2_forward(x),
                Op::Concat => ops::concat_forward(x, &tan[node.inputs[1]]),
                Op::GlobalAvgPool => ops::global_avg_pool_forward(x),
            };
            tan.push(t);
        }
        tan
    }
}

fn apply_slope<T: Real>(act: Activation, output: &Tensor<T>, z: &mut Tensor<T>) {
    ops::activation_backward(act, output, z);
}

fn split_two<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b, "weight precedes bias in the layer table");
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}
