use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, Conv2dDims, Conv2dGrads};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EltwiseMode {
    Mul,
    Add,
}

enum Op<F> {
    Leaf,
    Conv2d {
        input: Var,
        filters: Var,
        bias: Option<Var>,
        dims: Conv2dDims,
    },
    MixRules {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Clamp01 {
        input: Var,
    },
    NormalizeRules {
        input: Var,
        denoms: Vec<F>,
    },
    Pad2d {
        input: Var,
        pad: usize,
    },
    AvgPool2d {
        input: Var,
        window: usize,
        stride: usize,
    },
    Eltwise {
        a: Var,
        b: Var,
        mode: EltwiseMode,
    },
    LeakyRelu {
        input: Var,
        slope: F,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    SoftmaxXent {
        logits: Var,
        probs: Vec<F>,
        labels: Vec<usize>,
    },
    Dropout {
        input: Var,
        mask: Vec<F>,
    },
    Reshape {
        input: Var,
    },
    SumAll {
        input: Var,
    },
}

/// Reverse-mode autodiff tape. Operations append nodes; `backward` walks the
/// nodes in reverse creation order (a valid reverse topological order, since
/// an op can only consume previously created vars) and accumulates gradients
/// additively into every node that requires them.
pub struct Tape<F: Scalar> {
    values: Vec<Tensor<F>>,
    ops: Vec<Op<F>>,
    requires: Vec<bool>,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires.push(requires);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        filters: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.conv2d_asym(input, filters, bias, stride, [padding; 4])
    }

    /// Convolution with independent top/bottom/left/right zero padding.
    pub fn conv2d_asym(
        &mut self,
        input: Var,
        filters: Var,
        bias: Option<Var>,
        stride: usize,
        pad: [usize; 4],
    ) -> Result<Var> {
        let in_dims = self.values[input.0].dims4()?;
        let f_dims = self.values[filters.0].dims4()?;
        if let Some(b) = bias {
            if self.values[b.0].shape() != [f_dims.0] {
                return Err(Error::config(format!(
                    "conv2d bias shape {:?} does not match {} filters",
                    self.values[b.0].shape(),
                    f_dims.0
                )));
            }
        }
        let dims = Conv2dDims::compute(in_dims, f_dims, stride, pad)?;
        let mut out = Tensor::zeros(&[dims.n, dims.k, dims.oh, dims.ow]);
        kernels::conv2d_forward(
            self.values[input.0].data(),
            self.values[filters.0].data(),
            bias.map(|b| self.values[b.0].data()),
            &dims,
            out.data_mut(),
        );
        let mut deps = vec![input, filters];
        deps.extend(bias);
        let requires = self.any_requires(&deps);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                filters,
                bias,
                dims,
            },
            requires,
        ))
    }

    /// 1x1 mixing of rule maps with a rule-permutation-invariant accumulation
    /// order. `weights` is [n,K] or [n,K,1,1]; `bias` is [n].
    pub fn mix_rules(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (n, k, h, w) = self.values[input.0].dims4()?;
        let wshape = self.values[weights.0].shape();
        let ok = match wshape.len() {
            2 => wshape[1] == k,
            4 => wshape[1] == k && wshape[2] == 1 && wshape[3] == 1,
            _ => false,
        };
        if !ok {
            return Err(Error::config(format!(
                "mix_rules weights shape {wshape:?} incompatible with {k} rules"
            )));
        }
        let n_out = wshape[0];
        if self.values[bias.0].shape() != [n_out] {
            return Err(Error::config(format!(
                "mix_rules bias shape {:?} does not match {n_out} outputs",
                self.values[bias.0].shape()
            )));
        }
        let mut out = Tensor::zeros(&[n, n_out, h, w]);
        kernels::mix_rules_forward(
            self.values[input.0].data(),
            self.values[weights.0].data(),
            self.values[bias.0].data(),
            n,
            k,
            n_out,
            h * w,
            out.data_mut(),
        );
        let requires = self.any_requires(&[input, weights, bias]);
        Ok(self.push(
            out,
            Op::MixRules {
                input,
                weights,
                bias,
            },
            requires,
        ))
    }

    pub fn clamp01(&mut self, input: Var) -> Var {
        let mut out = self.values[input.0].clone();
        for x in out.data_mut() {
            *x = (*x).max(F::zero()).min(F::one());
        }
        let requires = self.requires[input.0];
        self.push(out, Op::Clamp01 { input }, requires)
    }

    pub fn normalize_rules(&mut self, input: Var, epsilon: F) -> Result<Var> {
        let (n, k, h, w) = self.values[input.0].dims4()?;
        let mut out = Tensor::zeros(&[n, k, h, w]);
        let mut denoms = Vec::new();
        kernels::normalize_rules_forward(
            self.values[input.0].data(),
            n,
            k,
            h * w,
            epsilon,
            out.data_mut(),
            &mut denoms,
        );
        let requires = self.requires[input.0];
        Ok(self.push(
            out,
            Op::NormalizeRules { input, denoms },
            requires,
        ))
    }

    pub fn pad2d(&mut self, input: Var, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.values[input.0].dims4()?;
        if pad == 0 {
            return Ok(input);
        }
        let mut out = Tensor::zeros(&[n, c, h + 2 * pad, w + 2 * pad]);
        kernels::pad2d_forward(self.values[input.0].data(), n, c, h, w, pad, out.data_mut());
        let requires = self.requires[input.0];
        Ok(self.push(out, Op::Pad2d { input, pad }, requires))
    }

    pub fn avg_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.values[input.0].dims4()?;
        if window == 0 || stride == 0 {
            return Err(Error::config("avg_pool2d window and stride must be positive"));
        }
        if window > h || window > w {
            return Err(Error::config(format!(
                "avg_pool2d window {window} larger than input {h}x{w}"
            )));
        }
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        kernels::avg_pool2d_forward(
            self.values[input.0].data(),
            n,
            c,
            h,
            w,
            window,
            stride,
            out.data_mut(),
        );
        let requires = self.requires[input.0];
        Ok(self.push(
            out,
            Op::AvgPool2d {
                input,
                window,
                stride,
            },
            requires,
        ))
    }

    pub fn eltwise(&mut self, a: Var, b: Var, mode: EltwiseMode) -> Result<Var> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(Error::config(format!(
                "eltwise shape mismatch: {:?} vs {:?}",
                self.values[a.0].shape(),
                self.values[b.0].shape()
            )));
        }
        let mut out = self.values[a.0].clone();
        match mode {
            EltwiseMode::Mul => {
                for (o, x) in out.data_mut().iter_mut().zip(self.values[b.0].data()) {
                    *o = *o * *x;
                }
            }
            EltwiseMode::Add => {
                for (o, x) in out.data_mut().iter_mut().zip(self.values[b.0].data()) {
                    *o = *o + *x;
                }
            }
        }
        let requires = self.any_requires(&[a, b]);
        Ok(self.push(out, Op::Eltwise { a, b, mode }, requires))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: F) -> Var {
        let mut out = self.values[input.0].clone();
        for x in out.data_mut() {
            if *x < F::zero() {
                *x = *x * slope;
            }
        }
        let requires = self.requires[input.0];
        self.push(out, Op::LeakyRelu { input, slope }, requires)
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (n, d_in) = self.values[input.0].dims2()?;
        let (wd, d_out) = self.values[weights.0].dims2()?;
        if wd != d_in {
            return Err(Error::config(format!(
                "dense inner dims disagree: input {d_in} vs weights {wd}"
            )));
        }
        if self.values[bias.0].shape() != [d_out] {
            return Err(Error::config(format!(
                "dense bias shape {:?} does not match {d_out} units",
                self.values[bias.0].shape()
            )));
        }
        let mut out = Tensor::zeros(&[n, d_out]);
        kernels::dense_forward(
            self.values[input.0].data(),
            self.values[weights.0].data(),
            self.values[bias.0].data(),
            n,
            d_in,
            d_out,
            out.data_mut(),
        );
        let requires = self.any_requires(&[input, weights, bias]);
        Ok(self.push(
            out,
            Op::Dense {
                input,
                weights,
                bias,
            },
            requires,
        ))
    }

    /// Mean over the batch of -log softmax(logits)[label], stabilized via
    /// max subtraction. Returns a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.values[logits.0].dims2()?;
        if labels.len() != n {
            return Err(Error::config(format!(
                "{} labels for a batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let z = self.values[logits.0].data();
        let mut probs = vec![F::zero(); n * c];
        let mut loss = F::zero();
        for row in 0..n {
            let zr = &z[row * c..(row + 1) * c];
            let mut m = zr[0];
            for &v in &zr[1..] {
                if v > m {
                    m = v;
                }
            }
            let mut sum = F::zero();
            for (p, &v) in probs[row * c..(row + 1) * c].iter_mut().zip(zr) {
                *p = (v - m).exp();
                sum += *p;
            }
            for p in &mut probs[row * c..(row + 1) * c] {
                *p = *p / sum;
            }
            loss += sum.ln() + m - zr[labels[row]];
        }
        loss = loss / F::c(n as f64);
        let requires = self.requires[logits.0];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            requires,
        ))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by 1/(1-rate). Outside
    /// training (or at rate 0) this is the identity and adds no node.
    pub fn dropout(
        &mut self,
        input: Var,
        rate: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let scale = F::c(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.values[input.0].numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    F::zero()
                } else {
                    scale
                }
            })
            .collect();
        let mut out = self.values[input.0].clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o = *o * *m;
        }
        let requires = self.requires[input.0];
        Ok(self.push(out, Op::Dropout { input, mask }, requires))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.values[input.0].reshaped(shape)?;
        let requires = self.requires[input.0];
        Ok(self.push(out, Op::Reshape { input }, requires))
    }

    pub fn sum_all(&mut self, input: Var) -> Var {
        let mut s = F::zero();
        for &x in self.values[input.0].data() {
            s += x;
        }
        let requires = self.requires[input.0];
        self.push(Tensor::scalar(s), Op::SumAll { input }, requires)
    }

    /// Backpropagates from a scalar root, accumulating additively into every
    /// node with `requires_grad` on a path to the root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.values[root.0].numel() != 1 {
            return Err(Error::Usage(format!(
                "backward root must be scalar, got shape {:?}",
                self.values[root.0].shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root.0] = Some(Tensor::full(self.values[root.0].shape(), F::one()));
        let Tape {
            ref values,
            ref ops,
            ref requires,
            ref mut grads,
        } = *self;
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            backprop_node(i, &g, &ops[i], values, requires, grads);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn take_or_zeros<F: Scalar>(
    grads: &mut [Option<Tensor<F>>],
    j: usize,
    shape: &[usize],
) -> Tensor<F> {
    grads[j].take().unwrap_or_else(|| Tensor::zeros(shape))
}

fn backprop_node<F: Scalar>(
    node: usize,
    g: &Tensor<F>,
    op: &Op<F>,
    values: &[Tensor<F>],
    requires: &[bool],
    grads: &mut [Option<Tensor<F>>],
) {
    match op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            filters,
            bias,
            dims,
        } => {
            let want_in = requires[input.0];
            let want_w = requires[filters.0];
            let want_b = bias.map(|b| requires[b.0]).unwrap_or(false);
            if !(want_in || want_w || want_b) {
                return;
            }
            let mut din = want_in.then(|| take_or_zeros(grads, input.0, values[input.0].shape()));
            let mut dfl = want_w.then(|| take_or_zeros(grads, filters.0, values[filters.0].shape()));
            let mut dbs = if want_b {
                let b = bias.unwrap();
                Some(take_or_zeros(grads, b.0, values[b.0].shape()))
            } else {
                None
            };
            kernels::conv2d_backward(
                values[input.0].data(),
                values[filters.0].data(),
                g.data(),
                dims,
                Conv2dGrads {
                    dinput: din.as_mut().map(|t| t.data_mut()),
                    dfilters: dfl.as_mut().map(|t| t.data_mut()),
                    dbias: dbs.as_mut().map(|t| t.data_mut()),
                },
            );
            if let Some(t) = din {
                grads[input.0] = Some(t);
            }
            if let Some(t) = dfl {
                grads[filters.0] = Some(t);
            }
            if let (Some(t), Some(b)) = (dbs, bias) {
                grads[b.0] = Some(t);
            }
        }
        Op::MixRules {
            input,
            weights,
            bias,
        } => {
            let (n, k, h, w) = values[input.0].dims4().expect("checked at forward");
            let n_out = values[weights.0].shape()[0];
            let want_in = requires[input.0];
            let mut din = want_in.then(|| take_or_zeros(grads, input.0, values[input.0].shape()));
            let mut dw = take_or_zeros(grads, weights.0, values[weights.0].shape());
            let mut db = take_or_zeros(grads, bias.0, values[bias.0].shape());
            kernels::mix_rules_backward(
                values[input.0].data(),
                values[weights.0].data(),
                g.data(),
                n,
                k,
                n_out,
                h * w,
                din.as_mut().map(|t| t.data_mut()),
                dw.data_mut(),
                db.data_mut(),
            );
            if let Some(t) = din {
                grads[input.0] = Some(t);
            }
            if requires[weights.0] {
                grads[weights.0] = Some(dw);
            }
            if requires[bias.0] {
                grads[bias.0] = Some(db);
            }
        }
        Op::Clamp01 { input } => {
            if !requires[input.0] {
                return;
            }
            let mut d = take_or_zeros(grads, input.0, values[input.0].shape());
            for ((dv, gv), xv) in d
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(values[input.0].data())
            {
                if *xv > F::zero() && *xv < F::one() {
                    *dv += *gv;
                }
            }
            grads[input.0] = Some(d);
        }
        Op::NormalizeRules { input, denoms } => {
            if !requires[input.0] {
                return;
            }
            let (n, k, h, w) = values[input.0].dims4().expect("checked at forward");
            let mut d = take_or_zeros(grads, input.0, values[input.0].shape());
            kernels::normalize_rules_backward(
                values[node].data(),
                denoms,
                g.data(),
                n,
                k,
                h * w,
                d.data_mut(),
            );
            grads[input.0] = Some(d);
        }
        Op::Pad2d { input, pad } => {
            if !requires[input.0] {
                return;
            }
            let (n, c, h, w) = values[input.0].dims4().expect("checked at forward");
            let mut d = take_or_zeros(grads, input.0, values[input.0].shape());
            kernels::pad2d_backward(g.data(), n, c, h, w, *pad, d.data_mut());
            grads[input.0] = Some(d);
        }
        Op::AvgPool2d {
            input,
            window,
            stride,
        } => {
            if !requires[input.0] {
                return;
            }
            let (n, c, h, w) = values[input.0].dims4().expect("checked at forward");
            let mut d = take_or_zeros(grads, input.0, values[input.0].shape());
            kernels::avg_pool2d_backward(g.data(), n, c, h, w, *window, *stride, d.data_mut());
            grads[input.0] = Some(d);
        }
        Op::Eltwise { a, b, mode } => match mode {
            EltwiseMode::Mul => {
                if requires[a.0] {
                    let mut d = take_or_zeros(grads, a.0, values[a.0].shape());
                    for ((dv, gv), bv) in d
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(values[b.0].data())
                    {
                        *dv += *gv * *bv;
                    }
                    grads[a.0] = Some(d);
                }
                if requires[b.0] {
                    let mut d = take_or_zeros(grads, b.0, values[b.0].shape());
                    for ((dv, gv), av) in d
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(values[a.0].data())
                    {
                        *dv += *gv * *av;
                    }
                    grads[b.0] = Some(d);
                }
            }
            EltwiseMode::Add => {
                for v in [a, b] {
                    if requires[v.0] {
                        let mut d = take_or_zeros(grads, v.0, values[v.0].shape());
                        for (dv, gv) in d.data_mut().iter_mut().zip(g.data()) {
                            *dv += *gv;
                        }
                        grads[v.0] = Some(d);
                    }
                }
            }
        },
        Op::LeakyRelu { input, slope } => {
            if !requires[input.0] {
                return;
            }
            let mut d = take_or_zeros(grads, input.0, values[input.0].shape());
            for ((dv, gv), xv) in d
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(values[input.0].data())
            {
                // gradient at exactly 0 is taken as 1
                if *xv >= F::zero() {
                    *dv += *gv;
                } else {
                    *dv += *gv * *slope;
                }
            }
            grads[input.0] = Some(d);
        }
        Op::Dense {
            input,
            weights,
            bias,
        } => {
            let (n, d_in) = values[input.0].dims2().expect("checked at forward");
            let d_out = values[weights.0].shape()[1];
            let want_in = requires[input.0];
            let mut din = want_in.then(|| take_or_zeros(grads, input.0, values[input.0].shape()));
            let mut dw = take_or_zeros(grads, weights.0, values[weights.0].shape());
            let mut db = take_or_zeros(grads, bias.0, values[bias.0].shape());
            kernels::dense_backward(
                values[input.0].data(),
                values[weights.0].data(),
                g.data(),
                n,
                d_in,
                d_out,
                din.as_mut().map(|t| t.data_mut()),
                dw.data_mut(),
                db.data_mut(),
            );
            if let Some(t) = din {
                grads[input.0] = Some(t);
            }
            if requires[weights.0] {
                grads[weights.0] = Some(dw);
            }
            if requires[bias.0] {
                grads[bias.0] = Some(db);
            }
        }
        Op::SoftmaxXent {
            logits,
            probs,
            labels,
        } => {
            if !requires[logits.0] {
                return;
            }
            let (n, c) = values[logits.0].dims2().expect("checked at forward");
            let gs = g.data()[0];
            let inv_n = F::one() / F::c(n as f64);
            let mut d = take_or_zeros(grads, logits.0, values[logits.0].shape());
            let dd = d.data_mut();
            for row in 0..n {
                for col in 0..c {
                    let mut p = probs[row * c + col];
                    if col == labels[row] {
                        p = p - F::one();
                    }
                    dd[row * c + col] += gs * p * inv_n;
                }
            }
            grads[logits.0] = Some(d);
        }
        Op::Dropout { input, mask } => {
            if !requires[input.0] {
                return;
            }
            let mut d = take_or_zeros(grads, input.0, values[input.0].shape());
            for ((dv, gv), mv) in d.data_mut().iter_mut().zip(g.data()).zip(mask) {
                *dv += *gv * *mv;
            }
            grads[input.0] = Some(d);
        }
        Op::Reshape { input } => {
            if !requires[input.0] {
                return;
            }
            let mut d = take_or_zeros(grads, input.0, values[input.0].shape());
            for (dv, gv) in d.data_mut().iter_mut().zip(g.data()) {
                *dv += *gv;
            }
            grads[input.0] = Some(d);
        }
        Op::SumAll { input } => {
            if !requires[input.0] {
                return;
            }
            let gs = g.data()[0];
            let mut d = take_or_zeros(grads, input.0, values[input.0].shape());
            for dv in d.data_mut() {
                *dv += gs;
            }
            grads[input.0] = Some(d);
        }
    }
}
