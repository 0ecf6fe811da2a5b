//! Text network specs and network construction.
//!
//! A spec is plain text, one directive or layer per line, `#` comments:
//!
//! ```text
//! input 3x32x32
//! classes 10
//! fio rules=64 outputs=32 kernel=3 stride=1
//! fpo rules=128 outputs=64 kernel=2 stride=2
//! fl units=512 dropout=0.2
//! fl units=10
//! ```
//!
//! `fio` defaults to stride 1 and `fl` to dropout 0; every other key is
//! required, unknown keys are rejected. Conv layers cannot follow the first
//! `fl`, and the last layer must be an `fl` whose units equal `classes`.

use rand::{RngExt, SeedableRng};

use crate::error::{Error, Result};
use crate::fuzzy::{self, FuzzyLayerParams, FuzzyLayerVars, LayerKind, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Fio {
        rules: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
    },
    Fpo {
        rules: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
    },
    Fl {
        units: usize,
        dropout: f64,
    },
}

impl LayerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            LayerSpec::Fio { .. } => "fio",
            LayerSpec::Fpo { .. } => "fpo",
            LayerSpec::Fl { .. } => "fl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Input shape as (channels, height, width).
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config(format!(
                "input shape {c}x{h}x{w} has a zero dimension"
            )));
        }
        if self.classes == 0 {
            return Err(Error::config("classes must be at least 1"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        let mut seen_fl = false;
        for (i, layer) in self.layers.iter().enumerate() {
            let idx = i + 1;
            let label = layer.label();
            match *layer {
                LayerSpec::Fio {
                    rules,
                    outputs,
                    kernel,
                    stride,
                }
                | LayerSpec::Fpo {
                    rules,
                    outputs,
                    kernel,
                    stride,
                } => {
                    if seen_fl {
                        return Err(Error::config(format!(
                            "layer {idx} ({label}): conv layers cannot follow the first fl"
                        )));
                    }
                    if rules == 0 || outputs == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::config(format!(
                            "layer {idx} ({label}): rules, outputs, kernel, and stride must all be at least 1"
                        )));
                    }
                    if matches!(layer, LayerSpec::Fio { .. }) && stride != 1 {
                        return Err(Error::config(format!(
                            "layer {idx} (fio): stride must be 1, got {stride}"
                        )));
                    }
                }
                LayerSpec::Fl { units, dropout } => {
                    if units == 0 {
                        return Err(Error::config(format!(
                            "layer {idx} (fl): units must be at least 1"
                        )));
                    }
                    if !(0.0..1.0).contains(&dropout) {
                        return Err(Error::config(format!(
                            "layer {idx} (fl): dropout {dropout} outside [0, 1)"
                        )));
                    }
                    seen_fl = true;
                }
            }
        }
        match self.layers.last() {
            Some(LayerSpec::Fl { units, .. }) if *units == self.classes => Ok(()),
            Some(LayerSpec::Fl { units, .. }) => Err(Error::config(format!(
                "terminal fl has {units} units but the network claims {} classes",
                self.classes
            ))),
            _ => Err(Error::config("the network must end with an fl layer")),
        }
    }
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(tokens: impl Iterator<Item = &'a str>, line: usize) -> Result<Self> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for tok in tokens {
            let Some((k, v)) = tok.split_once('=') else {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected key=value, got `{tok}`"),
                });
            };
            if pairs.iter().any(|&(seen, _)| seen == k) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate key `{k}`"),
                });
            }
            pairs.push((k, v));
        }
        Ok(Fields { line, pairs })
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        let at = self.pairs.iter().position(|&(k, _)| k == key)?;
        Some(self.pairs.remove(at).1)
    }

    fn require_usize(&mut self, key: &str) -> Result<usize> {
        let Some(raw) = self.take(key) else {
            return Err(Error::Parse {
                line: self.line,
                msg: format!("missing key `{key}`"),
            });
        };
        raw.parse().map_err(|_| Error::Parse {
            line: self.line,
            msg: format!("`{key}` wants a non-negative integer, got `{raw}`"),
        })
    }

    fn optional_usize(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| Error::Parse {
                line: self.line,
                msg: format!("`{key}` wants a non-negative integer, got `{raw}`"),
            }),
        }
    }

    fn optional_f64(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| Error::Parse {
                line: self.line,
                msg: format!("`{key}` wants a number, got `{raw}`"),
            }),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((k, _)) = self.pairs.first() {
            return Err(Error::Parse {
                line: self.line,
                msg: format!("unknown key `{k}`"),
            });
        }
        Ok(())
    }
}

/// Parses the text format described at the module level. Syntax problems
/// carry the offending line number; whole-spec violations come back as
/// configuration errors from [`NetworkSpec::validate`].
pub fn parse_network_spec(text: &str) -> Result<NetworkSpec> {
    let mut input = None;
    let mut classes = None;
    let mut layers = Vec::new();
    let mut first_fl_line = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let head = tokens.next().expect("non-empty line");
        match head {
            "input" => {
                if input.is_some() {
                    return Err(Error::Parse {
                        line,
                        msg: "duplicate `input` directive".into(),
                    });
                }
                let rest: Vec<&str> = tokens.collect();
                let &[shape] = &rest[..] else {
                    return Err(Error::Parse {
                        line,
                        msg: "`input` wants exactly one CxHxW argument".into(),
                    });
                };
                let dims: Vec<usize> = shape
                    .split('x')
                    .map(|p| p.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad input shape `{shape}`, expected CxHxW"),
                    })?;
                let &[c, h, w] = &dims[..] else {
                    return Err(Error::Parse {
                        line,
                        msg: format!("bad input shape `{shape}`, expected CxHxW"),
                    });
                };
                input = Some((c, h, w));
            }
            "classes" => {
                if classes.is_some() {
                    return Err(Error::Parse {
                        line,
                        msg: "duplicate `classes` directive".into(),
                    });
                }
                let rest: Vec<&str> = tokens.collect();
                let &[count] = &rest[..] else {
                    return Err(Error::Parse {
                        line,
                        msg: "`classes` wants exactly one count".into(),
                    });
                };
                classes = Some(count.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad class count `{count}`"),
                })?);
            }
            "fio" | "fpo" => {
                if let Some(fl_line) = first_fl_line {
                    return Err(Error::Parse {
                        line,
                        msg: format!(
                            "{head} cannot follow the fl layer on line {fl_line}: \
                             conv layers must precede the classifier head"
                        ),
                    });
                }
                let mut fields = Fields::parse(tokens, line)?;
                let rules = fields.require_usize("rules")?;
                let outputs = fields.require_usize("outputs")?;
                let kernel = fields.require_usize("kernel")?;
                let layer = if head == "fio" {
                    let stride = fields.optional_usize("stride", 1)?;
                    LayerSpec::Fio {
                        rules,
                        outputs,
                        kernel,
                        stride,
                    }
                } else {
                    let stride = fields.require_usize("stride")?;
                    LayerSpec::Fpo {
                        rules,
                        outputs,
                        kernel,
                        stride,
                    }
                };
                fields.finish()?;
                layers.push(layer);
            }
            "fl" => {
                let mut fields = Fields::parse(tokens, line)?;
                let units = fields.require_usize("units")?;
                let dropout = fields.optional_f64("dropout", 0.0)?;
                fields.finish()?;
                first_fl_line.get_or_insert(line);
                layers.push(LayerSpec::Fl { units, dropout });
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown directive `{other}`"),
                });
            }
        }
    }
    let Some(input) = input else {
        return Err(Error::config("spec is missing the `input CxHxW` directive"));
    };
    let Some(classes) = classes else {
        return Err(Error::config("spec is missing the `classes N` directive"));
    };
    let spec = NetworkSpec {
        input,
        classes,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Canonical text form; `parse ∘ serialize` is the identity on valid specs.
pub fn serialize_network_spec(spec: &NetworkSpec) -> String {
    use std::fmt::Write;

    let mut out = String::new();
    let (c, h, w) = spec.input;
    writeln!(out, "input {c}x{h}x{w}").unwrap();
    writeln!(out, "classes {}", spec.classes).unwrap();
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Fio {
                rules,
                outputs,
                kernel,
                stride,
            } => writeln!(
                out,
                "fio rules={rules} outputs={outputs} kernel={kernel} stride={stride}"
            )
            .unwrap(),
            LayerSpec::Fpo {
                rules,
                outputs,
                kernel,
                stride,
            } => writeln!(
                out,
                "fpo rules={rules} outputs={outputs} kernel={kernel} stride={stride}"
            )
            .unwrap(),
            LayerSpec::Fl { units, dropout } => {
                writeln!(out, "fl units={units} dropout={dropout}").unwrap()
            }
        }
    }
    out
}

/// One layer's output dims in the shape walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    /// 1-based position in the spec.
    pub index: usize,
    pub label: &'static str,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Walks the spec's shapes without allocating parameters. FIO preserves
/// height and width, FPO maps a side of length d to floor((d-kernel)/stride)+1,
/// and fl layers collapse to (units, 1, 1).
pub fn trace_shapes(spec: &NetworkSpec) -> Result<Vec<TraceEntry>> {
    spec.validate()?;
    let (_, mut h, mut w) = spec.input;
    let mut trace = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let idx = i + 1;
        let channels = match *layer {
            LayerSpec::Fio {
                outputs, kernel, ..
            } => {
                if kernel > h || kernel > w {
                    return Err(Error::config(format!(
                        "layer {idx} (fio): kernel {kernel} exceeds the running {h}x{w} extent"
                    )));
                }
                outputs
            }
            LayerSpec::Fpo {
                outputs,
                kernel,
                stride,
                ..
            } => {
                if kernel > h || kernel > w {
                    return Err(Error::config(format!(
                        "layer {idx} (fpo): kernel {kernel} exceeds the running {h}x{w} extent"
                    )));
                }
                h = (h - kernel) / stride + 1;
                w = (w - kernel) / stride + 1;
                outputs
            }
            LayerSpec::Fl { units, .. } => {
                h = 1;
                w = 1;
                units
            }
        };
        trace.push(TraceEntry {
            index: idx,
            label: layer.label(),
            channels,
            height: h,
            width: w,
        });
    }
    Ok(trace)
}

#[derive(Debug, Clone)]
pub enum Layer<F> {
    Fuzzy {
        kind: LayerKind,
        params: FuzzyLayerParams<F>,
    },
    Dense {
        /// Row-major (in, units).
        weights: Tensor<F>,
        bias: Tensor<F>,
        dropout: f64,
        terminal: bool,
    },
}

/// Tape handles for every parameter, parallel to `Network::layers`.
#[derive(Debug, Clone)]
pub enum LayerVars {
    Fuzzy(FuzzyLayerVars),
    Dense { weights: Var, bias: Var },
}

#[derive(Debug, Clone)]
pub struct NetworkVars {
    pub layers: Vec<LayerVars>,
}

#[derive(Debug, Clone)]
pub struct Network<F> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<F>>,
    trace: Vec<TraceEntry>,
}

fn init_dense<F: Scalar>(in_dim: usize, units: usize, rng: &mut SeededRng) -> Tensor<F> {
    let bound = (6.0 / (in_dim + units) as f64).sqrt();
    Tensor::new(
        &[in_dim, units],
        (0..in_dim * units)
            .map(|_| F::c((rng.random::<f64>() * 2.0 - 1.0) * bound))
            .collect(),
    )
    .expect("shape matches count")
}

impl<F: Scalar> Network<F> {
    /// Validates, walks shapes, and initializes parameters. All randomness
    /// comes from a single generator seeded here and consumed layer by layer
    /// in spec order, so a (spec, seed) pair pins the initial parameters.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let trace = trace_shapes(spec)?;
        let mut rng = SeededRng::seed_from_u64(seed);
        let (mut c, mut h, mut w) = spec.input;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, entry) in spec.layers.iter().zip(&trace) {
            match *layer {
                LayerSpec::Fio {
                    rules,
                    outputs,
                    kernel,
                    stride,
                } => layers.push(Layer::Fuzzy {
                    kind: LayerKind::Fio,
                    params: fuzzy::init_params(rules, outputs, c, kernel, stride, &mut rng),
                }),
                LayerSpec::Fpo {
                    rules,
                    outputs,
                    kernel,
                    stride,
                } => layers.push(Layer::Fuzzy {
                    kind: LayerKind::Fpo,
                    params: fuzzy::init_params(rules, outputs, c, kernel, stride, &mut rng),
                }),
                LayerSpec::Fl { units, dropout } => {
                    let weights = init_dense(c * h * w, units, &mut rng);
                    layers.push(Layer::Dense {
                        weights,
                        bias: Tensor::zeros(&[units]),
                        dropout,
                        terminal: false,
                    });
                }
            }
            c = entry.channels;
            h = entry.height;
            w = entry.width;
        }
        if let Some(Layer::Dense { terminal, .. }) = layers.last_mut() {
            *terminal = true;
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
            trace,
        })
    }

    pub fn shape_trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// Named parameters in a fixed walk order: layers in spec order, within a
    /// fuzzy layer rule_filters, mix_filters, mix_bias, out_filters, out_bias,
    /// within a dense layer weights then bias. Checkpoints, Adam state, and
    /// gradient collection all share this order.
    pub fn params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let idx = i + 1;
            match layer {
                Layer::Fuzzy { params, .. } => {
                    out.push((format!("layer{idx}.rule_filters"), &params.rule_filters));
                    out.push((format!("layer{idx}.mix_filters"), &params.mix_filters));
                    out.push((format!("layer{idx}.mix_bias"), &params.mix_bias));
                    out.push((format!("layer{idx}.out_filters"), &params.out_filters));
                    out.push((format!("layer{idx}.out_bias"), &params.out_bias));
                }
                Layer::Dense { weights, bias, .. } => {
                    out.push((format!("layer{idx}.weights"), weights));
                    out.push((format!("layer{idx}.bias"), bias));
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let idx = i + 1;
            match layer {
                Layer::Fuzzy { params, .. } => {
                    out.push((format!("layer{idx}.rule_filters"), &mut params.rule_filters));
                    out.push((format!("layer{idx}.mix_filters"), &mut params.mix_filters));
                    out.push((format!("layer{idx}.mix_bias"), &mut params.mix_bias));
                    out.push((format!("layer{idx}.out_filters"), &mut params.out_filters));
                    out.push((format!("layer{idx}.out_bias"), &mut params.out_bias));
                }
                Layer::Dense { weights, bias, .. } => {
                    out.push((format!("layer{idx}.weights"), weights));
                    out.push((format!("layer{idx}.bias"), bias));
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn leaves(&self, tape: &mut Tape<F>, requires_grad: bool) -> NetworkVars {
        NetworkVars {
            layers: self
                .layers
                .iter()
                .map(|layer| match layer {
                    Layer::Fuzzy { params, .. } => {
                        LayerVars::Fuzzy(params.leaves(tape, requires_grad))
                    }
                    Layer::Dense { weights, bias, .. } => LayerVars::Dense {
                        weights: tape.leaf(weights.clone(), requires_grad),
                        bias: tape.leaf(bias.clone(), requires_grad),
                    },
                })
                .collect(),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        vars: &NetworkVars,
        input: Var,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        self.forward_traced(tape, vars, input, training, rng)
            .map(|(logits, _)| logits)
    }

    /// Forward pass that also reports each layer's realized output dims as
    /// (channels, height, width), for checking against [`trace_shapes`].
    pub fn forward_traced(
        &self,
        tape: &mut Tape<F>,
        vars: &NetworkVars,
        input: Var,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<(Var, Vec<[usize; 3]>)> {
        if vars.layers.len() != self.layers.len() {
            return Err(Error::Usage(
                "network vars were built for a different network".into(),
            ));
        }
        let mut x = input;
        let mut dims = Vec::with_capacity(self.layers.len());
        let mut flattened = false;
        for (layer, lv) in self.layers.iter().zip(&vars.layers) {
            match (layer, lv) {
                (Layer::Fuzzy { kind, .. }, LayerVars::Fuzzy(fv)) => {
                    let parts = match kind {
                        LayerKind::Fio => fuzzy::fio_forward(tape, x, fv)?,
                        LayerKind::Fpo => fuzzy::fpo_forward(tape, x, fv)?,
                        LayerKind::Fl => {
                            return Err(Error::Usage("fl stored as a fuzzy layer".into()))
                        }
                    };
                    x = parts.output;
                    let (_, oc, oh, ow) = tape.value(x).dims4()?;
                    dims.push([oc, oh, ow]);
                }
                (
                    Layer::Dense {
                        dropout, terminal, ..
                    },
                    LayerVars::Dense { weights, bias },
                ) => {
                    if !flattened {
                        let shape = tape.value(x).shape().to_vec();
                        let flat: usize = shape[1..].iter().product();
                        x = tape.reshape(x, &[shape[0], flat])?;
                        flattened = true;
                    }
                    x = tape.dense(x, *weights, *bias)?;
                    if !*terminal {
                        x = tape.leaky_relu(x, F::c(LEAKY_SLOPE));
                    }
                    x = tape.dropout(x, *dropout, training, rng)?;
                    let (_, units) = tape.value(x).dims2()?;
                    dims.push([units, 1, 1]);
                }
                _ => {
                    return Err(Error::Usage(
                        "network vars do not line up with the layers".into(),
                    ));
                }
            }
        }
        Ok((x, dims))
    }

    /// Collects gradients after a backward pass, in [`Network::params`] order.
    pub fn gradients(&self, tape: &Tape<F>, vars: &NetworkVars) -> Result<Vec<Tensor<F>>> {
        let mut out = Vec::new();
        for lv in &vars.layers {
            let handles: Vec<Var> = match lv {
                LayerVars::Fuzzy(fv) => vec![
                    fv.rule_filters,
                    fv.mix_filters,
                    fv.mix_bias,
                    fv.out_filters,
                    fv.out_bias,
                ],
                LayerVars::Dense { weights, bias } => vec![*weights, *bias],
            };
            for v in handles {
                let g = tape
                    .grad(v)
                    .ok_or_else(|| Error::Usage("no gradient recorded for a parameter".into()))?;
                out.push(g.clone());
            }
        }
        Ok(out)
    }

    /// Overwrites parameters from (name, tensor) pairs, which must match the
    /// [`Network::params`] order, names, and shapes exactly.
    pub fn set_params(&mut self, named: &[(String, Tensor<F>)]) -> Result<()> {
        let mut slots = self.params_mut();
        if named.len() != slots.len() {
            return Err(Error::config(format!(
                "{} parameter tensors for a network with {}",
                named.len(),
                slots.len()
            )));
        }
        for ((name, tensor), (want_name, slot)) in named.iter().zip(slots.iter_mut()) {
            if name != want_name {
                return Err(Error::config(format!(
                    "parameter `{name}` where `{want_name}` was expected"
                )));
            }
            if tensor.shape() != slot.shape() {
                return Err(Error::config(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            **slot = tensor.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // The CIFAR-10 network: 8 FIO/FPO layers and 3 fl layers.
    const CIFAR10_SPEC: &str = "\
input 3x32x32
classes 10
fio rules=64 outputs=32 kernel=3 stride=1
fio rules=64 outputs=32 kernel=3 stride=1
fpo rules=128 outputs=64 kernel=2 stride=2
fio rules=128 outputs=64 kernel=3 stride=1
fio rules=128 outputs=64 kernel=3 stride=1
fpo rules=128 outputs=64 kernel=2 stride=2
fio rules=256 outputs=128 kernel=3 stride=1
fpo rules=256 outputs=128 kernel=2 stride=2
fl units=512 dropout=0.2
fl units=512 dropout=0.2
fl units=10
";

    const MNIST_SPEC: &str = "\
input 1x28x28
classes 10
fio rules=32 outputs=16 kernel=3
fpo rules=64 outputs=32 kernel=2 stride=2
fio rules=64 outputs=32 kernel=3
fpo rules=128 outputs=64 kernel=2 stride=2
fl units=256 dropout=0.2
fl units=10
";

    #[test]
    fn cifar10_spec_parses_to_eleven_layers() {
        let spec = parse_network_spec(CIFAR10_SPEC).unwrap();
        assert_eq!(spec.layers.len(), 11);
        assert_eq!(spec.input, (3, 32, 32));
        assert_eq!(spec.classes, 10);
        let conv = spec
            .layers
            .iter()
            .filter(|l| !matches!(l, LayerSpec::Fl { .. }))
            .count();
        assert_eq!(conv, 8);
    }

    #[test]
    fn cifar10_conv_stack_dims_walk_down_to_four() {
        let spec = parse_network_spec(CIFAR10_SPEC).unwrap();
        let trace = trace_shapes(&spec).unwrap();
        let sides: Vec<usize> = trace
            .iter()
            .filter(|e| e.label != "fl")
            .map(|e| e.height)
            .collect();
        assert_eq!(sides, [32, 32, 16, 16, 16, 8, 8, 4]);
    }

    #[test]
    fn fio_layers_never_change_spatial_dims_in_the_trace() {
        let spec = parse_network_spec(CIFAR10_SPEC).unwrap();
        let trace = trace_shapes(&spec).unwrap();
        let (_, mut h, mut w) = spec.input;
        for entry in &trace {
            if entry.label == "fio" {
                assert_eq!((entry.height, entry.width), (h, w), "layer {}", entry.index);
            }
            h = entry.height;
            w = entry.width;
        }
    }

    #[test]
    fn single_fl_classifier_is_valid() {
        let spec = parse_network_spec("input 1x4x4\nclasses 10\nfl units=10\n").unwrap();
        assert_eq!(spec.layers.len(), 1);
        Network::<f64>::build(&spec, 0).unwrap();
    }

    #[test]
    fn zero_rules_is_rejected() {
        let err = parse_network_spec(
            "input 1x4x4\nclasses 2\nfio rules=0 outputs=1 kernel=2\nfl units=2\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("rules"), "{err}");
    }

    #[test]
    fn conv_after_fl_is_rejected_with_the_line() {
        let err = parse_network_spec(
            "input 1x8x8\nclasses 2\nfl units=4\nfio rules=2 outputs=2 kernel=2\nfl units=2\n",
        )
        .unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 4);
                assert!(msg.contains("cannot follow"), "{msg}");
            }
            other => panic!("wanted a parse error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_and_directives_are_rejected() {
        assert!(parse_network_spec("input 1x4x4\nclasses 2\nfl units=2 frobnicate=1\n").is_err());
        assert!(parse_network_spec("input 1x4x4\nclasses 2\nconv units=2\nfl units=2\n").is_err());
        assert!(parse_network_spec(
            "input 1x4x4\nclasses 2\nfpo rules=2 outputs=2 kernel=2\nfl units=2\n"
        )
        .is_err());
    }

    #[test]
    fn defaults_are_applied() {
        let spec = parse_network_spec(
            "input 1x6x6\nclasses 3\nfio rules=2 outputs=2 kernel=2\nfl units=3\n",
        )
        .unwrap();
        assert_eq!(
            spec.layers[0],
            LayerSpec::Fio {
                rules: 2,
                outputs: 2,
                kernel: 2,
                stride: 1
            }
        );
        assert_eq!(
            spec.layers[1],
            LayerSpec::Fl {
                units: 3,
                dropout: 0.0
            }
        );
    }

    #[test]
    fn terminal_units_must_match_classes() {
        let err = parse_network_spec("input 1x4x4\nclasses 10\nfl units=7\n").unwrap_err();
        assert!(err.to_string().contains("terminal"), "{err}");
    }

    #[test]
    fn parse_serialize_parse_is_identity() {
        for text in [CIFAR10_SPEC, MNIST_SPEC] {
            let spec = parse_network_spec(text).unwrap();
            let round = parse_network_spec(&serialize_network_spec(&spec)).unwrap();
            assert_eq!(spec, round);
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let spec = parse_network_spec(
            "# header\n\ninput 1x6x6  # trailing\nclasses 2\n  fl units=2\n# done\n",
        )
        .unwrap();
        assert_eq!(spec.input, (1, 6, 6));
    }

    #[test]
    fn mnist_default_builds_on_28x28() {
        let spec = parse_network_spec(MNIST_SPEC).unwrap();
        let net = Network::<f64>::build(&spec, 7).unwrap();
        let sides: Vec<usize> = net
            .shape_trace()
            .iter()
            .filter(|e| e.label != "fl")
            .map(|e| e.height)
            .collect();
        assert_eq!(sides, [28, 14, 14, 7]);
    }

    #[test]
    fn kernel_underflow_names_the_layer() {
        let err = parse_network_spec(
            "input 1x4x4\nclasses 2\nfpo rules=2 outputs=2 kernel=2 stride=2\n\
             fpo rules=2 outputs=2 kernel=3 stride=2\nfl units=2\n",
        )
        .map(|spec| trace_shapes(&spec))
        .unwrap()
        .unwrap_err();
        assert!(err.to_string().contains("layer 2"), "{err}");
    }

    #[test]
    fn forward_pass_reproduces_the_shape_trace() {
        use rand::SeedableRng;

        for (text, n) in [(MNIST_SPEC, 2), (CIFAR10_SPEC, 2)] {
            let spec = parse_network_spec(text).unwrap();
            let net = Network::<f64>::build(&spec, 11).unwrap();
            let mut rng = SeededRng::seed_from_u64(3);
            let (c, h, w) = spec.input;
            let image = Tensor::new(
                &[n, c, h, w],
                (0..n * c * h * w).map(|_| rng.random::<f64>()).collect(),
            )
            .unwrap();
            let mut tape = Tape::new();
            let vars = net.leaves(&mut tape, false);
            let x = tape.leaf(image, false);
            let (logits, dims) = net
                .forward_traced(&mut tape, &vars, x, false, &mut rng)
                .unwrap();
            let want: Vec<[usize; 3]> = net
                .shape_trace()
                .iter()
                .map(|e| [e.channels, e.height, e.width])
                .collect();
            assert_eq!(dims, want);
            assert_eq!(tape.value(logits).shape(), [n, spec.classes]);
        }
    }

    #[test]
    fn training_forward_backward_runs_with_dropout() {
        use rand::SeedableRng;

        let spec = parse_network_spec(
            "input 1x6x6\nclasses 3\nfio rules=3 outputs=2 kernel=2\nfl units=4 dropout=0.5\nfl units=3\n",
        )
        .unwrap();
        let net = Network::<f64>::build(&spec, 5).unwrap();
        let mut rng = SeededRng::seed_from_u64(9);
        let image = Tensor::new(&[2, 1, 6, 6], (0..72).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mut tape = Tape::new();
        let vars = net.leaves(&mut tape, true);
        let x = tape.leaf(image, false);
        let logits = net.forward(&mut tape, &vars, x, true, &mut rng).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[0, 2]).unwrap();
        tape.backward(loss).unwrap();
        let grads = net.gradients(&tape, &vars).unwrap();
        assert_eq!(grads.len(), net.params().len());
        for (g, (name, p)) in grads.iter().zip(net.params()) {
            assert_eq!(g.shape(), p.shape(), "{name}");
            assert!(g.data().iter().all(|v| v.is_finite()), "{name}");
        }
    }
}
