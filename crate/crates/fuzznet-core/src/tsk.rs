//! Literal, loop-based evaluators of the TSK equations and the fuzzy layers.
//!
//! Everything here is written scalar-by-scalar against the definitions and
//! deliberately shares no numeric kernels with the fused implementations; an
//! oracle that reuses the code under test proves nothing.

use crate::error::{Error, Result};
use crate::fuzzy::{FuzzyLayerParams, FIRING_EPSILON, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Classic scalar TSK system: per-rule Gaussian memberships over each input
/// dimension and affine consequents f_k(x) = coeffs_k . x + offset_k.
#[derive(Debug, Clone)]
pub struct TskRuleSet<F> {
    pub centers: Vec<Vec<F>>,
    pub widths: Vec<Vec<F>>,
    pub coeffs: Vec<Vec<F>>,
    pub offsets: Vec<F>,
}

impl<F: Scalar> TskRuleSet<F> {
    pub fn rule_count(&self) -> usize {
        self.centers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.centers.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.rule_count();
        let d = self.input_dim();
        if k == 0 || d == 0 {
            return Err(Error::config("rule set needs at least one rule and one input"));
        }
        if self.widths.len() != k || self.coeffs.len() != k || self.offsets.len() != k {
            return Err(Error::config("rule set field lengths disagree"));
        }
        for rule in 0..k {
            if self.centers[rule].len() != d
                || self.widths[rule].len() != d
                || self.coeffs[rule].len() != d
            {
                return Err(Error::config("rule dimensions disagree"));
            }
            if self.widths[rule].iter().any(|w| *w <= F::zero()) {
                return Err(Error::config("membership widths must be strictly positive"));
            }
        }
        Ok(())
    }

    /// Product t-norm firing strength of each rule at x.
    pub fn firing_strengths(&self, x: &[F]) -> Result<Vec<F>> {
        self.validate()?;
        if x.len() != self.input_dim() {
            return Err(Error::config(format!(
                "input dimension {} does not match rule set dimension {}",
                x.len(),
                self.input_dim()
            )));
        }
        let two = F::c(2.0);
        Ok((0..self.rule_count())
            .map(|k| {
                let mut p = F::one();
                for i in 0..x.len() {
                    let z = x[i] - self.centers[k][i];
                    let s = self.widths[k][i];
                    p = p * (-(z * z) / (two * s * s)).exp();
                }
                p
            })
            .collect())
    }

    pub fn consequents(&self, x: &[F]) -> Vec<F> {
        (0..self.rule_count())
            .map(|k| {
                let mut y = self.offsets[k];
                for i in 0..x.len() {
                    y = y + self.coeffs[k][i] * x[i];
                }
                y
            })
            .collect()
    }
}

/// Weighted mean Σ p_k y_k / Σ p_k, the defuzzification step. No epsilon:
/// a vanishing denominator is reported instead of masked.
pub fn tsk_combine<F: Scalar>(firing: &[F], consequents: &[F]) -> Result<F> {
    if firing.len() != consequents.len() || firing.is_empty() {
        return Err(Error::config("firing/consequent lengths disagree"));
    }
    let mut num = F::zero();
    let mut den = F::zero();
    for (&p, &y) in firing.iter().zip(consequents) {
        num += p * y;
        den += p;
    }
    if den == F::zero() {
        return Err(Error::Data(
            "degenerate input: all rule firing strengths are zero".into(),
        ));
    }
    Ok(num / den)
}

/// Full system output at x.
pub fn tsk_eval<F: Scalar>(rules: &TskRuleSet<F>, x: &[F]) -> Result<F> {
    let p = rules.firing_strengths(x)?;
    let y = rules.consequents(x);
    tsk_combine(&p, &y)
}

/// Mirror of one layer's parameters in flat form, plus the explicit list of
/// subregion top-left coordinates the rule conv visits.
#[derive(Debug, Clone)]
pub struct NaiveFuzzyLayerSpec<F> {
    pub in_channels: usize,
    pub rules: usize,
    pub outputs: usize,
    pub kernel: usize,
    pub stride: usize,
    pub rule_filters: Vec<F>,
    pub mix_filters: Vec<F>,
    pub mix_bias: Vec<F>,
    pub out_filters: Vec<F>,
    pub out_bias: Vec<F>,
    pub subregions: Vec<(usize, usize)>,
}

fn grid(h: usize, w: usize, s: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut y = 0;
    while y + s <= h {
        let mut x = 0;
        while x + s <= w {
            out.push((y, x));
            x += stride;
        }
        y += stride;
    }
    out
}

impl<F: Scalar> NaiveFuzzyLayerSpec<F> {
    pub fn from_params(params: &FuzzyLayerParams<F>, h: usize, w: usize) -> Result<Self> {
        params.validate()?;
        let (kernel, stride) = (params.kernel, params.stride);
        if kernel > h || kernel > w {
            return Err(Error::config(format!(
                "kernel {kernel} does not fit a {h}x{w} input"
            )));
        }
        Ok(NaiveFuzzyLayerSpec {
            in_channels: params.in_channels(),
            rules: params.rules(),
            outputs: params.outputs(),
            kernel,
            stride,
            rule_filters: params.rule_filters.data().to_vec(),
            mix_filters: params.mix_filters.data().to_vec(),
            mix_bias: params.mix_bias.data().to_vec(),
            out_filters: params.out_filters.data().to_vec(),
            out_bias: params.out_bias.data().to_vec(),
            subregions: grid(h, w, kernel, stride),
        })
    }

    fn check_grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.subregions != grid(h, w, self.kernel, self.stride) {
            return Err(Error::config(format!(
                "subregion list does not cover the valid positions of a {h}x{w} input"
            )));
        }
        let mh = (h - self.kernel) / self.stride + 1;
        let mw = (w - self.kernel) / self.stride + 1;
        Ok((mh, mw))
    }

    /// Clipped dot-product membership of every rule over every subregion.
    fn memberships(&self, image: &[F], h: usize, w: usize) -> Vec<F> {
        let s = self.kernel;
        let mut out = Vec::with_capacity(self.rules * self.subregions.len());
        for k in 0..self.rules {
            for &(y, x) in &self.subregions {
                let mut dot = F::zero();
                for c in 0..self.in_channels {
                    for i in 0..s {
                        for j in 0..s {
                            let wv = self.rule_filters[((k * self.in_channels + c) * s + i) * s + j];
                            let iv = image[(c * h + y + i) * w + x + j];
                            dot = dot + wv * iv;
                        }
                    }
                }
                if dot < F::zero() {
                    dot = F::zero();
                } else if dot > F::one() {
                    dot = F::one();
                }
                out.push(dot);
            }
        }
        out
    }

    /// Per-cell normalization m_k / (Σ_j m_j + ε), rules summed in index order.
    fn normalize(&self, memberships: &[F], cells: usize) -> Vec<F> {
        let eps = F::c(FIRING_EPSILON);
        let mut out = vec![F::zero(); memberships.len()];
        for cell in 0..cells {
            let mut sum = eps;
            for k in 0..self.rules {
                sum += memberships[k * cells + cell];
            }
            for k in 0..self.rules {
                out[k * cells + cell] = memberships[k * cells + cell] / sum;
            }
        }
        out
    }

    fn lrelu(v: F) -> F {
        if v < F::zero() {
            v * F::c(LEAKY_SLOPE)
        } else {
            v
        }
    }

    /// Same-size feature convolution: total padding s-1 per axis, split with
    /// the shorter run leading, bias, Leaky-ReLU.
    fn feature_map_same(&self, image: &[F], h: usize, w: usize) -> Vec<F> {
        let s = self.kernel;
        let lead = (s - 1) / 2;
        let mut out = vec![F::zero(); self.outputs * h * w];
        for o in 0..self.outputs {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = self.out_bias[o];
                    for c in 0..self.in_channels {
                        for i in 0..s {
                            for j in 0..s {
                                let yy = y + i;
                                let xx = x + j;
                                if yy < lead || xx < lead {
                                    continue;
                                }
                                let (yy, xx) = (yy - lead, xx - lead);
                                if yy >= h || xx >= w {
                                    continue;
                                }
                                let wv =
                                    self.out_filters[((o * self.in_channels + c) * s + i) * s + j];
                                acc = acc + wv * image[(c * h + yy) * w + xx];
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = Self::lrelu(acc);
                }
            }
        }
        out
    }

    /// Strided valid feature convolution with bias and Leaky-ReLU.
    fn feature_map_strided(&self, image: &[F], h: usize, w: usize, oh: usize, ow: usize) -> Vec<F> {
        let s = self.kernel;
        let mut out = vec![F::zero(); self.outputs * oh * ow];
        for o in 0..self.outputs {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.out_bias[o];
                    for c in 0..self.in_channels {
                        for i in 0..s {
                            for j in 0..s {
                                let wv =
                                    self.out_filters[((o * self.in_channels + c) * s + i) * s + j];
                                let iv =
                                    image[(c * h + oy * self.stride + i) * w + ox * self.stride + j];
                                acc = acc + wv * iv;
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = Self::lrelu(acc);
                }
            }
        }
        out
    }
}

/// Loop-based FIO forward: memberships, per-cell normalization, zero-padding
/// by s-1, 1x1 mix + Leaky-ReLU, s²-divisor window mean per pixel, gating of
/// the same-size feature conv. Output shape equals the input's spatial shape.
pub fn fio_reference<F: Scalar>(
    input: &Tensor<F>,
    spec: &NaiveFuzzyLayerSpec<F>,
) -> Result<Tensor<F>> {
    if spec.stride != 1 {
        return Err(Error::config("fio_reference requires stride 1"));
    }
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::config("channel count does not match layer spec"));
    }
    let (mh, mw) = spec.check_grid(h, w)?;
    let s = spec.kernel;
    let p = s - 1;
    let (ph, pw) = (mh + 2 * p, mw + 2 * p);
    let mut out = Tensor::zeros(&[n, spec.outputs, h, w]);
    for item in 0..n {
        let image = &input.data()[item * c * h * w..(item + 1) * c * h * w];
        let memberships = spec.memberships(image, h, w);
        let firing = spec.normalize(&memberships, mh * mw);

        let mut padded = vec![F::zero(); spec.rules * ph * pw];
        for k in 0..spec.rules {
            for y in 0..mh {
                for x in 0..mw {
                    padded[(k * ph + y + p) * pw + x + p] = firing[(k * mh + y) * mw + x];
                }
            }
        }

        let mut mixed = vec![F::zero(); spec.outputs * ph * pw];
        for o in 0..spec.outputs {
            for y in 0..ph {
                for x in 0..pw {
                    let mut acc = spec.mix_bias[o];
                    for k in 0..spec.rules {
                        acc = acc + spec.mix_filters[o * spec.rules + k] * padded[(k * ph + y) * pw + x];
                    }
                    mixed[(o * ph + y) * pw + x] = NaiveFuzzyLayerSpec::<F>::lrelu(acc);
                }
            }
        }

        let inv = F::one() / F::c((s * s) as f64);
        let fmap = spec.feature_map_same(image, h, w);
        let base = item * spec.outputs * h * w;
        for o in 0..spec.outputs {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = F::zero();
                    for i in 0..s {
                        for j in 0..s {
                            acc = acc + mixed[(o * ph + y + i) * pw + x + j];
                        }
                    }
                    let g = acc * inv;
                    out.data_mut()[base + (o * h + y) * w + x] = g * fmap[(o * h + y) * w + x];
                }
            }
        }
    }
    Ok(out)
}

/// Loop-based FPO forward: strided memberships, normalization, 1x1 mix +
/// Leaky-ReLU (no padding or pooling), gating of the strided feature conv.
pub fn fpo_reference<F: Scalar>(
    input: &Tensor<F>,
    spec: &NaiveFuzzyLayerSpec<F>,
) -> Result<Tensor<F>> {
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::config("channel count does not match layer spec"));
    }
    let (oh, ow) = spec.check_grid(h, w)?;
    let mut out = Tensor::zeros(&[n, spec.outputs, oh, ow]);
    for item in 0..n {
        let image = &input.data()[item * c * h * w..(item + 1) * c * h * w];
        let memberships = spec.memberships(image, h, w);
        let firing = spec.normalize(&memberships, oh * ow);
        let fmap = spec.feature_map_strided(image, h, w, oh, ow);
        let base = item * spec.outputs * oh * ow;
        for o in 0..spec.outputs {
            for cell in 0..oh * ow {
                let mut acc = spec.mix_bias[o];
                for k in 0..spec.rules {
                    acc = acc + spec.mix_filters[o * spec.rules + k] * firing[k * oh * ow + cell];
                }
                let g = NaiveFuzzyLayerSpec::<F>::lrelu(acc);
                out.data_mut()[base + o * oh * ow + cell] = g * fmap[o * oh * ow + cell];
            }
        }
    }
    Ok(out)
}
