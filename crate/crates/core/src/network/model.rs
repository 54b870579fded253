use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, TAPS};
use super::real::Real;
use super::{adam_update, EvidenceActivation, NetworkConfig, OptimizerConfig};
use crate::error::{Error, Result};
use crate::evidential::{evidential_loss, ClassWeights, EvidentialOutput};

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// One gradient buffer per parameter tensor, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<Vec<T>>);

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        Self(params.iter().map(|p| vec![T::ZERO; p.data.len()]).collect())
    }

    pub fn scale(&mut self, factor: T) {
        self.0.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.0.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIdx {
    weight: usize,
}

impl ConvIdx {
    fn bias(self) -> usize {
        self.weight + 1
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    a: ConvIdx,
    b: ConvIdx,
    proj: Option<ConvIdx>,
    in_channels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    stem: ConvIdx,
    blocks: [BlockIdx; 2],
    head: ConvIdx,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
}

fn build_layout(config: &NetworkConfig) -> (Layout, Vec<ParamSpec>) {
    let mut specs = Vec::new();
    let mut add = |prefix: &str, shape: Vec<usize>, fan_in: usize| -> ConvIdx {
        let weight = specs.len();
        let out = shape[0];
        specs.push(ParamSpec {
            name: format!("{prefix}.weight"),
            shape,
            fan_in,
        });
        specs.push(ParamSpec {
            name: format!("{prefix}.bias"),
            shape: vec![out],
            fan_in,
        });
        ConvIdx { weight }
    };
    let (c1, cb, k) = (config.stage1_channels, config.block_channels, config.classes);
    let stem = add("stem.conv", vec![c1, 1, 3, 3, 3], TAPS);
    let mut block = |name: &str, cin: usize, project: bool| BlockIdx {
        a: add(&format!("{name}.conv_a"), vec![cb, cin, 3, 3, 3], cin * TAPS),
        b: add(&format!("{name}.conv_b"), vec![cb, cb, 3, 3, 3], cb * TAPS),
        proj: project.then(|| add(&format!("{name}.skip"), vec![cb, cin, 1, 1, 1], cin)),
        in_channels: cin,
    };
    let b1 = block("block1", c1, config.has_projection());
    let b2 = block("block2", cb, false);
    let head = add("head.dense", vec![k, cb], cb);
    (
        Layout {
            stem,
            blocks: [b1, b2],
            head,
        },
        specs,
    )
}

/// Initial bias of every evidence unit. Pooled features barely vary between
/// inputs at initialization, so a zero bias leaves each ReLU evidence unit
/// either active for all inputs or for none; a unit that starts inactive
/// never receives a gradient.
pub const HEAD_BIAS_INIT: f64 = 1.0;

/// Network parameters, Adam moments and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub config: NetworkConfig,
    pub seed: u64,
    pub step: u64,
    pub params: Vec<Tensor<T>>,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

struct BlockTrace<T> {
    input: Vec<T>,
    a_pre: Vec<T>,
    a_act: Vec<T>,
    sum_pre: Vec<T>,
    pool_idx: Vec<u32>,
    side: usize,
}

struct Trace<T> {
    stem_pre: Vec<T>,
    stem_pool_idx: Vec<u32>,
    blocks: Vec<BlockTrace<T>>,
    features: Vec<T>,
    logits: Vec<T>,
    evidence: Vec<T>,
}

fn check_finite<T: Real>(values: &[T], layer: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

fn weight_and_bias<T>(grads: &mut [Vec<T>], idx: ConvIdx) -> (&mut [T], &mut [T]) {
    let (w, b) = grads[idx.weight..=idx.bias()].split_at_mut(1);
    (&mut w[0], &mut b[0])
}

impl<T: Real> ModelState<T> {
    /// Fresh parameters: fan-in scaled uniform weights `U(±√(6/fan_in))`
    /// drawn from `seed`, zero moments, zero biases except the evidence
    /// head, whose biases start at [`HEAD_BIAS_INIT`].
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (_, specs) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<Tensor<T>> = specs
            .into_iter()
            .map(|spec| {
                let len = spec.shape.iter().product();
                let data = if spec.name == "head.dense.bias" {
                    vec![T::from_f64(HEAD_BIAS_INIT); len]
                } else if spec.name.ends_with(".bias") {
                    vec![T::ZERO; len]
                } else {
                    let bound = libm::sqrt(6.0 / spec.fan_in as f64);
                    (0..len).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect()
                };
                Tensor {
                    name: spec.name,
                    shape: spec.shape,
                    data,
                }
            })
            .collect();
        let zeros: Vec<Vec<T>> = params.iter().map(|p| vec![T::ZERO; p.data.len()]).collect();
        Ok(Self {
            config,
            seed,
            step: 0,
            params,
            first_moment: zeros.clone(),
            second_moment: zeros,
        })
    }

    /// Rebuilds a state from stored tensors, checking names and shapes
    /// against the configuration.
    pub fn from_parts(
        config: NetworkConfig,
        seed: u64,
        step: u64,
        params: Vec<Tensor<T>>,
        first_moment: Vec<Vec<T>>,
        second_moment: Vec<Vec<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let (_, specs) = build_layout(&config);
        if specs.len() != params.len() || first_moment.len() != params.len() || second_moment.len() != params.len() {
            return Err(Error::Shape {
                context: "parameter tensor count",
                expected: specs.len(),
                found: params.len(),
            });
        }
        for (i, (spec, p)) in specs.iter().zip(&params).enumerate() {
            if spec.name != p.name || spec.shape != p.shape {
                return Err(Error::Invalid(format!(
                    "tensor {i}: expected {} {:?}, found {} {:?}",
                    spec.name, spec.shape, p.name, p.shape
                )));
            }
            let len: usize = spec.shape.iter().product();
            for (context, found) in [
                ("parameter data", p.data.len()),
                ("first moment", first_moment[i].len()),
                ("second moment", second_moment[i].len()),
            ] {
                if found != len {
                    return Err(Error::Shape {
                        context,
                        expected: len,
                        found,
                    });
                }
            }
            for buf in [&p.data, &first_moment[i], &second_moment[i]] {
                check_finite(buf, "stored tensor")?;
            }
        }
        Ok(Self {
            config,
            seed,
            step,
            params,
            first_moment,
            second_moment,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    fn layout(&self) -> Layout {
        build_layout(&self.config).0
    }

    fn data(&self, i: usize) -> &[T] {
        &self.params[i].data
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        let expected = self.config.input_len();
        if input.len() != expected {
            return Err(Error::Shape {
                context: "network input",
                expected,
                found: input.len(),
            });
        }
        check_finite(input, "input")
    }

    fn block_forward(&self, idx: &BlockIdx, x: Vec<T>, side: usize) -> (Vec<T>, BlockTrace<T>) {
        let cb = self.config.block_channels;
        let cin = idx.in_channels;
        let a_pre = ops::conv3_forward(&x, cin, side, self.data(idx.a.weight), self.data(idx.a.bias()), cb);
        let a_act = ops::relu(&a_pre);
        let mut sum_pre = ops::conv3_forward(&a_act, cb, side, self.data(idx.b.weight), self.data(idx.b.bias()), cb);
        match idx.proj {
            Some(p) => {
                let skip = ops::conv1_forward(&x, cin, side.pow(3), self.data(p.weight), self.data(p.bias()), cb);
                sum_pre.iter_mut().zip(&skip).for_each(|(s, k)| *s += *k);
            }
            None => sum_pre.iter_mut().zip(&x).for_each(|(s, k)| *s += *k),
        }
        let out = ops::relu(&sum_pre);
        let (pooled, pool_idx) = ops::maxpool2_forward(&out, cb, side);
        let trace = BlockTrace {
            input: x,
            a_pre,
            a_act,
            sum_pre,
            pool_idx,
            side,
        };
        (pooled, trace)
    }

    fn forward_trace(&self, input: &[T]) -> Result<Trace<T>> {
        self.check_input(input)?;
        let layout = self.layout();
        let cfg = &self.config;
        let side = cfg.input_side;

        let stem_pre = ops::conv3_forward(
            input,
            1,
            side,
            self.data(layout.stem.weight),
            self.data(layout.stem.bias()),
            cfg.stage1_channels,
        );
        check_finite(&stem_pre, "stage1.conv")?;
        let (mut x, stem_pool_idx) = ops::maxpool2_forward(&ops::relu(&stem_pre), cfg.stage1_channels, side);

        let mut blocks = Vec::with_capacity(2);
        let mut side = side / 2;
        for (b, idx) in layout.blocks.iter().enumerate() {
            let (pooled, trace) = self.block_forward(idx, x, side);
            check_finite(&pooled, if b == 0 { "stage2.block1" } else { "stage2.block2" })?;
            blocks.push(trace);
            x = pooled;
            side /= 2;
        }
        debug_assert_eq!(x.len(), cfg.block_channels * side.pow(3));

        let features = ops::global_avg_pool(&x, cfg.block_channels);
        let w = self.data(layout.head.weight);
        let bias = self.data(layout.head.bias());
        let logits: Vec<T> = (0..cfg.classes)
            .map(|k| {
                let row = &w[k * cfg.block_channels..(k + 1) * cfg.block_channels];
                row.iter().zip(&features).fold(bias[k], |acc, (a, f)| acc + *a * *f)
            })
            .collect();
        let evidence: Vec<T> = logits
            .iter()
            .map(|z| match cfg.activation {
                EvidenceActivation::Relu => z.max(T::ZERO),
                EvidenceActivation::Softplus => softplus(*z),
            })
            .collect();
        check_finite(&evidence, "stage3.head")?;
        Ok(Trace {
            stem_pre,
            stem_pool_idx,
            blocks,
            features,
            logits,
            evidence,
        })
    }

    /// Non-negative evidence for one cubic input.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_trace(input)?.evidence)
    }

    /// Forward pass followed by the Dirichlet view of the evidence.
    pub fn predict(&self, input: &[T]) -> Result<EvidentialOutput> {
        let evidence: Vec<f64> = self.forward(input)?.into_iter().map(Real::to_f64).collect();
        EvidentialOutput::from_evidence(&evidence)
    }

    fn block_backward(&self, idx: &BlockIdx, trace: &BlockTrace<T>, grad_pooled: &[T], grads: &mut [Vec<T>]) -> Vec<T> {
        let cb = self.config.block_channels;
        let cin = idx.in_channels;
        let side = trace.side;
        let vol = side.pow(3);

        let mut g_sum = ops::maxpool2_backward(&trace.pool_idx, grad_pooled, cb * vol);
        ops::relu_backward(&trace.sum_pre, &mut g_sum);

        let mut g_a = vec![T::ZERO; cb * vol];
        let (gw, gb) = weight_and_bias(grads, idx.b);
        ops::conv3_backward(&trace.a_act, cb, side, self.data(idx.b.weight), cb, &g_sum, gw, gb, Some(&mut g_a));
        ops::relu_backward(&trace.a_pre, &mut g_a);

        let mut g_x = vec![T::ZERO; cin * vol];
        let (gw, gb) = weight_and_bias(grads, idx.a);
        ops::conv3_backward(&trace.input, cin, side, self.data(idx.a.weight), cb, &g_a, gw, gb, Some(&mut g_x));

        match idx.proj {
            Some(p) => {
                let (gw, gb) = weight_and_bias(grads, p);
                ops::conv1_backward(&trace.input, cin, vol, self.data(p.weight), cb, &g_sum, gw, gb, &mut g_x);
            }
            None => g_x.iter_mut().zip(&g_sum).for_each(|(g, s)| *g += *s),
        }
        g_x
    }

    /// Chain rule from ∂L/∂evidence down to every parameter, accumulated
    /// into `grads`.
    fn backprop(&self, input: &[T], trace: &Trace<T>, grad_evidence: &[T], grads: &mut Gradients<T>) {
        let layout = self.layout();
        let cfg = &self.config;
        let cb = cfg.block_channels;
        let grads = &mut grads.0[..];

        let g_logits: Vec<T> = trace
            .logits
            .iter()
            .zip(grad_evidence)
            .map(|(z, g)| match cfg.activation {
                EvidenceActivation::Relu => {
                    if *z > T::ZERO {
                        *g
                    } else {
                        T::ZERO
                    }
                }
                EvidenceActivation::Softplus => *g * sigmoid(*z),
            })
            .collect();

        let mut g_features = vec![T::ZERO; cb];
        {
            let w = self.data(layout.head.weight);
            let (gw, gb) = weight_and_bias(grads, layout.head);
            for (k, gl) in g_logits.iter().enumerate() {
                gb[k] += *gl;
                for c in 0..cb {
                    gw[k * cb + c] += *gl * trace.features[c];
                    g_features[c] += *gl * w[k * cb + c];
                }
            }
        }

        let last_side = cfg.input_side / 8;
        let mut g = ops::global_avg_pool_backward(&g_features, last_side.pow(3));
        for (idx, bt) in layout.blocks.iter().zip(&trace.blocks).rev() {
            g = self.block_backward(idx, bt, &g, grads);
        }

        let side = cfg.input_side;
        let c1 = cfg.stage1_channels;
        let mut g_stem = ops::maxpool2_backward(&trace.stem_pool_idx, &g, c1 * side.pow(3));
        ops::relu_backward(&trace.stem_pre, &mut g_stem);
        let (gw, gb) = weight_and_bias(grads, layout.stem);
        ops::conv3_backward(input, 1, side, self.data(layout.stem.weight), c1, &g_stem, gw, gb, None);
    }

    /// Parameter gradients for an arbitrary upstream gradient on the
    /// evidence vector.
    pub fn backward_from_evidence_grad(&self, input: &[T], grad_evidence: &[f64]) -> Result<Gradients<T>> {
        if grad_evidence.len() != self.config.classes {
            return Err(Error::Shape {
                context: "evidence gradient",
                expected: self.config.classes,
                found: grad_evidence.len(),
            });
        }
        let trace = self.forward_trace(input)?;
        let g: Vec<T> = grad_evidence.iter().map(|v| T::from_f64(*v)).collect();
        let mut grads = Gradients::zeros_like(&self.params);
        self.backprop(input, &trace, &g, &mut grads);
        Ok(grads)
    }

    fn accumulate(&self, input: &[T], class: usize, weights: &ClassWeights, grads: &mut Gradients<T>) -> Result<f64> {
        let trace = self.forward_trace(input)?;
        let evidence: Vec<f64> = trace.evidence.iter().map(|v| v.to_f64()).collect();
        let loss = evidential_loss(&evidence, class, weights)?;
        let g: Vec<T> = loss.grad_evidence.iter().map(|v| T::from_f64(*v)).collect();
        self.backprop(input, &trace, &g, grads);
        Ok(loss.value)
    }

    /// Loss of one subject and the gradient of that loss for every parameter.
    pub fn backward(&self, input: &[T], class: usize, weights: &ClassWeights) -> Result<(f64, Gradients<T>)> {
        let mut grads = Gradients::zeros_like(&self.params);
        let value = self.accumulate(input, class, weights, &mut grads)?;
        Ok((value, grads))
    }

    /// Mean loss and mean gradient over a batch of `(input, class)` pairs.
    pub fn batch_backward(&self, batch: &[(&[T], usize)], weights: &ClassWeights) -> Result<(f64, Gradients<T>)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let mut grads = Gradients::zeros_like(&self.params);
        let mut total = 0.0;
        for (input, class) in batch {
            total += self.accumulate(input, *class, weights, &mut grads)?;
        }
        let n = batch.len() as f64;
        grads.scale(T::from_f64(1.0 / n));
        for g in &grads.0 {
            check_finite(g, "gradient")?;
        }
        Ok((total / n, grads))
    }

    /// One bias-corrected Adam update of every parameter tensor.
    pub fn adam_step(&mut self, grads: &Gradients<T>, config: &OptimizerConfig) -> Result<()> {
        config.validate()?;
        if grads.0.len() != self.params.len() {
            return Err(Error::Shape {
                context: "gradient tensor count",
                expected: self.params.len(),
                found: grads.0.len(),
            });
        }
        for (p, g) in self.params.iter().zip(&grads.0) {
            if p.data.len() != g.len() {
                return Err(Error::Shape {
                    context: "gradient tensor",
                    expected: p.data.len(),
                    found: g.len(),
                });
            }
        }
        self.step += 1;
        for (i, p) in self.params.iter_mut().enumerate() {
            adam_update(
                &mut p.data,
                &grads.0[i],
                &mut self.first_moment[i],
                &mut self.second_moment[i],
                self.step,
                config,
            );
        }
        Ok(())
    }

    /// Converts parameters and moments to another scalar type.
    pub fn cast<U: Real>(&self) -> ModelState<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        ModelState {
            config: self.config,
            seed: self.seed,
            step: self.step,
            params: self
                .params
                .iter()
                .map(|p| Tensor {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: conv(&p.data),
                })
                .collect(),
            first_moment: self.first_moment.iter().map(conv).collect(),
            second_moment: self.second_moment.iter().map(conv).collect(),
        }
    }
}

fn softplus<T: Real>(z: T) -> T {
    if z > T::from_f64(20.0) {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid<T: Real>(z: T) -> T {
    T::ONE / (T::ONE + (-z).exp())
}
