use rand::Rng;

use super::config::{GateKind, GtcnnConfig, Modulation};
use super::graph::{Eager, Graph};
use crate::error::{Error, Result};
use crate::kernels::ChannelStats;
use crate::tensor::{Real, Shape, Tensor4};

/// Exponential moving-average weight kept by the running statistics.
pub const BN_MOMENTUM: f64 = 0.9;

/// A named learned tensor. Per-channel vectors are stored as `(1, c, 1, 1)`
/// and serialized with rank 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor4<T>,
    vector: bool,
}

impl<T: Real> Param<T> {
    /// Dimensions as written to a weights file.
    pub fn file_dims(&self) -> Vec<usize> {
        if self.vector {
            vec![self.value.numel()]
        } else {
            self.value.shape().dims().to_vec()
        }
    }
}

/// Running statistics of one batch-norm unit.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState<T> {
    /// Module path, e.g. `layers.0.cbr.bn`.
    pub name: String,
    pub mean: Vec<T>,
    /// Unbiased running variance.
    pub var: Vec<T>,
    /// Number of committed training batches; zero means eval mode is unavailable.
    pub tracked: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; the forward returns them for [`GtcnnModel::commit_batch_stats`].
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    weight: usize,
    bias: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct CbrIds {
    conv: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
}

type DcbrIds = [CbrIds; 2];

#[derive(Clone, Debug)]
struct GtlIds {
    /// `max(stages, 1)` blocks, each followed by pooling when `s < stages`.
    encoders: Vec<DcbrIds>,
    bottleneck: DcbrIds,
    /// Indexed by the skip they consume.
    decoders: Vec<DcbrIds>,
    projection: Option<ConvIds>,
}

#[derive(Clone, Debug)]
struct GcbrIds {
    cbr: CbrIds,
    gtl: GtlIds,
}

/// Values produced by [`GtcnnModel::forward`].
#[derive(Debug)]
pub struct ForwardOutput<N, T> {
    /// `x - noise`.
    pub restored: N,
    /// Output-layer estimate of the noise.
    pub noise: N,
    /// Per GCBR layer gate tensors, only when recording.
    pub gates: Vec<N>,
    /// Per GCBR layer encoder skips `e_0..e_{S-1}` before modulation, only when recording.
    pub skips: Vec<Vec<N>>,
    /// Batch statistics per batch-norm unit (train mode only).
    pub batch_stats: Vec<Option<ChannelStats<T>>>,
}

/// Eval-mode result on plain tensors.
#[derive(Clone, Debug)]
pub struct Denoised<T> {
    pub restored: Tensor4<T>,
    /// `x - restored`, so that the residual identity holds exactly.
    pub noise: Tensor4<T>,
}

#[derive(Clone, Debug)]
pub struct GtcnnModel<T: Real = f32> {
    config: GtcnnConfig,
    params: Vec<Param<T>>,
    bn_states: Vec<BnState<T>>,
    input: ConvIds,
    layers: Vec<GcbrIds>,
    output: ConvIds,
}

struct Builder<'r, T, R: ?Sized> {
    params: Vec<Param<T>>,
    bn_states: Vec<BnState<T>>,
    rng: &'r mut R,
}

impl<T: Real, R: Rng + ?Sized> Builder<'_, T, R> {
    fn push(&mut self, name: String, value: Tensor4<T>, vector: bool) -> usize {
        self.params.push(Param { name, value, vector });
        self.params.len() - 1
    }

    fn vector(&mut self, name: String, c: usize, value: f64) -> usize {
        self.push(name, Tensor4::full(Shape::new(1, c, 1, 1), T::of(value)), true)
    }

    fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize, bias: bool) -> ConvIds {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let w = Tensor4::randn(Shape::new(c_out, c_in, k, k), std, self.rng);
        let weight = self.push(format!("{prefix}.weight"), w, false);
        let bias = bias.then(|| self.vector(format!("{prefix}.bias"), c_out, 0.0));
        ConvIds { weight, bias }
    }

    fn cbr(&mut self, prefix: &str, c_in: usize, c: usize) -> CbrIds {
        let conv = self.conv(&format!("{prefix}.conv"), c_in, c, 3, false).weight;
        let gamma = self.vector(format!("{prefix}.bn.weight"), c, 1.0);
        let beta = self.vector(format!("{prefix}.bn.bias"), c, 0.0);
        self.bn_states.push(BnState {
            name: format!("{prefix}.bn"),
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
            tracked: 0,
        });
        CbrIds {
            conv,
            gamma,
            beta,
            bn: self.bn_states.len() - 1,
        }
    }

    fn dcbr(&mut self, prefix: &str, c_in: usize, c: usize) -> DcbrIds {
        [
            self.cbr(&format!("{prefix}.0"), c_in, c),
            self.cbr(&format!("{prefix}.1"), c, c),
        ]
    }

    fn gtl(&mut self, prefix: &str, config: &GtcnnConfig) -> GtlIds {
        let c = config.channels;
        let encoders = (0..config.stages.max(1))
            .map(|s| self.dcbr(&format!("{prefix}.enc{s}"), c, c))
            .collect();
        let bottleneck = self.dcbr(&format!("{prefix}.bottleneck"), c, c);
        let mut decoders: Vec<Option<DcbrIds>> = vec![None; config.stages];
        for s in (0..config.stages).rev() {
            decoders[s] = Some(self.dcbr(&format!("{prefix}.dec{s}"), 2 * c, c));
        }
        let projection = config
            .use_1x1
            .then(|| self.conv(&format!("{prefix}.proj"), c, c, 1, true));
        GtlIds {
            encoders,
            bottleneck,
            decoders: decoders.into_iter().flatten().collect(),
            projection,
        }
    }
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Per-forward state threaded through the layer helpers.
struct Pass<'a, G: Graph<T>, T: Real> {
    p: &'a [G::Node],
    mode: Mode,
    stats: Vec<Option<ChannelStats<T>>>,
}

impl<T: Real> GtcnnModel<T> {
    /// Builds a freshly initialized network: fan-in scaled normal conv
    /// weights, unit BN scale, zero shifts and biases.
    pub fn new<R: Rng + ?Sized>(config: GtcnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut b = Builder {
            params: Vec::new(),
            bn_states: Vec::new(),
            rng,
        };
        let input = b.conv("input", config.c_in, c, 3, true);
        let layers = (0..config.depth)
            .map(|l| GcbrIds {
                cbr: b.cbr(&format!("layers.{l}.cbr"), c, c),
                gtl: b.gtl(&format!("layers.{l}.gtl"), &config),
            })
            .collect();
        let output = b.conv("output", c, config.c_in, 3, true);
        Ok(GtcnnModel {
            config,
            params: b.params,
            bn_states: b.bn_states,
            input,
            layers,
            output,
        })
    }

    pub fn config(&self) -> &GtcnnConfig {
        &self.config
    }

    /// Learned tensors in serialization order.
    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor4<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor4<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn bn_states(&self) -> &[BnState<T>] {
        &self.bn_states
    }

    pub fn bn_states_mut(&mut self) -> &mut [BnState<T>] {
        &mut self.bn_states
    }

    /// Number of learned scalars (running statistics excluded).
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// True once every batch-norm unit has running statistics.
    pub fn has_running_stats(&self) -> bool {
        self.bn_states.iter().all(|s| s.tracked > 0)
    }

    /// Introduces every parameter into `graph`, in [`Self::params`] order.
    pub fn bind<G: Graph<T>>(&self, graph: &mut G, trainable: bool) -> Vec<G::Node> {
        self.params
            .iter()
            .map(|p| graph.input(p.value.clone(), trainable))
            .collect()
    }

    /// Folds batch statistics from a train-mode forward into the running
    /// averages: `running = 0.9 running + 0.1 batch`, with the batch
    /// variance made unbiased.
    pub fn commit_batch_stats(&mut self, stats: &[Option<ChannelStats<T>>]) {
        let keep = T::of(BN_MOMENTUM);
        let take = T::one() - keep;
        for (state, batch) in self.bn_states.iter_mut().zip(stats) {
            let Some(batch) = batch else { continue };
            let unbias = if batch.count > 1 {
                T::of(batch.count as f64 / (batch.count - 1) as f64)
            } else {
                T::one()
            };
            for (m, &b) in state.mean.iter_mut().zip(&batch.mean) {
                *m = keep * *m + take * b;
            }
            for (v, &b) in state.var.iter_mut().zip(&batch.var) {
                *v = keep * *v + take * b * unbias;
            }
            state.tracked += 1;
        }
    }

    /// Runs the network on `x` (shape `(n, c_in, h, w)`) with parameters
    /// from [`Self::bind`] on the same graph. `record` keeps gates and
    /// skips in the output.
    pub fn forward<G: Graph<T>>(
        &self,
        graph: &mut G,
        params: &[G::Node],
        x: &G::Node,
        mode: Mode,
        modulation: Option<&Modulation>,
        record: bool,
    ) -> Result<ForwardOutput<G::Node, T>> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                dim: "parameter count",
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        let xs = graph.shape(x);
        if xs.c != self.config.c_in {
            return Err(Error::ShapeMismatch {
                op: "forward",
                dim: "image channels",
                expected: self.config.c_in,
                actual: xs.c,
            });
        }
        if let Some(m) = modulation {
            m.check(&self.config)?;
        }
        if mode == Mode::Eval {
            if let Some(s) = self.bn_states.iter().find(|s| s.tracked == 0) {
                return Err(Error::UninitializedStats { name: s.name.clone() });
            }
        }

        let mut pass: Pass<'_, G, T> = Pass {
            p: params,
            mode,
            stats: vec![None; self.bn_states.len()],
        };
        let mut gates = Vec::new();
        let mut skips = Vec::new();

        let mut f = self.conv(graph, &pass, self.input, x)?;
        f = graph.relu(&f);
        for (l, layer) in self.layers.iter().enumerate() {
            let shift = modulation
                .filter(|m| m.layer == l && m.lambda() != 0.0)
                .map(|m| (m.stage, T::of(m.lambda())));
            let mut layer_skips = Vec::new();
            let gate = self.gtl(
                graph,
                &mut pass,
                &layer.gtl,
                &f,
                shift,
                record.then_some(&mut layer_skips),
            )?;
            let theta = self.cbr(graph, &mut pass, layer.cbr, &f)?;
            f = graph.mul(&theta, &gate)?;
            if record {
                gates.push(gate);
                skips.push(layer_skips);
            }
        }
        let noise = self.conv(graph, &pass, self.output, &f)?;
        drop(f);
        let restored = graph.sub(x, &noise)?;
        Ok(ForwardOutput {
            restored,
            noise,
            gates,
            skips,
            batch_stats: pass.stats,
        })
    }

    /// Eval-mode forward without recording; returns `x - n` and the residual
    /// `x - (x - n)`.
    pub fn denoise(&self, x: &Tensor4<T>, modulation: Option<&Modulation>) -> Result<Denoised<T>> {
        let mut eager = Eager;
        let params = self.bind(&mut eager, false);
        let input = eager.input(x.clone(), false);
        let out = self.forward(&mut eager, &params, &input, Mode::Eval, modulation, false)?;
        drop(params);
        let restored = (*out.restored).clone();
        let noise_data = x.data().iter().zip(restored.data()).map(|(&a, &b)| a - b).collect();
        let noise = Tensor4::from_vec(x.shape(), noise_data)?;
        Ok(Denoised { restored, noise })
    }

    /// Same network with parameters and statistics converted to `U`.
    pub fn cast<U: Real>(&self) -> GtcnnModel<U> {
        GtcnnModel {
            config: self.config,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    vector: p.vector,
                })
                .collect(),
            bn_states: self
                .bn_states
                .iter()
                .map(|s| BnState {
                    name: s.name.clone(),
                    mean: s.mean.iter().map(|v| U::of(v.as_f64())).collect(),
                    var: s.var.iter().map(|v| U::of(v.as_f64())).collect(),
                    tracked: s.tracked,
                })
                .collect(),
            input: self.input,
            layers: self.layers.clone(),
            output: self.output,
        }
    }

    fn conv<G: Graph<T>>(&self, g: &mut G, pass: &Pass<'_, G, T>, ids: ConvIds, x: &G::Node) -> Result<G::Node> {
        let bias = ids.bias.map(|b| &pass.p[b]);
        g.conv2d(x, &pass.p[ids.weight], bias)
    }

    fn cbr<G: Graph<T>>(&self, g: &mut G, pass: &mut Pass<'_, G, T>, ids: CbrIds, x: &G::Node) -> Result<G::Node> {
        let mut h = g.conv2d(x, &pass.p[ids.conv], None)?;
        let state = &self.bn_states[ids.bn];
        let running = match pass.mode {
            Mode::Train => None,
            Mode::Eval => Some((state.mean.as_slice(), state.var.as_slice())),
        };
        let (normed, stats) = g.batch_norm(&h, &pass.p[ids.gamma], &pass.p[ids.beta], running)?;
        h = normed;
        if stats.is_some() {
            pass.stats[ids.bn] = stats;
        }
        Ok(g.relu(&h))
    }

    fn dcbr<G: Graph<T>>(&self, g: &mut G, pass: &mut Pass<'_, G, T>, ids: DcbrIds, x: &G::Node) -> Result<G::Node> {
        let h = self.cbr(g, pass, ids[0], x)?;
        self.cbr(g, pass, ids[1], &h)
    }

    fn gtl<G: Graph<T>>(
        &self,
        g: &mut G,
        pass: &mut Pass<'_, G, T>,
        ids: &GtlIds,
        f: &G::Node,
        shift: Option<(usize, T)>,
        record: Option<&mut Vec<G::Node>>,
    ) -> Result<G::Node> {
        let stages = self.config.stages;
        let fs = g.shape(f);
        let m = self.config.spatial_multiple();
        let (hp, wp) = (round_up(fs.h, m), round_up(fs.w, m));
        let padded = (hp, wp) != (fs.h, fs.w);

        let mut h = if padded { g.pad_reflect(f, hp, wp)? } else { f.clone() };
        let mut encoded = Vec::with_capacity(stages);
        for (s, &enc) in ids.encoders.iter().enumerate() {
            h = self.dcbr(g, pass, enc, &h)?;
            if s < stages {
                encoded.push(h.clone());
                h = g.maxpool2x2(&h)?;
            }
        }
        h = self.dcbr(g, pass, ids.bottleneck, &h)?;

        let mut recorded = Vec::with_capacity(stages);
        for s in (0..stages).rev() {
            h = g.upsample_nearest2x(&h);
            let mut e = encoded.pop().expect("one skip per stage");
            if record.is_some() {
                recorded.push(e.clone());
            }
            if let Some((stage, lambda)) = shift {
                if stage == s {
                    e = g.add_scalar(&e, lambda);
                }
            }
            h = g.concat_channels(&h, &e)?;
            drop(e);
            h = self.dcbr(g, pass, ids.decoders[s], &h)?;
        }
        if let Some(out) = record {
            recorded.reverse();
            *out = recorded;
        }

        if let Some(proj) = ids.projection {
            h = self.conv(g, pass, proj, &h)?;
        }
        h = match self.config.gate {
            GateKind::ChannelSoftmax => g.softmax_channels(&h),
            GateKind::Sigmoid => g.sigmoid(&h),
        };
        if padded {
            h = g.crop(&h, fs.h, fs.w)?;
        }
        Ok(h)
    }
}
