//! Per-modality encoder stacks: four VGG- or ResNet-style blocks of 1D
//! convolutions, exposing each stage output so attention blocks can be
//! inserted after stages 1-3.
//!
//! A VGG block is conv+ReLU, conv+ReLU, maxpool(2, 2), with valid (zero)
//! padding. A ResNet block is two residual units of three convs, each conv
//! followed by batch norm and ReLU; ResNet convs pad to preserve length so
//! only strides shorten the time axis, and the listed stride pair applies
//! to the first conv of each unit. A unit's skip path is the identity when
//! shapes match and a kernel-1 strided projection conv otherwise, with the
//! unit output ReLU(main + skip).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init, BatchNormState, Binding, Mode, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Vgg,
    Resnet,
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EncoderKind::Vgg => write!(f, "vgg"),
            EncoderKind::Resnet => write!(f, "resnet"),
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vgg" => Ok(EncoderKind::Vgg),
            "resnet" => Ok(EncoderKind::Resnet),
            other => Err(Error::config(format!(
                "unknown encoder kind '{other}' (expected vgg or resnet)"
            ))),
        }
    }
}

/// (kernel size, filter count, stride)
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
}

impl ConvSpec {
    const fn new(kernel: usize, filters: usize, stride: usize) -> Self {
        ConvSpec {
            kernel,
            filters,
            stride,
        }
    }
}

/// Architecture of one encoder stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockSpec {
    Vgg {
        stage: usize,
        conv1: ConvSpec,
        conv2: ConvSpec,
        /// (window, stride)
        pool: (usize, usize),
    },
    Resnet {
        stage: usize,
        /// Three convs of one residual unit; the stride field of the first
        /// conv is replaced per unit by `unit_strides`.
        convs: [ConvSpec; 3],
        /// Residual units per block.
        repeat: usize,
        /// First-conv stride of each unit.
        unit_strides: [usize; 2],
    },
}

impl BlockSpec {
    pub fn stage(&self) -> usize {
        match self {
            BlockSpec::Vgg { stage, .. } | BlockSpec::Resnet { stage, .. } => *stage,
        }
    }

    /// Channel count leaving this stage.
    pub fn out_channels(&self) -> usize {
        match self {
            BlockSpec::Vgg { conv2, .. } => conv2.filters,
            BlockSpec::Resnet { convs, .. } => convs[2].filters,
        }
    }

    /// Scale every filter count (reduced-width experiment profiles).
    pub fn scaled(&self, scale: f64) -> BlockSpec {
        let s = |f: usize| (((f as f64) * scale).round() as usize).max(1);
        match self {
            BlockSpec::Vgg {
                stage,
                conv1,
                conv2,
                pool,
            } => BlockSpec::Vgg {
                stage: *stage,
                conv1: ConvSpec::new(conv1.kernel, s(conv1.filters), conv1.stride),
                conv2: ConvSpec::new(conv2.kernel, s(conv2.filters), conv2.stride),
                pool: *pool,
            },
            BlockSpec::Resnet {
                stage,
                convs,
                repeat,
                unit_strides,
            } => BlockSpec::Resnet {
                stage: *stage,
                convs: [
                    ConvSpec::new(convs[0].kernel, s(convs[0].filters), convs[0].stride),
                    ConvSpec::new(convs[1].kernel, s(convs[1].filters), convs[1].stride),
                    ConvSpec::new(convs[2].kernel, s(convs[2].filters), convs[2].stride),
                ],
                repeat: *repeat,
                unit_strides: *unit_strides,
            },
        }
    }
}

/// The four VGG stage specs: (64,32), (32,64), (17,128), (7,256) kernels
/// and filters, conv strides 1 then 3, pooling 2/2.
pub fn vgg_block_specs() -> [BlockSpec; 4] {
    let stage = |stage, kernel, filters| BlockSpec::Vgg {
        stage,
        conv1: ConvSpec::new(kernel, filters, 1),
        conv2: ConvSpec::new(kernel, filters, 3),
        pool: (2, 2),
    };
    [
        stage(1, 64, 32),
        stage(2, 32, 64),
        stage(3, 17, 128),
        stage(4, 7, 256),
    ]
}

/// The four ResNet stage specs: bottleneck-style triples repeated twice,
/// with unit strides [7, 1] at stage 1 and [3, 1] afterwards.
pub fn resnet_block_specs() -> [BlockSpec; 4] {
    let stage = |stage, narrow, wide, kernel, stride0| BlockSpec::Resnet {
        stage,
        convs: [
            ConvSpec::new(1, narrow, 1),
            ConvSpec::new(kernel, narrow, 1),
            ConvSpec::new(1, wide, 1),
        ],
        repeat: 2,
        unit_strides: [stride0, 1],
    };
    [
        stage(1, 32, 64, 64, 7),
        stage(2, 64, 128, 32, 3),
        stage(3, 128, 256, 17, 3),
        stage(4, 256, 512, 7, 3),
    ]
}

pub fn block_specs(kind: EncoderKind) -> [BlockSpec; 4] {
    match kind {
        EncoderKind::Vgg => vgg_block_specs(),
        EncoderKind::Resnet => resnet_block_specs(),
    }
}

// ---------------------------------------------------------------------------
// Length propagation
// ---------------------------------------------------------------------------

/// Geometry of one length-changing layer.
#[derive(Debug, Clone, Copy)]
pub enum LayerGeom {
    Conv {
        kernel: usize,
        stride: usize,
        pad_total: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
}

impl LayerGeom {
    /// Output length, or None on underflow.
    pub fn apply(&self, l: usize) -> Option<usize> {
        match *self {
            LayerGeom::Conv {
                kernel,
                stride,
                pad_total,
            } => {
                let padded = l + pad_total;
                if padded < kernel {
                    None
                } else {
                    Some((padded - kernel) / stride + 1)
                }
            }
            LayerGeom::Pool { window, stride } => {
                if window > l {
                    None
                } else {
                    Some((l - window) / stride + 1)
                }
            }
        }
    }
}

/// Length-changing layers of one stage, in order. ResNet skip projections
/// share the main path's stride geometry and never disagree on length.
pub fn stage_geometry(kind: EncoderKind, stage: usize) -> Vec<LayerGeom> {
    let spec = &block_specs(kind)[stage - 1];
    match spec {
        BlockSpec::Vgg {
            conv1, conv2, pool, ..
        } => vec![
            LayerGeom::Conv {
                kernel: conv1.kernel,
                stride: conv1.stride,
                pad_total: 0,
            },
            LayerGeom::Conv {
                kernel: conv2.kernel,
                stride: conv2.stride,
                pad_total: 0,
            },
            LayerGeom::Pool {
                window: pool.0,
                stride: pool.1,
            },
        ],
        BlockSpec::Resnet {
            convs,
            repeat,
            unit_strides,
            ..
        } => {
            let mut layers = Vec::new();
            for unit in 0..*repeat {
                for (ci, conv) in convs.iter().enumerate() {
                    let stride = if ci == 0 { unit_strides[unit] } else { 1 };
                    layers.push(LayerGeom::Conv {
                        kernel: conv.kernel,
                        stride,
                        pad_total: conv.kernel - 1, // length-preserving except stride
                    });
                }
            }
            layers
        }
    }
}

/// Propagate an input length through all four stages, returning the length
/// after each stage. Errors name the failing stage and the minimum
/// workable input length.
pub fn stage_output_lengths(kind: EncoderKind, l_in: usize) -> Result<[usize; 4]> {
    let mut lengths = [0usize; 4];
    let mut l = l_in;
    for stage in 1..=4 {
        for geom in stage_geometry(kind, stage) {
            l = geom.apply(l).ok_or_else(|| {
                Error::config(format!(
                    "{kind} input length {l_in} underflows at stage {stage}; minimum input length is {}",
                    min_input_length(kind)
                ))
            })?;
        }
        lengths[stage - 1] = l;
    }
    Ok(lengths)
}

/// Smallest input length for which all four stages emit at least one
/// position. Found by bisection; stage lengths are monotone in the input.
pub fn min_input_length(kind: EncoderKind) -> usize {
    let ok = |l: usize| l >= 1 && full_propagation_ok(kind, l);
    let mut hi = 1usize;
    while !ok(hi) {
        hi *= 2;
        assert!(hi < 1 << 32, "length propagation never succeeds");
    }
    let mut lo = 1usize; // lo - 1 is always a failure witness
    if ok(lo) {
        return lo;
    }
    // Invariant: !ok(lo), ok(hi).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn full_propagation_ok(kind: EncoderKind, l_in: usize) -> bool {
    let mut l = l_in;
    for stage in 1..=4 {
        for geom in stage_geometry(kind, stage) {
            match geom.apply(l) {
                Some(next) => l = next,
                None => return false,
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Parameterized blocks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvLayer {
    fn build(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        spec: ConvSpec,
        stride: usize,
        preserve_length: bool,
    ) -> Self {
        let kernel = params.add(
            format!("{name}.kernel"),
            init::conv_kernel(rng, spec.filters, in_channels, spec.kernel),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[spec.filters]));
        let (pad_left, pad_right) = if preserve_length {
            let total = spec.kernel - 1;
            (total / 2, total - total / 2)
        } else {
            (0, 0)
        };
        ConvLayer {
            kernel,
            bias,
            stride,
            pad_left,
            pad_right,
            in_channels,
            out_channels: spec.filters,
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        bindings: &mut Vec<Binding>,
        x: Var,
    ) -> Result<Var> {
        let padded = tape.pad1d(x, self.pad_left, self.pad_right)?;
        let k = params.bind(tape, self.kernel);
        let b = params.bind(tape, self.bias);
        bindings.extend([k, b]);
        tape.conv1d(padded, k.var, b.var, self.stride, 0)
    }
}

#[derive(Debug, Clone)]
struct BatchNormLayer {
    gamma: ParamId,
    beta: ParamId,
    state: BatchNormState,
}

impl BatchNormLayer {
    fn build(params: &mut ParamSet, name: &str, channels: usize) -> Self {
        BatchNormLayer {
            gamma: params.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            state: BatchNormState::new(channels, 0.9, 1e-5),
        }
    }

    fn forward(
        &mut self,
        tape: &mut Tape,
        params: &ParamSet,
        bindings: &mut Vec<Binding>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let g = params.bind(tape, self.gamma);
        let b = params.bind(tape, self.beta);
        bindings.extend([g, b]);
        tape.batchnorm1d(x, g.var, b.var, &mut self.state, mode)
    }
}

#[derive(Debug, Clone)]
pub struct ResidualUnit {
    convs: Vec<(ConvLayer, BatchNormLayer)>,
    /// Projection conv when input/output shapes differ; identity otherwise.
    skip: Option<ConvLayer>,
}

#[derive(Debug, Clone)]
pub enum Block {
    Vgg {
        conv1: ConvLayer,
        conv2: ConvLayer,
        pool: (usize, usize),
    },
    Resnet {
        units: Vec<ResidualUnit>,
    },
}

/// Construct the parameterized block for one stage.
pub fn build_block(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    name: &str,
    spec: &BlockSpec,
    in_channels: usize,
) -> Result<Block> {
    if in_channels == 0 {
        return Err(Error::config("block input channels must be >= 1"));
    }
    match spec {
        BlockSpec::Vgg {
            conv1, conv2, pool, ..
        } => Ok(Block::Vgg {
            conv1: ConvLayer::build(
                params,
                rng,
                &format!("{name}.conv1"),
                in_channels,
                *conv1,
                conv1.stride,
                false,
            ),
            conv2: ConvLayer::build(
                params,
                rng,
                &format!("{name}.conv2"),
                conv1.filters,
                *conv2,
                conv2.stride,
                false,
            ),
            pool: *pool,
        }),
        BlockSpec::Resnet {
            convs,
            repeat,
            unit_strides,
            ..
        } => {
            let mut units = Vec::with_capacity(*repeat);
            let mut unit_in = in_channels;
            for u in 0..*repeat {
                let stride0 = unit_strides[u];
                let mut layer_in = unit_in;
                let mut layers = Vec::with_capacity(convs.len());
                for (ci, conv) in convs.iter().enumerate() {
                    let stride = if ci == 0 { stride0 } else { 1 };
                    let cname = format!("{name}.unit{}.conv{}", u + 1, ci + 1);
                    let layer =
                        ConvLayer::build(params, rng, &cname, layer_in, *conv, stride, true);
                    let bn = BatchNormLayer::build(params, &format!("{cname}.bn"), conv.filters);
                    layer_in = conv.filters;
                    layers.push((layer, bn));
                }
                let out_channels = convs[2].filters;
                // Identity skip when channel count and stride both preserve
                // the shape; otherwise a kernel-1 projection with the unit's
                // stride.
                let skip = if unit_in == out_channels && stride0 == 1 {
                    None
                } else {
                    Some(ConvLayer::build(
                        params,
                        rng,
                        &format!("{name}.unit{}.skip", u + 1),
                        unit_in,
                        ConvSpec::new(1, out_channels, stride0),
                        stride0,
                        false,
                    ))
                };
                units.push(ResidualUnit { convs: layers, skip });
                unit_in = out_channels;
            }
            Ok(Block::Resnet { units })
        }
    }
}

impl Block {
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        params: &ParamSet,
        bindings: &mut Vec<Binding>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        match self {
            Block::Vgg { conv1, conv2, pool } => {
                let h = conv1.forward(tape, params, bindings, x)?;
                let h = tape.relu(h);
                let h = conv2.forward(tape, params, bindings, h)?;
                let h = tape.relu(h);
                tape.maxpool1d(h, pool.0, pool.1)
            }
            Block::Resnet { units } => {
                let mut h = x;
                for unit in units.iter_mut() {
                    let input = h;
                    let mut main = input;
                    for (conv, bn) in unit.convs.iter_mut() {
                        main = conv.forward(tape, params, bindings, main)?;
                        main = bn.forward(tape, params, bindings, main, mode)?;
                        main = tape.relu(main);
                    }
                    let skip = match &unit.skip {
                        Some(proj) => proj.forward(tape, params, bindings, input)?,
                        None => input,
                    };
                    let sum = tape.add(main, skip)?;
                    h = tape.relu(sum);
                }
                Ok(h)
            }
        }
    }

    pub(crate) fn bn_states(&self) -> Vec<&BatchNormState> {
        match self {
            Block::Vgg { .. } => Vec::new(),
            Block::Resnet { units } => units
                .iter()
                .flat_map(|u| u.convs.iter().map(|(_, bn)| &bn.state))
                .collect(),
        }
    }

    pub(crate) fn bn_states_mut(&mut self) -> Vec<&mut BatchNormState> {
        match self {
            Block::Vgg { .. } => Vec::new(),
            Block::Resnet { units } => units
                .iter_mut()
                .flat_map(|u| u.convs.iter_mut().map(|(_, bn)| &mut bn.state))
                .collect(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Block::Vgg { conv2, .. } => conv2.out_channels,
            Block::Resnet { units } => units
                .last()
                .map(|u| u.convs.last().unwrap().0.out_channels)
                .unwrap(),
        }
    }
}

/// Four parameterized stages for one modality branch. Input channel counts
/// per stage are supplied by the caller, since upstream concatenations
/// widen them.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub kind: EncoderKind,
    blocks: Vec<Block>,
    stage_in_channels: [usize; 4],
}

impl EncoderStack {
    pub fn build(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        kind: EncoderKind,
        filter_scale: f64,
        stage_in_channels: [usize; 4],
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(4);
        for (i, spec) in block_specs(kind).iter().enumerate() {
            let spec = if (filter_scale - 1.0).abs() < f64::EPSILON {
                spec.clone()
            } else {
                spec.scaled(filter_scale)
            };
            blocks.push(build_block(
                params,
                rng,
                &format!("{name}.stage{}", i + 1),
                &spec,
                stage_in_channels[i],
            )?);
        }
        Ok(EncoderStack {
            kind,
            blocks,
            stage_in_channels,
        })
    }

    /// Run one stage (1-based). The input's channel extent must match the
    /// stage's derived input channels.
    pub fn forward_stage(
        &mut self,
        tape: &mut Tape,
        params: &ParamSet,
        bindings: &mut Vec<Binding>,
        stage: usize,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        if !(1..=4).contains(&stage) {
            return Err(Error::config(format!("stage {stage} out of range 1..=4")));
        }
        let shape = tape.shape(x);
        let channels = shape[shape.len() - 2];
        if channels != self.stage_in_channels[stage - 1] {
            return Err(Error::config(format!(
                "stage {stage} expects {} input channels, got {channels}",
                self.stage_in_channels[stage - 1]
            )));
        }
        self.blocks[stage - 1].forward(tape, params, bindings, x, mode)
    }

    pub fn bn_states(&self) -> Vec<&BatchNormState> {
        self.blocks.iter().flat_map(|b| b.bn_states()).collect()
    }

    pub fn bn_states_mut(&mut self) -> Vec<&mut BatchNormState> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.bn_states_mut())
            .collect()
    }

    pub fn stage_out_channels(&self, stage: usize) -> usize {
        self.blocks[stage - 1].out_channels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_constants_vgg() {
        let specs = vgg_block_specs();
        let expect = [(64, 32), (32, 64), (17, 128), (7, 256)];
        for (spec, (k, f)) in specs.iter().zip(expect) {
            match spec {
                BlockSpec::Vgg {
                    conv1, conv2, pool, ..
                } => {
                    assert_eq!((conv1.kernel, conv1.filters, conv1.stride), (k, f, 1));
                    assert_eq!((conv2.kernel, conv2.filters, conv2.stride), (k, f, 3));
                    assert_eq!(*pool, (2, 2));
                }
                _ => panic!("expected VGG spec"),
            }
        }
    }

    #[test]
    fn table_constants_resnet() {
        let specs = resnet_block_specs();
        let expect = [
            (32, 64, 64, 7),
            (64, 128, 32, 3),
            (128, 256, 17, 3),
            (256, 512, 7, 3),
        ];
        for (spec, (narrow, wide, kernel, s0)) in specs.iter().zip(expect) {
            match spec {
                BlockSpec::Resnet {
                    convs,
                    repeat,
                    unit_strides,
                    ..
                } => {
                    assert_eq!((convs[0].kernel, convs[0].filters), (1, narrow));
                    assert_eq!((convs[1].kernel, convs[1].filters), (kernel, narrow));
                    assert_eq!((convs[2].kernel, convs[2].filters), (1, wide));
                    assert_eq!(*repeat, 2);
                    assert_eq!(*unit_strides, [s0, 1]);
                }
                _ => panic!("expected ResNet spec"),
            }
        }
    }

    #[test]
    fn vgg_stage1_lengths_on_2560() {
        // conv K=64 s=1: 2497; conv K=64 s=3: 812; pool(2,2): 406
        let geoms = stage_geometry(EncoderKind::Vgg, 1);
        let mut l = 2560;
        let mut seen = Vec::new();
        for g in geoms {
            l = g.apply(l).unwrap();
            seen.push(l);
        }
        assert_eq!(seen, vec![2497, 812, 406]);
    }

    #[test]
    fn vgg_2560_underflows_at_stage_4() {
        let err = stage_output_lengths(EncoderKind::Vgg, 2560).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stage 4"), "got: {msg}");
        assert!(msg.contains(&min_input_length(EncoderKind::Vgg).to_string()));
    }

    #[test]
    fn resnet_lengths_on_2560() {
        let lengths = stage_output_lengths(EncoderKind::Resnet, 2560).unwrap();
        assert_eq!(lengths, [366, 122, 41, 14]);
    }

    #[test]
    fn min_input_length_is_minimal_and_monotone() {
        for kind in [EncoderKind::Vgg, EncoderKind::Resnet] {
            let min = min_input_length(kind);
            assert!(stage_output_lengths(kind, min).is_ok());
            if min > 1 {
                assert!(stage_output_lengths(kind, min - 1).is_err());
            }
            for extra in [1, 7, 64, 1000] {
                assert!(stage_output_lengths(kind, min + extra).is_ok());
            }
        }
    }

    #[test]
    fn resnet_accepts_any_positive_length() {
        assert_eq!(min_input_length(EncoderKind::Resnet), 1);
    }

    #[test]
    fn vgg_stage1_first_conv_parameter_count() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = vgg_block_specs();
        build_block(&mut params, &mut rng, "b", &specs[0], 1).unwrap();
        let kernel = params.by_name("b.conv1.kernel").unwrap();
        let bias = params.by_name("b.conv1.bias").unwrap();
        assert_eq!(kernel.value.numel(), 64 * 1 * 32);
        assert_eq!(bias.value.numel(), 32);
    }

    #[test]
    fn zero_input_through_vgg_block_stays_zero() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = vgg_block_specs();
        let mut block = build_block(&mut params, &mut rng, "b", &specs[0], 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 200]), false);
        let y = block
            .forward(&mut tape, &params, &mut Vec::new(), x, Mode::Train)
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resnet_identity_skip_has_no_projection_params() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = resnet_block_specs();
        // Stage 1, unit 2: in == out channels and stride 1 -> identity skip.
        build_block(&mut params, &mut rng, "b", &specs[0], 1).unwrap();
        assert!(params.by_name("b.unit1.skip.kernel").is_some());
        assert!(params.by_name("b.unit2.skip.kernel").is_none());
    }

    #[test]
    fn residual_unit_with_zeroed_main_path_passes_input() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = BlockSpec::Resnet {
            stage: 1,
            convs: [
                ConvSpec::new(1, 4, 1),
                ConvSpec::new(3, 4, 1),
                ConvSpec::new(1, 4, 1),
            ],
            repeat: 2,
            unit_strides: [1, 1],
        };
        let mut block = build_block(&mut params, &mut rng, "b", &spec, 4).unwrap();
        // Zero the main path and neutralize batch norm: with running stats
        // (mean 0, var 1 - eps) eval-mode normalization is exactly identity.
        for p in params.iter_mut() {
            if p.name.contains("conv") && !p.name.contains("bn") {
                p.value.data_mut().fill(0.0);
            }
        }
        if let Block::Resnet { units } = &mut block {
            for unit in units {
                for (_, bn) in unit.convs.iter_mut() {
                    bn.state.running_mean.fill(0.0);
                    bn.state.running_var.fill(1.0 - bn.state.eps);
                    bn.state.initialized = true;
                }
            }
        }
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..4 * 6).map(|i| (i % 5) as f64 * 0.25).collect();
        let x = tape.leaf(Tensor::new(vec![1, 4, 6], data.clone()).unwrap(), false);
        let y = block
            .forward(&mut tape, &params, &mut Vec::new(), x, Mode::Eval)
            .unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_lengths_match_symbolic_propagation() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut stack = EncoderStack::build(
            &mut params,
            &mut rng,
            "enc",
            EncoderKind::Resnet,
            0.25,
            [1, 16, 32, 64],
        )
        .unwrap();
        let expected = stage_output_lengths(EncoderKind::Resnet, 300).unwrap();
        let mut tape = Tape::new();
        let mut x = tape.leaf(Tensor::zeros(&[2, 1, 300]), false);
        for stage in 1..=4 {
            x = stack
                .forward_stage(&mut tape, &params, &mut Vec::new(), stage, x, Mode::Train)
                .unwrap();
            let shape = tape.shape(x);
            assert_eq!(shape[2], expected[stage - 1]);
        }
    }

    #[test]
    fn forward_stage_checks_channels() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut stack = EncoderStack::build(
            &mut params,
            &mut rng,
            "enc",
            EncoderKind::Vgg,
            1.0,
            [1, 32, 64, 128],
        )
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 300]), false);
        assert!(stack
            .forward_stage(&mut tape, &params, &mut Vec::new(), 1, x, Mode::Train)
            .is_err());
    }
}
