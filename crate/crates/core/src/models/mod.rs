//! Architecture builders for the coordinate-transform experiments, plus a
//! trainable [`Model`] wrapper with checkpointing.

mod model;
mod text;

pub use model::{input_batch, Model};
pub use text::parse_architecture;

use serde::{Deserialize, Serialize};

use crate::dataset::CANVAS;
use crate::error::{Error, Result};
use crate::ops::{ConvSpec, CoordSpec};

/// Supervised problem solved by an architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Coordinates to one-hot pixel (softmax over 4096 positions).
    Cls,
    /// Image to coordinates.
    Reg,
    /// Coordinates to the painted square (per-pixel sigmoid).
    Ren,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Cls => "cls",
            Task::Reg => "reg",
            Task::Ren => "ren",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cls" => Ok(Task::Cls),
            "reg" => Ok(Task::Reg),
            "ren" => Ok(Task::Ren),
            other => Err(Error::invalid(format!("unknown task `{other}` (expected cls|reg|ren)"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelName {
    #[serde(rename = "DECONV-CLS")]
    DeconvCls,
    #[serde(rename = "CC-CLS")]
    CcCls,
    #[serde(rename = "CONV-REG-U")]
    ConvRegU,
    #[serde(rename = "CONV-REG-Q")]
    ConvRegQ,
    #[serde(rename = "CC-REG")]
    CcReg,
    #[serde(rename = "DECONV-REN")]
    DeconvRen,
    #[serde(rename = "CC-REN")]
    CcRen,
}

impl ModelName {
    pub const ALL: [ModelName; 7] = [
        ModelName::DeconvCls,
        ModelName::CcCls,
        ModelName::ConvRegU,
        ModelName::ConvRegQ,
        ModelName::CcReg,
        ModelName::DeconvRen,
        ModelName::CcRen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::DeconvCls => "DECONV-CLS",
            ModelName::CcCls => "CC-CLS",
            ModelName::ConvRegU => "CONV-REG-U",
            ModelName::ConvRegQ => "CONV-REG-Q",
            ModelName::CcReg => "CC-REG",
            ModelName::DeconvRen => "DECONV-REN",
            ModelName::CcRen => "CC-REN",
        }
    }

    pub fn task(self) -> Task {
        match self {
            ModelName::DeconvCls | ModelName::CcCls => Task::Cls,
            ModelName::ConvRegU | ModelName::ConvRegQ | ModelName::CcReg => Task::Reg,
            ModelName::DeconvRen | ModelName::CcRen => Task::Ren,
        }
    }

    pub fn is_deconv(self) -> bool {
        matches!(self, ModelName::DeconvCls | ModelName::DeconvRen)
    }

    /// Allowed `(filter sizes, channel multipliers)` for deconv families.
    pub fn hyper_ranges(self) -> Option<(&'static [usize], &'static [usize])> {
        match self {
            ModelName::DeconvCls => Some((&[2, 3, 4], &[1, 2, 3])),
            ModelName::DeconvRen => Some((&[2, 3, 4], &[2, 3])),
            _ => None,
        }
    }
}

impl std::str::FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.to_ascii_uppercase().replace('_', "-");
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str() == wanted)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

impl std::fmt::Display for ModelName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    /// Normalized `(x, y)` broadcast over the canvas: `[n, 64, 64, 2]`.
    CoordsTiled,
    /// Normalized `(x, y)` as a single pixel: `[n, 1, 1, 2]`.
    Coords1x1,
    /// Image of the single center pixel (the one-hot map): `[n, 64, 64, 1]`.
    Image,
}

impl InputMode {
    pub fn shape(self) -> [usize; 3] {
        match self {
            InputMode::CoordsTiled => [CANVAS, CANVAS, 2],
            InputMode::Coords1x1 => [1, 1, 2],
            InputMode::Image => [CANVAS, CANVAS, 1],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputMode::CoordsTiled => "coords-tiled",
            InputMode::Coords1x1 => "coords-1x1",
            InputMode::Image => "image",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    Logits4096,
    Coords2,
    Image64,
}

impl OutputHead {
    pub fn width(self) -> usize {
        match self {
            OutputHead::Logits4096 | OutputHead::Image64 => CANVAS * CANVAS,
            OutputHead::Coords2 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OutputHead::Logits4096 => "logits-4096",
            OutputHead::Coords2 => "coords-2",
            OutputHead::Image64 => "image-64x64",
        }
    }

    pub fn task(self) -> Task {
        match self {
            OutputHead::Logits4096 => Task::Cls,
            OutputHead::Coords2 => Task::Reg,
            OutputHead::Image64 => Task::Ren,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(ConvSpec),
    /// Coordinate channels are appended to the input before `conv`, whose
    /// `c_in` counts them.
    CoordConv { conv: ConvSpec, coords: CoordSpec },
    Deconv(ConvSpec),
    Dense { inputs: usize, units: usize },
    MaxPool,
    GlobalPool,
    BatchNorm { channels: usize },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv(s) | LayerSpec::Deconv(s) | LayerSpec::CoordConv { conv: s, .. } => s.param_count(),
            LayerSpec::Dense { inputs, units } => inputs * units + units,
            LayerSpec::BatchNorm { channels } => 2 * channels,
            _ => 0,
        }
    }

    /// Parameter tensor shapes in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let conv = |s: &ConvSpec, w: Vec<usize>| {
            let mut v = vec![w];
            if s.bias {
                v.push(vec![s.c_out]);
            }
            v
        };
        match self {
            LayerSpec::Conv(s) | LayerSpec::CoordConv { conv: s, .. } => conv(s, vec![s.k, s.k, s.c_in, s.c_out]),
            LayerSpec::Deconv(s) => conv(s, vec![s.k, s.k, s.c_out, s.c_in]),
            LayerSpec::Dense { inputs, units } => vec![vec![*inputs, *units], vec![*units]],
            LayerSpec::BatchNorm { channels } => vec![vec![*channels], vec![*channels]],
            _ => Vec::new(),
        }
    }

    fn is_parametric_transform(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv(_) | LayerSpec::CoordConv { .. } | LayerSpec::Deconv(_) | LayerSpec::Dense { .. }
        )
    }

    /// Output shape (without the batch axis) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                [h, w, c] => Ok((*h, *w, *c)),
                _ => Err(Error::shape(format!("{what} needs an [h,w,c] input, got {input:?}"))),
            }
        };
        let channels = |spec: &ConvSpec, c: usize, what: &str| {
            if c == spec.c_in {
                Ok(())
            } else {
                Err(Error::shape(format!("{what} expects {} channels, got {c}", spec.c_in)))
            }
        };
        match self {
            LayerSpec::Conv(s) => {
                let (h, w, c) = spatial("conv")?;
                channels(s, c, "conv")?;
                let (oh, ow) = s.output_size(h, w)?;
                Ok(vec![oh, ow, s.c_out])
            }
            LayerSpec::CoordConv { conv, coords } => {
                let (h, w, c) = spatial("coordconv")?;
                channels(conv, c + coords.d(), "coordconv")?;
                let (oh, ow) = conv.output_size(h, w)?;
                Ok(vec![oh, ow, conv.c_out])
            }
            LayerSpec::Deconv(s) => {
                let (h, w, c) = spatial("deconv")?;
                channels(s, c, "deconv")?;
                let (oh, ow) = s.transpose_output_size(h, w);
                Ok(vec![oh, ow, s.c_out])
            }
            LayerSpec::Dense { inputs, units } => match input {
                [f] if f == inputs => Ok(vec![*units]),
                _ => Err(Error::shape(format!("dense expects [{inputs}], got {input:?}"))),
            },
            LayerSpec::MaxPool => {
                let (h, w, c) = spatial("max pool")?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::shape(format!("max pool needs even extents, got {h}x{w}")));
                }
                Ok(vec![h / 2, w / 2, c])
            }
            LayerSpec::GlobalPool => Ok(vec![spatial("global pool")?.2]),
            LayerSpec::BatchNorm { channels } => match input.last() {
                Some(c) if c == channels => Ok(input.to_vec()),
                _ => Err(Error::shape(format!("batch norm over {channels} channels, got {input:?}"))),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Deconv hyperparameters: filter size and channel multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hyper {
    pub fs: usize,
    pub c_mult: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub hyper: Hyper,
    /// Adds the radial channel to every coordinate augmentation.
    pub with_r: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            hyper: Hyper { fs: 3, c_mult: 2 },
            with_r: false,
        }
    }
}

impl BuildOptions {
    pub fn deconv(fs: usize, c_mult: usize) -> Self {
        BuildOptions {
            hyper: Hyper { fs, c_mult },
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub input_mode: InputMode,
    pub layers: Vec<LayerSpec>,
    pub output_head: OutputHead,
}

impl Architecture {
    /// Checks that layer shapes chain from the input to the head.
    pub fn new(name: impl Into<String>, input_mode: InputMode, layers: Vec<LayerSpec>, output_head: OutputHead) -> Result<Self> {
        let arch = Architecture {
            name: name.into(),
            input_mode,
            layers,
            output_head,
        };
        let out = arch.shapes()?.pop().unwrap();
        if out != [output_head.width()] {
            return Err(Error::shape(format!(
                "{}: network output {out:?} does not match head {}",
                arch.name,
                output_head.name()
            )));
        }
        Ok(arch)
    }

    /// Per-layer activation shapes, starting with the input.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_mode.shape().to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::shape(format!("{} layer {i}: {e}", self.name)))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn task(&self) -> Task {
        self.output_head.task()
    }

    pub fn batch_norm_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::BatchNorm { .. })).count()
    }
}

/// Inserts a ReLU after every hidden conv/deconv/dense layer (after its
/// batch norm when one follows) and flattens before dense layers and at the
/// end of map-valued heads.
pub(crate) fn with_activations(core: Vec<LayerSpec>, input: [usize; 3], head: OutputHead) -> Vec<LayerSpec> {
    let last = core.iter().rposition(LayerSpec::is_parametric_transform);
    let mut out = Vec::with_capacity(core.len() * 2);
    let mut rank = input.len();
    for (i, layer) in core.iter().enumerate() {
        if matches!(layer, LayerSpec::Dense { .. }) && rank != 1 {
            out.push(LayerSpec::Flatten);
            rank = 1;
        }
        out.push(*layer);
        if matches!(layer, LayerSpec::GlobalPool) {
            rank = 1;
        }
        let hidden = layer.is_parametric_transform() && Some(i) != last;
        let bn_next = matches!(core.get(i + 1), Some(LayerSpec::BatchNorm { .. }));
        let after_bn = matches!(layer, LayerSpec::BatchNorm { .. });
        if (hidden && !bn_next) || after_bn {
            out.push(LayerSpec::Relu);
        }
    }
    if rank != 1 && head != OutputHead::Coords2 {
        out.push(LayerSpec::Flatten);
    }
    out
}

fn conv(k: usize, c_in: usize, c_out: usize) -> LayerSpec {
    LayerSpec::Conv(ConvSpec::new(k, c_in, c_out))
}

fn strided(k: usize, c_in: usize, c_out: usize) -> LayerSpec {
    LayerSpec::Conv(ConvSpec::new(k, c_in, c_out).with_stride(2))
}

fn coord_conv(k: usize, c: usize, c_out: usize, coords: CoordSpec) -> LayerSpec {
    LayerSpec::CoordConv {
        conv: ConvSpec::new(k, c + coords.d(), c_out),
        coords,
    }
}

fn deconv_stack(fs: usize, c: usize) -> Vec<LayerSpec> {
    let plan = [64 * c, 64 * c, 64 * c, 32 * c, 32 * c, 1];
    let mut c_in = 2;
    plan.iter()
        .map(|&c_out| {
            let layer = LayerSpec::Deconv(ConvSpec::new(fs, c_in, c_out).with_stride(2));
            c_in = c_out;
            layer
        })
        .collect()
}

/// Builds one of the named architectures.
pub fn build(name: ModelName, options: BuildOptions) -> Result<Architecture> {
    if let Some((sizes, mults)) = name.hyper_ranges() {
        let Hyper { fs, c_mult } = options.hyper;
        if !sizes.contains(&fs) || !mults.contains(&c_mult) {
            return Err(Error::invalid(format!(
                "{name}: filter size {fs} / channel multiplier {c_mult} outside {sizes:?} / {mults:?}"
            )));
        }
    }
    let coords = if options.with_r {
        CoordSpec::with_r(true)
    } else {
        CoordSpec::default()
    };
    let Hyper { fs, c_mult } = options.hyper;
    let (input, head, core) = match name {
        ModelName::DeconvCls => (InputMode::Coords1x1, OutputHead::Logits4096, deconv_stack(fs, c_mult)),
        ModelName::DeconvRen => (InputMode::Coords1x1, OutputHead::Image64, deconv_stack(fs, c_mult)),
        ModelName::CcCls => (
            InputMode::CoordsTiled,
            OutputHead::Logits4096,
            vec![coord_conv(1, 2, 32, coords), conv(1, 32, 32), conv(1, 32, 64), conv(1, 64, 64), conv(1, 64, 1)],
        ),
        ModelName::CcRen => (
            InputMode::CoordsTiled,
            OutputHead::Image64,
            vec![
                coord_conv(1, 2, 32, coords),
                conv(1, 32, 32),
                conv(1, 32, 32),
                conv(3, 32, 16),
                conv(3, 16, 16),
                conv(1, 16, 1),
            ],
        ),
        ModelName::ConvRegU => (
            InputMode::Image,
            OutputHead::Coords2,
            vec![
                conv(3, 1, 16),
                LayerSpec::MaxPool,
                conv(3, 16, 16),
                LayerSpec::MaxPool,
                conv(3, 16, 16),
                LayerSpec::MaxPool,
                conv(3, 16, 16),
                LayerSpec::Dense { inputs: 8 * 8 * 16, units: 64 },
                LayerSpec::Dense { inputs: 64, units: 2 },
            ],
        ),
        ModelName::ConvRegQ => (
            InputMode::Image,
            OutputHead::Coords2,
            vec![
                strided(5, 1, 16),
                conv(1, 16, 16),
                LayerSpec::BatchNorm { channels: 16 },
                conv(3, 16, 16),
                strided(3, 16, 16),
                strided(3, 16, 16),
                LayerSpec::BatchNorm { channels: 16 },
                strided(3, 16, 16),
                conv(1, 16, 16),
                strided(3, 16, 16),
                conv(3, 16, 2),
                LayerSpec::GlobalPool,
            ],
        ),
        ModelName::CcReg => (
            InputMode::Image,
            OutputHead::Coords2,
            vec![
                coord_conv(1, 1, 8, coords),
                conv(1, 8, 8),
                conv(1, 8, 8),
                conv(3, 8, 8),
                conv(3, 8, 2),
                LayerSpec::GlobalPool,
            ],
        ),
    };
    let layers = with_activations(core, input.shape(), head);
    Architecture::new(name.as_str(), input, layers, head)
}
