//! Compact text notation, e.g.
//! `[image] 3x3,16 - MP 2x2 - 3x3,16 - FC 64 - FC 2 [coords-2]`.
//!
//! Only parametric and pooling layers are written; activations and flattens
//! are implied by the same rule the builders use.

use crate::error::{Error, Result};
use crate::models::{with_activations, Architecture, InputMode, LayerSpec, OutputHead};
use crate::ops::{ConvSpec, CoordSpec, Padding};

fn kernel(spec: &ConvSpec) -> String {
    let mut mods = Vec::new();
    if spec.stride != 1 {
        mods.push(format!("s{}", spec.stride));
    }
    if spec.padding == Padding::Valid {
        mods.push("valid".to_string());
    }
    if !spec.bias {
        mods.push("nobias".to_string());
    }
    let mods = if mods.is_empty() {
        String::new()
    } else {
        format!("({})", mods.join(" "))
    };
    format!("{k}x{k}{mods},{c}", k = spec.k, c = spec.c_out)
}

fn layer_token(layer: &LayerSpec) -> Option<String> {
    Some(match layer {
        LayerSpec::Conv(s) => kernel(s),
        LayerSpec::CoordConv { conv, coords } => {
            let tag = match (coords.with_r, coords.r_normalized) {
                (false, _) => "",
                (true, true) => "(r)",
                (true, false) => "(r-raw)",
            };
            format!("CoordConv{tag} {}", kernel(conv))
        }
        LayerSpec::Deconv(s) => format!("Deconv {}", kernel(s)),
        LayerSpec::Dense { units, .. } => format!("FC {units}"),
        LayerSpec::MaxPool => "MP 2x2".to_string(),
        LayerSpec::GlobalPool => "GP".to_string(),
        LayerSpec::BatchNorm { .. } => "BN".to_string(),
        LayerSpec::Relu | LayerSpec::Flatten => return None,
    })
}

impl Architecture {
    pub fn to_text(&self) -> String {
        let body: Vec<String> = self.layers.iter().filter_map(layer_token).collect();
        format!("[{}] {} [{}]", self.input_mode.name(), body.join(" - "), self.output_head.name())
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "architecture text",
        detail: detail.into(),
    }
}

fn parse_kernel(token: &str, c_in: usize) -> Result<ConvSpec> {
    let (geom, c_out) = token.rsplit_once(',').ok_or_else(|| bad(format!("`{token}`: missing channels")))?;
    let c_out: usize = c_out.trim().parse().map_err(|_| bad(format!("`{token}`: bad channel count")))?;
    let (size, mods) = match geom.split_once('(') {
        Some((size, rest)) => (size, rest.strip_suffix(')').ok_or_else(|| bad(format!("`{token}`: unclosed (")))?),
        None => (geom, ""),
    };
    let (kh, kw) = size.split_once('x').ok_or_else(|| bad(format!("`{token}`: expected KxK")))?;
    let k: usize = kh.trim().parse().map_err(|_| bad(format!("`{token}`: bad kernel size")))?;
    if kw.trim() != kh.trim() {
        return Err(bad(format!("`{token}`: only square kernels are supported")));
    }
    let mut spec = ConvSpec::new(k, c_in, c_out);
    for m in mods.split_whitespace() {
        spec = match m {
            "valid" => spec.with_padding(Padding::Valid),
            "nobias" => spec.without_bias(),
            s if s.starts_with('s') => spec.with_stride(s[1..].parse().map_err(|_| bad(format!("bad stride `{s}`")))?),
            other => return Err(bad(format!("unknown modifier `{other}`"))),
        };
    }
    Ok(spec)
}

fn parse_mode(s: &str) -> Result<InputMode> {
    [InputMode::CoordsTiled, InputMode::Coords1x1, InputMode::Image]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| bad(format!("unknown input mode `{s}`")))
}

fn parse_head(s: &str) -> Result<OutputHead> {
    [OutputHead::Logits4096, OutputHead::Coords2, OutputHead::Image64]
        .into_iter()
        .find(|h| h.name() == s)
        .ok_or_else(|| bad(format!("unknown output head `{s}`")))
}

/// Inverse of [`Architecture::to_text`].
pub fn parse_architecture(name: &str, text: &str) -> Result<Architecture> {
    let text = text.trim();
    let rest = text.strip_prefix('[').ok_or_else(|| bad("missing [input] prefix"))?;
    let (mode, rest) = rest.split_once(']').ok_or_else(|| bad("unclosed [input]"))?;
    let (body, head) = rest.rsplit_once('[').ok_or_else(|| bad("missing [head] suffix"))?;
    let head = parse_head(head.strip_suffix(']').ok_or_else(|| bad("unclosed [head]"))?)?;
    let mode = parse_mode(mode)?;

    let mut shape = mode.shape().to_vec();
    let mut core = Vec::new();
    for token in body.split(" - ").map(str::trim) {
        let c = *shape.last().unwrap();
        let layer = if let Some(k) = token.strip_prefix("Deconv ") {
            LayerSpec::Deconv(parse_kernel(k, c)?)
        } else if let Some(rest) = token.strip_prefix("CoordConv") {
            let (coords, k) = if let Some(k) = rest.strip_prefix("(r-raw) ") {
                (CoordSpec::with_r(false), k)
            } else if let Some(k) = rest.strip_prefix("(r) ") {
                (CoordSpec::with_r(true), k)
            } else {
                (CoordSpec::default(), rest.trim_start())
            };
            LayerSpec::CoordConv {
                conv: parse_kernel(k, c + coords.d())?,
                coords,
            }
        } else if let Some(units) = token.strip_prefix("FC ") {
            let units = units.trim().parse().map_err(|_| bad(format!("`{token}`: bad unit count")))?;
            LayerSpec::Dense {
                inputs: shape.iter().product(),
                units,
            }
        } else {
            match token {
                "MP 2x2" => LayerSpec::MaxPool,
                "GP" => LayerSpec::GlobalPool,
                "BN" => LayerSpec::BatchNorm { channels: c },
                _ => LayerSpec::Conv(parse_kernel(token, c)?),
            }
        };
        let input = if matches!(layer, LayerSpec::Dense { .. }) {
            vec![shape.iter().product()]
        } else {
            shape.clone()
        };
        shape = layer.output_shape(&input)?;
        core.push(layer);
    }
    let layers = with_activations(core, mode.shape(), head);
    Architecture::new(name, mode, layers, head)
}
