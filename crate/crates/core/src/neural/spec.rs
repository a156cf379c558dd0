//! Declarative network graphs. A `ModelSpec` is a flat list of layers, each
//! naming where its input comes from, so skip connections and dense blocks
//! are plain data rather than bespoke forward code.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Act {
    None,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Norm {
    None,
    Instance,
    Batch,
}

#[derive(Clone, Debug)]
pub enum InputRef {
    /// One of the graph inputs.
    Input(usize),
    /// Output of an earlier layer.
    Layer(usize),
    /// Channel/feature concatenation of two sources.
    Concat(Box<InputRef>, Box<InputRef>),
}

impl InputRef {
    pub fn cat(a: InputRef, b: InputRef) -> InputRef {
        InputRef::Concat(Box::new(a), Box::new(b))
    }
}

#[derive(Clone, Debug)]
pub enum LayerKind {
    Conv { out_ch: usize, k: usize, stride: usize, pad: usize, norm: Norm, act: Act },
    TConv { out_ch: usize, k: usize, stride: usize, pad: usize, norm: Norm, act: Act },
    Linear { out: usize, act: Act },
    MaxPool2,
    AvgPool2,
    GlobalAvgPool,
    Flatten,
    Dropout { p: f64 },
}

#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: InputRef,
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    /// Named outputs by layer index.
    pub outputs: Vec<(String, usize)>,
}

impl ModelSpec {
    /// Shape of every layer output for the given input shapes (batch dim
    /// included; callers usually pass N=1 placeholders).
    pub fn infer_shapes(&self, input_shapes: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let in_shape = resolve_shape(&layer.input, input_shapes, &shapes, li)?;
            let out = match &layer.kind {
                LayerKind::Conv { out_ch, k, stride, pad, .. } => {
                    require_rank(&in_shape, 4)?;
                    let oh = conv_out(in_shape[2], *k, *stride, *pad)?;
                    let ow = conv_out(in_shape[3], *k, *stride, *pad)?;
                    vec![in_shape[0], *out_ch, oh, ow]
                }
                LayerKind::TConv { out_ch, k, stride, pad, .. } => {
                    require_rank(&in_shape, 4)?;
                    let oh = stride * (in_shape[2] - 1) + k - 2 * pad;
                    let ow = stride * (in_shape[3] - 1) + k - 2 * pad;
                    vec![in_shape[0], *out_ch, oh, ow]
                }
                LayerKind::Linear { out, .. } => {
                    require_rank(&in_shape, 2)?;
                    vec![in_shape[0], *out]
                }
                LayerKind::MaxPool2 | LayerKind::AvgPool2 => {
                    require_rank(&in_shape, 4)?;
                    vec![in_shape[0], in_shape[1], in_shape[2] / 2, in_shape[3] / 2]
                }
                LayerKind::GlobalAvgPool => {
                    require_rank(&in_shape, 4)?;
                    vec![in_shape[0], in_shape[1]]
                }
                LayerKind::Flatten => {
                    vec![in_shape[0], in_shape[1..].iter().product()]
                }
                LayerKind::Dropout { .. } => in_shape.clone(),
            };
            shapes.push(out);
        }
        Ok(shapes)
    }
}

fn conv_out(n: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if n + 2 * p < k {
        return Err(Error::ImageTooSmall(n, n, k));
    }
    Ok((n + 2 * p - k) / s + 1)
}

fn require_rank(shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::ShapeMismatch { expected: vec![0; rank], actual: shape.to_vec() });
    }
    Ok(())
}

fn resolve_shape(
    input: &InputRef,
    input_shapes: &[Vec<usize>],
    layer_shapes: &[Vec<usize>],
    current: usize,
) -> Result<Vec<usize>> {
    match input {
        InputRef::Input(i) => input_shapes
            .get(*i)
            .cloned()
            .ok_or(Error::InvalidConfig(format!("graph input {i} out of range"))),
        InputRef::Layer(l) => {
            if *l >= current {
                return Err(Error::InvalidConfig(format!(
                    "layer {current} references later layer {l}"
                )));
            }
            Ok(layer_shapes[*l].clone())
        }
        InputRef::Concat(a, b) => {
            let sa = resolve_shape(a, input_shapes, layer_shapes, current)?;
            let sb = resolve_shape(b, input_shapes, layer_shapes, current)?;
            if sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
                return Err(Error::ShapeMismatch { expected: sa, actual: sb });
            }
            let mut out = sa.clone();
            out[1] = sa[1] + sb[1];
            Ok(out)
        }
    }
}

fn conv(input: InputRef, out_ch: usize, stride: usize, norm: Norm, act: Act) -> LayerSpec {
    LayerSpec { kind: LayerKind::Conv { out_ch, k: 4, stride, pad: 1, norm, act }, input }
}

fn tconv(input: InputRef, out_ch: usize, norm: Norm, act: Act) -> LayerSpec {
    LayerSpec { kind: LayerKind::TConv { out_ch, k: 4, stride: 2, pad: 1, norm, act }, input }
}

/// Pix2pix-style encoder/decoder with skip connections, sized for 64x64
/// inputs (four stride-2 stages down to 4x4). A stride-1 stem and a final
/// refinement conv operate at full resolution: the strided stages alone
/// cannot reproduce sub-pixel detail (anti-aliased marker edges), which
/// otherwise caps reconstruction fidelity well below the required PSNR.
pub fn build_unet(in_ch: usize, out_ch: usize, base: usize) -> ModelSpec {
    use InputRef::{Input, Layer};
    let _ = in_ch; // channel count comes from the bound input shape
    let lrelu = Act::LeakyRelu(0.2);
    let full = |input: InputRef, out_ch: usize, act: Act| LayerSpec {
        kind: LayerKind::Conv { out_ch, k: 3, stride: 1, pad: 1, norm: Norm::None, act },
        input,
    };
    let layers = vec![
        full(Input(0), base, lrelu), // 0: stem at 64
        // encoder: 64 -> 32 -> 16 -> 8 -> 4
        conv(Layer(0), base, 2, Norm::None, lrelu), // 1: e1
        conv(Layer(1), base * 2, 2, Norm::Instance, lrelu), // 2: e2
        conv(Layer(2), base * 4, 2, Norm::Instance, lrelu), // 3: e3
        conv(Layer(3), base * 8, 2, Norm::Instance, lrelu), // 4: e4 (bottleneck)
        // decoder with skips: 4 -> 8 -> 16 -> 32 -> 64
        tconv(Layer(4), base * 4, Norm::Instance, Act::Relu), // 5: d4
        LayerSpec { kind: LayerKind::Dropout { p: 0.0 }, input: Layer(5) }, // 6
        tconv(InputRef::cat(Layer(6), Layer(3)), base * 2, Norm::Instance, Act::Relu), // 7: d3
        tconv(InputRef::cat(Layer(7), Layer(2)), base, Norm::Instance, Act::Relu), // 8: d2
        tconv(InputRef::cat(Layer(8), Layer(1)), base, Norm::Instance, Act::Relu), // 9: d1
        full(InputRef::cat(Layer(9), Layer(0)), base, lrelu), // 10: refine at 64
        full(Layer(10), out_ch, Act::Tanh), // 11: output head
    ];
    ModelSpec { layers, outputs: vec![("image".into(), 11)] }
}

/// PatchGAN discriminator over a channel-stacked (input, candidate) pair.
/// On 64x64 inputs the receptive-field map is 6x6.
pub fn build_patchgan(in_ch: usize, base: usize) -> ModelSpec {
    use InputRef::{Input, Layer};
    let lrelu = Act::LeakyRelu(0.2);
    let _ = in_ch;
    let layers = vec![
        conv(Input(0), base, 2, Norm::None, lrelu),         // 64 -> 32
        conv(Layer(0), base * 2, 2, Norm::Instance, lrelu), // 32 -> 16
        conv(Layer(1), base * 4, 2, Norm::Instance, lrelu), // 16 -> 8
        conv(Layer(2), base * 8, 1, Norm::Instance, lrelu), // 8 -> 7
        LayerSpec {
            kind: LayerKind::Conv { out_ch: 1, k: 4, stride: 1, pad: 1, norm: Norm::None, act: Act::None },
            input: Layer(3),
        }, // 7 -> 6
    ];
    ModelSpec { layers, outputs: vec![("patch".into(), 4)] }
}

fn conv3(input: InputRef, out_ch: usize, stride: usize, norm: Norm, act: Act) -> LayerSpec {
    LayerSpec { kind: LayerKind::Conv { out_ch, k: 3, stride, pad: 1, norm, act }, input }
}

/// Densely connected classifier trunk: appends layer indices of the trunk
/// output to `layers` and returns (layers, feature_layer_index).
fn dense_trunk(in_ch: usize, growth: usize, block_layers: usize) -> (Vec<LayerSpec>, usize) {
    use InputRef::{Input, Layer};
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut ch;
    // stem: 64 -> 32 -> 16
    layers.push(conv3(Input(0), 16, 2, Norm::Batch, Act::Relu));
    let _ = in_ch;
    layers.push(LayerSpec { kind: LayerKind::MaxPool2, input: Layer(0) });
    ch = 16;
    let mut head = layers.len() - 1;
    for block in 0..2 {
        // dense block: each conv sees the concatenation of everything so far
        for _ in 0..block_layers {
            let idx = layers.len();
            layers.push(conv3(Layer(head), growth, 1, Norm::Batch, Act::Relu));
            let cat = layers.len();
            layers.push(LayerSpec {
                kind: LayerKind::Dropout { p: 0.0 }, // identity join node
                input: InputRef::cat(Layer(head), Layer(idx)),
            });
            head = cat;
            ch += growth;
        }
        // transition: 1x1 squeeze + spatial halving
        let squeeze = (ch + 1) / 2;
        layers.push(LayerSpec {
            kind: LayerKind::Conv {
                out_ch: squeeze,
                k: 1,
                stride: 1,
                pad: 0,
                norm: Norm::Batch,
                act: Act::Relu,
            },
            input: Layer(head),
        });
        head = layers.len() - 1;
        if block == 0 {
            layers.push(LayerSpec { kind: LayerKind::AvgPool2, input: Layer(head) });
            head = layers.len() - 1;
        }
        ch = squeeze;
    }
    layers.push(LayerSpec { kind: LayerKind::GlobalAvgPool, input: Layer(head) });
    (layers, head + 1)
}

/// Dense CNN classifier/regressor with a single linear head.
pub fn build_dense_cnn(in_ch: usize, out: usize) -> ModelSpec {
    let (mut layers, feat) = dense_trunk(in_ch, 12, 4);
    layers.push(LayerSpec {
        kind: LayerKind::Linear { out, act: Act::None },
        input: InputRef::Layer(feat),
    });
    let head = layers.len() - 1;
    ModelSpec { layers, outputs: vec![("out".into(), head)] }
}

/// Shared trunk with hardness, material, and texture heads; the texture head
/// additionally sees the material logits (`link` toggles that connection for
/// ablations).
pub fn build_hier_multihead(
    in_ch: usize,
    hardness: usize,
    materials: usize,
    textures: usize,
    link: bool,
) -> ModelSpec {
    use InputRef::Layer;
    let (mut layers, feat) = dense_trunk(in_ch, 12, 4);
    layers.push(LayerSpec {
        kind: LayerKind::Linear { out: hardness, act: Act::None },
        input: Layer(feat),
    });
    let h_head = layers.len() - 1;
    layers.push(LayerSpec {
        kind: LayerKind::Linear { out: materials, act: Act::None },
        input: Layer(feat),
    });
    let m_head = layers.len() - 1;
    let tex_in = if link {
        InputRef::cat(Layer(feat), Layer(m_head))
    } else {
        Layer(feat)
    };
    layers.push(LayerSpec { kind: LayerKind::Linear { out: textures, act: Act::None }, input: tex_in });
    let t_head = layers.len() - 1;
    ModelSpec {
        layers,
        outputs: vec![
            ("hardness".into(), h_head),
            ("material".into(), m_head),
            ("texture".into(), t_head),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unet_shapes_round_trip() {
        let spec = build_unet(3, 3, 8);
        let shapes = spec.infer_shapes(&[vec![1, 3, 64, 64]]).unwrap();
        assert_eq!(shapes[4], vec![1, 64, 4, 4]);
        assert_eq!(shapes[11], vec![1, 3, 64, 64]);
    }

    #[test]
    fn patchgan_is_6x6_on_64() {
        let spec = build_patchgan(6, 16);
        let shapes = spec.infer_shapes(&[vec![1, 6, 64, 64]]).unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![1, 1, 6, 6]);
    }

    #[test]
    fn dense_cnn_head_shape() {
        let spec = build_dense_cnn(1, 21);
        let shapes = spec.infer_shapes(&[vec![1, 1, 64, 64]]).unwrap();
        let (_, head) = &spec.outputs[0];
        assert_eq!(shapes[*head], vec![1, 21]);
    }

    #[test]
    fn multihead_outputs() {
        let spec = build_hier_multihead(1, 5, 5, 50, true);
        let shapes = spec.infer_shapes(&[vec![1, 1, 64, 64]]).unwrap();
        let by_name: std::collections::HashMap<_, _> =
            spec.outputs.iter().map(|(n, i)| (n.as_str(), *i)).collect();
        assert_eq!(shapes[by_name["hardness"]], vec![1, 5]);
        assert_eq!(shapes[by_name["material"]], vec![1, 5]);
        assert_eq!(shapes[by_name["texture"]], vec![1, 50]);
    }

    #[test]
    fn forward_reference_rejected() {
        let spec = ModelSpec {
            layers: vec![LayerSpec {
                kind: LayerKind::Flatten,
                input: InputRef::Layer(3),
            }],
            outputs: vec![],
        };
        assert!(spec.infer_shapes(&[vec![1, 1, 8, 8]]).is_err());
    }
}
