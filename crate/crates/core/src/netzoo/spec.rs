//! Network topology descriptions and their plain-text form.
//!
//! Grammar, one directive per line; `#` starts a comment, blank lines are
//! ignored, keys may appear in any order:
//!
//! ```text
//! input c=3 h=32 w=32
//! classes 10
//! conv out=16 k=3 s=2 p=1
//! relu
//! maxpool k=2 s=2
//! flatten
//! dense out=10
//! ```
//!
//! `input` and `classes` must precede the layers. Convolution stride and
//! padding default to 1 and 0; pooling stride defaults to the kernel size.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }
}

/// Activation shape after a layer (batch dimension omitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Spatial { c, h, w } => c * h * w,
            ActShape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// AlexNet stand-in: four conv layers of 16, 32, 64 and 32 filters and two
    /// dense layers, 9978 parameters on 3x32x32 inputs with 10 classes.
    pub fn mini_cnn_a() -> Self {
        use LayerSpec::*;
        Self {
            input: [3, 32, 32],
            num_classes: 10,
            layers: vec![
                LayerSpec::conv(16, 3, 2, 1),
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                LayerSpec::conv(32, 3, 1, 1),
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                LayerSpec::conv(64, 1, 1, 0),
                Relu,
                LayerSpec::conv(32, 1, 1, 0),
                Relu,
                MaxPool { kernel: 4, stride: 4 },
                Flatten,
                Dense { out_features: 16 },
                Relu,
                Dense { out_features: 10 },
            ],
        }
    }

    /// VGG stand-in: eight conv layers in four stages and two dense layers.
    pub fn mini_cnn_v() -> Self {
        use LayerSpec::*;
        Self {
            input: [3, 32, 32],
            num_classes: 10,
            layers: vec![
                LayerSpec::conv(16, 3, 1, 1),
                Relu,
                LayerSpec::conv(16, 3, 1, 1),
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                LayerSpec::conv(32, 3, 1, 1),
                Relu,
                LayerSpec::conv(32, 3, 1, 1),
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                LayerSpec::conv(64, 3, 1, 1),
                Relu,
                LayerSpec::conv(64, 1, 1, 0),
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                LayerSpec::conv(64, 1, 1, 0),
                Relu,
                LayerSpec::conv(32, 1, 1, 0),
                Relu,
                MaxPool { kernel: 4, stride: 4 },
                Flatten,
                Dense { out_features: 32 },
                Relu,
                Dense { out_features: 10 },
            ],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "minicnn-a" => Some(Self::mini_cnn_a()),
            "minicnn-v" => Some(Self::mini_cnn_v()),
            _ => None,
        }
    }

    /// Activation shape after every layer, validating the whole chain.
    pub fn shapes(&self) -> Result<Vec<ActShape>, NetError> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(NetError::InvalidSpec("input extents must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(NetError::InvalidSpec("need at least two classes".into()));
        }
        let mut cur = ActShape::Spatial { c, h, w };
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| NetError::InvalidSpec(format!("layer {i} ({layer:?}): {msg}"));
            cur = match (*layer, cur) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    ActShape::Spatial { h, w, .. },
                ) => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad("extents must be positive".into()));
                    }
                    if kernel > h + 2 * padding || kernel > w + 2 * padding {
                        return Err(bad(format!("kernel larger than padded {h}x{w} input")));
                    }
                    ActShape::Spatial {
                        c: out_channels,
                        h: (h + 2 * padding - kernel) / stride + 1,
                        w: (w + 2 * padding - kernel) / stride + 1,
                    }
                }
                (LayerSpec::MaxPool { kernel, stride }, ActShape::Spatial { c, h, w }) => {
                    if kernel == 0 || stride == 0 || kernel > h || kernel > w {
                        return Err(bad(format!("pool window does not fit {h}x{w} input")));
                    }
                    ActShape::Spatial {
                        c,
                        h: (h - kernel) / stride + 1,
                        w: (w - kernel) / stride + 1,
                    }
                }
                (LayerSpec::Flatten, ActShape::Spatial { .. }) => ActShape::Flat(cur.numel()),
                (LayerSpec::Dense { out_features }, ActShape::Flat(_)) => {
                    if out_features == 0 {
                        return Err(bad("out_features must be positive".into()));
                    }
                    ActShape::Flat(out_features)
                }
                (LayerSpec::Relu, s) => s,
                (_, ActShape::Flat(_)) => return Err(bad("needs a spatial input; found one after flatten".into())),
                (_, ActShape::Spatial { .. }) => return Err(bad("needs a flat input; add `flatten` first".into())),
            };
            shapes.push(cur);
        }
        if !self.layers.iter().any(|l| matches!(l, LayerSpec::Conv { .. })) {
            return Err(NetError::InvalidSpec("at least one conv layer required".into()));
        }
        match cur {
            ActShape::Flat(n) if n == self.num_classes => Ok(shapes),
            other => Err(NetError::InvalidSpec(format!(
                "final output {other:?} does not match {} classes",
                self.num_classes
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.shapes().map(|_| ())
    }

    /// Layer positions of the conv layers, in order. A "conv index"
    /// elsewhere is an index into this list.
    pub fn conv_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Filter count of every conv layer.
    pub fn census(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .collect()
    }

    /// Parameter shapes `(weight, bias)` for every layer that has them.
    pub fn param_shapes(&self) -> Result<Vec<Option<(Vec<usize>, usize)>>, NetError> {
        let shapes = self.shapes()?;
        let mut prev = ActShape::Spatial {
            c: self.input[0],
            h: self.input[1],
            w: self.input[2],
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            out.push(match (*layer, prev) {
                (
                    LayerSpec::Conv {
                        out_channels, kernel, ..
                    },
                    ActShape::Spatial { c, .. },
                ) => Some((vec![out_channels, c, kernel, kernel], out_channels)),
                (LayerSpec::Dense { out_features }, ActShape::Flat(n)) => {
                    Some((vec![out_features, n], out_features))
                }
                _ => None,
            });
            prev = *shape;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize, NetError> {
        Ok(self
            .param_shapes()?
            .into_iter()
            .flatten()
            .map(|(w, b)| w.iter().product::<usize>() + b)
            .sum())
    }

    pub fn to_text(&self) -> String {
        let [c, h, w] = self.input;
        let mut s = format!("input c={c} h={h} w={w}\nclasses {}\n", self.num_classes);
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => writeln!(s, "conv out={out_channels} k={kernel} s={stride} p={padding}"),
                LayerSpec::Relu => writeln!(s, "relu"),
                LayerSpec::MaxPool { kernel, stride } => writeln!(s, "maxpool k={kernel} s={stride}"),
                LayerSpec::Flatten => writeln!(s, "flatten"),
                LayerSpec::Dense { out_features } => writeln!(s, "dense out={out_features}"),
            }
            .expect("write to String");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, NetError> {
        let mut input = None;
        let mut classes = None;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| NetError::Parse {
                line: lineno + 1,
                msg,
            };
            let mut words = line.split_whitespace();
            let head = words.next().expect("non-empty line");
            let rest: Vec<&str> = words.collect();
            let mut kv = HashMap::new();
            let mut positional = Vec::new();
            for w in &rest {
                match w.split_once('=') {
                    Some((k, v)) => {
                        let v: usize = v.parse().map_err(|_| err(format!("`{v}` is not a count")))?;
                        if kv.insert(k, v).is_some() {
                            return Err(err(format!("duplicate key `{k}`")));
                        }
                    }
                    None => positional.push(*w),
                }
            }
            let allowed: &[&str] = match head {
                "input" => &["c", "h", "w"],
                "conv" => &["out", "k", "s", "p"],
                "maxpool" => &["k", "s"],
                "dense" => &["out"],
                _ => &[],
            };
            if let Some(k) = kv.keys().find(|k| !allowed.contains(k)) {
                return Err(err(format!("unknown key `{k}` for `{head}`")));
            }
            let need = |k: &str| kv.get(k).copied().ok_or_else(|| err(format!("`{head}` needs `{k}=`")));
            if head != "classes" && !positional.is_empty() {
                return Err(err(format!("unexpected token `{}`", positional[0])));
            }
            if head != "input" && head != "classes" && (input.is_none() || classes.is_none()) {
                return Err(err("`input` and `classes` must come before layers".into()));
            }
            match head {
                "input" => input = Some([need("c")?, need("h")?, need("w")?]),
                "classes" => {
                    let [n] = positional[..] else {
                        return Err(err("expected `classes <count>`".into()));
                    };
                    classes = Some(n.parse().map_err(|_| err(format!("`{n}` is not a count")))?);
                }
                "conv" => layers.push(LayerSpec::Conv {
                    out_channels: need("out")?,
                    kernel: need("k")?,
                    stride: kv.get("s").copied().unwrap_or(1),
                    padding: kv.get("p").copied().unwrap_or(0),
                }),
                "relu" => layers.push(LayerSpec::Relu),
                "maxpool" => {
                    let kernel = need("k")?;
                    layers.push(LayerSpec::MaxPool {
                        kernel,
                        stride: kv.get("s").copied().unwrap_or(kernel),
                    })
                }
                "flatten" => layers.push(LayerSpec::Flatten),
                "dense" => layers.push(LayerSpec::Dense {
                    out_features: need("out")?,
                }),
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        let spec = Self {
            input: input.ok_or_else(|| NetError::InvalidSpec("missing `input` line".into()))?,
            num_classes: classes.ok_or_else(|| NetError::InvalidSpec("missing `classes` line".into()))?,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}
