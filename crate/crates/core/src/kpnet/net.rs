use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{conv3x3, conv3x3_backward, prelu, prelu_backward, upsample_bilinear, upsample_bilinear_backward};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::sepconv::SeparableKernelField;
use crate::tensor::Tensor;

pub const HEAD_NAMES: [&str; 4] = ["k1h", "k1v", "k2h", "k2v"];

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

/// Head weights start this much smaller than the fan-in bound, so the initial
/// kernels stay close to uniform and every kernel mass stays positive.
pub const HEAD_WEIGHT_INIT_SCALE: f64 = 0.1;

fn default_image_channels() -> usize {
    3
}

/// Shape of the kernel prediction network.
///
/// Level `l` runs at `1 / 2^l` resolution with `base_channels * 2^l` features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KPNetConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    /// Channels per input frame; the network sees both frames concatenated.
    #[serde(default = "default_image_channels")]
    pub image_channels: usize,
}

impl Default for KPNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 16,
            kernel_size: 5,
            image_channels: 3,
        }
    }
}

impl KPNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::Config(format!("levels must be in 1..=8, got {}", self.levels)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be at least 1".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::Config(format!(
                "image_channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Level whose decoder output feeds the kernel heads.
    pub fn head_level(&self) -> usize {
        self.levels.min(2) - 1
    }

    /// Both spatial dimensions of the input must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.spatial_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Indivisible {
                height: h,
                width: w,
                multiple: m,
            });
        }
        Ok(())
    }
}

/// One named parameter tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Clone, Debug)]
struct Conv {
    weight: Range<usize>,
    bias: Range<usize>,
    stride: usize,
}

#[derive(Clone, Debug)]
struct Prelu {
    slope: Range<usize>,
}

#[derive(Clone, Debug)]
struct Residual {
    conv1: Conv,
    act: Prelu,
    conv2: Conv,
}

/// Parameter layout derived from a config.
#[derive(Clone, Debug)]
struct Layout {
    specs: Vec<ParamSpec>,
    encoder: Vec<(Conv, Prelu)>,
    /// Residual block on the skip path of levels `head_level..levels`.
    skips: Vec<Residual>,
    /// Decoder stage producing level `head_level + i`.
    decoder: Vec<(Conv, Prelu)>,
    heads: Vec<Conv>,
    total: usize,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
    offset: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> Range<usize> {
        let n: usize = shape.iter().product();
        let range = self.offset..self.offset + n;
        self.offset += n;
        self.specs.push(ParamSpec {
            name,
            shape,
            range: range.clone(),
        });
        range
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, stride: usize) -> Conv {
        Conv {
            weight: self.push(format!("{name}.weight"), vec![cout, cin, 3, 3]),
            bias: self.push(format!("{name}.bias"), vec![cout]),
            stride,
        }
    }

    fn prelu(&mut self, name: &str, channels: usize) -> Prelu {
        Prelu {
            slope: self.push(format!("{name}.slope"), vec![channels]),
        }
    }
}

impl Layout {
    fn new(cfg: &KPNetConfig) -> Self {
        let mut b = LayoutBuilder {
            specs: Vec::new(),
            offset: 0,
        };
        let levels = cfg.levels;
        let hl = cfg.head_level();
        let mut encoder = Vec::with_capacity(levels);
        for l in 0..levels {
            let (cin, stride) = if l == 0 {
                (2 * cfg.image_channels, 1)
            } else {
                (cfg.channels(l - 1), 2)
            };
            let conv = b.conv(&format!("enc{l}.conv"), cin, cfg.channels(l), stride);
            let act = b.prelu(&format!("enc{l}.act"), cfg.channels(l));
            encoder.push((conv, act));
        }
        let skips = (hl..levels)
            .map(|l| {
                let c = cfg.channels(l);
                Residual {
                    conv1: b.conv(&format!("skip{l}.conv1"), c, c, 1),
                    act: b.prelu(&format!("skip{l}.act"), c),
                    conv2: b.conv(&format!("skip{l}.conv2"), c, c, 1),
                }
            })
            .collect();
        let decoder = (hl..levels - 1)
            .map(|l| {
                let conv = b.conv(&format!("dec{l}.conv"), cfg.channels(l + 1), cfg.channels(l), 1);
                let act = b.prelu(&format!("dec{l}.act"), cfg.channels(l));
                (conv, act)
            })
            .collect();
        let heads = HEAD_NAMES
            .iter()
            .map(|n| b.conv(&format!("head.{n}"), cfg.channels(hl), cfg.kernel_size, 1))
            .collect();
        Layout {
            total: b.offset,
            specs: b.specs,
            encoder,
            skips,
            decoder,
            heads,
        }
    }
}

/// Activations retained by [`KPNet::forward`] for [`KPNet::backward`].
#[derive(Clone, Debug)]
pub struct ActivationTape<T> {
    input: Tensor<T>,
    enc_pre: Vec<Tensor<T>>,
    enc: Vec<Tensor<T>>,
    /// Per skip level: pre-activation and activation of the first conv.
    skip_hidden: Vec<(Tensor<T>, Tensor<T>)>,
    /// Per decoder stage: upsampled input and conv pre-activation.
    dec: Vec<(Tensor<T>, Tensor<T>)>,
    head_in: Tensor<T>,
}

/// Kernel prediction network mapping two normalized frames to the four
/// per-pixel kernel fields.
///
/// Encoder: a full-resolution 3x3 conv followed by stride-2 3x3 convs, each
/// with PReLU. Every skip connection from the head level down, and the
/// bottleneck, passes through a residual block. The decoder upsamples
/// bilinearly by two, convolves, and adds the skip. Four heads each upsample
/// the decoder output to full resolution first and then emit `K` channels
/// with one 3x3 conv.
#[derive(Clone, Debug)]
pub struct KPNet<T = f32> {
    config: KPNetConfig,
    seed: u64,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Real> KPNet<T> {
    /// Fan-in scaled uniform weights (damped by [`HEAD_WEIGHT_INIT_SCALE`] in
    /// the heads), zero hidden biases, PReLU slopes of 0.25, and head biases
    /// giving every frame a uniform kernel of mass 1/2.
    pub fn init(config: KPNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.total];
        let head_bias = 1.0 / (config.kernel_size as f64 * 2f64.sqrt());
        for spec in &layout.specs {
            let slot = &mut params[spec.range.clone()];
            if spec.name.ends_with(".weight") {
                let fan_in = (spec.shape[1] * 9) as f64;
                let damping = if spec.name.starts_with("head.") {
                    HEAD_WEIGHT_INIT_SCALE
                } else {
                    1.0
                };
                let bound = damping / fan_in.sqrt();
                slot.iter_mut().for_each(|v| *v = T::of(rng.gen_range(-bound..bound)));
            } else if spec.name.ends_with(".slope") {
                slot.iter_mut().for_each(|v| *v = T::of(PRELU_INIT));
            } else if spec.name.starts_with("head.") {
                slot.iter_mut().for_each(|v| *v = T::of(head_bias));
            }
        }
        Ok(Self {
            config,
            seed,
            layout,
            params,
        })
    }

    /// Rebuilds a network from a flat parameter vector laid out for `config`.
    pub fn from_params(config: KPNetConfig, seed: u64, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::shape(format!(
                "config needs {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            config,
            seed,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &KPNetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> KPNet<U> {
        KPNet {
            config: self.config.clone(),
            seed: self.seed,
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn conv(&self, c: &Conv, x: &Tensor<T>) -> Tensor<T> {
        conv3x3(
            x,
            &self.params[c.weight.clone()],
            &self.params[c.bias.clone()],
            c.stride,
        )
    }

    fn act(&self, a: &Prelu, x: &Tensor<T>) -> Tensor<T> {
        prelu(x, &self.params[a.slope.clone()])
    }

    /// Weights and biases of the four heads stacked along the output channels.
    fn stacked_heads(&self) -> (Vec<T>, Vec<T>) {
        let mut weight = Vec::new();
        let mut bias = Vec::new();
        for c in &self.layout.heads {
            weight.extend_from_slice(&self.params[c.weight.clone()]);
            bias.extend_from_slice(&self.params[c.bias.clone()]);
        }
        (weight, bias)
    }

    /// Predicts kernels from two normalized, unpadded `[C, H, W]` frames.
    pub fn forward(&self, i1n: &Tensor<T>, i2n: &Tensor<T>) -> Result<(SeparableKernelField<T>, ActivationTape<T>)> {
        let (c, h, w) = i1n.expect_chw("network input")?;
        i1n.expect_same_shape(i2n, "network inputs")?;
        if c != self.config.image_channels {
            return Err(Error::shape(format!(
                "network expects {} channels per frame, got {c}",
                self.config.image_channels
            )));
        }
        self.config.check_input(h, w)?;
        let levels = self.config.levels;
        let hl = self.config.head_level();
        let input = Tensor::concat_channels(&[i1n, i2n])?;

        let mut enc_pre = Vec::with_capacity(levels);
        let mut enc: Vec<Tensor<T>> = Vec::with_capacity(levels);
        for (l, (conv, act)) in self.layout.encoder.iter().enumerate() {
            let pre = self.conv(conv, if l == 0 { &input } else { &enc[l - 1] });
            enc.push(self.act(act, &pre));
            enc_pre.push(pre);
        }

        let mut skip_hidden = Vec::with_capacity(self.layout.skips.len());
        let mut skip_out = Vec::with_capacity(self.layout.skips.len());
        for (i, block) in self.layout.skips.iter().enumerate() {
            let e = &enc[hl + i];
            let pre = self.conv(&block.conv1, e);
            let hidden = self.act(&block.act, &pre);
            let mut out = self.conv(&block.conv2, &hidden);
            out.add_assign(e);
            skip_hidden.push((pre, hidden));
            skip_out.push(out);
        }

        let mut d = skip_out.pop().expect("at least one skip level");
        let mut dec = vec![None; self.layout.decoder.len()];
        for (i, (conv, act)) in self.layout.decoder.iter().enumerate().rev() {
            let up = upsample_bilinear(&d, 2);
            let pre = self.conv(conv, &up);
            d = self.act(act, &pre);
            d.add_assign(&skip_out[i]);
            dec[i] = Some((up, pre));
        }
        let dec = dec.into_iter().map(|s| s.expect("every decoder stage ran")).collect();

        let head_in = upsample_bilinear(&d, 1 << hl);
        let (weight, bias) = self.stacked_heads();
        let stacked = conv3x3(&head_in, &weight, &bias, 1);
        let plane = self.config.kernel_size * h * w;
        let [k1h, k1v, k2h, k2v] = [0, 1, 2, 3].map(|i| {
            let data = stacked.data()[i * plane..(i + 1) * plane].to_vec();
            Tensor::new(vec![self.config.kernel_size, h, w], data).expect("head output extent")
        });
        let field = SeparableKernelField::new(k1h, k1v, k2h, k2v)?;
        Ok((
            field,
            ActivationTape {
                input,
                enc_pre,
                enc,
                skip_hidden,
                dec,
                head_in,
            },
        ))
    }

    /// Gradient of a scalar loss with respect to every parameter, given its
    /// gradient with respect to the predicted kernel fields.
    pub fn backward(&self, tape: &ActivationTape<T>, grad: &SeparableKernelField<T>) -> Result<Vec<T>> {
        let (_, h, w) = tape.head_in.chw();
        if (grad.height(), grad.width(), grad.kernel_size()) != (h, w, self.config.kernel_size) {
            return Err(Error::shape(format!(
                "kernel gradient [{}, {}, {}] does not match tape [{}, {h}, {w}]",
                grad.kernel_size(),
                grad.height(),
                grad.width(),
                self.config.kernel_size
            )));
        }
        let hl = self.config.head_level();
        let levels = self.config.levels;
        let mut g = vec![T::zero(); self.layout.total];
        let p = &self.params;

        let conv_back = |g: &mut Vec<T>, c: &Conv, x: &Tensor<T>, dy: &Tensor<T>, need: bool| {
            let (gw, gb) = split_pair(g, &c.weight, &c.bias);
            conv3x3_backward(x, &p[c.weight.clone()], dy, c.stride, gw, gb, need)
        };
        let act_back = |g: &mut Vec<T>, a: &Prelu, x: &Tensor<T>, dy: &Tensor<T>| {
            prelu_backward(x, &p[a.slope.clone()], dy, &mut g[a.slope.clone()])
        };

        // The four heads share their input and run as one stacked conv.
        let (weight, _) = self.stacked_heads();
        let k = self.config.kernel_size;
        let mut stacked = Vec::with_capacity(4 * k * h * w);
        grad.fields().iter().for_each(|f| stacked.extend_from_slice(f.data()));
        let stacked = Tensor::new(vec![4 * k, h, w], stacked)?;
        let mut gw = vec![T::zero(); weight.len()];
        let mut gb = vec![T::zero(); 4 * k];
        let g_head_in =
            conv3x3_backward(&tape.head_in, &weight, &stacked, 1, &mut gw, &mut gb, true).expect("input grad");
        let per_head = weight.len() / 4;
        for (i, conv) in self.layout.heads.iter().enumerate() {
            g[conv.weight.clone()].copy_from_slice(&gw[i * per_head..(i + 1) * per_head]);
            g[conv.bias.clone()].copy_from_slice(&gb[i * k..(i + 1) * k]);
        }

        // Gradient flowing into each decoder output d_l, indexed from the head level.
        let n_skip = self.layout.skips.len();
        let mut g_d: Vec<Option<Tensor<T>>> = vec![None; n_skip];
        g_d[0] = Some(upsample_bilinear_backward(&g_head_in, 1 << hl));
        let mut g_skip: Vec<Option<Tensor<T>>> = vec![None; n_skip];
        for (i, (conv, act)) in self.layout.decoder.iter().enumerate() {
            let gd = g_d[i].take().expect("decoder gradient");
            let (up, pre) = &tape.dec[i];
            let g_pre = act_back(&mut g, act, pre, &gd);
            let g_up = conv_back(&mut g, conv, up, &g_pre, true).expect("input grad");
            g_d[i + 1] = Some(upsample_bilinear_backward(&g_up, 2));
            g_skip[i] = Some(gd);
        }
        g_skip[n_skip - 1] = g_d[n_skip - 1].take();

        let mut g_enc: Vec<Option<Tensor<T>>> = vec![None; levels];
        for (i, block) in self.layout.skips.iter().enumerate() {
            let gr = g_skip[i].take().expect("skip gradient");
            let e = &tape.enc[hl + i];
            let (pre, hidden) = &tape.skip_hidden[i];
            let g_hidden = conv_back(&mut g, &block.conv2, hidden, &gr, true).expect("input grad");
            let g_pre = act_back(&mut g, &block.act, pre, &g_hidden);
            let mut ge = conv_back(&mut g, &block.conv1, e, &g_pre, true).expect("input grad");
            ge.add_assign(&gr);
            g_enc[hl + i] = Some(ge);
        }

        for l in (0..levels).rev() {
            let Some(ge) = g_enc[l].take() else { continue };
            let (conv, act) = &self.layout.encoder[l];
            let g_pre = act_back(&mut g, act, &tape.enc_pre[l], &ge);
            let x = if l == 0 { &tape.input } else { &tape.enc[l - 1] };
            if let Some(gx) = conv_back(&mut g, conv, x, &g_pre, l > 0) {
                match &mut g_enc[l - 1] {
                    Some(acc) => acc.add_assign(&gx),
                    slot => *slot = Some(gx),
                }
            }
        }
        Ok(g)
    }
}

/// Disjoint mutable views of two non-overlapping ranges, weight before bias.
fn split_pair<'a, T>(g: &'a mut [T], first: &Range<usize>, second: &Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(first.end <= second.start);
    let (a, b) = g.split_at_mut(second.start);
    (&mut a[first.clone()], &mut b[..second.len()])
}
