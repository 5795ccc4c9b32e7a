//! Assembles encoders and rendering stages into the five system variants.
//!
//! Every variant has two stages: an `(H/2, W/2)` image and an `(H, W)` image,
//! summed after up-sampling the first. The variants differ in what the first
//! stage is and in how style tensors for pixel-wise modulation are built:
//!
//! | variant              | stage 1          | style tensors           |
//! |----------------------|------------------|-------------------------|
//! | `baseline`           | modulated stack  | global style vectors    |
//! | `pixymod`            | modulated stack  | resampled concatenation |
//! | `pixymod+attnmusf`   | modulated stack  | multi-scale fusion      |
//! | `pixymod+attnpixamp` | pixel sampling   | resampled concatenation |
//! | `aprnet`             | pixel sampling   | multi-scale fusion      |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::encoders::{Encoder, EncoderKind, FeatureBank, HIGHWAY_CHANNELS, STAGE_CHANNELS};
use crate::error::{Error, Result};
use crate::musf::{LayerStyle, StyleContext, StyleMode, DEFAULT_D_F};
use crate::ops::clamp_unit;
use crate::params::{read_checkpoint, Bound, ParamStore};
use crate::pixamp::{build_sam_inputs, AttnPixamp, SamplingGrid, DEFAULT_D_S, DEFAULT_K, DEFAULT_M};
use crate::pixymod::{fuse_stages, PixyModStack, DEFAULT_CHANNEL_PLAN, DEFAULT_EPS};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    PixyMod,
    PixyModAttnMuSF,
    PixyModAttnPixamp,
    Aprnet,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::PixyMod,
        Variant::PixyModAttnMuSF,
        Variant::PixyModAttnPixamp,
        Variant::Aprnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::PixyMod => "pixymod",
            Variant::PixyModAttnMuSF => "pixymod+attnmusf",
            Variant::PixyModAttnPixamp => "pixymod+attnpixamp",
            Variant::Aprnet => "aprnet",
        }
    }

    pub fn uses_pixel_sampling(self) -> bool {
        matches!(self, Variant::PixyModAttnPixamp | Variant::Aprnet)
    }

    pub fn style_mode(self) -> StyleMode {
        match self {
            Variant::Baseline => StyleMode::Global,
            Variant::PixyMod | Variant::PixyModAttnPixamp => StyleMode::Concat,
            Variant::PixyModAttnMuSF | Variant::Aprnet => StyleMode::Attention,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub variant: Variant,
    /// Samples per axis of the pixel-sampling grid.
    pub k: usize,
    /// Spacing between samples.
    pub m: usize,
    pub d_s: usize,
    pub d_f: usize,
    pub channel_plan: Vec<usize>,
    pub eps: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Aprnet,
            k: DEFAULT_K,
            m: DEFAULT_M,
            d_s: DEFAULT_D_S,
            d_f: DEFAULT_D_F,
            channel_plan: DEFAULT_CHANNEL_PLAN.to_vec(),
            eps: DEFAULT_EPS,
        }
    }
}

impl RenderConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        SamplingGrid::new(self.k, self.m)?;
        if self.d_s == 0 || self.d_f == 0 {
            return Err(Error::config("attention widths must be positive"));
        }
        if self.channel_plan.is_empty() || self.channel_plan.contains(&0) {
            return Err(Error::config("channel plan needs at least one positive width"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config("demodulation eps must be positive"));
        }
        Ok(())
    }
}

/// A stack of modulated convolutions with one style builder per modulation.
#[derive(Clone, Debug)]
pub struct ModulatedStage {
    pub stack: PixyModStack,
    pub styles: Vec<LayerStyle>,
}

impl ModulatedStage {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, cfg: &RenderConfig) -> Self {
        let stack = PixyModStack::new(store, rng, &format!("{name}.stack"), HIGHWAY_CHANNELS, &cfg.channel_plan, cfg.eps);
        let mut content_widths = STAGE_CHANNELS.to_vec();
        content_widths.push(HIGHWAY_CHANNELS);
        let styles = stack
            .style_channels()
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let query_width = (i > 0).then_some(c);
                LayerStyle::new(
                    store,
                    rng,
                    &format!("{name}.style{}", i + 1),
                    cfg.variant.style_mode(),
                    c,
                    query_width,
                    &content_widths,
                    cfg.d_f,
                )
            })
            .collect();
        Self { stack, styles }
    }

    fn render<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        ctx: &StyleContext,
        content: Var,
        attention: &mut Vec<Tensor<T>>,
    ) -> Result<Var> {
        let (h, w, _) = tape.value(content).hwc();
        self.stack.render_with(tape, p, content, |tape, i, input| {
            let out = self.styles[i].build(tape, p, ctx, (h, w), input)?;
            attention.extend(out.attention);
            Ok(out.style)
        })
    }
}

#[derive(Clone, Debug)]
pub enum FirstStage {
    Sampling(AttnPixamp),
    Modulated(ModulatedStage),
}

/// Forward-pass handles of one rendering.
pub struct RenderOutputs<T> {
    /// Unclamped `(H, W, 3)` sum of both stages.
    pub image: Var,
    /// `(H, W, 3)` second stage.
    pub full: Var,
    /// `(H/2, W/2, 3)` first stage.
    pub half: Var,
    pub content_bank: FeatureBank,
    pub style_bank: FeatureBank,
    /// `(H, W, 4)` fusion weights of each second-stage modulation (fusion variants only).
    pub attention: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Renderer {
    pub config: RenderConfig,
    pub content_encoder: Encoder,
    pub style_encoder: Encoder,
    pub first: FirstStage,
    pub second: ModulatedStage,
}

impl Renderer {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, config: RenderConfig) -> Result<Self> {
        config.validate()?;
        let content_encoder = Encoder::new(store, rng, "content", EncoderKind::Content);
        let style_encoder = Encoder::new(store, rng, "style", EncoderKind::Style);
        let first = if config.variant.uses_pixel_sampling() {
            FirstStage::Sampling(AttnPixamp::new(
                store,
                rng,
                "sampling",
                SamplingGrid::new(config.k, config.m)?,
                config.d_s,
            ))
        } else {
            FirstStage::Modulated(ModulatedStage::new(store, rng, "stage1", &config))
        };
        let second = ModulatedStage::new(store, rng, "stage2", &config);
        Ok(Self {
            config,
            content_encoder,
            style_encoder,
            first,
            second,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, content: Var, style: Var) -> Result<RenderOutputs<T>> {
        let (ch, cw, _) = tape.value(content).expect_rank3("content image")?;
        let (sh, sw, _) = tape.value(style).expect_rank3("style image")?;
        if (ch, cw) != (sh, sw) {
            return Err(Error::shape(format!(
                "content is {ch}x{cw} but style is {sh}x{sw}"
            )));
        }
        let content_bank = self.content_encoder.encode(tape, p, content)?;
        let style_bank = self.style_encoder.encode(tape, p, style)?;
        let ctx = StyleContext::new(tape, &content_bank, &style_bank)?;
        let highway = content_bank
            .highway
            .ok_or_else(|| Error::config("content bank lacks the highway tensor"))?;

        let mut ignored = Vec::new();
        let half = match &self.first {
            FirstStage::Sampling(sampler) => {
                let inputs = build_sam_inputs(tape, &content_bank, &style_bank)?;
                sampler.render(tape, p, &inputs)?
            }
            FirstStage::Modulated(stage) => {
                let input = tape.resize(highway, ch / 2, cw / 2)?;
                stage.render(tape, p, &ctx, input, &mut ignored)?
            }
        };
        let mut attention = Vec::new();
        let full = self.second.render(tape, p, &ctx, highway, &mut attention)?;
        let image = fuse_stages(tape, full, half)?;
        Ok(RenderOutputs {
            image,
            full,
            half,
            content_bank,
            style_bank,
            attention,
        })
    }
}

/// Rendered image and its intermediates as plain tensors.
pub struct Rendered<T> {
    /// Clamped to `[0, 1]`.
    pub image: Tensor<T>,
    pub full: Tensor<T>,
    pub half: Tensor<T>,
    pub attention: Vec<Tensor<T>>,
}

/// A renderer architecture together with its parameter values.
#[derive(Clone, Debug)]
pub struct RenderModel<T: Real = f32> {
    pub renderer: Renderer,
    pub params: ParamStore<T>,
}

impl<T: Real> RenderModel<T> {
    /// Freshly initialized model; the same seed gives the same weights.
    pub fn new(config: RenderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let renderer = Renderer::new(&mut params, &mut rng, config)?;
        Ok(Self { renderer, params })
    }

    pub fn config(&self) -> &RenderConfig {
        &self.renderer.config
    }

    pub fn render(&self, content: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.render_detailed(content, style)?.image)
    }

    pub fn render_detailed(&self, content: &Tensor<T>, style: &Tensor<T>) -> Result<Rendered<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let c = tape.constant(content.clone());
        let s = tape.constant(style.clone());
        let out = self.renderer.forward(&mut tape, &p, c, s)?;
        Ok(Rendered {
            image: clamp_unit(tape.value(out.image)),
            full: tape.value(out.full).clone(),
            half: tape.value(out.half).clone(),
            attention: out.attention,
        })
    }

    pub fn cast<U: Real>(&self) -> RenderModel<U> {
        RenderModel {
            renderer: self.renderer.clone(),
            params: self.params.cast(),
        }
    }
}

impl RenderModel<f32> {
    /// Builds the architecture for `config` and loads weights from a checkpoint.
    pub fn from_checkpoint(config: RenderConfig, path: &Path) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_named(read_checkpoint(path)?)?;
        Ok(model)
    }
}
