//! The U-shaped segmentation network and its ablation variants.
//!
//! Level widths are `W, 2W, 4W, 8W, 16W` for levels 0 through 4. Data flow:
//!
//! ```text
//! e0 = init(x)                         level 0, width W
//! e_k = enc_k(e_{k-1})                 k = 1..4
//! b4 = res2(res1(e4))   | e4           (residual variants | others)
//! g4 = [hab4(e4, b4) | e4, b4]         channel concat
//! for k = 3..0:
//!     f_k = dec_k(g_{k+1})             upsample + conv to width of level k
//!     g_k = [hab_k(e_k, f_k) | e_k, f_k]
//! probs = softmax_C(classifier(head(g0)))
//! ```

mod cost;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    join, ConvParams, ConvUnit, DecoderStep, EncoderBlock, HybridAttentionBlock, Module, ResidualBlock, TensorRole,
};
use crate::data::{crop, reflect_pad, round_up};
use crate::error::{Error, Result};
use crate::nn::{concat_channels, narrow_channels, softmax, Mode};
use crate::tensor::{no_grad, Element, Tensor};

pub use cost::{LayerCost, ModelCost};

/// Input extents must be multiples of this (four 2x poolings).
pub const SIZE_MULTIPLE: usize = 16;
pub const LEVELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    BaselineRb,
    BaselineHab,
    Rha,
    RhaLite,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::BaselineRb,
        Variant::BaselineHab,
        Variant::Rha,
        Variant::RhaLite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::BaselineRb => "baseline-rb",
            Variant::BaselineHab => "baseline-hab",
            Variant::Rha => "rha",
            Variant::RhaLite => "rha-lite",
        }
    }

    /// Stable code used in checkpoint files.
    pub fn code(self) -> u8 {
        match self {
            Variant::Baseline => 0,
            Variant::BaselineRb => 1,
            Variant::BaselineHab => 2,
            Variant::Rha => 3,
            Variant::RhaLite => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Variant::ALL.get(code as usize).copied()
    }

    pub fn has_residual(self) -> bool {
        matches!(self, Variant::BaselineRb | Variant::Rha | Variant::RhaLite)
    }

    pub fn has_attention(self) -> bool {
        matches!(self, Variant::BaselineHab | Variant::Rha | Variant::RhaLite)
    }

    /// Whether 3x3 convolutions are depthwise separable.
    pub fn separable(self) -> bool {
        self == Variant::RhaLite
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub base_width: usize,
    pub in_channels: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, base_width: usize) -> Self {
        Self {
            variant,
            base_width,
            in_channels: 3,
            classes: 2,
        }
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Variant::Rha, 16)
    }
}

#[derive(Clone, Debug)]
pub struct Model<T: Element = f32> {
    config: ModelConfig,
    mode: Mode,
    init: ConvUnit<T>,
    /// `encoders[k - 1]` produces level `k`.
    encoders: Vec<EncoderBlock<T>>,
    residual: Vec<ResidualBlock<T>>,
    /// Indexed by level; empty for variants without attention.
    attention: Vec<HybridAttentionBlock<T>>,
    /// `decoders[k]` produces level `k` from level `k + 1`.
    decoders: Vec<DecoderStep<T>>,
    head: ConvUnit<T>,
    classifier: ConvParams<T>,
}

impl<T: Element> Model<T> {
    /// Builds and initializes a model: Kaiming fan-in weights, zero biases,
    /// unit BN scale, all drawn from a generator seeded with `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.base_width == 0 {
            return Err(Error::invalid("build", "base width must be at least 1"));
        }
        if config.in_channels == 0 || config.classes == 0 {
            return Err(Error::invalid("build", "channel and class counts must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = config.variant;
        let sep = v.separable();
        let w = |level| config.width(level);

        let init = ConvUnit::new(config.in_channels, w(0), sep, &mut rng);
        let encoders = (1..LEVELS)
            .map(|k| EncoderBlock::new(w(k - 1), w(k), sep, &mut rng))
            .collect();
        let residual = if v.has_residual() {
            (0..2).map(|_| ResidualBlock::new(w(4), &mut rng)).collect()
        } else {
            Vec::new()
        };
        let attention = if v.has_attention() {
            (0..LEVELS).map(|k| HybridAttentionBlock::new(w(k), &mut rng)).collect()
        } else {
            Vec::new()
        };
        let decoders = (0..LEVELS - 1)
            .map(|k| DecoderStep::new(2 * w(k + 1), w(k), sep, &mut rng))
            .collect();
        let head = ConvUnit::new(2 * w(0), w(0), sep, &mut rng);
        let classifier = ConvParams::dense(w(0), config.classes, 1, true, &mut rng);

        Ok(Self {
            config,
            mode: Mode::Train,
            init,
            encoders,
            residual,
            attention,
            decoders,
            head,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4("forward")?;
        if c != self.config.in_channels {
            return Err(Error::invalid(
                "forward",
                format!(
                    "expected {} input channels, got shape {:?}",
                    self.config.in_channels,
                    x.shape()
                ),
            ));
        }
        if h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 || h == 0 || w == 0 {
            return Err(Error::IndivisibleExtent {
                height: h,
                width: w,
                multiple: SIZE_MULTIPLE,
            });
        }
        Ok(())
    }

    /// Skip features for `level`: attention output or the encoder features.
    fn skip(&self, level: usize, low: &Tensor<T>, high: &Tensor<T>) -> Result<Tensor<T>> {
        match self.attention.get(level) {
            Some(hab) => hab.forward(low, high),
            None => Ok(low.clone()),
        }
    }

    /// Per-pixel class probabilities `N x classes x H x W`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mode = self.mode;
        let mut enc = Vec::with_capacity(LEVELS);
        enc.push(self.init.forward(x, mode)?);
        for block in &self.encoders {
            let next = block.forward(enc.last().expect("non-empty"), mode)?;
            enc.push(next);
        }
        let mut bottleneck = enc[LEVELS - 1].clone();
        for block in &self.residual {
            bottleneck = block.forward(&bottleneck, mode)?;
        }
        let mut merged = concat_channels(&self.skip(LEVELS - 1, &enc[LEVELS - 1], &bottleneck)?, &bottleneck)?;
        for level in (0..LEVELS - 1).rev() {
            let high = self.decoders[level].forward(&merged, mode)?;
            merged = concat_channels(&self.skip(level, &enc[level], &high)?, &high)?;
        }
        let logits = self.classifier.forward(&self.head.forward(&merged, mode)?)?;
        softmax(&logits, 1)
    }

    /// Crack-class probability `N x 1 x H x W` (channel 1 of [`forward`](Self::forward)).
    pub fn crack_probability(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        narrow_channels(&self.forward(x)?, 1, 1)
    }

    /// Crack probabilities `H x W` for one `3 x H x W` image of any size:
    /// reflect-padded to a multiple of 16, run in evaluation mode without
    /// recording, and cropped back.
    pub fn predict_image(&self, image: &[T], height: usize, width: usize) -> Result<Vec<T>> {
        if image.len() != self.config.in_channels * height * width {
            return Err(Error::invalid(
                "predict_image",
                format!("{} values for a {height}x{width} image", image.len()),
            ));
        }
        let (ph, pw) = (round_up(height, SIZE_MULTIPLE), round_up(width, SIZE_MULTIPLE));
        let padded = reflect_pad(image, height, width, ph, pw);
        let x = Tensor::from_vec(&[1, self.config.in_channels, ph, pw], padded)?;
        let mut eval = self.clone();
        eval.set_mode(Mode::Eval);
        let p = no_grad(|| eval.crack_probability(&x))?;
        Ok(crop(&p.to_vec(), ph, pw, height, width))
    }

    /// Learnable tensors in a fixed order.
    pub fn params(&self) -> Vec<(String, Tensor<T>)> {
        self.named_tensors("")
            .into_iter()
            .filter(|(_, _, role)| *role == TensorRole::Param)
            .map(|(n, t, _)| (n, t))
            .collect()
    }

    pub fn zero_grad(&self) {
        self.visit("", &mut |_, t, _| t.zero_grad());
    }

    /// Exact number of learnable scalars (BN scale/shift included, running
    /// statistics excluded).
    pub fn count_params(&self) -> usize {
        self.param_count()
    }

    /// Analytic per-layer cost at the given `N x C x H x W` input shape.
    pub fn cost(&self, input: [usize; 4]) -> Result<ModelCost> {
        cost::model_cost(self, input)
    }

    pub fn count_flops(&self, input: [usize; 4]) -> Result<u64> {
        Ok(self.cost(input)?.flops())
    }

    /// Copies every tensor value (parameters and running statistics) from
    /// `other`, converting element type. Shapes must agree.
    pub fn load_values_from<U: Element>(&self, other: &Model<U>) -> Result<()> {
        let theirs = other.named_tensors("");
        let ours = self.named_tensors("");
        if theirs.len() != ours.len() {
            return Err(Error::invalid("load_values_from", "models have different layouts"));
        }
        for ((name, t, _), (other_name, o, _)) in ours.iter().zip(&theirs) {
            if name != other_name || t.shape() != o.shape() {
                return Err(Error::invalid(
                    "load_values_from",
                    format!("{name} does not match {other_name}"),
                ));
            }
            t.set_data(o.cast::<T>().to_vec())?;
        }
        Ok(())
    }
}

impl<T: Element> Module<T> for Model<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.init.visit(&join(prefix, "init"), f);
        for (i, enc) in self.encoders.iter().enumerate() {
            enc.visit(&join(prefix, &format!("enc{}", i + 1)), f);
        }
        for (i, res) in self.residual.iter().enumerate() {
            res.visit(&join(prefix, &format!("res{}", i + 1)), f);
        }
        for (level, hab) in self.attention.iter().enumerate() {
            hab.visit(&join(prefix, &format!("hab{level}")), f);
        }
        for (level, dec) in self.decoders.iter().enumerate() {
            dec.visit(&join(prefix, &format!("dec{level}")), f);
        }
        self.head.visit(&join(prefix, "head.conv"), f);
        self.classifier.visit(&join(prefix, "head.classifier"), f);
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use rand::Rng;

    fn names(m: &Model<f32>) -> BTreeSet<String> {
        m.params().into_iter().map(|(n, _)| n).collect()
    }

    #[test]
    fn variant_round_trips() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_code(v.code()), Some(v));
        }
        assert!(matches!("unet".parse::<Variant>(), Err(Error::UnknownVariant(_))));
        assert_eq!(Variant::from_code(5), None);
    }

    #[test]
    fn baseline_and_rha_differ_by_res_and_hab() {
        let base = Model::<f32>::build(ModelConfig::new(Variant::Baseline, 4), 0).unwrap();
        let full = Model::<f32>::build(ModelConfig::new(Variant::Rha, 4), 0).unwrap();
        let extra: Vec<String> = names(&full).difference(&names(&base)).cloned().collect();
        assert!(!extra.is_empty());
        assert!(extra.iter().all(|n| n.starts_with("res") || n.starts_with("hab")));
        assert!(names(&base).is_subset(&names(&full)));
        assert!(names(&full).contains("enc2.conv1.weight"));
    }

    #[test]
    fn names_are_unique() {
        for v in Variant::ALL {
            let m = Model::<f32>::build(ModelConfig::new(v, 2), 0).unwrap();
            let all = m.named_tensors("");
            let set: BTreeSet<_> = all.iter().map(|(n, _, _)| n.clone()).collect();
            assert_eq!(set.len(), all.len(), "{v}");
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::<f32>::build(ModelConfig::new(Variant::Rha, 4), 9).unwrap();
        let b = Model::<f32>::build(ModelConfig::new(Variant::Rha, 4), 9).unwrap();
        let c = Model::<f32>::build(ModelConfig::new(Variant::Rha, 4), 10).unwrap();
        let bits = |m: &Model<f32>| -> Vec<u32> {
            m.params()
                .iter()
                .flat_map(|(_, t)| t.to_vec())
                .map(f32::to_bits)
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn output_shape_and_normalization() {
        let mut m = Model::<f32>::build(ModelConfig::new(Variant::Rha, 4), 1).unwrap();
        m.set_mode(Mode::Eval);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_vec(&[1, 3, 64, 64], (0..3 * 64 * 64).map(|_| rng.random::<f32>()).collect()).unwrap();
        let y = no_grad(|| m.forward(&x)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 64, 64]);
        let d = y.to_vec();
        for p in 0..64 * 64 {
            assert!((d[p] + d[64 * 64 + p] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let m = Model::<f32>::build(ModelConfig::new(Variant::Baseline, 2), 1).unwrap();
        let err = m.forward(&Tensor::zeros(&[1, 3, 40, 32])).unwrap_err();
        assert!(matches!(err, Error::IndivisibleExtent { height: 40, .. }));
        assert!(err.to_string().contains("pad"));
        assert!(m.forward(&Tensor::zeros(&[1, 1, 32, 32])).is_err());
    }

    #[test]
    fn saturated_head_bias_predicts_crack() {
        let mut m = Model::<f32>::build(ModelConfig::new(Variant::Rha, 2), 1).unwrap();
        m.set_mode(Mode::Eval);
        for (_, t) in m.params() {
            t.set_data(vec![0.0; t.numel()]).unwrap();
        }
        m.classifier.bias.as_ref().unwrap().set_data(vec![0.0, 10.0]).unwrap();
        let p = m.crack_probability(&Tensor::full(&[1, 3, 32, 32], 0.3)).unwrap();
        assert!(p.to_vec().iter().all(|&v| (v - 1.0).abs() < 1e-4));
    }

    #[test]
    fn predict_image_crops_to_input_size() {
        let m = Model::<f32>::build(ModelConfig::new(Variant::RhaLite, 2), 4).unwrap();
        let img = vec![0.5; 3 * 20 * 35];
        let p = m.predict_image(&img, 20, 35).unwrap();
        assert_eq!(p.len(), 20 * 35);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(m.mode(), Mode::Train);
        assert!(m.predict_image(&img, 20, 34).is_err());
    }

    #[test]
    fn build_rejects_zero_width() {
        assert!(Model::<f32>::build(ModelConfig::new(Variant::Rha, 0), 0).is_err());
    }
}
