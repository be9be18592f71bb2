//! Analytic parameter and FLOP accounting.
//!
//! Convention: a multiply-accumulate is 2 FLOPs. On top of convolution MACs,
//! each elementwise operation is counted per output element:
//!
//! | operation               | FLOPs per element |
//! |-------------------------|-------------------|
//! | conv bias add           | 1                 |
//! | ReLU, sigmoid, add, mul | 1                 |
//! | batch norm (folded)     | 2                 |
//! | softmax                 | 3                 |
//! | 2x2 max pool (output)   | 3                 |
//! | global average pool     | 1 (per input)     |
//! | bilinear 2x (output)    | 8                 |
//!
//! Concatenation is free.

use serde::Serialize;

use super::{Model, LEVELS};
use crate::blocks::{ConvParams, ConvUnit, DsConvUnit, HybridAttentionBlock, Module, ResidualBlock};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Cost of one named layer at a particular input shape.
#[derive(Clone, Debug, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub params: usize,
    pub macs: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ModelCost {
    pub layers: Vec<LayerCost>,
}

impl ModelCost {
    pub fn flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    pub fn macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn params(&self) -> usize {
        self.layers.iter().map(|l| l.params).sum()
    }

    /// Each depthwise-separable unit as `(name, dw + pw weights, dense 3x3 weights)`.
    pub fn separable_units(&self) -> Vec<(String, usize, usize)> {
        self.layers
            .iter()
            .filter(|l| l.kind == "ds_conv")
            .map(|l| {
                let ds = 9 * l.in_channels + l.in_channels * l.out_channels;
                (l.name.clone(), ds, 9 * l.in_channels * l.out_channels)
            })
            .collect()
    }
}

struct Walker {
    batch: u64,
    cost: ModelCost,
}

impl Walker {
    fn push(
        &mut self,
        name: String,
        kind: &'static str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        params: usize,
        macs: u64,
        flops: u64,
    ) {
        self.cost.layers.push(LayerCost {
            name,
            kind,
            in_channels: c_in,
            out_channels: c_out,
            kernel,
            params,
            macs: macs * self.batch,
            flops: flops * self.batch,
        });
    }

    /// Elementwise-only layer.
    fn elementwise(&mut self, name: String, kind: &'static str, channels: usize, flops: u64) {
        self.push(name, kind, channels, channels, 0, 0, 0, flops);
    }

    fn conv<T: Element>(&mut self, name: String, conv: &ConvParams<T>, pixels: u64) {
        let k = conv.kernel();
        let (c_in, c_out) = (conv.in_channels(), conv.out_channels());
        let per_pixel = if conv.depthwise {
            c_in * k * k
        } else {
            c_out * c_in * k * k
        };
        let macs = per_pixel as u64 * pixels;
        let bias = if conv.bias.is_some() { c_out as u64 * pixels } else { 0 };
        let kind = if conv.depthwise { "depthwise_conv" } else { "conv" };
        self.push(name, kind, c_in, c_out, k, conv.param_count(), macs, 2 * macs + bias);
    }

    fn ds_unit<T: Element>(&mut self, name: String, unit: &DsConvUnit<T>, pixels: u64) {
        let (c_in, c_out) = (unit.in_channels() as u64, unit.out_channels() as u64);
        let macs = (9 * c_in + c_in * c_out) * pixels;
        // BN (2) + ReLU (1) after each half
        let elementwise = 3 * (c_in + c_out) * pixels;
        self.push(
            name,
            "ds_conv",
            unit.in_channels(),
            unit.out_channels(),
            3,
            unit.param_count(),
            macs,
            2 * macs + elementwise,
        );
    }

    fn unit<T: Element>(&mut self, name: String, unit: &ConvUnit<T>, pixels: u64) {
        match unit {
            ConvUnit::Plain(conv) => {
                self.conv(name.clone(), conv, pixels);
                self.elementwise(
                    format!("{name}.relu"),
                    "relu",
                    conv.out_channels(),
                    conv.out_channels() as u64 * pixels,
                );
            }
            ConvUnit::Separable(u) => self.ds_unit(name, u, pixels),
        }
    }

    fn residual<T: Element>(&mut self, name: String, block: &ResidualBlock<T>, pixels: u64) {
        self.ds_unit(format!("{name}.unit1"), &block.unit1, pixels);
        self.ds_unit(format!("{name}.unit2"), &block.unit2, pixels);
        let c = block.unit2.out_channels();
        self.elementwise(format!("{name}.skip"), "add", c, c as u64 * pixels);
    }

    fn attention<T: Element>(&mut self, name: String, hab: &HybridAttentionBlock<T>, pixels: u64) {
        let c = hab.channels() as u64;
        // F_l + F_h, three global pools
        self.elementwise(format!("{name}.pool"), "gap", c as usize, c * pixels + 3 * c * pixels);
        for (suffix, conv) in [
            ("conv_p", &hab.conv_p),
            ("conv_l", &hab.conv_l),
            ("conv_h", &hab.conv_h),
        ] {
            self.conv(format!("{name}.{suffix}"), conv, 1);
            self.elementwise(format!("{name}.{suffix}.relu"), "relu", c as usize, c);
        }
        // M_p * M_l + M_h, identity pool on a 1x1 map
        self.elementwise(format!("{name}.fuse"), "mul_add", c as usize, 3 * c);
        self.conv(format!("{name}.conv_c"), &hab.conv_c, 1);
        self.elementwise(format!("{name}.softmax"), "softmax", c as usize, c + 3 * c);
        self.elementwise(format!("{name}.channel_scale"), "mul", c as usize, c * pixels);
        for (suffix, conv) in [("conv_s1", &hab.conv_s1), ("conv_s2", &hab.conv_s2)] {
            self.conv(format!("{name}.{suffix}"), conv, pixels);
            self.elementwise(format!("{name}.{suffix}.relu"), "relu", 1, pixels);
        }
        // add, sigmoid, final gating
        self.elementwise(
            format!("{name}.gate"),
            "sigmoid_mul",
            c as usize,
            2 * pixels + c * pixels,
        );
    }
}

pub(super) fn model_cost<T: Element>(model: &Model<T>, input: [usize; 4]) -> Result<ModelCost> {
    let [n, c, h, w] = input;
    model.check_input(&Tensor::<T>::zeros(&[0, c, h, w]))?;
    let cfg = model.config();
    let pixels = |level: usize| ((h >> level) * (w >> level)) as u64;
    let mut walker = Walker {
        batch: n as u64,
        cost: ModelCost::default(),
    };

    walker.unit("init".into(), &model.init, pixels(0));
    for (i, enc) in model.encoders.iter().enumerate() {
        let level = i + 1;
        let c_prev = cfg.width(level - 1);
        walker.elementwise(
            format!("enc{level}.pool"),
            "maxpool",
            c_prev,
            3 * c_prev as u64 * pixels(level),
        );
        walker.unit(format!("enc{level}.conv1"), &enc.conv1, pixels(level));
        walker.unit(format!("enc{level}.conv2"), &enc.conv2, pixels(level));
    }
    for (i, res) in model.residual.iter().enumerate() {
        walker.residual(format!("res{}", i + 1), res, pixels(LEVELS - 1));
    }
    if let Some(hab) = model.attention.get(LEVELS - 1) {
        walker.attention(format!("hab{}", LEVELS - 1), hab, pixels(LEVELS - 1));
    }
    for level in (0..LEVELS - 1).rev() {
        let merged = 2 * cfg.width(level + 1);
        walker.elementwise(
            format!("dec{level}.upsample"),
            "bilinear",
            merged,
            8 * merged as u64 * pixels(level),
        );
        walker.unit(format!("dec{level}.conv"), &model.decoders[level].conv, pixels(level));
        if let Some(hab) = model.attention.get(level) {
            walker.attention(format!("hab{level}"), hab, pixels(level));
        }
    }
    walker.unit("head.conv".into(), &model.head, pixels(0));
    walker.conv("head.classifier".into(), &model.classifier, pixels(0));
    walker.elementwise(
        "head.softmax".into(),
        "softmax",
        cfg.classes,
        3 * cfg.classes as u64 * pixels(0),
    );
    Ok(walker.cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use rand::SeedableRng;

    #[test]
    fn single_conv_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let conv = ConvParams::<f32>::dense(3, 16, 3, true, &mut rng);
        assert_eq!(conv.param_count(), 448);
        let mut w = Walker {
            batch: 1,
            cost: ModelCost::default(),
        };
        w.conv("c".into(), &conv, 16);
        let layer = &w.cost.layers[0];
        assert_eq!(layer.macs, 9 * 3 * 16 * 16);
        assert_eq!(layer.macs, 6912);
        assert_eq!(layer.flops, 13824 + 256);
    }

    #[test]
    fn layer_params_sum_to_model_params() {
        for v in Variant::ALL {
            let m = Model::<f32>::build(ModelConfig::new(v, 4), 0).unwrap();
            let cost = m.cost([1, 3, 64, 64]).unwrap();
            assert_eq!(cost.params(), m.count_params(), "{v}");
        }
    }

    #[test]
    fn flops_scale_with_batch_and_reject_bad_shape() {
        let m = Model::<f32>::build(ModelConfig::new(Variant::Rha, 2), 0).unwrap();
        let one = m.count_flops([1, 3, 32, 32]).unwrap();
        assert_eq!(m.count_flops([3, 3, 32, 32]).unwrap(), 3 * one);
        assert!(m.count_flops([1, 3, 30, 32]).is_err());
    }

    #[test]
    fn separable_units_are_cheaper() {
        let m = Model::<f32>::build(ModelConfig::new(Variant::RhaLite, 16), 0).unwrap();
        let units = m.cost([1, 3, 64, 64]).unwrap().separable_units();
        // init, 8 encoder convs, 4 residual units, 4 decoder convs, head
        assert_eq!(units.len(), 18);
        assert!(units.iter().all(|(_, ds, dense)| ds < dense));
    }
}
