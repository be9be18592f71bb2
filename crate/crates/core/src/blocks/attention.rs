//! Hybrid attention: a softmax channel weighting followed by a sigmoid
//! spatial gate, both computed from a low-level/high-level feature pair.

use rand::Rng;

use super::{join, ConvParams, Module, TensorRole};
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, relu, sigmoid, softmax};
use crate::tensor::{Element, Tensor};

/// Six 1x1 convolutions with bias. `conv_p`, `conv_l`, `conv_h`, `conv_c`
/// map `C -> C` for the channel branch; `conv_s1`, `conv_s2` map `C -> 1`
/// for the spatial branch.
#[derive(Clone, Debug)]
pub struct HybridAttentionBlock<T: Element = f32> {
    pub conv_p: ConvParams<T>,
    pub conv_l: ConvParams<T>,
    pub conv_h: ConvParams<T>,
    pub conv_c: ConvParams<T>,
    pub conv_s1: ConvParams<T>,
    pub conv_s2: ConvParams<T>,
}

/// 1x1 conv then ReLU.
fn project<T: Element>(conv: &ConvParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(relu(&conv.forward(x)?))
}

impl<T: Element> HybridAttentionBlock<T> {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        let mut conv = |c_out| ConvParams::dense(channels, c_out, 1, true, rng);
        Self {
            conv_p: conv(channels),
            conv_l: conv(channels),
            conv_h: conv(channels),
            conv_c: conv(channels),
            conv_s1: conv(1),
            conv_s2: conv(1),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv_p.in_channels()
    }

    fn check_pair(&self, op: &'static str, low: &Tensor<T>, high: &Tensor<T>) -> Result<()> {
        if low.shape() != high.shape() {
            return Err(Error::shape(op, low.shape(), high.shape()));
        }
        let (_, c, _, _) = low.dims4(op)?;
        if c != self.channels() {
            return Err(Error::shape(op, low.shape(), self.conv_p.weight.shape()));
        }
        Ok(())
    }

    /// Channel attention map `N x C x 1 x 1`, summing to one over channels.
    ///
    /// `M_p = ReLU(conv_p(GAP(F_l + F_h)))`, `M_l = ReLU(conv_l(GAP(F_l)))`,
    /// `M_h = ReLU(conv_h(GAP(F_h)))`, then
    /// `softmax_C(ReLU(conv_c(AvgPool(M_p * M_l + M_h))))`. The average
    /// pool acts on a 1x1 map and is therefore the identity.
    pub fn channel_attention(&self, low: &Tensor<T>, high: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_pair("channel_attention", low, high)?;
        let m_p = project(&self.conv_p, &global_avg_pool(&low.add(high)?)?)?;
        let m_l = project(&self.conv_l, &global_avg_pool(low)?)?;
        let m_h = project(&self.conv_h, &global_avg_pool(high)?)?;
        let fused = m_p.mul(&m_l)?.add(&m_h)?;
        let logits = project(&self.conv_c, &global_avg_pool(&fused)?)?;
        softmax(&logits, 1)
    }

    /// Spatial attention map `N x 1 x H x W`:
    /// `sigmoid(ReLU(conv_s1(F_l')) + ReLU(conv_s2(F_h)))`, always in `[0.5, 1)`.
    pub fn spatial_attention(&self, low_weighted: &Tensor<T>, high: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_pair("spatial_attention", low_weighted, high)?;
        let a = project(&self.conv_s1, low_weighted)?;
        let b = project(&self.conv_s2, high)?;
        Ok(sigmoid(&a.add(&b)?))
    }

    /// `M_s(M_c * F_l, F_h) * F_l`; the spatial gate multiplies the original
    /// low-level features, not the channel-weighted ones.
    pub fn forward(&self, low: &Tensor<T>, high: &Tensor<T>) -> Result<Tensor<T>> {
        let m_c = self.channel_attention(low, high)?;
        let low_weighted = low.mul(&m_c)?;
        let m_s = self.spatial_attention(&low_weighted, high)?;
        low.mul(&m_s)
    }
}

impl<T: Element> Module<T> for HybridAttentionBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.conv_p.visit(&join(prefix, "conv_p"), f);
        self.conv_l.visit(&join(prefix, "conv_l"), f);
        self.conv_h.visit(&join(prefix, "conv_h"), f);
        self.conv_c.visit(&join(prefix, "conv_c"), f);
        self.conv_s1.visit(&join(prefix, "conv_s1"), f);
        self.conv_s2.visit(&join(prefix, "conv_s2"), f);
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::testing::{random, randomize, rng, zero_weights};
    use crate::tensor::{finite_diff_grad, relative_error};

    #[test]
    fn single_channel_map_is_one() {
        let mut r = rng(20);
        let hab = HybridAttentionBlock::<f64>::new(1, &mut r);
        randomize(&hab, &mut r);
        let (l, h) = (random(&[2, 1, 3, 3], &mut r), random(&[2, 1, 3, 3], &mut r));
        assert_eq!(hab.channel_attention(&l, &h).unwrap().to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn zero_weights_give_uniform_channels_half_gate() {
        let mut r = rng(21);
        let hab = HybridAttentionBlock::<f32>::new(4, &mut r);
        zero_weights(&hab);
        let l = random(&[2, 4, 3, 5], &mut r).cast::<f32>();
        let h = random(&[2, 4, 3, 5], &mut r).cast::<f32>();
        assert_eq!(hab.channel_attention(&l, &h).unwrap().to_vec(), vec![0.25; 8]);
        let ms = hab.spatial_attention(&l, &h).unwrap();
        assert_eq!(ms.shape(), &[2, 1, 3, 5]);
        assert!(ms.to_vec().iter().all(|&v| v == 0.5));
        let out = hab.forward(&l, &h).unwrap().to_vec();
        let half: Vec<f32> = l.to_vec().iter().map(|v| 0.5 * v).collect();
        assert_eq!(out, half);
    }

    #[test]
    fn zero_low_features_absorb() {
        let mut r = rng(22);
        let hab = HybridAttentionBlock::<f64>::new(3, &mut r);
        let h = random(&[1, 3, 4, 4], &mut r);
        let out = hab.forward(&Tensor::zeros(&[1, 3, 4, 4]), &h).unwrap();
        assert!(out.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maps_match_scalar_reference() {
        let mut r = rng(23);
        let hab = HybridAttentionBlock::<f64>::new(4, &mut r);
        randomize(&hab, &mut r);
        let (n, c, hh, ww) = (2, 4, 3, 4);
        let l = random(&[n, c, hh, ww], &mut r);
        let h = random(&[n, c, hh, ww], &mut r);
        let mc = hab.channel_attention(&l, &h).unwrap().to_vec();
        let ms = hab
            .spatial_attention(&l.mul(&hab.channel_attention(&l, &h).unwrap()).unwrap(), &h)
            .unwrap()
            .to_vec();
        let out = hab.forward(&l, &h).unwrap().to_vec();
        let p = hh * ww;
        for s in 0..n {
            let (lv, hv) = (
                &l.to_vec()[s * c * p..(s + 1) * c * p],
                &h.to_vec()[s * c * p..(s + 1) * c * p],
            );
            let (rc, rs, ro) = reference::hab(&hab, lv, hv, c, p);
            assert!(relative_error(&mc[s * c..(s + 1) * c], &rc) < 1e-12);
            assert!((mc[s * c..(s + 1) * c].iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(relative_error(&ms[s * p..(s + 1) * p], &rs) < 1e-12);
            assert!(relative_error(&out[s * c * p..(s + 1) * c * p], &ro) < 1e-12);
        }
    }

    #[test]
    fn spatial_map_in_half_open_unit_band() {
        let mut r = rng(24);
        for _ in 0..20 {
            let hab = HybridAttentionBlock::<f32>::new(3, &mut r);
            let l = random(&[1, 3, 4, 4], &mut r).cast::<f32>();
            let h = random(&[1, 3, 4, 4], &mut r).cast::<f32>();
            let ms = hab.spatial_attention(&l, &h).unwrap();
            assert!(ms.to_vec().iter().all(|&v| (0.5..1.0).contains(&v)));
        }
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let hab = HybridAttentionBlock::<f32>::new(2, &mut rng(25));
        let a = Tensor::zeros(&[1, 2, 4, 4]);
        let b = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(hab.forward(&a, &b).is_err());
        assert!(hab.channel_attention(&a, &b).is_err());
        assert!(hab.spatial_attention(&a, &b).is_err());
    }

    #[test]
    fn scaling_low_features_keeps_channel_map_normalized() {
        let mut r = rng(26);
        let hab = HybridAttentionBlock::<f64>::new(3, &mut r);
        let l = random(&[1, 3, 4, 4], &mut r);
        let h = random(&[1, 3, 4, 4], &mut r);
        for alpha in [0.5, 2.0, 7.0] {
            let mc = hab.channel_attention(&l.scale(alpha), &h).unwrap().to_vec();
            assert!((mc.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(27);
        let hab = HybridAttentionBlock::<f64>::new(2, &mut r);
        randomize(&hab, &mut r);
        let l = random(&[1, 2, 4, 4], &mut r).tracked();
        let h = random(&[1, 2, 4, 4], &mut r).tracked();
        let proj = random(&[1, 2, 4, 4], &mut r);
        let f = |l: &Tensor<f64>, h: &Tensor<f64>| Ok(hab.forward(l, h)?.mul(&proj)?.sum());
        f(&l, &h).unwrap().backward().unwrap();
        let nl = finite_diff_grad(|t| f(t, &h.detach()), &l, 1e-4).unwrap();
        let nh = finite_diff_grad(|t| f(&l.detach(), t), &h, 1e-4).unwrap();
        assert!(relative_error(&l.grad().unwrap(), &nl.to_vec()) < 1e-4);
        assert!(relative_error(&h.grad().unwrap(), &nh.to_vec()) < 1e-4);
    }
}
