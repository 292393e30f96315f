use rand::{Rng, SeedableRng};
use umt_tensor::{Bound, Graph, NnError, Padding, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::error::{Result, UmtError};
use crate::prep::{AlignedPatch, PATCH_SIDE};

/// Channel count of each encoder tap.
pub const TAP_CHANNELS: [usize; 4] = [8, 16, 32, 64];
/// Spatial side of each encoder tap for a 96 × 96 input.
pub const TAP_SIDES: [usize; 4] = [96, 48, 24, 12];

const KERNEL: usize = 3;
/// Decoder convolutions as (in, out); an upsample follows the first three.
const DECODER_LAYERS: [(usize, usize); 5] = [(64, 32), (32, 16), (16, 8), (8, 8), (8, 1)];

/// `[1, 1, 96, 96]` view of one patch.
pub fn patch_tensor<T: Scalar>(p: &AlignedPatch) -> Tensor<T> {
    Tensor::from_vec(
        vec![1, 1, PATCH_SIDE, PATCH_SIDE],
        p.pixels.iter().map(|&v| T::lit(v as f64)).collect(),
    )
    .expect("patch invariant guarantees the size")
}

/// `[N, 1, 96, 96]` batch, with `f` applied to every pixel.
pub fn patches_tensor<T: Scalar>(patches: &[&AlignedPatch], f: impl Fn(f32) -> f32) -> Tensor<T> {
    let data = patches
        .iter()
        .flat_map(|p| p.pixels.iter().map(|&v| T::lit(f(v) as f64)))
        .collect();
    Tensor::from_vec(vec![patches.len(), 1, PATCH_SIDE, PATCH_SIDE], data)
        .expect("patch invariant guarantees the size")
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
}

pub(crate) fn push_conv<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    cin: usize,
    cout: usize,
    rng: &mut R,
) -> ConvLayer {
    let fan_in = cin * KERNEL * KERNEL;
    ConvLayer {
        weight: store.push(
            format!("{name}.weight"),
            Tensor::he_uniform(vec![cout, cin, KERNEL, KERNEL], fan_in, rng),
            true,
        ),
        bias: store.push(format!("{name}.bias"), Tensor::zeros(vec![cout]), true),
    }
}

pub(crate) fn conv<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    layer: ConvLayer,
    x: Var,
    padding: Padding,
) -> Result<Var> {
    Ok(g.conv2d(x, bound.var(layer.weight), bound.var(layer.bias), padding)?)
}

/// The four encoder feature maps, shallowest first.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTaps<T> {
    pub taps: [Tensor<T>; 4],
}

impl<T: Scalar> EncoderTaps<T> {
    pub fn deepest(&self) -> &Tensor<T> {
        &self.taps[3]
    }
}

/// Four conv3×3 + relu stages with 2× average pooling between them; zero
/// padding.
#[derive(Debug, Clone)]
pub struct Encoder<T = f32> {
    pub params: ParamStore<T>,
    layers: [ConvLayer; 4],
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut cin = 1;
        let layers = std::array::from_fn(|i| {
            let l = push_conv(&mut params, &format!("enc.conv{i}"), cin, TAP_CHANNELS[i], rng);
            cin = TAP_CHANNELS[i];
            l
        });
        Self { params, layers }
    }

    /// Rebuilds an encoder from stored weights, matched by name and shape.
    pub fn from_params(params: &ParamStore<T>) -> Result<Self> {
        let mut enc = Self::new(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        enc.params.load_values(params)?;
        Ok(enc)
    }

    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<[Var; 4]> {
        match *g.shape(x) {
            [_, 1, h, w] if h == PATCH_SIDE && w == PATCH_SIDE => {}
            ref s => {
                return Err(UmtError::Nn(NnError::Shape(format!(
                    "encoder expects [N, 1, {PATCH_SIDE}, {PATCH_SIDE}], got {s:?}"
                ))))
            }
        }
        let mut taps = [x; 4];
        let mut h = x;
        for (i, &layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.avg_pool2(h)?;
            }
            let c = conv(g, bound, layer, h, Padding::Zero)?;
            h = g.relu(c);
            taps[i] = h;
        }
        Ok(taps)
    }

    /// Inference-only forward pass.
    pub fn encode(&self, x: &Tensor<T>) -> Result<EncoderTaps<T>> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let taps = self.forward(&mut g, &bound, xv)?;
        Ok(EncoderTaps {
            taps: taps.map(|v| g.value(v).clone()),
        })
    }

    /// Binds every weight as a constant, whatever its trainable flag.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        let mut frozen = self.params.clone();
        frozen.set_trainable(false);
        frozen.bind(g)
    }
}

/// Mirror of the encoder: conv3×3 + relu with nearest 2× upsampling, reflect
/// padding, and a linear single-channel output.
#[derive(Debug, Clone)]
pub struct Decoder<T = f32> {
    pub params: ParamStore<T>,
    layers: [ConvLayer; 5],
}

impl<T: Scalar> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let layers = std::array::from_fn(|i| {
            let (cin, cout) = DECODER_LAYERS[i];
            push_conv(&mut params, &format!("dec.conv{i}"), cin, cout, rng)
        });
        Self { params, layers }
    }

    pub fn from_params(params: &ParamStore<T>) -> Result<Self> {
        let mut dec = Self::new(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        dec.params.load_values(params)?;
        Ok(dec)
    }

    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, t: Var) -> Result<Var> {
        let mut h = t;
        let last = self.layers.len() - 1;
        for (i, &layer) in self.layers.iter().enumerate() {
            h = conv(g, bound, layer, h, Padding::Reflect)?;
            if i < last {
                h = g.relu(h);
            }
            if i < 3 {
                h = g.upsample_nearest2(h)?;
            }
        }
        Ok(h)
    }

    /// Inference-only forward pass; output is not clamped.
    pub fn decode(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut frozen = self.params.clone();
        frozen.set_trainable(false);
        let bound = frozen.bind(&mut g);
        let tv = g.constant(t.clone());
        let out = self.forward(&mut g, &bound, tv)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tap_shapes_and_round_trip_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::<f32>::new(&mut rng);
        let dec = Decoder::<f32>::new(&mut rng);
        let x = Tensor::full(vec![1, 1, 96, 96], 0.5);
        let taps = enc.encode(&x).unwrap();
        for (i, t) in taps.taps.iter().enumerate() {
            assert_eq!(t.shape(), &[1, TAP_CHANNELS[i], TAP_SIDES[i], TAP_SIDES[i]]);
        }
        assert_eq!(dec.decode(taps.deepest()).unwrap().shape(), &[1, 1, 96, 96]);
        assert!(enc.encode(&Tensor::zeros(vec![1, 1, 48, 48])).is_err());
    }

    #[test]
    fn rebuild_from_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = Encoder::<f32>::new(&mut rng);
        let again = Encoder::from_params(&enc.params).unwrap();
        assert_eq!(again.params.checksum(), enc.params.checksum());
        assert!(Decoder::from_params(&enc.params).is_err());
    }
}
