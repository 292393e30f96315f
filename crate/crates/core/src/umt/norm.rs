use umt_tensor::{Graph, Scalar, Tensor, Var};

use crate::error::{Result, UmtError};

use super::EncoderTaps;

/// Per-sample, per-channel spatial statistics, stored `[N, C]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats<T> {
    pub samples: usize,
    pub channels: usize,
    pub mean: Vec<T>,
    /// `sqrt(population variance + eps)`.
    pub std: Vec<T>,
}

pub fn channel_stats<T: Scalar>(x: &Tensor<T>, eps: T) -> Result<ChannelStats<T>> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let mean = g.channel_mean(v)?;
    let std = g.channel_std(v, eps)?;
    Ok(ChannelStats {
        samples: x.shape()[0],
        channels: x.shape()[1],
        mean: g.value(mean).data().to_vec(),
        std: g.value(std).data().to_vec(),
    })
}

/// Per-channel scale (α) and shift (β).
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNormAffine<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

/// `scale · (x − μ(x)) / σ(x) + shift` with `[N, C]` scale and shift.
pub fn instance_norm_var<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    scale: Var,
    shift: Var,
    eps: T,
) -> Result<Var> {
    let mean = g.channel_mean(x)?;
    let std = g.channel_std(x, eps)?;
    Ok(g.affine_normalize(x, mean, std, scale, shift)?)
}

pub fn instance_norm<T: Scalar>(
    x: &Tensor<T>,
    affine: &InstanceNormAffine<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let (n, c) = match *x.shape() {
        [n, c, _, _] => (n, c),
        ref s => {
            return Err(UmtError::Nn(umt_tensor::NnError::Shape(format!(
                "instance_norm needs a 4-D tensor, got {s:?}"
            ))))
        }
    };
    if affine.scale.len() != c || affine.shift.len() != c {
        return Err(UmtError::Nn(umt_tensor::NnError::Shape(format!(
            "affine has {}/{} entries for {c} channels",
            affine.scale.len(),
            affine.shift.len()
        ))));
    }
    let tile = |v: &[T]| Tensor::from_vec(vec![n, c], v.repeat(n));
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let scale = g.constant(tile(&affine.scale)?);
    let shift = g.constant(tile(&affine.shift)?);
    let out = instance_norm_var(&mut g, xv, scale, shift, eps)?;
    Ok(g.value(out).clone())
}

/// `σ(y) · (x − μ(x)) / σ(x) + μ(y)`; `x` and `y` may differ spatially.
pub fn adain_var<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, eps: T) -> Result<Var> {
    let (sx, sy) = (g.shape(x), g.shape(y));
    if sx.len() != 4 || sy.len() != 4 || sx[..2] != sy[..2] {
        return Err(UmtError::Nn(umt_tensor::NnError::Shape(format!(
            "adain: content {sx:?} and style {sy:?} disagree on batch or channels"
        ))));
    }
    let mean_y = g.channel_mean(y)?;
    let std_y = g.channel_std(y, eps)?;
    instance_norm_var(g, x, std_y, mean_y, eps)
}

pub fn adain<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
    let out = adain_var(&mut g, xv, yv, eps)?;
    Ok(g.value(out).clone())
}

/// Sum over taps of `‖Δμ‖₂ + ‖Δσ‖₂`, each norm over the tap's statistics.
pub fn style_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    synth: &[Var],
    style: &[Var],
    eps: T,
) -> Result<Var> {
    let targets = style
        .iter()
        .map(|&s| Ok((g.channel_mean(s)?, g.channel_std(s, eps)?)))
        .collect::<Result<Vec<_>>>()?;
    style_loss_to_stats(g, synth, &targets, eps)
}

/// Style loss against precomputed `(mean, std)` pairs, one per tap.
pub(crate) fn style_loss_to_stats<T: Scalar>(
    g: &mut Graph<T>,
    synth: &[Var],
    targets: &[(Var, Var)],
    eps: T,
) -> Result<Var> {
    if synth.len() != targets.len() || synth.is_empty() {
        return Err(UmtError::Nn(umt_tensor::NnError::Shape(format!(
            "style loss over {} synthesized and {} style taps",
            synth.len(),
            targets.len()
        ))));
    }
    let mut total: Option<Var> = None;
    for (&a, &(mb, sb)) in synth.iter().zip(targets) {
        let ma = g.channel_mean(a)?;
        let sa = g.channel_std(a, eps)?;
        let dm = g.sub(ma, mb)?;
        let ds = g.sub(sa, sb)?;
        let (nm, ns) = (g.l2_norm(dm), g.l2_norm(ds));
        let term = g.add(nm, ns)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one tap"))
}

pub fn style_loss<T: Scalar>(synth: &EncoderTaps<T>, style: &EncoderTaps<T>, eps: T) -> Result<T> {
    let mut g = Graph::new();
    let a: Vec<Var> = synth.taps.iter().map(|t| g.constant(t.clone())).collect();
    let b: Vec<Var> = style.taps.iter().map(|t| g.constant(t.clone())).collect();
    let l = style_loss_var(&mut g, &a, &b, eps)?;
    Ok(g.value(l).data()[0])
}

/// Euclidean distance over every element.
pub fn content_loss_var<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    Ok(g.l2_norm(d))
}

pub fn content_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let l = content_loss_var(&mut g, av, bv)?;
    Ok(g.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn stats_of_small_channel() {
        let s = channel_stats(&t(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]), 0.0).unwrap();
        assert_eq!(s.mean, vec![2.5]);
        assert!((s.std[0] - 1.25f64.sqrt()).abs() < 1e-12);
        let flat = t(vec![1, 1, 2, 2], vec![0.7; 4]);
        assert_eq!(channel_stats(&flat, 0.0).unwrap().std, vec![0.0]);
        let s = channel_stats(&flat, 1e-5).unwrap();
        assert!((s.std[0] - 1e-5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn instance_norm_small_channel() {
        let x = t(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let affine = InstanceNormAffine {
            scale: vec![2.0],
            shift: vec![1.0],
        };
        let out = instance_norm(&x, &affine, 0.0).unwrap();
        let sd = 1.25f64.sqrt();
        for (o, v) in out.data().iter().zip(x.data()) {
            assert!((o - (2.0 * (v - 2.5) / sd + 1.0)).abs() < 1e-12);
        }
        let zero = InstanceNormAffine {
            scale: vec![0.0],
            shift: vec![0.3],
        };
        assert!(instance_norm(&x, &zero, 0.0).unwrap().data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn adain_small_channel() {
        let x = t(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = t(vec![1, 1, 2, 2], vec![0.0, 0.0, 0.0, 2.0]);
        let out = adain(&x, &y, 0.0).unwrap();
        let want = [-0.661895, 0.112702, 0.887298, 1.661895];
        for (o, w) in out.data().iter().zip(want) {
            assert!((o - w).abs() < 1e-6, "{o} vs {w}");
        }
    }

    #[test]
    fn adain_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 3, 3]);
        let y = Tensor::<f64>::zeros(vec![1, 3, 3, 3]);
        assert!(adain(&x, &y, 1e-5).is_err());
    }

    #[test]
    fn content_loss_single_coordinate() {
        let a = Tensor::<f64>::zeros(vec![1, 2, 2, 2]);
        let mut b = a.clone();
        b.data_mut()[5] = 3.0;
        assert_eq!(content_loss(&a, &b).unwrap(), 3.0);
        assert_eq!(content_loss(&a, &a).unwrap(), 0.0);
    }
}
