//! Central finite-difference gradient checking, independent of the reverse
//! sweep it is used to verify.

use crate::{Graph, Result, Tensor, Var};

/// Outcome of one checked coordinate.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `build` with central differences.
///
/// `build` records the inputs it is given (in order, as gradient-carrying
/// leaves) and returns a scalar loss. At most `max_probes` coordinates are
/// sampled per input, spread evenly over the flattened tensor.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    max_probes: usize,
    build: F,
) -> Result<Vec<Probe>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;

    let mut probes = Vec::new();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = (n / max_probes.max(1)).max(1);
        let analytic = g.grad(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for idx in (0..n).step_by(stride).take(max_probes) {
            let orig = input.data()[idx];
            work[i].data_mut()[idx] = orig + step;
            let up = eval(&work)?;
            work[i].data_mut()[idx] = orig - step;
            let down = eval(&work)?;
            work[i].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            probes.push(Probe {
                input: i,
                index: idx,
                analytic: analytic[idx],
                numeric,
                rel_error: relative_error(analytic[idx], numeric, 1e-6),
            });
        }
    }
    Ok(probes)
}

/// Largest relative error among the probes.
pub fn worst(probes: &[Probe]) -> f64 {
    probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
}
