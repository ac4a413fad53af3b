use super::{FlatParams, Network, Tensor};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference estimate of `d f / d params[i]` for each `i` in
/// `coords` (all coordinates when `None`). Entries outside `coords` are zero.
pub fn central_difference<F>(params: &[f64], mut f: F, coords: Option<&[usize]>) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut work = params.to_vec();
    let mut out = vec![0.0; params.len()];
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    for &i in coords {
        let orig = work[i];
        work[i] = orig + FD_STEP;
        let plus = f(&work)?;
        work[i] = orig - FD_STEP;
        let minus = f(&work)?;
        work[i] = orig;
        out[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(out)
}

/// Finite-difference gradient of `loss(forward(net, input))` with respect to
/// the network parameters.
pub fn finite_diff_gradient<L>(
    net: &Network,
    input: &Tensor,
    loss: L,
    coords: Option<&[usize]>,
) -> Result<FlatParams>
where
    L: Fn(&Tensor) -> Result<f64>,
{
    let flat = net.flatten();
    let mut probe = net.clone();
    let grad = central_difference(
        flat.values(),
        |p| {
            probe.load_flat(p)?;
            let (out, _) = probe.forward(input)?;
            loss(&out)
        },
        coords,
    )?;
    flat.with_values(grad)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, restricted to `coords`
/// when given. Two zero vectors compare as 0.
pub fn relative_error(a: &[f64], b: &[f64], coords: Option<&[usize]>) -> f64 {
    let pick = |i: usize| (a[i], b[i]);
    let pairs: Vec<(f64, f64)> = match coords {
        Some(c) => c.iter().map(|&i| pick(i)).collect(),
        None => (0..a.len()).map(pick).collect(),
    };
    let diff: f64 = pairs.iter().map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = pairs.iter().map(|(x, _)| x * x).sum::<f64>().sqrt();
    let nb: f64 = pairs.iter().map(|(_, y)| y * y).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
