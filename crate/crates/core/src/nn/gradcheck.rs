use crate::nn::{EmbeddingNet, Tensor};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst relative error between analytic gradients and central differences of
/// the probe loss `Σ embedding`, over every parameter.
pub fn grad_check(net: &EmbeddingNet, input: &Tensor, eps: f64) -> crate::Result<f64> {
    if !(eps > 0.0) {
        return Err(crate::Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (_, cache) = net.forward(input)?;
    let ones = Tensor::vector(vec![1.0; net.spec.embed_dim]);
    let analytic = net.backward(&cache, &ones)?;

    let probe = |n: &EmbeddingNet| -> f64 { n.forward_slice(input.data()).0.data().iter().sum() };
    let mut work = net.clone();
    let mut worst = 0.0f64;
    for i in 0..net.params.count() {
        let w = net.params.get_flat(i);
        work.params.set_flat(i, w + eps);
        let plus = probe(&work);
        work.params.set_flat(i, w - eps);
        let minus = probe(&work);
        work.params.set_flat(i, w);
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.0.get_flat(i), numeric));
    }
    Ok(worst)
}
