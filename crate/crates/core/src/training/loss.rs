use crate::data::PatchSet;
use crate::error::{Error, Result};
use crate::numerics::{Array, Graph, Scalar, Var};

/// Mean squared error over the elements of masked patches only.
pub fn masked_mse<T: Scalar>(graph: &mut Graph<T>, reconstruction: Var, masked: &PatchSet) -> Result<Var> {
    let count = masked.masked_count();
    if count == 0 {
        return Err(Error::Contract("masked_mse needs at least one masked patch".into()));
    }
    let target = graph.constant(masked.target().cast());
    let mask = graph.constant(masked.element_mask().cast());
    let diff = graph.sub(reconstruction, target)?;
    let hidden = graph.mul(diff, mask)?;
    let sq = graph.mul(hidden, hidden)?;
    let total = graph.sum(sq);
    Ok(graph.scale(total, 1.0 / (count * masked.patch_len) as f64))
}

/// Mean squared error of a `B × M × T` forecast.
pub fn forecast_loss<T: Scalar>(graph: &mut Graph<T>, prediction: Var, target: &Array<f32>) -> Result<Var> {
    let t = graph.constant(target.cast());
    graph.mse(prediction, t)
}
