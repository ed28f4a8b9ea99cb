use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Network, ParamSet};
use crate::numerics::cross_entropy_with_labels;
use crate::scalar::Scalar;

/// Rows per evaluation forward pass.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Eval-mode accuracy (argmax, ties to the lowest class) and mean cross-entropy.
pub fn evaluate<T: Scalar>(network: &Network, params: &ParamSet<T>, ds: &Dataset<T>) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::InvalidDataset("cannot evaluate on an empty dataset".into()));
    }
    let n = ds.len();
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let rows: Vec<usize> = (0..n).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = ds.features().select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
        let logits = network.predict(params, &x)?;
        for (r, &label) in y.iter().enumerate() {
            if logits.row_argmax(r) == label {
                correct += 1;
            }
        }
        let (loss, _) = cross_entropy_with_labels(&logits, &y)?;
        loss_sum += loss.to_f64_lossy() * chunk.len() as f64;
    }
    Ok(Evaluation {
        accuracy: correct as f64 / n as f64,
        loss: loss_sum / n as f64,
    })
}
