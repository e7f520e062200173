use ndarray::Array2;
use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Per-item loss and gradients, one matrix per bound parameter.
pub type ItemGradients = (f64, Vec<Array2<f64>>);

/// Gradients held by `tape` for `vars`, zeros where nothing flowed.
pub fn collect_gradients(tape: &Tape, vars: &[Var]) -> Vec<Array2<f64>> {
    vars.iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(tape.value(v).raw_dim()))
        })
        .collect()
}

/// Evaluates `f` on every item in parallel and sums the results in item
/// order, so the reduction is bitwise independent of thread scheduling.
pub fn sum_gradients<T, F>(items: &[T], f: F) -> Result<(Vec<f64>, Vec<Array2<f64>>)>
where
    T: Sync,
    F: Fn(&T) -> Result<ItemGradients> + Sync + Send,
{
    let results: Vec<ItemGradients> = items.par_iter().map(f).collect::<Result<_>>()?;
    let mut losses = Vec::with_capacity(results.len());
    let mut total: Option<Vec<Array2<f64>>> = None;
    for (loss, grads) in results {
        losses.push(loss);
        match &mut total {
            None => total = Some(grads),
            Some(t) => {
                for (acc, g) in t.iter_mut().zip(grads) {
                    *acc += &g;
                }
            }
        }
    }
    Ok((losses, total.unwrap_or_default()))
}
