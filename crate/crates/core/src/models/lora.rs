use bloinst_autodiff::{AdError, Var};

use super::ModelError;

fn check_pair(w: &[usize], a: &[usize], b: &[usize]) -> Result<(), ModelError> {
    if a.len() != 2 || b.len() != 2 || a[0] != b[1] {
        return Err(ModelError::RankMismatch {
            a: a.to_vec(),
            b: b.to_vec(),
        });
    }
    if w.len() != 2 || a[1] != w[1] || b[0] != w[0] {
        return Err(AdError::ShapeMismatch {
            op: "lora",
            lhs: w.to_vec(),
            rhs: vec![b[0], a[1]],
        }
        .into());
    }
    Ok(())
}

/// `(W + scale·B·A)·x` for a column batch `x: [d_in, n]`.
///
/// `W: [d_out, d_in]`, `A: [r, d_in]`, `B: [d_out, r]`. The low-rank path is
/// evaluated as `B·(A·x)` so the dense update is never formed; whether `W`
/// receives a gradient depends only on how the caller placed it on the tape.
pub fn lora_apply<'t>(
    x: Var<'t>,
    w: Var<'t>,
    a: Var<'t>,
    b: Var<'t>,
    scale: f64,
) -> Result<Var<'t>, ModelError> {
    check_pair(&w.shape(), &a.shape(), &b.shape())?;
    let base = w.matmul(x)?;
    let low = b.matmul(a.matmul(x)?)?.scale(scale);
    Ok(base.add(low)?)
}

/// Row-token form: `x: [L, d_in]` to `x·(W + scale·B·A)ᵀ + bias` as `[L, d_out]`.
pub fn lora_linear_rows<'t>(
    x: Var<'t>,
    w: Var<'t>,
    bias: Var<'t>,
    a: Var<'t>,
    b: Var<'t>,
    scale: f64,
) -> Result<Var<'t>, ModelError> {
    check_pair(&w.shape(), &a.shape(), &b.shape())?;
    let rows = x.shape()[0];
    let d_out = w.shape()[0];
    let base = x.matmul(w.transpose()?)?;
    let low = x
        .matmul(a.transpose()?)?
        .matmul(b.transpose()?)?
        .scale(scale);
    let bias = bias.reshape(&[1, d_out])?.broadcast_to(&[rows, d_out])?;
    Ok(base.add(low)?.add(bias)?)
}
