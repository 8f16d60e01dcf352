//! Conditional relation network unit.
//!
//! Maps an array of objects and a conditioning feature to an array of
//! tuple-relation summaries: for each tuple size `k` in the sampling plan,
//! the selected subsets are average-pooled, conditioned on the context
//! feature through a linear+ELU map (optionally gated by a sigmoid branch),
//! and averaged into one output object per `k`. Output objects keep the
//! input object shape, so units stack.
//!
//! Objects are rank-1 feature vectors `[d]` or rank-2 positional tensors
//! `[s, d]`; the conditioning feature is always a vector and is broadcast
//! across positions before concatenation along the feature extent.

use rand::Rng;

use crate::params::{ModelError, ModelParams, TapeBinder};
use crate::sampler::SubsetPlan;
use crate::tensor::{Tape, TensorId};

/// Average-pool a subset of same-shaped objects (the `g` aggregation).
pub fn aggregate(tape: &mut Tape, members: &[TensorId]) -> Result<TensorId, ModelError> {
    Ok(tape.mean_list(members)?)
}

/// Condition a pooled object on a context vector (the `h` map).
///
/// Plain: `ELU(W1 [x, c] + b1)`. Gated: `ELU(W1 [x, c] + b1) *
/// sigmoid(W2 [x, c] + b2)`. Weights are looked up under
/// `{prefix}.k{k}.{w1,b1,w2,b2}`.
pub fn condition(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    prefix: &str,
    k: usize,
    pooled: TensorId,
    cond: TensorId,
    gated: bool,
) -> Result<TensorId, ModelError> {
    let obj_shape = tape.shape(pooled).to_vec();
    let cond_shape = tape.shape(cond).to_vec();
    if cond_shape.len() != 1 {
        return Err(ModelError::BadInput(format!(
            "conditioning feature must be a vector, got shape {cond_shape:?}"
        )));
    }
    let joined = match obj_shape.len() {
        1 => tape.concat(&[pooled, cond], 0)?,
        2 => {
            let tiled = tape.broadcast_rows(cond, obj_shape[0]);
            tape.concat(&[pooled, tiled], 1)?
        }
        _ => {
            return Err(ModelError::BadInput(format!(
                "objects must be rank 1 or 2, got shape {obj_shape:?}"
            )))
        }
    };
    let w1 = binder.bind(tape, &format!("{prefix}.k{k}.w1"))?;
    let b1 = binder.bind(tape, &format!("{prefix}.k{k}.b1"))?;
    let lin = tape.linear(joined, w1, Some(b1))?;
    let act = tape.elu(lin);
    if !gated {
        return Ok(act);
    }
    let w2 = binder.bind(tape, &format!("{prefix}.k{k}.w2"))?;
    let b2 = binder.bind(tape, &format!("{prefix}.k{k}.b2"))?;
    let lin2 = tape.linear(joined, w2, Some(b2))?;
    let gate = tape.sigmoid(lin2);
    Ok(tape.hadamard(act, gate)?)
}

/// Full unit forward: one output object per tuple size, ascending `k`.
pub fn forward(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    prefix: &str,
    inputs: &[TensorId],
    cond: TensorId,
    plan: &SubsetPlan,
    gated: bool,
) -> Result<Vec<TensorId>, ModelError> {
    if inputs.is_empty() {
        return Err(ModelError::BadInput("empty object array".into()));
    }
    if plan.n != inputs.len() {
        return Err(ModelError::BadInput(format!(
            "plan built for n={} but got {} objects",
            plan.n,
            inputs.len()
        )));
    }
    let item_shape = tape.shape(inputs[0]).to_vec();
    for &obj in inputs {
        if tape.shape(obj) != item_shape.as_slice() {
            return Err(ModelError::BadInput(
                "object array must be shape-homogeneous".into(),
            ));
        }
    }
    let mut out = Vec::with_capacity(plan.selected.len());
    for (k, subsets) in &plan.selected {
        let mut conditioned = Vec::with_capacity(subsets.len());
        for subset in subsets {
            let members: Vec<TensorId> = subset.iter().map(|&i| inputs[i]).collect();
            let pooled = aggregate(tape, &members)?;
            conditioned.push(condition(tape, binder, prefix, *k, pooled, cond, gated)?);
        }
        out.push(tape.mean_list(&conditioned)?);
    }
    Ok(out)
}

/// Create the unit's weights for the given tuple sizes.
///
/// One weight set per tuple size, shared across all subsets of that size.
/// `obj_d` is the object feature extent, `cond_d` the conditioning extent.
pub fn init_unit<R: Rng>(
    params: &mut ModelParams,
    prefix: &str,
    tuple_sizes: &[usize],
    obj_d: usize,
    cond_d: usize,
    gated: bool,
    rng: &mut R,
) {
    for &k in tuple_sizes {
        let fan_in = obj_d + cond_d;
        params.init_linear(&format!("{prefix}.k{k}.w1"), fan_in, obj_d, rng);
        params.init_zeros(&format!("{prefix}.k{k}.b1"), vec![obj_d]);
        if gated {
            params.init_linear(&format!("{prefix}.k{k}.w2"), fan_in, obj_d, rng);
            params.init_zeros(&format!("{prefix}.k{k}.b2"), vec![obj_d]);
        }
    }
}
