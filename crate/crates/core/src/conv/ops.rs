use std::sync::Arc;

use rayon::prelude::*;

use crate::voxel::{NeighborMap, SparseTensor};
use crate::{Error, Result, Scalar};

use super::GroupedSparseKernel;

const ROW_CHUNK: usize = 64;

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct ConvTape<T = f32> {
    input: Arc<SparseTensor<T>>,
    nmap: Arc<NeighborMap>,
    generation: u64,
    shape: (usize, usize, usize),
}

impl<T> ConvTape<T> {
    pub fn input(&self) -> &SparseTensor<T> {
        &self.input
    }

    pub fn nmap(&self) -> &NeighborMap {
        &self.nmap
    }
}

fn check_forward<T: Scalar>(x: &SparseTensor<T>, kernel: &GroupedSparseKernel<T>, nmap: &NeighborMap) -> Result<()> {
    if x.channels() != kernel.d_in() {
        return Err(Error::ShapeMismatch(format!("input has {} channels, kernel expects {}", x.channels(), kernel.d_in())));
    }
    if nmap.rows() != x.len() || nmap.num_slots() != kernel.num_slots() {
        return Err(Error::ShapeMismatch(format!(
            "neighbor map ({} rows, {} slots) does not fit input ({} rows) and kernel ({} slots)",
            nmap.rows(),
            nmap.num_slots(),
            x.len(),
            kernel.num_slots()
        )));
    }
    Ok(())
}

/// `out[c] = sum over (slot, r) in nmap(c) of W[slot] * x[r]`, coordinates unchanged.
pub fn subm_conv_forward<T: Scalar>(
    x: &SparseTensor<T>,
    kernel: &GroupedSparseKernel<T>,
    nmap: &NeighborMap,
) -> Result<SparseTensor<T>> {
    let order: Vec<usize> = (0..kernel.d_in()).collect();
    subm_conv_forward_ordered(x, kernel, nmap, &order)
}

/// Forward pass that reduces over input channels in the given order.
///
/// Per output element, terms are accumulated slot by slot (ascending) and, within
/// a slot, over input channels in `in_order`. Permuting the input channels of
/// both `x` and the kernel while permuting `in_order` alongside therefore
/// reproduces the output bit for bit.
pub fn subm_conv_forward_ordered<T: Scalar>(
    x: &SparseTensor<T>,
    kernel: &GroupedSparseKernel<T>,
    nmap: &NeighborMap,
    in_order: &[usize],
) -> Result<SparseTensor<T>> {
    check_forward(x, kernel, nmap)?;
    let (d_out, d_in) = (kernel.d_out(), kernel.d_in());
    if in_order.len() != d_in {
        return Err(Error::ShapeMismatch(format!("channel order of {} for {} inputs", in_order.len(), d_in)));
    }
    // [slot][in][out] so that the inner loop is an axpy over output channels
    let slots = kernel.num_slots();
    let w = kernel.weights();
    let mut wt = vec![T::zero(); w.len()];
    for s in 0..slots {
        for o in 0..d_out {
            for i in 0..d_in {
                wt[(s * d_in + i) * d_out + o] = w[(s * d_out + o) * d_in + i];
            }
        }
    }
    let feats = x.feats();
    let mut out = vec![T::zero(); x.len() * d_out];
    out.par_chunks_mut(ROW_CHUNK * d_out.max(1)).enumerate().for_each(|(chunk, rows)| {
        for (k, acc) in rows.chunks_mut(d_out.max(1)).enumerate() {
            let c = chunk * ROW_CHUNK + k;
            for p in nmap.row(c) {
                let xr = &feats[p.row as usize * d_in..(p.row as usize + 1) * d_in];
                let ws = &wt[p.slot as usize * d_in * d_out..(p.slot as usize + 1) * d_in * d_out];
                for &i in in_order {
                    let xi = xr[i];
                    if xi == T::zero() {
                        continue;
                    }
                    for (a, &wv) in acc.iter_mut().zip(&ws[i * d_out..(i + 1) * d_out]) {
                        *a = *a + wv * xi;
                    }
                }
            }
        }
    });
    x.replace_feats(out, d_out)
}

/// Forward pass that also records a tape for [`subm_conv_backward`].
pub fn subm_conv_forward_taped<T: Scalar>(
    x: Arc<SparseTensor<T>>,
    kernel: &GroupedSparseKernel<T>,
    nmap: Arc<NeighborMap>,
) -> Result<(SparseTensor<T>, ConvTape<T>)> {
    let order: Vec<usize> = (0..kernel.d_in()).collect();
    subm_conv_forward_taped_ordered(x, kernel, nmap, &order)
}

/// [`subm_conv_forward_taped`] with an explicit input-channel reduction order.
pub fn subm_conv_forward_taped_ordered<T: Scalar>(
    x: Arc<SparseTensor<T>>,
    kernel: &GroupedSparseKernel<T>,
    nmap: Arc<NeighborMap>,
    in_order: &[usize],
) -> Result<(SparseTensor<T>, ConvTape<T>)> {
    let out = subm_conv_forward_ordered(&x, kernel, &nmap, in_order)?;
    let tape = ConvTape {
        input: x,
        nmap,
        generation: kernel.generation(),
        shape: (kernel.num_slots(), kernel.d_out(), kernel.d_in()),
    };
    Ok((out, tape))
}

fn check_tape<T: Scalar>(grad_out: &[T], tape: &ConvTape<T>, kernel: &GroupedSparseKernel<T>) -> Result<()> {
    if tape.generation != kernel.generation() || tape.shape != (kernel.num_slots(), kernel.d_out(), kernel.d_in()) {
        return Err(Error::StaleTape("kernel changed since the forward pass".into()));
    }
    if grad_out.len() != tape.input.len() * kernel.d_out() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient has {} values, expected {} rows x {}",
            grad_out.len(),
            tape.input.len(),
            kernel.d_out()
        )));
    }
    Ok(())
}

/// Input gradient only: `grad_in[r] = sum over c reading r of W[slot]^T grad_out[c]`.
pub fn subm_conv_backward_input<T: Scalar>(
    grad_out: &[T],
    tape: &ConvTape<T>,
    kernel: &GroupedSparseKernel<T>,
) -> Result<Vec<T>> {
    check_tape(grad_out, tape, kernel)?;
    let (d_out, d_in) = (kernel.d_out(), kernel.d_in());
    let slots = kernel.num_slots();
    let w = kernel.weights();
    let nmap = &*tape.nmap;
    let mut grad_in = vec![T::zero(); tape.input.len() * d_in];
    // (slot', c) in nmap(r) means c = r + off[slot'], so r feeds c through slot mirror(slot').
    grad_in.par_chunks_mut(ROW_CHUNK * d_in.max(1)).enumerate().for_each(|(chunk, rows)| {
        for (k, acc) in rows.chunks_mut(d_in.max(1)).enumerate() {
            let r = chunk * ROW_CHUNK + k;
            for p in nmap.row(r) {
                let s = slots - 1 - p.slot as usize;
                let g = &grad_out[p.row as usize * d_out..(p.row as usize + 1) * d_out];
                for (o, &go) in g.iter().enumerate() {
                    if go == T::zero() {
                        continue;
                    }
                    let wrow = &w[(s * d_out + o) * d_in..(s * d_out + o + 1) * d_in];
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a = *a + wv * go;
                    }
                }
            }
        }
    });
    Ok(grad_in)
}

/// Exact adjoint of [`subm_conv_forward`]. Returns `(grad_in, grad_W)`; `grad_W`
/// is zero wherever the mask is off.
pub fn subm_conv_backward<T: Scalar>(
    grad_out: &[T],
    tape: &ConvTape<T>,
    kernel: &GroupedSparseKernel<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let grad_in = subm_conv_backward_input(grad_out, tape, kernel)?;
    let (d_out, d_in) = (kernel.d_out(), kernel.d_in());
    let block = d_out * d_in;
    let by_slot = tape.nmap.by_slot();
    let x = tape.input.feats();
    let mask = kernel.mask();
    let mut grad_w = vec![T::zero(); kernel.len()];
    grad_w
        .par_chunks_mut(block.max(1))
        .zip(by_slot.par_iter())
        .enumerate()
        .for_each(|(s, (gw, pairs))| {
            for &(c, r) in pairs {
                let g = &grad_out[c as usize * d_out..(c as usize + 1) * d_out];
                let xr = &x[r as usize * d_in..(r as usize + 1) * d_in];
                for (o, &go) in g.iter().enumerate() {
                    if go == T::zero() {
                        continue;
                    }
                    for (a, &xv) in gw[o * d_in..(o + 1) * d_in].iter_mut().zip(xr) {
                        *a = *a + go * xv;
                    }
                }
            }
            for (a, &m) in gw.iter_mut().zip(&mask[s * block..(s + 1) * block]) {
                if !m {
                    *a = T::zero();
                }
            }
        });
    Ok((grad_in, grad_w))
}
