use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{kernels, PoolGeom, Primitive, Tape, Var};
use crate::error::{Error, Result};
use crate::search_space::MixingSet;

/// Mixing weights of one edge: softmax over the unmasked entries of
/// `alpha`, exactly zero for masked entries.
pub fn mix_weights(alpha: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if alpha.len() != mask.len() {
        return Err(Error::Shape {
            op: "mix_weights",
            lhs: vec![alpha.len()],
            rhs: vec![mask.len()],
        });
    }
    let kept: Vec<f64> = alpha.iter().zip(mask).filter(|(_, &m)| m).map(|(&a, _)| a).collect();
    if kept.is_empty() {
        return Err(Error::Invariant("all candidates of the edge are masked".into()));
    }
    if kept.iter().any(|a| !a.is_finite()) {
        return Err(Error::NumericOverflow {
            op: "mix_weights".into(),
        });
    }
    let soft = kernels::softmax_rows(&crate::Tensor::from_vec(kept));
    let mut it = soft.data().iter();
    Ok(mask
        .iter()
        .map(|&m| {
            if m {
                *it.next().expect("one weight per kept op")
            } else {
                0.0
            }
        })
        .collect())
}

/// Masked mixing on the tape: `sum_o w_o * o(x)` over the unmasked
/// candidates, with `w` the softmax of their alphas. Masked candidates are
/// never evaluated. `op(tape, k, x)` evaluates candidate `k`.
pub fn masked_mix<F>(tape: &mut Tape, x: Var, set: &MixingSet, alpha: Var, mut op: F) -> Result<Var>
where
    F: FnMut(&mut Tape, usize, Var) -> Result<Var>,
{
    let kept = set.unmasked_indices();
    if kept.is_empty() {
        return Err(Error::Invariant(format!(
            "edge {} has every candidate masked",
            set.edge_id
        )));
    }
    if tape.value(alpha).numel() != set.len() {
        return Err(Error::Shape {
            op: "masked_mix",
            lhs: vec![set.len()],
            rhs: tape.value(alpha).shape().to_vec(),
        });
    }
    let picked = tape.apply(Primitive::Gather { indices: kept.clone() }, &[alpha])?;
    let w = tape.apply(Primitive::Softmax, &[picked])?;
    let mut terms = Vec::with_capacity(kept.len());
    for (slot, &k) in kept.iter().enumerate() {
        let o = op(tape, k, x).map_err(|e| e.context(format!("edge {} op {}", set.edge_id, set.candidates[k])))?;
        terms.push(tape.apply(Primitive::ScaleBy { index: slot }, &[o, w])?);
    }
    tape.apply(Primitive::Add, &terms)
}

/// Seeded subset of `channels / k` channel indices, sorted.
pub fn channel_selection(channels: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || !channels.is_multiple_of(k) {
        return Err(Error::Config(format!(
            "partial-channel divisor {k} does not divide {channels} channels"
        )));
    }
    let mut idx: Vec<usize> = (0..channels).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (channels as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    idx.shuffle(&mut rng);
    let mut sel = idx[..channels / k].to_vec();
    sel.sort_unstable();
    Ok(sel)
}

/// Partial-channel masked mixing. The channels in `selection` go through
/// [`masked_mix`]; the rest bypass it (max-pooled 2x2 when `stride == 2`).
/// The result is the channel shuffle of `concat(mixed, bypass)` with `k`
/// groups. With `k == 1` this is exactly [`masked_mix`].
#[allow(clippy::too_many_arguments)]
pub fn masked_mix_partial<F>(
    tape: &mut Tape,
    x: Var,
    set: &MixingSet,
    alpha: Var,
    k: usize,
    selection: &[usize],
    stride: usize,
    op: F,
) -> Result<Var>
where
    F: FnMut(&mut Tape, usize, Var) -> Result<Var>,
{
    let channels = tape.value(x).dim(1);
    if k == 0 || !channels.is_multiple_of(k) {
        return Err(Error::Config(format!(
            "partial-channel divisor {k} does not divide {channels} channels at edge {}",
            set.edge_id
        )));
    }
    if k == 1 {
        return masked_mix(tape, x, set, alpha, op);
    }
    if selection.len() != channels / k || selection.iter().any(|&c| c >= channels) {
        return Err(Error::Contract(format!(
            "channel selection of {} entries does not fit {channels} channels / {k}",
            selection.len()
        )));
    }
    let chosen = tape.apply(
        Primitive::ChannelSelect {
            channels: selection.to_vec(),
        },
        &[x],
    )?;
    let mixed = masked_mix(tape, chosen, set, alpha, op)?;
    let source = if stride == 1 {
        x
    } else {
        tape.apply(
            Primitive::MaxPool(PoolGeom {
                kernel: stride,
                stride,
                padding: 0,
            }),
            &[x],
        )?
    };
    let mut in_sel = vec![false; channels];
    for &c in selection {
        in_sel[c] = true;
    }
    let take: Vec<usize> = (0..channels).filter(|&c| !in_sel[c]).collect();
    tape.apply(Primitive::ChannelMerge { groups: k, take }, &[mixed, source])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{CellKind, OpKind};
    use crate::tensor::Tensor;

    fn set(ops: &[OpKind], mask: &[bool]) -> MixingSet {
        MixingSet {
            edge_id: 0,
            cell: CellKind::Chain,
            src: 0,
            dst: 1,
            candidates: ops.to_vec(),
            mask: mask.to_vec(),
        }
    }

    fn toy_op(tape: &mut Tape, k: usize, x: Var) -> Result<Var> {
        tape.apply(Primitive::Scale { factor: (k + 1) as f64 }, &[x])
    }

    #[test]
    fn weights_of_masked_triple() {
        let w = mix_weights(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        let e1 = 1f64.exp();
        let e3 = 3f64.exp();
        assert!((w[0] - e1 / (e1 + e3)).abs() < 1e-15);
        assert_eq!(w[1], 0.0);
        assert!((w[2] - e3 / (e1 + e3)).abs() < 1e-15);
        assert!((w[0] - 0.1192).abs() < 1e-4 && (w[2] - 0.8808).abs() < 1e-4);
        assert!(mix_weights(&[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn single_op_is_exact() {
        let s = set(&OpKind::TOY, &[false, false, true, false]);
        let mut tape = Tape::no_grad();
        let x = tape.constant(Tensor::new(vec![1, 1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let a = tape.constant(Tensor::from_vec(vec![0.3, -1.0, 7.0, 2.0]));
        let y = masked_mix(&mut tape, x, &s, a, toy_op).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -6.0, 1.5]);
    }

    #[test]
    fn symmetric_pair_averages() {
        let s = set(&OpKind::TOY[..2], &[true, true]);
        let mut tape = Tape::no_grad();
        let x = tape.constant(Tensor::new(vec![1, 1, 1, 2], vec![2.0, 4.0]).unwrap());
        let a = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let y = masked_mix(&mut tape, x, &s, a, toy_op).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 6.0]);
    }

    #[test]
    fn masked_ops_are_never_called() {
        let s = set(&OpKind::TOY, &[true, false, true, false]);
        let mut tape = Tape::no_grad();
        let x = tape.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let a = tape.constant(Tensor::zeros(&[4]));
        let mut called = Vec::new();
        masked_mix(&mut tape, x, &s, a, |t, k, x| {
            called.push(k);
            toy_op(t, k, x)
        })
        .unwrap();
        assert_eq!(called, [0, 2]);
    }

    #[test]
    fn selection_is_seeded_and_sized() {
        let a = channel_selection(16, 4, 7).unwrap();
        assert_eq!(a, channel_selection(16, 4, 7).unwrap());
        assert_eq!(a.len(), 4);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(channel_selection(10, 4, 7).is_err());
    }
}
