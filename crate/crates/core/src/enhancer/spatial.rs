//! Non-local spatial attention with the uncompressed feature map as value.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Channel compression factor for query and key maps.
pub const QK_REDUCTION: usize = 8;

pub fn check_channels(channels: usize) -> Result<usize> {
    if channels == 0 || !channels.is_multiple_of(QK_REDUCTION) {
        return Err(Error::config(format!(
            "spatial attention needs channels divisible by {QK_REDUCTION}, got {channels}"
        )));
    }
    Ok(channels / QK_REDUCTION)
}

/// Output of [`spatial_attention`].
#[derive(Debug, Clone, Copy)]
pub struct SpatialOutput {
    /// Enhanced map, `[C,H,W]`.
    pub enhanced: Var,
    /// Attention map `[N,N]`; row `j` holds the weights of every source
    /// position `i` for target `j` and sums to one.
    pub attention: Var,
}

/// `a: [C,H,W]`, `wq`/`wk`: bias-free 1x1 conv weights `[C/8, C, 1, 1]`.
///
/// Logits are `K_i . Q_j` for target `j` and source `i`, normalized over `i`.
/// Each output position is the attention-weighted sum of all columns of `a`.
pub fn spatial_attention(tape: &mut Tape, a: Var, wq: Var, wk: Var) -> Result<SpatialOutput> {
    let [c, h, w] = tape.value(a).dims3("spatial_attention")?;
    let reduced = check_channels(c)?;
    for wv in [wq, wk] {
        if tape.shape(wv) != [reduced, c, 1, 1] {
            return Err(Error::dim(
                "spatial_attention weights",
                tape.shape(wv),
                &[reduced, c, 1, 1],
            ));
        }
    }
    let n = h * w;
    let q = tape.conv2d(a, wq, None, 1, 0)?;
    let k = tape.conv2d(a, wk, None, 1, 0)?;
    let q = tape.reshape(q, &[reduced, n])?;
    let k = tape.reshape(k, &[reduced, n])?;
    let qt = tape.transpose2d(q)?;
    // logits[j, i] = Q_j . K_i
    let logits = tape.matmul(qt, k)?;
    let attention = tape.softmax_rows(logits)?;
    let v = tape.reshape(a, &[c, n])?;
    let st = tape.transpose2d(attention)?;
    // E[:, j] = sum_i S[j, i] V[:, i]
    let e = tape.matmul(v, st)?;
    let enhanced = tape.reshape(e, &[c, h, w])?;
    Ok(SpatialOutput { enhanced, attention })
}
