use super::params::{Access, ParamInit};
use crate::autodiff::{PoolGeom, Primitive, Tape, Var};
use crate::error::Result;
use crate::search_space::OpKind;

/// Shared state for building one forward pass.
pub(crate) struct Builder<'a> {
    pub access: Access<'a>,
    pub batch_stats: bool,
    pub eps: f64,
}

impl Builder<'_> {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        tape: &mut Tape,
        name: &str,
        x: Var,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        groups: usize,
    ) -> Result<Var> {
        let fan_in = c_in / groups * kernel * kernel;
        let w = self.access.get(
            tape,
            format!("{name}.weight"),
            &[c_out, c_in / groups, kernel, kernel],
            ParamInit::KaimingUniform { fan_in },
        )?;
        tape.conv2d(x, w, stride, padding, dilation, groups)
    }

    pub fn norm(&mut self, tape: &mut Tape, name: &str, x: Var, c: usize) -> Result<Var> {
        let g = self
            .access
            .get(tape, format!("{name}.gamma"), &[c], ParamInit::Constant(1.0))?;
        let b = self
            .access
            .get(tape, format!("{name}.beta"), &[c], ParamInit::Constant(0.0))?;
        tape.apply(
            Primitive::ChannelNorm {
                batch_stats: self.batch_stats,
                eps: self.eps,
            },
            &[x, g, b],
        )
    }

    pub fn linear(&mut self, tape: &mut Tape, name: &str, x: Var, d_in: usize, d_out: usize) -> Result<Var> {
        let w = self.access.get(
            tape,
            format!("{name}.weight"),
            &[d_out, d_in],
            ParamInit::KaimingUniform { fan_in: d_in },
        )?;
        let b = self
            .access
            .get(tape, format!("{name}.bias"), &[d_out], ParamInit::Constant(0.0))?;
        tape.apply(Primitive::Linear, &[x, w, b])
    }

    /// `relu -> conv(k) -> norm`.
    #[allow(clippy::too_many_arguments)]
    pub fn relu_conv_norm(
        &mut self,
        tape: &mut Tape,
        name: &str,
        x: Var,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Var> {
        let h = tape.relu(x)?;
        let h = self.conv(
            tape,
            &format!("{name}.conv"),
            h,
            c_in,
            c_out,
            kernel,
            stride,
            kernel / 2,
            1,
            1,
        )?;
        self.norm(tape, &format!("{name}.norm"), h, c_out)
    }

    /// `relu -> depthwise(k, dilation) -> pointwise -> norm`.
    #[allow(clippy::too_many_arguments)]
    fn dil_conv(
        &mut self,
        tape: &mut Tape,
        name: &str,
        x: Var,
        c: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Var> {
        let pad = dilation * (kernel - 1) / 2;
        let h = tape.relu(x)?;
        let h = self.conv(tape, &format!("{name}.dw"), h, c, c, kernel, stride, pad, dilation, c)?;
        let h = self.conv(tape, &format!("{name}.pw"), h, c, c, 1, 1, 0, 1, 1)?;
        self.norm(tape, &format!("{name}.norm"), h, c)
    }

    /// Evaluate one candidate operation on `x` (`c` channels).
    pub fn candidate(
        &mut self,
        tape: &mut Tape,
        name: &str,
        op: OpKind,
        x: Var,
        c: usize,
        stride: usize,
    ) -> Result<Var> {
        let pool = PoolGeom {
            kernel: 3,
            stride,
            padding: 1,
        };
        match op {
            OpKind::Zero => tape.apply(Primitive::Zero { stride }, &[x]),
            OpKind::SkipConnect if stride == 1 => Ok(x),
            OpKind::SkipConnect => self.relu_conv_norm(tape, name, x, c, c, 1, stride),
            OpKind::AvgPool3x3 => tape.apply(Primitive::AvgPool(pool), &[x]),
            OpKind::MaxPool3x3 => tape.apply(Primitive::MaxPool(pool), &[x]),
            OpKind::SepConv3x3 | OpKind::SepConv5x5 => {
                let k = if op == OpKind::SepConv3x3 { 3 } else { 5 };
                let h = self.dil_conv(tape, &format!("{name}.a"), x, c, k, stride, 1)?;
                self.dil_conv(tape, &format!("{name}.b"), h, c, k, 1, 1)
            }
            OpKind::DilConv3x3 => self.dil_conv(tape, name, x, c, 3, stride, 2),
            OpKind::DilConv5x5 => self.dil_conv(tape, name, x, c, 5, stride, 2),
        }
    }
}

/// Evaluates candidate `op` on `x` (`channels` channels) with freshly
/// initialized weights drawn from `seed`, held as tape constants.
pub fn candidate_op(
    tape: &mut Tape,
    op: OpKind,
    x: Var,
    channels: usize,
    stride: usize,
    seed: u64,
    batch_stats: bool,
) -> Result<Var> {
    let mut store = super::ParamStore::new();
    let mut b = Builder {
        access: Access::Build {
            store: &mut store,
            seed,
        },
        batch_stats,
        eps: 1e-5,
    };
    b.candidate(tape, "op", op, x, channels, stride)
}
