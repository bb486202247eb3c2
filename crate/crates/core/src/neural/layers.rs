//! Parameterized building blocks. Each layer stores the indices of its
//! tensors inside a [`ParamSet`] and emits graph operations on demand.

use crate::error::Result;

use super::{Graph, Initializer, ParamSet, Real, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let weight = params.add(
            format!("{name}.weight"),
            init.glorot(&[out_dim, in_dim], in_dim, out_dim),
        )?;
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], x: Var) -> Result<Var> {
        g.linear(x, p[self.weight], Some(p[self.bias]))
    }
}

/// 2-D convolution, stride 1, "same" padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Result<Self> {
        let area = kernel * kernel;
        let weight = params.add(
            format!("{name}.weight"),
            init.glorot(
                &[out_channels, in_channels, kernel, kernel],
                in_channels * area,
                out_channels * area,
            ),
        )?;
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], x: Var) -> Result<Var> {
        g.conv2d(x, p[self.weight], p[self.bias])
    }
}

/// One direction of a GRU with gate order (reset, update, candidate):
///
/// ```text
/// r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruDirection {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
    pub input: usize,
    pub hidden: usize,
}

impl GruDirection {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = params.add(
            format!("{name}.w_ih"),
            init.glorot(&[3 * hidden, input], input, 3 * hidden),
        )?;
        let w_hh = params.add(format!("{name}.w_hh"), init.uniform(&[3 * hidden, hidden], bound))?;
        let b_ih = params.add(format!("{name}.b_ih"), Tensor::zeros(&[3 * hidden]))?;
        let b_hh = params.add(format!("{name}.b_hh"), Tensor::zeros(&[3 * hidden]))?;
        Ok(Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            input,
            hidden,
        })
    }

    /// Runs over `seq` (`[T, input]`), backwards in time when `reverse`.
    /// Returns the hidden state for each time index in original order.
    pub fn run<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], seq: Var, reverse: bool) -> Result<Vec<Var>> {
        let steps = g.shape(seq)[0];
        let h = self.hidden;
        let projected = g.linear(seq, p[self.w_ih], Some(p[self.b_ih]))?;
        let mut state = g.constant(Tensor::zeros(&[h]));
        let mut outputs = vec![state; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = g.row(projected, t)?;
            let ht = g.linear(state, p[self.w_hh], Some(p[self.b_hh]))?;
            let (xr, xz, xn) = (g.slice(xt, 0, h)?, g.slice(xt, h, h)?, g.slice(xt, 2 * h, h)?);
            let (hr, hz, hn) = (g.slice(ht, 0, h)?, g.slice(ht, h, h)?, g.slice(ht, 2 * h, h)?);
            let r_pre = g.add(xr, hr)?;
            let r = g.sigmoid(r_pre);
            let z_pre = g.add(xz, hz)?;
            let z = g.sigmoid(z_pre);
            let gated = g.mul(r, hn)?;
            let n_pre = g.add(xn, gated)?;
            let n = g.tanh(n_pre);
            let keep = g.one_minus(z);
            let fresh = g.mul(keep, n)?;
            let carried = g.mul(z, state)?;
            state = g.add(fresh, carried)?;
            outputs[t] = state;
        }
        Ok(outputs)
    }
}

/// Bidirectional GRU: forward and backward states concatenated per step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiGru {
    pub forward: GruDirection,
    pub backward: GruDirection,
}

impl BiGru {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        name: &str,
        input: usize,
        hidden_per_direction: usize,
    ) -> Result<Self> {
        Ok(Self {
            forward: GruDirection::new(params, init, &format!("{name}.fwd"), input, hidden_per_direction)?,
            backward: GruDirection::new(params, init, &format!("{name}.bwd"), input, hidden_per_direction)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// `[T, input]` to `[T, 2 * hidden]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], seq: Var) -> Result<Var> {
        let fwd = self.forward.run(g, p, seq, false)?;
        let bwd = self.backward.run(g, p, seq, true)?;
        let rows = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect::<Result<Vec<_>>>()?;
        g.stack_rows(&rows)
    }
}
