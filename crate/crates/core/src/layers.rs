use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::{fan_in_uniform, Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// A convolution whose weights live at `{name}.weight` / `{name}.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub transposed: bool,
}

impl ConvLayer {
    /// Stride-1 convolution with same padding.
    pub fn same(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride: 1,
            pad: kernel / 2,
            bias,
            transposed: false,
        }
    }

    pub fn strided(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            pad,
            bias: true,
            transposed: false,
        }
    }

    pub fn transposed(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            pad,
            bias: true,
            transposed: true,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        if self.transposed {
            [self.in_channels, self.out_channels, self.kernel, self.kernel]
        } else {
            [self.out_channels, self.in_channels, self.kernel, self.kernel]
        }
    }

    /// Inputs feeding one output value; a stride-`s` transposed kernel only
    /// sees `k²/s²` taps per input channel.
    pub fn fan_in(&self) -> usize {
        let taps = self.kernel * self.kernel;
        let taps = if self.transposed { taps / (self.stride * self.stride) } else { taps };
        self.in_channels * taps.max(1)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R, gain: f64) {
        let fan_in = self.fan_in();
        store.insert(self.weight_name(), fan_in_uniform(rng, &self.weight_shape(), fan_in, gain));
        if self.bias {
            store.insert(
                self.bias_name(),
                fan_in_uniform(rng, &[self.out_channels], fan_in, gain),
            );
        }
    }

    pub fn init_zero_bias<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R, gain: f64) {
        self.init(store, rng, gain);
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros([self.out_channels]));
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &Bound, x: Var) -> Result<Var> {
        let w = vars.get(&self.weight_name())?;
        let b = if self.bias {
            Some(vars.get(&self.bias_name())?)
        } else {
            None
        };
        if self.transposed {
            g.conv_transpose2d(x, w, b, self.stride, self.pad)
        } else {
            g.conv2d(x, w, b, self.stride, self.pad)
        }
    }
}
