//! The two-branch sequence model.
//!
//! ```text
//! frame ─E→ u ─┬─E_T→ h^T → TaylorCell → ĥ^T ─D_T─┐
//!              └─E_R→ h^R → ConvLSTM   → ĥ^R ─D_R─┴─(+)→ û ─D→ frame
//! ```
//!
//! `E` halves the resolution twice with strided 3×3 convolutions; `D`
//! mirrors it with 4×4 transposed convolutions and ends in a sigmoid. Hidden
//! layers use SiLU, which keeps the whole loss smooth. The
//! splitters carry a bias, the remappers do not, so a zero branch contributes
//! nothing to `û`.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::convlstm::{ConvLstm, ConvLstmState};
use crate::error::{Error, Result};
use crate::layers::ConvLayer;
use crate::params::{Bound, ParamStore};
use crate::taylor_cell::{TaylorCell, TaylorCellState};
use crate::tensor::{Scalar, Tensor};

/// Uniform-bound gain for a layer followed by SiLU (the ReLU value, sqrt(6)).
const ACT_GAIN: f64 = 2.449489742783178;
/// Same for a purely linear layer.
const LINEAR_GAIN: f64 = 1.7320508075688772; // sqrt(3)
/// Initial output intensity. Frames are mostly dark background; starting the
/// sigmoid at 0.5 drives every pixel toward zero in the first updates and the
/// decoder never recovers from the saturated state.
const OUTPUT_PRIOR: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub frame_channels: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Channels after the first encoder convolution.
    pub hidden_channels: usize,
    /// Channels of `u`, `h^T` and `h^R`.
    pub latent_channels: usize,
    /// Taylor expansion order ξ (number of retained terms).
    pub order: usize,
    /// Side of the derivative filters.
    pub kernel: usize,
    pub lstm_layers: usize,
    pub mcu_enabled: bool,
    pub taylor_branch_enabled: bool,
    pub residual_branch_enabled: bool,
    /// Conditioning frames `t`.
    pub input_len: usize,
    /// Predicted frames used in training.
    pub output_len: usize,
    /// Init scale of the PDE mixing weights relative to fan-in uniform.
    pub pde_mix_gain: f64,
}

impl ModelConfig {
    /// 32×32 single-channel frames, 8×8 latent.
    pub fn tiny() -> Self {
        Self {
            frame_channels: 1,
            frame_height: 32,
            frame_width: 32,
            hidden_channels: 16,
            latent_channels: 16,
            order: 3,
            kernel: 7,
            lstm_layers: 3,
            mcu_enabled: true,
            taylor_branch_enabled: true,
            residual_branch_enabled: true,
            input_len: 10,
            output_len: 10,
            pde_mix_gain: 0.1,
        }
    }

    /// 64×64 frames, 16×16 latent.
    pub fn full() -> Self {
        Self {
            frame_height: 64,
            frame_width: 64,
            hidden_channels: 32,
            latent_channels: 64,
            ..Self::tiny()
        }
    }

    pub fn latent_height(&self) -> usize {
        self.frame_height / 4
    }

    pub fn latent_width(&self) -> usize {
        self.frame_width / 4
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.frame_channels == 0 || self.hidden_channels == 0 || self.latent_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.frame_height % 4 != 0 || self.frame_width % 4 != 0 || self.frame_height == 0 || self.frame_width == 0 {
            return fail(format!(
                "frame size {}x{} must be a positive multiple of 4",
                self.frame_height, self.frame_width
            ));
        }
        if self.order < 1 {
            return fail("Taylor order must be at least 1".into());
        }
        if self.kernel < 3 || self.kernel % 2 == 0 {
            return fail(format!("derivative kernel {} must be odd and >= 3", self.kernel));
        }
        if self.taylor_branch_enabled && (self.latent_height() < self.kernel || self.latent_width() < self.kernel) {
            return fail(format!(
                "latent {}x{} is smaller than the {}x{} derivative filters",
                self.latent_height(),
                self.latent_width(),
                self.kernel,
                self.kernel
            ));
        }
        if self.lstm_layers == 0 {
            return fail("ConvLSTM needs at least one layer".into());
        }
        if !self.taylor_branch_enabled && !self.residual_branch_enabled {
            return fail("at least one branch must be enabled".into());
        }
        if self.input_len < 1 {
            return fail("at least one conditioning frame is required".into());
        }
        if !(self.pde_mix_gain.is_finite() && self.pde_mix_gain >= 0.0) {
            return fail("pde_mix_gain must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Internal signals of one recurrent step, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct StepProbe {
    /// Index of the frame this step predicts.
    pub t: usize,
    pub h_tilde: Option<Var>,
    pub h_hat_t: Option<Var>,
    pub h_hat_r: Option<Var>,
    pub gain: Option<Var>,
    /// Decoded frame (prediction window only).
    pub frame: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub predictions: Vec<Var>,
    /// One entry per recurrent step, warm-up included.
    pub probes: Vec<StepProbe>,
}

#[derive(Clone, Debug)]
pub struct TaylorNet {
    config: ModelConfig,
    enc0: ConvLayer,
    enc1: ConvLayer,
    split_t: ConvLayer,
    split_r: ConvLayer,
    cell: TaylorCell,
    lstm: ConvLstm,
    remap_t: ConvLayer,
    remap_r: ConvLayer,
    dec0: ConvLayer,
    dec1: ConvLayer,
}

struct Branches {
    cell: TaylorCellState,
    lstm: Option<ConvLstmState>,
}

impl TaylorNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (cf, ch, cl) = (config.frame_channels, config.hidden_channels, config.latent_channels);
        Ok(Self {
            enc0: ConvLayer::strided("encoder.conv0", cf, ch, 3, 2, 1),
            enc1: ConvLayer::strided("encoder.conv1", ch, cl, 3, 2, 1),
            split_t: ConvLayer::same("split.taylor", cl, cl, 3, true),
            split_r: ConvLayer::same("split.residual", cl, cl, 3, true),
            cell: TaylorCell::new("taylor", cl, config.order, config.kernel, config.mcu_enabled)?,
            lstm: ConvLstm::new("residual", cl, config.lstm_layers)?,
            remap_t: ConvLayer::same("remap.taylor", cl, cl, 3, false),
            remap_r: ConvLayer::same("remap.residual", cl, cl, 3, false),
            dec0: ConvLayer::transposed("decoder.deconv0", cl, ch, 4, 2, 1),
            dec1: ConvLayer::transposed("decoder.deconv1", ch, cf, 4, 2, 1),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn cell(&self) -> &TaylorCell {
        &self.cell
    }

    pub fn lstm(&self) -> &ConvLstm {
        &self.lstm
    }

    pub fn split_layers(&self) -> (&ConvLayer, &ConvLayer) {
        (&self.split_t, &self.split_r)
    }

    pub fn remap_layers(&self) -> (&ConvLayer, &ConvLayer) {
        (&self.remap_t, &self.remap_r)
    }

    /// Fresh parameters for every enabled component.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<T> {
        let mut store = ParamStore::new();
        for layer in [&self.enc0, &self.enc1] {
            layer.init_zero_bias(&mut store, rng, ACT_GAIN);
        }
        if self.config.taylor_branch_enabled {
            self.split_t.init_zero_bias(&mut store, rng, LINEAR_GAIN);
            self.cell.init(&mut store, rng, self.config.pde_mix_gain);
            self.remap_t.init(&mut store, rng, LINEAR_GAIN);
        }
        if self.config.residual_branch_enabled {
            self.split_r.init_zero_bias(&mut store, rng, LINEAR_GAIN);
            self.lstm.init(&mut store, rng);
            self.remap_r.init(&mut store, rng, LINEAR_GAIN);
        }
        self.dec0.init_zero_bias(&mut store, rng, ACT_GAIN);
        self.dec1.init_zero_bias(&mut store, rng, LINEAR_GAIN);
        let logit = (OUTPUT_PRIOR / (1.0 - OUTPUT_PRIOR)).ln();
        store.insert(
            self.dec1.bias_name(),
            Tensor::full([self.config.frame_channels], T::from_f64(logit)),
        );
        store
    }

    /// Every expected parameter name is present with the right shape.
    pub fn check_params<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let reference: ParamStore<T> = self.init(&mut rng);
        for (name, t) in reference.iter() {
            let have = store.get(name)?;
            if have.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "parameter `{}` is {:?}, expected {:?}",
                    name,
                    have.shape(),
                    t.shape()
                )));
            }
        }
        if store.len() != reference.len() {
            let extra: Vec<_> = store.names().filter(|n| !reference.contains(n)).collect();
            return Err(Error::invalid(format!("unexpected parameters {:?}", extra)));
        }
        Ok(())
    }

    fn check_frame<T: Scalar>(&self, g: &Graph<T>, frame: Var) -> Result<()> {
        let c = &self.config;
        let s = g.shape(frame);
        if s.len() != 4 || s[1] != c.frame_channels || s[2] != c.frame_height || s[3] != c.frame_width {
            return Err(Error::shape(format!(
                "frame {:?} does not match [B, {}, {}, {}]",
                s, c.frame_channels, c.frame_height, c.frame_width
            )));
        }
        let v = g.value(frame).data();
        if let Some(bad) = v.iter().find(|x| !(x.as_f64() >= 0.0 && x.as_f64() <= 1.0)) {
            return Err(Error::invalid(format!(
                "pixel value {:?} outside [0, 1]",
                bad
            )));
        }
        Ok(())
    }

    /// `(u, h^T, h^R)`; a branch output is `None` when that branch is disabled.
    pub fn encode_split<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &Bound,
        frame: Var,
    ) -> Result<(Var, Option<Var>, Option<Var>)> {
        self.check_frame(g, frame)?;
        let a = self.enc0.forward(g, vars, frame)?;
        let a = g.silu(a);
        let u = self.enc1.forward(g, vars, a)?;
        let u = g.silu(u);
        let ht = if self.config.taylor_branch_enabled {
            Some(self.split_t.forward(g, vars, u)?)
        } else {
            None
        };
        let hr = if self.config.residual_branch_enabled {
            Some(self.split_r.forward(g, vars, u)?)
        } else {
            None
        };
        Ok((u, ht, hr))
    }

    /// `D(D_T(ĥ^T) + D_R(ĥ^R))`.
    pub fn merge_decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &Bound,
        h_hat_t: Option<Var>,
        h_hat_r: Option<Var>,
    ) -> Result<Var> {
        let t = h_hat_t.map(|h| self.remap_t.forward(g, vars, h)).transpose()?;
        let r = h_hat_r.map(|h| self.remap_r.forward(g, vars, h)).transpose()?;
        let u = match (t, r) {
            (Some(a), Some(b)) => g.add(a, b)?,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => return Err(Error::invalid("no branch output to decode")),
        };
        self.decode(g, vars, u)
    }

    /// Frame decoder `D` alone.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, vars: &Bound, u: Var) -> Result<Var> {
        let a = self.dec0.forward(g, vars, u)?;
        let a = g.silu(a);
        let x = self.dec1.forward(g, vars, a)?;
        Ok(g.sigmoid(x))
    }

    fn branch_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &Bound,
        st: &mut Branches,
        ht: Option<Var>,
        hr: Option<Var>,
    ) -> Result<StepProbe> {
        let mut probe = StepProbe {
            t: 0,
            h_tilde: None,
            h_hat_t: None,
            h_hat_r: None,
            gain: None,
            frame: None,
        };
        if let Some(ht) = ht {
            let out = self.cell.step(g, vars, &mut st.cell, ht)?;
            probe.t = st.cell.step();
            probe.h_tilde = Some(out.h_tilde);
            probe.h_hat_t = Some(out.h_hat);
            probe.gain = Some(out.gain);
        }
        if let Some(hr) = hr {
            if st.lstm.is_none() {
                let shape = g.shape(hr).to_vec();
                st.lstm = Some(self.lstm.zero_state(g, &shape)?);
            }
            let lstm = st.lstm.as_mut().expect("initialized above");
            probe.h_hat_r = Some(self.lstm.step(g, vars, lstm, hr)?.h);
        }
        Ok(probe)
    }

    /// Warm up on `inputs[..t-1]`, then predict `n_future` frames.
    ///
    /// Prediction step 0 always consumes the last real input. Later steps
    /// consume the encoded teacher frame when `teacher` is given, otherwise
    /// the previous step's branch outputs.
    pub fn forward_sequence<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &Bound,
        inputs: &[Var],
        n_future: usize,
        teacher: Option<&[Var]>,
    ) -> Result<SequenceOutput> {
        if inputs.is_empty() {
            return Err(Error::invalid("forward_sequence needs at least one input frame"));
        }
        if let Some(tf) = teacher {
            if tf.len() != n_future {
                return Err(Error::invalid(format!(
                    "{} teacher frames for {} predictions",
                    tf.len(),
                    n_future
                )));
            }
        }
        let mut st = Branches {
            cell: TaylorCellState::new(),
            lstm: None,
        };
        let mut probes = Vec::with_capacity(inputs.len() - 1 + n_future);
        let mut index = 0;
        for &x in &inputs[..inputs.len() - 1] {
            let (_, ht, hr) = self.encode_split(g, vars, x)?;
            index += 1;
            let mut p = self.branch_step(g, vars, &mut st, ht, hr)?;
            p.t = index;
            probes.push(p);
        }

        let mut predictions = Vec::with_capacity(n_future);
        let last = *inputs.last().expect("non-empty");
        let (mut ht, mut hr) = if n_future > 0 {
            let (_, a, b) = self.encode_split(g, vars, last)?;
            (a, b)
        } else {
            (None, None)
        };
        for k in 0..n_future {
            if k > 0 {
                match teacher {
                    Some(tf) => {
                        let (_, a, b) = self.encode_split(g, vars, tf[k - 1])?;
                        ht = a;
                        hr = b;
                    }
                    None => {
                        let prev = probes.last().expect("previous prediction step");
                        ht = prev.h_hat_t;
                        hr = prev.h_hat_r;
                    }
                }
            }
            index += 1;
            let mut p = self.branch_step(g, vars, &mut st, ht, hr)?;
            p.t = index;
            let frame = self.merge_decode(g, vars, p.h_hat_t, p.h_hat_r)?;
            p.frame = Some(frame);
            predictions.push(frame);
            probes.push(p);
        }
        st.cell.finish();
        Ok(SequenceOutput { predictions, probes })
    }

    /// Free-running prediction on value tensors.
    ///
    /// `inputs` is `[B, t, C, H, W]`; the result is `[B, n_future, C, H, W]`.
    pub fn predict<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        inputs: &Tensor<T>,
        n_future: usize,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = params.bind_frozen(&mut g);
        let frames = frame_constants(&mut g, inputs)?;
        let out = self.forward_sequence(&mut g, &vars, &frames, n_future, None)?;
        if out.predictions.is_empty() {
            let s = inputs.shape();
            return Ok(Tensor::zeros(vec![s[0], 0, s[2], s[3], s[4]]));
        }
        let values: Vec<Tensor<T>> = out.predictions.iter().map(|&v| g.value(v).clone()).collect();
        Tensor::stack1(&values)
    }
}

/// Split a `[B, T, C, H, W]` tensor into `T` graph constants.
pub fn frame_constants<T: Scalar>(g: &mut Graph<T>, video: &Tensor<T>) -> Result<Vec<Var>> {
    if video.shape().len() != 5 {
        return Err(Error::shape(format!(
            "expected [B, T, C, H, W], got {:?}",
            video.shape()
        )));
    }
    (0..video.shape()[1])
        .map(|t| Ok(g.constant(video.select1(t)?)))
        .collect()
}
