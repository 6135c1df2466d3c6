//! The fusion network: shared encoders, continuous decomposition modules
//! with state-wise attention, and a multi-scale decoder.

use rand::Rng;

use super::config::ModelConfig;
use super::padding::{crop, pad_to_stride};
use super::params::{ParamId, ParamStore};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    pub conv1: Conv,
    pub conv2: Conv,
}

/// Preliminary-state generator, state-wise attention and gated feed-forward
/// weights of one decomposition module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdmParams {
    pub linear: Conv,
    pub group1: Conv,
    pub group2: Conv,
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub proj: Conv,
    pub norm_gain: ParamId,
    pub norm_shift: ParamId,
    pub expand: Conv,
    pub depthwise: Conv,
    pub project: Conv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderParams {
    pub fuse: Conv,
    pub conv1: Conv,
    pub conv2: Conv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub input: Conv,
    pub encoders: Vec<EncoderParams>,
    pub cdms: Vec<CdmParams>,
    pub decoders: Vec<DecoderParams>,
    pub output: Conv,
}

/// Parameter shapes in registration order. Names are the checkpoint keys.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut conv = |name: &str, cout: usize, cin_per_group: usize, k: usize| {
        out.push((format!("{name}.weight"), vec![cout, cin_per_group, k, k]));
        out.push((format!("{name}.bias"), vec![cout]));
    };
    let k = cfg.num_states;
    conv("input", cfg.base_width, 1, 1);
    for l in 1..=cfg.num_layers {
        let (cp, c) = (cfg.channels(l - 1), cfg.channels(l));
        conv(&format!("enc{l}.conv1"), c, cp, 3);
        conv(&format!("enc{l}.conv2"), c, c, 3);
    }
    for l in 1..=cfg.num_layers {
        let c = cfg.channels(l);
        let hid = cfg.gdfn_hidden(l);
        conv(&format!("cdm{l}.linear"), k * c, 2 * c, 1);
        conv(&format!("cdm{l}.group1"), k * c, c, 3);
        conv(&format!("cdm{l}.group2"), k * c, c, 3);
        conv(&format!("cdm{l}.st.query"), c, c, 3);
        conv(&format!("cdm{l}.st.key"), c, c, 3);
        conv(&format!("cdm{l}.st.value"), c, c, 3);
        conv(&format!("cdm{l}.st.proj"), c, c, 1);
        conv(&format!("cdm{l}.st.ffn.expand"), 2 * hid, c, 1);
        conv(&format!("cdm{l}.st.ffn.depthwise"), 2 * hid, 1, 3);
        conv(&format!("cdm{l}.st.ffn.project"), c, hid, 1);
    }
    for l in 1..=cfg.num_layers {
        let c = cfg.channels(l);
        conv(&format!("dec{l}.fuse"), c, (k + 2) * c, 3);
        conv(&format!("dec{l}.conv1"), cfg.channels(l - 1), 2 * c, 3);
        conv(&format!("dec{l}.conv2"), cfg.channels(l - 1), cfg.channels(l - 1), 3);
    }
    conv("output", 1, cfg.base_width, 1);
    for l in 1..=cfg.num_layers {
        let c = cfg.channels(l);
        out.push((format!("cdm{l}.st.ffn.norm.weight"), vec![c]));
        out.push((format!("cdm{l}.st.ffn.norm.bias"), vec![c]));
    }
    out
}

fn layout_from_store<T: Scalar>(cfg: &ModelConfig, store: &ParamStore<T>) -> Layout {
    let id = |name: String| store.id(&name).unwrap_or_else(|| panic!("missing parameter {name}"));
    let conv = |name: &str, groups: usize| Conv {
        weight: id(format!("{name}.weight")),
        bias: id(format!("{name}.bias")),
        groups,
    };
    let k = cfg.num_states;
    Layout {
        input: conv("input", 1),
        encoders: (1..=cfg.num_layers)
            .map(|l| EncoderParams {
                conv1: conv(&format!("enc{l}.conv1"), 1),
                conv2: conv(&format!("enc{l}.conv2"), 1),
            })
            .collect(),
        cdms: (1..=cfg.num_layers)
            .map(|l| CdmParams {
                linear: conv(&format!("cdm{l}.linear"), 1),
                group1: conv(&format!("cdm{l}.group1"), k),
                group2: conv(&format!("cdm{l}.group2"), k),
                query: conv(&format!("cdm{l}.st.query"), 1),
                key: conv(&format!("cdm{l}.st.key"), 1),
                value: conv(&format!("cdm{l}.st.value"), 1),
                proj: conv(&format!("cdm{l}.st.proj"), 1),
                norm_gain: id(format!("cdm{l}.st.ffn.norm.weight")),
                norm_shift: id(format!("cdm{l}.st.ffn.norm.bias")),
                expand: conv(&format!("cdm{l}.st.ffn.expand"), 1),
                depthwise: conv(&format!("cdm{l}.st.ffn.depthwise"), 2 * cfg.gdfn_hidden(l)),
                project: conv(&format!("cdm{l}.st.ffn.project"), 1),
            })
            .collect(),
        decoders: (1..=cfg.num_layers)
            .map(|l| DecoderParams {
                fuse: conv(&format!("dec{l}.fuse"), 1),
                conv1: conv(&format!("dec{l}.conv1"), 1),
                conv2: conv(&format!("dec{l}.conv2"), 1),
            })
            .collect(),
        output: conv("output", 1),
    }
}

/// Network weights plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

/// Graph nodes of one decomposition module's output.
#[derive(Debug, Clone)]
pub struct StateStackVars {
    /// `K + 2` nodes, each `[1, C, H, W]`: visible, transitions, infrared.
    pub states: Vec<Var>,
    /// Transition states as one `[K, C, H, W]` node.
    pub transitions: Var,
    /// Attention node of the state transformer.
    pub attention: Var,
}

#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Raw fused image `[1, 1, H, W]`, neither clamped nor cropped.
    pub fused: Var,
    pub stacks: Vec<StateStackVars>,
    pub ir_features: Vec<Var>,
    pub vis_features: Vec<Var>,
}

impl ForwardVars {
    /// Per-layer state nodes, the shape the losses consume.
    pub fn stack_states(&self) -> Vec<Vec<Var>> {
        self.stacks.iter().map(|s| s.states.clone()).collect()
    }
}

/// Result of a padded, cropped inference pass.
#[derive(Debug, Clone)]
pub struct Fusion<T> {
    /// Fused image clamped to `[0, 1]`, original size.
    pub fused: Tensor<T>,
    /// Per-layer state stacks at the padded resolution, `[K+2, C, H, W]`.
    pub stacks: Vec<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with fan-in scaled uniform weights in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases and unit layer-norm
    /// gains. Deterministic in `(config, seed)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(&[tag::INIT, seed]);
        let mut params = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            let t = if name.ends_with("norm.weight") {
                Tensor::full(&shape, T::one())
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::from_fn(&shape, |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
            };
            params.push(name, t);
        }
        let layout = layout_from_store(&config, &params);
        Ok(Self { config, params, layout })
    }

    /// Wraps existing parameters after checking every name and shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        let mut errs = Vec::new();
        for (name, shape) in &expected {
            match params.by_name(name) {
                None => errs.push(format!("missing tensor {name}")),
                Some(t) if t.shape() != shape.as_slice() => errs.push(format!(
                    "tensor {name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )),
                _ => {}
            }
        }
        for name in params.names() {
            if !expected.iter().any(|(n, _)| n == name) {
                errs.push(format!("unexpected tensor {name}"));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let layout = layout_from_store(&config, &params);
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for (name, t) in self.params.iter() {
            params.push(name, t.cast());
        }
        Model {
            config: self.config.clone(),
            params,
            layout: self.layout.clone(),
        }
    }

    fn conv(&self, g: &mut Graph<T>, p: &[Var], x: Var, c: Conv) -> Var {
        g.conv2d(x, p[c.weight.index()], p[c.bias.index()], c.groups)
    }

    /// 1x1 projection of a single-channel image to `base_width` channels.
    pub fn input_projection(&self, g: &mut Graph<T>, p: &[Var], image: Var) -> Var {
        self.conv(g, p, image, self.layout.input)
    }

    /// conv3x3 -> ReLU -> conv3x3 -> ReLU -> 2x2 average pool.
    pub fn encoder_block(&self, g: &mut Graph<T>, p: &[Var], layer: usize, x: Var) -> Var {
        let e = &self.layout.encoders[layer - 1];
        let h = self.conv(g, p, x, e.conv1);
        let h = g.relu(h);
        let h = self.conv(g, p, h, e.conv2);
        let h = g.relu(h);
        g.avg_pool2(h)
    }

    /// `K` preliminary transition states `[K, C, H, W]` from the channel
    /// concatenation of the visible and infrared features.
    pub fn preliminary_states(&self, g: &mut Graph<T>, p: &[Var], layer: usize, vis: Var, ir: Var) -> Result<Var> {
        if g.shape(vis) != g.shape(ir) {
            return Err(Error::shape("preliminary_states", g.shape(vis), g.shape(ir)));
        }
        let m = &self.layout.cdms[layer - 1];
        let (_, c, h, w) = g.value(vis).dims4();
        let k = self.config.num_states;
        let x = g.concat_channels(&[vis, ir]);
        let x = self.conv(g, p, x, m.linear);
        let x = self.conv(g, p, x, m.group1);
        let x = g.relu(x);
        let x = self.conv(g, p, x, m.group2);
        let x = g.relu(x);
        Ok(g.reshape(x, &[k, c, h, w]))
    }

    /// State-wise multi-head attention with residual: returns `(U, attention node)`.
    pub fn state_attention(&self, g: &mut Graph<T>, p: &[Var], layer: usize, s: Var) -> (Var, Var) {
        let m = &self.layout.cdms[layer - 1];
        let q = self.conv(g, p, s, m.query);
        let k = self.conv(g, p, s, m.key);
        let v = self.conv(g, p, s, m.value);
        let a = g.attention(q, k, v, self.config.heads);
        let o = self.conv(g, p, a, m.proj);
        (g.add(o, s), a)
    }

    /// Gated depthwise feed-forward network with residual, state axis as batch.
    pub fn gdfn(&self, g: &mut Graph<T>, p: &[Var], layer: usize, u: Var) -> Var {
        let m = &self.layout.cdms[layer - 1];
        let hid = self.config.gdfn_hidden(layer);
        let x = g.layer_norm(u, p[m.norm_gain.index()], p[m.norm_shift.index()]);
        let x = self.conv(g, p, x, m.expand);
        let x = self.conv(g, p, x, m.depthwise);
        let gate = g.slice_channels(x, 0, hid);
        let gate = g.gelu(gate);
        let value = g.slice_channels(x, hid, hid);
        let x = g.mul(gate, value);
        let x = self.conv(g, p, x, m.project);
        g.add(x, u)
    }

    /// State stack `[V; T; I]` of layer `layer`. The endpoints are the very
    /// encoder nodes passed in.
    pub fn cdm(&self, g: &mut Graph<T>, p: &[Var], layer: usize, vis: Var, ir: Var) -> Result<StateStackVars> {
        let s = self.preliminary_states(g, p, layer, vis, ir)?;
        let (u, attention) = self.state_attention(g, p, layer, s);
        let t = self.gdfn(g, p, layer, u);
        let k = self.config.num_states;
        let mut states = Vec::with_capacity(k + 2);
        states.push(vis);
        for i in 0..k {
            states.push(g.slice_outer(t, i, 1));
        }
        states.push(ir);
        Ok(StateStackVars {
            states,
            transitions: t,
            attention,
        })
    }

    /// Fuses the flattened stack with a 3x3 convolution, concatenates the
    /// incoming decoder feature at the same scale, upsamples x2 and applies
    /// conv3x3 -> ReLU -> conv3x3 -> ReLU.
    pub fn decoder_block(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        layer: usize,
        f_in: Var,
        stack: &StateStackVars,
    ) -> Result<Var> {
        let d = &self.layout.decoders[layer - 1];
        let k = self.config.num_states;
        let (_, c, h, w) = g.value(stack.transitions).dims4();
        let flat_t = g.reshape(stack.transitions, &[1, k * c, h, w]);
        let flat = g.concat_channels(&[stack.states[0], flat_t, stack.states[k + 1]]);
        let fused = self.conv(g, p, flat, d.fuse);
        if g.shape(f_in) != g.shape(fused) {
            return Err(Error::shape("decoder_block", g.shape(fused), g.shape(f_in)));
        }
        let x = g.concat_channels(&[fused, f_in]);
        let x = g.upsample2(x);
        let x = self.conv(g, p, x, d.conv1);
        let x = g.relu(x);
        let x = self.conv(g, p, x, d.conv2);
        Ok(g.relu(x))
    }

    /// Full forward pass on stride-aligned `[1, 1, H, W]` inputs.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], ir: Var, vis: Var) -> Result<ForwardVars> {
        let shape = g.shape(ir).to_vec();
        if shape != g.shape(vis) {
            return Err(Error::shape("forward", &shape, g.shape(vis)));
        }
        if shape.len() != 4 || shape[0] != 1 || shape[1] != 1 {
            return Err(Error::shape("forward", &[1, 1, 0, 0], &shape));
        }
        let stride = self.config.stride();
        if shape[2] == 0 || shape[2] % stride != 0 || shape[3] == 0 || shape[3] % stride != 0 {
            return Err(Error::config(format!(
                "input {}x{} is not a multiple of the pooling stride {stride}; pad first",
                shape[2], shape[3]
            )));
        }
        let n = self.config.num_layers;
        let mut i_feat = self.input_projection(g, p, ir);
        let mut v_feat = self.input_projection(g, p, vis);
        let mut ir_features = Vec::with_capacity(n);
        let mut vis_features = Vec::with_capacity(n);
        let mut stacks = Vec::with_capacity(n);
        for l in 1..=n {
            i_feat = self.encoder_block(g, p, l, i_feat);
            v_feat = self.encoder_block(g, p, l, v_feat);
            ir_features.push(i_feat);
            vis_features.push(v_feat);
            stacks.push(self.cdm(g, p, l, v_feat, i_feat)?);
        }
        let mut f = g.add(i_feat, v_feat);
        for l in (1..=n).rev() {
            f = self.decoder_block(g, p, l, f, &stacks[l - 1])?;
        }
        let fused = self.conv(g, p, f, self.layout.output);
        Ok(ForwardVars {
            fused,
            stacks,
            ir_features,
            vis_features,
        })
    }

    /// Inference on arbitrary-size `[1, 1, H, W]` images in `[0, 1]`:
    /// pads to the stride, runs the network, crops and clamps.
    pub fn fuse(&self, ir: &Tensor<T>, vis: &Tensor<T>) -> Result<Fusion<T>> {
        if ir.shape() != vis.shape() {
            return Err(Error::shape("fuse", ir.shape(), vis.shape()));
        }
        let stride = self.config.stride();
        let (ir_p, record) = pad_to_stride(ir, stride)?;
        let (vis_p, _) = pad_to_stride(vis, stride)?;
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let ir_v = g.constant(ir_p);
        let vis_v = g.constant(vis_p);
        let out = self.forward(&mut g, &p, ir_v, vis_v)?;
        let fused = crop(g.value(out.fused), record).map(|v| v.max(T::zero()).min(T::one()));
        let stacks = out
            .stacks
            .iter()
            .map(|s| {
                let parts: Vec<&Tensor<T>> = s.states.iter().map(|&v| g.value(v)).collect();
                crate::tensor::concat_outer(&parts).expect("stack states share a shape")
            })
            .collect();
        Ok(Fusion { fused, stacks })
    }
}
