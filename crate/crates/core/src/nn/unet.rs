use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv1d, conv1d_backward, conv_transpose1d, conv_transpose1d_backward, maxpool2, maxpool2_backward,
    relu_backward_inplace, relu_inplace, UpGeometry,
};
use super::{Param, Real, Tensor};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Affine standardisation around the network: it sees `(v - offset) / scale`
/// and its outputs are mapped back with the inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaling {
    pub offset: f64,
    pub scale: f64,
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling { offset: 0.0, scale: 1.0 };

    /// Mean and population standard deviation over every value.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.iter().map(Vec::len).sum::<usize>();
        if n == 0 {
            return Err(Error::Data("cannot fit scaling to an empty set".into()));
        }
        let offset = rows.iter().flatten().sum::<f64>() / n as f64;
        let var = rows.iter().flatten().map(|v| (v - offset).powi(2)).sum::<f64>() / n as f64;
        let fitted = Scaling { offset, scale: var.sqrt() };
        fitted.validate().map_err(|_| Error::Numeric(format!("degenerate input scaling {fitted:?}")))?;
        Ok(fitted)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.offset.is_finite() && self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!(
                "scaling needs a finite offset and a positive scale, got {} and {}",
                self.offset, self.scale
            )));
        }
        Ok(())
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.offset) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_length: usize,
    pub pad_to: usize,
    pub kernel_size: usize,
    pub encoder_channels: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    /// Unset until training fits it to the training inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_length: crate::spectral::N_CHANNELS,
            pad_to: 352,
            kernel_size: 5,
            encoder_channels: vec![32, 64, 128],
            activation: Activation::Relu,
            seed: 0,
            scaling: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_length < 2 {
            return bad(format!("in_length must be at least 2, got {}", self.in_length));
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size < 3 {
            return bad(format!("kernel_size must be odd and >= 3, got {}", self.kernel_size));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.iter().any(|&c| c == 0 || c % 2 == 1) {
            return bad(format!("encoder_channels must be non-empty and even, got {:?}", self.encoder_channels));
        }
        let factor = 1usize << self.encoder_channels.len();
        if self.pad_to < self.in_length || !self.pad_to.is_multiple_of(factor) {
            return bad(format!(
                "pad_to {} must be >= in_length {} and divisible by {factor}",
                self.pad_to, self.in_length
            ));
        }
        if self.pad_to - self.in_length > 2 * (self.in_length - 1) {
            return bad(format!("pad_to {} too large for reflection padding", self.pad_to));
        }
        self.scaling.as_ref().map_or(Ok(()), Scaling::validate)
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Leading and trailing reflection pad widths.
    pub fn padding(&self) -> (usize, usize) {
        let extra = self.pad_to - self.in_length;
        (extra / 2, extra - extra / 2)
    }

    /// Parameter names and shapes in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel_size;
        let mut out = Vec::new();
        let mut conv = |name: String, cin: usize, cout: usize| {
            out.push((format!("{name}.weight"), vec![cout, cin, k]));
            out.push((format!("{name}.bias"), vec![cout]));
        };
        let enc = &self.encoder_channels;
        let mut cin = 1;
        for (s, &c) in enc.iter().enumerate() {
            conv(format!("enc{s}.conv0"), cin, c);
            conv(format!("enc{s}.conv1"), c, c);
            cin = c;
        }
        let top = *enc.last().unwrap();
        conv("bottleneck.conv0".into(), top, top);
        conv("bottleneck.conv1".into(), top, top);
        let mut ups = Vec::new();
        let mut width = top;
        for d in 0..enc.len() {
            let s = enc.len() - 1 - d;
            let half = width / 2;
            ups.push((d, width, half));
            conv(format!("dec{d}.conv0"), half + enc[s], enc[s]);
            conv(format!("dec{d}.conv1"), enc[s], enc[s]);
            width = enc[s];
        }
        conv("final".into(), width, 1);
        // Insert each up-sampling layer ahead of its decoder convs.
        for (d, width, half) in ups.into_iter().rev() {
            let at = out.iter().position(|(n, _)| n == &format!("dec{d}.conv0.weight")).unwrap();
            out.insert(at, (format!("dec{d}.up.bias"), vec![half]));
            out.insert(at, (format!("dec{d}.up.weight"), vec![width, half, k]));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, d)| d.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Plan {
    enc: Vec<[Conv; 2]>,
    bottleneck: [Conv; 2],
    dec: Vec<(Conv, [Conv; 2])>,
    fin: Conv,
}

impl Plan {
    fn new(cfg: &ModelConfig, params: &[Param<impl Real>]) -> Plan {
        let find = |name: String| {
            let w = params.iter().position(|p| p.name == format!("{name}.weight")).expect("layout weight");
            let b = params.iter().position(|p| p.name == format!("{name}.bias")).expect("layout bias");
            Conv { w, b }
        };
        let pair = |name: &str| [find(format!("{name}.conv0")), find(format!("{name}.conv1"))];
        Plan {
            enc: (0..cfg.depth()).map(|s| pair(&format!("enc{s}"))).collect(),
            bottleneck: pair("bottleneck"),
            dec: (0..cfg.depth()).map(|d| (find(format!("dec{d}.up")), pair(&format!("dec{d}")))).collect(),
            fin: find("final".into()),
        }
    }
}

struct ConvCache<T> {
    input: Tensor<T>,
    output: Tensor<T>,
}

struct EncCache<T> {
    convs: [ConvCache<T>; 2],
    pool_idx: Vec<usize>,
    pool_shape: [usize; 3],
}

struct DecCache<T> {
    up_input: Tensor<T>,
    up_channels: usize,
    convs: [ConvCache<T>; 2],
}

/// Activations recorded by [`UNet::forward_train`].
pub struct ForwardCache<T> {
    enc: Vec<EncCache<T>>,
    bottleneck: [ConvCache<T>; 2],
    dec: Vec<DecCache<T>>,
    final_input: Tensor<T>,
}

/// 1-D U-Net mapping `(batch, 1, pad_to)` to `(batch, 1, pad_to)`.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    plan: Plan,
}

impl<T: Real> UNet<T> {
    /// Kaiming-normal weights (fan-in), zero biases; the output layer uses unit gain.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(rng::derive(config.seed, "init"), 0);
        let params = config
            .layout()
            .into_iter()
            .map(|(name, dims)| {
                let n: usize = dims.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![T::zero(); n]
                } else {
                    let fan_in = if name.contains(".up.") { dims[0] * dims[2] } else { dims[1] * dims[2] };
                    let gain = if name.starts_with("final") { 1.0 } else { 2.0 };
                    let sd = (gain / fan_in as f64).sqrt();
                    (0..n)
                        .map(|_| T::from_f64_lossy(sd * r.sample::<f64, _>(StandardNormal)))
                        .collect()
                };
                Param { name, dims, data }
            })
            .collect();
        Self::from_params(config, params)
    }

    /// Builds a model from named tensors, checking them against the layout.
    pub fn from_params(config: ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", layout.len(), params.len())));
        }
        for ((name, dims), p) in layout.iter().zip(&params) {
            if name != &p.name || dims != &p.dims || p.data.len() != dims.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match expected {name} {dims:?}",
                    p.name, p.dims
                )));
            }
        }
        let plan = Plan::new(&config, &params);
        Ok(Self { config, params, plan })
    }

    pub fn set_scaling(&mut self, scaling: Option<Scaling>) {
        self.config.scaling = scaling;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    fn pad(&self) -> usize {
        (self.config.kernel_size - 1) / 2
    }

    fn up_geometry(&self) -> UpGeometry {
        UpGeometry { stride: 2, padding: self.pad(), output_padding: 1 }
    }

    fn conv(&self, c: Conv, x: &Tensor<T>, relu: bool) -> Result<Tensor<T>> {
        let mut y = conv1d(x, &self.params[c.w], &self.params[c.b], self.pad())?;
        if relu {
            relu_inplace(&mut y);
        }
        Ok(y)
    }

    fn conv_cached(&self, c: Conv, x: Tensor<T>, cache: bool) -> Result<(Tensor<T>, Option<ConvCache<T>>)> {
        let y = self.conv(c, &x, true)?;
        if cache {
            let output = y.clone();
            Ok((y, Some(ConvCache { input: x, output })))
        } else {
            Ok((y, None))
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != 1 || x.length() != self.config.pad_to {
            return Err(Error::Shape(format!(
                "model expects (batch, 1, {}), got {:?}",
                self.config.pad_to,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, record: bool) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        let mut h = x.clone();
        let mut enc = Vec::new();
        let mut skips = Vec::new();
        for layer in &self.plan.enc {
            let (a0, c0) = self.conv_cached(layer[0], h, record)?;
            let (a1, c1) = self.conv_cached(layer[1], a0, record)?;
            let (pooled, idx) = maxpool2(&a1)?;
            if record {
                enc.push(EncCache { convs: [c0.unwrap(), c1.unwrap()], pool_idx: idx, pool_shape: a1.shape() });
            }
            skips.push(a1);
            h = pooled;
        }
        let (b0, cb0) = self.conv_cached(self.plan.bottleneck[0], h, record)?;
        let (b1, cb1) = self.conv_cached(self.plan.bottleneck[1], b0, record)?;
        h = b1;
        let mut dec = Vec::new();
        for (up, convs) in &self.plan.dec {
            let u = conv_transpose1d(&h, &self.params[up.w], &self.params[up.b], self.up_geometry())?;
            let skip = skips.pop().expect("one skip per level");
            let cat = Tensor::concat_channels(&u, &skip)?;
            let (d0, c0) = self.conv_cached(convs[0], cat, record)?;
            let (d1, c1) = self.conv_cached(convs[1], d0, record)?;
            if record {
                dec.push(DecCache { up_input: h, up_channels: u.channels(), convs: [c0.unwrap(), c1.unwrap()] });
            }
            h = d1;
        }
        let out = self.conv(self.plan.fin, &h, false)?;
        let cache = record.then(|| ForwardCache {
            enc,
            bottleneck: [cb0.unwrap(), cb1.unwrap()],
            dec,
            final_input: h,
        });
        Ok((out, cache))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        Ok(self.run(x, false)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let (y, cache) = self.run(x, true)?;
        Ok((y, cache.expect("recorded")))
    }

    /// Gradients of the loss with respect to every parameter (in
    /// [`UNet::params`] order) and to the input.
    pub fn backward(&self, cache: ForwardCache<T>, grad_out: &Tensor<T>) -> Result<(Vec<Vec<T>>, Tensor<T>)> {
        let pad = self.pad();
        let mut grads: Vec<Vec<T>> = self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        let mut store = |c: Conv, gw: Vec<T>, gb: Vec<T>| {
            grads[c.w] = gw;
            grads[c.b] = gb;
        };
        let conv_back = |c: Conv, cc: &ConvCache<T>, mut g: Tensor<T>, store: &mut dyn FnMut(Conv, Vec<T>, Vec<T>)| {
            relu_backward_inplace(&mut g, &cc.output);
            let (gx, gw, gb) = conv1d_backward(&g, &cc.input, &self.params[c.w], pad)?;
            store(c, gw, gb);
            Ok::<_, Error>(gx)
        };

        let fin = self.plan.fin;
        let (mut g, gw, gb) = conv1d_backward(grad_out, &cache.final_input, &self.params[fin.w], pad)?;
        store(fin, gw, gb);

        let depth = self.plan.enc.len();
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
        for (d, dc) in cache.dec.iter().enumerate().rev() {
            let (up, convs) = self.plan.dec[d];
            g = conv_back(convs[1], &dc.convs[1], g, &mut store)?;
            g = conv_back(convs[0], &dc.convs[0], g, &mut store)?;
            let (gu, gskip) = g.split_channels(dc.up_channels);
            skip_grads[depth - 1 - d] = Some(gskip);
            let (gx, gw, gb) = conv_transpose1d_backward(&gu, &dc.up_input, &self.params[up.w], self.up_geometry())?;
            store(up, gw, gb);
            g = gx;
        }
        g = conv_back(self.plan.bottleneck[1], &cache.bottleneck[1], g, &mut store)?;
        g = conv_back(self.plan.bottleneck[0], &cache.bottleneck[0], g, &mut store)?;
        for (s, ec) in cache.enc.iter().enumerate().rev() {
            g = maxpool2_backward(&g, &ec.pool_idx, ec.pool_shape);
            g.add_assign(skip_grads[s].as_ref().expect("skip gradient"));
            g = conv_back(self.plan.enc[s][1], &ec.convs[1], g, &mut store)?;
            g = conv_back(self.plan.enc[s][0], &ec.convs[0], g, &mut store)?;
        }
        Ok((grads, g))
    }

    /// Converts weights to another precision.
    pub fn cast<U: Real>(&self) -> UNet<U> {
        let params = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                dims: p.dims.clone(),
                data: p.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            })
            .collect();
        UNet::from_params(self.config.clone(), params).expect("same layout")
    }
}
