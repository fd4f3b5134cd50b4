//! Dense MLP with SiLU activations and optional adaptive group-norm
//! conditioning on acquisition parameters.
//!
//! Hidden layer `l` computes `a_{l+1} = silu(z'_l)` with `z_l = W_l a_l + c_l`.
//! Without conditioning `z'_l = z_l`. With conditioning, a head MLP maps
//! `(TE, TR, TI)` to one `(s_l, b_l)` pair per hidden layer and
//! `z'_l = (1 + s_l) * GroupNorm(z_l) + b_l`. The output layer is linear.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::norm::{group_norm, group_norm_backward, GroupNormCache, GROUP_NORM_EPS};
use crate::acquisition::AcquisitionParams;
use crate::error::{Error, Result};
use crate::format;
use crate::rng::CounterRng;

pub const MLP_MAGIC: &str = "MLP1";
const COND_DIM: usize = 3;

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Position of one dense layer inside the flat parameter vector: the
/// `outputs x inputs` row-major weight matrix followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearLayout {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl LinearLayout {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn apply(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.weight_range()];
        let b = &params[self.bias_range()];
        (0..self.outputs)
            .map(|o| b[o] + w[o * self.inputs..(o + 1) * self.inputs].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let w = &params[self.weight_range()];
        let mut dx = vec![0.0; self.inputs];
        let w_off = self.offset;
        let b_off = self.bias_range().start;
        for o in 0..self.outputs {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            grads[b_off + o] += d;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grads[w_off + row + i] += d * x[i];
                dx[i] += d * w[row + i];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// `[input, hidden..., output]`.
    pub widths: Vec<usize>,
    /// Hidden width of the conditioning head; `None` disables conditioning.
    pub cond_hidden: Option<usize>,
    pub groups: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    layers: Vec<LinearLayout>,
    head: Vec<LinearLayout>,
    params: Vec<f64>,
}

struct Cache {
    /// Input to each main layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation after the optional conditioning, per hidden layer.
    pre_act: Vec<Vec<f64>>,
    norms: Vec<GroupNormCache>,
    cond_in: Vec<f64>,
    head_pre: Vec<f64>,
    head_hidden: Vec<f64>,
    scale_shift: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights drawn in layout order from the stream `config.seed`;
    /// biases start at zero.
    pub fn new(config: MlpConfig) -> Result<Self> {
        if config.widths.len() < 2 || config.widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid widths {:?}", config.widths)));
        }
        let n_hidden = config.widths.len() - 2;
        if config.cond_hidden.is_some() {
            if config.groups == 0 {
                return Err(Error::InvalidArgument("groups must be >= 1".into()));
            }
            if let Some(w) = config.widths[1..=n_hidden].iter().find(|&&w| w % config.groups != 0) {
                return Err(Error::InvalidArgument(format!(
                    "hidden width {w} not divisible by {} groups",
                    config.groups
                )));
            }
            if config.cond_hidden == Some(0) || n_hidden == 0 {
                return Err(Error::InvalidArgument("conditioning needs hidden layers and a non-empty head".into()));
            }
        }
        let mut offset = 0;
        let mut make = |inputs, outputs| {
            let l = LinearLayout { inputs, outputs, offset };
            offset += l.len();
            l
        };
        let layers: Vec<_> = config.widths.windows(2).map(|w| make(w[0], w[1])).collect();
        let head: Vec<_> = match config.cond_hidden {
            Some(h) => vec![make(COND_DIM, h), make(h, 2 * n_hidden)],
            None => vec![],
        };
        let mut params = vec![0.0; offset];
        let mut rng = CounterRng::new(config.seed);
        for l in layers.iter().chain(&head) {
            let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for p in &mut params[l.weight_range()] {
                *p = (2.0 * rng.uniform() - 1.0) * limit;
            }
        }
        Ok(Self { config, layers, head, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn widths(&self) -> &[usize] {
        &self.config.widths
    }

    pub fn input_width(&self) -> usize {
        self.config.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.config.widths.last().unwrap()
    }

    pub fn is_conditioned(&self) -> bool {
        !self.head.is_empty()
    }

    pub fn layers(&self) -> &[LinearLayout] {
        &self.layers
    }

    pub fn head_layers(&self) -> &[LinearLayout] {
        &self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!("expected {} params, got {}", self.params.len(), params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Zeroes the output layer so the network outputs zero everywhere.
    pub fn zero_output_layer(&mut self) {
        let last = *self.layers.last().unwrap();
        self.params[last.offset..last.offset + last.len()].fill(0.0);
    }

    fn check(&self, input: &[f64], condition: Option<&AcquisitionParams>) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(Error::ShapeMismatch(format!("input width {} != {}", input.len(), self.input_width())));
        }
        match (self.is_conditioned(), condition.is_some()) {
            (true, false) => Err(Error::InvalidArgument("conditioned model needs acquisition parameters".into())),
            (false, true) => Err(Error::InvalidArgument("model has no conditioning head".into())),
            _ => Ok(()),
        }
    }

    fn run(&self, input: &[f64], condition: Option<&AcquisitionParams>) -> Result<(Vec<f64>, Cache)> {
        self.check(input, condition)?;
        let mut cache = Cache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_act: Vec::new(),
            norms: Vec::new(),
            cond_in: Vec::new(),
            head_pre: Vec::new(),
            head_hidden: Vec::new(),
            scale_shift: Vec::new(),
        };
        if let Some(c) = condition {
            cache.cond_in = c.as_vector().to_vec();
            cache.head_pre = self.head[0].apply(&self.params, &cache.cond_in);
            cache.head_hidden = cache.head_pre.iter().map(|&v| silu(v)).collect();
            cache.scale_shift = self.head[1].apply(&self.params, &cache.head_hidden);
        }
        let mut a = input.to_vec();
        let n_hidden = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&self.params, &a);
            cache.inputs.push(std::mem::take(&mut a));
            if l == n_hidden {
                return Ok((z, cache));
            }
            let pre = if condition.is_some() {
                let gn = group_norm(&z, z.len(), 1, self.config.groups, GROUP_NORM_EPS)?;
                let s = 1.0 + cache.scale_shift[2 * l];
                let b = cache.scale_shift[2 * l + 1];
                let out = gn.normalized.iter().map(|&x| s * x + b).collect();
                cache.norms.push(gn);
                out
            } else {
                z
            };
            a = pre.iter().map(|&v| silu(v)).collect();
            cache.pre_act.push(pre);
        }
        unreachable!("the output layer returns")
    }

    pub fn forward(&self, input: &[f64], condition: Option<&AcquisitionParams>) -> Result<Vec<f64>> {
        self.run(input, condition).map(|(out, _)| out)
    }

    /// Gradients of `<output_gradient, forward(input)>` with respect to every
    /// parameter (flat layout) and to the input.
    pub fn backward(
        &self,
        input: &[f64],
        condition: Option<&AcquisitionParams>,
        output_gradient: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.accumulate_backward(input, condition, output_gradient, &mut grads)?;
        Ok((grads, dx))
    }

    /// As [`MlpModel::backward`] but adds into `grads`; returns the output too.
    pub fn accumulate_backward(
        &self,
        input: &[f64],
        condition: Option<&AcquisitionParams>,
        output_gradient: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if output_gradient.len() != self.output_width() || grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch("gradient buffer shapes".into()));
        }
        let (_, cache) = self.run(input, condition)?;
        let n_hidden = self.layers.len() - 1;
        let mut d_scale_shift = vec![0.0; cache.scale_shift.len()];
        let mut da = self.layers[n_hidden].backward(&self.params, &cache.inputs[n_hidden], output_gradient, grads);
        for l in (0..n_hidden).rev() {
            let dpre: Vec<f64> = da.iter().zip(&cache.pre_act[l]).map(|(d, &z)| d * silu_grad(z)).collect();
            let dz = if condition.is_some() {
                let gn = &cache.norms[l];
                let s = 1.0 + cache.scale_shift[2 * l];
                d_scale_shift[2 * l] = dpre.iter().zip(&gn.normalized).map(|(d, x)| d * x).sum();
                d_scale_shift[2 * l + 1] = dpre.iter().sum();
                let dnorm: Vec<f64> = dpre.iter().map(|d| d * s).collect();
                group_norm_backward(&dnorm, gn)?
            } else {
                dpre
            };
            da = self.layers[l].backward(&self.params, &cache.inputs[l], &dz, grads);
        }
        if condition.is_some() {
            let dh = self.head[1].backward(&self.params, &cache.head_hidden, &d_scale_shift, grads);
            let dh_pre: Vec<f64> = dh.iter().zip(&cache.head_pre).map(|(d, &z)| d * silu_grad(z)).collect();
            self.head[0].backward(&self.params, &cache.cond_in, &dh_pre, grads);
        }
        Ok(da)
    }

    pub fn write_to<W: Write>(&self, w: &mut W, extra: Option<serde_json::Value>) -> Result<()> {
        let header = MlpHeader {
            magic: MLP_MAGIC.into(),
            widths: self.config.widths.clone(),
            activation: "silu".into(),
            cond_dim: if self.is_conditioned() { COND_DIM } else { 0 },
            cond_hidden: self.config.cond_hidden,
            groups: self.config.groups,
            seed: self.config.seed,
            dtype: "f32le".into(),
            extra,
        };
        format::write_header(w, &header)?;
        format::write_f32s(w, self.params.iter().copied())
    }

    /// Reads a model and the optional `extra` header object.
    pub fn read_from<R: BufRead>(r: &mut R) -> Result<(Self, Option<serde_json::Value>)> {
        let (h, _): (MlpHeader, _) = format::read_header(r)?;
        format::check_tag("magic", &h.magic, MLP_MAGIC)?;
        format::check_tag("dtype", &h.dtype, "f32le")?;
        format::check_tag("activation", &h.activation, "silu")?;
        if (h.cond_dim == 0) != h.cond_hidden.is_none() || (h.cond_dim != 0 && h.cond_dim != COND_DIM) {
            return Err(Error::Format(format!("inconsistent conditioning header (cond_dim {})", h.cond_dim)));
        }
        let mut model =
            MlpModel::new(MlpConfig { widths: h.widths, cond_hidden: h.cond_hidden, groups: h.groups, seed: h.seed })
                .map_err(|e| Error::Format(e.to_string()))?;
        let params = format::read_f32s(r, model.params.len())?;
        model.set_params(params)?;
        Ok((model, h.extra))
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: Option<serde_json::Value>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, extra)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<serde_json::Value>)> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Parameters rounded through `f32`, as a save/load round trip yields.
    pub fn quantized(&self) -> Self {
        let mut m = self.clone();
        for p in &mut m.params {
            *p = *p as f32 as f64;
        }
        m
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MlpHeader {
    magic: String,
    widths: Vec<usize>,
    activation: String,
    cond_dim: usize,
    #[serde(default)]
    cond_hidden: Option<usize>,
    #[serde(default = "one")]
    groups: usize,
    seed: u64,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

fn one() -> usize {
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(widths: Vec<usize>, cond: bool, seed: u64) -> MlpConfig {
        MlpConfig { widths, cond_hidden: cond.then_some(6), groups: 2, seed }
    }

    fn se() -> AcquisitionParams {
        AcquisitionParams::spin_echo(0.08, 4.0).unwrap()
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut m = MlpModel::new(cfg(vec![3, 8, 4, 2], true, 1)).unwrap();
        m.zero_output_layer();
        assert_eq!(m.forward(&[0.3, -1.0, 2.0], Some(&se())).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn deterministic_init_and_forward() {
        let a = MlpModel::new(cfg(vec![3, 8, 2], true, 5)).unwrap();
        let b = MlpModel::new(cfg(vec![3, 8, 2], true, 5)).unwrap();
        assert_eq!(a, b);
        let x = [0.1, 0.2, 0.3];
        assert_eq!(a.forward(&x, Some(&se())).unwrap(), b.forward(&x, Some(&se())).unwrap());
        let c = MlpModel::new(cfg(vec![3, 8, 2], true, 6)).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn glorot_bounds() {
        let m = MlpModel::new(cfg(vec![10, 6], false, 3)).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(m.params()[m.layers()[0].weight_range()].iter().all(|w| w.abs() <= limit));
        assert!(m.params()[m.layers()[0].bias_range()].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn single_linear_layer_is_matvec() {
        let mut m = MlpModel::new(cfg(vec![4, 3], false, 2)).unwrap();
        let mut p = m.params().to_vec();
        let l = m.layers()[0];
        for (i, b) in p[l.bias_range()].iter_mut().enumerate() {
            *b = i as f64 - 1.0;
        }
        m.set_params(p.clone()).unwrap();
        let x = [1.0, -2.0, 0.5, 3.0];
        let out = m.forward(&x, None).unwrap();
        for o in 0..3 {
            let mut acc = p[l.bias_range().start + o];
            for i in 0..4 {
                acc += p[o * 4 + i] * x[i];
            }
            assert!((out[o] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let m = MlpModel::new(cfg(vec![3, 2], false, 2)).unwrap();
        let x = [0.5, -1.0, 2.0];
        let g = [1.5, -0.5];
        let (grads, dx) = m.backward(&x, None, &g).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads[o * 3 + i], g[o] * x[i]);
            }
            assert_eq!(grads[6 + o], g[o]);
        }
        let w = m.params();
        for i in 0..3 {
            assert!((dx[i] - (w[i] * g[0] + w[3 + i] * g[1])).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_output_gradient() {
        let m = MlpModel::new(cfg(vec![3, 4, 4, 2], true, 2)).unwrap();
        let (grads, _) = m.backward(&[0.1, 0.2, 0.3], Some(&se()), &[0.0, 0.0]).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn width_and_condition_mismatch() {
        let m = MlpModel::new(cfg(vec![3, 4, 2], true, 2)).unwrap();
        assert!(m.forward(&[0.1, 0.2], Some(&se())).is_err());
        assert!(m.forward(&[0.1, 0.2, 0.3], None).is_err());
        let plain = MlpModel::new(cfg(vec![3, 4, 2], false, 2)).unwrap();
        assert!(plain.forward(&[0.1, 0.2, 0.3], Some(&se())).is_err());
        assert!(MlpModel::new(cfg(vec![3, 5, 2], true, 2)).is_err());
    }

    #[test]
    fn full_gradient_check() {
        let mut rng = CounterRng::new(99);
        let m = MlpModel::new(cfg(vec![4, 6, 6, 3], true, 7)).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let cond = AcquisitionParams::flair(0.1, 9.0, 2.5).unwrap();
        let (grads, dx) = m.backward(&x, Some(&cond), &w).unwrap();
        let f = |model: &MlpModel, input: &[f64]| -> f64 {
            model.forward(input, Some(&cond)).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for k in 0..m.params().len() {
            let mut up = m.clone();
            up.params_mut()[k] += h;
            let mut dn = m.clone();
            dn.params_mut()[k] -= h;
            let fd = (f(&up, &x) - f(&dn, &x)) / (2.0 * h);
            assert!((fd - grads[k]).abs() <= 1e-4 * grads[k].abs().max(1e-3), "param {k}: fd {fd} vs {}", grads[k]);
        }
        for i in 0..4 {
            let mut up = x.clone();
            up[i] += h;
            let mut dn = x.clone();
            dn[i] -= h;
            let fd = (f(&m, &up) - f(&m, &dn)) / (2.0 * h);
            assert!((fd - dx[i]).abs() <= 1e-4 * dx[i].abs().max(1e-3));
        }
    }

    #[test]
    fn file_round_trip() {
        let m = MlpModel::new(cfg(vec![3, 4, 2], true, 2)).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf, Some(serde_json::json!({"k": 1}))).unwrap();
        let (back, extra) = MlpModel::read_from(&mut &buf[..]).unwrap();
        assert_eq!(back, m.quantized());
        assert_eq!(extra.unwrap()["k"], 1);
        let text = String::from_utf8_lossy(&buf[..buf.iter().position(|&b| b == b'\n').unwrap()]).to_string();
        let header: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(header["widths"], serde_json::json!([3, 4, 2]));
        assert_eq!(header["cond_dim"], 3);
        assert_eq!(header["activation"], "silu");
        assert_eq!(header["seed"], 2);
    }
}
