//! Differentiable maps for φ, ψ and β, with exact analytic gradients.
//!
//! Every map exposes its parameters as one flat vector (weights row-major,
//! then bias; layers in order). Gradients returned by `backward` use the
//! same layout.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    Zeros,
    /// Weights from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zero.
    ScaledUniform,
}

fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Affine map `W x (+ b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    weight: Matrix,
    bias: Option<Vec<f64>>,
}

impl LinearMap {
    pub fn new(in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: bias.then(|| vec![0.0; out_dim]),
        }
    }

    pub fn from_weight(weight: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            check_dim("LinearMap bias", weight.rows(), b.len())?;
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Matrix::identity(dim),
            bias: None,
        }
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.as_slice());
        if let Some(b) = &self.bias {
            out.extend_from_slice(b);
        }
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let nw = self.weight.rows() * self.weight.cols();
        self.weight.as_mut_slice().copy_from_slice(&src[..nw]);
        let mut used = nw;
        if let Some(b) = &mut self.bias {
            let nb = b.len();
            b.copy_from_slice(&src[used..used + nb]);
            used += nb;
        }
        used
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.weight.matvec(x)?;
        if let Some(b) = &self.bias {
            axpy(1.0, b, &mut out);
        }
        Ok(out)
    }

    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("LinearMap::backward input", self.in_dim(), x.len())?;
        check_dim("LinearMap::backward upstream", self.out_dim(), upstream.len())?;
        let mut grad = Vec::with_capacity(self.num_params());
        for g in upstream {
            grad.extend(x.iter().map(|xi| g * xi));
        }
        if self.bias.is_some() {
            grad.extend_from_slice(upstream);
        }
        let grad_x = self.weight.matvec_t(upstream)?;
        Ok((grad, grad_x))
    }

    pub fn init(&mut self, rng: &mut Rng, scheme: InitScheme) {
        let a = init_bound(self.in_dim(), self.out_dim());
        for w in self.weight.as_mut_slice() {
            *w = match scheme {
                InitScheme::Zeros => 0.0,
                InitScheme::ScaledUniform => rng.uniform_range(-a, a),
            };
        }
        if let Some(b) = &mut self.bias {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// `p = 1 / (1 + exp(-(wᵀs + b)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticHead {
    weight: Vec<f64>,
    bias: Option<f64>,
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticHead {
    pub fn new(in_dim: usize, bias: bool) -> Self {
        Self {
            weight: vec![0.0; in_dim],
            bias: bias.then_some(0.0),
        }
    }

    pub fn from_parts(weight: Vec<f64>, bias: Option<f64>) -> Self {
        Self { weight, bias }
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> Option<f64> {
        self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.weight.len()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + usize::from(self.bias.is_some())
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        if let Some(b) = self.bias {
            out.push(b);
        }
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let n = self.weight.len();
        self.weight.copy_from_slice(&src[..n]);
        if let Some(b) = &mut self.bias {
            *b = src[n];
            return n + 1;
        }
        n
    }

    pub fn logit(&self, s: &[f64]) -> Result<f64> {
        check_dim("LogisticHead input", self.in_dim(), s.len())?;
        Ok(dot(&self.weight, s) + self.bias.unwrap_or(0.0))
    }

    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![sigmoid(self.logit(s)?)])
    }

    /// Gradients given `dL/dlogit`.
    pub fn backward_logit(&self, s: &[f64], grad_logit: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("LogisticHead::backward input", self.in_dim(), s.len())?;
        let mut grad: Vec<f64> = s.iter().map(|v| grad_logit * v).collect();
        if self.bias.is_some() {
            grad.push(grad_logit);
        }
        let grad_s = self.weight.iter().map(|w| grad_logit * w).collect();
        Ok((grad, grad_s))
    }

    /// Gradients given `dL/dp`.
    pub fn backward(&self, s: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("LogisticHead::backward upstream", 1, upstream.len())?;
        let p = sigmoid(self.logit(s)?);
        self.backward_logit(s, upstream[0] * p * (1.0 - p))
    }

    pub fn init(&mut self, rng: &mut Rng, scheme: InitScheme) {
        let a = init_bound(self.in_dim(), 1);
        for w in &mut self.weight {
            *w = match scheme {
                InitScheme::Zeros => 0.0,
                InitScheme::ScaledUniform => rng.uniform_range(-a, a),
            };
        }
        if let Some(b) = &mut self.bias {
            *b = 0.0;
        }
    }
}

/// Linear layers with rectifiers between them (none after the last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpStack {
    layers: Vec<LinearMap>,
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

impl MlpStack {
    /// `dims = [in, hidden..., out]`; every layer carries a bias.
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "an MLP needs at least input and output dims".into(),
            ));
        }
        let layers = dims.windows(2).map(|w| LinearMap::new(w[0], w[1], true)).collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<LinearMap>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("an MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            check_dim("MlpStack layer chain", w[0].out_dim(), w[1].in_dim())?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LinearMap] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LinearMap::num_params).sum()
    }

    /// Inputs to every layer (post-rectifier), plus the final output.
    fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut acts = vec![x.to_vec()];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(&acts[k])?;
            if k + 1 < self.layers.len() {
                relu(&mut h);
            }
            acts.push(h);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.pop().unwrap_or_default())
    }

    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("MlpStack::backward upstream", self.out_dim(), upstream.len())?;
        let acts = self.activations(x)?;
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut g = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let (gp, gx) = self.layers[k].backward(&acts[k], &g)?;
            grads[k] = gp;
            g = gx;
            if k > 0 {
                // rectifier derivative, 0 at exactly 0
                for (gi, a) in g.iter_mut().zip(&acts[k]) {
                    if *a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
        }
        Ok((grads.concat(), g))
    }

    pub fn init(&mut self, rng: &mut Rng, scheme: InitScheme) {
        for layer in &mut self.layers {
            layer.init(rng, scheme);
        }
    }
}

/// Any of the supported map families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Map {
    Linear(LinearMap),
    Logistic(LogisticHead),
    Mlp(MlpStack),
}

impl Map {
    pub fn family(&self) -> &'static str {
        match self {
            Map::Linear(_) => "linear",
            Map::Logistic(_) => "logistic",
            Map::Mlp(_) => "mlp",
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Map::Linear(m) => m.in_dim(),
            Map::Logistic(m) => m.in_dim(),
            Map::Mlp(m) => m.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Map::Linear(m) => m.out_dim(),
            Map::Logistic(_) => 1,
            Map::Mlp(m) => m.out_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Map::Linear(m) => m.num_params(),
            Map::Logistic(m) => m.num_params(),
            Map::Mlp(m) => m.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        match self {
            Map::Linear(m) => m.write_params(&mut out),
            Map::Logistic(m) => m.write_params(&mut out),
            Map::Mlp(m) => m.layers.iter().for_each(|l| l.write_params(&mut out)),
        }
        out
    }

    pub fn set_params(&mut self, src: &[f64]) -> Result<()> {
        check_dim("Map::set_params", self.num_params(), src.len())?;
        if let Some(v) = src.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {v}")));
        }
        match self {
            Map::Linear(m) => {
                m.read_params(src);
            }
            Map::Logistic(m) => {
                m.read_params(src);
            }
            Map::Mlp(m) => {
                let mut at = 0;
                for layer in &mut m.layers {
                    at += layer.read_params(&src[at..]);
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("Map::forward input", self.in_dim(), x.len())?;
        match self {
            Map::Linear(m) => m.forward(x),
            Map::Logistic(m) => m.forward(x),
            Map::Mlp(m) => m.forward(x),
        }
    }

    /// `(dL/dparams, dL/dinput)` given `dL/doutput`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("Map::backward input", self.in_dim(), x.len())?;
        match self {
            Map::Linear(m) => m.backward(x, upstream),
            Map::Logistic(m) => m.backward(x, upstream),
            Map::Mlp(m) => m.backward(x, upstream),
        }
    }

    pub fn init(&mut self, rng: &mut Rng, scheme: InitScheme) {
        match self {
            Map::Linear(m) => m.init(rng, scheme),
            Map::Logistic(m) => m.init(rng, scheme),
            Map::Mlp(m) => m.init(rng, scheme),
        }
    }

    /// Weight matrix of a map whose pre-activation is linear in its input.
    pub fn linear_weight(&self) -> Option<Matrix> {
        match self {
            Map::Linear(m) => Some(m.weight().clone()),
            Map::Logistic(m) => Matrix::from_vec(1, m.in_dim(), m.weight().to_vec()).ok(),
            Map::Mlp(_) => None,
        }
    }
}

impl From<LinearMap> for Map {
    fn from(m: LinearMap) -> Self {
        Map::Linear(m)
    }
}

impl From<LogisticHead> for Map {
    fn from(m: LogisticHead) -> Self {
        Map::Logistic(m)
    }
}

impl From<MlpStack> for Map {
    fn from(m: MlpStack) -> Self {
        Map::Mlp(m)
    }
}

/// Which member of a [`ModelStack`] a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Phi,
    Psi,
    Beta,
}

/// `f(x) = ψ(φ(x))`, plus an optional auxiliary map β used only by side
/// objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStack {
    pub phi: Map,
    pub psi: LogisticHead,
    pub beta: Option<Map>,
}

impl ModelStack {
    pub fn new(phi: Map, psi: LogisticHead, beta: Option<Map>) -> Result<Self> {
        check_dim("ModelStack phi -> psi", phi.out_dim(), psi.in_dim())?;
        Ok(Self { phi, psi, beta })
    }

    pub fn representation_dim(&self) -> usize {
        self.phi.out_dim()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let s = self.phi.forward(x)?;
        Ok(sigmoid(self.psi.logit(&s)?))
    }

    pub fn block_len(&self, block: Block) -> usize {
        match block {
            Block::Phi => self.phi.num_params(),
            Block::Psi => self.psi.num_params(),
            Block::Beta => self.beta.as_ref().map_or(0, Map::num_params),
        }
    }

    pub fn block_params(&self, block: Block) -> Vec<f64> {
        match block {
            Block::Phi => self.phi.params(),
            Block::Psi => {
                let mut out = Vec::new();
                self.psi.write_params(&mut out);
                out
            }
            Block::Beta => self.beta.as_ref().map(Map::params).unwrap_or_default(),
        }
    }

    pub fn set_block_params(&mut self, block: Block, src: &[f64]) -> Result<()> {
        match block {
            Block::Phi => self.phi.set_params(src),
            Block::Psi => {
                check_dim("psi params", self.psi.num_params(), src.len())?;
                self.psi.read_params(src);
                Ok(())
            }
            Block::Beta => match &mut self.beta {
                Some(b) => b.set_params(src),
                None => check_dim("beta params", 0, src.len()),
            },
        }
    }

    /// Concatenated parameters of `blocks`, in the given order.
    pub fn flatten(&self, blocks: &[Block]) -> Vec<f64> {
        blocks.iter().flat_map(|b| self.block_params(*b)).collect()
    }

    pub fn restore(&mut self, blocks: &[Block], src: &[f64]) -> Result<()> {
        let total: usize = blocks.iter().map(|b| self.block_len(*b)).sum();
        check_dim("ModelStack::restore", total, src.len())?;
        let mut at = 0;
        for b in blocks {
            let n = self.block_len(*b);
            self.set_block_params(*b, &src[at..at + n])?;
            at += n;
        }
        Ok(())
    }

    pub fn init(&mut self, rng: &mut Rng, scheme: InitScheme) {
        self.phi.init(&mut rng.fork("phi"), scheme);
        self.psi.init(&mut rng.fork("psi"), scheme);
        if let Some(b) = &mut self.beta {
            b.init(&mut rng.fork("beta"), scheme);
        }
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        let mut blocks = Vec::new();
        let mut values = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: &[f64]| {
            blocks.push(BlockShape { name, shape });
            values.extend_from_slice(data);
        };
        describe_map("phi", &self.phi, &mut push);
        push("psi.weight".into(), vec![self.psi.in_dim()], self.psi.weight());
        if let Some(b) = self.psi.bias() {
            push("psi.bias".into(), vec![1], &[b]);
        }
        if let Some(beta) = &self.beta {
            describe_map("beta", beta, &mut push);
        }
        ParamSnapshot { blocks, values }
    }
}

fn describe_map(prefix: &str, map: &Map, push: &mut impl FnMut(String, Vec<usize>, &[f64])) {
    let mut linear = |name: String, m: &LinearMap| {
        push(
            format!("{name}.weight"),
            vec![m.out_dim(), m.in_dim()],
            m.weight().as_slice(),
        );
        if let Some(b) = m.bias() {
            push(format!("{name}.bias"), vec![b.len()], b);
        }
    };
    match map {
        Map::Linear(m) => linear(prefix.to_string(), m),
        Map::Mlp(m) => {
            for (k, l) in m.layers().iter().enumerate() {
                linear(format!("{prefix}.layer{k}"), l);
            }
        }
        Map::Logistic(m) => {
            push(format!("{prefix}.weight"), vec![m.in_dim()], m.weight());
            if let Some(b) = m.bias() {
                push(format!("{prefix}.bias"), vec![1], &[b]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockShape {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Flat parameter dump with a shape header, serialized as JSON:
/// `{"blocks": [{"name": "phi.weight", "shape": [1, 50]}, ...], "values": [...]}`.
/// `values` is the concatenation of all blocks in header order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub blocks: Vec<BlockShape>,
    pub values: Vec<f64>,
}

impl ParamSnapshot {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: ParamSnapshot = serde_json::from_str(text)?;
        let expected: usize = snap.blocks.iter().map(|b| b.shape.iter().product::<usize>()).sum();
        check_dim("ParamSnapshot values", expected, snap.values.len())?;
        Ok(snap)
    }

    /// Load the values back into a stack of identical architecture.
    pub fn apply(&self, stack: &mut ModelStack) -> Result<()> {
        if stack.snapshot().blocks != self.blocks {
            return Err(Error::InvalidInput(
                "snapshot header does not match the model architecture".into(),
            ));
        }
        stack.restore(&[Block::Phi, Block::Psi, Block::Beta], &self.values)
    }
}
