//! One-vs-rest linear probe: a dense layer with per-tag sigmoid outputs,
//! trained full-batch with Adam on mean binary cross-entropy and early
//! stopping on validation loss.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{read_file, write_file_atomic, Block, Reader, Writer};
use crate::error::{Error, Result};

pub const PROBE_MAGIC: &[u8; 4] = b"FSP1";
pub const PROBE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub l2_penalty: f64,
    pub probability_clamp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 1000,
            patience: 20,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            l2_penalty: 0.0,
            probability_clamp: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.patience >= 1
            && self.l2_penalty >= 0.0
            && self.l2_penalty.is_finite()
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_epsilon > 0.0
            && self.probability_clamp > 0.0
            && self.probability_clamp < 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Number of shots a probe was trained with; `Full` means the whole training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shots {
    Full,
    K(usize),
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Full => f.write_str("full"),
            Shots::K(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for Shots {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::Full => s.serialize_str("full"),
            Shots::K(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            K(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::K(k) => Ok(Shots::K(k)),
            Raw::Name(s) if s == "full" => Ok(Shots::Full),
            Raw::Name(s) => Err(serde::de::Error::custom(format!("bad shot count {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeProvenance {
    pub blocks: Vec<Block>,
    pub n_way: usize,
    pub k_shot: Shots,
    pub seed: u64,
    pub config_digest: String,
}

/// Trained probe parameters. Row `i` of `weights` scores global tag `tag_indices[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub tag_indices: Vec<usize>,
    pub provenance: ProbeProvenance,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    tag_indices: Vec<usize>,
    provenance: ProbeProvenance,
}

impl ProbeModel {
    pub fn new(
        weights: Array2<f64>,
        bias: Array1<f64>,
        tag_indices: Vec<usize>,
        provenance: ProbeProvenance,
    ) -> Result<Self> {
        if weights.nrows() != bias.len() || weights.nrows() != tag_indices.len() {
            return Err(Error::Validation(format!(
                "weights {:?}, bias {}, tags {} disagree",
                weights.dim(),
                bias.len(),
                tag_indices.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("probe parameters must be finite".into()));
        }
        Ok(ProbeModel {
            weights,
            bias,
            tag_indices,
            provenance,
        })
    }

    pub fn zeros(num_tags: usize, dims: usize, provenance: ProbeProvenance) -> Self {
        ProbeModel {
            weights: Array2::zeros((num_tags, dims)),
            bias: Array1::zeros(num_tags),
            tag_indices: (0..num_tags).collect(),
            provenance,
        }
    }

    pub fn num_tags(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dims(&self) -> usize {
        self.weights.ncols()
    }

    /// Keeps only the rows scoring the given global tags, in that order.
    pub fn restrict_tags(&self, tags: &[usize]) -> Result<ProbeModel> {
        let rows = tags
            .iter()
            .map(|t| {
                self.tag_indices.iter().position(|x| x == t).ok_or_else(|| {
                    Error::Argument(format!("probe has no output for tag {t}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProbeModel {
            weights: self.weights.select(Axis(0), &rows),
            bias: self.bias.select(Axis(0), &rows),
            tag_indices: tags.to_vec(),
            provenance: self.provenance.clone(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(PROBE_MAGIC);
        w.u32(PROBE_VERSION);
        w.len(self.num_tags())?;
        w.len(self.dims())?;
        for v in self.weights.iter() {
            w.f64(*v);
        }
        for v in self.bias.iter() {
            w.f64(*v);
        }
        let trailer = serde_json::to_vec(&Trailer {
            tag_indices: self.tag_indices.clone(),
            provenance: self.provenance.clone(),
        })?;
        w.len(trailer.len())?;
        w.bytes(&trailer);
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PROBE_MAGIC)?;
        r.version(PROBE_VERSION)?;
        let num_tags = r.len("num_tags")?;
        let dims_at = r.offset();
        let dims = r.len("dims")?;
        if dims == 0 || num_tags == 0 {
            return Err(Error::format(dims_at, "probe shape must be positive"));
        }
        let count = num_tags
            .checked_mul(dims)
            .filter(|&c| c <= (bytes.len() - r.offset()) / 8)
            .ok_or_else(|| Error::format(r.offset(), "truncated payload reading weights"))?;
        let mut weights = Vec::with_capacity(count);
        for _ in 0..count {
            weights.push(r.f64_finite("weight")?);
        }
        let mut bias = Vec::with_capacity(num_tags);
        for _ in 0..num_tags {
            bias.push(r.f64_finite("bias")?);
        }
        let n = r.len("provenance length")?;
        let at = r.offset();
        let trailer: Trailer = serde_json::from_slice(r.take(n, "provenance")?)
            .map_err(|e| Error::format(at, format!("bad provenance trailer: {e}")))?;
        r.finish()?;
        ProbeModel::new(
            Array2::from_shape_vec((num_tags, dims), weights).unwrap(),
            Array1::from(bias),
            trailer.tag_indices,
            trailer.provenance,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file_atomic(path, &self.to_bytes()?)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logits(weights: &Array2<f64>, bias: &Array1<f64>, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&weights.t()) + bias
}

/// Tag probabilities, samples × tags.
pub fn forward(model: &ProbeModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.dims() {
        return Err(Error::Argument(format!(
            "features have {} dims, probe expects {}",
            x.ncols(),
            model.dims()
        )));
    }
    Ok(logits(&model.weights, &model.bias, x).mapv_into(sigmoid))
}

/// Mean binary cross-entropy over all cells plus `l2_penalty · ‖W‖² / 2`.
pub fn bce_loss(
    p: &Array2<f64>,
    y: &Array2<f64>,
    weights: &Array2<f64>,
    l2_penalty: f64,
    clamp: f64,
) -> Result<f64> {
    if p.dim() != y.dim() {
        return Err(Error::Argument(format!(
            "probabilities {:?} vs labels {:?}",
            p.dim(),
            y.dim()
        )));
    }
    if p.is_empty() {
        return Err(Error::Argument("loss over an empty matrix".into()));
    }
    let sum: f64 = p
        .iter()
        .zip(y.iter())
        .map(|(&p, &y)| {
            let p = p.clamp(clamp, 1.0 - clamp);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    let penalty = if l2_penalty > 0.0 {
        0.5 * l2_penalty * weights.iter().map(|w| w * w).sum::<f64>()
    } else {
        0.0
    };
    Ok(sum / p.len() as f64 + penalty)
}

fn grads_from_probs(
    p: &Array2<f64>,
    y: &Array2<f64>,
    x: &Array2<f64>,
    weights: &Array2<f64>,
    l2_penalty: f64,
) -> (Array2<f64>, Array1<f64>) {
    let scale = 1.0 / p.len() as f64;
    let residual = (p - y) * scale;
    let mut gw = residual.t().dot(x);
    if l2_penalty > 0.0 {
        gw.scaled_add(l2_penalty, weights);
    }
    let gb = residual.sum_axis(Axis(0));
    (gw, gb)
}

/// Analytic gradient of [`bce_loss`] (unclamped) with respect to weights and bias.
pub fn gradient(
    model: &ProbeModel,
    x: &Array2<f64>,
    y: &Array2<f64>,
    l2_penalty: f64,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let p = forward(model, x)?;
    if p.dim() != y.dim() {
        return Err(Error::Argument(format!(
            "labels {:?} do not match {} samples × {} tags",
            y.dim(),
            x.nrows(),
            model.num_tags()
        )));
    }
    Ok(grads_from_probs(&p, y, x, &model.weights, l2_penalty))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub stop_reason: StopReason,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    step: i32,
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

impl Adam {
    fn new(config: &TrainConfig, tags: usize, dims: usize) -> Self {
        Adam {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_epsilon,
            lr: config.learning_rate,
            step: 0,
            m_w: Array2::zeros((tags, dims)),
            v_w: Array2::zeros((tags, dims)),
            m_b: Array1::zeros(tags),
            v_b: Array1::zeros(tags),
        }
    }

    fn update(&mut self, w: &mut Array2<f64>, b: &mut Array1<f64>, gw: &Array2<f64>, gb: &Array1<f64>) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let lr_hat = self.lr / (1.0 - b1.powi(self.step));
        let bc2 = 1.0 - b2.powi(self.step);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr_hat * *m / ((*v / bc2).sqrt() + eps);
        };
        ndarray::Zip::from(w)
            .and(&mut self.m_w)
            .and(&mut self.v_w)
            .and(gw)
            .for_each(|p, m, v, &g| apply(p, m, v, g));
        ndarray::Zip::from(b)
            .and(&mut self.m_b)
            .and(&mut self.v_b)
            .and(gb)
            .for_each(|p, m, v, &g| apply(p, m, v, g));
    }
}

fn l2_norm<'a>(it: impl Iterator<Item = &'a f64>) -> f64 {
    it.map(|v| v * v).sum::<f64>().sqrt()
}

/// Full-batch Adam from zero initialization; returns the best-validation snapshot.
///
/// `seed` only enters the provenance: with zero init and full batches the
/// optimization path is fully determined by the data.
pub fn train(
    x_train: &Array2<f64>,
    y_train: &Array2<f64>,
    x_valid: &Array2<f64>,
    y_valid: &Array2<f64>,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ProbeModel, TrainHistory)> {
    config.validate()?;
    if x_train.nrows() == 0 {
        return Err(Error::Argument("training needs at least one sample".into()));
    }
    if x_valid.nrows() == 0 {
        return Err(Error::Argument("early stopping needs at least one validation sample".into()));
    }
    let (n, dims) = x_train.dim();
    let tags = y_train.ncols();
    if y_train.nrows() != n || x_valid.ncols() != dims || y_valid.dim() != (x_valid.nrows(), tags) {
        return Err(Error::Argument(format!(
            "inconsistent shapes: X_train {:?}, Y_train {:?}, X_valid {:?}, Y_valid {:?}",
            x_train.dim(),
            y_train.dim(),
            x_valid.dim(),
            y_valid.dim()
        )));
    }
    if tags == 0 {
        return Err(Error::Argument("training needs at least one tag".into()));
    }

    let provenance = ProbeProvenance {
        blocks: Vec::new(),
        n_way: tags,
        k_shot: Shots::Full,
        seed,
        config_digest: config.digest(),
    };
    let mut model = ProbeModel::zeros(tags, dims, provenance);
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        valid_loss: Vec::new(),
        best_epoch: None,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best = (model.weights.clone(), model.bias.clone());
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0;
    let mut adam = Adam::new(config, tags, dims);
    let mut p_train = logits(&model.weights, &model.bias, x_train).mapv_into(sigmoid);

    for epoch in 0..config.max_epochs {
        let (gw, gb) = grads_from_probs(&p_train, y_train, x_train, &model.weights, config.l2_penalty);
        adam.update(&mut model.weights, &mut model.bias, &gw, &gb);

        p_train = logits(&model.weights, &model.bias, x_train).mapv_into(sigmoid);
        let p_valid = logits(&model.weights, &model.bias, x_valid).mapv_into(sigmoid);
        let clamp = config.probability_clamp;
        let train_loss = bce_loss(&p_train, y_train, &model.weights, config.l2_penalty, clamp)?;
        let valid_loss = bce_loss(&p_valid, y_valid, &model.weights, config.l2_penalty, clamp)?;
        if !train_loss.is_finite() || !valid_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                weight_norm: l2_norm(model.weights.iter()),
                bias_norm: l2_norm(model.bias.iter()),
            });
        }
        history.train_loss.push(train_loss);
        history.valid_loss.push(valid_loss);

        if valid_loss < best_loss {
            best_loss = valid_loss;
            best = (model.weights.clone(), model.bias.clone());
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    model.weights = best.0;
    model.bias = best.1;
    Ok((model, history))
}
