//! Full multimodal pipeline: one encoder stack per modality, attention
//! blocks at the configured stages, per-branch FC heads, merge, classifier.
//!
//! With no attention stages configured the model degenerates to the plain
//! feature-fusion baseline: branches never exchange information before
//! their embeddings are concatenated for the classifier.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attx::{attx_forward, AttXParams, ConnectionType};
use crate::encoders::{min_input_length, stage_output_lengths, EncoderKind, EncoderStack};
use crate::error::{Error, Result};
use crate::numerics::{init, Binding, Mode, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal { alpha: f64, gamma: f64 },
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::CrossEntropy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Ordered modality names; order fixes the 1-based indices used in
    /// connection types.
    pub modalities: Vec<String>,
    pub encoder: EncoderKind,
    /// Multiplier on every filter count (1.0 = the reference architecture).
    #[serde(default = "default_filter_scale")]
    pub filter_scale: f64,
    /// Stages after which an attention block is inserted; subset of {1,2,3}.
    #[serde(default)]
    pub attx_stages: Vec<usize>,
    /// Required when `attx_stages` is nonempty.
    #[serde(default)]
    pub connection_type: Option<ConnectionType>,
    pub fc_widths: (usize, usize),
    pub num_classes: usize,
    #[serde(default)]
    pub loss: LossKind,
    pub seed: u64,
}

fn default_filter_scale() -> f64 {
    1.0
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::config("at least one modality required"));
        }
        let mut names: Vec<_> = self.modalities.clone();
        names.sort();
        names.dedup();
        if names.len() != self.modalities.len() {
            return Err(Error::config("duplicate modality names"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if self.fc_widths.0 == 0 || self.fc_widths.1 == 0 {
            return Err(Error::config("fc widths must be >= 1"));
        }
        if self.filter_scale <= 0.0 {
            return Err(Error::config("filter_scale must be positive"));
        }
        let mut stages = self.attx_stages.clone();
        stages.sort_unstable();
        stages.dedup();
        if stages.len() != self.attx_stages.len() {
            return Err(Error::config("duplicate attx stages"));
        }
        for &s in &stages {
            if !(1..=3).contains(&s) {
                return Err(Error::config(format!(
                    "AttX insertable at stages 1-3 only, got stage {s}"
                )));
            }
        }
        if !stages.is_empty() {
            if self.modalities.len() < 2 {
                return Err(Error::config(
                    "cross-modal connections need at least 2 modalities",
                ));
            }
            match &self.connection_type {
                None => {
                    return Err(Error::config(
                        "connection_type required when attx_stages is nonempty",
                    ))
                }
                Some(ty) => ty.validate_for(self.modalities.len())?,
            }
        }
        if let LossKind::Focal { alpha, gamma } = self.loss {
            if alpha <= 0.0 || gamma < 0.0 {
                return Err(Error::config("focal loss needs alpha > 0 and gamma >= 0"));
            }
        }
        Ok(())
    }

    /// Stable fingerprint of the serialized config (FNV-1a over JSON).
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }

    pub fn sorted_stages(&self) -> Vec<usize> {
        let mut s = self.attx_stages.clone();
        s.sort_unstable();
        s
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

struct BranchHead {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

pub struct Model {
    pub config: PipelineConfig,
    pub params: ParamSet,
    pub segment_length: usize,
    pub in_channels: Vec<usize>,
    branches: Vec<EncoderStack>,
    attx: BTreeMap<usize, AttXParams>,
    heads: Vec<BranchHead>,
    classifier: (ParamId, ParamId),
    stage_lengths: [usize; 4],
    embed_dim: usize,
}

/// Trainable state captured by [`Model::snapshot`].
#[derive(Clone)]
pub struct ModelState {
    params: ParamSet,
    bn: Vec<crate::numerics::BatchNormState>,
}

/// Everything produced by one forward pass that callers need afterwards:
/// the logits, per-branch embeddings (pre-merge), and the parameter
/// bindings whose gradients must be pulled back after `backward`.
pub struct ForwardPass {
    pub logits: Var,
    pub branch_embeddings: Vec<Var>,
    pub bindings: Vec<Binding>,
}

impl Model {
    /// Assemble the pipeline for segments of `segment_length` samples with
    /// the given per-modality channel counts.
    pub fn build(
        config: PipelineConfig,
        segment_length: usize,
        in_channels: Vec<usize>,
    ) -> Result<Model> {
        config.validate()?;
        if in_channels.len() != config.modalities.len() {
            return Err(Error::config(format!(
                "{} modalities but {} channel counts",
                config.modalities.len(),
                in_channels.len()
            )));
        }
        if in_channels.iter().any(|&c| c == 0) {
            return Err(Error::config("modality channel counts must be >= 1"));
        }
        let min_len = min_input_length(config.encoder);
        if segment_length < min_len {
            return Err(Error::config(format!(
                "segment length {segment_length} below the {} encoder minimum {min_len}",
                config.encoder
            )));
        }
        let stage_lengths = stage_output_lengths(config.encoder, segment_length)?;
        let d = config.modalities.len();
        let stages = config.sorted_stages();

        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        // Per-branch, per-stage input channels: a stage after an attention
        // stage gains one channel block per incoming edge.
        let specs = crate::encoders::block_specs(config.encoder);
        let scaled_out: Vec<usize> = specs
            .iter()
            .map(|s| s.scaled(config.filter_scale).out_channels())
            .collect();
        let mut branch_in = Vec::with_capacity(d);
        for modality in 1..=d {
            let mut chans = [0usize; 4];
            chans[0] = in_channels[modality - 1];
            for stage in 2..=4 {
                let prev_out = scaled_out[stage - 2];
                let indegree = if stages.contains(&(stage - 1)) {
                    config
                        .connection_type
                        .as_ref()
                        .map(|ty| ty.sources_into(modality).len())
                        .unwrap_or(0)
                } else {
                    0
                };
                chans[stage - 1] = prev_out * (1 + indegree);
            }
            branch_in.push(chans);
        }

        let mut branches = Vec::with_capacity(d);
        for (i, name) in config.modalities.iter().enumerate() {
            branches.push(EncoderStack::build(
                &mut params,
                &mut rng,
                &format!("enc.{name}"),
                config.encoder,
                config.filter_scale,
                branch_in[i],
            )?);
        }

        let mut attx = BTreeMap::new();
        for &stage in &stages {
            let m = stage_lengths[stage - 1];
            attx.insert(
                stage,
                AttXParams::build(
                    &mut params,
                    &mut rng,
                    &format!("attx.stage{stage}"),
                    stage,
                    d,
                    m,
                ),
            );
        }

        let flat_dim = scaled_out[3] * stage_lengths[3];
        let (fc1, fc2) = config.fc_widths;
        let mut heads = Vec::with_capacity(d);
        for name in &config.modalities {
            let w1 = params.add(
                format!("head.{name}.fc1.weight"),
                init::dense_weight(&mut rng, flat_dim, fc1),
            );
            let b1 = params.add(format!("head.{name}.fc1.bias"), Tensor::zeros(&[fc1]));
            let w2 = params.add(
                format!("head.{name}.fc2.weight"),
                init::dense_weight(&mut rng, fc1, fc2),
            );
            let b2 = params.add(format!("head.{name}.fc2.bias"), Tensor::zeros(&[fc2]));
            heads.push(BranchHead { w1, b1, w2, b2 });
        }

        let embed_dim = fc2 * d;
        let cw = params.add(
            "classifier.weight",
            init::dense_weight(&mut rng, embed_dim, config.num_classes),
        );
        let cb = params.add("classifier.bias", Tensor::zeros(&[config.num_classes]));

        Ok(Model {
            config,
            params,
            segment_length,
            in_channels,
            branches,
            attx,
            heads,
            classifier: (cw, cb),
            stage_lengths,
            embed_dim,
        })
    }

    pub fn stage_lengths(&self) -> [usize; 4] {
        self.stage_lengths
    }

    /// Width of the merged embedding (sum of fc2 widths across branches).
    pub fn embedding_dim(&self) -> usize {
        self.embed_dim
    }

    /// Run a batch through the pipeline. `inputs` holds one [B, C_i, L]
    /// tensor per modality, in config order.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        inputs: &[Tensor],
        mode: Mode,
    ) -> Result<ForwardPass> {
        let d = self.config.modalities.len();
        if inputs.len() != d {
            return Err(Error::config(format!(
                "model has {d} modalities, got {} inputs",
                inputs.len()
            )));
        }
        let batch = inputs[0].shape()[0];
        for (i, t) in inputs.iter().enumerate() {
            let s = t.shape();
            if s.len() != 3 || s[0] != batch || s[1] != self.in_channels[i] || s[2] != self.segment_length
            {
                return Err(Error::config(format!(
                    "modality {} expects [B, {}, {}], got {s:?}",
                    self.config.modalities[i], self.in_channels[i], self.segment_length
                )));
            }
        }

        let mut bindings = Vec::new();
        let mut xs: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();

        let stages = self.config.sorted_stages();
        for stage in 1..=4 {
            let mut zs = Vec::with_capacity(d);
            for (i, branch) in self.branches.iter_mut().enumerate() {
                zs.push(branch.forward_stage(
                    tape,
                    &self.params,
                    &mut bindings,
                    stage,
                    xs[i],
                    mode,
                )?);
            }
            xs = if stages.contains(&stage) {
                let block = &self.attx[&stage];
                let w = self.params.bind(tape, block.w);
                let w_u = self.params.bind(tape, block.w_u);
                bindings.push(w);
                bindings.push(w_u);
                let ty = self.config.connection_type.as_ref().unwrap();
                attx_forward(tape, w.var, w_u.var, ty, &zs)?
            } else {
                zs
            };
        }

        let mut embeddings = Vec::with_capacity(d);
        for (i, head) in self.heads.iter().enumerate() {
            let shape = tape.shape(xs[i]).to_vec();
            let flat = tape.reshape(xs[i], &[shape[0], shape[1] * shape[2]])?;
            let w1 = self.params.bind(tape, head.w1);
            let b1 = self.params.bind(tape, head.b1);
            let h = tape.dense(flat, w1.var, b1.var)?;
            let h = tape.relu(h);
            let w2 = self.params.bind(tape, head.w2);
            let b2 = self.params.bind(tape, head.b2);
            let h = tape.dense(h, w2.var, b2.var)?;
            let h = tape.relu(h);
            bindings.extend([w1, b1, w2, b2]);
            embeddings.push(h);
        }

        let merged = tape.concat(&embeddings, -1)?;
        let cw = self.params.bind(tape, self.classifier.0);
        let cb = self.params.bind(tape, self.classifier.1);
        bindings.extend([cw, cb]);
        let logits = tape.dense(merged, cw.var, cb.var)?;

        Ok(ForwardPass {
            logits,
            branch_embeddings: embeddings,
            bindings,
        })
    }

    /// Deterministic eval-mode embeddings for every sample of a dataset.
    pub fn export_embeddings(
        &mut self,
        dataset: &crate::data::SegmentDataset,
        batch_size: usize,
    ) -> Result<EmbeddingTable> {
        let mut rows = Vec::with_capacity(dataset.len());
        let indices: Vec<usize> = (0..dataset.len()).collect();
        for chunk in indices.chunks(batch_size.max(1)) {
            let inputs = dataset.batch(chunk)?;
            let mut tape = Tape::new();
            let pass = self.forward(&mut tape, &inputs, Mode::Eval)?;
            let merged = tape.concat(&pass.branch_embeddings, -1)?;
            let values = tape.value(merged);
            let dim = self.embed_dim;
            for (j, &idx) in chunk.iter().enumerate() {
                let sample = &dataset.samples()[idx];
                rows.push(EmbeddingRow {
                    sample_id: idx,
                    subject: sample.subject.clone(),
                    label: sample.label,
                    vector: values.data()[j * dim..(j + 1) * dim].to_vec(),
                });
            }
        }
        Ok(EmbeddingTable {
            dim: self.embed_dim,
            rows,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingRow {
    pub sample_id: usize,
    pub subject: String,
    pub label: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: Vec<EmbeddingRow>,
}

impl EmbeddingTable {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut header = String::from("sample_id,subject,label");
        for i in 0..self.dim {
            header.push_str(&format!(",e{i}"));
        }
        writeln!(w, "{header}")?;
        for row in &self.rows {
            let mut line = format!("{},{},{}", row.sample_id, row.subject, row.label);
            for v in &row.vector {
                line.push_str(&format!(",{v:.9e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::config(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        data[i * num_classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), num_classes], data)
}

/// Mean over the batch of -log softmax(logits)[label].
pub fn cross_entropy_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    num_classes: usize,
) -> Result<Var> {
    let lp = log_prob_true_class(tape, logits, labels, num_classes)?;
    let mean = tape.mean(lp);
    Ok(tape.affine(mean, -1.0, 0.0))
}

/// Mean over the batch of -alpha * (1 - p_t)^gamma * log(p_t).
pub fn focal_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    num_classes: usize,
    alpha: f64,
    gamma: f64,
) -> Result<Var> {
    let lp = log_prob_true_class(tape, logits, labels, num_classes)?;
    let p = tape.exp(lp);
    let one_minus = tape.affine(p, -1.0, 1.0);
    let focus = tape.powf(one_minus, gamma)?;
    let weighted = tape.mul(focus, lp)?;
    let mean = tape.mean(weighted);
    Ok(tape.affine(mean, -alpha, 0.0))
}

/// log softmax(logits) gathered at the true class: [B].
fn log_prob_true_class(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    num_classes: usize,
) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[1] != num_classes {
        return Err(Error::config(format!(
            "logits must be [B, {num_classes}], got {shape:?}"
        )));
    }
    if shape[0] != labels.len() {
        return Err(Error::config(format!(
            "{} logit rows vs {} labels",
            shape[0],
            labels.len()
        )));
    }
    let lsm = tape.log_softmax(logits, -1)?;
    let hot = tape.leaf(one_hot(labels, num_classes)?, false);
    let picked = tape.mul(lsm, hot)?;
    tape.sum_axis(picked, -1)
}

/// Loss selected by config.
pub fn loss_for(
    tape: &mut Tape,
    kind: &LossKind,
    logits: Var,
    labels: &[usize],
    num_classes: usize,
) -> Result<Var> {
    match kind {
        LossKind::CrossEntropy => cross_entropy_loss(tape, logits, labels, num_classes),
        LossKind::Focal { alpha, gamma } => {
            focal_loss(tape, logits, labels, num_classes, *alpha, *gamma)
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"ATXMODL1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: PipelineConfig,
    segment_length: usize,
    in_channels: Vec<usize>,
}

impl Model {
    /// Flat binary container: versioned header, config JSON, named
    /// parameter arrays (shape + row-major doubles), then batch-norm
    /// running statistics in build order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&CheckpointMeta {
            config: self.config.clone(),
            segment_length: self.segment_length,
            in_channels: self.in_channels.clone(),
        })
        .map_err(|e| Error::format(format!("checkpoint meta: {e}")))?;
        write_bytes(&mut w, &meta)?;

        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in self.params.iter() {
            write_bytes(&mut w, p.name.as_bytes())?;
            w.write_all(&(p.value.ndim() as u32).to_le_bytes())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }

        let states = self.bn_states();
        w.write_all(&(states.len() as u64).to_le_bytes())?;
        for s in states {
            w.write_all(&(s.running_mean.len() as u64).to_le_bytes())?;
            for v in &s.running_mean {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in &s.running_var {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&[s.initialized as u8])?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("not a model checkpoint"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&read_bytes(&mut r)?)
            .map_err(|e| Error::format(format!("checkpoint meta: {e}")))?;
        let mut model = Model::build(meta.config, meta.segment_length, meta.in_channels)?;

        let count = read_u64(&mut r)? as usize;
        if count != model.params.len() {
            return Err(Error::format(format!(
                "checkpoint has {count} parameters, model expects {}",
                model.params.len()
            )));
        }
        for i in 0..count {
            let name = String::from_utf8(read_bytes(&mut r)?)
                .map_err(|_| Error::format("parameter name is not utf-8"))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0; numel];
            for v in data.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            let slot = model.params.get_mut(crate::numerics::ParamId(i));
            if slot.name != name || slot.value.shape() != shape.as_slice() {
                return Err(Error::format(format!(
                    "checkpoint parameter '{name}' {shape:?} does not match model '{}' {:?}",
                    slot.name,
                    slot.value.shape()
                )));
            }
            slot.value = Tensor::new(shape, data)
                .map_err(|e| Error::format(format!("parameter '{name}': {e}")))?;
        }

        let n_states = read_u64(&mut r)? as usize;
        let mut states = model.bn_states_mut();
        if n_states != states.len() {
            return Err(Error::format(format!(
                "checkpoint has {n_states} norm states, model expects {}",
                states.len()
            )));
        }
        for s in states.iter_mut() {
            let channels = read_u64(&mut r)? as usize;
            if channels != s.running_mean.len() {
                return Err(Error::format("norm state channel mismatch"));
            }
            for v in s.running_mean.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            for v in s.running_var.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            s.initialized = flag[0] != 0;
        }
        Ok(model)
    }

    /// Copy of the trainable state (parameters + normalization statistics),
    /// used for best-validation checkpointing during training.
    pub fn snapshot(&self) -> ModelState {
        ModelState {
            params: self.params.clone(),
            bn: self.bn_states().into_iter().cloned().collect(),
        }
    }

    pub fn restore(&mut self, state: &ModelState) {
        self.params = state.params.clone();
        for (slot, saved) in self.bn_states_mut().into_iter().zip(&state.bn) {
            *slot = saved.clone();
        }
    }

    fn bn_states(&self) -> Vec<&crate::numerics::BatchNormState> {
        self.branches.iter().flat_map(|b| b.bn_states()).collect()
    }

    fn bn_states_mut(&mut self) -> Vec<&mut crate::numerics::BatchNormState> {
        self.branches
            .iter_mut()
            .flat_map(|b| b.bn_states_mut())
            .collect()
    }
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    if len > 1 << 30 {
        return Err(Error::format("unreasonable length field (truncated file?)"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("truncated record"))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format("truncated record"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::format("truncated record"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::format("truncated record"))?;
    Ok(f64::from_le_bytes(b))
}
