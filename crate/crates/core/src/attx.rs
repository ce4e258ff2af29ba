//! Attentive cross-modal connections.
//!
//! An attention block sits between per-modality encoder stages: stage
//! outputs are stacked into one tensor, projected through a learned
//! modality-mixing matrix, scored per temporal position, and softmax-
//! normalized across modalities. The weighted representation of each source
//! modality is then concatenated (channel axis) into every receiving
//! stream selected by the connection type.
//!
//! For two modalities the three directed configurations are Type I (1->2),
//! Type II (2->1), and Type III (both directions). For d modalities there
//! are 2^d - 1 configurations, one per nonempty set of source modalities;
//! a greedy search narrows that space using the best two-modality result.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{init, Binding, ParamId, ParamSet, Tape, Tensor, Var};

// ---------------------------------------------------------------------------
// Connection types
// ---------------------------------------------------------------------------

/// A set of directed sharing edges between modality streams. Indices are
/// 1-based, matching the serialized form ("2->1,2->3", "1<->2").
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConnectionType {
    edges: BTreeSet<(usize, usize)>,
}

impl ConnectionType {
    pub fn new(edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let edges: BTreeSet<_> = edges.into_iter().collect();
        if edges.is_empty() {
            return Err(Error::config("connection type must contain an edge"));
        }
        for &(s, t) in &edges {
            if s == 0 || t == 0 {
                return Err(Error::config("modality indices are 1-based"));
            }
            if s == t {
                return Err(Error::config(format!("self-edge {s}->{t} not allowed")));
            }
        }
        Ok(ConnectionType { edges })
    }

    /// 1->2
    pub fn type_i() -> Self {
        ConnectionType::new([(1, 2)]).unwrap()
    }

    /// 2->1
    pub fn type_ii() -> Self {
        ConnectionType::new([(2, 1)]).unwrap()
    }

    /// 1->2 and 2->1
    pub fn type_iii() -> Self {
        ConnectionType::new([(1, 2), (2, 1)]).unwrap()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Source modalities feeding edge `(k -> target)`, ascending.
    pub fn sources_into(&self, target: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, t)| t == target)
            .map(|&(s, _)| s)
            .collect()
    }

    pub fn source_set(&self) -> BTreeSet<usize> {
        self.edges.iter().map(|&(s, _)| s).collect()
    }

    pub fn target_set(&self) -> BTreeSet<usize> {
        self.edges.iter().map(|&(_, t)| t).collect()
    }

    /// Check all referenced modalities exist among `d` streams.
    pub fn validate_for(&self, d: usize) -> Result<()> {
        for &(s, t) in &self.edges {
            if s > d || t > d {
                return Err(Error::config(format!(
                    "edge {s}->{t} references a modality outside 1..={d}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ConnectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Bidirectional pairs collapse to "i<->j"; everything else prints
        // as "s->t". Items are ordered by their numeric endpoints.
        let mut items: Vec<((usize, usize), String)> = Vec::new();
        let mut seen = BTreeSet::new();
        for &(s, t) in &self.edges {
            if seen.contains(&(s, t)) {
                continue;
            }
            if self.edges.contains(&(t, s)) {
                let (a, b) = (s.min(t), s.max(t));
                items.push(((a, b), format!("{a}<->{b}")));
                seen.insert((s, t));
                seen.insert((t, s));
            } else {
                items.push(((s, t), format!("{s}->{t}")));
                seen.insert((s, t));
            }
        }
        items.sort();
        let strs: Vec<_> = items.into_iter().map(|(_, s)| s).collect();
        write!(f, "{}", strs.join(","))
    }
}

impl FromStr for ConnectionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for token in s.split(',') {
            let token = token.trim();
            if token.is_empty() {
                return Err(Error::config(format!("empty edge in '{s}'")));
            }
            let parse_idx = |part: &str| -> Result<usize> {
                part.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad modality index '{part}' in '{s}'")))
            };
            if let Some((a, b)) = token.split_once("<->") {
                let (a, b) = (parse_idx(a)?, parse_idx(b)?);
                edges.push((a, b));
                edges.push((b, a));
            } else if let Some((a, b)) = token.split_once("->") {
                edges.push((parse_idx(a)?, parse_idx(b)?));
            } else {
                return Err(Error::config(format!(
                    "edge '{token}' is neither 'a->b' nor 'a<->b'"
                )));
            }
        }
        ConnectionType::new(edges)
    }
}

impl serde::Serialize for ConnectionType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for ConnectionType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All 2^d - 1 connection types over `d` modalities: one per nonempty
/// source subset, each source sharing to every other modality. For d = 2
/// this yields Types I, II, III in that order.
pub fn enumerate_connection_types(d: usize) -> Result<Vec<ConnectionType>> {
    if d < 2 {
        return Err(Error::config(format!(
            "connection enumeration needs d >= 2 modalities, got {d}"
        )));
    }
    let mut types = Vec::with_capacity((1usize << d) - 1);
    for mask in 1u32..(1u32 << d) {
        let sources: Vec<usize> = (1..=d).filter(|i| mask & (1 << (i - 1)) != 0).collect();
        let mut edges = Vec::new();
        for &s in &sources {
            for t in 1..=d {
                if t != s {
                    edges.push((s, t));
                }
            }
        }
        types.push(ConnectionType::new(edges)?);
    }
    Ok(types)
}

/// Narrow the d-modality search space using the winning two-modality type.
///
/// Two candidate extensions of the pair winner are scored: the winner's
/// sources sharing to every other modality, and every other modality
/// sharing into the winner's targets. For a pair winner 2->1 with d = 3
/// those are exactly {2->1, 2->3} and {2->1, 3->1}. Ties break toward
/// fewer edges, then lexicographic edge order.
pub fn greedy_type_search(
    d: usize,
    best_pair_type: &ConnectionType,
    mut evaluate: impl FnMut(&ConnectionType) -> f64,
) -> Result<ConnectionType> {
    if d < 3 {
        return Err(Error::config(format!(
            "greedy search applies to d >= 3 modalities, got {d}"
        )));
    }
    best_pair_type.validate_for(d)?;

    let mut candidates: Vec<ConnectionType> = Vec::new();
    let push = |edges: Vec<(usize, usize)>, candidates: &mut Vec<ConnectionType>| -> Result<()> {
        let ty = ConnectionType::new(edges)?;
        if !candidates.contains(&ty) {
            candidates.push(ty);
        }
        Ok(())
    };

    // Source extension: each winning source shares to all other modalities.
    let mut src_edges = Vec::new();
    for s in best_pair_type.source_set() {
        for t in 1..=d {
            if t != s {
                src_edges.push((s, t));
            }
        }
    }
    push(src_edges, &mut candidates)?;

    // Target extension: every other modality shares into the winning targets.
    let mut tgt_edges = Vec::new();
    for t in best_pair_type.target_set() {
        for s in 1..=d {
            if s != t {
                tgt_edges.push((s, t));
            }
        }
    }
    push(tgt_edges, &mut candidates)?;

    assert!(!candidates.is_empty(), "candidate set cannot be empty");

    let mut best: Option<(f64, &ConnectionType)> = None;
    for ty in &candidates {
        let score = evaluate(ty);
        let better = match best {
            None => true,
            Some((bs, bt)) => {
                score > bs
                    || (score == bs
                        && (ty.edge_count() < bt.edge_count()
                            || (ty.edge_count() == bt.edge_count() && ty < bt)))
            }
        };
        if better {
            best = Some((score, ty));
        }
    }
    Ok(best.expect("nonempty candidates").1.clone())
}

// ---------------------------------------------------------------------------
// Block computation
// ---------------------------------------------------------------------------
//
// Stage representations are [n, m] per sample (n channels, m temporal
// positions) with an optional leading batch axis; every op below treats
// leading axes generically.

/// Stack equally shaped per-modality representations into [..., n, m, d].
pub fn stack_modalities(tape: &mut Tape, zs: &[Var]) -> Result<Var> {
    if zs.len() < 2 {
        return Err(Error::config(format!(
            "stacking needs at least 2 modalities, got {}",
            zs.len()
        )));
    }
    let first = tape.shape(zs[0]).to_vec();
    for &z in &zs[1..] {
        if tape.shape(z) != first.as_slice() {
            let shapes: Vec<_> = zs.iter().map(|&z| tape.shape(z).to_vec()).collect();
            return Err(Error::config(format!(
                "modality shapes differ at block entry: {shapes:?}; run the dimension adapter first"
            )));
        }
    }
    tape.stack_last(zs)
}

/// Project the stacked tensor across the modality axis: ReLU(S . W).
pub fn project(tape: &mut Tape, stacked: Var, w: Var) -> Result<Var> {
    let d = *tape.shape(stacked).last().unwrap();
    let wshape = tape.shape(w);
    if wshape != [d, d] {
        return Err(Error::config(format!(
            "projection matrix must be [{d}, {d}], got {wshape:?}"
        )));
    }
    let projected = tape.matmul_trailing(stacked, w)?;
    Ok(tape.relu(projected))
}

/// Attention weights over modalities: transpose the projection to
/// [..., d, m], scale each temporal position by the scoring vector, and
/// softmax across the modality axis so weights sum to 1 per position.
pub fn attention_weights(tape: &mut Tape, projected: Var, w_u: Var) -> Result<Var> {
    let shape = tape.shape(projected).to_vec();
    if shape.len() < 3 {
        return Err(Error::config(format!(
            "projection must be [..., n, m, d], got {shape:?}"
        )));
    }
    let m = shape[shape.len() - 2];
    if tape.shape(w_u) != [m] {
        return Err(Error::config(format!(
            "scoring vector must have length {m}, got {:?}",
            tape.shape(w_u)
        )));
    }
    let transposed = tape.swap_last_axes(projected)?; // [..., d, m]
    let scaled = tape.mul(transposed, w_u)?;
    tape.softmax(scaled, -2)
}

/// Slice the weights of modality `index` (1-based) out of [..., d, m].
pub fn extract_modality_weights(tape: &mut Tape, theta: Var, index: usize) -> Result<Var> {
    let shape = tape.shape(theta);
    let d = shape[shape.len() - 2];
    if index == 0 || index > d {
        return Err(Error::config(format!(
            "modality index {index} out of range 1..={d}"
        )));
    }
    tape.index_axis(theta, -2, index - 1)
}

/// Weighted representation of one modality.
pub fn weight_modality(tape: &mut Tape, theta_i: Var, z_i: Var) -> Result<Var> {
    if tape.shape(theta_i) != tape.shape(z_i) {
        return Err(Error::config(format!(
            "weight/representation shape mismatch: {:?} vs {:?}",
            tape.shape(theta_i),
            tape.shape(z_i)
        )));
    }
    tape.mul(theta_i, z_i)
}

/// Assemble next-stage inputs: each modality keeps its own representation
/// and gains the weighted representation of every source sharing into it,
/// concatenated on the channel axis in ascending source order. Streams with
/// no incoming edge pass through unchanged.
pub fn route(
    tape: &mut Tape,
    connection: &ConnectionType,
    zs: &[Var],
    zhats: &[Option<Var>],
) -> Result<Vec<Var>> {
    let d = zs.len();
    connection.validate_for(d)?;
    let mut outputs = Vec::with_capacity(d);
    for i in 1..=d {
        let sources = connection.sources_into(i);
        if sources.is_empty() {
            outputs.push(zs[i - 1]);
            continue;
        }
        let mut parts = vec![zs[i - 1]];
        for s in sources {
            parts.push(zhats[s - 1].ok_or_else(|| {
                Error::config(format!("missing weighted representation for modality {s}"))
            })?);
        }
        outputs.push(tape.concat(&parts, -2)?);
    }
    Ok(outputs)
}

/// Full block: stack -> project -> attention weights -> extract -> weight
/// -> route. Differentiable end to end in the representations and both
/// parameter tensors.
pub fn attx_forward(
    tape: &mut Tape,
    w: Var,
    w_u: Var,
    connection: &ConnectionType,
    zs: &[Var],
) -> Result<Vec<Var>> {
    connection.validate_for(zs.len())?;
    let stacked = stack_modalities(tape, zs)?;
    let projected = project(tape, stacked, w)?;
    let theta = attention_weights(tape, projected, w_u)?;
    let mut zhats: Vec<Option<Var>> = vec![None; zs.len()];
    for s in connection.source_set() {
        let theta_s = extract_modality_weights(tape, theta, s)?;
        zhats[s - 1] = Some(weight_modality(tape, theta_s, zs[s - 1])?);
    }
    route(tape, connection, zs, &zhats)
}

// ---------------------------------------------------------------------------
// Parameters and dimension adaptation
// ---------------------------------------------------------------------------

/// Learned parameters of one block instance: the modality-mixing matrix
/// W [d, d] and the per-position scoring vector w_u [m]. Blocks at
/// different stages hold independent parameters.
#[derive(Debug, Clone)]
pub struct AttXParams {
    pub w: ParamId,
    pub w_u: ParamId,
    pub stage: usize,
}

impl AttXParams {
    pub fn build(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        prefix: &str,
        stage: usize,
        d: usize,
        m: usize,
    ) -> Self {
        let w = params.add(format!("{prefix}.w"), init::dense_weight(rng, d, d));
        let w_u = params.add(format!("{prefix}.w_u"), init::score_vector(rng, m));
        AttXParams { w, w_u, stage }
    }
}

/// Maps unequal stage representations onto a common (n, m): channels align
/// to the maximum channel count through a learned kernel-size-1
/// convolution, then temporal lengths align to the maximum length through
/// nearest-neighbor resampling. Representations already at the target
/// shape pass through untouched, with no parameters allocated.
#[derive(Debug, Clone)]
pub struct DimensionAdapter {
    pub target_n: usize,
    pub target_m: usize,
    channel_maps: Vec<Option<(ParamId, ParamId)>>, // (kernel, bias) per modality
    source_shapes: Vec<(usize, usize)>,
}

impl DimensionAdapter {
    pub fn build(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        prefix: &str,
        shapes: &[(usize, usize)],
    ) -> Self {
        let target_n = shapes.iter().map(|&(n, _)| n).max().unwrap_or(0);
        let target_m = shapes.iter().map(|&(_, m)| m).max().unwrap_or(0);
        let channel_maps = shapes
            .iter()
            .enumerate()
            .map(|(i, &(n, _))| {
                if n == target_n {
                    None
                } else {
                    let kernel = params.add(
                        format!("{prefix}.adapt{}.kernel", i + 1),
                        init::conv_kernel(rng, target_n, n, 1),
                    );
                    let bias = params.add(
                        format!("{prefix}.adapt{}.bias", i + 1),
                        Tensor::zeros(&[target_n]),
                    );
                    Some((kernel, bias))
                }
            })
            .collect();
        DimensionAdapter {
            target_n,
            target_m,
            channel_maps,
            source_shapes: shapes.to_vec(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.channel_maps.iter().all(Option::is_none)
            && self
                .source_shapes
                .iter()
                .all(|&(_, m)| m == self.target_m)
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        bindings: &mut Vec<Binding>,
        zs: &[Var],
    ) -> Result<Vec<Var>> {
        if zs.len() != self.source_shapes.len() {
            return Err(Error::config(format!(
                "adapter built for {} modalities, got {}",
                self.source_shapes.len(),
                zs.len()
            )));
        }
        let mut out = Vec::with_capacity(zs.len());
        for (i, &z) in zs.iter().enumerate() {
            let (_, m) = self.source_shapes[i];
            let mut cur = z;
            if let Some((kernel, bias)) = self.channel_maps[i] {
                let kv = params.bind(tape, kernel);
                let bv = params.bind(tape, bias);
                bindings.extend([kv, bv]);
                cur = tape.conv1d(cur, kv.var, bv.var, 1, 0)?;
            }
            if m != self.target_m {
                let indices = nearest_indices(m, self.target_m);
                cur = tape.gather_last(cur, &indices)?;
            }
            out.push(cur);
        }
        Ok(out)
    }
}

/// Nearest-neighbor index map from a length-`src` axis onto `dst` positions.
pub fn nearest_indices(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|t| {
            let pos = (t as f64 + 0.5) * src as f64 / dst as f64;
            (pos.floor() as usize).min(src - 1)
        })
        .collect()
}
