//! The toy cell search space, architecture encodings and the weight-sharing
//! supernet store.
//!
//! A cell has `num_input_nodes` input nodes followed by `num_intermediate`
//! nodes. Every earlier node feeds every later intermediate node, giving one
//! edge per ordered pair. Edges are numbered by target node, then source
//! node, so the default 1 + 3 cell has edges
//! `(0,1) (0,2) (1,2) (0,3) (1,3) (2,3)`. A node's value is the sum of its
//! incoming edge outputs and the last node feeds a classifier head that every
//! architecture shares.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{config, usage, Error, Result};
use crate::matrix::Matrix;
use crate::netcore::{glorot_uniform, Batch, Params, Tape, ValueId};
use crate::ogd::ProjectionState;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OpKind {
    /// `x W`
    LinearShared,
    /// `relu(x) W`
    ReluLinearShared,
    Identity,
    Zero,
}

impl OpKind {
    pub fn has_weight(self) -> bool {
        matches!(self, OpKind::LinearShared | OpKind::ReluLinearShared)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::LinearShared => "linear_shared",
            OpKind::ReluLinearShared => "relu_linear_shared",
            OpKind::Identity => "identity",
            OpKind::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct CellSpec {
    pub num_input_nodes: usize,
    pub num_intermediate: usize,
    pub ops_per_edge: Vec<OpKind>,
    pub feature_dim: usize,
}

impl Default for CellSpec {
    fn default() -> Self {
        Self {
            num_input_nodes: 1,
            num_intermediate: 3,
            ops_per_edge: alloc::vec![OpKind::LinearShared, OpKind::ReluLinearShared, OpKind::Identity, OpKind::Zero,],
            feature_dim: 16,
        }
    }
}

/// One edge of the cell DAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

impl CellSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_input_nodes == 0 {
            return Err(config!("a cell needs at least one input node"));
        }
        if self.num_intermediate == 0 {
            return Err(config!("a cell needs at least one intermediate node"));
        }
        if self.ops_per_edge.is_empty() {
            return Err(config!("ops_per_edge must not be empty"));
        }
        let distinct: BTreeSet<_> = self.ops_per_edge.iter().collect();
        if distinct.len() != self.ops_per_edge.len() {
            return Err(config!("ops_per_edge contains duplicates"));
        }
        if self.feature_dim == 0 {
            return Err(config!("feature_dim must be at least 1"));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_input_nodes + self.num_intermediate
    }

    pub fn num_ops(&self) -> usize {
        self.ops_per_edge.len()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut edges = Vec::new();
        for to in self.num_input_nodes..self.num_nodes() {
            for from in 0..to {
                edges.push(Edge { from, to });
            }
        }
        edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    /// Number of distinct architectures, saturating at `u128::MAX`.
    pub fn search_space_size(&self) -> u128 {
        let mut size: u128 = 1;
        for _ in 0..self.num_edges() {
            size = size.saturating_mul(self.num_ops() as u128);
        }
        size
    }

    pub fn op(&self, index: usize) -> OpKind {
        self.ops_per_edge[index]
    }
}

/// One operation index per edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArchEncoding {
    choices: Vec<usize>,
}

impl ArchEncoding {
    pub fn new(spec: &CellSpec, choices: Vec<usize>) -> Result<Self> {
        let arch = Self { choices };
        arch.check(spec)?;
        Ok(arch)
    }

    pub(crate) fn from_choices_unchecked(choices: Vec<usize>) -> Self {
        Self { choices }
    }

    pub fn uniform_op(spec: &CellSpec, op: usize) -> Result<Self> {
        Self::new(spec, alloc::vec![op; spec.num_edges()])
    }

    /// Mixed-radix decoding of `index` (edge 0 is the least significant digit).
    pub fn from_index(spec: &CellSpec, mut index: u128) -> Self {
        let k = spec.num_ops() as u128;
        let choices = (0..spec.num_edges())
            .map(|_| {
                let c = (index % k) as usize;
                index /= k;
                c
            })
            .collect();
        Self { choices }
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn check(&self, spec: &CellSpec) -> Result<()> {
        if self.choices.len() != spec.num_edges() {
            return Err(usage!(
                "architecture has {} choices, the cell has {} edges",
                self.choices.len(),
                spec.num_edges()
            ));
        }
        if let Some((e, c)) = self.choices.iter().enumerate().find(|(_, &c)| c >= spec.num_ops()) {
            return Err(usage!("edge {e} chooses op {c}, only {} ops exist", spec.num_ops()));
        }
        Ok(())
    }

    /// Canonical form `e0:op2,e1:op0,...`.
    pub fn encode(&self) -> String {
        let mut out = String::new();
        for (e, c) in self.choices.iter().enumerate() {
            if e > 0 {
                out.push(',');
            }
            out.push_str(&format!("e{e}:op{c}"));
        }
        out
    }

    /// Parses the canonical form. Edges must appear in order `e0, e1, ...`.
    /// Error positions are 1-based character offsets.
    pub fn decode(spec: &CellSpec, text: &str) -> Result<Self> {
        let parse_err = |position: usize, message: String| Error::Parse { position, message };
        let num_edges = spec.num_edges();
        let mut choices = Vec::with_capacity(num_edges);
        let mut offset = 0usize;
        for (e, item) in text.split(',').enumerate() {
            let pos = offset + 1;
            offset += item.len() + 1;
            if e >= num_edges {
                return Err(parse_err(pos, format!("more than {num_edges} edges")));
            }
            let (edge_part, op_part) =
                item.split_once(':').ok_or_else(|| parse_err(pos, format!("expected 'e{e}:op<k>', found '{item}'")))?;
            let edge_digits = edge_part
                .strip_prefix('e')
                .ok_or_else(|| parse_err(pos, format!("expected 'e{e}', found '{edge_part}'")))?;
            if edge_digits != format!("{e}") {
                return Err(parse_err(pos, format!("expected edge e{e}, found '{edge_part}'")));
            }
            let op_pos = pos + edge_part.len() + 1;
            let op_digits = op_part
                .strip_prefix("op")
                .ok_or_else(|| parse_err(op_pos, format!("expected 'op<k>', found '{op_part}'")))?;
            let valid_digits = !op_digits.is_empty() && op_digits.bytes().all(|b| b.is_ascii_digit());
            let op: usize = op_digits
                .parse()
                .ok()
                .filter(|op: &usize| valid_digits && format!("{op}") == op_digits)
                .ok_or_else(|| parse_err(op_pos + 2, format!("'{op_digits}' is not an op index")))?;
            if op >= spec.num_ops() {
                return Err(parse_err(
                    op_pos + 2,
                    format!("op index {op} out of range, cell has {} ops", spec.num_ops()),
                ));
            }
            choices.push(op);
        }
        if choices.len() != num_edges {
            return Err(parse_err(text.len() + 1, format!("found {} edges, expected {num_edges}", choices.len())));
        }
        Ok(Self { choices })
    }
}

impl fmt::Display for ArchEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Key of one shared parameter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKey {
    Edge { edge: usize, op: usize },
    Head,
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamKey::Edge { edge, op } => write!(f, "e{edge}:op{op}"),
            ParamKey::Head => f.write_str("head"),
        }
    }
}

/// A shared weight and the projection that guards it.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedLayer {
    pub weight: Matrix,
    pub projection: ProjectionState,
}

/// Supernet parameters: one `d x d` layer per weighted (edge, op) pair plus a
/// `d x C` head.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedParamStore {
    spec: CellSpec,
    num_classes: usize,
    layers: BTreeMap<ParamKey, SharedLayer>,
}

impl SharedParamStore {
    pub fn new(spec: &CellSpec, num_classes: usize, lambda: f64, rng: &mut SplitMix64) -> Result<Self> {
        spec.validate()?;
        if num_classes < 2 {
            return Err(config!("need at least two classes, got {num_classes}"));
        }
        let d = spec.feature_dim;
        let mut layers = BTreeMap::new();
        for edge in 0..spec.num_edges() {
            for (op, kind) in spec.ops_per_edge.iter().enumerate() {
                if kind.has_weight() {
                    layers.insert(
                        ParamKey::Edge { edge, op },
                        SharedLayer { weight: glorot_uniform(d, d, rng), projection: ProjectionState::new(d, lambda)? },
                    );
                }
            }
        }
        layers.insert(
            ParamKey::Head,
            SharedLayer { weight: glorot_uniform(d, num_classes, rng), projection: ProjectionState::new(d, lambda)? },
        );
        Ok(Self { spec: spec.clone(), num_classes, layers })
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> impl Iterator<Item = (&ParamKey, &SharedLayer)> {
        self.layers.iter()
    }

    pub fn layer(&self, key: &ParamKey) -> Option<&SharedLayer> {
        self.layers.get(key)
    }

    pub fn layer_mut(&mut self, key: &ParamKey) -> Result<&mut SharedLayer> {
        self.layers.get_mut(key).ok_or_else(|| usage!("no shared parameter {key}"))
    }

    pub fn reset_projections(&mut self) {
        for layer in self.layers.values_mut() {
            layer.projection.reset();
        }
    }
}

impl Params<ParamKey> for SharedParamStore {
    fn weight(&self, key: &ParamKey) -> Option<&Matrix> {
        self.layers.get(key).map(|l| &l.weight)
    }
}

pub fn sample_uniform(spec: &CellSpec, rng: &mut SplitMix64) -> ArchEncoding {
    let choices = (0..spec.num_edges()).map(|_| rng.below(spec.num_ops())).collect();
    ArchEncoding { choices }
}

/// `n` distinct uniform architectures in draw order (rejection sampling).
pub fn sample_distinct(spec: &CellSpec, n: usize, rng: &mut SplitMix64) -> Result<Vec<ArchEncoding>> {
    if n as u128 > spec.search_space_size() {
        return Err(usage!("cannot draw {n} distinct architectures from {}", spec.search_space_size()));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let arch = sample_uniform(spec, rng);
        if seen.insert(arch.choices.clone()) {
            out.push(arch);
        }
    }
    Ok(out)
}

/// Keys of every weighted op chosen by `arch`, plus the head.
pub fn shared_params_of(spec: &CellSpec, arch: &ArchEncoding) -> BTreeSet<ParamKey> {
    let mut keys: BTreeSet<ParamKey> = arch
        .choices
        .iter()
        .enumerate()
        .filter(|(_, &op)| spec.op(op).has_weight())
        .map(|(edge, &op)| ParamKey::Edge { edge, op })
        .collect();
    keys.insert(ParamKey::Head);
    keys
}

pub struct SubnetOutput {
    pub logits: Matrix,
    pub tape: Tape<ParamKey>,
    pub logits_id: ValueId,
}

/// Runs `arch` on `batch` with parameters inherited from `store`.
pub fn subnet_forward(arch: &ArchEncoding, batch: &Batch, store: &SharedParamStore) -> Result<SubnetOutput> {
    let spec = store.spec();
    arch.check(spec)?;
    if batch.dim() != spec.feature_dim {
        return Err(usage!("batch has {} features, the cell width is {}", batch.dim(), spec.feature_dim));
    }
    let rows = batch.len();
    let mut tape = Tape::new();
    let mut nodes: Vec<ValueId> = Vec::with_capacity(spec.num_nodes());
    for _ in 0..spec.num_input_nodes {
        nodes.push(tape.input(batch.features.clone()));
    }
    let mut incoming: Vec<ValueId> = Vec::new();
    let mut edge_index = 0;
    for to in spec.num_input_nodes..spec.num_nodes() {
        incoming.clear();
        for &src in &nodes[..to] {
            let op = arch.choices[edge_index];
            let key = ParamKey::Edge { edge: edge_index, op };
            match spec.op(op) {
                OpKind::LinearShared => incoming.push(tape.linear(src, key, store)?),
                OpKind::ReluLinearShared => {
                    let r = tape.relu(src)?;
                    incoming.push(tape.linear(r, key, store)?);
                }
                OpKind::Identity => incoming.push(src),
                OpKind::Zero => {}
            }
            edge_index += 1;
        }
        let value = match incoming.as_slice() {
            [] => tape.zeros(rows, spec.feature_dim),
            [single] => *single,
            many => tape.sum(many)?,
        };
        nodes.push(value);
    }
    let last = *nodes.last().expect("cell has nodes");
    let logits_id = tape.linear(last, ParamKey::Head, store)?;
    Ok(SubnetOutput { logits: tape.value(logits_id).clone(), tape, logits_id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn batch(rng: &mut SplitMix64, n: usize, d: usize) -> Batch {
        let features = Matrix::from_fn(n, d, |_, _| rng.normal());
        let labels = (0..n).map(|i| i % 3).collect();
        Batch::new(features, labels, 3).unwrap()
    }

    fn small_spec() -> CellSpec {
        CellSpec { feature_dim: 4, ..CellSpec::default() }
    }

    #[test]
    fn default_cell_shape() {
        let spec = CellSpec::default();
        let edges = spec.edges();
        assert_eq!(edges.len(), 6);
        assert_eq!(edges[2], Edge { from: 1, to: 2 });
        assert_eq!(edges[5], Edge { from: 2, to: 3 });
        assert!(edges.iter().all(|e| e.from < e.to));
        assert_eq!(spec.search_space_size(), 4096);
    }

    #[test]
    fn validate_rejects_bad_specs() {
        let mut s = CellSpec { ops_per_edge: vec![OpKind::Zero, OpKind::Zero], ..CellSpec::default() };
        assert!(s.validate().is_err());
        s.ops_per_edge.clear();
        assert!(s.validate().is_err());
        let s = CellSpec { num_intermediate: 0, ..CellSpec::default() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_op_space_has_one_arch() {
        let spec = CellSpec { ops_per_edge: vec![OpKind::Identity], ..CellSpec::default() };
        let mut rng = SplitMix64::new(0);
        for _ in 0..5 {
            assert_eq!(sample_uniform(&spec, &mut rng).choices(), &[0; 6]);
        }
        assert_eq!(sample_distinct(&spec, 1, &mut rng).unwrap().len(), 1);
        assert!(sample_distinct(&spec, 2, &mut rng).is_err());
    }

    #[test]
    fn distinct_sampling_exhausts_small_space() {
        let spec = CellSpec { num_intermediate: 1, ..CellSpec::default() };
        let all = sample_distinct(&spec, 4, &mut SplitMix64::new(8)).unwrap();
        let set: BTreeSet<_> = all.iter().map(|a| a.choices().to_vec()).collect();
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn sampling_is_seeded_and_uniform() {
        let spec = CellSpec { num_intermediate: 2, ..CellSpec::default() };
        assert_eq!(spec.num_edges(), 3);
        let a = sample_uniform(&spec, &mut SplitMix64::new(9));
        let b = sample_uniform(&spec, &mut SplitMix64::new(9));
        assert_eq!(a, b);

        let spec = CellSpec::default();
        let mut rng = SplitMix64::new(77);
        let n = 10_000;
        let mut counts = [[0usize; 4]; 6];
        for _ in 0..n {
            let arch = sample_uniform(&spec, &mut rng);
            for (e, &c) in arch.choices().iter().enumerate() {
                counts[e][c] += 1;
            }
        }
        for row in counts.iter().take(4) {
            for &c in row {
                let f = c as f64 / n as f64;
                assert!((f - 0.25).abs() < 0.02, "{f}");
            }
        }
    }

    #[test]
    fn encode_decode() {
        let spec = CellSpec::default();
        let arch = ArchEncoding::new(&spec, vec![2, 0, 1, 3, 3, 0]).unwrap();
        assert_eq!(arch.encode(), "e0:op2,e1:op0,e2:op1,e3:op3,e4:op3,e5:op0");
        assert_eq!(ArchEncoding::decode(&spec, &arch.encode()).unwrap(), arch);

        let err = ArchEncoding::decode(&spec, "e0:op9,e1:op0,e2:op0,e3:op0,e4:op0,e5:op0").unwrap_err();
        assert!(matches!(err, Error::Parse { position: 6, .. }), "{err}");
        let err = ArchEncoding::decode(&spec, "e0:op1").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = ArchEncoding::decode(&spec, "e0:op1,e2:op0").unwrap_err();
        assert!(matches!(err, Error::Parse { position: 8, .. }), "{err}");
        assert!(ArchEncoding::decode(&spec, "").is_err());
        assert!(ArchEncoding::decode(&spec, "e0:opx,e1:op0,e2:op0,e3:op0,e4:op0,e5:op0").is_err());
    }

    #[test]
    fn shared_params_cases() {
        let spec = CellSpec::default();
        let identity = ArchEncoding::uniform_op(&spec, 2).unwrap();
        assert_eq!(shared_params_of(&spec, &identity).into_iter().collect::<Vec<_>>(), vec![ParamKey::Head]);
        let linear = ArchEncoding::uniform_op(&spec, 0).unwrap();
        let keys = shared_params_of(&spec, &linear);
        assert_eq!(keys.len(), 7);
        assert!((0..6).all(|edge| keys.contains(&ParamKey::Edge { edge, op: 0 })));
    }

    #[test]
    fn all_zero_gives_zero_logits() {
        let spec = small_spec();
        let mut rng = SplitMix64::new(1);
        let store = SharedParamStore::new(&spec, 3, 1.0, &mut rng).unwrap();
        let arch = ArchEncoding::uniform_op(&spec, 3).unwrap();
        let out = subnet_forward(&arch, &batch(&mut rng, 5, 4), &store).unwrap();
        assert_eq!(out.logits, Matrix::zeros(5, 3));
    }

    #[test]
    fn all_identity_scales_by_path_count() {
        // node1 = x, node2 = x + node1 = 2x, node3 = x + node1 + node2 = 4x
        let spec = small_spec();
        let mut rng = SplitMix64::new(2);
        let store = SharedParamStore::new(&spec, 3, 1.0, &mut rng).unwrap();
        let b = batch(&mut rng, 5, 4);
        let arch = ArchEncoding::uniform_op(&spec, 2).unwrap();
        let out = subnet_forward(&arch, &b, &store).unwrap();
        let head = &store.layer(&ParamKey::Head).unwrap().weight;
        let expected = b.features.scale(4.0).matmul(head).unwrap();
        assert!(out.logits.sub(&expected).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn non_shared_edge_difference_keeps_common_tape_entries() {
        let spec = small_spec();
        let mut rng = SplitMix64::new(3);
        let store = SharedParamStore::new(&spec, 3, 1.0, &mut rng).unwrap();
        let b = batch(&mut rng, 6, 4);
        // Edge 0 (0 -> 1) linear in both; they differ on edge 5 (2 -> 3).
        let a = ArchEncoding::new(&spec, vec![0, 2, 3, 3, 2, 2]).unwrap();
        let c = ArchEncoding::new(&spec, vec![0, 2, 3, 3, 2, 3]).unwrap();
        let out_a = subnet_forward(&a, &b, &store).unwrap();
        let out_c = subnet_forward(&c, &b, &store).unwrap();
        assert_ne!(out_a.logits, out_c.logits);
        let key = ParamKey::Edge { edge: 0, op: 0 };
        let input_a = out_a.tape.linear_inputs().find(|(k, _)| **k == key).unwrap().1;
        let input_c = out_c.tape.linear_inputs().find(|(k, _)| **k == key).unwrap().1;
        assert_eq!(input_a, input_c);
    }

    #[test]
    fn forward_rejects_mismatches() {
        let spec = small_spec();
        let mut rng = SplitMix64::new(4);
        let store = SharedParamStore::new(&spec, 3, 1.0, &mut rng).unwrap();
        let b = batch(&mut rng, 2, 5);
        let arch = ArchEncoding::uniform_op(&spec, 0).unwrap();
        assert!(subnet_forward(&arch, &b, &store).is_err());
        let short = ArchEncoding::from_index(&CellSpec { num_intermediate: 2, ..spec.clone() }, 0);
        let b = batch(&mut rng, 2, 4);
        assert!(subnet_forward(&short, &b, &store).is_err());
    }

    #[test]
    fn from_index_enumerates_space() {
        let spec = CellSpec { num_intermediate: 2, ..small_spec() };
        let all: BTreeSet<_> = (0..spec.search_space_size()).map(|i| ArchEncoding::from_index(&spec, i)).collect();
        assert_eq!(all.len() as u128, spec.search_space_size());
    }
}
