//! Model families: sufficient statistics, their partial derivatives, the
//! edge-conditional coordinate map, and the ℓ-weighting used for
//! non-negative data.
//!
//! Every supported family has log-density
//! `Σ_a Σ_k θ_a^(k) t_a^(k)(x_a) + Σ_{a<b} Σ_l θ_ab^(l) t_ab^(l)(x_a, x_b) − Ψ(θ)`
//! over ℝᵖ or ℝ₊ᵖ. Interaction sums run over unordered pairs, so the stored
//! symmetric parameter matrices are the coefficients of each pair counted
//! once. The log-partition function is never evaluated anywhere in this
//! crate; the conditional scoring rule removes it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Centered Gaussian: node statistic −x²/2, interaction −x_a·x_b. The
    /// edge matrix plus the diagonal of node coefficients is the precision
    /// matrix Ω.
    Gaussian,
    /// Gaussian density restricted to the non-negative orthant; same
    /// statistics as `Gaussian`.
    NonNegGaussian,
    /// Normal conditionals with a single interaction matrix:
    /// node statistics x and x², interaction x_a²·x_b².
    NormalConditionalsL1,
    /// Normal conditionals with two interaction matrices:
    /// node statistics x and x², interactions x_a·x_b and x_a²·x_b².
    NormalConditionalsL2,
    /// Exponential graphical model: node statistic −x, interaction
    /// −x_a·x_b, all coefficients non-negative, support ℝ₊ᵖ.
    ExponentialGm,
}

/// Sample space of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Reals,
    NonNegReals,
}

/// Weight function ℓ for generalized score matching on non-negative data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFn {
    /// ℓ(x) = 1: standard score matching (real-valued data only).
    Identity,
    /// ℓ(x) = x².
    Square,
    /// ℓ(x) = log(x + 1).
    LogPlusOne,
}

impl Family {
    /// Number of interaction statistics per edge (L).
    pub fn interaction_count(self) -> usize {
        match self {
            Family::NormalConditionalsL2 => 2,
            _ => 1,
        }
    }

    /// Number of node statistics per vertex (K).
    pub fn node_stat_count(self) -> usize {
        match self {
            Family::NormalConditionalsL1 | Family::NormalConditionalsL2 => 2,
            _ => 1,
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            Family::NonNegGaussian | Family::ExponentialGm => Domain::NonNegReals,
            _ => Domain::Reals,
        }
    }

    /// Default ℓ: identity on ℝᵖ, log(x+1) on ℝ₊ᵖ.
    pub fn default_weight_fn(self) -> WeightFn {
        match self.domain() {
            Domain::Reals => WeightFn::Identity,
            Domain::NonNegReals => WeightFn::LogPlusOne,
        }
    }
}

impl WeightFn {
    /// ℓ(x).
    pub fn eval(self, x: f64) -> f64 {
        match self {
            WeightFn::Identity => 1.0,
            WeightFn::Square => x * x,
            WeightFn::LogPlusOne => x.ln_1p(),
        }
    }

    /// ℓ′(x). For LogPlusOne this is 1/(x+1), evaluated exactly; domain
    /// errors are rejected upstream so no clamping happens here.
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            WeightFn::Identity => 0.0,
            WeightFn::Square => 2.0 * x,
            WeightFn::LogPlusOne => 1.0 / (x + 1.0),
        }
    }
}

/// A model family together with its true parameters.
///
/// Immutable after construction; shared freely across worker threads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    family: Family,
    p: usize,
    edge_params: Vec<DMatrix<f64>>,
    node_params: Vec<DVector<f64>>,
    weight_fn: WeightFn,
}

/// Serialized form: family tag, dimensions, dense row-major arrays.
#[derive(Serialize, Deserialize)]
struct ModelSpecJson {
    family: Family,
    p: usize,
    weight_fn: WeightFn,
    edge_params: Vec<Vec<f64>>,
    node_params: Vec<Vec<f64>>,
}

impl ModelSpec {
    /// Validates and constructs a spec.
    ///
    /// `edge_params` must hold L symmetric p×p matrices with zero diagonal,
    /// `node_params` K vectors of length p. The weight function must be
    /// `Identity` exactly when the family lives on ℝᵖ, and the exponential
    /// graphical model only accepts non-negative coefficients.
    pub fn new(
        family: Family,
        p: usize,
        edge_params: Vec<DMatrix<f64>>,
        node_params: Vec<DVector<f64>>,
        weight_fn: WeightFn,
    ) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidSpec(format!("p = {p} too small, need p >= 2")));
        }
        if edge_params.len() != family.interaction_count() {
            return Err(Error::InvalidSpec(format!(
                "family {:?} needs L = {} edge matrices, got {}",
                family,
                family.interaction_count(),
                edge_params.len()
            )));
        }
        if node_params.len() != family.node_stat_count() {
            return Err(Error::InvalidSpec(format!(
                "family {:?} needs K = {} node vectors, got {}",
                family,
                family.node_stat_count(),
                node_params.len()
            )));
        }
        for (l, m) in edge_params.iter().enumerate() {
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::InvalidSpec(format!(
                    "edge matrix {l} has shape {}x{}, expected {p}x{p}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            for i in 0..p {
                if m[(i, i)] != 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "edge matrix {l} has non-zero diagonal at {i}"
                    )));
                }
                for j in 0..p {
                    let v = m[(i, j)];
                    if !v.is_finite() {
                        return Err(Error::InvalidSpec(format!(
                            "edge matrix {l} has non-finite entry at ({i},{j})"
                        )));
                    }
                    if v != m[(j, i)] {
                        return Err(Error::InvalidSpec(format!(
                            "edge matrix {l} is not symmetric at ({i},{j})"
                        )));
                    }
                }
            }
        }
        for (k, v) in node_params.iter().enumerate() {
            if v.len() != p {
                return Err(Error::InvalidSpec(format!(
                    "node vector {k} has length {}, expected {p}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidSpec(format!("node vector {k} has non-finite entry")));
            }
        }
        match family.domain() {
            Domain::Reals => {
                if weight_fn != WeightFn::Identity {
                    return Err(Error::InvalidSpec(
                        "weight function must be identity on real-valued domains".into(),
                    ));
                }
            }
            Domain::NonNegReals => {
                if weight_fn == WeightFn::Identity {
                    return Err(Error::InvalidSpec(
                        "non-negative domains need a non-identity weight function".into(),
                    ));
                }
            }
        }
        if family == Family::ExponentialGm {
            let neg_edge = edge_params[0].iter().any(|&v| v < 0.0);
            let neg_node = node_params[0].iter().any(|&v| v < 0.0);
            if neg_edge || neg_node {
                return Err(Error::InvalidSpec(
                    "exponential graphical model requires non-negative coefficients".into(),
                ));
            }
        }
        Ok(ModelSpec { family, p, edge_params, node_params, weight_fn })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// L, the number of interaction statistics per edge.
    pub fn l_count(&self) -> usize {
        self.family.interaction_count()
    }

    /// K, the number of node statistics per vertex.
    pub fn k_count(&self) -> usize {
        self.family.node_stat_count()
    }

    pub fn domain(&self) -> Domain {
        self.family.domain()
    }

    pub fn weight_fn(&self) -> WeightFn {
        self.weight_fn
    }

    pub fn edge_param(&self, l: usize) -> &DMatrix<f64> {
        &self.edge_params[l]
    }

    pub fn node_param(&self, k: usize) -> &DVector<f64> {
        &self.node_params[k]
    }

    /// The stored true interaction coefficients (θ*_ab^(1), …, θ*_ab^(L)).
    /// Zero vector for non-adjacent pairs.
    pub fn true_edge_value(&self, a: usize, b: usize) -> Result<Vec<f64>> {
        check_edge(self.p, a, b)?;
        Ok(self.edge_params.iter().map(|m| m[(a, b)]).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = ModelSpecJson {
            family: self.family,
            p: self.p,
            weight_fn: self.weight_fn,
            edge_params: self
                .edge_params
                .iter()
                .map(|m| {
                    (0..self.p).flat_map(|i| (0..self.p).map(move |j| m[(i, j)])).collect()
                })
                .collect(),
            node_params: self.node_params.iter().map(|v| v.iter().copied().collect()).collect(),
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: ModelSpecJson = serde_json::from_str(text)?;
        let p = repr.p;
        let edge_params = repr
            .edge_params
            .into_iter()
            .map(|flat| {
                if flat.len() != p * p {
                    return Err(Error::InvalidSpec(format!(
                        "edge matrix array has length {}, expected {}",
                        flat.len(),
                        p * p
                    )));
                }
                Ok(DMatrix::from_row_slice(p, p, &flat))
            })
            .collect::<Result<Vec<_>>>()?;
        let node_params = repr
            .node_params
            .into_iter()
            .map(|v| DVector::from_vec(v))
            .collect::<Vec<_>>();
        ModelSpec::new(repr.family, p, edge_params, node_params, repr.weight_fn)
    }
}

fn check_edge(p: usize, a: usize, b: usize) -> Result<()> {
    if a >= b || b >= p {
        return Err(Error::InvalidEdge { a, b, p });
    }
    Ok(())
}

/// Semantic role of one coordinate of the edge-conditional parameter θ^{ab}.
///
/// Node indices are 0-based throughout the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    /// Node statistic t_a^{(k)}(x_a).
    NodeA { k: usize },
    /// Node statistic t_b^{(k)}(x_b).
    NodeB { k: usize },
    /// Cross interaction t_{ac}^{(l)}(x_a, x_c), c ∉ {a, b}.
    CrossA { c: usize, l: usize },
    /// Cross interaction t_{bc}^{(l)}(x_b, x_c), c ∉ {a, b}.
    CrossB { c: usize, l: usize },
    /// Target interaction t_{ab}^{(l)}(x_a, x_b).
    Target { l: usize },
}

/// Coordinate map of the edge-conditional system for one edge (a, b).
///
/// The coordinate ordering is fixed and part of the external contract:
/// node statistics of `a` (k ascending), node statistics of `b`, cross
/// interactions of `a` by ascending third node `c` (l inner), cross
/// interactions of `b` likewise, and the L target coordinates last.
/// Dimension is `2K + 2(p−2)L + L`, which reduces to `2K + 2p − 3` when
/// L = 1.
#[derive(Clone, Debug)]
pub struct EdgeIndexMap {
    a: usize,
    b: usize,
    p: usize,
    l_count: usize,
    k_count: usize,
    slots: Vec<Slot>,
}

/// Builds the coordinate map for edge (a, b), 0-based, requiring a < b < p.
pub fn edge_index_map(spec: &ModelSpec, a: usize, b: usize) -> Result<EdgeIndexMap> {
    check_edge(spec.p(), a, b)?;
    let (p, l_count, k_count) = (spec.p(), spec.l_count(), spec.k_count());
    let mut slots = Vec::with_capacity(2 * k_count + 2 * (p - 2) * l_count + l_count);
    for k in 0..k_count {
        slots.push(Slot::NodeA { k });
    }
    for k in 0..k_count {
        slots.push(Slot::NodeB { k });
    }
    for c in (0..p).filter(|&c| c != a && c != b) {
        for l in 0..l_count {
            slots.push(Slot::CrossA { c, l });
        }
    }
    for c in (0..p).filter(|&c| c != a && c != b) {
        for l in 0..l_count {
            slots.push(Slot::CrossB { c, l });
        }
    }
    for l in 0..l_count {
        slots.push(Slot::Target { l });
    }
    Ok(EdgeIndexMap { a, b, p, l_count, k_count, slots })
}

impl EdgeIndexMap {
    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn edge(&self) -> (usize, usize) {
        (self.a, self.b)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn l_count(&self) -> usize {
        self.l_count
    }

    pub fn k_count(&self) -> usize {
        self.k_count
    }

    /// s′, the length of θ^{ab}.
    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Positions of the L target coordinates (the trailing block).
    pub fn target_indices(&self) -> Vec<usize> {
        let d = self.dim();
        (d - self.l_count..d).collect()
    }

    /// Position of the target coordinate for interaction statistic `l`.
    pub fn target_index(&self, l: usize) -> usize {
        self.dim() - self.l_count + l
    }

    /// Coordinates whose statistic involves x_a (support of φ₁).
    pub fn support_a(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Slot::NodeA { .. } | Slot::CrossA { .. } | Slot::Target { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Coordinates whose statistic involves x_b (support of φ₂).
    pub fn support_b(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Slot::NodeB { .. } | Slot::CrossB { .. } | Slot::Target { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// The E(a,c) and E(b,c) index blocks (size L each), in slot order.
    /// These are the grouped coordinates of the general-L penalty; for
    /// L = 1 they degenerate to singletons.
    pub fn cross_groups(&self) -> Vec<Vec<usize>> {
        let k2 = 2 * self.k_count;
        let n_blocks = 2 * (self.p - 2);
        (0..n_blocks)
            .map(|g| (k2 + g * self.l_count..k2 + (g + 1) * self.l_count).collect())
            .collect()
    }

    /// Coordinates outside every cross group: the 2K node statistics and
    /// the L target coordinates (the θ^{ab,-group} block).
    pub fn ungrouped(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..2 * self.k_count).collect();
        v.extend(self.target_indices());
        v
    }

    /// The slot index of `slot`, if present.
    pub fn position_of(&self, slot: Slot) -> Option<usize> {
        self.slots.iter().position(|&s| s == slot)
    }
}

/// φ₁, φ₂ and g evaluated at one sample, in map coordinate order.
///
/// When the spec carries a non-identity weight function the stored vectors
/// are the tilde versions: φ̃_j = ℓ^{1/2}(x_·)·φ_j and g is g_ℓ.
#[derive(Clone, Debug)]
pub struct ScoreComponents {
    pub phi1: DVector<f64>,
    pub phi2: DVector<f64>,
    pub g: DVector<f64>,
}

// ---------------------------------------------------------------------------
// Sufficient statistics and their partial derivatives, per family.
//
// Node statistics t^{(k)}(x); edge statistics t^{(l)}(u, v) are symmetric in
// (u, v) for every implemented family, with derivatives taken in the first
// argument. `h(x) ≡ 0` for all families here, so the linear term of the
// scoring rule reduces to the Laplacian of φ (or its ℓ-weighted analogue).
// ---------------------------------------------------------------------------

pub(crate) fn node_stat(family: Family, k: usize, x: f64) -> f64 {
    match (family, k) {
        (Family::Gaussian | Family::NonNegGaussian, 0) => -0.5 * x * x,
        (Family::ExponentialGm, 0) => -x,
        (Family::NormalConditionalsL1 | Family::NormalConditionalsL2, 0) => x,
        (Family::NormalConditionalsL1 | Family::NormalConditionalsL2, 1) => x * x,
        _ => unreachable!("node statistic index out of range"),
    }
}

pub(crate) fn node_stat_d1(family: Family, k: usize, x: f64) -> f64 {
    match (family, k) {
        (Family::Gaussian | Family::NonNegGaussian, 0) => -x,
        (Family::ExponentialGm, 0) => -1.0,
        (Family::NormalConditionalsL1 | Family::NormalConditionalsL2, 0) => 1.0,
        (Family::NormalConditionalsL1 | Family::NormalConditionalsL2, 1) => 2.0 * x,
        _ => unreachable!("node statistic index out of range"),
    }
}

pub(crate) fn node_stat_d2(family: Family, k: usize) -> f64 {
    match (family, k) {
        (Family::Gaussian | Family::NonNegGaussian, 0) => -1.0,
        (Family::ExponentialGm, 0) => 0.0,
        (Family::NormalConditionalsL1 | Family::NormalConditionalsL2, 0) => 0.0,
        (Family::NormalConditionalsL1 | Family::NormalConditionalsL2, 1) => 2.0,
        _ => unreachable!("node statistic index out of range"),
    }
}

pub(crate) fn edge_stat(family: Family, l: usize, u: f64, v: f64) -> f64 {
    match (family, l) {
        (Family::Gaussian | Family::NonNegGaussian | Family::ExponentialGm, 0) => -u * v,
        (Family::NormalConditionalsL1, 0) => u * u * v * v,
        (Family::NormalConditionalsL2, 0) => u * v,
        (Family::NormalConditionalsL2, 1) => u * u * v * v,
        _ => unreachable!("edge statistic index out of range"),
    }
}

/// ∂t^{(l)}(u, v)/∂u.
pub(crate) fn edge_stat_d1(family: Family, l: usize, u: f64, v: f64) -> f64 {
    match (family, l) {
        (Family::Gaussian | Family::NonNegGaussian | Family::ExponentialGm, 0) => -v,
        (Family::NormalConditionalsL1, 0) => 2.0 * u * v * v,
        (Family::NormalConditionalsL2, 0) => v,
        (Family::NormalConditionalsL2, 1) => 2.0 * u * v * v,
        _ => unreachable!("edge statistic index out of range"),
    }
}

/// ∂²t^{(l)}(u, v)/∂u².
pub(crate) fn edge_stat_d11(family: Family, l: usize, _u: f64, v: f64) -> f64 {
    match (family, l) {
        (Family::Gaussian | Family::NonNegGaussian | Family::ExponentialGm, 0) => 0.0,
        (Family::NormalConditionalsL1, 0) => 2.0 * v * v,
        (Family::NormalConditionalsL2, 0) => 0.0,
        (Family::NormalConditionalsL2, 1) => 2.0 * v * v,
        _ => unreachable!("edge statistic index out of range"),
    }
}

/// Raw ∂φ_j/∂x_a for one slot (no ℓ-weighting).
pub(crate) fn slot_phi1_raw(family: Family, map: &EdgeIndexMap, slot: Slot, x: &[f64]) -> f64 {
    let (a, b) = (map.a, map.b);
    match slot {
        Slot::NodeA { k } => node_stat_d1(family, k, x[a]),
        Slot::CrossA { c, l } => edge_stat_d1(family, l, x[a], x[c]),
        Slot::Target { l } => edge_stat_d1(family, l, x[a], x[b]),
        _ => 0.0,
    }
}

/// Raw ∂φ_j/∂x_b for one slot.
pub(crate) fn slot_phi2_raw(family: Family, map: &EdgeIndexMap, slot: Slot, x: &[f64]) -> f64 {
    let (a, b) = (map.a, map.b);
    match slot {
        Slot::NodeB { k } => node_stat_d1(family, k, x[b]),
        Slot::CrossB { c, l } => edge_stat_d1(family, l, x[b], x[c]),
        Slot::Target { l } => edge_stat_d1(family, l, x[b], x[a]),
        _ => 0.0,
    }
}

/// ∂²φ_j/∂x_a² for one slot.
fn slot_phi11(family: Family, map: &EdgeIndexMap, slot: Slot, x: &[f64]) -> f64 {
    let (a, b) = (map.a, map.b);
    match slot {
        Slot::NodeA { k } => node_stat_d2(family, k),
        Slot::CrossA { c, l } => edge_stat_d11(family, l, x[a], x[c]),
        Slot::Target { l } => edge_stat_d11(family, l, x[a], x[b]),
        _ => 0.0,
    }
}

/// ∂²φ_j/∂x_b² for one slot.
fn slot_phi22(family: Family, map: &EdgeIndexMap, slot: Slot, x: &[f64]) -> f64 {
    let (a, b) = (map.a, map.b);
    match slot {
        Slot::NodeB { k } => node_stat_d2(family, k),
        Slot::CrossB { c, l } => edge_stat_d11(family, l, x[b], x[c]),
        Slot::Target { l } => edge_stat_d11(family, l, x[b], x[a]),
        _ => 0.0,
    }
}

/// g_j for one slot: Δ_ab φ_j for identity weights, otherwise
/// ℓ_a·φ₁₁ + ℓ_b·φ₂₂ + ℓ′_a·φ₁ + ℓ′_b·φ₂ (with raw φ derivatives).
pub(crate) fn slot_g(spec: &ModelSpec, map: &EdgeIndexMap, slot: Slot, x: &[f64]) -> f64 {
    let fam = spec.family();
    let d11 = slot_phi11(fam, map, slot, x);
    let d22 = slot_phi22(fam, map, slot, x);
    match spec.weight_fn() {
        WeightFn::Identity => d11 + d22,
        w => {
            let (xa, xb) = (x[map.a], x[map.b]);
            w.eval(xa) * d11
                + w.eval(xb) * d22
                + w.deriv(xa) * slot_phi1_raw(fam, map, slot, x)
                + w.deriv(xb) * slot_phi2_raw(fam, map, slot, x)
        }
    }
}

pub(crate) fn check_sample_domain(spec: &ModelSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.p() {
        return Err(Error::Dimension(format!(
            "sample has {} coordinates, expected p = {}",
            x.len(),
            spec.p()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("sample has a non-finite coordinate".into()));
    }
    if spec.domain() == Domain::NonNegReals {
        if let Some(j) = x.iter().position(|&v| v < 0.0) {
            return Err(Error::Domain(format!(
                "negative coordinate x[{j}] = {} on a non-negative domain",
                x[j]
            )));
        }
    }
    Ok(())
}

/// The sufficient-statistic vector φ(x) in map order (test and diagnostic
/// aid; the estimators only consume derivatives).
pub fn statistic_vector(spec: &ModelSpec, x: &[f64], map: &EdgeIndexMap) -> Result<DVector<f64>> {
    check_sample_domain(spec, x)?;
    let fam = spec.family();
    let (a, b) = (map.a, map.b);
    let vals = map
        .slots
        .iter()
        .map(|&slot| match slot {
            Slot::NodeA { k } => node_stat(fam, k, x[a]),
            Slot::NodeB { k } => node_stat(fam, k, x[b]),
            Slot::CrossA { c, l } => edge_stat(fam, l, x[a], x[c]),
            Slot::CrossB { c, l } => edge_stat(fam, l, x[b], x[c]),
            Slot::Target { l } => edge_stat(fam, l, x[a], x[b]),
        })
        .collect::<Vec<_>>();
    Ok(DVector::from_vec(vals))
}

/// Evaluates φ₁ (or φ̃₁), φ₂ (or φ̃₂) and g (or g_ℓ) at one sample.
pub fn score_components(spec: &ModelSpec, x: &[f64], map: &EdgeIndexMap) -> Result<ScoreComponents> {
    check_sample_domain(spec, x)?;
    let fam = spec.family();
    let dim = map.dim();
    let mut phi1 = DVector::zeros(dim);
    let mut phi2 = DVector::zeros(dim);
    let mut g = DVector::zeros(dim);
    for (j, &slot) in map.slots.iter().enumerate() {
        phi1[j] = slot_phi1_raw(fam, map, slot, x);
        phi2[j] = slot_phi2_raw(fam, map, slot, x);
        g[j] = slot_g(spec, map, slot, x);
    }
    if spec.weight_fn() != WeightFn::Identity {
        let wa = spec.weight_fn().eval(x[map.a]).sqrt();
        let wb = spec.weight_fn().eval(x[map.b]).sqrt();
        phi1 *= wa;
        phi2 *= wb;
    }
    Ok(ScoreComponents { phi1, phi2, g })
}

/// Free-function form of [`ModelSpec::true_edge_value`].
pub fn true_edge_value(spec: &ModelSpec, a: usize, b: usize) -> Result<Vec<f64>> {
    spec.true_edge_value(a, b)
}
