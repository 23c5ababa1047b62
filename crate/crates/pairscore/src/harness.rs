//! Configuration-driven experiment runner: coverage and Type-I-error
//! studies over seeded replications, assumption diagnostics, the all-pairs
//! dataset analysis workflow, and plot-ready histogram output.
//!
//! Reports are deterministic functions of (config, seed): replication seeds
//! are derived as hash(master_seed, replication_index) so individual
//! replications can be reproduced in isolation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{confidence_interval, debiased_edge, estimate_edge, p_value, EdgeEstimate};
use crate::inference::{chi2_simultaneous, simultaneous_test, NullSpec, TestOptions};
use crate::models::{Family, ModelSpec};
use crate::samplers::{knn_graph_spec, sample_for, GibbsConfig};
use crate::score_engine::{assemble, DataMatrix};
use crate::seeding::mix_seed;
use crate::solvers::refit;

/// Replication seed derivation, exposed so partial re-runs can reproduce a
/// single replication.
pub fn replication_seed(master_seed: u64, replication: u64) -> u64 {
    mix_seed(master_seed, replication)
}

/// Banded nearest-neighbor graph parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GraphConfig {
    pub k: usize,
    pub band_weights: Vec<Vec<f64>>,
    pub node_values: Vec<f64>,
}

impl GraphConfig {
    /// The simulation-study defaults per family.
    pub fn default_for(family: Family) -> GraphConfig {
        match family {
            Family::Gaussian => GraphConfig {
                k: 4,
                band_weights: vec![vec![0.5, 0.3]],
                node_values: vec![1.0],
            },
            Family::NonNegGaussian => GraphConfig {
                k: 4,
                band_weights: vec![vec![0.3, 0.1]],
                node_values: vec![1.0],
            },
            Family::NormalConditionalsL1 => GraphConfig {
                k: 4,
                band_weights: vec![vec![-0.2, -0.2]],
                node_values: vec![0.4, -2.0],
            },
            Family::NormalConditionalsL2 => GraphConfig {
                k: 4,
                band_weights: vec![vec![0.3, 0.2], vec![-0.2, -0.1]],
                node_values: vec![0.4, -2.0],
            },
            Family::ExponentialGm => GraphConfig {
                k: 2,
                band_weights: vec![vec![0.3]],
                node_values: vec![2.0],
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    ThreeStep,
    Debiased,
    /// Forces the group-penalty path (the default whenever L > 1).
    GroupL,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Bootstrap,
    Chi2,
    /// Bootstrap and χ² evaluated from one shared estimation pass per
    /// replication.
    Both,
}

fn default_target_edges() -> Vec<(usize, usize)> {
    vec![(0, 1)]
}
fn default_alpha() -> f64 {
    0.05
}
fn default_b_boot() -> usize {
    2000
}
fn default_confidence() -> f64 {
    0.95
}
fn default_method() -> MethodChoice {
    MethodChoice::ThreeStep
}
fn default_test_kind() -> TestKind {
    TestKind::Bootstrap
}

/// One experiment scenario. JSON-serializable; CLI flags override single
/// fields. λ constants are the c in λ = c·√(log s′/n); absent means the
/// domain default (0.5 real / 1.0 non-negative).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub family: Family,
    pub p: usize,
    pub n: usize,
    pub replications: usize,
    #[serde(default)]
    pub graph: Option<GraphConfig>,
    #[serde(default = "default_target_edges")]
    pub target_edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub test_node: usize,
    #[serde(default = "default_method")]
    pub method: MethodChoice,
    #[serde(default = "default_test_kind")]
    pub test_kind: TestKind,
    #[serde(default)]
    pub lambda1_c: Option<f64>,
    #[serde(default)]
    pub lambda2_c: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_b_boot")]
    pub b_boot: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gibbs: Option<GibbsConfig>,
}

impl ExperimentConfig {
    pub fn new(scenario: &str, family: Family, p: usize, n: usize, replications: usize) -> Self {
        ExperimentConfig {
            scenario: scenario.to_string(),
            family,
            p,
            n,
            replications,
            graph: None,
            target_edges: default_target_edges(),
            test_node: 0,
            method: default_method(),
            test_kind: default_test_kind(),
            lambda1_c: None,
            lambda2_c: None,
            alpha: default_alpha(),
            b_boot: default_b_boot(),
            confidence: default_confidence(),
            seed: 0,
            gibbs: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build_spec(&self) -> Result<ModelSpec> {
        let graph = self.graph.clone().unwrap_or_else(|| GraphConfig::default_for(self.family));
        let bands: Vec<&[f64]> = graph.band_weights.iter().map(|w| w.as_slice()).collect();
        knn_graph_spec(self.family, self.p, graph.k, &bands, &graph.node_values)
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        for &(a, b) in &self.target_edges {
            if a >= b || b >= self.p {
                return Err(Error::InvalidEdge { a, b, p: self.p });
            }
        }
        if self.test_node >= self.p {
            return Err(Error::Config(format!(
                "test_node {} out of range for p = {}",
                self.test_node, self.p
            )));
        }
        Ok(())
    }

    /// Resolved λ for a given sample size.
    pub fn lambdas(&self, n: usize) -> (f64, f64) {
        let s_prime =
            2 * self.family.node_stat_count() + (2 * (self.p - 2) + 1) * self.family.interaction_count();
        let rate = ((s_prime as f64).ln() / n as f64).sqrt();
        let default_c = match self.family.domain() {
            crate::models::Domain::Reals => crate::estimators::LAMBDA_CONST_REALS,
            crate::models::Domain::NonNegReals => crate::estimators::LAMBDA_CONST_NONNEG,
        };
        (self.lambda1_c.unwrap_or(default_c) * rate, self.lambda2_c.unwrap_or(default_c) * rate)
    }

    fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        format!("{:016x}", fnv1a(text.as_bytes()))
    }

    /// Named presets matching the simulation tables, plus `-desk` variants
    /// with fewer replications for quick runs.
    pub fn preset(name: &str) -> Result<ExperimentConfig> {
        let mut cfg = match name.trim_end_matches("-desk") {
            "table1-gaussian-coverage" => {
                let mut c =
                    ExperimentConfig::new("table1-gaussian-coverage", Family::Gaussian, 50, 300, 500);
                c.target_edges = vec![(0, 1), (0, 2), (0, 3), (0, 9)];
                c
            }
            "table3-nonneg-debiased" => {
                let mut c = ExperimentConfig::new(
                    "table3-nonneg-debiased",
                    Family::NonNegGaussian,
                    100,
                    150,
                    200,
                );
                c.method = MethodChoice::Debiased;
                c.target_edges = vec![(0, 1), (0, 2), (0, 3), (0, 9)];
                c
            }
            "table5-nc-coverage" => {
                let mut c = ExperimentConfig::new(
                    "table5-nc-coverage",
                    Family::NormalConditionalsL1,
                    100,
                    500,
                    200,
                );
                c.target_edges = vec![(0, 1), (0, 2), (0, 3), (0, 9)];
                c
            }
            "table7-egm-coverage" => {
                let mut c = ExperimentConfig::new(
                    "table7-egm-coverage",
                    Family::ExponentialGm,
                    100,
                    1000,
                    200,
                );
                c.target_edges = vec![(0, 1), (0, 2), (0, 3), (0, 9)];
                c
            }
            "table8-gaussian-type1" => {
                ExperimentConfig::new("table8-gaussian-type1", Family::Gaussian, 50, 2000, 200)
            }
            "table8-nonneg-type1" => {
                ExperimentConfig::new("table8-nonneg-type1", Family::NonNegGaussian, 50, 2000, 200)
            }
            "table9-ncl2-bootstrap" => ExperimentConfig::new(
                "table9-ncl2-bootstrap",
                Family::NormalConditionalsL2,
                50,
                4000,
                150,
            ),
            "table9-ncl2-chi2" => {
                let mut c = ExperimentConfig::new(
                    "table9-ncl2-chi2",
                    Family::NormalConditionalsL2,
                    50,
                    4000,
                    150,
                );
                c.test_kind = TestKind::Chi2;
                c
            }
            "table2-nonneg-mrows" => {
                let mut c = ExperimentConfig::new(
                    "table2-nonneg-mrows",
                    Family::NonNegGaussian,
                    20,
                    50_000,
                    20,
                );
                // Ω = I: independent coordinates.
                c.graph = Some(GraphConfig {
                    k: 0,
                    band_weights: vec![vec![]],
                    node_values: vec![1.0],
                });
                c
            }
            "table4-nc-gamma" => ExperimentConfig::new(
                "table4-nc-gamma",
                Family::NormalConditionalsL1,
                20,
                50_000,
                10,
            ),
            "table6-egm-gamma" => {
                ExperimentConfig::new("table6-egm-gamma", Family::ExponentialGm, 20, 50_000, 10)
            }
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        if name.ends_with("-desk") {
            cfg.scenario = name.to_string();
            cfg.replications = (cfg.replications / 4).max(5);
        }
        Ok(cfg)
    }

    pub fn preset_names() -> Vec<&'static str> {
        vec![
            "table1-gaussian-coverage",
            "table3-nonneg-debiased",
            "table5-nc-coverage",
            "table7-egm-coverage",
            "table8-gaussian-type1",
            "table8-nonneg-type1",
            "table9-ncl2-bootstrap",
            "table9-ncl2-chi2",
            "table2-nonneg-mrows",
            "table4-nc-gamma",
            "table6-egm-gamma",
        ]
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// One replication's outcome; coverage runs fill the CI fields, Type-I
/// runs the test fields. Failed replications carry the error text.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub edge: Option<(usize, usize)>,
    #[serde(default)]
    pub estimate: Vec<f64>,
    #[serde(default)]
    pub ci_lower: Vec<f64>,
    #[serde(default)]
    pub ci_upper: Vec<f64>,
    #[serde(default)]
    pub truth: Vec<f64>,
    pub covered: Option<bool>,
    pub reject: Option<bool>,
    pub reject_chi2: Option<bool>,
    pub statistic: Option<f64>,
    pub critical_value: Option<f64>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    fn failed(replication: usize, seed: u64, edge: Option<(usize, usize)>, msg: String) -> Self {
        ReplicationRecord {
            replication,
            seed,
            edge,
            estimate: vec![],
            ci_lower: vec![],
            ci_upper: vec![],
            truth: vec![],
            covered: None,
            reject: None,
            reject_chi2: None,
            statistic: None,
            critical_value: None,
            error: Some(msg),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeAggregate {
    pub edge: (usize, usize),
    pub coverage_rate: f64,
    pub mean_ci_width: f64,
    pub covered: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub replications: usize,
    pub records: Vec<ReplicationRecord>,
    pub aggregates: Vec<EdgeAggregate>,
    pub rejection_rate: Option<f64>,
    pub rejection_rate_chi2: Option<f64>,
    pub failures: usize,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-replication records as CSV, one row per (replication, edge,
    /// statistic index).
    pub fn write_records_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "replication",
            "seed",
            "edge_a",
            "edge_b",
            "l",
            "estimate",
            "ci_lower",
            "ci_upper",
            "truth",
            "covered",
            "reject",
            "statistic",
            "critical_value",
            "error",
        ])?;
        for r in &self.records {
            let l_count = r.estimate.len().max(1);
            for l in 0..l_count {
                let get = |v: &Vec<f64>| v.get(l).map(|x| x.to_string()).unwrap_or_default();
                w.write_record([
                    r.replication.to_string(),
                    r.seed.to_string(),
                    r.edge.map(|e| e.0.to_string()).unwrap_or_default(),
                    r.edge.map(|e| e.1.to_string()).unwrap_or_default(),
                    l.to_string(),
                    get(&r.estimate),
                    get(&r.ci_lower),
                    get(&r.ci_upper),
                    get(&r.truth),
                    r.covered.map(|c| c.to_string()).unwrap_or_default(),
                    r.reject.map(|c| c.to_string()).unwrap_or_default(),
                    r.statistic.map(|s| s.to_string()).unwrap_or_default(),
                    r.critical_value.map(|s| s.to_string()).unwrap_or_default(),
                    r.error.clone().unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Coverage rate for one target edge (covered count / R).
    pub fn coverage_rate(&self, edge: (usize, usize)) -> Option<f64> {
        self.aggregates.iter().find(|a| a.edge == edge).map(|a| a.coverage_rate)
    }
}

fn estimate_for_method(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    data: &DataMatrix,
    edge: (usize, usize),
    lambda1: f64,
    lambda2: f64,
) -> Result<EdgeEstimate> {
    match cfg.method {
        MethodChoice::ThreeStep => estimate_edge(spec, data, edge.0, edge.1, lambda1, lambda2),
        MethodChoice::GroupL => crate::estimators::three_step_edge_group(
            spec, data, edge.0, edge.1, lambda1, lambda2,
        ),
        MethodChoice::Debiased => {
            let (half1, half2) = data.split_even_odd();
            debiased_edge(spec, &half1, &half2, edge.0, edge.1, lambda1, lambda2)
        }
    }
}

/// Coverage experiment: R seeded replications of sample → estimate → CI,
/// aggregated per target edge. Replication failures are recorded with
/// context and the run continues.
pub fn run_coverage(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let spec = cfg.build_spec()?;
    // For the sample-split method n is the per-half count.
    let draw_n = match cfg.method {
        MethodChoice::Debiased => 2 * cfg.n,
        _ => cfg.n,
    };
    let (lambda1, lambda2) = cfg.lambdas(cfg.n);

    let records: Vec<ReplicationRecord> = (0..cfg.replications)
        .into_par_iter()
        .flat_map_iter(|rep| {
            let seed = replication_seed(cfg.seed, rep as u64);
            let sampled = sample_for(&spec, draw_n, seed, cfg.gibbs.as_ref());
            cfg.target_edges
                .iter()
                .map(|&edge| {
                    let outcome = sampled.as_ref().map_err(|e| e.to_string()).and_then(|data| {
                        let est = estimate_for_method(cfg, &spec, data, edge, lambda1, lambda2)
                            .map_err(|e| e.to_string())?;
                        let ci =
                            confidence_interval(&est, cfg.confidence).map_err(|e| e.to_string())?;
                        let truth = spec.true_edge_value(edge.0, edge.1).map_err(|e| e.to_string())?;
                        Ok((est, ci, truth))
                    });
                    match outcome {
                        Ok((est, ci, truth)) => ReplicationRecord {
                            replication: rep,
                            seed,
                            edge: Some(edge),
                            estimate: est.theta_tilde.clone(),
                            covered: Some(ci.covers(&truth)),
                            ci_lower: ci.lower,
                            ci_upper: ci.upper,
                            truth,
                            reject: None,
                            reject_chi2: None,
                            statistic: None,
                            critical_value: None,
                            error: None,
                        },
                        Err(msg) => ReplicationRecord::failed(rep, seed, Some(edge), msg),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let aggregates = cfg
        .target_edges
        .iter()
        .map(|&edge| {
            let of_edge: Vec<&ReplicationRecord> =
                records.iter().filter(|r| r.edge == Some(edge)).collect();
            let covered = of_edge.iter().filter(|r| r.covered == Some(true)).count();
            let failures = of_edge.iter().filter(|r| r.error.is_some()).count();
            let widths: Vec<f64> = of_edge
                .iter()
                .filter(|r| r.error.is_none() && !r.ci_upper.is_empty())
                .map(|r| r.ci_upper[0] - r.ci_lower[0])
                .collect();
            EdgeAggregate {
                edge,
                coverage_rate: covered as f64 / cfg.replications as f64,
                mean_ci_width: if widths.is_empty() {
                    0.0
                } else {
                    widths.iter().sum::<f64>() / widths.len() as f64
                },
                covered,
                failures,
            }
        })
        .collect::<Vec<_>>();

    let failures = records.iter().filter(|r| r.error.is_some()).count();
    Ok(ExperimentReport {
        scenario: cfg.scenario.clone(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        replications: cfg.replications,
        records,
        aggregates,
        rejection_rate: None,
        rejection_rate_chi2: None,
        failures,
    })
}

/// Type-I-error experiment: R replications of the simultaneous test (or
/// its χ² variant) at θ̆ = truth; aggregates the rejection rate.
pub fn run_type1(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let spec = cfg.build_spec()?;
    let null = NullSpec::from_spec_truth(&spec, cfg.test_node)?;
    let (lambda1, lambda2) = cfg.lambdas(cfg.n);

    let records: Vec<ReplicationRecord> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(cfg.seed, rep as u64);
            let opts = TestOptions {
                alpha: cfg.alpha,
                b_draws: cfg.b_boot,
                seed,
                tail: crate::inference::Tail::TwoSided,
                lambda1: Some(lambda1),
                lambda2: Some(lambda2),
            };
            let outcome = sample_for(&spec, cfg.n, seed, cfg.gibbs.as_ref())
                .map_err(|e| e.to_string())
                .and_then(|data| match cfg.test_kind {
                    TestKind::Bootstrap => {
                        simultaneous_test(&spec, &data, cfg.test_node, &null, &opts)
                            .map(|r| (Some(r.reject), None, r.statistic, r.critical_value))
                            .map_err(|e| e.to_string())
                    }
                    TestKind::Chi2 => chi2_simultaneous(
                        &spec,
                        &data,
                        cfg.test_node,
                        &null,
                        cfg.alpha,
                        Some(lambda1),
                        Some(lambda2),
                    )
                    .map(|r| (Some(r.reject), None, r.statistic, r.critical_value))
                    .map_err(|e| e.to_string()),
                    TestKind::Both => {
                        crate::inference::simultaneous_tests_both(
                            &spec,
                            &data,
                            cfg.test_node,
                            &null,
                            &opts,
                        )
                        .map(|(boot, chi)| {
                            (Some(boot.reject), Some(chi.reject), boot.statistic, boot.critical_value)
                        })
                        .map_err(|e| e.to_string())
                    }
                });
            match outcome {
                Ok((reject, reject_chi2, stat, crit)) => ReplicationRecord {
                    replication: rep,
                    seed,
                    edge: None,
                    estimate: vec![],
                    ci_lower: vec![],
                    ci_upper: vec![],
                    truth: vec![],
                    covered: None,
                    reject,
                    reject_chi2,
                    statistic: Some(stat),
                    critical_value: Some(crit),
                    error: None,
                },
                Err(msg) => ReplicationRecord::failed(rep, seed, None, msg),
            }
        })
        .collect();

    let rejections = records.iter().filter(|r| r.reject == Some(true)).count();
    let rejections_chi2 = records.iter().filter(|r| r.reject_chi2 == Some(true)).count();
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    Ok(ExperimentReport {
        scenario: cfg.scenario.clone(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        replications: cfg.replications,
        records,
        aggregates: vec![],
        rejection_rate: Some(rejections as f64 / cfg.replications as f64),
        rejection_rate_chi2: match cfg.test_kind {
            TestKind::Both => Some(rejections_chi2 as f64 / cfg.replications as f64),
            _ => None,
        },
        failures,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub scenario: String,
    pub config_hash: String,
    pub family: Family,
    pub kind: String,
    pub replications: usize,
    /// One value per replication: the row ℓ1 norm (Hessian-inverse
    /// diagnostic) or the mean of the small components (γ̂ diagnostic).
    pub per_replication: Vec<f64>,
    pub mean_row_l1: Option<f64>,
    pub max_row_l1: Option<f64>,
    pub avg_small_mean: Option<f64>,
    pub avg_small_max: Option<f64>,
    pub excluded_components: usize,
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Number of structurally large components of the unpenalized nuisance
/// regression documented for the diagnostic families.
fn large_component_count(family: Family) -> Result<usize> {
    match family {
        Family::NormalConditionalsL1 => Ok(5),
        Family::ExponentialGm => Ok(4),
        f => Err(Error::Config(format!("no γ̂ diagnostic defined for family {f:?}"))),
    }
}

/// Assumption diagnostics for edge (0, 1):
/// for the non-negative Gaussian, the ℓ1 norm of the target row of the
/// exact inverse of Γ̂; for the normal-conditionals and exponential
/// families, the mean/max absolute value of the unpenalized γ̂ after
/// dropping its documented large components.
pub fn run_diagnostics(cfg: &ExperimentConfig) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let spec = cfg.build_spec()?;
    let edge = *cfg.target_edges.first().unwrap_or(&(0, 1));

    match cfg.family {
        Family::NonNegGaussian => {
            let norms: Vec<f64> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| {
                    let seed = replication_seed(cfg.seed, rep as u64);
                    let data = sample_for(&spec, cfg.n, seed, cfg.gibbs.as_ref())?;
                    let sys = assemble(&spec, &data, edge.0, edge.1)?;
                    let t = sys.map().target_index(0);
                    let inv = sys
                        .gamma_hat()
                        .clone()
                        .try_inverse()
                        .ok_or_else(|| Error::Singular("Γ̂ not invertible".into()))?;
                    Ok(inv.row(t).iter().map(|v| v.abs()).sum::<f64>())
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            let max = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(DiagnosticsReport {
                scenario: cfg.scenario.clone(),
                config_hash: cfg.config_hash(),
                family: cfg.family,
                kind: "m_row_l1".into(),
                replications: cfg.replications,
                per_replication: norms,
                mean_row_l1: Some(mean),
                max_row_l1: Some(max),
                avg_small_mean: None,
                avg_small_max: None,
                excluded_components: 0,
            })
        }
        Family::NormalConditionalsL1 | Family::ExponentialGm => {
            let n_large = large_component_count(cfg.family)?;
            let stats: Vec<(f64, f64)> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| {
                    let seed = replication_seed(cfg.seed, rep as u64);
                    let data = sample_for(&spec, cfg.n, seed, cfg.gibbs.as_ref())?;
                    let sys = assemble(&spec, &data, edge.0, edge.1)?;
                    let t = sys.map().target_index(0);
                    let (a2, b2) = sys.nuisance_regression_system(t)?;
                    let full: Vec<usize> = (0..a2.nrows()).collect();
                    let gamma = refit(&a2, &(-&b2), &full)?;
                    let mut mags: Vec<f64> = gamma.iter().map(|v| v.abs()).collect();
                    mags.sort_by(|x, y| y.partial_cmp(x).unwrap());
                    let small = &mags[n_large.min(mags.len())..];
                    let mean = small.iter().sum::<f64>() / small.len().max(1) as f64;
                    let max = small.iter().cloned().fold(0.0f64, f64::max);
                    Ok((mean, max))
                })
                .collect::<Result<Vec<_>>>()?;
            let r = stats.len() as f64;
            Ok(DiagnosticsReport {
                scenario: cfg.scenario.clone(),
                config_hash: cfg.config_hash(),
                family: cfg.family,
                kind: "gamma_small_components".into(),
                replications: cfg.replications,
                per_replication: stats.iter().map(|s| s.0).collect(),
                mean_row_l1: None,
                max_row_l1: None,
                avg_small_mean: Some(stats.iter().map(|s| s.0).sum::<f64>() / r),
                avg_small_max: Some(stats.iter().map(|s| s.1).sum::<f64>() / r),
                excluded_components: n_large,
            })
        }
        f => Err(Error::Config(format!("no diagnostics defined for family {f:?}"))),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeFinding {
    pub a: usize,
    pub b: usize,
    pub theta: f64,
    pub v_hat: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetReport {
    pub n: usize,
    pub p: usize,
    pub family: Family,
    pub threshold: f64,
    pub edges: Vec<EdgeFinding>,
    pub adjacency: Vec<(usize, usize)>,
    pub degrees: Vec<usize>,
}

impl DatasetReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-edge estimate table (all pairs) as CSV.
    pub fn write_edges_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["a", "b", "theta", "v_hat", "p_value", "significant"])?;
        for e in &self.edges {
            w.write_record([
                e.a.to_string(),
                e.b.to_string(),
                e.theta.to_string(),
                e.v_hat.to_string(),
                e.p_value.to_string(),
                e.significant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// The thresholded edge list as CSV.
    pub fn write_adjacency_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["a", "b"])?;
        for &(a, b) in &self.adjacency {
            w.write_record([a.to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// All-pairs analysis of a dataset: three-step estimate and p-value for
/// every edge, keeping those with p-value strictly below the threshold.
/// No preprocessing is applied to the data.
pub fn analyze_dataset(
    data: &DataMatrix,
    family: Family,
    threshold: f64,
    lambda1_c: Option<f64>,
    lambda2_c: Option<f64>,
) -> Result<DatasetReport> {
    if family.interaction_count() != 1 {
        return Err(Error::Config("dataset analysis is defined for L = 1 families".into()));
    }
    let p = data.p();
    if p < 2 {
        return Err(Error::Config("need at least two variables".into()));
    }
    let spec = shell_spec(family, p)?;
    let s_prime = 2 * family.node_stat_count() + 2 * p - 3;
    let rate = ((s_prime as f64).ln() / data.n() as f64).sqrt();
    let default_c = match family.domain() {
        crate::models::Domain::Reals => crate::estimators::LAMBDA_CONST_REALS,
        crate::models::Domain::NonNegReals => crate::estimators::LAMBDA_CONST_NONNEG,
    };
    let l1 = lambda1_c.unwrap_or(default_c) * rate;
    let l2 = lambda2_c.unwrap_or(default_c) * rate;

    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| ((a + 1)..p).map(move |b| (a, b))).collect();
    let edges: Vec<EdgeFinding> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let est = estimate_edge(&spec, data, a, b, l1, l2)?;
            let pv = p_value(&est, 0.0)?;
            Ok(EdgeFinding {
                a,
                b,
                theta: est.theta_tilde[0],
                v_hat: est.v_hat[0][0],
                p_value: pv,
                significant: pv < threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let adjacency: Vec<(usize, usize)> =
        edges.iter().filter(|e| e.significant).map(|e| (e.a, e.b)).collect();
    let mut degrees = vec![0usize; p];
    for &(a, b) in &adjacency {
        degrees[a] += 1;
        degrees[b] += 1;
    }
    Ok(DatasetReport { n: data.n(), p, family, threshold, edges, adjacency, degrees })
}

/// A parameter-free spec of the right shape for estimation on real data
/// (the stored parameters are only read for coverage bookkeeping).
pub fn shell_spec(family: Family, p: usize) -> Result<ModelSpec> {
    let l = family.interaction_count();
    let k = family.node_stat_count();
    ModelSpec::new(
        family,
        p,
        vec![nalgebra::DMatrix::zeros(p, p); l],
        vec![nalgebra::DVector::zeros(p); k],
        family.default_weight_fn(),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Bin counts over the estimate values; plot-ready.
pub fn emit_histogram(estimates: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::Config("bins must be >= 1".into()));
    }
    if estimates.is_empty() {
        return Err(Error::EmptyData("no estimates to bin".into()));
    }
    let lo = estimates.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = estimates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(vec![HistogramBin { lo, hi, count: estimates.len() }]);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in estimates {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count,
        })
        .collect())
}

pub fn write_histogram_csv(bins: &[HistogramBin], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lo", "hi", "count"])?;
    for b in bins {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
