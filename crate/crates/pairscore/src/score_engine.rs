//! Assembly of the empirical quadratic score system for one edge:
//! Γ̂ = E_n[Γ(xᵢ)] and ĝ = E_n[g(xᵢ)], plus the per-sample statistic rows
//! that the variance estimator and the multiplier bootstrap consume.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{
    check_sample_domain, slot_g, slot_phi1_raw, slot_phi2_raw, Domain, EdgeIndexMap, Family,
    ModelSpec, WeightFn,
};

/// An n×p sample matrix with a domain flag.
///
/// Rows are samples. Storage is row-major so per-sample statistic
/// evaluation reads contiguous memory.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    rows: Vec<f64>,
    domain: Domain,
}

impl DataMatrix {
    pub fn new(n: usize, p: usize, rows: Vec<f64>, domain: Domain) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::EmptyData(format!("data matrix has shape {n}x{p}")));
        }
        if rows.len() != n * p {
            return Err(Error::Dimension(format!(
                "data storage has {} entries, expected n*p = {}",
                rows.len(),
                n * p
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("data matrix has a non-finite entry".into()));
        }
        if domain == Domain::NonNegReals && rows.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain(
                "data matrix flagged non-negative has a negative entry".into(),
            ));
        }
        Ok(DataMatrix { n, p, rows, domain })
    }

    pub fn from_rows(rows: &[Vec<f64>], domain: Domain) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("ragged rows in data matrix".into()));
        }
        DataMatrix::new(n, p, rows.concat(), domain)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    /// Reads a headerless CSV of n rows × p numeric columns.
    pub fn from_csv_path(path: &std::path::Path, domain: Domain) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| {
                        Error::Config(format!("non-numeric CSV field {field:?} in {path:?}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::EmptyData(format!("{path:?} has no rows")));
        }
        DataMatrix::from_rows(&rows, domain)
    }

    /// Writes a headerless CSV.
    pub fn to_csv_path(&self, path: &std::path::Path) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for i in 0..self.n {
            let fields: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            writer.write_record(&fields)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Deterministic even/odd split by row index, in order. The first half
    /// gets the even rows (and the extra row when n is odd).
    pub fn split_even_odd(&self) -> (DataMatrix, DataMatrix) {
        let mut even = Vec::with_capacity(self.n.div_ceil(2) * self.p);
        let mut odd = Vec::with_capacity((self.n / 2) * self.p);
        for i in 0..self.n {
            let dst = if i % 2 == 0 { &mut even } else { &mut odd };
            dst.extend_from_slice(self.row(i));
        }
        let n_even = self.n.div_ceil(2);
        let n_odd = self.n / 2;
        (
            DataMatrix { n: n_even, p: self.p, rows: even, domain: self.domain },
            DataMatrix { n: n_odd, p: self.p, rows: odd, domain: self.domain },
        )
    }

    /// Stacks two sample matrices over the same variables.
    pub fn vstack(&self, other: &DataMatrix) -> Result<DataMatrix> {
        if self.p != other.p || self.domain != other.domain {
            return Err(Error::Dimension("cannot stack data matrices with different shape".into()));
        }
        let mut rows = self.rows.clone();
        rows.extend_from_slice(&other.rows);
        DataMatrix::new(self.n + other.n, self.p, rows, self.domain)
    }
}

/// Options for [`assemble_with`].
#[derive(Clone, Copy, Debug)]
pub struct AssembleOptions {
    /// Retain the per-sample φ₁/φ₂/g rows (required for variance estimation
    /// and the bootstrap). Turning this off gives the streaming mode that
    /// stores only Γ̂ and ĝ.
    pub keep_samples: bool,
    /// Subtract the empirical column means before evaluating statistics.
    /// Only supported for the Gaussian family.
    pub center_mean: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions { keep_samples: true, center_mean: false }
    }
}

/// Per-sample statistic rows restricted to their structural support.
///
/// For a fixed family and edge, the set of coordinates on which φ₁ can be
/// non-zero is the same for every sample (the statistics involving x_a);
/// storing only those columns keeps assembly at O(n·|support|²).
#[derive(Clone, Debug)]
struct PerSample {
    supp_a: Vec<usize>,
    supp_b: Vec<usize>,
    /// Position of each full coordinate inside `supp_a` (and b, g).
    pos_a: Vec<Option<usize>>,
    pos_b: Vec<Option<usize>>,
    pos_g: Vec<Option<usize>>,
    phi1: DMatrix<f64>,
    phi2: DMatrix<f64>,
    g: DMatrix<f64>,
}

/// The empirical quadratic system for one edge. Immutable once assembled.
#[derive(Clone, Debug)]
pub struct EdgeScoreSystem {
    map: EdgeIndexMap,
    n: usize,
    gamma_hat: DMatrix<f64>,
    g_hat: DVector<f64>,
    samples: Option<PerSample>,
}

/// Assembles the edge system with per-sample rows retained.
pub fn assemble(spec: &ModelSpec, data: &DataMatrix, a: usize, b: usize) -> Result<EdgeScoreSystem> {
    assemble_with(spec, data, a, b, AssembleOptions::default())
}

/// Assembles the edge system with explicit options.
pub fn assemble_with(
    spec: &ModelSpec,
    data: &DataMatrix,
    a: usize,
    b: usize,
    opts: AssembleOptions,
) -> Result<EdgeScoreSystem> {
    if data.n() < 2 {
        return Err(Error::EmptyData(format!("need n >= 2 samples, got {}", data.n())));
    }
    if data.p() != spec.p() {
        return Err(Error::Dimension(format!(
            "data has p = {}, spec has p = {}",
            data.p(),
            spec.p()
        )));
    }
    if opts.center_mean && spec.family() != Family::Gaussian {
        return Err(Error::Config(
            "mean centering is only supported for the Gaussian family".into(),
        ));
    }
    let map = crate::models::edge_index_map(spec, a, b)?;
    let n = data.n();
    let dim = map.dim();

    let centered;
    let data = if opts.center_mean {
        let p = data.p();
        let mut means = vec![0.0; p];
        for i in 0..n {
            for (m, v) in means.iter_mut().zip(data.row(i)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut rows = Vec::with_capacity(n * p);
        for i in 0..n {
            rows.extend(data.row(i).iter().zip(&means).map(|(v, m)| v - m));
        }
        centered = DataMatrix { n, p, rows, domain: data.domain() };
        &centered
    } else {
        data
    };

    let supp_a = map.support_a();
    let supp_b = map.support_b();
    // g is slot-wise a combination of x_a and x_b derivatives, so its
    // structural support is the union of the two.
    let mut supp_g: Vec<usize> = supp_a.iter().chain(&supp_b).copied().collect();
    supp_g.sort_unstable();
    supp_g.dedup();

    let weighted = spec.weight_fn() != WeightFn::Identity;
    let fam = spec.family();
    let slots = map.slots();

    let mut phi1 = DMatrix::zeros(n, supp_a.len());
    let mut phi2 = DMatrix::zeros(n, supp_b.len());
    let mut g_rows = DMatrix::zeros(n, supp_g.len());
    for i in 0..n {
        let x = data.row(i);
        check_sample_domain(spec, x)?;
        let (wa, wb) = if weighted {
            (spec.weight_fn().eval(x[a]).sqrt(), spec.weight_fn().eval(x[b]).sqrt())
        } else {
            (1.0, 1.0)
        };
        for (col, &j) in supp_a.iter().enumerate() {
            phi1[(i, col)] = wa * slot_phi1_raw(fam, &map, slots[j], x);
        }
        for (col, &j) in supp_b.iter().enumerate() {
            phi2[(i, col)] = wb * slot_phi2_raw(fam, &map, slots[j], x);
        }
        for (col, &j) in supp_g.iter().enumerate() {
            g_rows[(i, col)] = slot_g(spec, &map, slots[j], x);
        }
    }

    let inv_n = 1.0 / n as f64;
    let block_a = phi1.transpose() * &phi1 * inv_n;
    let block_b = phi2.transpose() * &phi2 * inv_n;
    let mut gamma_hat = DMatrix::zeros(dim, dim);
    scatter_block(&mut gamma_hat, &block_a, &supp_a);
    scatter_block(&mut gamma_hat, &block_b, &supp_b);
    // Exact symmetry; (x + y)/2 is commutative so the result is bitwise
    // symmetric.
    let gamma_t = gamma_hat.transpose();
    gamma_hat = (gamma_hat + gamma_t) * 0.5;

    let mut g_hat = DVector::zeros(dim);
    for (col, &j) in supp_g.iter().enumerate() {
        g_hat[j] = g_rows.column(col).sum() * inv_n;
    }

    let samples = opts.keep_samples.then(|| PerSample {
        pos_a: positions(dim, &supp_a),
        pos_b: positions(dim, &supp_b),
        pos_g: positions(dim, &supp_g),
        supp_a,
        supp_b,
        phi1,
        phi2,
        g: g_rows,
    });

    Ok(EdgeScoreSystem { map, n, gamma_hat, g_hat, samples })
}

fn scatter_block(out: &mut DMatrix<f64>, block: &DMatrix<f64>, supp: &[usize]) {
    for (cj, &j) in supp.iter().enumerate() {
        for (ci, &i) in supp.iter().enumerate() {
            out[(i, j)] += block[(ci, cj)];
        }
    }
}

fn positions(dim: usize, supp: &[usize]) -> Vec<Option<usize>> {
    let mut pos = vec![None; dim];
    for (c, &j) in supp.iter().enumerate() {
        pos[j] = Some(c);
    }
    pos
}

impl EdgeScoreSystem {
    pub fn map(&self) -> &EdgeIndexMap {
        &self.map
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn gamma_hat(&self) -> &DMatrix<f64> {
        &self.gamma_hat
    }

    pub fn g_hat(&self) -> &DVector<f64> {
        &self.g_hat
    }

    pub fn has_samples(&self) -> bool {
        self.samples.is_some()
    }

    fn samples(&self) -> Result<&PerSample> {
        self.samples.as_ref().ok_or_else(|| {
            Error::Config("per-sample rows were not retained (streaming assembly)".into())
        })
    }

    /// ½θᵀΓ̂θ + θᵀĝ, the empirical score up to the θ-free constant.
    pub fn objective(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check_dim(theta)?;
        Ok(0.5 * (theta.transpose() * &self.gamma_hat * theta)[(0, 0)] + theta.dot(&self.g_hat))
    }

    /// Γ̂θ + ĝ.
    pub fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(theta)?;
        Ok(&self.gamma_hat * theta + &self.g_hat)
    }

    fn check_dim(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "theta has dimension {}, system has s' = {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// The quadratic system of the nuisance regression for target
    /// coordinate `l` (a position in `map.target_indices()`):
    /// A = E_n[φ₁,−l φ₁,−lᵀ + φ₂,−l φ₂,−lᵀ] and b = E_n[φ₁,l φ₁,−l + φ₂,l φ₂,−l],
    /// so the regression reads min_γ ½γᵀAγ − bᵀγ + λ‖γ‖₁.
    ///
    /// Both are exact extractions from Γ̂ (delete row/column `l` for A, take
    /// column `l` without its diagonal entry for b).
    pub fn nuisance_regression_system(&self, l: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if !self.map.target_indices().contains(&l) {
            return Err(Error::Dimension(format!(
                "coordinate {l} is not a target index of edge {:?}",
                self.map.edge()
            )));
        }
        let dim = self.dim();
        let keep: Vec<usize> = (0..dim).filter(|&j| j != l).collect();
        let mut a = DMatrix::zeros(dim - 1, dim - 1);
        let mut b = DVector::zeros(dim - 1);
        for (cj, &j) in keep.iter().enumerate() {
            b[cj] = self.gamma_hat[(j, l)];
            for (ci, &i) in keep.iter().enumerate() {
                a[(ci, cj)] = self.gamma_hat[(i, j)];
            }
        }
        Ok((a, b))
    }

    /// Dense per-sample φ₁ values at the requested coordinates
    /// (n × |coords|, zero where the coordinate is outside φ₁'s support).
    pub fn phi1_columns(&self, coords: &[usize]) -> Result<DMatrix<f64>> {
        let s = self.samples()?;
        Ok(gather_columns(&s.phi1, &s.pos_a, coords, self.n))
    }

    /// Same as [`EdgeScoreSystem::phi1_columns`] for φ₂.
    pub fn phi2_columns(&self, coords: &[usize]) -> Result<DMatrix<f64>> {
        let s = self.samples()?;
        Ok(gather_columns(&s.phi2, &s.pos_b, coords, self.n))
    }

    /// Per-sample gradient rows (Γ(xᵢ)θ + g(xᵢ)) restricted to `coords`,
    /// as an n × |coords| matrix. Requires retained samples.
    ///
    /// Γ(xᵢ)θ = φ₁ᵢ(φ₁ᵢᵀθ) + φ₂ᵢ(φ₂ᵢᵀθ), so only support columns enter.
    pub fn residual_rows(&self, theta: &DVector<f64>, coords: &[usize]) -> Result<DMatrix<f64>> {
        self.check_dim(theta)?;
        let s = self.samples()?;
        let theta_a = DVector::from_iterator(s.supp_a.len(), s.supp_a.iter().map(|&j| theta[j]));
        let theta_b = DVector::from_iterator(s.supp_b.len(), s.supp_b.iter().map(|&j| theta[j]));
        let dot1 = &s.phi1 * theta_a; // n-vector of φ₁ᵢᵀθ
        let dot2 = &s.phi2 * theta_b;
        let mut out = DMatrix::zeros(self.n, coords.len());
        for (col, &j) in coords.iter().enumerate() {
            if j >= self.dim() {
                return Err(Error::Dimension(format!("coordinate {j} out of range")));
            }
            if let Some(ca) = s.pos_a[j] {
                for i in 0..self.n {
                    out[(i, col)] += dot1[i] * s.phi1[(i, ca)];
                }
            }
            if let Some(cb) = s.pos_b[j] {
                for i in 0..self.n {
                    out[(i, col)] += dot2[i] * s.phi2[(i, cb)];
                }
            }
            if let Some(cg) = s.pos_g[j] {
                for i in 0..self.n {
                    out[(i, col)] += s.g[(i, cg)];
                }
            }
        }
        Ok(out)
    }
}

fn gather_columns(
    stored: &DMatrix<f64>,
    pos: &[Option<usize>],
    coords: &[usize],
    n: usize,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, coords.len());
    for (col, &j) in coords.iter().enumerate() {
        if let Some(c) = pos.get(j).copied().flatten() {
            out.set_column(col, &stored.column(c));
        }
    }
    out
}
