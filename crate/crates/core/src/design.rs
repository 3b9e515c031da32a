//! Design matrices, incremental Gram–Schmidt and rank profiles.
//!
//! All norms and inner products are normalized by the sample size:
//! `‖x‖_n² = Σ xᵢ²/n` and `⟨x,y⟩_n = Σ xᵢyᵢ/n`. Every stored column and every
//! basis vector has unit `‖·‖_n` norm.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, dot_n, sq_norm};

/// Relative residual norm below which a column is declared dependent.
pub const DEPENDENCE_TOL: f64 = 1e-8;

const NORM_TOL: f64 = 1e-10;
const CACHE_MAGIC: &[u8; 4] = b"VSDM";
const CACHE_VERSION: u32 = 1;

/// An `n × p` predictor matrix stored column-major with unit-`‖·‖_n` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
    has_intercept: bool,
    names: Vec<String>,
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("X{j}")).collect()
}

impl DesignMatrix {
    /// Wraps already-normalized column-major data, checking the unit-norm invariant.
    pub fn from_columns(n: usize, p: usize, data: Vec<f64>, has_intercept: bool) -> Result<Self> {
        if n == 0 || p == 0 || data.len() != n * p {
            return Err(Error::Dimension(format!(
                "expected {n}x{p} = {} entries, got {}",
                n * p,
                data.len()
            )));
        }
        let m = DesignMatrix { n, p, data, has_intercept, names: default_names(p) };
        for j in 0..p {
            let norm = crate::linalg::sq_norm_n(m.col(j));
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::InvalidInput(format!(
                    "column {j} has squared n-norm {norm}, expected 1"
                )));
            }
        }
        if has_intercept && m.col(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidInput("intercept column must be all ones".into()));
        }
        Ok(m)
    }

    /// Rescales arbitrary columns to unit `‖·‖_n` norm.
    ///
    /// A column whose raw entries are all equal and positive becomes exactly the
    /// all-ones intercept; `has_intercept` is set when that happens for column 0.
    pub fn normalize_columns(n: usize, p: usize, raw: &[f64]) -> Result<Self> {
        if n == 0 || p == 0 || raw.len() != n * p {
            return Err(Error::Dimension(format!(
                "expected {n}x{p} = {} entries, got {}",
                n * p,
                raw.len()
            )));
        }
        let mut data = raw.to_vec();
        for j in 0..p {
            let col = &mut data[j * n..(j + 1) * n];
            let norm = sq_norm(col).sqrt();
            if !(norm >= 1e-12) {
                return Err(Error::ZeroColumn(j));
            }
            if col[0] > 0.0 && col.iter().all(|&v| v == col[0]) {
                col.fill(1.0);
            } else {
                let scale = (n as f64).sqrt() / norm;
                col.iter_mut().for_each(|v| *v *= scale);
            }
        }
        let has_intercept = data[..n].iter().all(|&v| v == 1.0);
        Ok(DesignMatrix { n, p, data, has_intercept, names: default_names(p) })
    }

    /// The given rows, without renormalizing the columns.
    pub fn row_subset(&self, rows: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.p);
        for j in 0..self.p {
            let c = self.col(j);
            data.extend(rows.iter().map(|&i| c[i]));
        }
        DesignMatrix { n: rows.len(), p: self.p, data, has_intercept: self.has_intercept, names: self.names.clone() }
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::Dimension(format!("{} names for {} columns", names.len(), self.p)));
        }
        self.names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    /// Row-major copy, convenient for row resampling.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.p];
        for j in 0..self.p {
            for (i, &v) in self.col(j).iter().enumerate() {
                out[i * self.p + j] = v;
            }
        }
        out
    }

    /// `Xβ`.
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.p);
        let mut out = vec![0.0; self.n];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                axpy(b, self.col(j), &mut out);
            }
        }
        out
    }

    /// `⟨X_j, v⟩_n` for every column.
    pub fn inner_n(&self, v: &[f64]) -> Vec<f64> {
        (0..self.p).map(|j| dot_n(self.col(j), v)).collect()
    }

    /// `XᵀX/n`, column-major `p × p`.
    pub fn gram_n(&self) -> Vec<f64> {
        let p = self.p;
        let mut g = vec![0.0; p * p];
        for a in 0..p {
            for b in a..p {
                let v = dot_n(self.col(a), self.col(b));
                g[a * p + b] = v;
                g[b * p + a] = v;
            }
        }
        g
    }

    /// New design made of the listed columns in the listed order.
    pub fn select_columns(&self, idx: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(self.n * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        DesignMatrix {
            n: self.n,
            p: idx.len(),
            data,
            has_intercept: self.has_intercept && idx.first() == Some(&0),
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
        }
    }

    /// True when columns `1..p` (0-based) are pairwise orthogonal with unit norm.
    pub fn is_orthonormal_tail(&self, tol: f64) -> bool {
        for a in 1..self.p {
            for b in a..self.p {
                let v = dot_n(self.col(a), self.col(b));
                let target = if a == b { 1.0 } else { 0.0 };
                if (v - target).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Reads a CSV with a header row; rows are observations.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Dimension(format!("row {} has {} fields", line + 1, rec.len())));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidInput(format!("row {}, column {}: not a number: {field:?}", line + 1, j + 1))
                })?;
                cols[j].push(v);
            }
        }
        Ok((header, cols))
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for i in 0..self.n {
            w.write_record((0..self.p).map(|j| format!("{:e}", self.get(i, j))))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary cache: `VSDM`, u32 version, u64 n, u64 p, u8 intercept flag,
    /// then `n·p` little-endian f64 values column-major.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.p as u64).to_le_bytes())?;
        w.write_all(&[self.has_intercept as u8])?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::InvalidInput("not a design cache file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CACHE_VERSION {
            return Err(Error::InvalidInput(format!("unsupported cache version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let p = u64::from_le_bytes(b8) as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut data = vec![0.0; n * p];
        for v in data.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        DesignMatrix::from_columns(n, p, data, flag[0] != 0)
    }
}

/// Incremental orthonormalization of an ordered column family.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoState {
    n: usize,
    basis: Vec<f64>,
    source_index: Vec<usize>,
    rank_profile: Vec<usize>,
    tol: f64,
}

impl OrthoState {
    pub fn new(n: usize) -> Self {
        Self::with_tol(n, DEPENDENCE_TOL)
    }

    pub fn with_tol(n: usize, tol: f64) -> Self {
        OrthoState { n, basis: Vec::new(), source_index: Vec::new(), rank_profile: Vec::new(), tol }
    }

    /// Processes the design's columns in the given order.
    pub fn from_design(design: &DesignMatrix, order: &[usize]) -> Self {
        let mut st = OrthoState::new(design.n());
        for &j in order {
            st.push(design.col(j), j);
        }
        st
    }

    /// Processes every column of the design in its natural order.
    pub fn from_design_natural(design: &DesignMatrix) -> Self {
        let order: Vec<usize> = (0..design.p()).collect();
        Self::from_design(design, &order)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of basis vectors.
    pub fn dim(&self) -> usize {
        self.source_index.len()
    }

    pub fn basis_vec(&self, j: usize) -> &[f64] {
        &self.basis[j * self.n..(j + 1) * self.n]
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn rank_profile(&self) -> &[usize] {
        &self.rank_profile
    }

    /// Returns a new state extended by `column`, leaving `self` untouched.
    pub fn gs_extend(&self, column: &[f64], source: usize) -> OrthoState {
        let mut st = self.clone();
        st.push(column, source);
        st
    }

    /// In-place extension; returns whether a basis vector was appended.
    pub fn push(&mut self, column: &[f64], source: usize) -> bool {
        assert_eq!(column.len(), self.n);
        let col_norm = sq_norm(column).sqrt();
        let mut r = column.to_vec();
        for _ in 0..2 {
            for j in 0..self.dim() {
                let e = &self.basis[j * self.n..(j + 1) * self.n];
                let c = dot_n(&r, e);
                axpy(-c, e, &mut r);
            }
        }
        let r_norm = sq_norm(&r).sqrt();
        let prev = self.rank_profile.last().copied().unwrap_or(0);
        if col_norm > 0.0 && r_norm > self.tol * col_norm && self.dim() < self.n {
            let scale = (self.n as f64).sqrt() / r_norm;
            r.iter_mut().for_each(|v| *v *= scale);
            self.basis.extend_from_slice(&r);
            self.source_index.push(source);
            self.rank_profile.push(prev + 1);
            true
        } else {
            self.rank_profile.push(prev);
            false
        }
    }

    /// `⟨y, ẽⱼ⟩_n` for every basis vector.
    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|j| dot_n(y, self.basis_vec(j))).collect()
    }

    /// `‖Π_S y‖_n²` for `S` spanned by the basis vectors in `range`.
    pub fn project_sq_norm(&self, y: &[f64], range: std::ops::Range<usize>) -> f64 {
        range.map(|j| dot_n(y, self.basis_vec(j)).powi(2)).sum()
    }

    /// `‖y − Π_{span(ẽ₁..ẽ_m)} y‖_n²` for every `m = 0..=dim`, computed on an
    /// explicit residual vector so tiny residuals keep their relative accuracy.
    pub fn residual_profile(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut coef = Vec::with_capacity(self.dim());
        let mut res = Vec::with_capacity(self.dim() + 1);
        let mut r = y.to_vec();
        res.push(crate::linalg::sq_norm_n(&r));
        for j in 0..self.dim() {
            let e = self.basis_vec(j);
            let c = dot_n(y, e);
            coef.push(c);
            let c_r = dot_n(&r, e);
            axpy(-c_r, e, &mut r);
            res.push(crate::linalg::sq_norm_n(&r));
        }
        (coef, res)
    }

    pub fn rank_indices(&self) -> RankIndex {
        RankIndex::from_profile(self.rank_profile.clone())
    }
}

/// Resolves `s_k = inf{s : a_s = k}` and `q_{k,t}` from a rank profile.
#[derive(Debug, Clone, PartialEq)]
pub struct RankIndex {
    profile: Vec<usize>,
    first: Vec<usize>,
}

impl RankIndex {
    pub fn from_profile(profile: Vec<usize>) -> Self {
        let rank = profile.last().copied().unwrap_or(0);
        let mut first = vec![0usize; rank + 1];
        for (s, &a) in profile.iter().enumerate() {
            if a > 0 && first[a] == 0 {
                first[a] = s + 1;
            }
        }
        RankIndex { profile, first }
    }

    /// Dimension of the span of all processed columns, `a_p`.
    pub fn rank(&self) -> usize {
        self.first.len() - 1
    }

    pub fn profile(&self) -> &[usize] {
        &self.profile
    }

    /// Number of leading columns needed to span dimension `k` (1-based count).
    pub fn s(&self, k: usize) -> Result<usize> {
        if k == 0 {
            return Ok(0);
        }
        self.first.get(k).copied().ok_or(Error::RankUnreachable(k))
    }

    /// Number of columns after `s_k` needed for the projected span to reach `2ᵗ`.
    pub fn q(&self, k: usize, t: u32) -> Result<usize> {
        let target = k + (1usize << t);
        Ok(self.s(target)? - self.s(k)?)
    }
}

/// Regression truth: coefficients, support, noise level and mean vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub beta: Vec<f64>,
    pub support: Vec<usize>,
    pub sigma: f64,
    pub mu: Vec<f64>,
}

impl Model {
    /// Builds the model from coefficients; `support` lists the nonzero indices
    /// plus any index in `forced` (used for a zero-valued intercept in the truth).
    pub fn new(design: &DesignMatrix, beta: Vec<f64>, sigma: f64, forced: &[usize]) -> Self {
        let mut support: Vec<usize> =
            (0..beta.len()).filter(|&j| beta[j] != 0.0 || forced.contains(&j)).collect();
        support.dedup();
        let mu = design.mul_vec(&beta);
        Model { beta, support, sigma, mu }
    }

    pub fn k0(&self) -> usize {
        self.support.len()
    }
}

/// Dense `‖Π_{span(cols)} y‖²` via normal equations, for cross-checking.
pub fn dense_projection(design: &DesignMatrix, cols: &[usize], y: &[f64]) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let n = design.n();
    if cols.is_empty() {
        return vec![0.0; n];
    }
    let x = DMatrix::from_fn(n, cols.len(), |i, j| design.get(i, cols[j]));
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    let sol = xtx.lu().solve(&xty).expect("singular normal equations");
    (x * sol).as_slice().to_vec()
}

/// `‖v‖_n²` of a dense projection.
pub fn dense_project_sq_norm(design: &DesignMatrix, cols: &[usize], y: &[f64]) -> f64 {
    crate::linalg::sq_norm_n(&dense_projection(design, cols, y))
}

/// Simple dot for callers outside the crate that hold raw slices.
pub fn inner(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}
