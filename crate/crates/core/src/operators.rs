//! Complex operators at a fixed truncation dimension.
//!
//! Storage is compressed sparse rows: the model operators (shifts, diagonal
//! functions of `D`, their products) have a handful of entries per row, and
//! the two-dimensional models reach working dimensions where a dense N×N
//! array would not fit in memory. Spectral routines first split the matrix
//! into the connected components of its sparsity graph (a symmetric
//! permutation to block-diagonal form) and factor each block densely, so a
//! diagonal operator costs O(N log N) and a generic dense one falls back to a
//! single full-size factorization.

use std::cmp::Ordering;
use std::io::{BufRead, Read, Write};
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Default tolerances; every check compares against `tol * (1 + ‖T‖)`.
pub mod tol {
    /// Hermitian flag: max |T - T*| relative to 1 + max |T|.
    pub const HERMITIAN: f64 = 1e-12;
    /// Exact operator identities on the truncation interior.
    pub const IDENTITY: f64 = 1e-10;
    /// Negative eigenvalues of a psd operator allowed down to this.
    pub const PSD: f64 = 1e-10;
    /// Entries below this (relative to max |T|) do not connect blocks.
    pub const STRUCTURE: f64 = 1e-14;
    /// Two eigenvalue moduli closer than this (relative) form one tie group.
    pub const TIE: f64 = 1e-10;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub hermitian: bool,
    pub diagonal: bool,
    pub unitary: bool,
}

/// A square complex matrix with structural flags and a label.
#[derive(Clone, Debug)]
pub struct Operator {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
    flags: Flags,
    label: String,
}

impl Operator {
    /// Builds from (row, col, value) triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut entries: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(i, j, _) in &entries {
            if i >= dim || j >= dim {
                return Err(Error::Contract(format!(
                    "entry ({i}, {j}) outside dimension {dim}"
                )));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<C64> = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            if let (Some(&last_row), Some(&last_col)) = (rows.last(), col_idx.last()) {
                if last_row == i && last_col == j {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(i);
            col_idx.push(j);
            values.push(v);
        }
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut keep_cols = Vec::with_capacity(rows.len());
        let mut keep_vals = Vec::with_capacity(rows.len());
        for ((i, j), v) in rows.into_iter().zip(col_idx).zip(values) {
            if v != ZERO {
                keep_rows.push(i);
                keep_cols.push(j);
                keep_vals.push(v);
            }
        }
        for &i in &keep_rows {
            row_ptr[i + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self::from_csr(dim, row_ptr, keep_cols, keep_vals))
    }

    fn from_csr(dim: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<C64>) -> Self {
        let mut op = Self {
            dim,
            row_ptr,
            col_idx,
            values,
            flags: Flags::default(),
            label: String::new(),
        };
        op.refresh_flags();
        op
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Contract(format!(
                "operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        Self::from_triplets(
            n,
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j, m[(i, j)]))),
        )
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Contract("rows must form a square matrix".into()));
        }
        Self::from_triplets(
            n,
            rows.iter()
                .enumerate()
                .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &v)| (i, j, v))),
        )
    }

    pub fn diagonal(values: Vec<C64>) -> Self {
        let dim = values.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::with_capacity(dim);
        let mut vals = Vec::with_capacity(dim);
        row_ptr.push(0);
        for (i, v) in values.into_iter().enumerate() {
            if v != ZERO {
                col_idx.push(i);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self::from_csr(dim, row_ptr, col_idx, vals)
    }

    pub fn real_diagonal<I: IntoIterator<Item = f64>>(values: I) -> Self {
        Self::diagonal(values.into_iter().map(|x| C64::new(x, 0.0)).collect())
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::diagonal(vec![ONE; dim]);
        op.flags.unitary = true;
        op
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_csr(dim, vec![0; dim + 1], Vec::new(), Vec::new())
    }

    /// Haar-distributed unitary from the QR factorization of a complex
    /// Gaussian matrix.
    pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let g = DMatrix::<C64>::from_fn(dim, dim, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let qr = g.qr();
        let (q, r) = (qr.q(), qr.r());
        let mut u = q;
        for j in 0..dim {
            let d = r[(j, j)];
            let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
            for i in 0..dim {
                u[(i, j)] *= phase;
            }
        }
        let mut op = Self::from_dense(&u).expect("square by construction");
        op.flags.unitary = true;
        op.label = format!("haar_unitary({dim})");
        op
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Sets the unitary flag after verifying U*U = I.
    pub fn mark_unitary(mut self) -> Result<Self> {
        if !self.is_unitary(tol::IDENTITY) {
            return Err(Error::Contract(format!("`{}` is not unitary", self.label)));
        }
        self.flags.unitary = true;
        Ok(self)
    }

    fn refresh_flags(&mut self) {
        self.flags.diagonal = (0..self.dim).all(|i| {
            self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
                .iter()
                .all(|&j| j == i)
        });
        self.flags.hermitian = self.hermitian_defect() <= tol::HERMITIAN * (1.0 + self.max_abs());
        self.flags.unitary = false;
    }

    /// max |T_ij - conj(T_ji)|.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.iter() {
            let w = self.get(j, i).conj();
            worst = worst.max((v - w).norm());
        }
        worst
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn flags(&self) -> Flags {
        self.flags
    }

    pub fn is_hermitian(&self) -> bool {
        self.flags.hermitian
    }

    pub fn is_diagonal(&self) -> bool {
        self.flags.diagonal
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(pos) => self.values[self.row_ptr[i] + pos],
            Err(_) => ZERO,
        }
    }

    /// Stored entries as (row, col, value), row-major.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(move |p| (i, self.col_idx[p], self.values[p]))
        })
    }

    pub fn row(&self, i: usize) -> (&[usize], &[C64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn diagonal_values(&self) -> Vec<C64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// sqrt(‖T‖₁ ‖T‖_∞), an upper bound for the spectral norm that is exact
    /// for weighted permutations.
    pub fn norm_bound(&self) -> f64 {
        let mut col_sums = vec![0.0; self.dim];
        let mut row_max: f64 = 0.0;
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (&j, v) in cols.iter().zip(vals) {
                s += v.norm();
                col_sums[j] += v.norm();
            }
            row_max = row_max.max(s);
        }
        let col_max = col_sums.into_iter().fold(0.0, f64::max);
        (row_max * col_max).sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Spectral norm by power iteration on T*T from a fixed start vector.
    pub fn op_norm(&self) -> f64 {
        if self.nnz() == 0 {
            return 0.0;
        }
        let bound = self.norm_bound();
        if self.is_diagonal() {
            return self.max_abs();
        }
        let adj = self.adjoint();
        let mut x: Vec<C64> = (0..self.dim)
            .map(|i| C64::new(1.0 + (i as f64 * 0.618_033_988_75).fract(), 0.0))
            .collect();
        normalize(&mut x);
        let mut estimate = 0.0;
        for _ in 0..500 {
            let y = adj.apply(&self.apply(&x));
            let lambda = dot(&x, &y).re.max(0.0).sqrt();
            x = y;
            if normalize(&mut x) == 0.0 {
                return 0.0;
            }
            if (lambda - estimate).abs() <= 1e-13 * bound {
                return lambda;
            }
            estimate = lambda;
        }
        estimate
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        (0..self.dim)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, v)| v * x[j]).sum()
            })
            .collect()
    }

    pub fn adjoint(&self) -> Self {
        let mut op = Self::from_triplets(self.dim, self.iter().map(|(i, j, v)| (j, i, v.conj())))
            .expect("indices in range");
        op.flags.unitary = self.flags.unitary;
        op.label = format!("{}*", self.label);
        op
    }

    pub fn scale(&self, s: C64) -> Self {
        if s == ZERO {
            return Self::zeros(self.dim);
        }
        let mut op = self.clone();
        for v in &mut op.values {
            *v *= s;
        }
        op.refresh_flags();
        op
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    fn check_dims(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                op,
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        let mut row_ptr = Vec::with_capacity(self.dim + 1);
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        row_ptr.push(0);
        for i in 0..self.dim {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let (j, v) = match (ca.get(p), cb.get(q)) {
                    (Some(&ja), Some(&jb)) if ja == jb => {
                        p += 1;
                        q += 1;
                        (ja, va[p - 1] + vb[q - 1] * sign)
                    }
                    (Some(&ja), Some(&jb)) if ja < jb => {
                        p += 1;
                        (ja, va[p - 1])
                    }
                    (Some(_), Some(&jb)) => {
                        q += 1;
                        (jb, vb[q - 1] * sign)
                    }
                    (Some(&ja), None) => {
                        p += 1;
                        (ja, va[p - 1])
                    }
                    (None, Some(&jb)) => {
                        q += 1;
                        (jb, vb[q - 1] * sign)
                    }
                    (None, None) => unreachable!(),
                };
                if v != ZERO {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self::from_csr(self.dim, row_ptr, col_idx, values)
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.check_dims(other, "add")?;
        Ok(self.combine(other, 1.0))
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.check_dims(other, "sub")?;
        Ok(self.combine(other, -1.0))
    }

    /// Sparse product (row-wise accumulation).
    pub fn try_mul(&self, other: &Self) -> Result<Self> {
        self.check_dims(other, "mul")?;
        let n = self.dim;
        let mut acc = vec![ZERO; n];
        let mut seen = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            let (ca, va) = self.row(i);
            for (&k, a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                for (&j, b) in cb.iter().zip(vb) {
                    if !seen[j] {
                        seen[j] = true;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                if acc[j] != ZERO {
                    col_idx.push(j);
                    values.push(acc[j]);
                }
                acc[j] = ZERO;
                seen[j] = false;
            }
            touched.clear();
            row_ptr.push(col_idx.len());
        }
        let mut op = Self::from_csr(n, row_ptr, col_idx, values);
        op.flags.unitary = self.flags.unitary && other.flags.unitary;
        Ok(op)
    }

    /// Restriction P T P to the given index set, re-indexed in the given order.
    pub fn compress(&self, indices: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.dim];
        for (new, &old) in indices.iter().enumerate() {
            map[old] = new;
        }
        let triplets = indices.iter().enumerate().flat_map(|(new_i, &old_i)| {
            let (cols, vals) = self.row(old_i);
            let map = &map;
            cols.iter()
                .zip(vals)
                .filter(move |(j, _)| map[**j] != usize::MAX)
                .map(move |(&j, &v)| (new_i, map[j], v))
        });
        let mut op = Self::from_triplets(indices.len(), triplets.collect::<Vec<_>>())
            .expect("indices in range");
        op.label = self.label.clone();
        op
    }

    pub fn is_unitary(&self, tolerance: f64) -> bool {
        match self.adjoint().try_mul(self) {
            Ok(p) => p
                .try_sub(&Operator::identity(self.dim))
                .map(|d| d.norm_bound() <= tolerance)
                .unwrap_or(false),
            Err(_) => false,
        }
    }

    /// Connected components of the sparsity graph. The operator is block
    /// diagonal after permuting each component to be contiguous.
    pub fn components(&self) -> Vec<Vec<usize>> {
        if self.is_diagonal() {
            return (0..self.dim).map(|i| vec![i]).collect();
        }
        let cutoff = tol::STRUCTURE * self.max_abs();
        let mut parent: Vec<usize> = (0..self.dim).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (i, j, v) in self.iter() {
            if i != j && v.norm() > cutoff {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
        let mut slot = vec![usize::MAX; self.dim];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for i in 0..self.dim {
            let r = find(&mut parent, i);
            if slot[r] == usize::MAX {
                slot[r] = comps.len();
                comps.push(Vec::new());
            }
            comps[slot[r]].push(i);
        }
        comps
    }

    fn block(&self, indices: &[usize]) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(indices.len(), indices.len());
        for (a, &i) in indices.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if let Ok(b) = indices.binary_search(&j) {
                    m[(a, b)] = v;
                }
            }
        }
        m
    }

    // -- serialization ----------------------------------------------------

    /// Binary container: little-endian u64 dimension, then the N² entries
    /// row-major as (re, im) f64 pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        let mut triplets = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                r.read_exact(&mut word)?;
                let re = f64::from_le_bytes(word);
                r.read_exact(&mut word)?;
                let im = f64::from_le_bytes(word);
                triplets.push((i, j, C64::new(re, im)));
            }
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format(
                "trailing bytes after operator payload".into(),
            ));
        }
        Self::from_triplets(dim, triplets)
    }

    /// Dense CSV (`row,col,re,im`, all N² entries) for debugging small matrices.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,col,re,im")?;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                writeln!(w, "{i},{j},{:e},{:e}", v.re, v.im)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut triplets = Vec::new();
        let mut max_index = 0usize;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!(
                    "line {}: expected 4 fields",
                    lineno + 1
                )));
            }
            let bad = |what: &str| Error::Format(format!("line {}: bad {what}", lineno + 1));
            let i: usize = fields[0].parse().map_err(|_| bad("row"))?;
            let j: usize = fields[1].parse().map_err(|_| bad("col"))?;
            let re: f64 = fields[2].parse().map_err(|_| bad("re"))?;
            let im: f64 = fields[3].parse().map_err(|_| bad("im"))?;
            max_index = max_index.max(i).max(j);
            triplets.push((i, j, C64::new(re, im)));
        }
        let dim = if triplets.is_empty() {
            0
        } else {
            max_index + 1
        };
        Self::from_triplets(dim, triplets)
    }
}

fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn normalize(x: &mut [C64]) -> f64 {
    let n = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
    n
}

impl Add for &Operator {
    type Output = Operator;
    /// Panics on dimension mismatch; use [`Operator::try_add`] otherwise.
    fn add(self, rhs: &Operator) -> Operator {
        self.try_add(rhs).expect("operator dimensions agree")
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.try_sub(rhs).expect("operator dimensions agree")
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.try_mul(rhs).expect("operator dimensions agree")
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale_real(-1.0)
    }
}

/// AB - BA.
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    a.try_mul(b)?.try_sub(&b.try_mul(a)?)
}

/// AB + BA.
pub fn anticommutator(a: &Operator, b: &Operator) -> Result<Operator> {
    a.try_mul(b)?.try_add(&b.try_mul(a)?)
}

pub fn trace(t: &Operator) -> C64 {
    (0..t.dim).map(|i| t.get(i, i)).sum()
}

// -- spectra ---------------------------------------------------------------

/// Eigenvalues with algebraic multiplicity, ordered by non-increasing
/// modulus; equal moduli are ordered by descending real part, then
/// descending imaginary part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    values: Vec<C64>,
}

pub fn canonical_order(a: &C64, b: &C64) -> Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

impl Spectrum {
    pub fn new(mut values: Vec<C64>) -> Self {
        values.sort_by(canonical_order);
        Self { values }
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> C64 {
        self.values.iter().sum()
    }
}

/// Non-increasing, non-negative singular values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSequence {
    mu: Vec<f64>,
}

impl SingularSequence {
    /// Sorts into non-increasing order. Negative or non-finite entries are
    /// rejected.
    pub fn new(mut mu: Vec<f64>) -> Result<Self> {
        if let Some(bad) = mu.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::Contract(format!(
                "singular value {bad} is not a non-negative real"
            )));
        }
        mu.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { mu })
    }

    /// Sequence k ↦ f(k) for k < n.
    pub fn from_fn(n: usize, f: impl Fn(usize) -> f64) -> Result<Self> {
        Self::new((0..n).map(f).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

fn condition_estimate(block: &DMatrix<C64>) -> f64 {
    if block.nrows() > 512 {
        return f64::NAN;
    }
    match SVD::try_new(block.clone(), false, false, f64::EPSILON, 10_000) {
        Some(svd) => {
            let s = &svd.singular_values;
            let max = s.max();
            let min = s.min();
            if min > 0.0 {
                max / min
            } else {
                f64::INFINITY
            }
        }
        None => f64::NAN,
    }
}

fn block_eigenvalues(label: &str, block: DMatrix<C64>) -> Result<Vec<C64>> {
    let n = block.nrows();
    if n == 1 {
        return Ok(vec![block[(0, 0)]]);
    }
    let scale = block.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let herm_defect = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| {
            m.max((block[(i, j)] - block[(j, i)].conj()).norm())
        });
    if herm_defect <= tol::HERMITIAN * (1.0 + scale) {
        let eig = SymmetricEigen::try_new(block.clone(), f64::EPSILON, 100 * n.max(10))
            .ok_or_else(|| Error::Factorization {
                label: label.to_string(),
                condition: condition_estimate(&block),
            })?;
        return Ok(eig.eigenvalues.iter().map(|&x| C64::new(x, 0.0)).collect());
    }
    let schur = Schur::try_new(block.clone(), f64::EPSILON, 200 * n.max(10)).ok_or_else(|| {
        Error::Factorization {
            label: label.to_string(),
            condition: condition_estimate(&block),
        }
    })?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// All N eigenvalues in canonical order.
pub fn eigenvalues(t: &Operator) -> Result<Spectrum> {
    let mut values = Vec::with_capacity(t.dim);
    for comp in t.components() {
        if comp.len() == 1 {
            values.push(t.get(comp[0], comp[0]));
        } else {
            values.extend(block_eigenvalues(&t.label, t.block(&comp))?);
        }
    }
    Ok(Spectrum::new(values))
}

/// Eigenvalues of |T| in non-increasing order.
pub fn singular_values(t: &Operator) -> Result<SingularSequence> {
    let mut mu = Vec::with_capacity(t.dim);
    for comp in t.components() {
        if comp.len() == 1 {
            mu.push(t.get(comp[0], comp[0]).norm());
            continue;
        }
        let block = t.block(&comp);
        let svd =
            SVD::try_new(block.clone(), false, false, f64::EPSILON, 10_000).ok_or_else(|| {
                Error::Factorization {
                    label: t.label.clone(),
                    condition: condition_estimate(&block),
                }
            })?;
        mu.extend(svd.singular_values.iter().copied());
    }
    SingularSequence::new(mu)
}

/// One diagonal block of a hermitian eigendecomposition.
#[derive(Clone, Debug)]
pub struct EigenBlock {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// Columns are eigenvectors; `None` for 1×1 blocks.
    pub vectors: Option<DMatrix<C64>>,
}

/// Block-wise eigendecomposition T = Q Λ Q* of a hermitian operator,
/// cached so that functional calculus can be applied repeatedly.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    dim: usize,
    blocks: Vec<EigenBlock>,
    norm: f64,
}

impl HermitianEigen {
    pub fn new(t: &Operator) -> Result<Self> {
        if !t.is_hermitian() {
            return Err(Error::Contract(format!(
                "`{}` is not hermitian (defect {:e})",
                t.label,
                t.hermitian_defect()
            )));
        }
        let mut blocks = Vec::new();
        let mut norm: f64 = 0.0;
        for comp in t.components() {
            if comp.len() == 1 {
                let x = t.get(comp[0], comp[0]).re;
                norm = norm.max(x.abs());
                blocks.push(EigenBlock {
                    indices: comp,
                    values: vec![x],
                    vectors: None,
                });
                continue;
            }
            let block = t.block(&comp);
            let n = comp.len();
            let eig = SymmetricEigen::try_new(block.clone(), f64::EPSILON, 100 * n.max(10))
                .ok_or_else(|| Error::Factorization {
                    label: t.label.clone(),
                    condition: condition_estimate(&block),
                })?;
            let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            norm = values.iter().fold(norm, |m, x| m.max(x.abs()));
            blocks.push(EigenBlock {
                indices: comp,
                values,
                vectors: Some(eig.eigenvectors),
            });
        }
        Ok(Self {
            dim: t.dim,
            blocks,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[EigenBlock] {
        &self.blocks
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Eigenvalues in non-increasing order.
    pub fn values_sorted(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .blocks
            .iter()
            .flat_map(|b| b.values.iter().copied())
            .collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// f(T). Non-finite f(λ) is reported as a domain error.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Result<Operator> {
        let mut triplets = Vec::new();
        for b in &self.blocks {
            let fv: Vec<f64> = b
                .values
                .iter()
                .map(|&x| {
                    let y = f(x);
                    if y.is_finite() {
                        Ok(y)
                    } else {
                        Err(Error::Domain { eigenvalue: x })
                    }
                })
                .collect::<Result<_>>()?;
            match &b.vectors {
                None => triplets.push((b.indices[0], b.indices[0], C64::new(fv[0], 0.0))),
                Some(q) => {
                    let n = b.indices.len();
                    for a in 0..n {
                        for c in 0..n {
                            let mut s = ZERO;
                            for (k, &y) in fv.iter().enumerate() {
                                if y != 0.0 {
                                    s += q[(a, k)] * q[(c, k)].conj() * y;
                                }
                            }
                            if a == c {
                                s.im = 0.0;
                            }
                            triplets.push((b.indices[a], b.indices[c], s));
                        }
                    }
                }
            }
        }
        let mut op = Operator::from_triplets(self.dim, triplets)?;
        if !op.flags.hermitian {
            // f real on a hermitian block gives a hermitian result; rounding
            // in Q f(Λ) Q* is symmetrized away.
            let sym = &op + &op.adjoint();
            op = sym.scale_real(0.5);
        }
        Ok(op)
    }

    /// Pairs (λ_j, (Q* X Q)_jj) so that Tr(X f(T)) = Σ_j w_j f(λ_j).
    pub fn weights_of(&self, x: &Operator) -> Result<Vec<(f64, C64)>> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                op: "weights_of",
                left: x.dim(),
                right: self.dim,
            });
        }
        let mut out = Vec::with_capacity(self.dim);
        for b in &self.blocks {
            match &b.vectors {
                None => out.push((b.values[0], x.get(b.indices[0], b.indices[0]))),
                Some(q) => {
                    let xb = x.block(&b.indices);
                    let qxq = q.adjoint() * xb * q;
                    for (k, &lam) in b.values.iter().enumerate() {
                        out.push((lam, qxq[(k, k)]));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// f(T) for hermitian T.
pub fn hermitian_calculus(t: &Operator, f: impl Fn(f64) -> f64) -> Result<Operator> {
    HermitianEigen::new(t)?.apply(f)
}

/// Orthogonal projection onto eigenvectors with eigenvalue in the interval;
/// `closed_ends` selects [lo, ...] and [..., hi] respectively.
pub fn spectral_projection(
    t: &Operator,
    lo: f64,
    hi: f64,
    closed_ends: (bool, bool),
) -> Result<Operator> {
    let inside = move |x: f64| {
        let above = if closed_ends.0 { x >= lo } else { x > lo };
        let below = if closed_ends.1 { x <= hi } else { x < hi };
        if above && below {
            1.0
        } else {
            0.0
        }
    };
    hermitian_calculus(t, inside)
}

/// n_T(t): number of eigenvalues strictly above t, for psd T.
pub fn counting_function(t: &Operator, level: f64) -> Result<usize> {
    if level <= 0.0 {
        return Err(Error::Contract(format!(
            "counting level must be positive, got {level}"
        )));
    }
    let eig = HermitianEigen::new(t)?;
    let values = eig.values_sorted();
    if let Some(&min) = values.last() {
        if min < -tol::PSD * (1.0 + eig.norm()) {
            return Err(Error::Contract(format!(
                "`{}` is not psd (eigenvalue {min:e})",
                t.label()
            )));
        }
    }
    Ok(values.iter().take_while(|&&x| x > level).count())
}

/// sign(x) with sign(0) = +1.
pub fn phase_sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// D = F|D| with F = E_D[0,∞) - E_D(-∞,0).
pub fn phase_modulus(d: &Operator) -> Result<(Operator, Operator)> {
    let eig = HermitianEigen::new(d)?;
    let f = eig
        .apply(phase_sign)?
        .with_label(format!("F({})", d.label()));
    let abs = eig.apply(f64::abs)?.with_label(format!("|{}|", d.label()));
    Ok((f, abs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn diag(v: &[C64]) -> Operator {
        Operator::diagonal(v.to_vec())
    }

    fn close(a: &Operator, b: &Operator, eps: f64) -> bool {
        (a - b).norm_bound() <= eps
    }

    #[test]
    fn identity_spectrum() {
        let s = eigenvalues(&Operator::identity(3)).unwrap();
        assert_eq!(s.values(), &[ONE, ONE, ONE]);
    }

    #[test]
    fn diagonal_ordering_uses_modulus_then_tie_rule() {
        let t = diag(&[c(1.0, 0.0), c(0.0, -2.0), c(3.0, 0.0)]);
        let s = eigenvalues(&t).unwrap();
        assert_eq!(s.values(), &[c(3.0, 0.0), c(0.0, -2.0), c(1.0, 0.0)]);

        let ties = diag(&[c(0.0, -1.0), c(-1.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)]);
        let s = eigenvalues(&ties).unwrap();
        assert_eq!(
            s.values(),
            &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(-1.0, 0.0)]
        );
    }

    #[test]
    fn nilpotent_has_zero_spectrum() {
        let t = Operator::from_rows(&[vec![ZERO, ONE], vec![ZERO, ZERO]]).unwrap();
        let s = eigenvalues(&t).unwrap();
        for v in s.values() {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn singular_value_examples() {
        let t = Operator::real_diagonal([1.0, 0.5, 1.0 / 3.0]);
        assert_eq!(
            singular_values(&t).unwrap().values(),
            &[1.0, 0.5, 1.0 / 3.0]
        );
        assert_eq!(
            singular_values(&Operator::zeros(4)).unwrap().values(),
            &[0.0; 4]
        );
        let t = Operator::from_rows(&[vec![ZERO, c(2.0, 0.0)], vec![ZERO, ZERO]]).unwrap();
        let mu = singular_values(&t).unwrap();
        assert!((mu.values()[0] - 2.0).abs() < 1e-12 && mu.values()[1].abs() < 1e-12);
    }

    #[test]
    fn spectral_projection_examples() {
        let t = Operator::real_diagonal([-1.0, 0.0, 2.0]);
        let p = spectral_projection(&t, 0.0, f64::INFINITY, (true, false)).unwrap();
        assert!(close(&p, &Operator::real_diagonal([0.0, 1.0, 1.0]), 0.0));
        let p = spectral_projection(&t, 0.0, f64::INFINITY, (false, false)).unwrap();
        assert!(close(&p, &Operator::real_diagonal([0.0, 0.0, 1.0]), 0.0));
        let p = spectral_projection(&t, 5.0, f64::INFINITY, (false, false)).unwrap();
        assert_eq!(p.nnz(), 0);
    }

    #[test]
    fn projection_rejects_non_hermitian() {
        let t = Operator::from_rows(&[vec![ZERO, ONE], vec![ZERO, ZERO]]).unwrap();
        assert!(matches!(
            spectral_projection(&t, 0.0, 1.0, (true, true)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn counting_function_examples() {
        let t = Operator::real_diagonal([1.0, 0.5, 1.0 / 3.0]);
        assert_eq!(counting_function(&t, 0.4).unwrap(), 2);
        assert_eq!(counting_function(&t, 2.0).unwrap(), 0);
        let v = Operator::real_diagonal((0..1000).map(|k| 1.0 / (k as f64 + 1.0)));
        assert_eq!(counting_function(&v, 0.01).unwrap(), 99);
        let neg = Operator::real_diagonal([1.0, -0.5]);
        assert!(matches!(
            counting_function(&neg, 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn hermitian_calculus_examples() {
        let t = Operator::real_diagonal([0.0, 1.0]);
        let g = hermitian_calculus(&t, |s| (-s * s).exp()).unwrap();
        assert!(close(
            &g,
            &Operator::real_diagonal([1.0, (-1.0f64).exp()]),
            1e-15
        ));

        let bad = hermitian_calculus(&t, |s| 1.0 / s);
        assert!(matches!(bad, Err(Error::Domain { eigenvalue }) if eigenvalue == 0.0));

        // identity map on a dense hermitian matrix
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = Operator::random_unitary(6, &mut rng);
        let d = Operator::real_diagonal([3.0, -1.0, 0.5, 0.0, 2.0, -2.5]);
        let h = &(&u * &d) * &u.adjoint();
        let h = (&h + &h.adjoint()).scale_real(0.5);
        let back = hermitian_calculus(&h, |s| s).unwrap();
        assert!(close(&back, &h, 1e-12));

        // indicator reproduces the projection
        let p1 = hermitian_calculus(&h, |s| if s > 0.25 { 1.0 } else { 0.0 }).unwrap();
        let p2 = spectral_projection(&h, 0.25, f64::INFINITY, (false, false)).unwrap();
        assert!(close(&p1, &p2, 1e-14));
    }

    #[test]
    fn phase_modulus_examples() {
        let d = Operator::real_diagonal([-2.0, 0.0, 3.0]);
        let (f, abs) = phase_modulus(&d).unwrap();
        assert!(close(&f, &Operator::real_diagonal([-1.0, 1.0, 1.0]), 0.0));
        assert!(close(&abs, &Operator::real_diagonal([2.0, 0.0, 3.0]), 0.0));

        let psd = Operator::real_diagonal([0.0, 1.0, 4.0]);
        let (f, _) = phase_modulus(&psd).unwrap();
        assert!(close(&f, &Operator::identity(3), 0.0));
    }

    #[test]
    fn commutator_and_trace() {
        let t = Operator::from_rows(&[vec![ONE, c(2.0, 1.0)], vec![c(0.0, 3.0), ZERO]]).unwrap();
        assert_eq!(commutator(&t, &Operator::identity(2)).unwrap().nnz(), 0);
        assert_eq!(
            trace(&Operator::real_diagonal([1.0, 2.0, 3.0])),
            c(6.0, 0.0)
        );
        assert!(matches!(
            commutator(&t, &Operator::identity(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn random_unitary_is_flagged_and_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Operator::random_unitary(8, &mut rng);
        assert!(u.flags().unitary);
        assert!(u.is_unitary(1e-12));
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let t = Operator::from_rows(&[vec![ONE, c(2.0, -1.5)], vec![c(0.0, 3.0), c(-0.25, 0.0)]])
            .unwrap();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 * 16);
        let back = Operator::read_binary(buf.as_slice()).unwrap();
        assert!(close(&back, &t, 0.0));

        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let back = Operator::read_csv(csv.as_slice()).unwrap();
        assert!(close(&back, &t, 0.0));
    }

    #[test]
    fn block_structure_is_found() {
        // two 2x2 blocks interleaved: {0, 2} and {1, 3}
        let t = Operator::from_triplets(
            4,
            [
                (0, 2, ONE),
                (2, 0, c(0.0, 1.0)),
                (1, 3, c(2.0, 0.0)),
                (3, 3, ONE),
            ],
        )
        .unwrap();
        assert_eq!(t.components(), vec![vec![0, 2], vec![1, 3]]);
        let s = eigenvalues(&t).unwrap();
        let dense = Operator::from_dense(&t.to_dense()).unwrap();
        assert_eq!(s.len(), 4);
        assert!((s.sum() - trace(&dense)).norm() < 1e-12);
    }
}
