//! Dyadic hierarchy: ultrametric distance, averaging operators, and the
//! hierarchical Laplacian `Δ = Σ_r p_r E_r`.
//!
//! Sites live in `B_n = {0, …, 2^n − 1}`. The partition `P_r` groups sites
//! into blocks of size `2^r` aligned at multiples of `2^r`, so the ball
//! `B_r(j)` is the index range `[2^r⌊j/2^r⌋, 2^r(⌊j/2^r⌋ + 1))`. Only the
//! branching-factor-2 hierarchy is supported.

use serde::{Deserialize, Serialize};

use crate::error::HrgError;
use crate::Result;

/// Hierarchical (ultrametric) distance: the smallest `r ≥ 0` such that `j`
/// and `k` share a block of `P_r`, i.e. `⌊j/2^r⌋ = ⌊k/2^r⌋`.
///
/// Equals the bit length of `j XOR k`, so it satisfies the ultrametric
/// inequality `d(j,k) ≤ max(d(j,l), d(l,k))`.
pub fn hier_distance(j: usize, k: usize) -> usize {
    let x = j ^ k;
    (usize::BITS - x.leading_zeros()) as usize
}

/// The ball `B_r(j)` as an index range.
pub fn ball(r: usize, j: usize) -> std::ops::Range<usize> {
    let lo = (j >> r) << r;
    lo..lo + (1 << r)
}

/// Hopping sequence `p_r` (1-based in `r`), either the analytic geometric
/// family `p_r = ε·2^{−cr}` or an explicit finite list declared to satisfy
/// `|p_r| ≤ ε·2^{−cr}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoppingKind {
    Geometric { epsilon: f64, c: f64 },
    Explicit { values: Vec<f64>, epsilon: f64, c: f64 },
}

/// A hopping model together with the volume scale `n` it acts on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoppingModel {
    pub kind: HoppingKind,
    /// Volume scale: the model acts on `B_n`, dimension `2^n`.
    pub n: usize,
}

/// Which finite-volume operator the hopping sequence generates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LaplacianMode {
    /// `H_n`: levels `1..=n` plus the tail correction `α_n |φ_n⟩⟨φ_n|`.
    TailCorrected,
    /// `H_{n,m}`: levels `1..=m` only.
    Truncated { m: usize },
}

impl HoppingModel {
    pub fn geometric(epsilon: f64, c: f64, n: usize) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(HrgError::InvalidHopping(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(HrgError::InvalidHopping(format!(
                "c must be positive (summability of p_r = eps*2^(-c r) requires c > 0), got {c}"
            )));
        }
        Ok(Self {
            kind: HoppingKind::Geometric { epsilon, c },
            n,
        })
    }

    /// Explicit list `values = (p_1, …, p_L)`, zero beyond `L`. The declared
    /// envelope `(ε, c)` is checked at construction.
    pub fn explicit(values: Vec<f64>, epsilon: f64, c: f64, n: usize) -> Result<Self> {
        if !(epsilon > 0.0) || !(c > 0.0) {
            return Err(HrgError::InvalidHopping(
                "declared envelope requires epsilon > 0 and c > 0".into(),
            ));
        }
        for (i, &p) in values.iter().enumerate() {
            let r = i + 1;
            let bound = epsilon * 2f64.powf(-c * r as f64);
            if !p.is_finite() || p.abs() > bound * (1.0 + 1e-12) {
                return Err(HrgError::InvalidHopping(format!(
                    "|p_{r}| = {} violates the declared bound eps*2^(-c r) = {bound}",
                    p.abs()
                )));
            }
        }
        Ok(Self {
            kind: HoppingKind::Explicit { values, epsilon, c },
            n,
        })
    }

    /// `p_r` for `r ≥ 1`.
    pub fn p(&self, r: usize) -> f64 {
        debug_assert!(r >= 1);
        match &self.kind {
            HoppingKind::Geometric { epsilon, c } => epsilon * 2f64.powf(-c * r as f64),
            HoppingKind::Explicit { values, .. } => values.get(r - 1).copied().unwrap_or(0.0),
        }
    }

    /// Partial sum `λ_r = p_1 + … + p_r` (an eigenvalue of Δ).
    pub fn lambda(&self, r: usize) -> f64 {
        (1..=r).map(|s| self.p(s)).sum()
    }

    /// `λ_∞ = Σ_{r≥1} p_r`.
    pub fn lambda_inf(&self) -> f64 {
        match &self.kind {
            HoppingKind::Geometric { epsilon, c } => {
                let q = 2f64.powf(-c);
                epsilon * q / (1.0 - q)
            }
            HoppingKind::Explicit { values, .. } => values.iter().sum(),
        }
    }

    /// Tail coefficient `α_n = Σ_{r>n} 2^{n−r} p_r`.
    ///
    /// Geometric hoppings use the closed form
    /// `ε·2^{−cn}·2^{−(1+c)}/(1 − 2^{−(1+c)})`; explicit lists are finite so
    /// the sum is exact (remainder zero past the list).
    pub fn alpha(&self) -> f64 {
        self.alpha_at(self.n)
    }

    pub fn alpha_at(&self, n: usize) -> f64 {
        match &self.kind {
            HoppingKind::Geometric { epsilon, c } => {
                let q = 2f64.powf(-(1.0 + c));
                epsilon * 2f64.powf(-c * n as f64) * q / (1.0 - q)
            }
            HoppingKind::Explicit { values, .. } => values
                .iter()
                .enumerate()
                .map(|(i, &p)| (i + 1, p))
                .filter(|&(r, _)| r > n)
                .map(|(r, p)| 2f64.powi(n as i32 - r as i32) * p)
                .sum(),
        }
    }

    /// The renormalized hopping `(Rp)_r = p_{r+1}` at scale `n − 1`.
    /// For the geometric family this is again geometric with `ε' = ε·2^{−c}`.
    pub fn shifted(&self) -> Result<Self> {
        if self.n == 0 {
            return Err(HrgError::InvalidHopping(
                "cannot renormalize a scale-0 model".into(),
            ));
        }
        let kind = match &self.kind {
            HoppingKind::Geometric { epsilon, c } => HoppingKind::Geometric {
                epsilon: epsilon * 2f64.powf(-c),
                c: *c,
            },
            HoppingKind::Explicit { values, epsilon, c } => HoppingKind::Explicit {
                values: values.iter().skip(1).copied().collect(),
                epsilon: epsilon * 2f64.powf(-c),
                c: *c,
            },
        };
        Ok(Self {
            kind,
            n: self.n - 1,
        })
    }

    /// Highest level entering the operator in the given mode.
    pub fn top_level(&self, mode: LaplacianMode) -> Result<usize> {
        match mode {
            LaplacianMode::TailCorrected => Ok(self.n),
            LaplacianMode::Truncated { m } => {
                if m > self.n {
                    Err(HrgError::TruncationOutOfRange { m, n: self.n })
                } else {
                    Ok(m)
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }
}

fn check_len(psi: &[f64], n: usize) -> Result<()> {
    if psi.len() != 1 << n {
        return Err(HrgError::LengthMismatch { len: psi.len(), n });
    }
    Ok(())
}

/// Apply the averaging operator `E_r`: replace every entry by the mean of
/// its `P_r` block. Runs in `O(2^n)` via block partial sums.
pub fn apply_averaging(r: usize, psi: &[f64], n: usize) -> Result<Vec<f64>> {
    check_len(psi, n)?;
    if r > n {
        return Err(HrgError::LevelOutOfRange { level: r, n });
    }
    if r == 0 {
        return Ok(psi.to_vec());
    }
    let block = 1 << r;
    let inv = 1.0 / block as f64;
    let mut out = vec![0.0; psi.len()];
    for (b, chunk) in psi.chunks_exact(block).enumerate() {
        let mean = chunk.iter().sum::<f64>() * inv;
        out[b * block..(b + 1) * block].fill(mean);
    }
    Ok(out)
}

/// Apply the hierarchical Laplacian in the requested mode. One bottom-up
/// pass builds block sums for all levels, one top-down pass accumulates
/// `Σ_r p_r 2^{−r} S_r`; total time `O(2^n)`.
///
/// Tail-corrected mode adds `α_n ⟨φ_n, ψ⟩ φ_n` with `φ_n = 2^{−n/2}·1`.
pub fn apply_laplacian(h: &HoppingModel, mode: LaplacianMode, psi: &[f64]) -> Result<Vec<f64>> {
    let n = h.n;
    check_len(psi, n)?;
    if psi.iter().any(|x| !x.is_finite()) {
        return Err(HrgError::NonFiniteInput);
    }
    let top = h.top_level(mode)?;

    // Bottom-up block sums: sums[r][b] = sum of psi over the b-th block of P_r.
    let mut sums: Vec<Vec<f64>> = Vec::with_capacity(top + 1);
    sums.push(psi.to_vec());
    for r in 1..=top {
        let prev = &sums[r - 1];
        let mut cur = vec![0.0; prev.len() / 2];
        for b in 0..cur.len() {
            cur[b] = prev[2 * b] + prev[2 * b + 1];
        }
        sums.push(cur);
    }

    if top == 0 {
        // No hopping levels; only the (possible) rank-one tail term remains.
        return Ok(match mode {
            LaplacianMode::TailCorrected => {
                let total: f64 = psi.iter().sum();
                let val = h.alpha() * 2f64.powi(-(n as i32)) * total;
                vec![val; psi.len()]
            }
            LaplacianMode::Truncated { .. } => vec![0.0; psi.len()],
        });
    }

    // Top-down accumulation of per-level means times p_r.
    // acc[b] at level r holds Σ_{s ≥ r} p_s 2^{−s} S_s restricted to block b.
    let mut acc = vec![0.0; sums[top].len()];
    for (b, a) in acc.iter_mut().enumerate() {
        *a = h.p(top) * 2f64.powi(-(top as i32)) * sums[top][b];
    }
    if matches!(mode, LaplacianMode::TailCorrected) {
        // α_n 2^{−n} (Σ ψ) on every entry; the level-n block is global.
        acc[0] += h.alpha() * 2f64.powi(-(n as i32)) * sums[n][0];
    }
    let mut level = top;
    while level > 1 {
        level -= 1;
        let mut next = vec![0.0; sums[level].len()];
        let w = h.p(level) * 2f64.powi(-(level as i32));
        for (b, x) in next.iter_mut().enumerate() {
            *x = acc[b / 2] + w * sums[level][b];
        }
        acc = next;
    }

    // acc now lives at level 1 (pair blocks).
    let mut out = vec![0.0; psi.len()];
    for (j, o) in out.iter_mut().enumerate() {
        *o = acc[j >> 1];
    }
    Ok(out)
}

/// Dense symmetric matrix of the Laplacian; entry `(j,k)` is
/// `Σ_{r ≥ max(1, d(j,k))} p_r 2^{−r}` restricted to the mode, plus
/// `α_n 2^{−n}` everywhere in tail-corrected mode.
pub fn assemble_dense_laplacian(
    h: &HoppingModel,
    mode: LaplacianMode,
    cap: usize,
) -> Result<faer::Mat<f64>> {
    let size = h.dim();
    if size > cap {
        return Err(HrgError::DenseCapExceeded { size, cap });
    }
    let top = h.top_level(mode)?;
    // suffix[d] = Σ_{r = max(1,d)}^{top} p_r 2^{−r}
    let mut suffix = vec![0.0; top + 2];
    for r in (1..=top).rev() {
        suffix[r] = suffix[r + 1] + h.p(r) * 2f64.powi(-(r as i32));
    }
    suffix[0] = suffix[1];
    let tail = if matches!(mode, LaplacianMode::TailCorrected) {
        h.alpha() * 2f64.powi(-(h.n as i32))
    } else {
        0.0
    };
    let mat = faer::Mat::from_fn(size, size, |j, k| {
        let d = hier_distance(j, k);
        let levels = if d <= top { suffix[d] } else { 0.0 };
        levels + tail
    });
    Ok(mat)
}

/// Closed-form spectrum of the Laplacian as `(eigenvalue, multiplicity)`
/// pairs ordered by level: `λ_0 = 0` with multiplicity `2^{n−1}`,
/// `λ_r = p_1 + … + p_r` with multiplicity `2^{n−r−1}` for `1 ≤ r < n`, and
/// the top eigenvalue `λ_n` (plus `α_n` in tail-corrected mode) simple.
///
/// In truncated mode with `m < n`, levels `m..n` collapse onto `λ_m`, i.e.
/// the eigenvalue `λ_m` has multiplicity `2^{n−m}` minus the deeper splits;
/// concretely the spectrum is that of scale-`m` blocks repeated `2^{n−m}`
/// times.
pub fn laplacian_eigensystem(h: &HoppingModel, mode: LaplacianMode) -> Result<Vec<(f64, usize)>> {
    let n = h.n;
    let top = h.top_level(mode)?;
    let copies = 1usize << (n - top);
    let mut out = Vec::new();
    if top == 0 {
        let lam = if matches!(mode, LaplacianMode::TailCorrected) {
            h.alpha()
        } else {
            0.0
        };
        out.push((lam, copies));
        return Ok(out);
    }
    // Spectrum of one scale-`top` block, each eigenvalue repeated per block.
    out.push((0.0, (1usize << (top - 1)) * copies));
    for r in 1..top {
        out.push((h.lambda(r), (1usize << (top - r - 1)) * copies));
    }
    let mut top_val = h.lambda(top);
    if matches!(mode, LaplacianMode::TailCorrected) {
        top_val += h.alpha();
    }
    out.push((top_val, copies));
    Ok(out)
}
