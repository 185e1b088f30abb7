//! Automatic group construction from absolute correlations of the linear
//! predictors.
//!
//! Each observation's row of `|corr(η_i, η_j)|` is sorted in decreasing order
//! and cut into level sets of (numerically) equal values; the group of `i` is
//! the union of the first `m` level sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::approx::GaussianApprox;
use crate::error::{LgocvError, Result};
use crate::model::LgmModel;
use crate::sparse::{CsrMatrix, LdlFactor};

/// Which covariance of `η` drives the grouping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorrelationSource {
    /// Posterior covariance at the approximation's hyperparameters.
    Posterior,
    /// Prior covariance of the listed components only, the remaining ones
    /// being conditioned on.
    Prior(Vec<usize>),
}

impl CorrelationSource {
    pub fn describe(&self, model: &LgmModel) -> String {
        match self {
            CorrelationSource::Posterior => "posterior".into(),
            CorrelationSource::Prior(comps) => {
                let names: Vec<&str> = comps.iter().map(|&c| model.components()[c].name.as_str()).collect();
                format!("prior({})", names.join(","))
            }
        }
    }
}

enum CovarianceOperator<'a> {
    Posterior(&'a GaussianApprox),
    Prior { factor: LdlFactor, correction: Option<(DMatrix<f64>, Cholesky<f64, Dyn>)> },
}

impl CovarianceOperator<'_> {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            CovarianceOperator::Posterior(approx) => approx.covariance_apply(v),
            CovarianceOperator::Prior { factor, correction } => {
                let mut x = factor.solve(v);
                if let Some((w, gram)) = correction {
                    let coef = gram.solve(&w.tr_mul(&DVector::from_column_slice(v)));
                    for (xi, ci) in x.iter_mut().zip((w * coef).iter()) {
                        *xi -= ci;
                    }
                }
                x
            }
        }
    }
}

/// Correlation rows computed on demand; only marginal standard deviations are
/// kept between rows.
pub struct CorrelationRows<'a> {
    design: CsrMatrix,
    op: CovarianceOperator<'a>,
    sd: Vec<f64>,
}

impl<'a> CorrelationRows<'a> {
    pub fn new(model: &LgmModel, approx: &'a GaussianApprox, source: &CorrelationSource) -> Result<Self> {
        let (design, op) = match source {
            CorrelationSource::Posterior => (model.design().clone(), CovarianceOperator::Posterior(approx)),
            CorrelationSource::Prior(comps) => prior_operator(model, approx, comps)?,
        };
        let n = design.nrows();
        let variances: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = op.apply(&design.row_dense(i));
                design.row_dot(i, &x)
            })
            .collect();
        let mut sd = Vec::with_capacity(n);
        for (i, v) in variances.into_iter().enumerate() {
            // Relative floor: a variance at rounding level is a zero variance.
            if !(v > 0.0) || !v.is_finite() {
                return Err(LgocvError::ZeroVariance { index: i });
            }
            sd.push(v.sqrt());
        }
        let max_sd = sd.iter().cloned().fold(0.0, f64::max);
        if let Some(i) = sd.iter().position(|&s| s <= 1e-7 * max_sd) {
            return Err(LgocvError::ZeroVariance { index: i });
        }
        Ok(Self { design, op, sd })
    }

    pub fn len(&self) -> usize {
        self.sd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sd.is_empty()
    }

    /// `|corr(η_i, η_j)|` for all `j`, clamped to `[0, 1]`, with the diagonal
    /// set to exactly 1.
    pub fn row(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.len() {
            return Err(LgocvError::IndexOutOfRange { index: i, n: self.len() });
        }
        let x = self.op.apply(&self.design.row_dense(i));
        let cov = self.design.mul_vec(&x);
        let si = self.sd[i];
        let mut row: Vec<f64> = cov.iter().zip(&self.sd).map(|(c, sj)| (c / (si * sj)).abs().min(1.0)).collect();
        row[i] = 1.0;
        Ok(row)
    }
}

fn prior_operator<'a>(
    model: &LgmModel,
    approx: &GaussianApprox,
    comps: &[usize],
) -> Result<(CsrMatrix, CovarianceOperator<'a>)> {
    if comps.is_empty() {
        return Err(LgocvError::Config("prior correlation subset is empty".into()));
    }
    if let Some(&c) = comps.iter().find(|&&c| c >= model.components().len()) {
        return Err(LgocvError::Config(format!("unknown component index {c}")));
    }
    let cols = model.component_columns(comps);
    let mut map = vec![None; model.latent_size()];
    for (new, &old) in cols.iter().enumerate() {
        map[old] = Some(new);
    }
    let full = model.prior_precision_from_values(&approx.hypers)?;
    let mut sub = full.principal_submatrix(&cols);
    // Intrinsic blocks get a small relative jitter so the submatrix factorizes;
    // their null space is then removed by the constraint rows.
    let max_diag = sub.diagonal().into_iter().fold(0.0, f64::max);
    let mut jitter = Vec::new();
    for &c in comps {
        if model.components()[c].is_intrinsic() {
            let off = model.offset(c);
            for k in 0..model.components()[c].size {
                let j = map[off + k].expect("selected column");
                jitter.push((j, j, 1e-8 * max_diag));
            }
        }
    }
    if !jitter.is_empty() {
        let mut entries = jitter;
        for j in 0..sub.dim() {
            let (rows, vals) = sub.column(j);
            entries.extend(rows.iter().zip(vals).filter(|(&r, _)| r <= j).map(|(&r, &v)| (r, j, v)));
        }
        sub = crate::sparse::SymmetricMatrix::from_triplets(sub.dim(), &entries);
    }
    let factor = LdlFactor::new(&sub)?;

    let cons = model.constraints();
    let rows: Vec<usize> = (0..cons.len()).filter(|&r| cols.iter().any(|&j| cons.matrix[(r, j)] != 0.0)).collect();
    let correction = if rows.is_empty() {
        None
    } else {
        let k = rows.len();
        let mut w = DMatrix::zeros(cols.len(), k);
        let mut csub = DMatrix::zeros(k, cols.len());
        for (r, &row) in rows.iter().enumerate() {
            for (new, &old) in cols.iter().enumerate() {
                csub[(r, new)] = cons.matrix[(row, old)];
            }
            let rhs: Vec<f64> = csub.row(r).iter().copied().collect();
            w.set_column(r, &DVector::from_vec(factor.solve(&rhs)));
        }
        let gram = &csub * &w;
        let gram = Cholesky::new(0.5 * (&gram + gram.transpose())).ok_or(LgocvError::RankDeficientConstraints)?;
        Some((w, gram))
    };
    let design = model.design().select_columns(&map, cols.len());
    Ok((design, CovarianceOperator::Prior { factor, correction }))
}

/// Convenience wrapper computing a single row.
pub fn correlation_row(
    model: &LgmModel,
    approx: &GaussianApprox,
    source: &CorrelationSource,
    i: usize,
) -> Result<Vec<f64>> {
    CorrelationRows::new(model, approx, source)?.row(i)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupConfig {
    /// Number of level sets.
    pub m: usize,
    /// Relative tolerance under which two correlations count as equal.
    pub tie_tol: f64,
    /// Upper bound on group size; `None` means the number of observations.
    pub max_size: Option<usize>,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self { m: 3, tie_tol: 1e-8, max_size: None }
    }
}

/// Groups `I_i`, keyed by observation index (0-based), each sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub groups: BTreeMap<usize, Vec<usize>>,
    pub n: usize,
    pub m: Option<usize>,
    pub source: String,
    pub tie_tol: Option<f64>,
}

impl GroupSpec {
    /// `I_i = {i}` for the listed observations.
    pub fn singletons(n: usize, targets: &[usize]) -> Self {
        Self {
            groups: targets.iter().map(|&i| (i, vec![i])).collect(),
            n,
            m: None,
            source: "singletons".into(),
            tie_tol: None,
        }
    }

    pub fn get(&self, i: usize) -> Option<&[usize]> {
        self.groups.get(&i).map(Vec::as_slice)
    }

    pub fn all_singletons(&self) -> bool {
        self.groups.iter().all(|(i, g)| g.as_slice() == [*i])
    }

    /// One line `i: j1 j2 …` per group, 1-indexed, after `#!` header lines
    /// recording how the groups were made.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#! source = {}", self.source);
        if let Some(m) = self.m {
            let _ = writeln!(out, "#! m = {m}");
        }
        if let Some(t) = self.tie_tol {
            let _ = writeln!(out, "#! tie_tol = {t:e}");
        }
        for (i, g) in &self.groups {
            let _ = write!(out, "{}:", i + 1);
            for j in g {
                let _ = write!(out, " {}", j + 1);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`GroupSpec::to_text`]. Blank lines and
    /// `#` comments are ignored.
    pub fn from_text(text: &str, n: usize) -> Result<Self> {
        let mut groups = BTreeMap::new();
        let (mut source, mut m, mut tie_tol) = ("file".to_owned(), None, None);
        for (ln, raw) in text.lines().enumerate() {
            let err = |message: String| LgocvError::Parse { line: ln + 1, message };
            if let Some(meta) = raw.trim().strip_prefix("#!") {
                let (key, value) = meta.split_once('=').ok_or_else(|| err("expected `#! key = value`".into()))?;
                let value = value.trim();
                match key.trim() {
                    "source" => source = value.to_owned(),
                    "m" => m = Some(value.parse().map_err(|_| err(format!("`{value}` is not a level-set count")))?),
                    "tie_tol" => tie_tol = Some(value.parse().map_err(|_| err(format!("`{value}` is not a number")))?),
                    other => return Err(err(format!("unknown header key `{other}`"))),
                }
                continue;
            }
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (head, tail) = line.split_once(':').ok_or_else(|| err("expected `i: j1 j2 ...`".into()))?;
            let parse = |tok: &str| -> Result<usize> {
                let v: usize = tok.parse().map_err(|_| err(format!("`{tok}` is not a positive integer")))?;
                if v == 0 || v > n {
                    return Err(err(format!("index {v} out of range 1..={n}")));
                }
                Ok(v - 1)
            };
            let i = parse(head.trim())?;
            let mut members = tail.split_whitespace().map(parse).collect::<Result<Vec<_>>>()?;
            members.sort_unstable();
            members.dedup();
            if members.binary_search(&i).is_err() {
                return Err(err(format!("group of observation {} does not contain it", i + 1)));
            }
            if groups.insert(i, members).is_some() {
                return Err(err(format!("observation {} has more than one group", i + 1)));
            }
        }
        Ok(Self { groups, n, m, source, tie_tol })
    }
}

/// Union of the first `m` level sets of a correlation row.
pub fn group_from_row(row: &[f64], i: usize, cfg: &GroupConfig) -> Vec<usize> {
    let cap = cfg.max_size.unwrap_or(row.len()).max(1);
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let mut group = Vec::new();
    let mut pos = 0;
    let mut levels = 0;
    while pos < order.len() && levels < cfg.m {
        let lead = row[order[pos]];
        let mut end = pos + 1;
        while end < order.len() && row[order[end]] >= lead * (1.0 - cfg.tie_tol) {
            end += 1;
        }
        if levels > 0 && group.len() + (end - pos) > cap {
            log::warn!(
                "group of observation {} stopped at {} level sets: the next one would exceed {cap} members",
                i + 1,
                levels
            );
            break;
        }
        group.extend_from_slice(&order[pos..end]);
        levels += 1;
        pos = end;
    }
    if !group.contains(&i) {
        // Only possible when self-correlation ties are broken unusually.
        group.push(i);
    }
    group.sort_unstable();
    group
}

/// Groups for every observation in `targets`.
pub fn build_groups(rows: &CorrelationRows, targets: &[usize], cfg: &GroupConfig, source: String) -> Result<GroupSpec> {
    if cfg.m == 0 {
        return Err(LgocvError::Config("number of level sets must be at least 1".into()));
    }
    let built =
        targets.par_iter().map(|&i| Ok((i, group_from_row(&rows.row(i)?, i, cfg)))).collect::<Result<Vec<_>>>()?;
    Ok(GroupSpec {
        groups: built.into_iter().collect(),
        n: rows.len(),
        m: Some(cfg.m),
        source,
        tie_tol: Some(cfg.tie_tol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn level_sets_with_ties() {
        let row = [0.5, 1.0, 0.5, 0.25, 1.0 - 1e-12, 0.1];
        let cfg = |m| GroupConfig { m, ..GroupConfig::default() };
        assert_eq!(group_from_row(&row, 1, &cfg(1)), vec![1, 4]);
        assert_eq!(group_from_row(&row, 1, &cfg(2)), vec![0, 1, 2, 4]);
        assert_eq!(group_from_row(&row, 1, &cfg(3)), vec![0, 1, 2, 3, 4]);
        assert_eq!(group_from_row(&row, 1, &cfg(10)), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn cap_stops_at_complete_level_sets() {
        let row = [1.0, 0.5, 0.5, 0.5, 0.2];
        let cfg = GroupConfig { m: 3, tie_tol: 1e-8, max_size: Some(3) };
        assert_eq!(group_from_row(&row, 0, &cfg), vec![0]);
    }

    #[test]
    fn group_text_round_trip() {
        let mut spec = GroupSpec::singletons(4, &[0, 3]);
        spec.groups.insert(1, vec![0, 1, 2]);
        spec.m = Some(2);
        spec.tie_tol = Some(1e-8);
        let text = spec.to_text();
        assert_eq!(text, "#! source = singletons\n#! m = 2\n#! tie_tol = 1e-8\n1: 1\n2: 1 2 3\n4: 4\n");
        assert_eq!(GroupSpec::from_text(&text, 4).unwrap(), spec);
        let plain = GroupSpec::from_text("# hand made\n2: 1 2\n", 4).unwrap();
        assert_eq!((plain.source.as_str(), plain.m), ("file", None));
        assert!(GroupSpec::from_text("#! colour = red", 4).is_err());
        assert!(GroupSpec::from_text("1: 2", 4).is_err());
        assert!(GroupSpec::from_text("5: 5", 4).is_err());
        assert!(matches!(GroupSpec::from_text("\n1 2", 4), Err(LgocvError::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn groups_nested_in_m(vals in proptest::collection::vec(0.0f64..1.0, 2..40), i in 0usize..40) {
            let i = i % vals.len();
            let mut row: Vec<f64> = vals.iter().map(|v| (v * 8.0).round() / 8.0).collect();
            row[i] = 1.0;
            let mut prev: Vec<usize> = Vec::new();
            for m in 1..6 {
                let g = group_from_row(&row, i, &GroupConfig { m, ..GroupConfig::default() });
                prop_assert!(g.contains(&i));
                prop_assert!(prev.iter().all(|j| g.contains(j)));
                prev = g;
            }
        }

        #[test]
        fn groups_equivariant_under_relabeling(vals in proptest::collection::vec(0.0f64..1.0, 2..30), seed in 0u64..1000) {
            let n = vals.len();
            let mut row: Vec<f64> = vals.iter().map(|v| (v * 6.0).round() / 6.0).collect();
            row[0] = 1.0;
            // A deterministic permutation from the seed.
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for k in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(k, (s >> 33) as usize % (k + 1));
            }
            let mut permuted = vec![0.0; n];
            for j in 0..n {
                permuted[perm[j]] = row[j];
            }
            let cfg = GroupConfig { m: 2, tie_tol: 0.0, max_size: None };
            let g = group_from_row(&row, 0, &cfg);
            let mut mapped: Vec<usize> = g.iter().map(|&j| perm[j]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, group_from_row(&permuted, perm[0], &cfg));
        }
    }
}
