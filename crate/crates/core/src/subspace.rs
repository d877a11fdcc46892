//! Bias subspaces: per-set centering of defining words followed by PCA.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::vector;
use crate::wordsets::ResolvedCategory;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// A set of K direction vectors in `R^d`.
///
/// Subspaces produced by PCA or by [`crate::compose::josec_direction`] have
/// orthonormal rows. The SUM and MEAN baselines produce unit rows that are in
/// general not mutually orthogonal; [`BiasSubspace::is_orthonormal`] tells the
/// two apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSubspace {
    label: String,
    dim: usize,
    components: Vec<Vec<f64>>,
    /// Nonincreasing; empty when unknown (composed or deserialized subspaces).
    explained_variance: Vec<f64>,
}

impl BiasSubspace {
    pub fn new(
        label: impl Into<String>,
        components: Vec<Vec<f64>>,
        explained_variance: Vec<f64>,
    ) -> Result<Self> {
        let label = label.into();
        if label.is_empty() || label.chars().any(char::is_whitespace) {
            return Err(Error::Schema(format!(
                "subspace label {label:?} must be a single nonempty token"
            )));
        }
        let dim = components
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::ShapeMismatch("subspace needs at least one component".into()))?;
        if dim == 0 || components.iter().any(|c| c.len() != dim) {
            return Err(Error::ShapeMismatch(
                "subspace components must share a nonzero dimension".into(),
            ));
        }
        if components.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Schema("subspace has non-finite entries".into()));
        }
        if !explained_variance.is_empty() && explained_variance.len() != components.len() {
            return Err(Error::ShapeMismatch(
                "one explained variance per component".into(),
            ));
        }
        Ok(BiasSubspace {
            label,
            dim,
            components,
            explained_variance,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if label.is_empty() || label.chars().any(char::is_whitespace) {
            return Err(Error::Schema(format!(
                "subspace label {label:?} must be a single nonempty token"
            )));
        }
        self.label = label;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Largest deviation of the component Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (j, a) in self.components.iter().enumerate() {
            for (k, b) in self.components.iter().enumerate() {
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((vector::dot(a, b) - target).abs());
            }
        }
        worst
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        self.orthonormality_error() < tol
    }

    /// Text form: a `label K d` header followed by K rows of d values.
    ///
    /// Values carry 17 significant digits, so a round trip is bit-exact.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.label, self.k(), self.dim)?;
        let mut line = String::new();
        for c in &self.components {
            line.clear();
            for (i, x) in c.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{x:.16e}");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader
            .lines()
            .map(|l| l.map_err(|e| Error::Schema(e.to_string())))
            .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema("empty subspace file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [label, k, d] = fields.as_slice() else {
            return Err(Error::Schema(format!(
                "subspace header must be 'label K d', got {header:?}"
            )));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Schema(format!("invalid count '{s}' in subspace header")))
        };
        let (k, d) = (parse(k)?, parse(d)?);
        let mut components = Vec::with_capacity(k);
        for (row, line) in lines.enumerate() {
            let line = line?;
            let values = line
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::MalformedLine {
                        line: row + 2,
                        reason: format!("'{f}' is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != d {
                return Err(Error::DimensionMismatch {
                    line: row + 2,
                    expected: d,
                    found: values.len(),
                });
            }
            components.push(values);
        }
        if components.len() != k {
            return Err(Error::Schema(format!(
                "subspace header declares {k} components, found {}",
                components.len()
            )));
        }
        BiasSubspace::new(*label, components, Vec::new())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_text(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(std::io::BufReader::new(file))
    }
}

/// Result of a principal component analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub subspace: BiasSubspace,
    /// Number of components that were asked for.
    pub requested: usize,
    /// All singular values of the analysed matrix, largest first.
    pub singular_values: Vec<f64>,
}

impl Pca {
    /// Fewer nonzero singular values than requested components.
    pub fn rank_deficient(&self) -> bool {
        self.subspace.k() < self.requested
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaOptions {
    /// Additionally subtract the global row mean before the decomposition.
    pub double_center: bool,
}

/// Rows `w - mu_i` for every resolved word of every defining set, in spec order.
pub fn centered_differences(category: &ResolvedCategory, set: &EmbeddingSet) -> Result<DMatrix<f64>> {
    if let Some(i) = category.defining_sets.iter().position(Vec::is_empty) {
        return Err(Error::FatalValidation {
            category: category.name.clone(),
            sets: vec![i],
        });
    }
    let groups: Vec<Vec<&[f64]>> = category
        .defining_sets
        .iter()
        .map(|rows| rows.iter().map(|&i| set.row(i)).collect())
        .collect();
    centered_rows(&groups, set.dim())
}

/// Center each group on its own mean and stack the results.
pub fn centered_rows(groups: &[Vec<&[f64]>], dim: usize) -> Result<DMatrix<f64>> {
    let m: usize = groups.iter().map(Vec::len).sum();
    if m == 0 {
        return Err(Error::ZeroMatrix);
    }
    let mut out = DMatrix::zeros(m, dim);
    let mut r = 0;
    for group in groups {
        let mu = vector::mean(group.iter().copied(), dim);
        for w in group {
            if w.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "vector of length {} in a {dim}-dimensional group",
                    w.len()
                )));
            }
            for j in 0..dim {
                out[(r, j)] = w[j] - mu[j];
            }
            r += 1;
        }
    }
    Ok(out)
}

/// Top-`k` right singular directions of `m`.
///
/// Components are sign-fixed so their largest-magnitude coordinate is
/// positive; explained variance is `s^2 / (rows - 1)` (`s^2` for a single row).
/// When fewer than `k` singular values are nonzero the available components are
/// returned and [`Pca::rank_deficient`] reports it.
pub fn principal_components(
    m: &DMatrix<f64>,
    k: usize,
    label: &str,
    options: PcaOptions,
) -> Result<Pca> {
    let (rows, cols) = m.shape();
    let max_k = rows.min(cols);
    if k == 0 || k > max_k {
        return Err(Error::InvalidK { k, max: max_k });
    }
    let mut data = m.clone();
    if options.double_center {
        for j in 0..cols {
            let mean = data.column(j).sum() / rows as f64;
            data.column_mut(j).add_scalar_mut(-mean);
        }
    }
    if data.iter().all(|x| *x == 0.0) {
        return Err(Error::ZeroMatrix);
    }

    let svd = data.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let top = singular_values[0];
    if top == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let available = singular_values
        .iter()
        .take_while(|s| **s > top * RANK_TOLERANCE)
        .count();
    let take = k.min(available);
    if take < k {
        tracing::warn!(label, requested = k, available = take, "rank-deficient PCA input");
    }

    let denom = if rows > 1 { (rows - 1) as f64 } else { 1.0 };
    let mut components = Vec::with_capacity(take);
    let mut variance = Vec::with_capacity(take);
    for (&i, s) in order.iter().zip(&singular_values).take(take) {
        let mut c: Vec<f64> = v_t.row(i).iter().copied().collect();
        let n = vector::norm(&c);
        vector::scale(&mut c, 1.0 / n);
        vector::fix_sign(&mut c);
        components.push(c);
        variance.push(s * s / denom);
    }
    Ok(Pca {
        subspace: BiasSubspace::new(label, components, variance)?,
        requested: k,
        singular_values,
    })
}

/// Bias subspace of one category: centered defining sets followed by PCA.
pub fn bias_subspace(
    category: &ResolvedCategory,
    set: &EmbeddingSet,
    k: usize,
    options: PcaOptions,
) -> Result<Pca> {
    let m = centered_differences(category, set)?;
    principal_components(&m, k, &category.name, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn category(defining: Vec<Vec<usize>>) -> ResolvedCategory {
        ResolvedCategory {
            name: "c".into(),
            defining_sets: defining,
            equality_sets: vec![],
            target_words: vec![],
            attribute_sets: vec![],
        }
    }

    #[test]
    fn two_point_centering() {
        let set = EmbeddingSet::from_rows(vec!["a", "b"], vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        let m = centered_differences(&category(vec![vec![0, 1]]), &set).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, -0.5]);
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), vec![-0.5, 0.5]);
    }

    #[test]
    fn singleton_set_gives_zero_row_and_counts_add_up() {
        let set = EmbeddingSet::from_rows(
            vec!["a", "b", "c", "d", "e"],
            (0..5).map(|i| vec![i as f64, 1.0, -(i as f64)]).collect(),
        )
        .unwrap();
        let m = centered_differences(&category(vec![vec![2]]), &set).unwrap();
        assert!(m.iter().all(|x| *x == 0.0));
        let m = centered_differences(&category(vec![vec![0, 1], vec![2, 3, 4]]), &set).unwrap();
        assert_eq!(m.nrows(), 5);
        let err = centered_differences(&category(vec![vec![0], vec![]]), &set).unwrap_err();
        assert!(matches!(err, Error::FatalValidation { .. }));
    }

    #[test]
    fn symmetric_pair_sign_rule() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let pca = principal_components(&m, 1, "x", PcaOptions::default()).unwrap();
        assert_eq!(pca.subspace.component(0), &[1.0, 0.0]);
        assert!((pca.subspace.explained_variance()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_components_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let pca = principal_components(&m, 2, "x", PcaOptions::default()).unwrap();
        let b = &pca.subspace;
        assert!((b.component(0)[0] - 1.0).abs() < 1e-12 && b.component(0)[1].abs() < 1e-12);
        assert!((b.component(1)[1] - 1.0).abs() < 1e-12 && b.component(1)[0].abs() < 1e-12);
        let v = b.explained_variance();
        assert!((v[0] - 4.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        assert!(b.is_orthonormal(1e-12));
    }

    #[test]
    fn invalid_inputs() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        assert!(matches!(
            principal_components(&m, 3, "x", PcaOptions::default()),
            Err(Error::InvalidK { k: 3, max: 2 })
        ));
        assert!(matches!(
            principal_components(&m, 0, "x", PcaOptions::default()),
            Err(Error::InvalidK { .. })
        ));
        let zero = DMatrix::<f64>::zeros(3, 2);
        assert!(matches!(
            principal_components(&zero, 1, "x", PcaOptions::default()),
            Err(Error::ZeroMatrix)
        ));
    }

    #[test]
    fn rank_deficiency_returns_available_components() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        let pca = principal_components(&m, 2, "x", PcaOptions::default()).unwrap();
        assert!(pca.rank_deficient());
        assert_eq!(pca.subspace.k(), 1);
    }

    #[test]
    fn double_center_removes_global_mean() {
        // Rows share an offset along the second axis that only global centering removes.
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, -1.0, 5.0, 0.0, 5.0]);
        let plain = principal_components(&m, 1, "x", PcaOptions::default()).unwrap();
        assert!(plain.subspace.component(0)[1].abs() > 0.9);
        let centered =
            principal_components(&m, 1, "x", PcaOptions { double_center: true }).unwrap();
        assert!((centered.subspace.component(0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let a = vec![1.0 / 3.0, -2.0f64.sqrt() / 7.0, 1e-300];
        let b = vec![0.1, 0.2, -0.30000000000000004];
        let s = BiasSubspace::new("gender", vec![a, b], vec![]).unwrap();
        let mut buf = Vec::new();
        s.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("gender 2 3\n"));
        let back = BiasSubspace::read_text(&buf[..]).unwrap();
        for (x, y) in back.components().iter().flatten().zip(s.components().iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert!(BiasSubspace::read_text(&b"gender 2 3\n1 2 3\n"[..]).is_err());
        assert!(BiasSubspace::read_text(&b"gender 1 3\n1 2\n"[..]).is_err());
        assert!(BiasSubspace::new("two words", vec![vec![1.0]], vec![]).is_err());
    }
}
