//! One subspace for several categories at once.
//!
//! Three compositions are provided: the SUM and MEAN baselines, which add the
//! component matrices of the individual subspaces, and the intersection
//! direction: the unit vector `u` maximising `sum_i sum_k (u . v_ik)^2` over all
//! components `v_ik` of all category subspaces. Maximising that sum is the same
//! as minimising the summed squared distance from `u` to every subspace, and its
//! solution is the dominant (uncentered) principal direction of the stacked
//! components.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::subspace::{bias_subspace, principal_components, BiasSubspace, PcaOptions};
use crate::vector;
use crate::wordsets::ResolvedCategory;

/// Unit-norm tolerance for direction arguments.
pub const UNIT_TOLERANCE: f64 = 1e-10;
/// Relative gap between the top two singular values below which the
/// intersection direction is reported as a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;
/// Orthonormality tolerance for subspace arguments.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    Sum,
    Mean,
    Josec,
}

impl Composition {
    pub fn label(self) -> &'static str {
        match self {
            Composition::Sum => "SUM",
            Composition::Mean => "MEAN",
            Composition::Josec => "JOSEC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionResult {
    pub subspace: BiasSubspace,
    pub strategy: Composition,
    /// Value of the summed squared projection at the returned direction (JOSEC only).
    pub objective_value: Option<f64>,
    /// Distance from the direction to each input subspace (JOSEC only).
    pub per_category_distance: Vec<f64>,
    /// The top two singular values coincide, so the direction is not unique.
    pub degenerate_tie: bool,
}

fn check_same_shape(list: &[BiasSubspace], same_k: bool) -> Result<(usize, usize)> {
    let first = list
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no subspaces to compose".into()))?;
    for b in list {
        if b.dim() != first.dim() {
            return Err(Error::ShapeMismatch(format!(
                "'{}' has dimension {} but '{}' has {}",
                b.label(),
                b.dim(),
                first.label(),
                first.dim()
            )));
        }
        if same_k && b.k() != first.k() {
            return Err(Error::ShapeMismatch(format!(
                "'{}' has {} components but '{}' has {}",
                b.label(),
                b.k(),
                first.label(),
                first.k()
            )));
        }
    }
    Ok((first.k(), first.dim()))
}

fn linear_combination(list: &[BiasSubspace], weight: f64, label: &str) -> Result<BiasSubspace> {
    let (k, dim) = check_same_shape(list, true)?;
    let mut rows = vec![vec![0.0; dim]; k];
    for b in list {
        for (acc, c) in rows.iter_mut().zip(b.components()) {
            vector::axpy(weight, c, acc);
        }
    }
    for (i, r) in rows.iter_mut().enumerate() {
        let n = vector::norm(r);
        if n < 1e-12 {
            return Err(Error::ZeroRow(i));
        }
        // Rows are rescaled to unit length but deliberately not re-orthogonalized.
        vector::scale(r, 1.0 / n);
    }
    BiasSubspace::new(label, rows, Vec::new())
}

/// Entrywise sum of the component matrices, rows rescaled to unit length.
pub fn subspace_sum(list: &[BiasSubspace]) -> Result<BiasSubspace> {
    linear_combination(list, 1.0, Composition::Sum.label())
}

/// Entrywise mean of the component matrices, rows rescaled to unit length.
pub fn subspace_mean(list: &[BiasSubspace]) -> Result<BiasSubspace> {
    let n = list.len().max(1) as f64;
    linear_combination(list, 1.0 / n, Composition::Mean.label())
}

fn check_unit(u: &[f64]) -> Result<()> {
    let n = vector::norm(u);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NotUnit(n));
    }
    Ok(())
}

fn check_direction_args(u: &[f64], b: &BiasSubspace) -> Result<()> {
    check_unit(u)?;
    if u.len() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "direction has dimension {} but '{}' has {}",
            u.len(),
            b.label(),
            b.dim()
        )));
    }
    if !b.is_orthonormal(ORTHONORMAL_TOLERANCE) {
        return Err(Error::NotOrthonormal(b.label().to_string()));
    }
    Ok(())
}

fn squared_projection(u: &[f64], b: &BiasSubspace) -> f64 {
    b.components()
        .iter()
        .map(|v| {
            let p = vector::dot(u, v);
            p * p
        })
        .sum()
}

/// Shortest distance from unit vector `u` to the span of `b`: `sqrt(1 - sum_k (u . v_k)^2)`.
pub fn distance_to_subspace(u: &[f64], b: &BiasSubspace) -> Result<f64> {
    check_direction_args(u, b)?;
    Ok((1.0 - squared_projection(u, b)).clamp(0.0, 1.0).sqrt())
}

/// `sum_i sum_k (u . v_ik)^2`.
pub fn josec_objective(u: &[f64], list: &[BiasSubspace]) -> Result<f64> {
    let mut total = 0.0;
    for b in list {
        check_direction_args(u, b)?;
        total += squared_projection(u, b);
    }
    Ok(total)
}

/// The unit direction closest to all input subspaces.
pub fn josec_direction(list: &[BiasSubspace]) -> Result<CompositionResult> {
    let (_, dim) = check_same_shape(list, false)?;
    for b in list {
        if !b.is_orthonormal(ORTHONORMAL_TOLERANCE) {
            return Err(Error::NotOrthonormal(b.label().to_string()));
        }
    }
    let rows: Vec<&Vec<f64>> = list.iter().flat_map(|b| b.components()).collect();
    let stacked = DMatrix::from_row_iterator(rows.len(), dim, rows.iter().flat_map(|r| r.iter().copied()));

    // Uncentered: the stacked rows are directions through the origin.
    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s0 = svd.singular_values[order[0]];
    let degenerate_tie = order
        .get(1)
        .is_some_and(|&i| (s0 - svd.singular_values[i]) <= TIE_TOLERANCE * s0);
    if degenerate_tie {
        tracing::warn!("intersection direction is not unique (tied singular values)");
    }

    let mut u: Vec<f64> = v_t.row(order[0]).iter().copied().collect();
    let n = vector::norm(&u);
    vector::scale(&mut u, 1.0 / n);
    vector::fix_sign(&mut u);

    let objective = josec_objective(&u, list)?;
    let per_category_distance = list
        .iter()
        .map(|b| distance_to_subspace(&u, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompositionResult {
        subspace: BiasSubspace::new(Composition::Josec.label(), vec![u], vec![s0 * s0])?,
        strategy: Composition::Josec,
        objective_value: Some(objective),
        per_category_distance,
        degenerate_tie,
    })
}

/// Compose with the requested strategy.
pub fn compose(list: &[BiasSubspace], strategy: Composition) -> Result<CompositionResult> {
    match strategy {
        Composition::Josec => josec_direction(list),
        Composition::Sum | Composition::Mean => {
            let subspace = if strategy == Composition::Sum {
                subspace_sum(list)?
            } else {
                subspace_mean(list)?
            };
            Ok(CompositionResult {
                subspace,
                strategy,
                objective_value: None,
                per_category_distance: Vec::new(),
                degenerate_tie: false,
            })
        }
    }
}

/// Signed cosine between `u` and the first component of `b`.
pub fn direction_subspace_cosine(u: &[f64], b: &BiasSubspace) -> Result<f64> {
    check_direction_args(u, b)?;
    Ok(vector::dot(u, b.component(0)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisOptions {
    pub k: usize,
    pub seed: u64,
    pub random_vectors: usize,
    pub pca: PcaOptions,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions {
            k: 1,
            seed: 42,
            random_vectors: 10,
            pca: PcaOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub label: String,
    pub cosine: f64,
}

/// One subspace component projected to three dimensions for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedComponent {
    pub label: String,
    pub component_index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub ground_truth: String,
    pub k: usize,
    pub seed: u64,
    /// Cosine between each category subspace's first component and the ground truth.
    pub individual: Vec<Similarity>,
    pub random_scores: Vec<f64>,
    pub random_mean: f64,
    pub random_mean_abs: f64,
    pub josec: f64,
    pub josec_objective: f64,
    pub degenerate_tie: bool,
    pub projection: Vec<ProjectedComponent>,
}

/// Compare individual subspaces, random directions and the intersection
/// direction against a subspace built from intersectional defining sets.
pub fn validate_hypothesis(
    categories: &[ResolvedCategory],
    ground_truth: &ResolvedCategory,
    set: &EmbeddingSet,
    options: HypothesisOptions,
) -> Result<HypothesisReport> {
    let individual: Vec<BiasSubspace> = categories
        .iter()
        .map(|c| bias_subspace(c, set, options.k, options.pca).map(|p| p.subspace))
        .collect::<Result<_>>()?;
    let truth = bias_subspace(ground_truth, set, options.k, options.pca)?.subspace;
    let joint = josec_direction(&individual)?;
    let u = joint.subspace.component(0);

    let individual_scores = individual
        .iter()
        .map(|b| {
            Ok(Similarity {
                label: b.label().to_string(),
                cosine: direction_subspace_cosine(b.component(0), &truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let random_scores = (0..options.random_vectors)
        .map(|_| direction_subspace_cosine(&vector::random_unit(&mut rng, set.dim()), &truth))
        .collect::<Result<Vec<_>>>()?;
    let n = random_scores.len().max(1) as f64;
    let random_mean = random_scores.iter().sum::<f64>() / n;
    let random_mean_abs = random_scores.iter().map(|x| x.abs()).sum::<f64>() / n;

    let mut all = individual.clone();
    all.push(truth.clone());
    all.push(joint.subspace.clone());
    let projection = project_components(&all)?;

    Ok(HypothesisReport {
        ground_truth: truth.label().to_string(),
        k: options.k,
        seed: options.seed,
        individual: individual_scores,
        random_scores,
        random_mean,
        random_mean_abs,
        josec: direction_subspace_cosine(u, &truth)?,
        josec_objective: joint.objective_value.unwrap_or_default(),
        degenerate_tie: joint.degenerate_tie,
        projection,
    })
}

/// Project every component of every subspace onto the top three principal
/// directions of all components (globally centered). Missing axes are zero.
pub fn project_components(list: &[BiasSubspace]) -> Result<Vec<ProjectedComponent>> {
    let (_, dim) = check_same_shape(list, false)?;
    let rows: Vec<(&str, usize, &Vec<f64>)> = list
        .iter()
        .flat_map(|b| {
            b.components()
                .iter()
                .enumerate()
                .map(move |(i, c)| (b.label(), i, c))
        })
        .collect();
    let m = DMatrix::from_row_iterator(rows.len(), dim, rows.iter().flat_map(|r| r.2.iter().copied()));
    let mut centered = m.clone();
    for j in 0..dim {
        let mean = centered.column(j).sum() / rows.len() as f64;
        centered.column_mut(j).add_scalar_mut(-mean);
    }
    let k = 3.min(rows.len()).min(dim);
    let axes = match principal_components(&centered, k, "projection", PcaOptions::default()) {
        Ok(p) => p.subspace.components().to_vec(),
        Err(Error::ZeroMatrix) => Vec::new(),
        Err(e) => return Err(e),
    };
    Ok(rows
        .iter()
        .enumerate()
        .map(|(r, (label, index, _))| {
            let row: Vec<f64> = centered.row(r).iter().copied().collect();
            let coord = |a: usize| axes.get(a).map_or(0.0, |ax| vector::dot(&row, ax));
            ProjectedComponent {
                label: label.to_string(),
                component_index: *index,
                x: coord(0),
                y: coord(1),
                z: coord(2),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(label: &str, rows: Vec<Vec<f64>>) -> BiasSubspace {
        BiasSubspace::new(label, rows, vec![]).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn sum_and_mean_baselines() {
        let x = sub("a", vec![vec![1.0, 0.0]]);
        let y = sub("b", vec![vec![0.0, 1.0]]);
        let r = std::f64::consts::FRAC_1_SQRT_2;

        let same = subspace_sum(&[x.clone(), x.clone()]).unwrap();
        assert_eq!(same.component(0), &[1.0, 0.0]);
        assert_eq!(same.label(), "SUM");
        assert!(close(subspace_sum(&[x.clone(), y.clone()]).unwrap().component(0), &[r, r], 1e-15));

        let neg = sub("c", vec![vec![-1.0, 0.0]]);
        assert!(matches!(subspace_sum(&[x.clone(), neg]), Err(Error::ZeroRow(0))));

        assert_eq!(subspace_mean(&[x.clone(), x.clone()]).unwrap().component(0), x.component(0));
        assert!(close(subspace_mean(&[x.clone(), y.clone()]).unwrap().component(0), &[r, r], 1e-15));
        assert_eq!(subspace_mean(std::slice::from_ref(&x)).unwrap().components(), x.components());

        let two = sub("d", vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(subspace_sum(&[x, two]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn distance_examples() {
        let b = sub("b", vec![vec![1.0, 0.0, 0.0]]);
        assert_eq!(distance_to_subspace(&[1.0, 0.0, 0.0], &b).unwrap(), 0.0);
        assert_eq!(distance_to_subspace(&[0.0, 0.0, 1.0], &b).unwrap(), 1.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let d = distance_to_subspace(&[r, r, 0.0], &b).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            distance_to_subspace(&[2.0, 0.0, 0.0], &b),
            Err(Error::NotUnit(_))
        ));
    }

    #[test]
    fn objective_extremes_and_identity() {
        let a = sub("a", vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let b = sub("b", vec![vec![1.0, 0.0, 0.0]]);
        let list = [a.clone(), b.clone()];
        assert!((josec_objective(&[1.0, 0.0, 0.0], &list).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(josec_objective(&[0.0, 0.0, 1.0], &list).unwrap(), 0.0);
        let u = [0.6, 0.0, 0.8];
        let obj = josec_objective(&u, &list).unwrap();
        let via_distance: f64 = list
            .iter()
            .map(|b| 1.0 - distance_to_subspace(&u, b).unwrap().powi(2))
            .sum();
        assert!((obj - via_distance).abs() < 1e-15);
    }

    #[test]
    fn josec_single_direction_and_bisector() {
        let one = josec_direction(&[sub("a", vec![vec![1.0, 0.0, 0.0]])]).unwrap();
        assert!(close(one.subspace.component(0), &[1.0, 0.0, 0.0], 1e-15));
        assert!((one.objective_value.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(one.subspace.label(), "JOSEC");

        let r = std::f64::consts::FRAC_1_SQRT_2;
        let res = josec_direction(&[
            sub("a", vec![vec![1.0, 0.0, 0.0]]),
            sub("b", vec![vec![r, r, 0.0]]),
        ])
        .unwrap();
        let angle = std::f64::consts::PI / 8.0;
        assert!(close(res.subspace.component(0), &[angle.cos(), angle.sin(), 0.0], 1e-12));
        assert!(!res.degenerate_tie);
        assert_eq!(res.per_category_distance.len(), 2);
    }

    #[test]
    fn josec_reports_ties() {
        let res = josec_direction(&[
            sub("a", vec![vec![1.0, 0.0]]),
            sub("b", vec![vec![0.0, 1.0]]),
        ])
        .unwrap();
        assert!(res.degenerate_tie);
        assert!((res.subspace.component(0).iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn josec_rejects_non_orthonormal_inputs() {
        let skew = sub("s", vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert!(matches!(josec_direction(&[skew]), Err(Error::NotOrthonormal(_))));
    }

    #[test]
    fn cosine_examples() {
        let b = sub("b", vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(direction_subspace_cosine(&[0.0, 1.0], &b).unwrap(), 1.0);
        assert_eq!(direction_subspace_cosine(&[0.0, -1.0], &b).unwrap(), -1.0);
        assert_eq!(direction_subspace_cosine(&[1.0, 0.0], &b).unwrap(), 0.0);
    }

    #[test]
    fn projection_pads_missing_axes() {
        let a = sub("a", vec![vec![1.0, 0.0]]);
        let b = sub("b", vec![vec![0.0, 1.0]]);
        let p = project_components(&[a, b]).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|c| c.y == 0.0 && c.z == 0.0));
        assert!((p[0].x + p[1].x).abs() < 1e-15);
    }
}
