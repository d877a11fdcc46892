//! Hard-debiasing: neutralize and equalize against a bias subspace, applied
//! per category, sequentially over categories, or against a composed subspace.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compose::{compose, Composition};
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::subspace::{bias_subspace, BiasSubspace, PcaOptions};
use crate::vector;
use crate::wordsets::ResolvedCategory;

/// Norm below which a vector counts as lying inside the subspace.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-10;

/// `sum_k <w, b_k> b_k`
pub fn bias_component(w: &[f64], b: &BiasSubspace) -> Result<Vec<f64>> {
    if w.len() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "vector of dimension {} against subspace of dimension {}",
            w.len(),
            b.dim()
        )));
    }
    let mut out = vec![0.0; w.len()];
    for c in b.components() {
        vector::axpy(vector::dot(w, c), c, &mut out);
    }
    Ok(out)
}

/// Remove the bias component and rescale to unit length.
pub fn neutralize(w: &[f64], b: &BiasSubspace) -> Result<Vec<f64>> {
    let wb = bias_component(w, b)?;
    let mut out = vector::sub(w, &wb);
    let n = vector::norm(&out);
    if n <= CONTAINMENT_TOLERANCE {
        return Err(Error::FullyContained(String::new()));
    }
    vector::scale(&mut out, 1.0 / n);
    Ok(out)
}

fn neutralize_in_place(w: &mut [f64], b: &BiasSubspace) -> bool {
    let coeffs: Vec<f64> = b.components().iter().map(|c| vector::dot(w, c)).collect();
    let mut out = w.to_vec();
    for (c, p) in b.components().iter().zip(&coeffs) {
        vector::axpy(-p, c, &mut out);
    }
    let n = vector::norm(&out);
    if n <= CONTAINMENT_TOLERANCE {
        return false;
    }
    vector::scale(&mut out, 1.0 / n);
    w.copy_from_slice(&out);
    true
}

/// Equalize a group of vectors.
///
/// Every output is `(mu - mu_B) + sqrt(1 - |mu - mu_B|^2) (w_B - mu_B) / |w_B - mu_B|`,
/// so all members share the out-of-subspace part `mu - mu_B`. Errors name the
/// offending member by its position in `members`.
pub fn equalize_vectors(members: &[&[f64]], b: &BiasSubspace) -> Result<Vec<Vec<f64>>> {
    if members.len() < 2 {
        return Err(Error::EmptySet(format!(
            "equality set needs at least two words, got {}",
            members.len()
        )));
    }
    let dim = b.dim();
    let mu = vector::mean(members.iter().copied(), dim);
    let mu_b = bias_component(&mu, b)?;
    let nu = vector::sub(&mu, &mu_b);
    let nu_norm = vector::norm(&nu);
    let radicand = 1.0 - nu_norm * nu_norm;
    if radicand < -1e-12 {
        return Err(Error::RadicandNegative(nu_norm));
    }
    let scale = radicand.max(0.0).sqrt();

    members
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let wb = bias_component(w, b)?;
            let dir = vector::sub(&wb, &mu_b);
            let n = vector::norm(&dir);
            if n <= CONTAINMENT_TOLERANCE {
                return Err(Error::EqualizeDegenerate(i.to_string()));
            }
            let mut out = nu.clone();
            vector::axpy(scale / n, &dir, &mut out);
            Ok(out)
        })
        .collect()
}

/// Equalize the words of `words` (row indices into `set`).
pub fn equalize(words: &[usize], b: &BiasSubspace, set: &EmbeddingSet) -> Result<Vec<Vec<f64>>> {
    if !set.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let members: Vec<&[f64]> = words.iter().map(|&i| set.row(i)).collect();
    equalize_vectors(&members, b).map_err(|e| name_member(e, words, set))
}

fn name_member(e: Error, words: &[usize], set: &EmbeddingSet) -> Error {
    match e {
        Error::EqualizeDegenerate(pos) => {
            let word = pos
                .parse::<usize>()
                .ok()
                .and_then(|p| words.get(p))
                .map_or(pos, |&i| set.words()[i].clone());
            Error::EqualizeDegenerate(word)
        }
        other => other,
    }
}

/// Which words hard-debiasing neutralizes when no explicit list is given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeutralWords {
    /// Every vocabulary word outside all defining and equality sets.
    #[default]
    AllUnprotected,
    Explicit(Vec<String>),
}

/// Rows to neutralize and groups of rows to equalize.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPartition {
    pub neutral: Vec<usize>,
    pub equality_sets: Vec<Vec<usize>>,
}

impl WordPartition {
    /// Build a partition; `protected` rows are excluded from the default neutral set.
    pub fn new(
        set: &EmbeddingSet,
        neutral: &NeutralWords,
        protected: &BTreeSet<usize>,
        equality_sets: Vec<Vec<usize>>,
        lowercase_fallback: bool,
    ) -> Result<Self> {
        let neutral_rows: Vec<usize> = match neutral {
            NeutralWords::AllUnprotected => {
                (0..set.len()).filter(|i| !protected.contains(i)).collect()
            }
            NeutralWords::Explicit(words) => {
                let mut rows = BTreeSet::new();
                for w in words {
                    match set.resolve(w, lowercase_fallback) {
                        Some(i) => {
                            rows.insert(i);
                        }
                        None => tracing::warn!(word = %w, "neutral word not in vocabulary"),
                    }
                }
                rows.into_iter().collect()
            }
        };
        let equalized: BTreeSet<usize> = equality_sets.iter().flatten().copied().collect();
        let overlap: Vec<&str> = neutral_rows
            .iter()
            .filter(|i| equalized.contains(i))
            .map(|&i| set.words()[i].as_str())
            .collect();
        if !overlap.is_empty() {
            return Err(Error::InvalidPlan(format!(
                "words are both neutral and in an equality set: {}",
                overlap.join(", ")
            )));
        }
        Ok(WordPartition {
            neutral: neutral_rows,
            equality_sets,
        })
    }

    pub fn empty() -> Self {
        WordPartition {
            neutral: Vec::new(),
            equality_sets: Vec::new(),
        }
    }
}

/// What one hard-debiasing pass did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub subspace: String,
    pub k: usize,
    pub neutralized: usize,
    pub equalized_sets: usize,
    /// Neutral words left unchanged because they lie inside the subspace.
    pub fully_contained: Vec<String>,
    /// Equality sets skipped, with the reason.
    pub skipped_equality_sets: Vec<String>,
    pub rank_deficient: bool,
}

impl StepReport {
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for w in &self.fully_contained {
            out.push(format!("{}: '{w}' lies inside the subspace; left unchanged", self.subspace));
        }
        for s in &self.skipped_equality_sets {
            out.push(format!("{}: equality set skipped: {s}", self.subspace));
        }
        if self.rank_deficient {
            out.push(format!(
                "{}: fewer nonzero components than requested ({} available)",
                self.subspace, self.k
            ));
        }
        out
    }

    /// Numerical degeneracies that a strict run treats as fatal.
    pub fn has_degeneracy(&self) -> bool {
        !self.fully_contained.is_empty() || !self.skipped_equality_sets.is_empty() || self.rank_deficient
    }
}

/// Neutralize and equalize `set` against `b`. Rows outside the partition are copied.
pub fn hard_debias(
    set: &EmbeddingSet,
    b: &BiasSubspace,
    partition: &WordPartition,
) -> Result<(EmbeddingSet, StepReport)> {
    if !set.is_normalized() {
        return Err(Error::NotNormalized);
    }
    if set.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embeddings have dimension {} but '{}' has {}",
            set.dim(),
            b.label(),
            b.dim()
        )));
    }
    let dim = set.dim();
    let mut report = StepReport {
        subspace: b.label().to_string(),
        k: b.k(),
        ..Default::default()
    };
    let mut mask = vec![false; set.len()];
    for &i in &partition.neutral {
        mask[i] = true;
    }

    let mut data = set.as_slice().to_vec();
    let contained: Vec<usize> = data
        .par_chunks_mut(dim)
        .enumerate()
        .filter_map(|(i, row)| (mask[i] && !neutralize_in_place(row, b)).then_some(i))
        .collect();
    report.neutralized = partition.neutral.len() - contained.len();
    report.fully_contained = contained.iter().map(|&i| set.words()[i].clone()).collect();

    for words in &partition.equality_sets {
        let names = || words.iter().map(|&i| set.words()[i].as_str()).join(",");
        if words.len() < 2 {
            report
                .skipped_equality_sets
                .push(format!("{{{}}}: fewer than two words in the vocabulary", names()));
            continue;
        }
        let members: Vec<&[f64]> = words.iter().map(|&i| &data[i * dim..(i + 1) * dim]).collect();
        match equalize_vectors(&members, b) {
            Ok(rows) => {
                for (&i, row) in words.iter().zip(rows) {
                    data[i * dim..(i + 1) * dim].copy_from_slice(&row);
                }
                report.equalized_sets += 1;
            }
            Err(e @ (Error::EqualizeDegenerate(_) | Error::RadicandNegative(_))) => {
                let e = name_member(e, words, set);
                report.skipped_equality_sets.push(format!("{{{}}}: {e}", names()));
            }
            Err(e) => return Err(e),
        }
    }
    for w in report.warnings() {
        tracing::warn!("{w}");
    }

    let unit = data
        .chunks_exact(dim)
        .all(|r| (vector::norm(r) - 1.0).abs() <= 1e-6);
    Ok((set.with_data(data, unit), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Single,
    #[serde(alias = "sequential")]
    Seq,
    Sum,
    Mean,
    Josec,
}

impl Strategy {
    pub fn composition(self) -> Option<Composition> {
        match self {
            Strategy::Sum => Some(Composition::Sum),
            Strategy::Mean => Some(Composition::Mean),
            Strategy::Josec => Some(Composition::Josec),
            Strategy::Single | Strategy::Seq => None,
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Strategy::Single),
            "seq" | "sequential" => Ok(Strategy::Seq),
            "sum" => Ok(Strategy::Sum),
            "mean" => Ok(Strategy::Mean),
            "josec" => Ok(Strategy::Josec),
            other => Err(Error::InvalidPlan(format!("unknown strategy '{other}'"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Single => "single",
            Strategy::Seq => "seq",
            Strategy::Sum => "sum",
            Strategy::Mean => "mean",
            Strategy::Josec => "josec",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// The order in which categories were given.
    #[default]
    AsGiven,
    Explicit(Vec<String>),
    /// Every permutation, one output per order.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebiasPlan {
    pub strategy: Strategy,
    /// One entry per category, or a single entry shared by all.
    pub k: Vec<usize>,
    #[serde(default)]
    pub order: Ordering,
    #[serde(default)]
    pub neutral: NeutralWords,
    /// Sequential only: compute every subspace on the input embeddings instead
    /// of on the output of the previous step.
    #[serde(default)]
    pub frozen_subspaces: bool,
    #[serde(default)]
    pub pca: PcaOptions,
    #[serde(default)]
    pub lowercase_fallback: bool,
}

impl DebiasPlan {
    pub fn new(strategy: Strategy, k: usize) -> Self {
        DebiasPlan {
            strategy,
            k: vec![k],
            order: Ordering::AsGiven,
            neutral: NeutralWords::AllUnprotected,
            frozen_subspaces: false,
            pca: PcaOptions::default(),
            lowercase_fallback: false,
        }
    }

    fn k_for(&self, category: usize) -> usize {
        if self.k.len() == 1 {
            self.k[0]
        } else {
            self.k[category]
        }
    }

    /// Check the plan against the categories it will run on; returns the
    /// category orders to execute (indices into `categories`).
    pub fn validate(&self, categories: &[ResolvedCategory]) -> Result<Vec<Vec<usize>>> {
        if categories.is_empty() {
            return Err(Error::InvalidPlan("no categories given".into()));
        }
        let names: Vec<&str> = categories.iter().map(|c| c.name.as_str()).collect();
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            return Err(Error::InvalidPlan(format!(
                "category names must be unique: {}",
                names.join(", ")
            )));
        }
        if self.k.is_empty() || (self.k.len() != 1 && self.k.len() != categories.len()) {
            return Err(Error::InvalidPlan(format!(
                "expected 1 or {} component counts, got {}",
                categories.len(),
                self.k.len()
            )));
        }
        if self.k.contains(&0) {
            return Err(Error::InvalidK { k: 0, max: usize::MAX });
        }
        if self.strategy == Strategy::Single && categories.len() != 1 {
            return Err(Error::InvalidPlan(format!(
                "'single' debiases exactly one category, got {}",
                categories.len()
            )));
        }
        if self.strategy != Strategy::Seq && self.order != Ordering::AsGiven {
            return Err(Error::InvalidPlan(
                "category order only applies to the 'seq' strategy".into(),
            ));
        }
        let n = categories.len();
        Ok(match &self.order {
            Ordering::AsGiven => vec![(0..n).collect()],
            Ordering::All => (0..n).permutations(n).collect(),
            Ordering::Explicit(order) => {
                let idx: Vec<usize> = order
                    .iter()
                    .map(|o| {
                        names.iter().position(|n| n == o).ok_or_else(|| {
                            Error::InvalidPlan(format!("unknown category '{o}' in order"))
                        })
                    })
                    .collect::<Result<_>>()?;
                let mut sorted = idx.clone();
                sorted.sort_unstable();
                if sorted != (0..n).collect::<Vec<_>>() {
                    return Err(Error::InvalidPlan(format!(
                        "order must be a permutation of {}",
                        names.join(",")
                    )));
                }
                vec![idx]
            }
        })
    }
}

/// Summary of a composed subspace used by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSummary {
    pub strategy: Composition,
    pub objective_value: Option<f64>,
    pub per_category_distance: Vec<f64>,
    pub degenerate_tie: bool,
}

/// One debiased embedding set and how it was produced.
#[derive(Debug, Clone)]
pub struct DebiasRun {
    /// `single`, `seq`, `sum`, `mean` or `josec`, with the order appended for sequences.
    pub label: String,
    pub order: Vec<String>,
    pub set: EmbeddingSet,
    pub steps: Vec<StepReport>,
    pub subspaces: Vec<BiasSubspace>,
    pub composition: Option<CompositionSummary>,
}

impl DebiasRun {
    pub fn warnings(&self) -> Vec<String> {
        let mut out: Vec<String> = self.steps.iter().flat_map(StepReport::warnings).collect();
        if self.composition.as_ref().is_some_and(|c| c.degenerate_tie) {
            out.push("intersection direction is not unique (tied singular values)".into());
        }
        out
    }

    pub fn has_degeneracy(&self) -> bool {
        self.steps.iter().any(StepReport::has_degeneracy)
            || self.composition.as_ref().is_some_and(|c| c.degenerate_tie)
    }
}

fn protected_rows(categories: &[ResolvedCategory]) -> BTreeSet<usize> {
    categories.iter().flat_map(|c| c.protected_rows()).collect()
}

/// Debias one category at a time in `order`.
///
/// Unless `plan.frozen_subspaces` is set, each step recomputes its category's
/// subspace on the embeddings produced by the previous step.
pub fn sequential_debias(
    set: &EmbeddingSet,
    categories: &[ResolvedCategory],
    order: &[usize],
    plan: &DebiasPlan,
) -> Result<DebiasRun> {
    let protected = protected_rows(categories);
    let frozen: Option<Vec<_>> = if plan.frozen_subspaces {
        Some(
            order
                .iter()
                .map(|&c| bias_subspace(&categories[c], set, plan.k_for(c), plan.pca))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let mut current = set.clone();
    let mut steps = Vec::with_capacity(order.len());
    let mut subspaces = Vec::with_capacity(order.len());
    for (step, &c) in order.iter().enumerate() {
        let category = &categories[c];
        let pca = match &frozen {
            Some(all) => all[step].clone(),
            None => bias_subspace(category, &current, plan.k_for(c), plan.pca)?,
        };
        let partition = WordPartition::new(
            &current,
            &plan.neutral,
            &protected,
            category.equality_sets.clone(),
            plan.lowercase_fallback,
        )?;
        let (next, mut report) = hard_debias(&current, &pca.subspace, &partition)?;
        report.rank_deficient = pca.rank_deficient();
        steps.push(report);
        subspaces.push(pca.subspace);
        current = next;
    }
    let names: Vec<String> = order.iter().map(|&c| categories[c].name.clone()).collect();
    Ok(DebiasRun {
        label: if plan.strategy == Strategy::Single {
            "single".into()
        } else {
            format!("seq_{}", names.join("-"))
        },
        order: names,
        set: current,
        steps,
        subspaces,
        composition: None,
    })
}

/// Debias against one subspace composed from every category's subspace.
/// Equality sets of all categories are equalized against the composed subspace.
pub fn composed_debias(
    set: &EmbeddingSet,
    categories: &[ResolvedCategory],
    strategy: Composition,
    plan: &DebiasPlan,
) -> Result<DebiasRun> {
    let mut individual = Vec::with_capacity(categories.len());
    let mut rank_deficient = false;
    for (c, category) in categories.iter().enumerate() {
        let pca = bias_subspace(category, set, plan.k_for(c), plan.pca)?;
        rank_deficient |= pca.rank_deficient();
        individual.push(pca.subspace);
    }
    let composed = compose(&individual, strategy)?;
    let equality: Vec<Vec<usize>> = categories
        .iter()
        .flat_map(|c| c.equality_sets.iter().cloned())
        .collect();
    let partition = WordPartition::new(
        set,
        &plan.neutral,
        &protected_rows(categories),
        equality,
        plan.lowercase_fallback,
    )?;
    let (out, mut report) = hard_debias(set, &composed.subspace, &partition)?;
    report.rank_deficient = rank_deficient;
    individual.push(composed.subspace.clone());
    Ok(DebiasRun {
        label: strategy.label().to_lowercase(),
        order: categories.iter().map(|c| c.name.clone()).collect(),
        set: out,
        steps: vec![report],
        subspaces: individual,
        composition: Some(CompositionSummary {
            strategy,
            objective_value: composed.objective_value,
            per_category_distance: composed.per_category_distance,
            degenerate_tie: composed.degenerate_tie,
        }),
    })
}

/// Execute a plan, handing each resulting run to `sink` as soon as it is ready
/// so that only one debiased copy is alive at a time.
pub fn run_plan<F>(
    set: &EmbeddingSet,
    categories: &[ResolvedCategory],
    plan: &DebiasPlan,
    mut sink: F,
) -> Result<()>
where
    F: FnMut(DebiasRun) -> Result<()>,
{
    if !set.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let orders = plan.validate(categories)?;
    match plan.strategy.composition() {
        Some(c) => sink(composed_debias(set, categories, c, plan)?),
        None => {
            for order in orders {
                sink(sequential_debias(set, categories, &order, plan)?)?;
            }
            Ok(())
        }
    }
}
