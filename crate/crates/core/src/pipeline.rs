//! End-to-end commands and their request/response types.
//!
//! Each command takes a prepared embedding set plus a serde request and
//! returns a serde response carrying both structured results and the rendered
//! text report. The HTTP service and the CLI share these types, and every
//! rendering is deterministic so identical requests give byte-identical output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compose::{compose, validate_hypothesis, Composition, HypothesisOptions, HypothesisReport};
use crate::debias::{run_plan, DebiasPlan, DebiasRun, Ordering, Strategy, StepReport};
use crate::embeddings::{load_embeddings, EmbeddingFormat, EmbeddingSet, LoadReport};
use crate::error::{Error, Result};
use crate::eval::{
    equality_differences, mac_summary, paired_t_test, EqualityDifferences, GroupOutcome, MacSummary,
    TTest,
};
use crate::subspace::{bias_subspace, BiasSubspace, PcaOptions};
use crate::wordsets::{resolve_category, CategorySpec, ResolvedCategory, ValidationReport};

/// Where to read an embedding set from (a path on the machine doing the work).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSource {
    pub path: PathBuf,
    #[serde(default)]
    pub format: EmbeddingFormat,
    /// Rescale rows to unit length after loading.
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingInfo {
    pub path: PathBuf,
    pub vocab_size: usize,
    pub dim: usize,
    pub normalized: bool,
    pub duplicates: usize,
}

/// Load a set; rows that are already unit length mark it as normalized.
pub fn prepare_embeddings(source: &EmbeddingSource) -> Result<(EmbeddingSet, EmbeddingInfo)> {
    let (set, load) = load_embeddings(&source.path, source.format)?;
    let set = finish_preparation(set, source.normalize)?;
    let info = embedding_info(&source.path, &set, &load);
    Ok((set, info))
}

pub fn finish_preparation(set: EmbeddingSet, normalize: bool) -> Result<EmbeddingSet> {
    if normalize {
        set.normalize()
    } else if set.rows_are_unit(1e-6) {
        set.assume_normalized()
    } else {
        Ok(set)
    }
}

pub fn embedding_info(path: &Path, set: &EmbeddingSet, load: &LoadReport) -> EmbeddingInfo {
    EmbeddingInfo {
        path: path.to_path_buf(),
        vocab_size: set.len(),
        dim: set.dim(),
        normalized: set.is_normalized(),
        duplicates: load.duplicates,
    }
}

fn require_normalized(set: &EmbeddingSet) -> Result<()> {
    if set.is_normalized() {
        Ok(())
    } else {
        Err(Error::NotNormalized)
    }
}

fn resolve_all(
    specs: &[CategorySpec],
    set: &EmbeddingSet,
    lowercase_fallback: bool,
) -> Result<(Vec<ResolvedCategory>, Vec<ValidationReport>)> {
    if specs.is_empty() {
        return Err(Error::InvalidPlan("no category specs given".into()));
    }
    let mut resolved = Vec::with_capacity(specs.len());
    let mut reports = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.check()?;
        let (r, v) = resolve_category(spec, set, lowercase_fallback)?;
        resolved.push(r);
        reports.push(v);
    }
    Ok((resolved, reports))
}

fn validation_warnings(reports: &[ValidationReport]) -> Vec<String> {
    reports
        .iter()
        .flat_map(|r| {
            r.sets.iter().filter(|s| !s.missing.is_empty()).map(move |s| {
                format!(
                    "{}: {:?} set {} missing {} of {} words: {}",
                    r.category,
                    s.kind,
                    s.index,
                    s.missing.len(),
                    s.requested,
                    s.missing.join(" ")
                )
            })
        })
        .collect()
}

/// Insert `tag` before the extension: `out/e.txt` + `gender` -> `out/e.gender.txt`.
pub fn tagged_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Error payload returned by the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: crate::error::ErrorKind,
    pub message: String,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        ErrorReport {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

#[derive(Serialize)]
struct RequestManifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: String,
    request: &'a T,
    outputs: &'a [PathBuf],
}

/// Write `{output}.manifest.json` recording the request that produced `outputs`.
pub fn write_request_manifest<T: Serialize>(output: &Path, command: &str, request: &T, outputs: &[PathBuf]) -> Result<PathBuf> {
    let path = PathBuf::from(format!("{}.manifest.json", output.display()));
    let manifest = RequestManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_hash: config_hash(request),
        request,
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

// ---------------------------------------------------------------- subspace

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceRequest {
    pub embeddings: EmbeddingSource,
    pub specs: Vec<CategorySpec>,
    pub k: usize,
    /// Also compose the category subspaces into one.
    #[serde(default)]
    pub strategy: Option<Composition>,
    #[serde(default)]
    pub pca: PcaOptions,
    #[serde(default)]
    pub lowercase_fallback: bool,
    /// Output file. Category files get the category name inserted before the
    /// extension unless there is exactly one category and no composition.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceSummary {
    pub subspace: BiasSubspace,
    pub requested_k: usize,
    pub rank_deficient: bool,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedSummary {
    pub subspace: BiasSubspace,
    pub strategy: Composition,
    pub objective_value: Option<f64>,
    pub per_category_distance: Vec<f64>,
    pub degenerate_tie: bool,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceResponse {
    pub embeddings: EmbeddingInfo,
    pub subspaces: Vec<SubspaceSummary>,
    pub composed: Option<ComposedSummary>,
    pub validation: Vec<ValidationReport>,
    pub warnings: Vec<String>,
    pub text: String,
}

impl SubspaceResponse {
    pub fn has_degeneracy(&self) -> bool {
        self.subspaces.iter().any(|s| s.rank_deficient)
            || self.composed.as_ref().is_some_and(|c| c.degenerate_tie)
    }
}

pub fn run_subspace(
    set: &EmbeddingSet,
    info: EmbeddingInfo,
    req: &SubspaceRequest,
) -> Result<SubspaceResponse> {
    require_normalized(set)?;
    let (categories, validation) = resolve_all(&req.specs, set, req.lowercase_fallback)?;
    let mut warnings = validation_warnings(&validation);
    let per_file = req.strategy.is_some() || categories.len() > 1;

    let mut subspaces = Vec::with_capacity(categories.len());
    for c in &categories {
        let pca = bias_subspace(c, set, req.k, req.pca)?;
        if pca.rank_deficient() {
            warnings.push(format!(
                "{}: only {} of {} components available",
                c.name,
                pca.subspace.k(),
                req.k
            ));
        }
        let file = match &req.out {
            Some(out) => {
                let path = if per_file { tagged_path(out, &c.name) } else { out.clone() };
                pca.subspace.save(&path)?;
                Some(path)
            }
            None => None,
        };
        subspaces.push(SubspaceSummary {
            rank_deficient: pca.rank_deficient(),
            requested_k: req.k,
            subspace: pca.subspace,
            file,
        });
    }

    let composed = match req.strategy {
        None => None,
        Some(strategy) => {
            let list: Vec<BiasSubspace> = subspaces.iter().map(|s| s.subspace.clone()).collect();
            let r = compose(&list, strategy)?;
            if r.degenerate_tie {
                warnings.push("intersection direction is not unique (tied singular values)".into());
            }
            let file = match &req.out {
                Some(out) => {
                    r.subspace.save(out)?;
                    Some(out.clone())
                }
                None => None,
            };
            Some(ComposedSummary {
                subspace: r.subspace,
                strategy: r.strategy,
                objective_value: r.objective_value,
                per_category_distance: r.per_category_distance,
                degenerate_tie: r.degenerate_tie,
                file,
            })
        }
    };

    if let Some(out) = &req.out {
        let mut files: Vec<PathBuf> = subspaces.iter().filter_map(|s| s.file.clone()).collect();
        files.extend(composed.as_ref().and_then(|c| c.file.clone()));
        files.dedup();
        write_request_manifest(out, "subspace", req, &files)?;
    }

    let mut text = String::new();
    for s in &subspaces {
        let b = &s.subspace;
        let _ = write!(text, "{} K={} d={} explained_variance=", b.label(), b.k(), b.dim());
        let vars: Vec<String> = b.explained_variance().iter().map(|v| format!("{v:.6}")).collect();
        let _ = write!(text, "[{}]", vars.join(", "));
        if let Some(f) = &s.file {
            let _ = write!(text, " -> {}", f.display());
        }
        text.push('\n');
    }
    if let Some(c) = &composed {
        let _ = write!(text, "{} K={}", c.subspace.label(), c.subspace.k());
        if let Some(obj) = c.objective_value {
            let _ = write!(text, " objective={obj:.6}");
            let d: Vec<String> = c.per_category_distance.iter().map(|x| format!("{x:.6}")).collect();
            let _ = write!(text, " distances=[{}]", d.join(", "));
        }
        if let Some(f) = &c.file {
            let _ = write!(text, " -> {}", f.display());
        }
        text.push('\n');
    }
    Ok(SubspaceResponse {
        embeddings: info,
        subspaces,
        composed,
        validation,
        warnings,
        text,
    })
}

// ------------------------------------------------------------------ debias

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasRequest {
    pub embeddings: EmbeddingSource,
    pub specs: Vec<CategorySpec>,
    pub plan: DebiasPlan,
    pub out: PathBuf,
    #[serde(default)]
    pub out_format: EmbeddingFormat,
    /// Treat numerical degeneracies as errors and write nothing.
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasOutput {
    pub label: String,
    pub order: Vec<String>,
    pub path: PathBuf,
    pub manifest: PathBuf,
    pub steps: Vec<StepReport>,
    pub subspaces: Vec<String>,
    pub objective_value: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasResponse {
    pub embeddings: EmbeddingInfo,
    pub config_hash: String,
    pub outputs: Vec<DebiasOutput>,
    pub validation: Vec<ValidationReport>,
    pub text: String,
}

/// Everything needed to re-run a debias command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub request: DebiasRequest,
    pub embeddings: EmbeddingInfo,
    pub output: PathBuf,
    pub label: String,
    pub order: Vec<String>,
    pub steps: Vec<StepReport>,
    pub subspaces: Vec<String>,
    pub objective_value: Option<f64>,
    pub validation: Vec<ValidationReport>,
    pub warnings: Vec<String>,
}

pub fn config_hash<T: Serialize>(request: &T) -> String {
    sha256_hex(&serde_json::to_vec(request).expect("requests serialize"))
}

pub fn run_debias(
    set: &EmbeddingSet,
    info: EmbeddingInfo,
    req: &DebiasRequest,
) -> Result<DebiasResponse> {
    require_normalized(set)?;
    let plan = &req.plan;
    let (categories, validation) = resolve_all(&req.specs, set, plan.lowercase_fallback)?;
    let hash = config_hash(req);
    let multiple = plan.order == Ordering::All;
    let base_warnings = validation_warnings(&validation);

    let mut outputs = Vec::new();
    run_plan(set, &categories, plan, |run: DebiasRun| {
        if req.strict && run.has_degeneracy() {
            return Err(Error::StrictDegeneracy(format!(
                "{}: {}",
                run.label,
                run.warnings().join("; ")
            )));
        }
        let path = if multiple {
            tagged_path(&req.out, &run.label)
        } else {
            req.out.clone()
        };
        run.set.save(&path, req.out_format)?;
        let mut warnings = base_warnings.clone();
        warnings.extend(run.warnings());
        let manifest_path = PathBuf::from(format!("{}.manifest.json", path.display()));
        let subspaces: Vec<String> = run.subspaces.iter().map(|b| b.label().to_string()).collect();
        let objective_value = run.composition.as_ref().and_then(|c| c.objective_value);
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: "debias".into(),
            config_hash: hash.clone(),
            request: req.clone(),
            embeddings: info.clone(),
            output: path.clone(),
            label: run.label.clone(),
            order: run.order.clone(),
            steps: run.steps.clone(),
            subspaces: subspaces.clone(),
            objective_value,
            validation: validation.clone(),
            warnings: warnings.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
        outputs.push(DebiasOutput {
            label: run.label,
            order: run.order,
            path,
            manifest: manifest_path,
            steps: run.steps,
            subspaces,
            objective_value,
            warnings,
        });
        Ok(())
    })?;

    let mut text = String::new();
    for o in &outputs {
        let neutralized: usize = o.steps.iter().map(|s| s.neutralized).sum();
        let equalized: usize = o.steps.iter().map(|s| s.equalized_sets).sum();
        let _ = write!(
            text,
            "{}: subspaces=[{}] neutralized={} equalized_sets={} warnings={}",
            o.label,
            o.subspaces.join(", "),
            neutralized,
            equalized,
            o.warnings.len()
        );
        if let Some(obj) = o.objective_value {
            let _ = write!(text, " objective={obj:.6}");
        }
        let _ = writeln!(text, " -> {}", o.path.display());
    }
    Ok(DebiasResponse {
        embeddings: info,
        config_hash: hash,
        outputs,
        validation,
        text,
    })
}

// ---------------------------------------------------------------- eval-mac

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacRequest {
    pub embeddings: EmbeddingSource,
    /// Optional reference set (typically the biased embeddings).
    #[serde(default)]
    pub baseline: Option<EmbeddingSource>,
    pub specs: Vec<CategorySpec>,
    #[serde(default)]
    pub lowercase_fallback: bool,
    /// Write the per-(target, attribute set) table as CSV.
    #[serde(default)]
    pub table_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacRow {
    pub category: String,
    pub mac: f64,
    pub baseline: Option<f64>,
    pub delta: Option<f64>,
    pub t_test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacResponse {
    pub rows: Vec<MacRow>,
    pub total: f64,
    pub baseline_total: Option<f64>,
    pub csv: String,
    pub text: String,
}

fn mac_for(
    specs: &[CategorySpec],
    set: &EmbeddingSet,
    lowercase_fallback: bool,
) -> Result<(Vec<ResolvedCategory>, MacSummary)> {
    let (categories, _) = resolve_all(specs, set, lowercase_fallback)?;
    let summary = mac_summary(&categories, set)?;
    Ok((categories, summary))
}

pub fn run_mac(
    set: &EmbeddingSet,
    baseline: Option<&EmbeddingSet>,
    req: &MacRequest,
) -> Result<MacResponse> {
    let (categories, summary) = mac_for(&req.specs, set, req.lowercase_fallback)?;
    let base = match baseline {
        Some(b) => Some(mac_for(&req.specs, b, req.lowercase_fallback)?.1),
        None => None,
    };

    let mut rows = Vec::with_capacity(summary.categories.len());
    for (i, c) in summary.categories.iter().enumerate() {
        let (baseline, t_test) = match &base {
            Some(b) => {
                let before = &b.categories[i].report;
                (Some(before.mac), Some(paired_t_test(&before.flat(), &c.report.flat())?))
            }
            None => (None, None),
        };
        rows.push(MacRow {
            category: c.category.clone(),
            mac: c.report.mac,
            delta: baseline.map(|b| c.report.mac - b),
            baseline,
            t_test,
        });
    }

    let mut csv = String::from(if base.is_some() {
        "category,target,attribute_set,f,baseline_f\n"
    } else {
        "category,target,attribute_set,f\n"
    });
    for (ci, (cat, resolved)) in summary.categories.iter().zip(&categories).enumerate() {
        for (ti, row) in cat.report.table.iter().enumerate() {
            let target = &set.words()[resolved.target_words[ti]];
            for (aj, f) in row.iter().enumerate() {
                let _ = write!(csv, "{},{},{},{f:.17e}", csv_field(&cat.category), csv_field(target), aj);
                if let Some(b) = &base {
                    let _ = write!(csv, ",{:.17e}", b.categories[ci].report.table[ti][aj]);
                }
                csv.push('\n');
            }
        }
    }
    if let Some(path) = &req.table_csv {
        std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
        write_request_manifest(path, "eval-mac", req, std::slice::from_ref(path))?;
    }

    let baseline_total = base.as_ref().map(|b| b.total);
    let mut text = String::new();
    if base.is_some() {
        let _ = writeln!(text, "{:<28} {:>8} {:>8} {:>8} {:>10}", "category", "MAC", "baseline", "delta", "p");
    } else {
        let _ = writeln!(text, "{:<28} {:>8}", "category", "MAC");
    }
    for r in &rows {
        match (r.baseline, r.delta, &r.t_test) {
            (Some(b), Some(d), Some(t)) => {
                let _ = writeln!(text, "{:<28} {:>8.4} {:>8.4} {:>+8.4} {:>10.3e}", r.category, r.mac, b, d, t.p);
            }
            _ => {
                let _ = writeln!(text, "{:<28} {:>8.4}", r.category, r.mac);
            }
        }
    }
    match baseline_total {
        Some(b) => {
            let _ = writeln!(text, "{:<28} {:>8.4} {:>8.4} {:>+8.4}", "Total", summary.total, b, summary.total - b);
        }
        None => {
            let _ = writeln!(text, "{:<28} {:>8.4}", "Total", summary.total);
        }
    }
    Ok(MacResponse {
        rows,
        total: summary.total,
        baseline_total,
        csv,
        text,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ----------------------------------------------------------------- eval-eq

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqRequest {
    pub groups: Vec<GroupOutcome>,
    pub overall: GroupOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqResponse {
    pub result: EqualityDifferences,
    pub text: String,
}

pub fn run_eq(req: &EqRequest) -> Result<EqResponse> {
    let result = equality_differences(&req.groups, &req.overall)?;
    let mut text = String::new();
    let _ = writeln!(text, "FPED  {:.6}", result.fped);
    let _ = writeln!(text, "FNED  {:.6}", result.fned);
    let _ = writeln!(text, "Total {:.6}", result.total);
    for w in &result.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    Ok(EqResponse { result, text })
}

// ----------------------------------------------------- validate-hypothesis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRequest {
    pub embeddings: EmbeddingSource,
    pub specs: Vec<CategorySpec>,
    pub ground_truth: CategorySpec,
    pub k: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_random_vectors")]
    pub random_vectors: usize,
    #[serde(default)]
    pub pca: PcaOptions,
    #[serde(default)]
    pub lowercase_fallback: bool,
    /// Write the 3-D projection of all components as CSV.
    #[serde(default)]
    pub projection_csv: Option<PathBuf>,
}

fn default_seed() -> u64 {
    42
}

fn default_random_vectors() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResponse {
    pub report: HypothesisReport,
    pub csv: String,
    pub text: String,
}

pub fn render_hypothesis(report: &HypothesisReport) -> (String, String) {
    let mut text = String::new();
    let _ = writeln!(
        text,
        "cosine similarity with ground truth '{}' (K={}, seed={})",
        report.ground_truth, report.k, report.seed
    );
    for s in &report.individual {
        let _ = writeln!(text, "  {:<26} {:>+9.6}", s.label, s.cosine);
    }
    let _ = writeln!(
        text,
        "  {:<26} {:>+9.6}   (mean |cos| {:.6} over {} vectors)",
        "random",
        report.random_mean,
        report.random_mean_abs,
        report.random_scores.len()
    );
    let _ = writeln!(text, "  {:<26} {:>+9.6}", "JOSEC", report.josec);
    let _ = writeln!(text, "JOSEC objective {:.6}", report.josec_objective);
    if report.degenerate_tie {
        let _ = writeln!(text, "warning: intersection direction is not unique");
    }
    let mut csv = String::from("label,component_index,x,y,z\n");
    for p in &report.projection {
        let _ = writeln!(
            csv,
            "{},{},{:.17e},{:.17e},{:.17e}",
            csv_field(&p.label),
            p.component_index,
            p.x,
            p.y,
            p.z
        );
    }
    (text, csv)
}

pub fn run_hypothesis(set: &EmbeddingSet, req: &HypothesisRequest) -> Result<HypothesisResponse> {
    require_normalized(set)?;
    let (categories, _) = resolve_all(&req.specs, set, req.lowercase_fallback)?;
    let (truth, _) = resolve_category(&req.ground_truth, set, req.lowercase_fallback)?;
    let report = validate_hypothesis(
        &categories,
        &truth,
        set,
        HypothesisOptions {
            k: req.k,
            seed: req.seed,
            random_vectors: req.random_vectors,
            pca: req.pca,
        },
    )?;
    let (text, csv) = render_hypothesis(&report);
    if let Some(path) = &req.projection_csv {
        std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
        write_request_manifest(path, "validate-hypothesis", req, std::slice::from_ref(path))?;
    }
    Ok(HypothesisResponse { report, csv, text })
}

// ------------------------------------------------------------------ report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSource {
    pub label: String,
    pub source: EmbeddingSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRequest {
    pub embeddings: EmbeddingSource,
    pub specs: Vec<CategorySpec>,
    /// Already-debiased sets to compare against the input.
    #[serde(default)]
    pub debiased: Vec<LabeledSource>,
    /// Run every strategy (all sequential orders, SUM, MEAN, JOSEC) in memory.
    #[serde(default)]
    pub pipeline: bool,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub frozen_subspaces: bool,
    #[serde(default)]
    pub pca: PcaOptions,
    #[serde(default)]
    pub lowercase_fallback: bool,
    /// Also run the hypothesis validation against this ground truth.
    #[serde(default)]
    pub ground_truth: Option<CategorySpec>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub csv_out: Option<PathBuf>,
    #[serde(default)]
    pub projection_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub macs: Vec<f64>,
    pub total: f64,
    /// MAC minus the input embeddings' MAC, per category.
    pub deltas: Vec<Option<f64>>,
    /// Paired t-test p-value against the input embeddings, per category.
    pub p_values: Vec<Option<f64>>,
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub categories: Vec<String>,
    pub rows: Vec<ModelRow>,
    /// Sequential order with the largest Total, when sequences were run.
    pub best_sequence: Option<String>,
    pub hypothesis: Option<HypothesisReport>,
    pub csv: String,
    pub text: String,
}

fn model_row(model: &str, summary: &MacSummary, biased: Option<&MacSummary>, warnings: usize) -> Result<ModelRow> {
    let p_values = summary
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| match biased {
            Some(b) => paired_t_test(&b.categories[i].report.flat(), &c.report.flat()).map(|t| Some(t.p)),
            None => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelRow {
        model: model.to_string(),
        macs: summary.categories.iter().map(|c| c.report.mac).collect(),
        total: summary.total,
        deltas: summary
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| biased.map(|b| c.report.mac - b.categories[i].report.mac))
            .collect(),
        p_values,
        warnings,
    })
}

/// Report over already-loaded sets. `load` resolves the `debiased` sources.
pub fn run_report<F>(set: &EmbeddingSet, req: &ReportRequest, mut load: F) -> Result<ReportResponse>
where
    F: FnMut(&EmbeddingSource) -> Result<EmbeddingSet>,
{
    let (categories, _) = resolve_all(&req.specs, set, req.lowercase_fallback)?;
    let biased = mac_summary(&categories, set)?;
    let mut rows = vec![model_row("Biased", &biased, None, 0)?];

    for d in &req.debiased {
        let other = load(&d.source)?;
        let (other_cats, _) = resolve_all(&req.specs, &other, req.lowercase_fallback)?;
        let summary = mac_summary(&other_cats, &other)?;
        rows.push(model_row(&d.label, &summary, Some(&biased), 0)?);
    }

    let mut best_sequence = None;
    if req.pipeline {
        require_normalized(set)?;
        let k = req
            .k
            .ok_or_else(|| Error::InvalidPlan("the strategy pipeline needs a component count K".into()))?;
        let mut seq_rows: Vec<ModelRow> = Vec::new();
        let mut plan = DebiasPlan::new(Strategy::Seq, k);
        plan.order = if categories.len() > 1 { Ordering::All } else { Ordering::AsGiven };
        plan.frozen_subspaces = req.frozen_subspaces;
        plan.pca = req.pca;
        plan.lowercase_fallback = req.lowercase_fallback;
        run_plan(set, &categories, &plan, |run| {
            let summary = mac_summary(&categories, &run.set)?;
            let name = format!("Hard_Seq({})", run.order.join(">"));
            seq_rows.push(model_row(&name, &summary, Some(&biased), run.warnings().len())?);
            Ok(())
        })?;
        best_sequence = seq_rows
            .iter()
            .max_by(|a, b| a.total.total_cmp(&b.total))
            .map(|r| r.model.clone());
        rows.extend(seq_rows);
        for strategy in [Strategy::Sum, Strategy::Mean, Strategy::Josec] {
            let mut plan = DebiasPlan::new(strategy, k);
            plan.pca = req.pca;
            plan.lowercase_fallback = req.lowercase_fallback;
            let label = strategy.composition().expect("composed strategy").label();
            run_plan(set, &categories, &plan, |run| {
                let summary = mac_summary(&categories, &run.set)?;
                rows.push(model_row(label, &summary, Some(&biased), run.warnings().len())?);
                Ok(())
            })?;
        }
    }

    let hypothesis = match &req.ground_truth {
        Some(truth) => {
            let k = req
                .k
                .ok_or_else(|| Error::InvalidPlan("hypothesis validation needs a component count K".into()))?;
            let r = run_hypothesis(
                set,
                &HypothesisRequest {
                    embeddings: req.embeddings.clone(),
                    specs: req.specs.clone(),
                    ground_truth: truth.clone(),
                    k,
                    seed: req.seed,
                    random_vectors: default_random_vectors(),
                    pca: req.pca,
                    lowercase_fallback: req.lowercase_fallback,
                    projection_csv: req.projection_csv.clone(),
                },
            )?;
            Some(r.report)
        }
        None => None,
    };

    let names: Vec<String> = categories.iter().map(|c| c.name.clone()).collect();
    let with_p = rows.iter().any(|r| r.p_values.iter().any(Option::is_some));

    let mut csv = String::from("model");
    for n in &names {
        let _ = write!(csv, ",{}", csv_field(n));
    }
    csv.push_str(",total");
    if with_p {
        for n in &names {
            let _ = write!(csv, ",delta_{}", csv_field(n));
        }
        for n in &names {
            let _ = write!(csv, ",p_{}", csv_field(n));
        }
    }
    csv.push('\n');
    for r in &rows {
        csv.push_str(&csv_field(&r.model));
        for m in &r.macs {
            let _ = write!(csv, ",{m:.17e}");
        }
        let _ = write!(csv, ",{:.17e}", r.total);
        if with_p {
            for x in r.deltas.iter().chain(&r.p_values) {
                match x {
                    Some(x) => {
                        let _ = write!(csv, ",{x:.17e}");
                    }
                    None => csv.push(','),
                }
            }
        }
        csv.push('\n');
    }
    if let Some(path) = &req.csv_out {
        std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
        write_request_manifest(path, "report", req, std::slice::from_ref(path))?;
    }

    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5) + 2;
    let mut text = String::new();
    let _ = write!(text, "{:<width$}", "model");
    for n in &names {
        let _ = write!(text, " {:>10}", truncate(n, 10));
    }
    let _ = write!(text, " {:>10}", "Total");
    if with_p {
        for n in &names {
            let _ = write!(text, " {:>12}", format!("d({})", truncate(n, 9)));
        }
        for n in &names {
            let _ = write!(text, " {:>12}", format!("p({})", truncate(n, 9)));
        }
    }
    text.push('\n');
    for r in &rows {
        let marker = if best_sequence.as_deref() == Some(r.model.as_str()) { "*" } else { "" };
        let _ = write!(text, "{:<width$}", format!("{}{marker}", r.model));
        for m in &r.macs {
            let _ = write!(text, " {m:>10.4}");
        }
        let _ = write!(text, " {:>10.4}", r.total);
        if with_p {
            for d in &r.deltas {
                match d {
                    Some(d) => {
                        let _ = write!(text, " {d:>+12.4}");
                    }
                    None => {
                        let _ = write!(text, " {:>12}", "-");
                    }
                }
            }
            for p in &r.p_values {
                match p {
                    Some(p) => {
                        let _ = write!(text, " {p:>12.3e}");
                    }
                    None => {
                        let _ = write!(text, " {:>12}", "-");
                    }
                }
            }
        }
        text.push('\n');
    }
    if let Some(best) = &best_sequence {
        let _ = writeln!(text, "* best sequential order by Total: {best}");
    }
    if let Some(h) = &hypothesis {
        text.push('\n');
        text.push_str(&render_hypothesis(h).0);
    }
    Ok(ReportResponse {
        categories: names,
        rows,
        best_sequence,
        hypothesis,
        csv,
        text,
    })
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}
