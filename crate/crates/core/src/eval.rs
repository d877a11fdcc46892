//! Bias metrics: mean average cosine distance (MAC), the paired t-test used to
//! compare MAC distributions, and false positive/negative equality differences.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::vector;
use crate::wordsets::ResolvedCategory;

/// Mean cosine distance `1 - cos(s, a)` between `target` and each attribute vector.
pub fn mean_cos_distance(target: &[f64], attributes: &[&[f64]]) -> Result<f64> {
    if attributes.is_empty() {
        return Err(Error::EmptyAttributeSet);
    }
    let ts = vector::norm(target);
    if ts == 0.0 {
        return Err(Error::ZeroVector("target".into()));
    }
    let mut total = 0.0;
    for a in attributes {
        let na = vector::norm(a);
        if na == 0.0 {
            return Err(Error::ZeroVector("attribute".into()));
        }
        total += 1.0 - vector::dot(target, a) / (ts * na);
    }
    Ok(total / attributes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacReport {
    pub mac: f64,
    /// `table[i][j]` is the mean cosine distance between target `i` and attribute set `j`.
    pub table: Vec<Vec<f64>>,
    /// Number of (target, attribute set) cells.
    pub samples: usize,
}

impl MacReport {
    /// The table in row-major order, the sample used by paired t-tests.
    pub fn flat(&self) -> Vec<f64> {
        self.table.iter().flatten().copied().collect()
    }
}

fn unit_rows(rows: &[&[f64]], what: &str) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|r| {
            let n = vector::norm(r);
            if n == 0.0 {
                return Err(Error::ZeroVector(what.into()));
            }
            Ok(r.iter().map(|x| x / n).collect())
        })
        .collect()
}

/// Grand mean of the target-by-attribute-set table of mean cosine distances.
pub fn mac(targets: &[&[f64]], attribute_sets: &[Vec<&[f64]>]) -> Result<MacReport> {
    if targets.is_empty() {
        return Err(Error::EmptySet("no target words".into()));
    }
    if attribute_sets.is_empty() {
        return Err(Error::EmptySet("no attribute sets".into()));
    }
    let targets = unit_rows(targets, "target")?;
    let sets = attribute_sets
        .iter()
        .map(|a| {
            if a.is_empty() {
                return Err(Error::EmptyAttributeSet);
            }
            unit_rows(a, "attribute")
        })
        .collect::<Result<Vec<_>>>()?;

    let table: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| {
            sets.iter()
                .map(|set| {
                    let sim: f64 = set.iter().map(|a| vector::dot(t, a)).sum();
                    1.0 - sim / set.len() as f64
                })
                .collect()
        })
        .collect();
    let samples = targets.len() * sets.len();
    let mac = table.iter().flatten().sum::<f64>() / samples as f64;
    Ok(MacReport {
        mac,
        table,
        samples,
    })
}

/// MAC of one category: its target words against its attribute sets.
///
/// Attribute sets with no word in the vocabulary are skipped.
pub fn category_mac(category: &ResolvedCategory, set: &EmbeddingSet) -> Result<MacReport> {
    let targets: Vec<&[f64]> = category.target_words.iter().map(|&i| set.row(i)).collect();
    let attributes: Vec<Vec<&[f64]>> = category
        .attribute_sets
        .iter()
        .filter(|a| !a.is_empty())
        .map(|a| a.iter().map(|&i| set.row(i)).collect())
        .collect();
    if targets.is_empty() {
        return Err(Error::EmptySet(format!(
            "'{}': no target words in the vocabulary",
            category.name
        )));
    }
    if attributes.is_empty() {
        return Err(Error::EmptySet(format!(
            "'{}': no attribute words in the vocabulary",
            category.name
        )));
    }
    mac(&targets, &attributes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMac {
    pub category: String,
    pub report: MacReport,
}

/// Per-category MAC plus their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacSummary {
    pub categories: Vec<CategoryMac>,
    pub total: f64,
}

pub fn mac_summary(categories: &[ResolvedCategory], set: &EmbeddingSet) -> Result<MacSummary> {
    let categories = categories
        .iter()
        .map(|c| {
            Ok(CategoryMac {
                category: c.name.clone(),
                report: category_mac(c, set)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = categories.iter().map(|c| c.report.mac).sum();
    Ok(MacSummary { categories, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    /// Mean of `after - before` over its standard error. Infinite when all
    /// differences are equal and nonzero.
    pub t: f64,
    /// Two-tailed p-value.
    pub p: f64,
    pub df: usize,
    pub mean_difference: f64,
    /// The differences have zero variance.
    pub degenerate: bool,
}

/// Paired t-test on `after - before`.
pub fn paired_t_test(before: &[f64], after: &[f64]) -> Result<TTest> {
    if before.len() != after.len() {
        return Err(Error::LengthMismatch(before.len(), after.len()));
    }
    let n = before.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let diffs: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                df,
                mean_difference: 0.0,
                degenerate: false,
            }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                df,
                mean_difference: mean,
                degenerate: true,
            }
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_tailed(t, df as f64),
        df,
        mean_difference: mean,
        degenerate: false,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// CDF of Student's t.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_tailed(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Lanczos approximation (g = 7, n = 9), accurate to about 1e-15.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)` via its continued fraction
/// (modified Lentz), using the symmetry `I_x(a,b) = 1 - I_{1-x}(b,a)` to stay
/// in the fast-converging region.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Confusion counts of one group of a binary classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub group: String,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl GroupOutcome {
    pub fn new(group: impl Into<String>, tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        GroupOutcome {
            group: group.into(),
            tp,
            fp,
            tn,
            fn_,
        }
    }

    /// `FP / (FP + TN)`, undefined without negatives.
    pub fn fpr(&self) -> Option<f64> {
        let d = self.fp + self.tn;
        (d > 0).then(|| self.fp as f64 / d as f64)
    }

    /// `FN / (FN + TP)`, undefined without positives.
    pub fn fnr(&self) -> Option<f64> {
        let d = self.fn_ + self.tp;
        (d > 0).then(|| self.fn_ as f64 / d as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualityDifferences {
    pub fped: f64,
    pub fned: f64,
    pub total: f64,
    /// Groups left out of a sum because the corresponding rate is undefined.
    pub warnings: Vec<String>,
}

/// `FPED = sum_i |FPR - FPR_i|` and `FNED = sum_i |FNR - FNR_i|`.
///
/// Groups whose rate is undefined are skipped for that sum (not zero-filled).
pub fn equality_differences(
    groups: &[GroupOutcome],
    overall: &GroupOutcome,
) -> Result<EqualityDifferences> {
    let fpr = overall.fpr().ok_or(Error::UndefinedOverallRate("FPR"))?;
    let fnr = overall.fnr().ok_or(Error::UndefinedOverallRate("FNR"))?;
    let mut warnings = Vec::new();
    let (mut fped, mut fned) = (0.0, 0.0);
    let mut used = 0usize;
    for g in groups {
        let mut any = false;
        match g.fpr() {
            Some(r) => {
                fped += (fpr - r).abs();
                any = true;
            }
            None => warnings.push(format!("group '{}': FP+TN = 0, skipped for FPED", g.group)),
        }
        match g.fnr() {
            Some(r) => {
                fned += (fnr - r).abs();
                any = true;
            }
            None => warnings.push(format!("group '{}': FN+TP = 0, skipped for FNED", g.group)),
        }
        used += usize::from(any);
    }
    if used == 0 {
        return Err(Error::NoValidGroups);
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(EqualityDifferences {
        fped,
        fned,
        total: fped + fned,
        warnings,
    })
}

/// Read `group,tp,fp,tn,fn` rows (with a header); the row named `overall`
/// holds the counts over the whole data set.
pub fn read_outcomes_csv<R: Read>(reader: R) -> Result<(Vec<GroupOutcome>, GroupOutcome)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let expected = ["group", "tp", "fp", "tn", "fn"];
    let lower: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if lower != expected {
        return Err(Error::Csv(format!(
            "header must be {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut groups = Vec::new();
    let mut overall = None;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let count = |j: usize| -> Result<u64> {
            record[j].parse().map_err(|_| {
                Error::Csv(format!("row {}: '{}' is not a count", i + 2, &record[j]))
            })
        };
        let g = GroupOutcome::new(&record[0], count(1)?, count(2)?, count(3)?, count(4)?);
        if g.group.eq_ignore_ascii_case("overall") {
            if overall.replace(g).is_some() {
                return Err(Error::Csv("more than one 'overall' row".into()));
            }
        } else {
            groups.push(g);
        }
    }
    let overall = overall.ok_or_else(|| Error::Csv("missing 'overall' row".into()))?;
    Ok((groups, overall))
}
