//! Test helpers: random geometry, independent reference implementations and
//! synthetic embedding sets with planted structure.
#![allow(dead_code, clippy::needless_range_loop)]

use biasspace_core::{BiasSubspace, CategorySpec, EmbeddingSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    for x in &mut v {
        *x /= n;
    }
    v
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    unit(gaussian(rng, dim))
}

/// Modified Gram-Schmidt, re-orthogonalized twice.
pub fn orthonormalize(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut v in vectors {
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                for i in 0..v.len() {
                    v[i] -= p * b[i];
                }
            }
        }
        basis.push(unit(v));
    }
    basis
}

pub fn random_orthonormal(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    orthonormalize((0..k).map(|_| gaussian(rng, dim)).collect())
}

pub fn subspace(label: &str, components: Vec<Vec<f64>>) -> BiasSubspace {
    BiasSubspace::new(label, components, Vec::new()).unwrap()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as rows), sorted by descending eigenvalue.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i][j] * a[i][j];
                }
            }
        }
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// `M^T M` for a row-major matrix.
pub fn gram(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let mut g = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                g[i][j] += r[i] * r[j];
            }
        }
    }
    g
}

/// The equalize formula evaluated with plain loops against orthonormal `b`.
pub fn equalize_oracle(members: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = members[0].len();
    let n = members.len() as f64;
    let mut mu = vec![0.0; d];
    for w in members {
        for i in 0..d {
            mu[i] += w[i] / n;
        }
    }
    let project = |x: &[f64]| {
        let mut out = vec![0.0; d];
        for c in b {
            let mut p = 0.0;
            for i in 0..d {
                p += x[i] * c[i];
            }
            for i in 0..d {
                out[i] += p * c[i];
            }
        }
        out
    };
    let mu_b = project(&mu);
    let mut nu = vec![0.0; d];
    let mut nu2 = 0.0;
    for i in 0..d {
        nu[i] = mu[i] - mu_b[i];
        nu2 += nu[i] * nu[i];
    }
    let s = (1.0 - nu2).sqrt();
    members
        .iter()
        .map(|w| {
            let wb = project(w);
            let mut diff = vec![0.0; d];
            let mut dn = 0.0;
            for i in 0..d {
                diff[i] = wb[i] - mu_b[i];
                dn += diff[i] * diff[i];
            }
            let dn = dn.sqrt();
            (0..d).map(|i| nu[i] + s * diff[i] / dn).collect()
        })
        .collect()
}

/// Mean cosine distance table by nested loops over raw (unnormalized) vectors.
pub fn mac_oracle(targets: &[Vec<f64>], attributes: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for t in targets {
        for set in attributes {
            let mut f = 0.0;
            for a in set {
                let mut ta = 0.0;
                let mut tt = 0.0;
                let mut aa = 0.0;
                for i in 0..t.len() {
                    ta += t[i] * a[i];
                    tt += t[i] * t[i];
                    aa += a[i] * a[i];
                }
                f += 1.0 - ta / (tt.sqrt() * aa.sqrt());
            }
            total += f / set.len() as f64;
            count += 1.0;
        }
    }
    total / count
}

/// Two categories whose bias subspaces share the direction `g`.
pub struct Planted {
    pub set: EmbeddingSet,
    pub specs: Vec<CategorySpec>,
    pub g: Vec<f64>,
    /// Target and attribute words (all carry a `+g` association).
    pub neutral_words: Vec<String>,
}

fn spec(name: &str, pairs: &[(String, String)], targets: Vec<String>, attributes: Vec<Vec<String>>) -> CategorySpec {
    let sets: Vec<Vec<String>> = pairs.iter().map(|(a, b)| vec![a.clone(), b.clone()]).collect();
    CategorySpec {
        name: name.into(),
        defining_sets: sets.clone(),
        equality_sets: sets,
        target_words: vec![targets],
        attribute_sets: attributes,
    }
}

/// `dim` = 50, 500 words. Category A's defining pairs differ mostly along a
/// rotated mix of `g` and `u_a`, category B's along `g` then `u_b`, with
/// `<u_a, u_b> = 0.5`. Base vectors lie outside the planted span so every
/// pair member has the same norm.
pub fn planted(seed: u64) -> Planted {
    use rand::SeedableRng;
    let dim = 50;
    let words = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = random_orthonormal(&mut rng, 3, dim);
    let g = basis[0].clone();
    let u_a = basis[1].clone();
    let u_b: Vec<f64> = (0..dim).map(|i| 0.5 * basis[1][i] + 0.75f64.sqrt() * basis[2][i]).collect();
    let span = orthonormalize(vec![g.clone(), u_a.clone(), u_b.clone()]);

    let outside = |rng: &mut ChaCha8Rng| {
        let mut v = gaussian(rng, dim);
        for b in &span {
            let p = dot(&v, b);
            for i in 0..dim {
                v[i] -= p * b[i];
            }
        }
        unit(v)
    };
    let combine = |base: &[f64], parts: &[(f64, &[f64])]| -> Vec<f64> {
        let mut v = base.to_vec();
        for (c, d) in parts {
            for i in 0..dim {
                v[i] += c * d[i];
            }
        }
        v
    };

    let theta: f64 = 40f64.to_radians();
    let a1: Vec<f64> = (0..dim).map(|i| theta.cos() * g[i] + theta.sin() * u_a[i]).collect();
    let a2: Vec<f64> = (0..dim).map(|i| -theta.sin() * g[i] + theta.cos() * u_a[i]).collect();

    let mut vocab = Vec::new();
    let mut rows = Vec::new();
    let push = |name: String, v: Vec<f64>, vocab: &mut Vec<String>, rows: &mut Vec<Vec<f64>>| {
        vocab.push(name);
        rows.push(v);
    };

    let mut pairs_a = Vec::new();
    let mut pairs_b = Vec::new();
    for p in 0..20 {
        let base = outside(&mut rng);
        let (r1, r2) = (sign(&mut rng) * 0.5, sign(&mut rng) * 0.2);
        let off = combine(&vec![0.0; dim], &[(r1, &a1), (r2, &a2)]);
        let plus = combine(&base, &[(1.0, &off)]);
        let minus = combine(&base, &[(-1.0, &off)]);
        push(format!("a_pos{p}"), plus, &mut vocab, &mut rows);
        push(format!("a_neg{p}"), minus, &mut vocab, &mut rows);
        pairs_a.push((format!("a_pos{p}"), format!("a_neg{p}")));

        let base = outside(&mut rng);
        let (r1, r2) = (sign(&mut rng) * 0.5, sign(&mut rng) * 0.2);
        let off = combine(&vec![0.0; dim], &[(r1, &g), (r2, &u_b)]);
        let plus = combine(&base, &[(1.0, &off)]);
        let minus = combine(&base, &[(-1.0, &off)]);
        push(format!("b_pos{p}"), plus, &mut vocab, &mut rows);
        push(format!("b_neg{p}"), minus, &mut vocab, &mut rows);
        pairs_b.push((format!("b_pos{p}"), format!("b_neg{p}")));
    }

    let mut neutral_words = Vec::new();
    let biased_word = |name: String, vocab: &mut Vec<String>, rows: &mut Vec<Vec<f64>>, rng: &mut ChaCha8Rng| {
        let base = outside(rng);
        push(name.clone(), combine(&base, &[(0.8, &g)]), vocab, rows);
        name
    };
    let targets_a: Vec<String> = (0..10).map(|i| biased_word(format!("ta{i}"), &mut vocab, &mut rows, &mut rng)).collect();
    let targets_b: Vec<String> = (0..10).map(|i| biased_word(format!("tb{i}"), &mut vocab, &mut rows, &mut rng)).collect();
    let attrs_a: Vec<Vec<String>> = (0..2)
        .map(|s| (0..8).map(|i| biased_word(format!("xa{s}_{i}"), &mut vocab, &mut rows, &mut rng)).collect())
        .collect();
    let attrs_b: Vec<Vec<String>> = (0..2)
        .map(|s| (0..8).map(|i| biased_word(format!("xb{s}_{i}"), &mut vocab, &mut rows, &mut rng)).collect())
        .collect();
    neutral_words.extend(targets_a.iter().cloned());
    neutral_words.extend(targets_b.iter().cloned());
    neutral_words.extend(attrs_a.iter().flatten().cloned());
    neutral_words.extend(attrs_b.iter().flatten().cloned());

    let mut i = 0;
    while vocab.len() < words {
        let v = gaussian(&mut rng, dim);
        push(format!("filler{i}"), v, &mut vocab, &mut rows);
        i += 1;
    }

    let set = EmbeddingSet::from_rows(vocab, rows).unwrap().normalize().unwrap();
    let specs = vec![
        spec("alpha", &pairs_a, targets_a, attrs_a),
        spec("beta", &pairs_b, targets_b, attrs_b),
    ];
    Planted {
        set,
        specs,
        g,
        neutral_words,
    }
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Every word the bundled lexicons mention, deduplicated, in a fixed order.
pub fn bundled_words(names: &[&str]) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for name in names {
        let spec = biasspace_core::wordsets::bundled(name).unwrap();
        let all = spec
            .defining_sets
            .iter()
            .chain(&spec.equality_sets)
            .chain(&spec.target_words)
            .chain(&spec.attribute_sets)
            .flatten();
        for w in all {
            if seen.insert(w.clone()) {
                out.push(w.clone());
            }
        }
    }
    out
}

/// Write a word2vec-text file of `vocab` rows: the lexicon words first, then
/// fillers. Values are rounded to four decimals to keep the file small.
pub fn write_synthetic(path: &std::path::Path, lexicon: &[String], vocab: usize, dim: usize, seed: u64) {
    use rand::SeedableRng;
    use std::io::Write;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let file = std::fs::File::create(path).unwrap();
    let mut w = std::io::BufWriter::with_capacity(1 << 20, file);
    writeln!(w, "{vocab} {dim}").unwrap();
    let scale = 1.0 / (dim as f64).sqrt();
    let mut line = String::with_capacity(dim * 8);
    for i in 0..vocab {
        line.clear();
        match lexicon.get(i) {
            Some(word) => line.push_str(word),
            None => {
                use std::fmt::Write as _;
                let _ = write!(line, "tok{i}");
            }
        }
        for _ in 0..dim {
            use std::fmt::Write as _;
            let x: f64 = rng.sample::<f64, _>(StandardNormal) * scale;
            let _ = write!(line, " {x:.4}");
        }
        line.push('\n');
        w.write_all(line.as_bytes()).unwrap();
    }
    w.flush().unwrap();
}
