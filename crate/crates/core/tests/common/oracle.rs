//! Straight-line reference implementations used as test oracles. They follow
//! the textbook formulas literally (plain exp/ln, nested loops, full sorts)
//! and share no code with the library.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rankaug::losses::BatchView;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

pub fn pointwise(v: &BatchView) -> f64 {
    let mut s = 0.0;
    for i in 0..v.preds.len() {
        let p = v.preds[i].clamp(1e-12, 1.0 - 1e-12);
        let y = if v.labels[i] { 1.0 } else { 0.0 };
        s += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    -s / v.preds.len() as f64
}

pub fn pairwise(v: &BatchView, m: f64) -> f64 {
    let mut s = 0.0;
    for &(p, n) in &v.pairs {
        let h = m - v.preds[p] + v.preds[n];
        if h > 0.0 {
            s += h;
        }
    }
    s / v.pairs.len() as f64
}

pub fn scl(v: &BatchView, tau: f64) -> f64 {
    let n = v.reps.len();
    let n_pos = v.labels.iter().filter(|&&l| l).count() as f64;
    if n_pos == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j || !v.labels[i] || !v.labels[j] || v.query_ids[i] != v.query_ids[j] {
                continue;
            }
            let mut denom = 0.0;
            for k in 0..n {
                if k != i {
                    denom += (dot(&v.reps[i], &v.reps[k]) / tau).exp();
                }
            }
            let num = (dot(&v.reps[i], &v.reps[j]) / tau).exp();
            total += -(1.0 / n_pos) * (num / denom).ln();
        }
    }
    total
}

pub fn ctriplet(v: &BatchView, alpha: f64) -> f64 {
    let mut queries: Vec<&String> = v.pairs.iter().map(|&(p, _)| &v.query_ids[p]).collect();
    queries.sort();
    queries.dedup();
    let dim = v.reps[0].len();
    let mut per_query = Vec::new();
    for q in queries {
        let mut cp = vec![0.0; dim];
        let mut cn = vec![0.0; dim];
        let (mut np, mut nn) = (0.0, 0.0);
        for i in 0..v.reps.len() {
            if &v.query_ids[i] != q {
                continue;
            }
            for d in 0..dim {
                if v.labels[i] {
                    cp[d] += v.reps[i][d];
                } else {
                    cn[d] += v.reps[i][d];
                }
            }
            if v.labels[i] {
                np += 1.0;
            } else {
                nn += 1.0;
            }
        }
        for d in 0..dim {
            cp[d] /= np;
            cn[d] /= nn;
        }
        let mut s = 0.0;
        let mut count = 0.0;
        for &(p, n) in &v.pairs {
            if &v.query_ids[p] != q {
                continue;
            }
            s += (dist2(&v.reps[p], &cp) - dist2(&v.reps[n], &cn) + alpha).max(0.0);
            count += 1.0;
        }
        per_query.push(s / count);
    }
    per_query.iter().sum::<f64>() / per_query.len() as f64
}

pub fn infonce(v: &BatchView, tau: f64) -> f64 {
    let n = v.reps.len();
    let mut terms = Vec::new();
    for i in 0..n {
        let Some(p) = v.partners[i] else { continue };
        if !v.labels[i] || p == i || v.query_ids[p] != v.query_ids[i] {
            continue;
        }
        let mut denom = 0.0;
        for k in 0..n {
            if k != i && v.query_ids[k] == v.query_ids[i] {
                denom += (dot(&v.reps[k], &v.reps[i]) / tau).exp();
            }
        }
        let num = (dot(&v.reps[p], &v.reps[i]) / tau).exp();
        terms.push(-(num / denom).ln());
    }
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

/// `None` when no positive has a same-query positive partner.
pub fn nca(v: &BatchView) -> Option<f64> {
    let n = v.reps.len();
    let mut terms = Vec::new();
    for i in 0..n {
        if !v.labels[i] {
            continue;
        }
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (-dist2(&v.reps[i], &v.reps[k])).exp();
            }
        }
        let mut p_i = 0.0;
        let mut has_same = false;
        for j in 0..n {
            if j != i && v.labels[j] && v.query_ids[j] == v.query_ids[i] {
                has_same = true;
                p_i += (-dist2(&v.reps[i], &v.reps[j])).exp() / denom;
            }
        }
        if has_same {
            terms.push(-p_i.max(1e-12).ln());
        }
    }
    if terms.is_empty() {
        None
    } else {
        Some(terms.iter().sum::<f64>() / terms.len() as f64)
    }
}

/// A random batch of `n_triples` (positive, negative) triples over up to
/// `n_queries` queries. Each positive is linked to another positive of its
/// query with probability one half.
pub fn random_batch(rng: &mut ChaCha8Rng, n_triples: usize, n_queries: usize, dim: usize, scale: f64) -> BatchView {
    let mut v = BatchView::default();
    for t in 0..n_triples {
        let q = format!("q{}", rng.gen_range(0..n_queries));
        for label in [true, false] {
            v.reps.push((0..dim).map(|_| rng.gen_range(-scale..scale)).collect());
            v.preds.push(rng.gen_range(0.01..0.99));
            v.labels.push(label);
            v.query_ids.push(q.clone());
            v.augmented.push(false);
            v.partners.push(None);
        }
        v.pairs.push((2 * t, 2 * t + 1));
    }
    for i in (0..v.reps.len()).step_by(2) {
        if v.partners[i].is_some() || !rng.gen_bool(0.5) {
            continue;
        }
        let free: Vec<usize> = (0..v.reps.len())
            .step_by(2)
            .filter(|&j| j != i && v.partners[j].is_none() && v.query_ids[j] == v.query_ids[i])
            .collect();
        if let Some(&j) = free.first() {
            v.partners[i] = Some(j);
            v.partners[j] = Some(i);
            v.augmented[j] = true;
        }
    }
    v
}

/// nDCG@k with exponential gain, computing the ideal DCG by trying every
/// ordering of the judged grades.
pub fn ndcg_exhaustive(ranked: &[u32], judged: &[u32], k: usize) -> Option<f64> {
    fn dcg(grades: &[u32], k: usize) -> f64 {
        let mut s = 0.0;
        for (i, &g) in grades.iter().take(k).enumerate() {
            s += (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2();
        }
        s
    }
    fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, head);
                out.push(p);
            }
        }
        out
    }
    let ideal = permutations(judged).iter().map(|p| dcg(p, k)).fold(0.0, f64::max);
    if ideal == 0.0 {
        None
    } else {
        Some(dcg(ranked, k) / ideal)
    }
}

/// Exact two-sided sign-flip p-value by enumerating all `2^n` assignments.
pub fn exact_sign_flip(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let observed = (diffs.iter().sum::<f64>() / n as f64).abs();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let mut s = 0.0;
        for (i, d) in diffs.iter().enumerate() {
            s += if mask >> i & 1 == 1 { -d } else { *d };
        }
        if (s / n as f64).abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Indices of the `k` largest scores by full sort (ties by index).
pub fn top_k_full_sort(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Documents of 1..=`max_sentences` sentences over a small vocabulary
/// `v0..v{vocab}` so that query terms and ties both occur.
pub fn random_docs(rng: &mut ChaCha8Rng, n: usize, max_sentences: usize, vocab: usize) -> Vec<rankaug::corpus::Document> {
    (0..n)
        .map(|i| {
            let sentences: Vec<String> = (0..rng.gen_range(1..=max_sentences))
                .map(|_| {
                    let words: Vec<String> = (0..rng.gen_range(1..=9)).map(|_| format!("v{}", rng.gen_range(0..vocab))).collect();
                    format!("{}.", words.join(" "))
                })
                .collect();
            rankaug::corpus::Document::new(format!("r{i}"), sentences.join(" "))
        })
        .collect()
}

/// BM25 of a token list, written out from the formula.
pub fn bm25_sentence(query: &[String], sentence: &[String], n_docs: usize, df: &dyn Fn(&str) -> usize, avg_len: f64) -> f64 {
    let (k1, b) = (1.2, 0.75);
    let mut s = 0.0;
    for t in query {
        let tf = sentence.iter().filter(|x| *x == t).count() as f64;
        if tf > 0.0 {
            let d = df(t) as f64;
            let idf = (1.0 + (n_docs as f64 - d + 0.5) / (d + 0.5)).ln();
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * sentence.len() as f64 / avg_len));
        }
    }
    s
}

/// Cosine of mean embeddings with zero vectors for unknown tokens.
pub fn cosine_of_means(a: &[String], b: &[String], table: &rankaug::embeddings::EmbeddingTable) -> f64 {
    let mean = |ts: &[String]| {
        let mut m = vec![0.0; table.dim()];
        for t in ts {
            if let Some(v) = table.get(t) {
                for d in 0..m.len() {
                    m[d] += v[d];
                }
            }
        }
        m.iter().map(|x| x / ts.len() as f64).collect::<Vec<f64>>()
    };
    let (x, y) = (mean(a), mean(b));
    let (nx, ny) = (dot(&x, &x).sqrt(), dot(&y, &y).sqrt());
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        dot(&x, &y) / (nx * ny)
    }
}
