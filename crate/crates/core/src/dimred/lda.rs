use nalgebra::DMatrix;
use rand::Rng as _;
use statrs::function::gamma::ln_gamma;

use super::{FitStats, LdaOptions, ReducerParams};
use crate::error::{Error, Result};
use crate::seed;

fn tokens(x: &DMatrix<f64>) -> Result<Vec<Vec<usize>>> {
    let mut docs = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let mut doc = Vec::new();
        for w in 0..x.ncols() {
            let c = x[(i, w)];
            if c < 0.0 || c.fract() != 0.0 || !c.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "LDA needs non-negative integer counts, found {c} at ({i}, {w})"
                )));
            }
            doc.extend(std::iter::repeat_n(w, c as usize));
        }
        docs.push(doc);
    }
    Ok(docs)
}

fn sample_discrete(rng: &mut seed::Rng, weights: &[f64], total: f64) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Collapsed log joint `log p(w, z)` up to constants that do not depend on z.
fn log_likelihood(ndk: &[Vec<u32>], nkw: &[Vec<u32>], nk: &[u32], alpha: f64, beta: f64, v: usize) -> f64 {
    let k = nk.len();
    let mut ll = 0.0;
    for t in 0..k {
        ll += ln_gamma(v as f64 * beta) - ln_gamma(nk[t] as f64 + v as f64 * beta);
        for &c in &nkw[t] {
            if c > 0 {
                ll += ln_gamma(c as f64 + beta) - ln_gamma(beta);
            }
        }
    }
    for row in ndk {
        let nd: u32 = row.iter().sum();
        ll += ln_gamma(k as f64 * alpha) - ln_gamma(nd as f64 + k as f64 * alpha);
        for &c in row {
            if c > 0 {
                ll += ln_gamma(c as f64 + alpha) - ln_gamma(alpha);
            }
        }
    }
    ll
}

/// Collapsed Gibbs sampling. Posterior means of the document-topic and
/// topic-word distributions are averaged over the last `n_average` sweeps.
pub(super) fn fit(x: &DMatrix<f64>, k: usize, root: u64, opts: &LdaOptions) -> Result<(ReducerParams, FitStats)> {
    let docs = tokens(x)?;
    let v = x.ncols();
    let alpha = opts.alpha.unwrap_or(50.0 / k as f64);
    let beta = opts.beta;
    let mut rng = seed::rng(seed::derive(root, "lda", 0));

    let mut ndk = vec![vec![0u32; k]; docs.len()];
    let mut nkw = vec![vec![0u32; v]; k];
    let mut nk = vec![0u32; k];
    let mut z: Vec<Vec<usize>> = Vec::with_capacity(docs.len());
    for (d, doc) in docs.iter().enumerate() {
        let zd: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
        for (&w, &t) in doc.iter().zip(&zd) {
            ndk[d][t] += 1;
            nkw[t][w] += 1;
            nk[t] += 1;
        }
        z.push(zd);
    }

    let n_average = opts.n_average.min(opts.n_iters).max(1);
    let burn = opts.n_iters.saturating_sub(n_average);
    let mut theta_sum = DMatrix::<f64>::zeros(docs.len(), k);
    let mut phi_sum = DMatrix::<f64>::zeros(k, v);
    let mut averaged = 0usize;
    let mut trace = Vec::with_capacity(opts.n_iters);
    let mut token_counts = Vec::with_capacity(opts.n_iters);
    let vbeta = v as f64 * beta;
    let mut p = vec![0.0; k];
    for sweep in 0..opts.n_iters.max(1) {
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = z[d][i];
                ndk[d][old] -= 1;
                nkw[old][w] -= 1;
                nk[old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    let pt = (ndk[d][t] as f64 + alpha) * (nkw[t][w] as f64 + beta) / (nk[t] as f64 + vbeta);
                    p[t] = pt;
                    total += pt;
                }
                let new = sample_discrete(&mut rng, &p, total);
                z[d][i] = new;
                ndk[d][new] += 1;
                nkw[new][w] += 1;
                nk[new] += 1;
            }
        }
        trace.push(log_likelihood(&ndk, &nkw, &nk, alpha, beta, v));
        token_counts.push(ndk.iter().flatten().map(|&c| c as u64).sum());
        if sweep >= burn {
            averaged += 1;
            for (d, row) in ndk.iter().enumerate() {
                let nd: u32 = row.iter().sum();
                for t in 0..k {
                    theta_sum[(d, t)] += (row[t] as f64 + alpha) / (nd as f64 + k as f64 * alpha);
                }
            }
            for t in 0..k {
                for w in 0..v {
                    phi_sum[(t, w)] += (nkw[t][w] as f64 + beta) / (nk[t] as f64 + vbeta);
                }
            }
        }
    }
    let mut doc_topic = theta_sum / averaged as f64;
    let topic_word = phi_sum / averaged as f64;
    let mut degenerate_rows = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        if doc.is_empty() {
            doc_topic.row_mut(d).fill(1.0 / k as f64);
            degenerate_rows.push(d);
        }
    }
    let stats = FitStats { iterations: opts.n_iters, objective: trace, degenerate_rows, token_counts };
    Ok((ReducerParams::Lda { topic_word, alpha, infer_iters: opts.infer_iters, doc_topic }, stats))
}

/// Held-out document-topic proportions by Gibbs sampling with the
/// topic-word distributions fixed. Each row uses its own seed stream.
pub(super) fn infer(x: &DMatrix<f64>, topic_word: &DMatrix<f64>, alpha: f64, iters: usize, root: u64) -> Result<DMatrix<f64>> {
    let docs = tokens(x)?;
    let k = topic_word.nrows();
    let iters = iters.max(1);
    let keep_from = iters / 2;
    let mut theta = DMatrix::zeros(docs.len(), k);
    let mut p = vec![0.0; k];
    for (d, doc) in docs.iter().enumerate() {
        if doc.is_empty() {
            theta.row_mut(d).fill(1.0 / k as f64);
            continue;
        }
        let mut rng = seed::rng(seed::derive(root, "lda-infer", d as u64));
        let mut counts = vec![0u32; k];
        let mut z: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
        for &t in &z {
            counts[t] += 1;
        }
        let mut kept = 0usize;
        for it in 0..iters {
            for (i, &w) in doc.iter().enumerate() {
                counts[z[i]] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    p[t] = (counts[t] as f64 + alpha) * topic_word[(t, w)];
                    total += p[t];
                }
                z[i] = sample_discrete(&mut rng, &p, total);
                counts[z[i]] += 1;
            }
            if it >= keep_from {
                kept += 1;
                let denom = doc.len() as f64 + k as f64 * alpha;
                for t in 0..k {
                    theta[(d, t)] += (counts[t] as f64 + alpha) / denom;
                }
            }
        }
        for t in 0..k {
            theta[(d, t)] /= kept as f64;
        }
    }
    Ok(theta)
}
