//! Writes the bundled toy corpus: 200 labeled documents built from four
//! topics plus background words, with three planted words that change the
//! label. Topic 0 also shifts the label, so its words are correlated with the
//! label without causing it.
//!
//! Usage: cargo run -p cfs-core --example toy_corpus -- <out.jsonl>

use std::collections::BTreeSet;

use cfs_core::corpus::{write_jsonl, Document};
use cfs_core::seed;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

const PLANTED: [(&str, f64); 3] = [("superb", 3.0), ("delight", 3.0), ("awful", -3.0)];

fn pseudo_words(rng: &mut seed::Rng, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut out = Vec::new();
    while out.len() < n {
        let w: String = (0..3).flat_map(|_| [*C.choose(rng).unwrap() as char, *V.choose(rng).unwrap() as char]).collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn main() {
    let out = std::env::args().nth(1).expect("output path");
    let mut rng = seed::rng(seed::derive(20240501, "toy-corpus", 0));
    let mut taken: BTreeSet<String> = PLANTED.iter().map(|p| p.0.to_string()).collect();
    let background = pseudo_words(&mut rng, 60, &mut taken);
    let topics: Vec<Vec<String>> = (0..4).map(|_| pseudo_words(&mut rng, 40, &mut taken)).collect();
    let gamma = Gamma::new(0.3, 1.0).unwrap();

    let docs: Vec<Document> = (0..200)
        .map(|_| {
            let raw: Vec<f64> = (0..4).map(|_| gamma.sample(&mut rng) + 1e-9).collect();
            let total: f64 = raw.iter().sum();
            let theta: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let mut words: Vec<String> = (0..60)
                .map(|_| {
                    if rng.random::<f64>() < 0.3 {
                        background.choose(&mut rng).unwrap().clone()
                    } else {
                        let mut u = rng.random::<f64>();
                        let mut t = 0;
                        while t < 3 && u >= theta[t] {
                            u -= theta[t];
                            t += 1;
                        }
                        topics[t].choose(&mut rng).unwrap().clone()
                    }
                })
                .collect();
            let mut logit = -0.5 + 3.0 * (theta[0] - 0.25);
            for (w, effect) in PLANTED {
                if rng.random::<f64>() < 0.3 {
                    logit += effect;
                    for _ in 0..rng.random_range(1..=2) {
                        let at = rng.random_range(0..=words.len());
                        words.insert(at, w.to_string());
                    }
                }
            }
            let label = u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp()));
            Document { text: words.join(" "), label }
        })
        .collect();
    let f = std::fs::File::create(&out).expect("create output");
    write_jsonl(std::io::BufWriter::new(f), &docs).expect("write corpus");
}
