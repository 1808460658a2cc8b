use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::{rank_features, FeatureReport};

/// Word → categories map. Keys ending in `*` match any word with that prefix;
/// an exact entry wins over prefixes, and the longest matching prefix wins
/// among prefixes. Matching is case-insensitive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    exact: BTreeMap<String, Vec<String>>,
    prefixes: Vec<(String, Vec<String>)>,
    categories: BTreeSet<String>,
}

impl Lexicon {
    pub fn from_map(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::InvalidInput("lexicon is empty".into()));
        }
        let mut lex = Lexicon::default();
        for (key, cats) in map {
            let key = key.to_lowercase();
            lex.categories.extend(cats.iter().cloned());
            match key.strip_suffix('*') {
                Some(prefix) => lex.prefixes.push((prefix.to_string(), cats)),
                None => {
                    lex.exact.insert(key, cats);
                }
            }
        }
        // Longest prefix first.
        lex.prefixes.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(lex)
    }

    /// JSON object of word-or-prefix to category list.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_map(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn categories(&self) -> &BTreeSet<String> {
        &self.categories
    }

    pub fn lookup(&self, word: &str) -> &[String] {
        let word = word.to_lowercase();
        if let Some(c) = self.exact.get(&word) {
            return c;
        }
        self.prefixes.iter().find(|(p, _)| word.starts_with(p.as_str())).map_or(&[], |(_, c)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub method: String,
    /// dataset → category → percentage of top words in the category.
    pub percent: BTreeMap<String, BTreeMap<String, f64>>,
    /// dataset → the profiled words.
    pub top_words: BTreeMap<String, Vec<String>>,
}

impl CategoryProfile {
    /// The `n` best-ranked tested features of a report.
    pub fn top_words(report: &FeatureReport, n: usize) -> Vec<String> {
        rank_features(report).into_iter().filter(|f| f.is_tested()).take(n).map(|f| f.name.clone()).collect()
    }

    /// Fold another profile of the same method into this one.
    pub fn merge(&mut self, other: CategoryProfile) -> Result<()> {
        if other.method != self.method {
            return Err(Error::InvalidInput(format!("cannot merge {} into {}", other.method, self.method)));
        }
        for (d, p) in other.percent {
            if self.percent.insert(d.clone(), p).is_some() {
                return Err(Error::InvalidInput(format!("dataset {d} profiled twice for {}", self.method)));
            }
        }
        self.top_words.extend(other.top_words);
        Ok(())
    }
}

/// Share of `top_words` falling into each lexicon category, in percent. Every
/// lexicon category appears, with 0 when unused; a word counts toward each
/// of its categories.
pub fn category_profile(method: &str, dataset: &str, top_words: &[String], lexicon: &Lexicon) -> CategoryProfile {
    let mut counts: BTreeMap<String, usize> = lexicon.categories().iter().map(|c| (c.clone(), 0)).collect();
    for w in top_words {
        let cats: BTreeSet<&String> = lexicon.lookup(w).iter().collect();
        for c in cats {
            *counts.get_mut(c).expect("category registered") += 1;
        }
    }
    let n = top_words.len();
    let pct = counts
        .into_iter()
        .map(|(c, k)| (c, if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 }))
        .collect();
    CategoryProfile {
        method: method.to_string(),
        percent: BTreeMap::from([(dataset.to_string(), pct)]),
        top_words: BTreeMap::from([(dataset.to_string(), top_words.to_vec())]),
    }
}

/// Mean over (dataset, category) cells of the squared deviation of each
/// method's percentage from the cross-method mean. Lower is more stable.
/// Profiles of the same method are merged first; all methods must cover the
/// same cells.
pub fn stability(profiles: &[CategoryProfile]) -> Result<BTreeMap<String, f64>> {
    let mut by_method: BTreeMap<String, CategoryProfile> = BTreeMap::new();
    for p in profiles {
        match by_method.get_mut(&p.method) {
            Some(existing) => existing.merge(p.clone())?,
            None => {
                by_method.insert(p.method.clone(), p.clone());
            }
        }
    }
    let cells = |p: &CategoryProfile| -> Vec<(String, String)> {
        p.percent.iter().flat_map(|(d, m)| m.keys().map(move |c| (d.clone(), c.clone()))).collect()
    };
    let mut methods = by_method.values();
    let first = methods.next().ok_or_else(|| Error::InvalidInput("no profiles".into()))?;
    let grid = cells(first);
    if grid.is_empty() {
        return Err(Error::InvalidInput("profiles have no cells".into()));
    }
    if let Some(bad) = methods.find(|p| cells(p) != grid) {
        return Err(Error::InvalidInput(format!("method {} covers a different dataset/category grid", bad.method)));
    }
    let m = by_method.len() as f64;
    let mut sb: BTreeMap<String, f64> = by_method.keys().map(|k| (k.clone(), 0.0)).collect();
    for (d, c) in &grid {
        let consensus = by_method.values().map(|p| p.percent[d][c]).sum::<f64>() / m;
        for (name, p) in &by_method {
            *sb.get_mut(name).expect("method present") += (consensus - p.percent[d][c]).powi(2);
        }
    }
    for v in sb.values_mut() {
        *v /= grid.len() as f64;
    }
    Ok(sb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex() -> Lexicon {
        Lexicon::from_json(r#"{"happy": ["affect", "posemo"], "sad": ["affect", "negemo"], "work*": ["work"], "worker": ["social"], "w*": ["misc"]}"#)
            .unwrap()
    }

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn lookup_rules() {
        let l = lex();
        assert_eq!(l.lookup("Happy"), ["affect", "posemo"]);
        assert_eq!(l.lookup("working"), ["work"]);
        assert_eq!(l.lookup("worker"), ["social"]);
        assert_eq!(l.lookup("wow"), ["misc"]);
        assert!(l.lookup("table").is_empty());
        assert!(Lexicon::from_json("{}").is_err());
    }

    #[test]
    fn profile_examples() {
        let l = lex();
        let p = category_profile("m", "d", &words(&["table", "chair"]), &l);
        assert!(p.percent["d"].values().all(|&v| v == 0.0));
        assert_eq!(p.percent["d"].len(), l.categories().len());
        let p = category_profile("m", "d", &words(&["happy", "sad"]), &l);
        assert_eq!(p.percent["d"]["affect"], 100.0);
        assert_eq!(p.percent["d"]["posemo"], 50.0);
        let p = category_profile("m", "d", &words(&["happy", "work", "table", "x"]), &l);
        assert_eq!(p.percent["d"]["work"], 25.0);
    }

    fn fixed(method: &str, vals: &[(&str, &str, f64)]) -> CategoryProfile {
        let mut percent: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for &(d, c, v) in vals {
            percent.entry(d.into()).or_default().insert(c.into(), v);
        }
        CategoryProfile { method: method.into(), percent, top_words: BTreeMap::new() }
    }

    #[test]
    fn stability_definitional_cases() {
        let cells = [("a", "x", 10.0), ("a", "y", 3.5), ("b", "x", 0.0)];
        let same: Vec<_> = ["m1", "m2", "m3"].iter().map(|m| fixed(m, &cells)).collect();
        assert!(stability(&same).unwrap().values().all(|&v| v == 0.0));

        let shifted: Vec<_> = cells.iter().map(|&(d, c, v)| (d, c, v + 2.0)).collect();
        let sb = stability(&[fixed("p", &cells), fixed("q", &shifted)]).unwrap();
        assert!((sb["p"] - 1.0).abs() < 1e-12 && (sb["q"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stability_grid_mismatch() {
        let a = fixed("a", &[("d", "x", 1.0)]);
        let b = fixed("b", &[("d", "y", 1.0)]);
        assert!(stability(&[a, b]).is_err());
    }

    #[test]
    fn stability_merges_datasets() {
        let a1 = fixed("a", &[("d1", "x", 1.0)]);
        let a2 = fixed("a", &[("d2", "x", 5.0)]);
        let b = fixed("b", &[("d1", "x", 3.0), ("d2", "x", 5.0)]);
        let sb = stability(&[a1, a2, b]).unwrap();
        // d1: consensus 2, deviations 1; d2: 0.
        assert!((sb["a"] - 0.5).abs() < 1e-12 && (sb["b"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn top_words_skip_untested() {
        use crate::select::FeatureResult;
        let f = |name: &str, p: Option<f64>| FeatureResult {
            name: name.into(),
            index: 0,
            p_value: p,
            statistic: None,
            direction: 0,
            n_pairs: 0,
            tn: 0,
            cp: 0,
            skip_reason: p.is_none().then(|| "x".to_string()),
        };
        let report = FeatureReport {
            method: "m".into(),
            config: None,
            features: vec![f("b", Some(0.2)), f("a", None), f("c", Some(0.01))],
            n_tested: 2,
            n_skipped: 1,
            runtime_secs: 0.0,
        };
        assert_eq!(CategoryProfile::top_words(&report, 5), ["c", "b"]);
    }

    proptest! {
        #[test]
        fn stability_shift_invariant(vals in prop::collection::vec(0.0..100.0f64, 12), cell in 0usize..4, shift in -20.0..20.0f64) {
            let cats = ["c0", "c1", "c2", "c3"];
            let profile = |m: usize, bump: f64| {
                let cells: Vec<(&str, &str, f64)> = (0..4)
                    .map(|c| ("d", cats[c], vals[m * 4 + c] + if c == cell { bump } else { 0.0 }))
                    .collect();
                fixed(&format!("m{m}"), &cells)
            };
            let base = stability(&(0..3).map(|m| profile(m, 0.0)).collect::<Vec<_>>()).unwrap();
            let moved = stability(&(0..3).map(|m| profile(m, shift)).collect::<Vec<_>>()).unwrap();
            for (k, v) in &base {
                prop_assert!((v - moved[k]).abs() < 1e-9 * (1.0 + v.abs()));
            }
        }
    }
}
