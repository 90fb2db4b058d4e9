//! Word-frequency scoring and rare-biased calibration pools.
//!
//! Frequency lives in a user-supplied table of raw counts. A word's Zipf
//! score is its log10 frequency per billion words; 3.0 marks one
//! occurrence per million. Words below the threshold, or absent from the
//! table entirely, belong to the lexical tail. Utterances are ranked by
//! rare-density (the tail fraction of their words) to assemble
//! calibration pools that oversample the tail.
//!
//! Table format: UTF-8 lines `word<TAB>count`, with an optional
//! `#total <count>` header overriding the summed total. Corpus manifests
//! are `id<TAB>text` lines. Tokenization is deliberately plain: lowercase,
//! drop ASCII punctuation, split on whitespace.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TarqError;
use crate::stats::Tag;
use crate::Result;

/// Word-count table with case-folded exact-match lookups.
#[derive(Debug, Clone)]
pub struct FreqTable {
    entries: HashMap<String, u64>,
    total: u64,
}

impl FreqTable {
    /// Build from (word, count) pairs; keys are lowercased and repeated
    /// words accumulate.
    pub fn from_counts<I, W>(counts: I) -> Self
    where
        I: IntoIterator<Item = (W, u64)>,
        W: AsRef<str>,
    {
        let mut entries: HashMap<String, u64> = HashMap::new();
        for (w, c) in counts {
            *entries.entry(w.as_ref().to_lowercase()).or_insert(0) += c;
        }
        let total = entries.values().sum();
        Self { entries, total }
    }

    /// Parse the `word<TAB>count` text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, u64> = HashMap::new();
        let mut declared_total = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#total") {
                declared_total = Some(rest.trim().parse::<u64>().map_err(|e| {
                    TarqError::BadSpec(format!("line {}: bad total: {e}", lineno + 1))
                })?);
                continue;
            }
            let (word, count) = line.split_once('\t').ok_or_else(|| {
                TarqError::BadSpec(format!("line {}: expected word<TAB>count", lineno + 1))
            })?;
            let count: u64 = count.trim().parse().map_err(|e| {
                TarqError::BadSpec(format!("line {}: bad count: {e}", lineno + 1))
            })?;
            *entries.entry(word.to_lowercase()).or_insert(0) += count;
        }
        let total = declared_total.unwrap_or_else(|| entries.values().sum());
        Ok(Self { entries, total })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn count(&self, word: &str) -> u64 {
        self.entries
            .get(&word.to_lowercase())
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Zipf score: log10 occurrences per billion words. `None` marks a word
/// with no frequency evidence.
pub fn zipf_score(word: &str, table: &FreqTable) -> Option<f64> {
    let count = table.count(word);
    if count == 0 {
        return None;
    }
    Some((count as f64 * 1e9 / table.total() as f64).log10())
}

/// Tail iff the score is strictly below the threshold or the word is
/// out of vocabulary (no evidence reads as rare).
pub fn tag_word(word: &str, table: &FreqTable, threshold: f64) -> Tag {
    match zipf_score(word, table) {
        Some(s) if s < threshold => Tag::Tail,
        Some(_) => Tag::Common,
        None => Tag::Tail,
    }
}

/// One utterance of a calibration corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub words: Vec<String>,
}

/// Lowercase, drop ASCII punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Parse an `id<TAB>text` corpus manifest.
pub fn parse_corpus(text: &str) -> Result<Vec<Utterance>> {
    let mut utts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').ok_or_else(|| {
            TarqError::BadSpec(format!("line {}: expected id<TAB>text", lineno + 1))
        })?;
        utts.push(Utterance {
            id: id.to_string(),
            words: tokenize(body),
        });
    }
    Ok(utts)
}

/// Fraction of an utterance's words in the tail.
pub fn rare_density(utt: &Utterance, table: &FreqTable, threshold: f64) -> Result<f64> {
    if utt.words.is_empty() {
        return Err(TarqError::EmptyUtterance);
    }
    let tail = utt
        .words
        .iter()
        .filter(|w| tag_word(w, table, threshold) == Tag::Tail)
        .count();
    Ok(tail as f64 / utt.words.len() as f64)
}

/// Calibration pool construction strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    /// Top-n utterances by rare-density from a single source.
    RTop,
    /// Half rare-biased, half uniformly sampled from the complement.
    RMix,
    /// Per-source rare-dense candidate stage, then a global top-n.
    RCross,
}

/// Rank (index, density) pairs by density descending, index ascending.
fn ranked_densities(
    source: &[Utterance],
    table: &FreqTable,
    threshold: f64,
) -> Result<Vec<(usize, f64)>> {
    let mut ranked = source
        .iter()
        .enumerate()
        .map(|(i, u)| rare_density(u, table, threshold).map(|rho| (i, rho)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Candidate stage for the cross-source pool: from each source take the
/// ceil(4n/3) most rare-dense utterances (or the whole source if it is
/// smaller). Returns `(source index, utterance index, density)` triples.
pub fn cross_candidate_stage(
    sources: &[Vec<Utterance>],
    n: usize,
    table: &FreqTable,
    threshold: f64,
) -> Result<Vec<(usize, usize, f64)>> {
    let per_source = (4 * n).div_ceil(3);
    let mut candidates = Vec::new();
    for (s, source) in sources.iter().enumerate() {
        let ranked = ranked_densities(source, table, threshold)?;
        for &(i, rho) in ranked.iter().take(per_source) {
            candidates.push((s, i, rho));
        }
    }
    Ok(candidates)
}

/// Assemble a rare-biased calibration pool of `n` utterances.
pub fn build_pool(
    sources: &[Vec<Utterance>],
    kind: PoolKind,
    n: usize,
    seed: u64,
    table: &FreqTable,
    threshold: f64,
) -> Result<Vec<Utterance>> {
    match kind {
        PoolKind::RTop | PoolKind::RMix => {
            if sources.len() != 1 {
                return Err(TarqError::BadSpec(format!(
                    "{kind:?} takes exactly one source, got {}",
                    sources.len()
                )));
            }
        }
        PoolKind::RCross => {
            if sources.len() < 2 {
                return Err(TarqError::BadSpec(format!(
                    "RCross needs at least two sources, got {}",
                    sources.len()
                )));
            }
        }
    }
    for source in sources {
        if source.len() < n {
            return Err(TarqError::InsufficientCorpus {
                needed: n,
                available: source.len(),
            });
        }
    }

    match kind {
        PoolKind::RTop => {
            let ranked = ranked_densities(&sources[0], table, threshold)?;
            Ok(ranked[..n].iter().map(|&(i, _)| sources[0][i].clone()).collect())
        }
        PoolKind::RMix => {
            let source = &sources[0];
            let ranked = ranked_densities(source, table, threshold)?;
            let top_n = n.div_ceil(2);
            let rand_n = n / 2;
            let mut pool: Vec<Utterance> = ranked[..top_n]
                .iter()
                .map(|&(i, _)| source[i].clone())
                .collect();
            // Uniform sample without replacement from the complement;
            // disjoint from the top half by construction.
            let mut rest: Vec<usize> = ranked[top_n..].iter().map(|&(i, _)| i).collect();
            rest.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for k in 0..rand_n {
                let pick = rng.gen_range(k..rest.len());
                rest.swap(k, pick);
                pool.push(source[rest[k]].clone());
            }
            Ok(pool)
        }
        PoolKind::RCross => {
            let mut candidates = cross_candidate_stage(sources, n, table, threshold)?;
            candidates.sort_by(|a, b| {
                b.2.total_cmp(&a.2)
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            Ok(candidates[..n]
                .iter()
                .map(|&(s, i, _)| sources[s][i].clone())
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> FreqTable {
        FreqTable::from_counts([
            ("the", 50_000u64),
            ("had", 20_000),
            ("jam", 500),
            ("merganser", 2),
            ("quay", 9),
        ])
    }

    #[test]
    fn zipf_boundary_values_are_exact() {
        let t = FreqTable::from_counts([("common", 1_000u64), ("rest", 999_999_000)]);
        assert_eq!(t.total(), 1_000_000_000);
        assert_eq!(zipf_score("common", &t), Some(3.0));

        let small = FreqTable::from_counts([("once", 1u64), ("filler", 999_999)]);
        assert_eq!(small.total(), 1_000_000);
        assert_eq!(zipf_score("once", &small), Some(3.0));
    }

    #[test]
    fn zipf_oov_is_none() {
        assert_eq!(zipf_score("nonesuch", &table()), None);
    }

    #[test]
    fn lookups_are_case_folded() {
        let t = table();
        assert_eq!(t.count("The"), 50_000);
        assert_eq!(zipf_score("MERGANSER", &t), zipf_score("merganser", &t));
    }

    #[test]
    fn tag_boundary_is_strict() {
        let t = FreqTable::from_counts([("edge", 1_000u64), ("rest", 999_999_000)]);
        assert_eq!(zipf_score("edge", &t), Some(3.0));
        assert_eq!(tag_word("edge", &t, 3.0), Tag::Common);
        assert_eq!(tag_word("unseen", &t, 3.0), Tag::Tail);

        let below = FreqTable::from_counts([("dim", 700u64), ("rest", 999_999_300)]);
        let s = zipf_score("dim", &below).unwrap();
        assert!(s < 3.0 && s > 2.8);
        assert_eq!(tag_word("dim", &below, 3.0), Tag::Tail);
    }

    #[test]
    fn density_counts_tail_words() {
        let t = table();
        let utt = Utterance {
            id: "u1".into(),
            words: tokenize("the merganser had"),
        };
        // Total 70,511: "merganser" scores ~4.45... against a small total,
        // so use a dedicated big-total table where only it is rare.
        let big = FreqTable::from_counts([
            ("the", 500_000_000u64),
            ("had", 400_000_000),
            ("merganser", 99),
            ("filler", 99_999_901),
        ]);
        assert_eq!(rare_density(&utt, &big, 3.0).unwrap(), 1.0 / 3.0);

        let all_tail = Utterance {
            id: "u2".into(),
            words: vec!["xyzzy".into(), "plugh".into()],
        };
        assert_eq!(rare_density(&all_tail, &t, 3.0).unwrap(), 1.0);

        let none_tail = Utterance {
            id: "u3".into(),
            words: vec!["the".into(), "had".into()],
        };
        assert_eq!(rare_density(&none_tail, &t, 3.0).unwrap(), 0.0);

        let empty = Utterance {
            id: "u4".into(),
            words: vec![],
        };
        assert!(matches!(
            rare_density(&empty, &t, 3.0),
            Err(TarqError::EmptyUtterance)
        ));
    }

    #[test]
    fn tokenize_strips_punctuation_and_case() {
        assert_eq!(
            tokenize("The quick, brown fox; (it) jumped!"),
            vec!["the", "quick", "brown", "fox", "it", "jumped"]
        );
    }

    #[test]
    fn parse_table_and_corpus_formats() {
        let t = FreqTable::parse("#total 2000\nalpha\t100\nBETA\t50\n").unwrap();
        assert_eq!(t.total(), 2000);
        assert_eq!(t.count("beta"), 50);

        let corpus = parse_corpus("u1\tHello world\nu2\tsecond line here\n").unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].words, vec!["hello", "world"]);
        assert!(parse_corpus("no-tab-line\n").is_err());
    }

    /// Corpus where utterance k has k rare words out of 10.
    fn graded_corpus(len: usize) -> (Vec<Utterance>, FreqTable) {
        let table = FreqTable::from_counts([("common", 999_000_000u64), ("pad", 1_000_000)]);
        let utts = (0..len)
            .map(|k| {
                let mut words: Vec<String> = (0..k.min(10)).map(|i| format!("rare{i}")).collect();
                while words.len() < 10 {
                    words.push("common".into());
                }
                Utterance {
                    id: format!("u{k}"),
                    words,
                }
            })
            .collect();
        (utts, table)
    }

    #[test]
    fn r_top_whole_corpus_sorted() {
        let (utts, table) = graded_corpus(5);
        let pool = build_pool(
            std::slice::from_ref(&utts),
            PoolKind::RTop,
            5,
            0,
            &table,
            3.0,
        )
        .unwrap();
        let ids: Vec<&str> = pool.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, vec!["u4", "u3", "u2", "u1", "u0"]);
    }

    #[test]
    fn r_mix_halves_are_disjoint() {
        let (utts, table) = graded_corpus(12);
        for seed in 0..20 {
            let pool =
                build_pool(std::slice::from_ref(&utts), PoolKind::RMix, 6, seed, &table, 3.0).unwrap();
            assert_eq!(pool.len(), 6);
            // u10 and u11 tie at full density; the lower index ranks first.
            let top: Vec<&str> = pool[..3].iter().map(|u| u.id.as_str()).collect();
            assert_eq!(top, vec!["u10", "u11", "u9"]);
            for u in &pool[3..] {
                assert!(!top.contains(&u.id.as_str()), "halves overlap at {}", u.id);
            }
            let mut ids: Vec<&str> = pool.iter().map(|u| u.id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 6, "duplicate draw in random half");
        }
    }

    #[test]
    fn r_mix_random_half_from_complement_only() {
        // Densities 1.0, 0.9, 0.1, 0.0, 0.0 with n = 4: the top half is
        // the two densest, the random half draws from the other three.
        let table = FreqTable::from_counts([("common", 999_000_000u64), ("pad", 1_000_000)]);
        let mk = |id: &str, rare: usize, len: usize| Utterance {
            id: id.into(),
            words: (0..len)
                .map(|i| {
                    if i < rare {
                        format!("zzz{i}")
                    } else {
                        "common".into()
                    }
                })
                .collect(),
        };
        let utts = vec![
            mk("a", 10, 10),
            mk("b", 9, 10),
            mk("c", 1, 10),
            mk("d", 0, 10),
            mk("e", 0, 10),
        ];
        for seed in 0..50 {
            let pool = build_pool(std::slice::from_ref(&utts), PoolKind::RMix, 4, seed, &table, 3.0).unwrap();
            assert_eq!(pool[0].id, "a");
            assert_eq!(pool[1].id, "b");
            for u in &pool[2..] {
                assert!(["c", "d", "e"].contains(&u.id.as_str()));
            }
            assert_ne!(pool[2].id, pool[3].id);
        }
    }

    #[test]
    fn r_mix_is_seed_deterministic() {
        let (utts, table) = graded_corpus(20);
        let a = build_pool(std::slice::from_ref(&utts), PoolKind::RMix, 8, 42, &table, 3.0).unwrap();
        let b = build_pool(std::slice::from_ref(&utts), PoolKind::RMix, 8, 42, &table, 3.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn r_cross_candidate_counts() {
        let (utts, table) = graded_corpus(200);
        let sources = vec![utts.clone(), utts.clone(), utts.clone()];
        let n = 128;
        let candidates = cross_candidate_stage(&sources, n, &table, 3.0).unwrap();
        // ceil(4 * 128 / 3) = 171 per source.
        assert_eq!(candidates.len(), 3 * 171);
        let pool = build_pool(&sources, PoolKind::RCross, n, 0, &table, 3.0).unwrap();
        assert_eq!(pool.len(), n);
    }

    #[test]
    fn r_cross_tie_break_prefers_earlier_source() {
        let (utts, table) = graded_corpus(30);
        let sources = vec![utts.clone(), utts.clone()];
        let pool = build_pool(&sources, PoolKind::RCross, 4, 0, &table, 3.0).unwrap();
        // Identical sources tie on density; source 0 wins, then index.
        let ids: Vec<&str> = pool.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, vec!["u10", "u11", "u12", "u13"]);
    }

    #[test]
    fn pool_prereqs_enforced() {
        let (utts, table) = graded_corpus(4);
        assert!(matches!(
            build_pool(std::slice::from_ref(&utts), PoolKind::RTop, 9, 0, &table, 3.0),
            Err(TarqError::InsufficientCorpus {
                needed: 9,
                available: 4
            })
        ));
        assert!(build_pool(&[utts.clone(), utts.clone()], PoolKind::RTop, 2, 0, &table, 3.0).is_err());
        assert!(build_pool(std::slice::from_ref(&utts), PoolKind::RCross, 2, 0, &table, 3.0).is_err());
    }

    #[test]
    fn r_top_dominates_other_subsets() {
        let (utts, table) = graded_corpus(15);
        let pool = build_pool(std::slice::from_ref(&utts), PoolKind::RTop, 5, 0, &table, 3.0).unwrap();
        let pool_rhos: Vec<f64> = pool
            .iter()
            .map(|u| rare_density(u, &table, 3.0).unwrap())
            .collect();
        // Compare with an arbitrary other subset, sorted descending.
        let mut other: Vec<f64> = utts[0..5]
            .iter()
            .map(|u| rare_density(u, &table, 3.0).unwrap())
            .collect();
        other.sort_by(|a, b| b.total_cmp(a));
        for (p, o) in pool_rhos.iter().zip(&other) {
            assert!(p >= o);
        }
    }

    proptest! {
        #[test]
        fn threshold_monotonicity(
            counts in proptest::collection::vec(0u64..100_000, 12),
            lo in 1.0f64..4.0,
            hi_delta in 0.0f64..3.0,
        ) {
            let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
            let mut pairs: Vec<(String, u64)> =
                words.iter().cloned().zip(counts.iter().copied()).collect();
            pairs.push(("bulk".into(), 1_000_000));
            let table = FreqTable::from_counts(pairs);
            let hi = lo + hi_delta;
            for w in &words {
                if tag_word(w, &table, lo) == Tag::Tail {
                    prop_assert_eq!(tag_word(w, &table, hi), Tag::Tail);
                }
            }
        }
    }
}
