//! Line-level mutators that turn correct snippets into incorrect variants,
//! and the join that turns their pairing specs into contrastive pairs.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::store::{LabelFlag, LoadedStore};

pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub snippet_id: u32,
    pub language: String,
    pub lines: Vec<String>,
}

impl CodeSnippet {
    pub fn new(snippet_id: u32, language: impl Into<String>, lines: Vec<String>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::Argument(format!("snippet {snippet_id} has no lines")));
        }
        if lines.iter().any(|l| l.contains('\n') || l.contains('\r')) {
            return Err(Error::Argument(format!(
                "snippet {snippet_id} has a line with an embedded newline"
            )));
        }
        Ok(CodeSnippet {
            snippet_id,
            language: language.into(),
            lines,
        })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutatorTag {
    SwitchInside,
    SwitchOutside,
    DeleteLine,
}

impl MutatorTag {
    fn stream(self) -> u64 {
        match self {
            MutatorTag::SwitchInside => 0,
            MutatorTag::SwitchOutside => 1,
            MutatorTag::DeleteLine => 2,
        }
    }
}

/// Pairs one original line (correct side) with one mutated line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSpec {
    pub original_snippet_id: u32,
    pub mutated_snippet_id: u32,
    pub original_line_index: u32,
    pub mutated_line_index: u32,
    pub mutator_tag: MutatorTag,
}

fn spec(orig: u32, mutated: u32, ol: usize, ml: usize, tag: MutatorTag) -> PairSpec {
    PairSpec {
        original_snippet_id: orig,
        mutated_snippet_id: mutated,
        original_line_index: ol as u32,
        mutated_line_index: ml as u32,
        mutator_tag: tag,
    }
}

fn mutator_rng(seed: u64, tag: MutatorTag) -> rand_chacha::ChaCha8Rng {
    rng::seeded(seed, tag.stream())
}

/// Swap two distinct lines of one snippet.
pub fn switch_inside(
    snippet: &CodeSnippet,
    mutated_id: u32,
    seed: u64,
) -> Result<(CodeSnippet, Vec<PairSpec>)> {
    let n = snippet.len();
    if n < 2 {
        return Err(Error::NotMutable {
            snippet_id: snippet.snippet_id,
            reason: "switch_inside needs at least 2 lines".into(),
        });
    }
    let mut r = mutator_rng(seed, MutatorTag::SwitchInside);
    let picked = index::sample(&mut r, n, 2);
    let (i, j) = {
        let (a, b) = (picked.index(0), picked.index(1));
        (a.min(b), a.max(b))
    };
    let mut mutated = snippet.clone();
    mutated.snippet_id = mutated_id;
    mutated.lines.swap(i, j);

    let pairs = [i, j]
        .into_iter()
        .filter(|&p| snippet.lines[p] != mutated.lines[p])
        .map(|p| spec(snippet.snippet_id, mutated_id, p, p, MutatorTag::SwitchInside))
        .collect();
    Ok((mutated, pairs))
}

/// Exchange one line of `a` with one line of `b`.
pub fn switch_outside(
    a: &CodeSnippet,
    b: &CodeSnippet,
    mutated_ids: (u32, u32),
    seed: u64,
) -> Result<(CodeSnippet, CodeSnippet, Vec<PairSpec>)> {
    if a.snippet_id == b.snippet_id {
        return Err(Error::InvalidPair(format!(
            "snippet {} paired with itself",
            a.snippet_id
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidPair("empty snippet".into()));
    }
    let mut r = mutator_rng(seed, MutatorTag::SwitchOutside);
    let pa = r.random_range(0..a.len());
    let pb = r.random_range(0..b.len());

    let mut ma = a.clone();
    let mut mb = b.clone();
    ma.snippet_id = mutated_ids.0;
    mb.snippet_id = mutated_ids.1;
    std::mem::swap(&mut ma.lines[pa], &mut mb.lines[pb]);

    let mut pairs = Vec::with_capacity(2);
    if a.lines[pa] != ma.lines[pa] {
        pairs.push(spec(a.snippet_id, ma.snippet_id, pa, pa, MutatorTag::SwitchOutside));
    }
    if b.lines[pb] != mb.lines[pb] {
        pairs.push(spec(b.snippet_id, mb.snippet_id, pb, pb, MutatorTag::SwitchOutside));
    }
    Ok((ma, mb, pairs))
}

/// Remove one line that has a successor; the pair is the deleted line
/// against the line that moved into its position.
pub fn delete_line(
    snippet: &CodeSnippet,
    mutated_id: u32,
    seed: u64,
) -> Result<(CodeSnippet, Vec<PairSpec>)> {
    let n = snippet.len();
    if n < 2 {
        return Err(Error::NotMutable {
            snippet_id: snippet.snippet_id,
            reason: "delete_line needs at least 2 lines".into(),
        });
    }
    let mut r = mutator_rng(seed, MutatorTag::DeleteLine);
    // the last line has no follower to pair with, so it is never drawn
    let p = r.random_range(0..n - 1);
    let mut mutated = snippet.clone();
    mutated.snippet_id = mutated_id;
    mutated.lines.remove(p);

    let mut pairs = Vec::with_capacity(1);
    if snippet.lines[p] != mutated.lines[p] {
        pairs.push(spec(snippet.snippet_id, mutated_id, p, p, MutatorTag::DeleteLine));
    }
    Ok((mutated, pairs))
}

// ---------------------------------------------------------------------------
// Corpus pass
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MutatedSnippet {
    pub snippet: CodeSnippet,
    pub source_ids: Vec<u32>,
    pub tag: MutatorTag,
    /// Positions in the mutated snippet that are paired as the incorrect side.
    pub error_lines: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PassOutput {
    pub mutated: Vec<MutatedSnippet>,
    pub specs: Vec<PairSpec>,
}

#[derive(Debug, Clone)]
pub struct PassSettings {
    pub master_seed: u64,
    pub pass: u32,
    /// Pair snippets only within one language for switch_outside.
    pub same_language: bool,
}

/// One mutator pass over a corpus: every mutator applied once per eligible
/// snippet. Mutations whose pairs all collapse to identical text are dropped.
pub fn mutate_corpus(corpus: &[CodeSnippet], settings: &PassSettings) -> PassOutput {
    let max_id = corpus.iter().map(|s| s.snippet_id).max().unwrap_or(0);
    let per_pass = 3 * corpus.len() as u64;
    let mut next_id = max_id as u64 + 1 + settings.pass as u64 * per_pass;
    let mut alloc = || {
        let id = next_id as u32;
        next_id += 1;
        id
    };
    let stream_seed = |id: u32| {
        rng::snippet_seed(settings.master_seed, id)
            .wrapping_add((settings.pass as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    };

    let mut out = PassOutput::default();
    let push = |out: &mut PassOutput, snippet: CodeSnippet, sources: Vec<u32>, tag, pairs: Vec<PairSpec>| {
        if pairs.is_empty() {
            return;
        }
        let id = snippet.snippet_id;
        let error_lines = pairs
            .iter()
            .filter(|p| p.mutated_snippet_id == id)
            .map(|p| p.mutated_line_index)
            .collect();
        out.specs.extend(pairs.iter().filter(|p| p.mutated_snippet_id == id));
        out.mutated.push(MutatedSnippet {
            snippet,
            source_ids: sources,
            tag,
            error_lines,
        });
    };

    for s in corpus.iter().filter(|s| s.len() >= 2) {
        let (m, pairs) = switch_inside(s, alloc(), stream_seed(s.snippet_id))
            .expect("eligibility checked");
        push(&mut out, m, vec![s.snippet_id], MutatorTag::SwitchInside, pairs);
    }
    for s in corpus.iter().filter(|s| s.len() >= 2) {
        let (m, pairs) =
            delete_line(s, alloc(), stream_seed(s.snippet_id)).expect("eligibility checked");
        push(&mut out, m, vec![s.snippet_id], MutatorTag::DeleteLine, pairs);
    }

    let mut groups: BTreeMap<&str, Vec<&CodeSnippet>> = BTreeMap::new();
    for s in corpus {
        let key = if settings.same_language { s.language.as_str() } else { "" };
        groups.entry(key).or_default().push(s);
    }
    for (lang, mut members) in groups {
        let lang_seed = lang.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
        let mut r = rng::seeded(stream_seed(0) ^ lang_seed, 3);
        members.shuffle(&mut r);
        for chunk in members.chunks_exact(2) {
            let (a, b) = (chunk[0], chunk[1]);
            let ids = (alloc(), alloc());
            let (ma, mb, pairs) =
                switch_outside(a, b, ids, stream_seed(a.snippet_id)).expect("distinct ids");
            push(&mut out, ma, vec![a.snippet_id, b.snippet_id], MutatorTag::SwitchOutside, pairs.clone());
            push(&mut out, mb, vec![a.snippet_id, b.snippet_id], MutatorTag::SwitchOutside, pairs);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Contrastive pairs
// ---------------------------------------------------------------------------

/// A record located by store number and position within that store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordRef {
    pub store: u32,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastivePair {
    pub correct: RecordRef,
    pub incorrect: RecordRef,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedSpec {
    pub spec: PairSpec,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct PairBuild {
    pub pairs: Vec<ContrastivePair>,
    pub skipped: Vec<SkippedSpec>,
}

/// Resolve pair specs against an original and a mutated store, then add
/// pairs for records already labelled correct on one side and buggy on the
/// other at the same `(snippet_id, line_index)`.
pub fn build_contrastive_pairs(
    specs: &[PairSpec],
    original: (u32, &LoadedStore),
    mutated: (u32, &LoadedStore),
    margin: f64,
) -> Result<PairBuild> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::Argument(format!("margin must be positive, got {margin}")));
    }
    let (oid, ostore) = original;
    let (mid, mstore) = mutated;
    if ostore.header.dim != mstore.header.dim {
        return Err(Error::Dimension {
            expected: ostore.dim(),
            actual: mstore.dim(),
            context: "original vs mutated store".into(),
        });
    }
    if ostore.header.layer_index != mstore.header.layer_index
        || ostore.header.model_id != mstore.header.model_id
    {
        return Err(Error::Argument(format!(
            "stores come from different probes: {}@{} vs {}@{}",
            ostore.header.model_id,
            ostore.header.layer_index,
            mstore.header.model_id,
            mstore.header.layer_index
        )));
    }

    let mut build = PairBuild::default();
    let mut seen = HashSet::new();
    let mut emit = |build: &mut PairBuild, c: RecordRef, i: RecordRef| {
        if seen.insert((c, i)) {
            build.pairs.push(ContrastivePair {
                correct: c,
                incorrect: i,
                margin,
            });
        }
    };

    for s in specs {
        let o = ostore.get(s.original_snippet_id, s.original_line_index);
        let m = mstore.get(s.mutated_snippet_id, s.mutated_line_index);
        match (o, m) {
            (Some(o), Some(m)) => emit(
                &mut build,
                RecordRef { store: oid, index: o },
                RecordRef { store: mid, index: m },
            ),
            _ => {
                let mut missing = Vec::new();
                if o.is_none() {
                    missing.push(format!(
                        "original ({}, {})",
                        s.original_snippet_id, s.original_line_index
                    ));
                }
                if m.is_none() {
                    missing.push(format!(
                        "mutated ({}, {})",
                        s.mutated_snippet_id, s.mutated_line_index
                    ));
                }
                build.skipped.push(SkippedSpec {
                    spec: *s,
                    reason: format!("missing {}", missing.join(" and ")),
                });
            }
        }
    }

    for (oi, r) in ostore.records.iter().enumerate() {
        let Some(mi) = mstore.get(r.snippet_id, r.line_index) else {
            continue;
        };
        let oref = RecordRef { store: oid, index: oi };
        let mref = RecordRef { store: mid, index: mi };
        match (r.label_flag, mstore.records[mi].label_flag) {
            (LabelFlag::Correct, LabelFlag::Buggy) => emit(&mut build, oref, mref),
            (LabelFlag::Buggy, LabelFlag::Correct) => emit(&mut build, mref, oref),
            _ => {}
        }
    }
    Ok(build)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ActivationRecord, StoreHeader};

    fn snip(id: u32, lines: &[&str]) -> CodeSnippet {
        CodeSnippet::new(id, "python", lines.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn sorted(v: &[String]) -> Vec<String> {
        let mut v = v.to_vec();
        v.sort();
        v
    }

    #[test]
    fn switch_inside_two_lines_is_forced() {
        let s = snip(1, &["a", "b"]);
        let (m, pairs) = switch_inside(&s, 100, 7).unwrap();
        assert_eq!(m.lines, vec!["b", "a"]);
        assert_eq!(m.snippet_id, 100);
        assert_eq!(pairs.len(), 2);
        assert_eq!((pairs[0].original_line_index, pairs[0].mutated_line_index), (0, 0));
        assert_eq!((pairs[1].original_line_index, pairs[1].mutated_line_index), (1, 1));
    }

    #[test]
    fn switch_inside_permutes_two_positions() {
        let s = snip(3, &["l0", "l1", "l2", "l3", "l4"]);
        for seed in 0..50 {
            let (m, pairs) = switch_inside(&s, 9, seed).unwrap();
            let diffs = s.lines.iter().zip(&m.lines).filter(|(a, b)| a != b).count();
            assert_eq!(diffs, 2);
            assert_eq!(sorted(&s.lines), sorted(&m.lines));
            assert_eq!(pairs.len(), 2);
            assert_eq!(switch_inside(&s, 9, seed).unwrap(), (m, pairs));
        }
    }

    #[test]
    fn switch_inside_rejects_single_line() {
        assert!(matches!(
            switch_inside(&snip(1, &["x"]), 2, 0),
            Err(Error::NotMutable { snippet_id: 1, .. })
        ));
    }

    #[test]
    fn switch_inside_identical_lines_emit_no_pairs() {
        let s = snip(1, &["same", "same"]);
        let (_, pairs) = switch_inside(&s, 2, 0).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn switch_outside_single_lines() {
        let (ma, mb, pairs) =
            switch_outside(&snip(1, &["x"]), &snip(2, &["y"]), (10, 11), 5).unwrap();
        assert_eq!(ma.lines, vec!["y"]);
        assert_eq!(mb.lines, vec!["x"]);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].original_snippet_id, 1);
        assert_eq!(pairs[0].mutated_snippet_id, 10);
        assert_eq!(pairs[1].original_snippet_id, 2);
        assert_eq!(pairs[1].mutated_snippet_id, 11);
    }

    #[test]
    fn switch_outside_preserves_union_multiset() {
        let a = snip(1, &["a0", "a1", "a2"]);
        let b = snip(2, &["b0", "b1", "b2", "b3"]);
        for seed in 0..30 {
            let (ma, mb, _) = switch_outside(&a, &b, (5, 6), seed).unwrap();
            let mut before = [a.lines.clone(), b.lines.clone()].concat();
            let mut after = [ma.lines.clone(), mb.lines.clone()].concat();
            before.sort();
            after.sort();
            assert_eq!(before, after);
            assert_eq!(ma.len(), a.len());
            let again = switch_outside(&a, &b, (5, 6), seed).unwrap();
            assert_eq!((again.0, again.1), (ma, mb));
        }
    }

    #[test]
    fn switch_outside_rejects_self_pair() {
        let a = snip(4, &["a"]);
        assert!(matches!(switch_outside(&a, &a, (1, 2), 0), Err(Error::InvalidPair(_))));
    }

    #[test]
    fn delete_line_two_lines_is_forced() {
        let (m, pairs) = delete_line(&snip(1, &["a", "b"]), 8, 123).unwrap();
        assert_eq!(m.lines, vec!["b"]);
        assert_eq!(
            pairs,
            vec![spec(1, 8, 0, 0, MutatorTag::DeleteLine)]
        );
    }

    #[test]
    fn delete_line_is_subsequence_and_never_last() {
        let s = snip(2, &["w", "x", "y", "z"]);
        for seed in 0..100 {
            let (m, pairs) = delete_line(&s, 3, seed).unwrap();
            assert_eq!(m.len(), 3);
            let mut it = s.lines.iter();
            assert!(m.lines.iter().all(|l| it.any(|o| o == l)), "not a subsequence");
            assert_ne!(m.lines[..], s.lines[..3], "last line deleted");
            let p = pairs[0];
            assert_eq!(
                m.lines[p.mutated_line_index as usize],
                s.lines[p.original_line_index as usize + 1]
            );
            assert_eq!(delete_line(&s, 3, seed).unwrap(), (m, pairs));
        }
        assert!(delete_line(&snip(1, &["only"]), 2, 0).is_err());
    }

    #[test]
    fn corpus_pass_counts_and_determinism() {
        let corpus: Vec<_> = (0..10)
            .map(|i| {
                let lines: Vec<String> = (0..(i % 4 + 1)).map(|l| format!("s{i} l{l}")).collect();
                CodeSnippet::new(i, "python", lines).unwrap()
            })
            .collect();
        let settings = PassSettings {
            master_seed: 42,
            pass: 0,
            same_language: true,
        };
        let out = mutate_corpus(&corpus, &settings);
        let eligible = corpus.iter().filter(|s| s.len() >= 2).count();
        assert!(out.mutated.len() <= 2 * eligible + corpus.len());
        assert_eq!(
            out.mutated.iter().filter(|m| m.tag == MutatorTag::SwitchOutside).count(),
            10
        );
        assert_eq!(out, mutate_corpus(&corpus, &settings));
        let ids: HashSet<u32> = out.mutated.iter().map(|m| m.snippet.snippet_id).collect();
        assert_eq!(ids.len(), out.mutated.len());
        assert!(ids.iter().all(|id| *id >= 10));
    }

    fn store(flags: &[(u32, u32, LabelFlag)]) -> LoadedStore {
        let records = flags
            .iter()
            .map(|&(s, l, f)| ActivationRecord {
                snippet_id: s,
                line_index: l,
                token_index: 0,
                line_token_count: 1,
                label_flag: f,
                vector: vec![s as f32, l as f32],
            })
            .collect();
        LoadedStore::new(StoreHeader::new("m", 2, 2), records).unwrap()
    }

    #[test]
    fn pairs_from_specs_with_skip() {
        let o = store(&[(1, 0, LabelFlag::Unknown), (1, 1, LabelFlag::Unknown)]);
        let m = store(&[(7, 0, LabelFlag::Unknown), (7, 1, LabelFlag::Unknown)]);
        let specs = [
            spec(1, 7, 0, 0, MutatorTag::SwitchInside),
            spec(1, 7, 1, 1, MutatorTag::SwitchInside),
        ];
        let b = build_contrastive_pairs(&specs, (0, &o), (1, &m), 1.0).unwrap();
        assert_eq!(b.pairs.len(), 2);
        assert!(b.skipped.is_empty());
        assert!(b.pairs.iter().all(|p| p.margin == 1.0));

        let specs = [
            spec(1, 7, 0, 0, MutatorTag::SwitchInside),
            spec(1, 7, 1, 5, MutatorTag::SwitchInside),
        ];
        let b = build_contrastive_pairs(&specs, (0, &o), (1, &m), 1.0).unwrap();
        assert_eq!(b.pairs.len(), 1);
        assert_eq!(b.skipped.len(), 1);
    }

    #[test]
    fn already_labelled_pairs_join_on_key() {
        use LabelFlag::*;
        let o = store(&[(1, 0, Correct), (1, 1, Correct), (2, 0, Correct), (2, 1, Correct), (3, 0, Unknown)]);
        let m = store(&[(1, 0, Buggy), (1, 1, Correct), (2, 0, Buggy), (2, 1, Buggy), (3, 0, Buggy)]);
        let b = build_contrastive_pairs(&[], (0, &o), (1, &m), 0.5).unwrap();
        // join oracle
        let expected: Vec<(u32, u32)> = o
            .records
            .iter()
            .filter(|r| r.label_flag == Correct)
            .filter(|r| {
                m.get(r.snippet_id, r.line_index)
                    .is_some_and(|i| m.records[i].label_flag == Buggy)
            })
            .map(|r| r.key())
            .collect();
        assert_eq!(expected.len(), 3);
        assert_eq!(b.pairs.len(), 3);
        for p in &b.pairs {
            assert_eq!(p.correct.store, 0);
            assert!(expected.contains(&o.records[p.correct.index].key()));
        }
    }

    #[test]
    fn mismatched_stores_rejected() {
        let o = store(&[(1, 0, LabelFlag::Unknown)]);
        let m = LoadedStore::new(StoreHeader::new("m", 3, 2), vec![]).unwrap();
        assert!(build_contrastive_pairs(&[], (0, &o), (1, &m), 1.0).is_err());
    }
}
