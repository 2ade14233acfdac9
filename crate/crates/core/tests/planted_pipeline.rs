use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pttrust_core::synthetic::{run_scenario, ScenarioSettings};

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn planted_signal_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let settings = ScenarioSettings::default();
    let out = run_scenario(dir.path(), &settings).unwrap();
    let m = &out.metrics;
    assert_eq!(m.evaluated_snippets, settings.heldout_snippets);
    let top1 = m.topk_hit_rate["1"].unwrap();
    assert!(top1 >= 0.9, "top-1 hit rate {top1}");
    let acc = m.snippet_accuracy.unwrap();
    assert!(acc >= 0.85, "snippet accuracy {acc}");
    let cos = out.diff_map_cosine.unwrap();
    assert!(cos >= 0.5, "diff map cosine {cos}");
    for k in ["1", "3", "5"] {
        assert!(m.uncertainty.as_ref().unwrap().topk_hit_rate[k].is_some());
    }

    let before = snapshot(dir.path());
    run_scenario(dir.path(), &settings).unwrap();
    let after = snapshot(dir.path());
    assert_eq!(before.keys().collect::<Vec<_>>(), after.keys().collect::<Vec<_>>());
    for (p, bytes) in &before {
        assert!(bytes == &after[p], "{} changed on rerun", p.display());
    }
}
