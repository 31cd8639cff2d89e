//! Acceptance gate. Each test checks one criterion and writes a single
//! PASS/FAIL line to stderr (outside the harness's output capture).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sexism_core::corpus::{Dataset, DatasetRole, Example};
use sexism_core::fusion::{
    max_raw_select, max_standardized_select, read_predictions, run_ensemble, standardization_for, EnsembleId,
    EnsembleRule, EnsembleSpec, FusionMode, ModelId,
};
use sexism_core::metrics::{evaluate, render_delta_table, MetricSummary};
use sexism_core::search::{enumerate_grid, GridSpec};
use sexism_core::textprep::{
    augment_with_translation, translated_id, CountingProvider, IdentityProvider, TranslateOptions, TranslationCache,
};
use sexism_core::{LabelSpace, Language, PredictionRecord, ScoreVector, Source, Task, Task1Label, Task2Label};

fn report(name: &str, limit: Option<Duration>, check: impl FnOnce() -> Result<String, String>) {
    let start = Instant::now();
    let mut outcome = check();
    let elapsed = start.elapsed();
    if let (Ok(_), Some(limit)) = (&outcome, limit) {
        if elapsed > limit {
            outcome = Err(format!("took {elapsed:.2?}, limit {limit:?}"));
        }
    }
    let line = match &outcome {
        Ok(detail) => format!("PASS {name} ({elapsed:.2?}) {detail}\n"),
        Err(why) => format!("FAIL {name} ({elapsed:.2?}) {why}\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(why) = outcome {
        panic!("{name}: {why}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------- metrics

struct Oracle {
    accuracy: f64,
    per_class: Vec<(f64, f64, f64)>,
    f1_macro: f64,
}

fn oracle(gold: &[usize], pred: &[usize], k: usize) -> Oracle {
    let n = gold.len();
    let correct = (0..n).filter(|&i| gold[i] == pred[i]).count();
    let mut per_class = Vec::new();
    for c in 0..k {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for i in 0..n {
            match (gold[i] == c, pred[i] == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        per_class.push((p, r, f));
    }
    let f1_macro = per_class.iter().map(|c| c.2).sum::<f64>() / k as f64;
    Oracle {
        accuracy: correct as f64 / n as f64,
        per_class,
        f1_macro,
    }
}

#[test]
fn metric_oracle_equivalence() {
    report("metric-oracle-equivalence", Some(Duration::from_secs(10)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let binary = LabelSpace::task1();
        for fixture in 0..1000 {
            let k = rng.random_range(2..=6);
            let n = rng.random_range(1..=200);
            let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let (space, task) = if k == 2 {
                (binary.clone(), Task::Task1)
            } else {
                (LabelSpace::new((0..k).map(|c| format!("c{c}"))).unwrap(), Task::Task2)
            };
            let name = |i: &usize| space.label(*i).to_string();
            let g: Vec<String> = gold.iter().map(name).collect();
            let p: Vec<String> = pred.iter().map(name).collect();
            let got = evaluate(&g, &p, &space, task).map_err(|e| e.to_string())?;
            let want = oracle(&gold, &pred, k);
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
            let ctx = || format!("fixture {fixture} (n={n}, k={k})");
            ensure(close(got.accuracy, want.accuracy), || {
                format!("accuracy differs in {}", ctx())
            })?;
            ensure(close(got.f1_macro, want.f1_macro), || {
                format!("F1-macro differs in {}", ctx())
            })?;
            for (c, (label, m)) in got.per_class.iter().enumerate() {
                let (wp, wr, wf) = want.per_class[c];
                ensure(close(m.precision, wp) && close(m.recall, wr) && close(m.f1, wf), || {
                    format!("class {label} differs in {}", ctx())
                })?;
            }
            if k == 2 {
                let sexist = space.index_of("sexist").unwrap();
                let f1b = got.f1_binary.ok_or("missing F1-binary")?;
                ensure(close(f1b, want.per_class[sexist].2), || {
                    format!("F1-binary differs in {}", ctx())
                })?;
            }
        }
        Ok("1000 fixtures".into())
    });
}

// ---------------------------------------------------------------- delta table

fn summary(v: [f64; 4]) -> MetricSummary {
    MetricSummary {
        accuracy: v[0],
        precision: v[1],
        recall: v[2],
        f1: v[3],
    }
}

#[test]
fn delta_table_reproduction() {
    report("delta-table-reproduction", Some(Duration::from_secs(1)), || {
        // Published test metrics: task 1 (acc, prec, rec, F1b), task 2 (acc, prec, rec, F1m).
        let published: [(&str, [f64; 4], [f64; 4]); 5] = [
            ("M1", [0.761, 0.739, 0.784, 0.761], [0.621, 0.617, 0.621, 0.611]),
            ("M2", [0.774, 0.749, 0.803, 0.775], [0.688, 0.677, 0.674, 0.675]),
            ("M3", [0.782, 0.773, 0.778, 0.775], [0.676, 0.661, 0.663, 0.658]),
            ("E4", [0.790, 0.781, 0.787, 0.784], [0.661, 0.673, 0.656, 0.645]),
            ("E6", [0.789, 0.776, 0.794, 0.785], [0.703, 0.690, 0.692, 0.689]),
        ];
        // Printed differences from E6: (acc, F1b) for task 1 and (acc, F1m) for task 2.
        let expected: [(&str, [&str; 2], [&str; 2]); 5] = [
            ("M1", ["-3.55%", "-3.06%"], ["-11.66%", "-11.32%"]),
            ("M2", ["-1.90%", "-1.27%"], ["-2.13%", "-2.03%"]),
            ("M3", ["-0.89%", "-1.27%"], ["-3.84%", "-4.50%"]),
            ("E4", ["0.13%", "-0.13%"], ["-5.97%", "-6.39%"]),
            ("E6", ["0.00%", "0.00%"], ["0.00%", "0.00%"]),
        ];
        let mut checked = 0;
        for (task, pick) in [(Task::Task1, 0usize), (Task::Task2, 1usize)] {
            let rows: Vec<(String, MetricSummary)> = published
                .iter()
                .map(|(id, t1, t2)| (id.to_string(), summary(if pick == 0 { *t1 } else { *t2 })))
                .collect();
            let table = render_delta_table(&rows, "E6", task).map_err(|e| e.to_string())?;
            for (id, d1, d2) in &expected {
                let want = if pick == 0 { d1 } else { d2 };
                let line = table
                    .lines()
                    .find(|l| l.split_whitespace().next() == Some(id))
                    .ok_or_else(|| format!("{id} missing from {task} table"))?;
                let cols: Vec<&str> = line.split_whitespace().collect();
                ensure(cols[2] == want[0] && cols[4] == want[1], || {
                    format!(
                        "{task} {id}: got {} / {}, expected {} / {}",
                        cols[2], cols[4], want[0], want[1]
                    )
                })?;
                checked += 2;
            }
        }
        Ok(format!("{checked} percentages"))
    });
}

// ---------------------------------------------------------------- grid

#[test]
fn grid_cardinality() {
    report("grid-cardinality", None, || {
        let grid = enumerate_grid(&GridSpec::default()).map_err(|e| e.to_string())?;
        ensure(grid.len() == 96, || format!("{} configurations", grid.len()))?;
        let distinct: BTreeSet<String> = grid.iter().map(|h| format!("{h:?}")).collect();
        ensure(distinct.len() == 96, || "duplicate configurations".into())?;
        Ok("96 configurations".into())
    });
}

// ---------------------------------------------------------------- ensembles

const MEMBERS: [ModelId; 7] = [
    ModelId::M1,
    ModelId::M2,
    ModelId::M3,
    ModelId::M4,
    ModelId::M5,
    ModelId::M6,
    ModelId::M7,
];

fn random_member(rng: &mut ChaCha8Rng, model: &str, ids: &[String], space: &LabelSpace) -> Vec<PredictionRecord> {
    ids.iter()
        .map(|id| {
            let logits: Vec<f64> = (0..space.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
            PredictionRecord::from_scores(id, model, ScoreVector::from_logits(space.clone(), &logits).unwrap())
        })
        .collect()
}

fn labels_by_id(records: &[PredictionRecord]) -> BTreeMap<String, String> {
    records
        .iter()
        .map(|r| (r.example_id.clone(), r.predicted_label.clone()))
        .collect()
}

fn spec(members: Vec<ModelId>, rule: EnsembleRule) -> EnsembleSpec {
    EnsembleSpec {
        id: EnsembleId::E4,
        members,
        rule,
        mode: FusionMode::WinnerTakeAll,
    }
}

fn affine(records: &[PredictionRecord], a: f64, b: f64) -> Vec<PredictionRecord> {
    records
        .iter()
        .map(|r| {
            let scores = r.scores.scores.iter().map(|s| a * s + b).collect();
            PredictionRecord {
                scores: ScoreVector::new(r.scores.label_space.clone(), scores).unwrap(),
                ..r.clone()
            }
        })
        .collect()
}

#[test]
fn ensemble_property_suite() {
    report("ensemble-property-suite", Some(Duration::from_secs(10)), || {
        let rules = [
            EnsembleRule::Majority,
            EnsembleRule::MaxRaw,
            EnsembleRule::MaxStandardized,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut separating = 0;
        for fixture in 0..500 {
            let k = rng.random_range(2..=6);
            let space = LabelSpace::new((0..k).map(|c| format!("c{c}"))).unwrap();
            let n = rng.random_range(3..=30);
            let ids: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
            let m = rng.random_range(2..=7);
            let members: Vec<ModelId> = MEMBERS[..m].to_vec();
            let mut records: BTreeMap<String, Vec<PredictionRecord>> = members
                .iter()
                .map(|id| (id.to_string(), random_member(&mut rng, id.as_str(), &ids, &space)))
                .collect();
            let stats = standardization_for(&records).map_err(|e| e.to_string())?;
            let err = |e: sexism_core::Error| format!("fixture {fixture}: {e}");

            for rule in rules {
                // Coverage: one output per input id, in input order.
                let out = run_ensemble(&spec(members.clone(), rule), &records, &stats).map_err(err)?;
                let out_ids: Vec<&str> = out.records.iter().map(|r| r.example_id.as_str()).collect();
                ensure(out_ids == ids.iter().map(String::as_str).collect::<Vec<_>>(), || {
                    format!("fixture {fixture}: {rule:?} does not cover the inputs")
                })?;
                // Permutation determinism.
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                let again = run_ensemble(&spec(shuffled, rule), &records, &stats).map_err(err)?;
                ensure(labels_by_id(&again.records) == labels_by_id(&out.records), || {
                    format!("fixture {fixture}: {rule:?} depends on member order")
                })?;
            }
            // A missing id is a coverage error.
            let first = members[0].to_string();
            let dropped = records[&first][1..].to_vec();
            let mut partial = records.clone();
            partial.insert(first.clone(), dropped);
            match run_ensemble(&spec(members.clone(), EnsembleRule::MaxRaw), &partial, &stats) {
                Err(e) if e.category() == "coverage" => {}
                other => return Err(format!("fixture {fixture}: expected a coverage error, got {other:?}")),
            }

            // Unanimity: copy one member's labels into every member by making
            // each member's argmax agree.
            let lead = records[&first].clone();
            let unanimous: BTreeMap<String, Vec<PredictionRecord>> = members
                .iter()
                .map(|id| {
                    let recs = lead
                        .iter()
                        .map(|r| {
                            let top = space.index_of(&r.predicted_label).unwrap();
                            let mut s: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.5)).collect();
                            s[top] = rng.random_range(0.6..1.0);
                            PredictionRecord::from_scores(
                                &r.example_id,
                                id.as_str(),
                                ScoreVector::new(space.clone(), s).unwrap(),
                            )
                        })
                        .collect();
                    (id.to_string(), recs)
                })
                .collect();
            let ustats = standardization_for(&unanimous).map_err(err)?;
            for rule in rules {
                let out = run_ensemble(&spec(members.clone(), rule), &unanimous, &ustats).map_err(err)?;
                ensure(labels_by_id(&out.records) == labels_by_id(&lead), || {
                    format!("fixture {fixture}: {rule:?} broke unanimity")
                })?;
            }

            // Affine invariance: rescale one member by a positive affine map.
            let a = rng.random_range(0.5..40.0);
            let b = rng.random_range(-2.0..2.0);
            let target = members[rng.random_range(0..m)].to_string();
            let before_std: Vec<String>;
            let before_raw: Vec<String>;
            {
                let per_id = |recs: &BTreeMap<String, Vec<PredictionRecord>>, i: usize| -> Vec<PredictionRecord> {
                    recs.values().map(|v| v[i].clone()).collect()
                };
                before_std = (0..n)
                    .map(|i| {
                        let rs = per_id(&records, i);
                        max_standardized_select(&rs.iter().collect::<Vec<_>>(), &stats).map(|s| s.label)
                    })
                    .collect::<Result<_, _>>()
                    .map_err(err)?;
                before_raw = (0..n)
                    .map(|i| max_raw_select(&per_id(&records, i).iter().collect::<Vec<_>>()).map(|s| s.label))
                    .collect::<Result<_, _>>()
                    .map_err(err)?;
                let scaled = affine(&records[&target], a, b);
                records.insert(target.clone(), scaled);
                let scaled_stats = standardization_for(&records).map_err(err)?;
                let after_std: Vec<String> = (0..n)
                    .map(|i| {
                        let rs = per_id(&records, i);
                        max_standardized_select(&rs.iter().collect::<Vec<_>>(), &scaled_stats).map(|s| s.label)
                    })
                    .collect::<Result<_, _>>()
                    .map_err(err)?;
                let after_raw: Vec<String> = (0..n)
                    .map(|i| max_raw_select(&per_id(&records, i).iter().collect::<Vec<_>>()).map(|s| s.label))
                    .collect::<Result<_, _>>()
                    .map_err(err)?;
                ensure(after_std == before_std, || {
                    format!("fixture {fixture}: rescaling {target} by ({a}, {b}) changed max_standardized_select")
                })?;
                if after_raw != before_raw {
                    separating += 1;
                }
            }
        }
        ensure(separating > 0, || {
            "no fixture separates max_raw from max_standardized".into()
        })?;
        Ok(format!("500 fixtures, {separating} separate raw from standardized"))
    });
}

// ---------------------------------------------------------------- translation

fn bilingual(per_language: usize) -> Dataset {
    let mut examples = Vec::new();
    for lang in [Language::En, Language::Es] {
        for i in 0..per_language {
            let sexist = i % 3 == 0;
            examples.push(Example {
                id: format!("{lang}-{i}"),
                source: Source::Twitter,
                language: lang,
                text: format!("post {i} in {lang}"),
                task1: Some(if sexist {
                    Task1Label::Sexist
                } else {
                    Task1Label::NonSexist
                }),
                task2: Some(if sexist {
                    Task2Label::CATEGORIES[i % Task2Label::CATEGORIES.len()]
                } else {
                    Task2Label::NonSexist
                }),
            });
        }
    }
    Dataset::new(examples, DatasetRole::Train, "acceptance").unwrap()
}

#[test]
fn translation_plumbing() {
    report("translation-plumbing", Some(Duration::from_secs(5)), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cache_path = dir.path().join("translations.tsv");
        let train = bilingual(50);
        let opts = TranslateOptions::default();
        let first = CountingProvider::new(IdentityProvider);
        let cache = TranslationCache::open(&cache_path).map_err(|e| e.to_string())?;
        let out = augment_with_translation(&train, Language::En, &first, &cache, &opts).map_err(|e| e.to_string())?;
        drop(cache);
        ensure(out.len() == 100, || format!("{} examples", out.len()))?;
        ensure(out.examples().iter().all(|e| e.language == Language::En), || {
            "non-target example".into()
        })?;
        for e in train.examples() {
            let id = if e.language == Language::En {
                e.id.clone()
            } else {
                translated_id(&e.id, Language::En)
            };
            let t = out.get(&id).ok_or_else(|| format!("{id} missing"))?;
            ensure(t.task1 == e.task1 && t.task2 == e.task2, || {
                format!("labels of {id} changed")
            })?;
        }
        ensure(first.calls() == 50, || {
            format!("{} provider calls on the first run", first.calls())
        })?;

        let second = CountingProvider::new(IdentityProvider);
        let cache = TranslationCache::open(&cache_path).map_err(|e| e.to_string())?;
        let again =
            augment_with_translation(&train, Language::En, &second, &cache, &opts).map_err(|e| e.to_string())?;
        ensure(second.calls() == 0, || {
            format!("{} provider calls on the second run", second.calls())
        })?;
        ensure(again == out, || "second run differs".into())?;
        Ok("100 examples, 0 calls on rerun".into())
    });
}

// ---------------------------------------------------------------- end to end

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sexism"))
        .args(args)
        .output()
        .expect("spawn sexism")
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().is_some_and(|n| n != "manifest.log") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn shipped_run(out: &Path) -> Result<(), String> {
    let cfg = workspace_root().join("fixtures/fixture.cfg");
    let res = run_cli(&[
        "run-all",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    ensure(res.status.success(), || {
        format!(
            "run-all exited with {:?}: {}",
            res.status.code(),
            String::from_utf8_lossy(&res.stderr)
        )
    })
}

fn task1_accuracy(run: &Path) -> Result<BTreeMap<String, f64>, String> {
    let path = run.join("reports/task1/comparison.tsv");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty comparison.tsv")?.split('\t').collect();
    let acc = header
        .iter()
        .position(|h| *h == "accuracy")
        .ok_or("no accuracy column")?;
    Ok(lines
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[acc].parse().unwrap())
        })
        .collect())
}

#[test]
fn end_to_end_desk_scale_run() {
    report("end-to-end-desk-scale-run", Some(Duration::from_secs(120)), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        shipped_run(&a)?;
        for task in ["task1", "task2"] {
            let files: Vec<_> = fs::read_dir(a.join("predictions").join(task))
                .map_err(|e| e.to_string())?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            ensure(files.len() == 13, || {
                format!("{task}: {} prediction files", files.len())
            })?;
            for report in ["comparison.txt", "comparison.tsv", "delta.txt"] {
                let p = a.join("reports").join(task).join(report);
                ensure(p.exists(), || format!("{} missing", p.display()))?;
            }
        }
        for report in ["comparison.txt", "delta.txt"] {
            ensure(a.join("reports").join(report).exists(), || {
                format!("reports/{report} missing")
            })?;
        }
        let acc = task1_accuracy(&a)?;
        for id in ["M2", "E1", "E2", "E3", "E4", "E5", "E6"] {
            let v = *acc
                .get(id)
                .ok_or_else(|| format!("{id} missing from the task-1 report"))?;
            ensure(v >= 0.95, || format!("{id} task-1 accuracy {v}"))?;
        }
        shipped_run(&b)?;
        let (ta, tb) = (tree(&a), tree(&b));
        ensure(ta.len() == tb.len(), || "reruns produced different file sets".into())?;
        for (p, bytes) in &ta {
            ensure(tb.get(p) == Some(bytes), || {
                format!("{} differs between reruns", p.display())
            })?;
        }
        Ok(format!(
            "M2 task-1 accuracy {:.3}, {} identical files",
            acc["M2"],
            ta.len()
        ))
    });
}

#[test]
fn gating_soundness() {
    report("gating-soundness", None, || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = dir.path().join("run");
        shipped_run(&run)?;
        let mut checked = 0;
        for e in fs::read_dir(run.join("predictions/task1")).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if !p.is_file() {
                continue;
            }
            let t1 = read_predictions(&p).map_err(|e| e.to_string())?;
            let t2 = read_predictions(&run.join("predictions/task2").join(p.file_name().unwrap()))
                .map_err(|e| e.to_string())?;
            let final_labels = labels_by_id(&t2);
            for r in t1.iter().filter(|r| r.predicted_label == "non-sexist") {
                let got = final_labels.get(&r.example_id).map(String::as_str);
                ensure(got == Some("non-sexist"), || {
                    format!("{}: {} gated non-sexist but labeled {got:?}", p.display(), r.example_id)
                })?;
                checked += 1;
            }
        }
        ensure(checked > 0, || "no gated examples".into())?;
        Ok(format!("{checked} gated predictions"))
    });
}

/// Needs the licensed corpus and the transformer backend: set
/// `SEXISM_EXTENDED_CONFIG` to a run configuration for it and run with
/// `--ignored`. E6 should land within 0.02 of 0.789 task-1 accuracy and
/// within 0.03 of 0.689 task-2 F1-macro.
#[test]
#[ignore = "needs the licensed corpus and accelerator-scale fine-tuning"]
fn extended_published_scale_check() {
    let Ok(cfg) = std::env::var("SEXISM_EXTENDED_CONFIG") else {
        let _ = std::io::stderr().write_all(
            b"SKIP extended-published-scale-check (SEXISM_EXTENDED_CONFIG not set; not reproducible at desk scale)\n",
        );
        return;
    };
    report("extended-published-scale-check", None, || {
        let res = run_cli(&["run-all", "--config", &cfg, "--task", "both"]);
        ensure(res.status.success(), || {
            String::from_utf8_lossy(&res.stderr).into_owned()
        })?;
        let out = String::from_utf8_lossy(&res.stdout).into_owned();
        let root = out
            .lines()
            .find_map(|l| l.strip_prefix("run directory: "))
            .ok_or("run directory not reported")?;
        let read = |task: &str| -> Result<Vec<String>, String> {
            let p = Path::new(root).join("reports").join(task).join("comparison.tsv");
            let text = fs::read_to_string(&p).map_err(|e| e.to_string())?;
            let line = text.lines().find(|l| l.starts_with("E6\t")).ok_or("E6 missing")?;
            Ok(line.split('\t').map(String::from).collect())
        };
        let acc: f64 = read("task1")?[1].parse().map_err(|_| "bad accuracy")?;
        let f1m: f64 = read("task2")?[4].parse().map_err(|_| "bad F1")?;
        ensure((acc - 0.789).abs() <= 0.02, || format!("E6 task-1 accuracy {acc}"))?;
        ensure((f1m - 0.689).abs() <= 0.03, || format!("E6 task-2 F1-macro {f1m}"))?;
        Ok(format!("E6 accuracy {acc:.3}, F1-macro {f1m:.3}"))
    });
}
