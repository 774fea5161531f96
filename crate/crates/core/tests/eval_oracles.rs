use std::collections::{BTreeMap, BTreeSet};
use std::io::BufReader;
use std::path::PathBuf;

use aw_core::compose::Condition;
use aw_core::eval::{
    accuracy_report, majority_vote, read_label_records, CodingSheet, Label, LabelRecord, Rate,
};
use aw_core::model::{derive_partition, DatasetManifest};
use num_rational::Ratio;
use proptest::prelude::*;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// Recount straight from the raw JSON documents, sharing no code with the
/// report: per-label hits on ambiguous items and per-image majority hits.
struct Recount {
    ambiguous: (u64, u64),
    unambiguous: (u64, u64),
    majority_ambiguous: (u64, u64),
}

fn brute_force_recount(manifest_json: &str, labels_jsonl: &str, intent: &str) -> Recount {
    let m: Value = serde_json::from_str(manifest_json).unwrap();
    let ambiguous_cats: BTreeSet<&str> = m["categories"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["ambiguous"].as_bool().unwrap())
        .map(|c| c["id"].as_str().unwrap())
        .collect();
    let positive_cats: BTreeSet<&str> = m["intents"]
        .as_array()
        .unwrap()
        .iter()
        .find(|i| i["id"] == intent)
        .unwrap()["positiveCategoryIds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    let category_of: BTreeMap<&str, &str> = m["images"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| (i["id"].as_str().unwrap(), i["categoryId"].as_str().unwrap()))
        .collect();

    let mut out = Recount {
        ambiguous: (0, 0),
        unambiguous: (0, 0),
        majority_ambiguous: (0, 0),
    };
    let mut votes: BTreeMap<String, (i64, bool)> = BTreeMap::new();
    for line in labels_jsonl.lines().filter(|l| !l.trim().is_empty()) {
        let r: Value = serde_json::from_str(line).unwrap();
        let image = r["imageId"].as_str().unwrap();
        let cat = category_of[image];
        let gold_yes = positive_cats.contains(cat);
        let said_yes = r["label"] == "Yes";
        let hit = u64::from(gold_yes == said_yes);
        let bucket = if ambiguous_cats.contains(cat) {
            &mut out.ambiguous
        } else {
            &mut out.unambiguous
        };
        bucket.0 += hit;
        bucket.1 += 1;
        let v = votes.entry(image.to_owned()).or_insert((0, gold_yes));
        v.0 += if said_yes { 1 } else { -1 };
    }
    for (image, (margin, gold_yes)) in votes {
        if ambiguous_cats.contains(category_of[image.as_str()]) {
            // ties go to No
            let consensus_yes = margin > 0;
            out.majority_ambiguous.0 += u64::from(consensus_yes == gold_yes);
            out.majority_ambiguous.1 += 1;
        }
    }
    out
}

#[test]
fn stage_one_fixtures_reproduce_rows() {
    let none = CodingSheet::from_json_str(&read("stage1_no_collaboration.json")).unwrap();
    let m = none.metrics().unwrap();
    assert_eq!(
        (m.correct.to_string(), m.unique.to_string(), m.useful.to_string()),
        ("60.0".into(), "26.7".into(), "26.7".into())
    );
    let feed = CodingSheet::from_json_str(&read("stage1_collaboration.json")).unwrap();
    let m = feed.metrics().unwrap();
    assert_eq!(
        (m.correct.to_string(), m.unique.to_string(), m.useful.to_string()),
        ("93.3".into(), "40.0".into(), "33.3".into())
    );
}

#[test]
fn b1_label_fixture_matches_recount() {
    let manifest = DatasetManifest::dog_fixture();
    let text = read("labels_1b_b1.jsonl");
    let labels = read_label_records(BufReader::new(text.as_bytes())).unwrap();
    assert_eq!(labels.len(), 180);
    let gold = derive_partition(&manifest, "1b").unwrap();
    let report = accuracy_report(&labels, &gold, &manifest).unwrap();
    let b1 = &report.conditions[&Condition::B1];
    assert_eq!(b1.ambiguous.to_string(), "41.7");
    assert_eq!(b1.unambiguous.to_string(), "98.6");
    assert!(b1.majority_ambiguous.ratio().unwrap() < b1.ambiguous.ratio().unwrap());

    let oracle = brute_force_recount(aw_core::model::DOG_MANIFEST_JSON, &text, "1b");
    assert_eq!((b1.ambiguous.correct, b1.ambiguous.total), oracle.ambiguous);
    assert_eq!((b1.unambiguous.correct, b1.unambiguous.total), oracle.unambiguous);
    assert_eq!(
        (b1.majority_ambiguous.correct, b1.majority_ambiguous.total),
        oracle.majority_ambiguous
    );
}

#[test]
fn all_gold_labels_score_100() {
    let manifest = DatasetManifest::dog_fixture();
    let gold = derive_partition(&manifest, "2a").unwrap();
    let labels: Vec<LabelRecord> = manifest
        .labelable_images()
        .iter()
        .map(|img| LabelRecord {
            assignment_id: "a".into(),
            worker_id: "w".into(),
            image_id: img.id.clone(),
            label: Label::from_bool(gold.positive.contains(&img.id)),
            condition: Condition::Tag,
            project_id: "p".into(),
        })
        .collect();
    let r = accuracy_report(&labels, &gold, &manifest).unwrap();
    assert_eq!(r.overall.accuracy.to_string(), "100.0");
    assert_eq!(r.overall.majority.to_string(), "100.0");
    assert!(r.overall.per_category.values().all(|c| c.to_string() == "100.0"));
}

#[test]
fn unknown_image_is_rejected() {
    let manifest = DatasetManifest::dog_fixture();
    let gold = derive_partition(&manifest, "1a").unwrap();
    let bad = LabelRecord {
        assignment_id: "a".into(),
        worker_id: "w".into(),
        image_id: "unicorn_01".into(),
        label: Label::Yes,
        condition: Condition::B0,
        project_id: "p".into(),
    };
    assert!(accuracy_report(&[bad], &gold, &manifest).is_err());
}

fn arb_labels(manifest: &DatasetManifest) -> impl Strategy<Value = Vec<LabelRecord>> {
    let ids: Vec<String> = manifest.images.iter().map(|i| i.id.clone()).collect();
    prop::collection::vec(
        (
            prop::sample::select(ids),
            any::<bool>(),
            prop::sample::select(Condition::ALL.to_vec()),
            0u8..12,
        ),
        1..120,
    )
    .prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (image_id, yes, condition, worker))| LabelRecord {
                assignment_id: format!("a{i}"),
                worker_id: format!("w{worker}"),
                image_id,
                label: Label::from_bool(yes),
                condition,
                project_id: "p".into(),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn report_agrees_with_recount_and_weighted_mean(
        labels in arb_labels(&DatasetManifest::dog_fixture()),
        intent in prop::sample::select(vec!["1a", "1b", "2a", "2b", "3a", "3b"]),
        seed in any::<u64>(),
    ) {
        let manifest = DatasetManifest::dog_fixture();
        let gold = derive_partition(&manifest, intent).unwrap();
        let report = accuracy_report(&labels, &gold, &manifest).unwrap();

        let expected = labels
            .iter()
            .filter(|r| Label::from_bool(gold.positive.contains(&r.image_id)) == r.label)
            .count() as u64;
        prop_assert_eq!(report.overall.accuracy, Rate::new(expected, labels.len() as u64));

        // overall accuracy is the count-weighted mean of per-category accuracies
        let weighted: Ratio<u64> = report
            .overall
            .per_category
            .values()
            .map(|r| r.ratio().unwrap() * Ratio::from_integer(r.total))
            .sum::<Ratio<u64>>()
            / Ratio::from_integer(labels.len() as u64);
        prop_assert_eq!(Some(weighted), report.overall.accuracy.ratio());

        for img in &report.overall.images {
            prop_assert!(img.consensus.agreement >= 0.5 && img.consensus.agreement <= 1.0);
            let unanimous = img.consensus.yes == 0 || img.consensus.no == 0;
            prop_assert_eq!(img.consensus.agreement == 1.0, unanimous);
        }

        // permutation invariance
        let mut shuffled = labels.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let again = accuracy_report(&shuffled, &gold, &manifest).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn majority_vote_is_argmax_of_counts(votes in prop::collection::vec(any::<bool>(), 1..40)) {
        let records: Vec<LabelRecord> = votes
            .iter()
            .enumerate()
            .map(|(i, yes)| LabelRecord {
                assignment_id: format!("a{i}"),
                worker_id: format!("w{i}"),
                image_id: "img".into(),
                label: Label::from_bool(*yes),
                condition: Condition::B1,
                project_id: "p".into(),
            })
            .collect();
        let c = majority_vote(&records).unwrap();
        let mut yes = 0;
        let mut no = 0;
        for v in &votes {
            if *v { yes += 1 } else { no += 1 }
        }
        let expected = if yes > no { Label::Yes } else { Label::No };
        prop_assert_eq!(c.consensus, expected);
        prop_assert_eq!(c.tie, yes == no);
        prop_assert!(c.agreement >= 0.5 && c.agreement <= 1.0);
        if c.tie {
            prop_assert_eq!(c.agreement, 0.5);
        }
    }
}
