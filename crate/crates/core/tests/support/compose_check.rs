//! Composition contract checks over randomized resolutions. Shared by the
//! property tests and the acceptance runner.

use aw_core::compose::{
    compose_instructions, ComposeError, Condition, Polarity, PoolExample, Resolution, ResolvedExample,
    SEED_TARGET,
};
use proptest::prelude::*;

/// Candidate count, then a toggle sequence over candidate indices.
pub fn arb_clicks() -> impl Strategy<Value = (usize, Vec<usize>)> {
    (1usize..8).prop_flat_map(|n| (Just(n), prop::collection::vec(0..n, 0..30)))
}

pub fn build(n: usize, clicks: &[usize]) -> Resolution {
    let mut r = Resolution::new("p", 1);
    r.add_candidate(SEED_TARGET, "uri://seed", "Toy Dog");
    for i in 1..n {
        r.add_candidate(&format!("s{i}"), &format!("uri://{i}"), &format!("tag {i}"));
    }
    for &c in clicks {
        r.toggle(&target(c)).unwrap();
    }
    r
}

pub fn target(i: usize) -> String {
    if i == 0 {
        SEED_TARGET.to_owned()
    } else {
        format!("s{i}")
    }
}

pub fn arb_pool() -> impl Strategy<Value = Vec<PoolExample>> {
    prop::collection::vec(any::<bool>(), 0..10).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, pos)| PoolExample {
                image_uri: format!("pool://{i}"),
                polarity: if pos { Polarity::Positive } else { Polarity::Negative },
            })
            .collect()
    })
}

pub fn check_bundle(
    condition: Condition,
    resolved: &[ResolvedExample],
    pool: &[PoolExample],
    k: Option<usize>,
    seed: u64,
) -> Result<(), TestCaseError> {
    let result = compose_instructions("Is there a dog?", condition, resolved, pool, k, seed);
    let bundle = match (condition, result) {
        (Condition::Img | Condition::Tag | Condition::ImgTag, Err(ComposeError::NoResolvedExamples(_))) => {
            prop_assert!(resolved.is_empty());
            return Ok(());
        }
        (Condition::B1, Err(ComposeError::InsufficientPool { .. })) => {
            prop_assert!(pool.len() < k.unwrap_or(resolved.len()));
            return Ok(());
        }
        (_, Err(e)) => return Err(TestCaseError::fail(format!("{condition:?}: {e}"))),
        (_, Ok(b)) => b,
    };
    prop_assert_eq!(bundle.condition, condition);

    // positives first, and sections never empty or repeated
    let polarities: Vec<Polarity> = bundle.sections.iter().map(|s| s.polarity).collect();
    prop_assert!(polarities.windows(2).all(|w| w[0] == Polarity::Positive && w[1] == Polarity::Negative));
    prop_assert!(bundle.sections.iter().all(|s| !s.slots.is_empty()));

    let slots: Vec<_> = bundle.slots().collect();
    match condition {
        Condition::B0 => prop_assert_eq!(slots.len(), 0),
        Condition::B1 => {
            prop_assert_eq!(slots.len(), k.unwrap_or(resolved.len()));
            for (polarity, slot) in &slots {
                prop_assert!(slot.concept_tag.is_none());
                let uri = slot.image_uri.as_ref().unwrap();
                let from_pool = pool.iter().find(|p| &p.image_uri == uri).unwrap();
                prop_assert_eq!(from_pool.polarity, *polarity);
            }
            let mut uris: Vec<_> = slots.iter().map(|(_, s)| s.image_uri.clone()).collect();
            uris.sort();
            uris.dedup();
            prop_assert_eq!(uris.len(), slots.len());
        }
        Condition::Img | Condition::Tag | Condition::ImgTag => {
            prop_assert_eq!(slots.len(), resolved.len());
            for (polarity, slot) in &slots {
                prop_assert_eq!(slot.image_uri.is_some(), condition != Condition::Tag);
                prop_assert_eq!(slot.concept_tag.is_some(), condition != Condition::Img);
                let matches = |e: &&ResolvedExample| {
                    e.polarity == *polarity
                        && slot.image_uri.as_ref().is_none_or(|u| *u == e.image_uri)
                        && slot.concept_tag.as_ref().is_none_or(|t| *t == e.concept_tag)
                };
                prop_assert!(resolved.iter().any(|e| matches(&e)));
            }
            // within a polarity, resolved order is preserved
            for pol in [Polarity::Positive, Polarity::Negative] {
                let want: Vec<&str> = resolved
                    .iter()
                    .filter(|e| e.polarity == pol)
                    .map(|e| e.concept_tag.as_str())
                    .collect();
                let got: Vec<&str> = slots
                    .iter()
                    .filter(|(p, _)| *p == pol)
                    .map(|(_, s)| s.concept_tag.as_deref().unwrap_or(""))
                    .collect();
                if condition != Condition::Img {
                    prop_assert_eq!(got, want);
                }
            }
        }
    }
    let again = compose_instructions("Is there a dog?", condition, resolved, pool, k, seed).unwrap();
    prop_assert_eq!(again, bundle);
    Ok(())
}

/// Every condition for one committed resolution.
pub fn check_all_conditions(
    n: usize,
    clicks: &[usize],
    pool: &[PoolExample],
    k: Option<usize>,
    seed: u64,
) -> Result<(), TestCaseError> {
    let mut r = build(n, clicks);
    let resolved = r.commit().map_err(|e| TestCaseError::fail(e.to_string()))?;
    for e in &resolved {
        prop_assert!(!e.concept_tag.trim().is_empty());
    }
    for condition in Condition::ALL {
        check_bundle(condition, &resolved, pool, k, seed)?;
    }
    Ok(())
}

/// Three toggles of one entry restore it and leave the selection unchanged.
pub fn check_toggle_cycle(n: usize, clicks: &[usize], which: usize) -> Result<(), TestCaseError> {
    let mut r = build(n, clicks);
    let t = target(which % n);
    let before = r.state_of(&t).unwrap();
    let mut selected_before: Vec<_> = r.selected().iter().map(|e| e.image_uri.clone()).collect();
    let mut seen = vec![before];
    for _ in 0..3 {
        seen.push(r.toggle(&t).unwrap());
    }
    prop_assert_eq!(seen[3], before);
    prop_assert_eq!(seen[1], before.next());
    prop_assert_eq!(seen[2], before.next().next());
    let mut uris: Vec<_> = r.selected().iter().map(|e| e.image_uri.clone()).collect();
    uris.sort();
    selected_before.sort();
    prop_assert_eq!(uris, selected_before);
    Ok(())
}
