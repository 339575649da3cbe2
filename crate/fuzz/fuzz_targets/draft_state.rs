#![no_main]

use libfuzzer_sys::fuzz_target;
use veto_core::draft::{parse_draft_state, recommend};
use veto_core::features::StatsBook;
use veto_core::policy::{BanditPolicy, Variant};

fuzz_target!(|data: &[u8]| {
    let Ok(draft) = parse_draft_state(data) else {
        return;
    };
    for variant in Variant::ALL {
        let Ok(rec) = recommend(
            &BanditPolicy::zeros(variant),
            &StatsBook::new(),
            &draft,
            "fuzz",
        ) else {
            continue;
        };
        if rec.complete {
            assert!(rec.distribution.is_empty() && rec.decider.is_some());
        } else {
            let total: f64 = rec.distribution.iter().map(|p| p.probability).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert_eq!(rec.distribution.len(), 7 - rec.step);
        }
    }
});
