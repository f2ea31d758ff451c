use std::collections::HashSet;
use std::sync::Arc;

use heaven_core::pipeline::{run_query, PipelineConfig};
use heaven_core::scoring::Scored;
use heaven_core::store::{CorpusIndex, IndexParts, PageId, PooledVector};
use heaven_core::synth::{generate, SynthConfig, SynthCorpus};
use proptest::prelude::*;

fn corpus(seed: u64, docs: usize, max_pages: usize, r: usize) -> SynthCorpus {
    generate(&SynthConfig {
        docs,
        pages: (1, max_pages),
        d_single: 6,
        d_multi: 4,
        patches: (1, 6),
        queries: 2,
        query_tokens: 4,
        r,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn ids<T: Copy>(s: &[Scored<T>]) -> Vec<T> {
    s.iter().map(|x| x.item).collect()
}

fn cfg_strategy() -> impl Strategy<Value = PipelineConfig> {
    (0.05f64..=1.0, 0.05f64..=1.0, 1usize..60, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(
        |(p1, p2, k, alpha, beta)| PipelineConfig {
            p1,
            p2,
            k,
            alpha,
            beta,
            ..PipelineConfig::default()
        },
    )
}

/// Appends one dimension: `c` on every VS-page, 0 on pages, 1 on queries.
/// Every VS score moves by exactly `c`, page scores are unchanged.
fn shift_vs_scores(c: &SynthCorpus, shift: f32) -> (CorpusIndex, Vec<heaven_core::QueryRecord>) {
    let idx = &c.index;
    let extend = |v: &PooledVector, x: f32| {
        let mut d = v.data().to_vec();
        d.push(x);
        PooledVector::new(d).unwrap()
    };
    let shifted = CorpusIndex::from_parts(IndexParts {
        documents: idx.documents().to_vec(),
        page_pooled: idx.page_ids().map(|p| extend(idx.pooled(p), 0.0)).collect(),
        page_multi: idx.page_ids().map(|p| Arc::new(idx.multi(p).clone())).collect(),
        page_info: idx.page_ids().map(|p| idx.info(p).clone()).collect(),
        gamma: idx.gamma().clone(),
        vs_pooled: Some(idx.vs_pooled().unwrap().iter().map(|v| extend(v, shift)).collect()),
    })
    .unwrap();
    let queries = c
        .queries
        .iter()
        .map(|q| {
            let mut q = q.clone();
            q.pooled = extend(&q.pooled, 1.0);
            q
        })
        .collect();
    (shifted, queries)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn ranking_is_a_permutation_with_segments_in_order(
        seed in any::<u64>(), docs in 1usize..8, max_pages in 1usize..30, r in 1usize..10,
        cfg in cfg_strategy(),
    ) {
        let c = corpus(seed, docs, max_pages, r);
        for q in &c.queries {
            let t = run_query(q, &c.index, &cfg).unwrap();
            prop_assert_eq!(t.ranking.len(), c.index.page_count());
            let uniq: HashSet<PageId> = t.ranking.iter().copied().collect();
            prop_assert_eq!(uniq.len(), c.index.page_count());

            let cstar: HashSet<PageId> = ids(&t.final_cstar).into_iter().collect();
            let ck: HashSet<PageId> = ids(t.refined()).into_iter().collect();
            let cc: HashSet<PageId> = ids(&t.candidates).into_iter().collect();
            prop_assert!(cstar.is_subset(&ck) && ck.is_subset(&cc));
            let segment = |p: &PageId| {
                if cstar.contains(p) { 0 } else if ck.contains(p) { 1 } else if cc.contains(p) { 2 } else { 3 }
            };
            let segs: Vec<u8> = t.ranking.iter().map(segment).collect();
            prop_assert!(segs.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn larger_cutoffs_only_add_pages(
        seed in any::<u64>(), docs in 1usize..6, max_pages in 2usize..25,
        cfg in cfg_strategy(), dk in 0usize..20, dp2 in 0.0f64..0.5,
    ) {
        let c = corpus(seed, docs, max_pages, 4);
        let bigger = PipelineConfig { k: cfg.k + dk, p2: (cfg.p2 + dp2).min(1.0), ..cfg };
        for q in &c.queries {
            let a = run_query(q, &c.index, &cfg).unwrap();
            let b = run_query(q, &c.index, &bigger).unwrap();
            let ck_a: HashSet<_> = ids(a.refined()).into_iter().collect();
            let ck_b: HashSet<_> = ids(b.refined()).into_iter().collect();
            prop_assert!(ck_a.is_subset(&ck_b));
            let same_k = PipelineConfig { p2: bigger.p2, ..cfg };
            let c2 = run_query(q, &c.index, &same_k).unwrap();
            let star_a: HashSet<_> = ids(&a.final_cstar).into_iter().collect();
            let star_c: HashSet<_> = ids(&c2.final_cstar).into_iter().collect();
            prop_assert!(star_a.is_subset(&star_c));
        }
    }

    #[test]
    fn constant_vs_shift_preserves_every_order(
        seed in any::<u64>(), docs in 1usize..6, max_pages in 1usize..25,
        cfg in cfg_strategy(), shift in prop::sample::select(vec![0.25f32, 1.0, 4.0]),
    ) {
        let c = corpus(seed, docs, max_pages, 3);
        let (shifted, queries) = shift_vs_scores(&c, shift);
        for (q, sq) in c.queries.iter().zip(&queries) {
            let a = run_query(q, &c.index, &cfg).unwrap();
            let b = run_query(sq, &shifted, &cfg).unwrap();
            prop_assert_eq!(ids(&a.vs_ranking), ids(&b.vs_ranking));
            prop_assert_eq!(ids(&a.candidates), ids(&b.candidates));
            prop_assert_eq!(ids(&a.filtered), ids(&b.filtered));
            prop_assert_eq!(ids(&a.final_cstar), ids(&b.final_cstar));
            prop_assert_eq!(&a.ranking, &b.ranking);
        }
    }
}
