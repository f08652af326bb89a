use proptest::prelude::*;

use rcd_core::data::tsv::{log_transform, parse_design, parse_intensities, parse_probes, write_dataset};
use rcd_core::data::{ArrayChannelAssignment, Channel, Dataset, IntensityRecord, JunctionProbe};
use rcd_core::enrich::{enrichment_ratio, GeneCall};
use rcd_core::fdr::{qvalues, FdrMethod};
use rcd_core::junctions::{build_sets, intervals_incompatible};
use rcd_core::mixed_model::{fit_spots, CellObservation, SpotGroups};
use rcd_core::rank_change::{call_dse, latent_ranks, Call};

fn probe_strategy() -> impl Strategy<Value = Vec<JunctionProbe>> {
    prop::collection::vec((0..3usize, 0..200i64, 1..150i64), 1..12).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (g, start, len))| JunctionProbe::new(format!("p{i}"), format!("G{g}"), start, start + len).unwrap())
            .collect()
    })
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (probe_strategy(), 1..4usize, prop::collection::vec(-5.0f64..20.0, 200)).prop_map(|(probes, arrays, values)| {
        let mut design = Vec::new();
        let mut records = Vec::new();
        let mut v = values.into_iter().cycle();
        for a in 0..arrays {
            let id = format!("A{a}");
            for (ch, t) in [(Channel::Cy3, "N"), (Channel::Cy5, "T")] {
                design.push(ArrayChannelAssignment {
                    array_id: id.clone(),
                    channel: ch,
                    tissue: t.into(),
                    replicate: a as u32 + 1,
                });
                for p in &probes {
                    records.push(IntensityRecord {
                        probe_id: p.probe_id.clone(),
                        array_id: id.clone(),
                        channel: ch,
                        value: v.next().unwrap() * std::f64::consts::E,
                    });
                }
            }
        }
        Dataset::validate(probes, design, records).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_round_trips(data in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let back = Dataset::validate(
            parse_probes(dir.path().join("probes.tsv")).unwrap(),
            parse_design(dir.path().join("design.tsv")).unwrap().assignments,
            parse_intensities(dir.path().join("intensities.tsv"), true, 1.0).unwrap(),
        )
        .unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn log_transform_is_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6, floor in 0.1f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(log_transform(lo, floor) <= log_transform(hi, floor));
        prop_assert!(log_transform(lo, floor) >= floor.log2());
    }

    #[test]
    fn incompatibility_is_symmetric(s1 in 0..100i64, l1 in 1..50i64, s2 in 0..100i64, l2 in 1..50i64) {
        let a = JunctionProbe::new("a", "G", s1, s1 + l1).unwrap();
        let b = JunctionProbe::new("b", "G", s2, s2 + l2).unwrap();
        prop_assert_eq!(intervals_incompatible(&a, &b).unwrap(), intervals_incompatible(&b, &a).unwrap());
        prop_assert!(intervals_incompatible(&a, &a).unwrap());
    }

    #[test]
    fn sets_ignore_input_order(probes in probe_strategy(), seed in any::<u64>()) {
        let mut shuffled = probes.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(build_sets(&probes, 10), build_sets(&shuffled, 10));
    }

    #[test]
    fn every_set_is_pairwise_anchored(probes in probe_strategy()) {
        for s in build_sets(&probes, 10).sets {
            let anchor = s.members.iter().find(|m| m.id == s.anchor).unwrap();
            prop_assert!(s.members.len() >= 2 && s.members.len() <= 10);
            prop_assert!(s.members.iter().all(|m| m.gene == s.gene && anchor.overlaps(m)));
        }
    }

    #[test]
    fn ranks_survive_increasing_maps(x in prop::collection::vec(-50.0f64..50.0, 1..10), a in 0.01f64..10.0, b in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().map(|v| a * v + b + (v / 20.0).exp()).collect();
        prop_assert_eq!(latent_ranks(&x), latent_ranks(&y));
        let r = latent_ranks(&x);
        prop_assert!(r.iter().all(|&k| k >= 1 && k <= x.len()));
    }

    #[test]
    fn at_most_one_direction_called(u in 0.0f64..=1.0, frac in 0.0f64..=1.0, kappa in 0.51f64..0.99) {
        let d = (1.0 - u) * frac;
        let call = call_dse(u, d, kappa).unwrap();
        prop_assert_eq!(call == Call::Up, u > kappa);
        prop_assert_eq!(call == Call::Down, d > kappa);
    }

    #[test]
    fn qvalues_are_bounded_and_monotone(p in prop::collection::vec(0.0f64..=1.0, 1..200)) {
        for method in [FdrMethod::Bh, FdrMethod::Storey] {
            let q = qvalues(&p, method, 0.5).unwrap();
            let mut pairs: Vec<(f64, f64)> = p.iter().copied().zip(q.q.iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert!(q.q.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if method == FdrMethod::Bh {
                prop_assert!(p.iter().zip(&q.q).all(|(a, b)| *b >= a * (1.0 - 1e-12)));
            }
        }
    }

    #[test]
    fn fit_ignores_spot_order(values in prop::collection::vec(7.0f64..12.0, 24), seed in any::<u64>()) {
        let groups: Vec<Vec<CellObservation>> = (0..12)
            .map(|s| {
                let j = s % 3;
                vec![
                    CellObservation { cell: j, value: values[2 * s] },
                    CellObservation { cell: 3 + j, value: values[2 * s + 1] },
                ]
            })
            .collect();
        let mut shuffled = groups.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
        }
        let (b1, c1, v1) = fit_spots(&SpotGroups::new(6, groups).unwrap()).unwrap();
        let (b2, c2, v2) = fit_spots(&SpotGroups::new(6, shuffled).unwrap()).unwrap();
        prop_assert!((v1.rho - v2.rho).abs() < 1e-9);
        prop_assert!((&b1 - &b2).amax() < 1e-9);
        prop_assert!((&c1 - &c2).amax() < 1e-9);
    }

    #[test]
    fn ratio_ignores_gene_relabeling(sig in prop::collection::vec((0..5usize, 1..6usize), 6), offset in 1..1000usize) {
        let table = |names: &dyn Fn(usize) -> String| -> Vec<GeneCall> {
            sig.iter()
                .enumerate()
                .flat_map(|(g, &(s, extra))| {
                    (0..s + extra).map(move |i| (g, i < s))
                })
                .map(|(g, significant)| GeneCall { gene: names(g), significant })
                .collect()
        };
        let plain = table(&|g| format!("G{g}"));
        let renamed = table(&|g| if g < 2 { format!("G{g}") } else { format!("X{}", g + offset) });
        let set = vec!["G0".to_string(), "G1".to_string()];
        let a = enrichment_ratio(&plain, &set, "c");
        let b = enrichment_ratio(&renamed, &set, "c");
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.ratio, b.ratio),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }
}
