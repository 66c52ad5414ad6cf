use proptest::prelude::*;
use reefseg_core::cluster::{kmeans_fit, KMeansConfig};
use reefseg_core::prep::{normalize, Normalization};
use reefseg_core::raster::{decode_bnd, decode_png, encode_bnd, encode_png};
use reefseg_core::refine::{compact, connected_components, merge_small_components, Connectivity};
use reefseg_core::select::{wcss_curve, SelectionCurve};
use reefseg_core::{LabelMap, Raster, SampleMatrix};

fn raster_strategy() -> impl Strategy<Value = Raster> {
    (1u32..12, 1u32..12, 1u32..4).prop_flat_map(|(w, h, b)| {
        let n = (w * h) as usize;
        (
            prop::collection::vec(-1e6f32..1e6, n * b as usize),
            prop::collection::vec(prop::bool::weighted(0.85), n),
        )
            .prop_map(move |(data, mask)| Raster::new(w, h, b, data, mask).unwrap())
    })
}

fn labels_strategy() -> impl Strategy<Value = LabelMap> {
    (1u32..14, 1u32..14).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop_oneof![8 => 0i32..4, 1 => Just(-1), 1 => Just(-2)], (w * h) as usize)
            .prop_map(move |l| LabelMap::new(w, h, l).unwrap())
    })
}

fn rows_strategy(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4).prop_flat_map(move |d| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 8..max_n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bnd_round_trip_is_bit_exact(r in raster_strategy()) {
        let back = decode_bnd(&encode_bnd(&r)).unwrap();
        prop_assert_eq!(back, r);
    }

    #[test]
    fn png_round_trip_of_quantised_rgb(w in 1u32..10, h in 1u32..10, seed in any::<u64>()) {
        let n = (w * h) as usize;
        let data: Vec<f32> = (0..3 * n).map(|i| ((seed.wrapping_mul(i as u64 + 7) >> 11) % 256) as f32 / 255.0).collect();
        let mask: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 3 != 0).collect();
        let r = Raster::new(w, h, 3, data, mask).unwrap();
        prop_assert_eq!(decode_png(&encode_png(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn minmax_lands_in_unit_interval(rows in rows_strategy(40)) {
        let m = SampleMatrix::from_rows(&rows).unwrap();
        let (nm, scaling) = normalize(&m, Normalization::Minmax);
        prop_assert!(nm.values().iter().all(|v| (0.0..=1.0).contains(v)));
        for (j, s) in scaling.iter().enumerate() {
            for (a, b) in m.column(j).zip(nm.column(j)) {
                if s.scale != 0.0 {
                    prop_assert!((s.invert(b) - a).abs() <= 1e-9 * a.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn components_are_connected_and_uniform(lm in labels_strategy(), eight in any::<bool>()) {
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let cc = connected_components(&lm, conn);
        let total: usize = cc.components.iter().map(|c| c.size).sum();
        let valid = lm.labels().iter().filter(|&&l| l >= 0).count();
        prop_assert_eq!(total, valid);
        for (p, id) in cc.ids.iter().enumerate() {
            match id {
                Some(id) => prop_assert_eq!(cc.components[*id as usize].label, lm.labels()[p]),
                None => prop_assert!(lm.labels()[p] < 0),
            }
        }
    }

    #[test]
    fn merge_respects_sentinels_and_is_idempotent(lm in labels_strategy(), min_size in 1usize..8) {
        let out = merge_small_components(&lm, min_size, Connectivity::Eight);
        for (a, b) in lm.labels().iter().zip(out.labels()) {
            prop_assert_eq!(*a < 0, *b < 0);
            if *a < 0 {
                prop_assert_eq!(a, b);
            }
        }
        prop_assert!(out.label_set().is_subset(&lm.label_set()));
        let again = merge_small_components(&out, min_size, Connectivity::Eight);
        prop_assert_eq!(again, out);
    }

    #[test]
    fn compact_is_dense_and_preserves_partition(lm in labels_strategy()) {
        let (c, table) = compact(&lm);
        let live: Vec<i32> = c.label_set().into_iter().filter(|&l| l >= 0).collect();
        prop_assert_eq!(live, (0..table.len() as i32).collect::<Vec<_>>());
        let (a, b) = (lm.labels(), c.labels());
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                prop_assert_eq!(a[i] == a[j], b[i] == b[j]);
            }
        }
    }

    #[test]
    fn lloyd_history_never_increases(rows in rows_strategy(60), k in 1usize..5, seed in any::<u64>()) {
        prop_assume!(rows.len() >= k);
        let m = SampleMatrix::from_rows(&rows).unwrap();
        let (model, labels) = kmeans_fit(&m, k, &KMeansConfig { seed, ..Default::default() }).unwrap();
        prop_assert!(model.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(labels.iter().all(|&l| l < k));
    }

    #[test]
    fn wcss_curve_is_non_increasing(rows in rows_strategy(50), seed in any::<u64>()) {
        let m = SampleMatrix::from_rows(&rows).unwrap();
        let kmax = rows.len().min(6);
        let curve: SelectionCurve = wcss_curve(&m, 1..=kmax, &KMeansConfig { seed, ..Default::default() }).unwrap();
        prop_assert!(curve.points.windows(2).all(|w| w[1].score <= w[0].score));
    }
}

#[cfg(feature = "parallel")]
mod parallel {
    use super::*;
    use reefseg_core::cluster::{dbscan_fit, gmm_fit, GmmConfig};
    use reefseg_core::Exec;

    fn blobs() -> SampleMatrix {
        let rows: Vec<Vec<f64>> = (0..3000)
            .map(|i| {
                let c = (i % 3) as f64;
                let t = (i as f64 * 0.618_033_988_7).fract();
                vec![c + 0.3 * t, 2.0 * c - 0.2 * t, (i as f64 * 0.414).fract()]
            })
            .collect();
        SampleMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let m = blobs();
        let par = Exec::with_threads(4).unwrap();
        let seq = Exec::Sequential;

        let km = |exec: &Exec| kmeans_fit(&m, 3, &KMeansConfig { exec: exec.clone(), ..Default::default() }).unwrap();
        let (a, b) = (km(&seq), km(&par));
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.wcss.to_bits(), b.0.wcss.to_bits());

        let gm = |exec: &Exec| gmm_fit(&m, 3, &GmmConfig { exec: exec.clone(), ..Default::default() }).unwrap();
        let (a, b) = (gm(&seq), gm(&par));
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.model.log_likelihood.to_bits(), b.model.log_likelihood.to_bits());

        assert_eq!(dbscan_fit(&m, 0.05, 5, &seq).unwrap(), dbscan_fit(&m, 0.05, 5, &par).unwrap());
    }
}
