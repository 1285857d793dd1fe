use airmark::classifier::{build_assistnet, load_checkpoint, save_checkpoint, TrainConfig};
use airmark::imaging::BinaryMask;
use airmark::labeler::{
    circledat_traverse, export_annotation, label_frame, parse_annotation, AnnotationRecord, BandName, ExportFormat,
    LabelConfig, Polyline, RoiSummary, TraversalParams,
};
use airmark::pipeline::route;
use airmark::roi::reduce_roi;
use airmark::synthgen::{generate_scene, sample_scene_spec};
use airmark::Category;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn category() -> impl Strategy<Value = Category> {
    prop_oneof![Just(Category::Runway), Just(Category::Taxiway)]
}

fn record() -> impl Strategy<Value = AnnotationRecord> {
    let points = proptest::collection::vec(any::<[i32; 2]>(), 0..6).prop_map(Polyline);
    (
        "[a-z0-9_,\" ]{0,12}",
        category(),
        proptest::option::of(0.0f64..=1.0),
        proptest::collection::vec(points, 0..4),
        proptest::option::of(0usize..5000),
        0usize..5000,
        proptest::array::uniform8(-1e4f64..1e4),
        (0usize..1_000_000, 1usize..5000, 1usize..5000),
    )
        .prop_map(|(frame, category, probability, polylines, horizon_row, crop_top_row, t, (fg, w, h))| {
            AnnotationRecord {
                frame,
                category,
                probability,
                band: BandName::for_category(category),
                polylines,
                roi: RoiSummary {
                    horizon_row,
                    crop_top_row,
                    trapezoid: [[t[0], t[1]], [t[2], t[3]], [t[4], t[5]], [t[6], t[7]]],
                },
                mask_foreground: fg,
                width: w,
                height: h,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn routing_is_band_consistent(p in 0.0f64..=1.0) {
        let (cat, band) = route(p);
        prop_assert_eq!(band, BandName::for_category(cat));
        prop_assert_eq!(cat == Category::Runway, p >= 0.5);
    }

    #[test]
    fn annotation_json_round_trips(r in record()) {
        let json = export_annotation(&r, ExportFormat::Json);
        prop_assert_eq!(parse_annotation(&json).unwrap(), r.clone());
        let csv = String::from_utf8(export_annotation(&r, ExportFormat::Csv)).unwrap();
        let rows: usize = r.polylines.iter().map(|p| p.len()).sum();
        prop_assert_eq!(csv.lines().count(), rows + 1);
    }

    #[test]
    fn traversal_stays_bounded(
        w in 8usize..48, h in 8usize..48,
        bits in proptest::collection::vec(any::<bool>(), 48 * 48),
        radius in 2u32..12, max_steps in 1u32..60,
    ) {
        let mask = BinaryMask::from_fn(w, h, |x, y| bits[y * 48 + x]);
        let Some((sx, sy)) = mask.foreground().next() else { return Ok(()) };
        let params = TraversalParams { radius, max_steps, ..TraversalParams::default() };
        let line = circledat_traverse(&mask, [sx as i32, sy as i32], &params).unwrap();
        prop_assert!(!line.is_empty() && line.len() <= max_steps as usize + 1);
        prop_assert_eq!(line.points()[0], [sx as i32, sy as i32]);
        let cap = 1.5 * radius as f64;
        for pair in line.points().windows(2) {
            let d = ((pair[1][0] - pair[0][0]) as f64).hypot((pair[1][1] - pair[0][1]) as f64);
            prop_assert!(d >= 1.0 && d <= cap + 1e-9, "step {}", d);
        }
        for p in line.points() {
            prop_assert!(p[0] >= 0 && p[1] >= 0 && (p[0] as usize) < w && (p[1] as usize) < h);
        }
    }

    #[test]
    fn checkpoint_corruption_never_panics(pos in any::<prop::sample::Index>(), byte: u8, cut in any::<prop::sample::Index>()) {
        let cfg = TrainConfig { input_width: 30, input_height: 30, ..TrainConfig::default() };
        let net = build_assistnet(30, 30).unwrap().init_weights(3);
        let good = save_checkpoint(&net, &cfg, 5);
        let mut bad = good.clone();
        bad[pos.index(good.len())] = byte;
        if let Ok(ck) = load_checkpoint(&bad) {
            prop_assert_eq!(save_checkpoint(&ck.network, &ck.config, ck.seed), bad);
        }
        prop_assert!(load_checkpoint(&good[..cut.index(good.len())]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn labels_stay_inside_roi(cat in category(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = sample_scene_spec(cat, 160, 90, &mut rng).unwrap();
        let (img, truth) = generate_scene(&spec).unwrap();
        prop_assert!(truth.marking_mask.foreground().all(|(_, y)| y > truth.horizon_row));
        let roi = reduce_roi(&img);
        let labeled = label_frame(&img, cat, "f", &LabelConfig::default()).unwrap();
        prop_assert!(labeled.mask.is_subset_of(&roi.roi_mask));
        prop_assert_eq!(labeled.record.band, BandName::for_category(cat));
        for line in &labeled.record.polylines {
            prop_assert!(line.len() >= 2);
            for p in line.points() {
                prop_assert!(roi.roi_mask.get(p[0] as usize, p[1] as usize));
            }
        }
    }
}
