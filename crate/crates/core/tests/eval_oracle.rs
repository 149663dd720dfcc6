mod common;

use common::{micro_dataset, ref_ap101, ref_ap_all, ref_ar_large, ref_map, ref_prf, rng};
use dualdet::data::{load_coco_annotations, load_predictions, to_eval_images};
use dualdet::eval::{
    ar_large, average_precision, evaluate, map_coco, prf_at_iou, ApScheme, EvalConfig, EvalImage, PRCurve,
};
use dualdet::{BBox, Prediction};

fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
    BBox::new(cx, cy, w, h).unwrap()
}

/// Two tables; ranked detections hit, miss, hit.
fn hand_fixture() -> Vec<EvalImage> {
    let g0 = b(0.3, 0.3, 0.2, 0.2);
    let g1 = b(0.7, 0.7, 0.3, 0.2);
    vec![EvalImage {
        id: 1,
        gts: vec![g0, g1],
        preds: vec![
            Prediction::new(g1, 0.7),
            Prediction::new(g0, 0.9),
            Prediction::new(b(0.8, 0.2, 0.1, 0.1), 0.8),
        ],
    }]
}

#[test]
fn hand_built_average_precision() {
    let curve = PRCurve::from_flags(&[true, false, true], 2);
    let all = average_precision(&curve, ApScheme::AllPoint).unwrap();
    let p101 = average_precision(&curve, ApScheme::Point101).unwrap();
    assert!((all - 0.8333).abs() < 5e-5, "{all}");
    assert!((p101 - 0.8350).abs() < 5e-5, "{p101}");
    assert_eq!(all, ref_ap_all(&[true, false, true], 2));
    assert_eq!(p101, ref_ap101(&[true, false, true], 2));

    let report = map_coco(&hand_fixture(), &EvalConfig::default()).unwrap();
    // ten identical per-threshold values, averaged
    assert!((report.map - p101).abs() < 1e-12);
    assert_eq!(report.ap50, p101);
}

#[test]
fn agrees_with_reference_on_micro_datasets() {
    let mut r = rng(2024);
    let default = EvalConfig::default();
    let tight = EvalConfig {
        max_dets: 3,
        ..EvalConfig::default()
    };
    for _ in 0..300 {
        let images = micro_dataset(&mut r);
        for cfg in [&default, &tight] {
            let report = map_coco(&images, cfg).unwrap();
            assert_eq!(report.map, ref_map(&images, cfg.max_dets), "{images:?}");
            assert_eq!(
                ar_large(&images, cfg).ok(),
                ref_ar_large(&images, cfg.max_dets, cfg.large_threshold)
            );
        }
        for t in [0.5, 0.8, 0.9] {
            let got = prf_at_iou(&images, t, 0.5);
            assert_eq!((got.precision, got.recall, got.f1), ref_prf(&images, t, 0.5));
        }
    }
}

#[test]
fn perfect_detections_score_one() {
    let gts = vec![b(0.3, 0.3, 0.3, 0.3), b(0.7, 0.7, 0.2, 0.2)];
    let images = vec![EvalImage {
        id: 0,
        preds: gts.iter().map(|g| Prediction::new(*g, 0.9)).collect(),
        gts,
    }];
    let report = evaluate(&images, &EvalConfig::default()).unwrap();
    assert_eq!(report.map, 1.0);
    assert_eq!(report.ar_large, Some(1.0));
    assert!(report
        .prf
        .iter()
        .all(|e| e.precision == 1.0 && e.recall == 1.0 && e.f1 == 1.0));
}

#[test]
fn no_detections_score_zero_and_no_truth_is_an_error() {
    let images = vec![EvalImage {
        id: 0,
        gts: vec![b(0.5, 0.5, 0.1, 0.1)],
        preds: vec![],
    }];
    let report = evaluate(&images, &EvalConfig::default()).unwrap();
    assert_eq!(report.map, 0.0);
    assert_eq!(report.ar_large, None);

    let empty = vec![EvalImage::default()];
    assert!(map_coco(&empty, &EvalConfig::default()).is_err());
}

#[test]
fn coco_files_reproduce_the_hand_curve() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.json");
    let res = dir.path().join("res.json");
    std::fs::write(
        &ann,
        r#"{"images":[{"id":1,"width":100,"height":100},{"id":2,"width":200,"height":100}],
            "annotations":[{"image_id":1,"bbox":[10,10,40,40],"category_id":1},
                           {"image_id":2,"bbox":[0,0,100,50],"category_id":1},
                           {"image_id":2,"bbox":[120,60,20,20],"category_id":7}],
            "categories":[{"id":1,"name":"table"}]}"#,
    )
    .unwrap();
    std::fs::write(
        &res,
        r#"[{"image_id":1,"bbox":[10,10,40,40],"score":0.9},
            {"image_id":2,"bbox":[150,70,30,20],"score":0.8},
            {"image_id":2,"bbox":[0,0,100,50],"score":0.7}]"#,
    )
    .unwrap();
    let gt = load_coco_annotations(&ann, 1).unwrap();
    assert_eq!(gt.skipped, 1);
    let preds = load_predictions(&res, &gt).unwrap();
    let images = to_eval_images(&gt, &preds).unwrap();
    let report = map_coco(&images, &EvalConfig::default()).unwrap();
    assert!((report.map - 0.8350).abs() < 5e-5, "{}", report.map);
}
