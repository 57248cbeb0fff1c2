mod common;

use proptest::prelude::*;

use common::counted_dataset;
use salsign::dataset::{
    dataset_stats, load_dataset, save_dataset, split_dataset, Dataset, DatasetError, ImageRecord,
    SignAnnotation, SignCategory, SplitSpec,
};
use salsign::BBox;

#[test]
fn full_scale_counts_validate() {
    let ds = counted_dataset(20_377, 11_615, 7, 1);
    assert!(ds.validate().is_empty());
    let stats = dataset_stats(&ds);
    assert_eq!(stats.total, 31_992);
    assert_eq!(stats.salient, 20_377);
    assert_eq!(stats.non_salient, 11_615);
    let per_cat: u64 = stats.per_category.values().map(|c| c.salient + c.non_salient).sum();
    assert_eq!(per_cat, 31_992);
}

#[test]
fn declared_count_mismatch_is_reported() {
    let mut ds = counted_dataset(30, 20, 5, 2);
    ds.declared_counts.as_mut().unwrap().salient = 31;
    let issues = ds.validate();
    assert!(!issues.is_empty());
    assert!(issues.iter().any(|i| i.record == "<dataset>"));
}

#[test]
fn split_sizes_follow_floor_rule() {
    let spec = SplitSpec::new(0.8, 0.1, 0.1, 0).unwrap();
    assert_eq!(spec.sizes(31_992), (25_594, 3_199, 3_199));
    let n = 31_992usize;
    let (tr, va, te) = spec.sizes(n);
    assert_eq!(va, (n as f64 * 0.1).floor() as usize);
    assert_eq!(tr + va + te, n);
}

#[test]
fn split_partitions_images() {
    let ds = counted_dataset(400, 200, 3, 4);
    let spec = SplitSpec::new(0.8, 0.1, 0.1, 11).unwrap();
    let (tr, va, te) = split_dataset(&ds, &spec);
    assert_eq!(
        (tr.images.len(), va.images.len(), te.images.len()),
        spec.sizes(ds.images.len())
    );
    let mut ids: Vec<&str> = [&tr, &va, &te]
        .iter()
        .flat_map(|d| d.images.iter().map(|i| i.image_id.as_str()))
        .collect();
    ids.sort();
    let mut want: Vec<&str> = ds.images.iter().map(|i| i.image_id.as_str()).collect();
    want.sort();
    assert_eq!(ids, want);
    assert_eq!(split_dataset(&ds, &spec), (tr, va, te));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path().join("nope.json")), Err(DatasetError::Io { .. })));
}

fn arb_annotation(image: String, k: usize) -> impl Strategy<Value = SignAnnotation> {
    (
        0.0f64..50.0,
        0.0f64..50.0,
        0.001f64..50.0,
        0.001f64..50.0,
        0usize..SignCategory::ALL.len(),
        any::<bool>(),
        prop::option::of(any::<bool>()),
    )
        .prop_map(move |(x, y, w, h, c, salient, occluded)| SignAnnotation {
            id: format!("{image}/{k}"),
            image_id: image.clone(),
            bbox: BBox::new(x, y, x + w, y + h).unwrap(),
            category: SignCategory::ALL[c],
            salient,
            occluded,
        })
}

fn arb_image(i: usize) -> impl Strategy<Value = ImageRecord> {
    let image_id = format!("im{i}");
    (0usize..4, prop::option::of("[a-z]{1,6}")).prop_flat_map(move |(n, clip)| {
        let id = image_id.clone();
        let anns: Vec<_> = (0..n).map(|k| arb_annotation(id.clone(), k)).collect();
        (anns, Just(clip)).prop_map({
            let id = id.clone();
            move |(annotations, source_clip)| ImageRecord {
                image_id: id.clone(),
                width: 100,
                height: 100,
                source_clip,
                annotations,
            }
        })
    })
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (0usize..5).prop_flat_map(|n| {
        let imgs: Vec<_> = (0..n).map(arb_image).collect();
        imgs.prop_map(|images| Dataset { images, declared_counts: None })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn save_load_round_trip(ds in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_json_string(), ds.to_json_string());
    }
}
