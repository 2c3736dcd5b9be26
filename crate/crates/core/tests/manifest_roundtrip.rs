mod common;

use cadastre_core::manifest::{load_manifest, save_manifest};
use cadastre_core::{DatasetManifest, ImageRecord, LabelSchema, ReviewStatus};
use common::{manual, synthetic};
use proptest::prelude::*;

fn record(i: usize, label: &str, is_synthetic: bool, city: Option<String>) -> ImageRecord {
    if is_synthetic {
        let mut r = synthetic(&format!("{i}"), label, ReviewStatus::Accepted);
        r.city_keyword = city;
        r
    } else {
        manual(&format!("{i}"), label)
    }
}

fn manifest_strategy() -> impl Strategy<Value = DatasetManifest> {
    let row = (0usize..3, any::<bool>(), proptest::option::of("[a-zA-Z ,\"']{0,12}"), any::<bool>());
    (proptest::collection::vec(row, 1..60), any::<u64>()).prop_map(|(rows, seed)| {
        let schema = LabelSchema::reduced("stucco").unwrap();
        let mut m = DatasetManifest::new(schema.clone(), seed, "roundtrip");
        for (i, (c, syn, city, test)) in rows.into_iter().enumerate() {
            let r = record(i, &schema.labels()[c], syn, city.filter(|c| !c.is_empty()));
            if test { m.test.push(r) } else { m.train.push(r) }
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bytes_round_trip(m in manifest_strategy()) {
        let bytes = m.to_bytes().unwrap();
        let back = DatasetManifest::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let schema = LabelSchema::reduced("siding").unwrap();
    let mut m = DatasetManifest::new(schema, 9, "file");
    m.train.push(record(0, "siding", true, Some("São Paulo, \"old\"".into())));
    m.test.push(record(1, "null", false, None));
    let path = dir.path().join("manifest.csv");
    save_manifest(&m, &path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), m);
}

#[test]
fn leakage_is_rejected() {
    let mut m = DatasetManifest::new(LabelSchema::reduced("siding").unwrap(), 9, "leak");
    m.train.push(record(0, "siding", false, None));
    m.test.push(record(0, "siding", false, None));
    assert!(m.validate().is_err());
}
