mod common;

use proptest::prelude::*;

use scenesync::io::*;
use scenesync::likelihood::RobustForm;
use scenesync::priors::{fit_priors, PriorFitConfig};
use scenesync::relative::{build_relative_tensor, EDGE_DIM};
use scenesync::synthgen::{generate, GrammarConfig};
use scenesync::Error;

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn bedroom_scene_round_trips_with_eighty_slots_in_order() {
    let s = generate::<f64>(&GrammarConfig::bedroom(), 1, 1).unwrap().remove(0);
    let text = save_scene(&s).unwrap();
    let back = load_scene::<f64>(&text).unwrap();
    assert_eq!(back, s);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let objects = v["objects"].as_array().unwrap();
    assert_eq!(objects.len(), s.len());
    for (o, (name, idx)) in objects.iter().zip(s.class_table.canonical_slot_order()) {
        assert_eq!(o["class"], name.as_str());
        assert_eq!(o["slot"], idx);
    }
}

#[test]
fn edges_round_trip_bitwise() {
    let mut r = common::rng(2);
    let s = common::random_scene(&mut r, &common::small_table());
    let e = build_relative_tensor(&s);
    let back = load_edges::<f64>(&save_edges(&e).unwrap()).unwrap();
    assert_eq!(bits(&back.flat()), bits(&e.flat()));
    assert_eq!(back.shape(), [s.len(), s.len(), EDGE_DIM]);
}

#[test]
fn edge_schema_errors() {
    let bad_shape = r#"{"format":1,"shape":[2,3,15],"data":[]}"#;
    assert!(matches!(load_edges::<f64>(bad_shape), Err(Error::Schema(_))));
    let short = r#"{"format":1,"shape":[2,2,15],"data":[0.0]}"#;
    assert!(matches!(load_edges::<f64>(short), Err(Error::Schema(_))));
    let version = r#"{"format":9,"shape":[0,0,15],"data":[]}"#;
    assert!(matches!(load_edges::<f64>(version), Err(Error::Schema(_))));
}

#[test]
fn scene_schema_errors() {
    let unknown = r#"{"classes":[{"name":"a","slots":1}],"objects":[{"class":"sofa","slot":0,
        "size":[1,1,1],"rotation":[0,0,0],"translation":[0,0,0],"shape_code":[0,0,0],"indicator":1}]}"#;
    assert!(matches!(load_scene::<f64>(unknown), Err(Error::UnknownClass(_))));
    let count = r#"{"classes":[{"name":"a","slots":2}],"objects":[]}"#;
    assert!(matches!(load_scene::<f64>(count), Err(Error::Schema(_))));
    let extra = r#"{"classes":[],"objects":[],"colour":1}"#;
    assert!(load_scene::<f64>(extra).is_err());
    let bad_indicator = r#"{"classes":[{"name":"a","slots":1}],"objects":[{"class":"a","slot":0,
        "size":[1,1,1],"rotation":[0,0,0],"translation":[0,0,0],"shape_code":[0,0,0],"indicator":2}]}"#;
    assert!(load_scene::<f64>(bad_indicator).is_err());
}

#[test]
fn fitted_priors_round_trip() {
    let scenes = generate::<f64>(&GrammarConfig::bedroom(), 60, 3).unwrap();
    let p = fit_priors(&scenes, &PriorFitConfig::default()).unwrap();
    let text = save_priors(&p).unwrap();
    assert_eq!(load_priors::<f64>(&text).unwrap(), p);
    assert_eq!(save_priors(&load_priors::<f64>(&text).unwrap()).unwrap(), text);
}

#[test]
fn hyper_round_trips_with_and_without_embedded_prior() {
    let mut r = common::rng(4);
    let t = common::small_table();
    for form in [RobustForm::Distance, RobustForm::Quadratic] {
        let h = common::random_hyper(&mut r, &t, form, true);
        let embedded = save_hyper(&h, true).unwrap();
        assert_eq!(load_hyper::<f64>(&embedded, None).unwrap(), h);
        let bare = save_hyper(&h, false).unwrap();
        assert!(matches!(load_hyper::<f64>(&bare, None), Err(Error::Schema(_))));
        assert_eq!(load_hyper(&bare, Some(h.prior.clone())).unwrap(), h);
    }
}

#[test]
fn hyper_with_foreign_prior_is_rejected() {
    let mut r = common::rng(5);
    let h = common::random_hyper(&mut r, &common::small_table(), RobustForm::Distance, false);
    let other = scenesync::priors::PriorModel::<f64>::flat(scenesync::scene::ClassTable::new([("x", 1)]).unwrap());
    assert!(load_hyper(&save_hyper(&h, false).unwrap(), Some(other)).is_err());
}

#[test]
fn single_precision_documents_load() {
    let s = generate::<f64>(&GrammarConfig::bedroom(), 1, 6).unwrap().remove(0);
    let text = save_scene(&s).unwrap();
    assert_eq!(load_scene::<f32>(&text).unwrap(), s.cast::<f32>());
    let s32 = s.cast::<f32>();
    assert_eq!(load_scene::<f32>(&save_scene(&s32).unwrap()).unwrap(), s32);
}

#[test]
fn atomic_write_replaces_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.json");
    write_atomic(&p, "one").unwrap();
    write_atomic(&p, "two").unwrap();
    assert_eq!(read_text(&p).unwrap(), "two");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    assert!(matches!(load_scene_file::<f64>(&dir.path().join("missing.json")), Err(Error::Io(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_scenes_round_trip_bitwise(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let s = common::random_scene(&mut r, &common::small_table());
        let back = load_scene::<f64>(&save_scene(&s).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn any_finite_double_survives(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let back: Vec<f64> = from_json(&to_json(&vec![x]).unwrap()).unwrap();
        prop_assert_eq!(back[0].to_bits(), x.to_bits());
    }

    #[test]
    fn random_hyper_round_trips(seed in any::<u64>(), gating in any::<bool>()) {
        let mut r = common::rng(seed);
        let h = common::random_hyper(&mut r, &common::small_table(), RobustForm::Distance, gating);
        prop_assert_eq!(load_hyper::<f64>(&save_hyper(&h, true).unwrap(), None).unwrap(), h);
    }
}
