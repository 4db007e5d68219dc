mod common;

use common::{assert_valid, read_json, sample_from};
use neurovasc::data::container::{load_volume, save_volume};
use neurovasc::data::nifti::{load_nifti_pair, read_nifti, save_nifti_pair, write_nifti, Voxels};
use neurovasc::data::preprocess::normalize_sample;
use neurovasc::data::{
    augment_background_noise, augment_flip, class_fractions, compute_class_fractions, flip_h, generate_phantom, normalize_intensity,
    resize_crop_pad, split_counts, to_unit_range, DatasetManifest, PhantomSpec, Split, VESSEL,
};
use neurovasc::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn phantom_is_deterministic_per_seed() {
    let spec = PhantomSpec::default().with_seed(11);
    let a = generate_phantom(&spec).unwrap();
    let b = generate_phantom(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.image.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.image.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_ne!(a, generate_phantom(&spec.clone().with_seed(12)).unwrap());
    assert_eq!(a.meta.seed, Some(11));
    assert_eq!(a.meta.spec_hash.as_deref(), Some(spec.hash().as_str()));
}

#[test]
fn degenerate_phantom_spec_is_rejected() {
    let spec = PhantomSpec { n_vessels: 0, n_lesions: 0, ..Default::default() };
    assert!(matches!(generate_phantom(&spec), Err(Error::InvalidSpec(_))));
    let small = PhantomSpec { grid_shape: [8, 64, 64], ..Default::default() };
    assert!(matches!(generate_phantom(&small), Err(Error::InvalidSpec(_))));
    let thin = PhantomSpec { radius_range: (0.5, 2.0), ..Default::default() };
    assert!(matches!(generate_phantom(&thin), Err(Error::InvalidSpec(_))));
}

#[test]
fn vessel_fraction_stays_in_band_over_twenty_seeds() {
    let spec = PhantomSpec { grid_shape: [64, 64, 32], n_vessels: 6, radius_range: (1.0, 3.0), ..Default::default() };
    for seed in 0..20 {
        let s = generate_phantom(&spec.clone().with_seed(seed)).unwrap();
        let f = s.label_counts()[VESSEL as usize] as f64 / s.voxels() as f64;
        assert!((0.002..=0.08).contains(&f), "seed {seed}: vessel fraction {f}");
        assert!(s.labels.iter().all(|&l| l <= 2));
        assert_eq!(s.image.len(), s.labels.len());
    }
}

#[test]
fn phantom_vessels_are_brighter_than_parenchyma() {
    let s = generate_phantom(&PhantomSpec::default().with_seed(3)).unwrap();
    let mean = |class: u8| {
        let v: Vec<f64> = s.image.iter().zip(&s.labels).filter(|(_, &l)| l == class).map(|(&x, _)| x as f64).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(1) > mean(0) + 30.0, "vessel {} vs background {}", mean(1), mean(0));
}

#[test]
fn normalize_maps_midpoint_and_constant() {
    let out = normalize_intensity(&[10.0, 15.0, 20.0]);
    assert_eq!(out, vec![0.0, 127.5, 255.0]);
    assert_eq!(normalize_intensity(&[4.0; 7]), vec![0.0; 7]);
    let s = normalize_sample(sample_from([4, 4, 4], |_, _, _| 0));
    assert_eq!(s.meta.normalization.as_deref(), Some("per-volume"));
}

#[test]
fn crop_keeps_the_centered_range() {
    let s = sample_from([200, 4, 4], |z, _, _| (z % 3) as u8);
    let out = resize_crop_pad(&s, [192, 4, 4]);
    assert_eq!(out.shape, [192, 4, 4]);
    for z in 0..192 {
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.image[out.index(z, y, x)], s.image[s.index(z + 4, y, x)]);
                assert_eq!(out.labels[out.index(z, y, x)], s.labels[s.index(z + 4, y, x)]);
            }
        }
    }
    assert_eq!(out.meta.resized_from, Some([200, 4, 4]));
    let same = sample_from([192, 4, 4], |_, _, _| 1);
    assert_eq!(resize_crop_pad(&same, [192, 4, 4]), same);
}

#[test]
fn pad_uses_zero_labels_and_image() {
    let s = sample_from([4, 4, 4], |_, _, _| 2);
    let out = resize_crop_pad(&s, [8, 4, 4]);
    assert!(out.labels[..2 * 16].iter().all(|&l| l == 0));
    assert!(out.image[..2 * 16].iter().all(|&v| v == 0.0));
    assert_eq!(out.labels[2 * 16], 2);
    assert_eq!(resize_crop_pad(&out, [4, 4, 4]).image, s.image);
}

#[test]
fn flip_with_zero_probability_is_identity() {
    let s = sample_from([4, 5, 6], |_, y, _| (y == 1) as u8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        assert_eq!(augment_flip(&s, 0.0, &mut rng), s);
    }
    let flipped = augment_flip(&s, 1.0, &mut rng);
    assert_eq!(flipped.labels[flipped.index(0, 3, 0)], 1);
    assert!(flipped.meta.flipped);
}

#[test]
fn noise_std_matches_on_background() {
    let s = to_unit_range(sample_from([64, 64, 64], |z, _, _| (z < 8) as u8));
    let out = augment_background_noise(&s, 0.01, &mut ChaCha8Rng::seed_from_u64(9));
    let diffs: Vec<f64> = out.image.iter().zip(&s.image).zip(&s.labels).filter(|(_, &l)| l == 0).map(|((a, b), _)| (a - b) as f64).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
    assert!((std - 0.01).abs() <= 0.001, "std {std}");
    assert_eq!(augment_background_noise(&s, 0.0, &mut ChaCha8Rng::seed_from_u64(9)), s);
}

#[test]
fn class_fraction_examples() {
    let bg = sample_from([4, 4, 4], |_, _, _| 0);
    assert_eq!(class_fractions([&bg]).unwrap(), vec![1.0, 0.0, 0.0]);
    let eight = sample_from([4, 4, 4], |z, y, x| (z < 2 && y < 2 && x < 2) as u8);
    assert_eq!(class_fractions([&eight]).unwrap()[1], 0.125);
    let ratio: f64 = 0.9810 / 0.0140;
    assert!((ratio - 70.07).abs() < 5e-3, "{ratio}");
    assert!(matches!(class_fractions(std::iter::empty()), Err(Error::EmptyDataset(_))));
}

#[test]
fn container_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_phantom(&PhantomSpec { grid_shape: [16, 20, 24], ..Default::default() }.with_seed(5)).unwrap();
    let path = dir.path().join("v.json");
    save_volume(&path, &s).unwrap();
    let back = load_volume(&path).unwrap();
    assert_eq!(back, s);
    assert_valid("volume_sidecar", &read_json(&path));
}

#[test]
fn container_reports_missing_or_corrupt_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let s = sample_from([4, 4, 4], |_, _, _| 1);
    let path = dir.path().join("v.json");
    save_volume(&path, &s).unwrap();
    std::fs::remove_file(dir.path().join("v.labels.u8")).unwrap();
    assert!(load_volume(&path).is_err());

    save_volume(&path, &s).unwrap();
    let mut doc = read_json(&path);
    doc["arrays"].as_object_mut().unwrap().remove("labels");
    std::fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
    let err = load_volume(&path).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
    assert!(err.to_string().contains("labels"), "{err}");

    save_volume(&path, &s).unwrap();
    std::fs::write(dir.path().join("v.image.f32"), [0u8; 12]).unwrap();
    assert!(matches!(load_volume(&path), Err(Error::Format { .. })));
}

#[test]
fn nifti_round_trip_preserves_voxels() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_phantom(&PhantomSpec { grid_shape: [16, 18, 20], ..Default::default() }.with_seed(2)).unwrap();
    let (img, lab) = (dir.path().join("i.nii.gz"), dir.path().join("l.nii.gz"));
    save_nifti_pair(&s, &img, &lab).unwrap();
    let back = load_nifti_pair(&img, &lab).unwrap();
    assert_eq!(back.shape, s.shape);
    assert_eq!(back.image, s.image);
    assert_eq!(back.labels, s.labels);

    let p = dir.path().join("u8.nii.gz");
    write_nifti(&p, [2, 3, 4], &Voxels::U8((0..24).collect())).unwrap();
    let v = read_nifti(&p).unwrap();
    assert_eq!(v.shape, [2, 3, 4]);
    assert!(matches!(v.voxels, Voxels::U8(ref x) if x == &(0..24).collect::<Vec<u8>>()));
}

#[test]
fn manifest_split_and_fractions() {
    assert_eq!(split_counts(137, [100.0, 10.0, 27.0]).unwrap(), [100, 10, 27]);
    let dir = tempfile::tempdir().unwrap();
    let mut names = Vec::new();
    for i in 0..4 {
        let s = sample_from([4, 4, 4], |z, _, _| (z == 0 && i < 3) as u8);
        let name = format!("s{i}.json");
        save_volume(&dir.path().join(&name), &s).unwrap();
        names.push(name);
    }
    let m = DatasetManifest::with_split(names, [2.0, 1.0, 1.0]).unwrap();
    assert_eq!(m.paths(Split::Train), vec!["s0.json", "s1.json"]);
    let f = compute_class_fractions(&m, dir.path()).unwrap();
    assert_eq!(f, vec![0.75, 0.25, 0.0]);
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let path = dir.path().join("manifest.json");
    m.save(&path).unwrap();
    assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    assert_valid("dataset_manifest", &read_json(&path));

    let empty = DatasetManifest::with_split(vec!["s0.json".into()], [0.0, 1.0, 0.0]).unwrap();
    assert!(matches!(compute_class_fractions(&empty, dir.path()), Err(Error::EmptyDataset(_))));
}

fn arb_image() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1e4f32..1e4, 1..200)
}

proptest! {
    #[test]
    fn normalize_is_idempotent_and_bounded(image in arb_image()) {
        let once = normalize_intensity(&image);
        prop_assert!(once.iter().all(|v| (0.0..=255.0).contains(v)));
        prop_assert_eq!(normalize_intensity(&once), once.clone());
        let (lo, hi) = image.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        if hi > lo {
            let at = |x: f32| once[image.iter().position(|&v| v == x).unwrap()];
            prop_assert_eq!(at(lo), 0.0);
            prop_assert_eq!(at(hi), 255.0);
        }
    }

    #[test]
    fn resize_always_hits_the_target(d in 1usize..12, h in 1usize..12, w in 1usize..12, td in 1usize..12, th in 1usize..12, tw in 1usize..12) {
        let s = sample_from([d, h, w], |z, y, x| ((z + y + x) % 3) as u8);
        let out = resize_crop_pad(&s, [td, th, tw]);
        prop_assert_eq!(out.shape, [td, th, tw]);
        prop_assert_eq!(out.image.len(), td * th * tw);
        out.validate().unwrap();
    }

    #[test]
    fn flip_is_an_involution_preserving_counts(d in 1usize..6, h in 1usize..9, w in 1usize..6, seed in any::<u64>()) {
        let s = sample_from([d, h, w], |z, y, x| ((z * 7 + y * 3 + x + seed as usize) % 3) as u8);
        let once = flip_h(&s);
        prop_assert_eq!(once.label_counts(), s.label_counts());
        let twice = flip_h(&once);
        prop_assert_eq!(twice.image, s.image);
        prop_assert_eq!(twice.labels, s.labels);
    }

    #[test]
    fn noise_never_touches_foreground(seed in any::<u64>(), std in 0.0f64..0.5) {
        let s = to_unit_range(sample_from([6, 6, 6], |z, y, x| ((z * y + x) % 3) as u8));
        let out = augment_background_noise(&s, std, &mut ChaCha8Rng::seed_from_u64(seed));
        for ((a, b), &l) in out.image.iter().zip(&s.image).zip(&s.labels) {
            if l != 0 {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        prop_assert_eq!(out.labels, s.labels);
    }

    #[test]
    fn phantom_generation_is_pure(seed in 0u64..1000) {
        let spec = PhantomSpec { grid_shape: [16, 16, 16], n_vessels: 2, ..Default::default() }.with_seed(seed);
        prop_assert_eq!(generate_phantom(&spec).unwrap(), generate_phantom(&spec).unwrap());
    }
}
