//! Intensity normalization, crop/pad, flips and background noise on a phantom.
//!
//! cargo run --example preprocess

use neurovasc::data::{
    augment_background_noise, augment_flip, flip_h, generate_phantom, normalize_intensity, resize_crop_pad, to_unit_range,
    PhantomSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn range(v: &[f32]) -> (f32, f32) {
    v.iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)))
}

fn main() -> neurovasc::Result<()> {
    let s = generate_phantom(&PhantomSpec::default().with_seed(3))?;
    println!("raw range {:?}", range(&s.image));
    let normalized = normalize_intensity(&s.image);
    println!("normalized range {:?}", range(&normalized));

    let cropped = resize_crop_pad(&s, [48, 80, 32]);
    println!("crop/pad {:?} -> {:?}", s.shape, cropped.shape);

    let flipped = flip_h(&s);
    assert_eq!(flip_h(&flipped).labels, s.labels);
    println!("horizontal flip is an involution");

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let unit = to_unit_range(s);
    let aug = augment_background_noise(&augment_flip(&unit, 0.3, &mut rng), 0.01, &mut rng);
    println!("augmented unit-range image {:?}", range(&aug.image));
    Ok(())
}
