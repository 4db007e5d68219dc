//! Generates one synthetic vessel phantom and writes it as a container and a NIfTI pair.
//!
//! cargo run --example phantom -- [out_dir] [seed]

use std::path::PathBuf;

use neurovasc::data::container::save_volume;
use neurovasc::data::nifti::save_nifti_pair;
use neurovasc::data::{class_fractions, generate_phantom, PhantomSpec};

fn main() -> neurovasc::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "phantom_out".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    std::fs::create_dir_all(&out).map_err(|source| neurovasc::Error::Io { path: out.clone(), source })?;

    let spec = PhantomSpec::default().with_seed(seed);
    let sample = generate_phantom(&spec)?;
    let fr = class_fractions([&sample])?;
    println!("shape {:?}, spec hash {}", sample.shape, &spec.hash()[..12]);
    println!("background {:.4}  vessel {:.4}  lesion {:.4}", fr[0], fr[1], fr[2]);

    save_volume(&out.join("phantom.json"), &sample)?;
    save_nifti_pair(&sample, &out.join("phantom_image.nii.gz"), &out.join("phantom_labels.nii.gz"))?;
    println!("wrote {}", out.display());
    Ok(())
}
