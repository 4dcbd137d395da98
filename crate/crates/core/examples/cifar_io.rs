//! Writes a dataset in the CIFAR-10 binary record layout (1 label byte and
//! 3072 pixel bytes per image) and reads it back.

use egdarts::data::{encode_cifar, load_cifar_files, synth_dataset, CifarVariant, Normalization};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_dataset(3, 10, 4, 32)?;
    let bytes = encode_cifar(&data, CifarVariant::C10)?;
    let dir = std::env::temp_dir().join("egdarts_cifar_io");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("data_batch_1.bin");
    std::fs::write(&path, &bytes)?;

    let mut back = load_cifar_files(&[path], CifarVariant::C10, 32)?;
    println!("{} records of {} bytes, labels {:?}", back.len(), CifarVariant::C10.record_len(32), back.labels());
    let max_err = data
        .pixels()
        .iter()
        .zip(back.pixels())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("max pixel error after 8-bit round trip: {max_err:.4}");
    let norm = Normalization::from_data(&back);
    norm.apply(&mut back);
    println!("per-channel mean {:.3?}, std {:.3?}", norm.mean, norm.std);
    Ok(())
}
