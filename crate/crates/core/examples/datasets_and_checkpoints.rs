//! Dataset ingestion and the checkpoint format.

use relureduce::data::{parse_cifar10, SyntheticBlobs};
use relureduce::engine::{checkpoint_bytes, checkpoint_from_bytes, Model, MAGIC};
use relureduce::netir::{build_architecture, ArchitectureSpec, Family, Scale};

fn main() -> relureduce::Result<()> {
    let blobs = SyntheticBlobs::new(4, 8, 7).generate(512, 0)?;
    println!("synthetic blobs: {} samples, sha256 {}", blobs.len(), blobs.checksum());

    // two hand-made CIFAR-10 records: label byte plus 3072 pixel bytes each
    let mut raw = Vec::new();
    for label in [3u8, 9] {
        raw.push(label);
        raw.extend((0..3072).map(|i| (i % 256) as u8));
    }
    let cifar = parse_cifar10(&raw)?;
    println!("cifar records: {} labels {:?}", cifar.len(), cifar.labels);
    println!("one byte short: {}", parse_cifar10(&raw[..raw.len() - 1]).unwrap_err());

    let g = build_architecture(&ArchitectureSpec::new(Family::ResNet9, 16, 10).with_alpha(Scale::new(1, 8)?))?;
    let model = Model::<f32>::init(g, 5)?;
    let bytes = checkpoint_bytes(&model)?;
    let again = checkpoint_bytes(&checkpoint_from_bytes(&bytes)?)?;
    println!(
        "checkpoint: {} bytes, magic {:?}, stable round trip: {}",
        bytes.len(),
        std::str::from_utf8(MAGIC).unwrap_or("?"),
        bytes == again
    );
    Ok(())
}
