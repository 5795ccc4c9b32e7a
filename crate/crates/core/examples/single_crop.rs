//! Builds a triplet from one image: skeleton as content, patch-shuffled crop
//! as style, the crop itself as ground truth. Writes PNGs to a temp dir.

use aprnet::data::{make_triplet, save_png, synthesize, SynthConfig, TripletConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aprnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let source = synthesize(&SynthConfig::new(128, 512), &mut rng);
    let (t, record) = make_triplet(&source, &TripletConfig::default(), &mut rng)?;
    let swapped = record.partners.iter().filter(|p| p.is_some()).count();
    println!(
        "{}x{} patches, {} rotated, {} swapped",
        record.rows,
        record.cols,
        record.rotations.iter().filter(|&&r| r != 0).count(),
        swapped
    );
    let ink = t.content.data().iter().filter(|&&v| v > 0.5).count();
    println!("skeleton covers {ink} pixels");

    let dir = std::env::temp_dir().join("aprnet_single_crop");
    std::fs::create_dir_all(&dir).map_err(|e| aprnet::Error::Io { path: dir.clone(), source: e })?;
    for (name, img) in [("content", &t.content), ("style", &t.style), ("gt", &t.ground_truth)] {
        save_png(&dir.join(format!("{name}.png")), img)?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}
