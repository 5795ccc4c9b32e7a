//! Renders one synthetic triplet with every untrained variant and reports
//! the intermediate shapes.

use aprnet::data::{generate, DatagenConfig, Source, TripletConfig};
use aprnet::{RenderConfig, RenderModel, Variant};

fn main() -> aprnet::Result<()> {
    let cfg = DatagenConfig {
        triplet: TripletConfig::with_size(32, 96),
        ..DatagenConfig::default()
    };
    let t = generate(&Source::Synthetic(1), &cfg, 0, 1)?.remove(0).triplet;
    for variant in Variant::ALL {
        let model = RenderModel::<f32>::new(RenderConfig::with_variant(variant), 0)?;
        let out = model.render_detailed(&t.content, &t.style)?;
        println!(
            "{variant:>12}: {} params, half {:?}, full {:?}, {} attention maps",
            model.params.num_values(),
            out.half.dims(),
            out.image.dims(),
            out.attention.len()
        );
    }
    Ok(())
}
