//! Feature-bank shapes of both encoders for a 128x384 input pair.

use aprnet::autodiff::Tape;
use aprnet::encoders::{Encoder, EncoderKind};
use aprnet::musf::build_style_cat;
use aprnet::params::ParamStore;
use aprnet::pixamp::build_sam_inputs;
use aprnet::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aprnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let content_enc = Encoder::new(&mut store, &mut rng, "content", EncoderKind::Content);
    let style_enc = Encoder::new(&mut store, &mut rng, "style", EncoderKind::Style);

    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let c = tape.constant(Tensor::zeros(&[128, 384, 1]));
    let s = tape.constant(Tensor::full(&[128, 384, 3], 0.5));
    let cb = content_enc.encode(&mut tape, &p, c)?;
    let sb = style_enc.encode(&mut tape, &p, s)?;
    for (i, (a, b)) in cb.stages.iter().zip(&sb.stages).enumerate() {
        println!("stage {}: content {:?} style {:?}", i + 1, tape.dims(*a), tape.dims(*b));
    }
    if let Some(h) = cb.highway {
        println!("highway {:?}", tape.dims(h));
    }
    let sam = build_sam_inputs(&mut tape, &cb, &sb)?;
    println!("C_sam {:?}  S_sam {:?}", tape.dims(sam.content), tape.dims(sam.style));
    let cat = build_style_cat(&mut tape, &sb)?;
    println!("S_cat {:?}", tape.dims(cat));
    Ok(())
}
