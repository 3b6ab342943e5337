//! Trainable parameters of each part for the full and small presets.

use pscc::model::{InitPolicy, ModelConfig, ParamBudget, PsccNet};

fn main() -> pscc::Result<()> {
    for (name, cfg) in [("w18", ModelConfig::w18()), ("micro", ModelConfig::micro())] {
        let (_, store, _) = PsccNet::init::<f32>(&cfg, &InitPolicy::default())?;
        let b = ParamBudget::of(&store);
        println!(
            "{name:<6} top-down {:>9}  head {:>8}  localization {:>8}  bottom-up {:>8}",
            b.top_down,
            b.head,
            b.localization,
            b.bottom_up()
        );
    }
    Ok(())
}
