use std::path::Path;

use uses_core::dsp::{read_wav, write_wav, AudioBuffer, WavFormat};
use uses_core::model::{load_checkpoint, MemoryMode, UsesModel};
use uses_core::{Result, UsesError};

pub fn load_model(checkpoint: &Path) -> Result<UsesModel<f32>> {
    load_checkpoint(checkpoint, None)
}

fn check_finite(audio: &AudioBuffer) -> Result<()> {
    if let Some(i) = audio.data().iter().position(|v| !v.is_finite()) {
        return Err(UsesError::NonFinite {
            node: "output".into(),
            op: "enhance".into(),
            detail: format!("sample {i} is not finite"),
        });
    }
    Ok(())
}

pub fn enhance(input: &Path, output: &Path, checkpoint: &Path, mode: MemoryMode, format: WavFormat) -> Result<()> {
    let model = load_model(checkpoint)?;
    if model.config().num_outputs != 1 {
        return Err(UsesError::Config(format!(
            "checkpoint has {} outputs; use `uses separate`",
            model.config().num_outputs
        )));
    }
    let audio = read_wav(input)?;
    let out = model.enhance(&audio, mode)?;
    check_finite(&out)?;
    write_wav(output, &out, format)?;
    log::info!(
        "{}: {} channel(s), {} samples at {} Hz",
        output.display(),
        audio.channels(),
        out.len(),
        out.sample_rate()
    );
    Ok(())
}

pub fn separate(input: &Path, output: &Path, checkpoint: &Path, format: WavFormat) -> Result<()> {
    let model = load_model(checkpoint)?;
    if model.config().num_outputs < 2 {
        return Err(UsesError::Config("checkpoint has a single output; use `uses enhance`".into()));
    }
    let audio = read_wav(input)?;
    let out = model.enhance(&audio, MemoryMode::Denoise)?;
    check_finite(&out)?;
    write_wav(output, &out, format)?;
    log::info!("{}: {} sources", output.display(), out.channels());
    Ok(())
}
