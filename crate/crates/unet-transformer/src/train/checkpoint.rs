//! Checkpoints: a plain-text manifest, the model config, vocabularies, and
//! one little-endian binary file per named tensor (32-bit reals behind a
//! shape header). Loading a checkpoint rebuilds the model and reproduces
//! forward outputs bit-identically at the stored precision.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::data::Vocab;
use crate::model::{build_model, ModelConfig, Seq2SeqModel};
use crate::nn::params::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::fnv1a64;

use super::adam::Adam;
use super::TrainError;

const MANIFEST_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TrainError + '_ {
    move |e| TrainError::Io(path.display().to_string(), e.to_string())
}

fn write_tensor<F: Scalar>(path: &Path, t: &Tensor<F>) -> Result<(), TrainError> {
    let mut buf = Vec::with_capacity(4 + 4 * t.ndim() + 4 * t.len());
    buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &e in t.shape() {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

fn read_tensor<F: Scalar>(path: &Path) -> Result<Tensor<F>, TrainError> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(io_err(path))?;
    let bad = || TrainError::Checkpoint(format!("malformed tensor file {}", path.display()));
    let take4 = |at: usize| -> Result<[u8; 4], TrainError> {
        bytes.get(at..at + 4).and_then(|s| s.try_into().ok()).ok_or_else(bad)
    };
    let ndim = u32::from_le_bytes(take4(0)?) as usize;
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        shape.push(u32::from_le_bytes(take4(4 + 4 * i)?) as usize);
    }
    let n: usize = shape.iter().product();
    let data_at = 4 + 4 * ndim;
    if bytes.len() != data_at + 4 * n {
        return Err(bad());
    }
    let data = (0..n)
        .map(|i| {
            take4(data_at + 4 * i).map(|b| F::of(f32::from_le_bytes(b) as f64))
        })
        .collect::<Result<Vec<F>, TrainError>>()?;
    Ok(Tensor::new(shape, data))
}

/// Everything a resumed or evaluated run needs from disk.
pub struct LoadedCheckpoint<F: Scalar> {
    pub model: Seq2SeqModel<F>,
    pub optimizer_moments: Option<(Vec<Tensor<F>>, Vec<Tensor<F>>, u64)>,
    pub rng_state: (u64, u128),
    pub step: u64,
    pub best_val_ce: f64,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint<F: Scalar>(
    dir: &Path,
    cfg: &ModelConfig,
    params: &ParamStore<F>,
    optimizer: Option<&Adam<F>>,
    rng_state: (u64, u128),
    step: u64,
    best_val_ce: f64,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> Result<(), TrainError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config_toml =
        toml::to_string(cfg).map_err(|e| TrainError::Checkpoint(format!("config: {e}")))?;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, &config_toml).map_err(io_err(&config_path))?;
    src_vocab.save(&dir.join("vocab.src.txt")).map_err(data_err)?;
    tgt_vocab.save(&dir.join("vocab.tgt.txt")).map_err(data_err)?;

    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir).map_err(io_err(&params_dir))?;
    let mut manifest = String::new();
    manifest.push_str(&format!("version={MANIFEST_VERSION}\n"));
    manifest.push_str(&format!("step={step}\n"));
    manifest.push_str(&format!("best_val_ce={best_val_ce}\n"));
    manifest.push_str(&format!("config_hash={:016x}\n", fnv1a64(config_toml.as_bytes())));
    manifest.push_str(&format!("rng_seed={}\n", rng_state.0));
    manifest.push_str(&format!("rng_word_pos={}\n", rng_state.1));
    manifest.push_str(&format!(
        "optimizer_step={}\n",
        optimizer.map(|a| a.step_count).unwrap_or(0)
    ));
    manifest.push_str(&format!("has_optimizer={}\n", u8::from(optimizer.is_some())));
    for (idx, (name, tensor)) in params.iter().enumerate() {
        write_tensor(&params_dir.join(format!("{idx}.bin")), tensor)?;
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("tensor {idx} {name} {}\n", dims.join(" ")));
    }
    if let Some(adam) = optimizer {
        let (m, v) = adam.moments();
        for (sub, tensors) in [("adam_m", m), ("adam_v", v)] {
            let sub_dir = dir.join(sub);
            fs::create_dir_all(&sub_dir).map_err(io_err(&sub_dir))?;
            for (idx, tensor) in tensors.iter().enumerate() {
                write_tensor(&sub_dir.join(format!("{idx}.bin")), tensor)?;
            }
        }
    }
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))
}

fn data_err(e: crate::data::DataError) -> TrainError {
    TrainError::Checkpoint(e.to_string())
}

fn manifest_field<'a>(manifest: &'a str, key: &str) -> Result<&'a str, TrainError> {
    manifest
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .ok_or_else(|| TrainError::Checkpoint(format!("manifest missing {key}")))
}

pub fn load_checkpoint<F: Scalar>(dir: &Path) -> Result<LoadedCheckpoint<F>, TrainError> {
    let manifest_path = dir.join("manifest.txt");
    let manifest = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let parse = |k: &str| -> Result<u64, TrainError> {
        manifest_field(&manifest, k)?
            .parse()
            .map_err(|_| TrainError::Checkpoint(format!("bad {k} in manifest")))
    };
    let step = parse("step")?;
    let best_val_ce: f64 = manifest_field(&manifest, "best_val_ce")?
        .parse()
        .map_err(|_| TrainError::Checkpoint("bad best_val_ce".into()))?;
    let rng_seed = parse("rng_seed")?;
    let rng_word_pos: u128 = manifest_field(&manifest, "rng_word_pos")?
        .parse()
        .map_err(|_| TrainError::Checkpoint("bad rng_word_pos".into()))?;
    let optimizer_step = parse("optimizer_step")?;
    let has_optimizer = parse("has_optimizer")? == 1;

    let config_path = dir.join("config.toml");
    let config_text = fs::read_to_string(&config_path).map_err(io_err(&config_path))?;
    let cfg: ModelConfig = toml::from_str(&config_text)
        .map_err(|e| TrainError::Checkpoint(format!("config: {e}")))?;

    // Rebuild the skeleton, then overwrite every tensor from disk.
    let mut scratch_rng = Rng::new(0);
    let mut model: Seq2SeqModel<F> = build_model(cfg, &mut scratch_rng)
        .map_err(|e| TrainError::Checkpoint(format!("rebuild: {e}")))?;
    let params_dir = dir.join("params");
    let mut seen = 0usize;
    for line in manifest.lines() {
        let Some(rest) = line.strip_prefix("tensor ") else {
            continue;
        };
        let mut it = rest.split_whitespace();
        let idx: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TrainError::Checkpoint(format!("bad tensor line {line:?}")))?;
        let name = it
            .next()
            .ok_or_else(|| TrainError::Checkpoint(format!("bad tensor line {line:?}")))?;
        let id = model.params.id_of(name).ok_or_else(|| {
            TrainError::Checkpoint(format!("checkpoint tensor {name:?} unknown to this config"))
        })?;
        let tensor = read_tensor(&params_dir.join(format!("{idx}.bin")))?;
        if tensor.shape() != model.params.value(id).shape() {
            return Err(TrainError::Checkpoint(format!(
                "tensor {name:?} shape {:?} does not match the rebuilt model {:?}",
                tensor.shape(),
                model.params.value(id).shape()
            )));
        }
        model.params.set(id, tensor);
        seen += 1;
    }
    if seen != model.params.len() {
        return Err(TrainError::Checkpoint(format!(
            "checkpoint holds {seen} tensors, model needs {}",
            model.params.len()
        )));
    }
    let optimizer_moments = if has_optimizer {
        let mut m = Vec::with_capacity(model.params.len());
        let mut v = Vec::with_capacity(model.params.len());
        for idx in 0..model.params.len() {
            m.push(read_tensor(&dir.join("adam_m").join(format!("{idx}.bin")))?);
            v.push(read_tensor(&dir.join("adam_v").join(format!("{idx}.bin")))?);
        }
        Some((m, v, optimizer_step))
    } else {
        None
    };
    let src_vocab = Vocab::load(&dir.join("vocab.src.txt")).map_err(data_err)?;
    let tgt_vocab = Vocab::load(&dir.join("vocab.tgt.txt")).map_err(data_err)?;
    Ok(LoadedCheckpoint {
        model,
        optimizer_moments,
        rng_state: (rng_seed, rng_word_pos),
        step,
        best_val_ce,
        src_vocab,
        tgt_vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PadMask;
    use crate::model::Variant;
    use crate::nn::blocks::DropoutCtx;
    use crate::tensor::Tape;

    #[test]
    fn save_load_round_trips_forward_bits() {
        let cfg = ModelConfig::tiny(Variant::Unet, 8, 16, 16);
        let mut rng = Rng::new(9);
        let model: Seq2SeqModel<f32> = build_model(cfg.clone(), &mut rng).unwrap();
        let vocab = Vocab::from_content_tokens((0..12).map(|i| format!("t{i}")).collect());

        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("best");
        save_checkpoint(
            &ckpt,
            &cfg,
            &model.params,
            None,
            (9, 0),
            17,
            1.25,
            &vocab,
            &vocab,
        )
        .unwrap();
        let loaded: LoadedCheckpoint<f32> = load_checkpoint(&ckpt).unwrap();
        assert_eq!(loaded.step, 17);
        assert_eq!(loaded.src_vocab, vocab);

        let run = |m: &Seq2SeqModel<f32>| -> Vec<u32> {
            let mut tape = Tape::for_inference();
            let mask = PadMask::all_valid(5);
            let enc = m.encode(&mut tape, &[4, 5, 6, 7, 8], &[0; 5], &mask, &mut DropoutCtx::off());
            let tmask = PadMask::all_valid(2);
            let out = m.decode_logits(&mut tape, &enc, &[2, 4], &tmask, &mut DropoutCtx::off());
            tape.value(out).data().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(run(&model), run(&loaded.model), "forward outputs changed");
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = match load_checkpoint::<f32>(dir.path().join("missing").as_path()) {
            Err(e) => e,
            Ok(_) => panic!("loading a missing checkpoint succeeded"),
        };
        assert!(err.to_string().contains("missing"));
    }
}
