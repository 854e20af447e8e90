#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use alphamerge::tensorstore::{write_checkpoint, DType, EncodedTensor, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

pub fn alphamerge<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_alphamerge"))
        .args(args)
        .env_remove("ALPHAMERGE_CONFIG")
        .env_remove("ALPHAMERGE_ENDPOINT")
        .output()
        .expect("spawn alphamerge")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn random_tensor(rng: &mut StdRng, shape: Vec<usize>, scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn write_ckpt(path: &Path, tensors: &[EncodedTensor], metadata: &BTreeMap<String, String>) {
    let mut bytes = Vec::new();
    write_checkpoint(tensors, metadata, &mut bytes).unwrap();
    std::fs::write(path, bytes).unwrap();
}

pub struct ModelFiles {
    pub base: PathBuf,
    pub fine_tuned: PathBuf,
    pub adapter: PathBuf,
}

/// Base, fine-tune and a LoRA adapter over `layers` blocks of `dim x dim`
/// projections plus an untargeted norm vector per block.
pub fn model_files(dir: &Path, seed: u64, layers: usize, dim: usize) -> ModelFiles {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut base = Vec::new();
    let mut ft = Vec::new();
    let mut adapter = Vec::new();
    for l in 0..layers {
        let dtype = [DType::F32, DType::BF16, DType::F16][l % 3];
        for proj in ["q_proj", "v_proj"] {
            let name = format!("model.layers.{l}.self_attn.{proj}.weight");
            base.push(EncodedTensor::encode(&name, &random_tensor(&mut rng, vec![dim, dim], 1.0), dtype).unwrap());
            ft.push(EncodedTensor::encode(&name, &random_tensor(&mut rng, vec![dim, dim], 1.0), dtype).unwrap());
            let module = format!("base_model.model.model.layers.{l}.self_attn.{proj}");
            let a = random_tensor(&mut rng, vec![4, dim], 0.5);
            let b = random_tensor(&mut rng, vec![dim, 4], 0.5);
            adapter.push(EncodedTensor::encode(format!("{module}.lora_A.weight"), &a, DType::F32).unwrap());
            adapter.push(EncodedTensor::encode(format!("{module}.lora_B.weight"), &b, DType::F32).unwrap());
        }
        let norm = format!("model.layers.{l}.norm.weight");
        let v = random_tensor(&mut rng, vec![dim], 1.0);
        base.push(EncodedTensor::encode(&norm, &v, DType::F32).unwrap());
        ft.push(EncodedTensor::encode(&norm, &random_tensor(&mut rng, vec![dim], 1.0), DType::F32).unwrap());
    }
    let meta = BTreeMap::from([("format".to_string(), "pt".to_string())]);
    let files = ModelFiles {
        base: dir.join("base.safetensors"),
        fine_tuned: dir.join("ft.safetensors"),
        adapter: dir.join("adapter_model.safetensors"),
    };
    write_ckpt(&files.base, &base, &meta);
    write_ckpt(&files.fine_tuned, &ft, &meta);
    write_ckpt(&files.adapter, &adapter, &BTreeMap::new());
    std::fs::write(dir.join("adapter_config.json"), r#"{"r": 4, "lora_alpha": 8}"#).unwrap();
    files
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).unwrap());
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap()
}

pub fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| header.iter().map(str::to_string).zip(rec.unwrap().iter().map(str::to_string)).collect())
        .collect()
}
