use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::encoders::{Encoder, EncoderSpec};
use crate::error::EncoderError;
use crate::param::{named_tensors, Module, Param, Visitor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const SPEC_KEY: &str = "encoder_spec";

/// A loaded model plus the free-form metadata stored next to it.
pub struct Checkpoint<T> {
    pub encoder: Encoder<T>,
    pub metadata: BTreeMap<String, String>,
}

fn to_bytes<T: Scalar>(t: &Tensor<T>) -> (Dtype, Vec<u8>) {
    if T::DTYPE == "f64" {
        (Dtype::F64, t.data().iter().flat_map(|x| x.f64().to_le_bytes()).collect())
    } else {
        (Dtype::F32, t.data().iter().flat_map(|x| (x.f64() as f32).to_le_bytes()).collect())
    }
}

fn from_bytes<T: Scalar>(dtype: Dtype, bytes: &[u8]) -> Result<Vec<T>, EncoderError> {
    match dtype {
        Dtype::F32 => Ok(bytes
            .chunks_exact(4)
            .map(|c| T::c(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect()),
        Dtype::F64 => Ok(bytes
            .chunks_exact(8)
            .map(|c| T::c(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect()),
        other => Err(EncoderError::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

/// Writes all parameters and buffers as safetensors; the encoder spec and
/// `extra` go into the header metadata.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    encoder: &mut Encoder<T>,
    extra: &BTreeMap<String, String>,
) -> Result<(), EncoderError> {
    let named = named_tensors(encoder);
    let bytes: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = named
        .iter()
        .map(|(name, t)| {
            let (dt, b) = to_bytes(t);
            (name.clone(), dt, t.shape().to_vec(), b)
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, dt, shape, b)| {
            TensorView::new(*dt, shape.clone(), b)
                .map(|v| (name.clone(), v))
                .map_err(|e| EncoderError::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut meta: HashMap<String, String> = extra.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let spec = serde_json::to_string(encoder.spec()).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    meta.insert(SPEC_KEY.to_string(), spec);
    let data = safetensors::serialize(views, Some(meta)).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, data)?;
    Ok(())
}

/// Rebuilds the encoder from the stored spec and restores every tensor.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, EncoderError> {
    let data = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&data).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    let mut metadata: BTreeMap<String, String> =
        header.metadata().clone().unwrap_or_default().into_iter().collect();
    let spec_json = metadata
        .remove(SPEC_KEY)
        .ok_or_else(|| EncoderError::Checkpoint("missing encoder spec".into()))?;
    let spec: EncoderSpec =
        serde_json::from_str(&spec_json).map_err(|e| EncoderError::Checkpoint(format!("bad spec: {e}")))?;
    let mut encoder = Encoder::<T>::build(&spec)?;
    let st = SafeTensors::deserialize(&data).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;

    struct Restore<'a> {
        st: &'a SafeTensors<'a>,
        err: Option<EncoderError>,
        seen: usize,
    }
    impl Restore<'_> {
        fn fill<T: Scalar>(&mut self, name: &str, dst: &mut Tensor<T>) {
            if self.err.is_some() {
                return;
            }
            let res = self
                .st
                .tensor(name)
                .map_err(|e| EncoderError::Checkpoint(format!("{name}: {e}")))
                .and_then(|view| {
                    if view.shape() != dst.shape() {
                        return Err(EncoderError::Checkpoint(format!(
                            "{name}: stored shape {:?}, model shape {:?}",
                            view.shape(),
                            dst.shape()
                        )));
                    }
                    let values = from_bytes::<T>(view.dtype(), view.data())?;
                    dst.data_mut().copy_from_slice(&values);
                    Ok(())
                });
            match res {
                Ok(()) => self.seen += 1,
                Err(e) => self.err = Some(e),
            }
        }
    }
    impl<T: Scalar> Visitor<T> for Restore<'_> {
        fn param(&mut self, name: &str, p: &mut Param<T>) {
            self.fill(name, &mut p.value);
        }
        fn buffer(&mut self, name: &str, b: &mut Tensor<T>) {
            self.fill(name, b);
        }
    }
    let mut r = Restore { st: &st, err: None, seen: 0 };
    encoder.visit("", &mut r);
    if let Some(e) = r.err {
        return Err(e);
    }
    if r.seen != st.len() {
        return Err(EncoderError::Checkpoint(format!("{} stored tensors, model has {}", st.len(), r.seen)));
    }
    Ok(Checkpoint { encoder, metadata })
}
