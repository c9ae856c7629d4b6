//! Versioned JSON checkpoints. Loading checks the envelope (format, version,
//! kind) and every tensor shape before a model is handed out.

use std::path::Path;

use dvge_core::baselines::{AdtModel, SensitiveClassifier};
use dvge_core::nn::Mlp;
use dvge_core::vae::VaeModel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_json;

pub const FORMAT: &str = "dvge-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Vae,
    Sensitive,
    Task,
    Adt,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Vae => "vae",
            Kind::Sensitive => "sensitive_classifier",
            Kind::Task => "task_model",
            Kind::Adt => "adt_model",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: String,
    /// Cache key or run id the model belongs to.
    key: String,
    model: T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
}

fn save<T: Serialize>(path: &Path, kind: Kind, key: &str, model: &T) -> Result<()> {
    write_json(
        path,
        &Envelope {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.name().into(),
            key: key.into(),
            model,
        },
    )
}

fn load<T: DeserializeOwned>(path: &Path, kind: Kind) -> Result<T> {
    let bad = |detail: String| Error::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| bad(format!("unreadable envelope: {}", e)))?;
    if header.format != FORMAT {
        return Err(bad(format!(
            "format '{}' is not '{}'",
            header.format, FORMAT
        )));
    }
    if header.version != VERSION {
        return Err(bad(format!(
            "version {} is not supported (expected {})",
            header.version, VERSION
        )));
    }
    if header.kind != kind.name() {
        return Err(bad(format!(
            "holds a {}, expected a {}",
            header.kind,
            kind.name()
        )));
    }
    let env: Envelope<T> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    Ok(env.model)
}

pub fn save_vae(path: &Path, key: &str, model: &VaeModel) -> Result<()> {
    save(path, Kind::Vae, key, model)
}

pub fn load_vae(path: &Path) -> Result<VaeModel> {
    let m: VaeModel = load(path, Kind::Vae)?;
    VaeModel::from_parts(m.encoder, m.decoder, m.latent_dim).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn save_sensitive(path: &Path, key: &str, model: &SensitiveClassifier) -> Result<()> {
    save(path, Kind::Sensitive, key, model)
}

pub fn load_sensitive(path: &Path) -> Result<SensitiveClassifier> {
    let m: SensitiveClassifier = load(path, Kind::Sensitive)?;
    if m.model.output_width() != 2 {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            detail: format!(
                "sensitive classifier has {} outputs, expected 2",
                m.model.output_width()
            ),
        });
    }
    Ok(m)
}

pub fn save_task(path: &Path, key: &str, model: &Mlp) -> Result<()> {
    save(path, Kind::Task, key, model)
}

pub fn load_task(path: &Path) -> Result<Mlp> {
    load(path, Kind::Task)
}

pub fn save_adt(path: &Path, key: &str, model: &AdtModel) -> Result<()> {
    save(path, Kind::Adt, key, model)
}

pub fn load_adt(path: &Path) -> Result<AdtModel> {
    load(path, Kind::Adt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dvge_core::nn::{Activation, MlpSpec};
    use dvge_core::rng::rng_from_seed;

    fn mlp() -> Mlp {
        Mlp::new(
            MlpSpec::new(3, vec![4], Activation::LEAKY, 2),
            &mut rng_from_seed(1),
        )
        .unwrap()
    }

    #[test]
    fn task_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        let m = mlp();
        save_task(&p, "run", &m).unwrap();
        assert_eq!(load_task(&p).unwrap(), m);
    }

    #[test]
    fn wrong_kind_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        save_task(&p, "run", &mlp()).unwrap();
        assert!(matches!(load_vae(&p), Err(Error::Checkpoint { .. })));
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 9");
        std::fs::write(&p, text).unwrap();
        let err = load_task(&p).unwrap_err().to_string();
        assert!(
            err.contains("t.json") && err.contains("version 9"),
            "{}",
            err
        );
    }

    #[test]
    fn corrupted_shapes_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        save_task(&p, "run", &mlp()).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        v["model"]["params"][0]["shape"] = serde_json::json!([3, 5]);
        std::fs::write(&p, v.to_string()).unwrap();
        let err = load_task(&p).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }));
        assert!(err.to_string().contains("bad.json"));
        std::fs::write(&p, "{ not json").unwrap();
        assert!(load_task(&p).unwrap_err().to_string().contains("bad.json"));
    }
}
