//! Run configuration: one JSON file holding the system spec (inline or via
//! `spec_file`) plus optional run parameters.

use std::path::{Path, PathBuf};

use openres::memory::{ProfileDocument, SpectralProfile};
use openres::model::{MatrixDoc, SpecDocument, VectorDoc};
use openres::{CMatrix, CVector, Error, GaussianState, Result, Scheme, SystemSpec};
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialDoc {
    Vacuum,
    Thermal {
        n: f64,
    },
    Coherent {
        m: VectorDoc,
    },
    Gaussian {
        m: VectorDoc,
        #[serde(rename = "N")]
        n: MatrixDoc,
        #[serde(rename = "S")]
        s: Option<MatrixDoc>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RunParams {
    pub spec_file: Option<PathBuf>,
    pub initial: Option<InitialDoc>,
    pub times: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub trajectories: Option<usize>,
    pub seed: Option<u64>,
    pub scheme: Option<Scheme>,
    pub z_max: Option<f64>,
    pub profile: Option<Value>,
    pub omega_bar: Option<f64>,
    pub store_paths: Option<bool>,
}

pub struct RunConfig {
    pub path: PathBuf,
    pub raw: Value,
    pub params: RunParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: Value = serde_json::from_str(&text)?;
        let params: RunParams = serde_json::from_value(raw.clone())?;
        Ok(Self { path: path.to_path_buf(), raw, params })
    }

    pub fn spec(&self) -> Result<SystemSpec> {
        match &self.params.spec_file {
            Some(file) => {
                let resolved = if file.is_relative() {
                    self.path.parent().unwrap_or(Path::new(".")).join(file)
                } else {
                    file.clone()
                };
                SystemSpec::load(resolved)
            }
            None => SystemSpec::try_from(serde_json::from_value::<SpecDocument>(self.raw.clone())?),
        }
    }

    pub fn profile(&self) -> Result<SpectralProfile> {
        let value = self
            .params
            .profile
            .clone()
            .ok_or_else(|| Error::InvalidArgument("config has no \"profile\" object".into()))?;
        SpectralProfile::try_from(serde_json::from_value::<ProfileDocument>(value)?)
    }

    pub fn initial(&self, modes: usize) -> Result<GaussianState> {
        let bad = |e: String| Error::InvalidSpec(vec![e]);
        let vector = |doc: &VectorDoc| -> Result<CVector> {
            let v = doc.to_vector("initial.m").map_err(bad)?;
            if v.len() != modes {
                return Err(Error::Dimension(format!("initial.m has {} entries, spec has {modes} modes", v.len())));
            }
            Ok(CVector::from_vec(v))
        };
        match &self.params.initial {
            None | Some(InitialDoc::Vacuum) => Ok(GaussianState::vacuum(modes)),
            Some(InitialDoc::Thermal { n }) => Ok(GaussianState::thermal(modes, *n)),
            Some(InitialDoc::Coherent { m }) => Ok(GaussianState::coherent(vector(m)?)),
            Some(InitialDoc::Gaussian { m, n, s }) => {
                let n = n.to_matrix("initial.N").map_err(bad)?;
                let s = match s {
                    Some(s) => s.to_matrix("initial.S").map_err(bad)?,
                    None => CMatrix::zeros(modes, modes),
                };
                GaussianState::new(vector(m)?, n, s, 0.0)
            }
        }
    }
}
