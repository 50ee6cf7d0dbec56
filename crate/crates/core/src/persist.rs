//! Versioned JSON model files.
//!
//! Matrices and the core tensor are stored row-major (last index fastest)
//! together with their shapes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ExternalRating, IdMap, RatingScale, RatingTable};
use crate::models::{
    Coffee, ModelConfig, ModelKind, MostPopular, PureSvd, RandomGuess, Recommender, UserKnn,
};
use crate::tensor::{DenseTensor3, TuckerModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StoredMatrix {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|r| m.row(r).iter().copied().collect::<Vec<_>>())
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::ModelFormat(format!(
                "{}×{} matrix with {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn from_tensor(t: &DenseTensor3) -> Self {
        let [a, b, c] = t.shape();
        let mut data = Vec::with_capacity(a * b * c);
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    data.push(t[[i, j, k]]);
                }
            }
        }
        Self {
            shape: t.shape(),
            data,
        }
    }

    pub fn to_tensor(&self) -> Result<DenseTensor3> {
        let [a, b, c] = self.shape;
        if self.data.len() != a * b * c {
            return Err(Error::ModelFormat(format!(
                "{a}×{b}×{c} tensor with {} values",
                self.data.len()
            )));
        }
        Ok(DenseTensor3::from_fn(self.shape, |i, j, k| {
            self.data[(i * b + j) * c + k]
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Payload {
    Tucker {
        shape: [usize; 3],
        ranks: [usize; 3],
        u: StoredMatrix,
        v: StoredMatrix,
        w: StoredMatrix,
        core: StoredTensor,
        fit_history: Vec<f64>,
        positive_levels: Vec<usize>,
    },
    Svd {
        v: StoredMatrix,
        singular_values: Option<Vec<f64>>,
    },
    /// `(user_id, item_id, level, timestamp)`
    Ratings {
        ratings: Vec<(u64, u64, usize, i64)>,
    },
    Counts {
        counts: Vec<usize>,
    },
    Seed {
        seed: u64,
    },
}

/// A fitted model with everything needed to serve it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub scale: RatingScale,
    /// External ids of the item axis.
    pub items: IdMap,
    pub n_users: usize,
    pub payload: Payload,
}

fn header(kind: ModelKind, config: &ModelConfig, table: &RatingTable, payload: Payload) -> ModelBundle {
    ModelBundle {
        format_version: FORMAT_VERSION,
        kind,
        config: config.clone(),
        scale: table.scale().clone(),
        items: table.items().clone(),
        n_users: table.n_users(),
        payload,
    }
}

impl ModelBundle {
    pub fn coffee(table: &RatingTable, config: &ModelConfig, model: &Coffee) -> Self {
        let t = &model.model;
        header(
            ModelKind::Coffee,
            config,
            table,
            Payload::Tucker {
                shape: t.shape(),
                ranks: t.ranks(),
                u: StoredMatrix::from_matrix(&t.u),
                v: StoredMatrix::from_matrix(&t.v),
                w: StoredMatrix::from_matrix(&t.w),
                core: StoredTensor::from_tensor(&t.core),
                fit_history: t.fit_history.clone(),
                positive_levels: model.positive_levels.clone(),
            },
        )
    }

    pub fn puresvd(table: &RatingTable, config: &ModelConfig, model: &PureSvd) -> Self {
        header(
            ModelKind::PureSvd,
            config,
            table,
            Payload::Svd {
                v: StoredMatrix::from_matrix(&model.v),
                singular_values: model.singular_values.as_ref().map(|s| s.iter().copied().collect()),
            },
        )
    }

    /// kNN keeps the training ratings themselves.
    pub fn knn(table: &RatingTable, config: &ModelConfig) -> Self {
        let ratings = table
            .ratings()
            .iter()
            .map(|r| {
                let e = table.to_external(r);
                (e.user_id, e.item_id, e.level, e.timestamp)
            })
            .collect();
        header(ModelKind::Knn, config, table, Payload::Ratings { ratings })
    }

    pub fn popular(table: &RatingTable, config: &ModelConfig) -> Self {
        header(
            ModelKind::Popular,
            config,
            table,
            Payload::Counts {
                counts: table.item_counts(),
            },
        )
    }

    pub fn random(table: &RatingTable, config: &ModelConfig) -> Self {
        header(ModelKind::Random, config, table, Payload::Seed { seed: config.seed })
    }

    /// Fit `config` on `table` and wrap the result.
    pub fn fit(table: &RatingTable, config: &ModelConfig, hooi: &crate::tensor::HooiOptions) -> Result<Self> {
        Ok(match config.kind {
            ModelKind::Coffee => Self::coffee(table, config, &Coffee::fit(table, config, hooi)?),
            ModelKind::PureSvd => Self::puresvd(table, config, &PureSvd::fit(table, config.rank)?),
            ModelKind::Knn => Self::knn(table, config),
            ModelKind::Popular => Self::popular(table, config),
            ModelKind::Random => Self::random(table, config),
        })
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn tucker(&self) -> Result<TuckerModel> {
        match &self.payload {
            Payload::Tucker {
                shape,
                ranks,
                u,
                v,
                w,
                core,
                fit_history,
                ..
            } => {
                let model = TuckerModel {
                    u: u.to_matrix()?,
                    v: v.to_matrix()?,
                    w: w.to_matrix()?,
                    core: core.to_tensor()?,
                    fit_history: fit_history.clone(),
                };
                let factor_cols = [model.u.ncols(), model.v.ncols(), model.w.ncols()];
                if model.shape() != *shape || model.ranks() != *ranks || factor_cols != *ranks {
                    return Err(Error::ModelFormat(format!(
                        "factor shapes {:?}/{:?} do not match header {shape:?}/{ranks:?}",
                        model.shape(),
                        factor_cols
                    )));
                }
                if shape[1] != self.items.len() || shape[2] != self.scale.len() {
                    return Err(Error::ModelFormat("tensor shape disagrees with item map or scale".into()));
                }
                Ok(model)
            }
            _ => Err(Error::ModelFormat(format!("{} model has no tensor factors", self.kind))),
        }
    }

    pub fn to_coffee(&self) -> Result<Coffee> {
        let model = self.tucker()?;
        let Payload::Tucker { positive_levels, .. } = &self.payload else {
            unreachable!("checked by tucker()")
        };
        if positive_levels.iter().any(|&k| k >= self.scale.len()) {
            return Err(Error::ModelFormat("positive level outside the scale".into()));
        }
        Ok(Coffee {
            model,
            positive_levels: positive_levels.clone(),
        })
    }

    /// Rebuild the model behind the common recommendation interface.
    pub fn recommender(&self) -> Result<Box<dyn Recommender>> {
        let n = self.items.len();
        let kind_mismatch = || Error::ModelFormat(format!("payload does not match kind {}", self.kind));
        Ok(match (&self.kind, &self.payload) {
            (ModelKind::Coffee, Payload::Tucker { .. }) => Box::new(self.to_coffee()?),
            (ModelKind::PureSvd, Payload::Svd { v, singular_values }) => {
                let v = v.to_matrix()?;
                if v.nrows() != n {
                    return Err(Error::ModelFormat("item factors disagree with item map".into()));
                }
                Box::new(PureSvd {
                    v,
                    singular_values: singular_values.as_ref().map(|s| DVector::from_vec(s.clone())),
                })
            }
            (ModelKind::Knn, Payload::Ratings { ratings }) => {
                let entries: Vec<ExternalRating> = ratings
                    .iter()
                    .map(|&(user_id, item_id, level, timestamp)| ExternalRating {
                        user_id,
                        item_id,
                        level,
                        timestamp,
                    })
                    .collect();
                let table = RatingTable::from_external(&entries, self.scale.clone())?;
                if table.items() != &self.items {
                    return Err(Error::ModelFormat("ratings disagree with item map".into()));
                }
                Box::new(UserKnn::new(&table, self.config.neighbors)?)
            }
            (ModelKind::Popular, Payload::Counts { counts }) => {
                if counts.len() != n {
                    return Err(Error::ModelFormat("counts disagree with item map".into()));
                }
                Box::new(MostPopular {
                    counts: counts.clone(),
                })
            }
            (ModelKind::Random, Payload::Seed { seed }) => Box::new(RandomGuess { n_items: n, seed: *seed }),
            _ => return Err(kind_mismatch()),
        })
    }

    pub fn to_writer(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn from_reader(input: impl Read) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(input)?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::ModelFormat(format!(
                    "format version {v}, expected {FORMAT_VERSION}"
                )))
            }
            None => return Err(Error::ModelFormat("missing format_version".into())),
        }
        let bundle: Self = serde_json::from_value(value)?;
        // re-run the scale checks skipped by deserialization
        RatingScale::new(bundle.scale.values().to_vec(), bundle.scale.threshold())?;
        if bundle.kind == ModelKind::Coffee {
            bundle.tucker()?;
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.to_writer(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}
