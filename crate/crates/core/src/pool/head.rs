use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bert::{BertPooler, BertPoolerConfig};
use super::nonlocal::NonlocalBlock;
use super::simple::{concat_pool, fc_width_for_budget, tgap};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Linear, LinearInit, Lstm};
use crate::params::ParamStore;
use crate::tensor::Scalar;

fn default_lstm_hidden() -> usize {
    450
}

fn default_lstm_layers() -> usize {
    2
}

/// Which pooler sits between the temporal features and the classifier.
///
/// For the FC variants, `width` fixes the hidden width directly; otherwise
/// it is the largest width fitting `budget`, which defaults to the parameter
/// count of a default BERT head (pooler and classifier) at the same `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolerConfig {
    Avg {},
    Concat {},
    Lstm {
        #[serde(default = "default_lstm_hidden")]
        hidden: usize,
        #[serde(default = "default_lstm_layers")]
        layers: usize,
    },
    ConcatFc {
        #[serde(default)]
        width: Option<usize>,
        #[serde(default)]
        budget: Option<u64>,
    },
    NonlocalConcatFc {
        #[serde(default)]
        width: Option<usize>,
        #[serde(default)]
        budget: Option<u64>,
    },
    /// `d_model` is taken from the feature width of the head.
    Bert(BertPoolerConfig),
}

impl PoolerConfig {
    pub fn lstm() -> Self {
        Self::Lstm {
            hidden: default_lstm_hidden(),
            layers: default_lstm_layers(),
        }
    }

    pub fn concat_fc() -> Self {
        Self::ConcatFc { width: None, budget: None }
    }

    pub fn nonlocal_concat_fc() -> Self {
        Self::NonlocalConcatFc { width: None, budget: None }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Avg {} => "avg",
            Self::Concat {} => "concat",
            Self::Lstm { .. } => "lstm",
            Self::ConcatFc { .. } => "concat_fc",
            Self::NonlocalConcatFc { .. } => "nonlocal_concat_fc",
            Self::Bert(_) => "bert",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub pooler: PoolerConfig,
    pub seq_len: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl HeadConfig {
    pub fn new(pooler: PoolerConfig, seq_len: usize, feature_dim: usize, num_classes: usize) -> Self {
        Self {
            pooler,
            seq_len,
            feature_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::config(format!(
                "head: seq_len ({}), feature_dim ({}) and num_classes ({}) must be positive",
                self.seq_len, self.feature_dim, self.num_classes
            )));
        }
        match &self.pooler {
            PoolerConfig::Lstm { hidden, layers } if *hidden == 0 || *layers == 0 => {
                Err(Error::config("lstm pooler needs positive hidden size and layer count"))
            }
            PoolerConfig::ConcatFc { width: Some(0), .. } | PoolerConfig::NonlocalConcatFc { width: Some(0), .. } => {
                Err(Error::config("fc width must be positive"))
            }
            PoolerConfig::Bert(_) => self.bert_config().expect("bert").validate(),
            _ => Ok(()),
        }
    }

    /// The BERT configuration with `d_model` bound to `feature_dim`.
    pub fn bert_config(&self) -> Option<BertPoolerConfig> {
        match &self.pooler {
            PoolerConfig::Bert(c) => Some(BertPoolerConfig {
                d_model: self.feature_dim,
                ..c.clone()
            }),
            _ => None,
        }
    }

    /// Parameters of a default BERT head with the same feature width and classes.
    pub fn bert_budget(&self) -> u64 {
        let d = self.feature_dim as u64;
        let c = self.num_classes as u64;
        BertPoolerConfig::new(self.feature_dim).num_params() + d * c + c
    }

    /// Hidden width of the FC variants, `None` for the other poolers.
    pub fn fc_width(&self) -> Result<Option<usize>> {
        let (width, budget, overhead) = match &self.pooler {
            PoolerConfig::ConcatFc { width, budget } => (width, budget, 0),
            PoolerConfig::NonlocalConcatFc { width, budget } => (width, budget, NonlocalBlock::count(self.feature_dim)),
            _ => return Ok(None),
        };
        if let Some(w) = width {
            return Ok(Some(*w));
        }
        let target = budget.unwrap_or_else(|| self.bert_budget());
        if target <= overhead {
            return Err(Error::config(format!(
                "parameter budget {target} does not cover the non-local block ({overhead})"
            )));
        }
        fc_width_for_budget(target - overhead, self.seq_len, self.feature_dim, self.num_classes).map(Some)
    }

    /// Width of the vector handed to the final classifier.
    pub fn pooled_dim(&self) -> Result<usize> {
        Ok(match &self.pooler {
            PoolerConfig::Avg {} | PoolerConfig::Bert(_) => self.feature_dim,
            PoolerConfig::Concat {} => self.seq_len * self.feature_dim,
            PoolerConfig::Lstm { hidden, .. } => *hidden,
            PoolerConfig::ConcatFc { .. } | PoolerConfig::NonlocalConcatFc { .. } => {
                self.fc_width()?.expect("fc pooler")
            }
        })
    }

    /// Parameters of the pooler alone, excluding the final classifier.
    pub fn pooler_params(&self) -> Result<u64> {
        let (t, d) = (self.seq_len as u64, self.feature_dim as u64);
        Ok(match &self.pooler {
            PoolerConfig::Avg {} | PoolerConfig::Concat {} => 0,
            PoolerConfig::Lstm { hidden, layers } => Lstm::count(self.feature_dim, *hidden, *layers),
            PoolerConfig::ConcatFc { .. } => {
                let w = self.pooled_dim()? as u64;
                t * d * w + w
            }
            PoolerConfig::NonlocalConcatFc { .. } => {
                let w = self.pooled_dim()? as u64;
                NonlocalBlock::count(self.feature_dim) + t * d * w + w
            }
            PoolerConfig::Bert(_) => self.bert_config().expect("bert").num_params(),
        })
    }

    pub fn classifier_params(&self) -> Result<u64> {
        let c = self.num_classes as u64;
        Ok(self.pooled_dim()? as u64 * c + c)
    }

    pub fn num_params(&self) -> Result<u64> {
        Ok(self.pooler_params()? + self.classifier_params()?)
    }
}

#[derive(Debug, Clone)]
pub enum Pooler {
    Avg,
    Concat,
    Lstm(Lstm),
    ConcatFc { fc: Linear },
    NonlocalConcatFc { block: NonlocalBlock, fc: Linear },
    Bert(BertPooler),
}

/// A pooler followed by a linear classifier.
#[derive(Debug, Clone)]
pub struct Head {
    pub cfg: HeadConfig,
    pub pooler: Pooler,
    pub classifier: Linear,
}

impl Head {
    /// Parameters are registered under `{name}.pool.*` and `{name}.classifier.*`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &HeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let p = format!("{name}.pool");
        let (t, d) = (cfg.seq_len, cfg.feature_dim);
        let pooler = match &cfg.pooler {
            PoolerConfig::Avg {} => Pooler::Avg,
            PoolerConfig::Concat {} => Pooler::Concat,
            PoolerConfig::Lstm { hidden, layers } => Pooler::Lstm(Lstm::new(store, &p, d, *hidden, *layers, rng)?),
            PoolerConfig::ConcatFc { .. } => {
                let w = cfg.pooled_dim()?;
                Pooler::ConcatFc {
                    fc: Linear::new(store, &format!("{p}.fc"), t * d, w, LinearInit::FanIn, rng)?,
                }
            }
            PoolerConfig::NonlocalConcatFc { .. } => {
                let w = cfg.pooled_dim()?;
                Pooler::NonlocalConcatFc {
                    block: NonlocalBlock::new(store, &format!("{p}.nonlocal"), d, LinearInit::FanIn, rng)?,
                    fc: Linear::new(store, &format!("{p}.fc"), t * d, w, LinearInit::FanIn, rng)?,
                }
            }
            PoolerConfig::Bert(_) => {
                let bc = cfg.bert_config().expect("bert");
                Pooler::Bert(BertPooler::new(store, &p, &bc, rng)?)
            }
        };
        let init = match &pooler {
            Pooler::Bert(b) => b.cfg.linear_init_std.map_or(LinearInit::FanIn, LinearInit::Normal),
            _ => LinearInit::FanIn,
        };
        let classifier = Linear::new(
            store,
            &format!("{name}.classifier"),
            cfg.pooled_dim()?,
            cfg.num_classes,
            init,
            rng,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            pooler,
            classifier,
        })
    }

    /// The vector fed to the classifier, for features `[T × D]`.
    pub fn pool<T: Scalar>(&self, g: &mut Graph<T>, features: Var) -> Result<Var> {
        let shape = g.shape(features);
        if shape != [self.cfg.seq_len, self.cfg.feature_dim] {
            return Err(Error::dim(
                "head",
                shape,
                &[self.cfg.seq_len, self.cfg.feature_dim],
            ));
        }
        match &self.pooler {
            Pooler::Avg => tgap(g, features),
            Pooler::Concat => concat_pool(g, features),
            Pooler::Lstm(lstm) => Ok(lstm.forward(g, features)?.last),
            Pooler::ConcatFc { fc } => {
                let c = concat_pool(g, features)?;
                let h = fc.forward(g, c)?;
                Ok(g.gelu(h))
            }
            Pooler::NonlocalConcatFc { block, fc } => {
                let z = block.forward(g, features)?;
                let c = concat_pool(g, z)?;
                let h = fc.forward(g, c)?;
                Ok(g.gelu(h))
            }
            Pooler::Bert(bert) => Ok(bert.forward(g, features)?.y_cls),
        }
    }

    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, features: Var) -> Result<Var> {
        let pooled = self.pool(g, features)?;
        super::classify(g, pooled, &self.classifier)
    }

    pub fn num_params(&self) -> u64 {
        self.cfg.num_params().expect("validated at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_kinds() -> Vec<PoolerConfig> {
        vec![
            PoolerConfig::Avg {},
            PoolerConfig::Concat {},
            PoolerConfig::Lstm { hidden: 5, layers: 2 },
            PoolerConfig::concat_fc(),
            PoolerConfig::nonlocal_concat_fc(),
            PoolerConfig::Bert(BertPoolerConfig { num_heads: 2, ..BertPoolerConfig::new(8) }),
        ]
    }

    #[test]
    fn analytic_counts_match_store() {
        for pooler in all_kinds() {
            let cfg = HeadConfig::new(pooler, 4, 8, 3);
            let mut store = ParamStore::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let head = Head::new(&mut store, "head", &cfg, &mut rng).unwrap();
            assert_eq!(store.num_scalars(), head.num_params(), "{}", cfg.pooler.kind());
            assert_eq!(
                store.num_scalars_with_prefix("head.classifier"),
                cfg.classifier_params().unwrap()
            );
            let mut g = Graph::new(&store);
            let x = g.input(Init::Normal { std: 1.0 }.sample(&[4, 8], &mut rng));
            let l = head.logits(&mut g, x).unwrap();
            assert_eq!(g.shape(l), &[3]);
            let bad = g.input(Init::Normal { std: 1.0 }.sample(&[3, 8], &mut rng));
            assert!(head.logits(&mut g, bad).is_err());
        }
    }

    #[test]
    fn fc_budget_defaults_to_bert_head() {
        let cfg = HeadConfig::new(PoolerConfig::concat_fc(), 8, 16, 2);
        let bert = HeadConfig::new(PoolerConfig::Bert(BertPoolerConfig::new(16)), 8, 16, 2);
        let fc = cfg.num_params().unwrap();
        let budget = bert.num_params().unwrap();
        assert!(fc <= budget);
        let per_unit = 8 * 16 + 1 + 2;
        assert!(budget - fc < per_unit);
        let nl = HeadConfig::new(PoolerConfig::nonlocal_concat_fc(), 8, 16, 2);
        assert!(nl.num_params().unwrap() <= budget);
        assert!(budget - nl.num_params().unwrap() < per_unit);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = HeadConfig::new(PoolerConfig::Bert(BertPoolerConfig::new(16)), 8, 16, 2);
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<HeadConfig>(&s).unwrap(), cfg);
        let lstm: PoolerConfig = serde_json::from_str(r#"{"kind":"lstm"}"#).unwrap();
        assert_eq!(lstm, PoolerConfig::lstm());
        let bert: PoolerConfig = serde_json::from_str(r#"{"kind":"bert","num_heads":4}"#).unwrap();
        assert!(matches!(bert, PoolerConfig::Bert(ref c) if c.num_heads == 4));
        assert!(serde_json::from_str::<PoolerConfig>(r#"{"kind":"bert","heads":4}"#).is_err());
        assert!(serde_json::from_str::<PoolerConfig>(r#"{"kind":"avg","x":1}"#).is_err());
    }
}
