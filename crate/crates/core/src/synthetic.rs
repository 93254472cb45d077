//! Seeded synthetic corpora with clustered Gaussian embeddings.
//!
//! Base vectors carry the class in a few coordinates and a lot of
//! class-independent noise everywhere else, so raw cosine retrieval is weak
//! but a linear head can recover the class. The mining store is a separate,
//! cleaner space standing in for a sentence encoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Dataset, Example, Role};
use crate::embedding::{EmbeddingStore, Pooling, Provenance};
use crate::error::{Error, Result};

pub const TOPICS: [&str; 7] = [
    "entertainment",
    "geography",
    "health",
    "politics",
    "science/technology",
    "sports",
    "travel",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_size: usize,
    pub eval_per_language: usize,
    pub languages: Vec<String>,
    pub dim: usize,
    /// Distance of each class centre from the origin along its own axis.
    pub signal: f64,
    pub signal_noise: f64,
    /// Std-dev of the coordinates that carry no class information.
    pub nuisance: f64,
    /// Norm scale of the constant per-language offset (English has none).
    pub language_shift: f64,
    pub mining_dim: usize,
    pub mining_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 7,
            train_size: 100,
            eval_per_language: 70,
            languages: vec!["xaa".into(), "xab".into(), "xac".into()],
            dim: 32,
            signal: 2.0,
            signal_noise: 0.5,
            nuisance: 1.0,
            language_shift: 0.5,
            mining_dim: 16,
            mining_noise: 0.35,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Dataset,
    pub eval_sets: Vec<Dataset>,
    /// Covers train and eval ids.
    pub base: EmbeddingStore,
    /// Covers train ids only.
    pub mining: EmbeddingStore,
}

fn label_name(c: usize) -> String {
    TOPICS.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string())
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    if spec.classes < 2 || spec.dim <= spec.classes || spec.mining_dim < spec.classes {
        return Err(Error::invalid("synthetic spec needs ≥2 classes and room for nuisance dims"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gauss = |rng: &mut ChaCha8Rng, sd: f64| sd * std_normal.sample(rng);

    let label_set: Vec<String> = (0..spec.classes).map(label_name).collect();
    let mut base_rows = Vec::new();
    let mut mining_rows = Vec::new();

    let base_vector = |rng: &mut ChaCha8Rng, class: usize, offset: &[f64]| -> Vec<f64> {
        (0..spec.dim)
            .map(|j| {
                let x = if j < spec.classes {
                    let centre = if j == class { spec.signal } else { 0.0 };
                    centre + gauss(rng, spec.signal_noise)
                } else {
                    gauss(rng, spec.nuisance)
                };
                x + offset[j]
            })
            .collect()
    };

    let mut examples = Vec::with_capacity(spec.train_size);
    let zero = vec![0.0; spec.dim];
    for i in 0..spec.train_size {
        let class = i % spec.classes;
        let id = format!("eng-{i:04}");
        base_rows.push((id.clone(), base_vector(&mut rng, class, &zero)));
        let m: Vec<f64> = (0..spec.mining_dim)
            .map(|j| f64::from(u8::from(j == class)) + spec.mining_noise * std_normal.sample(&mut rng))
            .collect();
        mining_rows.push((id.clone(), m));
        examples.push(Example {
            text: format!("english {} sample {i}", label_name(class)),
            id,
            label: label_name(class),
            language: "eng".into(),
        });
    }
    let train = Dataset::new("synthetic-train", label_set.clone(), examples, Role::Train)?;

    let mut eval_sets = Vec::with_capacity(spec.languages.len());
    for lang in &spec.languages {
        let offset: Vec<f64> = (0..spec.dim)
            .map(|_| spec.language_shift * std_normal.sample(&mut rng))
            .collect();
        let mut examples = Vec::with_capacity(spec.eval_per_language);
        for i in 0..spec.eval_per_language {
            let class = i % spec.classes;
            let id = format!("{lang}-{i:04}");
            base_rows.push((id.clone(), base_vector(&mut rng, class, &offset)));
            examples.push(Example {
                text: format!("{lang} {} sample {i}", label_name(class)),
                id,
                label: label_name(class),
                language: lang.clone(),
            });
        }
        eval_sets.push(Dataset::new(format!("synthetic-{lang}"), label_set.clone(), examples, Role::Eval)?);
    }

    let prov = |provider: &str| Provenance {
        provider: provider.into(),
        layer: 0,
        pooling: Pooling::Mean,
    };
    Ok(SyntheticData {
        train,
        eval_sets,
        base: EmbeddingStore::from_rows(base_rows, spec.dim, prov("synthetic-base"))?,
        mining: EmbeddingStore::from_rows(mining_rows, spec.mining_dim, prov("synthetic-mining"))?,
    })
}

/// Same ids, rows permuted: keeps the marginal distribution, destroys the labels.
pub fn shuffled_rows(store: &EmbeddingStore, seed: u64, layer: u32) -> Result<EmbeddingStore> {
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut data = Vec::with_capacity(store.raw().len());
    for &i in &order {
        data.extend_from_slice(store.row_f32(i));
    }
    let provenance = Provenance {
        layer,
        ..store.provenance().clone()
    };
    EmbeddingStore::new(store.ids().to_vec(), store.dim(), data, provenance)
}
