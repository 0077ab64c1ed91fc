//! Prompt encoding and the two-stage conditioning plan.
//!
//! The prompt encoder is a learned token-embedding table over a closed
//! vocabulary: a prompt is a bag of tokens and its embedding is the sum of
//! the corresponding table rows. The focus stage conditions on the
//! interpolated embedding `(e_local + alpha * e_global) / (1 + alpha)`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::Scalar;
use crate::error::{Error, Result};

/// Name of the reserved null token (always id 0); used for the
/// classifier-free-guidance unconditional branch.
pub const NULL_TOKEN: &str = "<null>";

/// Closed token vocabulary. Id 0 is always the reserved null token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from token names; the null token is prepended
    /// automatically and must not appear in `names`.
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![NULL_TOKEN.to_string()];
        for n in names {
            let n = n.into();
            if all.contains(&n) {
                return Err(Error::invalid(format!("duplicate token `{n}` in vocabulary")));
            }
            all.push(n);
        }
        Ok(Vocabulary { names: all })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always contains the null token
    }

    pub fn token_id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownToken(name.to_string()))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    /// All token names including the leading null token.
    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// An ordered bag of token ids drawn from a [`Vocabulary`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    token_ids: Vec<usize>,
}

impl Prompt {
    /// Parses token names against the vocabulary. Conditioned prompts must
    /// be nonempty; unknown tokens are rejected.
    pub fn parse<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("prompt must contain at least one token"));
        }
        let token_ids = tokens
            .iter()
            .map(|t| vocab.token_id(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prompt { token_ids })
    }

    /// The null prompt: the reserved null token alone.
    pub fn null() -> Self {
        Prompt { token_ids: vec![0] }
    }

    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Token names resolved against `vocab`.
    pub fn names<'a>(&self, vocab: &'a Vocabulary) -> Vec<&'a str> {
        self.token_ids.iter().map(|&id| vocab.name(id)).collect()
    }
}

/// A prompt embedding vector of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding<T> {
    values: Array1<T>,
}

impl<T: Scalar> PromptEmbedding<T> {
    pub fn new(values: Array1<T>) -> Self {
        PromptEmbedding { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> ArrayView1<'_, T> {
        self.values.view()
    }

    pub fn into_values(self) -> Array1<T> {
        self.values
    }
}

/// Learned token-embedding table realizing the prompt encoder: one row per
/// vocabulary token (row 0 is the null embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    rows: Array2<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Wraps an existing `(vocab_len, dim)` matrix.
    pub fn new(rows: Array2<T>) -> Self {
        EmbeddingTable { rows }
    }

    /// Random-normal initialization scaled by `std`, for training from
    /// scratch.
    pub fn init<R: Rng>(vocab_len: usize, dim: usize, std: f64, rng: &mut R) -> Self
    where
        StandardNormal: Distribution<T>,
    {
        let std = T::from(std).unwrap();
        let rows = Array2::from_shape_fn((vocab_len, dim), |_| {
            let n: T = StandardNormal.sample(rng);
            n * std
        });
        EmbeddingTable { rows }
    }

    pub fn vocab_len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<T> {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut Array2<T> {
        &mut self.rows
    }
}

/// Encodes a prompt as the sum of its tokens' embedding rows.
///
/// The null prompt therefore encodes to the null embedding row alone.
pub fn encode_prompt<T: Scalar>(table: &EmbeddingTable<T>, prompt: &Prompt) -> Result<PromptEmbedding<T>> {
    let mut acc = Array1::zeros(table.dim());
    for &id in prompt.token_ids() {
        if id >= table.vocab_len() {
            return Err(Error::UnknownToken(format!("id {id}")));
        }
        acc += &table.rows().row(id);
    }
    Ok(PromptEmbedding::new(acc))
}

/// The focus-stage embedding `(e_local + alpha * e_global) / (1 + alpha)`.
///
/// `alpha = 0` returns `e_local` exactly; large `alpha` approaches
/// `e_global`.
pub fn interpolate_embeddings<T: Scalar>(
    e_local: &PromptEmbedding<T>,
    e_global: &PromptEmbedding<T>,
    alpha: f64,
) -> Result<PromptEmbedding<T>> {
    if e_local.dim() != e_global.dim() {
        return Err(Error::shape(format!(
            "embedding dims {} vs {}",
            e_local.dim(),
            e_global.dim()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(e_local.clone());
    }
    let a = T::from(alpha).unwrap();
    let denom = T::one() + a;
    let values = (&e_local.values + &(&e_global.values * a)) / denom;
    Ok(PromptEmbedding::new(values))
}

/// The per-generation conditioning plan: stage fraction `sigma`,
/// interpolation weight `alpha`, the two prompts, and the sampler step
/// count the stage boundary is derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub sigma: f64,
    pub alpha: f64,
    pub global_prompt: Prompt,
    pub local_prompt: Prompt,
    pub num_steps: usize,
}

impl StagePlan {
    pub fn new(
        sigma: f64,
        alpha: f64,
        global_prompt: Prompt,
        local_prompt: Prompt,
        num_steps: usize,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::invalid(format!("sigma must be in (0, 1], got {sigma}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if num_steps == 0 {
            return Err(Error::invalid("num_steps must be at least 1"));
        }
        Ok(StagePlan { sigma, alpha, global_prompt, local_prompt, num_steps })
    }

    /// First step index of the focus stage: `round(sigma * num_steps)`,
    /// ties rounding up, clamped to `num_steps`.
    pub fn boundary(&self) -> usize {
        let b = (self.sigma * self.num_steps as f64 + 0.5).floor() as usize;
        b.min(self.num_steps)
    }
}

/// The conditional-branch embedding for sampler step `step_index`: the
/// global embedding during the global layout stage, the interpolated
/// embedding during the focus stage.
pub fn conditioning_for_step<T: Scalar>(
    plan: &StagePlan,
    step_index: usize,
    table: &EmbeddingTable<T>,
) -> Result<PromptEmbedding<T>> {
    if step_index >= plan.num_steps {
        return Err(Error::invalid(format!(
            "step index {step_index} out of range for {} steps",
            plan.num_steps
        )));
    }
    let e_global = encode_prompt(table, &plan.global_prompt)?;
    if step_index < plan.boundary() {
        Ok(e_global)
    } else {
        let e_local = encode_prompt(table, &plan.local_prompt)?;
        interpolate_embeddings(&e_local, &e_global, plan.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_vocab() -> Vocabulary {
        Vocabulary::new(["red", "green", "blue", "circle", "square"]).unwrap()
    }

    fn random_table(dim: usize, seed: u64) -> EmbeddingTable<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingTable::init(test_vocab().len(), dim, 1.0, &mut rng)
    }

    #[test]
    fn single_token_prompt_is_its_row() {
        let vocab = test_vocab();
        let table = random_table(8, 1);
        let p = Prompt::parse(&vocab, &["red"]).unwrap();
        let e = encode_prompt(&table, &p).unwrap();
        let id = vocab.token_id("red").unwrap();
        assert_eq!(e.values().to_owned(), table.rows().row(id).to_owned());
    }

    #[test]
    fn two_token_prompt_is_order_independent_sum() {
        let vocab = test_vocab();
        let table = random_table(8, 2);
        let ab = encode_prompt(&table, &Prompt::parse(&vocab, &["red", "circle"]).unwrap()).unwrap();
        let ba = encode_prompt(&table, &Prompt::parse(&vocab, &["circle", "red"]).unwrap()).unwrap();
        assert_eq!(ab, ba);
        let r = vocab.token_id("red").unwrap();
        let c = vocab.token_id("circle").unwrap();
        let expected = &table.rows().row(r) + &table.rows().row(c);
        assert_eq!(ab.values().to_owned(), expected);
    }

    #[test]
    fn null_prompt_is_null_row() {
        let table = random_table(8, 3);
        let e = encode_prompt(&table, &Prompt::null()).unwrap();
        assert_eq!(e.values().to_owned(), table.rows().row(0).to_owned());
    }

    #[test]
    fn unknown_token_rejected() {
        let vocab = test_vocab();
        assert!(matches!(
            Prompt::parse(&vocab, &["carrot"]),
            Err(Error::UnknownToken(_))
        ));
    }

    #[test]
    fn empty_prompt_rejected() {
        let vocab = test_vocab();
        let empty: [&str; 0] = [];
        assert!(Prompt::parse(&vocab, &empty).is_err());
    }

    #[test]
    fn interpolation_alpha_zero_is_local_exactly() {
        let table = random_table(8, 4);
        let vocab = test_vocab();
        let l = encode_prompt(&table, &Prompt::parse(&vocab, &["red"]).unwrap()).unwrap();
        let g = encode_prompt(&table, &Prompt::parse(&vocab, &["blue"]).unwrap()).unwrap();
        assert_eq!(interpolate_embeddings(&l, &g, 0.0).unwrap(), l);
    }

    #[test]
    fn interpolation_alpha_one_is_midpoint() {
        let l = PromptEmbedding::new(ndarray::arr1(&[1.0f64, 0.0]));
        let g = PromptEmbedding::new(ndarray::arr1(&[0.0f64, 1.0]));
        let e = interpolate_embeddings(&l, &g, 1.0).unwrap();
        assert_eq!(e.values().to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn interpolation_large_alpha_approaches_global() {
        let table = random_table(16, 5);
        let vocab = test_vocab();
        let l = encode_prompt(&table, &Prompt::parse(&vocab, &["red", "circle"]).unwrap()).unwrap();
        let g = encode_prompt(&table, &Prompt::parse(&vocab, &["blue", "square"]).unwrap()).unwrap();
        let e = interpolate_embeddings(&l, &g, 1e6).unwrap();
        for (a, b) in e.values().iter().zip(g.values().iter()) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn interpolation_rejects_negative_alpha_and_dim_mismatch() {
        let l = PromptEmbedding::new(ndarray::arr1(&[1.0f64, 0.0]));
        let g = PromptEmbedding::new(ndarray::arr1(&[0.0f64, 1.0]));
        assert!(interpolate_embeddings(&l, &g, -0.5).is_err());
        let short = PromptEmbedding::new(ndarray::arr1(&[1.0f64]));
        assert!(interpolate_embeddings(&l, &short, 1.0).is_err());
    }

    fn plan(sigma: f64, alpha: f64, n: usize) -> StagePlan {
        let vocab = test_vocab();
        StagePlan::new(
            sigma,
            alpha,
            Prompt::parse(&vocab, &["red", "circle", "blue", "square"]).unwrap(),
            Prompt::parse(&vocab, &["red", "circle"]).unwrap(),
            n,
        )
        .unwrap()
    }

    #[test]
    fn sigma_one_keeps_global_embedding_throughout() {
        let table = random_table(8, 6);
        let p = plan(1.0, 1.0, 10);
        let g = encode_prompt(&table, &p.global_prompt).unwrap();
        for i in 0..10 {
            assert_eq!(conditioning_for_step(&p, i, &table).unwrap(), g);
        }
    }

    #[test]
    fn boundary_switch_at_eighty_percent() {
        let table = random_table(8, 7);
        let p = plan(0.8, 1.0, 50);
        assert_eq!(p.boundary(), 40);
        let g = encode_prompt(&table, &p.global_prompt).unwrap();
        let l = encode_prompt(&table, &p.local_prompt).unwrap();
        let ebar = interpolate_embeddings(&l, &g, 1.0).unwrap();
        for i in 0..40 {
            assert_eq!(conditioning_for_step(&p, i, &table).unwrap(), g);
        }
        for i in 40..50 {
            assert_eq!(conditioning_for_step(&p, i, &table).unwrap(), ebar);
        }
    }

    #[test]
    fn alpha_zero_focus_stage_uses_pure_local() {
        let table = random_table(8, 8);
        let p = plan(0.5, 0.0, 50);
        let l = encode_prompt(&table, &p.local_prompt).unwrap();
        for i in 25..50 {
            assert_eq!(conditioning_for_step(&p, i, &table).unwrap(), l);
        }
    }

    #[test]
    fn step_index_out_of_range_rejected() {
        let table = random_table(8, 9);
        let p = plan(0.5, 1.0, 50);
        assert!(conditioning_for_step(&p, 50, &table).is_err());
    }

    #[test]
    fn boundary_rounds_ties_up() {
        // sigma * N = 24.5 rounds up to 25.
        assert_eq!(plan(0.49, 1.0, 50).boundary(), 25);
        // 0.99 * 50 = 49.5 rounds to N itself.
        assert_eq!(plan(0.99, 1.0, 50).boundary(), 50);
    }

    proptest! {
        #[test]
        fn interpolation_is_idempotent_on_equal_inputs(
            vals in proptest::collection::vec(-10.0f64..10.0, 1..20),
            alpha in 0.0f64..100.0,
        ) {
            let e = PromptEmbedding::new(Array1::from_vec(vals));
            let out = interpolate_embeddings(&e, &e, alpha).unwrap();
            for (a, b) in out.values().iter().zip(e.values().iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn interpolation_is_componentwise_convex(
            l in proptest::collection::vec(-10.0f64..10.0, 8),
            g in proptest::collection::vec(-10.0f64..10.0, 8),
            alpha in 0.0f64..1e6,
        ) {
            let le = PromptEmbedding::new(Array1::from_vec(l.clone()));
            let ge = PromptEmbedding::new(Array1::from_vec(g.clone()));
            let e = interpolate_embeddings(&le, &ge, alpha).unwrap();
            for ((a, &lo), &hi) in e.values().iter().zip(l.iter()).zip(g.iter()) {
                let (min, max) = if lo <= hi { (lo, hi) } else { (hi, lo) };
                prop_assert!(*a >= min - 1e-9 && *a <= max + 1e-9);
            }
        }

        #[test]
        fn conditioning_has_single_change_point(
            sigma in 0.01f64..1.0,
            n in 1usize..60,
        ) {
            let table = random_table(4, 10);
            let p = plan(sigma, 0.7, n);
            let seq: Vec<_> = (0..n)
                .map(|i| conditioning_for_step(&p, i, &table).unwrap())
                .collect();
            let mut changes = 0;
            for w in seq.windows(2) {
                if w[0] != w[1] {
                    changes += 1;
                }
            }
            prop_assert!(changes <= 1);
            let b = p.boundary();
            if b > 0 && b < n {
                prop_assert_ne!(&seq[b - 1], &seq[b]);
            }
        }

        #[test]
        fn random_prompt_encoding_matches_accumulation_oracle(
            ids in proptest::collection::vec(0usize..6, 1..10),
        ) {
            let table = random_table(8, 11);
            let prompt = Prompt { token_ids: ids.clone() };
            let got = encode_prompt(&table, &prompt).unwrap();
            // Independent per-token accumulation loop.
            let mut acc = vec![0.0f64; 8];
            for id in &ids {
                for (k, slot) in acc.iter_mut().enumerate() {
                    *slot += table.rows()[[*id, k]];
                }
            }
            for (a, b) in got.values().iter().zip(acc.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
