use super::{Sample, Subset, Vocab};
use crate::error::{Error, Result};
use crate::model::Example;

/// A sample together with its token-id encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub sample: Sample,
    pub example: Example,
    /// Reference output ids without the trailing end-of-sequence id.
    pub reference: Vec<usize>,
}

/// Encoded corpus, split by subset, in file order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub retain: Vec<Item>,
    pub forget: Vec<Item>,
    pub holdout: Vec<Item>,
    pub general: Vec<Item>,
}

impl Dataset {
    /// Builds the vocabulary over every sample and encodes each one. Outputs
    /// get the end-of-sequence id appended so decoding can terminate.
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let vocab = Vocab::from_samples(samples);
        let mut ds = Dataset {
            vocab,
            retain: Vec::new(),
            forget: Vec::new(),
            holdout: Vec::new(),
            general: Vec::new(),
        };
        for s in samples {
            let input = ds.vocab.encode(&s.input)?;
            let reference = ds.vocab.encode(&s.output)?;
            let mut output = reference.clone();
            output.push(ds.vocab.eos());
            let item = Item {
                sample: s.clone(),
                example: Example { input, output },
                reference,
            };
            match s.subset {
                Subset::Retain => ds.retain.push(item),
                Subset::Forget => ds.forget.push(item),
                Subset::Holdout => ds.holdout.push(item),
                Subset::General => ds.general.push(item),
            }
        }
        Ok(ds)
    }

    pub fn get(&self, subset: Subset) -> &[Item] {
        match subset {
            Subset::Retain => &self.retain,
            Subset::Forget => &self.forget,
            Subset::Holdout => &self.holdout,
            Subset::General => &self.general,
        }
    }

    /// Errors naming the first empty subset.
    pub fn require_all(&self) -> Result<()> {
        for subset in Subset::ALL {
            if self.get(subset).is_empty() {
                return Err(Error::Invalid(format!(
                    "dataset has no {} samples",
                    subset.file_stem()
                )));
            }
        }
        Ok(())
    }

    pub fn examples(&self, subset: Subset) -> Vec<Example> {
        self.get(subset).iter().map(|i| i.example.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};

    #[test]
    fn outputs_end_with_eos() {
        let corpus = generate_corpus(&CorpusSpec::default()).unwrap();
        let ds = Dataset::from_samples(&corpus.samples).unwrap();
        ds.require_all().unwrap();
        for subset in Subset::ALL {
            for item in ds.get(subset) {
                assert_eq!(item.example.output.last(), Some(&ds.vocab.eos()));
                assert_eq!(
                    &item.example.output[..item.reference.len()],
                    &item.reference[..]
                );
                assert_eq!(ds.vocab.decode(&item.reference), item.sample.output);
            }
        }
    }

    #[test]
    fn missing_subset_is_named() {
        let corpus = generate_corpus(&CorpusSpec::default()).unwrap();
        let no_holdout: Vec<Sample> = corpus
            .samples
            .into_iter()
            .filter(|s| s.subset != Subset::Holdout)
            .collect();
        let ds = Dataset::from_samples(&no_holdout).unwrap();
        let err = ds.require_all().unwrap_err().to_string();
        assert!(err.contains("holdout"), "{err}");
    }
}
