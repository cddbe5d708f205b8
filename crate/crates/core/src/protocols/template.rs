use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Unit-norm aggregate of one or more embeddings of a subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub subject_id: u32,
    pub vector: Vec<f64>,
    pub media_count: usize,
}

impl Template {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Elementwise mean of `vectors`, L2-normalized.
pub fn build_template<V: AsRef<[f64]>>(subject_id: u32, vectors: &[V]) -> Result<Template> {
    let first = vectors
        .first()
        .ok_or_else(|| invalid("cannot build a template from zero embeddings"))?
        .as_ref();
    let dim = first.len();
    if dim == 0 {
        return Err(invalid("embeddings must be non-empty"));
    }
    let mut mean = vec![0.0; dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(invalid(format!("embedding dims differ: {} vs {dim}", v.len())));
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateTemplate {
            count: vectors.len(),
        });
    }
    mean.iter_mut().for_each(|m| *m /= norm);
    Ok(Template {
        subject_id,
        vector: mean,
        media_count: vectors.len(),
    })
}

/// Cosine similarity of two templates (the dot product of their unit vectors).
pub fn similarity(a: &Template, b: &Template) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(invalid(format!("template dims differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok(a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Template {
        build_template(0, &[v.to_vec()]).unwrap()
    }

    #[test]
    fn singleton_is_normalized() {
        let t = unit(&[3.0, 4.0]);
        assert_eq!(t.vector, vec![0.6, 0.8]);
        assert_eq!(t.media_count, 1);
    }

    #[test]
    fn repeated_vector_is_idempotent() {
        let t = build_template(5, &[vec![3.0, 4.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.vector, vec![0.6, 0.8]);
        assert_eq!(t.media_count, 2);
        assert_eq!(t.subject_id, 5);
    }

    #[test]
    fn opposite_vectors_are_degenerate() {
        let err = build_template(0, &[vec![1.0, -2.0], vec![-1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateTemplate { count: 2 }));
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(
            build_template::<Vec<f64>>(0, &[]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(build_template(0, &[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn similarity_cases() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[0.0, 2.0]);
        let c = unit(&[-5.0, 0.0]);
        assert_eq!(similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(similarity(&a, &b).unwrap(), 0.0);
        assert_eq!(similarity(&a, &c).unwrap(), -1.0);
        assert!(similarity(&a, &unit(&[1.0, 0.0, 0.0])).is_err());
    }
}
