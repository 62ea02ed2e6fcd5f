//! Token-level divergences between two log-distributions over one
//! vocabulary. Rows are log-probabilities (`log_softmax` output).

use crate::autodiff::logsumexp;
use crate::error::{Error, Result};

/// Indices of the `k` largest entries of `row`, largest first. Equal values
/// keep ascending index order.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if k >= row.len() {
        return idx;
    }
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn check_rows(student: &[f64], teacher: &[f64], k: usize) -> Result<()> {
    if student.len() != teacher.len() {
        return Err(Error::VocabularyMismatch);
    }
    if k == 0 || k > student.len() {
        return Err(Error::TopKTooLarge { k, vocab: student.len() });
    }
    Ok(())
}

/// `Σ_{v ∈ top-k(student)} p_s(v)·(s_v − t_v)`.
///
/// With `renormalize`, student mass inside the top-k set is rescaled to sum
/// to one before the sum (the teacher row is left as is). With `k = V` and no
/// renormalization this is the exact reverse KL `D(student ‖ teacher)`.
pub fn reverse_kl_token(student: &[f64], teacher: &[f64], k: usize, renormalize: bool) -> Result<f64> {
    check_rows(student, teacher, k)?;
    let set = top_k_indices(student, k);
    let shift = if renormalize {
        logsumexp(&set.iter().map(|&v| student[v]).collect::<Vec<_>>())
    } else {
        0.0
    };
    Ok(set
        .iter()
        .map(|&v| {
            let s = student[v] - shift;
            s.exp() * (s - teacher[v])
        })
        .sum())
}

/// Exact forward KL `D(teacher ‖ student) = Σ_v p_t(v)·(t_v − s_v)`.
pub fn forward_kl_token(student: &[f64], teacher: &[f64]) -> Result<f64> {
    check_rows(student, teacher, student.len().max(1))?;
    Ok(teacher.iter().zip(student).map(|(&t, &s)| t.exp() * (t - s)).sum())
}
