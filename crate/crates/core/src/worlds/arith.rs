use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Permutation σ of the digits 0–9.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct DigitKey([u8; 10]);

impl TryFrom<Vec<u8>> for DigitKey {
    type Error = Error;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        let arr: [u8; 10] = v
            .try_into()
            .map_err(|v: Vec<u8>| Error::InvalidArgument(format!("key needs 10 digits, got {}", v.len())))?;
        Self::new(arr)
    }
}

impl From<DigitKey> for Vec<u8> {
    fn from(k: DigitKey) -> Self {
        k.0.to_vec()
    }
}

impl DigitKey {
    pub fn new(perm: [u8; 10]) -> Result<Self> {
        let mut seen = [false; 10];
        for &d in &perm {
            if d > 9 || seen[d as usize] {
                return Err(Error::InvalidArgument(format!("{perm:?} is not a digit permutation")));
            }
            seen[d as usize] = true;
        }
        Ok(Self(perm))
    }

    pub fn identity() -> Self {
        Self([0, 1, 2, 3, 4, 5, 6, 7, 8, 9])
    }

    pub fn random(seed: u64) -> Self {
        let mut perm = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        perm.shuffle(&mut seeds::rng(seed, "key", 0));
        Self(perm)
    }

    pub fn apply(&self, d: u8) -> u8 {
        self.0[d as usize]
    }

    pub fn digits(&self) -> &[u8; 10] {
        &self.0
    }

    /// `KEY: 0→σ(0) 1→σ(1) … 9→σ(9)`
    pub fn render(&self) -> String {
        let pairs: Vec<String> = (0..10u8).map(|d| format!("{d}→{}", self.apply(d))).collect();
        format!("KEY: {}", pairs.join(" "))
    }
}

/// `a + b =` answered with σ((a + b) mod 10).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyedArithmeticInstance {
    pub a: u8,
    pub b: u8,
    pub key: DigitKey,
    pub question_text: String,
    pub answer_token: String,
    pub context_text: String,
}

impl KeyedArithmeticInstance {
    pub fn new(a: u8, b: u8, key: DigitKey) -> Self {
        let answer = key.apply((a + b) % 10);
        Self {
            a,
            b,
            question_text: format!("{a} + {b} ="),
            answer_token: answer.to_string(),
            context_text: key.render(),
            key,
        }
    }
}

/// Operands drawn uniformly from the `arith` stream of `seed`.
pub fn keyed_arith_generate(seed: u64, key: &DigitKey) -> KeyedArithmeticInstance {
    let mut rng = seeds::rng(seed, "arith", 0);
    KeyedArithmeticInstance::new(rng.gen_range(0..10), rng.gen_range(0..10), key.clone())
}

/// Held-out task: `a - b =` answered with the letter at index (a − b) mod 10
/// of `A … J`. Needs no context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OodInstance {
    pub a: u8,
    pub b: u8,
    pub question_text: String,
    pub answer_token: String,
}

impl OodInstance {
    pub fn new(a: u8, b: u8) -> Self {
        let d = (a + 10 - b) % 10;
        Self { a, b, question_text: format!("{a} - {b} ="), answer_token: ((b'A' + d) as char).to_string() }
    }
}

pub fn ood_generate(seed: u64) -> OodInstance {
    let mut rng = seeds::rng(seed, "ood", 0);
    OodInstance::new(rng.gen_range(0..10), rng.gen_range(0..10))
}
