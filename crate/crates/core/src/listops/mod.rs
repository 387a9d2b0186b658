//! The ListOps task: nested lists of MAX / MIN / MED / SM (sum mod 10)
//! operations over digits, labeled by their exact value.

pub mod eval;
pub mod gen;

use crate::error::ListOpsError;

/// The 15-symbol vocabulary: digits 0-9, four operators, and the closer.
pub const VOCAB: [&str; 15] = [
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "[MAX", "[MIN", "[MED", "[SM", "]",
];

pub const VOCAB_SIZE: usize = VOCAB.len();
pub const CLASSES: usize = 10;

pub const OP_MAX: u32 = 10;
pub const OP_MIN: u32 = 11;
pub const OP_MED: u32 = 12;
pub const OP_SM: u32 = 13;
pub const CLOSE: u32 = 14;

pub fn token_id(tok: &str) -> Result<u32, ListOpsError> {
    VOCAB
        .iter()
        .position(|&v| v == tok)
        .map(|i| i as u32)
        .ok_or_else(|| ListOpsError::UnknownToken(tok.to_string()))
}

pub fn id_token(id: u32) -> Result<&'static str, ListOpsError> {
    VOCAB
        .get(id as usize)
        .copied()
        .ok_or(ListOpsError::UnknownId(id))
}

/// Whitespace-separated text to token ids.
pub fn tokenize(text: &str) -> Result<Vec<u32>, ListOpsError> {
    text.split_whitespace().map(token_id).collect()
}

/// Token ids back to whitespace-separated text.
pub fn detokenize(ids: &[u32]) -> Result<String, ListOpsError> {
    let toks: Vec<&str> = ids
        .iter()
        .map(|&i| id_token(i))
        .collect::<Result<_, _>>()?;
    Ok(toks.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footnote_example_round_trips() {
        let text = "[SM [SM [SM [MAX 5 6 ] 2 ] 0 ] 5 0 8 6 ]";
        let ids = tokenize(text).unwrap();
        assert_eq!(detokenize(&ids).unwrap(), text);
    }

    #[test]
    fn empty_string_gives_empty_sequence() {
        assert_eq!(tokenize("").unwrap(), Vec::<u32>::new());
        assert_eq!(detokenize(&[]).unwrap(), "");
    }

    #[test]
    fn all_vocab_symbols_round_trip() {
        for (i, tok) in VOCAB.iter().enumerate() {
            assert_eq!(token_id(tok).unwrap(), i as u32);
            assert_eq!(id_token(i as u32).unwrap(), *tok);
        }
    }

    #[test]
    fn unknown_token_is_a_vocabulary_error() {
        assert!(matches!(
            tokenize("[MAX 1 x ]"),
            Err(ListOpsError::UnknownToken(_))
        ));
        assert!(matches!(id_token(15), Err(ListOpsError::UnknownId(15))));
    }
}
