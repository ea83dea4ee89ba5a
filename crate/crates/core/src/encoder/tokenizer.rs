use std::collections::HashMap;

pub const OOV: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;

const SPECIAL: [&str; 3] = ["<oov>", "<sot>", "<eot>"];

const WORDS: &[&str] = &[
    "a", "an", "the", "face", "person", "showing", "with", "and", "of", "expression", "emotion",
    "video", "clip", "frame", "look", "looks", "eyes", "mouth", "brows", "eyebrows", "lips",
    "cheeks", "nose", "jaw", "forehead", "happy", "sad", "neutral", "angry", "surprise",
    "surprised", "disgust", "disgusted", "fear", "fearful", "smiling", "raised", "lowered",
    "drooping", "relaxed", "calm", "tight", "tense", "furrowed", "wide", "open", "wrinkled",
    "pressed", "trembling", "frowning", "corners", "upper", "lip", "curled", "still", "steady",
    "gaze", "glaring", "dropped", "stretched", "pulled", "back", "bright", "teary", "narrowed",
    "gasping", "grin", "slight", "subtle", "strong", "changes", "over", "time",
];

/// Whitespace tokenizer over a fixed vocabulary; unknown words map to a
/// single out-of-vocabulary bucket.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        let vocab: Vec<String> = SPECIAL.iter().chain(WORDS).map(|w| w.to_string()).collect();
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Tokenizer { vocab, index }
    }
}

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// `<sot> word... <eot>`, lowercased, punctuation stripped.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = vec![START];
        for raw in text.split_whitespace() {
            let word: String = raw
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect();
            if word.is_empty() {
                continue;
            }
            ids.push(self.index.get(&word).copied().unwrap_or(OOV));
        }
        ids.push(END);
        ids
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.vocab.get(id).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraps_and_buckets_unknown_words() {
        let tok = Tokenizer::default();
        let ids = tok.encode("Happy face, with xyzzy!");
        assert_eq!(ids.first(), Some(&START));
        assert_eq!(ids.last(), Some(&END));
        assert_eq!(ids.len(), 6);
        assert_eq!(tok.word(ids[1]), Some("happy"));
        assert_eq!(ids[4], OOV);
    }

    #[test]
    fn deterministic() {
        let tok = Tokenizer::default();
        assert_eq!(tok.encode("sad eyes"), tok.encode("  sad   eyes "));
    }
}
