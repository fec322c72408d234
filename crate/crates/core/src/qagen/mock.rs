//! Seeded offline generation backend.
//!
//! Emits template-conformant text built from the caption words. Output is a
//! pure function of `(seed, prompt)`. Short captions reproduce the two
//! failure modes seen with real chat models: repeated pairs, or a refusal
//! halfway through. A small fraction of blocks drop an option so the parser's
//! issue path is exercised.

use rand::seq::SliceRandom;
use rand::Rng;

use super::client::{ClientError, GenerationClient, GenerationParams};
use super::parse::render_block;
use super::prompt::PromptTemplate;
use crate::canon;
use crate::text;
use crate::Letter;

const STOPWORDS: &[&str] = &[
    "the", "and", "with", "from", "this", "that", "were", "was", "are", "for", "into", "after",
    "before", "shows", "showing", "shown", "figure", "image", "images", "panel", "arrow",
    "arrows", "which", "their", "there", "have", "has", "been", "also", "between",
];

const DISTRACTORS: &[&str] = &[
    "Liver", "Spleen", "Kidney", "Pancreas", "Left lung", "Right lung", "Heart", "Aorta",
    "Femur", "Brain", "Thyroid", "Bladder", "Computed tomography", "Magnetic resonance",
    "Ultrasound", "Radiograph", "Histology", "Axial view", "Coronal view", "Sagittal view",
    "Normal finding", "Fracture", "Edema", "Calcification",
];

const QUESTION_TEMPLATES: &[&str] = &[
    "What is shown in the {} image?",
    "Which structure is highlighted near the {}?",
    "What type of imaging was used to visualize the {}?",
    "How many {} lesions were reported in the 2 patients?",
    "Where is the {} located in this figure?",
    "What abnormality is visible in the {} region?",
];

const REFUSAL: &str =
    "I'm sorry, but the caption does not contain enough information to ask more questions.";

#[derive(Debug, Clone)]
pub struct MockGenerationClient {
    seed: u64,
    template: PromptTemplate,
}

impl MockGenerationClient {
    pub fn new(seed: u64) -> Self {
        MockGenerationClient {
            seed,
            template: PromptTemplate::default(),
        }
    }

    pub fn with_template(seed: u64, template: PromptTemplate) -> Self {
        MockGenerationClient { seed, template }
    }

    pub fn respond(&self, prompt: &str) -> String {
        let caption = self.template.extract_caption(prompt).unwrap_or(prompt);
        let mut rng = canon::rng_for(&[b"mock-generation", &self.seed.to_le_bytes(), prompt.as_bytes()]);

        let mut words: Vec<String> = Vec::new();
        for w in text::tokens(caption) {
            if w.chars().count() >= 4
                && w.chars().all(|c| c.is_alphabetic() || c == '-')
                && !STOPWORDS.contains(&w.as_str())
                && !words.contains(&w)
            {
                words.push(w);
            }
        }
        if words.is_empty() {
            return REFUSAL.to_string();
        }

        let distinct = words.len().min(5);
        let specs: Vec<BlockSpec> = (0..distinct)
            .map(|k| BlockSpec::draw(&mut rng, &words, k))
            .collect();

        let mut lines: Vec<String> = specs
            .iter()
            .enumerate()
            .map(|(k, spec)| spec.render(k as u8 + 1))
            .collect();
        if distinct < 5 {
            if rng.gen_bool(0.5) {
                // Pad to five by repeating earlier questions under new indices.
                for idx in distinct..5 {
                    lines.push(specs[idx % distinct].render(idx as u8 + 1));
                }
            } else {
                lines.push(REFUSAL.to_string());
            }
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

struct BlockSpec {
    question: String,
    options: [String; 4],
    answer: Letter,
    style: u8,
}

impl BlockSpec {
    fn draw(rng: &mut impl Rng, words: &[String], k: usize) -> Self {
        let focus = &words[k];
        let gold = capitalize(&words[(k + 1) % words.len()]);
        let template = QUESTION_TEMPLATES[rng.gen_range(0..QUESTION_TEMPLATES.len())];
        let question = template.replacen("{}", focus, 1);

        let pool: Vec<&str> = DISTRACTORS
            .iter()
            .copied()
            .filter(|d| !d.eq_ignore_ascii_case(&gold))
            .collect();
        let mut texts: Vec<String> = pool
            .choose_multiple(rng, 3)
            .map(|s| s.to_string())
            .collect();
        let answer = Letter::ALL[rng.gen_range(0..4)];
        texts.insert(answer.index(), gold);
        let options: [String; 4] = texts.try_into().expect("four options");
        BlockSpec {
            question,
            options,
            answer,
            style: rng.gen_range(0..20),
        }
    }

    fn render(&self, index: u8) -> String {
        let [a, b, c, d] = &self.options;
        let (question, answer) = (&self.question, self.answer);
        match self.style {
            0 => format!("i:{index} question:{question} choice: A:{a} B:{b} C:{c} answer:{answer}"),
            1..=5 => format!(
                "I:{index}\nQuestion: {question}\nChoice:\nA: {a}\nB: {b}\nC: {c}\nD: {d}\nAnswer: The correct option is {answer}"
            ),
            6..=9 => format!(
                "i:`{index}' question:`{question}' choice: `A:{a} B:{b} C:{c} D:{d}' answer: {answer}"
            ),
            _ => render_block(index, question, &[a, b, c, d], answer),
        }
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl GenerationClient for MockGenerationClient {
    fn backend_id(&self) -> String {
        format!("mock:{}", self.seed)
    }

    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<String, ClientError> {
        Ok(self.respond(prompt))
    }
}
