use crate::{Error, Result};

/// Instruction sent ahead of every caption.
pub const GENERATION_INSTRUCTION: &str = "Ask 5 questions about the content and generate four options for each question. The questions should be answerable with the information provided in the caption, and the four options should include one correct and three incorrect options, with the position of the correct option randomized. The output should use the following template: i:`the question index' question:`the generate question' choice: `A:option content B:option content C:option content D:option content'  answer: The correct option(A\\B\\C\\D).";

const CAPTION_SLOT: &str = "{caption}";

/// A prompt with exactly one `{caption}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: format!("{GENERATION_INSTRUCTION}\n{CAPTION_SLOT}"),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.matches(CAPTION_SLOT).count() != 1 {
            return Err(Error::Config(
                "prompt template needs exactly one {caption} slot".into(),
            ));
        }
        Ok(PromptTemplate { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, caption: &str) -> Result<String> {
        if caption.trim().is_empty() {
            return Err(Error::Precondition("caption is empty".into()));
        }
        Ok(self.text.replacen(CAPTION_SLOT, caption, 1))
    }

    /// Recover the caption from a prompt rendered by this template.
    pub fn extract_caption<'a>(&self, prompt: &'a str) -> Option<&'a str> {
        let (prefix, suffix) = self.text.split_once(CAPTION_SLOT)?;
        prompt.strip_prefix(prefix)?.strip_suffix(suffix)
    }
}

/// Render the default template for `caption`.
pub fn build_prompt(caption: &str) -> Result<String> {
    PromptTemplate::default().render(caption)
}
