use serde::{Deserialize, Serialize};

use super::{CandidatePool, CurationError};
use crate::metrics::ContactSheet;
use crate::prompt::{parse_judge_verdict, slots, TemplateId, TemplateSet};
use crate::providers::{ChatProvider, ChatRequest, ChatTask, Image, Message};

/// Appended on the single re-ask after an unusable verdict.
pub const FORMAT_REMINDER: &str =
    "Please answer again using exactly the format 'The answer is image x', where x is one of the image numbers.";

/// Most contact sheets judged at once.
pub const MAX_VIDEO_JUDGE: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    /// 0-based.
    pub index: usize,
    /// Chat calls made: 0 for a forced choice, else 1 or 2.
    pub calls: usize,
    pub analysis: String,
}

/// Asks the chat model to pick one of `images`, re-asking once with a
/// format reminder if the verdict cannot be parsed or is out of range.
pub fn judge_select(
    template: TemplateId,
    images: &[Image],
    description: &str,
    chat: &dyn ChatProvider,
    templates: &TemplateSet,
) -> Result<JudgeOutcome, CurationError> {
    match images.len() {
        0 => return Err(CurationError::EmptyPool),
        1 => {
            return Ok(JudgeOutcome {
                index: 0,
                calls: 0,
                analysis: "single candidate".into(),
            })
        }
        n if n > chat.max_attachments() => {
            return Err(CurationError::TooManyCandidates {
                count: n,
                limit: chat.max_attachments(),
            })
        }
        _ => {}
    }
    let count = images.len().to_string();
    let context = slots([("description", description), ("count", &count)]);
    let prompt = templates.render(template, &context)?;
    let mut messages = vec![Message::user(prompt).with_images(images.to_vec())];
    let mut last_reply = String::new();
    for attempt in 1..=2 {
        let request = ChatRequest::new(ChatTask::Instruction(template), messages.clone(), context.clone());
        last_reply = chat.chat(&request)?;
        if let Ok(v) = parse_judge_verdict(&last_reply, images.len()) {
            return Ok(JudgeOutcome {
                index: v.chosen_index - 1,
                calls: attempt,
                analysis: v.analysis,
            });
        }
        messages.push(Message::assistant(last_reply.clone()));
        messages.push(Message::user(FORMAT_REMINDER));
    }
    Err(CurationError::JudgeFailed {
        attempts: 2,
        last_reply,
    })
}

pub fn judge_select_image(
    pool: &CandidatePool<Image>,
    description: &str,
    chat: &dyn ChatProvider,
    templates: &TemplateSet,
) -> Result<JudgeOutcome, CurationError> {
    judge_select(TemplateId::ImageJudge, pool.items(), description, chat, templates)
}

pub fn judge_select_video(
    top: &[ContactSheet],
    description: &str,
    chat: &dyn ChatProvider,
    templates: &TemplateSet,
) -> Result<JudgeOutcome, CurationError> {
    if top.is_empty() || top.len() > MAX_VIDEO_JUDGE {
        return Err(CurationError::BadJudgeCount {
            count: top.len(),
            max: MAX_VIDEO_JUDGE,
        });
    }
    let sheets: Vec<Image> = top.iter().map(|s| s.image.clone()).collect();
    judge_select(TemplateId::VideoJudge, &sheets, description, chat, templates)
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::curation::Provenance;
    use crate::providers::mock::{MockChat, MockChatKnobs};
    use crate::providers::ProviderError;

    struct Canned {
        replies: Mutex<Vec<String>>,
        calls: Mutex<usize>,
    }

    impl Canned {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                calls: Mutex::new(0),
            }
        }
    }

    impl ChatProvider for Canned {
        fn chat(&self, _: &ChatRequest) -> Result<String, ProviderError> {
            *self.calls.lock().unwrap() += 1;
            Ok(self.replies.lock().unwrap().pop().unwrap_or_default())
        }
    }

    fn pool(n: usize) -> CandidatePool<Image> {
        CandidatePool::new(
            (0..n).map(|i| Image::filled(4, 4, [i as u8 * 20, 1, 2])).collect(),
            Provenance::default(),
        )
        .unwrap()
    }

    #[test]
    fn verdict_is_converted_to_zero_based() {
        let chat = Canned::new(&["The answer is image 2. Nice."]);
        let out = judge_select_image(&pool(4), "a garden", &chat, &TemplateSet::builtin()).unwrap();
        assert_eq!((out.index, out.calls), (1, 1));
    }

    #[test]
    fn single_candidate_skips_the_judge() {
        let chat = Canned::new(&[]);
        let out = judge_select_image(&pool(1), "a garden", &chat, &TemplateSet::builtin()).unwrap();
        assert_eq!(out.index, 0);
        assert_eq!(*chat.calls.lock().unwrap(), 0);
    }

    #[test]
    fn one_re_ask_then_failure() {
        let chat = Canned::new(&["hmm", "The answer is image 9"]);
        let err = judge_select_image(&pool(3), "d", &chat, &TemplateSet::builtin()).unwrap_err();
        assert!(matches!(err, CurationError::JudgeFailed { attempts: 2, .. }));
        assert_eq!(*chat.calls.lock().unwrap(), 2);

        let chat = Canned::new(&["hmm", "The answer is image 3"]);
        let out = judge_select_image(&pool(3), "d", &chat, &TemplateSet::builtin()).unwrap();
        assert_eq!((out.index, out.calls), (2, 2));
    }

    #[test]
    fn mock_garbage_judge_fails() {
        let chat = MockChat::with_knobs(MockChatKnobs {
            garbage_judgements: usize::MAX,
            ..Default::default()
        });
        assert!(matches!(
            judge_select_image(&pool(4), "d", &chat, &TemplateSet::builtin()),
            Err(CurationError::JudgeFailed { .. })
        ));
    }

    #[test]
    fn video_judge_accepts_one_to_three_sheets() {
        let sheet = |v: u8| ContactSheet {
            image: Image::filled(10, 2, [v, 0, 0]),
            k: 5,
            source_frame_indices: vec![0, 1, 2, 3, 4],
        };
        let chat = MockChat::new();
        let t = TemplateSet::builtin();
        assert!(judge_select_video(&[], "d", &chat, &t).is_err());
        assert!(judge_select_video(&[sheet(1), sheet(2), sheet(3), sheet(4)], "d", &chat, &t).is_err());
        let out = judge_select_video(&[sheet(1), sheet(2), sheet(3)], "d", &chat, &t).unwrap();
        assert!(out.index < 3);
        assert_eq!(judge_select_video(&[sheet(1)], "d", &chat, &t).unwrap().calls, 0);
    }
}
