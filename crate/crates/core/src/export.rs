//! Story exports. Both views cover the draft only; the brainstorm log is
//! left out so side conversations never change an export.

use crate::domain::StorySession;

/// The story prose followed by a newline.
pub fn export_text(session: &StorySession) -> String {
    let mut text = session.story_text();
    text.push('\n');
    text
}

/// Pretty session JSON without the brainstorm log.
pub fn export_json(session: &StorySession) -> String {
    let mut value = serde_json::to_value(session).expect("session serializes");
    if let Some(map) = value.as_object_mut() {
        map.remove("brainstorm");
    }
    let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ChatRole, ChatTurn, SessionId, Sparkle};

    #[test]
    fn brainstorm_is_not_exported() {
        let mut s = StorySession::new(SessionId::new("x").unwrap(), Sparkle::new("A kite.").unwrap()).unwrap();
        let before = export_json(&s);
        s.brainstorm.push(ChatTurn {
            role: ChatRole::User,
            content: "hi".into(),
        });
        assert_eq!(export_json(&s), before);
        assert!(!before.contains("brainstorm"));
    }
}
