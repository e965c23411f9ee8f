use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{compute_metrics, AnalyticsError, NarrativeMetrics};
use crate::domain::StoryBeat;

/// One story's metrics, keyed by its pairing id (the story directory name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub metrics: NarrativeMetrics,
}

#[derive(Deserialize)]
struct SessionBeats {
    #[serde(default)]
    beats: Vec<StoryBeat>,
}

fn corpus_error(path: &Path, message: impl ToString) -> AnalyticsError {
    AnalyticsError::Corpus {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Read one story directory: `story.txt`, plus beat settings from an
/// optional `session.json`.
pub fn load_story(dir: &Path) -> Result<(String, Vec<StoryBeat>), AnalyticsError> {
    let story_path = dir.join("story.txt");
    let text = std::fs::read_to_string(&story_path).map_err(|e| corpus_error(&story_path, e))?;
    let session_path = dir.join("session.json");
    let beats = match std::fs::read_to_string(&session_path) {
        Ok(json) => {
            serde_json::from_str::<SessionBeats>(&json)
                .map_err(|e| corpus_error(&session_path, e))?
                .beats
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(corpus_error(&session_path, e)),
    };
    Ok((text, beats))
}

/// Load a corpus: a directory of story directories, each holding
/// `story.txt` and optionally `session.json`. A directory that itself holds
/// `story.txt` is a one-story corpus. Entries are sorted by id.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>, AnalyticsError> {
    let mut stories: Vec<(String, PathBuf)> = Vec::new();
    if dir.join("story.txt").is_file() {
        let id = dir
            .file_name()
            .map_or_else(|| "story".to_owned(), |n| n.to_string_lossy().into_owned());
        stories.push((id, dir.to_path_buf()));
    } else {
        for item in std::fs::read_dir(dir).map_err(|e| corpus_error(dir, e))? {
            let path = item.map_err(|e| corpus_error(dir, e))?.path();
            if path.join("story.txt").is_file() {
                let id = path.file_name().expect("entry has a name").to_string_lossy().into_owned();
                stories.push((id, path));
            }
        }
    }
    if stories.is_empty() {
        return Err(corpus_error(dir, "no story directories with a story.txt"));
    }
    stories.sort();

    // Stories are independent; measure them in parallel, merge in id order.
    std::thread::scope(|scope| {
        let handles: Vec<_> = stories
            .iter()
            .map(|(id, path)| {
                scope.spawn(move || {
                    let (text, beats) = load_story(path)?;
                    Ok(CorpusEntry {
                        id: id.clone(),
                        metrics: compute_metrics(&text, &beats),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("metrics worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_sorted_story_directories() {
        let dir = tempfile::tempdir().unwrap();
        for (id, text) in [("p2", "Two words."), ("p1", "\"Just one line here.\"")] {
            std::fs::create_dir(dir.path().join(id)).unwrap();
            std::fs::write(dir.path().join(id).join("story.txt"), text).unwrap();
        }
        std::fs::write(
            dir.path().join("p1").join("session.json"),
            r#"{"beats":[{"setting":{"location":"the mill","time":"noon"},"characters":["A"],"key_events":["a","b","c"]}],"other":1}"#,
        )
        .unwrap();
        std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["p1", "p2"]);
        assert_eq!(corpus[0].metrics.dialogue_ratio, 1.0);
        assert_eq!(corpus[0].metrics.location_count, 1);
        assert_eq!(corpus[1].metrics.word_count, 2);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(AnalyticsError::Corpus { .. })));
    }
}
