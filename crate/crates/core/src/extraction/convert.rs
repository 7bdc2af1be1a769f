//! Image parts to text: tables become Markdown grids, figures become bullets.

use std::path::Path;

use thiserror::Error;

use super::markdown::{parse_tables, MdTable};
use super::{ConvertedPart, Origin};
use crate::gateway::{AgentRequest, Gateway, GatewayError, Part, RequestTag};
use crate::{prompts, reply};

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("image file {0} does not exist")]
    MissingImage(String),
    #[error("reply contains no Markdown table")]
    NoTableFound,
    #[error("table conversion failed after a re-ask: {0}")]
    ConversionFailure(String),
    #[error("figure summary failed after a re-ask: {0}")]
    SummaryFailure(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn image_request(tag: RequestTag, system: String, image: &Path, caption: &str) -> AgentRequest {
    AgentRequest::vision(
        tag,
        system,
        vec![
            Part::Text(format!("Caption: {caption}")),
            Part::Image {
                path: image.to_path_buf(),
                caption: caption.to_string(),
            },
        ],
    )
}

/// Split a conversion reply into parts. Tables inside fenced blocks are
/// preferred; otherwise pipe tables anywhere in the reply are used. The n-th
/// title/footnote block belongs to the n-th table.
pub fn parse_conversion(text: &str, table_id: &str, caption: &str) -> Result<Vec<ConvertedPart>, ConvertError> {
    let mut tables: Vec<MdTable> = reply::fenced_blocks(text)
        .into_iter()
        .flat_map(parse_tables)
        .collect();
    if tables.is_empty() {
        tables = parse_tables(text);
    }
    tables.retain(|t| t.width() > 0);
    if tables.is_empty() {
        return Err(ConvertError::NoTableFound);
    }
    let titles = reply::delimited_blocks(text, "Title");
    let footnotes = reply::delimited_blocks(text, "Footnote");
    let many = tables.len() > 1;
    Ok(tables
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let title = titles
                .get(i)
                .filter(|s| !s.is_empty())
                .cloned()
                .unwrap_or_else(|| caption.trim().to_string());
            let title = if title.is_empty() { format!("Table {table_id}") } else { title };
            let footnote = footnotes
                .get(i)
                .filter(|s| !s.is_empty())
                .cloned()
                .unwrap_or_else(|| format!("Columns: {}.", t.header.join("; ")));
            ConvertedPart {
                part_id: if many {
                    format!("table:{table_id}#{}", i + 1)
                } else {
                    format!("table:{table_id}")
                },
                origin: Origin::TableImage,
                body: t.render(),
                title,
                footnote,
            }
        })
        .collect())
}

pub fn convert_table_image(
    gateway: &Gateway,
    image: &Path,
    table_id: &str,
    caption: &str,
    topic: &str,
) -> Result<Vec<ConvertedPart>, ConvertError> {
    if !image.is_file() {
        return Err(ConvertError::MissingImage(image.display().to_string()));
    }
    let base = image_request(
        RequestTag::TableConvert,
        prompts::fill(prompts::TABLE_CONVERT_SYSTEM, topic),
        image,
        caption,
    );
    let first = gateway.complete(&base)?;
    match parse_conversion(&first.raw_text, table_id, caption) {
        Ok(parts) => Ok(parts),
        Err(ConvertError::NoTableFound) => {
            log::warn!("table {table_id}: no table in reply, re-asking");
            let second = gateway.complete(&base.with_addendum(prompts::TABLE_CONVERT_REASK))?;
            parse_conversion(&second.raw_text, table_id, caption)
                .map_err(|e| ConvertError::ConversionFailure(e.to_string()))
        }
        Err(e) => Err(e),
    }
}

/// Bullet lines of a reply, normalised to `- ` markers.
pub fn parse_bullets(text: &str) -> Option<String> {
    let bullets: Vec<String> = reply::unfence(text)
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            ["- ", "* ", "• "]
                .iter()
                .find_map(|m| l.strip_prefix(m))
                .map(|rest| format!("- {}", rest.trim()))
        })
        .collect();
    (!bullets.is_empty()).then(|| bullets.join("\n"))
}

pub fn summarize_figure(
    gateway: &Gateway,
    image: &Path,
    figure_id: &str,
    caption: &str,
    topic: &str,
) -> Result<ConvertedPart, ConvertError> {
    if !image.is_file() {
        return Err(ConvertError::MissingImage(image.display().to_string()));
    }
    let base = image_request(
        RequestTag::FigureSummary,
        prompts::fill(prompts::FIGURE_SUMMARY_SYSTEM, topic),
        image,
        caption,
    );
    let part = |body: String| ConvertedPart {
        part_id: format!("figure:{figure_id}"),
        origin: Origin::FigureImage,
        body,
        title: caption.trim().to_string(),
        footnote: String::new(),
    };
    let first = match gateway.complete(&base) {
        Ok(r) => Some(r.raw_text),
        Err(GatewayError::EmptyResponse) => None,
        Err(e) => return Err(e.into()),
    };
    if let Some(body) = first.as_deref().and_then(parse_bullets) {
        return Ok(part(body));
    }
    log::warn!("figure {figure_id}: no bullet list in reply, re-asking");
    match gateway.complete(&base.with_addendum(prompts::FIGURE_SUMMARY_REASK)) {
        Ok(r) => parse_bullets(&r.raw_text)
            .map(part)
            .ok_or_else(|| ConvertError::SummaryFailure("reply has no bullet list".into())),
        Err(GatewayError::EmptyResponse) => Err(ConvertError::SummaryFailure("empty reply".into())),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedMock;
    use std::sync::Arc;

    pub(crate) const PRECIP_REPLY: &str = "```markdown\n\
| Date       | Precipitation (mm)  | Type          |\n\
|------------|---------------------|---------------|\n\
| 2023-01-01 | 5.0                 | Rain          |\n\
| 2023-01-02 | 12.3                | Rain          |\n\
| 2023-01-03 | 0.0                 | None          |\n\
| 2023-01-04 | 8.5                 | Rain          |\n\
| 2023-01-05 | 15.0                | Snow/Rain Mix |\n\
```\n\
[The Start of Title]\nPrecipitation Records in the New York Area.\n[The End of Title]\n\
[The Start of Footnote]\nDate is the day of observation; Precipitation (mm) is the daily total; Type is the form of precipitation.\n[The End of Footnote]\n";

    #[test]
    fn single_table_with_title_and_footnote() {
        let parts = parse_conversion(PRECIP_REPLY, "T1", "caption").unwrap();
        assert_eq!(parts.len(), 1);
        let p = &parts[0];
        assert_eq!(p.part_id, "table:T1");
        assert_eq!(p.title, "Precipitation Records in the New York Area.");
        assert!(p.footnote.starts_with("Date is"));
        let grid = p.grid().unwrap();
        assert_eq!(grid.width(), 3);
        assert_eq!(grid.cell(2, 2), Some("12.3"));
    }

    #[test]
    fn two_fenced_tables_share_a_prefix() {
        let text = "```markdown\n| a | b |\n|---|---|\n| 1 | 2 |\n```\ntext\n```markdown\n| c |\n|---|\n| 3 |\n```\n";
        let parts = parse_conversion(text, "T2", "Two tables").unwrap();
        let ids: Vec<_> = parts.iter().map(|p| p.part_id.as_str()).collect();
        assert_eq!(ids, ["table:T2#1", "table:T2#2"]);
        assert!(parts.iter().all(|p| !p.title.is_empty() && !p.footnote.is_empty()));
    }

    #[test]
    fn prose_has_no_table() {
        assert!(matches!(
            parse_conversion("The image shows a chart.", "T1", ""),
            Err(ConvertError::NoTableFound)
        ));
    }

    #[test]
    fn figure_summary_replay_and_failure() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("f1.png");
        std::fs::write(&img, b"figure bytes").unwrap();
        let request = image_request(
            RequestTag::FigureSummary,
            prompts::fill(prompts::FIGURE_SUMMARY_SYSTEM, "air"),
            &img,
            "Trends",
        );
        let mut mock = ScriptedMock::new();
        mock.register_for(&request, "- PM2.5 fell 10%\n- NO2 flat\n* Ozone rose 3 ppb")
            .unwrap();
        let gw = Gateway::new(Arc::new(mock));
        let a = summarize_figure(&gw, &img, "F1", "Trends", "air").unwrap();
        let b = summarize_figure(&gw, &img, "F1", "Trends", "air").unwrap();
        assert_eq!(a.body.lines().count(), 3);
        assert_eq!(a, b);

        let mut empty = ScriptedMock::new();
        empty.register_for(&request, "").unwrap();
        empty
            .register_for(&request.with_addendum(prompts::FIGURE_SUMMARY_REASK), "")
            .unwrap();
        let gw = Gateway::new(Arc::new(empty));
        assert!(matches!(
            summarize_figure(&gw, &img, "F1", "Trends", "air"),
            Err(ConvertError::SummaryFailure(_))
        ));
    }
}
