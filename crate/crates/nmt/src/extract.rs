//! Sentence-pair extraction from saved bilingual HTML pages. Each page
//! holds aligned source and target segments addressed by CSS selectors.

use scraper::{Html, Selector};

use crate::error::{config_error, Result};

fn selector(css: &str) -> Result<Selector> {
    Selector::parse(css).map_err(|e| config_error(format!("bad CSS selector `{css}`: {e}")))
}

/// Text of every element matching `css`, with internal whitespace
/// collapsed to single spaces.
pub fn extract_segments(html: &str, css: &str) -> Result<Vec<String>> {
    let doc = Html::parse_document(html);
    let sel = selector(css)?;
    Ok(doc
        .select(&sel)
        .map(|el| {
            el.text()
                .collect::<String>()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect())
}

/// Aligned `(source, target)` pairs. A page whose selectors match different
/// numbers of elements cannot be aligned and is rejected.
pub fn extract_pairs(html: &str, src_css: &str, tgt_css: &str) -> Result<Vec<(String, String)>> {
    let src = extract_segments(html, src_css)?;
    let tgt = extract_segments(html, tgt_css)?;
    if src.len() != tgt.len() {
        return Err(config_error(format!(
            "page has {} source and {} target segments",
            src.len(),
            tgt.len()
        )));
    }
    Ok(src.into_iter().zip(tgt).collect())
}
