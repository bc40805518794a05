//! Static HTML pages for attribution reports: red for positive word
//! attributions, blue for negative, opacity proportional to magnitude.

use digrad_core::attribution::ReportRecord;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One self-contained page per record: the highlighted sentence, the
/// predicted label, and the method metadata. No scripts.
pub fn render_html(record: &ReportRecord) -> String {
    let max_abs = record
        .per_word
        .iter()
        .fold(0.0f64, |acc, a| acc.max(a.abs()));
    let mut spans = String::new();
    for (token, &attr) in record.tokens.iter().zip(&record.per_word) {
        let style = if max_abs > 0.0 && attr != 0.0 {
            let opacity = attr.abs() / max_abs;
            let color = if attr > 0.0 {
                format!("rgba(214,39,40,{opacity:.3})")
            } else {
                format!("rgba(31,119,180,{opacity:.3})")
            };
            format!(" style=\"background-color:{color}\"")
        } else {
            String::new()
        };
        spans.push_str(&format!(
            "<span class=\"word\"{style} title=\"{attr:.6}\">{}</span> ",
            escape(token)
        ));
    }
    let wae = record
        .wae
        .map(|w| format!("{w:.4}"))
        .unwrap_or_else(|| "-".to_string());
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <title>sentence {idx} / {method}</title>\n\
         <style>\n\
         body {{ font-family: sans-serif; margin: 2em; }}\n\
         .word {{ padding: 0.1em 0.15em; border-radius: 3px; }}\n\
         .meta {{ color: #555; font-size: 0.9em; }}\n\
         </style>\n</head>\n<body>\n\
         <p class=\"meta\">method: {method} | predicted label: {predicted} | \
         f(x)={fx:.4} f(x')={fb:.4} | delta%={delta:.3} | wae={wae} | \
         m={m} f={f} seed={seed}</p>\n\
         <p class=\"sentence\">{spans}</p>\n\
         </body>\n</html>\n",
        idx = record.sentence_index,
        method = record.method,
        predicted = record.predicted,
        fx = record.f_input,
        fb = record.f_baseline,
        delta = record.delta_percent,
        wae = wae,
        m = record.steps,
        f = record.upsample_factor,
        seed = record.seed,
        spans = spans.trim_end(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use digrad_core::attribution::Method;

    fn record(per_word: Vec<f64>, tokens: Vec<&str>) -> ReportRecord {
        ReportRecord {
            sentence_index: 0,
            tokens: tokens.into_iter().map(String::from).collect(),
            method: Method::Ig,
            predicted: 1,
            target: 1,
            per_word,
            f_input: 0.9,
            f_baseline: 0.5,
            delta_percent: 1.0,
            wae: Some(0.3),
            steps: 30,
            upsample_factor: 0,
            neighborhood_k: None,
            seed: 42,
        }
    }

    #[test]
    fn zero_attributions_render_without_highlights() {
        let html = render_html(&record(vec![0.0, 0.0], vec!["dull", "film"]));
        assert!(!html.contains("background-color"));
        assert!(html.contains("predicted label: 1"));
        assert!(html.contains("dull"));
    }

    #[test]
    fn single_word_gets_full_opacity_red() {
        let html = render_html(&record(vec![1.0], vec!["good"]));
        assert!(html.contains("rgba(214,39,40,1.000)"));
    }

    #[test]
    fn mixed_signs_render_both_hues() {
        let html = render_html(&record(vec![0.5, -0.25], vec!["good", "bad"]));
        assert!(html.contains("rgba(214,39,40,1.000)"));
        assert!(html.contains("rgba(31,119,180,0.500)"));
    }

    #[test]
    fn tokens_are_escaped() {
        let html = render_html(&record(vec![0.1], vec!["<script>"]));
        assert!(html.contains("&lt;script&gt;"));
        assert!(!html.contains("<script>"));
    }
}
