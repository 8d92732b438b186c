use std::fmt::Write as _;

/// One row per utterance: id, class label, then the pooled embedding.
pub fn embeddings_csv(rows: &[(String, String, Vec<f64>)]) -> String {
    let dim = rows.first().map_or(0, |r| r.2.len());
    let mut out = String::from("utterance_id,class");
    for i in 0..dim {
        let _ = write!(out, ",e{i}");
    }
    out.push('\n');
    for (id, class, e) in rows {
        out.push_str(id);
        out.push(',');
        out.push_str(class);
        for v in e {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}
