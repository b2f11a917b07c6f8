use std::fmt::Write;

use super::{count_params, Model, ModelError};

/// Renders a per-sample channel-first shape in batch-first, channel-last
/// notation: `[512, 4, 4]` becomes `(None, 4, 4, 512)`.
pub fn format_shape(shape: &[usize]) -> String {
    let mut dims: Vec<String> = vec!["None".into()];
    match shape {
        [c, rest @ ..] if !rest.is_empty() => {
            dims.extend(rest.iter().map(usize::to_string));
            dims.push(c.to_string());
        }
        _ => dims.extend(shape.iter().map(usize::to_string)),
    }
    format!("({})", dims.join(", "))
}

/// Layer table with one row for the base and one per head layer, then the
/// trainable / non-trainable / total line.
pub fn summarize(m: &Model) -> Result<String, ModelError> {
    let counts = count_params(m)?;
    let rows: Vec<[String; 3]> = counts
        .per_layer
        .iter()
        .map(|r| {
            [
                format!("{} ({})", r.name, r.type_name),
                format_shape(&r.output_shape),
                r.params.to_string(),
            ]
        })
        .collect();
    let header = ["Layer (Type)".to_string(), "Output Shape".into(), "Param #".into()];
    let mut widths = [0usize; 3];
    for row in rows.iter().chain(std::iter::once(&header)) {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let rule = "-".repeat(widths.iter().sum::<usize>() + 4);
    let mut out = String::new();
    let line = |out: &mut String, row: &[String; 3]| {
        let _ = writeln!(
            out,
            "{:<w0$}  {:<w1$}  {:>w2$}",
            row[0],
            row[1],
            row[2],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        );
    };
    let _ = writeln!(out, "Model: \"{}\"", m.name);
    let _ = writeln!(out, "{rule}");
    line(&mut out, &header);
    let _ = writeln!(out, "{rule}");
    for row in &rows {
        line(&mut out, row);
    }
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "Total params: {}", counts.total);
    let _ = writeln!(out, "Trainable params: {}", counts.trainable);
    let _ = writeln!(out, "Non-trainable params: {}", counts.non_trainable);
    Ok(out)
}
