//! Plain aligned text tables.

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    /// Columns after the first are right-aligned.
    numeric_from: usize,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            numeric_from: 1,
        }
    }

    pub fn numeric_from(mut self, col: usize) -> Self {
        self.numeric_from = col;
        self
    }

    pub fn row<S: Into<String>>(&mut self, cells: impl IntoIterator<Item = S>) {
        self.rows.push(cells.into_iter().map(Into::into).collect());
    }

    /// `paint` may wrap a cell in escape codes; widths use the raw text.
    pub fn render_with(&self, paint: impl Fn(usize, usize, &str) -> String) -> String {
        let cols = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate().take(cols) {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
        let line = |cells: &[String], row: usize| -> String {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let pad = " ".repeat(widths[i].saturating_sub(c.chars().count()));
                    let painted = paint(row, i, c);
                    if i >= self.numeric_from {
                        format!("{pad}{painted}")
                    } else {
                        format!("{painted}{pad}")
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_owned()
        };
        let mut out = line(&self.header, usize::MAX);
        out.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            out.push_str(&line(row, r));
            out.push('\n');
        }
        out
    }

    #[cfg(test)]
    pub fn render(&self) -> String {
        self.render_with(|_, _, c| c.to_owned())
    }
}
