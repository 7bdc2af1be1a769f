//! Pipe-table Markdown parsing and rendering.

/// A pipe table with raw (untrimmed-free) cell strings. Row and column
/// addresses used elsewhere are 1-based with the header as row 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MdTable {
    pub fn width(&self) -> usize {
        self.header.len()
    }

    /// Cell at 1-based data row `row` and 1-based column `col`.
    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        if row == 0 || col == 0 {
            return None;
        }
        self.rows.get(row - 1)?.get(col - 1).map(String::as_str)
    }

    pub fn render(&self) -> String {
        render_rows(&self.header, self.rows.iter().map(|r| r.as_slice()))
    }
}

fn escape(cell: &str) -> String {
    cell.replace('|', "\\|").replace('\n', " ")
}

pub fn render_rows<'a>(header: &[String], rows: impl Iterator<Item = &'a [String]>) -> String {
    let mut out = String::new();
    out.push_str("| ");
    out.push_str(&header.iter().map(|h| escape(h)).collect::<Vec<_>>().join(" | "));
    out.push_str(" |\n|");
    out.push_str(&vec!["---"; header.len()].join("|"));
    out.push_str("|\n");
    for row in rows {
        out.push_str("| ");
        out.push_str(&row.iter().map(|c| escape(c)).collect::<Vec<_>>().join(" | "));
        out.push_str(" |\n");
    }
    out
}

/// Split a `| a | b |` line into trimmed cells, honouring `\|` escapes.
pub fn split_row(line: &str) -> Vec<String> {
    let line = line.trim();
    let inner = line.strip_prefix('|').unwrap_or(line);
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = inner.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' if chars.peek() == Some(&'|') => {
                cur.push('|');
                chars.next();
            }
            '|' => {
                cells.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        cells.push(cur.trim().to_string());
    }
    cells
}

fn is_separator(line: &str) -> bool {
    let cells = split_row(line);
    !cells.is_empty()
        && cells.iter().all(|c| {
            let c = c.trim();
            let core = c.trim_start_matches(':').trim_end_matches(':');
            !core.is_empty() && core.chars().all(|ch| ch == '-')
        })
}

fn is_table_line(line: &str) -> bool {
    line.trim_start().starts_with('|')
}

/// Every pipe table in `text`, in order. Blank lines inside a table are
/// skipped; a new header/separator pair starts a new table.
pub fn parse_tables(text: &str) -> Vec<MdTable> {
    let lines: Vec<&str> = text.lines().collect();
    let mut tables = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let next_table_line = |from: usize| (from..lines.len()).find(|&k| !lines[k].trim().is_empty());
        if !(is_table_line(lines[i])) {
            i += 1;
            continue;
        }
        let Some(sep) = next_table_line(i + 1).filter(|&k| is_table_line(lines[k]) && is_separator(lines[k])) else {
            i += 1;
            continue;
        };
        let header = split_row(lines[i]);
        let mut rows = Vec::new();
        let mut j = sep + 1;
        loop {
            let Some(k) = next_table_line(j) else {
                j = lines.len();
                break;
            };
            if !is_table_line(lines[k]) {
                j = k;
                break;
            }
            // A header row followed by a separator opens the next table.
            if let Some(after) = next_table_line(k + 1) {
                if is_table_line(lines[after]) && is_separator(lines[after]) {
                    j = k;
                    break;
                }
            }
            if !is_separator(lines[k]) {
                rows.push(split_row(lines[k]));
            }
            j = k + 1;
        }
        tables.push(MdTable { header, rows });
        i = j;
    }
    tables
}

pub fn parse_table(text: &str) -> Option<MdTable> {
    parse_tables(text).into_iter().next()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRECIP: &str = "| Date       | Precipitation (mm)  | Type          |\n\
|------------|---------------------|---------------|\n\
| 2023-01-01 | 5.0                 | Rain          |\n\
| 2023-01-02 | 12.3                | Rain          |\n\
| 2023-01-03 | 0.0                 | None          |\n\
| 2023-01-04 | 8.5                 | Rain          |\n\
| 2023-01-05 | 15.0                | Snow/Rain Mix |\n";

    #[test]
    fn parses_header_rows_and_cells() {
        let t = parse_table(PRECIP).unwrap();
        assert_eq!(t.header, ["Date", "Precipitation (mm)", "Type"]);
        assert_eq!(t.rows.len(), 5);
        assert_eq!(t.cell(2, 2), Some("12.3"));
        assert_eq!(t.cell(5, 3), Some("Snow/Rain Mix"));
        assert_eq!(t.cell(0, 1), None);
        assert_eq!(t.cell(6, 1), None);
    }

    #[test]
    fn blank_lines_inside_a_table_are_tolerated() {
        let spaced = PRECIP.replace("|\n", "|\n\n");
        assert_eq!(parse_tables(&spaced), parse_tables(PRECIP));
    }

    #[test]
    fn adjacent_tables_split_on_new_header() {
        let text = "| a | b |\n|---|---|\n| 1 | 2 |\n| c |\n|:-:|\n| 3 |\n";
        let tables = parse_tables(text);
        assert_eq!(tables.len(), 2);
        assert_eq!(tables[1].header, ["c"]);
        assert_eq!(tables[1].rows, vec![vec!["3".to_string()]]);
    }

    #[test]
    fn render_then_parse_roundtrip() {
        let t = MdTable {
            header: vec!["x|y".into(), "z".into()],
            rows: vec![vec!["1".into(), "".into()], vec!["NaN".into(), "2.5".into()]],
        };
        assert_eq!(parse_table(&t.render()).unwrap(), t);
    }

    #[test]
    fn prose_is_not_a_table() {
        assert!(parse_tables("no | table here\njust text").is_empty());
        assert!(parse_tables("| lonely header |\nnot a separator").is_empty());
    }
}
