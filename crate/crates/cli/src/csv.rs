//! Minimal CSV rendering: a leading comment line, a header, and rows of
//! numbers printed with 17 significant digits.

use std::fmt::Write;

#[derive(Debug, Clone, Copy)]
pub enum Cell {
    F(f64),
    U(usize),
    B(bool),
    S(&'static str),
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::F(x) if x.is_nan() => out.push_str("nan"),
            Cell::F(x) if x.is_infinite() => out.push_str(if *x > 0.0 { "inf" } else { "-inf" }),
            Cell::F(x) => write!(out, "{x:.16e}").unwrap(),
            Cell::U(n) => write!(out, "{n}").unwrap(),
            Cell::B(b) => out.push_str(if *b { "true" } else { "false" }),
            Cell::S(s) => out.push_str(s),
        }
    }
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(comment: String) -> Self {
        Self {
            text: format!("# {comment}\n"),
        }
    }

    pub fn header(&mut self, cols: &[&str]) {
        self.text.push_str(&cols.join(","));
        self.text.push('\n');
    }

    pub fn row(&mut self, cells: &[Cell]) {
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            c.render(&mut self.text);
        }
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}
