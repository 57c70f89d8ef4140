mod lexer;
mod parser;

pub(crate) use parser::{parse, Raw};
