//! Cypher subset: parsing, rendering, static checks, direction rewriting,
//! masking and an embedded executor.

pub mod ast;
pub mod error;
pub mod exec;
pub mod lexer;
pub mod mask;
pub mod parser;
pub mod render;
pub mod rewrite;
pub mod validate;
pub mod value;

pub use ast::{Label, Query, RelKind};
pub use error::{ExecError, ParseError, ParseErrorCode};
pub use exec::{execute, execute_with, ExecOptions, ResultTable};
pub use mask::{
    find_smiles_literals, is_smiles_like, mask_question, mask_smiles, placeholder, unmask_smiles,
    MaskError, MaskMap,
};
pub use parser::{parse, parse_with_source_map};
pub use render::render;
pub use rewrite::{rewrite_directions, rewrite_text};
pub use validate::{explain, validate, Diagnostic, Schema, ValidationReport};
pub use value::Value;
