//! Stream, model and configuration files.

mod config;
mod edgelist;
mod model_file;

pub use config::{parse_config, read_config, render_config, RunConfig, KEYS};
pub use edgelist::{
    parse_edge_keys, parse_edge_list, read_edge_keys, read_edge_list, write_edge_list, ParsedStream,
};
pub use model_file::{load_model, read_model, save_model, write_model, MAGIC, VERSION};
