//! Central finite-difference checks of every block, both fusion modules and the loss.
//!
//! cargo run --release --example gradcheck -- [block|module|network]

use neurovasc::verify::{format_table, run_scope, Scope};

fn main() -> neurovasc::Result<()> {
    let scopes = match std::env::args().nth(1) {
        Some(s) => vec![s.parse::<Scope>()?],
        None => vec![Scope::Block, Scope::Module],
    };
    for scope in scopes {
        print!("{}", format_table(&run_scope(scope)));
    }
    Ok(())
}
