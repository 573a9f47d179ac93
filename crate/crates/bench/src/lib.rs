//! Shared fixtures for the benchmarks.

use fda_ggann_core::corpus::DEFAULT_TEMPLATES;
use fda_ggann_core::frontend::parse_source;
use fda_ggann_core::graph::{build_fda, FdaGraph};

/// The golden two-function program used across benchmarks.
pub const GOLDEN: &str = "int Foo(int m){ return m + 1; } int add(int m){ int x = Foo(m); int y = x + 3; y = y * 2; return y; }";

/// One FDA graph per default template.
pub fn template_graphs() -> Vec<FdaGraph> {
    DEFAULT_TEMPLATES
        .iter()
        .map(|(name, src)| build_fda(&parse_source(src).unwrap(), *name).unwrap())
        .collect()
}
