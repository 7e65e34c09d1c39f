//! Logical planning: binding view queries to typed operator trees.

pub mod eval;
pub mod logical;
pub mod planner;

pub use eval::eval_plan;
pub use logical::{classify, LogicalPlan, QueryClass, ScanSource, HIDDEN_COUNT};
pub use planner::{bind_expr, plan_select, TableCatalog};
