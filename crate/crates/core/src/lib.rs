//! Offline audit pipeline for analysis trains: syntax graphs, static
//! analysis, supply-chain scanning, policy checks, the accept/reject
//! decision and the audit report.

pub mod code_graph;
pub mod decision;
pub mod model;
pub mod policy;
pub mod report;
pub mod runtime;
pub mod static_analysis;
pub mod supply_chain;
pub mod vuln_db;
