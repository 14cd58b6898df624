pub mod alloc_meter;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod fault;
pub mod page;
pub mod policy;
pub mod selector;
pub mod table;
pub mod writeback;
pub mod workload;
pub mod trace;
pub mod report;
