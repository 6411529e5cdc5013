//! Residual classifier family used for every experiment arm.

pub mod checkpoint;
pub mod resnet;
pub mod width;

pub use resnet::{backbone_param_count, ForwardCache, ForwardResult, MdlModel, TaskId};
pub use width::{group_count, norm_groups, WidthConfig};
