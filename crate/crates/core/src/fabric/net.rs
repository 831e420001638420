// placeholder
pub struct Fabric;
