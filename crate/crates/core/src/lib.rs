pub mod collision;
pub mod detector;
pub mod distribution;
pub mod md5;
pub mod stealth;
pub mod theory;
