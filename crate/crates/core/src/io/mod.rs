pub mod csv;
pub mod tensor;
pub mod wav;
