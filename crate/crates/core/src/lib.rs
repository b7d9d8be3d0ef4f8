pub mod concepts;
pub mod conllu;
pub mod disambiguate;
pub mod evaluate;
pub mod model;
pub mod normalize;
pub mod pipeline;
pub mod preprocess;
pub mod rules;
pub mod shared_units;
