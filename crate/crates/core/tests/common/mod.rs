pub mod pushback_oracle;
