//! Holds the `acceptance` test target; run it with
//! `cargo test -p stressmon-acceptance --test acceptance`.
