//! Hosts the `acceptance` test target, which runs the seeded field protocol against
//! the reference planners and reports one verdict per criterion.
