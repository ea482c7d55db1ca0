//! The twelve benchmark query shapes. Q1 to Q6 are full inequality joins over
//! two or three relations, Q7 to Q9 free-connex projections of Q4 to Q6, and
//! Q10 to Q12 projections of the same that are not free-connex.

use dynjoin_core::query::{parse, Gcq};

pub const SHAPES: [(&str, &str); 12] = [
    ("q1", "SELECT * FROM R(a,b,c), S(d,e,f) WHERE a < d"),
    ("q2", "SELECT * FROM R(a,b,c,k), S(d,e,f,k) WHERE a < d"),
    ("q3", "SELECT * FROM R(a,b,c), S(d,e,f), T(g,h,i) WHERE a < d AND e < g"),
    ("q4", "SELECT * FROM R(a,b,c), S(d,e,f), T(g,h,i) WHERE a < d AND d < g"),
    ("q5", "SELECT * FROM R(a,b,c,k), S(d,e,f,k), T(g,h,i) WHERE a < d AND d < g"),
    ("q6", "SELECT * FROM R(a,b,c), S(d,e,f,k), T(g,h,i,k) WHERE a < d AND d < g"),
    ("q7", "SELECT a,b,d,e,f,g,h FROM R(a,b,c), S(d,e,f), T(g,h,i) WHERE a < d AND d < g"),
    (
        "q8",
        "SELECT a,d,e,f,g,h,k FROM R(a,b,c,k), S(d,e,f,k), T(g,h,i) WHERE a < d AND d < g",
    ),
    (
        "q9",
        "SELECT d,e,f,g,h,k FROM R(a,b,c), S(d,e,f,k), T(g,h,i,k) WHERE a < d AND d < g",
    ),
    ("q10", "SELECT b,c,e,f,h,i FROM R(a,b,c), S(d,e,f), T(g,h,i) WHERE a < d AND d < g"),
    (
        "q11",
        "SELECT b,c,e,f,h,i FROM R(a,b,c,k), S(d,e,f,k), T(g,h,i) WHERE a < d AND d < g",
    ),
    (
        "q12",
        "SELECT b,c,e,f,h,i FROM R(a,b,c), S(d,e,f,k), T(g,h,i,k) WHERE a < d AND d < g",
    ),
];

pub fn shape_text(name: &str) -> Option<&'static str> {
    SHAPES.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, t)| *t)
}

pub fn shape(name: &str) -> Option<Gcq> {
    shape_text(name).map(|t| parse(t).expect("shapes parse"))
}
