mod common;

use common::*;
use dynjoin_core::gmr::Hyperedge;
use dynjoin_core::gyo::{build_plan, classify, ForestTriplet, HypergraphTriplet, Verdict};
use dynjoin_core::query::{parse, Gcq};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

fn reduce_randomly(h: &HypergraphTriplet, rng: &mut ChaCha8Rng) -> HypergraphTriplet {
    let mut cur = h.clone();
    loop {
        let steps = cur.applicable_steps();
        let Some(step) = steps.choose(rng) else { return cur };
        cur = cur.apply(step).unwrap();
    }
}

#[test]
fn reduction_order_does_not_matter() {
    let mut rng = rng(1);
    for _ in 0..200 {
        let h = random_triplet(&mut rng);
        let nf = h.normal_form();
        for _ in 0..5 {
            assert_eq!(reduce_randomly(&h, &mut rng), nf, "{h:?}");
        }
    }
}

#[test]
fn without_predicates_and_outputs_reduction_is_classical_gyo() {
    let mut rng = rng(2);
    for _ in 0..300 {
        let h = random_triplet(&mut rng);
        let edges: Vec<Hyperedge> = h.edges.iter().cloned().collect();
        let plain = HypergraphTriplet::new(edges.clone(), Hyperedge::empty(), []);
        assert_eq!(plain.normal_form().is_empty(), classical_gyo_acyclic(&edges), "{edges:?}");
    }
}

#[test]
fn classification_agrees_with_classical_gyo_on_equijoins() {
    let mut rng = rng(3);
    for _ in 0..300 {
        let h = random_triplet(&mut rng);
        let atoms: Vec<String> = h
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| format!("r{i}({})", e.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(",")))
            .collect();
        let q = parse(&format!("SELECT * FROM {}", atoms.join(", "))).unwrap();
        let edges: Vec<Hyperedge> = h.edges.iter().cloned().collect();
        assert_eq!(classify(&q) != Verdict::Cyclic, classical_gyo_acyclic(&edges), "{q}");
    }
}

#[test]
fn enacting_a_step_on_a_forest_commutes_with_applying_it() {
    let mut rng = rng(4);
    for _ in 0..150 {
        let q = random_acyclic_query(&mut rng, 4, 3, 9);
        let mut f = ForestTriplet::of_query(&q);
        loop {
            let h = f.hypertrip();
            let steps = h.applicable_steps();
            let Some(step) = steps.choose(&mut rng) else { break };
            let g = f.enact(step).unwrap();
            assert_eq!(g.hypertrip(), h.apply(step).unwrap(), "{q}");
            assert!(g.tree.preds().is_subset(q.preds()));
            f = g;
        }
    }
}

#[test]
fn planner_output_is_binary_sibling_closed_and_covers_the_output() {
    let mut rng = rng(5);
    for _ in 0..200 {
        let q = random_acyclic_query(&mut rng, 4, 3, 9);
        let pair = build_plan(&q).unwrap();
        assert!(pair.tree.is_gjt_for(&q), "{q}\n{}", pair.tree);
        assert!(pair.is_connex() && pair.is_sibling_closed() && pair.is_binary());
        match classify(&q) {
            Verdict::FreeConnex => assert!(pair.is_compatible(&q)),
            Verdict::Acyclic { minimal_out } => {
                assert_eq!(pair.connex_vars(), minimal_out);
                assert!(q.out().is_subset(&minimal_out));
            }
            Verdict::Cyclic => unreachable!(),
        }
    }
}

fn shape(name: &str) -> Gcq {
    let text = match name {
        "q1" => "SELECT * FROM R(a,b,c), S(d,e,f) WHERE a < d",
        "q2" => "SELECT * FROM R(a,b,c,k), S(d,e,f,k) WHERE a < d",
        "q3" => "SELECT * FROM R(a,b,c), S(d,e,f), T(g,h,i) WHERE a < d AND e < g",
        "q4" => "SELECT * FROM R(a,b,c), S(d,e,f), T(g,h,i) WHERE a < d AND d < g",
        "q5" => "SELECT * FROM R(a,b,c,k), S(d,e,f,k), T(g,h,i) WHERE a < d AND d < g",
        "q6" => "SELECT * FROM R(a,b,c), S(d,e,f,k), T(g,h,i,k) WHERE a < d AND d < g",
        "q7" => "SELECT a,b,d,e,f,g,h FROM R(a,b,c), S(d,e,f), T(g,h,i) WHERE a < d AND d < g",
        "q8" => "SELECT a,d,e,f,g,h,k FROM R(a,b,c,k), S(d,e,f,k), T(g,h,i) WHERE a < d AND d < g",
        "q9" => "SELECT d,e,f,g,h,k FROM R(a,b,c), S(d,e,f,k), T(g,h,i,k) WHERE a < d AND d < g",
        "q10" => "SELECT b,c,e,f,h,i FROM R(a,b,c), S(d,e,f), T(g,h,i) WHERE a < d AND d < g",
        "q11" => "SELECT b,c,e,f,h,i FROM R(a,b,c,k), S(d,e,f,k), T(g,h,i) WHERE a < d AND d < g",
        "q12" => "SELECT b,c,e,f,h,i FROM R(a,b,c), S(d,e,f,k), T(g,h,i,k) WHERE a < d AND d < g",
        _ => unreachable!(),
    };
    parse(text).unwrap()
}

#[test]
fn benchmark_shapes_classify_as_expected() {
    for i in 1..=9 {
        assert_eq!(classify(&shape(&format!("q{i}"))), Verdict::FreeConnex, "q{i}");
    }
    for i in 10..=12 {
        assert!(matches!(classify(&shape(&format!("q{i}"))), Verdict::Acyclic { .. }), "q{i}");
    }
    let q1 = "FROM r(x,y), s(y,z,w), t(u,v) WHERE x < z AND w < u";
    assert_eq!(classify(&parse(&format!("SELECT y,z,w,u {q1}")).unwrap()), Verdict::FreeConnex);
    assert_eq!(
        classify(&parse(&format!("SELECT x,u {q1}")).unwrap()),
        Verdict::Acyclic {
            minimal_out: Hyperedge::new(["u", "w", "x", "y", "z"])
        }
    );
    assert_eq!(classify(&parse("SELECT * FROM r(x,y), s(y,z), t(x,z)").unwrap()), Verdict::Cyclic);
}
