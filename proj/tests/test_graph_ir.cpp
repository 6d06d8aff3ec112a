#include "doctest.h"

#include "vtelim/graph_ir.hpp"

using namespace vtelim;

namespace {

const char* kTinyGraph = R"({
  "tensors": [
    {"id": "x", "shape": [2, 3], "dtype": "f64", "kind": "input"},
    {"id": "y", "shape": [2, 3], "dtype": "f64", "kind": "output"}
  ],
  "nodes": [
    {"id": "t0", "kind": "Transpose", "attrs": {"perm": [0, 1]}, "inputs": ["x"], "outputs": ["y"]}
  ]
})";

}  // namespace

TEST_CASE("parse a single-node identity transpose graph") {
    CompGraph g = parse_graph(kTinyGraph);
    CHECK(g.nodes().size() == 1);
    CHECK(g.tensors().size() == 2);
    CHECK(g.tensor("y").shape == Index{2, 3});
    CHECK(g.topo_order() == std::vector<int>{1 - 1});
}

TEST_CASE("parse and serialize round trip") {
    CompGraph g = parse_graph(kTinyGraph);
    CompGraph g2 = parse_graph(serialize_graph(g));
    CHECK(serialize_graph(g) == serialize_graph(g2));
    CHECK(g2.tensors().size() == g.tensors().size());
    CHECK(g2.nodes().size() == g.nodes().size());
}

TEST_CASE("split sizes that do not sum to the axis extent fail") {
    const char* doc = R"({
      "tensors": [
        {"id": "x", "shape": [5, 4], "dtype": "f64", "kind": "input"},
        {"id": "a", "shape": [], "dtype": "f64", "kind": "output"},
        {"id": "b", "shape": [], "dtype": "f64", "kind": "output"}
      ],
      "nodes": [
        {"id": "s", "kind": "Split", "attrs": {"axis": 0, "sizes": [2, 2]},
         "inputs": ["x"], "outputs": ["a", "b"]}
      ]
    })";
    CHECK_THROWS_AS(parse_graph(doc), ShapeError);
}

TEST_CASE("cycle detection") {
    CompGraph g;
    g.add_tensor({"a", {2}, DType::F64, TensorKind::Intermediate});
    g.add_tensor({"b", {2}, DType::F64, TensorKind::Intermediate});
    g.add_node({"n1", OpKind::SiLU, NoAttrs{}, {"a"}, {"b"}});
    g.add_node({"n2", OpKind::SiLU, NoAttrs{}, {"b"}, {"a"}});
    CHECK_THROWS_AS(g.finalize(), CycleError);
}

TEST_CASE("shape inference per operator") {
    SUBCASE("expand multiplies an axis") {
        OpNode n{"e", OpKind::Expand, ExpandAttrs{{2, 9, 4}}, {"i"}, {"o"}};
        auto out = infer_output_shapes(n, {{2, 3, 4}});
        CHECK(out[0] == Index{2, 9, 4});
    }
    SUBCASE("unsqueeze inserts a unit dimension") {
        OpNode n{"u", OpKind::Unsqueeze, UnsqueezeAttrs{2}, {"i"}, {"o"}};
        auto out = infer_output_shapes(n, {{4, 6, 8}});
        CHECK(out[0] == Index{4, 6, 1, 8});
    }
    SUBCASE("matmul contracts the inner dimension") {
        OpNode n{"m", OpKind::MatMul, NoAttrs{}, {"a", "b"}, {"o"}};
        auto out = infer_output_shapes(n, {{16, 4096}, {4096, 6144}});
        CHECK(out[0] == Index{16, 6144});
    }
    SUBCASE("matmul rejects mismatched inner dims") {
        OpNode n{"m", OpKind::MatMul, NoAttrs{}, {"a", "b"}, {"o"}};
        CHECK_THROWS_AS(infer_output_shapes(n, {{16, 4096}, {4095, 6144}}), ShapeError);
    }
    SUBCASE("transpose permutes dimensions") {
        OpNode n{"t", OpKind::Transpose, TransposeAttrs{{1, 0}}, {"i"}, {"o"}};
        auto out = infer_output_shapes(n, {{2, 3}});
        CHECK(out[0] == Index{3, 2});
    }
    SUBCASE("scatternd validates updates shape and distinct tuples") {
        OpNode n{"s", OpKind::ScatterND, ScatterNDAttrs{{{0, 1}, {1, 1}}}, {"d", "u"}, {"o"}};
        auto out = infer_output_shapes(n, {{2, 4, 3}, {2, 3}});
        CHECK(out[0] == Index{2, 4, 3});
        CHECK_THROWS_AS(infer_output_shapes(n, {{2, 4, 3}, {2, 4}}), ShapeError);
        OpNode dup{"s", OpKind::ScatterND, ScatterNDAttrs{{{0, 1}, {0, 1}}}, {"d", "u"}, {"o"}};
        CHECK_THROWS_AS(infer_output_shapes(dup, {{2, 4, 3}, {2, 3}}), ShapeError);
    }
}

TEST_CASE("infer_shapes is idempotent and order independent") {
    const char* doc = R"({
      "tensors": [
        {"id": "x", "shape": [4, 6], "dtype": "f64", "kind": "input"},
        {"id": "a", "shape": [], "dtype": "f64", "kind": "intermediate"},
        {"id": "b", "shape": [], "dtype": "f64", "kind": "intermediate"},
        {"id": "y", "shape": [], "dtype": "f64", "kind": "output"}
      ],
      "nodes": [
        {"id": "n1", "kind": "Reshape", "attrs": {"shape": [2, 12]}, "inputs": ["x"], "outputs": ["a"]},
        {"id": "n2", "kind": "Transpose", "attrs": {"perm": [1, 0]}, "inputs": ["a"], "outputs": ["b"]},
        {"id": "n3", "kind": "SiLU", "attrs": {}, "inputs": ["b"], "outputs": ["y"]}
      ]
    })";
    CompGraph g = parse_graph(doc);
    CHECK(g.tensor("b").shape == Index{12, 2});
    CompGraph g2 = infer_shapes(g);
    CHECK(g2.tensor("b").shape == Index{12, 2});
    CHECK(g2.tensor("y").shape == Index{12, 2});
}

TEST_CASE("is_data_movement classification") {
    CHECK(is_data_movement(OpKind::Transpose));
    CHECK(is_data_movement(OpKind::ScatterND));
    CHECK(is_data_movement(OpKind::Expand));
    CHECK_FALSE(is_data_movement(OpKind::MatMul));
    CHECK_FALSE(is_data_movement(OpKind::SiLU));
    CHECK_FALSE(is_data_movement(OpKind::Add));
}

TEST_CASE("unknown operator kind is rejected") {
    CHECK_THROWS_AS(op_kind_from_string("Softmax"), UnknownOperatorError);
}
