#include <catch2/catch.hpp>

#include <set>

#include "citesum/corpus.hpp"
#include "citesum/graph.hpp"
#include "citesum/rng.hpp"

using namespace citesum;
using graph::Matrix;
using graph::Vector;
using rouge::Tokens;

namespace {

corpus::Document doc_with_body(const std::string& id,
                               std::vector<std::string> sentences) {
  corpus::Document d;
  d.id = id;
  d.title = id;
  d.abstract_text = "abstract.";
  d.introduction = "intro.";
  d.body_sentences = std::move(sentences);
  return d;
}

selection::SelectionResult select_all(const corpus::Document& d) {
  selection::SelectionResult r;
  r.ref_id = d.id;
  for (std::size_t i = 0; i < d.body_sentences.size(); ++i)
    r.sentence_indices.push_back(i);
  return r;
}

selection::SelectionTarget target_of(const std::string& text) {
  selection::SelectionTarget t;
  t.text = corpus::tokenize(text);
  return t;
}

}  // namespace

TEST_CASE("weighted citation graph for an identical-content neighbor") {
  const auto nbr = doc_with_body("n1", {"exact match words here."});
  const auto target = target_of("exact match words here.");
  const auto src = doc_with_body("src", {"whatever."});
  const auto g = graph::build_weighted_citation_graph(
      src, {{&nbr, select_all(nbr)}}, {}, target, 0.5);
  CHECK(g.node_ids == std::vector<std::string>{"src", "n1"});
  CHECK(g.weights(0, 1) == Approx(1.0));
  CHECK(g.weights(1, 0) == Approx(1.0));
  CHECK(g.weights(0, 0) == 1.0);
  CHECK(g.weights(1, 1) == 1.0);
}

TEST_CASE("weights below rho are deleted") {
  // moderate overlap: mean rouge lands strictly between 0 and 0.7
  const auto nbr = doc_with_body("n1", {"aa bb qq ww ee rr."});
  const auto good = doc_with_body("n2", {"aa bb cc dd."});
  const auto target = target_of("aa bb cc dd.");
  const auto src = doc_with_body("src", {"x."});

  const double w_low = rouge::mean_rouge_12(
      target.text, selection::selected_content_tokens(nbr, select_all(nbr)));
  REQUIRE(w_low > 0.0);
  REQUIRE(w_low < 0.7);

  const auto g = graph::build_weighted_citation_graph(
      src, {{&good, select_all(good)}, {&nbr, select_all(nbr)}}, {}, target, 0.7);
  CHECK(g.weights(0, 1) == Approx(1.0));  // n2 kept
  CHECK(g.weights(0, 2) == 0.0);          // n1 pruned by rho
}

TEST_CASE("degenerate graph when every source edge is pruned") {
  const auto nbr = doc_with_body("n1", {"zz yy xx."});
  const auto target = target_of("aa bb cc.");
  const auto src = doc_with_body("src", {"x."});
  CHECK_THROWS_AS(graph::build_weighted_citation_graph(
                      src, {{&nbr, select_all(nbr)}}, {}, target, 0.7),
                  DegenerateGraphError);
}

TEST_CASE("full 4x4 instance matches a per-entry oracle") {
  // 1 source + 2 neighbors + 1 negative
  const auto n1 = doc_with_body("n1", {"aa bb cc dd ee."});
  const auto n2 = doc_with_body("n2", {"aa bb cc zz ww."});
  const auto neg = doc_with_body("neg", {"irrelevant."});
  const auto target = target_of("aa bb cc dd ee.");
  const auto src = doc_with_body("src", {"x."});

  const auto g = graph::build_weighted_citation_graph(
      src, {{&n1, select_all(n1)}, {&n2, select_all(n2)}}, {&neg}, target, 0.1);
  REQUIRE(g.node_ids == std::vector<std::string>{"src", "n1", "n2", "neg"});

  const auto c1 = selection::selected_content_tokens(n1, select_all(n1));
  const auto c2 = selection::selected_content_tokens(n2, select_all(n2));
  auto rho_apply = [](double w) { return w < 0.1 ? 0.0 : w; };

  Matrix expect = Matrix::Zero(4, 4);
  expect(0, 1) = expect(1, 0) = rho_apply(rouge::mean_rouge_12(target.text, c1));
  expect(0, 2) = expect(2, 0) = rho_apply(rouge::mean_rouge_12(target.text, c2));
  expect(1, 2) = expect(2, 1) = rho_apply(rouge::mean_rouge_12(c1, c2));
  for (int i = 0; i < 4; ++i) expect(i, i) = 1.0;

  CHECK((g.weights - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("weighted graph invariants on random instances") {
  Rng rng(606);
  const std::vector<std::string> pool{"aa", "bb", "cc", "dd", "ee", "ff",
                                      "gg", "hh", "ii", "jj"};
  for (int trial = 0; trial < 25; ++trial) {
    auto sentence = [&] {
      std::string s;
      const std::size_t len = 3 + rng.below(5);
      for (std::size_t i = 0; i < len; ++i) {
        if (i) s += ' ';
        s += pool[rng.below(pool.size())];
      }
      return s + ".";
    };
    std::vector<corpus::Document> nbrs;
    for (std::size_t i = 0; i < 2 + rng.below(3); ++i)
      nbrs.push_back(doc_with_body("n" + std::to_string(i), {sentence(), sentence()}));
    std::vector<corpus::Document> negs;
    for (std::size_t i = 0; i < rng.below(3); ++i)
      negs.push_back(doc_with_body("neg" + std::to_string(i), {sentence()}));
    const auto target = target_of(sentence() + " " + sentence());
    const auto src = doc_with_body("src", {sentence()});

    std::vector<std::pair<const corpus::Document*, selection::SelectionResult>>
        neighbor_args;
    for (const auto& n : nbrs) neighbor_args.emplace_back(&n, select_all(n));
    std::vector<const corpus::Document*> negative_args;
    for (const auto& n : negs) negative_args.push_back(&n);

    const double rho = 0.05 + 0.1 * rng.uniform();
    graph::WeightedCitationGraph g;
    try {
      g = graph::build_weighted_citation_graph(src, neighbor_args, negative_args,
                                               target, rho);
    } catch (const DegenerateGraphError&) {
      continue;
    }
    const auto n = g.weights.rows();
    CHECK((g.weights - g.weights.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK(g.weights(i, i) == 1.0);
      for (Eigen::Index j = 0; j < n; ++j) {
        CHECK(g.weights(i, j) >= 0.0);
        if (i != j) {
          const double w = g.weights(i, j);
          CHECK((w == 0.0 || w >= rho));
        }
      }
    }
    // negatives have zero off-diagonals
    for (std::size_t k = 0; k < negs.size(); ++k) {
      const auto row = static_cast<Eigen::Index>(1 + nbrs.size() + k);
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != row) CHECK(g.weights(row, j) == 0.0);
    }
  }
}

TEST_CASE("bipartite graph basics") {
  SECTION("occurrence is binary") {
    const auto g = graph::build_bipartite_graph({"a", "b", "a"}, {"c"});
    CHECK(g.token_ids == std::vector<std::string>{"a", "b", "c"});
    CHECK(g.num_positive == 2);
    CHECK(g.adjacency(0, 0) == 1.0);
    CHECK(g.adjacency(0, 1) == 1.0);
    CHECK(g.adjacency(0, 2) == 0.0);
  }
  SECTION("no negatives -> all ones") {
    const auto g = graph::build_bipartite_graph({"x", "y"}, {});
    CHECK(g.adjacency.sum() == 2.0);
  }
  SECTION("negative occurring in the document is rejected") {
    CHECK_THROWS_AS(graph::build_bipartite_graph({"a", "b"}, {"a"}),
                    ValidationError);
  }
  SECTION("empty document is rejected") {
    CHECK_THROWS_AS(graph::build_bipartite_graph({}, {}), ValidationError);
  }
  SECTION("membership oracle on a 10-token doc with 5 negatives") {
    const Tokens doc{"t0", "t1", "t2", "t3", "t4", "t0", "t1", "t2", "t3", "t4"};
    const std::vector<std::string> negs{"m0", "m1", "m2", "m3", "m4"};
    const auto g = graph::build_bipartite_graph(doc, negs);
    const std::set<std::string> in_doc(doc.begin(), doc.end());
    REQUIRE(g.token_ids.size() == 10);
    for (std::size_t j = 0; j < g.token_ids.size(); ++j)
      CHECK(g.adjacency(0, static_cast<Eigen::Index>(j)) ==
            (in_doc.count(g.token_ids[j]) ? 1.0 : 0.0));
    // row sum = distinct positive count
    CHECK(g.adjacency.sum() == 5.0);
  }
}

TEST_CASE("normalized laplacian exact cases") {
  SECTION("single self-loop node") {
    Matrix a(1, 1);
    a << 1.0;
    const auto lap = graph::normalized_laplacian(a);
    CHECK(lap.matrix(0, 0) == Approx(0.0));
  }
  SECTION("two-node all-ones") {
    Matrix a(2, 2);
    a << 1, 1, 1, 1;
    const auto lap = graph::normalized_laplacian(a);
    CHECK(lap.matrix(0, 0) == Approx(0.5));
    CHECK(lap.matrix(0, 1) == Approx(-0.5));
    CHECK(lap.matrix(1, 0) == Approx(-0.5));
    CHECK(lap.matrix(1, 1) == Approx(0.5));
  }
  SECTION("zero row sum") {
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = 1.0;
    CHECK_THROWS_AS(graph::normalized_laplacian(a), DegenerateGraphError);
  }
}

TEST_CASE("normalized laplacian matches a naive dense oracle") {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(19));
    Matrix a = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      a(i, i) = 1.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        if (rng.uniform() < 0.5) {
          const double w = rng.uniform();
          a(i, j) = w;
          a(j, i) = w;
        }
      }
    }
    const auto lap = graph::normalized_laplacian(a);

    // independent elementwise computation
    for (Eigen::Index i = 0; i < n; ++i) {
      double di = 0;
      for (Eigen::Index j = 0; j < n; ++j) di += a(i, j);
      for (Eigen::Index j = 0; j < n; ++j) {
        double dj = 0;
        for (Eigen::Index k = 0; k < n; ++k) dj += a(j, k);
        const double expect =
            (i == j ? 1.0 : 0.0) - a(i, j) / std::sqrt(di * dj);
        CHECK(std::abs(lap.matrix(i, j) - expect) < 1e-12);
      }
    }
    // symmetry, null direction, off-diagonal signs, diagonal identity
    CHECK((lap.matrix - lap.matrix.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    const Vector null_dir = lap.degree.array().sqrt();
    CHECK((lap.matrix * null_dir).cwiseAbs().maxCoeff() < 1e-10);
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK(lap.matrix(i, i) == Approx(1.0 - a(i, i) / lap.degree(i)).epsilon(1e-12));
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) CHECK(lap.matrix(i, j) <= 1e-15);
    }
  }
}

TEST_CASE("bipartite laplacian follows the instance-local degree rule") {
  const auto g = graph::build_bipartite_graph({"a", "b", "a", "c"}, {"z1", "z2"});
  const auto lap = graph::bipartite_laplacian(g);
  // doc degree = 3 distinct positives; token degrees all 1
  CHECK(lap.degree(0) == 3.0);
  for (Eigen::Index j = 1; j < lap.degree.size(); ++j) CHECK(lap.degree(j) == 1.0);
  // positive columns: -B^ = 1/sqrt(3); negative columns: 0
  for (int j = 0; j < 3; ++j)
    CHECK(-lap.matrix(0, 1 + j) == Approx(1.0 / std::sqrt(3.0)));
  CHECK(lap.matrix(0, 4) == 0.0);
  CHECK(lap.matrix(0, 5) == 0.0);
}

TEST_CASE("negative document sampling") {
  std::set<std::string> nodes;
  std::set<std::pair<std::string, std::string>> edges;
  for (int i = 0; i < 10; ++i) nodes.insert("d" + std::to_string(i));
  edges.emplace("d0", "d1");
  edges.emplace("d0", "d2");
  const corpus::CitationGraph g(nodes, edges);

  SECTION("count zero") {
    CHECK(graph::sample_negative_documents(g, "d0", 0, 1).empty());
  }
  SECTION("samples exclude the source and its neighbors, no repeats") {
    const auto s = graph::sample_negative_documents(g, "d0", 5, 42);
    CHECK(s.size() == 5);
    std::set<std::string> uniq(s.begin(), s.end());
    CHECK(uniq.size() == 5);
    for (const auto& id : s) {
      CHECK(id != "d0");
      CHECK(id != "d1");
      CHECK(id != "d2");
    }
  }
  SECTION("deterministic given the seed") {
    const auto a = graph::sample_negative_documents(g, "d0", 3, 7);
    const auto b = graph::sample_negative_documents(g, "d0", 3, 7);
    CHECK(a == b);
    const auto c = graph::sample_negative_documents(g, "d0", 3, 8);
    // a different seed is allowed to coincide, but the committed golden run
    // below pins the stream
    CHECK(a == std::vector<std::string>{"d7", "d6", "d3"});
    (void)c;
  }
  SECTION("complete graph has no candidates") {
    std::set<std::string> vs{"a", "b", "c"};
    std::set<std::pair<std::string, std::string>> es{
        {"a", "b"}, {"a", "c"}, {"b", "c"}};
    const corpus::CitationGraph complete(vs, es);
    CHECK_THROWS_AS(graph::sample_negative_documents(complete, "a", 1, 1),
                    ValidationError);
  }
}

TEST_CASE("negative token sampling") {
  const std::set<std::string> vocab{"v0", "v1", "v2", "v3", "v4", "v5"};
  const Tokens doc{"v0", "v1"};

  CHECK(graph::sample_negative_tokens(vocab, doc, 0, 1).empty());

  const auto s = graph::sample_negative_tokens(vocab, doc, 3, 11);
  CHECK(s.size() == 3);
  for (const auto& t : s) {
    CHECK(t != "v0");
    CHECK(t != "v1");
  }
  CHECK(graph::sample_negative_tokens(vocab, doc, 3, 11) == s);  // deterministic
  CHECK(s == std::vector<std::string>{"v4", "v2", "v5"});        // golden run

  const Tokens everything{"v0", "v1", "v2", "v3", "v4", "v5"};
  CHECK_THROWS_AS(graph::sample_negative_tokens(vocab, everything, 1, 1),
                  ValidationError);
}
