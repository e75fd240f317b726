#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "dbuf/error.hpp"
#include "dbuf/probe.hpp"
#include "support.hpp"

using namespace dbuf;

namespace {

UNetConfig g8(PaddingKind padding = PaddingKind::BlockCausal) {
  UNetConfig c;
  c.channels = {4, 8, 8, 8};
  c.time_strides = {2, 2, 2};
  c.freq_strides = {2, 2, 1};
  c.time_kernels = {3, 3, 3};
  c.freq_kernels = {3, 3, 3};
  c.mode = UNetMode::Predictive;
  c.buffer_len = 8;
  c.padding = padding;
  return c;
}

DependencyMatrix from_rows(const std::vector<std::string>& rows) {
  DependencyMatrix m;
  m.rows = rows.size();
  m.cols = rows.size();
  for (const auto& r : rows)
    for (char ch : r) {
      m.dep.push_back(ch == '#' ? 1 : 0);
      m.strength.push_back(ch == '#' ? 1.0 : 0.0);
    }
  return m;
}

}  // namespace

TEST_SUITE("probe") {
  TEST_CASE("pointwise map has an identity dependency matrix") {
    const Array4 w = dbtest::random_array({3, 2, 1, 1}, 1);
    ProbeFn fn = [&](Tape& t, Var x) { return ops::silu(t, ops::conv2d(t, x, t.leaf(w), Var(), {1, 1}, {})); };
    for (auto method : {ProbeMethod::Gradient, ProbeMethod::Perturbation}) {
      const auto dep = dependency_matrix(fn, {1, 2, 4, 9}, method, 3);
      for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j) CHECK(dep.at(i, j) == (i == j));
      CHECK(assert_block_causal(dep, 1).passed());
      CHECK(assert_block_causal(dep, 1).lookahead_exact());
    }
  }

  TEST_CASE("block-causal UNet with g = 8 over 43 frames") {
    UNet net(g8());
    const auto dep = dependency_matrix(net, 43, 16, ProbeMethod::Gradient, 1);
    const auto rep = assert_block_causal(dep, 8);
    CHECK(rep.passed());
    CHECK(rep.lookahead_exact());
    // 43 = 3 + 5 * 8: the leading partial block ends at frame 2.
    CHECK(rep.lookahead[0] == 2);
    CHECK(rep.lookahead[2] == 0);
    for (std::size_t b = 0; b < 5; ++b) {
      CHECK(rep.lookahead[3 + 8 * b] == 7);  // first token of a block
      CHECK(rep.lookahead[10 + 8 * b] == 0);  // last token
    }
    CHECK(rep.summary().starts_with("PASS"));

    // Gating the input frame by frame keeps the pattern.
    UNetConfig masked = g8();
    masked.output = OutputKind::Mask;
    const auto mrep = assert_block_causal(dependency_matrix(UNet(masked), 43, 16, ProbeMethod::Gradient, 1), 8);
    CHECK(mrep.passed());
    CHECK(mrep.lookahead_exact());
  }

  TEST_CASE("symmetric padding leaks future frames") {
    UNet net(g8(PaddingKind::Symmetric));
    const auto dep = dependency_matrix(net, 43, 16, ProbeMethod::Gradient, 1);
    const auto rep = assert_block_causal(dep, 8);
    CHECK_FALSE(rep.passed());
    CHECK(rep.violations > 0);
    CHECK(rep.first_violation_in > rep.first_violation_out);
    CHECK(rep.summary().starts_with("FAIL"));
  }

  TEST_CASE("gradient and perturbation probes agree") {
    // Needs enough elements per norm group: with 2 channels and 2 bins at the
    // deepest stage the first frame's statistics collapse to a sign and its
    // in-block sensitivities sit right at the 1e-12 threshold.
    UNetConfig c = g8();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      c.init_seed = seed + 1;
      UNet net(c);
      const auto a = dependency_matrix(net, 19, 16, ProbeMethod::Gradient, seed);
      const auto b = dependency_matrix(net, 19, 16, ProbeMethod::Perturbation, seed);
      CHECK(a == b);
      CHECK(assert_block_causal(a, 8).passed());
    }
  }

  TEST_CASE("report on hand-built matrices") {
    // Lower triangular passes with g = 1.
    const auto tri = from_rows({"#...", "##..", "###.", "####"});
    auto r = assert_block_causal(tri, 1);
    CHECK(r.passed());
    CHECK(r.lookahead_exact());
    // With g = 2 a strictly causal matrix is still block-causal but the first
    // token of each block sees less than its allowed look-ahead.
    r = assert_block_causal(tri, 2);
    CHECK(r.passed());
    CHECK(r.lookahead_mismatches == 2);
    CHECK(r.expected == std::vector<long>{1, 0, 1, 0});
    // One look-ahead entry across a block edge.
    const auto leak = from_rows({"##..", "###.", "####", "####"});
    r = assert_block_causal(leak, 2);
    CHECK_FALSE(r.passed());
    CHECK(r.violations == 1);
    CHECK(r.first_violation_out == 1);
    CHECK(r.first_violation_in == 2);
    CHECK_THROWS_AS(assert_block_causal(leak, 0), ConfigError);
    DependencyMatrix rect{2, 3, std::vector<double>(6), std::vector<std::uint8_t>(6)};
    CHECK_THROWS_AS(assert_block_causal(rect, 1), ShapeError);
  }

  TEST_CASE("non-finite sensitivities are reported") {
    ProbeFn fn = [](Tape& t, Var x) {
      Array4 huge = t.value(x);
      for (auto& v : huge.values()) v = std::numeric_limits<double>::infinity();
      return ops::add(t, x, t.leaf(huge));
    };
    CHECK_THROWS_AS(dependency_matrix(fn, {1, 1, 1, 3}, ProbeMethod::Perturbation, 1), NumericError);
  }

  TEST_CASE("text and PGM export") {
    const auto tri = from_rows({"#..", "##.", "###"});
    const auto txt = tri.to_text();
    CHECK(txt.find('#') != std::string::npos);
    const auto path = std::filesystem::path(dbtest::scratch_dir("probe")) / "dep.pgm";
    tri.write_pgm(path.string(), 2);
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    std::size_t w = 0, h = 0, maxv = 0;
    in >> magic >> w >> h >> maxv;
    CHECK(magic == "P5");
    CHECK(w == 6);
    CHECK(h == 6);
    CHECK(maxv == 255);
    in.get();
    std::vector<unsigned char> px(36);
    in.read(reinterpret_cast<char*>(px.data()), 36);
    CHECK(in.gcount() == 36);
    CHECK(px[0] == 0);        // (0, 0) depends -> black
    CHECK(px[4] == 255);      // (0, 2) does not
    CHECK_THROWS_AS(tri.write_pgm("/nonexistent/dir/x.pgm"), DataError);
    CHECK(parse_probe_method("perturbation") == ProbeMethod::Perturbation);
    CHECK_THROWS_AS(parse_probe_method("jacobian"), ConfigError);
  }
}
