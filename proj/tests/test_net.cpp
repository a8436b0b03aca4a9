#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "last/checkpoint.hpp"
#include "last/net.hpp"
#include "last/rng.hpp"
#include "oracles.hpp"

using namespace last;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("net_test_") + name;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("init_params is fully determined by the seed") {
  NetworkSpec spec{6, {8, 4}, 3};
  ParamVector a = init_params(spec, 99);
  ParamVector b = init_params(spec, 99);
  CHECK(oracle::bits_equal(a, b));
  ParamVector c = init_params(spec, 100);
  CHECK_FALSE(oracle::bits_equal(a, c));
}

TEST_CASE("init_params leaves every bias at zero") {
  NetworkSpec spec{5, {7, 3}, 4};
  ParamVector p = init_params(spec, 12);
  for (const auto& e : p.layout) {
    if (e.id[0] != 'b') continue;
    for (std::size_t i = 0; i < shape_numel(e.shape); ++i) {
      CHECK(p.values.data[e.offset + i] == 0.0);
    }
  }
}

TEST_CASE("weight std matches the fan-in scaling within 5%") {
  NetworkSpec spec{1000, {1000}, 2};
  ParamVector p = init_params(spec, 7);
  const auto& w0 = p.layout[0];
  REQUIRE(w0.shape == std::vector<std::size_t>{1000, 1000});
  double sum = 0, sq = 0;
  std::size_t n = 1000 * 1000;
  for (std::size_t i = 0; i < n; ++i) {
    double v = double(p.values.data[w0.offset + i]);
    sum += v;
    sq += v * v;
  }
  double mean = sum / double(n);
  double std_dev = std::sqrt(sq / double(n) - mean * mean);
  double expect = std::sqrt(2.0 / 1000.0);
  CHECK(std::abs(std_dev - expect) / expect < 0.05);
}

TEST_CASE("zero-weight network produces all-zero logits") {
  NetworkSpec spec{4, {5}, 3};
  ParamVector p = init_params(spec, 3);
  for (real& v : p.values.data) v = 0;
  Rng rng(2);
  Tensor in = Tensor::zeros({3, 4});
  for (real& v : in.data) v = rng.uniform(-1, 1);
  Tensor logits = predict_logits(spec, p, in);
  for (real v : logits.data) CHECK(v == 0.0);
}

TEST_CASE("single-row prediction equals the matching row of a batched one") {
  NetworkSpec spec{5, {6}, 4};
  ParamVector p = init_params(spec, 21);
  Rng rng(22);
  Tensor batch = Tensor::zeros({4, 5});
  for (real& v : batch.data) v = rng.uniform(0, 1);
  Tensor batched = predict_logits(spec, p, batch);
  for (std::size_t r = 0; r < 4; ++r) {
    Tensor single({1, 5}, oracle::row_of(batch, r));
    Tensor one = predict_logits(spec, p, single);
    for (std::size_t j = 0; j < 4; ++j) {
      real denom = std::max({std::abs(one.at(0, j)), std::abs(batched.at(r, j)), real(1e-12)});
      CHECK(std::abs(one.at(0, j) - batched.at(r, j)) / denom < 1e-12);
    }
  }
}

TEST_CASE("hand-set 2-2-2 network matches manual matrix arithmetic") {
  NetworkSpec spec{2, {2}, 2};
  ParamVector p = init_params(spec, 0);
  // w0 = [[1, -2], [0.5, 3]], b0 = (0.25, -1), w1 = [[2, 0], [-1, 1]], b1 = (0, 0.5)
  std::vector<real> vals = {1, -2, 0.5, 3, 0.25, -1, 2, 0, -1, 1, 0, 0.5};
  p.values.data = vals;
  Tensor in({1, 2}, {1.0, 2.0});
  // pre0 = (1*1 + 2*0.5 + 0.25, 1*-2 + 2*3 - 1) = (2.25, 3)
  // relu  -> (2.25, 3)
  // logits = (2.25*2 + 3*-1 + 0, 2.25*0 + 3*1 + 0.5) = (1.5, 3.5)
  Tensor logits = predict_logits(spec, p, in);
  CHECK(logits.at(0, 0) == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(logits.at(0, 1) == doctest::Approx(3.5).epsilon(1e-14));
}

TEST_CASE("predict_logits is permutation-equivariant over the batch axis") {
  NetworkSpec spec{4, {5}, 3};
  ParamVector p = init_params(spec, 31);
  Rng rng(32);
  Tensor batch = Tensor::zeros({5, 4});
  for (real& v : batch.data) v = rng.uniform(0, 1);
  Tensor forward = predict_logits(spec, p, batch);

  std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor shuffled = Tensor::zeros({5, 4});
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t j = 0; j < 4; ++j) shuffled.at(r, j) = batch.at(perm[r], j);
  }
  Tensor forward_shuffled = predict_logits(spec, p, shuffled);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t j = 0; j < 3; ++j) {
      real a = forward_shuffled.at(r, j), b = forward.at(perm[r], j);
      real denom = std::max({std::abs(a), std::abs(b), real(1e-12)});
      CHECK(std::abs(a - b) / denom < 1e-12);
    }
  }
}

TEST_CASE("flatten/unflatten round-trips every layer tensor") {
  NetworkSpec spec{3, {4, 5}, 2};
  ParamVector p = init_params(spec, 8);
  Graph g;
  auto leaves = add_param_leaves(g, spec, true);
  bind_params(g, leaves, p);
  // re-flatten the bound leaf tensors and compare
  ParamVector rebuilt = zeros_like(p);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto& e = p.layout[i];
    const Tensor& t = g.node(leaves[i]).value;
    REQUIRE(t.shape == e.shape);
    std::copy(t.data.begin(), t.data.end(), rebuilt.values.data.begin() + e.offset);
  }
  CHECK(oracle::bits_equal(p, rebuilt));
}

TEST_CASE("predict_logits rejects dimension mismatches") {
  NetworkSpec spec{4, {5}, 3};
  ParamVector p = init_params(spec, 3);
  CHECK_THROWS_AS(predict_logits(spec, p, Tensor::zeros({2, 5})), ShapeError);
}

TEST_CASE("network spec validation") {
  CHECK_THROWS_AS(NetworkSpec({0, {4}, 2}).validate(), ValueError);
  CHECK_THROWS_AS(NetworkSpec({4, {0}, 2}).validate(), ValueError);
  CHECK_THROWS_AS(NetworkSpec({4, {4}, 1}).validate(), ValueError);
  CHECK_NOTHROW(NetworkSpec({4, {}, 2}).validate());  // plain linear classifier
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  NetworkSpec spec{6, {4}, 3};
  Checkpoint c;
  c.spec = spec;
  c.params = init_params(spec, 5);
  c.metadata["seed"] = "5";
  c.metadata["gamma"] = "0.8";
  c.metadata["mode"] = "LAST";

  std::string p1 = temp_path("rt1.ckpt"), p2 = temp_path("rt2.ckpt");
  save_checkpoint(p1, c);
  Checkpoint loaded = load_checkpoint(p1);
  CHECK(loaded.spec == c.spec);
  CHECK(loaded.format_version == c.format_version);
  CHECK(loaded.dtype == c.dtype);
  CHECK(oracle::bits_equal(loaded.params, c.params));
  CHECK(loaded.metadata.at("gamma") == "0.8");
  CHECK(loaded.metadata == c.metadata);

  save_checkpoint(p2, loaded);
  CHECK(read_bytes(p1) == read_bytes(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint load failures are distinct") {
  NetworkSpec spec{6, {4}, 3};
  Checkpoint c;
  c.spec = spec;
  c.params = init_params(spec, 5);
  std::string path = temp_path("bad.ckpt");
  save_checkpoint(path, c);
  std::string bytes = read_bytes(path);

  SUBCASE("blob truncated by 4 bytes") {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), std::streamsize(bytes.size() - 4));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), TruncatedError);
  }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), BadMagicError);
  }
  SUBCASE("version mismatch") {
    bytes[8] = 9;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), VersionError);
  }
  SUBCASE("spec/count mismatch") {
    // rewrite the header with an inconsistent param_count
    auto pos = bytes.find("param_count = ");
    REQUIRE(pos != std::string::npos);
    bytes[pos + 14] = '9';
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), SpecMismatchError);
  }
  std::remove(path.c_str());
}
