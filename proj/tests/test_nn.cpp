#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "mmgc/gradcheck.hpp"

using namespace mmgc;
using namespace testing;
using T64 = Tensor<double>;

namespace {
const FiniteDiffOptions kFd{1e-3, Stencil::kCentral4, 1e-6};

// Plain-loop reference of multi-head attention.
std::vector<std::vector<double>> attention_oracle(const MultiHeadAttention<double>& m, const T64& xq, const T64& xkv) {
  auto project = [](const Linear<double>& l, const T64& x) {
    std::vector<std::vector<double>> out(x.rows(), std::vector<double>(l.out_features()));
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t o = 0; o < l.out_features(); ++o) {
        double acc = l.bias.at(o);
        for (std::size_t i = 0; i < l.in_features(); ++i) acc += l.weight.at(o, i) * x.at(r, i);
        out[r][o] = acc;
      }
    return out;
  };
  const auto q = project(m.query, xq), k = project(m.key, xkv), v = project(m.value, xkv);
  const std::size_t d = m.dim(), dh = d / m.heads, nq = xq.rows(), nk = xkv.rows();
  std::vector<std::vector<double>> merged(nq, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < m.heads; ++h)
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> s(nk);
      for (std::size_t j = 0; j < nk; ++j) {
        double dot = 0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q[i][c] * k[j][c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < nk; ++j)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) merged[i][c] += s[j] / z * v[j][c];
    }
  std::vector<std::vector<double>> out(nq, std::vector<double>(d));
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t o = 0; o < d; ++o) {
      double acc = m.output.bias.at(o);
      for (std::size_t c = 0; c < d; ++c) acc += m.output.weight.at(o, c) * merged[i][c];
      out[i][o] = acc;
    }
  return out;
}

MultiHeadAttention<double> identity_attention(std::size_t d) {
  Rng rng(1);
  auto m = MultiHeadAttention<double>::init(d, 1, rng);
  set_identity(m.query);
  set_identity(m.key);
  set_identity(m.value);
  set_identity(m.output);
  return m;
}
}  // namespace

TEST_CASE("linear") {
  Rng rng(0);
  auto lin = Linear<double>::init(2, 1, rng);
  lin.weight.mutable_data()[0] = 1;
  lin.weight.mutable_data()[1] = 1;
  lin.bias.mutable_data()[0] = 1;
  CHECK(lin.forward(T64::from({1, 2}, {2, 3})).at(0) == 6.0);
  CHECK_THROWS_AS(lin.forward(T64::from({1, 3}, {1, 2, 3})), ShapeMismatch);

  auto id = Linear<double>::init(3, 3, rng);
  set_identity(id);
  std::mt19937_64 g(2);
  const auto x = randn({4, 3}, g);
  const auto y = id.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
  // rank-1 input
  CHECK(id.forward(T64::from({3}, {1, 2, 3})).at(2) == 3.0);
}

TEST_CASE("uniform attention returns the value mean") {
  auto m = identity_attention(3);
  fill(m.query.weight, 0.0);  // every score equal
  const auto kv = T64::from({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 12});
  const auto y = m.forward(T64::from({2, 3}, {1, 0, 0, 0, 1, 0}), kv);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(y.at(r, 0) == doctest::Approx(4.0));
    CHECK(y.at(r, 1) == doctest::Approx(5.0));
    CHECK(y.at(r, 2) == doctest::Approx(7.0));
  }
}

TEST_CASE("single key returns its value row") {
  const auto m = identity_attention(2);
  const auto y = m.forward(T64::from({3, 2}, {1, 2, -3, 4, 0, 9}), T64::from({1, 2}, {0.25, -7}));
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(y.at(r, 0) == doctest::Approx(0.25));
    CHECK(y.at(r, 1) == doctest::Approx(-7.0));
  }
}

TEST_CASE("two-head attention matches the loop oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto m = MultiHeadAttention<double>::init(8, 2, rng);
    std::mt19937_64 g(seed + 100);
    const auto xq = randn({3, 8}, g), xkv = randn({5, 8}, g);
    std::vector<T64> weights;
    const auto y = m.forward(xq, xkv, nullptr, &weights);
    const auto ref = attention_oracle(m, xq, xkv);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t o = 0; o < 8; ++o) CHECK(y.at(i, o) == doctest::Approx(ref[i][o]).epsilon(1e-12));
    REQUIRE(weights.size() == 2);
    for (const auto& w : weights)
      for (std::size_t r = 0; r < 3; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 5; ++c) {
          CHECK(w.at(r, c) >= 0.0);
          s += w.at(r, c);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
  }
}

TEST_CASE("attention masks") {
  Rng rng(4);
  const auto m = MultiHeadAttention<double>::init(4, 2, rng);
  std::mt19937_64 g(5);
  const auto x = randn({4, 4}, g);
  const auto causal = AttentionMask::causal(4);
  std::vector<T64> weights;
  m.forward(x, x, &causal, &weights);
  for (const auto& w : weights)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = r + 1; c < 4; ++c) CHECK(w.at(r, c) == 0.0);

  const auto pad = AttentionMask::key_padding(4, {true, true, false, false});
  weights.clear();
  m.forward(x, x, &pad, &weights);
  for (const auto& w : weights)
    for (std::size_t r = 0; r < 4; ++r) CHECK(w.at(r, 2) + w.at(r, 3) == 0.0);

  const auto none = AttentionMask::key_padding(4, {false, false, false, false});
  CHECK_THROWS_AS(m.forward(x, x, &none), MaskError);
}

TEST_CASE("attention is equivariant to key order") {
  Rng rng(6);
  const auto m = MultiHeadAttention<double>::init(4, 2, rng);
  std::mt19937_64 g(7);
  const auto q = randn({2, 4}, g);
  const auto kv = randn({5, 4}, g);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  const auto kv_perm = gather_rows(kv, std::span<const int>(perm));
  const auto a = m.forward(q, kv), b = m.forward(q, kv_perm);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));
}

TEST_CASE("transformer block") {
  Rng rng(8);
  auto block = TransformerBlock<double>::init(8, 2, rng);
  std::mt19937_64 g(9);
  for (std::size_t n : {1u, 3u, 10u}) CHECK(block.forward(randn({n, 8}, g)).shape() == Shape{n, 8});

  auto zeroed = block;
  zeroed.attn.output = Linear<double>::init(8, 8, rng);
  zeroed.ffn.down = Linear<double>::init(32, 8, rng);
  fill(zeroed.attn.output.weight, 0.0);
  fill(zeroed.attn.output.bias, 0.0);
  fill(zeroed.ffn.down.weight, 0.0);
  fill(zeroed.ffn.down.bias, 0.0);
  const auto x = randn({5, 8}, g);
  const auto y = zeroed.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)).epsilon(1e-15));

  NamedParams<double> params;
  block.collect("blk", params);
  std::vector<T64> inputs{randn({4, 8}, g, true)};
  for (auto& [name, t] : params) inputs.push_back(t);
  const auto causal = AttentionMask::causal(4);
  const auto r = finite_diff_check<double>([&] { return probe(block.forward(inputs[0], &causal), 3); }, inputs, kFd);
  CHECK(r.max_rel_error <= 1e-5);
}

TEST_CASE("embedding") {
  Rng rng(10);
  const auto emb = Embedding<double>::init(5, 3, rng);
  const std::vector<int> ids{0, 0};
  const auto y = emb.forward(ids);
  for (std::size_t c = 0; c < 3; ++c) CHECK(y.at(0, c) == y.at(1, c));
  const std::vector<int> used{1, 3};
  probe(emb.forward(used), 4).backward();
  const auto grad = emb.table.grad();
  for (std::size_t row : {0u, 2u, 4u})
    for (std::size_t c = 0; c < 3; ++c) CHECK(grad[row * 3 + c] == 0.0);
  const std::vector<int> bad{5};
  CHECK_THROWS_AS(emb.forward(bad), IndexError);
}

TEST_CASE("parameter names are unique") {
  Rng rng(11);
  const auto block = TransformerBlock<double>::init(4, 2, rng);
  NamedParams<double> params;
  block.collect("b", params);
  std::vector<std::string> names;
  for (const auto& p : params) names.push_back(p.first);
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
  CHECK(params.size() == 16);
}
