#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "mmgc/nn.hpp"
#include "mmgc/tensor.hpp"

namespace testing {

using namespace mmgc;

template <typename T = double>
Tensor<T> randn(Shape shape, std::mt19937_64& rng, bool grad = false) {
  std::normal_distribution<double> nd;
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(nd(rng));
  return Tensor<T>::from(std::move(shape), std::move(v), grad);
}

template <typename T>
void fill(Tensor<T>& t, T value) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), value);
}

template <typename T>
void set_identity(Linear<T>& lin) {
  fill(lin.weight, T(0));
  fill(lin.bias, T(0));
  const std::size_t n = std::min(lin.in_features(), lin.out_features());
  auto w = lin.weight.mutable_data();
  for (std::size_t i = 0; i < n; ++i) w[i * lin.in_features() + i] = T(1);
}

// Sum of R ⊙ y with a fixed random R; used as a scalar probe for gradients.
template <typename T>
Tensor<T> probe(const Tensor<T>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(randn<T>(y.shape(), rng), y));
}

inline std::vector<std::vector<double>> to_rows(const Tensor<double>& t) {
  std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out[r][c] = t.at(r, c);
  return out;
}

}  // namespace testing

#include "mmgc/train.hpp"

namespace testing {

// Generated dataset with a matching compact model configuration.
struct Fixture {
  mmgc::Dataset data;
  mmgc::ModelConfig model;
};

inline Fixture small_fixture(std::size_t n, std::uint64_t seed, std::size_t image_size = 16) {
  mmgc::GenParams gp;
  gp.n_samples = n;
  gp.seed = seed;
  gp.image_size = image_size;
  auto samples = mmgc::generate(gp);
  std::vector<std::string> ids, reports;
  for (const auto& s : samples) {
    ids.push_back(s.id);
    reports.push_back(s.report);
  }
  auto sp = mmgc::split(ids, seed + 1);
  auto vocab = mmgc::build_vocab(reports);
  mmgc::ModelConfig m;
  m.image_size = image_size;
  m.vision_dim = 16;
  m.vision_layers = 1;
  m.vision_heads = 2;
  m.num_queries = 2;
  m.qformer_layers = 1;
  m.text_dim = 16;
  m.text_layers = 1;
  m.text_heads = 2;
  m.max_len = 12;
  m.proj_dim = 16;
  m.vocab_size = vocab.size();
  auto data = mmgc::Dataset::make(std::move(samples), std::move(sp), std::move(vocab), m.max_len);
  return {std::move(data), m};
}

}  // namespace testing
