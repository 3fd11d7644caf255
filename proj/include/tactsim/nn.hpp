// Parameter storage, layer builders on the autodiff tape, and the Adam
// optimizer. Parameters are named; binding the same name twice in one
// graph returns the same node, which is how the left/right tactile
// encoders share weights.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "tactsim/autodiff.hpp"

namespace tactsim::nn {

using ad::Graph;
using ad::Mat;

enum class Init { kZero, kOne, kFanIn, kFanInCols };

class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Mat& fetch(const std::string& name, int rows, int cols, Init init) {
    auto it = params_.find(name);
    if (it != params_.end()) {
      if (it->second.rows() != rows || it->second.cols() != cols)
        throw PolicyError("parameter shape mismatch for " + name);
      return it->second;
    }
    Mat m(rows, cols);
    switch (init) {
      case Init::kZero: m.setZero(); break;
      case Init::kOne: m.setOnes(); break;
      case Init::kFanIn:
      case Init::kFanInCols: {
        // Weight layouts differ: linear weights are (in, out) so the fan-in
        // is the row count, conv weights are (out, in * kernel) so it is
        // the column count.
        const double fan = static_cast<double>(init == Init::kFanIn ? rows : cols);
        const double sigma = std::sqrt(1.0 / fan);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) m(r, c) = sigma * rng_.gaussian();
        break;
      }
    }
    return params_.emplace(name, std::move(m)).first->second;
  }

  const std::map<std::string, Mat>& all() const { return params_; }
  std::map<std::string, Mat>& mutableAll() { return params_; }

  std::size_t parameterCount() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  // One Adam step over the named gradients. Iteration order is the
  // map's lexicographic order, which pins determinism.
  void adamStep(const std::map<std::string, Mat>& grads, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (const auto& [name, grad] : grads) {
      Mat& p = params_.at(name);
      if (!grad.allFinite()) throw PolicyError("non-finite gradient for " + name);
      Mat& m = moment1_.try_emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
      Mat& v = moment2_.try_emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
      m = beta1 * m + (1.0 - beta1) * grad;
      v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
      p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
      if (!p.allFinite()) throw PolicyError("non-finite parameter after update: " + name);
    }
  }

 private:
  std::map<std::string, Mat> params_;
  std::map<std::string, Mat> moment1_, moment2_;
  Rng rng_;
  int t_ = 0;
};

// Binds store parameters into one graph; repeated names alias the same
// node so shared modules accumulate gradients into one tensor.
class ParamBinder {
 public:
  ParamBinder(Graph& g, ParamStore& store) : g_(g), store_(store) {}

  int operator()(const std::string& name, int rows, int cols, Init init) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    const int id = g_.make(store_.fetch(name, rows, cols, init));
    ids_.emplace(name, id);
    return id;
  }

  // Collects d(loss)/d(param) for every bound parameter after backward().
  std::map<std::string, Mat> grads() const {
    std::map<std::string, Mat> out;
    for (const auto& [name, id] : ids_) {
      if (g_.hasGrad(id))
        out.emplace(name, g_.grad(id));
      else
        out.emplace(name, Mat::Zero(g_.val(id).rows(), g_.val(id).cols()));
    }
    return out;
  }

  Graph& graph() { return g_; }

 private:
  Graph& g_;
  ParamStore& store_;
  std::map<std::string, int> ids_;
};

inline int linear(Graph& g, ParamBinder& p, const std::string& prefix, int x, int in, int out) {
  const int w = p(prefix + ".w", in, out, Init::kFanIn);
  const int b = p(prefix + ".b", 1, out, Init::kZero);
  return ad::addRowVec(g, ad::matmul(g, x, w), b);
}

inline int layerNorm(Graph& g, ParamBinder& p, const std::string& prefix, int x, int dim) {
  const int gamma = p(prefix + ".gamma", 1, dim, Init::kOne);
  const int beta = p(prefix + ".beta", 1, dim, Init::kZero);
  return ad::layerNormRows(g, x, gamma, beta);
}

// Multi-head self-attention over (T x D) tokens.
inline int selfAttention(Graph& g, ParamBinder& p, const std::string& prefix, int x, int dim,
                         int heads) {
  if (dim % heads != 0) throw PolicyError("width must divide by head count");
  const int dh = dim / heads;
  const int q = linear(g, p, prefix + ".q", x, dim, dim);
  const int k = linear(g, p, prefix + ".k", x, dim, dim);
  const int v = linear(g, p, prefix + ".v", x, dim, dim);
  std::vector<int> outs;
  for (int h = 0; h < heads; ++h) {
    const int qh = ad::sliceCols(g, q, h * dh, dh);
    const int kh = ad::sliceCols(g, k, h * dh, dh);
    const int vh = ad::sliceCols(g, v, h * dh, dh);
    const int scores = ad::scale(g, ad::matmul(g, qh, ad::transpose(g, kh)), 1.0 / std::sqrt(dh));
    outs.push_back(ad::matmul(g, ad::softmaxRows(g, scores), vh));
  }
  return linear(g, p, prefix + ".o", ad::concatCols(g, outs), dim, dim);
}

// Pre-norm transformer block with a width-preserving feed-forward.
inline int transformerBlock(Graph& g, ParamBinder& p, const std::string& prefix, int x, int dim,
                            int heads) {
  const int a = selfAttention(g, p, prefix + ".attn", layerNorm(g, p, prefix + ".ln1", x, dim),
                              dim, heads);
  const int x1 = ad::add(g, x, a);
  const int h = linear(g, p, prefix + ".ff1", layerNorm(g, p, prefix + ".ln2", x1, dim), dim, dim);
  const int f = linear(g, p, prefix + ".ff2", ad::gelu(g, h), dim, dim);
  return ad::add(g, x1, f);
}

}  // namespace tactsim::nn
