// Reverse-mode automatic differentiation on a flat tape of dense
// matrices. Every operation appends a node holding its value and a
// closure that scatters the incoming gradient to its inputs; backward()
// walks the tape once in reverse. The primitive set is exactly what the
// policy networks need (dense algebra, row softmax/layernorm, small
// convolutions, broadcasts).
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "tactsim/common.hpp"

namespace tactsim::ad {

using Mat = Eigen::MatrixXd;

class Graph {
 public:
  int make(Mat value, std::function<void(Graph&, const Mat&)> back = nullptr) {
    nodes_.push_back({std::move(value), Mat(), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Mat& val(int id) const { return nodes_[id].value; }

  Mat& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool hasGrad(int id) const { return nodes_[id].grad.size() != 0; }

  // Seeds the (scalar) root with 1 and propagates. Nodes whose gradient
  // was never touched are dead branches and are skipped.
  void backward(int root) {
    if (nodes_[root].value.size() != 1)
      throw PolicyError("backward root must be a scalar");
    grad(root).setConstant(1.0);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() != 0) n.back(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Graph&, const Mat&)> back;
  };
  std::vector<Node> nodes_;
};

inline int constant(Graph& g, Mat v) { return g.make(std::move(v)); }

inline int add(Graph& g, int a, int b) {
  return g.make(g.val(a) + g.val(b), [a, b](Graph& g, const Mat& go) {
    g.grad(a) += go;
    g.grad(b) += go;
  });
}

inline int sub(Graph& g, int a, int b) {
  return g.make(g.val(a) - g.val(b), [a, b](Graph& g, const Mat& go) {
    g.grad(a) += go;
    g.grad(b) -= go;
  });
}

inline int cmul(Graph& g, int a, int b) {
  return g.make(g.val(a).cwiseProduct(g.val(b)), [a, b](Graph& g, const Mat& go) {
    g.grad(a) += go.cwiseProduct(g.val(b));
    g.grad(b) += go.cwiseProduct(g.val(a));
  });
}

inline int scale(Graph& g, int a, double s) {
  return g.make(s * g.val(a), [a, s](Graph& g, const Mat& go) { g.grad(a) += s * go; });
}

inline int matmul(Graph& g, int a, int b) {
  return g.make(g.val(a) * g.val(b), [a, b](Graph& g, const Mat& go) {
    g.grad(a) += go * g.val(b).transpose();
    g.grad(b) += g.val(a).transpose() * go;
  });
}

inline int transpose(Graph& g, int a) {
  return g.make(g.val(a).transpose(),
                [a](Graph& g, const Mat& go) { g.grad(a) += go.transpose(); });
}

// Adds a 1xC row vector to every row.
inline int addRowVec(Graph& g, int a, int row) {
  Mat v = g.val(a);
  v.rowwise() += g.val(row).row(0);
  return g.make(std::move(v), [a, row](Graph& g, const Mat& go) {
    g.grad(a) += go;
    g.grad(row) += go.colwise().sum();
  });
}

// Adds a Cx1 column vector to every column.
inline int addColVec(Graph& g, int a, int col) {
  Mat v = g.val(a);
  v.colwise() += g.val(col).col(0);
  return g.make(std::move(v), [a, col](Graph& g, const Mat& go) {
    g.grad(a) += go;
    g.grad(col) += go.rowwise().sum();
  });
}

inline int gelu(Graph& g, int a) {
  const Mat& x = g.val(a);
  const double c = std::sqrt(2.0 / M_PI);
  Mat t = (c * (x.array() + 0.044715 * x.array().cube())).tanh();
  Mat y = 0.5 * x.array() * (1.0 + t.array());
  return g.make(std::move(y), [a, c, t = std::make_shared<Mat>(std::move(t))](Graph& g,
                                                                              const Mat& go) {
    const Mat& x = g.val(a);
    Eigen::ArrayXXd inner = c * (1.0 + 3.0 * 0.044715 * x.array().square());
    Eigen::ArrayXXd dydx =
        0.5 * (1.0 + t->array()) + 0.5 * x.array() * (1.0 - t->array().square()) * inner;
    g.grad(a) += (go.array() * dydx).matrix();
  });
}

inline int softmaxRows(Graph& g, int a) {
  Mat s = g.val(a);
  for (int r = 0; r < s.rows(); ++r) {
    Eigen::ArrayXd row = s.row(r).array();
    row -= row.maxCoeff();
    row = row.exp();
    s.row(r) = row / row.sum();
  }
  const auto sp = std::make_shared<Mat>(std::move(s));
  return g.make(*sp, [a, s = sp](Graph& g, const Mat& go) {
    Mat dx(go.rows(), go.cols());
    for (int r = 0; r < go.rows(); ++r) {
      const double dot = go.row(r).dot(s->row(r));
      dx.row(r) = s->row(r).array() * (go.row(r).array() - dot);
    }
    g.grad(a) += dx;
  });
}

// Row-wise layer normalization with learned 1xC gain/bias.
inline int layerNormRows(Graph& g, int x, int gamma, int beta, double eps = 1e-5) {
  const Mat& v = g.val(x);
  const int C = static_cast<int>(v.cols());
  auto xhat = std::make_shared<Mat>(v.rows(), v.cols());
  auto inv_sigma = std::make_shared<Eigen::VectorXd>(v.rows());
  Mat y(v.rows(), v.cols());
  for (int r = 0; r < v.rows(); ++r) {
    const double mu = v.row(r).mean();
    const double var = (v.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)(r) = is;
    xhat->row(r) = (v.row(r).array() - mu) * is;
    y.row(r) = xhat->row(r).cwiseProduct(g.val(gamma).row(0)) + g.val(beta).row(0);
  }
  return g.make(std::move(y), [x, gamma, beta, xhat, inv_sigma, C](Graph& g, const Mat& go) {
    const Mat& gam = g.val(gamma);
    Mat dx(go.rows(), go.cols());
    for (int r = 0; r < go.rows(); ++r) {
      const Eigen::RowVectorXd dyg = go.row(r).cwiseProduct(gam.row(0));
      const double m1 = dyg.mean();
      const double m2 = dyg.cwiseProduct(xhat->row(r)).mean();
      dx.row(r) =
          ((dyg.array() - m1 - xhat->row(r).array() * m2) * (*inv_sigma)(r)).matrix();
    }
    g.grad(x) += dx;
    g.grad(gamma) += (go.cwiseProduct(*xhat)).colwise().sum();
    g.grad(beta) += go.colwise().sum();
  });
}

inline int sliceCols(Graph& g, int a, int c0, int n) {
  return g.make(g.val(a).middleCols(c0, n), [a, c0, n](Graph& g, const Mat& go) {
    g.grad(a).middleCols(c0, n) += go;
  });
}

inline int sliceRows(Graph& g, int a, int r0, int n) {
  return g.make(g.val(a).middleRows(r0, n), [a, r0, n](Graph& g, const Mat& go) {
    g.grad(a).middleRows(r0, n) += go;
  });
}

inline int concatCols(Graph& g, const std::vector<int>& parts) {
  int cols = 0;
  const int rows = static_cast<int>(g.val(parts.front()).rows());
  for (int p : parts) cols += static_cast<int>(g.val(p).cols());
  Mat v(rows, cols);
  int c = 0;
  for (int p : parts) {
    v.middleCols(c, g.val(p).cols()) = g.val(p);
    c += static_cast<int>(g.val(p).cols());
  }
  return g.make(std::move(v), [parts](Graph& g, const Mat& go) {
    int c = 0;
    for (int p : parts) {
      const int n = static_cast<int>(g.val(p).cols());
      g.grad(p) += go.middleCols(c, n);
      c += n;
    }
  });
}

inline int concatRows(Graph& g, const std::vector<int>& parts) {
  int rows = 0;
  const int cols = static_cast<int>(g.val(parts.front()).cols());
  for (int p : parts) rows += static_cast<int>(g.val(p).rows());
  Mat v(rows, cols);
  int r = 0;
  for (int p : parts) {
    v.middleRows(r, g.val(p).rows()) = g.val(p);
    r += static_cast<int>(g.val(p).rows());
  }
  return g.make(std::move(v), [parts](Graph& g, const Mat& go) {
    int r = 0;
    for (int p : parts) {
      const int n = static_cast<int>(g.val(p).rows());
      g.grad(p) += go.middleRows(r, n);
      r += n;
    }
  });
}

inline int sumAll(Graph& g, int a) {
  Mat v(1, 1);
  v(0, 0) = g.val(a).sum();
  return g.make(std::move(v), [a](Graph& g, const Mat& go) {
    g.grad(a).array() += go(0, 0);
  });
}

inline int meanRows(Graph& g, int a) {
  const double n = static_cast<double>(g.val(a).rows());
  Mat v = g.val(a).colwise().mean();
  return g.make(std::move(v), [a, n](Graph& g, const Mat& go) {
    g.grad(a) += (Mat::Ones(static_cast<int>(n), 1) * go) / n;
  });
}

// Sequence convolution. x is (C_in x T), w is (C_out x C_in*k), zero
// padding keeps T fixed (k odd).
inline int conv1d(Graph& g, int x, int w, int bias, int k) {
  const Mat& xv = g.val(x);
  const int cin = static_cast<int>(xv.rows());
  const int T = static_cast<int>(xv.cols());
  const int pad = k / 2;
  auto patches = std::make_shared<Mat>(Mat::Zero(cin * k, T));
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < k; ++j) {
      const int src = t + j - pad;
      if (src >= 0 && src < T) patches->block(j * cin, t, cin, 1) = xv.col(src);
    }
  Mat y = g.val(w) * (*patches);
  y.colwise() += g.val(bias).col(0);
  return g.make(std::move(y), [x, w, bias, patches, cin, T, k, pad](Graph& g, const Mat& go) {
    g.grad(w) += go * patches->transpose();
    g.grad(bias) += go.rowwise().sum();
    const Mat dp = g.val(w).transpose() * go;
    Mat& gx = g.grad(x);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < k; ++j) {
        const int src = t + j - pad;
        if (src >= 0 && src < T) gx.col(src) += dp.block(j * cin, t, cin, 1);
      }
  });
}

// Image convolution on a (C_in x H*W) layout, 3x3 with zero padding.
inline int conv2d(Graph& g, int x, int w, int bias, int H, int W, int k) {
  const Mat& xv = g.val(x);
  const int cin = static_cast<int>(xv.rows());
  const int pad = k / 2;
  auto patches = std::make_shared<Mat>(Mat::Zero(cin * k * k, H * W));
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const int out = r * W + c;
      for (int dr = 0; dr < k; ++dr)
        for (int dc = 0; dc < k; ++dc) {
          const int sr = r + dr - pad, sc = c + dc - pad;
          if (sr < 0 || sr >= H || sc < 0 || sc >= W) continue;
          patches->block((dr * k + dc) * cin, out, cin, 1) = xv.col(sr * W + sc);
        }
    }
  Mat y = g.val(w) * (*patches);
  y.colwise() += g.val(bias).col(0);
  return g.make(std::move(y), [x, w, bias, patches, cin, H, W, k, pad](Graph& g, const Mat& go) {
    g.grad(w) += go * patches->transpose();
    g.grad(bias) += go.rowwise().sum();
    const Mat dp = g.val(w).transpose() * go;
    Mat& gx = g.grad(x);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const int out = r * W + c;
        for (int dr = 0; dr < k; ++dr)
          for (int dc = 0; dc < k; ++dc) {
            const int sr = r + dr - pad, sc = c + dc - pad;
            if (sr < 0 || sr >= H || sc < 0 || sc >= W) continue;
            gx.col(sr * W + sc) += dp.block((dr * k + dc) * cin, out, cin, 1);
          }
      }
  });
}

inline int avgPool2d(Graph& g, int x, int H, int W) {
  const Mat& xv = g.val(x);
  const int C = static_cast<int>(xv.rows());
  const int H2 = H / 2, W2 = W / 2;
  Mat y = Mat::Zero(C, H2 * W2);
  for (int r = 0; r < H2; ++r)
    for (int c = 0; c < W2; ++c)
      y.col(r * W2 + c) = 0.25 * (xv.col(2 * r * W + 2 * c) + xv.col(2 * r * W + 2 * c + 1) +
                                  xv.col((2 * r + 1) * W + 2 * c) +
                                  xv.col((2 * r + 1) * W + 2 * c + 1));
  return g.make(std::move(y), [x, H, W, H2, W2](Graph& g, const Mat& go) {
    Mat& gx = g.grad(x);
    for (int r = 0; r < H2; ++r)
      for (int c = 0; c < W2; ++c) {
        const Mat quarter = 0.25 * go.col(r * W2 + c);
        gx.col(2 * r * W + 2 * c) += quarter;
        gx.col(2 * r * W + 2 * c + 1) += quarter;
        gx.col((2 * r + 1) * W + 2 * c) += quarter;
        gx.col((2 * r + 1) * W + 2 * c + 1) += quarter;
      }
  });
}

inline int avgPool1d(Graph& g, int x) {
  const Mat& xv = g.val(x);
  const int T2 = static_cast<int>(xv.cols()) / 2;
  Mat y(xv.rows(), T2);
  for (int t = 0; t < T2; ++t) y.col(t) = 0.5 * (xv.col(2 * t) + xv.col(2 * t + 1));
  return g.make(std::move(y), [x, T2](Graph& g, const Mat& go) {
    Mat& gx = g.grad(x);
    for (int t = 0; t < T2; ++t) {
      gx.col(2 * t) += 0.5 * go.col(t);
      gx.col(2 * t + 1) += 0.5 * go.col(t);
    }
  });
}

inline int upsample1d(Graph& g, int x) {
  const Mat& xv = g.val(x);
  const int T = static_cast<int>(xv.cols());
  Mat y(xv.rows(), 2 * T);
  for (int t = 0; t < T; ++t) {
    y.col(2 * t) = xv.col(t);
    y.col(2 * t + 1) = xv.col(t);
  }
  return g.make(std::move(y), [x, T](Graph& g, const Mat& go) {
    Mat& gx = g.grad(x);
    for (int t = 0; t < T; ++t) gx.col(t) += go.col(2 * t) + go.col(2 * t + 1);
  });
}

// FiLM over a (C x T) sequence: y = x .* (1 + scale) + shift with
// per-channel (C x 1) modulation.
inline int filmCols(Graph& g, int x, int scale_id, int shift_id) {
  const Mat& xv = g.val(x);
  Mat y = xv.array().colwise() * (1.0 + g.val(scale_id).col(0).array());
  y.colwise() += g.val(shift_id).col(0);
  return g.make(std::move(y), [x, scale_id, shift_id](Graph& g, const Mat& go) {
    g.grad(x) += (go.array().colwise() * (1.0 + g.val(scale_id).col(0).array())).matrix();
    g.grad(scale_id) += go.cwiseProduct(g.val(x)).rowwise().sum();
    g.grad(shift_id) += go.rowwise().sum();
  });
}

}  // namespace tactsim::ad
