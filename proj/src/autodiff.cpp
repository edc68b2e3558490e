#include "lgsim/autodiff.hpp"

#include "lgsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lgsim {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeMismatch("shape " + shape_string(shape) + " has a non-positive extent");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), values(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != shape_size(shape)) {
    throw ShapeMismatch(std::to_string(values.size()) + " values for shape " + shape_string(shape));
  }
}

int Tensor::dim(int axis) const {
  const int a = axis < 0 ? rank() + axis : axis;
  if (a < 0 || a >= rank()) throw ShapeMismatch("axis out of range for " + shape_string(shape));
  return shape[static_cast<std::size_t>(a)];
}

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape, 0.0) {}

void Parameter::zero_grad() {
  if (grad.shape != value.shape) grad = Tensor(value.shape, 0.0);
  std::fill(grad.values.begin(), grad.values.end(), 0.0);
}

const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> ops = {
      "matmul", "add_bias", "tanh", "relu", "sigmoid", "grl",
      "reshape", "avg_pool2x2", "location_mean", "add", "sub", "scale",
      "abs", "sum", "mean", "weighted_sum", "domain_bce", "level_mean", "softmax_xent"};
  return ops;
}

Graph::Var Graph::push(Tensor value, std::function<void(Graph&, std::size_t)> back) {
  Node n;
  n.grad.assign(value.size(), 0.0);
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Graph::Var Graph::constant(Tensor t) { return push(std::move(t), nullptr); }

Graph::Var Graph::parameter(Parameter& p) {
  if (p.grad.shape != p.value.shape) p.zero_grad();
  const Var v = push(p.value, nullptr);
  nodes_[v.id].param = &p;
  return v;
}

double Graph::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw ShapeMismatch("expected a scalar, got " + shape_string(t.shape));
  return t[0];
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) throw ShapeMismatch("backward needs a scalar loss");
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  nodes_[loss.id].grad[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back) n.back(*this, i);
    if (n.param) {
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
    }
  }
}

Graph::Var Graph::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (B.rank() != 2 || A.rank() < 1 || A.dim(-1) != B.dim(0)) {
    throw ShapeMismatch("matmul " + shape_string(A.shape) + " x " + shape_string(B.shape));
  }
  const std::size_t K = static_cast<std::size_t>(B.dim(0));
  const std::size_t M = static_cast<std::size_t>(B.dim(1));
  const std::size_t rows = A.size() / K;
  std::vector<int> shape = A.shape;
  shape.back() = static_cast<int>(M);
  Tensor out(shape, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      const double x = A[r * K + k];
      for (std::size_t m = 0; m < M; ++m) out[r * M + m] += x * B[k * M + m];
    }
  }
  return push(std::move(out), [a, b, rows, K, M](Graph& gr, std::size_t self) {
    const auto& go = gr.g(self);
    const Tensor& A = gr.value(a);
    const Tensor& B = gr.value(b);
    auto& ga = gr.g(a.id);
    auto& gb = gr.g(b.id);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < K; ++k) {
        double acc = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
          acc += go[r * M + m] * B[k * M + m];
          gb[k * M + m] += A[r * K + k] * go[r * M + m];
        }
        ga[r * K + k] += acc;
      }
    }
  });
}

Graph::Var Graph::add_bias(Var x, Var b) {
  const Tensor& X = value(x);
  const Tensor& B = value(b);
  if (B.rank() != 1 || X.rank() < 1 || X.dim(-1) != B.dim(0)) {
    throw ShapeMismatch("add_bias " + shape_string(X.shape) + " + " + shape_string(B.shape));
  }
  const std::size_t M = B.size();
  Tensor out = X;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i % M];
  return push(std::move(out), [x, b, M](Graph& gr, std::size_t self) {
    const auto& go = gr.g(self);
    auto& gx = gr.g(x.id);
    auto& gb = gr.g(b.id);
    for (std::size_t i = 0; i < go.size(); ++i) {
      gx[i] += go[i];
      gb[i % M] += go[i];
    }
  });
}

Graph::Var Graph::unary(Var x, const std::function<double(double)>& f,
                        const std::function<double(double, double)>& df) {
  Tensor out = value(x);
  for (double& v : out.values) v = f(v);
  return push(std::move(out), [x, df](Graph& gr, std::size_t self) {
    const auto& go = gr.g(self);
    const Tensor& X = gr.value(x);
    const Tensor& Y = gr.nodes_[self].value;
    auto& gx = gr.g(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * df(X[i], Y[i]);
  });
}

Graph::Var Graph::tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Graph::Var Graph::relu(Var x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Graph::Var Graph::sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Graph::Var Graph::grl(Var x, double r) {
  if (!(r > 0.0)) throw InvalidArgument("GRL magnitude r must be positive");
  const double k = options_.flip_grl_sign ? r : -r;
  return push(value(x), [x, k](Graph& gr, std::size_t self) {
    const auto& go = gr.g(self);
    auto& gx = gr.g(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += k * go[i];
  });
}

Graph::Var Graph::reshape(Var x, std::vector<int> shape) {
  Tensor out = value(x);
  if (shape_size(shape) != out.size()) {
    throw ShapeMismatch("reshape " + shape_string(out.shape) + " to " + shape_string(shape));
  }
  out.shape = std::move(shape);
  return push(std::move(out), [x](Graph& gr, std::size_t self) {
    const auto& go = gr.g(self);
    auto& gx = gr.g(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

Graph::Var Graph::avg_pool2x2(Var x) {
  const Tensor& X = value(x);
  if (X.rank() != 4 || X.dim(1) % 2 || X.dim(2) % 2) {
    throw ShapeMismatch("avg_pool2x2 needs [n, even H, even W, C], got " + shape_string(X.shape));
  }
  const int n = X.dim(0), H = X.dim(1), W = X.dim(2), C = X.dim(3);
  const int h = H / 2, w = W / 2;
  Tensor out({n, h, w, C}, 0.0);
  auto in_idx = [=](int s, int r, int c, int ch) {
    return ((static_cast<std::size_t>(s) * H + r) * W + c) * C + ch;
  };
  auto out_idx = [=](int s, int r, int c, int ch) {
    return ((static_cast<std::size_t>(s) * h + r) * w + c) * C + ch;
  };
  for (int s = 0; s < n; ++s)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int ch = 0; ch < C; ++ch) {
          out[out_idx(s, r, c, ch)] =
              0.25 * (X[in_idx(s, 2 * r, 2 * c, ch)] + X[in_idx(s, 2 * r + 1, 2 * c, ch)] +
                      X[in_idx(s, 2 * r, 2 * c + 1, ch)] + X[in_idx(s, 2 * r + 1, 2 * c + 1, ch)]);
        }
  return push(std::move(out), [=](Graph& gr, std::size_t self) {
    const auto& go = gr.g(self);
    auto& gx = gr.g(x.id);
    for (int s = 0; s < n; ++s)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          for (int ch = 0; ch < C; ++ch) {
            const double v = 0.25 * go[out_idx(s, r, c, ch)];
            gx[in_idx(s, 2 * r, 2 * c, ch)] += v;
            gx[in_idx(s, 2 * r + 1, 2 * c, ch)] += v;
            gx[in_idx(s, 2 * r, 2 * c + 1, ch)] += v;
            gx[in_idx(s, 2 * r + 1, 2 * c + 1, ch)] += v;
          }
  });
}

Graph::Var Graph::location_mean(Var x) {
  const Tensor& X = value(x);
  if (X.rank() != 4) throw ShapeMismatch("location_mean needs [n, H, W, C], got " + shape_string(X.shape));
  const std::size_t n = X.dim(0), L = static_cast<std::size_t>(X.dim(1)) * X.dim(2), C = X.dim(3);
  Tensor out({X.dim(0), X.dim(3)}, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c) out[s * C + c] += X[(s * L + l) * C + c] / double(L);
  return push(std::move(out), [x, n, L, C](Graph& gr, std::size_t self) {
    const auto& go = gr.g(self);
    auto& gx = gr.g(x.id);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t c = 0; c < C; ++c) gx[(s * L + l) * C + c] += go[s * C + c] / double(L);
  });
}

Graph::Var Graph::add(Var a, Var b) {
  if (value(a).shape != value(b).shape) {
    throw ShapeMismatch("add " + shape_string(value(a).shape) + " + " + shape_string(value(b).shape));
  }
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += value(b)[i];
  return push(std::move(out), [a, b](Graph& gr, std::size_t self) {
    const auto& go = gr.g(self);
    for (std::size_t i = 0; i < go.size(); ++i) {
      gr.g(a.id)[i] += go[i];
      gr.g(b.id)[i] += go[i];
    }
  });
}

Graph::Var Graph::sub(Var a, Var b) {
  if (value(a).shape != value(b).shape) {
    throw ShapeMismatch("sub " + shape_string(value(a).shape) + " - " + shape_string(value(b).shape));
  }
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= value(b)[i];
  return push(std::move(out), [a, b](Graph& gr, std::size_t self) {
    const auto& go = gr.g(self);
    for (std::size_t i = 0; i < go.size(); ++i) {
      gr.g(a.id)[i] += go[i];
      gr.g(b.id)[i] -= go[i];
    }
  });
}

Graph::Var Graph::scale(Var x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Graph::Var Graph::abs(Var x) {
  return unary(x, [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Graph::Var Graph::sum(Var x) {
  const Tensor& X = value(x);
  const double s = std::accumulate(X.values.begin(), X.values.end(), 0.0);
  return push(Tensor({1}, {s}), [x](Graph& gr, std::size_t self) {
    const double go = gr.g(self)[0];
    for (double& v : gr.g(x.id)) v += go;
  });
}

Graph::Var Graph::mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(value(x).size())); }

Graph::Var Graph::weighted_sum(Var x, const std::vector<double>& w) {
  const Tensor& X = value(x);
  if (w.size() != X.size()) throw ShapeMismatch("weighted_sum weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * X[i];
  return push(Tensor({1}, {s}), [x, w](Graph& gr, std::size_t self) {
    const double go = gr.g(self)[0];
    auto& gx = gr.g(x.id);
    for (std::size_t i = 0; i < w.size(); ++i) gx[i] += go * w[i];
  });
}

namespace {

void check_prob_map(const Tensor& p, const char* op) {
  if (p.rank() != 4 || p.dim(3) != 1) {
    throw ShapeMismatch(std::string(op) + " needs [n, H, W, 1], got " + shape_string(p.shape));
  }
}

}  // namespace

Graph::Var Graph::domain_bce(Var p, int label, LocationReduce reduce) {
  const Tensor& P = value(p);
  check_prob_map(P, "domain_bce");
  if (label != 0 && label != 1) throw InvalidArgument("domain label must be 0 or 1");
  const std::size_t n = P.dim(0);
  const std::size_t L = static_cast<std::size_t>(P.dim(1)) * P.dim(2);
  const double loc = reduce == LocationReduce::Mean ? 1.0 / double(L) : 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double q = std::clamp(P[i], kProbClamp, 1.0 - kProbClamp);
    total += label == 0 ? std::log(1.0 - q) : std::log(q);
  }
  const double loss = -total * loc / double(n);
  if (!std::isfinite(loss)) throw NonFiniteLoss("domain loss is not finite");
  return push(Tensor({1}, {loss}), [p, label, n, loc](Graph& gr, std::size_t self) {
    const double go = gr.g(self)[0];
    const Tensor& P = gr.value(p);
    auto& gp = gr.g(p.id);
    for (std::size_t i = 0; i < P.size(); ++i) {
      if (P[i] < kProbClamp || P[i] > 1.0 - kProbClamp) continue;
      const double d = label == 0 ? 1.0 / (1.0 - P[i]) : -1.0 / P[i];
      gp[i] += go * d * loc / double(n);
    }
  });
}

Graph::Var Graph::level_mean(Var p, LocationReduce reduce) {
  const Tensor& P = value(p);
  check_prob_map(P, "level_mean");
  const std::size_t n = P.dim(0);
  const std::size_t L = static_cast<std::size_t>(P.dim(1)) * P.dim(2);
  const double k = (reduce == LocationReduce::Mean ? 1.0 / double(L) : 1.0) / double(n);
  return scale(sum(p), k);
}

Graph::Var Graph::softmax_xent(Var logits, const std::vector<int>& labels) {
  const Tensor& Z = value(logits);
  if (Z.rank() != 2) throw ShapeMismatch("softmax_xent needs [n, K], got " + shape_string(Z.shape));
  const std::size_t n = Z.dim(0), K = Z.dim(1);
  if (labels.size() != n) throw ShapeMismatch("label count does not match logits");
  std::vector<double> prob(Z.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= K) throw InvalidArgument("label out of range");
    const double* z = &Z.values[i * K];
    const double zmax = *std::max_element(z, z + K);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(z[k] - zmax);
    for (std::size_t k = 0; k < K; ++k) prob[i * K + k] = std::exp(z[k] - zmax) / denom;
    loss -= z[labels[i]] - zmax - std::log(denom);
  }
  loss /= double(n);
  if (!std::isfinite(loss)) throw NonFiniteLoss("task loss is not finite");
  return push(Tensor({1}, {loss}), [logits, labels, prob, n, K](Graph& gr, std::size_t self) {
    const double go = gr.g(self)[0];
    auto& gz = gr.g(logits.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const double y = static_cast<std::size_t>(labels[i]) == k ? 1.0 : 0.0;
        gz[i * K + k] += go * (prob[i * K + k] - y) / double(n);
      }
  });
}

}  // namespace lgsim
