#pragma once

// Dense tensors and a reverse-mode tape, just large enough for small
// per-location networks over [n, H, W, C] feature maps.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace lgsim {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;  // row-major

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);  // throws ShapeMismatch

  std::size_t size() const { return values.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int axis) const;  // negative axes count from the back
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value, accumulated by Graph::backward

  Parameter() = default;
  Parameter(std::string name, Tensor value);
  void zero_grad();
};

// How the two domain losses and the level means reduce over map locations.
enum class LocationReduce { Mean, Sum };

class Graph {
public:
  struct Var {
    std::size_t id = 0;
  };

  struct Options {
    bool flip_grl_sign = false;  // fault injection for the negative gradcheck
  };

  Graph() = default;
  explicit Graph(Options options) : options_(options) {}

  Var constant(Tensor t);
  Var parameter(Parameter& p);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and accumulates into every Parameter reached.
  void backward(Var loss);

  // a [.., K] x b [K, M] -> [.., M]
  Var matmul(Var a, Var b);
  // x [.., M] + b [M]
  Var add_bias(Var x, Var b);
  Var tanh(Var x);
  Var relu(Var x);
  Var sigmoid(Var x);
  // Identity forward; backward multiplies the gradient by -r.
  Var grl(Var x, double r);
  Var reshape(Var x, std::vector<int> shape);
  // [n, H, W, C] -> [n, H/2, W/2, C]; H and W must be even.
  Var avg_pool2x2(Var x);
  // [n, H, W, C] -> [n, C]
  Var location_mean(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var x, double c);
  Var abs(Var x);
  Var sum(Var x);
  Var mean(Var x);
  // sum_i x_i * w_i -> scalar
  Var weighted_sum(Var x, const std::vector<double>& w);
  // p [n, H, W, 1] of domain probabilities. label 0 scores log(1 - p),
  // label 1 scores log(p); -(1/n) * sum over samples of the location reduce.
  // p is clamped to [kProbClamp, 1 - kProbClamp].
  Var domain_bce(Var p, int label, LocationReduce reduce);
  // (1/n) * sum over samples of the location reduce of p [n, H, W, 1].
  Var level_mean(Var p, LocationReduce reduce);
  // Mean cross-entropy of logits [n, K] against labels in [0, K).
  Var softmax_xent(Var logits, const std::vector<int>& labels);

  static constexpr double kProbClamp = 1e-7;

private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Parameter* param = nullptr;
    std::function<void(Graph&, std::size_t)> back;
  };

  Var push(Tensor value, std::function<void(Graph&, std::size_t)> back);
  Var unary(Var x, const std::function<double(double)>& f,
            const std::function<double(double, double)>& df);  // df(x, y)
  std::vector<double>& g(std::size_t id) { return nodes_[id].grad; }

  Options options_{};
  std::vector<Node> nodes_;
};

// Names of every differentiable Graph operation, for coverage reporting.
const std::vector<std::string>& differentiable_ops();

}  // namespace lgsim
