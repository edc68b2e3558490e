#include "lgsim/da_core.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

namespace lgsim {

double gradcheck_relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), kGradcheckFloor});
}

bool GradcheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [&](const GradcheckEntry& e) {
    return e.checked > 0 && e.max_rel_error < tolerance;
  });
}

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

namespace {

using Build = std::function<Graph::Var(Graph&, const std::vector<Graph::Var>&)>;

class Checker {
public:
  Checker(const GradcheckOptions& o) : opt_(o), rng_(o.seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  Tensor random(std::vector<int> shape, double lo = -1.5, double hi = 1.5) {
    Tensor t(std::move(shape));
    for (double& v : t.values) v = uniform(lo, hi);
    return t;
  }

  // Values bounded away from zero, for kinked ops.
  Tensor away_from_zero(std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values) v = (pick(0, 1) ? 1.0 : -1.0) * uniform(0.1, 1.5);
    return t;
  }

  // Compares d/dx of sum(w * build(x)) with `multiplier[i]` times the central
  // difference for input i.
  void check(const std::string& op, std::vector<Tensor> inputs, const Build& build,
             const std::vector<double>& multiplier = {}) {
    std::vector<Parameter> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) params.emplace_back("x" + std::to_string(i), std::move(inputs[i]));

    std::vector<double> w;
    {
      Graph g;
      std::vector<Graph::Var> vars;
      for (auto& p : params) vars.push_back(g.constant(p.value));
      const auto out = build(g, vars);
      for (std::size_t i = 0; i < g.value(out).size(); ++i) w.push_back(uniform(-1.0, 1.0));
    }
    auto eval = [&](bool backward) {
      Graph g(Graph::Options{opt_.inject_grl_sign_bug});
      std::vector<Graph::Var> vars;
      for (auto& p : params) vars.push_back(g.parameter(p));
      const auto f = g.weighted_sum(build(g, vars), w);
      if (backward) g.backward(f);
      return g.scalar(f);
    };
    for (auto& p : params) p.zero_grad();
    eval(true);

    GradcheckEntry& e = entry(op);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double m = multiplier.empty() ? 1.0 : multiplier[i];
      for (std::size_t k = 0; k < params[i].value.size(); ++k) {
        double& x = params[i].value[k];
        const double x0 = x;
        x = x0 + opt_.step;
        const double fp = eval(false);
        x = x0 - opt_.step;
        const double fm = eval(false);
        x = x0;
        const double numeric = (fp - fm) / (2.0 * opt_.step);
        record(e, params[i].grad[k], m * numeric);
      }
    }
  }

  void record(GradcheckEntry& e, double analytic, double expected) {
    e.checked += 1;
    e.max_rel_error = std::max(e.max_rel_error, gradcheck_relative_error(analytic, expected));
  }

  GradcheckEntry& entry(const std::string& op) {
    auto it = index_.find(op);
    if (it == index_.end()) {
      it = index_.emplace(op, report_.entries.size()).first;
      report_.entries.push_back({op, 0, 0.0});
    }
    return report_.entries[it->second];
  }

  void run_ops() {
    const int n = pick(1, 2), H = 2 * pick(1, 2), W = 2 * pick(1, 2), C = pick(1, 3), K = pick(2, 3);
    const double r = uniform(0.1, 2.0);
    const std::vector<int> map{n, H, W, C};
    const std::vector<int> prob{n, H, W, 1};
    const auto reduce = pick(0, 1) ? LocationReduce::Mean : LocationReduce::Sum;

    check("matmul", {random({n, H, K}), random({K, C})},
          [](Graph& g, const auto& v) { return g.matmul(v[0], v[1]); });
    check("add_bias", {random(map), random({C})}, [](Graph& g, const auto& v) { return g.add_bias(v[0], v[1]); });
    check("tanh", {random(map)}, [](Graph& g, const auto& v) { return g.tanh(v[0]); });
    check("relu", {away_from_zero(map)}, [](Graph& g, const auto& v) { return g.relu(v[0]); });
    check("sigmoid", {random(map, -4.0, 4.0)}, [](Graph& g, const auto& v) { return g.sigmoid(v[0]); });
    check("grl", {random(map)}, [r](Graph& g, const auto& v) { return g.grl(v[0], r); }, {-r});
    check("reshape", {random(map)},
          [=](Graph& g, const auto& v) { return g.reshape(v[0], {n * H * W, C}); });
    check("avg_pool2x2", {random(map)}, [](Graph& g, const auto& v) { return g.avg_pool2x2(v[0]); });
    check("location_mean", {random(map)}, [](Graph& g, const auto& v) { return g.location_mean(v[0]); });
    check("add", {random(map), random(map)}, [](Graph& g, const auto& v) { return g.add(v[0], v[1]); });
    check("sub", {random(map), random(map)}, [](Graph& g, const auto& v) { return g.sub(v[0], v[1]); });
    const double c = uniform(-2.0, 2.0);
    check("scale", {random(map)}, [c](Graph& g, const auto& v) { return g.scale(v[0], c); });
    check("abs", {away_from_zero(map)}, [](Graph& g, const auto& v) { return g.abs(v[0]); });
    check("sum", {random(map)}, [](Graph& g, const auto& v) { return g.sum(v[0]); });
    check("mean", {random(map)}, [](Graph& g, const auto& v) { return g.mean(v[0]); });
    check("weighted_sum", {random(map)}, [](Graph&, const auto& v) { return v[0]; });
    const int label = pick(0, 1);
    check("domain_bce", {random(prob, 0.05, 0.95)},
          [=](Graph& g, const auto& v) { return g.domain_bce(v[0], label, reduce); });
    check("level_mean", {random(prob, 0.05, 0.95)},
          [=](Graph& g, const auto& v) { return g.level_mean(v[0], reduce); });
    std::vector<int> labels;
    for (int i = 0; i < n * H; ++i) labels.push_back(pick(0, K - 1));
    check("softmax_xent", {random({n * H, K}, -3.0, 3.0)},
          [labels](Graph& g, const auto& v) { return g.softmax_xent(v[0], labels); });
  }

  // Two-layer extractor, GRL, domain classifier: extractor parameters should
  // see -r times the numeric gradient, the classifier the plain gradient.
  void run_forward_backward() {
    const int n = pick(1, 2), H = 2 * pick(1, 2), D = pick(2, 4), Hd = pick(2, 4), C = pick(2, 3);
    GrlConfig grl{uniform(0.1, 2.0)};
    std::mt19937_64 init(rng_());
    FeatureExtractor ext;
    ext.layers.push_back(Dense::make("l0", D, Hd, Activation::Tanh, init));
    ext.layers.push_back(Dense::make("l1", Hd, C, Activation::Tanh, init));
    for (auto& l : ext.layers)
      for (double& b : l.bias.value.values) b = uniform(-0.5, 0.5);
    DomainClassifier cls = DomainClassifier::make("d", C, init);
    const Tensor input = random({n, H, H, D});
    const Tensor upstream = random({n, H, H, 1}, -1.0, 1.0);

    ForwardBackward fb = [&] {
      if (!opt_.inject_grl_sign_bug) return forward_backward(ext, cls, grl, input, upstream);
      // forward_backward builds its own graph; mirror it with the fault injected.
      for (auto* p : ext.parameters()) p->zero_grad();
      for (auto* p : cls.parameters()) p->zero_grad();
      Graph g(Graph::Options{true});
      const auto prob = cls(g, g.grl(ext(g, g.constant(input)), grl.r));
      g.backward(g.weighted_sum(prob, upstream.values));
      ForwardBackward out;
      for (auto* p : ext.parameters()) out.extractor_grads.push_back(p->grad);
      for (auto* p : cls.parameters()) out.classifier_grads.push_back(p->grad);
      return out;
    }();

    auto objective = [&] {
      Graph g;
      return g.scalar(g.weighted_sum(cls(g, g.grl(ext(g, g.constant(input)), grl.r)), upstream.values));
    };
    GradcheckEntry& e = entry("forward_backward");
    auto sweep = [&](std::vector<Parameter*> params, const std::vector<Tensor>& grads, double m) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t k = 0; k < params[i]->value.size(); ++k) {
          double& x = params[i]->value[k];
          const double x0 = x;
          x = x0 + opt_.step;
          const double fp = objective();
          x = x0 - opt_.step;
          const double fm = objective();
          x = x0;
          record(e, grads[i][k], m * (fp - fm) / (2.0 * opt_.step));
        }
      }
    };
    sweep(ext.parameters(), fb.extractor_grads, -grl.r);
    sweep(cls.parameters(), fb.classifier_grads, 1.0);
  }

  // Full objective L_det + lambda (L_sample + L_anchor + L_con). Each parameter's
  // expected gradient is dL_det + lambda * s * d(domain terms), s = -r upstream
  // of the GRL and +1 downstream, both from central differences.
  void run_objective() {
    ToyTrainConfig cfg;
    cfg.data.input_dim = pick(2, 4);
    cfg.data.task_dims = 1;
    cfg.sample_widths = {pick(2, 3)};
    cfg.anchor_widths = {pick(2, 3)};
    cfg.classes = 2;
    const int n = 2, H = 2 * pick(1, 2);
    const double lambda = uniform(0.05, 1.0);
    const GrlConfig grl{uniform(0.1, 2.0)};
    const auto reduce = pick(0, 1) ? LocationReduce::Mean : LocationReduce::Sum;
    std::mt19937_64 init(rng_());
    ToyModel model = ToyModel::make(cfg, init);
    for (auto* p : model.parameters())
      if (p->value.rank() == 1)
        for (double& b : p->value.values) b = uniform(-0.5, 0.5);
    const Tensor src = random({n, H, H, cfg.data.input_dim});
    const Tensor tgt = random({n, H, H, cfg.data.input_dim}, -0.5, 2.5);
    const std::vector<int> labels{0, 1};

    const auto params = model.parameters();
    for (auto* p : params) p->zero_grad();
    {
      Graph g(Graph::Options{opt_.inject_grl_sign_bug});
      g.backward(build_toy_loss(g, model, src, labels, tgt, lambda, grl, reduce).total);
    }
    auto terms = [&] {
      Graph g;
      const LossBreakdown b = build_toy_loss(g, model, src, labels, tgt, lambda, grl, reduce).values;
      return std::pair{b.detection, b.sample + b.anchor + b.consistency};
    };
    const auto upstream = model.extractor_parameters();
    GradcheckEntry& e = entry("adversarial_objective");
    for (auto* p : params) {
      const bool reversed = std::find(upstream.begin(), upstream.end(), p) != upstream.end();
      for (std::size_t k = 0; k < p->value.size(); ++k) {
        double& x = p->value[k];
        const double x0 = x;
        x = x0 + opt_.step;
        const auto [dp, ap] = terms();
        x = x0 - opt_.step;
        const auto [dm, am] = terms();
        x = x0;
        const double det = (dp - dm) / (2.0 * opt_.step);
        const double dom = (ap - am) / (2.0 * opt_.step);
        record(e, p->grad[k], det + lambda * (reversed ? -grl.r : 1.0) * dom);
      }
    }
  }

  GradcheckReport finish() {
    report_.step = opt_.step;
    report_.tolerance = opt_.tolerance;
    report_.configurations = opt_.configurations;
    return report_;
  }

private:
  GradcheckOptions opt_;
  std::mt19937_64 rng_;
  GradcheckReport report_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (options.configurations < 1) throw InvalidArgument("gradcheck needs at least one configuration");
  if (!(options.step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  Checker c(options);
  for (int i = 0; i < options.configurations; ++i) {
    c.run_ops();
    c.run_forward_backward();
    c.run_objective();
  }
  return c.finish();
}

std::string gradcheck_to_json(const GradcheckReport& r) {
  using nlohmann::json;
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"op", e.op},
                       {"checked", e.checked},
                       {"max_rel_error", e.max_rel_error},
                       {"passed", e.checked > 0 && e.max_rel_error < r.tolerance}});
  }
  json j = {{"schema_version", 1},
            {"step", r.step},
            {"tolerance", r.tolerance},
            {"relative_error_floor", kGradcheckFloor},
            {"configurations", r.configurations},
            {"max_rel_error", r.max_rel_error()},
            {"passed", r.passed()},
            {"ops", entries}};
  return j.dump(2) + "\n";
}

}  // namespace lgsim
