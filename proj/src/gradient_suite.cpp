#include "agcm/gradient_suite.hpp"

#include <chrono>
#include <random>

#include "agcm/apf.hpp"
#include "agcm/head.hpp"
#include "agcm/margin_loss.hpp"

namespace agcm::gradcheck {

namespace {

using Clock = std::chrono::steady_clock;

std::mt19937_64 suite_rng(std::uint64_t seed, std::uint32_t suite) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), suite};
  return std::mt19937_64(seq);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Vector flatten(std::initializer_list<const Matrix*> parts) {
  Eigen::Index n = 0;
  for (const auto* p : parts) n += p->size();
  Vector out(n);
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    out.segment(at, p->size()) = Eigen::Map<const Vector>(p->data(), p->size());
    at += p->size();
  }
  return out;
}

Matrix slice(const Vector& flat, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(flat.data() + offset, rows, cols);
}

class Recorder {
 public:
  Recorder(std::string name, const SuiteOptions& options)
      : options_(options), start_(Clock::now()) {
    result_.name = std::move(name);
  }

  void check(const diff::ScalarFn& f, const diff::GradientFn& gradient, const Vector& point) {
    diff::GradientFn analytic = gradient;
    if (options_.corrupt_gradients) {
      analytic = [gradient](const Vector& x) -> Vector {
        return (gradient(x) * 1.01).array() + 0.01;
      };
    }
    const auto report = diff::grad_check(f, analytic, point, options_.check);
    const int instance = result_.instances++;
    if (!report.passed) ++result_.failures;
    if (result_.worst_instance < 0 || !(report.max_relative_error <= result_.worst_relative_error)) {
      result_.worst_relative_error = report.max_relative_error;
      result_.worst_instance = instance;
      result_.worst_coordinate = report.worst_index;
    }
  }

  SuiteResult finish() {
    result_.seconds = std::chrono::duration<double>(Clock::now() - start_).count();
    return result_;
  }

 private:
  const SuiteOptions& options_;
  Clock::time_point start_;
  SuiteResult result_;
};

}  // namespace

SuiteResult diffcore_suite(const SuiteOptions& options) {
  Recorder rec("diffcore", options);
  auto rng = suite_rng(options.seed, 1);
  for (int i = 0; i < options.count; ++i) {
    const int d = uniform_int(rng, 3, 12);
    const Vector a = gaussian(rng, d, 1);
    const Vector b = gaussian(rng, d, 1);
    const Vector g = gaussian(rng, d, 1);
    for (auto op : {diff::Primitive::Normalize, diff::Primitive::Softmax,
                    diff::Primitive::LogSumExp}) {
      const bool scalar_out = op == diff::Primitive::LogSumExp;
      const Vector cot = scalar_out ? Vector::Constant(1, g[0]) : g;
      rec.check([&](const Vector& x) { return cot.dot(diff::with_vjp(op, {x}).output); },
                [&](const Vector& x) { return diff::vjp(op, {x}, cot)[0]; }, a);
    }
    Vector ab(2 * d);
    ab << a, b;
    for (auto op : {diff::Primitive::CosineSim, diff::Primitive::PearsonSim,
                    diff::Primitive::NegEuclideanSim}) {
      const Vector cot = Vector::Constant(1, g[0]);
      auto split = [d](const Vector& x) {
        return std::vector<Vector>{x.head(d), x.tail(d)};
      };
      rec.check([&](const Vector& x) { return g[0] * diff::with_vjp(op, split(x)).output[0]; },
                [&](const Vector& x) {
                  auto grads = diff::vjp(op, split(x), cot);
                  Vector out(2 * d);
                  out << grads[0], grads[1];
                  return out;
                },
                ab);
    }
  }
  return rec.finish();
}

SuiteResult margin_loss_suite(const SuiteOptions& options) {
  Recorder rec("margin_loss", options);
  auto rng = suite_rng(options.seed, 2);
  for (int i = 0; i < options.count; ++i) {
    const int m = uniform_int(rng, 1, 8);
    const int n = uniform_int(rng, 2, 6);
    const int d = uniform_int(rng, 2, 10);
    const Matrix features = gaussian(rng, m, d);
    const Matrix weights = gaussian(rng, n, d);
    std::vector<int> labels(static_cast<std::size_t>(m));
    for (auto& y : labels) y = uniform_int(rng, 0, n - 1);
    margin::MarginLossConfig cfg;
    cfg.margin = uniform_real(rng, -0.5, 1.0);
    cfg.background_index = n - 1;
    const Vector point = flatten({&features, &weights});
    auto unpack = [=](const Vector& x) {
      return std::pair{slice(x, 0, m, d), slice(x, Eigen::Index{m} * d, n, d)};
    };
    rec.check(
        [&](const Vector& x) {
          auto [f, w] = unpack(x);
          return margin::loss_forward(f, w, labels, cfg);
        },
        [&](const Vector& x) {
          auto [f, w] = unpack(x);
          const auto g = margin::loss_vjp(f, w, labels, cfg);
          return flatten({&g.features, &g.weights});
        },
        point);
  }
  return rec.finish();
}

SuiteResult apf_suite(const SuiteOptions& options, bool stop_attention_gradient) {
  Recorder rec(stop_attention_gradient ? "apf_stop_gradient" : "apf_full_gradient", options);
  auto rng = suite_rng(options.seed, stop_attention_gradient ? 4 : 3);
  const apf::Metric metrics[] = {apf::Metric::Cosine, apf::Metric::NegEuclidean,
                                 apf::Metric::Pearson};
  for (int i = 0; i < options.count; ++i) {
    const int m = uniform_int(rng, 2, 8);
    const int d = uniform_int(rng, 3, 8);
    const Matrix p = gaussian(rng, m, d);
    const Matrix cot = gaussian(rng, m, d);
    apf::FusionConfig cfg;
    cfg.alpha = uniform_real(rng, 0.5, 1.0);
    cfg.metric = metrics[i % 3];
    cfg.stop_attention_gradient = stop_attention_gradient;
    // In stop-gradient mode the reference map holds the weights fixed.
    const Matrix frozen = apf::attention_weights(p, cfg.metric);
    auto fused = [&](const Matrix& x) -> Matrix {
      if (!stop_attention_gradient) return apf::fuse(x, cfg);
      return cfg.alpha * x + (1.0 - cfg.alpha) * (frozen * x);
    };
    rec.check([&](const Vector& x) { return (cot.array() * fused(slice(x, 0, m, d)).array()).sum(); },
              [&](const Vector& x) {
                const Matrix g = apf::fuse_vjp(slice(x, 0, m, d), cfg, cot);
                return flatten({&g});
              },
              flatten({&p}));
  }
  return rec.finish();
}

SuiteResult head_suite(const SuiteOptions& options) {
  Recorder rec("head", options);
  auto rng = suite_rng(options.seed, 5);
  const apf::Metric metrics[] = {apf::Metric::Cosine, apf::Metric::NegEuclidean,
                                 apf::Metric::Pearson};
  for (int i = 0; i < options.count; ++i) {
    const int d_in = uniform_int(rng, 2, 6);
    const int d_feat = uniform_int(rng, 3, 6);
    const int n = uniform_int(rng, 3, 5);
    const int m = uniform_int(rng, 2, 6);
    ClassifierHead head = make_head(d_in, d_feat, n, rng());
    head.bias = gaussian(rng, d_feat, 1);
    head.fusion.alpha = uniform_real(rng, 0.5, 1.0);
    head.fusion.metric = metrics[i % 3];
    head.fusion.stop_attention_gradient = false;
    head.loss.margin = uniform_real(rng, -0.5, 1.0);
    apf::ProposalBatch batch{gaussian(rng, m, d_in), std::vector<int>(static_cast<std::size_t>(m))};
    for (auto& y : batch.labels) y = uniform_int(rng, 0, n - 1);

    const Matrix bias_row = head.bias.transpose();
    const Vector point = flatten({&head.projection, &bias_row, &head.class_weights});
    auto unpack = [&, d_in, d_feat, n](const Vector& x) {
      ClassifierHead h = head;
      h.projection = slice(x, 0, d_in, d_feat);
      h.bias = x.segment(Eigen::Index{d_in} * d_feat, d_feat);
      h.class_weights = slice(x, Eigen::Index{d_in + 1} * d_feat, n, d_feat);
      return h;
    };
    rec.check([&](const Vector& x) { return forward_train(unpack(x), batch).loss; },
              [&](const Vector& x) {
                const auto g = forward_train(unpack(x), batch).gradients;
                const Matrix bias_grad = g.bias.transpose();
                return flatten({&g.projection, &bias_grad, &g.class_weights});
              },
              point);
  }
  return rec.finish();
}

std::vector<SuiteResult> run_all(const SuiteOptions& options) {
  return {diffcore_suite(options), margin_loss_suite(options), apf_suite(options, false),
          apf_suite(options, true), head_suite(options)};
}

}  // namespace agcm::gradcheck
