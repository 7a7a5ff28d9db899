#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "agcm/apf.hpp"
#include "agcm/config.hpp"
#include "agcm/diffcore.hpp"
#include "agcm/errors.hpp"
#include "agcm/experiment.hpp"
#include "agcm/gradient_suite.hpp"
#include "agcm/margin_loss.hpp"
#include "agcm/metrics.hpp"
#include "agcm/synthdata.hpp"

namespace py = pybind11;
using namespace agcm;

namespace {

apf::FusionConfig fusion_config(double alpha, const std::string& metric, bool stop_gradient) {
  apf::FusionConfig c{alpha, apf::parse_metric(metric), stop_gradient};
  c.validate();
  return c;
}

margin::MarginLossConfig loss_config(double margin, double beta, int background_index) {
  margin::MarginLossConfig c{margin, beta, background_index};
  c.validate();
  return c;
}

py::dict dataset_dict(const data::Dataset& ds) {
  py::dict d;
  d["embeddings"] = ds.embeddings;
  d["labels"] = ds.labels;
  d["num_classes"] = ds.num_classes;
  d["num_base"] = ds.num_base;
  return d;
}

py::dict seed_dict(const experiment::SeedResult& r) {
  py::dict d;
  d["base_acc_before"] = r.base_acc_before;
  d["base_acc_after"] = r.base_acc_after;
  d["novel_acc"] = r.novel_acc;
  d["forgetting_pct"] = r.forgetting_pct;
  d["confusion_pct"] = r.confusion_pct;
  return d;
}

}  // namespace

PYBIND11_MODULE(_agcm, m) {
  m.doc() = "Attentive proposal fusion and cosine-margin loss for few-shot heads";

  py::register_exception<Error>(m, "AgcmError", PyExc_ValueError);

  m.def("cosine_sim", &diff::cosine_sim, py::arg("a"), py::arg("b"));
  m.def("pearson_sim", &diff::pearson_sim, py::arg("a"), py::arg("b"));
  m.def("neg_euclidean_sim", &diff::neg_euclidean_sim, py::arg("a"), py::arg("b"));
  m.def("softmax", &diff::softmax, py::arg("scores"));
  m.def("log_sum_exp", &diff::log_sum_exp, py::arg("scores"));

  m.def(
      "attention_weights",
      [](const Matrix& p, const std::string& metric) {
        return apf::attention_weights(p, apf::parse_metric(metric));
      },
      py::arg("embeddings"), py::arg("metric") = "cosine");
  m.def(
      "fuse",
      [](const Matrix& p, double alpha, const std::string& metric) {
        return apf::fuse(p, fusion_config(alpha, metric, false));
      },
      py::arg("embeddings"), py::arg("alpha") = 0.8, py::arg("metric") = "cosine");
  m.def(
      "fuse_vjp",
      [](const Matrix& p, const Matrix& cotangent, double alpha, const std::string& metric,
         bool stop_gradient) {
        return apf::fuse_vjp(p, fusion_config(alpha, metric, stop_gradient), cotangent);
      },
      py::arg("embeddings"), py::arg("cotangent"), py::arg("alpha") = 0.8,
      py::arg("metric") = "cosine", py::arg("stop_attention_gradient") = false);

  m.def("class_cosines", &margin::class_cosines, py::arg("features"), py::arg("weights"));
  m.def(
      "margin_logits",
      [](const Matrix& cosines, const std::vector<int>& labels, double margin, double beta,
         int background_index) {
        return margin::margin_logits(cosines, labels, loss_config(margin, beta, background_index));
      },
      py::arg("cosines"), py::arg("labels"), py::arg("margin") = 0.2, py::arg("beta") = 20.0,
      py::arg("background_index") = -1);
  m.def(
      "loss_forward",
      [](const Matrix& z, const Matrix& w, const std::vector<int>& labels, double margin,
         double beta, int background_index) {
        return margin::loss_forward(z, w, labels, loss_config(margin, beta, background_index));
      },
      py::arg("features"), py::arg("weights"), py::arg("labels"), py::arg("margin") = 0.2,
      py::arg("beta") = 20.0, py::arg("background_index") = -1);
  m.def(
      "loss_vjp",
      [](const Matrix& z, const Matrix& w, const std::vector<int>& labels, double margin,
         double beta, int background_index) {
        const auto g = margin::loss_vjp(z, w, labels, loss_config(margin, beta, background_index));
        return py::make_tuple(g.features, g.weights);
      },
      py::arg("features"), py::arg("weights"), py::arg("labels"), py::arg("margin") = 0.2,
      py::arg("beta") = 20.0, py::arg("background_index") = -1);

  m.def(
      "generate",
      [](const std::string& config_text, std::uint64_t seed) {
        data::DatasetSpec spec = config::parse_config(config_text).dataset;
        spec.seed = seed;
        const auto g = data::generate(spec);
        py::dict d;
        d["class_means"] = g.class_means;
        d["base"] = dataset_dict(g.base);
        d["kshot"] = dataset_dict(g.kshot);
        d["eval"] = dataset_dict(g.eval);
        return d;
      },
      py::arg("config_text") = "", py::arg("seed") = 0,
      "Synthetic splits for the dataset.* settings in config_text.");

  m.def(
      "forgetting",
      [](double before, double after) { return metrics::forgetting(before, after, 0.0).percent_drop; },
      py::arg("acc_before"), py::arg("acc_after"));
  m.def(
      "confusion_percentage",
      [](const Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& counts) {
        metrics::ConfusionMatrix cm;
        cm.counts = counts;
        return metrics::confusion_percentage(cm);
      },
      py::arg("counts"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int count) {
        gradcheck::SuiteOptions opts;
        opts.seed = seed;
        opts.count = count;
        py::list out;
        for (const auto& r : gradcheck::run_all(opts)) {
          py::dict d;
          d["suite"] = r.name;
          d["instances"] = r.instances;
          d["failures"] = r.failures;
          d["worst_relative_error"] = r.worst_relative_error;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("count") = 100);

  m.def(
      "run",
      [](const std::string& config_text, std::optional<std::string> out_dir) {
        const auto c = config::parse_config(config_text);
        std::optional<std::filesystem::path> dir;
        if (out_dir) dir = *out_dir;
        experiment::RunSummary summary;
        {
          py::gil_scoped_release release;
          summary = experiment::run(c, dir);
        }
        py::list seeds;
        for (const auto& r : summary.seeds) {
          py::dict d = seed_dict(r);
          d["seed"] = r.seed;
          seeds.append(d);
        }
        py::dict d;
        d["seeds"] = seeds;
        d["mean"] = seed_dict(summary.aggregate.mean);
        d["std"] = seed_dict(summary.aggregate.stddev);
        return d;
      },
      py::arg("config_text") = "", py::arg("out_dir") = std::nullopt,
      "Base training, adaptation and evaluation for every seed of the config.");
}
