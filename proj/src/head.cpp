#include "agcm/head.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <string>

#include "agcm/errors.hpp"

namespace agcm {

void ClassifierHead::validate() const {
  if (projection.rows() < 1 || projection.cols() < 1) {
    throw InvalidArgument("head: empty projection");
  }
  if (bias.size() != projection.cols()) throw DimensionMismatch("head: bias size differs from d_feat");
  if (class_weights.cols() != projection.cols()) {
    throw DimensionMismatch("head: class weight dim differs from d_feat");
  }
  if (class_weights.rows() < 2) throw InvalidArgument("head: need at least two classes");
  if (background_index < 0 || background_index >= class_weights.rows()) {
    throw InvalidArgument("head: background index out of range");
  }
  if (!projection.allFinite() || !bias.allFinite() || !class_weights.allFinite()) {
    throw InvalidArgument("head: non-finite parameter");
  }
  fusion.validate();
  loss.validate();
}

Vector random_unit_vector(Eigen::Index dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  do {
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal(rng);
  } while (!(v.norm() > kNormEpsilon));
  return v / v.norm();
}

ClassifierHead make_head(Eigen::Index input_dim, Eigen::Index feature_dim, int num_classes,
                         std::uint64_t seed) {
  if (input_dim < 1 || feature_dim < 1) throw InvalidArgument("make_head: dimensions must be >= 1");
  if (num_classes < 2) throw InvalidArgument("make_head: need at least two classes");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
  std::uniform_real_distribution<double> uniform(-bound, bound);

  ClassifierHead head;
  head.projection.resize(input_dim, feature_dim);
  for (Eigen::Index i = 0; i < input_dim; ++i) {
    for (Eigen::Index j = 0; j < feature_dim; ++j) head.projection(i, j) = uniform(rng);
  }
  head.bias = Vector::Zero(feature_dim);
  head.class_weights.resize(num_classes, feature_dim);
  for (int c = 0; c < num_classes; ++c) {
    head.class_weights.row(c) = random_unit_vector(feature_dim, rng).transpose();
  }
  head.background_index = num_classes - 1;
  head.loss.background_index = head.background_index;
  return head;
}

Matrix project(const ClassifierHead& head, const Matrix& inputs) {
  if (inputs.cols() != head.input_dim()) {
    throw DimensionMismatch("project: input dim " + std::to_string(inputs.cols()) +
                            ", head expects " + std::to_string(head.input_dim()));
  }
  Matrix out = inputs * head.projection;
  out.rowwise() += head.bias.transpose();
  return out;
}

TrainStep forward_train(const ClassifierHead& head, const apf::ProposalBatch& batch) {
  apf::validate(batch, head.num_classes());
  margin::MarginLossConfig loss_cfg = head.loss;
  loss_cfg.background_index = head.background_index;

  const Matrix features = project(head, batch.embeddings);
  const Matrix fused = apf::fuse(features, head.fusion);
  auto [loss, grads] = margin::loss_and_gradients(fused, head.class_weights, batch.labels, loss_cfg);

  const Matrix grad_features = apf::fuse_vjp(features, head.fusion, grads.features);
  TrainStep step;
  step.loss = loss;
  step.gradients.projection = batch.embeddings.transpose() * grad_features;
  step.gradients.bias = grad_features.colwise().sum().transpose();
  step.gradients.class_weights = std::move(grads.weights);
  return step;
}

namespace {

Vector row_cosines(const ClassifierHead& head, const Vector& feature) {
  return margin::class_cosines(feature.transpose(), head.class_weights).row(0).transpose();
}

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = static_cast<int>(j);
  }
  return best;
}

}  // namespace

Prediction predict(const ClassifierHead& head, const Vector& embedding, bool fuse_at_eval,
                   const std::optional<apf::ProposalBatch>& context) {
  if (embedding.size() != head.input_dim()) {
    throw DimensionMismatch("predict: embedding dim " + std::to_string(embedding.size()) +
                            ", head expects " + std::to_string(head.input_dim()));
  }
  Vector feature = project(head, embedding.transpose()).row(0).transpose();
  if (fuse_at_eval && context && context->size() > 0) {
    Matrix rows(context->size() + 1, head.input_dim());
    rows.row(0) = embedding.transpose();
    rows.bottomRows(context->size()) = context->embeddings;
    feature = apf::fuse(project(head, rows), head.fusion).row(0).transpose();
  }
  Prediction p;
  p.cosines = row_cosines(head, feature);
  p.class_id = argmax_lowest(p.cosines.transpose());
  p.score = p.cosines[p.class_id];
  return p;
}

std::vector<int> predict_classes(const ClassifierHead& head, const Matrix& inputs,
                                 bool fuse_at_eval) {
  std::vector<int> out(static_cast<std::size_t>(inputs.rows()));
  if (inputs.rows() == 0) return out;
  Matrix features = project(head, inputs);
  if (fuse_at_eval) features = apf::fuse(features, head.fusion);
  const Matrix cosines = margin::class_cosines(features, head.class_weights);
  for (Eigen::Index i = 0; i < cosines.rows(); ++i) out[i] = argmax_lowest(cosines.row(i));
  return out;
}

ClassifierHead apply_gradients(const ClassifierHead& head, const HeadGradients& gradients,
                               double learning_rate) {
  if (gradients.projection.rows() != head.projection.rows() ||
      gradients.projection.cols() != head.projection.cols() ||
      gradients.bias.size() != head.bias.size() ||
      gradients.class_weights.rows() != head.class_weights.rows() ||
      gradients.class_weights.cols() != head.class_weights.cols()) {
    throw DimensionMismatch("apply_gradients: gradient shapes differ from parameters");
  }
  ClassifierHead next = head;
  next.projection -= learning_rate * gradients.projection;
  next.bias -= learning_rate * gradients.bias;
  next.class_weights -= learning_rate * gradients.class_weights;
  return next;
}

// ---- checkpoint io ----------------------------------------------------------

namespace {

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void i64(std::int64_t v) { bytes(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }
  void matrix(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
    }
  }

 private:
  void bytes(std::uint64_t v, int n) {
    for (int k = 0; k < n; ++k) out_.put(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(bytes(8)); }
  double f64() { return std::bit_cast<double>(bytes(8)); }
  Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = f64();
    }
    return m;
  }

 private:
  std::uint64_t bytes(int n) {
    unsigned char buf[8];
    if (!in_.read(reinterpret_cast<char*>(buf), n)) {
      throw ParseError(path_ + ": truncated head checkpoint", 0);
    }
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) v |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
    return v;
  }
  std::ifstream& in_;
  std::string path_;
};

std::uint32_t metric_code(apf::Metric metric) {
  switch (metric) {
    case apf::Metric::Cosine: return 0;
    case apf::Metric::NegEuclidean: return 1;
    case apf::Metric::Pearson: return 2;
  }
  return 0;
}

}  // namespace

void save_head(const ClassifierHead& head, const std::filesystem::path& path) {
  head.validate();
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kHeadMagic, sizeof kHeadMagic);
    Writer w(out);
    w.u32(kHeadFormatVersion);
    w.u64(static_cast<std::uint64_t>(head.input_dim()));
    w.u64(static_cast<std::uint64_t>(head.feature_dim()));
    w.u64(static_cast<std::uint64_t>(head.num_classes()));
    w.i64(head.background_index);
    w.f64(head.fusion.alpha);
    w.u32(metric_code(head.fusion.metric));
    w.u32(head.fusion.stop_attention_gradient ? 1 : 0);
    w.f64(head.loss.margin);
    w.f64(head.loss.beta);
    w.matrix(head.projection);
    w.matrix(head.bias.transpose());
    w.matrix(head.class_weights);
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::path sidecar = path;
  sidecar += ".txt";
  std::ofstream txt(sidecar, std::ios::trunc);
  if (!txt) throw IoError("cannot open " + sidecar.string() + " for writing");
  txt << "format = AGCMHEAD\n"
      << "version = " << kHeadFormatVersion << "\n"
      << "d_in = " << head.input_dim() << "\n"
      << "d_feat = " << head.feature_dim() << "\n"
      << "num_classes = " << head.num_classes() << "\n"
      << "background_index = " << head.background_index << "\n"
      << "alpha = " << head.fusion.alpha << "\n"
      << "metric = " << apf::to_string(head.fusion.metric) << "\n"
      << "stop_attention_gradient = " << (head.fusion.stop_attention_gradient ? 1 : 0) << "\n"
      << "margin = " << head.loss.margin << "\n"
      << "beta = " << head.loss.beta << "\n"
      << "layout = projection[d_in*d_feat] bias[d_feat] class_weights[num_classes*d_feat], "
         "row-major little-endian f64\n";
}

ClassifierHead load_head(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kHeadMagic)) {
    throw ParseError(path.string() + ": not a head checkpoint (bad magic)", 0);
  }
  Reader r(in, path.string());
  const std::uint32_t version = r.u32();
  if (version != kHeadFormatVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version),
                     0);
  }
  const auto d_in = static_cast<Eigen::Index>(r.u64());
  const auto d_feat = static_cast<Eigen::Index>(r.u64());
  const auto n = static_cast<Eigen::Index>(r.u64());
  constexpr Eigen::Index kLimit = Eigen::Index{1} << 24;
  if (d_in < 1 || d_feat < 1 || n < 2 || d_in > kLimit || d_feat > kLimit || n > kLimit) {
    throw ParseError(path.string() + ": implausible checkpoint dimensions", 0);
  }
  ClassifierHead head;
  head.background_index = static_cast<int>(r.i64());
  head.fusion.alpha = r.f64();
  switch (r.u32()) {
    case 0: head.fusion.metric = apf::Metric::Cosine; break;
    case 1: head.fusion.metric = apf::Metric::NegEuclidean; break;
    case 2: head.fusion.metric = apf::Metric::Pearson; break;
    default: throw ParseError(path.string() + ": unknown metric code", 0);
  }
  head.fusion.stop_attention_gradient = r.u32() != 0;
  head.loss.margin = r.f64();
  head.loss.beta = r.f64();
  head.loss.background_index = head.background_index;
  head.projection = r.matrix(d_in, d_feat);
  head.bias = r.matrix(1, d_feat).row(0).transpose();
  head.class_weights = r.matrix(n, d_feat);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError(path.string() + ": trailing bytes after checkpoint payload", 0);
  }
  head.validate();
  return head;
}

}  // namespace agcm
