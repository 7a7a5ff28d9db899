#include "agcm/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "agcm/errors.hpp"
#include "agcm/head.hpp"

namespace agcm::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent generator per purpose so that changing one split's size never
// shifts another split's draws.
enum class Stream : std::uint64_t { Means = 1, Base = 2, KShotNovel = 3, Eval = 4, Background = 5 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream, std::uint64_t extra = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(extra)};
  return std::mt19937_64(seq);
}

const ConfusablePair* pair_of(const DatasetSpec& spec, int c) {
  for (const auto& p : spec.confusable_pairs) {
    if (p.first == c || p.second == c) return &p;
  }
  return nullptr;
}

bool is_confusable(const DatasetSpec& spec, int a, int b) {
  const ConfusablePair* p = pair_of(spec, a);
  return p && ((p->first == a && p->second == b) || (p->first == b && p->second == a));
}

Vector draw_sample(const Vector& mean, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  Vector v(mean.size());
  do {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = mean[i] + noise(rng);
  } while (!(v.norm() > kNormEpsilon));
  return v / v.norm();
}

struct RowBuilder {
  std::vector<Vector> rows;
  std::vector<int> labels;

  void add(Vector v, int label) {
    rows.push_back(std::move(v));
    labels.push_back(label);
  }

  Dataset build(int d, Split split, const DatasetSpec& spec) && {
    Dataset ds;
    ds.embeddings.resize(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      ds.embeddings.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    ds.labels = std::move(labels);
    ds.split = split;
    ds.num_classes = spec.num_classes();
    ds.num_base = spec.n_base;
    ds.spec = spec;
    return ds;
  }
};

int background_count(double rate, std::size_t labelled) {
  return static_cast<int>(std::lround(rate * static_cast<double>(labelled)));
}

void add_background(RowBuilder& rows, const DatasetSpec& spec, Split split) {
  auto rng = make_rng(spec.seed, Stream::Background, static_cast<std::uint64_t>(split));
  const int count = background_count(spec.background_rate, rows.rows.size());
  for (int i = 0; i < count; ++i) rows.add(random_unit_vector(spec.d, rng), kBackgroundLabel);
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Base: return "base";
    case Split::KShot: return "kshot";
    case Split::Eval: return "eval";
  }
  return "unknown";
}

void DatasetSpec::validate() const {
  auto fail = [](const std::string& msg) { throw InvalidArgument("dataset spec: " + msg); };
  if (d < 2) fail("d must be >= 2");
  if (n_base < 1) fail("n_base must be >= 1");
  if (n_novel < 0) fail("n_novel must be >= 0");
  if (k < 1) fail("K must be >= 1");
  if (samples_per_base < k) fail("samples_per_base must be >= K");
  if (!(intra_sigma > 0.0) || !std::isfinite(intra_sigma)) fail("intra_sigma must be > 0");
  if (!(min_angle_deg > 0.0 && min_angle_deg <= 90.0)) fail("min_angle_deg must lie in (0, 90]");
  if (!(background_rate >= 0.0 && background_rate < 1.0)) fail("background_rate must lie in [0, 1)");
  std::vector<int> seen;
  for (const auto& p : confusable_pairs) {
    if (p.first < 0 || p.second < 0 || p.first >= num_classes() || p.second >= num_classes() ||
        p.first == p.second) {
      fail("confusable pair (" + std::to_string(p.first) + ", " + std::to_string(p.second) +
           ") does not name two distinct classes");
    }
    if (!(p.angle_deg > 0.0 && p.angle_deg < 180.0)) fail("confusable angle must lie in (0, 180)");
    for (int c : {p.first, p.second}) {
      if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
        fail("class " + std::to_string(c) + " appears in more than one confusable pair");
      }
      seen.push_back(c);
    }
  }
}

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int label : labels) {
    if (label >= 0 && label < num_classes) ++counts[static_cast<std::size_t>(label)];
  }
  return counts;
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
  Dataset out;
  out.embeddings.resize(static_cast<Eigen::Index>(rows.size()), dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.embeddings.row(static_cast<Eigen::Index>(i)) = embeddings.row(rows[i]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[i])]);
  }
  out.split = split;
  out.num_classes = num_classes;
  out.num_base = num_base;
  out.spec = spec;
  return out;
}

double angle_deg(const Vector& a, const Vector& b) {
  const double c = std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
  return std::acos(c) * 180.0 / kPi;
}

Matrix generate_class_means(const DatasetSpec& spec) {
  spec.validate();
  auto rng = make_rng(spec.seed, Stream::Means);
  const int n = spec.num_classes();
  Matrix means(n, spec.d);
  for (int c = 0; c < n; ++c) {
    const ConfusablePair* pair = pair_of(spec, c);
    const int partner = pair ? (pair->first == c ? pair->second : pair->first) : -1;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxMeanAttempts && !placed; ++attempt) {
      Vector candidate = random_unit_vector(spec.d, rng);
      if (partner >= 0 && partner < c) {
        // Rotate away from the partner's mean by exactly the pair angle.
        const Vector anchor = means.row(partner).transpose();
        Vector ortho = candidate - anchor * anchor.dot(candidate);
        if (!(ortho.norm() > 1e-6)) continue;
        ortho.normalize();
        const double theta = pair->angle_deg * kPi / 180.0;
        candidate = std::cos(theta) * anchor + std::sin(theta) * ortho;
      }
      placed = true;
      for (int other = 0; other < c && placed; ++other) {
        if (is_confusable(spec, c, other)) continue;
        placed = angle_deg(candidate, means.row(other).transpose()) >= spec.min_angle_deg;
      }
      if (placed) means.row(c) = candidate.transpose();
    }
    if (!placed) {
      throw InfeasibleSeparation("cannot place class mean " + std::to_string(c) + " at >= " +
                                 std::to_string(spec.min_angle_deg) + " degrees in dimension " +
                                 std::to_string(spec.d) + " after " +
                                 std::to_string(kMaxMeanAttempts) + " attempts");
    }
  }
  return means;
}

GeneratedData generate(const DatasetSpec& spec) {
  GeneratedData out;
  out.class_means = generate_class_means(spec);
  auto mean_of = [&](int c) -> Vector { return out.class_means.row(c).transpose(); };

  {
    auto rng = make_rng(spec.seed, Stream::Base);
    RowBuilder rows;
    for (int c = 0; c < spec.n_base; ++c) {
      for (int i = 0; i < spec.samples_per_base; ++i) {
        rows.add(draw_sample(mean_of(c), spec.intra_sigma, rng), c);
      }
    }
    add_background(rows, spec, Split::Base);
    out.base = std::move(rows).build(spec.d, Split::Base, spec);
  }
  {
    // Base-class shots come from the abundant base data; novel shots are new.
    const Dataset base_shots = kshot_sample(out.base, spec.k, spec.seed);
    auto rng = make_rng(spec.seed, Stream::KShotNovel);
    RowBuilder rows;
    for (Eigen::Index i = 0; i < base_shots.size(); ++i) {
      rows.add(base_shots.embeddings.row(i).transpose(), base_shots.labels[i]);
    }
    for (int c = spec.n_base; c < spec.num_classes(); ++c) {
      for (int i = 0; i < spec.k; ++i) rows.add(draw_sample(mean_of(c), spec.intra_sigma, rng), c);
    }
    add_background(rows, spec, Split::KShot);
    out.kshot = std::move(rows).build(spec.d, Split::KShot, spec);
  }
  {
    auto rng = make_rng(spec.seed, Stream::Eval);
    RowBuilder rows;
    for (int c = 0; c < spec.num_classes(); ++c) {
      for (int i = 0; i < kEvalPerClass; ++i) {
        rows.add(draw_sample(mean_of(c), spec.intra_sigma, rng), c);
      }
    }
    add_background(rows, spec, Split::Eval);
    out.eval = std::move(rows).build(spec.d, Split::Eval, spec);
  }
  return out;
}

Dataset kshot_sample(const Dataset& dataset, int k, std::uint64_t seed) {
  if (k < 1) throw InvalidArgument("kshot_sample: K must be >= 1");
  std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(dataset.num_classes));
  for (std::size_t i = 0; i < dataset.labels.size(); ++i) {
    const int label = dataset.labels[i];
    if (label >= 0 && label < dataset.num_classes) {
      by_class[static_cast<std::size_t>(label)].push_back(static_cast<Eigen::Index>(i));
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;  // classes absent from this dataset (e.g. novel in base)
    if (static_cast<int>(rows.size()) < k) {
      throw ShotCountMismatch("class " + std::to_string(c) + " has " +
                              std::to_string(rows.size()) + " samples, fewer than K = " +
                              std::to_string(k));
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(k));
    chosen.insert(chosen.end(), rows.begin(), rows.end());
  }
  std::sort(chosen.begin(), chosen.end());
  Dataset out = dataset.subset(chosen);
  out.split = Split::KShot;
  return out;
}

// ---- csv --------------------------------------------------------------------

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "label";
  for (Eigen::Index j = 0; j < dataset.dim(); ++j) out << ",x" << j;
  out << '\n';
  char buf[40];
  for (Eigen::Index i = 0; i < dataset.size(); ++i) {
    out << dataset.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < dataset.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", dataset.embeddings(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError("invalid " + std::string(what) + " '" + std::string(field) + "'", line);
  }
  return value;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, Split split, std::optional<int> num_classes,
                 std::optional<int> num_base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.empty() || header[0] != "label") {
    throw ParseError(path.string() + ": header must start with 'label'", 1);
  }
  const auto d = static_cast<Eigen::Index>(header.size() - 1);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (header[static_cast<std::size_t>(j + 1)] != "x" + std::to_string(j)) {
      throw ParseError(path.string() + ": header column " + std::to_string(j + 1) +
                           " should be x" + std::to_string(j),
                       1);
    }
  }

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (static_cast<Eigen::Index>(fields.size()) != d + 1) {
      throw ParseError(path.string() + ": expected " + std::to_string(d + 1) + " columns, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    const int label = parse_number<int>(fields[0], line_no, "label");
    if (label < kBackgroundLabel) throw ParseError("negative label other than -1", line_no);
    labels.push_back(label);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      values.push_back(parse_number<double>(fields[j], line_no, "coordinate"));
    }
  }

  Dataset ds;
  ds.embeddings = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()), d);
  ds.labels = std::move(labels);
  ds.split = split;
  const int max_label = ds.labels.empty() ? -1 : *std::max_element(ds.labels.begin(), ds.labels.end());
  ds.num_classes = num_classes.value_or(max_label + 1);
  if (max_label >= ds.num_classes) {
    throw ParseError(path.string() + ": label " + std::to_string(max_label) +
                         " exceeds declared class count",
                     0);
  }
  ds.num_base = num_base.value_or(ds.num_classes);
  return ds;
}

}  // namespace agcm::data
