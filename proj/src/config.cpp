#include "agcm/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "agcm/errors.hpp"

namespace agcm::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string_view> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view why) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + ": " +
                    std::string(why));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  value = trim(value);
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "not a number");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) bad_value(key, value, "not finite");
  }
  return out;
}

int parse_int(std::string_view key, std::string_view value) { return parse_number<int>(key, value); }
double parse_real(std::string_view key, std::string_view value) {
  return parse_number<double>(key, value);
}

bool parse_bool(std::string_view key, std::string_view value) {
  value = trim(value);
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "expected true/false");
}

apf::Metric parse_metric_value(std::string_view key, std::string_view value) {
  try {
    return apf::parse_metric(trim(value));
  } catch (const InvalidArgument&) {
    bad_value(key, value, "expected cosine, euclidean or pearson");
  }
}

std::vector<double> parse_real_list(std::string_view key, std::string_view value) {
  std::vector<double> out;
  for (auto item : split_list(value)) out.push_back(parse_real(key, item));
  return out;
}

std::vector<data::ConfusablePair> parse_pairs(std::string_view key, std::string_view value) {
  std::vector<data::ConfusablePair> out;
  if (trim(value) == "none") return out;
  for (auto item : split_list(value)) {
    const auto parts = split_list(item, ':');
    if (parts.size() != 3) bad_value(key, item, "expected first:second:angle_deg");
    out.push_back({parse_int(key, parts[0]), parse_int(key, parts[1]), parse_real(key, parts[2])});
  }
  return out;
}

// Keys shared by both stages.
bool apply_stage_setting(train::StageConfig& stage, std::string_view field, std::string_view key,
                         std::string_view value) {
  if (field == "epochs") stage.epochs = parse_int(key, value);
  else if (field == "batch_size") stage.batch_size = parse_int(key, value);
  else if (field == "learning_rate") stage.learning_rate = parse_real(key, value);
  else if (field == "beta") stage.loss.beta = parse_real(key, value);
  else if (field == "freeze_projection") stage.freeze_projection = parse_bool(key, value);
  else if (field == "feature_dim") stage.feature_dim = parse_int(key, value);
  else return false;
  return true;
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

void SweepGrid::validate() const {
  for (double a : alphas) {
    if (!(a >= 0.5 && a <= 1.0)) throw ConfigError("sweep alpha " + format_double(a) + " outside [0.5, 1]");
  }
  for (double m : margins) {
    if (!(m >= -1.0 && m <= 1.0)) throw ConfigError("sweep margin " + format_double(m) + " outside [-1, 1]");
  }
}

void ExperimentConfig::validate() const {
  try {
    dataset.validate();
    base_stage.validate();
    adapt_stage.validate();
    sweep.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (base_stage.stage != train::Stage::Base || adapt_stage.stage != train::Stage::Adapt) {
    throw ConfigError("stages out of order: base must precede adapt");
  }
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (jobs < 0) throw ConfigError("jobs must be >= 0");
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

void apply_setting(ExperimentConfig& c, std::string_view key, std::string_view value) {
  value = trim(value);
  const auto dot = key.find('.');
  const std::string_view section = dot == std::string_view::npos ? "" : key.substr(0, dot);
  const std::string_view field = dot == std::string_view::npos ? key : key.substr(dot + 1);

  if (section.empty()) {
    if (field == "output_dir") c.output_dir = std::string(value);
    else if (field == "jobs") c.jobs = parse_int(key, value);
    else if (field == "seeds") {
      c.seeds.clear();
      for (auto item : split_list(value)) c.seeds.push_back(parse_number<std::uint64_t>(key, item));
    } else {
      throw ConfigError("unknown key '" + std::string(key) + "'");
    }
    return;
  }
  if (section == "dataset") {
    auto& d = c.dataset;
    if (field == "d") d.d = parse_int(key, value);
    else if (field == "n_base") d.n_base = parse_int(key, value);
    else if (field == "n_novel") d.n_novel = parse_int(key, value);
    else if (field == "samples_per_base") d.samples_per_base = parse_int(key, value);
    else if (field == "k") d.k = parse_int(key, value);
    else if (field == "intra_sigma") d.intra_sigma = parse_real(key, value);
    else if (field == "min_angle_deg") d.min_angle_deg = parse_real(key, value);
    else if (field == "confusable_pairs") d.confusable_pairs = parse_pairs(key, value);
    else if (field == "background_rate") d.background_rate = parse_real(key, value);
    else throw ConfigError("unknown key '" + std::string(key) + "'");
    return;
  }
  if (section == "base") {
    if (!apply_stage_setting(c.base_stage, field, key, value)) {
      throw ConfigError("unknown key '" + std::string(key) + "'");
    }
    return;
  }
  if (section == "adapt") {
    auto& s = c.adapt_stage;
    if (apply_stage_setting(s, field, key, value)) return;
    if (field == "alpha") s.fusion.alpha = parse_real(key, value);
    else if (field == "metric") s.fusion.metric = parse_metric_value(key, value);
    else if (field == "stop_attention_gradient") s.fusion.stop_attention_gradient = parse_bool(key, value);
    else if (field == "margin") s.loss.margin = parse_real(key, value);
    else throw ConfigError("unknown key '" + std::string(key) + "'");
    return;
  }
  if (section == "eval") {
    if (field == "fuse") c.fuse_at_eval = parse_bool(key, value);
    else throw ConfigError("unknown key '" + std::string(key) + "'");
    return;
  }
  if (section == "sweep") {
    if (field == "alphas") c.sweep.alphas = parse_real_list(key, value);
    else if (field == "margins") c.sweep.margins = parse_real_list(key, value);
    else if (field == "metrics") {
      c.sweep.metrics.clear();
      for (auto item : split_list(value)) c.sweep.metrics.push_back(parse_metric_value(key, item));
    } else {
      throw ConfigError("unknown key '" + std::string(key) + "'");
    }
    return;
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream out;
  const auto& d = c.dataset;
  auto join_reals = [](const std::vector<double>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + format_double(xs[i]);
    return s;
  };
  out << "# effective configuration\n";
  out << "dataset.d = " << d.d << "\n"
      << "dataset.n_base = " << d.n_base << "\n"
      << "dataset.n_novel = " << d.n_novel << "\n"
      << "dataset.samples_per_base = " << d.samples_per_base << "\n"
      << "dataset.k = " << d.k << "\n"
      << "dataset.intra_sigma = " << format_double(d.intra_sigma) << "\n"
      << "dataset.min_angle_deg = " << format_double(d.min_angle_deg) << "\n"
      << "dataset.confusable_pairs = ";
  if (d.confusable_pairs.empty()) out << "none";
  for (std::size_t i = 0; i < d.confusable_pairs.size(); ++i) {
    const auto& p = d.confusable_pairs[i];
    out << (i ? "," : "") << p.first << ':' << p.second << ':' << format_double(p.angle_deg);
  }
  out << "\n"
      << "dataset.background_rate = " << format_double(d.background_rate) << "\n";
  for (const auto* stage : {&c.base_stage, &c.adapt_stage}) {
    const char* prefix = stage == &c.base_stage ? "base." : "adapt.";
    out << prefix << "epochs = " << stage->epochs << "\n"
        << prefix << "batch_size = " << stage->batch_size << "\n"
        << prefix << "learning_rate = " << format_double(stage->learning_rate) << "\n"
        << prefix << "beta = " << format_double(stage->loss.beta) << "\n"
        << prefix << "freeze_projection = " << (stage->freeze_projection ? "true" : "false") << "\n"
        << prefix << "feature_dim = " << stage->feature_dim << "\n";
  }
  const auto& a = c.adapt_stage;
  out << "adapt.alpha = " << format_double(a.fusion.alpha) << "\n"
      << "adapt.metric = " << apf::to_string(a.fusion.metric) << "\n"
      << "adapt.stop_attention_gradient = " << (a.fusion.stop_attention_gradient ? "true" : "false")
      << "\n"
      << "adapt.margin = " << format_double(a.loss.margin) << "\n"
      << "eval.fuse = " << (c.fuse_at_eval ? "true" : "false") << "\n";
  if (!c.output_dir.empty()) out << "output_dir = " << c.output_dir << "\n";
  out << "seeds = ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) out << (i ? "," : "") << c.seeds[i];
  out << "\n"
      << "jobs = " << c.jobs << "\n"
      << "sweep.alphas = " << join_reals(c.sweep.alphas) << "\n"
      << "sweep.margins = " << join_reals(c.sweep.margins) << "\n"
      << "sweep.metrics = ";
  for (std::size_t i = 0; i < c.sweep.metrics.size(); ++i) {
    out << (i ? "," : "") << apf::to_string(c.sweep.metrics[i]);
  }
  out << "\n";
  return out.str();
}

}  // namespace agcm::config
