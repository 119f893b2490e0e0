#include "mica/pipeline/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mica/errors.hpp"

namespace mica {

PanelSeries PanelSeries::head(std::size_t rows) const {
  rows = std::min(rows, length());
  PanelSeries out;
  out.timestamps.assign(timestamps.begin(), timestamps.begin() + static_cast<std::ptrdiff_t>(rows));
  out.time_index.assign(time_index.begin(), time_index.begin() + static_cast<std::ptrdiff_t>(rows));
  out.region_ids = region_ids;
  out.frequency = frequency;
  out.values = nd::Matrix(rows, regions());
  std::copy_n(values.data().begin(), rows * regions(), out.values.data().begin());
  return out;
}

}  // namespace mica

namespace mica::pipeline {

using nd::Matrix;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

// YYYY-MM-DD → days since 1970-01-01.
bool parse_iso_date(std::string_view s, std::int64_t& days) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  std::int64_t y = 0, m = 0, d = 0;
  if (!parse_int(s.substr(0, 4), y) || !parse_int(s.substr(5, 2), m) || !parse_int(s.substr(8, 2), d)) {
    return false;
  }
  const std::chrono::year_month_day ymd{std::chrono::year(static_cast<int>(y)),
                                        std::chrono::month(static_cast<unsigned>(m)),
                                        std::chrono::day(static_cast<unsigned>(d))};
  if (!ymd.ok()) return false;
  days = std::chrono::sys_days(ymd).time_since_epoch().count();
  return true;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

PanelSeries parse_panel_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  PanelSeries panel;

  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() < 2 || fields[0] != "date") {
      throw IngestionError(line_no, source + ": header must be 'date,<region_1>,...'");
    }
    std::set<std::string_view> seen;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (fields[i].empty()) throw IngestionError(line_no, source + ": empty region name");
      if (!seen.insert(fields[i]).second) {
        throw IngestionError(line_no, source + ": duplicate region '" + std::string(fields[i]) + "'");
      }
      panel.region_ids.emplace_back(fields[i]);
    }
    have_header = true;
    break;
  }
  if (!have_header) throw IngestionError(line_no, source + ": empty file");

  const std::size_t c = panel.region_ids.size();
  std::vector<double> values;
  std::vector<std::size_t> lines;
  bool iso = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != c + 1) {
      throw IngestionError(line_no, source + ": expected " + std::to_string(c + 1) +
                                        " fields, found " + std::to_string(fields.size()));
    }
    std::int64_t stamp = 0;
    const bool is_date = parse_iso_date(fields[0], stamp);
    if (!is_date && !parse_int(fields[0], stamp)) {
      throw IngestionError(line_no, source + ": unparseable timestamp '" + std::string(fields[0]) + "'");
    }
    if (panel.time_index.empty()) {
      iso = is_date;
    } else if (iso != is_date) {
      throw IngestionError(line_no, source + ": mixed timestamp formats");
    }
    if (!panel.time_index.empty()) {
      const std::int64_t prev = panel.time_index.back();
      if (stamp == prev) {
        throw IngestionError(line_no, source + ": duplicate timestamp '" + std::string(fields[0]) + "'");
      }
      if (stamp < prev) {
        throw IngestionError(line_no, source + ": timestamp '" + std::string(fields[0]) +
                                          "' is earlier than the previous row");
      }
      if (panel.time_index.size() >= 2) {
        const std::int64_t step = panel.time_index[1] - panel.time_index[0];
        if (stamp - prev != step) {
          throw IngestionError(line_no, source + ": gap or uneven spacing before '" +
                                            std::string(fields[0]) + "' (expected step " +
                                            std::to_string(step) + ")");
        }
      }
    }
    for (std::size_t i = 1; i <= c; ++i) {
      double v = 0.0;
      if (!parse_double(fields[i], v)) {
        throw IngestionError(line_no, source + ": non-numeric cell '" + std::string(fields[i]) +
                                          "' in column '" + panel.region_ids[i - 1] + "'");
      }
      values.push_back(v);
    }
    panel.timestamps.emplace_back(fields[0]);
    panel.time_index.push_back(stamp);
    lines.push_back(line_no);
  }
  if (panel.time_index.empty()) throw IngestionError(line_no, source + ": no data rows");

  panel.frequency = Frequency::daily;
  if (iso && panel.time_index.size() >= 2) {
    const std::int64_t step = panel.time_index[1] - panel.time_index[0];
    if (step == 7) {
      panel.frequency = Frequency::weekly;
    } else if (step != 1) {
      throw IngestionError(lines[1], source + ": unsupported date spacing of " +
                                         std::to_string(step) + " days");
    }
  }
  panel.values = Matrix(panel.time_index.size(), c, std::move(values));
  return panel;
}

PanelSeries load_panel_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(0, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_panel_csv(buf.str(), path);
}

std::string format_panel_csv(const PanelSeries& panel) {
  std::string out = "date";
  for (const auto& r : panel.region_ids) out += "," + r;
  out += "\n";
  char num[64];
  for (std::size_t t = 0; t < panel.length(); ++t) {
    out += panel.timestamps.at(t);
    for (std::size_t c = 0; c < panel.regions(); ++c) {
      auto [ptr, ec] = std::to_chars(num, num + sizeof(num), panel.values(t, c));
      out += ',';
      out.append(num, ptr);
    }
    out += '\n';
  }
  return out;
}

void write_panel_csv(const PanelSeries& panel, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError(0, "cannot write '" + path + "'");
  out << format_panel_csv(panel);
}

PanelSeries align_regions(const PanelSeries& reference, const PanelSeries& other) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < other.region_ids.size(); ++i) pos[other.region_ids[i]] = i;
  std::vector<std::string> missing, extra;
  for (const auto& r : reference.region_ids) {
    if (!pos.count(r)) missing.push_back(r);
  }
  std::set<std::string> ref(reference.region_ids.begin(), reference.region_ids.end());
  for (const auto& r : other.region_ids) {
    if (!ref.count(r)) extra.push_back(r);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "region sets differ;";
    auto list = [&](const char* label, const std::vector<std::string>& v) {
      if (v.empty()) return;
      msg += std::string(" ") + label + ":";
      for (const auto& r : v) msg += " " + r;
      msg += ";";
    };
    list("missing from mobility", missing);
    list("only in mobility", extra);
    throw ConfigError(msg);
  }
  PanelSeries out = other;
  out.region_ids = reference.region_ids;
  for (std::size_t t = 0; t < other.length(); ++t) {
    for (std::size_t c = 0; c < reference.regions(); ++c) {
      out.values(t, c) = other.values(t, pos.at(reference.region_ids[c]));
    }
  }
  return out;
}

SplitRanges chronological_split(std::size_t n, const SplitSpec& spec, std::size_t lookback,
                                std::size_t horizon) {
  spec.validate();
  const std::size_t window = lookback + horizon;
  const auto a = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n)));
  const auto b = static_cast<std::size_t>(std::floor((spec.train + spec.val) * static_cast<double>(n)));
  SplitRanges r{{0, a}, {a, b}, {b, n}};
  if (r.train.size() < window || r.val.size() < window || r.test.size() < window) {
    std::size_t minimum = 3 * window;
    while (true) {
      const auto ma = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(minimum)));
      const auto mb = static_cast<std::size_t>(
          std::floor((spec.train + spec.val) * static_cast<double>(minimum)));
      if (ma >= window && mb - ma >= window && minimum - mb >= window) break;
      ++minimum;
    }
    throw InsufficientDataError("panel of length " + std::to_string(n) +
                                " is too short for lookback " + std::to_string(lookback) +
                                " and horizon " + std::to_string(horizon) +
                                "; minimum length is " + std::to_string(minimum));
  }
  return r;
}

Normalizer Normalizer::fit(const Matrix& values, IndexRange train) {
  if (train.size() == 0 || train.end > values.rows()) {
    throw InsufficientDataError("normalizer needs a non-empty training range inside the panel");
  }
  Normalizer n;
  const std::size_t c = values.cols();
  n.mean.assign(c, 0.0);
  n.std.assign(c, 1.0);
  const auto count = static_cast<double>(train.size());
  for (std::size_t j = 0; j < c; ++j) {
    double sum = 0.0;
    for (std::size_t t = train.begin; t < train.end; ++t) sum += values(t, j);
    const double mu = sum / count;
    double ss = 0.0;
    for (std::size_t t = train.begin; t < train.end; ++t) ss += (values(t, j) - mu) * (values(t, j) - mu);
    const double sd = std::sqrt(ss / count);
    n.mean[j] = mu;
    // A constant training column keeps unit scale so it passes through shifted only.
    n.std[j] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

Matrix Normalizer::transform(const Matrix& values) const {
  if (values.cols() != mean.size()) {
    throw ShapeError("normalizer fitted on " + std::to_string(mean.size()) + " regions, got " +
                     values.shape_str());
  }
  Matrix out(values.rows(), values.cols());
  for (std::size_t t = 0; t < values.rows(); ++t) {
    for (std::size_t j = 0; j < values.cols(); ++j) out(t, j) = forward(values(t, j), j);
  }
  return out;
}

nlohmann::json Normalizer::to_json() const { return {{"mean", mean}, {"std", std}}; }

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  Normalizer n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.std = j.at("std").get<std::vector<double>>();
  if (n.mean.size() != n.std.size()) throw ConfigError("normalizer mean/std length mismatch");
  return n;
}

std::size_t window_count(IndexRange range, std::size_t lookback, std::size_t horizon) {
  const std::size_t w = lookback + horizon;
  return range.size() < w ? 0 : range.size() - w + 1;
}

forecast::ForecastBatch assemble_batch(const Matrix& normalized, const std::vector<std::size_t>& starts,
                                       std::size_t lookback, std::size_t horizon) {
  const std::size_t c = normalized.cols();
  forecast::ForecastBatch b;
  b.samples = starts.size();
  b.inputs = Matrix(starts.size() * c, lookback);
  b.targets = Matrix(starts.size() * c, horizon);
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const std::size_t t0 = starts[s];
    if (t0 + lookback + horizon > normalized.rows()) {
      throw ShapeError("window starting at " + std::to_string(t0) + " runs past the panel end");
    }
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t row = s * c + j;
      for (std::size_t k = 0; k < lookback; ++k) b.inputs(row, k) = normalized(t0 + k, j);
      for (std::size_t k = 0; k < horizon; ++k) b.targets(row, k) = normalized(t0 + lookback + k, j);
    }
  }
  return b;
}

std::vector<forecast::ForecastBatch> window_batches(const Matrix& values, IndexRange range,
                                                    std::size_t lookback, std::size_t horizon,
                                                    std::size_t batch_size, const Normalizer& norm) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (range.end > values.rows()) throw ShapeError("window range runs past the panel end");
  const Matrix normalized = norm.transform(values);
  const std::size_t n = window_count(range, lookback, horizon);
  std::vector<forecast::ForecastBatch> out;
  for (std::size_t first = 0; first < n; first += batch_size) {
    std::vector<std::size_t> starts;
    for (std::size_t w = first; w < std::min(n, first + batch_size); ++w) starts.push_back(range.begin + w);
    out.push_back(assemble_batch(normalized, starts, lookback, horizon));
  }
  return out;
}

Matrix inverse_transform(const Matrix& normalized, const Normalizer& norm) {
  const std::size_t c = norm.mean.size();
  if (c == 0 || normalized.rows() % c != 0) {
    throw ShapeError("inverse_transform: " + std::to_string(normalized.rows()) +
                     " rows are not a multiple of " + std::to_string(c) + " regions");
  }
  Matrix out(normalized.rows(), normalized.cols());
  for (std::size_t r = 0; r < normalized.rows(); ++r) {
    for (std::size_t k = 0; k < normalized.cols(); ++k) out(r, k) = norm.inverse(normalized(r, k), r % c);
  }
  return out;
}

}  // namespace mica::pipeline
