#include "magnet/market_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "magnet/checksum.hpp"
#include "magnet/params.hpp"

namespace magnet {

namespace {

using nlohmann::json;

constexpr std::size_t kBaseColumns = 7;  // date,ticker,open,high,low,close,volume
constexpr const char* kHeader[kBaseColumns] = {"date", "ticker", "open", "high", "low", "close", "volume"};
constexpr double kStdFloor = 1e-8;

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void fail_at(std::size_t line, const std::string& what) {
  throw PanelError("line " + std::to_string(line) + ": " + what);
}

bool is_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  const int month = (s[5] - '0') * 10 + (s[6] - '0');
  const int day = (s[8] - '0') * 10 + (s[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

double parse_number(std::string_view field, std::size_t line, std::string_view column) {
  field = trim(field);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    fail_at(line, "cannot parse " + std::string(column) + " value '" + std::string(field) + "'");
  }
  if (!std::isfinite(value)) fail_at(line, "non-finite " + std::string(column));
  return value;
}

// Days since 1970-01-01 to a civil date (proleptic Gregorian).
std::string civil_date(long days) {
  days += 719468;
  const long era = (days >= 0 ? days : days - 146096) / 146097;
  const long doe = days - era * 146097;
  const long yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const long mp = (5 * doy + 2) / 153;
  const long d = doy - (153 * mp + 2) / 5 + 1;
  const long m = mp < 10 ? mp + 3 : mp - 9;
  const long y = yoe + era * 400 + (m <= 2 ? 1 : 0);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04ld-%02ld-%02ld", y, m, d);
  return buf;
}

}  // namespace

void MarketPanel::validate() const {
  const std::size_t n = stocks(), t = days(), f = feature_count();
  if (n == 0 || t == 0 || f == 0) throw PanelError("panel is empty");
  if (features.shape() != Shape{n, t, f}) {
    throw PanelError("features shape " + shape_str(features.shape()) + " does not match N x T x F");
  }
  if (closes.shape() != Shape{n, t}) throw PanelError("closes shape does not match N x T");
  for (std::size_t i = 1; i < t; ++i) {
    if (!(dates[i - 1] < dates[i])) throw PanelError("dates not strictly increasing at " + dates[i]);
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!(tickers[i - 1] < tickers[i])) throw PanelError("tickers not in strictly lexicographic order");
  }
  for (double c : closes.data()) {
    if (!(c > 0.0) || !std::isfinite(c)) throw PanelError("closes must be positive and finite");
  }
  require_finite(features, "panel features");
}

MarketPanel MarketPanel::slice_days(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > days()) throw PanelError("invalid day range");
  const std::size_t n = stocks(), t = days(), f = feature_count(), len = end - begin;
  MarketPanel out;
  out.tickers = tickers;
  out.feature_names = feature_names;
  out.dates.assign(dates.begin() + static_cast<std::ptrdiff_t>(begin), dates.begin() + static_cast<std::ptrdiff_t>(end));
  out.features = Tensor({n, len, f});
  out.closes = Tensor({n, len});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < len; ++d) {
      out.closes[i * len + d] = closes[i * t + begin + d];
      for (std::size_t k = 0; k < f; ++k) out.features[(i * len + d) * f + k] = features[(i * t + begin + d) * f + k];
    }
  }
  return out;
}

namespace {

std::string read_panel_file(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw PanelError(path.string() + ": no such file");
  return read_file(path);
}

}  // namespace

MarketPanel load_panel(const std::filesystem::path& csv, const LoadOptions& options) {
  const std::string text = read_panel_file(csv);
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  // ticker -> date -> numeric columns (open onwards)
  std::map<std::string, std::map<std::string, std::vector<double>>> rows;

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (header.empty()) {
      for (auto f : fields) header.emplace_back(trim(f));
      if (header.size() < kBaseColumns) fail_at(line_no, "header needs at least date,ticker,open,high,low,close,volume");
      for (std::size_t i = 0; i < kBaseColumns; ++i) {
        if (header[i] != kHeader[i]) fail_at(line_no, "header column " + std::to_string(i) + " must be " + kHeader[i]);
      }
      if (std::set<std::string>(header.begin(), header.end()).size() != header.size()) {
        fail_at(line_no, "duplicate header column");
      }
      continue;
    }
    if (fields.size() != header.size()) {
      fail_at(line_no, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    const std::string date(trim(fields[0]));
    const std::string ticker(trim(fields[1]));
    if (!is_iso_date(date)) fail_at(line_no, "date '" + date + "' is not YYYY-MM-DD");
    if (ticker.empty()) fail_at(line_no, "empty ticker");
    std::vector<double> values;
    values.reserve(header.size() - 2);
    for (std::size_t c = 2; c < header.size(); ++c) values.push_back(parse_number(fields[c], line_no, header[c]));
    for (std::size_t c = 0; c < 4; ++c) {
      if (!(values[c] > 0.0)) fail_at(line_no, "non-positive " + header[c + 2] + " price for " + ticker + " on " + date);
    }
    if (values[4] < 0.0) fail_at(line_no, "negative volume for " + ticker + " on " + date);
    auto& by_date = rows[ticker];
    if (!by_date.emplace(date, std::move(values)).second) {
      fail_at(line_no, "duplicate row for (" + date + ", " + ticker + ")");
    }
  }
  if (header.empty()) throw PanelError(csv.string() + ": missing header");
  if (rows.empty()) throw PanelError(csv.string() + ": no data rows");

  // Feature columns, as indices into the numeric values.
  std::vector<std::string> names = options.feature_columns;
  if (names.empty()) names.assign(header.begin() + 2, header.end());
  std::vector<std::size_t> columns;
  for (const auto& name : names) {
    const auto it = std::find(header.begin() + 2, header.end(), name);
    if (it == header.end()) throw PanelError("feature column '" + name + "' not in CSV header");
    columns.push_back(static_cast<std::size_t>(it - header.begin()) - 2);
  }

  std::vector<std::string> dates;
  if (options.missing == MissingPolicy::kIntersect) {
    for (const auto& [date, _] : rows.begin()->second) {
      const bool shared = std::all_of(rows.begin(), rows.end(), [&](const auto& kv) { return kv.second.count(date) > 0; });
      if (shared) dates.push_back(date);
    }
  } else {
    std::set<std::string> all;
    std::string first_common;
    for (const auto& [_, by_date] : rows) {
      for (const auto& [date, __] : by_date) all.insert(date);
      first_common = std::max(first_common, by_date.begin()->first);
    }
    for (const auto& d : all) {
      if (d >= first_common) dates.push_back(d);
    }
  }
  if (dates.empty()) throw PanelError("no trading dates shared by all tickers");

  MarketPanel p;
  for (const auto& [ticker, _] : rows) p.tickers.push_back(ticker);
  p.dates = dates;
  p.feature_names = names;
  const std::size_t n = p.tickers.size(), t = dates.size(), f = names.size();
  p.features = Tensor({n, t, f});
  p.closes = Tensor({n, t});
  std::size_t i = 0;
  for (const auto& [ticker, by_date] : rows) {
    const std::vector<double>* last = nullptr;
    for (std::size_t d = 0; d < t; ++d) {
      const auto it = by_date.find(dates[d]);
      if (it != by_date.end()) {
        last = &it->second;
      } else if (!last) {
        // Forward fill needs an earlier row; the first common date guarantees one.
        const auto prev = by_date.lower_bound(dates[d]);
        if (prev == by_date.begin()) throw PanelError("cannot forward-fill " + ticker + " on " + dates[d]);
        last = &std::prev(prev)->second;
      }
      p.closes[i * t + d] = (*last)[3];
      for (std::size_t k = 0; k < f; ++k) p.features[(i * t + d) * f + k] = (*last)[columns[k]];
    }
    ++i;
  }
  p.validate();
  return p;
}

std::filesystem::path save_panel(const MarketPanel& panel, const std::filesystem::path& dir, const std::string& stem,
                                 const std::string& extra_json) {
  panel.validate();
  const std::size_t n = panel.stocks(), t = panel.days(), f = panel.feature_count();
  auto feature_index = [&](std::string_view name) -> std::ptrdiff_t {
    const auto it = std::find(panel.feature_names.begin(), panel.feature_names.end(), name);
    return it == panel.feature_names.end() ? -1 : it - panel.feature_names.begin();
  };
  const std::ptrdiff_t close_idx = feature_index("close");
  if (close_idx >= 0) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < t; ++d)
        if (panel.features[(i * t + d) * f + static_cast<std::size_t>(close_idx)] != panel.closes[i * t + d]) {
          throw PanelError("cannot save: the 'close' feature differs from the raw closes");
        }
  }
  std::vector<std::size_t> extras;
  for (std::size_t k = 0; k < f; ++k) {
    const auto& name = panel.feature_names[k];
    if (std::find(std::begin(kHeader), std::end(kHeader), name) == std::end(kHeader)) extras.push_back(k);
  }

  std::string csv = "date,ticker,open,high,low,close,volume";
  for (std::size_t k : extras) csv += "," + panel.feature_names[k];
  csv += "\n";
  for (std::size_t d = 0; d < t; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      const double close = panel.closes[i * t + d];
      auto column = [&](const char* name, double fallback) {
        const std::ptrdiff_t k = feature_index(name);
        return k < 0 ? fallback : panel.features[(i * t + d) * f + static_cast<std::size_t>(k)];
      };
      csv += panel.dates[d] + "," + panel.tickers[i];
      for (double v : {column("open", close), column("high", close), column("low", close), close, column("volume", 0.0)}) {
        csv += "," + format_number(v);
      }
      for (std::size_t k : extras) csv += "," + format_number(panel.features[(i * t + d) * f + k]);
      csv += "\n";
    }
  }

  std::filesystem::create_directories(dir);
  const std::string csv_name = stem + ".csv";
  write_file(dir / csv_name, csv);

  json m;
  m["format"] = "magnet-panel";
  m["version"] = 1;
  m["csv"] = csv_name;
  m["N"] = n;
  m["T_total"] = t;
  m["F"] = f;
  m["feature_names"] = panel.feature_names;
  m["tickers"] = panel.tickers;
  m["checksum"] = checksum_string(csv);
  if (!extra_json.empty()) m["generator"] = json::parse(extra_json);
  const std::filesystem::path manifest = dir / (stem + ".manifest.json");
  write_file(manifest, m.dump(2) + "\n");
  return manifest;
}

PanelManifest read_manifest(const std::filesystem::path& manifest) {
  json m;
  try {
    m = json::parse(read_panel_file(manifest));
    PanelManifest out;
    if (m.at("format").get<std::string>() != "magnet-panel") throw PanelError("not a panel manifest");
    out.csv_file = m.at("csv").get<std::string>();
    out.stocks = m.at("N").get<std::size_t>();
    out.days = m.at("T_total").get<std::size_t>();
    out.feature_names = m.at("feature_names").get<std::vector<std::string>>();
    out.tickers = m.at("tickers").get<std::vector<std::string>>();
    out.checksum = m.at("checksum").get<std::string>();
    if (m.at("F").get<std::size_t>() != out.feature_names.size()) throw PanelError("manifest F mismatch");
    if (m.contains("generator")) out.extra_json = m["generator"].dump();
    return out;
  } catch (const json::exception& e) {
    throw PanelError(manifest.string() + ": malformed manifest: " + e.what());
  }
}

MarketPanel load_panel_manifest(const std::filesystem::path& manifest) {
  const PanelManifest m = read_manifest(manifest);
  const std::filesystem::path csv = manifest.parent_path() / m.csv_file;
  const std::string actual = checksum_string(read_panel_file(csv));
  if (actual != m.checksum) throw PanelError(csv.string() + ": checksum " + actual + " != manifest " + m.checksum);
  LoadOptions opts;
  opts.feature_columns = m.feature_names;
  MarketPanel p = load_panel(csv, opts);
  if (p.stocks() != m.stocks || p.days() != m.days || p.tickers != m.tickers) {
    throw PanelError(csv.string() + ": panel dimensions disagree with manifest");
  }
  return p;
}

Tensor make_labels(const Tensor& closes) {
  if (closes.rank() != 2 || closes.dim(1) < 2) throw ShapeError("make_labels expects [N, T_total] with T_total >= 2");
  const std::size_t n = closes.dim(0), t = closes.dim(1);
  Tensor y({n, t - 1});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d + 1 < t; ++d) y[i * (t - 1) + d] = closes[i * t + d + 1] > closes[i * t + d] ? 1.0 : 0.0;
  return y;
}

void SplitSpec::validate() const {
  if (!(train > 0.0 && val > 0.0 && test > 0.0)) throw std::invalid_argument("split fractions must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");
}

SplitBounds split_bounds(std::size_t days, const SplitSpec& spec) {
  spec.validate();
  const auto take = [&](double frac) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(days) * frac + 1e-9));
  };
  const std::size_t val = take(spec.val), test = take(spec.test);
  if (val == 0 || test == 0 || val + test >= days) {
    throw PanelError("split of " + std::to_string(days) + " dates leaves an empty split");
  }
  const std::size_t train = days - val - test;
  return SplitBounds{train, train + val, days};
}

MarketPanel normalize_panel(const MarketPanel& panel, NormalizationPooling pooling) {
  MarketPanel out = panel;
  const std::size_t n = panel.stocks(), t = panel.days(), f = panel.feature_count();
  // Each group is a (stock range, feature) block over every day.
  auto normalize_group = [&](std::size_t stock_begin, std::size_t stock_end, std::size_t k) {
    double mean = 0.0, lo = panel.features[(stock_begin * t) * f + k], hi = lo;
    const double count = static_cast<double>((stock_end - stock_begin) * t);
    for (std::size_t i = stock_begin; i < stock_end; ++i)
      for (std::size_t d = 0; d < t; ++d) {
        const double v = panel.features[(i * t + d) * f + k];
        mean += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    mean /= count;
    double var = 0.0;
    for (std::size_t i = stock_begin; i < stock_end; ++i)
      for (std::size_t d = 0; d < t; ++d) {
        const double e = panel.features[(i * t + d) * f + k] - mean;
        var += e * e;
      }
    const double sd = std::max(std::sqrt(var / count), kStdFloor);
    for (std::size_t i = stock_begin; i < stock_end; ++i)
      for (std::size_t d = 0; d < t; ++d) {
        double& v = out.features[(i * t + d) * f + k];
        // A constant group maps to exact zeros regardless of rounding in the mean.
        v = lo == hi ? 0.0 : (v - mean) / sd;
      }
  };
  for (std::size_t k = 0; k < f; ++k) {
    if (pooling == NormalizationPooling::kFeature) {
      normalize_group(0, n, k);
    } else {
      for (std::size_t i = 0; i < n; ++i) normalize_group(i, i + 1, k);
    }
  }
  return out;
}

PanelSplits split_and_normalize(const MarketPanel& panel, const SplitSpec& spec, NormalizationPooling pooling) {
  panel.validate();
  const SplitBounds b = split_bounds(panel.days(), spec);
  return PanelSplits{normalize_panel(panel.slice_days(0, b.train_end), pooling),
                     normalize_panel(panel.slice_days(b.train_end, b.val_end), pooling),
                     normalize_panel(panel.slice_days(b.val_end, b.total), pooling)};
}

std::vector<std::size_t> window_ends(const MarketPanel& panel, std::size_t lookback) {
  if (lookback == 0) throw std::invalid_argument("lookback must be positive");
  std::vector<std::size_t> ends;
  for (std::size_t end = lookback - 1; end + 1 < panel.days(); ++end) ends.push_back(end);
  return ends;
}

Tensor window_features(const MarketPanel& panel, std::size_t end, std::size_t lookback) {
  if (lookback == 0 || end + 1 < lookback || end >= panel.days()) throw std::out_of_range("window out of range");
  const std::size_t n = panel.stocks(), t = panel.days(), f = panel.feature_count();
  const std::size_t begin = end + 1 - lookback;
  Tensor x({n, lookback, f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < lookback; ++d)
      for (std::size_t k = 0; k < f; ++k) x[(i * lookback + d) * f + k] = panel.features[(i * t + begin + d) * f + k];
  return x;
}

std::vector<int> next_day_labels(const MarketPanel& panel, std::size_t end) {
  if (end + 1 >= panel.days()) throw std::out_of_range("no next-day close for window end");
  const std::size_t n = panel.stocks(), t = panel.days();
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = panel.closes[i * t + end + 1] > panel.closes[i * t + end] ? 1 : 0;
  return y;
}

SynthPanel synth_panel(const SynthSpec& spec) {
  if (spec.stocks == 0 || spec.days < 2 || spec.features == 0) {
    throw std::invalid_argument("synth_panel needs >= 1 stock, >= 2 days and >= 1 feature");
  }
  if (!(spec.noise >= 0.0) || !(spec.move > 0.0 && spec.move < 1.0)) {
    throw std::invalid_argument("synth_panel needs noise >= 0 and 0 < move < 1");
  }
  const std::size_t n = spec.stocks, t = spec.days, f = spec.features;
  Rng rng(spec.seed);
  SynthPanel out;

  out.weights.resize(f);
  double norm = 0.0;
  for (double& w : out.weights) {
    w = rng.normal();
    norm += w * w;
  }
  norm = std::sqrt(norm);
  for (double& w : out.weights) w /= norm;

  MarketPanel& p = out.panel;
  const int width = static_cast<int>(std::to_string(n - 1).size());
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = std::to_string(i);
    p.tickers.push_back("S" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0') + id);
  }
  for (std::size_t d = 0; d < t; ++d) p.dates.push_back(civil_date(18262 + static_cast<long>(d)));  // from 2020-01-01
  for (std::size_t k = 0; k < f; ++k) p.feature_names.push_back("f" + std::to_string(k));

  p.features = Tensor({n, t, f});
  for (double& v : p.features.mutable_data()) v = rng.normal();

  // Planted score of every (stock, day) that has a next day.
  std::vector<double> score(n * (t - 1)), noisy(n * (t - 1));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d + 1 < t; ++d) {
      double s = 0.0;
      for (std::size_t k = 0; k < f; ++k) s += out.weights[k] * p.features[(i * t + d) * f + k];
      score[i * (t - 1) + d] = s;
    }
  for (std::size_t j = 0; j < noisy.size(); ++j) noisy[j] = score[j] + spec.noise * rng.normal();

  std::vector<double> sorted = score;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  out.threshold = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);

  p.closes = Tensor({n, t});
  std::size_t agree = 0, ups = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p.closes[i * t] = 100.0 * (1.0 + rng.uniform());
    for (std::size_t d = 0; d + 1 < t; ++d) {
      const std::size_t j = i * (t - 1) + d;
      const bool up = noisy[j] > out.threshold;
      ups += up;
      agree += up == (score[j] > out.threshold);
      p.closes[i * t + d + 1] = p.closes[i * t + d] * (up ? 1.0 + spec.move : 1.0 - spec.move);
    }
  }
  out.rule_accuracy = static_cast<double>(agree) / static_cast<double>(score.size());
  out.up_fraction = static_cast<double>(ups) / static_cast<double>(score.size());
  p.validate();
  return out;
}

std::string synth_metadata_json(const SynthSpec& spec, const SynthPanel& panel) {
  json g;
  g["rule"] = "linear-threshold";
  g["seed"] = spec.seed;
  g["noise_std"] = spec.noise;
  g["daily_move"] = spec.move;
  g["weights"] = panel.weights;
  g["threshold"] = panel.threshold;
  g["rule_accuracy"] = panel.rule_accuracy;
  g["up_fraction"] = panel.up_fraction;
  return g.dump();
}

}  // namespace magnet
