#include "mmkd/synth_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mmkd/errors.hpp"
#include "mmkd/rng.hpp"

namespace mmkd {

namespace {

// Standard deviation of the cross-modal weights relative to the unimodal ones.
constexpr double kCrossScale = 1.0;

}  // namespace

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Test: return "test";
    case SplitTag::All: return "all";
  }
  return "?";
}

void Dataset::validate() const {
  if (samples.empty()) throw DataError("dataset is empty");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.text_feats.size() != static_cast<std::size_t>(text_dim) ||
        s.image_feats.size() != static_cast<std::size_t>(image_dim)) {
      throw DataError("sample " + std::to_string(i) + " has dims (" + std::to_string(s.text_feats.size()) + ", " +
                      std::to_string(s.image_feats.size()) + "), dataset declares (" + std::to_string(text_dim) +
                      ", " + std::to_string(image_dim) + ")");
    }
    if (s.label < 0 || s.label >= num_classes) {
      throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(s.label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (const auto& s : samples) {
    if (s.label >= 0 && s.label < num_classes) ++counts[static_cast<std::size_t>(s.label)];
  }
  return counts;
}

// ---------------------------------------------------------------------------

std::vector<double> GenerationRule::scores(std::span<const double> text, std::span<const double> image) const {
  const auto dt = static_cast<std::size_t>(text_dim);
  const auto di = static_cast<std::size_t>(image_dim);
  double bilinear = 0.0;
  for (std::size_t a = 0; a < dt; ++a) {
    double row = 0.0;
    for (std::size_t b = 0; b < di; ++b) row += coupling[a * di + b] * image[b];
    bilinear += text[a] * row;
  }
  bilinear /= std::sqrt(static_cast<double>(dt * di));

  std::vector<double> out(static_cast<std::size_t>(num_classes));
  for (std::size_t c = 0; c < out.size(); ++c) {
    double t = 0.0, i = 0.0;
    for (std::size_t a = 0; a < dt; ++a) t += text_weights[c * dt + a] * text[a];
    for (std::size_t b = 0; b < di; ++b) i += image_weights[c * di + b] * image[b];
    out[c] = t / std::sqrt(static_cast<double>(dt)) + i / std::sqrt(static_cast<double>(di)) +
             cross_weights[c] * bilinear;
  }
  return out;
}

int GenerationRule::label(std::span<const double> text, std::span<const double> image) const {
  const auto s = scores(text, image);
  return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

GenerationRule make_rule(int text_dim, int image_dim, int num_classes, std::uint64_t seed) {
  if (text_dim < 2 || image_dim < 2) throw ParameterError("feature dims must be >= 2");
  if (num_classes < 2) throw ParameterError("num_classes must be >= 2");
  auto rng = make_rng(seed, streams::kData);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::size_t n, double sd) {
    std::vector<double> v(n);
    for (auto& x : v) x = sd * normal(rng);
    return v;
  };
  GenerationRule rule;
  rule.text_dim = text_dim;
  rule.image_dim = image_dim;
  rule.num_classes = num_classes;
  const auto c = static_cast<std::size_t>(num_classes);
  rule.text_weights = draw(c * static_cast<std::size_t>(text_dim), 1.0);
  rule.image_weights = draw(c * static_cast<std::size_t>(image_dim), 1.0);
  rule.cross_weights = draw(c, kCrossScale);
  rule.coupling = draw(static_cast<std::size_t>(text_dim) * static_cast<std::size_t>(image_dim), 1.0);
  return rule;
}

Dataset generate(int n, int text_dim, int image_dim, int num_classes, double noise_std, std::uint64_t seed) {
  if (num_classes < 2) throw ParameterError("classes must be >= 2, got " + std::to_string(num_classes));
  if (text_dim < 2 || image_dim < 2) {
    throw ParameterError("text and image dims must be >= 2, got " + std::to_string(text_dim) + " and " +
                         std::to_string(image_dim));
  }
  if (n < num_classes) {
    throw ParameterError("n must be >= classes, got n=" + std::to_string(n) + " classes=" + std::to_string(num_classes));
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ParameterError("noise must be >= 0");

  const GenerationRule rule = make_rule(text_dim, image_dim, num_classes, seed);
  auto rng = make_rng(seed, streams::kData + 100);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<int> quota(static_cast<std::size_t>(num_classes), n / num_classes);
  for (int c = 0; c < n % num_classes; ++c) ++quota[static_cast<std::size_t>(c)];

  Dataset ds;
  ds.text_dim = text_dim;
  ds.image_dim = image_dim;
  ds.num_classes = num_classes;
  ds.samples.reserve(static_cast<std::size_t>(n));
  const long long max_draws = 1000LL * n + 10000;
  std::vector<double> zt(static_cast<std::size_t>(text_dim)), zi(static_cast<std::size_t>(image_dim));
  for (long long draws = 0; ds.samples.size() < static_cast<std::size_t>(n); ++draws) {
    if (draws >= max_draws) throw ParameterError("class balancing did not converge; try another seed");
    for (auto& v : zt) v = normal(rng);
    for (auto& v : zi) v = normal(rng);
    const int label = rule.label(zt, zi);
    if (quota[static_cast<std::size_t>(label)] == 0) continue;
    --quota[static_cast<std::size_t>(label)];
    ModalSample s{zt, zi, label};
    if (noise_std > 0.0) {
      for (auto& v : s.text_feats) v += noise_std * normal(rng);
      for (auto& v : s.image_feats) v += noise_std * normal(rng);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

DatasetSplits split(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f > 0.0)) throw ParameterError("split fractions must be positive");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ParameterError("split fractions must sum to 1");
  }
  const auto n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw ParameterError("dataset of " + std::to_string(n) + " samples is too small to split");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, streams::kSplit);
  std::shuffle(order.begin(), order.end(), rng);

  auto take = [&](std::size_t begin, std::size_t end, SplitTag tag) {
    Dataset part;
    part.text_dim = ds.text_dim;
    part.image_dim = ds.image_dim;
    part.num_classes = ds.num_classes;
    part.split = tag;
    part.samples.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) part.samples.push_back(ds.samples[order[i]]);
    return part;
  };
  return {take(0, n_train, SplitTag::Train), take(n_train, n_train + n_val, SplitTag::Val),
          take(n_train + n_val, n, SplitTag::Test)};
}

double rule_accuracy(const GenerationRule& rule, const Dataset& ds) {
  if (ds.samples.empty()) throw ParameterError("rule_accuracy: empty dataset");
  std::size_t hits = 0;
  for (const auto& s : ds.samples) hits += rule.label(s.text_feats, s.image_feats) == s.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

std::string_view to_string(ProbeInput input) {
  switch (input) {
    case ProbeInput::Text: return "text";
    case ProbeInput::Image: return "image";
    case ProbeInput::Both: return "both";
  }
  return "?";
}

namespace {

std::vector<double> probe_features(const ModalSample& s, ProbeInput input) {
  std::vector<double> x;
  if (input != ProbeInput::Image) x.insert(x.end(), s.text_feats.begin(), s.text_feats.end());
  if (input != ProbeInput::Text) x.insert(x.end(), s.image_feats.begin(), s.image_feats.end());
  x.push_back(1.0);
  return x;
}

}  // namespace

double linear_probe_accuracy(const Dataset& train, const Dataset& eval, ProbeInput input, int iterations,
                             double learning_rate) {
  if (train.samples.empty() || eval.samples.empty()) throw ParameterError("linear probe needs non-empty datasets");
  if (iterations < 0 || !(learning_rate > 0.0)) throw ParameterError("linear probe: bad iterations or learning rate");
  const auto c = static_cast<std::size_t>(std::max(train.num_classes, eval.num_classes));
  const auto d = probe_features(train.samples.front(), input).size();
  std::vector<double> w(c * d, 0.0), grad(c * d), p(c);

  std::vector<std::vector<double>> xs;
  xs.reserve(train.size());
  for (const auto& s : train.samples) xs.push_back(probe_features(s, input));
  const double inv_n = 1.0 / static_cast<double>(train.size());

  for (int it = 0; it < iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto& x = xs[i];
      for (std::size_t k = 0; k < c; ++k) p[k] = std::inner_product(x.begin(), x.end(), w.begin() + k * d, 0.0);
      const double top = *std::max_element(p.begin(), p.end());
      double z = 0.0;
      for (auto& v : p) z += (v = std::exp(v - top));
      for (std::size_t k = 0; k < c; ++k) {
        const double r = p[k] / z - (static_cast<int>(k) == train.samples[i].label ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) grad[k * d + j] += r * x[j];
      }
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= learning_rate * inv_n * grad[j];
  }

  std::size_t hits = 0;
  for (const auto& s : eval.samples) {
    const auto x = probe_features(s, input);
    std::size_t best = 0;
    double best_score = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double score = std::inner_product(x.begin(), x.end(), w.begin() + k * d, 0.0);
      if (k == 0 || score > best_score) best = k, best_score = score;
    }
    hits += static_cast<int>(best) == s.label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(eval.size());
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string to_csv(const Dataset& ds) {
  std::string out = "label";
  for (int i = 0; i < ds.text_dim; ++i) out += ",t" + std::to_string(i);
  for (int i = 0; i < ds.image_dim; ++i) out += ",i" + std::to_string(i);
  out += '\n';
  for (const auto& s : ds.samples) {
    out += std::to_string(s.label);
    for (double v : s.text_feats) (out += ',') += format_double(v);
    for (double v : s.image_feats) (out += ',') += format_double(v);
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

// Parses "<prefix><k>" and returns k, or -1.
long column_index(std::string_view cell, char prefix) {
  if (cell.size() < 2 || cell[0] != prefix) return -1;
  long k = 0;
  auto res = std::from_chars(cell.data() + 1, cell.data() + cell.size(), k);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) return -1;
  if (cell.size() > 2 && cell[1] == '0') return -1;
  return k;
}

}  // namespace

Dataset parse_csv(std::string_view text, std::string_view source, const std::optional<CsvSchema>& expected) {
  const std::string where(source);
  auto fail = [&](std::size_t line, const std::string& msg) -> ParseError {
    return ParseError(where + ":" + std::to_string(line) + ": " + msg);
  };

  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < text.size();) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.empty() || lines[0].empty()) throw fail(1, "no header");

  const auto header = split_cells(lines[0]);
  if (header[0] != "label") throw fail(1, "header must start with 'label'");
  int text_dim = 0, image_dim = 0;
  std::size_t col = 1;
  while (col < header.size() && column_index(header[col], 't') == text_dim) ++text_dim, ++col;
  while (col < header.size() && column_index(header[col], 'i') == image_dim) ++image_dim, ++col;
  if (col != header.size()) {
    throw fail(1, "unexpected header column '" + std::string(header[col]) + "' at position " + std::to_string(col + 1));
  }
  if (text_dim == 0 || image_dim == 0) throw fail(1, "header needs at least one t* and one i* column");
  if (expected && (expected->text_dim != text_dim || expected->image_dim != image_dim)) {
    throw fail(1, "header declares text_dim=" + std::to_string(text_dim) + ", image_dim=" + std::to_string(image_dim) +
                      " but text_dim=" + std::to_string(expected->text_dim) +
                      ", image_dim=" + std::to_string(expected->image_dim) + " was expected");
  }

  Dataset ds;
  ds.text_dim = text_dim;
  ds.image_dim = image_dim;
  const std::size_t width = 1 + static_cast<std::size_t>(text_dim + image_dim);
  int max_label = -1;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    if (lines[li].empty()) {
      if (li + 1 == lines.size()) break;
      throw fail(line_no, "empty row");
    }
    const auto cells = split_cells(lines[li]);
    if (cells.size() != width) {
      throw fail(line_no, "expected " + std::to_string(width) + " columns, got " + std::to_string(cells.size()));
    }
    ModalSample s;
    {
      const auto c = cells[0];
      auto res = std::from_chars(c.data(), c.data() + c.size(), s.label);
      if (c.empty() || res.ec != std::errc() || res.ptr != c.data() + c.size()) {
        throw fail(line_no, "label '" + std::string(c) + "' is not an integer");
      }
      if (s.label < 0 || (expected && s.label >= expected->num_classes)) {
        throw fail(line_no, "label " + std::to_string(s.label) + " out of range");
      }
    }
    s.text_feats.reserve(static_cast<std::size_t>(text_dim));
    s.image_feats.reserve(static_cast<std::size_t>(image_dim));
    for (std::size_t k = 1; k < cells.size(); ++k) {
      const auto c = cells[k];
      double v = 0.0;
      auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (c.empty() || res.ec != std::errc() || res.ptr != c.data() + c.size() || !std::isfinite(v)) {
        throw fail(line_no, "column " + std::string(header[k]) + ": '" + std::string(c) + "' is not a finite number");
      }
      (k <= static_cast<std::size_t>(text_dim) ? s.text_feats : s.image_feats).push_back(v);
    }
    max_label = std::max(max_label, s.label);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw fail(2, "no data rows");
  ds.num_classes = expected ? expected->num_classes : max_label + 1;
  return ds;
}

void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const auto text = to_csv(ds);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path);
}

Dataset read_csv(const std::string& path, const std::optional<CsvSchema>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path, expected);
}

}  // namespace mmkd
