#include "eeg2rep/data.hpp"

#include "eeg2rep/rng.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace eeg2rep {

namespace fs = std::filesystem;

void validate(const EegWindow& window) {
  if (window.samples.rows() < 1 || window.samples.cols() < 1) {
    throw DataError("window must have at least one channel and one time step");
  }
  if (!(window.sampling_rate > 0.0)) throw DataError("sampling rate must be positive");
  if (!window.samples.allFinite()) throw DataError("window contains non-finite samples");
}

void validate(const EegDataset& dataset) {
  for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
    const auto& w = dataset.windows[i];
    try {
      validate(w);
    } catch (const DataError& e) {
      throw DataError("window " + std::to_string(i) + ": " + e.what());
    }
    if (w.channels() != dataset.channels() || w.length() != dataset.length()) {
      throw DataError("window " + std::to_string(i) + " has shape " + std::to_string(w.channels()) + "x" +
                      std::to_string(w.length()) + ", expected " + std::to_string(dataset.channels()) + "x" +
                      std::to_string(dataset.length()));
    }
    if (w.sampling_rate != dataset.sampling_rate()) {
      throw DataError("window " + std::to_string(i) + " has a different sampling rate");
    }
  }
}

std::vector<int> EegDataset::labels() const {
  std::vector<int> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!windows[i].label) throw DataError("window " + std::to_string(i) + " has no label");
    out.push_back(*windows[i].label);
  }
  return out;
}

int EegDataset::num_classes() const {
  int k = 0;
  for (int y : labels()) k = std::max(k, y + 1);
  return k;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_commas(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(const char* first, const char* last, double& out) {
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

Matrix read_signal_matrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open signal file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::vector<double> row;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
      if (p == end) break;
      const char* tok = p;
      while (p < end && !std::isspace(static_cast<unsigned char>(*p))) ++p;
      double v = 0.0;
      // from_chars rejects a leading '+'; allow it for hand-written files.
      if (!(parse_double(tok, p, v) || (*tok == '+' && parse_double(tok + 1, p, v)))) {
        throw DataError(path.string() + ": row " + std::to_string(line_no) + ", column " +
                        std::to_string(row.size() + 1) + ": cannot parse '" + std::string(tok, p) + "'");
      }
      if (!std::isfinite(v)) {
        throw DataError(path.string() + ": row " + std::to_string(line_no) + ", column " +
                        std::to_string(row.size() + 1) + ": non-finite value");
      }
      row.push_back(v);
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(path.string() + ": row " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                      " columns, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + ": empty signal file");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

EegDataset load_dataset(const fs::path& manifest, DatasetFormat format, double sampling_rate) {
  if (format != DatasetFormat::csv_manifest) throw DataError("unsupported dataset format");
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(manifest.string() + ": empty manifest");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = split_commas(line);
  if (header != std::vector<std::string>{"path", "label", "subject"}) {
    throw DataError(manifest.string() + ": header must be 'path,label,subject'");
  }
  EegDataset ds;
  ds.name = manifest.stem().string();
  const fs::path base = manifest.parent_path();
  int record = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++record;
    const auto fields = split_commas(line);
    if (fields.size() != 3) {
      throw DataError(manifest.string() + ": record " + std::to_string(record) + " must have 3 fields");
    }
    EegWindow w;
    fs::path signal = fields[0];
    if (signal.is_relative()) signal = base / signal;
    try {
      w.samples = read_signal_matrix(signal);
    } catch (const DataError& e) {
      throw DataError("window " + std::to_string(record - 1) + ": " + e.what());
    }
    w.sampling_rate = sampling_rate;
    if (!fields[1].empty()) {
      int label = 0;
      const auto [ptr, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), label);
      if (ec != std::errc() || ptr != fields[1].data() + fields[1].size() || label < 0) {
        throw DataError(manifest.string() + ": record " + std::to_string(record) + ": invalid label '" +
                        fields[1] + "'");
      }
      w.label = label;
    }
    if (!fields[2].empty()) w.subject_id = fields[2];
    ds.windows.push_back(std::move(w));
  }
  validate(ds);
  return ds;
}

void write_dataset(const EegDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "signals");
  std::ofstream manifest(dir / "manifest.csv");
  manifest << "path,label,subject\n";
  for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
    const auto& w = dataset.windows[i];
    const std::string rel = "signals/w" + std::to_string(i) + ".txt";
    std::ofstream sig(dir / rel);
    sig.precision(17);
    for (Eigen::Index r = 0; r < w.samples.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.samples.cols(); ++c) sig << (c ? " " : "") << w.samples(r, c);
      sig << '\n';
    }
    manifest << rel << ',' << (w.label ? std::to_string(*w.label) : "") << ',' << w.subject_id.value_or("") << '\n';
  }
  if (!manifest) throw IoError("failed to write dataset to " + dir.string());
}

void validate(const SynthConfig& cfg) {
  if (cfg.n < 1 || cfg.channels < 1 || cfg.length < 1 || cfg.classes < 1 || cfg.subjects < 1) {
    throw ConfigError("synthetic dataset: n, channels, length, classes and subjects must be >= 1");
  }
  if (!(cfg.sampling_rate > 0.0)) throw ConfigError("synthetic dataset: sampling_rate must be positive");
  if (cfg.components < 1 || cfg.background_components < 0) {
    throw ConfigError("synthetic dataset: components must be >= 1 and background_components >= 0");
  }
  if (cfg.noise_std < 0.0 || cfg.signal_amplitude < 0.0 || cfg.background_amplitude < 0.0) {
    throw ConfigError("synthetic dataset: amplitudes must be nonnegative");
  }
  if (!(cfg.burst_fraction > 0.0 && cfg.burst_fraction <= 1.0)) {
    throw ConfigError("synthetic dataset: burst_fraction must lie in (0, 1]");
  }
  if (!(cfg.subject_scale_min > 0.0) || cfg.subject_scale_min > cfg.subject_scale_max) {
    throw ConfigError("synthetic dataset: need 0 < subject_scale_min <= subject_scale_max");
  }
  if (cfg.band_low_hz <= 0.0 || cfg.band_width_hz <= 0.0 || cfg.band_spacing_hz < cfg.band_width_hz) {
    throw ConfigError("synthetic dataset: class bands must be positive and non-overlapping");
  }
  if (cfg.band(cfg.classes - 1).second >= cfg.sampling_rate / 2.0) {
    throw ConfigError("synthetic dataset: highest class band exceeds the Nyquist frequency");
  }
}

EegDataset synthesize_dataset(const SynthConfig& cfg) {
  validate(cfg);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> subject_scale(cfg.subjects);
  {
    Rng rng(derive_seed(cfg.seed, {0x5bu}));
    for (auto& s : subject_scale) s = uniform(rng, cfg.subject_scale_min, cfg.subject_scale_max);
  }
  EegDataset ds;
  ds.name = "synthetic";
  ds.windows.reserve(cfg.n);
  const double nyquist = cfg.sampling_rate / 2.0;
  for (int i = 0; i < cfg.n; ++i) {
    Rng rng(derive_seed(cfg.seed, {1u, static_cast<std::uint64_t>(i)}));
    const int label = i % cfg.classes;
    const int subject = (i / cfg.classes) % cfg.subjects;
    const auto [lo, hi] = cfg.band(label);
    Matrix x = Matrix::Zero(cfg.channels, cfg.length);
    auto add_sinusoid = [&](double freq, double amplitude) {
      const double phase = uniform(rng, 0.0, two_pi);
      for (int c = 0; c < cfg.channels; ++c) {
        const double gain = amplitude * uniform(rng, 0.5, 1.5);
        for (int t = 0; t < cfg.length; ++t) {
          x(c, t) += gain * std::sin(two_pi * freq * t / cfg.sampling_rate + phase);
        }
      }
    };
    for (int k = 0; k < cfg.components; ++k) add_sinusoid(uniform(rng, lo, hi), cfg.signal_amplitude);
    if (cfg.burst_fraction < 1.0) {
      const int width = std::max(2, static_cast<int>(std::lround(cfg.burst_fraction * cfg.length)));
      const int start = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.length - width + 1)));
      for (int t = 0; t < cfg.length; ++t) {
        const double env = t < start || t >= start + width
                               ? 0.0
                               : 0.5 - 0.5 * std::cos(two_pi * (t - start + 0.5) / width);
        x.col(t) *= env;
      }
    }
    for (int k = 0; k < cfg.background_components; ++k) {
      add_sinusoid(uniform(rng, 1.0, 0.8 * nyquist), cfg.background_amplitude);
    }
    x *= subject_scale[subject];
    for (int c = 0; c < cfg.channels; ++c)
      for (int t = 0; t < cfg.length; ++t) x(c, t) += cfg.noise_std * standard_normal(rng);
    EegWindow w;
    w.samples = std::move(x);
    w.sampling_rate = cfg.sampling_rate;
    w.label = label;
    w.subject_id = "s" + std::to_string(subject);
    ds.windows.push_back(std::move(w));
  }
  return ds;
}

namespace {

EegDataset subset(const EegDataset& ds, const std::vector<std::size_t>& idx, const std::string& suffix) {
  EegDataset out;
  out.name = ds.name + suffix;
  out.windows.reserve(idx.size());
  for (auto i : idx) out.windows.push_back(ds.windows[i]);
  return out;
}

struct Counts {
  std::size_t train, val, test;
};

Counts split_counts(std::size_t total, const SplitSpec& spec) {
  const auto val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(total)));
  const auto test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(total)));
  if (val + test > total) throw ConfigError("split fractions leave no room for a training split");
  return {total - val - test, val, test};
}

}  // namespace

DatasetSplit split(const EegDataset& dataset, const SplitSpec& spec, std::uint64_t seed) {
  for (double f : {spec.train_fraction, spec.val_fraction, spec.test_fraction}) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("split fractions must lie in (0, 1)");
  }
  if (std::abs(spec.train_fraction + spec.val_fraction + spec.test_fraction - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  Rng rng(derive_seed(seed, {0x5b1177u}));
  std::vector<std::size_t> train, val, test;
  if (spec.mode == SplitMode::subject_wise) {
    std::set<std::string> distinct;
    for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
      const auto& s = dataset.windows[i].subject_id;
      if (!s) throw DataError("subject-wise split: window " + std::to_string(i) + " has no subject_id");
      distinct.insert(*s);
    }
    if (distinct.size() < 3) {
      throw DataError("subject-wise split needs at least 3 distinct subjects, found " +
                      std::to_string(distinct.size()));
    }
    std::vector<std::string> subjects(distinct.begin(), distinct.end());
    shuffle(subjects.begin(), subjects.end(), rng);
    const auto counts = split_counts(subjects.size(), spec);
    std::map<std::string, int> part;
    for (std::size_t k = 0; k < subjects.size(); ++k) {
      part[subjects[k]] = k < counts.train ? 0 : (k < counts.train + counts.val ? 1 : 2);
    }
    for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
      switch (part[*dataset.windows[i].subject_id]) {
        case 0: train.push_back(i); break;
        case 1: val.push_back(i); break;
        default: test.push_back(i); break;
      }
    }
  } else {
    std::vector<std::size_t> order(dataset.windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order.begin(), order.end(), rng);
    const auto counts = split_counts(order.size(), spec);
    train.assign(order.begin(), order.begin() + counts.train);
    val.assign(order.begin() + counts.train, order.begin() + counts.train + counts.val);
    test.assign(order.begin() + counts.train + counts.val, order.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    std::sort(test.begin(), test.end());
  }
  return {subset(dataset, train, "/train"), subset(dataset, val, "/val"), subset(dataset, test, "/test")};
}

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::amplitude_scale: return "amplitude_scale";
    case NoiseKind::time_shift: return "time_shift";
    case NoiseKind::dc_shift: return "dc_shift";
    case NoiseKind::gaussian: return "gaussian";
  }
  return "unknown";
}

NoiseKind parse_noise_kind(std::string_view name) {
  for (auto k : {NoiseKind::amplitude_scale, NoiseKind::time_shift, NoiseKind::dc_shift, NoiseKind::gaussian}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown noise kind '" + std::string(name) + "'");
}

NoiseSpec NoiseSpec::defaults(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::amplitude_scale: return {kind, 0.5, 2.0};
    case NoiseKind::time_shift: return {kind, -50.0, 50.0};
    case NoiseKind::dc_shift: return {kind, -10.0, 10.0};
    case NoiseKind::gaussian: return {kind, 0.0, 0.2};
  }
  return {};
}

EegWindow apply_noise(const EegWindow& window, const NoiseSpec& spec, double magnitude, std::uint64_t seed) {
  if (!(magnitude >= 0.0 && magnitude <= 1.0)) throw ConfigError("noise magnitude must lie in [0, 1]");
  if (spec.min > spec.max) throw ConfigError("noise range must satisfy min <= max");
  EegWindow out = window;
  if (magnitude == 0.0) return out;
  Rng rng(seed);
  switch (spec.kind) {
    case NoiseKind::amplitude_scale: {
      const double lo = 1.0 + magnitude * (spec.min - 1.0);
      const double hi = 1.0 + magnitude * (spec.max - 1.0);
      out.samples *= uniform(rng, lo, hi);
      break;
    }
    case NoiseKind::time_shift: {
      const auto reach = static_cast<long>(std::lround(magnitude * spec.max));
      const long shift = reach == 0 ? 0 : static_cast<long>(uniform_index(rng, 2 * reach + 1)) - reach;
      const long len = window.length();
      const long s = ((shift % len) + len) % len;
      for (long t = 0; t < len; ++t) out.samples.col((t + s) % len) = window.samples.col(t);
      break;
    }
    case NoiseKind::dc_shift:
      out.samples.array() += magnitude * spec.max;
      break;
    case NoiseKind::gaussian: {
      const double sigma = spec.min + magnitude * (spec.max - spec.min);
      for (Eigen::Index c = 0; c < out.samples.cols(); ++c)
        for (Eigen::Index r = 0; r < out.samples.rows(); ++r) out.samples(r, c) += sigma * standard_normal(rng);
      break;
    }
  }
  return out;
}

EegDataset apply_noise(const EegDataset& dataset, const NoiseSpec& spec, double magnitude, std::uint64_t seed) {
  EegDataset out;
  out.name = dataset.name;
  out.windows.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out.windows.push_back(apply_noise(dataset.windows[i], spec, magnitude, derive_seed(seed, {i})));
  }
  return out;
}

}  // namespace eeg2rep
