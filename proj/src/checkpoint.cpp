#include "eeg2rep/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace eeg2rep {

namespace {

constexpr std::array<char, 8> kMagic{'E', 'E', 'G', '2', 'R', 'E', 'P', '\0'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ull;
  }
  return h;
}

class Writer {
 public:
  template <class T>
  void pod(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.append(s);
  }
  void tensor(const std::string& name, const Matrix& m) {
    str(name);
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    buf_.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Parser {
 public:
  Parser(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void tensor(const std::string& expected, Matrix& m) {
    const std::string name = str();
    if (name != expected) throw IoError("checkpoint: expected tensor '" + expected + "', found '" + name + "'");
    const auto rows = pod<std::uint64_t>();
    const auto cols = pod<std::uint64_t>();
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols())) {
      throw IoError("checkpoint: tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", expected " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    const std::size_t bytes = sizeof(double) * rows * cols;
    need(bytes);
    std::memcpy(m.data(), buf_.data() + pos_, bytes);
    pos_ += bytes;
  }
  bool at_end() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw IoError("checkpoint: truncated file");
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

template <class P>
void write_group(Writer& w, const std::string& prefix, const P& p) {
  P::zip(prefix, [&](const std::string& name, const Matrix& m) { w.tensor(name, m); }, p);
}

template <class P>
void read_group(Parser& r, const std::string& prefix, P& p) {
  P::zip(prefix, [&](const std::string& name, Matrix& m) { r.tensor(name, m); }, p);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const TrainerState& s = ckpt.state;
  Writer w;
  w.raw(kMagic.data(), kMagic.size());
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(ckpt.run_config.dump());
  w.str(to_json(ckpt.pretrain).dump());
  w.str(to_json(s.model.config).dump());
  write_group(w, "trainable.", s.model.trainable);
  write_group(w, "target.", s.model.target);
  write_group(w, "adam.m.", s.adam.m);
  write_group(w, "adam.v.", s.adam.v);
  w.pod<std::int64_t>(s.adam.t);
  w.pod<double>(s.adam.beta1);
  w.pod<double>(s.adam.beta2);
  w.pod<double>(s.adam.eps);
  w.pod<std::int64_t>(s.step);
  w.pod<std::int32_t>(s.epoch);
  w.pod<std::int64_t>(s.total_steps);
  w.pod<std::uint8_t>(s.best_val.has_value());
  w.pod<double>(s.best_val.value_or(0.0));
  w.pod<std::int32_t>(s.bad_epochs);
  w.pod<std::uint8_t>(s.stopped_early);
  w.pod<std::int64_t>(s.target_passes);
  w.pod<std::int64_t>(s.samples_seen);
  std::ostringstream rng;
  rng << s.rng;
  w.str(rng.str());
  std::string& buf = w.buffer();
  const std::uint64_t sum = fnv1a(buf.data(), buf.size());
  w.pod<std::uint64_t>(sum);

  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kMagic.size() + sizeof(std::uint32_t) + sizeof(std::uint64_t) ||
      std::memcmp(buf.data(), kMagic.data(), kMagic.size()) != 0) {
    throw IoError("checkpoint " + path.string() + ": not an eeg2rep checkpoint (bad header)");
  }
  std::uint32_t version;
  std::memcpy(&version, buf.data() + kMagic.size(), sizeof version);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path.string() + ": format version " + std::to_string(version) +
                  " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, sizeof stored);
  if (fnv1a(buf.data(), body) != stored) throw IoError("checkpoint " + path.string() + ": checksum mismatch");

  try {
    Parser r(buf, body);
    r.pod<std::array<char, 8>>();
    r.pod<std::uint32_t>();
    Checkpoint c;
    c.run_config = Json::parse(r.str());
    c.pretrain = pretrain_config_from_json(Json::parse(r.str()));
    const ModelConfig model_cfg = model_config_from_json(Json::parse(r.str()));
    TrainerState& s = c.state;
    s.model = init_model(model_cfg, 0);
    s.adam = init_adam(s.model.trainable);
    read_group(r, "trainable.", s.model.trainable);
    read_group(r, "target.", s.model.target);
    read_group(r, "adam.m.", s.adam.m);
    read_group(r, "adam.v.", s.adam.v);
    s.adam.t = r.pod<std::int64_t>();
    s.adam.beta1 = r.pod<double>();
    s.adam.beta2 = r.pod<double>();
    s.adam.eps = r.pod<double>();
    s.step = r.pod<std::int64_t>();
    s.epoch = r.pod<std::int32_t>();
    s.total_steps = r.pod<std::int64_t>();
    const bool has_best = r.pod<std::uint8_t>() != 0;
    const double best = r.pod<double>();
    if (has_best) s.best_val = best;
    s.bad_epochs = r.pod<std::int32_t>();
    s.stopped_early = r.pod<std::uint8_t>() != 0;
    s.target_passes = r.pod<std::int64_t>();
    s.samples_seen = r.pod<std::int64_t>();
    std::istringstream rng(r.str());
    rng >> s.rng;
    if (!rng) throw IoError("checkpoint: unreadable RNG state");
    if (!r.at_end()) throw IoError("checkpoint: trailing bytes");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": malformed config section: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("checkpoint " + path.string() + ": invalid config section: " + e.what());
  }
}

}  // namespace eeg2rep
