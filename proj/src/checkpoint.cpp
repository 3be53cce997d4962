#include "fcac/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "fcac/rng.hpp"

namespace fcac::checkpoint {

namespace {

constexpr char kMagic[8] = {'F', 'C', 'A', 'C', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const std::uint8_t* data, size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
  void i32(std::int32_t v) { raw(&v, sizeof(v)); }
  void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
  void f64(double v) { raw(&v, sizeof(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) i32(d);
    raw(t.data(), static_cast<size_t>(t.size()) * sizeof(double));
  }
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, size_t n) : data_(data), size_(n) {}

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::int32_t i32() { return get<std::int32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }

  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  std::pair<std::string, Tensor> tensor() {
    std::string name = str();
    const std::uint32_t ndim = u32();
    if (ndim == 0 || ndim > 8) fail(ErrorCode::kCorruptChecksum, "implausible tensor rank");
    std::vector<int> shape;
    long long total = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      const std::int32_t d = i32();
      if (d <= 0) fail(ErrorCode::kCorruptChecksum, "non-positive tensor dim");
      shape.push_back(d);
      total *= d;
    }
    need(static_cast<size_t>(total) * sizeof(double));
    std::vector<double> data(static_cast<size_t>(total));
    std::memcpy(data.data(), data_ + pos_, data.size() * sizeof(double));
    pos_ += data.size() * sizeof(double);
    return {std::move(name), Tensor(std::move(shape), std::move(data))};
  }

  void raw(void* out, size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }

 private:
  template <class T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  void need(size_t n) {
    if (pos_ + n > size_) fail(ErrorCode::kCorruptChecksum, "checkpoint payload truncated");
  }

  const std::uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

Tensor int_vector_tensor(const std::vector<int>& v) {
  Tensor t({static_cast<int>(v.size()) + 1});  // +1 so empty lists stay representable
  t[0] = static_cast<double>(v.size());
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<long long>(i) + 1] = v[i];
  return t;
}

std::vector<int> tensor_int_vector(const Tensor& t) {
  if (t.size() < 1) fail(ErrorCode::kCorruptChecksum, "bad int-vector tensor");
  const int n = static_cast<int>(t[0]);
  if (n < 0 || n + 1 > t.size()) fail(ErrorCode::kCorruptChecksum, "bad int-vector length");
  std::vector<int> v(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = static_cast<int>(t[i + 1]);
  return v;
}

}  // namespace

std::uint64_t config_digest(const embedder::EmbedderConfig& cfg) {
  std::string s = "d=" + std::to_string(cfg.embedding_dim) + ";p=" +
                  std::to_string(cfg.projection_dim) + ";m=" + std::to_string(cfg.n_mels) + ";c=";
  for (int c : cfg.channels) s += std::to_string(c) + ",";
  s += ";b=";
  for (int b : cfg.blocks) s += std::to_string(b) + ",";
  return fnv1a(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.u64(config_digest(ckpt.params.config));
  w.u64(ckpt.run_seed);
  w.i32(ckpt.completed_sessions);
  w.u32(ckpt.params.frozen ? 1 : 0);

  const embedder::EmbedderConfig& cfg = ckpt.params.config;
  w.i32(cfg.embedding_dim);
  w.i32(cfg.projection_dim);
  w.i32(cfg.n_mels);
  w.u32(static_cast<std::uint32_t>(cfg.channels.size()));
  for (int c : cfg.channels) w.i32(c);
  for (int b : cfg.blocks) w.i32(b);

  const classifier::StochasticClassifierState& st = ckpt.state;
  std::uint32_t n_tensors = static_cast<std::uint32_t>(ckpt.params.tensors.size()) + 2;
  const bool has_classifier = st.n_classes() > 0;
  if (has_classifier) n_tensors += 2;
  w.u32(n_tensors);
  for (const auto& [name, t] : ckpt.params.tensors.items()) w.tensor("param." + name, t);
  if (has_classifier) {
    w.tensor("classifier.mu", st.mu);
    w.tensor("classifier.sigma", st.sigma);
  }
  w.tensor("classifier.class_ids", int_vector_tensor(st.class_ids));
  w.tensor("classifier.session_boundaries", int_vector_tensor(st.session_boundaries));

  const std::uint64_t checksum = fnv1a(w.bytes().data(), w.bytes().size());
  w.u64(checksum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  if (!out) fail(ErrorCode::kIoError, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
    fail(ErrorCode::kCorruptChecksum, "checkpoint file too short");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::kMalformedHeader, "not a checkpoint file");
  }
  const size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (fnv1a(bytes.data(), body) != stored) {
    fail(ErrorCode::kCorruptChecksum, "checkpoint checksum mismatch");
  }

  Reader r(bytes.data(), body);
  char magic[8];
  r.raw(magic, sizeof(magic));
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    fail(ErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version) +
                                          ", reader supports " + std::to_string(kVersion));
  }
  const std::uint64_t digest = r.u64();

  Checkpoint ckpt;
  ckpt.run_seed = r.u64();
  ckpt.completed_sessions = r.i32();
  const bool frozen = r.u32() != 0;

  embedder::EmbedderConfig cfg;
  cfg.embedding_dim = r.i32();
  cfg.projection_dim = r.i32();
  cfg.n_mels = r.i32();
  const std::uint32_t n_stages = r.u32();
  cfg.channels.clear();
  cfg.blocks.clear();
  for (std::uint32_t i = 0; i < n_stages; ++i) cfg.channels.push_back(r.i32());
  for (std::uint32_t i = 0; i < n_stages; ++i) cfg.blocks.push_back(r.i32());
  cfg.validate();
  if (config_digest(cfg) != digest) {
    fail(ErrorCode::kCorruptChecksum, "config digest does not match stored config");
  }

  ckpt.params.config = cfg;
  ckpt.params.frozen = frozen;

  const std::uint32_t n_tensors = r.u32();
  Tensor mu, sigma, class_ids, boundaries;
  bool has_mu = false;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto [name, t] = r.tensor();
    if (name.rfind("param.", 0) == 0) {
      ckpt.params.tensors.add(name.substr(6), std::move(t));
    } else if (name == "classifier.mu") {
      mu = std::move(t);
      has_mu = true;
    } else if (name == "classifier.sigma") {
      sigma = std::move(t);
    } else if (name == "classifier.class_ids") {
      class_ids = std::move(t);
    } else if (name == "classifier.session_boundaries") {
      boundaries = std::move(t);
    } else {
      fail(ErrorCode::kCorruptChecksum, "unknown tensor " + name);
    }
  }
  ckpt.state.class_ids = tensor_int_vector(class_ids);
  ckpt.state.session_boundaries = tensor_int_vector(boundaries);
  if (has_mu) {
    ckpt.state.dim = mu.shape()[0];
    ckpt.state.mu = std::move(mu);
    ckpt.state.sigma = std::move(sigma);
  }
  ckpt.state.validate();
  return ckpt;
}

}  // namespace fcac::checkpoint
