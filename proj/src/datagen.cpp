#include "fcac/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "fcac/rng.hpp"

namespace fcac::datagen {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr int kHarmonics = 3;
// Fundamentals sit on a geometric ladder. The wide ratio keeps neighbouring
// classes roughly a major third apart, well above the contractual 5% minimum,
// so classes stay separable even through a coarse mel grid.
constexpr double kBaseFundamental = 180.0;
constexpr double kSpacingRatio = 1.30;
}  // namespace

ClassSignature synth_signature(int class_id, std::uint64_t rng_seed, int sample_rate) {
  if (class_id < 0) fail(ErrorCode::kInvalidConfig, "class_id must be >= 0");
  const double fmax = sample_rate / 2.0 / kHarmonics;
  double fundamental = kBaseFundamental * std::pow(kSpacingRatio, class_id);
  RandomStream rng = RandomStream::keyed(rng_seed, "signature", static_cast<std::uint64_t>(class_id));
  // +-0.4% per-class wobble keeps adjacent fundamentals >= 5% apart.
  fundamental *= 1.0 + 0.004 * (2.0 * rng.uniform() - 1.0);
  if (fundamental >= fmax) {
    fail(ErrorCode::kTooManyClasses,
         "class " + std::to_string(class_id) + " fundamental " + std::to_string(fundamental) +
             " Hz exceeds the usable band (" + std::to_string(fmax) + " Hz)");
  }

  ClassSignature sig;
  sig.class_id = class_id;
  sig.fundamental_hz = fundamental;
  // Independent per-harmonic levels give each class its own timbre; the cap
  // at half the fundamental keeps the fundamental strictly dominant.
  sig.harmonic_amplitudes.push_back(1.0);
  for (int h = 1; h < kHarmonics; ++h) {
    sig.harmonic_amplitudes.push_back(rng.uniform(0.05, 0.5));
  }
  sig.attack_s = rng.uniform(0.005, 0.03);
  sig.decay_rate = rng.uniform(0.5, 2.0);
  sig.pitch_jitter = 0.01;
  sig.amp_jitter = 0.1;
  return sig;
}

dsp::AudioClip synth_clip(const ClassSignature& sig, double duration_s, int sample_rate,
                          double noise_level, std::uint64_t rng_seed) {
  if (duration_s <= 0.0) fail(ErrorCode::kInvalidConfig, "duration must be positive");
  if (noise_level < 0.0) fail(ErrorCode::kInvalidConfig, "noise_level must be >= 0");
  RandomStream rng(rng_seed);
  const double pitch = sig.fundamental_hz * (1.0 + sig.pitch_jitter * (2.0 * rng.uniform() - 1.0));
  std::vector<double> amps(sig.harmonic_amplitudes.size());
  for (size_t h = 0; h < amps.size(); ++h) {
    amps[h] = sig.harmonic_amplitudes[h] * (1.0 + sig.amp_jitter * (2.0 * rng.uniform() - 1.0));
  }

  const long long n = std::llround(duration_s * sample_rate);
  dsp::AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.label = sig.class_id;
  clip.samples.resize(static_cast<size_t>(n));
  double peak = 0.0;
  for (long long i = 0; i < n; ++i) {
    const double tsec = static_cast<double>(i) / sample_rate;
    double env = tsec < sig.attack_s ? tsec / sig.attack_s
                                     : std::exp(-sig.decay_rate * (tsec - sig.attack_s));
    double s = 0.0;
    for (size_t h = 0; h < amps.size(); ++h) {
      s += amps[h] * std::sin(2.0 * kPi * pitch * (h + 1) * tsec);
    }
    s = env * s + noise_level * rng.normal();
    clip.samples[static_cast<size_t>(i)] = s;
    peak = std::max(peak, std::abs(s));
  }
  if (peak > 0.0) {
    const double gain = 0.98 / std::max(peak, 0.98);
    for (double& s : clip.samples) s *= gain;
  }
  return clip;
}

int DatasetManifest::n_classes() const {
  int n = 0;
  for (const ManifestEntry& e : entries) n = std::max(n, e.class_id + 1);
  return n;
}

void DatasetManifest::validate() const {
  if (entries.empty()) fail(ErrorCode::kInvalidConfig, "manifest has no entries");
  if (sample_rate <= 0) fail(ErrorCode::kInvalidConfig, "manifest sample_rate must be positive");
  std::set<int> classes;
  for (const ManifestEntry& e : entries) {
    if (e.class_id < 0) fail(ErrorCode::kInvalidConfig, "negative class id");
    classes.insert(e.class_id);
  }
  const int n = n_classes();
  if (static_cast<int>(classes.size()) != n) {
    fail(ErrorCode::kInvalidConfig, "class ids are not contiguous from 0");
  }
}

DatasetManifest synthetic_manifest(const SyntheticSpec& spec) {
  if (spec.n_classes <= 0 || spec.train_per_class <= 0 || spec.eval_per_class <= 0) {
    fail(ErrorCode::kInvalidConfig, "synthetic spec counts must be positive");
  }
  // Fail early if the class count cannot fit under Nyquist.
  synth_signature(spec.n_classes - 1, spec.seed, spec.sample_rate);

  DatasetManifest m;
  m.sample_rate = spec.sample_rate;
  m.synth_seed = spec.seed;
  m.synth_duration_s = spec.duration_s;
  m.synth_noise_level = spec.noise_level;
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int i = 0; i < spec.train_per_class + spec.eval_per_class; ++i) {
      ManifestEntry e;
      e.source = "synth:" + std::to_string(c) + ":" + std::to_string(i);
      e.class_id = c;
      e.is_eval = i >= spec.train_per_class;
      m.entries.push_back(std::move(e));
    }
  }
  return m;
}

namespace {

bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

[[noreturn]] void parse_fail(const std::string& path, int line_no, const std::string& what) {
  fail(ErrorCode::kParseError, path + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

DatasetManifest load_manifest(const std::string& path, bool check_files) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open manifest " + path);

  DatasetManifest m;
  std::string line;
  int line_no = 0;
  std::vector<std::pair<ManifestEntry, int>> raw;  // entry + original class id
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    const size_t comma = line.find(',');
    if (eq != std::string::npos && (comma == std::string::npos || eq < comma)) {
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      long long iv = 0;
      double dv = 0.0;
      if (key == "sample_rate" && parse_int(value, iv) && iv > 0) {
        m.sample_rate = static_cast<int>(iv);
      } else if (key == "synth_seed" && parse_int(value, iv) && iv >= 0) {
        m.synth_seed = static_cast<std::uint64_t>(iv);
      } else if (key == "synth_duration_s" && parse_double(value, dv) && dv > 0) {
        m.synth_duration_s = dv;
      } else if (key == "synth_noise_level" && parse_double(value, dv) && dv >= 0) {
        m.synth_noise_level = dv;
      } else {
        parse_fail(path, line_no, "bad header line '" + line + "'");
      }
      continue;
    }
    // source,class_id[,train|eval]
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 2 || fields.size() > 3) {
      parse_fail(path, line_no, "expected source,class_id[,split]");
    }
    long long cid = 0;
    if (!parse_int(fields[1], cid) || cid < 0) {
      parse_fail(path, line_no, "bad class id '" + fields[1] + "'");
    }
    ManifestEntry e;
    e.source = fields[0];
    if (fields.size() == 3) {
      if (fields[2] == "eval") {
        e.is_eval = true;
      } else if (fields[2] == "train") {
        e.is_eval = false;
      } else {
        parse_fail(path, line_no, "split must be train or eval");
      }
    }
    raw.emplace_back(std::move(e), static_cast<int>(cid));
  }
  if (raw.empty()) fail(ErrorCode::kParseError, path + ": no entries");

  // Contiguity: remap sparse original ids, keeping their order.
  std::set<int> originals;
  for (const auto& [e, cid] : raw) originals.insert(cid);
  int next = 0;
  bool sparse = false;
  for (int cid : originals) {
    m.remap[cid] = next;
    if (cid != next) sparse = true;
    ++next;
  }
  if (!sparse) m.remap.clear();
  for (auto& [e, cid] : raw) {
    e.class_id = sparse ? m.remap.at(cid) : cid;
    m.entries.push_back(std::move(e));
  }

  if (check_files) {
    std::string missing;
    int n_missing = 0;
    for (const ManifestEntry& e : m.entries) {
      if (e.is_synthetic()) continue;
      std::ifstream probe(e.source, std::ios::binary);
      if (!probe) {
        missing += (n_missing ? ", " : "") + e.source;
        ++n_missing;
      }
    }
    if (n_missing > 0) {
      fail(ErrorCode::kMissingFile, std::to_string(n_missing) + " missing file(s): " + missing);
    }
  }
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write manifest " + path);
  out << "# fcac dataset manifest\n";
  out << "sample_rate=" << manifest.sample_rate << "\n";
  out << "synth_seed=" << manifest.synth_seed << "\n";
  out << "synth_duration_s=" << manifest.synth_duration_s << "\n";
  out << "synth_noise_level=" << manifest.synth_noise_level << "\n";
  for (const ManifestEntry& e : manifest.entries) {
    out << e.source << "," << e.class_id << "," << (e.is_eval ? "eval" : "train") << "\n";
  }
  if (!out) fail(ErrorCode::kIoError, "short write to " + path);
}

namespace {

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t read_u16(const std::vector<std::uint8_t>& b, size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

}  // namespace

dsp::AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 44) fail(ErrorCode::kMalformedHeader, path + ": too short for a WAV header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorCode::kMalformedHeader, path + ": not a RIFF/WAVE file");
  }

  size_t pos = 12;
  int channels = 0, bits = 0, format = 0, rate = 0;
  bool got_fmt = false;
  size_t data_at = 0, data_size = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t chunk_size = read_u32(bytes, pos + 4);
    const bool is_fmt = std::memcmp(bytes.data() + pos, "fmt ", 4) == 0;
    const bool is_data = std::memcmp(bytes.data() + pos, "data", 4) == 0;
    const size_t body = pos + 8;
    if (body + chunk_size > bytes.size()) {
      fail(ErrorCode::kMalformedHeader, path + ": chunk overruns file");
    }
    if (is_fmt) {
      if (chunk_size < 16) fail(ErrorCode::kMalformedHeader, path + ": fmt chunk too small");
      format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      rate = static_cast<int>(read_u32(bytes, body + 4));
      bits = read_u16(bytes, body + 14);
      got_fmt = true;
    } else if (is_data) {
      data_at = body;
      data_size = chunk_size;
    }
    pos = body + chunk_size + (chunk_size % 2);
  }
  if (!got_fmt || data_at == 0) fail(ErrorCode::kMalformedHeader, path + ": missing fmt or data chunk");
  if (format != 1) fail(ErrorCode::kUnsupportedFormat, path + ": only PCM is supported");
  if (bits != 16) {
    fail(ErrorCode::kUnsupportedFormat, path + ": only 16-bit samples are supported, got " +
                                            std::to_string(bits));
  }
  if (channels != 1 && channels != 2) {
    fail(ErrorCode::kUnsupportedFormat, path + ": only mono or stereo supported");
  }
  if (rate <= 0) fail(ErrorCode::kMalformedHeader, path + ": bad sample rate");

  const size_t frame_bytes = static_cast<size_t>(channels) * 2;
  const size_t n_frames = data_size / frame_bytes;
  dsp::AudioClip clip;
  clip.sample_rate = rate;
  clip.clip_id = path;
  clip.samples.resize(n_frames);
  for (size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const size_t at = data_at + i * frame_bytes + static_cast<size_t>(c) * 2;
      const std::int16_t s = static_cast<std::int16_t>(read_u16(bytes, at));
      acc += static_cast<double>(s);
    }
    clip.samples[i] = acc / channels / 32768.0;
  }
  return clip;
}

void write_wav(const dsp::AudioClip& clip, const std::string& path) {
  clip.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path);

  const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_size = n * 2;
  auto put_u32 = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_u16 = [&out](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };

  out.write("RIFF", 4);
  put_u32(36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_size);
  for (double s : clip.samples) {
    long q = std::lround(s * 32768.0);
    q = std::clamp(q, -32768L, 32767L);
    const std::int16_t v = static_cast<std::int16_t>(q);
    out.write(reinterpret_cast<const char*>(&v), 2);
  }
  if (!out) fail(ErrorCode::kIoError, "short write to " + path);
}

dsp::AudioClip load_entry(const DatasetManifest& manifest, size_t entry_index) {
  if (entry_index >= manifest.entries.size()) {
    fail(ErrorCode::kInvalidConfig, "entry index out of range");
  }
  const ManifestEntry& e = manifest.entries[entry_index];
  if (e.is_synthetic()) {
    // synth:<original class>:<clip index>
    const std::string body = e.source.substr(6);
    const size_t colon = body.find(':');
    long long cls = 0, idx = 0;
    if (colon == std::string::npos || !parse_int(body.substr(0, colon), cls) ||
        !parse_int(body.substr(colon + 1), idx) || cls < 0 || idx < 0) {
      fail(ErrorCode::kParseError, "bad synthetic source '" + e.source + "'");
    }
    const ClassSignature sig =
        synth_signature(static_cast<int>(cls), manifest.synth_seed, manifest.sample_rate);
    const std::uint64_t clip_seed = mix_tag(
        mix_tag(manifest.synth_seed, hash_str("clip")),
        mix_tag(static_cast<std::uint64_t>(cls), static_cast<std::uint64_t>(idx)));
    dsp::AudioClip clip = synth_clip(sig, manifest.synth_duration_s, manifest.sample_rate,
                                     manifest.synth_noise_level, clip_seed);
    clip.label = e.class_id;
    clip.clip_id = e.source;
    return clip;
  }
  dsp::AudioClip clip = read_wav(e.source);
  if (clip.sample_rate != manifest.sample_rate) {
    fail(ErrorCode::kInvalidConfig, e.source + ": sample rate " +
                                        std::to_string(clip.sample_rate) +
                                        " does not match manifest rate " +
                                        std::to_string(manifest.sample_rate));
  }
  clip.label = e.class_id;
  clip.clip_id = e.source;
  return clip;
}

}  // namespace fcac::datagen
