#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fcac/dsp.hpp"
#include "fcac/error.hpp"

namespace fcac::datagen {

// Harmonic "instrument" signature for one synthetic class. Distinct classes
// get fundamentals at least 5% apart so the classes stay separable.
struct ClassSignature {
  int class_id = 0;
  double fundamental_hz = 0.0;
  std::vector<double> harmonic_amplitudes;  // fundamental first, strictly dominant
  double attack_s = 0.02;
  double decay_rate = 1.0;    // 1/s exponential decay after the attack
  double pitch_jitter = 0.0;  // relative per-clip pitch variation
  double amp_jitter = 0.0;    // relative per-clip amplitude variation
};

ClassSignature synth_signature(int class_id, std::uint64_t rng_seed, int sample_rate = 16000);

dsp::AudioClip synth_clip(const ClassSignature& sig, double duration_s, int sample_rate,
                          double noise_level, std::uint64_t rng_seed);

struct ManifestEntry {
  std::string source;  // wav path or "synth:<class>:<index>"
  int class_id = 0;    // contiguous id after any remap
  bool is_eval = false;

  bool is_synthetic() const { return source.rfind("synth:", 0) == 0; }
};

// Line-oriented dataset description; see load_manifest for the format.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int sample_rate = 16000;
  std::uint64_t synth_seed = 1;
  double synth_duration_s = 0.5;
  double synth_noise_level = 0.05;
  std::map<int, int> remap;  // original id -> contiguous id, when ids were sparse

  int n_classes() const;
  void validate() const;
};

// Parameters for generating a synthetic dataset in memory.
struct SyntheticSpec {
  int n_classes = 10;
  int train_per_class = 25;
  int eval_per_class = 8;
  double duration_s = 0.5;
  int sample_rate = 16000;
  double noise_level = 0.05;
  std::uint64_t seed = 1;
};

DatasetManifest synthetic_manifest(const SyntheticSpec& spec);

// Format: '#' comments, `key=value` header lines (sample_rate, synth_seed,
// synth_duration_s, synth_noise_level), then `source,class_id[,eval|train]`
// entry lines. Sparse class ids are remapped to a contiguous range and the
// mapping recorded. Missing wav files are reported per entry; pass
// check_files = false to defer those to load time.
DatasetManifest load_manifest(const std::string& path, bool check_files = true);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// PCM16 RIFF/WAVE; stereo is downmixed by averaging; samples scale by 1/32768.
dsp::AudioClip read_wav(const std::string& path);
void write_wav(const dsp::AudioClip& clip, const std::string& path);

// Synthesizes or reads the entry's audio; label and clip_id filled in.
dsp::AudioClip load_entry(const DatasetManifest& manifest, size_t entry_index);

// Data access point the protocol goes through, so tests can observe exactly
// which entries are touched when.
class ClipProvider {
 public:
  virtual ~ClipProvider() = default;
  virtual dsp::AudioClip load(size_t entry_index) const = 0;
  virtual const DatasetManifest& manifest() const = 0;
};

class ManifestClipProvider : public ClipProvider {
 public:
  explicit ManifestClipProvider(DatasetManifest manifest) : manifest_(std::move(manifest)) {
    manifest_.validate();
  }
  dsp::AudioClip load(size_t entry_index) const override {
    return load_entry(manifest_, entry_index);
  }
  const DatasetManifest& manifest() const override { return manifest_; }

 private:
  DatasetManifest manifest_;
};

}  // namespace fcac::datagen
