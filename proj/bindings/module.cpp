#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "fcac/classifier.hpp"
#include "fcac/cli.hpp"
#include "fcac/config.hpp"
#include "fcac/datagen.hpp"
#include "fcac/dsp.hpp"
#include "fcac/losses.hpp"
#include "fcac/protocol.hpp"
#include "fcac/selfcheck.hpp"

namespace py = pybind11;
using namespace fcac;

namespace {

using CArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_2d(const CArray& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  Tensor t({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))});
  std::memcpy(t.data(), a.data(), sizeof(double) * static_cast<size_t>(t.size()));
  return t;
}

Tensor tensor_from_1d(const CArray& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D array");
  Tensor t({static_cast<int>(a.shape(0))});
  std::memcpy(t.data(), a.data(), sizeof(double) * static_cast<size_t>(t.size()));
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::memcpy(a.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
  return a;
}

}  // namespace

PYBIND11_MODULE(_fcac, m) {
  m.doc() = "few-shot class-incremental audio classification engine";

  py::register_exception<Error>(m, "FcacError");

  m.def("hamming_window", &dsp::hamming_window, py::arg("n"));

  m.def(
      "log_mel_spectrogram",
      [](CArray samples, int sample_rate, double frame_len_ms, double hop_ms, int n_fft,
         int n_mels, double fmin_hz, double fmax_hz, double log_floor) {
        dsp::AudioClip clip;
        clip.sample_rate = sample_rate;
        Tensor s = tensor_from_1d(samples);
        clip.samples.assign(s.data(), s.data() + s.size());
        dsp::DspConfig cfg;
        cfg.frame_len_ms = frame_len_ms;
        cfg.hop_ms = hop_ms;
        cfg.n_fft = n_fft;
        cfg.n_mels = n_mels;
        cfg.fmin_hz = fmin_hz;
        cfg.fmax_hz = fmax_hz;
        cfg.log_floor = log_floor;
        return array_from_tensor(dsp::log_mel_spectrogram(clip, cfg).values);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000, py::arg("frame_len_ms") = 25.0,
      py::arg("hop_ms") = 10.0, py::arg("n_fft") = 0, py::arg("n_mels") = 128,
      py::arg("fmin_hz") = 0.0, py::arg("fmax_hz") = 0.0, py::arg("log_floor") = 1e-10);

  m.def(
      "mel_filterbank",
      [](int n_mels, int sample_rate, int n_fft, double fmin_hz, double fmax_hz) {
        dsp::DspConfig cfg;
        cfg.n_mels = n_mels;
        cfg.n_fft = n_fft;
        cfg.fmin_hz = fmin_hz;
        cfg.fmax_hz = fmax_hz;
        return array_from_tensor(dsp::mel_filterbank(cfg, sample_rate));
      },
      py::arg("n_mels") = 128, py::arg("sample_rate") = 16000, py::arg("n_fft") = 512,
      py::arg("fmin_hz") = 0.0, py::arg("fmax_hz") = 0.0);

  m.def(
      "synth_clip",
      [](int class_id, double duration_s, int sample_rate, double noise_level,
         std::uint64_t signature_seed, std::uint64_t clip_seed) {
        auto sig = datagen::synth_signature(class_id, signature_seed, sample_rate);
        auto clip = datagen::synth_clip(sig, duration_s, sample_rate, noise_level, clip_seed);
        py::array_t<double> a(static_cast<py::ssize_t>(clip.samples.size()));
        std::memcpy(a.mutable_data(), clip.samples.data(), sizeof(double) * clip.samples.size());
        return a;
      },
      py::arg("class_id"), py::arg("duration_s") = 0.5, py::arg("sample_rate") = 16000,
      py::arg("noise_level") = 0.05, py::arg("signature_seed") = 1, py::arg("clip_seed") = 1);

  m.def(
      "cosine_similarity",
      [](CArray u, CArray v) {
        return losses::cosine_similarity(tensor_from_1d(u), tensor_from_1d(v));
      },
      py::arg("u"), py::arg("v"));

  m.def(
      "supcon_loss",
      [](CArray rows, std::vector<int> labels, double tau) {
        losses::LabeledBatch batch;
        batch.rows = tensor_from_2d(rows);
        batch.labels = std::move(labels);
        return losses::supcon_loss_value(batch, tau);
      },
      py::arg("rows"), py::arg("labels"), py::arg("tau") = 0.07);

  m.def(
      "cosine_ce_loss",
      [](CArray rows, std::vector<int> labels, CArray weights, double scale) {
        losses::LabeledBatch batch;
        batch.rows = tensor_from_2d(rows);
        batch.labels = std::move(labels);
        return losses::cosine_ce_loss_value(batch, tensor_from_2d(weights), scale);
      },
      py::arg("rows"), py::arg("labels"), py::arg("weights"), py::arg("scale") = 16.0);

  m.def(
      "sample_weights",
      [](CArray mu, CArray sigma, std::uint64_t seed) {
        classifier::StochasticClassifierState state;
        state.mu = tensor_from_2d(mu);
        state.sigma = tensor_from_2d(sigma);
        state.dim = state.mu.shape()[0];
        for (int j = 0; j < state.mu.shape()[1]; ++j) state.class_ids.push_back(j);
        state.session_boundaries.push_back(0);
        return array_from_tensor(classifier::sample_weights(state, seed));
      },
      py::arg("mu"), py::arg("sigma"), py::arg("seed"));

  m.def(
      "predict",
      [](CArray embedding, CArray mu, std::vector<int> class_ids) {
        classifier::StochasticClassifierState state;
        state.mu = tensor_from_2d(mu);
        state.sigma = Tensor(state.mu.shape());
        state.dim = state.mu.shape()[0];
        if (class_ids.empty()) {
          for (int j = 0; j < state.mu.shape()[1]; ++j) class_ids.push_back(j);
        }
        state.class_ids = std::move(class_ids);
        state.session_boundaries.push_back(0);
        auto pred = classifier::predict(tensor_from_1d(embedding), state);
        return py::make_tuple(pred.class_id, pred.scores);
      },
      py::arg("embedding"), py::arg("mu"), py::arg("class_ids") = std::vector<int>{});

  m.def(
      "aa_pd",
      [](const std::vector<double>& accuracies, const std::string& variant) {
        protocol::MetricVariant v = variant == "incr"   ? protocol::MetricVariant::kIncr
                                    : variant == "base" ? protocol::MetricVariant::kBase
                                                        : protocol::MetricVariant::kAll;
        auto r = protocol::aa_pd(accuracies, v);
        return py::make_tuple(r.aa, r.pd);
      },
      py::arg("accuracies"), py::arg("variant") = "all");

  m.def(
      "clustering_ratio",
      [](CArray embeddings, const std::vector<int>& labels) {
        return protocol::clustering_ratio(tensor_from_2d(embeddings), labels);
      },
      py::arg("embeddings"), py::arg("labels"));

  // Full protocol run from a JSON config string; returns the report as JSON.
  m.def(
      "run_protocol_json",
      [](const std::string& config_text) {
        config::RunConfig cfg = config::default_config();
        config::apply_json(cfg, nlohmann::json::parse(config_text));
        cfg.validate();
        auto provider = config::make_provider(cfg);
        protocol::RunReport report = protocol::run_protocol(provider, cfg.settings);
        return cli::report_json(report, cfg).dump();
      },
      py::arg("config_text"));

  m.def(
      "verify",
      [](std::uint64_t seed, int trials) {
        std::vector<py::tuple> out;
        for (const auto& r : selfcheck::run_all(seed, selfcheck::Perturbation::kNone, trials)) {
          out.push_back(py::make_tuple(r.name, r.passed, r.detail));
        }
        return out;
      },
      py::arg("seed") = 1, py::arg("trials") = 5);
}
