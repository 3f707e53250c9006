#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "somforge/imaging.hpp"
#include "somforge/somt.hpp"

namespace somforge::objects {

/// Lumpy background: N ~ Poisson(nbar) Gaussian blobs of peak `amplitude` and
/// standard deviation `width` pixels, centers uniform on an n x n torus.
struct LumpyParams {
  double nbar = 20.0;
  double amplitude = 1.0;
  double width = 3.0;
  std::size_t n = 32;

  void validate() const;
};

imaging::ObjectImage<double> sample_lumpy(const LumpyParams& p, Rng& rng);

struct DatasetSpec {
  LumpyParams lumpy;
  std::size_t count = 2000;
  /// Per-component k-space noise, in units of the normalized objects.
  imaging::NoiseModel noise{0.1};
  std::uint64_t seed = 1;
};

/// Everything needed to regenerate a dataset bit-exactly.
struct Provenance {
  DatasetSpec spec;
  /// Objects are stored as (raw - norm_mean) / norm_rms.
  double norm_mean = 0.0;
  double norm_rms = 1.0;

  std::string to_text() const;
  static Provenance from_text(const std::string& text);
};

/// Aligned tensor sets: objects [N,1,n,n], kspace [N,2,n,n] (re, im planes) and
/// reconstructions [N,1,n,n], all f32.
struct Dataset {
  Provenance provenance;
  Tensor objects;
  Tensor kspace;
  Tensor reconstructions;

  std::size_t count() const { return objects.shape()[0]; }
  std::size_t n() const { return objects.shape()[3]; }
};

inline constexpr const char* kObjects = "objects";
inline constexpr const char* kKSpace = "kspace";
inline constexpr const char* kReconstructions = "reconstructions";
inline constexpr const char* kProvenance = "provenance";

/// Generates a dataset in memory. Sample i uses the object sub-stream
/// (seed, object, i) and the noise sub-stream (seed, kspace_noise, i).
Dataset make_dataset(const DatasetSpec& spec);

/// Normalized clean object i, exactly as stored.
imaging::ObjectImage<double> regenerate_object(const Provenance& prov, std::size_t index);
/// k-space of a stored object plus its recorded noise draw, rounded to f32 as stored.
imaging::KSpace<float> regenerate_measurement(const Provenance& prov, const imaging::ObjectImage<float>& stored,
                                              std::size_t index);

somt::TensorList to_tensors(const Dataset& d);
Dataset from_tensors(const somt::TensorList& tensors);

void gen_dataset(const DatasetSpec& spec, const std::filesystem::path& path);
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace somforge::objects
