#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncadapt/tensor.hpp"

namespace ncadapt {

struct ForegroundRecipe {
  std::size_t min_ellipses = 1;
  std::size_t max_ellipses = 3;
  double min_radius = 0.15;  // fraction of the smallest extent
  double max_radius = 0.30;
  double margin = 0.20;      // centres stay this fraction away from the borders
  double softness = 1.0;     // edge width in pixels

  friend bool operator==(const ForegroundRecipe&, const ForegroundRecipe&) = default;
};

/// Recipe for one synthetic domain. Domains share label semantics (bright or
/// dark ellipses are always foreground) and differ by intensity transform,
/// noise, bias field and resolution.
struct DomainSpec {
  std::string name;
  Shape resolution{32, 32};
  std::size_t n_cases = 25;
  ForegroundRecipe foreground;
  double scale = 1.0;
  double shift = 0.0;
  double noise_sigma = 0.0;
  double bias_amplitude = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

struct Sample {
  std::string id;
  Tensor image;  // spatial shape, values in [0, 1]
  Tensor label;  // same shape, values in {0, 1}
};

/// Pure function of the spec. Throws DataError when a case keeps coming out
/// with an empty foreground after 10 retries.
std::vector<Sample> gen_domain(const DomainSpec& spec);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then the first round(n * test_fraction) indices are test.
Split split_dataset(std::size_t n_cases, double test_fraction, std::uint64_t seed);

/// The three-domain desk-scale benchmark.
std::vector<DomainSpec> default_benchmark();

nlohmann::json to_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const nlohmann::json& j);
std::string spec_hash(const DomainSpec& spec);

struct DomainData {
  std::string name;
  Shape resolution;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Writes <root>/<domain>/<case>_{img,lbl}.rti and <root>/manifest.json.
void write_dataset(const std::filesystem::path& root, const std::vector<DomainSpec>& specs, double test_fraction,
                   std::uint64_t split_seed);

/// Builds the same layout in memory without touching the disk.
DomainData make_domain_data(const DomainSpec& spec, double test_fraction, std::uint64_t split_seed);

DomainData load_domain(const std::filesystem::path& root, const std::string& name);
std::vector<std::string> list_domains(const std::filesystem::path& root);

}  // namespace ncadapt
