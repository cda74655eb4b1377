#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "faciesgan/grid.hpp"
#include "faciesgan/rng.hpp"

namespace faciesgan {

// Geometry controls for object-based channel realizations. Lengths are in
// pixels. Channels are sinusoidal bodies (center row ~ offset + slope*x +
// amplitude*sin(2*pi*x/wavelength + phase)) rasterized with varying width;
// levees are dilation rings around channels; crevasse splays are lobate
// half-ellipses seeded on channel margins.
struct ChannelParams {
  int num_channels = 3;          // starting object count before targeting
  double amplitude = 6.0;        // sinusoid amplitude
  double wavelength = 44.0;      // sinusoid wavelength
  double width_mean = 5.0;       // mean rasterized width
  double width_jitter = 0.25;    // fractional width spread, in [0,1)
  double orientation = 0.0;      // radians off the horizontal axis
  double levee_width = 1.5;      // levee ring thickness
  int splay_count = 4;           // starting splay count; 0 disables splays
  double splay_radius_mean = 6.5;
  double channel_budget = 0.18;  // channel proportion used by splay grids

  void validate() const;

  // Defaults proportional to grid resolution, tuned for a 64x64 reference.
  static ChannelParams defaults_for(int resolution);
};

struct DatasetClass {
  double target = 0.0;  // target facies proportion
  long count = 0;       // realizations in this class
  int facies = kChannel;
};

struct DatasetSpec {
  std::vector<DatasetClass> classes;
  int resolution = 64;
  double proportion_tolerance = 0.005;
  uint64_t seed = 0;
  std::string style;  // "channels" or "splays"; inferred from facies if empty
  ChannelParams params;

  void validate() const;
  bool is_splay_style() const;

  std::string to_json() const;
  static DatasetSpec from_json(const std::string& text);
};

struct ManifestEntry {
  std::string file_path;  // relative to the manifest directory
  double proportion_label = 0.0;
  int class_index = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  DatasetSpec spec;
};

// Raised when proportion targeting fails to converge.
class ProportionTargetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary grid (codes {0,1}) whose channel proportion lies within `tolerance`
// of `target`. Deterministic for a given rng state.
FaciesGrid generate_channel_realization(const ChannelParams& params, int resolution,
                                        double target, double tolerance, Rng& rng);

// Multi-facies grid (codes {0,1,2,3}) whose crevasse-splay proportion lies
// within `tolerance` of `splay_target`. Channels and levees consume the fixed
// budget from `params`. With params.splay_count == 0 no splays are placed and
// the splay proportion is exactly zero.
FaciesGrid generate_splay_realization(const ChannelParams& params, int resolution,
                                      double splay_target, double tolerance, Rng& rng);

// Writes one PGM grid file per realization under `out_dir`/grids plus
// manifest.tsv and spec.json. Bit-identical outputs for identical specs.
// On generation failure, files written by this call are removed.
DatasetManifest build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dataset_dir);

// Represented condition values (sorted class targets).
std::vector<double> represented_conditions(const DatasetSpec& spec);

}  // namespace faciesgan
