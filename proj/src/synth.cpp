#include "faciesgan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace faciesgan {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kMaxObjects = 96;
constexpr int kMaxRestarts = 30;
constexpr int kSearchIters = 60;

// Sinusoidal channel body in the axis frame (flows along x).
struct ChannelObject {
  double amplitude, wavelength, phase, slope, offset, width;
  std::vector<double> dither;  // per-column width dither in [0,1)
};

struct AxisFrame {
  bool transpose = false;  // vertical principal axis
  double slope = 0.0;
};

AxisFrame resolve_axis(double orientation) {
  double theta = std::remainder(orientation, M_PI);
  AxisFrame frame;
  if (std::abs(theta) > M_PI / 4.0) {
    frame.transpose = true;
    theta = theta > 0 ? theta - M_PI / 2.0 : theta + M_PI / 2.0;
  }
  if (std::abs(theta) > 35.0 * M_PI / 180.0)
    throw std::invalid_argument("channel orientation must lie within ~30 deg of an axis");
  frame.slope = std::tan(theta);
  return frame;
}

double center_row(const ChannelObject& o, int x) {
  return o.offset + o.slope * x + o.amplitude * std::sin(2.0 * M_PI * x / o.wavelength + o.phase);
}

ChannelObject make_object(const ChannelParams& p, const AxisFrame& frame, int rows, int cols,
                          Rng& rng) {
  ChannelObject o;
  o.amplitude = p.amplitude * rng.uniform(0.75, 1.25);
  o.wavelength = std::max(4.0, p.wavelength * rng.uniform(0.8, 1.25));
  o.phase = rng.uniform(0.0, 2.0 * M_PI);
  o.slope = frame.slope;
  o.width = std::max(1.0, p.width_mean * (1.0 + p.width_jitter * rng.uniform(-1.0, 1.0)));
  o.dither.resize(static_cast<size_t>(cols));
  for (auto& d : o.dither) d = rng.uniform();

  // Keep the whole body inside the row range so every column is filled and
  // the object spans the grid border to border.
  const double pad = 0.5 * o.width + 0.5;
  for (int attempt = 0;; ++attempt) {
    double lo = 1e30, hi = -1e30;
    for (int x = 0; x < cols; ++x) {
      const double rel = o.slope * x + o.amplitude * std::sin(2.0 * M_PI * x / o.wavelength + o.phase);
      lo = std::min(lo, rel);
      hi = std::max(hi, rel);
    }
    const double off_lo = pad - lo;
    const double off_hi = (rows - 1.0 - pad) - hi;
    if (off_lo <= off_hi) {
      o.offset = rng.uniform(off_lo, off_hi);
      return o;
    }
    if (attempt >= 12)
      throw ProportionTargetError("channel object does not fit the grid; reduce amplitude/width");
    o.amplitude *= 0.75;  // shrink until the body fits vertically
  }
}

void rasterize(const std::vector<ChannelObject>& objects, double width_delta, int rows, int cols,
               std::vector<uint8_t>& mask) {
  mask.assign(static_cast<size_t>(rows) * cols, 0);
  for (const auto& o : objects) {
    for (int x = 0; x < cols; ++x) {
      const double c = center_row(o, x);
      const int wi = std::max(1, static_cast<int>(std::floor(o.width + width_delta + o.dither[x])));
      int r0 = static_cast<int>(std::lround(c - 0.5 * (wi - 1)));
      for (int r = std::max(0, r0); r < std::min(rows, r0 + wi); ++r)
        mask[static_cast<size_t>(r) * cols + x] = 1;
    }
  }
}

double mask_proportion(const std::vector<uint8_t>& mask) {
  long n = 0;
  for (uint8_t v : mask) n += v;
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

// Adds/removes whole objects, then fine-tunes a shared width delta by binary
// search until the mask proportion is within tolerance of target.
std::vector<uint8_t> target_channels(const ChannelParams& params, const AxisFrame& frame, int rows,
                                     int cols, double target, double tolerance, Rng& rng,
                                     double* achieved) {
  std::vector<uint8_t> mask;
  double best_err = 1e30;
  for (int restart = 0; restart < kMaxRestarts; ++restart) {
    std::vector<ChannelObject> objects;
    for (int i = 0; i < std::max(1, params.num_channels); ++i)
      objects.push_back(make_object(params, frame, rows, cols, rng));

    auto prop_at = [&](double d) {
      rasterize(objects, d, rows, cols, mask);
      return mask_proportion(mask);
    };

    while (prop_at(0.0) < target && static_cast<int>(objects.size()) < kMaxObjects)
      objects.push_back(make_object(params, frame, rows, cols, rng));

    const double d_lo = -(params.width_mean * (1.0 + params.width_jitter)) - 1.0;
    while (objects.size() > 1 && prop_at(d_lo) > target) objects.pop_back();

    double lo = d_lo, hi = 0.0;
    while (prop_at(hi) < target && hi < 4.0 * params.width_mean) hi += 1.0;

    double best_d = 0.0;
    double local_best = 1e30;
    for (int it = 0; it < kSearchIters; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double p = prop_at(mid);
      const double err = std::abs(p - target);
      if (err < local_best) {
        local_best = err;
        best_d = mid;
      }
      if (err <= 0.9 * tolerance) break;
      (p < target ? lo : hi) = mid;
    }
    const double p = prop_at(best_d);
    if (std::abs(p - target) <= tolerance) {
      if (achieved) *achieved = p;
      return mask;
    }
    best_err = std::min(best_err, std::abs(p - target));
  }
  std::ostringstream msg;
  msg << "channel proportion targeting did not converge: target=" << target
      << " tolerance=" << tolerance << " best error=" << best_err;
  throw ProportionTargetError(msg.str());
}

void transpose_into(const std::vector<uint8_t>& src, int rows, int cols, FaciesGrid& grid) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) grid.at(c, r) = src[static_cast<size_t>(r) * cols + c];
}

struct SplayObject {
  double cy, cx;     // anchor (boundary pixel)
  double dy, dx;     // outward unit direction
  double rx, ry;     // semi-axes at scale 1
};

void stamp_splays(const std::vector<SplayObject>& splays, double scale, int rows, int cols,
                  const std::vector<uint8_t>& channel, std::vector<uint8_t>& splay_mask) {
  splay_mask.assign(static_cast<size_t>(rows) * cols, 0);
  for (const auto& s : splays) {
    const double rx = s.rx * scale, ry = s.ry * scale;
    const int reach = static_cast<int>(std::ceil(std::max(rx, ry))) + 1;
    const int r0 = std::max(0, static_cast<int>(s.cy) - reach);
    const int r1 = std::min(rows - 1, static_cast<int>(s.cy) + reach);
    const int c0 = std::max(0, static_cast<int>(s.cx) - reach);
    const int c1 = std::min(cols - 1, static_cast<int>(s.cx) + reach);
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double py = r - s.cy, px = c - s.cx;
        const double u = py * s.dy + px * s.dx;   // along outward axis
        const double v = -py * s.dx + px * s.dy;  // across
        if (u < 0.0) continue;                    // half-ellipse, outboard only
        if ((u / rx) * (u / rx) + (v / ry) * (v / ry) > 1.0) continue;
        const size_t idx = static_cast<size_t>(r) * cols + c;
        if (!channel[idx]) splay_mask[idx] = 1;  // never overwrite channel
      }
    }
  }
}

}  // namespace

void ChannelParams::validate() const {
  if (amplitude <= 0 || wavelength <= 0 || width_mean <= 0 || levee_width <= 0 ||
      splay_radius_mean <= 0)
    throw std::invalid_argument("ChannelParams: all lengths must be positive");
  if (width_jitter < 0 || width_jitter >= 1)
    throw std::invalid_argument("ChannelParams: width_jitter must lie in [0,1)");
  if (splay_count < 0) throw std::invalid_argument("ChannelParams: splay_count must be >= 0");
  if (num_channels < 1) throw std::invalid_argument("ChannelParams: num_channels must be >= 1");
  if (channel_budget <= 0 || channel_budget >= 1)
    throw std::invalid_argument("ChannelParams: channel_budget must lie in (0,1)");
}

ChannelParams ChannelParams::defaults_for(int resolution) {
  ChannelParams p;
  const double s = resolution / 64.0;
  p.amplitude = std::max(1.5, 6.0 * s);
  p.wavelength = std::max(8.0, 44.0 * s);
  p.width_mean = std::max(2.0, 5.0 * s);
  p.levee_width = std::max(1.0, 1.5 * s);
  p.splay_radius_mean = std::max(2.0, 6.5 * s);
  return p;
}

FaciesGrid generate_channel_realization(const ChannelParams& params, int resolution, double target,
                                        double tolerance, Rng& rng) {
  params.validate();
  if (!(target > 0.0 && target < 1.0))
    throw std::invalid_argument("channel target proportion must lie in (0,1)");
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (resolution < 8) throw std::invalid_argument("resolution must be at least 8");

  const AxisFrame frame = resolve_axis(params.orientation);
  std::vector<uint8_t> mask =
      target_channels(params, frame, resolution, resolution, target, tolerance, rng, nullptr);

  FaciesGrid grid(resolution, resolution);
  if (frame.transpose)
    transpose_into(mask, resolution, resolution, grid);
  else
    grid.cells = std::move(mask);
  return grid;
}

FaciesGrid generate_splay_realization(const ChannelParams& params, int resolution,
                                      double splay_target, double tolerance, Rng& rng) {
  params.validate();
  if (splay_target < 0.0 || splay_target + params.channel_budget >= 0.9)
    throw std::invalid_argument("splay target plus channel budget leaves no background");
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");

  const AxisFrame frame = resolve_axis(params.orientation);
  const int rows = resolution, cols = resolution;

  std::vector<uint8_t> channel = target_channels(
      params, frame, rows, cols, params.channel_budget,
      std::max(0.02, 2.0 * tolerance), rng, nullptr);

  // Levee ring: Chebyshev dilation of the channel mask.
  const int lw = std::max(1, static_cast<int>(std::lround(params.levee_width)));
  std::vector<uint8_t> levee(channel.size(), 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!channel[static_cast<size_t>(r) * cols + c]) continue;
      for (int dr = -lw; dr <= lw; ++dr) {
        for (int dc = -lw; dc <= lw; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
          const size_t idx = static_cast<size_t>(rr) * cols + cc;
          if (!channel[idx]) levee[idx] = 1;
        }
      }
    }
  }

  std::vector<uint8_t> splay_mask(channel.size(), 0);
  if (params.splay_count > 0 && splay_target > 0.0) {
    // Channel margin pixels with outward normals.
    std::vector<SplayObject> margins;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        if (!channel[static_cast<size_t>(r) * cols + c]) continue;
        double dy = 0, dx = 0;
        bool boundary = false;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
            if (!channel[static_cast<size_t>(rr) * cols + cc]) {
              boundary = true;
              dy += dr;
              dx += dc;
            }
          }
        }
        if (!boundary) continue;
        const double norm = std::hypot(dy, dx);
        SplayObject s;
        s.cy = r;
        s.cx = c;
        if (norm > 1e-9) {
          s.dy = dy / norm;
          s.dx = dx / norm;
        } else {
          const double a = rng.uniform(0.0, 2.0 * M_PI);
          s.dy = std::sin(a);
          s.dx = std::cos(a);
        }
        margins.push_back(s);
      }
    }
    if (margins.empty()) throw ProportionTargetError("no channel margins available for splays");

    double best_err = 1e30;
    bool done = false;
    for (int restart = 0; restart < kMaxRestarts && !done; ++restart) {
      std::vector<SplayObject> splays;
      auto add_splay = [&] {
        SplayObject s = margins[rng.integer(margins.size())];
        s.rx = params.splay_radius_mean * rng.uniform(0.8, 1.25);
        s.ry = 0.6 * s.rx;
        splays.push_back(s);
      };
      for (int i = 0; i < params.splay_count; ++i) add_splay();

      auto prop_at = [&](double scale) {
        stamp_splays(splays, scale, rows, cols, channel, splay_mask);
        return mask_proportion(splay_mask);
      };
      while (prop_at(1.0) < splay_target && static_cast<int>(splays.size()) < kMaxObjects)
        add_splay();
      while (splays.size() > 1 && prop_at(0.35) > splay_target) splays.pop_back();

      double lo = 0.35, hi = 1.0;
      while (prop_at(hi) < splay_target && hi < 4.0) hi += 0.5;
      double best_scale = 1.0, local_best = 1e30;
      for (int it = 0; it < kSearchIters; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double p = prop_at(mid);
        const double err = std::abs(p - splay_target);
        if (err < local_best) {
          local_best = err;
          best_scale = mid;
        }
        if (err <= 0.9 * tolerance) break;
        (p < splay_target ? lo : hi) = mid;
      }
      const double p = prop_at(best_scale);
      if (std::abs(p - splay_target) <= tolerance) {
        done = true;
      } else {
        best_err = std::min(best_err, std::abs(p - splay_target));
        splay_mask.assign(channel.size(), 0);
      }
    }
    if (!done) {
      std::ostringstream msg;
      msg << "splay proportion targeting did not converge: target=" << splay_target
          << " tolerance=" << tolerance << " best error=" << best_err;
      throw ProportionTargetError(msg.str());
    }
  }

  FaciesGrid grid(rows, cols);
  std::vector<uint8_t> cells(channel.size(), kFloodplain);
  for (size_t i = 0; i < cells.size(); ++i) {
    if (channel[i])
      cells[i] = kChannel;
    else if (splay_mask[i])
      cells[i] = kSplay;
    else if (levee[i])
      cells[i] = kLevee;
  }
  if (frame.transpose)
    transpose_into(cells, rows, cols, grid);
  else
    grid.cells = std::move(cells);
  return grid;
}

bool DatasetSpec::is_splay_style() const {
  if (!style.empty()) return style == "splays";
  for (const auto& c : classes)
    if (c.facies == kSplay) return true;
  return false;
}

void DatasetSpec::validate() const {
  if (classes.empty()) throw std::invalid_argument("DatasetSpec: at least one class required");
  for (size_t i = 0; i < classes.size(); ++i) {
    const auto& c = classes[i];
    if (c.count <= 0) throw std::invalid_argument("DatasetSpec: sample_count must be positive");
    if (!(c.target > 0.0 && c.target < 1.0))
      throw std::invalid_argument("DatasetSpec: class target must lie in (0,1)");
    if (c.facies < 0 || c.facies >= kNumFaciesCodes)
      throw std::invalid_argument("DatasetSpec: class facies code out of range");
    if (i > 0 && classes[i].target <= classes[i - 1].target)
      throw std::invalid_argument("DatasetSpec: class targets must be strictly increasing");
  }
  if (!(proportion_tolerance > 0.0))
    throw std::invalid_argument("DatasetSpec: proportion_tolerance must be positive");
  if (resolution < 8 || (resolution & (resolution - 1)) != 0)
    throw std::invalid_argument("DatasetSpec: resolution must be a power of two >= 8");
  if (!style.empty() && style != "channels" && style != "splays")
    throw std::invalid_argument("DatasetSpec: style must be 'channels' or 'splays'");
  params.validate();
}

std::string DatasetSpec::to_json() const {
  json j;
  j["resolution"] = resolution;
  j["seed"] = seed;
  j["proportion_tolerance"] = proportion_tolerance;
  if (!style.empty()) j["style"] = style;
  j["classes"] = json::array();
  for (const auto& c : classes)
    j["classes"].push_back({{"target", c.target}, {"count", c.count}, {"facies", c.facies}});
  j["params"] = {{"num_channels", params.num_channels},
                 {"amplitude", params.amplitude},
                 {"wavelength", params.wavelength},
                 {"width_mean", params.width_mean},
                 {"width_jitter", params.width_jitter},
                 {"orientation", params.orientation},
                 {"levee_width", params.levee_width},
                 {"splay_count", params.splay_count},
                 {"splay_radius_mean", params.splay_radius_mean},
                 {"channel_budget", params.channel_budget}};
  return j.dump(2);
}

DatasetSpec DatasetSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  DatasetSpec spec;
  spec.resolution = j.value("resolution", 64);
  spec.seed = j.value("seed", uint64_t{0});
  spec.proportion_tolerance = j.value("proportion_tolerance", 0.005);
  spec.style = j.value("style", std::string{});
  spec.params = ChannelParams::defaults_for(spec.resolution);
  if (j.contains("params")) {
    const json& p = j["params"];
    spec.params.num_channels = p.value("num_channels", spec.params.num_channels);
    spec.params.amplitude = p.value("amplitude", spec.params.amplitude);
    spec.params.wavelength = p.value("wavelength", spec.params.wavelength);
    spec.params.width_mean = p.value("width_mean", spec.params.width_mean);
    spec.params.width_jitter = p.value("width_jitter", spec.params.width_jitter);
    spec.params.orientation = p.value("orientation", spec.params.orientation);
    spec.params.levee_width = p.value("levee_width", spec.params.levee_width);
    spec.params.splay_count = p.value("splay_count", spec.params.splay_count);
    spec.params.splay_radius_mean = p.value("splay_radius_mean", spec.params.splay_radius_mean);
    spec.params.channel_budget = p.value("channel_budget", spec.params.channel_budget);
  }
  if (!j.contains("classes")) throw std::invalid_argument("DatasetSpec: missing classes");
  for (const json& c : j["classes"]) {
    DatasetClass cls;
    cls.target = c.at("target").get<double>();
    cls.count = c.value("count", 0L);
    cls.facies = c.value("facies", static_cast<int>(kChannel));
    spec.classes.push_back(cls);
  }
  spec.validate();
  return spec;
}

std::vector<double> represented_conditions(const DatasetSpec& spec) {
  std::vector<double> ys;
  for (const auto& c : spec.classes) ys.push_back(c.target);
  std::sort(ys.begin(), ys.end());
  return ys;
}

namespace {

std::string format_label(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

DatasetManifest build_dataset(const DatasetSpec& spec, const fs::path& out_dir) {
  spec.validate();
  const bool splays = spec.is_splay_style();

  long total = 0;
  for (const auto& c : spec.classes) total += c.count;

  struct Job {
    long index;
    int class_index;
    double target;
    int facies;
  };
  std::vector<Job> jobs;
  jobs.reserve(static_cast<size_t>(total));
  long idx = 0;
  for (size_t ci = 0; ci < spec.classes.size(); ++ci)
    for (long k = 0; k < spec.classes[ci].count; ++k)
      jobs.push_back({idx++, static_cast<int>(ci), spec.classes[ci].target,
                      spec.classes[ci].facies});

  std::vector<FaciesGrid> grids(jobs.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic, 8)
  for (long i = 0; i < static_cast<long>(jobs.size()); ++i) {
    try {
      Rng rng(Rng::subseed(spec.seed, static_cast<uint64_t>(jobs[i].index)));
      grids[i] = splays ? generate_splay_realization(spec.params, spec.resolution, jobs[i].target,
                                                     spec.proportion_tolerance, rng)
                        : generate_channel_realization(spec.params, spec.resolution, jobs[i].target,
                                                       spec.proportion_tolerance, rng);
    } catch (const std::exception& e) {
#pragma omp critical
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw ProportionTargetError("dataset generation failed: " + failure);

  std::vector<fs::path> written;
  try {
    fs::create_directories(out_dir / "grids");
    DatasetManifest manifest;
    manifest.spec = spec;
    for (size_t i = 0; i < jobs.size(); ++i) {
      char name[48];
      std::snprintf(name, sizeof(name), "grids/grid_%06ld.pgm", jobs[i].index);
      const fs::path p = out_dir / name;
      write_pgm(p, grids[i]);
      written.push_back(p);
      ManifestEntry entry;
      entry.file_path = name;
      entry.proportion_label = facies_proportion(grids[i], jobs[i].facies);
      entry.class_index = jobs[i].class_index;
      manifest.entries.push_back(entry);
    }
    write_manifest(manifest, out_dir);
    return manifest;
  } catch (...) {
    for (const auto& p : written) {
      std::error_code ec;
      fs::remove(p, ec);
    }
    throw;
  }
}

void write_manifest(const DatasetManifest& manifest, const fs::path& dataset_dir) {
  const fs::path manifest_path = dataset_dir / "manifest.tsv";
  std::ofstream os(manifest_path, std::ios::binary);
  if (!os) throw std::runtime_error("write_manifest: cannot open " + manifest_path.string());
  os << "file_path\tproportion_label\tclass_index\n";
  for (const auto& e : manifest.entries)
    os << e.file_path << '\t' << format_label(e.proportion_label) << '\t' << e.class_index << '\n';
  if (!os) throw std::runtime_error("write_manifest: write failed for " + manifest_path.string());
  std::ofstream spec_os(dataset_dir / "spec.json", std::ios::binary);
  spec_os << manifest.spec.to_json() << '\n';
  if (!spec_os)
    throw std::runtime_error("write_manifest: write failed for " +
                             (dataset_dir / "spec.json").string());
}

DatasetManifest load_manifest(const fs::path& dataset_dir) {
  std::ifstream spec_is(dataset_dir / "spec.json");
  if (!spec_is)
    throw std::runtime_error("load_manifest: cannot open " + (dataset_dir / "spec.json").string());
  std::stringstream spec_buf;
  spec_buf << spec_is.rdbuf();

  DatasetManifest manifest;
  manifest.spec = DatasetSpec::from_json(spec_buf.str());

  const fs::path manifest_path = dataset_dir / "manifest.tsv";
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("load_manifest: cannot open " + manifest_path.string());
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    ManifestEntry e;
    std::string label;
    if (!std::getline(row, e.file_path, '\t') || !std::getline(row, label, '\t') ||
        !(row >> e.class_index))
      throw std::runtime_error("load_manifest: malformed row in " + manifest_path.string());
    e.proportion_label = std::stod(label);
    manifest.entries.push_back(e);
  }
  return manifest;
}

}  // namespace faciesgan
