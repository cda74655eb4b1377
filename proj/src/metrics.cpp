#include "faciesgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <stdexcept>

namespace faciesgan {

namespace {

// Half-plane displacement set: one representative per unordered pixel-pair
// direction, grouped by rounded Euclidean length. (0,0) stands for lag 0.
struct Displacements {
  std::vector<std::vector<std::pair<int, int>>> by_lag;  // [lag] -> (dr,dc)
};

Displacements displacement_table(int max_lag) {
  Displacements d;
  d.by_lag.resize(static_cast<size_t>(max_lag) + 1);
  d.by_lag[0].push_back({0, 0});
  for (int dr = -max_lag; dr <= max_lag; ++dr) {
    for (int dc = -max_lag; dc <= max_lag; ++dc) {
      if (dr == 0 && dc == 0) continue;
      if (dr < 0 || (dr == 0 && dc < 0)) continue;  // unordered pairs once
      const int lag = static_cast<int>(std::lround(std::hypot(dr, dc)));
      if (lag >= 1 && lag <= max_lag) d.by_lag[static_cast<size_t>(lag)].push_back({dr, dc});
    }
  }
  return d;
}

void check_grid_set(const std::vector<FaciesGrid>& grids, int code, int max_lag) {
  if (grids.empty()) throw std::invalid_argument("metric: empty grid set");
  if (code < 0 || code >= kNumFaciesCodes) throw std::invalid_argument("metric: bad facies code");
  const int h = grids.front().height, w = grids.front().width;
  for (const auto& g : grids)
    if (g.height != h || g.width != w)
      throw std::invalid_argument("metric: grids must share a uniform size");
  if (max_lag < 0 || max_lag >= std::min(h, w))
    throw std::invalid_argument("metric: max_lag must be smaller than the grid size");
}

template <typename PairPredicate>
LagCurve accumulate_curve(const std::vector<FaciesGrid>& grids, int max_lag,
                          const PairPredicate& both_hit) {
  const int h = grids.front().height, w = grids.front().width;
  const Displacements disp = displacement_table(max_lag);

  LagCurve curve;
  std::vector<double> value_sum(static_cast<size_t>(max_lag) + 1, 0.0);
  std::vector<long> pairs_per_grid(static_cast<size_t>(max_lag) + 1, 0);

  std::vector<long> hits(static_cast<size_t>(max_lag) + 1);
  std::vector<long> pairs(static_cast<size_t>(max_lag) + 1);
  for (size_t gi = 0; gi < grids.size(); ++gi) {
    const FaciesGrid& g = grids[gi];
    std::fill(hits.begin(), hits.end(), 0);
    std::fill(pairs.begin(), pairs.end(), 0);
    for (int lag = 0; lag <= max_lag; ++lag) {
      for (const auto& [dr, dc] : disp.by_lag[static_cast<size_t>(lag)]) {
        const int r0 = std::max(0, -dr), r1 = h - std::max(0, dr);
        const int c0 = std::max(0, -dc), c1 = w - std::max(0, dc);
        long n_pairs = static_cast<long>(r1 - r0) * (c1 - c0);
        if (n_pairs <= 0) continue;
        pairs[static_cast<size_t>(lag)] += n_pairs;
        long n_hits = 0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) n_hits += both_hit(gi, r, c, r + dr, c + dc);
        hits[static_cast<size_t>(lag)] += n_hits;
      }
    }
    for (int lag = 0; lag <= max_lag; ++lag) {
      if (pairs[static_cast<size_t>(lag)] == 0) continue;
      value_sum[static_cast<size_t>(lag)] += static_cast<double>(hits[static_cast<size_t>(lag)]) /
                                             static_cast<double>(pairs[static_cast<size_t>(lag)]);
      pairs_per_grid[static_cast<size_t>(lag)] = pairs[static_cast<size_t>(lag)];
    }
  }

  for (int lag = 0; lag <= max_lag; ++lag) {
    if (pairs_per_grid[static_cast<size_t>(lag)] == 0) continue;
    curve.lags.push_back(lag);
    curve.values.push_back(value_sum[static_cast<size_t>(lag)] / static_cast<double>(grids.size()));
    curve.pair_counts.push_back(pairs_per_grid[static_cast<size_t>(lag)] *
                                static_cast<long>(grids.size()));
  }
  return curve;
}

}  // namespace

LagCurve two_point_probability(const std::vector<FaciesGrid>& grids, int code, int max_lag) {
  check_grid_set(grids, code, max_lag);
  return accumulate_curve(grids, max_lag,
                          [&](size_t gi, int r0, int c0, int r1, int c1) -> long {
                            const FaciesGrid& g = grids[gi];
                            return g.at(r0, c0) == code && g.at(r1, c1) == code;
                          });
}

std::vector<int> label_components(const FaciesGrid& grid, int code, bool eight_connectivity) {
  const int h = grid.height, w = grid.width;
  std::vector<int> labels(static_cast<size_t>(h) * w, -1);
  int next = 0;
  std::deque<std::pair<int, int>> queue;
  const int n_dirs = eight_connectivity ? 8 : 4;
  static constexpr int dirs[8][2] = {{-1, 0}, {1, 0},  {0, -1}, {0, 1},
                                     {-1, -1}, {-1, 1}, {1, -1}, {1, 1}};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const size_t idx = static_cast<size_t>(r) * w + c;
      if (grid.cells[idx] != code || labels[idx] != -1) continue;
      labels[idx] = next;
      queue.push_back({r, c});
      while (!queue.empty()) {
        auto [cr, cc] = queue.front();
        queue.pop_front();
        for (int k = 0; k < n_dirs; ++k) {
          const int rr = cr + dirs[k][0], cw = cc + dirs[k][1];
          if (rr < 0 || rr >= h || cw < 0 || cw >= w) continue;
          const size_t nidx = static_cast<size_t>(rr) * w + cw;
          if (grid.cells[nidx] != code || labels[nidx] != -1) continue;
          labels[nidx] = next;
          queue.push_back({rr, cw});
        }
      }
      ++next;
    }
  }
  return labels;
}

LagCurve connectivity_function(const std::vector<FaciesGrid>& grids, int code, int max_lag,
                               bool eight_connectivity) {
  check_grid_set(grids, code, max_lag);
  const int w = grids.front().width;
  std::vector<std::vector<int>> labels(grids.size());
  for (size_t i = 0; i < grids.size(); ++i)
    labels[i] = label_components(grids[i], code, eight_connectivity);
  return accumulate_curve(grids, max_lag,
                          [&](size_t gi, int r0, int c0, int r1, int c1) -> long {
                            const auto& lab = labels[gi];
                            const int a = lab[static_cast<size_t>(r0) * w + c0];
                            return a != -1 && a == lab[static_cast<size_t>(r1) * w + c1];
                          });
}

double outlier_percentage(const std::vector<FaciesGrid>& samples, int code, double target,
                          double sigma) {
  if (samples.empty()) throw std::invalid_argument("outlier_percentage: empty sample set");
  if (!(sigma > 0.0)) throw std::invalid_argument("outlier_percentage: sigma must be positive");
  long outliers = 0;
  for (const auto& s : samples)
    outliers += std::abs(facies_proportion(s, code) - target) > 3.0 * sigma;
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(samples.size());
}

OutlierReport average_outlier_percentage(
    const std::function<std::vector<FaciesGrid>(double, long)>& sampler,
    const std::vector<double>& conditions, long n_per_condition, int code, double sigma) {
  if (conditions.empty())
    throw std::invalid_argument("average_outlier_percentage: empty condition list");
  OutlierReport report;
  report.sigma = sigma;
  report.conditions = conditions;
  double sum = 0.0;
  for (double y : conditions) {
    const std::vector<FaciesGrid> samples = sampler(y, n_per_condition);
    const double pct = outlier_percentage(samples, code, y, sigma);
    report.outlier_pct.push_back(pct);
    sum += pct;
  }
  report.average = sum / static_cast<double>(conditions.size());
  return report;
}

ProportionHistogram proportion_histogram(const std::vector<double>& proportions, int bins,
                                         double lo, double hi) {
  if (bins < 1) throw std::invalid_argument("proportion_histogram: bins must be >= 1");
  if (proportions.empty()) throw std::invalid_argument("proportion_histogram: empty sample set");
  if (!(lo < hi)) {
    lo = *std::min_element(proportions.begin(), proportions.end());
    hi = *std::max_element(proportions.begin(), proportions.end());
    if (hi - lo < 1e-12) {
      lo -= 0.005;
      hi += 0.005;
    }
  }
  ProportionHistogram h;
  h.bin_edges.resize(static_cast<size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i)
    h.bin_edges[static_cast<size_t>(i)] = lo + (hi - lo) * i / static_cast<double>(bins);
  h.counts.assign(static_cast<size_t>(bins), 0);
  double sum = 0.0, sum2 = 0.0;
  for (double p : proportions) {
    int b = static_cast<int>((p - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<size_t>(b)];
    sum += p;
    sum2 += p * p;
  }
  h.total = static_cast<long>(proportions.size());
  h.mean = sum / static_cast<double>(h.total);
  h.stddev = std::sqrt(std::max(0.0, sum2 / static_cast<double>(h.total) - h.mean * h.mean));
  return h;
}

ProportionHistogram proportion_histogram(const std::vector<FaciesGrid>& samples, int code,
                                         int bins, double lo, double hi) {
  std::vector<double> props;
  props.reserve(samples.size());
  for (const auto& s : samples) props.push_back(facies_proportion(s, code));
  return proportion_histogram(props, bins, lo, hi);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  return os;
}

void write_provenance(std::ofstream& os, const std::string& provenance) {
  if (!provenance.empty()) os << "# " << provenance << '\n';
}

}  // namespace

void write_lag_curve(const std::filesystem::path& path, const LagCurve& curve,
                     const std::string& provenance) {
  auto os = open_out(path);
  write_provenance(os, provenance);
  os << "lag\tvalue\tpairs\n";
  char buf[64];
  for (size_t i = 0; i < curve.lags.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", curve.values[i]);
    os << curve.lags[i] << '\t' << buf << '\t' << curve.pair_counts[i] << '\n';
  }
}

void write_outlier_report(const std::filesystem::path& path, const OutlierReport& report,
                          const std::string& provenance) {
  auto os = open_out(path);
  write_provenance(os, provenance);
  os << "condition\toutlier_pct\n";
  char buf[64];
  for (size_t i = 0; i < report.conditions.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g\t%.17g", report.conditions[i], report.outlier_pct[i]);
    os << buf << '\n';
  }
  std::snprintf(buf, sizeof(buf), "%.17g", report.average);
  os << "average\t" << buf << '\n';
}

void write_histogram(const std::filesystem::path& path, const ProportionHistogram& hist,
                     const std::string& provenance) {
  auto os = open_out(path);
  write_provenance(os, provenance);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "# mean=%.17g stddev=%.17g n=%ld", hist.mean, hist.stddev,
                hist.total);
  os << buf << '\n' << "bin_left\tbin_right\tcount\n";
  for (size_t i = 0; i < hist.counts.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g\t%.17g\t%ld", hist.bin_edges[i], hist.bin_edges[i + 1],
                  hist.counts[i]);
    os << buf << '\n';
  }
}

}  // namespace faciesgan
