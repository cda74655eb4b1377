#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "faciesgan/grid.hpp"
#include "faciesgan/rng.hpp"

namespace faciesgan {

// Isotropic two-point curve: per integer lag bin r, a probability estimated
// over all in-bounds pixel pairs whose Euclidean distance rounds to r.
struct LagCurve {
  std::vector<int> lags;
  std::vector<double> values;
  std::vector<long> pair_counts;  // total pairs per lag, summed over grids
};

// Probability that two pixels separated by the lag both carry `code`.
LagCurve two_point_probability(const std::vector<FaciesGrid>& grids, int code, int max_lag);

// Probability that two pixels at the lag both carry `code` AND belong to the
// same connected component (8-connectivity).
LagCurve connectivity_function(const std::vector<FaciesGrid>& grids, int code, int max_lag,
                               bool eight_connectivity = true);

// Component labels for `code`; -1 elsewhere. Exposed for tests.
std::vector<int> label_components(const FaciesGrid& grid, int code, bool eight_connectivity);

// Percentage (0..100) of samples whose proportion deviates from `target` by
// more than 3*sigma.
double outlier_percentage(const std::vector<FaciesGrid>& samples, int code, double target,
                          double sigma);

struct OutlierReport {
  std::vector<double> conditions;
  std::vector<double> outlier_pct;
  double sigma = 0.0;
  double average = 0.0;
};

// Draws `n_per_condition` samples from `sampler` at each condition and
// reports per-condition outlier percentages plus their mean.
OutlierReport average_outlier_percentage(
    const std::function<std::vector<FaciesGrid>(double condition, long n)>& sampler,
    const std::vector<double>& conditions, long n_per_condition, int code, double sigma);

struct ProportionHistogram {
  std::vector<double> bin_edges;  // bins+1 edges
  std::vector<long> counts;
  double mean = 0.0;
  double stddev = 0.0;
  long total = 0;
};

// Histogram of facies proportions. With lo >= hi the range is taken from the
// data (padded when degenerate).
ProportionHistogram proportion_histogram(const std::vector<FaciesGrid>& samples, int code,
                                         int bins, double lo = 0.0, double hi = -1.0);
ProportionHistogram proportion_histogram(const std::vector<double>& proportions, int bins,
                                         double lo = 0.0, double hi = -1.0);

// Delimited-text serialization. `provenance` lines are embedded as comments.
void write_lag_curve(const std::filesystem::path& path, const LagCurve& curve,
                     const std::string& provenance = {});
void write_outlier_report(const std::filesystem::path& path, const OutlierReport& report,
                          const std::string& provenance = {});
void write_histogram(const std::filesystem::path& path, const ProportionHistogram& hist,
                     const std::string& provenance = {});

}  // namespace faciesgan
