#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedda/model/volume.hpp"

namespace fedda::metrics {

using model::Mask;

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct OverlapMetrics {
  double dsc = 0.0, sn = 0.0, sp = 0.0;
  ConfusionCounts counts;
  // Set when some ratio had an empty denominator and took the value 1.
  bool degenerate = false;
};

// DSC = 2TP/(2TP+FP+FN), SN = TP/(TP+FN), SP = TN/(TN+FP). Masks must share
// dimensions and hold only 0/1.
OverlapMetrics overlap_metrics(const Mask& pred, const Mask& gt);

using Voxel = std::array<int, 3>;  // (z, y, x)

// Foreground voxels with a 6-neighbour that is background or outside the grid,
// in raster order.
std::vector<Voxel> boundary_voxels(const Mask& mask);

class UndefinedMetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SurfaceDistances {
  double hd = 0.0;   // max of both directed maxima
  double asd = 0.0;  // mean over the pooled directed nearest distances
};

// Euclidean voxel-centre distances between boundary sets, in voxels. The
// pooled mean sums pred-boundary distances first, then gt-boundary
// distances, each in raster order. Throws UndefinedMetric when either mask
// is empty.
SurfaceDistances surface_distances(const Mask& pred, const Mask& gt);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;          // two-sided
  std::size_t dof = 0;
  bool degenerate = false;  // zero variance of the differences
};

// Paired t-test on a[i] - b[i]. Lengths must match and be at least 2.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct CaseMetrics {
  std::string subject;
  std::size_t gate = 0;
  model::Structure structure = model::Structure::kEpi;
  OverlapMetrics overlap;
  std::optional<SurfaceDistances> surface;  // empty when undefined
};

// Scores one predicted mask against its reference.
CaseMetrics evaluate_case(std::string subject, std::size_t gate, model::Structure structure,
                          const Mask& pred, const Mask& gt);

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

struct StructureAggregate {
  model::Structure structure = model::Structure::kEpi;
  Summary dsc, hd, asd, sn, sp;
};

struct MetricsReport {
  std::vector<CaseMetrics> cases;
  std::vector<StructureAggregate> aggregates;  // one per structure present
};

Summary summarize(const std::vector<double>& values);

// Aggregates exclude undefined surface distances.
MetricsReport metrics_report(std::vector<CaseMetrics> cases);

// Header "subject,gate,structure,dsc,hd,asd,sn,sp", one row per case, then a
// "mean" and a "std" row per structure. Undefined distances are empty fields.
std::string to_csv(const MetricsReport& report);

}  // namespace fedda::metrics
